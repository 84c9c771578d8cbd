# predinvent/src/pddl.py
"""PDDL subset (STRIPS + typing + negative preconditions) and the effect proposal format.

Only what the proposer round trip needs: serializing a partial domain with
TODO sentinels, parsing a completed one leniently, and turning declared
predicates into candidate (predicate, effect vector) pairs.
"""
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .core import (ConfigurationError, EffectVector, LiftedPredicate, PredicateKind, effect_vector_from_deltas)
from .logging_config import get_logger

log = get_logger(__name__)

TODO_SENTINEL = "; TODO"
KNOWN_REQUIREMENTS = {":strips", ":typing", ":negative-preconditions"}


class PddlParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.message = message
        self.line = line
        self.column = column


class ExtractionError(ValueError):
    """A parsed domain does not line up with the controllers it should describe."""


@dataclass(frozen=True)
class Token:
    text: str
    line: int
    column: int


class SList(list):
    """Parenthesized list remembering where it opened."""
    line: int = 0
    column: int = 0


SExpr = Union[Token, SList]


def tokenize(text: str) -> List[Token]:
    tokens = []
    line, col, i, n = 1, 1, 0, len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line, col, i = line + 1, 1, i + 1
        elif c.isspace():
            col, i = col + 1, i + 1
        elif c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c in "()":
            tokens.append(Token(c, line, col))
            col, i = col + 1, i + 1
        else:
            start, start_col = i, col
            while i < n and not text[i].isspace() and text[i] not in "();":
                i, col = i + 1, col + 1
            tokens.append(Token(text[start:i].lower(), line, start_col))
    return tokens


def parse_sexprs(tokens: Sequence[Token]) -> List[SExpr]:
    top: List[SExpr] = []
    stack: List[SList] = []
    for tok in tokens:
        if tok.text == "(":
            node = SList()
            node.line, node.column = tok.line, tok.column
            stack.append(node)
        elif tok.text == ")":
            if not stack:
                raise PddlParseError("unexpected ')'", tok.line, tok.column)
            done = stack.pop()
            (stack[-1] if stack else top).append(done)
        else:
            (stack[-1] if stack else top).append(tok)
    if stack:
        raise PddlParseError("unclosed '('", stack[-1].line, stack[-1].column)
    return top


def find_block(text: str, head: str, start: int = 0) -> Optional[Tuple[int, int]]:
    """Span of the first balanced ``(head ...)`` form at or after ``start``, ignoring comments."""
    pattern = re.compile(r"\(\s*" + re.escape(head) + r"\b", re.IGNORECASE)
    match = pattern.search(text, start)
    while match:
        depth, i = 0, match.start()
        while i < len(text):
            c = text[i]
            if c == ";":
                nl = text.find("\n", i)
                i = len(text) if nl < 0 else nl
                continue
            if c == "(":
                depth += 1
            elif c == ")":
                depth -= 1
                if depth == 0:
                    return match.start(), i + 1
            i += 1
        match = pattern.search(text, match.end())
    return None


@dataclass(frozen=True)
class PddlAtom:
    predicate: str
    args: Tuple[str, ...]

    def __str__(self) -> str:
        return f"({' '.join((self.predicate,) + self.args)})"


@dataclass(frozen=True)
class PddlLiteral:
    atom: PddlAtom
    negated: bool = False

    def __str__(self) -> str:
        return f"(not {self.atom})" if self.negated else str(self.atom)


@dataclass(frozen=True)
class PddlAction:
    name: str
    parameters: Tuple[Tuple[str, str], ...]
    preconditions: Tuple[PddlLiteral, ...]
    add_effects: Tuple[PddlAtom, ...]
    delete_effects: Tuple[PddlAtom, ...]


@dataclass(frozen=True)
class DroppedAction:
    """What could still be read from an action the lenient parse rejected."""
    name: Optional[str]
    parameters: Optional[Tuple[Tuple[str, str], ...]]
    touched: Tuple[str, ...]
    reason: str


@dataclass(frozen=True)
class PddlDomain:
    name: str
    requirements: Tuple[str, ...]
    types: Tuple[Tuple[str, str], ...]
    predicates: Tuple[Tuple[str, Tuple[Tuple[str, str], ...]], ...]
    actions: Tuple[PddlAction, ...]
    diagnostics: Tuple[str, ...] = field(default=(), compare=False)
    dropped: Tuple[DroppedAction, ...] = field(default=(), compare=False)

    def predicate_signature(self, name: str) -> Optional[Tuple[Tuple[str, str], ...]]:
        for pname, params in self.predicates:
            if pname == name:
                return params
        return None


def _sym(node: SExpr, what: str) -> Token:
    if not isinstance(node, Token):
        raise PddlParseError(f"expected {what}, found a list", node.line, node.column)
    return node


def _typed_list(node: SExpr) -> List[Tuple[Token, str]]:
    """``?a ?b - t ?c`` -> [(?a, t), (?b, t), (?c, object)]."""
    if not isinstance(node, SList):
        raise PddlParseError("expected a parenthesized typed list", node.line, node.column)
    result: List[Tuple[Token, str]] = []
    pending: List[Token] = []
    i = 0
    while i < len(node):
        tok = _sym(node[i], "a name")
        if tok.text == "-":
            if i + 1 >= len(node) or not pending:
                raise PddlParseError("dangling '-' in typed list", tok.line, tok.column)
            type_tok = _sym(node[i + 1], "a type name")
            result.extend((p, type_tok.text) for p in pending)
            pending = []
            i += 2
            continue
        pending.append(tok)
        i += 1
    result.extend((p, "object") for p in pending)
    return result


def _literal_heads(node: SExpr) -> set:
    """Predicate names at the head of every literal inside a formula, however malformed."""
    if not isinstance(node, SList) or not node:
        return set()
    head = node[0]
    if isinstance(head, Token) and head.text not in ("and", "not"):
        return {head.text}
    heads = set()
    for child in node[1:] if isinstance(head, Token) else node:
        heads |= _literal_heads(child)
    return heads


class _DomainParser:
    def __init__(self, strict: bool):
        self.strict = strict
        self.types: Dict[str, str] = {}
        self.predicates: Dict[str, Tuple[Tuple[str, str], ...]] = {}
        self.diagnostics: List[str] = []

    def is_subtype(self, child: str, parent: str) -> bool:
        seen = set()
        while child not in seen:
            if child == parent or parent == "object":
                return True
            seen.add(child)
            child = self.types.get(child, "object")
        return False

    def check_type(self, tok: Token) -> str:
        if tok.text != "object" and tok.text not in self.types:
            raise PddlParseError(f"undeclared type '{tok.text}'", tok.line, tok.column)
        return tok.text

    def parse(self, text: str) -> PddlDomain:
        items = parse_sexprs(tokenize(text))
        define = next((it for it in items if isinstance(it, SList) and it and isinstance(it[0], Token)
                       and it[0].text == "define"), None)
        if define is None:
            raise PddlParseError("no (define ...) form", 1, 1)
        if len(define) < 2 or not isinstance(define[1], SList) or len(define[1]) != 2 \
                or _sym(define[1][0], "'domain'").text != "domain":
            raise PddlParseError("expected (domain <name>)", define.line, define.column)
        name = _sym(define[1][1], "a domain name").text
        requirements: List[str] = []
        action_nodes: List[SList] = []
        for section in define[2:]:
            if not isinstance(section, SList) or not section:
                raise PddlParseError("expected a section", section.line, section.column)
            head = _sym(section[0], "a section keyword")
            if head.text == ":requirements":
                for req in section[1:]:
                    flag = _sym(req, "a requirement flag").text
                    if flag not in KNOWN_REQUIREMENTS:
                        self.note(f"ignoring unsupported requirement {flag}")
                    requirements.append(flag)
            elif head.text == ":types":
                for tok, parent in _typed_list(SList(section[1:])):
                    self.types[tok.text] = parent
                for parent in set(self.types.values()):
                    if parent != "object" and parent not in self.types:
                        raise PddlParseError(f"undeclared parent type '{parent}'", head.line, head.column)
            elif head.text == ":predicates":
                for decl in section[1:]:
                    if not isinstance(decl, SList) or not decl:
                        raise PddlParseError("malformed predicate declaration", decl.line, decl.column)
                    pname = _sym(decl[0], "a predicate name").text
                    params = tuple((tok.text, self.check_type(Token(t, tok.line, tok.column)))
                                   for tok, t in _typed_list(SList(decl[1:])))
                    self.predicates[pname] = params
            elif head.text == ":action":
                action_nodes.append(section)
            else:
                self.note(f"ignoring unsupported section {head.text}")
        actions, dropped = [], []
        for node in action_nodes:
            try:
                actions.append(self.parse_action(node))
            except PddlParseError as e:
                if self.strict:
                    raise
                dropped.append(self.salvage(node, str(e)))
                self.note(f"dropped malformed action: {e}")
        return PddlDomain(name, tuple(requirements), tuple(sorted(self.types.items())),
                          tuple(self.predicates.items()), tuple(actions), tuple(self.diagnostics), tuple(dropped))

    def salvage(self, node: SList, reason: str) -> DroppedAction:
        name = node[1].text if len(node) > 1 and isinstance(node[1], Token) else None
        params = None
        touched: set = set()
        for key, value in zip(node[2::2], node[3::2]):
            if not isinstance(key, Token):
                continue
            if key.text == ":parameters":
                try:
                    params = tuple((tok.text, self.check_type(Token(t, tok.line, tok.column)))
                                   for tok, t in _typed_list(value))
                except PddlParseError:
                    params = None
            elif key.text == ":effect":
                touched |= _literal_heads(value)
        return DroppedAction(name, params, tuple(sorted(touched)), reason)

    def note(self, message: str) -> None:
        self.diagnostics.append(message)
        log.warning("PDDL diagnostic.", detail=message)

    def parse_action(self, node: SList) -> PddlAction:
        if len(node) < 2:
            raise PddlParseError("action without a name", node.line, node.column)
        name_tok = _sym(node[1], "an action name")
        params: List[Tuple[str, str]] = []
        pre: List[PddlLiteral] = []
        adds: List[PddlAtom] = []
        dels: List[PddlAtom] = []
        i = 2
        while i < len(node):
            key = _sym(node[i], "an action keyword")
            if i + 1 >= len(node):
                raise PddlParseError(f"{key.text} has no value", key.line, key.column)
            value = node[i + 1]
            if key.text == ":parameters":
                for tok, t in _typed_list(value):
                    if not tok.text.startswith("?"):
                        raise PddlParseError(f"parameter '{tok.text}' must start with '?'", tok.line, tok.column)
                    if any(p == tok.text for p, _ in params):
                        raise PddlParseError(f"duplicate parameter {tok.text}", tok.line, tok.column)
                    params.append((tok.text, self.check_type(Token(t, tok.line, tok.column))))
            elif key.text == ":precondition":
                for negated, atom_node in self._conjunction(value):
                    pre.append(PddlLiteral(self._atom(atom_node, params), negated))
            elif key.text == ":effect":
                for negated, atom_node in self._conjunction(value):
                    (dels if negated else adds).append(self._atom(atom_node, params))
            else:
                raise PddlParseError(f"unknown action keyword {key.text}", key.line, key.column)
            i += 2
        clash = {a.predicate for a in adds} & {d.predicate for d in dels}
        if clash:
            raise PddlParseError(f"predicate {sorted(clash)[0]} is both added and deleted by {name_tok.text}",
                                 name_tok.line, name_tok.column)
        return PddlAction(name_tok.text, tuple(params), tuple(pre), tuple(adds), tuple(dels))

    @staticmethod
    def _conjunction(node: SExpr) -> List[Tuple[bool, SList]]:
        if not isinstance(node, SList):
            raise PddlParseError("expected a formula", node.line, node.column)
        if not node:
            return []
        head = node[0]
        parts = node[1:] if isinstance(head, Token) and head.text == "and" else [node]
        literals = []
        for part in parts:
            if not isinstance(part, SList) or not part:
                raise PddlParseError("expected a literal", part.line, part.column)
            if isinstance(part[0], Token) and part[0].text == "not":
                if len(part) != 2 or not isinstance(part[1], SList):
                    raise PddlParseError("malformed negation", part.line, part.column)
                literals.append((True, part[1]))
            else:
                literals.append((False, part))
        return literals

    def _atom(self, node: SList, params: Sequence[Tuple[str, str]]) -> PddlAtom:
        pred_tok = _sym(node[0], "a predicate name")
        signature = self.predicates.get(pred_tok.text)
        if signature is None:
            raise PddlParseError(f"undeclared predicate '{pred_tok.text}'", pred_tok.line, pred_tok.column)
        args = [_sym(a, "an argument") for a in node[1:]]
        if len(args) != len(signature):
            raise PddlParseError(f"{pred_tok.text} takes {len(signature)} arguments, got {len(args)}",
                                 pred_tok.line, pred_tok.column)
        param_types = dict(params)
        for arg, (_, expected) in zip(args, signature):
            if arg.text not in param_types:
                raise PddlParseError(f"undeclared symbol '{arg.text}'", arg.line, arg.column)
            if not self.is_subtype(param_types[arg.text], expected):
                raise PddlParseError(f"argument {arg.text} of type {param_types[arg.text]} is badly typed for "
                                     f"{pred_tok.text} (expects {expected})", arg.line, arg.column)
        return PddlAtom(pred_tok.text, tuple(a.text for a in args))


def parse_domain(text: str, strict: bool = False) -> PddlDomain:
    """Parses a domain; with ``strict=False`` a malformed action is dropped and noted in diagnostics."""
    return _DomainParser(strict).parse(text)


def _typed(params: Sequence[Tuple[str, str]]) -> str:
    return " ".join(f"{v} - {t}" for v, t in params)


def serialize_domain(domain: PddlDomain) -> str:
    lines = [f"(define (domain {domain.name})"]
    if domain.requirements:
        lines.append(f"  (:requirements {' '.join(domain.requirements)})")
    if domain.types:
        lines.append(f"  (:types {' '.join(f'{t} - {p}' for t, p in domain.types)})")
    lines.append("  (:predicates")
    lines.extend(f"    ({name}{' ' + _typed(params) if params else ''})" for name, params in domain.predicates)
    lines.append("  )")
    for action in domain.actions:
        lines.append(f"  (:action {action.name}")
        lines.append(f"    :parameters ({_typed(action.parameters)})")
        lines.append(f"    :precondition (and {' '.join(str(l) for l in action.preconditions)})")
        effects = [str(a) for a in action.add_effects] + [f"(not {d})" for d in action.delete_effects]
        lines.append(f"    :effect (and {' '.join(effects)})")
        lines.append("  )")
    lines.append(")")
    return "\n".join(lines) + "\n"


class NameRedactor:
    """Swaps controller and known-predicate names for opaque symbols and back."""

    def __init__(self, controller_names: Sequence[str], predicate_names: Sequence[str]):
        self._forward: Dict[str, str] = {}
        for i, name in enumerate(controller_names):
            self._forward[name.lower()] = f"op{i}"
        for i, name in enumerate(predicate_names):
            self._forward[name.lower()] = f"pred{i}"
        self._backward = {v: k for k, v in self._forward.items()}

    def redact(self, name: str) -> str:
        return self._forward.get(name.lower(), name.lower())

    def restore(self, name: str) -> str:
        return self._backward.get(name.lower(), name.lower())


class IdentityNames(NameRedactor):
    """Leaves names exactly as the domain spells them."""

    def __init__(self):
        super().__init__((), ())

    def redact(self, name: str) -> str:
        return name

    def restore(self, name: str) -> str:
        return name


def _param_names(param_types) -> List[str]:
    return [f"?{t.name}{i}" for i, t in enumerate(param_types)]


def serialize_partial(domain, known: Sequence[LiftedPredicate],
                      names: Optional[NameRedactor] = None) -> str:
    """Known predicates plus one action stub per controller, each marked with a TODO sentinel."""
    names = names or IdentityNames()
    domain_name = "domain" if not isinstance(names, IdentityNames) else domain.name
    lines = [f"(define (domain {domain_name})",
             "  (:requirements :strips :typing :negative-preconditions)",
             f"  (:types {' '.join(t.name for t in domain.types)})",
             "  (:predicates"]
    for pred in known:
        params = list(zip(_param_names(pred.arg_types), (t.name for t in pred.arg_types)))
        lines.append(f"    ({names.redact(pred.name)}{' ' + _typed(params) if params else ''})")
    lines.append(f"    {TODO_SENTINEL}: declare the predicates the actions below need")
    lines.append("  )")
    for schema in domain.controllers:
        params = list(zip(_param_names(schema.param_types), (t.name for t in schema.param_types)))
        lines.extend([
            f"  (:action {names.redact(schema.name)}",
            f"    :parameters ({_typed(params)})",
            f"    {TODO_SENTINEL}: fill in precondition and effect",
            "    :precondition (and)",
            "    :effect (and)",
            "  )",
        ])
    lines.append(")")
    return "\n".join(lines) + "\n"


@dataclass
class Extraction:
    candidates: List[Tuple[LiftedPredicate, EffectVector]]
    diagnostics: List[str]


def extract_candidates(pddl: PddlDomain, domain, known: Sequence[LiftedPredicate],
                       names: Optional[NameRedactor] = None) -> Extraction:
    """One (predicate, effect vector) per newly declared predicate.

    Action parameters map to controller parameters by position. A predicate
    that an action adds or deletes more than once, or through a variable
    outside the action's parameters, is dropped with a diagnostic, as is any
    predicate in the effects of an action the lenient parse rejected. Actions,
    kept or rejected, whose name or parameter types miss every controller
    raise ExtractionError.
    """
    names = names or IdentityNames()
    known_names = {p.name for p in known}
    type_names = {t.name for t in domain.types}
    diagnostics = list(pddl.diagnostics)

    def matching_schema(action_name: str, parameters: Sequence[Tuple[str, str]]):
        try:
            schema = domain.controller_named(names.restore(action_name))
        except ConfigurationError as e:
            raise ExtractionError(f"action '{action_name}' matches no controller") from e
        declared = tuple(t for _, t in parameters)
        expected = tuple(t.name for t in schema.param_types)
        if declared != expected:
            raise ExtractionError(
                f"action '{action_name}' parameters {declared} do not match controller {schema.name} {expected}")
        return schema

    schemas = {}
    for action in pddl.actions:
        schemas[action.name] = (matching_schema(action.name, action.parameters), [v for v, _ in action.parameters])
    # effects of a dropped action are unknown, so nothing it touches can get a trustworthy effect vector
    untrusted: Dict[str, str] = {}
    for dropped in pddl.dropped:
        if dropped.name is not None and dropped.parameters is not None:
            matching_schema(dropped.name, dropped.parameters)
        for pname in dropped.touched:
            untrusted.setdefault(pname, dropped.name or "an unnamed action")

    candidates = []
    for pname, params in pddl.predicates:
        restored = names.restore(pname)
        if restored in known_names or pname in type_names:
            continue
        if any(t not in type_names for _, t in params):
            diagnostics.append(f"predicate {pname}: unknown argument type")
            continue
        predicate = LiftedPredicate(pname, tuple(domain.type_named(t) for _, t in params),
                                    PredicateKind.BASIC_DYNAMIC)
        effects: Dict[str, Tuple[int, Tuple[int, ...]]] = {}
        problem = None
        if pname in untrusted:
            problem = f"predicate {pname}: changed by dropped action {untrusted[pname]}"
        for action in pddl.actions if problem is None else ():
            schema, variables = schemas[action.name]
            hits = [(1, a) for a in action.add_effects if a.predicate == pname] + \
                   [(-1, a) for a in action.delete_effects if a.predicate == pname]
            if not hits:
                continue
            if len(hits) > 1:
                problem = f"predicate {pname}: {action.name} changes it more than once"
                break
            delta, atom = hits[0]
            effects[schema.name] = (delta, tuple(variables.index(v) for v in atom.args))
        if problem is None:
            try:
                candidates.append((predicate, effect_vector_from_deltas(predicate, domain.controllers, effects)))
                continue
            except ConfigurationError as e:
                problem = f"predicate {pname}: {e}"
        diagnostics.append(problem)
        log.warning("Candidate dropped.", detail=problem)
    return Extraction(candidates, diagnostics)


def format_effect_proposal(predicate: LiftedPredicate, ev: EffectVector,
                           names: Optional[NameRedactor] = None) -> str:
    names = names or IdentityNames()
    types = " ".join(t.name for t in predicate.arg_types)
    lines = [f"(proposal (predicate {predicate.name}{' ' + types if types else ''})"]
    for controller, entry in ev.entries:
        if entry.delta == 0:
            continue
        params = " ".join(str(c) for _, c in entry.binding)
        kind = "add" if entry.delta > 0 else "delete"
        lines.append(f"  (effect {names.redact(controller)} {kind}{' ' + params if params else ''})")
    lines[-1] += ")"
    return "\n".join(lines)


def parse_effect_proposals(text: str, domain, names: Optional[NameRedactor] = None) -> Extraction:
    """Reads every balanced ``(proposal ...)`` block in ``text``; malformed blocks are skipped."""
    names = names or IdentityNames()
    candidates: List[Tuple[LiftedPredicate, EffectVector]] = []
    diagnostics: List[str] = []
    start = 0
    while True:
        span = find_block(text, "proposal", start)
        if span is None:
            break
        start = span[1]
        try:
            candidates.append(_proposal(parse_sexprs(tokenize(text[span[0]:span[1]]))[0], domain, names))
        except (PddlParseError, ConfigurationError, ValueError, IndexError) as e:
            diagnostics.append(f"skipped proposal: {e}")
            log.warning("Malformed effect proposal skipped.", detail=str(e))
    return Extraction(candidates, diagnostics)


def _proposal(node: SList, domain, names: NameRedactor) -> Tuple[LiftedPredicate, EffectVector]:
    if len(node) < 2 or not isinstance(node[1], SList) or _sym(node[1][0], "'predicate'").text != "predicate":
        raise PddlParseError("expected (predicate <name> <types>...)", node.line, node.column)
    header = node[1]
    name = _sym(header[1], "a predicate name").text
    arg_types = tuple(domain.type_named(_sym(t, "a type").text) for t in header[2:])
    predicate = LiftedPredicate(name, arg_types, PredicateKind.BASIC_DYNAMIC)
    effects: Dict[str, Tuple[int, Tuple[int, ...]]] = {}
    for part in node[2:]:
        if not isinstance(part, SList) or len(part) < 3 or _sym(part[0], "'effect'").text != "effect":
            raise PddlParseError("expected (effect <controller> add|delete <params>...)", node.line, node.column)
        schema = domain.controller_named(names.restore(_sym(part[1], "a controller").text))
        kind = _sym(part[2], "add or delete").text
        if kind not in ("add", "delete"):
            raise PddlParseError(f"unknown effect kind '{kind}'", part.line, part.column)
        if schema.name in effects:
            raise PddlParseError(f"{schema.name} listed twice", part.line, part.column)
        effects[schema.name] = (1 if kind == "add" else -1, tuple(int(_sym(p, "an index").text) for p in part[3:]))
    return predicate, effect_vector_from_deltas(predicate, domain.controllers, effects)
