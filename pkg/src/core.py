# predinvent/src/core.py
"""Shared types for states, controllers, predicates and effect vectors.

Everything here is immutable once constructed. Objects are ordered by name
wherever an ordering is observable (grounding enumeration, serialization).
"""
import itertools
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import (Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional,
                    Protocol, Sequence, Tuple)

import numpy as np


class ConfigurationError(ValueError):
    """Malformed domain objects: bad effect bindings, arity mismatches, unknown types."""


class ConsistencyError(RuntimeError):
    """Input data violates an invariant the caller promised (missing atoms, broken chains)."""


class PredicateKind(str, Enum):
    STATIC = "static"
    GOAL = "goal"
    BASIC_DYNAMIC = "basic_dynamic"
    DERIVED_DYNAMIC = "derived_dynamic"


class Quantifier(str, Enum):
    FORALL = "forall"
    EXISTS = "exists"
    NONE = "none"


@dataclass(frozen=True)
class TypeSignature:
    name: str
    feature_dim: int

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ConfigurationError(f"type '{self.name}' needs feature_dim >= 1, got {self.feature_dim}")

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, order=True)
class ObjectInstance:
    name: str
    type: TypeSignature = field(compare=False)

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class ControllerSchema:
    name: str
    param_types: Tuple[TypeSignature, ...]
    omega_dim: int = 0

    @property
    def arity(self) -> int:
        return len(self.param_types)


@dataclass(frozen=True)
class LiftedPredicate:
    name: str
    arg_types: Tuple[TypeSignature, ...]
    kind: PredicateKind
    derivation: Optional["DerivedForm"] = None

    def __post_init__(self):
        is_derived = self.kind == PredicateKind.DERIVED_DYNAMIC
        if is_derived != (self.derivation is not None):
            raise ConfigurationError(
                f"predicate '{self.name}': derivation must be present exactly for derived predicates")

    @property
    def arity(self) -> int:
        return len(self.arg_types)

    @property
    def is_dynamic(self) -> bool:
        return self.kind in (PredicateKind.BASIC_DYNAMIC, PredicateKind.DERIVED_DYNAMIC)

    def __str__(self) -> str:
        return f"{self.name}({', '.join(t.name for t in self.arg_types)})"


@dataclass(frozen=True)
class DerivedForm:
    """A derived predicate built from one basic predicate.

    ``negated`` is the polarity of the body: ``forall x. not P(x, y)`` has
    quantifier FORALL, quantified_arg pointing at x and negated=True. The
    derived predicate's arguments are the base arguments minus the
    quantified one, in order.
    """
    base: LiftedPredicate
    quantifier: Quantifier
    quantified_arg: Optional[int]
    negated: bool

    def __post_init__(self):
        if self.base.kind != PredicateKind.BASIC_DYNAMIC:
            raise ConfigurationError(f"derived forms need a basic dynamic base, got {self.base.kind.value}")
        if self.quantifier == Quantifier.NONE:
            if self.quantified_arg is not None:
                raise ConfigurationError("an unquantified form has no quantified argument")
            if not self.negated:
                raise ConfigurationError("an unquantified, non-negated form is the base predicate itself")
        elif self.quantified_arg is None or not 0 <= self.quantified_arg < self.base.arity:
            raise ConfigurationError(
                f"quantified argument {self.quantified_arg} out of range for '{self.base.name}'")

    def free_positions(self) -> Tuple[int, ...]:
        return tuple(i for i in range(self.base.arity) if i != self.quantified_arg)


def make_derived(base: LiftedPredicate, quantifier: Quantifier, quantified_arg: Optional[int],
                 negated: bool) -> LiftedPredicate:
    form = DerivedForm(base, quantifier, quantified_arg, negated)
    prefix = "" if quantifier == Quantifier.NONE else f"{quantifier.value}{quantified_arg}-"
    name = f"{prefix}{'not-' if negated else ''}{base.name}"
    arg_types = tuple(base.arg_types[i] for i in form.free_positions())
    return LiftedPredicate(name, arg_types, PredicateKind.DERIVED_DYNAMIC, form)


@dataclass(frozen=True)
class GroundAtom:
    predicate: LiftedPredicate
    args: Tuple[ObjectInstance, ...]

    def __post_init__(self):
        if len(self.args) != self.predicate.arity:
            raise ConfigurationError(
                f"{self.predicate.name} takes {self.predicate.arity} args, got {len(self.args)}")
        for obj, expected in zip(self.args, self.predicate.arg_types):
            if obj.type != expected:
                raise ConfigurationError(
                    f"{self.predicate.name}: object {obj.name} is a {obj.type.name}, expected {expected.name}")

    def __str__(self) -> str:
        return f"{self.predicate.name}({','.join(o.name for o in self.args)})"

    @property
    def key(self) -> Tuple[str, Tuple[str, ...]]:
        return self.predicate.name, tuple(o.name for o in self.args)


@dataclass(frozen=True, eq=False)
class State:
    """Per-object feature vectors. Arrays are copied and frozen on construction."""
    features: Mapping[ObjectInstance, np.ndarray]

    def __post_init__(self):
        frozen = {}
        for obj in sorted(self.features):
            vec = np.array(self.features[obj], dtype=np.float64).reshape(-1)
            if vec.shape[0] != obj.type.feature_dim:
                raise ConfigurationError(
                    f"object {obj.name}: expected {obj.type.feature_dim} features, got {vec.shape[0]}")
            vec.setflags(write=False)
            frozen[obj] = vec
        object.__setattr__(self, "features", frozen)

    @property
    def objects(self) -> Tuple[ObjectInstance, ...]:
        return tuple(self.features)

    def __getitem__(self, obj: ObjectInstance) -> np.ndarray:
        return self.features[obj]

    def __contains__(self, obj: ObjectInstance) -> bool:
        return obj in self.features

    def vector(self, args: Sequence[ObjectInstance]) -> np.ndarray:
        """Concatenated features of ``args`` in order (the classifier input)."""
        if not args:
            return np.zeros(0, dtype=np.float64)
        return np.concatenate([self.features[o] for o in args])

    def with_updates(self, updates: Mapping[ObjectInstance, np.ndarray]) -> "State":
        merged = dict(self.features)
        for obj, vec in updates.items():
            if obj not in merged:
                raise ConsistencyError(f"cannot update unknown object {obj.name}")
            merged[obj] = vec
        return State(merged)

    def same_as(self, other: "State") -> bool:
        if set(self.features) != set(other.features):
            return False
        return all(np.array_equal(self.features[o], other.features[o]) for o in self.features)

    def object_named(self, name: str) -> ObjectInstance:
        for obj in self.features:
            if obj.name == name:
                return obj
        raise KeyError(name)


@dataclass(frozen=True)
class GroundedController:
    schema: ControllerSchema
    args: Tuple[ObjectInstance, ...]
    omega: Tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.args) != self.schema.arity:
            raise ConfigurationError(f"{self.schema.name} takes {self.schema.arity} args, got {len(self.args)}")
        for obj, expected in zip(self.args, self.schema.param_types):
            if obj.type != expected:
                raise ConfigurationError(
                    f"{self.schema.name}: {obj.name} is a {obj.type.name}, expected {expected.name}")
        if len(set(self.args)) != len(self.args):
            raise ConfigurationError(f"{self.schema.name}: arguments must be distinct")
        if len(self.omega) != self.schema.omega_dim:
            raise ConfigurationError(
                f"{self.schema.name}: omega has {len(self.omega)} entries, expected {self.schema.omega_dim}")

    @property
    def skeleton_key(self) -> Tuple[str, Tuple[str, ...]]:
        return self.schema.name, tuple(o.name for o in self.args)

    def __str__(self) -> str:
        return f"{self.schema.name}({', '.join(o.name for o in self.args)})"


@dataclass(frozen=True)
class Transition:
    pre: State
    action: GroundedController
    post: State


@dataclass(frozen=True)
class Task:
    objects: Tuple[ObjectInstance, ...]
    init: State
    goal: FrozenSet[GroundAtom]

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(sorted(self.objects)))
        if set(self.objects) != set(self.init.objects):
            raise ConsistencyError("task objects must match the objects present in the initial state")
        for atom in self.goal:
            if atom.predicate.kind != PredicateKind.GOAL:
                raise ConfigurationError(f"goal atom {atom} is not over a goal predicate")
            if any(o not in self.init for o in atom.args):
                raise ConsistencyError(f"goal atom {atom} mentions an object outside the task")


@dataclass(frozen=True)
class Demonstration:
    task: Task
    transitions: Tuple[Transition, ...]

    def __post_init__(self):
        if not self.transitions:
            return
        if not self.transitions[0].pre.same_as(self.task.init):
            raise ConsistencyError("first transition must start from the task's initial state")
        for prev, nxt in zip(self.transitions, self.transitions[1:]):
            if not prev.post.same_as(nxt.pre):
                raise ConsistencyError("transition chain is broken: post-state differs from next pre-state")

    def skeleton(self) -> Tuple[Tuple[str, Tuple[str, ...]], ...]:
        return tuple(t.action.skeleton_key for t in self.transitions)

    def states(self) -> List[State]:
        if not self.transitions:
            return [self.task.init]
        return [self.transitions[0].pre] + [t.post for t in self.transitions]

    @property
    def final_state(self) -> State:
        return self.transitions[-1].post if self.transitions else self.task.init


@dataclass(frozen=True)
class EffectEntry:
    """Effect of one controller on a predicate.

    ``binding`` holds (predicate arg index, controller param index) pairs and
    is total over the predicate's arguments whenever delta is nonzero.
    """
    delta: int = 0
    binding: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.delta not in (-1, 0, 1):
            raise ConfigurationError(f"effect delta must be -1, 0 or +1, got {self.delta}")
        if self.delta == 0 and self.binding:
            raise ConfigurationError("a zero effect carries no binding")
        object.__setattr__(self, "binding", tuple(sorted(self.binding)))

    def param_for(self, pred_arg: int) -> int:
        return dict(self.binding)[pred_arg]


@dataclass(frozen=True)
class EffectVector:
    predicate: LiftedPredicate
    entries: Tuple[Tuple[str, EffectEntry], ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(sorted(self.entries, key=lambda e: e[0])))
        names = [name for name, _ in self.entries]
        if len(names) != len(set(names)):
            raise ConfigurationError(f"effect vector for '{self.predicate.name}' repeats a controller")

    def entry(self, schema_name: str) -> EffectEntry:
        for name, entry in self.entries:
            if name == schema_name:
                return entry
        return EffectEntry()

    @property
    def is_zero(self) -> bool:
        return all(e.delta == 0 for _, e in self.entries)

    def signature(self) -> Tuple[Tuple[str, int, Tuple[Tuple[int, int], ...]], ...]:
        """Name-free description of the effects, used for deduplication."""
        return tuple((name, e.delta, e.binding) for name, e in self.entries if e.delta != 0)

    def dedup_key(self) -> Tuple:
        return (self.predicate.name, tuple(t.name for t in self.predicate.arg_types), self.signature())

    def renamed(self, predicate: LiftedPredicate) -> "EffectVector":
        return EffectVector(predicate, self.entries)


def validate_effect_vector(ev: EffectVector, schemas: Sequence[ControllerSchema]) -> None:
    """Raises ConfigurationError unless ``ev`` is well formed against ``schemas``."""
    by_name = {s.name: s for s in schemas}
    for name, entry in ev.entries:
        schema = by_name.get(name)
        if schema is None:
            raise ConfigurationError(f"effect vector for '{ev.predicate.name}' names unknown controller '{name}'")
        if entry.delta == 0:
            continue
        pred_args = [p for p, _ in entry.binding]
        params = [c for _, c in entry.binding]
        if sorted(pred_args) != list(range(ev.predicate.arity)):
            raise ConfigurationError(
                f"{ev.predicate.name}/{name}: binding must cover every predicate argument exactly once")
        if len(set(params)) != len(params):
            raise ConfigurationError(f"{ev.predicate.name}/{name}: binding is not injective")
        for p, c in entry.binding:
            if not 0 <= c < schema.arity:
                raise ConfigurationError(f"{ev.predicate.name}/{name}: controller param {c} out of range")
            if schema.param_types[c] != ev.predicate.arg_types[p]:
                raise ConfigurationError(
                    f"{ev.predicate.name}/{name}: arg {p} is {ev.predicate.arg_types[p].name} "
                    f"but param {c} is {schema.param_types[c].name}")


def effect_vector_from_deltas(predicate: LiftedPredicate, schemas: Sequence[ControllerSchema],
                              effects: Mapping[str, Tuple[int, Sequence[int]]]) -> EffectVector:
    """Builds a validated effect vector.

    ``effects`` maps controller name to (delta, params) where params[i] is the
    controller parameter bound to predicate argument i. Controllers not named
    get a zero entry.
    """
    entries = []
    for schema in schemas:
        delta, params = effects.get(schema.name, (0, ()))
        binding = tuple(enumerate(params)) if delta else ()
        entries.append((schema.name, EffectEntry(delta, binding)))
    unknown = set(effects) - {s.name for s in schemas}
    if unknown:
        raise ConfigurationError(f"unknown controllers in effects: {sorted(unknown)}")
    ev = EffectVector(predicate, tuple(entries))
    validate_effect_vector(ev, schemas)
    return ev


@lru_cache(maxsize=4096)
def _groundings(predicate: LiftedPredicate, objects: Tuple[ObjectInstance, ...]) -> Tuple[GroundAtom, ...]:
    pools = [sorted(o for o in objects if o.type == t) for t in predicate.arg_types]
    atoms = []
    for combo in itertools.product(*pools):
        if len(set(combo)) == len(combo):
            atoms.append(GroundAtom(predicate, tuple(combo)))
    return tuple(atoms)


def enumerate_groundings(predicate: LiftedPredicate, objects: Iterable[ObjectInstance]) -> List[GroundAtom]:
    """All type-consistent groundings with pairwise distinct arguments, lexicographic by name."""
    return list(_groundings(predicate, tuple(sorted(set(objects)))))


def enumerate_arg_tuples(param_types: Sequence[TypeSignature],
                         objects: Iterable[ObjectInstance]) -> List[Tuple[ObjectInstance, ...]]:
    pools = [sorted(o for o in set(objects) if o.type == t) for t in param_types]
    return [c for c in itertools.product(*pools) if len(set(c)) == len(c)]


def ground_effect_vector(ev: EffectVector, action: GroundedController,
                         objects: Iterable[ObjectInstance]) -> np.ndarray:
    """Target effect t over the groundings of ev.predicate for one executed action."""
    atoms = enumerate_groundings(ev.predicate, objects)
    t = np.zeros(len(atoms), dtype=np.int8)
    entry = ev.entry(action.schema.name)
    if entry.delta == 0:
        return t
    for pred_arg, param in entry.binding:
        if not 0 <= param < len(action.args):
            raise ConfigurationError(
                f"{ev.predicate.name}/{action.schema.name}: binding references param {param}")
    bound = tuple(action.args[param] for _, param in entry.binding)
    for i, atom in enumerate(atoms):
        if atom.args == bound:
            t[i] = entry.delta
    return t


def masks(t: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(unchanged mask, changed mask, indices of changed atoms)."""
    t = np.asarray(t)
    m0 = t == 0
    m1 = np.abs(t) == 1
    return m0, m1, np.flatnonzero(m1)


def evaluate_derived(form: DerivedForm, basic_truth: Mapping[GroundAtom, bool],
                     args: Sequence[ObjectInstance], objects: Iterable[ObjectInstance]) -> bool:
    """Truth of a derived atom from the truth of its base predicate's groundings.

    An empty quantifier domain makes forall true and exists false.
    """
    free = form.free_positions()
    if len(args) != len(free):
        raise ConfigurationError(f"derived form over '{form.base.name}' takes {len(free)} args, got {len(args)}")

    def lookup(full_args: Tuple[ObjectInstance, ...]) -> bool:
        atom = GroundAtom(form.base, full_args)
        if atom not in basic_truth:
            raise ConsistencyError(f"no truth value for {atom}")
        value = basic_truth[atom]
        return (not value) if form.negated else value

    if form.quantifier == Quantifier.NONE:
        return lookup(tuple(args))

    qtype = form.base.arg_types[form.quantified_arg]
    taken = set(args)
    values = []
    for obj in sorted(set(objects)):
        if obj.type != qtype or obj in taken:
            continue
        full = list(args)
        full.insert(form.quantified_arg, obj)
        values.append(lookup(tuple(full)))
    if form.quantifier == Quantifier.FORALL:
        return all(values)
    return any(values)


class AtomClassifier(Protocol):
    def probabilities(self, state: State, atoms: Sequence[GroundAtom]) -> np.ndarray:
        ...


class OracleClassifier:
    """Wraps a hand-written truth function as a classifier with 0/1 outputs."""

    def __init__(self, fn: Callable[[State, Tuple[ObjectInstance, ...]], bool]):
        self._fn = fn

    def probabilities(self, state: State, atoms: Sequence[GroundAtom]) -> np.ndarray:
        return np.array([1.0 if self._fn(state, a.args) else 0.0 for a in atoms], dtype=np.float64)

    def holds(self, state: State, args: Tuple[ObjectInstance, ...]) -> bool:
        return bool(self._fn(state, args))


@dataclass(frozen=True)
class LiftedAtom:
    """Predicate applied to operator parameters, given by index."""
    predicate: LiftedPredicate
    params: Tuple[int, ...]

    def ground(self, args: Sequence[ObjectInstance]) -> GroundAtom:
        return GroundAtom(self.predicate, tuple(args[i] for i in self.params))

    def __str__(self) -> str:
        return f"{self.predicate.name}({','.join(f'?{i}' for i in self.params)})"


@dataclass(frozen=True)
class Operator:
    """Lifted STRIPS operator attached to one controller schema."""
    schema: ControllerSchema
    preconditions: FrozenSet[LiftedAtom]
    add_effects: FrozenSet[LiftedAtom]
    delete_effects: FrozenSet[LiftedAtom]

    @property
    def name(self) -> str:
        return self.schema.name

    def ground(self, args: Sequence[ObjectInstance]) -> Tuple[FrozenSet[GroundAtom], FrozenSet[GroundAtom],
                                                              FrozenSet[GroundAtom]]:
        return (frozenset(a.ground(args) for a in self.preconditions),
                frozenset(a.ground(args) for a in self.add_effects),
                frozenset(a.ground(args) for a in self.delete_effects))

    def describe(self) -> Dict[str, List[str]]:
        return {
            "pre": sorted(str(a) for a in self.preconditions),
            "add": sorted(str(a) for a in self.add_effects),
            "delete": sorted(str(a) for a in self.delete_effects),
        }
