# predinvent/src/propose.py
"""Building the candidate pool with a proposer in the loop.

The proposer first completes a partial PDDL domain, which seeds candidate
predicates. Each candidate is trained against its effect vector; the losses
are rescaled into scores and fed back while the proposer suggests new or
corrected effect patterns, until enough consistent predicates exist or the
iteration budget runs out. Proposers only return text; everything stateful
lives in ProposalHistory.
"""
import itertools
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterator, List, Optional, Sequence, Set, Tuple

from .config_models import LoopConfig, TrainConfig
from .core import (ControllerSchema, Demonstration, EffectVector, LiftedPredicate, PredicateKind, TypeSignature,
                   effect_vector_from_deltas)
from .domains import DomainSpec
from .logging_config import get_logger
from .neuro import TrainedCandidate, TrainingError, score, train_candidate
from .pddl import (ExtractionError, IdentityNames, NameRedactor, PddlParseError, extract_candidates,
                   format_effect_proposal, parse_domain, parse_effect_proposals, serialize_partial)
from .prompt_templates import render

log = get_logger(__name__)

INITIAL_BACKOFF_SECONDS = 1
MAX_BACKOFF_SECONDS = 16
RESPONSE_SEPARATOR = ";; response:"

Fit = Callable[[LiftedPredicate, EffectVector], TrainedCandidate]


class ProposerTransportError(RuntimeError):
    """The proposer could not be reached or refused the request."""


@dataclass(frozen=True)
class EffectRequest:
    domain_name: str
    partial_pddl: str
    history: str
    focus: str
    batch_size: int
    tried: FrozenSet[Tuple] = frozenset()


class Proposer(ABC):
    """Turns prompts into text. Implementations keep no artifact state."""

    name = "proposer"

    @property
    def exhausted(self) -> bool:
        return False

    @abstractmethod
    def complete_partial_domain(self, partial: str, digest: str) -> str:
        ...

    @abstractmethod
    def propose_effects(self, request: EffectRequest) -> str:
        ...


class ScriptedProposer(Proposer):
    """Replays recorded responses.

    A replay file is a sequence of sections, each introduced by a line
    ``;; response: completion`` or ``;; response: effects``. Completion
    sections answer complete_partial_domain calls in order, effects
    sections answer propose_effects calls in order. Once a queue is empty
    the proposer answers with an empty string.
    """

    name = "scripted"

    def __init__(self, text: str):
        self._queues: Dict[str, List[str]] = {"completion": [], "effects": []}
        current: Optional[List[str]] = None
        for line in text.splitlines():
            if line.startswith(RESPONSE_SEPARATOR):
                kind = line[len(RESPONSE_SEPARATOR):].strip()
                if kind not in self._queues:
                    raise ValueError(f"unknown replay section '{kind}'")
                current = []
                self._queues[kind].append(current)
            elif current is not None:
                current.append(line)
        self._queues = {k: ["\n".join(lines).strip() for lines in v] for k, v in self._queues.items()}

    @classmethod
    def from_file(cls, path: str) -> "ScriptedProposer":
        with open(path, "r", encoding="utf-8") as f:
            return cls(f.read())

    @property
    def exhausted(self) -> bool:
        return not self._queues["effects"]

    def _next(self, kind: str) -> str:
        queue = self._queues[kind]
        return queue.pop(0) if queue else ""

    def complete_partial_domain(self, partial: str, digest: str) -> str:
        return self._next("completion")

    def propose_effects(self, request: EffectRequest) -> str:
        return self._next("effects")


def _bindings(pred_types: Sequence[TypeSignature], schema: ControllerSchema) -> List[Tuple[int, ...]]:
    pools = [[i for i, t in enumerate(schema.param_types) if t == pt] for pt in pred_types]
    return [combo for combo in itertools.product(*pools) if len(set(combo)) == len(combo)]


class EnumerateProposer(Proposer):
    """Systematic bottom-up enumeration with no prior.

    Predicate templates of arity 1 and 2 over the domain types, crossed with
    effect vectors ordered by how many controllers they touch. The order is
    fixed; history is consulted only to skip combinations already tried.
    """

    name = "enumerate"

    def __init__(self, domain: DomainSpec, max_arity: int = 2):
        self.domain = domain
        self.max_arity = max_arity
        self._stream = self._enumerate()
        self._done = False
        self._counter = itertools.count()

    @property
    def exhausted(self) -> bool:
        return self._done

    def templates(self) -> List[Tuple[TypeSignature, ...]]:
        result = []
        for arity in range(1, self.max_arity + 1):
            result.extend(itertools.product(self.domain.types, repeat=arity))
        return result

    def _options(self, pred_types, schema) -> List[Tuple[int, Tuple[int, ...]]]:
        return [(delta, b) for b in _bindings(pred_types, schema) for delta in (1, -1)]

    def _enumerate(self) -> Iterator[Tuple[Tuple[TypeSignature, ...], Dict[str, Tuple[int, Tuple[int, ...]]]]]:
        controllers = self.domain.controllers
        for touched in range(1, len(controllers) + 1):
            for pred_types in self.templates():
                options = {c.name: self._options(pred_types, c) for c in controllers}
                for subset in itertools.combinations(controllers, touched):
                    choices = [options[c.name] for c in subset]
                    if not all(choices):
                        continue
                    for combo in itertools.product(*choices):
                        yield pred_types, {c.name: opt for c, opt in zip(subset, combo)}

    def complete_partial_domain(self, partial: str, digest: str) -> str:
        return partial

    def propose_effects(self, request: EffectRequest) -> str:
        seen = {key[1:] for key in request.tried}
        blocks = []
        while len(blocks) < request.batch_size:
            item = next(self._stream, None)
            if item is None:
                self._done = True
                break
            pred_types, effects = item
            name = "_".join(["p"] + [t.name for t in pred_types]) + f"_{next(self._counter)}"
            predicate = LiftedPredicate(name, pred_types, PredicateKind.BASIC_DYNAMIC)
            ev = effect_vector_from_deltas(predicate, self.domain.controllers, effects)
            if ev.dedup_key()[1:] in seen:
                continue
            blocks.append(format_effect_proposal(predicate, ev))
        return "\n".join(blocks)


@dataclass
class CandidateRecord:
    predicate: LiftedPredicate
    effect_vector: EffectVector
    round: int
    val_loss: float
    consistent: bool
    score: float = 0.0
    trained: Optional[TrainedCandidate] = field(default=None, repr=False)

    @property
    def name(self) -> str:
        return self.predicate.name

    def to_record(self) -> dict:
        return {
            "name": self.predicate.name,
            "arg_types": [t.name for t in self.predicate.arg_types],
            "effects": [{"controller": c, "delta": e.delta, "params": [p for _, p in e.binding]}
                        for c, e in self.effect_vector.entries if e.delta != 0],
            "round": self.round,
            "val_loss": self.val_loss,
            "consistent": self.consistent,
            "score": self.score,
        }


@dataclass
class ProposalRound:
    index: int
    focus: Optional[str]
    records: List[CandidateRecord]

    @property
    def losses(self) -> List[float]:
        return [r.val_loss for r in self.records]

    @property
    def scores(self) -> List[float]:
        return [r.score for r in self.records]

    def to_record(self) -> dict:
        return {"round": self.index, "focus": self.focus, "losses": self.losses, "scores": self.scores,
                "candidates": [r.name for r in self.records]}


@dataclass
class ProposalHistory:
    rounds: List[ProposalRound] = field(default_factory=list)
    tried: Set[Tuple] = field(default_factory=set)
    transcript: List[dict] = field(default_factory=list)
    diagnostics: List[str] = field(default_factory=list)
    fits: int = 0

    @property
    def records(self) -> List[CandidateRecord]:
        return [r for rnd in self.rounds for r in rnd.records]

    def next_index(self) -> int:
        return self.rounds[-1].index + 1 if self.rounds else 0

    def log_exchange(self, kind: str, prompt: str, response: str) -> None:
        self.transcript.append({"call": len(self.transcript), "kind": kind, "prompt": prompt, "response": response})


@dataclass
class PoolResult:
    pool: List[CandidateRecord]
    history: ProposalHistory


def demo_digest(demos: Sequence[Demonstration], count: int, names: Optional[NameRedactor] = None) -> str:
    """One line of controller calls per demonstration."""
    names = names or IdentityNames()
    lines = []
    for i, demo in enumerate(demos[:count]):
        calls = " ".join(f"({names.redact(t.action.schema.name)} {' '.join(o.name for o in t.action.args)})"
                         for t in demo.transitions)
        lines.append(f"demo {i + 1}: {calls}")
    return "\n".join(lines)


def format_history(history: ProposalHistory, names: NameRedactor, loss_feedback: bool) -> str:
    if not history.rounds:
        return "(nothing proposed yet)"
    chunks = []
    for rnd in history.rounds:
        header = f"; round {rnd.index}" + (f", focus {rnd.focus}" if rnd.focus else "")
        chunks.append(header)
        for rec in rnd.records:
            chunks.append(format_effect_proposal(rec.predicate, rec.effect_vector, names))
            if loss_feedback:
                chunks.append(f"; loss {rec.val_loss:.4f} score {rec.score:.1f}")
    return "\n".join(chunks)


def default_fit(demos: Sequence[Demonstration], config: TrainConfig) -> Fit:
    def fit(predicate: LiftedPredicate, ev: EffectVector) -> TrainedCandidate:
        return train_candidate(predicate, ev, demos, config)
    return fit


class ProposalLoop:
    """Seeds from a domain completion, then refines until the pool is full."""

    def __init__(self, domain: DomainSpec, demos: Sequence[Demonstration], proposer: Proposer,
                 loop: Optional[LoopConfig] = None, train: Optional[TrainConfig] = None,
                 fit: Optional[Fit] = None, sleep: Callable[[float], None] = time.sleep):
        self.domain = domain
        self.demos = list(demos)
        self.proposer = proposer
        self.loop = loop or LoopConfig()
        self.train = train or TrainConfig()
        self.fit = fit or default_fit(self.demos, self.train)
        self.sleep = sleep
        self.history = ProposalHistory()
        self.names = (NameRedactor([c.name for c in domain.controllers], [p.name for p in domain.known_predicates])
                      if self.loop.redact_names else IdentityNames())
        self.partial = serialize_partial(domain, domain.known_predicates, self.names)
        self.target = self.loop.target_for(len(domain.controllers))
        self._stopped = False

    def _call(self, kind: str, fn: Callable[[], str], prompt: str) -> Optional[str]:
        """Proposer call with bounded exponential backoff; None once retries are spent."""
        backoff = INITIAL_BACKOFF_SECONDS
        for attempt in range(self.loop.transport_retries + 1):
            try:
                response = fn()
                self.history.log_exchange(kind, prompt, response)
                return response
            except ProposerTransportError as e:
                log.warning("Proposer transport failure.", attempt=attempt + 1, backoff_seconds=backoff,
                            error_str=str(e))
                if attempt < self.loop.transport_retries:
                    self.sleep(backoff)
                    backoff = min(MAX_BACKOFF_SECONDS, backoff * 2)
        log.error("Proposer unreachable; stopping with the pool collected so far.",
                  retries=self.loop.transport_retries)
        self.history.diagnostics.append(f"{kind}: proposer unreachable after {self.loop.transport_retries} retries")
        self._stopped = True
        return None

    def _novel(self, candidates: Sequence[Tuple[LiftedPredicate, EffectVector]]):
        fresh = []
        for predicate, ev in candidates:
            key = ev.dedup_key()
            if key in self.history.tried:
                log.debug("Proposal already tried; skipped.", predicate=predicate.name)
                continue
            self.history.tried.add(key)
            fresh.append((predicate, ev))
        return fresh

    def _train_one(self, predicate: LiftedPredicate, ev: EffectVector) -> Optional[TrainedCandidate]:
        try:
            return self.fit(predicate, ev)
        except TrainingError as e:
            self.history.diagnostics.append(f"{predicate.name}: {e}")
            log.warning("Candidate could not be trained.", predicate=predicate.name, error_str=str(e))
            return None

    def _train_round(self, candidates, focus: Optional[str]) -> ProposalRound:
        if self.loop.workers > 1 and len(candidates) > 1:
            with ThreadPoolExecutor(max_workers=self.loop.workers) as executor:
                trained = list(executor.map(lambda c: self._train_one(*c), candidates))
        else:
            trained = [self._train_one(*c) for c in candidates]
        index = self.history.next_index()
        records = []
        for (predicate, ev), result in zip(candidates, trained):
            if result is None:
                continue
            self.history.fits += 1
            records.append(CandidateRecord(predicate, ev, index, result.val_loss, result.consistent, 0.0, result))
        for rec, s in zip(records, score([r.val_loss for r in records])):
            rec.score = s
        rnd = ProposalRound(index, focus, records)
        self.history.rounds.append(rnd)
        log.info("Proposal round trained.", round=index, focus=focus, proposals=len(records),
                 consistent=sum(r.consistent for r in records), fits=self.history.fits)
        return rnd

    def consistent_count(self) -> int:
        return len({r.name for r in self.history.records if r.consistent})

    def seed_candidates(self) -> List[CandidateRecord]:
        if not self.loop.seed_from_completion:
            return []
        digest = demo_digest(self.demos, self.loop.digest_demos, self.names)
        prompt = render("partial_domain.txt", partial_pddl=self.partial, demo_digest=digest)
        extraction = None
        for attempt in range(self.loop.completion_retries):
            text = self._call("completion", lambda: self.proposer.complete_partial_domain(self.partial, digest),
                              prompt)
            if text is None:
                return []
            try:
                parsed = parse_domain(text)
                extraction = extract_candidates(parsed, self.domain, self.domain.known_predicates, self.names)
                break
            except (PddlParseError, ExtractionError) as e:
                self.history.diagnostics.append(f"completion attempt {attempt + 1}: {e}")
                log.warning("Domain completion unusable; retrying.", attempt=attempt + 1, error_str=str(e))
        if extraction is None:
            log.error("No usable domain completion; continuing without seeds.",
                      attempts=self.loop.completion_retries)
            return []
        self.history.diagnostics.extend(extraction.diagnostics)
        seeds = self._novel(extraction.candidates)
        if not seeds:
            return []
        return self._train_round(seeds, None).records

    def _focus_text(self, focus: Optional[CandidateRecord]) -> str:
        if focus is None:
            return "Propose new predicates that would help the planner, different from the ones above."
        return (f"The predicate {focus.name} could not be learned from the effects given "
                f"(loss {focus.val_loss:.4f}). Propose corrected effect patterns for it, keeping its name.")

    def refine_loop(self, seeds: Sequence[CandidateRecord]) -> PoolResult:
        focuses: List[Optional[CandidateRecord]] = [s for s in seeds if not s.consistent] + [None]
        for focus in focuses:
            for _ in range(self.loop.max_iterations):
                if self._stopped or self.consistent_count() >= self.target or self.proposer.exhausted:
                    break
                if focus is not None and any(r.consistent and r.name == focus.name for r in self.history.records):
                    break
                request = EffectRequest(
                    self.domain.name, self.partial,
                    format_history(self.history, self.names, self.loop.loss_feedback),
                    self._focus_text(focus), self.loop.proposals_per_round, frozenset(self.history.tried))
                prompt = render("propose_effects.txt", partial_pddl=request.partial_pddl, history=request.history,
                                focus=request.focus, batch_size=request.batch_size)
                text = self._call("effects", lambda: self.proposer.propose_effects(request), prompt)
                if text is None:
                    break
                extraction = parse_effect_proposals(text, self.domain, self.names)
                self.history.diagnostics.extend(extraction.diagnostics)
                fresh = self._novel(extraction.candidates)
                if fresh:
                    self._train_round(fresh, focus.name if focus else None)
        return PoolResult(self.pool(), self.history)

    def pool(self) -> List[CandidateRecord]:
        """Consistent candidates in training order, renamed where a name repeats."""
        pool, taken = [], set()
        for rec in self.history.records:
            if not rec.consistent:
                continue
            name, n = rec.name, 2
            while name in taken:
                name, n = f"{rec.name}_{n}", n + 1
            taken.add(name)
            if name != rec.name:
                predicate = LiftedPredicate(name, rec.predicate.arg_types, rec.predicate.kind)
                rec = CandidateRecord(predicate, rec.effect_vector.renamed(predicate), rec.round, rec.val_loss,
                                      rec.consistent, rec.score, rec.trained)
            pool.append(rec)
        return pool

    def run(self) -> PoolResult:
        seeds = self.seed_candidates()
        log.info("Seeding finished.", seeds=len(seeds), consistent=sum(s.consistent for s in seeds))
        return self.refine_loop(seeds)


def seed_candidates(domain: DomainSpec, demos: Sequence[Demonstration], proposer: Proposer,
                    loop: Optional[LoopConfig] = None, train: Optional[TrainConfig] = None,
                    fit: Optional[Fit] = None) -> List[CandidateRecord]:
    return ProposalLoop(domain, demos, proposer, loop, train, fit).seed_candidates()


def build_pool(domain: DomainSpec, demos: Sequence[Demonstration], proposer: Proposer,
               loop: Optional[LoopConfig] = None, train: Optional[TrainConfig] = None,
               fit: Optional[Fit] = None, sleep: Callable[[float], None] = time.sleep) -> PoolResult:
    return ProposalLoop(domain, demos, proposer, loop, train, fit, sleep).run()
