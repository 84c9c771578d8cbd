# predinvent/src/selection.py
"""Derived-aware predicate selection.

Candidates are scored by how well operators learned over them let A*
reproduce the demonstrated skeletons, and how cheaply:

    J = sum over tasks of  W * [first skeleton != demo skeleton] + node pops

Hill climbing adds the single best candidate per round. Accepting a basic
predicate puts its negated and quantified forms into the pool; derived
predicates only ever appear in preconditions and are recomputed by closure
during search.
"""
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .config_models import DerivedMode, SelectionConfig
from .core import (AtomClassifier, ConsistencyError, ControllerSchema, Demonstration, DerivedForm, EffectVector,
                   GroundAtom, LiftedAtom, LiftedPredicate, ObjectInstance, Operator, PredicateKind, Quantifier,
                   State, effect_vector_from_deltas, enumerate_groundings, evaluate_derived, make_derived)
from .domains import DomainSpec
from .logging_config import get_logger
from .plan import Abstraction, SkeletonSearch, learn_samplers

log = get_logger(__name__)

__all__ = [
    "Candidate", "DerivedClassifier", "AtomDataset", "Evaluation", "SelectionStep", "SelectionResult",
    "PredicateSelector", "Operator", "derive_forms", "materialize", "induce_effect_vector", "learn_operators",
    "hill_climb",
]

ATOM_THRESHOLD = 0.5


@dataclass(frozen=True)
class Candidate:
    """A predicate the selector may add, with what it needs to take part in evaluation.

    Derived predicates carry no effect vector. A dynamic predicate without
    one (an inconsistent induced vector) can never be evaluated and scores
    infinity.
    """
    predicate: LiftedPredicate
    classifier: AtomClassifier = field(compare=False)
    effect_vector: Optional[EffectVector] = None

    @property
    def name(self) -> str:
        return self.predicate.name

    @property
    def is_derived(self) -> bool:
        return self.predicate.kind == PredicateKind.DERIVED_DYNAMIC


class DerivedClassifier:
    """Truth of a derived form computed from its base predicate's classifier."""

    def __init__(self, form: DerivedForm, base: AtomClassifier):
        self.form = form
        self.base = base

    def probabilities(self, state: State, atoms: Sequence[GroundAtom]) -> np.ndarray:
        if not atoms:
            return np.zeros(0)
        objects = state.objects
        base_atoms = enumerate_groundings(self.form.base, objects)
        probs = self.base.probabilities(state, base_atoms) if base_atoms else np.zeros(0)
        truth = {a: bool(p > ATOM_THRESHOLD) for a, p in zip(base_atoms, probs)}
        return np.array([1.0 if evaluate_derived(self.form, truth, a.args, objects) else 0.0 for a in atoms])


def derive_forms(basic: LiftedPredicate, dedup: bool = True) -> List[LiftedPredicate]:
    """Negation plus forall/exists over each argument position with both body polarities.

    With ``dedup`` the exists-not form is dropped: it is the negation of the
    forall form, so the forall representative and the bare exists remain.
    """
    if basic.kind != PredicateKind.BASIC_DYNAMIC:
        raise ValueError(f"derived forms need a basic dynamic predicate, got '{basic.name}' ({basic.kind.value})")
    forms = [make_derived(basic, Quantifier.NONE, None, negated=True)]
    for position in range(basic.arity):
        forms.append(make_derived(basic, Quantifier.FORALL, position, negated=False))
        forms.append(make_derived(basic, Quantifier.FORALL, position, negated=True))
        forms.append(make_derived(basic, Quantifier.EXISTS, position, negated=False))
        if not dedup:
            forms.append(make_derived(basic, Quantifier.EXISTS, position, negated=True))
    return forms


def materialize(derived: LiftedPredicate) -> LiftedPredicate:
    """The same signature as a plain basic predicate, for selection that ignores derivations."""
    return LiftedPredicate(derived.name, derived.arg_types, PredicateKind.BASIC_DYNAMIC)


class AtomDataset:
    """Thresholded atoms of every demonstration state, computed once per predicate name."""

    def __init__(self, demos: Sequence[Demonstration]):
        self.demos = list(demos)
        self._states: List[List[State]] = [d.states() for d in self.demos]
        self._cache: Dict[str, List[List[FrozenSet[GroundAtom]]]] = {}
        self._lock = threading.Lock()

    def truth(self, predicate: LiftedPredicate,
              classifier: AtomClassifier) -> List[List[FrozenSet[GroundAtom]]]:
        with self._lock:
            cached = self._cache.get(predicate.name)
        if cached is not None:
            return cached
        per_demo = []
        for demo, states in zip(self.demos, self._states):
            groundings = enumerate_groundings(predicate, demo.task.objects)
            seq = []
            for state in states:
                if not groundings:
                    seq.append(frozenset())
                    continue
                probs = classifier.probabilities(state, groundings)
                seq.append(frozenset(a for a, p in zip(groundings, probs) if p > ATOM_THRESHOLD))
            per_demo.append(seq)
        with self._lock:
            self._cache.setdefault(predicate.name, per_demo)
        return per_demo

    def atom_sets(self, candidates: Sequence[Candidate]) -> List[List[FrozenSet[GroundAtom]]]:
        """Union over ``candidates`` of their atoms, per demo and state index."""
        result = [[set() for _ in states] for states in self._states]
        for cand in candidates:
            for d, seq in enumerate(self.truth(cand.predicate, cand.classifier)):
                for k, atoms in enumerate(seq):
                    result[d][k].update(atoms)
        return [[frozenset(s) for s in seq] for seq in result]


def induce_effect_vector(predicate: LiftedPredicate, truth: Sequence[Sequence[FrozenSet[GroundAtom]]],
                         demos: Sequence[Demonstration],
                         schemas: Sequence[ControllerSchema]) -> EffectVector:
    """Effect vector read off observed atom changes.

    Every transition of a controller must change the predicate the same way:
    at most one atom, always through the same parameters, always in the same
    direction. Anything else raises ConsistencyError.
    """
    observed: Dict[str, Set[Tuple[int, Tuple[int, ...]]]] = {s.name: set() for s in schemas}
    for demo, seq in zip(demos, truth):
        for k, tr in enumerate(demo.transitions):
            before, after = seq[k], seq[k + 1]
            changes = [(1, a) for a in after - before] + [(-1, a) for a in before - after]
            name = tr.action.schema.name
            if len(changes) > 1:
                raise ConsistencyError(f"{predicate.name}: {tr.action} changes {len(changes)} atoms")
            if not changes:
                observed[name].add((0, ()))
                continue
            delta, atom = changes[0]
            if any(o not in tr.action.args for o in atom.args):
                raise ConsistencyError(f"{predicate.name}: {tr.action} changes {atom} outside its arguments")
            observed[name].add((delta, tuple(tr.action.args.index(o) for o in atom.args)))
    effects = {}
    for name, seen in observed.items():
        if len(seen) > 1:
            raise ConsistencyError(f"{predicate.name}: {name} affects it inconsistently across transitions")
        if seen:
            delta, params = next(iter(seen))
            if delta:
                effects[name] = (delta, params)
    return effect_vector_from_deltas(predicate, schemas, effects)


def _lift(atoms: FrozenSet[GroundAtom], args: Sequence[ObjectInstance]) -> Set[LiftedAtom]:
    index = {o: i for i, o in enumerate(args)}
    return {LiftedAtom(a.predicate, tuple(index[o] for o in a.args))
            for a in atoms if all(o in index for o in a.args)}


def learn_operators(predicates: Sequence[LiftedPredicate], effect_vectors: Mapping[str, EffectVector],
                    schemas: Sequence[ControllerSchema], demos: Sequence[Demonstration],
                    atom_sets: Sequence[Sequence[FrozenSet[GroundAtom]]]) -> List[Operator]:
    """One operator per controller schema.

    Effects come from the effect vectors; preconditions are the lifted atoms
    that held before every demonstrated transition of the schema.
    ``atom_sets[d][k]`` is the abstract state before step k of demo d.
    """
    for pred in predicates:
        has_ev = pred.name in effect_vectors
        if pred.kind == PredicateKind.DERIVED_DYNAMIC and has_ev:
            raise ConsistencyError(f"derived predicate '{pred.name}' cannot carry effects")
        if pred.kind in (PredicateKind.BASIC_DYNAMIC, PredicateKind.GOAL) and not has_ev:
            raise ConsistencyError(f"predicate '{pred.name}' has no effect vector")

    operators = []
    for schema in schemas:
        add, delete = set(), set()
        for pred in predicates:
            ev = effect_vectors.get(pred.name)
            if ev is None:
                continue
            entry = ev.entry(schema.name)
            if entry.delta == 0:
                continue
            atom = LiftedAtom(pred, tuple(entry.param_for(i) for i in range(pred.arity)))
            (add if entry.delta > 0 else delete).add(atom)

        pre: Optional[Set[LiftedAtom]] = None
        for demo, seq in zip(demos, atom_sets):
            for k, tr in enumerate(demo.transitions):
                if tr.action.schema.name != schema.name:
                    continue
                lifted = _lift(seq[k], tr.action.args)
                pre = lifted if pre is None else pre & lifted
        if pre is None:
            log.warning("No demonstrations for controller; operator gets empty preconditions.",
                        schema=schema.name)
            pre = set()
        operators.append(Operator(schema, frozenset(pre), frozenset(add), frozenset(delete)))
    return operators


@dataclass(frozen=True)
class Evaluation:
    j: float
    mismatches: int
    expansions: int
    tasks: int

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.j)


INFEASIBLE = Evaluation(math.inf, 0, 0, 0)


@dataclass(frozen=True)
class SelectionStep:
    round: int
    candidate: str
    j: float
    accepted: bool

    def to_record(self) -> dict:
        return {"round": self.round, "candidate": self.candidate,
                "j": self.j if math.isfinite(self.j) else "inf", "accepted": self.accepted}


@dataclass
class SelectionResult:
    selected: List[Candidate]
    j_star: float
    initial_j: float
    steps: List[SelectionStep]
    abstraction: Abstraction
    effect_vectors: Dict[str, EffectVector]
    skill_seconds: float = 0.0

    @property
    def accepted_j(self) -> List[float]:
        return [s.j for s in self.steps if s.accepted]


class PredicateSelector:
    """Evaluates predicate sets against a fixed demonstration set.

    Known (static and goal) predicates are always present; their effect
    vectors are read off the demonstrations. Evaluations are memoized by
    the set of candidate names.
    """

    def __init__(self, domain: DomainSpec, demos: Sequence[Demonstration],
                 config: Optional[SelectionConfig] = None,
                 known_classifiers: Optional[Mapping[str, AtomClassifier]] = None):
        self.domain = domain
        self.demos = list(demos)
        self.config = config or SelectionConfig()
        self.dataset = AtomDataset(self.demos)
        classifiers = known_classifiers or domain.known_classifiers()
        self.known: List[Candidate] = []
        self.known_consistent = True
        for pred in domain.known_predicates:
            truth = self.dataset.truth(pred, classifiers[pred.name])
            try:
                ev = induce_effect_vector(pred, truth, self.demos, domain.controllers)
            except ConsistencyError as e:
                log.error("Known predicate changes inconsistently; every evaluation is infeasible.",
                          predicate=pred.name, detail=str(e))
                ev = None
                self.known_consistent = False
            self.known.append(Candidate(pred, classifiers[pred.name], ev))
        self._cache: Dict[Tuple[str, ...], Evaluation] = {}
        self._cache_lock = threading.Lock()

    def _tasks(self):
        for d, demo in enumerate(self.demos):
            skeleton = demo.skeleton()
            starts = range(len(demo.transitions)) if self.config.evaluate_suffixes else [0]
            for k in starts:
                yield d, k, skeleton[k:]

    def effect_vectors(self, candidates: Sequence[Candidate]) -> Dict[str, EffectVector]:
        return {c.name: c.effect_vector for c in list(self.known) + list(candidates)
                if c.effect_vector is not None}

    def operators(self, candidates: Sequence[Candidate]) -> List[Operator]:
        members = list(self.known) + list(candidates)
        return learn_operators([c.predicate for c in members], self.effect_vectors(candidates),
                               self.domain.controllers, self.demos, self.dataset.atom_sets(members))

    def evaluate(self, candidates: Sequence[Candidate]) -> Evaluation:
        key = tuple(sorted(c.name for c in candidates))
        with self._cache_lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        result = self._evaluate(candidates)
        with self._cache_lock:
            self._cache[key] = result
        return result

    def _evaluate(self, candidates: Sequence[Candidate]) -> Evaluation:
        if not self.known_consistent:
            return INFEASIBLE
        try:
            operators = self.operators(candidates)
        except ConsistencyError as e:
            log.debug("Operator learning failed.", candidates=[c.name for c in candidates], detail=str(e))
            return INFEASIBLE
        members = list(self.known) + list(candidates)
        atom_sets = self.dataset.atom_sets(members)
        derived = [c.predicate for c in candidates if c.is_derived]
        weight = self.config.mismatch_weight
        j, mismatches, expansions, tasks = 0.0, 0, 0, 0
        for d, k, expected in self._tasks():
            demo = self.demos[d]
            search = SkeletonSearch(atom_sets[d][k], demo.task.goal, operators, demo.task.objects,
                                    self.config.search_budget, derived)
            skeleton = next(search, None)
            missed = skeleton is None or skeleton.keys() != expected
            mismatches += int(missed)
            expansions += search.expansions
            tasks += 1
            j += weight * missed + search.expansions
        return Evaluation(j, mismatches, expansions, tasks)

    def expand(self, accepted: Candidate) -> List[Candidate]:
        """Derived forms of an accepted basic candidate."""
        forms = []
        for pred in derive_forms(accepted.predicate):
            forms.append(Candidate(pred, DerivedClassifier(pred.derivation, accepted.classifier)))
        return forms

    def prepare_pool(self, pool: Sequence[Candidate]) -> List[Candidate]:
        """Canonical pool for the configured derived mode."""
        prepared = list(pool)
        if self.config.derived_mode != DerivedMode.INDISTINCT:
            return prepared
        for cand in pool:
            if cand.is_derived:
                continue
            for pred in derive_forms(cand.predicate):
                flat = materialize(pred)
                classifier = DerivedClassifier(pred.derivation, cand.classifier)
                truth = self.dataset.truth(flat, classifier)
                try:
                    ev = induce_effect_vector(flat, truth, self.demos, self.domain.controllers)
                except ConsistencyError as e:
                    log.debug("Derived form has no consistent effects.", predicate=flat.name, detail=str(e))
                    ev = None
                prepared.append(Candidate(flat, classifier, ev))
        return prepared

    def abstraction(self, candidates: Sequence[Candidate]) -> Abstraction:
        members = list(self.known) + list(candidates)
        classifiers = {c.name: c.classifier for c in members if not c.is_derived}
        samplers = learn_samplers(self.demos, self.domain.controllers)
        return Abstraction(tuple(c.predicate for c in members), classifiers, tuple(self.operators(candidates)),
                           samplers)

    def _score_round(self, selected: List[Candidate], pool: List[Candidate]) -> List[Evaluation]:
        if self.config.workers <= 1 or len(pool) <= 1:
            return [self.evaluate(selected + [c]) for c in pool]
        with ThreadPoolExecutor(max_workers=self.config.workers) as executor:
            return list(executor.map(lambda c: self.evaluate(selected + [c]), pool))

    def hill_climb(self, pool: Sequence[Candidate]) -> SelectionResult:
        remaining = self.prepare_pool(pool)
        names = [c.name for c in remaining]
        if len(names) != len(set(names)):
            raise ValueError("candidate names in the pool must be unique")
        selected: List[Candidate] = []
        start = self.evaluate(selected)
        j_star = start.j
        steps: List[SelectionStep] = []
        log.info("Selection started.", pool=len(remaining), initial_j=j_star, mode=self.config.derived_mode.value)

        round_index = 0
        while remaining and not j_star < self.config.epsilon:
            evaluations = self._score_round(selected, remaining)
            best = min(range(len(remaining)), key=lambda i: evaluations[i].j)
            improved = evaluations[best].j < j_star
            for i, (cand, ev) in enumerate(zip(remaining, evaluations)):
                steps.append(SelectionStep(round_index, cand.name, ev.j, improved and i == best))
            if not improved:
                break
            chosen = remaining.pop(best)
            selected.append(chosen)
            j_star = evaluations[best].j
            log.info("Candidate accepted.", round=round_index, predicate=chosen.name, j=j_star,
                     mismatches=evaluations[best].mismatches, expansions=evaluations[best].expansions)
            if self.config.derived_mode == DerivedMode.AWARE and not chosen.is_derived:
                present = {c.name for c in remaining} | {c.name for c in selected}
                remaining.extend(c for c in self.expand(chosen) if c.name not in present)
            round_index += 1

        log.info("Selection finished.", selected=[c.name for c in selected], j_star=j_star, rounds=round_index)
        started = time.perf_counter()
        abstraction = self.abstraction(selected)
        return SelectionResult(selected, j_star, start.j, steps, abstraction, self.effect_vectors(selected),
                               time.perf_counter() - started)


def hill_climb(pool: Sequence[Candidate], demos: Sequence[Demonstration], domain: DomainSpec,
               config: Optional[SelectionConfig] = None) -> SelectionResult:
    return PredicateSelector(domain, demos, config).hill_climb(pool)
