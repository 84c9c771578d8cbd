# predinvent/src/plan.py
"""Abstract states, A* over learned operators, samplers and the bilevel planner."""
import heapq
import itertools
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import (TYPE_CHECKING, Callable, Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional,
                    Sequence, Tuple)

import numpy as np

from .config_models import PlannerBudgets
from .core import (AtomClassifier, ConfigurationError, ControllerSchema, Demonstration, GroundAtom,
                   GroundedController, LiftedPredicate, ObjectInstance, Operator, PredicateKind, State, Task,
                   enumerate_arg_tuples, enumerate_groundings, evaluate_derived)
from .logging_config import get_logger

if TYPE_CHECKING:
    from .domains import DomainSpec

log = get_logger(__name__)

SkeletonKey = Tuple[Tuple[str, Tuple[str, ...]], ...]

COVARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class GaussianSampler:
    """omega ~ N(features @ weights + intercept, diag(variance))."""
    schema_name: str
    weights: np.ndarray      # (input_dim, omega_dim)
    intercept: np.ndarray    # (omega_dim,)
    variance: np.ndarray     # (omega_dim,)

    def mean(self, state: State, args: Sequence[ObjectInstance]) -> np.ndarray:
        x = state.vector(args)
        return x @ self.weights + self.intercept

    def sample(self, state: State, args: Sequence[ObjectInstance], rng: np.random.Generator) -> Tuple[float, ...]:
        mu = self.mean(state, args)
        draw = rng.normal(mu, np.sqrt(self.variance))
        return tuple(float(v) for v in draw)

    def to_record(self) -> dict:
        return {
            "schema": self.schema_name,
            "weights": self.weights.tolist(),
            "intercept": self.intercept.tolist(),
            "variance": self.variance.tolist(),
        }

    @classmethod
    def from_record(cls, record: Mapping) -> "GaussianSampler":
        intercept = np.asarray(record["intercept"], dtype=np.float64)
        weights = np.asarray(record["weights"], dtype=np.float64).reshape(-1, intercept.shape[0])
        return cls(record["schema"], weights, intercept, np.asarray(record["variance"], dtype=np.float64))


@dataclass(frozen=True)
class Abstraction:
    """Predicates with their classifiers plus the operators and samplers learned over them.

    Derived predicates carry no classifier; their atoms are recomputed from
    the basic atoms whenever an abstract state is formed.
    """
    predicates: Tuple[LiftedPredicate, ...]
    classifiers: Mapping[str, AtomClassifier]
    operators: Tuple[Operator, ...]
    samplers: Mapping[str, GaussianSampler] = field(default_factory=dict)

    def __post_init__(self):
        for pred in self.predicates:
            if pred.kind != PredicateKind.DERIVED_DYNAMIC and pred.name not in self.classifiers:
                raise ConfigurationError(f"predicate '{pred.name}' has no classifier")

    @property
    def derived_predicates(self) -> Tuple[LiftedPredicate, ...]:
        return tuple(p for p in self.predicates if p.kind == PredicateKind.DERIVED_DYNAMIC)

    @property
    def classified_predicates(self) -> Tuple[LiftedPredicate, ...]:
        return tuple(p for p in self.predicates if p.kind != PredicateKind.DERIVED_DYNAMIC)


def derived_closure(atoms: Iterable[GroundAtom], derived: Sequence[LiftedPredicate],
                    objects: Sequence[ObjectInstance]) -> FrozenSet[GroundAtom]:
    """Replaces every derived atom in ``atoms`` with values recomputed from the basic atoms."""
    basic = frozenset(a for a in atoms if a.predicate.kind != PredicateKind.DERIVED_DYNAMIC)
    if not derived:
        return basic
    result = set(basic)
    truth_cache: Dict[LiftedPredicate, Dict[GroundAtom, bool]] = {}
    for pred in derived:
        form = pred.derivation
        truth = truth_cache.get(form.base)
        if truth is None:
            truth = {a: a in basic for a in enumerate_groundings(form.base, objects)}
            truth_cache[form.base] = truth
        for atom in enumerate_groundings(pred, objects):
            if evaluate_derived(form, truth, atom.args, objects):
                result.add(atom)
    return frozenset(result)


def abstract_state(state: State, objects: Sequence[ObjectInstance], abstraction: Abstraction,
                   threshold: float = 0.5) -> FrozenSet[GroundAtom]:
    atoms = set()
    for pred in abstraction.classified_predicates:
        groundings = enumerate_groundings(pred, objects)
        if not groundings:
            continue
        probs = abstraction.classifiers[pred.name].probabilities(state, groundings)
        atoms.update(a for a, p in zip(groundings, probs) if p > threshold)
    return derived_closure(atoms, abstraction.derived_predicates, objects)


@dataclass(frozen=True)
class GroundOperator:
    operator: Operator
    args: Tuple[ObjectInstance, ...]
    preconditions: FrozenSet[GroundAtom]
    add_effects: FrozenSet[GroundAtom]
    delete_effects: FrozenSet[GroundAtom]

    @property
    def key(self) -> Tuple[str, Tuple[str, ...]]:
        return self.operator.name, tuple(o.name for o in self.args)

    def __str__(self) -> str:
        return f"{self.operator.name}({', '.join(o.name for o in self.args)})"


@dataclass(frozen=True)
class Skeleton:
    steps: Tuple[GroundOperator, ...]
    atoms: Tuple[FrozenSet[GroundAtom], ...]  # abstract states along the plan, len(steps) + 1

    def keys(self) -> SkeletonKey:
        return tuple(s.key for s in self.steps)

    def __len__(self) -> int:
        return len(self.steps)


def ground_operators(operators: Sequence[Operator], objects: Sequence[ObjectInstance]) -> List[GroundOperator]:
    grounded = []
    for op in operators:
        for args in enumerate_arg_tuples(op.schema.param_types, objects):
            pre, add, delete = op.ground(args)
            grounded.append(GroundOperator(op, args, pre, add, delete))
    return grounded


@dataclass
class _Node:
    atoms: FrozenSet[GroundAtom]
    g: int
    parent: Optional["_Node"]
    op: Optional[GroundOperator]


class SkeletonSearch:
    """Resumable A* over abstract states.

    Iterating yields skeletons in order of discovery; ``expansions`` counts
    node pops so far. Heuristic is the number of unsatisfied goal atoms, ties
    break first-in first-out. Goal nodes are reported but never expanded, so
    later skeletons reach the goal along different paths.
    """

    def __init__(self, init_atoms: FrozenSet[GroundAtom], goal: FrozenSet[GroundAtom],
                 operators: Sequence[Operator], objects: Sequence[ObjectInstance], budget: int,
                 derived: Sequence[LiftedPredicate] = ()):
        self.goal = frozenset(goal)
        self.objects = tuple(objects)
        self.budget = budget
        self.derived = tuple(derived)
        self.expansions = 0
        self.exhausted = False
        self._ground_ops = ground_operators(operators, self.objects)
        self._counter = itertools.count()
        self._closed = set()
        root = _Node(frozenset(init_atoms), 0, None, None)
        self._open: List[Tuple[int, int, _Node]] = [(self._h(root.atoms), next(self._counter), root)]

    def _h(self, atoms: FrozenSet[GroundAtom]) -> int:
        return len(self.goal - atoms)

    def __iter__(self) -> Iterator[Skeleton]:
        return self

    def __next__(self) -> Skeleton:
        while self._open:
            if self.expansions >= self.budget:
                self.exhausted = True
                raise StopIteration
            _, _, node = heapq.heappop(self._open)
            self.expansions += 1
            if self.goal <= node.atoms:
                return self._extract(node)
            if node.atoms in self._closed:
                continue
            self._closed.add(node.atoms)
            for gop in self._ground_ops:
                if not gop.preconditions <= node.atoms:
                    continue
                succ = (node.atoms - gop.delete_effects) | gop.add_effects
                if self.derived:
                    succ = derived_closure(succ, self.derived, self.objects)
                if succ in self._closed:
                    continue
                child = _Node(succ, node.g + 1, node, gop)
                heapq.heappush(self._open, (child.g + self._h(succ), next(self._counter), child))
        self.exhausted = True
        raise StopIteration

    @staticmethod
    def _extract(node: _Node) -> Skeleton:
        steps, atoms = [], [node.atoms]
        while node.parent is not None:
            steps.append(node.op)
            node = node.parent
            atoms.append(node.atoms)
        return Skeleton(tuple(reversed(steps)), tuple(reversed(atoms)))


def astar_skeleton(init_atoms: FrozenSet[GroundAtom], goal: FrozenSet[GroundAtom], operators: Sequence[Operator],
                   objects: Sequence[ObjectInstance], budget: int,
                   derived: Sequence[LiftedPredicate] = ()) -> SkeletonSearch:
    return SkeletonSearch(init_atoms, goal, operators, objects, budget, derived)


def learn_samplers(demos: Sequence[Demonstration],
                   schemas: Sequence[ControllerSchema]) -> Dict[str, GaussianSampler]:
    """Per-schema linear-Gaussian fit of omega on the concatenated argument features."""
    samplers = {}
    for schema in schemas:
        if schema.omega_dim == 0:
            continue
        rows, targets = [], []
        for demo in demos:
            for tr in demo.transitions:
                if tr.action.schema.name == schema.name:
                    rows.append(tr.pre.vector(tr.action.args))
                    targets.append(tr.action.omega)
        if not rows:
            log.warning("No demonstrations for controller; it gets no sampler.", schema=schema.name)
            continue
        X = np.asarray(rows, dtype=np.float64)
        Y = np.asarray(targets, dtype=np.float64).reshape(len(rows), schema.omega_dim)
        n, d = X.shape
        if n < d + 1:
            log.warning("Too few transitions for a linear fit; using the mean only.",
                        schema=schema.name, transitions=n, input_dim=d)
            weights = np.zeros((d, schema.omega_dim))
            intercept = Y.mean(axis=0)
        else:
            design = np.hstack([X, np.ones((n, 1))])
            coef, *_ = np.linalg.lstsq(design, Y, rcond=None)
            weights, intercept = coef[:-1], coef[-1]
        residual = Y - (X @ weights + intercept)
        variance = np.maximum(np.mean(residual ** 2, axis=0), COVARIANCE_FLOOR)
        samplers[schema.name] = GaussianSampler(schema.name, weights, intercept, variance)
        log.debug("Sampler fitted.", schema=schema.name, transitions=n, variance=variance.tolist())
    return samplers


class FailureReason(str, Enum):
    NO_SKELETON = "no-skeleton"
    SAMPLER_EXHAUSTED = "sampler-exhausted"
    PRECONDITION_VIOLATED = "precondition-violated"
    TIMEOUT = "timeout"
    REPLAN_LIMIT = "replan-limit"


@dataclass(frozen=True)
class PlanStep:
    action: GroundedController
    atoms_before: FrozenSet[GroundAtom]
    samples_drawn: int

    def to_record(self) -> dict:
        return {
            "controller": self.action.schema.name,
            "args": [o.name for o in self.action.args],
            "omega": list(self.action.omega),
            "atoms_before": sorted(str(a) for a in self.atoms_before),
            "samples_drawn": self.samples_drawn,
        }


@dataclass
class PlanResult:
    success: bool
    reason: Optional[FailureReason]
    steps: List[PlanStep]
    final_state: State
    replans: int = 0
    skeletons_tried: int = 0

    @property
    def plan_length(self) -> int:
        return len(self.steps)

    def to_record(self) -> dict:
        return {
            "success": self.success,
            "failure_reason": self.reason.value if self.reason else None,
            "replans": self.replans,
            "skeletons_tried": self.skeletons_tried,
            "steps": [s.to_record() for s in self.steps],
        }


class _Timeout(Exception):
    pass


def _refine(skeleton: Skeleton, state: State, task: Task, abstraction: Abstraction, domain: "DomainSpec",
            budgets: PlannerBudgets, rng: np.random.Generator, deadline: float,
            clock: Callable[[], float], steps: List[PlanStep]) -> Tuple[State, int, Optional[FailureReason]]:
    """Executes skeleton steps in order; returns (state, steps executed, failure reason or None)."""
    executed = 0
    atoms = skeleton.atoms[0]
    for gop in skeleton.steps:
        if clock() > deadline:
            raise _Timeout()
        if executed > 0:
            atoms = abstract_state(state, task.objects, abstraction)
            if not gop.preconditions <= atoms:
                log.debug("Precondition not met after execution.", step=str(gop),
                          missing=sorted(str(a) for a in gop.preconditions - atoms))
                return state, executed, FailureReason.PRECONDITION_VIOLATED
        schema = gop.operator.schema
        sampler = abstraction.samplers.get(schema.name)
        attempts = budgets.samples_per_step if schema.omega_dim > 0 else 1
        next_state = None
        for attempt in range(attempts):
            if sampler is not None:
                omega = sampler.sample(state, gop.args, rng)
            else:
                omega = (0.0,) * schema.omega_dim
            action = GroundedController(schema, gop.args, omega)
            next_state = domain.transition(state, action)
            if next_state is not None:
                steps.append(PlanStep(action, atoms, attempt + 1))
                break
        if next_state is None:
            return state, executed, FailureReason.SAMPLER_EXHAUSTED
        state = next_state
        executed += 1
    return state, executed, None


def bilevel_plan(task: Task, abstraction: Abstraction, domain: "DomainSpec", budgets: PlannerBudgets,
                 rng: np.random.Generator, clock: Callable[[], float] = time.monotonic) -> PlanResult:
    """Plans abstractly, refines with sampled continuous parameters, replans on failure.

    A skeleton that fails on its first step is swapped for the next one from
    the same search; once any step has executed the planner re-abstracts the
    current state and searches again.
    """
    deadline = clock() + budgets.timeout_s
    state = task.init
    steps: List[PlanStep] = []
    replans = 0
    skeletons_tried = 0
    last_reason: Optional[FailureReason] = None

    def finish(success: bool, reason: Optional[FailureReason]) -> PlanResult:
        return PlanResult(success, reason, steps, state, replans, skeletons_tried)

    try:
        while True:
            if domain.goal_satisfied(task, state):
                return finish(True, None)
            if replans > budgets.max_replans:
                return finish(False, last_reason or FailureReason.REPLAN_LIMIT)
            atoms = abstract_state(state, task.objects, abstraction)
            search = astar_skeleton(atoms, task.goal, abstraction.operators, task.objects,
                                    budgets.search_budget, abstraction.derived_predicates)
            found_any = False
            for _ in range(budgets.max_skeletons):
                if clock() > deadline:
                    raise _Timeout()
                skeleton = next(search, None)
                if skeleton is None:
                    break
                found_any = True
                skeletons_tried += 1
                state, executed, reason = _refine(skeleton, state, task, abstraction, domain, budgets, rng,
                                                  deadline, clock, steps)
                if reason is None:
                    last_reason = FailureReason.REPLAN_LIMIT
                    break
                last_reason = reason
                if executed > 0:
                    break
            if not found_any:
                log.debug("No skeleton found.", expansions=search.expansions, replans=replans)
                return finish(False, FailureReason.NO_SKELETON)
            if domain.goal_satisfied(task, state):
                return finish(True, None)
            replans += 1
    except _Timeout:
        return finish(False, FailureReason.TIMEOUT)
