# predinvent/src/domains.py
"""Domain definitions shared by every environment, plus demonstration generation.

A domain bundles its types, controllers, known (static and goal)
predicates, a simulator transition and task samplers. The oracle fields
(hand-written predicates, classifiers and operators) exist to produce
demonstrations and reference abstractions; learning never reads them
except for the known predicates.
"""
import importlib
import json
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import (ConfigurationError, ConsistencyError, ControllerSchema, Demonstration, GroundedController,
                   LiftedPredicate, ObjectInstance, OracleClassifier, Operator, PredicateKind, State, Task,
                   Transition, TypeSignature)
from .logging_config import get_logger
from .plan import Abstraction, abstract_state, astar_skeleton

log = get_logger(__name__)

OmegaFn = Callable[[State, ControllerSchema, Tuple[ObjectInstance, ...], np.random.Generator], Tuple[float, ...]]

MAX_DEMO_ATTEMPTS = 20
ORACLE_SEARCH_BUDGET = 50_000
SPLIT_CODES = {"train": 0, "test": 1}


class DemoGenerationError(RuntimeError):
    """The oracle could not solve enough sampled tasks."""


@dataclass(frozen=True)
class FeatureIngestSpec:
    """Column names per object type; documents the feature layout and loads external states."""
    columns: Mapping[str, Tuple[str, ...]]

    def validate(self, types: Sequence[TypeSignature]) -> None:
        for t in types:
            cols = self.columns.get(t.name)
            if cols is None:
                raise ConfigurationError(f"ingest spec has no columns for type '{t.name}'")
            if len(cols) != t.feature_dim:
                raise ConfigurationError(
                    f"type '{t.name}' has feature_dim {t.feature_dim} but {len(cols)} columns")

    def to_record(self) -> Dict[str, List[str]]:
        return {name: list(cols) for name, cols in sorted(self.columns.items())}

    def read_states(self, lines: Iterable[str], types: Sequence[TypeSignature]) -> List[State]:
        """Parses JSON lines ``{"state": k, "object": name, "type": t, "features": [...]}``.

        Records are grouped by state index; every object of a state must
        provide a vector matching its type's column count.
        """
        by_name = {t.name: t for t in types}
        grouped: Dict[int, Dict[ObjectInstance, np.ndarray]] = {}
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                type_sig = by_name[record["type"]]
                obj = ObjectInstance(record["object"], type_sig)
                features = np.asarray(record["features"], dtype=np.float64)
                index = int(record["state"])
            except (ValueError, KeyError, TypeError) as e:
                raise ConfigurationError(f"line {lineno}: malformed feature record ({e})") from e
            if features.shape != (len(self.columns[type_sig.name]),):
                raise ConfigurationError(
                    f"line {lineno}: {obj.name} has {features.size} features, expected "
                    f"{len(self.columns[type_sig.name])}")
            grouped.setdefault(index, {})[obj] = features
        return [State(grouped[k]) for k in sorted(grouped)]


@dataclass(frozen=True)
class DomainSpec:
    name: str
    types: Tuple[TypeSignature, ...]
    controllers: Tuple[ControllerSchema, ...]
    static_predicates: Tuple[LiftedPredicate, ...]
    goal_predicates: Tuple[LiftedPredicate, ...]
    oracle_predicates: Tuple[LiftedPredicate, ...]
    oracle_classifiers: Mapping[str, OracleClassifier]
    oracle_operators: Tuple[Operator, ...]
    transition: Callable[[State, GroundedController], Optional[State]]
    train_sampler: Callable[[np.random.Generator], Task]
    test_sampler: Callable[[np.random.Generator], Task]
    oracle_omega: OmegaFn
    ingest: FeatureIngestSpec

    def __post_init__(self):
        self.ingest.validate(self.types)
        for pred in self.known_predicates:
            if pred.name not in self.oracle_classifiers:
                raise ConfigurationError(f"{self.name}: known predicate '{pred.name}' has no classifier")

    @property
    def known_predicates(self) -> Tuple[LiftedPredicate, ...]:
        return self.static_predicates + self.goal_predicates

    def type_named(self, name: str) -> TypeSignature:
        for t in self.types:
            if t.name == name:
                return t
        raise ConfigurationError(f"{self.name}: unknown type '{name}'")

    def controller_named(self, name: str) -> ControllerSchema:
        for c in self.controllers:
            if c.name.lower() == name.lower():
                return c
        raise ConfigurationError(f"{self.name}: unknown controller '{name}'")

    def predicate_named(self, name: str) -> LiftedPredicate:
        for p in self.known_predicates + self.oracle_predicates:
            if p.name == name:
                return p
        raise ConfigurationError(f"{self.name}: unknown predicate '{name}'")

    def known_classifiers(self) -> Dict[str, OracleClassifier]:
        return {p.name: self.oracle_classifiers[p.name] for p in self.known_predicates}

    def oracle_abstraction(self) -> Abstraction:
        preds = self.known_predicates + self.oracle_predicates
        classifiers = {p.name: self.oracle_classifiers[p.name]
                       for p in preds if p.kind != PredicateKind.DERIVED_DYNAMIC}
        return Abstraction(preds, classifiers, self.oracle_operators)

    def goal_satisfied(self, task: Task, state: State) -> bool:
        return all(self.oracle_classifiers[a.predicate.name].holds(state, a.args) for a in task.goal)

    def sample_task(self, split: str, task_seed: int) -> Task:
        if split not in SPLIT_CODES:
            raise ConfigurationError(f"unknown split '{split}'")
        rng = np.random.default_rng([task_seed, SPLIT_CODES[split]])
        sampler = self.train_sampler if split == "train" else self.test_sampler
        return sampler(rng)

    def oracle_policy(self, task: Task, rng: np.random.Generator) -> Optional[List[GroundedController]]:
        """Optimal controller sequence from the oracle abstraction, or None.

        The skeleton comes from the same A* used at planning time; omega is
        drawn per step from the domain's oracle parameter function.
        """
        abstraction = self.oracle_abstraction()
        atoms = abstract_state(task.init, task.objects, abstraction)
        search = astar_skeleton(atoms, task.goal, self.oracle_operators, task.objects, ORACLE_SEARCH_BUDGET,
                                abstraction.derived_predicates)
        skeleton = next(search, None)
        if skeleton is None:
            return None
        state, actions = task.init, []
        for gop in skeleton.steps:
            schema = gop.operator.schema
            action = GroundedController(schema, gop.args, self.oracle_omega(state, schema, gop.args, rng))
            state = self.transition(state, action)
            if state is None:
                return None
            actions.append(action)
        return actions


def rollout(domain: DomainSpec, task: Task, actions: Sequence[GroundedController]) -> Demonstration:
    state, transitions = task.init, []
    for action in actions:
        post = domain.transition(state, action)
        if post is None:
            raise ConsistencyError(f"{action} is infeasible during rollout")
        transitions.append(Transition(state, action, post))
        state = post
    return Demonstration(task, tuple(transitions))


def generate_demos(domain: DomainSpec, count: int, seed: int, split: str = "train") -> List[Demonstration]:
    """``count`` oracle demonstrations; demo i draws from the seed sequence (seed, i, attempt)."""
    demos = []
    sampler = domain.train_sampler if split == "train" else domain.test_sampler
    for i in range(count):
        for attempt in range(MAX_DEMO_ATTEMPTS):
            rng = np.random.default_rng([seed, i, attempt])
            task = sampler(rng)
            actions = domain.oracle_policy(task, rng)
            if actions is None:
                log.debug("Oracle failed on sampled task; resampling.", demo=i, attempt=attempt)
                continue
            demo = rollout(domain, task, actions)
            if not domain.goal_satisfied(task, demo.final_state):
                log.debug("Oracle plan missed the goal; resampling.", demo=i, attempt=attempt)
                continue
            demos.append(demo)
            break
        else:
            raise DemoGenerationError(
                f"{domain.name}: no successful oracle demonstration for demo {i} after {MAX_DEMO_ATTEMPTS} tries")
    log.info("Demonstrations generated.", domain=domain.name, count=len(demos),
             transitions=sum(len(d.transitions) for d in demos))
    return demos


_REGISTRY = {
    "blocks": "domain_blocks",
    "satellites": "domain_satellites",
    "tableclean": "domain_tableclean",
}


def available_domains() -> List[str]:
    return sorted(_REGISTRY)


def get_domain(name: str) -> DomainSpec:
    module_name = _REGISTRY.get(name)
    if module_name is None:
        raise ConfigurationError(f"unknown domain '{name}'; choose from {available_domains()}")
    module = importlib.import_module(f".{module_name}", package=__package__)
    return module.build_domain()
