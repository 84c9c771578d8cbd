# predinvent/src/domain_satellites.py
"""Satellites that calibrate, move into view of a target and take a reading.

Satellite features: x, y, theta, calibrated, instrument. Target features:
x, y, instrument, read. A reading succeeds only with a calibrated satellite
whose instrument matches the target's, close enough to see it.
"""
import math
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from .core import (ControllerSchema, GroundAtom, GroundedController, LiftedAtom, LiftedPredicate, ObjectInstance,
                   OracleClassifier, Operator, PredicateKind, State, Task, TypeSignature)
from .domains import DomainSpec, FeatureIngestSpec

SATELLITE = TypeSignature("satellite", 5)
TARGET = TypeSignature("target", 4)

SAT_X, SAT_Y, SAT_THETA, CALIBRATED, SAT_INSTRUMENT = range(5)
TGT_X, TGT_Y, TGT_INSTRUMENT, READ = range(4)

VIEW_RADIUS = 0.5
MOVE_TOLERANCE = 0.3
EXPOSURE_RANGE = (0.3, 0.7)
TARGET_SPACING = 3.0
PARKING_Y = 5.0

CALIBRATE = ControllerSchema("Calibrate", (SATELLITE,), omega_dim=0)
MOVE_TO = ControllerSchema("MoveTo", (SATELLITE, TARGET), omega_dim=2)
SHOOT = ControllerSchema("Shoot", (SATELLITE, TARGET), omega_dim=1)

READ_PRED = LiftedPredicate("read", (TARGET,), PredicateKind.GOAL)
COMPATIBLE = LiftedPredicate("compatible", (SATELLITE, TARGET), PredicateKind.STATIC)
CALIBRATED_PRED = LiftedPredicate("calibrated", (SATELLITE,), PredicateKind.BASIC_DYNAMIC)
SEES = LiftedPredicate("sees", (SATELLITE, TARGET), PredicateKind.BASIC_DYNAMIC)


def _sees(state: State, args: Tuple[ObjectInstance, ...]) -> bool:
    s, t = state[args[0]], state[args[1]]
    return math.hypot(s[SAT_X] - t[TGT_X], s[SAT_Y] - t[TGT_Y]) <= VIEW_RADIUS


def _compatible(state: State, args: Tuple[ObjectInstance, ...]) -> bool:
    return abs(state[args[0]][SAT_INSTRUMENT] - state[args[1]][TGT_INSTRUMENT]) < 0.5


def transition(state: State, action: GroundedController) -> Optional[State]:
    name, args, omega = action.schema.name, action.args, action.omega
    sat = args[0]
    s = state[sat].copy()
    if name == "Calibrate":
        if s[CALIBRATED] > 0.5:
            return None
        s[CALIBRATED] = 1.0
        return state.with_updates({sat: s})
    target = args[1]
    t = state[target].copy()
    if name == "MoveTo":
        if max(abs(omega[0]), abs(omega[1])) > MOVE_TOLERANCE:
            return None
        s[SAT_X], s[SAT_Y] = t[TGT_X] + omega[0], t[TGT_Y] + omega[1]
        s[SAT_THETA] = math.atan2(-omega[1], -omega[0]) if (omega[0] or omega[1]) else 0.0
        return state.with_updates({sat: s})
    if name == "Shoot":
        if s[CALIBRATED] < 0.5 or not _sees(state, args) or not _compatible(state, args):
            return None
        if not EXPOSURE_RANGE[0] <= omega[0] <= EXPOSURE_RANGE[1]:
            return None
        t[READ] = 1.0
        return state.with_updates({target: t})
    return None


def oracle_omega(state: State, schema: ControllerSchema, args, rng: np.random.Generator) -> Tuple[float, ...]:
    if schema.name == "MoveTo":
        return tuple(float(v) for v in rng.uniform(-0.2, 0.2, size=2))
    if schema.name == "Shoot":
        return (float(rng.uniform(0.4, 0.6)),)
    return ()


def _sample_task(rng: np.random.Generator, sat_instruments, target_instruments) -> Task:
    features = {}
    sats = [ObjectInstance(f"s{i + 1}", SATELLITE) for i in range(len(sat_instruments))]
    targets = [ObjectInstance(f"t{i + 1}", TARGET) for i in range(len(target_instruments))]
    for i, (sat, instrument) in enumerate(zip(sats, sat_instruments)):
        features[sat] = np.array([i * TARGET_SPACING + 1.5, PARKING_Y, 0.0, 0.0, float(instrument)])
    for i, (target, instrument) in enumerate(zip(targets, target_instruments)):
        features[target] = np.array([i * TARGET_SPACING, 0.0, float(instrument), 0.0])
    goal = frozenset(GroundAtom(READ_PRED, (t,)) for t in targets)
    return Task(tuple(features), State(features), goal)


def sample_train_task(rng: np.random.Generator) -> Task:
    return _sample_task(rng, rng.permutation(2), rng.permutation(2))


def sample_test_task(rng: np.random.Generator) -> Task:
    # Both instruments are always on board so every target has a compatible satellite
    sats = rng.permutation([0, 1, int(rng.integers(2))])
    return _sample_task(rng, sats, rng.integers(2, size=3))


def _atoms(*specs):
    return frozenset(LiftedAtom(pred, params) for pred, params in specs)


@lru_cache(maxsize=1)
def build_domain() -> DomainSpec:
    classifiers = {
        "read": OracleClassifier(lambda s, a: s[a[0]][READ] > 0.5),
        "compatible": OracleClassifier(_compatible),
        "calibrated": OracleClassifier(lambda s, a: s[a[0]][CALIBRATED] > 0.5),
        "sees": OracleClassifier(_sees),
    }
    operators = (
        Operator(CALIBRATE, frozenset(), _atoms((CALIBRATED_PRED, (0,))), frozenset()),
        Operator(MOVE_TO, frozenset(), _atoms((SEES, (0, 1))), frozenset()),
        Operator(SHOOT,
                 _atoms((CALIBRATED_PRED, (0,)), (SEES, (0, 1)), (COMPATIBLE, (0, 1))),
                 _atoms((READ_PRED, (1,))),
                 frozenset()),
    )
    return DomainSpec(
        name="satellites",
        types=(SATELLITE, TARGET),
        controllers=(CALIBRATE, MOVE_TO, SHOOT),
        static_predicates=(COMPATIBLE,),
        goal_predicates=(READ_PRED,),
        oracle_predicates=(CALIBRATED_PRED, SEES),
        oracle_classifiers=classifiers,
        oracle_operators=operators,
        transition=transition,
        train_sampler=sample_train_task,
        test_sampler=sample_test_task,
        oracle_omega=oracle_omega,
        ingest=FeatureIngestSpec({
            "satellite": ("x", "y", "theta", "calibrated", "instrument"),
            "target": ("x", "y", "instrument", "read"),
        }),
    )
