# predinvent/src/domain_tableclean.py
"""Clear the toys off a table into a box, then wipe it.

The box shuttles between a near side, where the wiper stored in it can be
reached, and a far side, which is the drop zone for toys and the only
position that leaves the table free for wiping. Wiping needs every toy off
the table, which no single basic predicate can express.

Features (all types start with x, y, theta):
robot: gripper_empty; table: dirty; box: far; wiper: held; toy: held, in_box.
"""
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from .core import (ControllerSchema, GroundAtom, GroundedController, LiftedAtom, LiftedPredicate, ObjectInstance,
                   OracleClassifier, Operator, PredicateKind, Quantifier, State, Task, TypeSignature, make_derived)
from .domains import DomainSpec, FeatureIngestSpec

ROBOT = TypeSignature("robot", 4)
TABLE = TypeSignature("table", 4)
BOX = TypeSignature("box", 4)
WIPER = TypeSignature("wiper", 4)
TOY = TypeSignature("toy", 5)

PX, PY, THETA = 0, 1, 2
FLAG = 3            # gripper_empty / dirty / far / held, by type
TOY_HELD, TOY_IN_BOX = 3, 4

TABLE_POSE = (0.0, 1.5)
TABLE_HALF_EXTENT = (1.2, 0.7)
BOX_X = 3.0
NEAR_Y, FAR_Y = 0.0, 3.0
GRASP_TOLERANCE = 0.15
DROP_TOLERANCE = 0.2
ORACLE_OFFSET = 0.1

PICK_TOY = ControllerSchema("PickToy", (ROBOT, TOY, TABLE), omega_dim=2)
PLACE_TOY = ControllerSchema("PlaceToyInBox", (ROBOT, TOY, BOX), omega_dim=2)
PICK_WIPER = ControllerSchema("PickWiper", (ROBOT, WIPER, BOX))
PLACE_WIPER = ControllerSchema("PlaceWiperInBox", (ROBOT, WIPER, BOX))
PUSH_BOX = ControllerSchema("PushBox", (ROBOT, BOX))
PULL_BOX = ControllerSchema("PullBox", (ROBOT, BOX))
WIPE_TABLE = ControllerSchema("WipeTable", (ROBOT, WIPER, TABLE, BOX))

IN_BOX = LiftedPredicate("inbox", (TOY, BOX), PredicateKind.GOAL)
CLEAN = LiftedPredicate("clean", (TABLE,), PredicateKind.GOAL)
HAND_EMPTY = LiftedPredicate("handempty", (ROBOT,), PredicateKind.BASIC_DYNAMIC)
HOLDING_TOY = LiftedPredicate("holding_toy", (ROBOT, TOY), PredicateKind.BASIC_DYNAMIC)
HOLDING_WIPER = LiftedPredicate("holding_wiper", (ROBOT, WIPER), PredicateKind.BASIC_DYNAMIC)
TOY_ON_TABLE = LiftedPredicate("toy_on_table", (TOY, TABLE), PredicateKind.BASIC_DYNAMIC)
WIPER_IN_BOX = LiftedPredicate("wiper_in_box", (WIPER, BOX), PredicateKind.BASIC_DYNAMIC)
BOX_NEAR = LiftedPredicate("box_near", (BOX,), PredicateKind.BASIC_DYNAMIC)
BOX_FAR = LiftedPredicate("box_far", (BOX,), PredicateKind.BASIC_DYNAMIC)
NO_TOY_ON_TABLE = make_derived(TOY_ON_TABLE, Quantifier.FORALL, 0, negated=True)


def _on_table(state: State, args: Tuple[ObjectInstance, ...]) -> bool:
    toy, table = state[args[0]], state[args[1]]
    if toy[TOY_HELD] > 0.5 or toy[TOY_IN_BOX] > 0.5:
        return False
    return (abs(toy[PX] - table[PX]) <= TABLE_HALF_EXTENT[0]
            and abs(toy[PY] - table[PY]) <= TABLE_HALF_EXTENT[1])


def _wiper_in_box(state: State, args: Tuple[ObjectInstance, ...]) -> bool:
    wiper, box = state[args[0]], state[args[1]]
    return wiper[FLAG] < 0.5 and abs(wiper[PX] - box[PX]) < 0.3 and abs(wiper[PY] - box[PY]) < 0.3


def _of_type(state: State, type_sig: TypeSignature):
    return [o for o in state.objects if o.type == type_sig]


def _move_box(state: State, box: ObjectInstance, far: bool) -> State:
    """Moves the box and everything resting in it."""
    b = state[box].copy()
    dy = (FAR_Y if far else NEAR_Y) - b[PY]
    updates = {}
    for wiper in _of_type(state, WIPER):
        if _wiper_in_box(state, (wiper, box)):
            w = state[wiper].copy()
            w[PY] += dy
            updates[wiper] = w
    for toy in _of_type(state, TOY):
        if state[toy][TOY_IN_BOX] > 0.5:
            y = state[toy].copy()
            y[PY] += dy
            updates[toy] = y
    b[PY] += dy
    b[FLAG] = 1.0 if far else 0.0
    updates[box] = b
    return state.with_updates(updates)


def transition(state: State, action: GroundedController) -> Optional[State]:
    name, args, omega = action.schema.name, action.args, action.omega
    robot = args[0]
    r = state[robot].copy()
    hand_empty = r[FLAG] > 0.5
    if name == "PickToy":
        toy, table = args[1], args[2]
        if not hand_empty or not _on_table(state, (toy, table)):
            return None
        if max(abs(omega[0]), abs(omega[1])) > GRASP_TOLERANCE:
            return None
        y = state[toy].copy()
        r[PX], r[PY], r[FLAG] = y[PX] + omega[0], y[PY] + omega[1], 0.0
        y[PX], y[PY], y[TOY_HELD] = r[PX], r[PY], 1.0
        return state.with_updates({robot: r, toy: y})
    if name == "PlaceToyInBox":
        toy, box = args[1], args[2]
        y, b = state[toy].copy(), state[box]
        if y[TOY_HELD] < 0.5 or b[FLAG] < 0.5:
            return None
        if max(abs(omega[0]), abs(omega[1])) > DROP_TOLERANCE:
            return None
        y[PX], y[PY] = b[PX] + omega[0], b[PY] + omega[1]
        y[TOY_HELD], y[TOY_IN_BOX] = 0.0, 1.0
        r[PX], r[PY], r[FLAG] = b[PX], b[PY], 1.0
        return state.with_updates({robot: r, toy: y})
    if name == "PickWiper":
        wiper, box = args[1], args[2]
        if not hand_empty or not _wiper_in_box(state, (wiper, box)) or state[box][FLAG] > 0.5:
            return None
        w = state[wiper].copy()
        r[PX], r[PY], r[FLAG] = w[PX], w[PY], 0.0
        w[FLAG] = 1.0
        return state.with_updates({robot: r, wiper: w})
    if name == "PlaceWiperInBox":
        wiper, box = args[1], args[2]
        w, b = state[wiper].copy(), state[box]
        if w[FLAG] < 0.5 or b[FLAG] > 0.5:
            return None
        w[PX], w[PY], w[FLAG] = b[PX], b[PY], 0.0
        r[FLAG] = 1.0
        return state.with_updates({robot: r, wiper: w})
    if name == "PushBox":
        box = args[1]
        if state[box][FLAG] > 0.5:
            return None
        return _move_box(state, box, far=True)
    if name == "PullBox":
        box = args[1]
        if state[box][FLAG] < 0.5:
            return None
        return _move_box(state, box, far=False)
    if name == "WipeTable":
        wiper, table, box = args[1], args[2], args[3]
        w, t = state[wiper].copy(), state[table].copy()
        if w[FLAG] < 0.5 or state[box][FLAG] < 0.5:
            return None
        if any(_on_table(state, (toy, table)) for toy in _of_type(state, TOY)):
            return None
        t[FLAG] = 0.0
        # The wiper is left at the table edge afterwards
        w[PX], w[PY], w[FLAG] = t[PX] + TABLE_HALF_EXTENT[0] + 0.5, t[PY], 0.0
        r[FLAG] = 1.0
        return state.with_updates({robot: r, wiper: w, table: t})
    return None


def oracle_omega(state: State, schema: ControllerSchema, args, rng: np.random.Generator) -> Tuple[float, ...]:
    if schema.omega_dim == 0:
        return ()
    return tuple(float(v) for v in rng.uniform(-ORACLE_OFFSET, ORACLE_OFFSET, size=schema.omega_dim))


def _sample_task(rng: np.random.Generator, num_toys: int, vary_start: bool) -> Task:
    robot = ObjectInstance("robot", ROBOT)
    table = ObjectInstance("table", TABLE)
    box = ObjectInstance("box", BOX)
    wiper = ObjectInstance("wiper", WIPER)
    toys = [ObjectInstance(f"toy{i + 1}", TOY) for i in range(num_toys)]
    features = {
        robot: np.array([-2.0, 0.0, 0.0, 1.0]),
        table: np.array([*TABLE_POSE, 0.0, 1.0]),
        box: np.array([BOX_X, NEAR_Y, 0.0, 0.0]),
        wiper: np.array([BOX_X, NEAR_Y, 0.0, 0.0]),
    }
    # at least one toy always starts on the table with the hand empty
    boxed = [vary_start and rng.random() < 0.4 for _ in toys]
    if all(boxed):
        boxed[int(rng.integers(len(toys)))] = False
    for toy, in_box in zip(toys, boxed):
        if in_box:
            offset = rng.uniform(-0.1, 0.1, size=2)
            features[toy] = np.array([BOX_X + offset[0], NEAR_Y + offset[1], 0.0, 0.0, 1.0])
        else:
            pos = rng.uniform((-1.0, 1.0), (1.0, 2.0))
            features[toy] = np.array([pos[0], pos[1], 0.0, 0.0, 0.0])
    goal = frozenset([GroundAtom(CLEAN, (table,))] + [GroundAtom(IN_BOX, (toy, box)) for toy in toys])
    return Task(tuple(features), State(features), goal)


def sample_train_task(rng: np.random.Generator) -> Task:
    return _sample_task(rng, 2, vary_start=False)


def sample_test_task(rng: np.random.Generator) -> Task:
    return _sample_task(rng, 3, vary_start=True)


def _atoms(*specs):
    return frozenset(LiftedAtom(pred, params) for pred, params in specs)


@lru_cache(maxsize=1)
def build_domain() -> DomainSpec:
    classifiers = {
        "inbox": OracleClassifier(lambda s, a: s[a[0]][TOY_IN_BOX] > 0.5),
        "clean": OracleClassifier(lambda s, a: s[a[0]][FLAG] < 0.5),
        "handempty": OracleClassifier(lambda s, a: s[a[0]][FLAG] > 0.5),
        "holding_toy": OracleClassifier(lambda s, a: s[a[1]][TOY_HELD] > 0.5),
        "holding_wiper": OracleClassifier(lambda s, a: s[a[1]][FLAG] > 0.5),
        "toy_on_table": OracleClassifier(_on_table),
        "wiper_in_box": OracleClassifier(_wiper_in_box),
        "box_near": OracleClassifier(lambda s, a: s[a[0]][FLAG] < 0.5),
        "box_far": OracleClassifier(lambda s, a: s[a[0]][FLAG] > 0.5),
    }
    operators = (
        Operator(PICK_TOY,
                 _atoms((HAND_EMPTY, (0,)), (TOY_ON_TABLE, (1, 2))),
                 _atoms((HOLDING_TOY, (0, 1))),
                 _atoms((HAND_EMPTY, (0,)), (TOY_ON_TABLE, (1, 2)))),
        Operator(PLACE_TOY,
                 _atoms((HOLDING_TOY, (0, 1)), (BOX_FAR, (2,))),
                 _atoms((HAND_EMPTY, (0,)), (IN_BOX, (1, 2))),
                 _atoms((HOLDING_TOY, (0, 1)))),
        Operator(PICK_WIPER,
                 _atoms((HAND_EMPTY, (0,)), (WIPER_IN_BOX, (1, 2)), (BOX_NEAR, (2,))),
                 _atoms((HOLDING_WIPER, (0, 1))),
                 _atoms((HAND_EMPTY, (0,)), (WIPER_IN_BOX, (1, 2)))),
        Operator(PLACE_WIPER,
                 _atoms((HOLDING_WIPER, (0, 1)), (BOX_NEAR, (2,))),
                 _atoms((HAND_EMPTY, (0,)), (WIPER_IN_BOX, (1, 2))),
                 _atoms((HOLDING_WIPER, (0, 1)))),
        Operator(PUSH_BOX, _atoms((BOX_NEAR, (1,))), _atoms((BOX_FAR, (1,))), _atoms((BOX_NEAR, (1,)))),
        Operator(PULL_BOX, _atoms((BOX_FAR, (1,))), _atoms((BOX_NEAR, (1,))), _atoms((BOX_FAR, (1,)))),
        Operator(WIPE_TABLE,
                 _atoms((HOLDING_WIPER, (0, 1)), (BOX_FAR, (3,)), (NO_TOY_ON_TABLE, (2,))),
                 _atoms((CLEAN, (2,)), (HAND_EMPTY, (0,))),
                 _atoms((HOLDING_WIPER, (0, 1)))),
    )
    return DomainSpec(
        name="tableclean",
        types=(ROBOT, TABLE, BOX, WIPER, TOY),
        controllers=(PICK_TOY, PLACE_TOY, PICK_WIPER, PLACE_WIPER, PUSH_BOX, PULL_BOX, WIPE_TABLE),
        static_predicates=(),
        goal_predicates=(IN_BOX, CLEAN),
        oracle_predicates=(HAND_EMPTY, HOLDING_TOY, HOLDING_WIPER, TOY_ON_TABLE, WIPER_IN_BOX, BOX_NEAR, BOX_FAR,
                           NO_TOY_ON_TABLE),
        oracle_classifiers=classifiers,
        oracle_operators=operators,
        transition=transition,
        train_sampler=sample_train_task,
        test_sampler=sample_test_task,
        oracle_omega=oracle_omega,
        ingest=FeatureIngestSpec({
            "robot": ("x", "y", "theta", "gripper_empty"),
            "table": ("x", "y", "theta", "dirty"),
            "box": ("x", "y", "theta", "far"),
            "wiper": ("x", "y", "theta", "held"),
            "toy": ("x", "y", "theta", "held", "in_box"),
        }),
    )
