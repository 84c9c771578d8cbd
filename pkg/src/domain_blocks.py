# predinvent/src/domain_blocks.py
"""Blocks world with a single gripper.

Robot features: x, y, z, gripper_open. Block features: x, y, z, held, clear.
Blocks sit on table slots at x = 0, 2, 4, ... with z = 0; a held block
travels at the gripper height and keeps its clear flag, so that each
controller changes clear for at most one block.
"""
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from .core import (ControllerSchema, GroundAtom, GroundedController, LiftedAtom, LiftedPredicate, ObjectInstance,
                   OracleClassifier, Operator, PredicateKind, State, Task, TypeSignature)
from .domains import DomainSpec, FeatureIngestSpec

ROBOT = TypeSignature("robot", 4)
BLOCK = TypeSignature("block", 5)

HOLD_Z = 4.0
BLOCK_HEIGHT = 1.0
SLOT_SPACING = 2.0
ROBOT_HOME = (0.0, -3.0, HOLD_Z)
GRASP_TOLERANCE = 0.15
PLACE_TOLERANCE = 0.15
ORACLE_OFFSET = 0.1

PICK = ControllerSchema("Pick", (ROBOT, BLOCK), omega_dim=2)
STACK = ControllerSchema("Stack", (ROBOT, BLOCK, BLOCK), omega_dim=2)
PUT_ON_TABLE = ControllerSchema("PutOnTable", (ROBOT, BLOCK), omega_dim=0)

ON = LiftedPredicate("on", (BLOCK, BLOCK), PredicateKind.GOAL)
HOLDING = LiftedPredicate("holding", (ROBOT, BLOCK), PredicateKind.BASIC_DYNAMIC)
HAND_EMPTY = LiftedPredicate("handempty", (ROBOT,), PredicateKind.BASIC_DYNAMIC)
CLEAR = LiftedPredicate("clear", (BLOCK,), PredicateKind.BASIC_DYNAMIC)
ON_TABLE = LiftedPredicate("ontable", (BLOCK,), PredicateKind.BASIC_DYNAMIC)

# Block feature columns
X, Y, Z, HELD, CLEAR_FLAG = range(5)
GRIPPER_OPEN = 3


def _is_on(state: State, args: Tuple[ObjectInstance, ...]) -> bool:
    top, bottom = (state[o] for o in args)
    if top[HELD] > 0.5 or bottom[HELD] > 0.5:
        return False
    return (abs(top[X] - bottom[X]) < 0.5 and abs(top[Y] - bottom[Y]) < 0.5
            and abs(top[Z] - bottom[Z] - BLOCK_HEIGHT) < 1e-3)


def _blocks(state: State):
    return [o for o in state.objects if o.type == BLOCK]


def _block_below(state: State, block: ObjectInstance) -> Optional[ObjectInstance]:
    for other in _blocks(state):
        if other != block and _is_on(state, (block, other)):
            return other
    return None


def _free_slot(state: State) -> float:
    taken = [state[b][X] for b in _blocks(state) if state[b][HELD] < 0.5 and state[b][Z] < 0.5]
    slot = 0
    while any(abs(x - slot * SLOT_SPACING) < 0.5 for x in taken):
        slot += 1
    return slot * SLOT_SPACING


def transition(state: State, action: GroundedController) -> Optional[State]:
    name, args, omega = action.schema.name, action.args, np.asarray(action.omega)
    robot = args[0]
    r = state[robot].copy()
    if name == "Pick":
        block = args[1]
        b = state[block].copy()
        if r[GRIPPER_OPEN] < 0.5 or b[HELD] > 0.5 or b[CLEAR_FLAG] < 0.5:
            return None
        if np.max(np.abs(omega)) > GRASP_TOLERANCE:
            return None
        updates = {}
        below = _block_below(state, block)
        if below is not None:
            under = state[below].copy()
            under[CLEAR_FLAG] = 1.0
            updates[below] = under
        r[:3] = (b[X] + omega[0], b[Y] + omega[1], HOLD_Z)
        r[GRIPPER_OPEN] = 0.0
        b[:3] = (r[0], r[1], HOLD_Z)
        b[HELD] = 1.0
        updates.update({robot: r, block: b})
        return state.with_updates(updates)
    if name == "Stack":
        top, bottom = args[1], args[2]
        t, u = state[top].copy(), state[bottom].copy()
        if t[HELD] < 0.5 or r[GRIPPER_OPEN] > 0.5 or u[HELD] > 0.5 or u[CLEAR_FLAG] < 0.5:
            return None
        if np.max(np.abs(omega)) > PLACE_TOLERANCE:
            return None
        t[:3] = (u[X] + omega[0], u[Y] + omega[1], u[Z] + BLOCK_HEIGHT)
        t[HELD] = 0.0
        u[CLEAR_FLAG] = 0.0
        r[:2] = t[:2]
        r[GRIPPER_OPEN] = 1.0
        return state.with_updates({robot: r, top: t, bottom: u})
    if name == "PutOnTable":
        block = args[1]
        b = state[block].copy()
        if b[HELD] < 0.5 or r[GRIPPER_OPEN] > 0.5:
            return None
        b[:3] = (_free_slot(state), 0.0, 0.0)
        b[HELD] = 0.0
        r[:2] = b[:2]
        r[GRIPPER_OPEN] = 1.0
        return state.with_updates({robot: r, block: b})
    return None


def oracle_omega(state: State, schema: ControllerSchema, args, rng: np.random.Generator) -> Tuple[float, ...]:
    if schema.omega_dim == 0:
        return ()
    return tuple(float(v) for v in rng.uniform(-ORACLE_OFFSET, ORACLE_OFFSET, size=schema.omega_dim))


def _sample_task(rng: np.random.Generator, num_blocks: int, num_towers: int) -> Task:
    robot = ObjectInstance("robot", ROBOT)
    blocks = [ObjectInstance(f"b{i + 1}", BLOCK) for i in range(num_blocks)]
    slots = rng.permutation(num_blocks)
    features = {robot: np.array([*ROBOT_HOME, 1.0])}
    for block, slot in zip(blocks, slots):
        features[block] = np.array([slot * SLOT_SPACING, 0.0, 0.0, 0.0, 1.0])
    order = rng.permutation(num_blocks)
    goal = frozenset(GroundAtom(ON, (blocks[order[2 * k]], blocks[order[2 * k + 1]])) for k in range(num_towers))
    return Task(tuple(features), State(features), goal)


def sample_train_task(rng: np.random.Generator) -> Task:
    return _sample_task(rng, int(rng.integers(4, 6)), 2)


def sample_test_task(rng: np.random.Generator) -> Task:
    return _sample_task(rng, int(rng.integers(6, 8)), 3)


def _atoms(*specs):
    return frozenset(LiftedAtom(pred, params) for pred, params in specs)


@lru_cache(maxsize=1)
def build_domain() -> DomainSpec:
    classifiers = {
        "on": OracleClassifier(_is_on),
        "holding": OracleClassifier(lambda s, a: s[a[1]][HELD] > 0.5),
        "handempty": OracleClassifier(lambda s, a: s[a[0]][GRIPPER_OPEN] > 0.5),
        "clear": OracleClassifier(lambda s, a: s[a[0]][CLEAR_FLAG] > 0.5),
        "ontable": OracleClassifier(lambda s, a: s[a[0]][HELD] < 0.5 and s[a[0]][Z] < 0.5),
    }
    operators = (
        Operator(PICK,
                 _atoms((HAND_EMPTY, (0,)), (CLEAR, (1,)), (ON_TABLE, (1,))),
                 _atoms((HOLDING, (0, 1))),
                 _atoms((HAND_EMPTY, (0,)), (ON_TABLE, (1,)))),
        Operator(STACK,
                 _atoms((HOLDING, (0, 1)), (CLEAR, (2,))),
                 _atoms((HAND_EMPTY, (0,)), (ON, (1, 2))),
                 _atoms((HOLDING, (0, 1)), (CLEAR, (2,)))),
        Operator(PUT_ON_TABLE,
                 _atoms((HOLDING, (0, 1))),
                 _atoms((HAND_EMPTY, (0,)), (ON_TABLE, (1,))),
                 _atoms((HOLDING, (0, 1)))),
    )
    return DomainSpec(
        name="blocks",
        types=(ROBOT, BLOCK),
        controllers=(PICK, STACK, PUT_ON_TABLE),
        static_predicates=(),
        goal_predicates=(ON,),
        oracle_predicates=(HOLDING, HAND_EMPTY, CLEAR, ON_TABLE),
        oracle_classifiers=classifiers,
        oracle_operators=operators,
        transition=transition,
        train_sampler=sample_train_task,
        test_sampler=sample_test_task,
        oracle_omega=oracle_omega,
        ingest=FeatureIngestSpec({
            "robot": ("x", "y", "z", "gripper_open"),
            "block": ("x", "y", "z", "held", "clear"),
        }),
    )
