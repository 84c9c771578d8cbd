import itertools
from collections import deque

import numpy as np
import pytest

from src.config_models import PlannerBudgets
from src.core import (ControllerSchema, Demonstration, GroundedController, ObjectInstance, State, Task, Transition,
                      TypeSignature)
from src.plan import (Abstraction, FailureReason, GaussianSampler, SkeletonSearch, abstract_state, bilevel_plan,
                      ground_operators, learn_samplers)


def _shortest_length(init, goal, operators, objects):
    """Plain breadth-first search over the same ground operators."""
    ground = ground_operators(operators, objects)
    frontier = deque([(init, 0)])
    seen = {init}
    while frontier:
        atoms, depth = frontier.popleft()
        if goal <= atoms:
            return depth
        for gop in ground:
            if gop.preconditions <= atoms:
                succ = (atoms - gop.delete_effects) | gop.add_effects
                if succ not in seen:
                    seen.add(succ)
                    frontier.append((succ, depth + 1))
    return None


@pytest.mark.parametrize("task_seed", [0, 1, 2])
def test_first_skeleton_is_shortest(blocks_domain, task_seed):
    abstraction = blocks_domain.oracle_abstraction()
    task = blocks_domain.sample_task("train", task_seed)
    init = abstract_state(task.init, task.objects, abstraction)
    search = SkeletonSearch(init, task.goal, abstraction.operators, task.objects, 10_000)
    skeleton = next(search)
    assert len(skeleton) == _shortest_length(init, task.goal, abstraction.operators, task.objects)
    assert skeleton.atoms[0] == init and task.goal <= skeleton.atoms[-1]


@pytest.mark.slow
def test_first_skeleton_matches_breadth_first_search_on_many_tasks(blocks_domain):
    abstraction = blocks_domain.oracle_abstraction()
    for task_seed in range(100):
        task = blocks_domain.sample_task("train", task_seed)
        init = abstract_state(task.init, task.objects, abstraction)
        skeleton = next(SkeletonSearch(init, task.goal, abstraction.operators, task.objects, 100_000))
        assert len(skeleton) == _shortest_length(init, task.goal, abstraction.operators, task.objects), task_seed


def test_search_yields_distinct_skeletons(blocks_domain):
    abstraction = blocks_domain.oracle_abstraction()
    task = blocks_domain.sample_task("train", 0)
    init = abstract_state(task.init, task.objects, abstraction)
    search = SkeletonSearch(init, task.goal, abstraction.operators, task.objects, 10_000)
    keys = [s.keys() for s in itertools.islice(search, 3)]
    assert len(set(keys)) == 3


def test_search_budget_counts_pops(blocks_domain):
    abstraction = blocks_domain.oracle_abstraction()
    task = blocks_domain.sample_task("train", 0)
    init = abstract_state(task.init, task.objects, abstraction)
    search = SkeletonSearch(init, task.goal, abstraction.operators, task.objects, 2)
    assert next(search, None) is None
    assert search.exhausted and search.expansions == 2


def test_samplers_fit_demonstrated_controllers(blocks_domain, blocks_demos):
    samplers = learn_samplers(blocks_demos, blocks_domain.controllers)
    assert set(samplers) == {"Pick", "Stack"}
    assert np.all(samplers["Pick"].variance > 0)
    restored = GaussianSampler.from_record(samplers["Pick"].to_record())
    task = blocks_demos[0].task
    args = blocks_demos[0].transitions[0].action.args
    assert np.allclose(restored.mean(task.init, args), samplers["Pick"].mean(task.init, args))


def test_sparse_controller_falls_back_to_mean(blocks_domain, blocks_demos):
    samplers = learn_samplers(blocks_demos[:1], blocks_domain.controllers)
    pick = samplers["Pick"]
    assert not pick.weights.any()
    omegas = [t.action.omega for t in blocks_demos[0].transitions if t.action.schema.name == "Pick"]
    assert np.allclose(pick.intercept, np.mean(omegas, axis=0))


def test_linear_sampler_recovers_demonstrated_offsets():
    robot, block = TypeSignature("robot", 2), TypeSignature("block", 2)
    push = ControllerSchema("Push", (robot, block), omega_dim=2)
    r, b = ObjectInstance("r", robot), ObjectInstance("b", block)
    weights = np.array([[0.5, 0.0], [0.0, -1.0], [2.0, 0.3], [-0.7, 1.5]])
    intercept = np.array([0.25, -0.4])
    rng = np.random.default_rng(0)
    demos = []
    for _ in range(60):
        state = State({r: rng.normal(size=2), b: rng.normal(size=2)})
        omega = state.vector((r, b)) @ weights + intercept + rng.normal(0.0, 0.01, size=2)
        step = Transition(state, GroundedController(push, (r, b), tuple(omega)), state)
        demos.append(Demonstration(Task((r, b), state, frozenset()), (step,)))
    sampler = learn_samplers(demos, [push])["Push"]
    assert np.allclose(sampler.weights, weights, atol=0.02)
    assert np.allclose(sampler.intercept, intercept, atol=0.02)
    assert np.all(sampler.variance < 1e-3)


def test_oracle_abstraction_solves_train_task(blocks_domain, blocks_demos):
    oracle = blocks_domain.oracle_abstraction()
    abstraction = Abstraction(oracle.predicates, oracle.classifiers, oracle.operators,
                              learn_samplers(blocks_demos, blocks_domain.controllers))
    task = blocks_domain.sample_task("train", 11)
    result = bilevel_plan(task, abstraction, blocks_domain, PlannerBudgets(), np.random.default_rng(0))
    assert result.success and result.reason is None
    assert result.plan_length == 2 * len(task.goal)
    assert blocks_domain.goal_satisfied(task, result.final_state)
    record = result.to_record()
    assert record["failure_reason"] is None
    assert [s["controller"] for s in record["steps"]][:2] == ["Pick", "Stack"]


def test_missing_operators_mean_no_skeleton(blocks_domain):
    oracle = blocks_domain.oracle_abstraction()
    abstraction = Abstraction(oracle.predicates, oracle.classifiers, ())
    task = blocks_domain.sample_task("train", 0)
    result = bilevel_plan(task, abstraction, blocks_domain, PlannerBudgets(), np.random.default_rng(0))
    assert not result.success and result.reason == FailureReason.NO_SKELETON


def test_bad_sampler_exhausts_attempts(blocks_domain):
    oracle = blocks_domain.oracle_abstraction()
    far = {name: GaussianSampler(name, np.zeros((9 if name == "Pick" else 14, 2)), np.full(2, 50.0), np.ones(2))
           for name in ("Pick", "Stack")}
    abstraction = Abstraction(oracle.predicates, oracle.classifiers, oracle.operators, far)
    task = blocks_domain.sample_task("train", 0)
    budgets = PlannerBudgets(samples_per_step=3, max_replans=0)
    result = bilevel_plan(task, abstraction, blocks_domain, budgets, np.random.default_rng(0))
    assert not result.success and result.reason == FailureReason.SAMPLER_EXHAUSTED
    assert result.steps == []
    assert result.skeletons_tried == budgets.max_skeletons


def test_timeout_is_reported(blocks_domain):
    ticks = itertools.count(step=100.0)
    task = blocks_domain.sample_task("train", 0)
    result = bilevel_plan(task, blocks_domain.oracle_abstraction(), blocks_domain, PlannerBudgets(timeout_s=1.0),
                          np.random.default_rng(0), clock=lambda: next(ticks))
    assert not result.success and result.reason == FailureReason.TIMEOUT
