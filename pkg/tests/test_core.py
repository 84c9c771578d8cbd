import itertools

import numpy as np
import pytest

from src.core import (ConfigurationError, ConsistencyError, ControllerSchema, Demonstration, EffectEntry,
                      GroundAtom, GroundedController, LiftedPredicate, ObjectInstance, PredicateKind, Quantifier,
                      State, Task, Transition, TypeSignature, effect_vector_from_deltas, enumerate_groundings,
                      enumerate_arg_tuples, evaluate_derived, ground_effect_vector, make_derived, masks)

BLOCK = TypeSignature("block", 2)
ROBOT = TypeSignature("robot", 1)
ON = LiftedPredicate("on", (BLOCK, BLOCK), PredicateKind.BASIC_DYNAMIC)
HOLDING = LiftedPredicate("holding", (ROBOT, BLOCK), PredicateKind.BASIC_DYNAMIC)
MOVE = ControllerSchema("Move", (ROBOT, BLOCK, BLOCK))

R = ObjectInstance("r", ROBOT)
A, B, C = (ObjectInstance(n, BLOCK) for n in "abc")


def _state(**values):
    objects = {"r": R, "a": A, "b": B, "c": C}
    return State({objects[k]: v for k, v in values.items()})


def test_groundings_are_lexicographic_and_distinct():
    atoms = enumerate_groundings(ON, [C, A, B, R])
    assert [a.key[1] for a in atoms] == [("a", "b"), ("a", "c"), ("b", "a"), ("b", "c"), ("c", "a"), ("c", "b")]


def test_ground_atom_checks_types():
    with pytest.raises(ConfigurationError):
        GroundAtom(ON, (R, A))


def test_state_freezes_features():
    state = _state(r=[0.0], a=[1.0, 2.0])
    with pytest.raises(ValueError):
        state[A][0] = 5.0
    with pytest.raises(ConfigurationError):
        _state(a=[1.0])


def test_with_updates_rejects_unknown_objects():
    state = _state(r=[0.0], a=[1.0, 2.0])
    with pytest.raises(ConsistencyError):
        state.with_updates({B: np.zeros(2)})


def test_derived_names_and_signature():
    pred = make_derived(ON, Quantifier.FORALL, 0, negated=True)
    assert pred.name == "forall0-not-on"
    assert pred.arg_types == (BLOCK,)
    assert pred.kind == PredicateKind.DERIVED_DYNAMIC
    assert make_derived(ON, Quantifier.NONE, None, negated=True).name == "not-on"


def test_derived_form_rejects_bad_positions():
    with pytest.raises(ConfigurationError):
        make_derived(ON, Quantifier.EXISTS, 2, negated=False)
    with pytest.raises(ConfigurationError):
        make_derived(ON, Quantifier.NONE, None, negated=False)


def test_empty_quantifier_domain():
    form = make_derived(HOLDING, Quantifier.FORALL, 0, negated=True).derivation
    assert evaluate_derived(form, {}, (A,), [A, B]) is True
    exists = make_derived(HOLDING, Quantifier.EXISTS, 0, negated=False).derivation
    assert evaluate_derived(exists, {}, (A,), [A, B]) is False


def test_forall_not_over_truth_table():
    form = make_derived(ON, Quantifier.FORALL, 0, negated=True).derivation
    truth = {atom: atom.key == ("on", ("a", "c")) for atom in enumerate_groundings(ON, [A, B, C])}
    # nothing is on b; a is on c
    assert evaluate_derived(form, truth, (B,), [A, B, C]) is True
    assert evaluate_derived(form, truth, (C,), [A, B, C]) is False


def test_quantifiers_are_dual_on_every_truth_table():
    blocks = [A, B, C]
    atoms = enumerate_groundings(ON, blocks)
    forms = {(q, pos, neg): make_derived(ON, q, pos, negated=neg).derivation
             for q in (Quantifier.FORALL, Quantifier.EXISTS) for pos in (0, 1) for neg in (False, True)}
    negation = make_derived(ON, Quantifier.NONE, None, negated=True).derivation
    for bits in itertools.product((False, True), repeat=len(atoms)):
        truth = dict(zip(atoms, bits))
        for atom in atoms:
            assert evaluate_derived(negation, truth, atom.args, blocks) is not truth[atom]
        for pos in (0, 1):
            for x in blocks:
                held = [truth[GroundAtom(ON, (y, x) if pos == 0 else (x, y))] for y in blocks if y != x]

                def value(q, neg):
                    return evaluate_derived(forms[q, pos, neg], truth, (x,), [R] + blocks)

                assert value(Quantifier.EXISTS, False) == any(held)
                assert value(Quantifier.FORALL, False) == all(held)
                assert value(Quantifier.FORALL, True) == (not value(Quantifier.EXISTS, False))
                assert value(Quantifier.EXISTS, True) == (not value(Quantifier.FORALL, False))


def test_missing_truth_value_raises():
    form = make_derived(ON, Quantifier.NONE, None, negated=True).derivation
    with pytest.raises(ConsistencyError):
        evaluate_derived(form, {}, (A, B), [A, B])


def test_effect_entry_constraints():
    with pytest.raises(ConfigurationError):
        EffectEntry(2)
    with pytest.raises(ConfigurationError):
        EffectEntry(0, ((0, 1),))


def test_effect_vector_validation():
    ev = effect_vector_from_deltas(ON, [MOVE], {"Move": (1, (1, 2))})
    assert ev.entry("Move").delta == 1
    with pytest.raises(ConfigurationError):
        effect_vector_from_deltas(ON, [MOVE], {"Move": (1, (0, 2))})  # robot param bound to a block arg
    with pytest.raises(ConfigurationError):
        effect_vector_from_deltas(ON, [MOVE], {"Move": (1, (1, 1))})
    with pytest.raises(ConfigurationError):
        effect_vector_from_deltas(ON, [MOVE], {"Fly": (1, (1, 2))})


def test_signature_is_name_free():
    first = effect_vector_from_deltas(ON, [MOVE], {"Move": (-1, (2, 1))})
    renamed = first.renamed(LiftedPredicate("under", ON.arg_types, PredicateKind.BASIC_DYNAMIC))
    assert first.signature() == renamed.signature()
    assert first.dedup_key() != renamed.dedup_key()


def test_ground_effect_vector_marks_bound_atom():
    ev = effect_vector_from_deltas(ON, [MOVE], {"Move": (1, (1, 2))})
    action = GroundedController(MOVE, (R, B, C))
    t = ground_effect_vector(ev, action, [R, A, B, C])
    atoms = enumerate_groundings(ON, [A, B, C])
    assert [atoms[i].key for i in np.flatnonzero(t)] == [("on", ("b", "c"))]
    unchanged, changed, idx = masks(t)
    assert unchanged.sum() == len(atoms) - 1 and changed.sum() == 1 and list(idx) == [3]


@pytest.mark.parametrize("predicate,bindings", [(ON, [(1, 2), (2, 1)]), (HOLDING, [(0, 1), (0, 2)])])
def test_an_action_changes_only_its_bound_atom(predicate, bindings):
    objects = [R, A, B, C]
    atoms = enumerate_groundings(predicate, objects)
    for delta in (-1, 1):
        for params in bindings:
            ev = effect_vector_from_deltas(predicate, [MOVE], {"Move": (delta, params)})
            for args in enumerate_arg_tuples(MOVE.param_types, objects):
                t = ground_effect_vector(ev, GroundedController(MOVE, args), objects)
                bound = tuple(args[p] for p in params)
                assert [atoms[i].args for i in np.flatnonzero(t)] == [bound]
                assert t[atoms.index(GroundAtom(predicate, bound))] == delta
    idle = effect_vector_from_deltas(predicate, [MOVE], {})
    assert not ground_effect_vector(idle, GroundedController(MOVE, (R, A, B)), objects).any()


def test_grounded_controller_requires_distinct_args():
    with pytest.raises(ConfigurationError):
        GroundedController(MOVE, (R, A, A))


def test_demonstration_chain_must_connect():
    s0 = _state(r=[0.0], a=[0.0, 0.0], b=[1.0, 0.0])
    s1 = s0.with_updates({A: np.array([1.0, 1.0])})
    s2 = s0.with_updates({B: np.array([5.0, 5.0])})
    task = Task((R, A, B), s0, frozenset())
    step = ControllerSchema("Nudge", (ROBOT, BLOCK))
    t1 = Transition(s0, GroundedController(step, (R, A)), s1)
    t2 = Transition(s2, GroundedController(step, (R, B)), s2)
    with pytest.raises(ConsistencyError):
        Demonstration(task, (t1, t2))
    demo = Demonstration(task, (t1,))
    assert demo.skeleton() == (("Nudge", ("r", "a")),)
    assert demo.final_state.same_as(s1)


def test_task_goal_must_use_goal_predicates():
    s0 = _state(r=[0.0], a=[0.0, 0.0], b=[1.0, 0.0])
    with pytest.raises(ConfigurationError):
        Task((R, A, B), s0, frozenset({GroundAtom(ON, (A, B))}))
