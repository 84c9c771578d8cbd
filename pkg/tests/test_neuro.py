import math

import numpy as np
import pytest

from src.config_models import TrainConfig
from src.core import EffectEntry, EffectVector, effect_vector_from_deltas, enumerate_groundings, ground_effect_vector
from src.domains import generate_demos
from src.neuro import (Mlp, TrainingError, build_batches, dataset_loss, dataset_loss_and_grad, demo_loss, ground,
                       js_bernoulli, score, split_demos, state_transition_loss, train_candidate, transition_loss)
from tests.helpers import oracle_candidates


def test_js_is_symmetric_and_bounded():
    p = np.array([0.1, 0.5, 0.9])
    q = np.array([0.8, 0.5, 0.2])
    assert np.allclose(js_bernoulli(p, q), js_bernoulli(q, p))
    assert js_bernoulli(np.array([0.3]), np.array([0.3]))[0] == pytest.approx(0.0)
    assert js_bernoulli(np.array([0.0]), np.array([1.0]))[0] == pytest.approx(math.log(2), abs=1e-5)


def test_unchanged_atom_at_half_costs_nothing():
    assert transition_loss([0.5], [0.5], np.array([0])) == pytest.approx(0.0)


def test_flipped_prediction_on_unchanged_atom_costs_ln2():
    assert transition_loss([0.0], [1.0], np.array([0]), eps=1e-9) == pytest.approx(math.log(2), abs=1e-6)


def test_changed_atom_at_half_costs_ln2():
    assert transition_loss([0.5], [0.5], np.array([1])) == pytest.approx(math.log(2))


def test_correct_add_is_nearly_free():
    assert transition_loss([0.0], [1.0], np.array([1])) < 1e-6
    assert transition_loss([1.0], [0.0], np.array([1])) > 10.0


def test_unchanged_and_changed_terms_add():
    loss = transition_loss([0.5, 0.5], [0.5, 0.5], np.array([0, -1]))
    assert loss == pytest.approx(math.log(2))


def test_gradient_matches_finite_differences(blocks_domain, blocks_demos):
    holding = oracle_candidates(blocks_domain, blocks_demos, {"holding"})[0]
    batches = build_batches(holding.predicate, holding.effect_vector, blocks_demos[:2])
    mlp = Mlp(batches[0].x_pre.shape[1], (6,), np.random.default_rng(3))
    _, grads = dataset_loss_and_grad(batches, mlp)
    rng = np.random.default_rng(4)
    h = 1e-6
    for param, grad in zip(mlp.parameters(), grads):
        for _ in range(3):
            idx = tuple(rng.integers(0, s) for s in param.shape)
            saved = param[idx]
            param[idx] = saved + h
            up = dataset_loss(batches, mlp)
            param[idx] = saved - h
            down = dataset_loss(batches, mlp)
            param[idx] = saved
            assert grad[idx] == pytest.approx((up - down) / (2 * h), rel=1e-3, abs=1e-6)


def test_ground_covers_every_grounding(blocks_domain, blocks_demos):
    holding = oracle_candidates(blocks_domain, blocks_demos, {"holding"})[0].predicate
    state = blocks_demos[0].task.init
    dim = sum(t.feature_dim for t in holding.arg_types)
    mlp = Mlp(dim, (4,), np.random.default_rng(0))
    probs = ground(state, holding, mlp)
    assert probs.shape == (len(enumerate_groundings(holding, state.objects)),)
    assert np.all((probs > 0) & (probs < 1))

    mlp.weights[-1][:] = 0.0
    mlp.biases[-1][:] = 0.3
    assert np.allclose(ground(state, holding, mlp), 1 / (1 + math.exp(-0.3)))
    assert ground(state, holding, mlp, objects=[]).shape == (0,)


def test_weights_serialize_deterministically():
    mlp = Mlp(5, (3,), np.random.default_rng(1))
    blob = mlp.to_bytes()
    assert blob == Mlp(5, (3,), np.random.default_rng(1)).to_bytes()
    restored = Mlp.from_bytes(blob)
    x = np.random.default_rng(2).normal(size=(4, 5))
    assert np.array_equal(restored.forward(x), mlp.forward(x))


def test_split_keeps_whole_trajectories(blocks_demos):
    train, val = split_demos(blocks_demos, 0.25, np.random.default_rng(0))
    assert len(val) == 2 and len(train) == 6
    assert {id(d) for d in train}.isdisjoint({id(d) for d in val})
    train, val = split_demos(blocks_demos[:1], 0.5, np.random.default_rng(0))
    assert len(train) == 1 and not val


def test_score_rescales_losses():
    assert score([0.1, 0.3, 0.2]) == pytest.approx([100.0, 0.0, 50.0])
    assert score([0.4, 0.4]) == [100.0, 100.0]
    assert score([]) == []
    assert score([0.1, float("nan")]) == pytest.approx([100.0, 0.0])
    assert score([0.0, 0.25, float("inf"), 0.5]) == pytest.approx([100.0, 50.0, 0.0, 0.0])
    assert score([float("nan"), float("inf")]) == [100.0, 100.0]
    wide = score([1e-300, 1e300, float("nan")])
    assert all(0.0 <= s <= 100.0 for s in wide) and wide[-1] == 0.0


def test_candidate_without_demos_cannot_train(satellites_domain):
    pred = satellites_domain.predicate_named("calibrated")
    ev = effect_vector_from_deltas(pred, satellites_domain.controllers, {})
    with pytest.raises(TrainingError):
        train_candidate(pred, ev, [], TrainConfig(epochs=1))


def test_state_level_losses_match_batched_ones(blocks_domain, blocks_demos):
    holding = oracle_candidates(blocks_domain, blocks_demos, {"holding"})[0]
    demos = blocks_demos[:2]
    batches = build_batches(holding.predicate, holding.effect_vector, demos)
    mlp = Mlp(batches[0].x_pre.shape[1], (6,), np.random.default_rng(5))
    assert demo_loss(demos, holding.effect_vector, mlp) == pytest.approx(dataset_loss(batches, mlp))

    tr = demos[0].transitions[0]
    t = ground_effect_vector(holding.effect_vector, tr.action, demos[0].task.objects)
    n = batches[0].x_pre.shape[0]
    probs = mlp.forward(np.vstack([batches[0].x_pre, batches[0].x_post]))
    expected = transition_loss(probs[:n], probs[n:], t)
    assert state_transition_loss(tr.pre, tr.post, t, holding.predicate, mlp) == pytest.approx(expected)


def _inverted_on(ev, controller):
    return EffectVector(ev.predicate, tuple(
        (name, EffectEntry(-e.delta, e.binding) if name == controller else e) for name, e in ev.entries))


@pytest.mark.slow
def test_true_effects_train_consistent_and_inverted_ones_do_not(blocks_domain):
    demos = generate_demos(blocks_domain, 20, seed=0)
    holding = oracle_candidates(blocks_domain, demos, {"holding"})[0]
    config = TrainConfig()
    good = train_candidate(holding.predicate, holding.effect_vector, demos, config)
    assert good.consistent
    assert len(good.train_curve) <= 100
    assert good.train_curve[-1] < good.train_curve[0]

    oracle = blocks_domain.oracle_classifiers["holding"]
    hits = total = 0
    for demo in generate_demos(blocks_domain, 5, seed=7):
        states = [demo.task.init] + [tr.post for tr in demo.transitions]
        atoms = enumerate_groundings(holding.predicate, demo.task.objects)
        for state in states:
            predicted = ground(state, holding.predicate, good.mlp) > 0.5
            truth = [oracle.holds(state, a.args) for a in atoms]
            hits += int(np.sum(predicted == np.array(truth)))
            total += len(atoms)
    assert hits / total >= 0.98

    # inverting every controller would only describe the negated predicate
    bad = train_candidate(holding.predicate, _inverted_on(holding.effect_vector, "Pick"), demos, config)
    assert not bad.consistent
    assert bad.val_loss >= 10 * good.val_loss
