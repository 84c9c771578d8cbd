import json
import os

import numpy as np
import pytest

from src.artifacts import (ABSTRACTION_NAME, ArtifactError, DEMOS_NAME, MANIFEST_NAME, POOL_NAME, atomic_write,
                           config_hash, manifest_timing, read_abstraction, read_demos, read_json, read_manifest,
                           read_pool, staged_output, write_abstraction, write_demos, write_manifest, write_pool)
from src.config_models import RunConfig, TimingBreakdown
from src.core import enumerate_groundings
from src.neuro import Mlp, MlpClassifier
from src.plan import abstract_state
from src.selection import Candidate, PredicateSelector
from tests.helpers import oracle_candidates


def _learned(domain, demos, name, seed=0):
    """An oracle candidate whose classifier is swapped for an untrained MLP."""
    cand = oracle_candidates(domain, demos, {name})[0]
    dim = sum(t.feature_dim for t in cand.predicate.arg_types)
    return Candidate(cand.predicate, MlpClassifier(Mlp(dim, (4,), np.random.default_rng(seed))), cand.effect_vector)


def test_demos_round_trip(tmp_path, satellites_domain, satellites_demos):
    write_demos(str(tmp_path / DEMOS_NAME), satellites_demos, satellites_domain)
    loaded = read_demos(str(tmp_path), satellites_domain)
    assert [d.skeleton() for d in loaded] == [d.skeleton() for d in satellites_demos]
    for a, b in zip(loaded, satellites_demos):
        assert a.final_state.same_as(b.final_state)
        assert a.task.goal == b.task.goal


def test_demos_from_another_domain_are_rejected(tmp_path, blocks_domain, satellites_domain, satellites_demos):
    write_demos(str(tmp_path / DEMOS_NAME), satellites_demos, satellites_domain)
    with pytest.raises(ArtifactError):
        read_demos(str(tmp_path), blocks_domain)


def test_malformed_demo_files(tmp_path, blocks_domain, blocks_demos):
    path = tmp_path / DEMOS_NAME
    with pytest.raises(ArtifactError):
        read_demos(str(path), blocks_domain)
    path.write_text("\n", encoding="utf-8")
    with pytest.raises(ArtifactError):
        read_demos(str(path), blocks_domain)
    path.write_text("{not json\n", encoding="utf-8")
    with pytest.raises(ArtifactError):
        read_demos(str(path), blocks_domain)

    write_demos(str(path), blocks_demos[:1], blocks_domain)
    record = json.loads(path.read_text(encoding="utf-8"))
    record["schema_version"] = 2
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(ArtifactError):
        read_demos(str(path), blocks_domain)

    record["schema_version"] = 1
    record["transitions"][0]["args"][1] = "ghost"
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(ArtifactError):
        read_demos(str(path), blocks_domain)


def test_pool_round_trip(tmp_path, blocks_domain, blocks_demos):
    pool = [_learned(blocks_domain, blocks_demos, "holding"), _learned(blocks_domain, blocks_demos, "clear", 1)]
    extra = [{"val_loss": 0.001, "round": 0}, {"val_loss": 0.002, "round": 1}]
    write_pool(str(tmp_path), blocks_domain, pool, [{"round": 0}], [{"call": 0, "kind": "completion"}], 5, extra)
    assert sorted(os.listdir(tmp_path / "weights")) == ["clear.npz", "holding.npz"]

    loaded, fits = read_pool(str(tmp_path), blocks_domain)
    assert fits == 5
    assert [c.name for c in loaded] == ["holding", "clear"]
    state = blocks_demos[0].task.init
    for before, after in zip(pool, loaded):
        assert after.effect_vector.signature() == before.effect_vector.signature()
        atoms = enumerate_groundings(before.predicate, state.objects)
        assert np.array_equal(after.classifier.probabilities(state, atoms),
                              before.classifier.probabilities(state, atoms))
    record = read_json(str(tmp_path / POOL_NAME))["candidates"][0]
    assert record["val_loss"] == 0.001 and record["classifier"] == {"type": "mlp", "weights": "weights/holding.npz"}


def test_pool_with_missing_weights(tmp_path, blocks_domain, blocks_demos):
    write_pool(str(tmp_path), blocks_domain, [_learned(blocks_domain, blocks_demos, "holding")], [], [], 1)
    os.remove(tmp_path / "weights" / "holding.npz")
    with pytest.raises(ArtifactError):
        read_pool(str(tmp_path), blocks_domain)


def test_abstraction_round_trip(tmp_path, blocks_domain, blocks_demos):
    selector = PredicateSelector(blocks_domain, blocks_demos)
    chosen = oracle_candidates(blocks_domain, blocks_demos, {"handempty", "ontable"})
    holding = _learned(blocks_domain, blocks_demos, "holding")
    clear = oracle_candidates(blocks_domain, blocks_demos, {"clear"})[0]
    not_clear = next(c for c in selector.expand(clear) if c.name == "not-clear")
    members = chosen + [holding, clear, not_clear]
    abstraction = selector.abstraction(members)
    write_abstraction(str(tmp_path), blocks_domain, abstraction, selector.effect_vectors(members))

    loaded = read_abstraction(str(tmp_path), blocks_domain)
    assert loaded.predicates == abstraction.predicates
    assert set(loaded.operators) == set(abstraction.operators)
    assert {k: s.to_record() for k, s in loaded.samplers.items()} == \
        {k: s.to_record() for k, s in abstraction.samplers.items()}
    for demo in blocks_demos[:3]:
        for state in demo.states():
            assert (abstract_state(state, demo.task.objects, loaded)
                    == abstract_state(state, demo.task.objects, abstraction))

    record = read_json(str(tmp_path / ABSTRACTION_NAME))
    kinds = {p["name"]: p["classifier"]["type"] for p in record["predicates"] if "classifier" in p}
    assert kinds == {"on": "oracle", "handempty": "oracle", "ontable": "oracle", "holding": "mlp", "clear": "oracle"}
    assert "derivation" in next(p for p in record["predicates"] if p["name"] == "not-clear")


def test_abstraction_for_another_domain_is_rejected(tmp_path, blocks_domain, blocks_demos, satellites_domain):
    selector = PredicateSelector(blocks_domain, blocks_demos)
    write_abstraction(str(tmp_path), blocks_domain, selector.abstraction([]), selector.effect_vectors([]))
    with pytest.raises(ArtifactError):
        read_abstraction(str(tmp_path), satellites_domain)


def test_tampered_derivation_is_rejected(tmp_path, blocks_domain, blocks_demos):
    selector = PredicateSelector(blocks_domain, blocks_demos)
    clear = oracle_candidates(blocks_domain, blocks_demos, {"clear"})[0]
    members = [clear, next(c for c in selector.expand(clear) if c.name == "not-clear")]
    write_abstraction(str(tmp_path), blocks_domain, selector.abstraction(members), selector.effect_vectors(members))
    path = tmp_path / ABSTRACTION_NAME
    data = json.loads(path.read_text(encoding="utf-8"))
    derived = next(p for p in data["predicates"] if p["name"] == "not-clear")
    derived["derivation"]["quantifier"] = "forall"
    derived["derivation"]["quantified_arg"] = 0
    path.write_text(json.dumps(data), encoding="utf-8")
    with pytest.raises(ArtifactError):
        read_abstraction(str(tmp_path), blocks_domain)


def test_staged_output_replaces_only_on_success(tmp_path):
    target = tmp_path / "out"
    target.mkdir()
    (target / "old.txt").write_text("old", encoding="utf-8")
    with pytest.raises(RuntimeError):
        with staged_output(str(target)) as scratch:
            atomic_write(os.path.join(scratch, "new.txt"), "new")
            raise RuntimeError("stage failed")
    assert os.listdir(target) == ["old.txt"]
    assert os.listdir(tmp_path) == ["out"]

    with staged_output(str(target)) as scratch:
        atomic_write(os.path.join(scratch, "new.bin"), b"\x00\x01")
    assert os.listdir(target) == ["new.bin"]
    assert (target / "new.bin").read_bytes() == b"\x00\x01"


def test_manifest_records_inputs_and_timing(tmp_path):
    inputs = tmp_path / "inputs"
    inputs.mkdir()
    write_manifest(str(inputs), "gen-demos")
    out = tmp_path / "out"
    timing = TimingBreakdown(tau_predinv=1.0, tau_predsel=2.0, tau_skill=0.5)
    write_manifest(str(out), "select", RunConfig(), {"demos": str(inputs)}, timing, {"selected": ["holding"]})

    manifest = read_manifest(str(out))
    assert manifest["schema_version"] == 1 and manifest["command"] == "select"
    assert manifest["config_hash"] == config_hash(RunConfig())
    assert set(manifest["inputs"]) == {"demos"} and len(manifest["inputs"]["demos"]) == 64
    assert manifest["selected"] == ["holding"]
    assert manifest_timing(str(out)).tau_total == pytest.approx(3.5)
    assert manifest_timing(str(inputs)) == TimingBreakdown()
    assert sorted(os.listdir(out)) == [MANIFEST_NAME]


def test_missing_inputs_and_versions_are_artifact_errors(tmp_path):
    with pytest.raises(ArtifactError):
        write_manifest(str(tmp_path), "eval", inputs={"abstraction": str(tmp_path / "nowhere")})
    (tmp_path / "future.json").write_text('{"schema_version": 99}', encoding="utf-8")
    with pytest.raises(ArtifactError):
        read_json(str(tmp_path / "future.json"))


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash(RunConfig(seed=1)) != config_hash(RunConfig(seed=2))
