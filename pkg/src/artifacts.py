# predinvent/src/artifacts.py
"""On-disk artifacts: demonstrations, candidate pools, abstractions and manifests.

Every structured file is sorted-key JSON (or JSON lines) carrying a schema
version. Weight blobs are the only binary payloads. Outputs are staged in a
sibling directory and renamed into place once complete.
"""
import contextlib
import hashlib
import json
import os
import shutil
import tempfile
from importlib import metadata
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from pydantic import BaseModel

from . import __version__
from .config_models import TimingBreakdown
from .core import (ConfigurationError, ConsistencyError, ControllerSchema, Demonstration, DerivedForm, EffectVector,
                   GroundAtom, GroundedController, LiftedAtom, LiftedPredicate, ObjectInstance, Operator,
                   OracleClassifier, PredicateKind, Quantifier, State, Task, Transition, effect_vector_from_deltas,
                   make_derived)
from .domains import DomainSpec
from .logging_config import get_logger
from .neuro import Mlp, MlpClassifier
from .plan import Abstraction, GaussianSampler
from .selection import Candidate, DerivedClassifier

log = get_logger(__name__)

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
DEMOS_NAME = "demos.jsonl"
POOL_NAME = "pool.json"
HISTORY_NAME = "history.jsonl"
TRANSCRIPT_NAME = "transcript.jsonl"
ABSTRACTION_NAME = "abstraction.json"
STEPLOG_NAME = "steplog.jsonl"
PLAN_NAME = "plan.json"
REPORT_NAME = "report.json"
WEIGHTS_DIR = "weights"
TRACKED_PACKAGES = ("numpy", "pydantic", "structlog", "httpx")


class ArtifactError(ValueError):
    """An input artifact is missing, malformed, or from another domain or schema version."""


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def dump_lines(records: Sequence[Mapping]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def atomic_write(path: str, data) -> None:
    """Writes ``data`` (str or bytes) to a temporary file and renames it over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8"})) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.remove(tmp)
        raise


@contextlib.contextmanager
def staged_output(path: str) -> Iterator[str]:
    """Yields a scratch directory that replaces ``path`` only if the block finishes."""
    target = os.path.abspath(path)
    parent = os.path.dirname(target)
    os.makedirs(parent, exist_ok=True)
    scratch = tempfile.mkdtemp(dir=parent, prefix=f".{os.path.basename(target)}.partial-")
    try:
        yield scratch
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    if os.path.isdir(target):
        shutil.rmtree(target)
    elif os.path.exists(target):
        os.remove(target)
    os.replace(scratch, target)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def input_hash(path: str) -> str:
    """Hash of a file, or of a directory's manifest."""
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    if not os.path.isfile(path):
        raise ArtifactError(f"input not found: {path}")
    return sha256_file(path)


def config_hash(config) -> str:
    payload = config.model_dump(mode="json") if isinstance(config, BaseModel) else config
    return sha256_bytes(json.dumps(payload, sort_keys=True).encode("utf-8"))


def versions() -> Dict[str, str]:
    found = {"predinvent": __version__}
    for name in TRACKED_PACKAGES:
        try:
            found[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            found[name] = "unknown"
    return found


def write_manifest(out_dir: str, command: str, config=None, inputs: Optional[Mapping[str, str]] = None,
                   timing: Optional[TimingBreakdown] = None, extra: Optional[Mapping] = None) -> dict:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config_hash": config_hash(config) if config is not None else None,
        "inputs": {name: input_hash(path) for name, path in sorted((inputs or {}).items())},
        "versions": versions(),
        "timing": timing.model_dump() if timing is not None else None,
    }
    if extra:
        manifest.update(extra)
    atomic_write(os.path.join(out_dir, MANIFEST_NAME), dumps(manifest))
    return manifest


def read_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ArtifactError(f"missing artifact: {path}") from e
    except json.JSONDecodeError as e:
        raise ArtifactError(f"{path} is not valid JSON: {e}") from e
    version = data.get("schema_version") if isinstance(data, dict) else None
    if version != SCHEMA_VERSION:
        raise ArtifactError(f"{path}: unsupported schema version {version!r}")
    return data


def read_manifest(directory: str) -> dict:
    return read_json(os.path.join(directory, MANIFEST_NAME))


def manifest_timing(directory: str) -> TimingBreakdown:
    timing = read_manifest(directory).get("timing")
    return TimingBreakdown(**timing) if timing else TimingBreakdown()


def _check_domain(record: Mapping, domain: DomainSpec, path: str) -> None:
    if record.get("domain") != domain.name:
        raise ArtifactError(f"{path} belongs to domain {record.get('domain')!r}, not {domain.name!r}")


# Demonstrations

def _state_record(state: State) -> Dict[str, List[float]]:
    return {o.name: [float(v) for v in state[o]] for o in state.objects}


def _state_from(record: Mapping[str, Sequence[float]], objects: Mapping[str, ObjectInstance]) -> State:
    try:
        return State({objects[name]: values for name, values in record.items()})
    except KeyError as e:
        raise ArtifactError(f"state mentions unknown object {e}") from e


def demo_to_record(demo: Demonstration, domain: DomainSpec, index: int) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "domain": domain.name,
        "index": index,
        "objects": [{"name": o.name, "type": o.type.name} for o in demo.task.objects],
        "init": _state_record(demo.task.init),
        "goal": sorted([a.predicate.name, [o.name for o in a.args]] for a in demo.task.goal),
        "transitions": [{
            "controller": t.action.schema.name,
            "args": [o.name for o in t.action.args],
            "omega": [float(v) for v in t.action.omega],
            "post": _state_record(t.post),
        } for t in demo.transitions],
    }


def demo_from_record(record: Mapping, domain: DomainSpec) -> Demonstration:
    if record.get("schema_version") != SCHEMA_VERSION:
        raise ArtifactError(f"demo record has unsupported schema version {record.get('schema_version')!r}")
    _check_domain(record, domain, "demo record")
    try:
        objects = {o["name"]: ObjectInstance(o["name"], domain.type_named(o["type"])) for o in record["objects"]}
        init = _state_from(record["init"], objects)
        goal = frozenset(GroundAtom(domain.predicate_named(name), tuple(objects[a] for a in args))
                         for name, args in record["goal"])
        task = Task(tuple(objects.values()), init, goal)
        transitions, state = [], init
        for step in record["transitions"]:
            action = GroundedController(domain.controller_named(step["controller"]),
                                        tuple(objects[a] for a in step["args"]), tuple(step["omega"]))
            post = _state_from(step["post"], objects)
            transitions.append(Transition(state, action, post))
            state = post
        return Demonstration(task, tuple(transitions))
    except (KeyError, TypeError, ConfigurationError, ConsistencyError) as e:
        raise ArtifactError(f"malformed demo record: {e}") from e


def write_demos(path: str, demos: Sequence[Demonstration], domain: DomainSpec) -> None:
    atomic_write(path, dump_lines([demo_to_record(d, domain, i) for i, d in enumerate(demos)]))


def read_demos(path: str, domain: DomainSpec) -> List[Demonstration]:
    if os.path.isdir(path):
        path = os.path.join(path, DEMOS_NAME)
    demos = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ArtifactError(f"{path}:{lineno}: not valid JSON: {e}") from e
                demos.append(demo_from_record(record, domain))
    except FileNotFoundError as e:
        raise ArtifactError(f"missing demonstrations file: {path}") from e
    if not demos:
        raise ArtifactError(f"{path} holds no demonstrations")
    log.debug("Demonstrations loaded.", path=path, count=len(demos))
    return demos


# Predicates, effect vectors and classifiers

def _types(predicate: LiftedPredicate) -> List[str]:
    return [t.name for t in predicate.arg_types]


def form_record(form: DerivedForm) -> dict:
    return {
        "base": {"name": form.base.name, "arg_types": _types(form.base)},
        "quantifier": form.quantifier.value,
        "quantified_arg": form.quantified_arg,
        "negated": form.negated,
    }


def form_from_record(record: Mapping, domain: DomainSpec) -> Tuple[LiftedPredicate, Quantifier, Optional[int], bool]:
    base = LiftedPredicate(record["base"]["name"], tuple(domain.type_named(t) for t in record["base"]["arg_types"]),
                           PredicateKind.BASIC_DYNAMIC)
    return base, Quantifier(record["quantifier"]), record["quantified_arg"], bool(record["negated"])


def effects_record(ev: EffectVector) -> List[dict]:
    return [{"controller": name, "delta": e.delta, "params": [p for _, p in e.binding]}
            for name, e in ev.entries if e.delta != 0]


def effects_from_record(predicate: LiftedPredicate, records: Sequence[Mapping],
                        schemas: Sequence[ControllerSchema]) -> EffectVector:
    effects = {r["controller"]: (int(r["delta"]), tuple(r["params"])) for r in records}
    return effect_vector_from_deltas(predicate, schemas, effects)


class _WeightStore:
    def __init__(self, directory: str):
        self.directory = directory

    def save(self, name: str, mlp: Mlp) -> str:
        rel = f"{WEIGHTS_DIR}/{name}.npz"
        atomic_write(os.path.join(self.directory, rel), mlp.to_bytes())
        return rel

    def load(self, rel: str) -> Mlp:
        path = os.path.join(self.directory, rel)
        try:
            with open(path, "rb") as f:
                return Mlp.from_bytes(f.read())
        except FileNotFoundError as e:
            raise ArtifactError(f"missing weights: {path}") from e
        except (ValueError, KeyError, OSError) as e:
            raise ArtifactError(f"unreadable weights {path}: {e}") from e


def classifier_record(name: str, classifier, store: _WeightStore) -> dict:
    if isinstance(classifier, MlpClassifier):
        return {"type": "mlp", "weights": store.save(name, classifier.mlp)}
    if isinstance(classifier, DerivedClassifier):
        base = classifier.form.base.name
        return {"type": "derived", "form": form_record(classifier.form),
                "base": classifier_record(base, classifier.base, store)}
    if isinstance(classifier, OracleClassifier):
        return {"type": "oracle", "source": name}
    raise ArtifactError(f"cannot serialize classifier of type {type(classifier).__name__} for '{name}'")


def classifier_from_record(record: Mapping, domain: DomainSpec, store: _WeightStore):
    kind = record.get("type")
    if kind == "mlp":
        return MlpClassifier(store.load(record["weights"]))
    if kind == "oracle":
        classifier = domain.oracle_classifiers.get(record["source"])
        if classifier is None:
            raise ArtifactError(f"no oracle classifier named '{record['source']}' in {domain.name}")
        return classifier
    if kind == "derived":
        base, quantifier, arg, negated = form_from_record(record["form"], domain)
        return DerivedClassifier(DerivedForm(base, quantifier, arg, negated),
                                 classifier_from_record(record["base"], domain, store))
    raise ArtifactError(f"unknown classifier type {kind!r}")


# Candidate pools

def write_pool(out_dir: str, domain: DomainSpec, candidates: Sequence[Candidate], rounds: Sequence[Mapping],
               transcript: Sequence[Mapping], fits: int, extra: Optional[Sequence[Mapping]] = None) -> None:
    """``extra`` carries per-candidate bookkeeping (loss, score, round) in candidate order."""
    store = _WeightStore(out_dir)
    records = []
    for i, cand in enumerate(candidates):
        record = {
            "name": cand.name,
            "arg_types": _types(cand.predicate),
            "effects": effects_record(cand.effect_vector),
            "classifier": classifier_record(cand.name, cand.classifier, store),
        }
        if extra:
            record.update({k: v for k, v in extra[i].items() if k not in record})
        records.append(record)
    atomic_write(os.path.join(out_dir, POOL_NAME), dumps({
        "schema_version": SCHEMA_VERSION, "domain": domain.name, "fits": fits, "candidates": records}))
    atomic_write(os.path.join(out_dir, HISTORY_NAME), dump_lines(rounds))
    atomic_write(os.path.join(out_dir, TRANSCRIPT_NAME), dump_lines(transcript))


def read_pool(directory: str, domain: DomainSpec) -> Tuple[List[Candidate], int]:
    path = os.path.join(directory, POOL_NAME)
    data = read_json(path)
    _check_domain(data, domain, path)
    store = _WeightStore(directory)
    candidates = []
    try:
        for record in data["candidates"]:
            predicate = LiftedPredicate(record["name"], tuple(domain.type_named(t) for t in record["arg_types"]),
                                        PredicateKind.BASIC_DYNAMIC)
            ev = effects_from_record(predicate, record["effects"], domain.controllers)
            candidates.append(Candidate(predicate, classifier_from_record(record["classifier"], domain, store), ev))
    except (KeyError, TypeError, ConfigurationError) as e:
        raise ArtifactError(f"{path}: malformed candidate: {e}") from e
    return candidates, int(data.get("fits", 0))


# Abstractions

def _atoms_record(atoms) -> List[dict]:
    return sorted(({"predicate": a.predicate.name, "params": list(a.params)} for a in atoms),
                  key=lambda r: (r["predicate"], r["params"]))


def write_abstraction(out_dir: str, domain: DomainSpec, abstraction: Abstraction,
                      effect_vectors: Mapping[str, EffectVector]) -> None:
    store = _WeightStore(out_dir)
    known = {p.name for p in domain.known_predicates}
    predicates = []
    for pred in abstraction.predicates:
        record = {"name": pred.name, "kind": pred.kind.value, "arg_types": _types(pred)}
        if pred.kind == PredicateKind.DERIVED_DYNAMIC:
            record["derivation"] = form_record(pred.derivation)
        elif pred.name in known:
            record["classifier"] = {"type": "oracle", "source": pred.name}
        else:
            record["classifier"] = classifier_record(pred.name, abstraction.classifiers[pred.name], store)
        if pred.name in effect_vectors and pred.name not in known:
            record["effects"] = effects_record(effect_vectors[pred.name])
        predicates.append(record)
    operators = [{
        "controller": op.schema.name,
        "pre": _atoms_record(op.preconditions),
        "add": _atoms_record(op.add_effects),
        "delete": _atoms_record(op.delete_effects),
    } for op in abstraction.operators]
    samplers = [abstraction.samplers[name].to_record() for name in sorted(abstraction.samplers)]
    atomic_write(os.path.join(out_dir, ABSTRACTION_NAME), dumps({
        "schema_version": SCHEMA_VERSION, "domain": domain.name, "predicates": predicates,
        "operators": operators, "samplers": samplers}))


def read_abstraction(directory: str, domain: DomainSpec) -> Abstraction:
    path = os.path.join(directory, ABSTRACTION_NAME) if os.path.isdir(directory) else directory
    data = read_json(path)
    _check_domain(data, domain, path)
    store = _WeightStore(os.path.dirname(path))
    try:
        by_name: Dict[str, LiftedPredicate] = {}
        classifiers = {}
        for record in data["predicates"]:
            kind = PredicateKind(record["kind"])
            if kind == PredicateKind.DERIVED_DYNAMIC:
                base, quantifier, arg, negated = form_from_record(record["derivation"], domain)
                pred = make_derived(by_name.get(base.name, base), quantifier, arg, negated)
                if pred.name != record["name"]:
                    raise ArtifactError(f"derived predicate '{record['name']}' does not match its derivation")
            elif kind in (PredicateKind.STATIC, PredicateKind.GOAL):
                pred = domain.predicate_named(record["name"])
                classifiers[pred.name] = domain.oracle_classifiers[pred.name]
            else:
                pred = LiftedPredicate(record["name"], tuple(domain.type_named(t) for t in record["arg_types"]),
                                       kind)
                classifiers[pred.name] = classifier_from_record(record["classifier"], domain, store)
            by_name[pred.name] = pred

        def atoms(records):
            return frozenset(LiftedAtom(by_name[r["predicate"]], tuple(r["params"])) for r in records)

        operators = tuple(Operator(domain.controller_named(r["controller"]), atoms(r["pre"]), atoms(r["add"]),
                                   atoms(r["delete"])) for r in data["operators"])
        samplers = {r["schema"]: GaussianSampler.from_record(r) for r in data["samplers"]}
        return Abstraction(tuple(by_name.values()), classifiers, operators, samplers)
    except ArtifactError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ArtifactError(f"{path}: malformed abstraction: {e}") from e
