# predinvent/src/cli.py
"""Command-line pipeline: gen-demos, invent, select, plan, eval, and run for all of them in sequence.

Exit codes: 0 on success, 1 for user errors (bad config, missing or
malformed inputs), 2 for anything unexpected. Every command stages its
output directory and writes a manifest before renaming it into place.
"""
import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

from .logging_config import get_logger, setup_logging

dotenv_path = os.path.join(os.path.dirname(__file__), "..", ".env")
if os.path.exists(dotenv_path):
    load_dotenv(dotenv_path=dotenv_path)
setup_logging(stream=sys.stderr)
log = get_logger(__name__)

from . import artifacts  # noqa: E402
from .config_models import (DerivedMode, MetricsReport, ProposerBackend, ProposerConfig, RunConfig,  # noqa: E402
                            TaskOutcome, TimingBreakdown)
from .core import ConfigurationError  # noqa: E402
from .domains import DomainSpec, available_domains, generate_demos, get_domain  # noqa: E402
from .plan import Abstraction, bilevel_plan  # noqa: E402
from .propose import build_pool  # noqa: E402
from .proposer_clients import build_proposer  # noqa: E402
from .selection import Candidate, PredicateSelector  # noqa: E402

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2

USER_ERRORS = (ConfigurationError, artifacts.ArtifactError, ValidationError, FileNotFoundError)


def load_config(path: Optional[str], domain: Optional[str] = None) -> RunConfig:
    """RunConfig from a JSON file, or defaults for ``domain`` when no file is given."""
    if path is None:
        return RunConfig(domain=domain) if domain else RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            config = RunConfig.model_validate_json(f.read())
    except FileNotFoundError as e:
        raise ConfigurationError(f"config file not found: {path}") from e
    if domain and domain != config.domain:
        raise ConfigurationError(f"--domain {domain} contradicts the config's domain {config.domain}")
    return config


def _demos_for(path: str, domain: DomainSpec):
    return artifacts.read_demos(path, domain)


def cmd_gen_demos(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.domain)
    num = args.num if args.num is not None else config.num_demos
    seed = args.seed if args.seed is not None else config.seed
    domain = get_domain(config.domain)
    demos = generate_demos(domain, num, seed, args.split)
    with artifacts.staged_output(args.out) as out:
        artifacts.write_demos(os.path.join(out, artifacts.DEMOS_NAME), demos, domain)
        artifacts.write_manifest(out, "gen-demos", config,
                                 extra={"domain": domain.name, "num": num, "seed": seed, "split": args.split,
                                        "columns": domain.ingest.to_record()})
    log.info("Demonstrations written.", out=args.out, count=len(demos))
    return EXIT_OK


def _proposer_config(config: RunConfig, args: argparse.Namespace) -> ProposerConfig:
    base = config.proposer.model_dump() if config.proposer is not None else {}
    if args.proposer:
        base["backend"] = args.proposer
    if args.replay:
        base["replay_file"] = args.replay
    if not base:
        raise ConfigurationError("no proposer configured; pass --proposer or set 'proposer' in the config")
    return ProposerConfig(**base)


def cmd_invent(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    domain = get_domain(config.domain)
    demos = _demos_for(args.demos, domain)
    proposer_config = _proposer_config(config, args)
    proposer = build_proposer(proposer_config, domain)

    started = time.perf_counter()
    result = build_pool(domain, demos, proposer, config.loop, config.train)
    tau_predinv = time.perf_counter() - started

    candidates = [Candidate(rec.predicate, rec.trained.classifier, rec.effect_vector) for rec in result.pool]
    extra = [{"round": rec.round, "val_loss": rec.val_loss, "score": rec.score} for rec in result.pool]
    history = result.history
    with artifacts.staged_output(args.out) as out:
        artifacts.write_pool(out, domain, candidates, [r.to_record() for r in history.rounds],
                             history.transcript, history.fits, extra)
        artifacts.write_manifest(out, "invent", config, inputs={"demos": args.demos},
                                 timing=TimingBreakdown(tau_predinv=tau_predinv),
                                 extra={"domain": domain.name, "proposer": proposer_config.backend.value,
                                        "fits": history.fits, "diagnostics": history.diagnostics,
                                        "config": config.model_dump(mode="json")})
    log.info("Candidate pool written.", out=args.out, pool=len(candidates), fits=history.fits,
             rounds=len(history.rounds))
    return EXIT_OK


def _pool_config(path: Optional[str], candidates: str) -> RunConfig:
    """The given config file, else the one invent recorded next to the pool."""
    if path is not None:
        return load_config(path)
    recorded = artifacts.read_manifest(candidates).get("config")
    if recorded is None:
        raise ConfigurationError(f"{candidates} records no config; pass --config")
    return RunConfig.model_validate(recorded)


def cmd_select(args: argparse.Namespace) -> int:
    config = _pool_config(args.config, args.candidates)
    if args.mode:
        config = config.model_copy(update={"selection": config.selection.model_copy(
            update={"derived_mode": DerivedMode(args.mode)})})
    domain = get_domain(config.domain)
    demos = _demos_for(args.demos, domain)
    pool, fits = artifacts.read_pool(args.candidates, domain)
    pool_timing = artifacts.manifest_timing(args.candidates)

    started = time.perf_counter()
    result = PredicateSelector(domain, demos, config.selection).hill_climb(pool)
    elapsed = time.perf_counter() - started
    timing = TimingBreakdown(tau_predinv=pool_timing.tau_predinv,
                             tau_predsel=max(elapsed - result.skill_seconds, 0.0),
                             tau_skill=result.skill_seconds)

    with artifacts.staged_output(args.out) as out:
        artifacts.write_abstraction(out, domain, result.abstraction, result.effect_vectors)
        artifacts.atomic_write(os.path.join(out, artifacts.STEPLOG_NAME),
                               artifacts.dump_lines([s.to_record() for s in result.steps]))
        artifacts.write_manifest(out, "select", config, inputs={"candidates": args.candidates, "demos": args.demos},
                                 timing=timing,
                                 extra={"domain": domain.name, "fits": fits,
                                        "derived_mode": config.selection.derived_mode.value,
                                        "selected": [c.name for c in result.selected],
                                        "j_star": result.j_star if math.isfinite(result.j_star) else "inf"})
    log.info("Abstraction written.", out=args.out, selected=[c.name for c in result.selected],
             j_star=result.j_star)
    return EXIT_OK


def _plan_task(abstraction: Abstraction, domain: DomainSpec, config: RunConfig, split: str, task_seed: int):
    task = domain.sample_task(split, task_seed)
    rng = np.random.default_rng([config.seed, task_seed])
    return bilevel_plan(task, abstraction, domain, config.planner, rng)


def cmd_plan(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.domain)
    domain = get_domain(config.domain)
    abstraction = artifacts.read_abstraction(args.abstraction, domain)
    result = _plan_task(abstraction, domain, config, args.split, args.task_seed)
    record = {"schema_version": artifacts.SCHEMA_VERSION, "domain": domain.name, "split": args.split,
              "task_seed": args.task_seed, **result.to_record()}
    with artifacts.staged_output(args.out) as out:
        artifacts.atomic_write(os.path.join(out, artifacts.PLAN_NAME), artifacts.dumps(record))
        artifacts.write_manifest(out, "plan", config, inputs={"abstraction": args.abstraction},
                                 extra={"domain": domain.name})
    log.info("Plan written.", out=args.out, success=result.success, length=result.plan_length,
             reason=result.reason.value if result.reason else None)
    return EXIT_OK


def evaluate(abstraction: Abstraction, domain: DomainSpec, config: RunConfig, split: str,
             seeds: Sequence[int], workers: int = 1) -> List[TaskOutcome]:
    """Plans every task seed; outcomes come back in seed order."""
    def run_one(task_seed: int) -> TaskOutcome:
        result = _plan_task(abstraction, domain, config, split, task_seed)
        return TaskOutcome(task_seed=task_seed, split=split, success=result.success,
                           failure_reason=result.reason.value if result.reason else None,
                           plan_length=result.plan_length if result.success else None,
                           replans=result.replans, skeletons_tried=result.skeletons_tried)

    if workers <= 1:
        return [run_one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(run_one, seeds))


def build_report(domain: DomainSpec, split: str, outcomes: Sequence[TaskOutcome],
                 abstraction_dir: Optional[str] = None) -> MetricsReport:
    failures = {}
    for outcome in outcomes:
        if not outcome.success:
            failures[outcome.failure_reason] = failures.get(outcome.failure_reason, 0) + 1
    solved = sum(o.success for o in outcomes)
    timing, fits, steps = TimingBreakdown(), None, []
    if abstraction_dir is not None and os.path.isdir(abstraction_dir):
        manifest = artifacts.read_manifest(abstraction_dir)
        if manifest.get("timing"):
            timing = TimingBreakdown(**manifest["timing"])
        fits = manifest.get("fits")
        steplog = os.path.join(abstraction_dir, artifacts.STEPLOG_NAME)
        if os.path.isfile(steplog):
            with open(steplog, "r", encoding="utf-8") as f:
                steps = [json.loads(line) for line in f if line.strip()]
    return MetricsReport(domain=domain.name, split=split, num_tasks=len(outcomes), num_solved=solved,
                         success_rate=solved / len(outcomes) if outcomes else 0.0,
                         failure_reasons=dict(sorted(failures.items())), outcomes=list(outcomes),
                         timing=timing, classifier_fits=fits, selection_steps=steps)


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.domain)
    domain = get_domain(config.domain)
    abstraction = artifacts.read_abstraction(args.abstraction, domain)
    seeds = list(range(args.seeds, args.seeds + args.num))
    outcomes = evaluate(abstraction, domain, config, args.split, seeds, args.workers)
    report = build_report(domain, args.split, outcomes, args.abstraction)
    with artifacts.staged_output(args.report) as out:
        artifacts.atomic_write(os.path.join(out, artifacts.REPORT_NAME),
                               artifacts.dumps(report.model_dump(mode="json")))
        artifacts.write_manifest(out, "eval", config, inputs={"abstraction": args.abstraction},
                                 extra={"domain": domain.name, "split": args.split, "seeds": [seeds[0], seeds[-1]]
                                        if seeds else []})
    log.info("Evaluation finished.", report=args.report, split=args.split, solved=report.num_solved,
             tasks=report.num_tasks, success_rate=report.success_rate)
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    """gen-demos, invent, select and eval on both splits under one output root."""
    config = load_config(args.config)
    root = args.out
    steps = [
        ["gen-demos", "--config", args.config, "--out", os.path.join(root, "demos")],
        ["invent", "--config", args.config, "--demos", os.path.join(root, "demos"),
         "--out", os.path.join(root, "pool")],
        ["select", "--config", args.config, "--demos", os.path.join(root, "demos"),
         "--candidates", os.path.join(root, "pool"), "--out", os.path.join(root, "abstraction")],
    ]
    for split in ("train", "test"):
        steps.append(["eval", "--config", args.config, "--abstraction", os.path.join(root, "abstraction"),
                      "--split", split, "--num", str(args.num_tasks), "--seeds", "0",
                      "--workers", str(args.workers), "--report", os.path.join(root, f"report-{split}")])
    parser = build_parser()
    for argv in steps:
        log.info("Pipeline stage starting.", stage=argv[0], domain=config.domain)
        code = dispatch(parser.parse_args(argv))
        if code != EXIT_OK:
            return code
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="predinvent",
                                     description="Invent predicates from demonstrations and plan with them.")
    parser.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL (DEBUG, INFO, WARNING, ERROR).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="Generate oracle demonstrations.")
    p.add_argument("--domain", choices=available_domains(), default=None)
    p.add_argument("--num", type=int, default=None, help="Number of demonstrations (default: config num_demos).")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--config", default=None, help="RunConfig JSON file.")
    p.add_argument("--out", required=True, help="Output directory.")
    p.set_defaults(handler=cmd_gen_demos)

    p = sub.add_parser("invent", help="Build a candidate predicate pool with a proposer in the loop.")
    p.add_argument("--demos", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--proposer", choices=[b.value for b in ProposerBackend], default=None,
                   help="Overrides the config's proposer backend.")
    p.add_argument("--replay", default=None, help="Replay file for the scripted backend.")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_invent)

    p = sub.add_parser("select", help="Hill-climb a predicate set and export the abstraction.")
    p.add_argument("--candidates", required=True, help="Pool directory written by invent.")
    p.add_argument("--demos", required=True)
    p.add_argument("--config", default=None, help="RunConfig JSON file (default: the config invent recorded).")
    p.add_argument("--mode", choices=[m.value for m in DerivedMode], default=None,
                   help="Overrides selection.derived_mode.")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_select)

    p = sub.add_parser("plan", help="Plan one sampled task with a learned abstraction.")
    p.add_argument("--abstraction", required=True)
    p.add_argument("--domain", choices=available_domains(), default=None)
    p.add_argument("--task-seed", type=int, required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_plan)

    p = sub.add_parser("eval", help="Success rate of a learned abstraction over sampled tasks.")
    p.add_argument("--abstraction", required=True)
    p.add_argument("--domain", choices=available_domains(), default=None)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--num", type=int, default=50, help="Number of tasks.")
    p.add_argument("--seeds", type=int, default=0, help="First task seed; tasks use consecutive seeds.")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config", default=None)
    p.add_argument("--report", required=True, help="Output directory for report.json.")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("run", help="Full pipeline on one config.")
    p.add_argument("--config", required=True)
    p.add_argument("--num-tasks", type=int, default=20)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_run)
    return parser


def dispatch(args: argparse.Namespace) -> int:
    try:
        return args.handler(args)
    except USER_ERRORS as e:
        log.error("Command failed.", command=args.command, error_type=type(e).__name__, error_str=str(e))
        print(json.dumps({"error": type(e).__name__, "message": str(e), "exit_code": EXIT_USER_ERROR}),
              file=sys.stderr)
        return EXIT_USER_ERROR
    except Exception as e:
        log.error("Unexpected failure.", command=args.command, error_type=type(e).__name__, exc_info=True)
        print(json.dumps({"error": type(e).__name__, "message": str(e), "exit_code": EXIT_INTERNAL_ERROR}),
              file=sys.stderr)
        return EXIT_INTERNAL_ERROR


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad flags; those are user errors here
        return EXIT_OK if e.code == 0 else EXIT_USER_ERROR
    if args.log_level:
        setup_logging(args.log_level.upper(), stream=sys.stderr)
    return dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
