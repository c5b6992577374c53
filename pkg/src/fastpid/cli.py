"""``pid`` command line: solve, oracle, compare, gen, schedule, simulate, bench.

Exit status is 0 on success, 1 on a usage error and 2 when the command itself
fails. JSON output is key-sorted and carries no timestamps or wall times, so a
re-run with the same flags and seed is byte-identical. Wall times go to stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ecs
from .bench import SUITES, run_bench
from .fileio import dumps, metadata, oracle_to_doc, pid_to_doc, read_joint, write_sidecar, write_text
from .fileio import joint_to_csv, joint_to_doc
from .oracle import DofError, exact_solve, long_horizon_solve
from .scheduler import PRESETS, SCENARIOS, make_trainer, probe_log_text, run
from .solver import INIT_METHODS, SolverConfig, solve
from .synth import GATES, GaussianSpec, derive_seed, gen_gate, gen_gaussian

SEED_ENV = "PID_SEED"
_NOT_OPTIONS = {"command", "config", "out", "handler"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors with status 1 instead of 2."""

    def error(self, message: str):  # type: ignore[override]
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


# ---------------------------------------------------------------- helpers


def _seed(args: argparse.Namespace, default: int) -> int:
    """Flag, then $PID_SEED, then the command default. The resolved value is written back."""
    if args.seed is None:
        env = os.environ.get(SEED_ENV, "").strip()
        try:
            args.seed = int(env) if env else default
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return int(args.seed)


def _options(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_OPTIONS}


def _emit(args: argparse.Namespace, text: str, seeds: dict) -> None:
    write_text(args.out, text)
    if args.out not in (None, "-"):
        write_sidecar(args.out, metadata(args.command, _options(args), seeds))


def _solver_cfg(args: argparse.Namespace, seed: int) -> SolverConfig:
    return SolverConfig(
        max_iter=args.max_iter,
        lr=args.lr,
        tol=args.tol,
        sinkhorn_iter=args.sinkhorn,
        init=args.init,
        seed=derive_seed(seed, "init"),
    )


def _oracle(p, method: str):
    if method == "exact":
        return exact_solve(p)
    if method == "long":
        return long_horizon_solve(p)
    try:
        return exact_solve(p)
    except DofError:
        return long_horizon_solve(p)


# ---------------------------------------------------------------- commands


def cmd_solve(args: argparse.Namespace) -> None:
    seed = _seed(args, 0)
    cfg = _solver_cfg(args, seed)
    res = solve(read_joint(args.input), cfg)
    doc = {"result": pid_to_doc(res, not args.no_q), "solver": asdict(cfg)}
    _emit(args, dumps(doc), {"top": seed, "init": cfg.seed})


def cmd_oracle(args: argparse.Namespace) -> None:
    res = _oracle(read_joint(args.input), args.method)
    _emit(args, dumps(oracle_to_doc(res, not args.no_q)), {})


def cmd_compare(args: argparse.Namespace) -> None:
    seed = _seed(args, 0)
    cfg = _solver_cfg(args, seed)
    p = read_joint(args.input)
    t0 = time.perf_counter()
    fast = solve(p, cfg)
    t1 = time.perf_counter()
    ref = _oracle(p, args.method)
    t2 = time.perf_counter()
    err = np.abs(fast.atoms() - ref.pid.atoms())
    doc = {
        "fastpid": pid_to_doc(fast, include_q=False),
        "oracle": oracle_to_doc(ref, include_q=False),
        "abs_error": dict(zip(("r", "u1", "u2", "s"), err.tolist())),
        "mae": float(err.mean()),
    }
    sys.stderr.write(f"wall time: fastpid {t1 - t0:.4f} s, oracle ({ref.method}) {t2 - t1:.4f} s\n")
    _emit(args, dumps(doc), {"top": seed, "init": cfg.seed})


def cmd_gen(args: argparse.Namespace) -> None:
    if (args.gate is None) == (not args.gaussian):
        raise UsageError("give exactly one of --gate or --gaussian")
    seeds: dict = {}
    if args.gate is not None:
        p = gen_gate(args.gate)
    else:
        seed = _seed(args, 42)
        spec = GaussianSpec(n_samples=args.samples, bins_x=args.bins_x, bins_y=args.bins_y, seed=seed)
        p = gen_gaussian(spec)
        seeds = {"top": seed, "gaussian": seed}
    fmt = args.format or ("csv" if str(args.out or "").lower().endswith(".csv") else "json")
    _emit(args, joint_to_csv(p) if fmt == "csv" else dumps(joint_to_doc(p)), seeds)


def cmd_schedule(args: argparse.Namespace) -> None:
    seed = _seed(args, 0)
    base = PRESETS[args.preset]
    over = {
        "tau_u": args.tau_u,
        "lambda_s": args.lambda_s,
        "probe_freq": args.probe_freq,
        "max_unimodal_epochs": args.max_epochs,
        "metric": args.metric,
    }
    cfg = replace(base, **{k: v for k, v in over.items() if v is not None})
    seeds = {"top": seed, "trainer": derive_seed(seed, "trainer"), "quantizer": derive_seed(seed, "quantizer")}
    trainer = make_trainer(args.trainer, seeds["trainer"])
    solver_cfg = SolverConfig()
    log = run(trainer, cfg, solver_cfg, k=args.k, seed=seeds["quantizer"])
    extra = {"trainer": args.trainer, "k": args.k, "seeds": seeds,
             "transition_epoch": log.transition_epoch}
    _emit(args, probe_log_text(log, cfg, solver_cfg, seeds["quantizer"], extra), seeds)


def _ecs_record(epoch: int, snap: ecs.EcsSnapshot, before: ecs.EcsSnapshot, beta: float) -> dict:
    return {
        "type": "epoch",
        "epoch": epoch,
        "lam": snap.lam.tolist(),
        "alignment": snap.alignment.tolist(),
        "trigger": ecs.check_trigger(snap, beta),
        "outcome": ecs.classify_outcome(before, snap, beta),
    }


def cmd_simulate(args: argparse.Namespace) -> None:
    seed = _seed(args, 0)
    spec = ecs.SparseSpec(K=args.k, seed=seed)
    cfg = ecs.ScenarioConfig()
    sweep = args.scenario == "sweep"
    name = "breaking" if sweep else args.scenario
    res = ecs.run_suite(spec, cfg, (name,), keep_nets=True)[name]
    traj = res.pretrain
    data = ecs.gen_sparse(spec)
    heldout = ecs.gen_sparse(spec, data.dictionaries, sample_seed=1)
    mode = f"unimodal-{res.pretrained}"
    last = len(traj.snapshots) - 1 if sweep else res.epochs
    header = {
        "type": "header",
        "scenario": args.scenario,
        "spec": asdict(spec),
        "config": asdict(cfg),
        "trained_modality": res.pretrained,
        "signal": res.before.signal.tolist(),
    }
    lines = [header]
    for e in range(last + 1):
        rec = _ecs_record(e, traj.snapshots[e], res.before, spec.beta)
        rec["loss"] = traj.losses[e - 1] if e > 0 else None
        rec["test_error"] = ecs.test_error(traj.nets[e], mode, heldout, spec)
        if sweep:
            rec["breaking_count"] = rec["outcome"].count("breaking")
        lines.append(rec)
    lines.append({"type": "summary", "scenario": res.scenario, "label": res.label, "labels": res.labels,
                  "epochs": res.epochs})
    text = "".join(json.dumps(_finite(line), sort_keys=True) + "\n" for line in lines)
    _emit(args, text, {"top": seed, "data": seed})


def _finite(doc):
    return json.loads(dumps(doc))


def cmd_bench(args: argparse.Namespace) -> None:
    seed = _seed(args, 42)
    report = run_bench(args.suite, seed=seed, repeats=args.repeats)
    for row in report.rows:
        sys.stderr.write(f"{row.task:>22} {row.method:>20}  {row.wall_time:.4f} s\n")
    text = report.to_csv(args.timing) if args.format == "csv" else report.to_json(args.timing)
    _emit(args, text, {"top": seed})


# ---------------------------------------------------------------- parser


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    d = SolverConfig()
    p.add_argument("--max-iter", type=int, default=d.max_iter)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--tol", type=float, default=d.tol)
    p.add_argument("--sinkhorn", type=int, default=d.sinkhorn_iter)
    p.add_argument("--init", choices=[m for m in INIT_METHODS if m != "constant"], default=d.init)


def _add_common(p: argparse.ArgumentParser, seed: bool = True) -> None:
    p.add_argument("--out", help="output file (default: standard output)")
    p.add_argument("--config", help="JSON file of flag values, or a metadata sidecar")
    if seed:
        p.add_argument("--seed", type=int, help=f"top-level seed (fallback: ${SEED_ENV})")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="pid", description="Partial information decomposition toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    subs: dict[str, argparse.ArgumentParser] = {}

    p = sub.add_parser("solve", help="FastPID decomposition of a distribution file")
    p.add_argument("--input", required=True)
    _add_solver_flags(p)
    p.add_argument("--no-q", action="store_true", help="omit q_star from the output")
    _add_common(p)
    p.set_defaults(handler=cmd_solve)
    subs["solve"] = p

    p = sub.add_parser("oracle", help="reference decomposition")
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=["exact", "long", "auto"], default="long")
    p.add_argument("--no-q", action="store_true")
    _add_common(p, seed=False)
    p.set_defaults(handler=cmd_oracle)
    subs["oracle"] = p

    p = sub.add_parser("compare", help="FastPID against the reference, with per-atom errors")
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=["exact", "long", "auto"], default="auto")
    _add_solver_flags(p)
    _add_common(p)
    p.set_defaults(handler=cmd_compare)
    subs["compare"] = p

    p = sub.add_parser("gen", help="write a synthetic distribution")
    p.add_argument("--gate", choices=sorted(GATES))
    p.add_argument("--gaussian", action="store_true")
    d = GaussianSpec()
    p.add_argument("--bins-x", type=int, default=d.bins_x)
    p.add_argument("--bins-y", type=int, default=d.bins_y)
    p.add_argument("--samples", type=int, default=d.n_samples)
    p.add_argument("--format", choices=["json", "csv"])
    _add_common(p)
    p.set_defaults(handler=cmd_gen)
    subs["gen"] = p

    p = sub.add_parser("schedule", help="run the controller on a simulated trainer")
    p.add_argument("--trainer", required=True, help=f"sim:<{'|'.join(SCENARIOS)}>")
    p.add_argument("--preset", choices=sorted(PRESETS), default="default")
    p.add_argument("--tau-u", type=float)
    p.add_argument("--lambda-s", type=float)
    p.add_argument("--probe-freq", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--metric", choices=["pid", "mi"])
    p.add_argument("--k", type=int, default=20, help="clusters per modality")
    _add_common(p)
    p.set_defaults(handler=cmd_schedule)
    subs["schedule"] = p

    p = sub.add_parser("simulate", help="ECS trajectory of a scripted toy scenario")
    p.add_argument("--scenario", choices=list(ecs.OUTCOMES) + ["sweep"], required=True)
    p.add_argument("--k", type=int, default=8, help="number of classes")
    _add_common(p)
    p.set_defaults(handler=cmd_simulate)
    subs["simulate"] = p

    p = sub.add_parser("bench", help="benchmark suites")
    p.add_argument("--suite", choices=SUITES, required=True)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--repeats", type=int, default=3, help="timing repeats per row (best is kept)")
    p.add_argument("--timing", action="store_true",
                   help="embed wall times in the report (output is then not reproducible byte for byte)")
    _add_common(p)
    p.set_defaults(handler=cmd_bench)
    subs["bench"] = p
    return parser, subs


def _load_config(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    if "options" in doc and "command" in doc:
        doc = doc["options"]
    return {k.replace("-", "_"): (math.inf if v == "inf" else v) for k, v in doc.items()}


def _parse(argv: Sequence[str]) -> argparse.Namespace:
    parser, subs = build_parser()
    if not argv:
        parser.print_help(sys.stderr)
        raise SystemExit(1)
    # required flags may come from --config, so check them after merging
    required = {name: [a for a in sp._actions if a.required] for name, sp in subs.items()}
    for acts in required.values():
        for a in acts:
            a.required = False
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        raise SystemExit(1)
    sp = subs[args.command]
    if args.config:
        conf = _load_config(args.config)
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(conf) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        sp.set_defaults(**conf)
        args = parser.parse_args(argv)
    missing = [a.option_strings[0] for a in required[args.command] if getattr(args, a.dest) is None]
    if missing:
        for a in required[args.command]:
            a.required = True
        sp.error(f"the following arguments are required: {', '.join(missing)}")
    return args


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
        args.handler(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        sys.stderr.write(f"pid: error: {exc}\n")
        return 1
    except json.JSONDecodeError as exc:
        sys.stderr.write(f"pid: invalid JSON: {exc}\n")
        return 2
    except Exception as exc:  # runtime failure of the command itself
        sys.stderr.write(f"pid: {type(exc).__name__}: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
