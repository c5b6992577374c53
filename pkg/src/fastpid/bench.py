"""Benchmark suites: gate ground truth, binned Gaussians, and solver ablations."""

from __future__ import annotations

import time
from dataclasses import asdict, replace
from typing import Callable

import numpy as np

from . import __version__
from .dist import Joint3, measures
from .fileio import RNG_NAME, BenchReport, BenchRow
from .oracle import exact_solve, long_horizon_solve
from .solver import PidResult, SolverConfig, solve
from .synth import GATES, GaussianSpec, derive_seed, gen_gate, gen_gaussian, random_joint

SUITES = ("bitwise", "gaussian", "init-ablation", "refine-ablation")
GAUSSIAN_DX = (8, 16, 32)
ABLATION_INITS = ("analytical", "uniform", "gaussian")
MAX_ITER_SWEEP = (10, 50, 200, 500, 2000)
SINKHORN_SWEEP = (1, 5, 10, 20, 40)
N_RANDOM = 3


def analytic_atoms(p: Joint3) -> np.ndarray:
    """Ground truth for the two-input gates.

    With independent uniform inputs and a symmetric gate, q* makes X1 and X2
    interchangeable, so both unique atoms vanish, R = I(X1;Y) and S is the rest.
    """
    m = measures(p)
    return np.array([m.i_x1_y, 0.0, 0.0, m.i_joint - m.i_x1_y])


def _timed(fn: Callable[[], object], repeats: int) -> tuple[object, float]:
    best, out = np.inf, None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return out, float(best)


def _row(task: str, method: str, res: PidResult, ref: np.ndarray | None, wall: float | None,
         **extra) -> BenchRow:
    a = res.atoms()
    mae = None if ref is None else float(np.abs(a - ref).mean())
    return BenchRow(task, method, *map(float, a), mae=mae, wall_time=wall, iters=res.iters_used,
                    extra=extra)


def _gaussian_instance(dx: int, seed: int) -> Joint3:
    return gen_gaussian(GaussianSpec(bins_x=dx, bins_y=8, seed=seed))


class _Oracles:
    """Memoized long-horizon references, keyed by instance name."""

    def __init__(self) -> None:
        self.cache: dict[str, tuple[np.ndarray, float]] = {}

    def get(self, name: str, p: Joint3, repeats: int = 1) -> tuple[np.ndarray, float]:
        if name not in self.cache:
            res, wall = _timed(lambda: long_horizon_solve(p), repeats)
            self.cache[name] = (res.pid.atoms(), wall)
        return self.cache[name]


def _bitwise(cfg: SolverConfig, repeats: int, _seed: int, _oracles: _Oracles) -> list[BenchRow]:
    rows = []
    for gate in GATES:
        p = gen_gate(gate)
        gt = analytic_atoms(p)
        res, wall = _timed(lambda: solve(p, cfg), repeats)
        rows.append(_row(gate, "fastpid", res, gt, wall))
        ores, owall = _timed(lambda: exact_solve(p), repeats)
        rows.append(_row(gate, "oracle", ores.pid, gt, owall))
    return rows


def _gaussian(cfg: SolverConfig, repeats: int, seed: int, oracles: _Oracles) -> list[BenchRow]:
    rows = []
    for dx in GAUSSIAN_DX:
        task = f"gaussian-{dx}x{dx}x8"
        p = _gaussian_instance(dx, seed)
        ref, owall = oracles.get(task, p, repeats)
        res, wall = _timed(lambda: solve(p, cfg), repeats)
        rows.append(_row(task, "fastpid", res, ref, wall))
        rows.append(BenchRow(task, "oracle", *map(float, ref), mae=0.0, wall_time=owall))
    return rows


def _ablation_instances(seed: int) -> dict[str, Joint3]:
    out = {f"gaussian-{dx}x{dx}x8": _gaussian_instance(dx, seed) for dx in GAUSSIAN_DX}
    for i in range(N_RANDOM):
        out[f"random-8x8x4-{i}"] = random_joint((8, 8, 4), derive_seed(seed, f"random-{i}"))
    return out


def _init_ablation(cfg: SolverConfig, repeats: int, seed: int, oracles: _Oracles) -> list[BenchRow]:
    rows = []
    for task, p in _ablation_instances(seed).items():
        ref, _ = oracles.get(task, p)
        for init in ABLATION_INITS:
            c = replace(cfg, init=init, seed=derive_seed(seed, f"init-{init}"))
            res, wall = _timed(lambda: solve(p, c), repeats)
            rows.append(_row(task, f"init={init}", res, ref, wall, converged=res.converged))
    return rows


def _refine_ablation(cfg: SolverConfig, repeats: int, seed: int, oracles: _Oracles) -> list[BenchRow]:
    task = "gaussian-16x16x8"
    p = _gaussian_instance(16, seed)
    ref, _ = oracles.get(task, p)
    rows = []
    for name, values in (("max_iter", MAX_ITER_SWEEP), ("sinkhorn_iter", SINKHORN_SWEEP)):
        for v in values:
            c = replace(cfg, **{name: v})
            res, wall = _timed(lambda: solve(p, c), repeats)
            rows.append(_row(task, f"{name}={v:04d}", res, ref, wall, converged=res.converged))
    return rows


_RUNNERS = {
    "bitwise": _bitwise,
    "gaussian": _gaussian,
    "init-ablation": _init_ablation,
    "refine-ablation": _refine_ablation,
}


def run_bench(suite: str, seed: int = 42, cfg: SolverConfig = SolverConfig(), repeats: int = 3,
              oracles: _Oracles | None = None) -> BenchReport:
    """Run one suite. Rows come back sorted by (task, method); wall times are best-of-``repeats``."""
    if suite not in _RUNNERS:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
    rows = _RUNNERS[suite](cfg, repeats, seed, oracles or _Oracles())
    rows.sort(key=lambda r: (r.task, r.method))
    meta = {
        "suite": suite,
        "seeds": {"top": seed},
        "solver": asdict(cfg),
        "oracle": {"bitwise": "exact-polytope", "other": "long-horizon"},
        "rng": RNG_NAME,
        "version": __version__,
    }
    return BenchReport(suite, rows, meta)
