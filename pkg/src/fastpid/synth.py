"""Synthetic benchmark distributions: exact logic gates and binned Gaussian regressions."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dist import Joint3, build_joint, quantile_codes

RNG_NAME = "numpy.random.PCG64"

GATES = {
    "xor": lambda a, b: a ^ b,
    "and": lambda a, b: a & b,
    "or": lambda a, b: a | b,
}


def gen_gate(gate: str) -> Joint3:
    """Uniform independent input bits with y = gate(x1, x2)."""
    key = gate.lower()
    if key not in GATES:
        raise ValueError(f"unknown gate {gate!r}; choose from {sorted(GATES)}")
    t = np.zeros((2, 2, 2))
    for a in range(2):
        for b in range(2):
            t[a, b, GATES[key](a, b)] = 0.25
    return build_joint(t)


@dataclass(frozen=True)
class GaussianSpec:
    n_samples: int = 500_000
    c1: float = 1.0
    c2: float = 0.8
    u1: float = 0.5
    u2: float = 0.3
    noise_sigma: float = 0.5
    bins_x: int = 16
    bins_y: int = 8
    seed: int = 42

    def __post_init__(self) -> None:
        if self.bins_x < 2 or self.bins_y < 2:
            raise ValueError("need at least two bins per variable")
        if self.n_samples < self.bins_x * self.bins_x * self.bins_y * 10:
            raise ValueError("n_samples must be at least 10 per histogram cell")
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be positive")
        coeffs = (self.c1, self.c2, self.u1, self.u2)
        if all(c == 0 for c in coeffs) and self.noise_sigma < 1e-12:
            raise ValueError("degenerate spec: no signal and no noise")

    def to_dict(self) -> dict:
        return asdict(self)


def sample_gaussian(spec: GaussianSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_samples
    x1 = rng.standard_normal(n)
    x2 = rng.standard_normal(n)
    eps = rng.standard_normal(n) * spec.noise_sigma
    y = spec.c1 * x1 + spec.c2 * x2 + spec.u1 * x1**2 + spec.u2 * x2**2 + eps
    return x1, x2, y


def gen_gaussian(spec: GaussianSpec = GaussianSpec()) -> Joint3:
    x1, x2, y = sample_gaussian(spec)
    a = quantile_codes(x1, spec.bins_x)
    b = quantile_codes(x2, spec.bins_x)
    c = quantile_codes(y, spec.bins_y)
    counts = np.zeros((spec.bins_x, spec.bins_x, spec.bins_y))
    np.add.at(counts, (a, b, c), 1.0)
    return build_joint(counts)


def random_joint(dims: tuple[int, int, int], seed: int, alpha: float = 1.0) -> Joint3:
    """Flat-Dirichlet joint, the stock random instance used by tests and benches."""
    rng = np.random.default_rng(seed)
    return build_joint(rng.dirichlet(np.full(int(np.prod(dims)), alpha)).reshape(dims))


def derive_seed(seed: int, component: str) -> int:
    """Expand one top-level seed into an independent per-component seed."""
    salt = int.from_bytes(component.encode("utf-8"), "little")
    return int(np.random.SeedSequence([int(seed), salt]).generate_state(1)[0])
