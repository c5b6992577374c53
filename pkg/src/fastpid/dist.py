"""Discrete joint distributions over (X1, X2, Y) and the information measures built on them.

All entropies are computed in nats internally and converted to bits when they
leave this module, so callers never mix log bases.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.cluster.vq import kmeans2

LN2 = float(np.log(2.0))
PROB_FLOOR = 1e-15
MAX_CELLS = 10_000_000

_PAIR_AXES = {"x1y": 1, "x2y": 0, "x1x2": 2}


class DistributionError(ValueError):
    """Raised for malformed probability tensors."""


@dataclass(frozen=True)
class Joint3:
    """Dense probability tensor indexed (x1, x2, y)."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = self.probs
        if not isinstance(p, np.ndarray) or p.ndim != 3:
            raise DistributionError("Joint3 needs a 3-axis array")
        if p.size == 0 or min(p.shape) < 1:
            raise DistributionError("Joint3 must be nonempty")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise DistributionError("Joint3 entries must be finite and nonnegative")
        if abs(float(p.sum()) - 1.0) > 1e-12:
            raise DistributionError(f"Joint3 mass is {float(p.sum())!r}, expected 1")
        p.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.probs.shape)  # type: ignore[return-value]

    def swap_sources(self) -> "Joint3":
        """Same distribution with the roles of X1 and X2 exchanged."""
        return Joint3(np.ascontiguousarray(self.probs.transpose(1, 0, 2)))


@dataclass(frozen=True)
class Marginal2:
    """Pairwise marginal. ``axes`` is one of 'x1y', 'x2y', 'x1x2'."""

    probs: np.ndarray
    axes: str


@dataclass(frozen=True)
class InfoMeasures:
    h_y: float
    h_y_given_x1x2: float
    i_x1_y: float
    i_x2_y: float
    i_joint: float
    i_x1_y_given_x2: float
    i_x2_y_given_x1: float
    co_info: float


def build_joint(raw) -> Joint3:
    """Normalize a nonnegative 3-axis tensor into a Joint3."""
    arr = np.array(raw, dtype=np.float64)
    if arr.ndim != 3 or arr.size == 0:
        raise DistributionError("expected a nonempty 3-axis tensor")
    if arr.size > MAX_CELLS:
        raise DistributionError(f"{arr.size} cells exceeds the dense limit of {MAX_CELLS}")
    if not np.all(np.isfinite(arr)):
        raise DistributionError("tensor has non-finite entries")
    if np.any(arr < 0):
        raise DistributionError("tensor has negative entries")
    total = arr.sum()
    if total <= 0:
        raise DistributionError("tensor has zero total mass")
    return Joint3(arr / total)


def marginal(j: Joint3, axes: str) -> Marginal2:
    if axes not in _PAIR_AXES:
        raise ValueError(f"axes must be one of {sorted(_PAIR_AXES)}")
    return Marginal2(j.probs.sum(axis=_PAIR_AXES[axes]), axes)


def entropy_nats(p: np.ndarray) -> float:
    """Shannon entropy of any probability array, 0 log 0 = 0, tiny masses dropped."""
    x = np.asarray(p, dtype=np.float64).ravel()
    x = x[x > PROB_FLOOR]
    return float(-(x * np.log(x)).sum())


def _entropies(p: np.ndarray) -> dict[str, float]:
    return {
        "xyz": entropy_nats(p),
        "x1x2": entropy_nats(p.sum(2)),
        "x1y": entropy_nats(p.sum(1)),
        "x2y": entropy_nats(p.sum(0)),
        "x1": entropy_nats(p.sum((1, 2))),
        "x2": entropy_nats(p.sum((0, 2))),
        "y": entropy_nats(p.sum((0, 1))),
    }


def cond_entropy_nats(q: np.ndarray) -> float:
    """H(Y | X1, X2) in nats."""
    return entropy_nats(q) - entropy_nats(q.sum(2))


def measures(j: Joint3 | np.ndarray) -> InfoMeasures:
    p = j.probs if isinstance(j, Joint3) else np.asarray(j)
    h = _entropies(p)
    i1 = h["x1"] + h["y"] - h["x1y"]
    i2 = h["x2"] + h["y"] - h["x2y"]
    ij = h["x1x2"] + h["y"] - h["xyz"]
    i1_2 = h["x1x2"] + h["x2y"] - h["x2"] - h["xyz"]
    i2_1 = h["x1x2"] + h["x1y"] - h["x1"] - h["xyz"]
    i12 = h["x1"] + h["x2"] - h["x1x2"]
    i12_y = h["x1y"] + h["x2y"] - h["y"] - h["xyz"]

    def mi(v: float) -> float:
        return max(v, 0.0) / LN2

    return InfoMeasures(
        h_y=h["y"] / LN2,
        h_y_given_x1x2=max(h["xyz"] - h["x1x2"], 0.0) / LN2,
        i_x1_y=mi(i1),
        i_x2_y=mi(i2),
        i_joint=mi(ij),
        i_x1_y_given_x2=mi(i1_2),
        i_x2_y_given_x1=mi(i2_1),
        co_info=(i12 - i12_y) / LN2,
    )


def mutual_information_bits(pxy: np.ndarray) -> float:
    """I(X;Y) in bits for a 2-axis joint."""
    pxy = np.asarray(pxy, dtype=np.float64)
    pxy = pxy / pxy.sum()
    v = entropy_nats(pxy.sum(1)) + entropy_nats(pxy.sum(0)) - entropy_nats(pxy)
    return max(v, 0.0) / LN2


# ---------------------------------------------------------------- quantization


def _farthest_point_centers(x: np.ndarray, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    idx = [int(rng.integers(len(x)))]
    d2 = ((x - x[idx[0]]) ** 2).sum(1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        idx.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(1))
    return x[idx].copy()


def quantile_codes(v: np.ndarray, bins: int) -> np.ndarray:
    """Equal-frequency bin index of each value."""
    edges = np.quantile(v, np.linspace(0.0, 1.0, bins + 1)[1:-1])
    return np.searchsorted(edges, v, side="right").astype(np.int64)


def quantize(samples, k: int, seed: int = 0) -> np.ndarray:
    """Map each sample (scalar or vector) to a code in [0, k).

    Inputs with at most k distinct values are coded by rank, which keeps already
    discrete data intact. Other 1-D inputs get k equal-frequency bins; vector
    inputs get k-means with a farthest-point start.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("samples must be a nonempty list of scalars or vectors")
    uniq, inv = np.unique(x, axis=0, return_inverse=True)
    if len(uniq) <= k:
        return inv.ravel().astype(np.int64)
    if x.shape[1] == 1:
        return quantile_codes(x[:, 0], k)
    init = _farthest_point_centers(x, k, seed)
    _, labels = kmeans2(x, init, iter=50, minit="matrix", missing="warn")
    return labels.astype(np.int64)


def quantize_embeddings(
    samples_m1: Sequence,
    samples_m2: Sequence,
    labels: Sequence[int],
    k: int,
    num_classes: int | None = None,
    seed: int = 0,
) -> Joint3:
    """Histogram of (cluster of modality 1, cluster of modality 2, label)."""
    n = len(labels)
    if len(samples_m1) != n or len(samples_m2) != n:
        raise ValueError("samples and labels must have equal lengths")
    if n == 0:
        raise ValueError("empty input")
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise ValueError("need at least k samples")
    y = np.asarray(labels, dtype=np.int64)
    if np.any(y < 0):
        raise ValueError("labels must be nonnegative class indices")
    n_cls = int(y.max()) + 1 if num_classes is None else int(num_classes)
    c1 = quantize(samples_m1, k, seed)
    c2 = quantize(samples_m2, k, seed + 1)
    counts = np.zeros((k, k, n_cls))
    np.add.at(counts, (c1, c2, y), 1.0)
    return build_joint(counts)
