"""Reference maximizers of H_q(Y|X1,X2) over the marginal-matching polytope.

Two independent routes, neither of which shares code paths with the softmax
solver:

* ``exact_solve`` grids the coefficients of a swap-tensor basis (few degrees of
  freedom only) and polishes with per-coordinate ternary search.
* ``long_horizon_solve`` runs a feasible-direction Newton method on a
  continuation of entropy-regularized objectives whose last member is the
  target within ``tau_min * log(|X1||X2|)`` nats.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .dist import LN2, Joint3
from .solver import PidResult, extract_pid, marginal_error

MAX_EXACT_DOF = 4
GRID_BUDGET = 1_000_000


class DofError(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    pid: PidResult
    method: str
    objective_value: float
    steps: int = 0


def cond_entropy_nats(q: np.ndarray) -> float:
    qx = q.sum(2)
    a = q[q > 0]
    b = qx[qx > 0]
    return float(-(a * np.log(a)).sum() + (b * np.log(b)).sum())


def product_start(p: np.ndarray) -> np.ndarray:
    """P(x1,y) P(x2,y) / P(y): the feasible point with Y-conditional independence."""
    m1, m2, py = p.sum(1), p.sum(0), p.sum((0, 1))
    out = np.zeros_like(p)
    nz = py > 0
    out[:, :, nz] = m1[:, None, nz] * m2[None, :, nz] / py[nz]
    return out


def _finish(p: Joint3, q: np.ndarray, method: str, steps: int) -> OracleResult:
    q = np.maximum(q, 0.0)
    q = q / q.sum()
    pid = extract_pid(p, Joint3(q), steps, True)
    return OracleResult(pid, method, cond_entropy_nats(q) / LN2, steps)


# ---------------------------------------------------------------- swap basis


def feasible_basis(p: Joint3, support_only: bool = False) -> list[np.ndarray]:
    """Adjacent 2x2 swap tensors (+1 -1 / -1 +1) per y-slice.

    With ``support_only`` the swaps run over adjacent *live* rows and columns of
    each slice, which is the smallest set spanning the directions that keep p's
    zero pattern in the pairwise marginals.
    """
    a, b, ny = p.dims
    m1, m2 = p.probs.sum(1), p.probs.sum(0)
    out = []
    for y in range(ny):
        rows = np.flatnonzero(m1[:, y] > 0) if support_only else np.arange(a)
        cols = np.flatnonzero(m2[:, y] > 0) if support_only else np.arange(b)
        for i0, i1 in zip(rows[:-1], rows[1:]):
            for j0, j1 in zip(cols[:-1], cols[1:]):
                t = np.zeros((a, b, ny))
                t[i0, j0, y] = t[i1, j1, y] = 1.0
                t[i0, j1, y] = t[i1, j0, y] = -1.0
                out.append(t)
    return out


@dataclass
class _SliceCoords:
    """Cumulative-sum coordinates of one slice: cell (i,j) = q0 + second difference of C."""

    y: int
    rows: np.ndarray
    cols: np.ndarray
    lo: np.ndarray  # box bounds of each coefficient, shape (nr-1, nc-1)
    hi: np.ndarray


def _slice_coords(q0: np.ndarray, m1: np.ndarray, m2: np.ndarray) -> list[_SliceCoords]:
    out = []
    for y in range(q0.shape[2]):
        rows = np.flatnonzero(m1[:, y] > 0)
        cols = np.flatnonzero(m2[:, y] > 0)
        if len(rows) < 2 or len(cols) < 2:
            continue
        rc = np.cumsum(m1[rows, y])[:-1]
        cc = np.cumsum(m2[cols, y])[:-1]
        tot = m1[rows, y].sum()
        base = np.cumsum(np.cumsum(q0[np.ix_(rows, cols, [y])][:, :, 0], 0), 1)[:-1, :-1]
        lo = np.maximum(0.0, rc[:, None] + cc[None, :] - tot) - base
        hi = np.minimum(rc[:, None], cc[None, :]) - base
        out.append(_SliceCoords(y, rows, cols, lo, hi))
    return out


def _second_difference(c: np.ndarray) -> np.ndarray:
    """Map cumulative coefficients (..., r-1, k-1) to cell offsets (..., r, k)."""
    shp = c.shape[:-2] + (c.shape[-2] + 1, c.shape[-1] + 1)
    out = np.zeros(shp)
    out[..., :-1, :-1] += c
    out[..., 1:, :-1] -= c
    out[..., :-1, 1:] -= c
    out[..., 1:, 1:] += c
    return out


def _assemble(q0: np.ndarray, coords: list[_SliceCoords], flat: np.ndarray) -> np.ndarray:
    """Batch of distributions for coefficient vectors ``flat`` of shape (n, dof)."""
    n = flat.shape[0]
    q = np.broadcast_to(q0, (n,) + q0.shape).copy()
    pos = 0
    for sc in coords:
        k = sc.lo.size
        c = flat[:, pos : pos + k].reshape((n,) + sc.lo.shape)
        q[np.ix_(np.arange(n), sc.rows, sc.cols, [sc.y])] += _second_difference(c)[..., None]
        pos += k
    return q


def _batch_objective(q: np.ndarray) -> np.ndarray:
    bad = (q < -1e-15).reshape(len(q), -1).any(1)
    q = np.maximum(q, 0.0)
    qx = q.sum(3)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(q > 0, q * np.log(q), 0.0).reshape(len(q), -1).sum(1)
        t2 = np.where(qx > 0, qx * np.log(qx), 0.0).reshape(len(q), -1).sum(1)
    val = -t1 + t2
    val[bad] = -np.inf
    return val


def _coordinate_range(q: np.ndarray, sc: _SliceCoords, i: int, j: int) -> tuple[float, float]:
    """Feasible step interval for one coefficient with the rest held fixed."""
    r0, r1 = sc.rows[i], sc.rows[i + 1]
    c0, c1 = sc.cols[j], sc.cols[j + 1]
    y = sc.y
    up = min(q[r1, c0, y], q[r0, c1, y])
    dn = min(q[r0, c0, y], q[r1, c1, y])
    return -max(dn, 0.0), max(up, 0.0)


def _ternary(f, lo: float, hi: float, iters: int = 200) -> float:
    phi = (np.sqrt(5.0) - 1) / 2
    a, b = lo, hi
    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        if b - a < 1e-17:
            break
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = f(x1)
    cands = [(f(lo), lo), (f1, x1), (f2, x2), (f(hi), hi)]
    return max(cands)[1]


def exact_solve(p: Joint3, grid_points: int = 2001, polish_rounds: int = 200) -> OracleResult:
    """Grid search over the swap-coefficient box, then cyclic ternary polish."""
    pr = p.probs
    m1, m2 = pr.sum(1), pr.sum(0)
    q0 = product_start(pr)
    coords = _slice_coords(q0, m1, m2)
    dof = sum(sc.lo.size for sc in coords)
    if dof > MAX_EXACT_DOF:
        raise DofError(f"{dof} degrees of freedom exceeds the grid limit of {MAX_EXACT_DOF}")
    if dof == 0:
        return _finish(p, q0, "exact-polytope", 0)

    lo = np.concatenate([sc.lo.ravel() for sc in coords])
    hi = np.concatenate([sc.hi.ravel() for sc in coords])
    n = max(2, min(grid_points, int(np.floor(GRID_BUDGET ** (1.0 / dof) + 1e-9))))
    axes = [np.linspace(l, h, n) for l, h in zip(lo, hi)]
    best_val, best_pt = -np.inf, np.zeros(dof)
    chunk = max(1, 200_000 // pr.size)
    total = n**dof
    for start in range(0, total, chunk):
        idx = np.unravel_index(np.arange(start, min(start + chunk, total)), (n,) * dof)
        pts = np.stack([ax[i] for ax, i in zip(axes, idx)], axis=1)
        vals = _batch_objective(_assemble(q0, coords, pts))
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val, best_pt = float(vals[k]), pts[k]
    if not np.isfinite(best_val):
        best_pt = np.zeros(dof)
    q = _assemble(q0, coords, best_pt[None, :])[0]

    swaps = [(sc, i, j) for sc in coords for i in range(sc.lo.shape[0]) for j in range(sc.lo.shape[1])]
    steps = 0
    for _ in range(polish_rounds):
        before = cond_entropy_nats(q)
        for sc, i, j in swaps:
            r0, r1 = sc.rows[i], sc.rows[i + 1]
            c0, c1 = sc.cols[j], sc.cols[j + 1]
            y = sc.y
            lo_t, hi_t = _coordinate_range(q, sc, i, j)
            if hi_t - lo_t <= 0:
                continue
            base = q

            def f(t: float) -> float:
                trial = base.copy()
                trial[r0, c0, y] += t
                trial[r1, c1, y] += t
                trial[r0, c1, y] -= t
                trial[r1, c0, y] -= t
                return cond_entropy_nats(np.maximum(trial, 0.0))

            t = _ternary(f, lo_t, hi_t)
            q = base.copy()
            q[r0, c0, y] += t
            q[r1, c1, y] += t
            q[r0, c1, y] -= t
            q[r1, c0, y] -= t
            q = np.maximum(q, 0.0)
            steps += 1
        if cond_entropy_nats(q) - before < 1e-16:
            break
    return _finish(p, q, "exact-polytope", steps)


# ---------------------------------------------------------------- continuation Newton


class _Constraints:
    """Live marginal constraints, one redundant column row dropped per y-slice."""

    def __init__(self, m1: np.ndarray, m2: np.ndarray):
        self.a, self.ny = m1.shape
        self.b = m2.shape[0]
        live2 = m2 > 0
        drop = np.zeros_like(live2)
        for y in range(self.ny):
            j = np.flatnonzero(live2[:, y])
            if len(j):
                drop[j[-1], y] = True
        self.rows = np.argwhere(m1 > 0)
        self.cols = np.argwhere(live2 & ~drop)
        self.nr = len(self.rows)
        self.n = self.nr + len(self.cols)

    def apply(self, d: np.ndarray) -> np.ndarray:
        s1, s2 = d.sum(1), d.sum(0)
        return np.concatenate([s1[self.rows[:, 0], self.rows[:, 1]], s2[self.cols[:, 0], self.cols[:, 1]]])

    def apply_t(self, lam: np.ndarray) -> np.ndarray:
        u = np.zeros((self.a, self.ny))
        v = np.zeros((self.b, self.ny))
        u[self.rows[:, 0], self.rows[:, 1]] = lam[: self.nr]
        v[self.cols[:, 0], self.cols[:, 1]] = lam[self.nr :]
        return u[:, None, :] + v[None, :, :]

    def residual(self, q: np.ndarray, m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
        return np.concatenate(
            [
                (m1 - q.sum(1))[self.rows[:, 0], self.rows[:, 1]],
                (m2 - q.sum(0))[self.cols[:, 0], self.cols[:, 1]],
            ]
        )

    def schur(self, q: np.ndarray, qx: np.ndarray, c: float) -> np.ndarray:
        """A K^-1 A^T for K^-1 = diag(q) + c * q q^T / qx within each (x1,x2) fiber."""
        ri, ci, nr = self.rows, self.cols, self.nr
        b = self.b
        s = np.zeros((self.n, self.n))
        rq, cq = q.sum(1), q.sum(0)
        s[np.arange(nr), np.arange(nr)] = rq[ri[:, 0], ri[:, 1]]
        k = np.arange(nr, self.n)
        s[k, k] = cq[ci[:, 0], ci[:, 1]]
        same = ri[:, 1][:, None] == ci[:, 1][None, :]
        cross = np.where(same, q[ri[:, 0][:, None], ci[:, 0][None, :], ri[:, 1][:, None]], 0.0)
        s[:nr, nr:] = cross
        s[nr:, :nr] = cross.T

        g = np.zeros((self.n, self.a * b))
        jj = np.arange(b)
        g[np.arange(nr)[:, None], ri[:, 0][:, None] * b + jj[None, :]] = q[
            ri[:, 0][:, None], jj[None, :], ri[:, 1][:, None]
        ]
        ii = np.arange(self.a)
        g[k[:, None], ii[None, :] * b + ci[:, 0][:, None]] = q[
            ii[None, :], ci[:, 0][:, None], ci[:, 1][:, None]
        ]
        flat = qx.ravel()
        w = np.where(flat > 0, c / np.where(flat > 0, flat, 1.0), 0.0)
        s += (g * w) @ g.T
        return s


def _kinv(q: np.ndarray, qx: np.ndarray, c: float, v: np.ndarray) -> np.ndarray:
    qv = q * v
    fx = np.where(qx > 0, qv.sum(2) / np.where(qx > 0, qx, 1.0), 0.0)
    return qv + c * q * fx[:, :, None]


def _regularized(q: np.ndarray, tau: float) -> float:
    """H(X,Y) - (1 - tau) H(X) = H(Y|X) + tau H(X)."""
    qx = q.sum(2)
    a = q[q > 0]
    b = qx[qx > 0]
    return float(-(a * np.log(a)).sum() + (1 - tau) * (b * np.log(b)).sum())


def _repair(q, m1, m2, cons: _Constraints, rounds: int = 3) -> np.ndarray:
    for _ in range(rounds):
        qx = q.sum(2)
        lam = np.linalg.lstsq(cons.schur(q, qx, 1.0), -cons.residual(q, m1, m2), rcond=None)[0]
        q = np.maximum(q + _kinv(q, qx, 1.0, -cons.apply_t(lam)), 0.0)
    return q


def long_horizon_solve(
    p: Joint3,
    tau_min: float = 1e-7,
    shrink: float = 0.1,
    max_newton: int = 60,
    kill: float = 1e-15,
) -> OracleResult:
    """Maximize H(Y|X) + tau H(X) on the polytope for tau = 1, 0.1, ..., tau_min.

    At tau = 1 the maximizer is the closed-form conditional-independence start,
    so each stage warm-starts from the previous optimum. Each Newton step keeps
    the marginals fixed, a ratio test keeps it nonnegative, and an Armijo
    search guarantees ascent. Fibers whose mass drops below ``kill`` are
    emptied so they stop limiting the step.
    """
    pr = p.probs
    m1, m2 = pr.sum(1), pr.sum(0)
    cons = _Constraints(m1, m2)
    q = product_start(pr)
    tau = 1.0
    steps = 0
    if cons.n == 0:
        return _finish(p, q, "long-horizon", 0)
    while tau > tau_min * 1.0001:
        tau = max(tau * shrink, tau_min)
        c = (1 - tau) / tau
        for _ in range(max_newton):
            qx = q.sum(2)
            dead = (qx > 0) & (qx < kill)
            if dead.any():
                q[dead] = 0.0
                qx = q.sum(2)
            with np.errstate(divide="ignore", invalid="ignore"):
                g = np.where(q > 0, -np.log(q) + (1 - tau) * np.log(qx)[:, :, None], 0.0)
            s = cons.schur(q, qx, c)
            rhs = cons.apply(_kinv(q, qx, c, g)) - cons.residual(q, m1, m2)
            try:
                lam = np.linalg.solve(s, rhs)
            except np.linalg.LinAlgError:
                lam = np.linalg.lstsq(s, rhs, rcond=None)[0]
            d = _kinv(q, qx, c, g - cons.apply_t(lam))
            steps += 1
            dec = float((g * d).sum())
            if dec < 1e-13:
                break
            neg = d < 0
            t_max = float(np.min(-q[neg] / d[neg])) if neg.any() else np.inf
            t = min(1.0, 0.95 * t_max)
            f0 = _regularized(q, tau)
            accepted = None
            while t > 1e-12:
                trial = q + t * d
                if _regularized(trial, tau) >= f0 + 1e-4 * t * dec:
                    accepted = trial
                    break
                t *= 0.5
            if accepted is None:
                break
            q = accepted
    q = _repair(q, m1, m2, cons)
    return _finish(p, q, "long-horizon", steps)


def objective_bits(q: Joint3 | np.ndarray) -> float:
    arr = q.probs if isinstance(q, Joint3) else np.asarray(q)
    return cond_entropy_nats(arr) / LN2


__all__ = [
    "OracleResult",
    "DofError",
    "feasible_basis",
    "exact_solve",
    "long_horizon_solve",
    "objective_bits",
    "marginal_error",
]
