"""FastPID: feasible closed-form start, softmax logits, unrolled marginal scaling and Adam.

The objective is H_q(Y | X1, X2) over distributions q that share p's (X1, Y)
and (X2, Y) marginals. One maximizer yields all four atoms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dist import LN2, Joint3, Marginal2, entropy_nats, marginal, measures

INIT_METHODS = ("analytical", "uniform", "gaussian", "constant")
THETA_FLOOR = 1e-12


class InfeasibleSupportError(ValueError):
    """A slice of q has no mass where the target marginal needs some."""


class RefineError(FloatingPointError):
    def __init__(self, iteration: int, what: str):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


class MarginalMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 2000
    lr: float = 0.1
    tol: float = 1e-5
    sinkhorn_iter: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init: str = "analytical"
    seed: int = 0
    lr_backoff: float = 0.5

    def __post_init__(self) -> None:
        if self.max_iter < 1 or self.sinkhorn_iter < 1:
            raise ValueError("max_iter and sinkhorn_iter must be positive")
        if not (self.lr > 0 and 0 < self.tol < 1 and self.adam_eps > 0):
            raise ValueError("lr, tol and adam_eps must be positive with tol < 1")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if not 0 < self.lr_backoff <= 1:
            raise ValueError("lr_backoff must lie in (0, 1]")
        if self.init not in INIT_METHODS:
            raise ValueError(f"init must be one of {INIT_METHODS}")


@dataclass
class LogitState:
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, theta: np.ndarray) -> "LogitState":
        return cls(theta.copy(), np.zeros_like(theta), np.zeros_like(theta))


@dataclass(frozen=True)
class PidResult:
    r: float
    u1: float
    u2: float
    s: float
    i_joint: float
    iters_used: int
    converged: bool
    q_star: Joint3
    raw: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    h_cond_trace: tuple[float, ...] = field(default=(), repr=False)

    def atoms(self) -> np.ndarray:
        return np.array([self.r, self.u1, self.u2, self.s])


# ---------------------------------------------------------------- building blocks


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(den)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _q_init(p: np.ndarray) -> np.ndarray:
    m1, m2, py = p.sum(1), p.sum(0), p.sum((0, 1))
    inv_py = _safe_div(np.ones_like(py), py)
    return m1[:, None, :] * m2[None, :, :] * inv_py[None, None, :]


def analytical_init(p: Joint3) -> Joint3:
    """Q(x1,x2,y) = P(x1,y) P(x2,y) / P(y), zero where P(y) = 0."""
    q = _q_init(p.probs)
    return Joint3(q / q.sum())


def _softmax(theta: np.ndarray) -> np.ndarray:
    e = np.exp(theta - theta.max())
    return e / e.sum()


def _scale_rows(q: np.ndarray, m1: np.ndarray) -> np.ndarray:
    return q * _safe_div(m1, q.sum(1))[:, None, :]


def _scale_cols(q: np.ndarray, m2: np.ndarray) -> np.ndarray:
    return q * _safe_div(m2, q.sum(0))[None, :, :]


def _check_support(q: np.ndarray, m1: np.ndarray, m2: np.ndarray) -> None:
    if np.any((q.sum(1) <= 0) & (m1 > 0)) or np.any((q.sum(0) <= 0) & (m2 > 0)):
        raise InfeasibleSupportError("q has an empty slice where the target marginal is positive")


def sinkhorn_project(q: Joint3, target_m1: Marginal2, target_m2: Marginal2, iters: int) -> Joint3:
    """Alternate (X1,Y) and (X2,Y) rescaling for ``iters`` full sweeps."""
    m1, m2 = target_m1.probs, target_m2.probs
    x = np.array(q.probs, dtype=np.float64)
    _check_support(x, m1, m2)
    for _ in range(iters):
        x = _scale_cols(_scale_rows(x, m1), m2)
    _check_support(x, m1, m2)
    return Joint3(x / x.sum())


def marginal_error(q: np.ndarray, p: np.ndarray) -> float:
    return float(max(np.abs(q.sum(1) - p.sum(1)).max(), np.abs(q.sum(0) - p.sum(0)).max()))


def tighten(q: np.ndarray, p: np.ndarray, target: float = 1e-15, max_sweeps: int = 10_000) -> np.ndarray:
    """Extra scaling sweeps until both marginals match to ``target`` (or sweeps run out)."""
    m1, m2 = p.sum(1), p.sum(0)
    for _ in range(max_sweeps):
        if marginal_error(q, p) < target:
            break
        q = _scale_cols(_scale_rows(q, m1), m2)
    return q


def cond_entropy_and_grad(q: np.ndarray) -> tuple[float, np.ndarray]:
    """H(Y|X1,X2) in nats and its gradient with respect to q."""
    qx = q.sum(2, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        logc = np.where(q > 0, np.log(q / qx), 0.0)
    return float(-(q * logc).sum()), -logc


def loss_and_grad(theta: np.ndarray, m1: np.ndarray, m2: np.ndarray, sweeps: int):
    """Loss -H(Y|X) of the projected softmax, its exact gradient in theta, and the projection.

    The backward pass replays each scaling q_out = q * t / sum(q) in reverse.
    """
    big_q = _softmax(theta)
    tape = []
    q = big_q
    for _ in range(sweeps):
        c = q.sum(1)
        s = _safe_div(m1, c)
        tape.append((q, c, s, 1))
        q = q * s[:, None, :]
        c = q.sum(0)
        s = _safe_div(m2, c)
        tape.append((q, c, s, 0))
        q = q * s[None, :, :]
    h, dh = cond_entropy_and_grad(q)
    g = -dh
    for q_in, c, s, axis in reversed(tape):
        gs = (g * q_in).sum(axis)
        ratio = _safe_div(s, c) * gs
        if axis == 1:
            g = g * s[:, None, :] - ratio[:, None, :]
        else:
            g = g * s[None, :, :] - ratio[None, :, :]
    grad = big_q * (g - (g * big_q).sum())
    return -h, grad, q


def initial_logits(p: np.ndarray, method: str, seed: int) -> np.ndarray:
    """Starting logits.

    'analytical' uses the log of the closed-form start. 'constant' is all zeros,
    which after one scaling sweep lands on the same point. 'uniform' and
    'gaussian' draw seeded random logits from U(-1, 1) and N(0, 1).
    """
    rng = np.random.default_rng(seed)
    if method == "analytical":
        return np.log(np.maximum(_q_init(p), THETA_FLOOR))
    if method == "constant":
        return np.zeros_like(p)
    if method == "uniform":
        return rng.uniform(-1.0, 1.0, size=p.shape)
    if method == "gaussian":
        return rng.standard_normal(p.shape)
    raise ValueError(f"unknown init {method!r}")


# ---------------------------------------------------------------- main loop


def refine(p: Joint3, cfg: SolverConfig = SolverConfig(), *, trace: list | None = None):
    """Adam ascent on H(Y|X) of the projected softmax.

    After each gradient evaluation the logits are re-centred on the projected
    point, so Adam never drifts along directions the projection undoes, and the
    step size halves whenever the projected objective goes down.

    Returns (q_star, iters_used, converged).
    """
    pr = p.probs
    m1, m2 = pr.sum(1), pr.sum(0)
    st = LogitState.fresh(initial_logits(pr, cfg.init, cfg.seed))
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    lr = cfg.lr
    h_prev = -np.inf
    q_prev = None
    q_proj = None
    for k in range(cfg.max_iter):
        loss, grad, q_proj = loss_and_grad(st.theta, m1, m2, cfg.sinkhorn_iter)
        if not np.isfinite(loss):
            raise RefineError(k, "loss")
        if not np.all(np.isfinite(grad)):
            raise RefineError(k, "gradient")
        h = -loss
        if trace is not None:
            trace.append(h)
        if q_prev is not None and np.abs(q_proj - q_prev).max() < cfg.tol:
            return Joint3(q_proj / q_proj.sum()), k, True
        q_prev = q_proj
        if h < h_prev:
            lr *= cfg.lr_backoff
        h_prev = h

        cur = _softmax(st.theta)
        with np.errstate(divide="ignore"):
            st.theta = st.theta + np.where(
                (q_proj > 0) & (cur > 0), np.log(q_proj) - np.log(cur), 0.0
            )
        st.step += 1
        st.m = b1 * st.m + (1 - b1) * grad
        st.v = b2 * st.v + (1 - b2) * grad * grad
        m_hat = st.m / (1 - b1**st.step)
        v_hat = st.v / (1 - b2**st.step)
        st.theta = st.theta - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        if not np.all(np.isfinite(st.theta)):
            raise RefineError(k, "logits")
    return Joint3(q_proj / q_proj.sum()), cfg.max_iter, False


def _conditional_mi_nats(q: np.ndarray, keep: int) -> float:
    """I(X_other; Y | X_keep) where keep is axis 0 (X1) or 1 (X2)."""
    other = 1 - keep
    return (
        entropy_nats(q.sum(2))
        + entropy_nats(q.sum(other))
        - entropy_nats(q.sum((other, 2)))
        - entropy_nats(q)
    )


def extract_pid(
    p: Joint3,
    q_star: Joint3,
    iters_used: int = 0,
    converged: bool = True,
    h_cond_trace: tuple[float, ...] = (),
) -> PidResult:
    pr, q = p.probs, q_star.probs
    if q.shape != pr.shape:
        raise MarginalMismatchError("q_star shape differs from p")
    err = marginal_error(q, pr)
    if err > 1e-4:
        raise MarginalMismatchError(f"q_star marginals deviate by {err:.3g} > 1e-4")
    base = measures(p)
    i1, i2, ij = base.i_x1_y, base.i_x2_y, base.i_joint
    u1 = _conditional_mi_nats(q, keep=1) / LN2
    u2 = _conditional_mi_nats(q, keep=0) / LN2
    r = i1 - u1
    s = ij - r - u1 - u2
    # The three identities leave R as the only free atom; clipping R to the range
    # where all four atoms are nonnegative keeps the identities exact.
    r_rep = min(max(r, i1 + i2 - ij, 0.0), min(i1, i2))
    return PidResult(
        r=r_rep,
        u1=max(i1 - r_rep, 0.0),
        u2=max(i2 - r_rep, 0.0),
        s=max(ij - i1 - i2 + r_rep, 0.0),
        i_joint=base.i_joint,
        iters_used=int(iters_used),
        converged=bool(converged),
        q_star=q_star,
        raw=(float(r), float(u1), float(u2), float(s)),
        h_cond_trace=tuple(h_cond_trace),
    )


def solve(p: Joint3, cfg: SolverConfig = SolverConfig(), *, keep_trace: bool = False) -> PidResult:
    """Closed-form start, refinement, a final tight projection, then the atoms."""
    trace: list[float] | None = [] if keep_trace else None
    q, iters, converged = refine(p, cfg, trace=trace)
    qt = tighten(np.array(q.probs), p.probs)
    return extract_pid(p, Joint3(qt / qt.sum()), iters, converged, tuple(trace or ()))


def cond_entropy_bits(q: Joint3 | np.ndarray) -> float:
    arr = q.probs if isinstance(q, Joint3) else np.asarray(q)
    return (entropy_nats(arr) - entropy_nats(arr.sum(2))) / LN2


def grad_check(
    p: Joint3,
    cfg: SolverConfig = SolverConfig(),
    h: float = 1e-5,
    n_coords: int = 20,
    seed: int = 0,
) -> float:
    """Max relative error of the analytic logit gradient against central differences.

    The test point is the log of the closed-form start plus seeded N(0, 0.5^2)
    noise, so every cell is live and the projection is nontrivial.
    """
    pr = p.probs
    m1, m2 = pr.sum(1), pr.sum(0)
    rng = np.random.default_rng(seed)
    theta = np.log(np.maximum(_q_init(pr), THETA_FLOOR)) + 0.5 * rng.standard_normal(pr.shape)
    _, grad, _ = loss_and_grad(theta, m1, m2, cfg.sinkhorn_iter)
    flat = rng.choice(theta.size, size=min(n_coords, theta.size), replace=False)
    worst = 0.0
    scale = float(np.abs(grad).max())
    for idx in flat:
        e = np.zeros(theta.size)
        e[idx] = h
        e = e.reshape(theta.shape)
        lp, _, _ = loss_and_grad(theta + e, m1, m2, cfg.sinkhorn_iter)
        lm, _, _ = loss_and_grad(theta - e, m1, m2, cfg.sinkhorn_iter)
        fd = (lp - lm) / (2 * h)
        an = float(grad.flat[idx])
        denom = max(abs(an), abs(fd), 1e-3 * scale, 1e-12)
        worst = max(worst, abs(an - fd) / denom)
    return worst


__all__ = [
    "SolverConfig",
    "LogitState",
    "PidResult",
    "InfeasibleSupportError",
    "RefineError",
    "MarginalMismatchError",
    "analytical_init",
    "sinkhorn_project",
    "refine",
    "extract_pid",
    "solve",
    "grad_check",
    "tighten",
    "marginal_error",
    "cond_entropy_bits",
    "marginal",
]
