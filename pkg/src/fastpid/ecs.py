"""Two-modality competition simulator on sparse-coding data.

Each modality sees X = M z + noise, where M has orthonormal class columns and
z carries a strong or weak coefficient on the true class. Encoders are banks
of smoothed-ReLU neurons grouped per class; the classifier sums each group.
Effective competitive strength (ECS) multiplies how well a class's best neuron
aligns with its dictionary column by how learnable that class's data is.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import spearmanr

from .dist import mutual_information_bits, quantize

OUTCOMES = ("amplified", "persistent", "reversed", "breaking")
STATUSES = ("r1_suppressed", "r2_suppressed", "balanced", "balanced_degenerate")


@dataclass(frozen=True)
class SparseSpec:
    K: int = 8
    d1: int = 32
    d2: int = 32
    m: int = 64
    q: int = 3
    beta: float = 0.2
    sigma0: float = 0.01
    noise_sigma: float = 2.0
    z_strong: float = 30.0
    z_weak: float = 6.0
    frac_sufficient: tuple[float, float] = (0.9, 0.45)
    n: int = 2048
    seed: int = 0

    def __post_init__(self) -> None:
        if self.q < 3:
            raise ValueError("q must be at least 3")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not self.z_strong > self.z_weak >= 0:
            raise ValueError("need z_strong > z_weak >= 0")
        if any(not 0 <= f <= 1 for f in self.frac_sufficient):
            raise ValueError("frac_sufficient entries must lie in [0, 1]")
        if self.K < 2 or self.m < 1 or self.n < 1:
            raise ValueError("K >= 2, m >= 1 and n >= 1 required")
        if self.d1 < self.K or self.d2 < self.K:
            raise ValueError("input dims must be at least K for an orthonormal dictionary")

    def dim(self, r: int) -> int:
        return self.d1 if r == 1 else self.d2


@dataclass(frozen=True)
class SparseData:
    x: tuple[np.ndarray, np.ndarray]
    y: np.ndarray
    z: tuple[np.ndarray, np.ndarray]  # coefficient on the true class per sample
    sufficient: tuple[np.ndarray, np.ndarray]
    dictionaries: tuple[np.ndarray, np.ndarray]

    @property
    def n(self) -> int:
        return len(self.y)


@dataclass
class ToyNet:
    weights: np.ndarray  # (K, m, d)
    dictionary: np.ndarray  # (d, K), orthonormal columns

    def copy(self) -> "ToyNet":
        return ToyNet(self.weights.copy(), self.dictionary)


@dataclass(frozen=True)
class EcsSnapshot:
    lam: np.ndarray  # (K, 2)
    alignment: np.ndarray
    signal: np.ndarray


@dataclass
class Trajectory:
    snapshots: list[EcsSnapshot] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    nets: list[tuple[ToyNet, ToyNet]] = field(default_factory=list)
    aborted: bool = False


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, trajectory: Trajectory):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch
        self.trajectory = trajectory


# ---------------------------------------------------------------- data and nets


def make_dictionary(d: int, K: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((d, K))
    qmat, rmat = np.linalg.qr(g)
    return qmat * np.sign(np.diag(rmat))[None, :]


def make_dictionaries(spec: SparseSpec) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([spec.seed, 0])
    return make_dictionary(spec.d1, spec.K, rng), make_dictionary(spec.d2, spec.K, rng)


def gen_sparse(spec: SparseSpec, dictionaries=None, sample_seed: int | None = None,
               n: int | None = None) -> SparseData:
    """Draw labels, sparse codes and noisy observations for both modalities.

    ``dictionaries`` and ``sample_seed`` let a held-out set share the training
    dictionaries while drawing fresh samples.
    """
    dicts = dictionaries if dictionaries is not None else make_dictionaries(spec)
    n = spec.n if n is None else n
    rng = np.random.default_rng([spec.seed, 1 if sample_seed is None else 2 + sample_seed])
    y = rng.integers(0, spec.K, n)
    xs, zs, suff = [], [], []
    for r in (1, 2):
        s = rng.random(n) < spec.frac_sufficient[r - 1]
        z = np.where(s, spec.z_strong, spec.z_weak)
        mdict = dicts[r - 1]
        x = mdict[:, y].T * z[:, None] + spec.noise_sigma * rng.standard_normal((n, spec.dim(r)))
        xs.append(x)
        zs.append(z)
        suff.append(s)
    return SparseData(tuple(xs), y, tuple(zs), tuple(suff), tuple(dicts))


def init_nets(spec: SparseSpec, data: SparseData, seed: int | None = None) -> tuple[ToyNet, ToyNet]:
    rng = np.random.default_rng([spec.seed if seed is None else seed, 3])
    return tuple(
        ToyNet(spec.sigma0 * rng.standard_normal((spec.K, spec.m, spec.dim(r))), data.dictionaries[r - 1])
        for r in (1, 2)
    )  # type: ignore[return-value]


def _ipow(x: np.ndarray, k: int) -> np.ndarray:
    out = x.copy()
    for _ in range(k - 1):
        out *= x
    return out


def smoothed_relu(z, beta: float, q: int):
    """0 below 0, z^q / (q beta^(q-1)) up to beta, then linear with unit slope."""
    arr = np.asarray(z, dtype=np.float64)
    u = np.clip(arr, 0.0, beta) / beta
    out = beta * _ipow(u, q) / q + np.maximum(arr - beta, 0.0)
    return float(out) if out.ndim == 0 else out


def smoothed_relu_grad(z, beta: float, q: int):
    arr = np.asarray(z, dtype=np.float64)
    out = _ipow(np.clip(arr, 0.0, beta) / beta, q - 1)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- ECS


def class_signal(spec: SparseSpec, data: SparseData) -> np.ndarray:
    """Learnability term per (class, modality), from the true codes of sufficient samples."""
    out = np.zeros((spec.K, 2))
    for r in (0, 1):
        zq = np.where(data.sufficient[r], data.z[r] ** spec.q, 0.0)
        d = np.bincount(data.y, weights=zq, minlength=spec.K) / (data.n * spec.beta ** (spec.q - 1))
        out[:, r] = d ** (1.0 / (spec.q - 2))
    return out


def alignment(net: ToyNet) -> np.ndarray:
    """max over a class's neurons of the positive part of <w, M_j>."""
    proj = np.einsum("kld,dk->kl", net.weights, net.dictionary)
    return np.maximum(proj.max(1), 0.0)


def measure_ecs(nets: tuple[ToyNet, ToyNet], data: SparseData, spec: SparseSpec,
                signal: np.ndarray | None = None) -> EcsSnapshot:
    sig = class_signal(spec, data) if signal is None else signal
    al = np.stack([alignment(nets[0]), alignment(nets[1])], axis=1)
    return EcsSnapshot(al * sig, al, sig)


def check_trigger(snap: EcsSnapshot, beta: float) -> list[str]:
    out = []
    for l1, l2 in snap.lam:
        if l1 == 0 and l2 == 0:
            out.append("balanced_degenerate")
        elif l1 * (1 + beta) <= l2:
            out.append("r1_suppressed")
        elif l2 * (1 + beta) <= l1:
            out.append("r2_suppressed")
        else:
            out.append("balanced")
    return out


def classify_outcome(before: EcsSnapshot, after_stage1: EcsSnapshot, beta: float) -> list[str]:
    """Per-class label of how stage-one training moved the competition."""
    out = []
    for (b1, b2), (a1, a2) in zip(before.lam, after_stage1.lam):
        win = 0 if b1 >= b2 else 1
        bw, bl = (b1, b2) if win == 0 else (b2, b1)
        aw, al = (a1, a2) if win == 0 else (a2, a1)
        if al * (1 + beta) <= aw:
            widened = aw * bl > bw * al if bl > 0 and al > 0 else aw > bw
            out.append("amplified" if widened else "persistent")
        elif aw * (1 + beta) <= al:
            out.append("reversed")
        else:
            out.append("breaking")
    return out


def modal_label(labels: list[str]) -> str:
    """Most frequent label; ties go to the earlier entry of OUTCOMES."""
    counts = Counter(labels)
    return max(OUTCOMES, key=lambda o: (counts[o], -OUTCOMES.index(o)))


# ---------------------------------------------------------------- training


def _features(net: ToyNet, x: np.ndarray, spec: SparseSpec):
    """Per-class group sums of activations, plus activation slopes for the backward pass."""
    K, m, d = net.weights.shape
    pre = x @ net.weights.reshape(K * m, d).T
    u = np.clip(pre, 0.0, spec.beta)
    u *= 1.0 / spec.beta
    slope = _ipow(u, spec.q - 1)
    act = u * slope
    act *= spec.beta / spec.q
    pre -= spec.beta
    np.maximum(pre, 0.0, out=pre)
    act += pre
    return act.reshape(len(x), K, m).sum(2), slope


def logits(nets: tuple[ToyNet, ToyNet], data_x, mode: str, spec: SparseSpec) -> np.ndarray:
    if mode == "unimodal-1":
        return _features(nets[0], data_x[0], spec)[0]
    if mode == "unimodal-2":
        return _features(nets[1], data_x[1], spec)[0]
    if mode == "joint":
        return _features(nets[0], data_x[0], spec)[0] + _features(nets[1], data_x[1], spec)[0]
    raise ValueError(f"unknown mode {mode!r}")


def _ce_and_dlogits(f: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    z = f - f.max(1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(1, keepdims=True))
    p = np.exp(logp)
    n = len(y)
    loss = float(-logp[np.arange(n), y].mean())
    p[np.arange(n), y] -= 1.0
    return loss, p / n


def _weight_grad(net: ToyNet, x: np.ndarray, slope: np.ndarray, dlog: np.ndarray) -> np.ndarray:
    K, m, d = net.weights.shape
    coef = slope.reshape(len(x), K, m) * dlog[:, :, None]
    return (coef.reshape(len(x), K * m).T @ x).reshape(K, m, d)


def train(nets: tuple[ToyNet, ToyNet], data: SparseData, spec: SparseSpec, mode: str,
          epochs: int, eta: float, keep_nets: bool = False):
    """Full-batch gradient descent on cross-entropy of the chosen logits.

    The trajectory holds the snapshot before training and after every epoch.
    """
    if mode not in ("unimodal-1", "unimodal-2", "joint"):
        raise ValueError(f"unknown mode {mode!r}")
    nets = (nets[0].copy(), nets[1].copy())
    sig = class_signal(spec, data)
    traj = Trajectory()
    traj.snapshots.append(measure_ecs(nets, data, spec, sig))
    if keep_nets:
        traj.nets.append((nets[0].copy(), nets[1].copy()))
    train_1 = mode in ("unimodal-1", "joint")
    train_2 = mode in ("unimodal-2", "joint")
    for epoch in range(1, epochs + 1):
        f1, slope1 = _features(nets[0], data.x[0], spec) if train_1 else (0.0, None)
        f2, slope2 = _features(nets[1], data.x[1], spec) if train_2 else (0.0, None)
        loss, dlog = _ce_and_dlogits(f1 + f2, data.y)
        if not np.isfinite(loss):
            traj.aborted = True
            raise DivergenceError(epoch, traj)
        traj.losses.append(loss)
        if train_1:
            nets[0].weights -= eta * _weight_grad(nets[0], data.x[0], slope1, dlog)
        if train_2:
            nets[1].weights -= eta * _weight_grad(nets[1], data.x[1], slope2, dlog)
        traj.snapshots.append(measure_ecs(nets, data, spec, sig))
        if keep_nets:
            traj.nets.append((nets[0].copy(), nets[1].copy()))
    return nets, traj


def test_error(nets: tuple[ToyNet, ToyNet], mode: str, heldout: SparseData, spec: SparseSpec) -> float:
    f = logits(nets, heldout.x, mode, spec)
    return float(np.mean(np.argmax(f, 1) != heldout.y))


# ---------------------------------------------------------------- MI proxy


@dataclass(frozen=True)
class ProxyResult:
    rho: float
    degenerate: bool
    mi: tuple[float, ...]
    ecs_power: tuple[float, ...]


def class_probabilities(net: ToyNet, x: np.ndarray, spec: SparseSpec) -> np.ndarray:
    f, _ = _features(net, x, spec)
    z = f - f.max(1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(1, keepdims=True)


def encoder_mi(net: ToyNet, x: np.ndarray, y: np.ndarray, spec: SparseSpec, k: int, seed: int = 0) -> float:
    """I(Y; quantized class-probability output of one encoder) in bits."""
    codes = quantize(class_probabilities(net, x, spec), k, seed)
    table = np.zeros((k, int(y.max()) + 1))
    np.add.at(table, (codes, y), 1.0)
    return mutual_information_bits(table)


def mi_proxy_check(snapshots: list[EcsSnapshot], nets: list[tuple[ToyNet, ToyNet]], data: SparseData,
                   spec: SparseSpec, r: int = 1, k: int | None = None) -> ProxyResult:
    """Spearman correlation between I(Y; X^r) and sum_j ECS_{j,r}^q over checkpoints."""
    if len(snapshots) < 5 or len(snapshots) != len(nets):
        raise ValueError("need at least five checkpoints, each with its nets")
    k = 2 * spec.K if k is None else k
    power = np.array([float((s.lam[:, r - 1] ** spec.q).sum()) for s in snapshots])
    mi = np.array([encoder_mi(n[r - 1], data.x[r - 1], data.y, spec, k) for n in nets])
    if np.ptp(power) == 0 or np.ptp(mi) == 0:
        return ProxyResult(float("nan"), True, tuple(mi), tuple(power))
    rho = float(spearmanr(mi, power).statistic)
    return ProxyResult(rho, False, tuple(mi), tuple(power))


# ---------------------------------------------------------------- scripted scenarios


@dataclass(frozen=True)
class ScenarioConfig:
    eta: float = 0.002
    winner_epochs: int = 40
    loser_short: int = 1
    loser_max: int = 200
    joint_epochs: int = 50


@dataclass
class ScenarioResult:
    scenario: str
    seed: int
    pretrained: int | None
    epochs: int
    before: EcsSnapshot
    after: EcsSnapshot
    labels: list[str]
    label: str
    pretrain: Trajectory | None = None


def initial_winner(before: EcsSnapshot) -> int:
    """Modality with the larger total initial ECS (1 or 2)."""
    tot = before.lam.sum(0)
    return 1 if tot[0] >= tot[1] else 2


def _pick_epoch(traj: Trajectory, before: EcsSnapshot, beta: float, target: str,
                lo: int = 1) -> int:
    """Earliest epoch maximizing the number of classes labelled ``target``."""
    best_e, best_c = lo, -1
    for e in range(lo, len(traj.snapshots)):
        c = classify_outcome(before, traj.snapshots[e], beta).count(target)
        if c > best_c:
            best_e, best_c = e, c
    return best_e


def _label(name: str, spec: SparseSpec, epochs: int, who: int, before: EcsSnapshot,
           traj: Trajectory) -> ScenarioResult:
    after = traj.snapshots[epochs]
    labels = classify_outcome(before, after, spec.beta)
    return ScenarioResult(name, spec.seed, who, epochs, before, after, labels, modal_label(labels), traj)


def run_suite(spec: SparseSpec = SparseSpec(), cfg: ScenarioConfig = ScenarioConfig(),
              names: tuple[str, ...] = OUTCOMES, keep_nets: bool = False) -> dict[str, ScenarioResult]:
    """All requested scenarios for one seed.

    amplified: pretrain the initially stronger modality. persistent: a few
    epochs on the weaker one. reversed: the weaker one trained to its budget.
    breaking: the weaker one trained for the epoch count that puts the most
    classes inside the equilibrium band. The three loser scenarios read one
    shared pretraining trajectory.
    """
    for name in names:
        if name not in OUTCOMES:
            raise ValueError(f"scenario must be one of {OUTCOMES}")
    data = gen_sparse(spec)
    nets = init_nets(spec, data)
    before = measure_ecs(nets, data, spec)
    win = initial_winner(before)
    lose = 3 - win
    out: dict[str, ScenarioResult] = {}
    if "amplified" in names:
        _, traj = train(nets, data, spec, f"unimodal-{win}", cfg.winner_epochs, cfg.eta, keep_nets)
        out["amplified"] = _label("amplified", spec, cfg.winner_epochs, win, before, traj)
    loser_names = [n for n in names if n != "amplified"]
    if loser_names:
        _, traj = train(nets, data, spec, f"unimodal-{lose}", cfg.loser_max, cfg.eta, keep_nets)
        for name in loser_names:
            if name == "persistent":
                epochs = cfg.loser_short
            elif name == "reversed":
                epochs = cfg.loser_max
            else:
                epochs = _pick_epoch(traj, before, spec.beta, "breaking")
            out[name] = _label(name, spec, epochs, lose, before, traj)
    return {n: out[n] for n in names}


def run_scenario(name: str, spec: SparseSpec = SparseSpec(), cfg: ScenarioConfig = ScenarioConfig()) -> ScenarioResult:
    return run_suite(spec, cfg, (name,))[name]


def stage_two_error(spec: SparseSpec, balanced: bool, cfg: ScenarioConfig = ScenarioConfig(),
                    heldout_n: int | None = None) -> float:
    """Held-out joint-model error after joint training from a balanced or a competing start."""
    data = gen_sparse(spec)
    heldout = gen_sparse(spec, data.dictionaries, sample_seed=1, n=heldout_n or spec.n)
    nets = init_nets(spec, data)
    if balanced:
        before = measure_ecs(nets, data, spec)
        lose = 3 - initial_winner(before)
        _, traj = train(nets, data, spec, f"unimodal-{lose}", cfg.loser_max, cfg.eta, keep_nets=True)
        e = _pick_epoch(traj, before, spec.beta, "breaking")
        nets = traj.nets[e]
    nets, _ = train(nets, data, spec, "joint", cfg.joint_epochs, cfg.eta)
    return test_error(nets, "joint", heldout, spec)


def with_seed(spec: SparseSpec, seed: int) -> SparseSpec:
    return replace(spec, seed=seed)
