"""Synergy-aware asynchronous controller for two-encoder training.

During the unimodal stage exactly one encoder trains per epoch. Every
``probe_freq`` epochs the controller quantizes both encoders' embeddings, runs
the PID solver, pauses whichever modality holds far more unique information,
and ends the stage once synergy falls below a fraction of its best value.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .dist import measures, quantize_embeddings
from .solver import SolverConfig, solve

UNIMODAL, JOINT = "unimodal", "joint"
KEEP, TRANSITION = "keep", "transition"
SWITCH = {1: "switch_to_1", 2: "switch_to_2"}


class ControllerError(RuntimeError):
    pass


class TrainerError(RuntimeError):
    def __init__(self, epoch: int, cause: BaseException):
        super().__init__(f"trainer failed at epoch {epoch}: {cause}")
        self.epoch = epoch
        self.__cause__ = cause


@dataclass(frozen=True)
class ControllerConfig:
    probe_freq: int = 5
    tau_u: float = 5.0
    lambda_s: float = 0.95
    epsilon: float = 1e-8
    max_unimodal_epochs: int = 100
    initial_modality: int = 1
    metric: str = "pid"

    def __post_init__(self) -> None:
        if not self.tau_u > 1:
            raise ValueError("tau_u must exceed 1")
        if not 0 < self.lambda_s <= 1:
            raise ValueError("lambda_s must lie in (0, 1]")
        if self.probe_freq < 1 or self.max_unimodal_epochs < 0:
            raise ValueError("probe_freq must be positive and max_unimodal_epochs nonnegative")
        if self.initial_modality not in (1, 2):
            raise ValueError("initial_modality must be 1 or 2")
        if self.metric not in ("pid", "mi"):
            raise ValueError("metric must be 'pid' or 'mi'")

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(self.tau_u):
            d["tau_u"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerConfig":
        d = dict(d)
        if d.get("tau_u") == "inf":
            d["tau_u"] = math.inf
        return cls(**d)


PRESETS = {
    "default": ControllerConfig(),
    "tuned": ControllerConfig(tau_u=1.5, lambda_s=0.80),
}


@dataclass(frozen=True)
class ProbeRecord:
    epoch: int
    u1: float
    u2: float
    r: float
    s: float
    decision: str
    active_after: int


@dataclass
class ControllerState:
    stage: str = UNIMODAL
    active_modality: int = 1
    best_synergy: float = -1.0
    epoch: int = 0
    history: list[ProbeRecord] = field(default_factory=list)


class TrainerPort(Protocol):
    def train_one_epoch(self, modality: int) -> None: ...

    def snapshot_embeddings(self) -> tuple[Sequence, Sequence, Sequence[int]]: ...


@dataclass(frozen=True)
class Measurement:
    u1: float
    u2: float
    r: float
    s: float


def probe(trainer: TrainerPort, k: int, cfg: SolverConfig = SolverConfig(), seed: int = 0,
          metric: str = "pid") -> Measurement:
    """Quantize a read-only snapshot and decompose it.

    With ``metric='mi'`` the u1/u2 slots carry I(Y;X1) and I(Y;X2) instead of the
    unique atoms, for comparison runs of a plain mutual-information balancer.
    """
    v1, v2, labels = trainer.snapshot_embeddings()
    if len(labels) == 0:
        raise ControllerError("empty snapshot")
    joint = quantize_embeddings(v1, v2, labels, k, seed=seed)
    res = solve(joint, cfg)
    if metric == "mi":
        m = measures(joint)
        return Measurement(m.i_x1_y, m.i_x2_y, res.r, res.s)
    return Measurement(res.u1, res.u2, res.r, res.s)


def step(state: ControllerState, measurement, cfg: ControllerConfig) -> tuple[ControllerState, str]:
    """One probe's worth of control. Balance first, then the transition test."""
    if state.stage != UNIMODAL:
        raise ControllerError("step called after the transition to joint training")
    if isinstance(measurement, Measurement):
        u1, u2, r, s = measurement.u1, measurement.u2, measurement.r, measurement.s
    else:
        u1, u2, s = measurement[:3]
        r = measurement[3] if len(measurement) > 3 else 0.0

    active = state.active_modality
    if u1 / (u2 + cfg.epsilon) > cfg.tau_u:
        active = 2
    elif u2 / (u1 + cfg.epsilon) > cfg.tau_u:
        active = 1
    decision = SWITCH[active] if active != state.active_modality else KEEP

    stage, best = state.stage, state.best_synergy
    if s < cfg.lambda_s * best and best > 0:
        stage, decision = JOINT, TRANSITION
    else:
        best = max(best, s)

    rec = ProbeRecord(state.epoch, float(u1), float(u2), float(r), float(s), decision, active)
    new = replace(state, stage=stage, active_modality=active, best_synergy=best,
                  history=state.history + [rec])
    return new, decision


@dataclass
class ScheduleLog:
    state: ControllerState
    trained: list[int]

    @property
    def transition_epoch(self) -> int | None:
        if self.state.stage == JOINT:
            return self.state.history[-1].epoch
        return None


def run(
    trainer: TrainerPort,
    cfg: ControllerConfig = ControllerConfig(),
    solver_cfg: SolverConfig = SolverConfig(),
    k: int = 20,
    seed: int = 0,
    prober: Callable[[TrainerPort, int], Measurement] | None = None,
) -> ScheduleLog:
    """Unimodal stage loop. ``prober`` replaces the quantize-and-solve probe, e.g. for scripted traces."""
    state = ControllerState(active_modality=cfg.initial_modality)
    trained: list[int] = []

    def default_prober(t: TrainerPort, _epoch: int) -> Measurement:
        return probe(t, k, solver_cfg, seed, cfg.metric)

    measure = prober or default_prober
    for epoch in range(1, cfg.max_unimodal_epochs + 1):
        state.epoch = epoch
        if epoch % cfg.probe_freq == 0:
            state, decision = step(state, measure(trainer, epoch), cfg)
            if decision == TRANSITION:
                break
        try:
            trainer.train_one_epoch(state.active_modality)
        except Exception as exc:
            raise TrainerError(epoch, exc) from exc
        trained.append(state.active_modality)
    return ScheduleLog(state, trained)


def replay(records: Iterable[ProbeRecord], cfg: ControllerConfig) -> list[str]:
    """Re-derive the decisions of a logged history from its measurements alone."""
    state = ControllerState(active_modality=cfg.initial_modality)
    out = []
    for rec in records:
        state.epoch = rec.epoch
        state, decision = step(state, (rec.u1, rec.u2, rec.s, rec.r), cfg)
        out.append(decision)
        if decision == TRANSITION:
            break
    return out


def probe_log_text(log: ScheduleLog, cfg: ControllerConfig, solver_cfg: SolverConfig,
                   quantizer_seed: int, extra: dict | None = None) -> str:
    """JSON-lines probe log: a header with both configs, then one record per probe."""
    header = {
        "type": "header",
        "controller": cfg.to_dict(),
        "solver": asdict(solver_cfg),
        "quantizer_seed": quantizer_seed,
    }
    if extra:
        header.update(extra)
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(asdict(rec), sort_keys=True) for rec in log.state.history]
    return "\n".join(lines) + "\n"


def write_probe_log(path, log: ScheduleLog, cfg: ControllerConfig, solver_cfg: SolverConfig,
                    quantizer_seed: int, extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(probe_log_text(log, cfg, solver_cfg, quantizer_seed, extra))


def read_probe_log(path) -> tuple[dict, list[ProbeRecord]]:
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("type") != "header":
        raise ValueError("probe log lacks a header line")
    return lines[0], [ProbeRecord(**rec) for rec in lines[1:]]


# ---------------------------------------------------------------- simulated trainers


@dataclass(frozen=True)
class SimScenario:
    """Learning curves of a simulated two-encoder system.

    Each modality encodes one private label bit and one half of a parity bit.
    ``rate`` sets how fast the private bit becomes readable; the parity half
    improves at ``rate`` until ``peak`` epochs of training and then degrades
    at ``decay`` per epoch, as an over-specialized encoder would forget it.
    """

    rate1: float
    rate2: float
    peak1: float = math.inf
    peak2: float = math.inf
    decay1: float = 0.0
    decay2: float = 0.0
    n_samples: int = 4000


SCENARIOS = {
    "balanced": SimScenario(rate1=0.08, rate2=0.08),
    "dominant": SimScenario(rate1=0.30, rate2=0.03),
    "overfit": SimScenario(rate1=0.12, rate2=0.12, peak1=8, peak2=8, decay1=0.08, decay2=0.08),
}


def _clip01(x: float) -> float:
    return min(1.0, max(0.0, x))


class SimTrainer:
    """Discrete stand-in for two encoders.

    Labels are (a, b, d xor e) for four fair bits a, b, d, e. Encoder 1 emits a
    noisy (a, d) symbol and encoder 2 a noisy (b, e) symbol; each component is
    replaced by a fair coin with probability 1 - quality. Symbols are integer
    codes, so a quantizer with at least four clusters reproduces them exactly.
    """

    def __init__(self, scenario: SimScenario | str, seed: int = 0):
        self.scenario = SCENARIOS[scenario] if isinstance(scenario, str) else scenario
        self.seed = seed
        self.epochs = [0, 0]

    def train_one_epoch(self, modality: int) -> None:
        if modality not in (1, 2):
            raise ValueError("modality must be 1 or 2")
        self.epochs[modality - 1] += 1

    def qualities(self) -> tuple[float, float, float, float]:
        sc = self.scenario
        out = []
        for t, rate, peak, decay in (
            (self.epochs[0], sc.rate1, sc.peak1, sc.decay1),
            (self.epochs[1], sc.rate2, sc.peak2, sc.decay2),
        ):
            private = 1.0 - math.exp(-rate * t)
            rise = 1.0 - math.exp(-rate * min(t, peak))
            shared = _clip01(rise - decay * max(0.0, t - peak))
            out += [private, shared]
        return out[0], out[1], out[2], out[3]

    def snapshot_embeddings(self):
        qa, qd, qb, qe = self.qualities()
        rng = np.random.default_rng([self.seed, self.epochs[0], self.epochs[1]])
        n = self.scenario.n_samples
        a, b, d, e = (rng.integers(0, 2, n) for _ in range(4))

        def noisy(bit: np.ndarray, quality: float) -> np.ndarray:
            keep = rng.random(n) < quality
            return np.where(keep, bit, rng.integers(0, 2, n))

        x1 = 2 * noisy(a, qa) + noisy(d, qd)
        x2 = 2 * noisy(b, qb) + noisy(e, qe)
        y = 4 * a + 2 * b + (d ^ e)
        return x1.astype(float), x2.astype(float), y


class ScriptedTrainer:
    """Trainer whose probes return a fixed list of measurements, one per probe."""

    def __init__(self, trace: Sequence[Sequence[float]]):
        self.trace = [tuple(t) for t in trace]
        self.calls = 0
        self.trained: list[int] = []

    def train_one_epoch(self, modality: int) -> None:
        self.trained.append(modality)

    def snapshot_embeddings(self):
        raise ControllerError("scripted trainers are measured through scripted_prober")

    def scripted_prober(self, _trainer, _epoch) -> Measurement:
        if self.calls >= len(self.trace):
            raise ControllerError("scripted trace exhausted")
        u1, u2, s = self.trace[self.calls][:3]
        self.calls += 1
        return Measurement(u1, u2, 0.0, s)


def make_trainer(spec: str, seed: int = 0) -> SimTrainer:
    """Parse 'sim:<scenario>'."""
    kind, _, name = spec.partition(":")
    if kind != "sim" or name not in SCENARIOS:
        raise ValueError(f"trainer must be sim:<{'|'.join(SCENARIOS)}>")
    return SimTrainer(name, seed)
