"""File codecs: distributions (JSON/CSV), result documents, and metadata sidecars."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .dist import Joint3, build_joint
from .oracle import OracleResult
from .solver import PidResult

RNG_NAME = "numpy.random.PCG64"


def _clean(x: Any) -> Any:
    """Make values JSON-safe and stable: numpy scalars to Python, non-finite to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def dumps(doc: Any) -> str:
    return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


def write_text(path: str | Path | None, text: str) -> None:
    if path is None or str(path) == "-":
        import sys

        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- distributions


def joint_to_doc(j: Joint3) -> dict:
    return {"dims": list(j.dims), "probs": j.probs.ravel(order="C").tolist()}


def joint_from_doc(doc: dict) -> Joint3:
    try:
        dims = [int(d) for d in doc["dims"]]
        probs = np.asarray(doc["probs"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError("distribution JSON needs 'dims' and 'probs'") from exc
    if len(dims) != 3 or probs.size != int(np.prod(dims)):
        raise ValueError("'probs' length does not match 'dims'")
    return build_joint(probs.reshape(dims))


def joint_to_csv(j: Joint3) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x1", "x2", "y", "p"])
    a, b, c = j.dims
    for i in range(a):
        for k in range(b):
            for y in range(c):
                w.writerow([i, k, y, repr(float(j.probs[i, k, y]))])
    return buf.getvalue()


def joint_from_csv(text: str) -> Joint3:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or not {"x1", "x2", "y", "p"} <= set(rows[0]):
        raise ValueError("distribution CSV needs columns x1,x2,y,p")
    idx = np.array([[int(r["x1"]), int(r["x2"]), int(r["y"])] for r in rows])
    if idx.min() < 0:
        raise ValueError("negative index in distribution CSV")
    t = np.zeros(tuple(idx.max(0) + 1))
    for (i, k, y), r in zip(idx, rows):
        t[i, k, y] += float(r["p"])
    return build_joint(t)


def read_joint(path: str | Path) -> Joint3:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).lower().endswith(".csv") or text.lstrip().startswith("x1"):
        return joint_from_csv(text)
    return joint_from_doc(json.loads(text))


def write_joint(path: str | Path | None, j: Joint3, fmt: str = "json") -> None:
    write_text(path, joint_to_csv(j) if fmt == "csv" else dumps(joint_to_doc(j)))


# ---------------------------------------------------------------- results


def pid_to_doc(res: PidResult, include_q: bool = True) -> dict:
    doc = {
        "r": res.r,
        "u1": res.u1,
        "u2": res.u2,
        "s": res.s,
        "i_joint": res.i_joint,
        "iters_used": res.iters_used,
        "converged": res.converged,
        "raw": {"r": res.raw[0], "u1": res.raw[1], "u2": res.raw[2], "s": res.raw[3]},
    }
    if include_q:
        doc["q_star"] = joint_to_doc(res.q_star)
    return doc


def oracle_to_doc(res: OracleResult, include_q: bool = True) -> dict:
    return {
        "method": res.method,
        "objective_value": res.objective_value,
        "steps": res.steps,
        "pid": pid_to_doc(res.pid, include_q),
    }


# ---------------------------------------------------------------- bench reports


@dataclass
class BenchRow:
    task: str
    method: str
    r: float
    u1: float
    u2: float
    s: float
    mae: float | None = None
    wall_time: float | None = None
    iters: int | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class BenchReport:
    suite: str
    rows: list[BenchRow]
    metadata: dict

    def to_doc(self, timing: bool = False) -> dict:
        rows = []
        for r in self.rows:
            d = asdict(r)
            if not timing:
                d.pop("wall_time")
            rows.append(d)
        return {"suite": self.suite, "rows": rows, "metadata": self.metadata}

    @classmethod
    def from_doc(cls, doc: dict) -> "BenchReport":
        rows = [BenchRow(**{k: v for k, v in r.items()}) for r in doc["rows"]]
        return cls(doc["suite"], rows, doc["metadata"])

    def to_json(self, timing: bool = False) -> str:
        return dumps(self.to_doc(timing))

    def to_csv(self, timing: bool = False) -> str:
        buf = io.StringIO()
        cols = ["task", "method", "r", "u1", "u2", "s", "mae", "iters"] + (["wall_time"] if timing else [])
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            d = asdict(r)
            w.writerow(["" if d[c] is None else (repr(d[c]) if isinstance(d[c], float) else d[c]) for c in cols])
        return buf.getvalue()


# ---------------------------------------------------------------- sidecars


def sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".meta.json")


def metadata(command: str, options: dict, seeds: dict) -> dict:
    return {
        "command": command,
        "options": _clean(options),
        "seeds": seeds,
        "rng": RNG_NAME,
        "version": __version__,
    }


def write_sidecar(path: str | Path, meta: dict) -> None:
    sidecar_path(path).write_text(dumps(meta), encoding="utf-8")
