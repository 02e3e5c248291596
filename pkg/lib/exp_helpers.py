import logging
import math
import operator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from lib.lib_io import read_json, utc_now, write_json
from lib.linalg import seed_sequence
from lib.network import TrainConfig

logger = logging.getLogger(__name__)

_OPS = {
    "<=": operator.le,
    "<": operator.lt,
    ">=": operator.ge,
    ">": operator.gt,
}


# -------------------------
# Checks and results
# -------------------------
@dataclass(frozen=True)
class Check:
    description: str
    measured: float
    threshold: Any
    passed: bool
    op: str = "<="
    control: bool = False

    @property
    def ok(self) -> bool:
        """A negative control is ok when its check fails."""
        return self.passed != self.control

    def to_dict(self) -> dict:
        return {
            "description": self.description,
            "measured": self.measured,
            "threshold": self.threshold,
            "op": self.op,
            "passed": self.passed,
            "control": self.control,
            "ok": self.ok,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Check":
        return cls(description=d["description"], measured=d["measured"], threshold=d["threshold"],
                   passed=bool(d["passed"]), op=d.get("op", "<="), control=bool(d.get("control", False)))


def evaluate(measured: float, threshold, op: str = "<=") -> bool:
    """measured op threshold; op 'in' takes a closed [lo, hi] window."""
    if measured is None or (isinstance(measured, float) and math.isnan(measured)):
        return False
    if op == "in":
        lo, hi = threshold
        return lo <= measured <= hi
    if op == "info":
        return True
    if op not in _OPS:
        raise ValueError(f"unknown comparison {op!r}")
    return bool(_OPS[op](measured, threshold))


@dataclass
class VerificationResult:
    name: str
    out_dir: Path
    checks: List[Check] = field(default_factory=list)
    tables: List[str] = field(default_factory=list)
    figures: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.ok for c in self.checks)

    def check(self, description: str, measured, threshold, op: str = "<=", control: bool = False) -> Check:
        measured = float(measured) if measured is not None else float("nan")
        c = Check(description=description, measured=measured, threshold=threshold,
                  passed=evaluate(measured, threshold, op), op=op, control=control)
        self.checks.append(c)
        tag = "control" if control else "check"
        logger.info("[%s] %s %s: measured=%.6g %s %s -> %s", self.name, tag, description, measured, op,
                    threshold, "ok" if c.ok else "FAIL")
        return c

    def record(self, description: str, measured) -> Check:
        """Informational value; always ok."""
        return self.check(description, measured, None, op="info")

    def note(self, text: str):
        logger.info("[%s] %s", self.name, text)
        self.notes.append(text)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "tables": list(self.tables),
            "figures": list(self.figures),
            "notes": list(self.notes),
            "created": utc_now(),
        }

    @classmethod
    def from_dict(cls, d: dict, out_dir: Optional[Path] = None) -> "VerificationResult":
        return cls(name=d["name"], out_dir=Path(out_dir or "."),
                   checks=[Check.from_dict(c) for c in d.get("checks", [])],
                   tables=list(d.get("tables", [])), figures=list(d.get("figures", [])),
                   notes=list(d.get("notes", [])))


# -------------------------
# Emission
# -------------------------
def write_table(result: VerificationResult, df: pd.DataFrame, name: str) -> Path:
    path = Path(result.out_dir) / f"{name}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g")
    result.tables.append(path.name)
    return path


def add_figure(result: VerificationResult, path: Path) -> Path:
    result.figures.append(Path(path).name)
    return path


def write_summary(result: VerificationResult) -> Path:
    path = write_json(result.to_dict(), Path(result.out_dir) / "summary.json")
    logger.info("[%s] %s (%d checks) -> %s", result.name, "PASS" if result.passed else "FAIL",
                len(result.checks), path)
    return path


def read_summary(path) -> VerificationResult:
    path = Path(path)
    return VerificationResult.from_dict(read_json(path), out_dir=path.parent)


# -------------------------
# Sweeps
# -------------------------
def run_pool(fn: Callable, items: Iterable, workers: int = 1, key: Optional[Callable] = None) -> list:
    """map fn over items with a thread pool; results come back sorted by key (default: the item)."""
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, items))
    else:
        results = [fn(item) for item in items]
    order = sorted(range(len(items)), key=lambda i: (key or (lambda x: x))(items[i]))
    return [results[i] for i in order]


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def mean_std(values: Sequence[float]):
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def seed_children(seed, count: int) -> List[np.random.SeedSequence]:
    return seed_sequence(seed).spawn(count)


def train_config(params: Mapping[str, Any], seed: int) -> TrainConfig:
    """TrainConfig from an experiment's [net] table; unrelated keys (init_scale, ...) are ignored."""
    known = set(TrainConfig.__dataclass_fields__) - {"seed"}
    return TrainConfig(seed=seed, **{k: v for k, v in params.items() if k in known})
