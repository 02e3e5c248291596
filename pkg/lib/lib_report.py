import logging
from pathlib import Path
from typing import List, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from lib.exp_helpers import VerificationResult, add_figure, read_summary  # noqa: E402
from lib.lib_io import utc_now, write_json  # noqa: E402

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["experiment", "check", "measured", "op", "threshold", "control", "status"]


# -------------------------
# Figures
# -------------------------
def line_plot(result: VerificationResult, name: str, x, series: Mapping[str, Sequence[float]],
              xlabel: str = "", ylabel: str = "", title: str = "", logx: bool = False,
              logy: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, y in series.items():
        ax.plot(x, y, marker="o", markersize=3, label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title or result.name)
    if len(series) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    return _save(fig, result, name)


def heatmap(result: VerificationResult, name: str, M, title: str = "", xlabel: str = "",
            ylabel: str = "", cmap: str = "viridis") -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(np.asarray(M, dtype=float), aspect="auto", cmap=cmap, interpolation="nearest")
    fig.colorbar(im, ax=ax)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title or name)
    return _save(fig, result, name)


def _save(fig, result: VerificationResult, name: str) -> Path:
    path = Path(result.out_dir) / f"{name}.svg"
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return add_figure(result, path)


# -------------------------
# Summary table
# -------------------------
def summary_frame(results: List[VerificationResult]) -> pd.DataFrame:
    rows = []
    for res in results:
        for c in res.checks:
            rows.append({
                "experiment": res.name,
                "check": c.description,
                "measured": c.measured,
                "op": c.op,
                "threshold": "" if c.threshold is None else str(c.threshold),
                "control": c.control,
                "status": "ok" if c.ok else "FAIL",
            })
        if not res.checks:
            rows.append({"experiment": res.name, "check": "(no checks)", "measured": np.nan, "op": "",
                         "threshold": "", "control": False, "status": "FAIL"})
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def render_summary(df: pd.DataFrame) -> str:
    if df.empty:
        return "no results"
    shown = df.copy()
    shown["measured"] = shown["measured"].map(lambda v: f"{v:.4g}")
    failed = int((shown["status"] == "FAIL").sum())
    verdict = "ALL CHECKS OK" if failed == 0 else f"{failed} CHECK(S) FAILED"
    return shown.to_string(index=False) + "\n\n" + verdict + "\n"


def write_suite_summary(out_dir, results: List[VerificationResult]):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    df = summary_frame(results)
    write_json({
        "created": utc_now(),
        "passed": bool(results) and all(r.passed for r in results),
        "experiments": {r.name: {"passed": r.passed, "summary": f"{r.name}/summary.json"} for r in results},
    }, out / "summary.json")
    text = render_summary(df)
    (out / "summary.txt").write_text(text)
    logger.info("Wrote suite summary for %d experiments to %s", len(results), out)
    return out / "summary.json", out / "summary.txt"


def load_results(out_dir, names: Optional[Sequence[str]] = None) -> List[VerificationResult]:
    """Re-read out_dir/<experiment>/summary.json files, in `names` order when given."""
    out = Path(out_dir)
    if names is None:
        paths = sorted(out.glob("*/summary.json"))
    else:
        paths = [out / n / "summary.json" for n in names if (out / n / "summary.json").exists()]
    return [read_summary(p) for p in paths]
