"""Maximal-diagonal-sum descrambler: the optimum is the nuclear norm."""

import logging

import numpy as np
import pandas as pd

from lib.descrambler import mds_descrambler
from lib.exp_helpers import VerificationResult, run_pool, seed_children, write_summary, write_table
from lib.lib_config import ExperimentConfig
from lib.lib_report import line_plot
from lib.linalg import random_orthogonal_batch

logger = logging.getLogger(__name__)


def _instance(args):
    i, ss, size, probes = args
    rng = np.random.default_rng(ss)
    W = rng.standard_normal((size, size))
    rep = mds_descrambler(W)
    nuclear = float(np.linalg.norm(W, "nuc"))
    Qs = random_orthogonal_batch(size, probes, rng)
    probe_best = float(np.max(np.einsum("bij,ji->b", Qs, W)))
    return {
        "instance": i,
        "trace_PW": float(np.trace(rep.P @ W)),
        "nuclear": nuclear,
        "rel_err": abs(float(np.trace(rep.P @ W)) - nuclear) / nuclear,
        "probe_best": probe_best,
        "probe_excess": (probe_best - nuclear) / nuclear,
    }


def o2_grid_max(W: np.ndarray, points: int) -> float:
    """max tr(Q W) over rotations and reflections on an angular grid."""
    th = np.linspace(0.0, 2.0 * np.pi, points, endpoint=False)
    c, s = np.cos(th), np.sin(th)
    rot = c * (W[0, 0] + W[1, 1]) + s * (W[1, 0] - W[0, 1])
    ref = c * (W[0, 0] - W[1, 1]) + s * (W[1, 0] + W[0, 1])
    return float(max(rot.max(), ref.max()))


def verify_mds(cfg: ExperimentConfig) -> VerificationResult:
    result = VerificationResult(cfg.name, cfg.out_dir)
    count = int(cfg.param("instances", 50))
    size = int(cfg.param("size", 8))
    probes = int(cfg.param("probes", 2000))
    children = seed_children(cfg.seeds[0], count + 1)

    rows = run_pool(_instance, [(i, children[i], size, probes) for i in range(count)], cfg.workers,
                    key=lambda a: a[0])
    table = pd.DataFrame(rows)
    write_table(result, table, "mds_random")
    line_plot(result, "mds_random", table["instance"].to_numpy(),
              {"tr(PW)": table["trace_PW"].to_numpy(), "best random Q": table["probe_best"].to_numpy()},
              xlabel="instance", ylabel="tr(QW)")
    result.check("max |tr(PW) - ||W||_*| / ||W||_*", table["rel_err"].max(), cfg.tol("nuclear_rel"))
    result.check("random probes never exceed the nuclear norm", table["probe_excess"].max(),
                 cfg.tol("probe_slack"))

    rng = np.random.default_rng(children[-1])
    grid_rows = []
    for i in range(10):
        W = rng.standard_normal((2, 2))
        nuclear = float(np.linalg.norm(W, "nuc"))
        best = o2_grid_max(W, int(cfg.param("grid", 3600)))
        grid_rows.append({"instance": i, "nuclear": nuclear, "grid_max": best,
                          "mds": float(np.trace(mds_descrambler(W).P @ W))})
    grid = pd.DataFrame(grid_rows)
    write_table(result, grid, "mds_o2_grid")
    result.check("O(2) grid never exceeds the nuclear norm",
                 float(((grid["grid_max"] - grid["nuclear"]) / grid["nuclear"]).max()), cfg.tol("probe_slack"))
    result.check("O(2) grid reaches the nuclear norm",
                 float(((grid["nuclear"] - grid["grid_max"]) / grid["nuclear"]).max()), cfg.tol("grid_rel"))

    I = np.eye(size)
    result.check("W = I gives P = I", float(np.linalg.norm(mds_descrambler(I).P - I)), 1e-12)

    write_summary(result)
    return result
