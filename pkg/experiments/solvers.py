"""Closed-form descrambler vs Riemannian descent vs random probes."""

import logging

import numpy as np
import pandas as pd

from lib.descrambler import descramble_closed, descramble_manifold
from lib.exp_helpers import VerificationResult, run_pool, seed_children, write_summary, write_table
from lib.lib_config import ExperimentConfig
from lib.lib_report import line_plot
from lib.linalg import random_admissible, random_orthogonal_batch
from lib.signal_models import sample_noise
from lib.stencils import stencil_from_spec

logger = logging.getLogger(__name__)


def probe_etas(D: np.ndarray, A: np.ndarray, Qs: np.ndarray) -> np.ndarray:
    """eta(Q) = tr(D^T D Q C Q^T) for a stack of orthogonal Q."""
    G = D.T @ D
    C = A @ A.T / A.shape[1]
    return np.sum((G @ Qs) * (Qs @ C), axis=(1, 2))


def _instance(args):
    i, ss, m, N, stencil, opts, probes = args
    w_ss, x_ss, p_ss, r_ss = ss.spawn(4)
    D = stencil_from_spec(stencil.with_size(m))
    A = random_admissible(m, m, w_ss) @ sample_noise(m, N, x_ss)
    closed = descramble_closed(D, A)
    manifold = descramble_manifold(D, A, seed=r_ss, **opts)
    scale = max(1.0, closed.objective)
    etas = probe_etas(D, A, random_orthogonal_batch(m, probes, p_ss))
    logger.info("solvers: instance %d (m=%d) closed=%.10g manifold=%.10g in %d iterations",
                i, m, closed.objective, manifold.objective, manifold.iterations)
    return {
        "instance": i,
        "m": m,
        "eta_closed": closed.objective,
        "eta_manifold": manifold.objective,
        "rel_gap": abs(closed.objective - manifold.objective) / scale,
        "iterations": manifold.iterations,
        "stalled": manifold.stalled,
        "probe_min": float(etas.min()),
        "probe_margin": float((etas.min() - closed.objective) / scale),
        "orth_err": manifold.orthogonality_error(),
    }


def verify_solvers(cfg: ExperimentConfig) -> VerificationResult:
    result = VerificationResult(cfg.name, cfg.out_dir)
    count = int(cfg.param("instances", 20))
    sizes = [int(m) for m in cfg.param("sizes", [8, 16, 32])]
    N = int(cfg.param("N", 1024))
    probes = int(cfg.param("probes", 500))
    opts = {"max_iters": int(cfg.param("max_iters", 5000)), "restarts": int(cfg.param("restarts", 2))}
    children = seed_children(cfg.seeds[0], count)

    jobs = [(i, children[i], sizes[i % len(sizes)], N, cfg.stencil, opts, probes) for i in range(count)]
    table = pd.DataFrame(run_pool(_instance, jobs, cfg.workers, key=lambda a: a[0]))
    write_table(result, table, "solver_agreement")
    line_plot(result, "solver_agreement", table["instance"].to_numpy(),
              {"closed form": table["eta_closed"].to_numpy(), "manifold": table["eta_manifold"].to_numpy(),
               "best random Q": table["probe_min"].to_numpy()},
              xlabel="instance", ylabel="eta", logy=True)

    result.check("max |eta_closed - eta_manifold| / max(1, eta)", table["rel_gap"].max(), cfg.tol("eta_rel"))
    result.check("random probes never beat the closed form", -table["probe_margin"].min(), cfg.tol("probe_rel"))
    result.record("manifold runs that stalled", int(table["stalled"].sum()))
    result.record("total random probes", probes * count)

    write_summary(result)
    return result
