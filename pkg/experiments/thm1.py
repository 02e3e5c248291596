"""Large-data limit of the descrambler on noise inputs.

For a linear first layer W and isotropic inputs the closed-form descrambler
converges to T_r U_1^T, the smoothest modes of the stencil paired with the
left singular vectors of W. The sweep measures the sign-aligned distance
between P_N^T T_r and U_1 as N grows and fits the Monte Carlo rate.
"""

import logging

import numpy as np
import pandas as pd

from lib.descrambler import align_descrambler, descramble_closed, rescale_homomorphism, theory_limit_noise
from lib.exp_helpers import VerificationResult, loglog_slope, run_pool, write_summary, write_table
from lib.lib_config import ExperimentConfig
from lib.lib_report import line_plot
from lib.linalg import econ_svd, is_admissible, random_admissible, random_orthogonal, subspace_dist
from lib.signal_models import sample_noise
from lib.stencils import smooth_basis_of, stencil_from_spec

logger = logging.getLogger(__name__)

MAX_REDRAWS = 10


def admissible_weight(m: int, d: int, seed: int):
    """random_admissible(m, d), redrawn with the next seed until admissible."""
    for attempt in range(MAX_REDRAWS):
        W = random_admissible(m, d, seed + attempt)
        if is_admissible(W):
            return W, seed + attempt
    raise RuntimeError(f"no admissible weight after {MAX_REDRAWS} draws from seed {seed}")


def _point(args):
    seed, N, W, D, T_r, U = args
    X = sample_noise(W.shape[1], int(N), np.random.SeedSequence([seed, int(N)]))
    rep = descramble_closed(D, W @ X)
    phi = rescale_homomorphism(rep.P, T_r, U)
    signs = np.sign(np.diag(phi))
    signs[signs == 0] = 1.0
    return {
        "seed": seed,
        "N": int(N),
        "dist": subspace_dist(rep.P.T @ T_r, U),
        "phi_dist": float(np.linalg.norm(phi - np.diag(signs))),
        "eta": rep.objective,
        "_P": rep.P,
    }


def verify_thm1(cfg: ExperimentConfig) -> VerificationResult:
    result = VerificationResult(cfg.name, cfg.out_dir)
    m = int(cfg.param("m", 16))
    d = int(cfg.param("d", 24))
    Ns = sorted(int(n) for n in cfg.sweep_values("N", [100, 1000, 10000, 100000]))
    D = stencil_from_spec(cfg.stencil.with_size(m))

    jobs = []
    weights = {}
    for seed in cfg.seeds:
        W, used = admissible_weight(m, d, seed)
        if used != seed:
            result.note(f"seed {seed}: weight redrawn with seed {used} (not admissible)")
        lim = theory_limit_noise(W, D)
        weights[seed] = (W, lim)
        jobs += [(seed, N, W, D, lim.T_r, lim.U) for N in Ns]
        logger.info("thm1: seed %d queued %d sweep points", seed, len(Ns))

    rows = run_pool(_point, jobs, cfg.workers, key=lambda a: (a[0], a[1]))
    last = {r["seed"]: r.pop("_P") for r in rows if r["N"] == Ns[-1]}
    for r in rows:
        r.pop("_P", None)
    table = pd.DataFrame(rows)
    write_table(result, table, "dist_vs_N")

    mean = table.groupby("N")["dist"].mean()
    line_plot(result, "dist_vs_N", mean.index.to_numpy(), {"mean aligned distance": mean.to_numpy()},
              xlabel="N", ylabel="dist", title="descrambler vs large-N limit", logx=True, logy=True)

    at_max = table[table["N"] == Ns[-1]]["dist"]
    result.check(f"max dist at N={Ns[-1]}", at_max.max(), cfg.tol("dist_max"))
    result.check("log-log slope of mean dist vs N", loglog_slope(mean.index, mean.to_numpy()),
                 cfg.tol("slope"), op="in")

    # left singular vectors of the descrambled weight against the smooth modes
    cos_rows = []
    for seed, P in last.items():
        W, lim = weights[seed]
        U_d = econ_svd(P @ W).U
        cos = np.abs(np.sum(U_d * lim.T_r, axis=0))
        cos_rows += [{"seed": seed, "mode": j, "cosine": float(c)} for j, c in enumerate(cos)]
    cosines = pd.DataFrame(cos_rows)
    write_table(result, cosines, "mode_cosines")
    result.check("min cosine of descrambled singular vectors with smooth modes", cosines["cosine"].min(),
                 cfg.tol("cosine_min"), op=">=")

    # W whose left singular vectors are already the smooth modes: the limit acts as I up to signs
    T = smooth_basis_of(D).vectors
    rng = np.random.default_rng(cfg.seeds[0])
    V = random_orthogonal(d, rng)[:, :m]
    W_T = (T[:, :m] * (0.6 ** np.arange(m))) @ V.T
    fixed = align_descrambler(theory_limit_noise(W_T, D).P_limit, np.eye(m), D)
    result.check("limit for U_1 = T_r is the identity (after sign alignment)",
                 float(np.linalg.norm(fixed - np.eye(m))), cfg.tol("fixed_point"))

    write_summary(result)
    return result
