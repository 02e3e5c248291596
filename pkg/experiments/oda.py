"""Uniform-phase oscillatory inputs: the phase average of ||A s(alpha)||^2 is ||A||_F^2.

The Kronecker-delta integral behind it is checked by quadrature in complex
arithmetic, then the descrambler is run end to end on oscillatory data with
noise and compared against the limit for the real-encoded covariance.
"""

import logging

import numpy as np
import pandas as pd

from lib.descrambler import descramble_closed, theory_limit_noise, theory_limit_sigma
from lib.errors import ConfigError
from lib.exp_helpers import VerificationResult, seed_children, write_summary, write_table
from lib.lib_config import ExperimentConfig
from lib.lib_report import heatmap
from lib.linalg import random_admissible, subspace_dist
from lib.signal_models import oscillatory_sample, oscillatory_signal, signal_autocorr
from lib.stencils import stencil_from_spec

logger = logging.getLogger(__name__)


def phase_nodes(M: int, u: int, v: int, nodes: int) -> np.ndarray:
    """Midpoint nodes on [-uM, vM]; exact for the integer frequencies involved."""
    lo, hi = -u * M, v * M
    return lo + (np.arange(nodes) + 0.5) * (hi - lo) / nodes


def kronecker_integral(k: int, l: int, M: int, u: int, v: int, nodes: int) -> complex:
    """(1 / ((u + v) M)) * integral of exp(2 pi i (k - l) alpha / M) over [-uM, vM]."""
    alpha = phase_nodes(M, u, v, nodes)
    return complex(np.mean(np.exp(2j * np.pi * (k - l) * alpha / M)))


def verify_oda(cfg: ExperimentConfig) -> VerificationResult:
    result = VerificationResult(cfg.name, cfg.out_dir)
    spec = cfg.model
    if spec is None or spec.kind != "oscillatory":
        raise ConfigError("oda needs an oscillatory data model")
    M, u, v = spec.dim, spec.u, spec.v
    nodes = int(cfg.param("quad_nodes", 10_000))
    a_ss, w_ss, x_ss = seed_children(cfg.seeds[0], 3)

    # phase average of ||A s||^2 against ||A||_F^2, complex arithmetic
    S = oscillatory_signal(phase_nodes(M, u, v, nodes), M)
    rng = np.random.default_rng(a_ss)
    rows = []
    for i in range(int(cfg.param("instances", 5))):
        A = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
        avg = float(np.mean(np.sum(np.abs(A @ S) ** 2, axis=0)))
        fro = float(np.linalg.norm(A) ** 2)
        rows.append({"instance": i, "phase_average": avg, "fro2": fro, "rel_err": abs(avg - fro) / fro})
    avg_I = float(np.mean(np.sum(np.abs(S) ** 2, axis=0)))
    rows.append({"instance": "identity", "phase_average": avg_I, "fro2": float(M), "rel_err": abs(avg_I - M) / M})
    quad = pd.DataFrame(rows)
    write_table(result, quad, "phase_average")
    result.check("max relative error of the phase average", quad["rel_err"].max(), cfg.tol("quad_rel"))

    kron = pd.DataFrame([{"k": k, "l": l, "abs_value": abs(kronecker_integral(k, l, M, u, v, nodes))}
                         for k in range(M) for l in range(M) if k != l])
    write_table(result, kron, "kronecker")
    grid = np.eye(M)
    grid[kron["k"].to_numpy(), kron["l"].to_numpy()] = kron["abs_value"].to_numpy()
    heatmap(result, "kronecker", grid, title="|phase integral|", xlabel="l", ylabel="k")
    result.check("max |off-diagonal frequency integral|", kron["abs_value"].max(), cfg.tol("kronecker"))

    # end to end: oscillatory data with noise through a linear first layer
    m = int(cfg.param("m", 16))
    N = int(cfg.param("N", 100_000))
    D = stencil_from_spec(cfg.stencil.with_size(m))
    W = random_admissible(m, spec.input_dim, w_ss)
    E = signal_autocorr(spec, mode="analytic", encoding="real")
    lim = theory_limit_sigma(W, D, E, spec.sigma) if spec.sigma > 0 else theory_limit_noise(W, D)
    rep = descramble_closed(D, W @ oscillatory_sample(spec, N, x_ss, workers=cfg.workers))
    frame = rep.P.T @ lim.T_r
    dist = subspace_dist(frame, lim.U)
    dist_noise = subspace_dist(frame, theory_limit_noise(W, D).U)
    write_table(result, pd.DataFrame([{"N": N, "sigma": spec.sigma, "dist_to_limit": dist,
                                       "dist_to_noise_limit": dist_noise}]), "end_to_end")
    result.check(f"aligned distance to the signal-plus-noise limit at N={N}", dist, cfg.tol("dist_max"))
    result.record("aligned distance to the noise-only limit T_r U_1^T", dist_noise)

    write_summary(result)
    return result
