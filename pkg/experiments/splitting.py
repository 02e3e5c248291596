"""eta splits into a signal term plus sigma^2 times a noise term."""

import logging
import math

import numpy as np
import pandas as pd

from lib.descrambler import eta_smoothness
from lib.errors import ConfigError
from lib.exp_helpers import VerificationResult, seed_children, write_summary, write_table
from lib.lib_config import ExperimentConfig
from lib.lib_report import line_plot
from lib.linalg import random_admissible, random_orthogonal
from lib.signal_models import oscillatory_sample, signal_autocorr
from lib.stencils import stencil_from_spec

logger = logging.getLogger(__name__)


def split_terms(D: np.ndarray, P: np.ndarray, W: np.ndarray, E: np.ndarray):
    """(tr(D P W E W^T P^T D^T), ||D P W||_F^2)."""
    DPW = D @ P @ W
    return float(np.trace(DPW @ E @ DPW.T)), float(np.sum(DPW * DPW))


def verify_splitting(cfg: ExperimentConfig) -> VerificationResult:
    result = VerificationResult(cfg.name, cfg.out_dir)
    spec = cfg.model
    if spec is None or spec.kind != "oscillatory":
        raise ConfigError("splitting needs an oscillatory data model")
    m = int(cfg.param("m", 16))
    N = int(cfg.param("N", 100_000))
    probes = int(cfg.param("probes", 5))
    D = stencil_from_spec(cfg.stencil.with_size(m))
    E = signal_autocorr(spec, mode="analytic", encoding="real")

    w_ss, x_ss, p_ss = seed_children(cfg.seeds[0], 3)
    W = random_admissible(m, spec.input_dim, w_ss)
    A = W @ oscillatory_sample(spec, N, x_ss, workers=cfg.workers)

    rows = []
    for i, ss in enumerate(p_ss.spawn(probes)):
        P = random_orthogonal(m, ss)
        per_column = np.sum((D @ P @ A) ** 2, axis=0)
        signal, noise = split_terms(D, P, W, E)
        predicted = signal + spec.sigma ** 2 * noise
        se = float(per_column.std(ddof=1)) / math.sqrt(N)
        eta = eta_smoothness(D, P, A)
        rows.append({"probe": i, "eta_mc": eta, "signal_term": signal, "noise_term": noise,
                     "predicted": predicted, "std_error": se,
                     "z": abs(eta - predicted) / se})
        logger.info("splitting: probe %d eta=%.6g predicted=%.6g", i, rows[-1]["eta_mc"], predicted)
    table = pd.DataFrame(rows)
    write_table(result, table, "splitting")
    line_plot(result, "splitting", table["probe"].to_numpy(),
              {"Monte Carlo": table["eta_mc"].to_numpy(), "signal + sigma^2 noise": table["predicted"].to_numpy()},
              xlabel="random P", ylabel="eta")
    result.check("max |eta_MC - (signal + sigma^2 noise)| in standard errors", table["z"].max(),
                 cfg.tol("std_errors"))

    write_summary(result)
    return result
