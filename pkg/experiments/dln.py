"""Deep linear network on x = K z + sigma xi.

Checks the second-moment structure the alignment argument relies on, then
trains a linear net by gradient descent and compares the right singular
vectors of its first layer with the left singular vectors of K Sigma_z^{1/2}.
"""

import logging

import numpy as np
import pandas as pd

from lib.exp_helpers import (VerificationResult, mean_std, seed_children, train_config, write_summary,
                             write_table)
from lib.lib_config import ExperimentConfig
from lib.lib_report import line_plot
from lib.linalg import econ_svd, is_admissible, principal_angles, random_orthogonal
from lib.network import init_net, train
from lib.signal_models import DataModelSpec, LabeledBatch, sample_noise

logger = logging.getLogger(__name__)


def linear_model(m: int, k_diag, seed) -> np.ndarray:
    """K = R diag(k) Q^T with Haar-random R (m x p orthonormal columns) and Q."""
    r_ss, q_ss = seed_children(seed, 2)
    p = len(k_diag)
    R = random_orthogonal(m, r_ss)[:, :p]
    return (R * np.asarray(k_diag, dtype=float)) @ random_orthogonal(p, q_ss).T


def mean_angle(W: np.ndarray, V: np.ndarray) -> float:
    """Mean principal angle between the top right singular vectors of W and span V."""
    return float(np.mean(principal_angles(econ_svd(W).V[:, : V.shape[1]], V)))


def verify_dln_covariance(cfg: ExperimentConfig) -> VerificationResult:
    result = VerificationResult(cfg.name, cfg.out_dir)
    m = int(cfg.param("m", 8))
    k_diag = [float(k) for k in cfg.param("K_diag", [3.0, 2.0, 1.0])]
    p = len(k_diag)
    sigma = float(cfg.param("sigma", 0.1))
    n = int(cfg.param("n_samples", 100_000))
    k_ss, z_ss, x_ss, i_ss, b_ss = seed_children(cfg.seeds[0], 5)

    K = linear_model(m, k_diag, k_ss)
    # Sigma_z = I, so K Sigma_z^{1/2} = K
    svd = econ_svd(K)
    V, S = svd.U, svd.S
    Z = sample_noise(p, n, z_ss, cfg.workers)
    X = K @ Z + sigma * sample_noise(m, n, x_ss, cfg.workers)

    Sxx = X @ X.T / n
    model = (V * (S ** 2 + sigma ** 2)) @ V.T + sigma ** 2 * (np.eye(m) - V @ V.T)
    cov_rel = float(np.linalg.norm(Sxx - model) / np.linalg.norm(model))
    result.check("||Sigma_xx - V(S^2 + sigma^2)V^T - sigma^2(I - VV^T)|| / ||.||", cov_rel, cfg.tol("cov_rel"))

    Syx = Z @ X.T / n
    angles = principal_angles(econ_svd(Syx).V[:, :p], V)
    result.check("max principal angle: right singular vectors of Sigma_yx vs V", float(np.max(angles)),
                 cfg.tol("angle_max"))

    result.check("K = I flagged as degenerate (no distinct singular values)",
                 float(not is_admissible(np.eye(p))), 1.0, op=">=")

    n_train = min(int(cfg.param("n_train", 5000)), n)
    batch = LabeledBatch(inputs=X[:, :n_train], targets=Z[:, :n_train], seed=cfg.seeds[0],
                         spec=DataModelSpec(kind="noise", dim=m, sigma=sigma))
    hidden = int(cfg.param("hidden", 6))
    net0 = init_net([m, hidden, p], ["identity", "identity"], i_ss,
                    init_scale=float(cfg.net.get("init_scale", 1.0)))
    net, trace = train(net0, batch, train_config(cfg.net, cfg.seeds[0]))
    logger.info("dln: loss %.4g -> %.4g", trace[0], trace[-1])
    line_plot(result, "loss", np.arange(len(trace)), {"training loss": np.asarray(trace)}, xlabel="epoch",
              ylabel="mse", logy=True)

    trained = mean_angle(net.weight(1), V)
    rng = np.random.default_rng(b_ss)
    baseline = [mean_angle(rng.standard_normal((hidden, m)), V) for _ in range(int(cfg.param("random_w", 200)))]
    mu, sd = mean_std(baseline)
    write_table(result, pd.DataFrame({"weights": ["trained", "random mean", "random std"],
                                      "mean_angle": [trained, mu, sd]}), "alignment")
    result.check("trained W_1 mean principal angle to V, below random mean - k std",
                 trained, mu - cfg.tol("baseline_std") * sd, op="<")
    result.record("final training loss", float(trace[-1]))

    write_summary(result)
    return result
