"""DEER case study: train a small net, descramble its first layer, inspect it.

The descrambled weight and its 2-D Fourier magnitude are written next to the
Fourier magnitude of the kernel's own right singular vectors, and the top
right singular vectors of W_1 are scored against the leading directions of
the signal covariance, with random weights as the baseline.
"""

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from lib.descrambler import descramble_layer
from lib.errors import ConfigError
from lib.exp_helpers import (VerificationResult, mean_std, seed_children, train_config, write_summary,
                             write_table)
from lib.lib_config import ExperimentConfig
from lib.lib_io import save_report
from lib.lib_report import heatmap, line_plot
from lib.linalg import dft2_magnitude, econ_svd, principal_angles, sym_eig_ascending
from lib.network import init_net, save_net, train
from lib.signal_models import deer_operator, deer_operator_from_spec, deer_prior, deer_sigma_for_snr, sample_deer
from lib.stencils import stencil_from_spec

logger = logging.getLogger(__name__)

ACTIVATIONS = ["tanh", "sigmoid"]


def signal_directions(K: np.ndarray, r_grid, n_prior: int, seed) -> np.ndarray:
    """Left singular vectors of K Sigma_z^{1/2}, Sigma_z the centred prior covariance."""
    P = deer_prior(r_grid, n_prior, seed)
    P = P - P.mean(axis=1, keepdims=True)
    eig = sym_eig_ascending(P @ P.T / n_prior)
    root = (eig.vectors * np.sqrt(np.clip(eig.values, 0.0, None))) @ eig.vectors.T
    return econ_svd(K @ root).U


def alignment_score(W: np.ndarray, V: np.ndarray, top: int) -> float:
    return float(np.mean(principal_angles(econ_svd(W).V[:, :top], V[:, :top])))


def fourier_of_kernel(K: np.ndarray, rows: int) -> np.ndarray:
    """|F2(Sigma_K V_K^T)| restricted to the first rows singular components."""
    svd = econ_svd(K)
    return dft2_magnitude((svd.S[:, None] * svd.V.T)[:rows])


def run_deernet(cfg: ExperimentConfig) -> VerificationResult:
    result = VerificationResult(cfg.name, cfg.out_dir)
    spec = cfg.model
    if spec is None or spec.kind != "deer":
        raise ConfigError("deernet needs a deer data model")
    N = int(cfg.param("N", 5000))
    hidden = int(cfg.param("hidden", 80))
    top = int(cfg.param("top", 10))
    k_ss, d_ss, c_ss, i_ss, p_ss, b_ss = seed_children(cfg.seeds[0], 6)
    tcfg = train_config(cfg.net, cfg.seeds[0])

    K = deer_operator_from_spec(spec)
    r = spec.r_grid()
    sigma = deer_sigma_for_snr(K, float(cfg.param("snr", 10.0)), k_ss, r)
    batch = sample_deer(K, N, sigma, d_ss, spec=replace(spec, sigma=sigma))
    dims = [K.shape[0], hidden, K.shape[1]]
    net0 = init_net(dims, ACTIVATIONS, i_ss, renormalize_output=True)
    net, trace = train(net0, batch, tcfg)
    save_net(net, Path(result.out_dir) / "net")
    write_table(result, pd.DataFrame({"epoch": np.arange(trace.size), "loss": trace}), "loss")
    line_plot(result, "loss", np.arange(trace.size), {"training loss": trace}, xlabel="epoch", ylabel="rmse",
              logy=True)

    W1 = net.weight(1)
    D = stencil_from_spec(cfg.stencil.with_size(hidden))
    rep = descramble_layer(net, 1, batch.inputs, D)
    save_report(rep, Path(result.out_dir) / "layer1", weight=W1)
    PW = rep.P @ W1
    write_table(result, pd.DataFrame(PW), "descrambled_W1")
    heatmap(result, "descrambled_W1", PW, title="descrambled W_1", xlabel="time point", ylabel="hidden unit")
    heatmap(result, "fourier_view", dft2_magnitude(PW), title="|F2(P W_1)|")
    kernel_view = fourier_of_kernel(K, hidden)
    write_table(result, pd.DataFrame(kernel_view), "kernel_fourier_view")
    heatmap(result, "kernel_fourier_view", kernel_view, title="|F2(Sigma_K V_K^T)|")

    V = signal_directions(K, r, int(cfg.param("n_prior", 5000)), p_ss)
    trained = alignment_score(W1, V, top)
    untrained = alignment_score(net0.weight(1), V, top)
    baseline = [alignment_score(init_net(dims, ACTIVATIONS, ss).weight(1), V, top)
                for ss in b_ss.spawn(int(cfg.param("random_w", 100)))]
    mu, sd = mean_std(baseline)
    cut = mu - cfg.tol("baseline_std") * sd
    write_table(result, pd.DataFrame({"weights": ["trained", "untrained", "random mean", "random std"],
                                      "mean_angle": [trained, untrained, mu, sd]}), "alignment")
    result.check(f"trained W_1: mean angle of top {top} right singular vectors to the signal directions",
                 trained, cut, op="<")
    result.check("untrained W_1: same score", untrained, cut, op="<", control=True)

    clean = sample_deer(K, N, 0.0, c_ss, spec=replace(spec, sigma=0.0))
    _, clean_trace = train(net0, clean, tcfg)
    result.check("noiseless training ends below the noisy run", float(clean_trace[-1] - trace[-1]), 0.0, op="<")

    if cfg.param("quartic", False):
        K4 = deer_operator(r, spec.t_grid(), spec.constants, power=4)
        heatmap(result, "kernel_fourier_view_quartic", fourier_of_kernel(K4, hidden), title="|F2| with 1/r^4 kernel")
        for label, op in (("cubic", K), ("quartic", K4)):
            s = econ_svd(op).S
            result.record(f"{label} kernel: singular values above 1e-3 of the largest",
                          int(np.count_nonzero(s > 1e-3 * s[0])))

    result.record("final training loss", float(trace[-1]))
    result.record("orthogonality error of P", rep.orthogonality_error())
    write_summary(result)
    return result
