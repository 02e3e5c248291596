"""Input layer regularization for biexponential relaxation.

Nets are trained on [ND; ND] and [ND; Reg] concatenations at several noise
levels. The two halves of each leading right singular vector of W_1 are fit
with a signed biexponential; the fits should be good at high SNR and the
halves should disagree more when the second block is the regularized curve.
"""

import logging
from dataclasses import replace

import numpy as np
import pandas as pd

from lib.descrambler import descramble_closed, rescale_homomorphism, theory_limit_noise
from lib.errors import ConfigError
from lib.exp_helpers import (VerificationResult, run_pool, seed_children, train_config, write_summary,
                             write_table)
from lib.lib_config import ExperimentConfig
from lib.lib_report import heatmap
from lib.linalg import econ_svd
from lib.network import init_net, train
from lib.signal_models import LabeledBatch, ilr_concat, nlls_tikhonov, r2_score, sample_biexp, sample_noise
from lib.stencils import stencil_from_spec

logger = logging.getLogger(__name__)

MODES = ("nd_nd", "nd_reg")


def fit_half(h: np.ndarray, t: np.ndarray, bounds, seed: int) -> dict:
    fit = nlls_tikhonov(h, t, lam=0.0, seed=seed, bounds=bounds, free_amplitudes=True)
    curve = fit.curve(t)
    return {"r2": r2_score(h, curve), "T21": fit.T21, "T22": fit.T22, "curve": curve}


def halves_distance(f1: np.ndarray, f2: np.ndarray) -> float:
    """Sign-aligned l2 distance between the normalized fitted curves."""
    a = f1 / max(np.linalg.norm(f1), 1e-300)
    b = f2 / max(np.linalg.norm(f2), 1e-300)
    return float(min(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def singular_vector_fits(W1: np.ndarray, t: np.ndarray, top: int, bounds, seed: int) -> list:
    dim = t.size
    V = econ_svd(W1).V
    rows = []
    for j in range(min(top, V.shape[1])):
        v = V[:, j]
        first = fit_half(v[:dim], t, bounds, seed + 2 * j)
        second = fit_half(v[dim:], t, bounds, seed + 2 * j + 1)
        rows.append({"vector": j, "r2_first": first["r2"], "r2_second": second["r2"],
                     "T_first": (first["T21"], first["T22"]), "T_second": (second["T21"], second["T22"]),
                     "halves_distance": halves_distance(first["curve"], second["curve"])})
    return rows


def _run(args):
    mode, snr, spec, dims, acts, net_params, n_train, top, bounds, seed = args
    data_ss, concat_ss, init_ss = seed_children([seed, MODES.index(mode), int(snr * 1000)], 3)
    raw = sample_biexp(replace(spec, sigma=1.0 / snr), n_train, data_ss)
    batch = ilr_concat(raw, mode, concat_ss)
    scaled = (batch.targets - spec.T_min) / (spec.T_max - spec.T_min)
    batch = LabeledBatch(inputs=batch.inputs, targets=scaled, seed=batch.seed, spec=batch.spec)
    net0 = init_net(dims, acts, init_ss, init_scale=float(net_params.get("init_scale", 1.0)))
    net, trace = train(net0, batch, train_config(net_params, seed))
    logger.info("ilr: %s snr=%g final loss %.4g", mode, snr, trace[-1])
    rows = [dict(r, mode=mode, snr=snr, trained=True) for r in singular_vector_fits(net.weight(1), spec.times(),
                                                                                       top, bounds, seed)]
    return {"mode": mode, "snr": snr, "rows": rows, "W1": net.weight(1), "W1_init": net0.weight(1),
            "loss": float(trace[-1])}


def run_ilr(cfg: ExperimentConfig) -> VerificationResult:
    result = VerificationResult(cfg.name, cfg.out_dir)
    spec = cfg.model
    if spec is None or spec.kind != "biexp":
        raise ConfigError("ilr needs a biexp data model")
    snrs = sorted(float(s) for s in cfg.param("snr", [1.0, 30.0, 100.0]))
    if snrs[0] <= 0:
        raise ConfigError("snr values must be positive")
    arch = [int(a) for a in cfg.param("arch", [32, 256, 256])]
    dims = [2 * spec.dim] + arch + [2]
    acts = ["relu"] * len(arch) + ["identity"]
    top = int(cfg.param("top", 3))
    bounds = tuple(float(b) for b in cfg.param("fit_bounds", [5.0, 5000.0]))
    n_train = int(cfg.param("n_train", 4000))
    seed = cfg.seeds[0]
    t = spec.times()

    jobs = [(mode, snr, spec, dims, acts, cfg.net, n_train, top, bounds, seed) for mode in MODES for snr in snrs]
    runs = run_pool(_run, jobs, cfg.workers, key=lambda a: (MODES.index(a[0]), a[1]))
    by_key = {(r["mode"], r["snr"]): r for r in runs}

    rows = [row for r in runs for row in r["rows"]]
    untrained = by_key[("nd_nd", snrs[-1])]["W1_init"]
    rows += [dict(r, mode="nd_nd", snr=snrs[-1], trained=False)
             for r in singular_vector_fits(untrained, t, 1, bounds, seed)]
    table = pd.DataFrame(rows)
    table["T_first"] = table["T_first"].map(lambda v: "%.6g;%.6g" % v)
    table["T_second"] = table["T_second"].map(lambda v: "%.6g;%.6g" % v)
    write_table(result, table, "singular_vector_fits")

    lead = table[(table["vector"] == 0) & table["trained"]]
    r2_min = cfg.tol("r2_min")
    at_top = lead[lead["snr"] == snrs[-1]]
    result.check(f"min R^2 of the leading vector halves at SNR {snrs[-1]:g}",
                 float(at_top[["r2_first", "r2_second"]].min().min()), r2_min, op=">=")
    ctl = table[~table["trained"]]
    result.check("untrained W_1: min R^2 of the leading vector halves",
                 float(ctl[["r2_first", "r2_second"]].min().min()), r2_min, op=">=", control=True)

    mean_dist = lead.groupby("mode")["halves_distance"].mean()
    result.check("mean halves distance, [ND; Reg] minus [ND; ND]",
                 float(mean_dist["nd_reg"] - mean_dist["nd_nd"]), 0.0, op=">")
    for snr in (snrs[0], snrs[-1]):
        at = lead[lead["snr"] == snr]
        result.record(f"SNR {snr:g}: mean R^2 of the leading vector halves",
                      float(at[["r2_first", "r2_second"]].to_numpy().mean()))
    for r in runs:
        result.record(f"{r['mode']} SNR {r['snr']:g}: final training loss", r["loss"])

    # descramble the [ND; Reg] input layer on noise and look at T_r^T P W_1
    W1 = by_key[("nd_reg", snrs[-1])]["W1"]
    X = sample_noise(W1.shape[1], int(cfg.param("n_noise", 20_000)), seed_children(seed, 1)[0], cfg.workers)
    D = stencil_from_spec(cfg.stencil.with_size(W1.shape[0]))
    rep = descramble_closed(D, W1 @ X)
    lim = theory_limit_noise(W1, D)
    if lim.degenerate:
        result.note("[ND; Reg] W_1 has repeated singular values; the noise-only limit is not unique")
    view = lim.T_r.T @ rep.P @ W1
    write_table(result, pd.DataFrame(view), "noise_descrambled_view")
    heatmap(result, "noise_descrambled_view", view, title="T_r^T P W_1, [ND; Reg]", xlabel="input",
            ylabel="mode")
    phi = rescale_homomorphism(rep.P, lim.T_r, lim.U)
    drift = float(np.linalg.norm(np.abs(phi) - np.eye(phi.shape[0])))
    result.record("||abs(phi) - I|| for the noise-only descrambler", drift)

    write_summary(result)
    return result
