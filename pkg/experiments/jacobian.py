"""Jacobian descrambling of a deeper layer against descrambling its actual outputs.

The second-layer pre-activation of a small DEER network is descrambled twice:
from the real outputs on the training inputs and from the tangent-line
approximation around the batch mean. Both are aligned to the full descrambler
and their descrambled weights compared by relative mean absolute error.
"""

import logging
from dataclasses import replace

import numpy as np
import pandas as pd

from lib.descrambler import align_descrambler, descramble_jacobian, descramble_layer, rmae
from lib.errors import ConfigError
from lib.exp_helpers import VerificationResult, seed_children, train_config, write_summary, write_table
from lib.lib_config import ExperimentConfig
from lib.lib_report import line_plot
from lib.network import init_net, train
from lib.signal_models import deer_operator_from_spec, deer_sigma_for_snr, sample_deer
from lib.stencils import stencil_from_spec

logger = logging.getLogger(__name__)

LAYER = 2


def compare_at(net, X, D) -> dict:
    """RMAE of the Jacobian and identity descramblers of layer 2 against the full one."""
    W = net.weight(LAYER)
    full = descramble_layer(net, LAYER, X, D).P
    P_jac = align_descrambler(descramble_jacobian(net, LAYER, X, D).P, full, D)
    P_id = align_descrambler(np.eye(W.shape[0]), full, D)
    ref = full @ W
    return {"rmae_jacobian": rmae(P_jac @ W, ref), "rmae_identity": rmae(P_id @ W, ref)}


def verify_jacobian(cfg: ExperimentConfig) -> VerificationResult:
    result = VerificationResult(cfg.name, cfg.out_dir)
    spec = cfg.model
    if spec is None or spec.kind != "deer":
        raise ConfigError("jacobian needs a deer data model")
    hidden = int(cfg.param("hidden", 32))
    n_train = int(cfg.param("n_train", 2000))
    scales = sorted((float(s) for s in cfg.param("input_scales", [1.0, 0.1, 0.01])), reverse=True)
    k_ss, d_ss, i_ss, l_ss = seed_children(cfg.seeds[0], 4)

    K = deer_operator_from_spec(spec)
    sigma = deer_sigma_for_snr(K, float(cfg.param("snr", 10.0)), k_ss, spec.r_grid())
    batch = sample_deer(K, n_train, sigma, d_ss, spec=replace(spec, sigma=sigma))
    dims = [K.shape[0], hidden, K.shape[1]]
    net, trace = train(init_net(dims, ["tanh", "sigmoid"], i_ss, renormalize_output=True), batch,
                       train_config(cfg.net, cfg.seeds[0]))
    logger.info("jacobian: trained %s, final loss %.4g", dims, trace[-1])
    D = stencil_from_spec(cfg.stencil.with_size(K.shape[1]))

    rows = [dict(compare_at(net, s * batch.inputs, D), input_scale=s) for s in scales]
    table = pd.DataFrame(rows)[["input_scale", "rmae_jacobian", "rmae_identity"]]
    write_table(result, table, "rmae_vs_scale")
    line_plot(result, "rmae_vs_scale", table["input_scale"].to_numpy(),
              {"Jacobian": table["rmae_jacobian"].to_numpy(), "identity": table["rmae_identity"].to_numpy()},
              xlabel="input scale", ylabel="RMAE", logx=True, logy=True)
    at_one = table.iloc[0]
    result.check("trained net: RMAE(Jacobian) - RMAE(identity)",
                 float(at_one["rmae_jacobian"] - at_one["rmae_identity"]), 0.0, op="<")
    result.check(f"RMAE(Jacobian) at input scale {scales[-1]:g} minus at {scales[0]:g}",
                 float(table["rmae_jacobian"].iloc[-1] - at_one["rmae_jacobian"]), 0.0, op="<")

    linear = init_net(dims, ["identity", "identity"], l_ss)
    exact = compare_at(linear, batch.inputs, D)["rmae_jacobian"]
    result.check("linear net: RMAE(Jacobian) against full descrambler", exact, cfg.tol("linear_exact"))

    reference = [float(v) for v in cfg.param("reference_rmae", [])]
    if reference:
        write_table(result, pd.DataFrame({"reference_rmae": reference}), "reference_rmae")
        result.record("largest reference RMAE (other training run, not comparable)", max(reference))
    result.record("final training loss", float(trace[-1]))

    write_summary(result)
    return result
