"""Fresnel integrals and the dipolar kernel against series oracles."""

import logging
import math

import numpy as np
import pandas as pd

from lib.exp_helpers import VerificationResult, write_summary, write_table
from lib.lib_config import ExperimentConfig
from lib.lib_report import line_plot
from lib.signal_models import DataModelSpec, deer_kernel_dt, deer_operator_from_spec, fresnel_c, fresnel_s

logger = logging.getLogger(__name__)


def fresnel_series(x: float, terms: int = 30):
    """Maclaurin series of C(x) = int cos(t^2) and S(x) = int sin(t^2)."""
    c = sum((-1) ** n * x ** (4 * n + 1) / (math.factorial(2 * n) * (4 * n + 1)) for n in range(terms))
    s = sum((-1) ** n * x ** (4 * n + 3) / (math.factorial(2 * n + 1) * (4 * n + 3)) for n in range(terms))
    return c, s


def verify_kernel(cfg: ExperimentConfig) -> VerificationResult:
    result = VerificationResult(cfg.name, cfg.out_dir)
    terms = int(cfg.param("series_terms", 30))

    xs = np.array([0.25, 0.5, 1.0, 1.5, 2.0])
    rows = []
    for x in xs:
        c_ref, s_ref = fresnel_series(float(x), terms)
        rows.append({"x": x, "C": float(fresnel_c(x)), "C_series": c_ref,
                     "S": float(fresnel_s(x)), "S_series": s_ref})
    fres = pd.DataFrame(rows)
    write_table(result, fres, "fresnel")
    at_one = fres[fres["x"] == 1.0].iloc[0]
    result.check("C(1) vs series", abs(at_one["C"] - at_one["C_series"]), cfg.tol("fresnel_abs"))
    result.check("S(1) vs series", abs(at_one["S"] - at_one["S_series"]), cfg.tol("fresnel_abs"))

    dt_small = float(cfg.param("dt_small", 1e-8))
    result.check(f"gamma(Dt={dt_small:g}) -> 1", abs(float(deer_kernel_dt(dt_small)) - 1.0),
                 cfg.tol("kernel_small_dt"))

    dt = np.concatenate([[0.0], np.logspace(-8, np.log10(40.0), 200)])
    curve = pd.DataFrame({"Dt": dt, "gamma": deer_kernel_dt(dt)})
    write_table(result, curve, "kernel_curve")
    line_plot(result, "kernel_curve", dt[1:], {"gamma": curve["gamma"].to_numpy()[1:]},
              xlabel="D t", ylabel="gamma", title="dipolar kernel", logx=True)

    # the t = 0 row of the discretized operator is the quadrature weight vector
    spec = DataModelSpec(kind="deer", dim=32, n_r=32)
    K = deer_operator_from_spec(spec)
    result.record("first operator row sum (trapezoid length r_max - r_min)", float(K[0].sum()))
    result.check("first operator row sum error", abs(float(K[0].sum()) - (spec.r_max - spec.r_min)), 1e-12)

    write_summary(result)
    return result
