# descrambler_kit.py

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from experiments import REGISTRY
from lib.descrambler import descramble_jacobian, descramble_layer, rescale_homomorphism, theory_limit_noise
from lib.errors import DescrambleKitError
from lib.lib_config import KitConfig, load_config
from lib.lib_io import load_batch, load_matrix, save_batch, save_matrix, save_report, write_json
from lib.lib_report import load_results, render_summary, summary_frame, write_suite_summary
from lib.linalg import dft2_magnitude, econ_svd, is_admissible
from lib.network import TrainConfig, init_net, load_net, save_net, train
from lib.signal_models import (DataModelSpec, LabeledBatch, deer_operator_from_spec, ilr_concat,
                               oscillatory_sample, sample_biexp, sample_deer, sample_noise)
from lib.stencils import StencilSpec, stencil_from_spec

logger = logging.getLogger("descrambler_kit")

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"
METHODS = {"closed": "closed_form", "manifold": "manifold", "jacobian": "jacobian"}


# -------------------------
# Helpers
# -------------------------
def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _words(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _out(args, kit: KitConfig) -> Path:
    return Path(args.out) if args.out else kit.out_dir / args.command


def _model_spec(kit: KitConfig, kind: str, dim: Optional[int], sigma: Optional[float]) -> DataModelSpec:
    values = {"kind": kind, **kit.tables.get("model", {}).get(kind, {})}
    if dim is not None:
        values["dim"] = dim
    if sigma is not None:
        values["sigma"] = sigma
    values.setdefault("dim", 16)
    return DataModelSpec.from_mapping(values)


def _stencil(kit: KitConfig, kind: Optional[str], size: int):
    values = dict(kit.tables.get("stencil", {}))
    if kind:
        values["kind"] = kind
    return stencil_from_spec(StencilSpec.from_mapping(values, size=size))


# -------------------------
# Subcommands
# -------------------------
def cmd_gen(args, kit: KitConfig) -> int:
    spec = _model_spec(kit, args.kind, args.dim, args.sigma)
    seed = kit.seed
    if spec.kind == "noise":
        X = sample_noise(spec.dim, args.n, seed, kit.workers)
        batch = LabeledBatch(inputs=X, targets=X, seed=seed, spec=spec)
    elif spec.kind == "oscillatory":
        M = spec.dim
        alpha = np.random.default_rng([seed, 1]).uniform(-spec.u * M, spec.v * M, args.n)
        X = oscillatory_sample(spec, args.n, seed, alpha=alpha, workers=kit.workers)
        batch = LabeledBatch(inputs=X, targets=alpha[None, :], seed=seed, spec=spec)
    elif spec.kind == "deer":
        batch = sample_deer(deer_operator_from_spec(spec), args.n, spec.sigma, seed, spec=spec)
    else:
        batch = sample_biexp(spec, args.n, seed, workers=kit.workers)
        if args.ilr:
            batch = ilr_concat(batch, args.ilr, [seed, 2])
    out = save_batch(batch, _out(args, kit))
    logger.info("gen: %d %s samples -> %s", batch.n, spec.kind, out)
    return 0


def cmd_train(args, kit: KitConfig) -> int:
    batch = load_batch(args.data)
    dims = _ints(args.arch)
    acts = _words(args.act)
    if dims[0] != batch.inputs.shape[0]:
        logger.warning("train: --arch starts at %d but the data has %d rows; using the data", dims[0],
                       batch.inputs.shape[0])
        dims[0] = batch.inputs.shape[0]
    net = init_net(dims, acts, kit.seed, renormalize_output=args.renorm, init_scale=args.init_scale)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                      optimizer=args.optimizer, loss=args.loss, seed=kit.seed)
    net, trace = train(net, batch, cfg)
    out = save_net(net, _out(args, kit))
    pd.DataFrame({"epoch": np.arange(trace.size), "loss": trace}).to_csv(out / "loss.csv", index=False)
    logger.info("train: final loss %.6g", trace[-1])
    return 0


def cmd_descramble(args, kit: KitConfig) -> int:
    net = load_net(args.net)
    if args.data:
        X = load_batch(args.data).inputs
    else:
        X = sample_noise(net.dims[0], args.noise, kit.seed, kit.workers)
    D = _stencil(kit, args.stencil, net.dims[args.layer])
    method = METHODS[args.method]
    if method == "jacobian":
        rep = descramble_jacobian(net, args.layer, X, D)
    elif method == "manifold":
        rep = descramble_layer(net, args.layer, X, D, method, restarts=args.restarts, seed=kit.seed,
                               workers=kit.workers)
    else:
        rep = descramble_layer(net, args.layer, X, D, method)
    save_report(rep, _out(args, kit), weight=net.weight(args.layer))
    logger.info("descramble: layer %d eta=%.6g (%s)", args.layer, rep.objective, rep.method)
    return 0


def cmd_svd_report(args, kit: KitConfig) -> int:
    W = load_net(args.net).weight(args.layer)
    svd = econ_svd(W)
    out = _out(args, kit)
    out.mkdir(parents=True, exist_ok=True)
    save_matrix(svd.U, out / "U.bin")
    save_matrix(svd.V, out / "V.bin")
    pd.DataFrame({"index": np.arange(svd.rank), "singular_value": svd.S}).to_csv(out / "singular_values.csv",
                                                                               index=False, float_format="%.17g")
    write_json({"layer": args.layer, "shape": list(W.shape), "rank": svd.rank,
                "admissible": is_admissible(W)}, out / "svd.json")
    return 0


def cmd_fourier_view(args, kit: KitConfig) -> int:
    M = load_matrix(args.matrix)
    out = _out(args, kit)
    out.mkdir(parents=True, exist_ok=True)
    if args.rescale_net:
        # M is a descrambler P; the view is T_r^T P W, sign-aligned through phi
        W = load_net(args.rescale_net).weight(args.layer)
        lim = theory_limit_noise(W, _stencil(kit, None, W.shape[0]))
        phi = rescale_homomorphism(M, lim.T_r, lim.U)
        save_matrix(phi, out / "phi.csv")
        M = lim.T_r.T @ M @ W
        save_matrix(M, out / "rescaled_view.csv")
    save_matrix(dft2_magnitude(M), out / "fourier_view.csv")
    return 0


def cmd_verify(args, kit: KitConfig) -> int:
    names = list(REGISTRY) if args.name == "all" else [args.name]
    results = []
    for name in names:
        logger.info("verify: %s%s", name, " (quick)" if args.quick else "")
        results.append(REGISTRY[name](kit.experiment(name, args.quick)))
    print(render_summary(summary_frame(results)))
    if args.name == "all":
        write_suite_summary(kit.out_dir, results)
    return 0 if all(r.passed for r in results) else 1


def cmd_report(args, kit: KitConfig) -> int:
    results = load_results(kit.out_dir, names=list(REGISTRY))
    if not results:
        logger.error("report: no experiment summaries under %s", kit.out_dir)
        return 1
    write_suite_summary(kit.out_dir, results)
    print(render_summary(summary_frame(results)))
    return 0 if all(r.passed for r in results) else 1


# -------------------------
# Parser
# -------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config (default: DESCRAMBLE_CONFIG or config/default.toml)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="descrambler_kit", description="Descrambling toolkit and experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="sample a labeled batch")
    p.add_argument("--kind", required=True, choices=["noise", "oscillatory", "deer", "biexp"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--ilr", choices=["nd_nd", "nd_reg"], help="concatenate biexp decays")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train a feed-forward net")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", required=True, help="comma-separated widths, e.g. 256,80,256")
    p.add_argument("--act", required=True, help="comma-separated activations, one per layer")
    p.add_argument("--renorm", action="store_true")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--loss", choices=["rmse", "mse"], default="rmse")
    p.add_argument("--init-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("descramble", parents=[common], help="descramble one layer of a saved net")
    p.add_argument("--net", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--method", choices=list(METHODS), default="closed")
    p.add_argument("--stencil", choices=["fourier", "finite-difference"])
    p.add_argument("--restarts", type=int, default=0)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--noise", type=int, help="descramble on N isotropic noise inputs")
    p.set_defaults(func=cmd_descramble)

    p = sub.add_parser("svd-report", parents=[common], help="singular vectors of a layer weight")
    p.add_argument("--net", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.set_defaults(func=cmd_svd_report)

    p = sub.add_parser("fourier-view", parents=[common], help="2-D Fourier magnitude of a matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--rescale-net")
    p.add_argument("--layer", type=int, default=1)
    p.set_defaults(func=cmd_fourier_view)

    p = sub.add_parser("verify", parents=[common], help="run a named verification or all of them")
    p.add_argument("name", choices=list(REGISTRY) + ["all"])
    p.add_argument("--quick", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", parents=[common], help="re-render the summary of a previous run")
    p.set_defaults(func=cmd_report)
    return parser


# -------------------------
# Entry point
# -------------------------
def cli_main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    level = args.log_level or os.environ.get("DESCRAMBLE_LOG_LEVEL") or "INFO"
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, force=True)
    try:
        # --out names the artefact directory for gen/train/descramble, the run root otherwise
        run_root = args.out if args.command in ("verify", "report") else None
        kit = load_config(args.config, overrides={"out_dir": run_root, "seed": args.seed,
                                                  "workers": args.workers, "log_level": args.log_level})
        logging.getLogger().setLevel(kit.log_level)
        return args.func(args, kit)
    except (DescrambleKitError, ValueError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 1


if __name__ == "__main__":
    sys.exit(cli_main())
