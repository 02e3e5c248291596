import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from lib.errors import ConfigError, DescrambleKitError
from lib.signal_models import DataModelSpec
from lib.stencils import StencilSpec

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "config" / "default.toml"
BUILTIN_DEFAULTS = {
    "out_dir": "out",
    "seed": 0,
    "workers": 1,
    "log_level": "INFO",
    "quick_n_max": 10_000,
    "quick_factor": 10,
}
ENV_KEYS = {
    "out_dir": "DESCRAMBLE_OUT_DIR",
    "seed": "DESCRAMBLE_SEED",
    "workers": "DESCRAMBLE_WORKERS",
    "log_level": "DESCRAMBLE_LOG_LEVEL",
}
# keys shrunk by quick_factor in --quick mode
QUICK_SHRINK = ("epochs", "probes", "instances", "random_w", "n_train", "mc_samples")
# keys capped at quick_n_max in --quick mode
QUICK_CAP = ("N", "N_max", "n_samples")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    stencil: StencilSpec
    model: Optional[DataModelSpec]
    net: Mapping[str, Any]
    sweep: Tuple[Tuple[str, Tuple[Any, ...]], ...]
    seeds: Tuple[int, ...]
    tolerances: Mapping[str, Any]
    out_dir: Path
    params: Mapping[str, Any] = field(default_factory=dict)
    quick: bool = False
    workers: int = 1

    def param(self, key: str, default: Any = None) -> Any:
        return self.params.get(key, default)

    def tol(self, key: str, default: Any = None) -> Any:
        if key not in self.tolerances and default is None:
            raise ConfigError(f"experiment {self.name!r} has no tolerance {key!r}")
        return self.tolerances.get(key, default)

    def sweep_values(self, key: str, default=()) -> Tuple[Any, ...]:
        for name, values in self.sweep:
            if name == key:
                return values
        return tuple(default)


@dataclass(frozen=True)
class KitConfig:
    path: Optional[Path]
    out_dir: Path
    seed: int
    workers: int
    log_level: str
    tables: Mapping[str, Any]

    def experiment_names(self):
        return list(self.tables.get("experiment", {}).keys())

    def experiment(self, name: str, quick: bool = False) -> ExperimentConfig:
        return build_experiment_config(self, name, quick)


def _read_toml(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"bad config file {path}: {e}") from e


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> KitConfig:
    """
    Resolve settings, in order of preference:
    1) explicit overrides (CLI flags)
    2) DESCRAMBLE_* environment variables
    3) the [defaults] table of the TOML file
    4) built-in defaults
    """
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    cfg_path = path or os.environ.get("DESCRAMBLE_CONFIG") or DEFAULT_CONFIG
    cfg_path = Path(cfg_path)
    tables = _read_toml(cfg_path)
    file_defaults = tables.get("defaults", {})

    resolved = {}
    for key, builtin in BUILTIN_DEFAULTS.items():
        env = os.environ.get(ENV_KEYS[key]) if key in ENV_KEYS else None
        value = overrides.get(key, env if env is not None else file_defaults.get(key, builtin))
        resolved[key] = value
    try:
        seed = int(resolved["seed"])
        workers = int(resolved["workers"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"seed and workers must be integers: {e}") from e
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")

    tables = dict(tables)
    tables["defaults"] = {**file_defaults, **{k: resolved[k] for k in ("quick_n_max", "quick_factor")}}
    logger.debug("config %s: out_dir=%s seed=%d workers=%d", cfg_path, resolved["out_dir"], seed, workers)
    return KitConfig(path=cfg_path, out_dir=Path(resolved["out_dir"]), seed=seed, workers=workers,
                     log_level=str(resolved["log_level"]).upper(), tables=tables)


def _quick(params: Dict[str, Any], sweep: Dict[str, list], n_max: int, factor: int):
    for key in QUICK_CAP:
        if key in params:
            params[key] = min(int(params[key]), n_max)
    for key in QUICK_SHRINK:
        if key in params:
            params[key] = max(1, int(params[key]) // factor)
    for key in QUICK_CAP:
        if key in sweep:
            kept = [v for v in sweep[key] if v <= n_max]
            sweep[key] = kept or [n_max]


def build_experiment_config(kit: KitConfig, name: str, quick: bool = False) -> ExperimentConfig:
    experiments = kit.tables.get("experiment", {})
    if name not in experiments:
        raise ConfigError(f"unknown experiment {name!r}; known: {', '.join(experiments) or 'none'}")
    exp = dict(experiments[name])
    defaults = kit.tables.get("defaults", {})

    stencil_values = {**kit.tables.get("stencil", {}), **exp.pop("stencil", {})}
    model_over = exp.pop("model", None)
    net = dict(exp.pop("net", {}))
    sweep = {k: list(v) for k, v in exp.pop("sweep", {}).items()}
    tolerances = dict(exp.pop("tolerances", {}))
    quick_over = exp.pop("quick", {})
    offsets = exp.pop("seeds", [0])
    params = dict(exp)
    for key, values in sweep.items():
        if not values or any(not isinstance(v, (int, float)) or v <= 0 for v in values):
            raise ConfigError(f"experiment {name!r}: sweep {key!r} needs positive values, got {values}")

    if quick:
        _quick(params, sweep, int(defaults.get("quick_n_max", 10_000)), int(defaults.get("quick_factor", 10)))
        net_params = dict(net)
        _quick(net_params, {}, int(defaults.get("quick_n_max", 10_000)), int(defaults.get("quick_factor", 10)))
        net = net_params
        params.update({k: v for k, v in quick_over.items() if k not in ("net", "sweep", "tolerances")})
        tolerances.update(quick_over.get("tolerances", {}))
        net.update(quick_over.get("net", {}))
        sweep.update({k: list(v) for k, v in quick_over.get("sweep", {}).items()})

    try:
        stencil = StencilSpec.from_mapping(stencil_values)
        model = None
        if model_over is not None:
            if isinstance(model_over, str):
                model_over = {"kind": model_over}
            kind = model_over.get("kind")
            base = dict(kit.tables.get("model", {}).get(kind, {}))
            model = DataModelSpec.from_mapping({"kind": kind, **base, **model_over})
    except (DescrambleKitError, ValueError, TypeError) as e:
        raise ConfigError(f"experiment {name!r}: {e}") from e

    return ExperimentConfig(
        name=name, stencil=stencil, model=model, net=net,
        sweep=tuple((k, tuple(v)) for k, v in sweep.items()),
        seeds=tuple(int(kit.seed) + int(s) for s in offsets),
        tolerances=tolerances, out_dir=kit.out_dir / name, params=params,
        quick=quick, workers=kit.workers,
    )


def experiment_config(name: str, quick: bool = False, kit: Optional[KitConfig] = None) -> ExperimentConfig:
    return (kit or load_config()).experiment(name, quick)
