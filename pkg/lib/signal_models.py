"""Training/descrambling data distributions.

Covers isotropic noise, the oscillatory phase model, DEER time traces
built on the Fresnel-integral dipolar kernel, and biexponential decays with
the ILR preprocessing (self-concatenation or concatenation with a
Tikhonov-regularized NLLS reconstruction).

Every sampler is a pure function of (spec, n, seed). Columns are generated
in fixed chunks, each chunk drawing from its own SeedSequence child, so the
result does not depend on how many workers fill the chunks.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, List, Mapping, Optional, Tuple

import numpy as np
from scipy import special

from lib.errors import NonFiniteError, ShapeError, UnsupportedOperationError
from lib.linalg import seed_sequence

logger = logging.getLogger(__name__)

CHUNK = 4096
MODEL_KINDS = ("noise", "oscillatory", "deer", "biexp")
ILR_MODES = ("nd_nd", "nd_reg")


# -------------------------
# Specs and batches
# -------------------------
@dataclass(frozen=True)
class DeerConstants:
    mu0: float = 4.0 * math.pi
    gamma1: float = 1.0
    gamma2: float = 1.0
    h: float = 42.1875

    def dipolar(self, r, power: int = 3):
        return (self.mu0 / (4.0 * math.pi)) * self.gamma1 * self.gamma2 * self.h / np.power(r, power)


@dataclass(frozen=True)
class DataModelSpec:
    """Distribution of x = s(z) + sigma * xi.

    dim is the signal length: M for oscillatory (real encoding has 2M rows),
    the number of time points for deer and biexp.
    """
    kind: str
    dim: int
    sigma: float = 0.0
    # oscillatory
    u: int = 1
    v: int = 1
    # deer
    r_min: float = 1.5
    r_max: float = 8.0
    n_r: int = 256
    t_max: float = 3.2
    kernel_power: int = 3
    constants: DeerConstants = field(default_factory=DeerConstants)
    # biexp
    c1: float = 0.6
    c2: float = 0.4
    T_min: float = 50.0
    T_max: float = 500.0
    t_end: float = 800.0
    ilr_mode: str = "nd_nd"
    tikhonov_lambda: float = 1.6e-4
    theta_scale: float = 500.0
    multistart: int = 4
    normalized: bool = True

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise UnsupportedOperationError(f"unknown data model {self.kind!r}, expected one of {MODEL_KINDS}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.kind == "deer":
            if not (0 < self.r_min < self.r_max) or self.n_r < 2 or self.t_max <= 0 or self.dim < 2:
                raise ValueError("deer grids must be strictly increasing with r_min > 0")
        if self.kind == "biexp":
            if not (0 < self.T_min < self.T_max) or self.t_end <= 0 or self.dim < 2:
                raise ValueError("biexp needs 0 < T_min < T_max and an increasing time grid")
            if self.ilr_mode not in ILR_MODES:
                raise UnsupportedOperationError(f"unknown ilr_mode {self.ilr_mode!r}")
            if self.tikhonov_lambda < 0:
                raise ValueError("tikhonov_lambda must be >= 0")
            if self.normalized and (self.c1 < 0 or self.c2 < 0 or abs(self.c1 + self.c2 - 1.0) > 1e-12):
                raise ValueError("normalized biexp amplitudes must be nonnegative and sum to 1")

    @property
    def input_dim(self) -> int:
        return 2 * self.dim if self.kind == "oscillatory" else self.dim

    def r_grid(self) -> np.ndarray:
        return np.linspace(self.r_min, self.r_max, self.n_r)

    def t_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.dim)

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.dim)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values: Mapping) -> "DataModelSpec":
        values = dict(values)
        consts = values.pop("constants", None)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown data model keys: {sorted(unknown)}")
        if consts is not None:
            values["constants"] = DeerConstants(**consts)
        return cls(**values)


@dataclass(frozen=True)
class LabeledBatch:
    inputs: np.ndarray
    targets: np.ndarray
    seed: Optional[int]
    spec: DataModelSpec

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise ShapeError("batch inputs and targets must be 2-D")
        if self.inputs.shape[1] != self.targets.shape[1]:
            raise ShapeError(
                f"column count mismatch: inputs {self.inputs.shape[1]} vs targets {self.targets.shape[1]}"
            )
        if not np.all(np.isfinite(self.inputs)):
            raise NonFiniteError("batch inputs have non-finite entries")

    @property
    def n(self) -> int:
        return self.inputs.shape[1]


# -------------------------
# Chunked random streams
# -------------------------
def _chunk_bounds(n: int) -> List[Tuple[int, int]]:
    return [(lo, min(n, lo + CHUNK)) for lo in range(0, n, CHUNK)]


def fill_chunks(n: int, seed, draw: Callable[[np.random.Generator, int, int], np.ndarray],
                workers: int = 1) -> np.ndarray:
    """Concatenate draw(rng, lo, hi) over fixed column chunks, one child stream per chunk."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    bounds = _chunk_bounds(n)
    children = seed_sequence(seed).spawn(len(bounds))

    def run(i):
        lo, hi = bounds[i]
        return draw(np.random.default_rng(children[i]), lo, hi)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(bounds))))
    else:
        parts = [run(i) for i in range(len(bounds))]
    return np.concatenate(parts, axis=-1)


def sample_noise(d: int, n: int, seed=None, workers: int = 1) -> np.ndarray:
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    return fill_chunks(n, seed, lambda rng, lo, hi: rng.standard_normal((d, hi - lo)), workers)


# -------------------------
# Oscillatory phase model
# -------------------------
def oscillatory_signal(alpha, M: int) -> np.ndarray:
    """Complex M x n matrix with entries exp(2 pi i k alpha / M)."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    k = np.arange(M)[:, None]
    return np.exp(2j * np.pi * k * alpha[None, :] / M)


def real_encode(S: np.ndarray) -> np.ndarray:
    return np.vstack([S.real, S.imag])


def oscillatory_sample(spec: DataModelSpec, n: int, seed=None, alpha=None, workers: int = 1) -> np.ndarray:
    """2M x n real matrix [Re s(alpha); Im s(alpha)] + sigma xi, alpha ~ U[-uM, vM]."""
    if spec.kind != "oscillatory":
        raise UnsupportedOperationError(f"oscillatory_sample got a {spec.kind} spec")
    M = spec.dim
    forced = None if alpha is None else np.broadcast_to(np.asarray(alpha, dtype=float), (n,))

    def draw(rng, lo, hi):
        a = rng.uniform(-spec.u * M, spec.v * M, hi - lo)
        if forced is not None:
            a = forced[lo:hi]
        xi = rng.standard_normal((2 * M, hi - lo))
        return real_encode(oscillatory_signal(a, M)) + spec.sigma * xi

    return fill_chunks(n, seed, draw, workers)


# -------------------------
# Fresnel integrals and DEER
# -------------------------
_FRESNEL_SCALE = math.sqrt(2.0 / math.pi)


def fresnel_c(x):
    """C(x) = integral_0^x cos(t^2) dt."""
    _, c = special.fresnel(np.asarray(x, dtype=float) * _FRESNEL_SCALE)
    return c / _FRESNEL_SCALE


def fresnel_s(x):
    """S(x) = integral_0^x sin(t^2) dt."""
    s, _ = special.fresnel(np.asarray(x, dtype=float) * _FRESNEL_SCALE)
    return s / _FRESNEL_SCALE


def deer_kernel_dt(x):
    """Dipolar kernel as a function of the product x = D t >= 0."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    big = x >= 1e-12
    xb = x[big]
    z = np.sqrt(6.0 * xb / math.pi)
    out[big] = np.sqrt(math.pi / (6.0 * xb)) * (np.cos(xb) * fresnel_c(z) + np.sin(xb) * fresnel_s(z))
    return out


def deer_kernel(r, t, constants: DeerConstants = DeerConstants(), power: int = 3):
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(r <= 0):
        raise ValueError("deer_kernel needs r > 0")
    if np.any(t < 0):
        raise ValueError("deer_kernel needs t >= 0")
    out = deer_kernel_dt(constants.dipolar(r, power) * t)
    return out if out.ndim else float(out)


def trapezoid_weights(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 2:
        raise ShapeError("grid must be 1-D with at least two points")
    steps = np.diff(g)
    if np.any(steps <= 0):
        raise ValueError("grid must be strictly increasing")
    w = np.zeros_like(g)
    w[:-1] += 0.5 * steps
    w[1:] += 0.5 * steps
    return w


def deer_operator(r_grid, t_grid, constants: DeerConstants = DeerConstants(), power: int = 3,
                  kernel: Optional[Callable] = None) -> np.ndarray:
    """K[j, i] = gamma(r_i, t_j) * w_i with trapezoid weights on the distance grid."""
    w = trapezoid_weights(r_grid)
    t = np.asarray(t_grid, dtype=float)
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    rr, tt = np.meshgrid(np.asarray(r_grid, dtype=float), t)
    if kernel is None:
        G = deer_kernel(rr, tt, constants, power)
    else:
        G = np.asarray(kernel(rr, tt), dtype=float) * np.ones_like(rr)
    return G * w[None, :]


def deer_operator_from_spec(spec: DataModelSpec) -> np.ndarray:
    return deer_operator(spec.r_grid(), spec.t_grid(), spec.constants, spec.kernel_power)


def deer_prior(r_grid, n: int, seed=None) -> np.ndarray:
    """Columns are mixtures of 1-3 Gaussian bumps, nonnegative and summing to 1."""
    r = np.asarray(r_grid, dtype=float)
    span = r[-1] - r[0]

    def draw(rng, lo, hi):
        k = hi - lo
        count = rng.integers(1, 4, size=k)
        centres = rng.uniform(r[0] + 0.1 * span, r[-1] - 0.1 * span, size=(3, k))
        widths = rng.uniform(0.02, 0.1, size=(3, k)) * span
        amps = rng.uniform(0.2, 1.0, size=(3, k)) * (np.arange(3)[:, None] < count[None, :])
        bumps = amps[:, None, :] * np.exp(-0.5 * ((r[None, :, None] - centres[:, None, :]) / widths[:, None, :]) ** 2)
        p = np.clip(bumps.sum(axis=0), 0.0, None)
        return p / p.sum(axis=0, keepdims=True)

    return fill_chunks(n, seed, draw)


def sample_deer(K, n: int, sigma: float, seed=None, r_grid=None,
                spec: Optional[DataModelSpec] = None) -> LabeledBatch:
    K = np.asarray(K, dtype=float)
    if r_grid is None:
        r_grid = spec.r_grid() if spec is not None else np.linspace(0.0, 1.0, K.shape[1])
    if len(r_grid) != K.shape[1]:
        raise ShapeError(f"r_grid has {len(r_grid)} points, K has {K.shape[1]} columns")
    ss = seed_sequence(seed)
    prior_ss, noise_ss = ss.spawn(2)
    p = deer_prior(r_grid, n, prior_ss)
    xi = sample_noise(K.shape[0], n, noise_ss)
    if spec is None:
        spec = DataModelSpec(kind="deer", dim=K.shape[0], sigma=sigma, n_r=K.shape[1])
    return LabeledBatch(inputs=K @ p + sigma * xi, targets=p, seed=seed, spec=spec)


def deer_sigma_for_snr(K, snr: float, seed=None, r_grid=None, pilot: int = 1000) -> float:
    """sigma giving rms ||Kp|| / (sigma sqrt(d)) = snr over a pilot batch."""
    if snr <= 0:
        raise ValueError("snr must be positive")
    K = np.asarray(K, dtype=float)
    clean = sample_deer(K, pilot, 0.0, seed, r_grid).inputs
    rms = math.sqrt(float(np.mean(np.sum(clean ** 2, axis=0))))
    return rms / (snr * math.sqrt(K.shape[0]))


# -------------------------
# Biexponential decays
# -------------------------
def biexp_signal(c1: float, c2: float, T21: float, T22: float, times) -> np.ndarray:
    if T21 <= 0 or T22 <= 0:
        raise ValueError("relaxation times must be positive")
    t = np.asarray(times, dtype=float)
    return c1 * np.exp(-t / T21) + c2 * np.exp(-t / T22)


def sample_biexp(spec: DataModelSpec, n: int, seed=None, fixed_T: Optional[Tuple[float, float]] = None,
                 workers: int = 1) -> LabeledBatch:
    """Noisy decays (before ILR concatenation) and their (T21, T22) targets."""
    if spec.kind != "biexp":
        raise UnsupportedOperationError(f"sample_biexp got a {spec.kind} spec")
    t = spec.times()

    def draw(rng, lo, hi):
        k = hi - lo
        T = rng.uniform(spec.T_min, spec.T_max, size=(2, k))
        if fixed_T is not None:
            T = np.tile(np.asarray(fixed_T, dtype=float)[:, None], (1, k))
        y = spec.c1 * np.exp(-t[:, None] / T[0]) + spec.c2 * np.exp(-t[:, None] / T[1])
        y = y + spec.sigma * rng.standard_normal((len(t), k))
        return np.vstack([y, T])

    both = fill_chunks(n, seed, draw, workers)
    return LabeledBatch(inputs=both[:-2], targets=both[-2:], seed=seed, spec=spec)


@dataclass(frozen=True)
class NllsFit:
    T21: float
    T22: float
    residual: float
    amplitudes: Tuple[float, float]
    objective: float
    trace: Tuple[float, ...]
    starts: int
    iterations: int

    def curve(self, times) -> np.ndarray:
        return biexp_signal(self.amplitudes[0], self.amplitudes[1], self.T21, self.T22, times)


def _lm_box(residual: Callable, jacobian: Callable, theta0: np.ndarray, lo: np.ndarray, hi: np.ndarray,
            max_iters: int = 200, tau: float = 1e-3, xtol: float = 1e-12) -> Tuple[np.ndarray, List[float], int]:
    """Damped Gauss-Newton with gain-ratio damping; only decreasing steps are accepted."""
    theta = np.clip(theta0, lo, hi)
    r = residual(theta)
    J = jacobian(theta)
    F = float(r @ r)
    trace = [F]
    H = J.T @ J
    mu = tau * max(float(np.max(np.diag(H))), 1e-300)
    nu = 2.0
    it = 0
    for it in range(1, max_iters + 1):
        g = J.T @ r
        if F <= 1e-30 or np.max(np.abs(g)) <= 1e-15 * max(1.0, F):
            break
        diag = np.maximum(np.diag(H), 1e-12 * max(float(np.max(np.diag(H))), 1e-300))
        try:
            step = np.linalg.solve(H + mu * np.diag(diag), -g)
        except np.linalg.LinAlgError:
            mu *= nu
            nu *= 2.0
            continue
        trial = np.clip(theta + step, lo, hi)
        step = trial - theta
        if np.linalg.norm(step) <= xtol * (np.linalg.norm(theta) + xtol):
            break
        r_new = residual(trial)
        F_new = float(r_new @ r_new)
        lin = r + J @ step
        predicted = F - float(lin @ lin)
        rho = (F - F_new) / predicted if predicted > 0 else -1.0
        if rho > 0 and F_new < F:
            theta, r, F = trial, r_new, F_new
            J = jacobian(theta)
            H = J.T @ J
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            trace.append(F)
        else:
            mu *= nu
            nu *= 2.0
    return theta, trace, it


def nlls_tikhonov(y, times, lam: float = 1.6e-4, multistart: int = 4, seed=None,
                  c1: float = 0.6, c2: float = 0.4, bounds: Tuple[float, float] = (50.0, 500.0),
                  theta_scale: float = 500.0, free_amplitudes: bool = False,
                  max_iters: int = 200) -> NllsFit:
    """Fit y ~ c1 exp(-t/T21) + c2 exp(-t/T22) minimizing ||y - f||^2 + lam ||T/theta_scale||^2.

    With fixed amplitudes only (T21, T22) are estimated. free_amplitudes fits
    signed (c1, c2) as well. T21 <= T22 is enforced when the two terms are
    exchangeable.

    The default theta_scale=500 rescales the penalty so lam weighs T in units
    of the upper bound; pass theta_scale=1 for the unscaled lam ||T||^2.
    """
    y = np.asarray(y, dtype=float).ravel()
    t = np.asarray(times, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("nlls_tikhonov got non-finite data")
    if y.shape != t.shape:
        raise ShapeError(f"y has {y.size} samples, times has {t.size}")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if multistart < 1:
        raise ValueError("multistart must be >= 1")
    T_lo, T_hi = bounds
    root = math.sqrt(lam) / theta_scale

    def model_parts(T):
        e1, e2 = np.exp(-t / T[0]), np.exp(-t / T[1])
        return e1, e2

    if free_amplitudes:
        lo = np.array([-np.inf, -np.inf, T_lo, T_lo])
        hi = np.array([np.inf, np.inf, T_hi, T_hi])

        def residual(th):
            e1, e2 = model_parts(th[2:])
            return np.concatenate([th[0] * e1 + th[1] * e2 - y, root * th[2:]])

        def jacobian(th):
            e1, e2 = model_parts(th[2:])
            J = np.zeros((t.size + 2, 4))
            J[:t.size, 0] = e1
            J[:t.size, 1] = e2
            J[:t.size, 2] = th[0] * t / th[2] ** 2 * e1
            J[:t.size, 3] = th[1] * t / th[3] ** 2 * e2
            J[t.size:, 2:] = root * np.eye(2)
            return J
    else:
        lo = np.array([T_lo, T_lo])
        hi = np.array([T_hi, T_hi])

        def residual(th):
            e1, e2 = model_parts(th)
            return np.concatenate([c1 * e1 + c2 * e2 - y, root * th])

        def jacobian(th):
            e1, e2 = model_parts(th)
            J = np.zeros((t.size + 2, 2))
            J[:t.size, 0] = c1 * t / th[0] ** 2 * e1
            J[:t.size, 1] = c2 * t / th[1] ** 2 * e2
            J[t.size:, :] = root * np.eye(2)
            return J

    rng = np.random.default_rng(seed)
    span = T_hi - T_lo
    T_starts = [np.array([T_lo + span / 3.0, T_lo + 2.0 * span / 3.0])]
    T_starts += [np.sort(rng.uniform(T_lo, T_hi, 2)) for _ in range(multistart - 1)]

    best = None
    for T0 in T_starts:
        if free_amplitudes:
            e1, e2 = model_parts(T0)
            amps, *_ = np.linalg.lstsq(np.column_stack([e1, e2]), y, rcond=None)
            theta0 = np.concatenate([amps, T0])
        else:
            theta0 = T0
        theta, trace, iters = _lm_box(residual, jacobian, theta0, lo, hi, max_iters=max_iters)
        if best is None or trace[-1] < best[1][-1]:
            best = (theta, trace, iters)

    theta, trace, iters = best
    if free_amplitudes:
        a1, a2, T21, T22 = (float(v) for v in theta)
    else:
        a1, a2 = c1, c2
        T21, T22 = float(theta[0]), float(theta[1])
    if (free_amplitudes or c1 == c2) and T21 > T22:
        T21, T22, a1, a2 = T22, T21, a2, a1
    fit_curve = a1 * np.exp(-t / T21) + a2 * np.exp(-t / T22)
    resid = float(np.sum((y - fit_curve) ** 2))
    logger.debug("nlls_tikhonov: T=(%.4g, %.4g) residual=%.3g after %d iters", T21, T22, resid, iters)
    return NllsFit(T21=T21, T22=T22, residual=resid, amplitudes=(a1, a2), objective=float(trace[-1]),
                   trace=tuple(trace), starts=len(T_starts), iterations=iters)


def ilr_concat(batch: LabeledBatch, mode: str, seed=None) -> LabeledBatch:
    """Stack [ND; ND] or [ND; Reg] where Reg is the NLLS reconstruction of ND."""
    if mode not in ILR_MODES:
        raise UnsupportedOperationError(f"unknown ilr mode {mode!r}")
    spec = batch.spec
    if spec.kind != "biexp":
        raise UnsupportedOperationError("ilr_concat needs a biexp batch")
    X = batch.inputs
    if mode == "nd_nd":
        second = X
    else:
        t = spec.times()
        second = np.empty_like(X)
        seeds = seed_sequence(seed).generate_state(X.shape[1])
        for j in range(X.shape[1]):
            fit = nlls_tikhonov(X[:, j], t, lam=spec.tikhonov_lambda, multistart=spec.multistart,
                                seed=int(seeds[j]), c1=spec.c1, c2=spec.c2,
                                bounds=(spec.T_min, spec.T_max), theta_scale=spec.theta_scale)
            second[:, j] = fit.curve(t)
        logger.debug("ilr_concat: regularized %d columns", X.shape[1])
    return LabeledBatch(inputs=np.vstack([X, second]), targets=batch.targets, seed=batch.seed,
                        spec=replace(spec, ilr_mode=mode))


# -------------------------
# Second moments and scores
# -------------------------
def signal_autocorr(spec: DataModelSpec, mode: str = "analytic", m: int = 100_000, seed=None,
                    encoding: str = "real") -> np.ndarray:
    """E[s(z) s(z)^T] of the noiseless signal."""
    if mode not in ("analytic", "monte_carlo"):
        raise ValueError(f"unknown mode {mode!r}")
    if spec.kind == "noise":
        return np.zeros((spec.dim, spec.dim))
    if spec.kind == "oscillatory":
        M = spec.dim
        if mode == "analytic":
            if encoding == "complex":
                return np.eye(M)
            half = np.full(M, 0.5)
            half[0] = 1.0
            imag = np.full(M, 0.5)
            imag[0] = 0.0
            return np.diag(np.concatenate([half, imag]))
        quiet = replace(spec, sigma=0.0)
        if encoding == "complex":
            alpha = np.random.default_rng(seed).uniform(-spec.u * M, spec.v * M, m)
            S = oscillatory_signal(alpha, M)
            return (S @ S.conj().T).real / m
        X = oscillatory_sample(quiet, m, seed)
        return X @ X.T / m
    if mode == "analytic":
        raise UnsupportedOperationError(f"no closed-form autocorrelation for the {spec.kind} model")
    if spec.kind == "deer":
        X = sample_deer(deer_operator_from_spec(spec), m, 0.0, seed, spec.r_grid()).inputs
    else:
        X = sample_biexp(replace(spec, sigma=0.0), m, seed).inputs
    return X @ X.T / m


def r2_score(y, fit) -> float:
    y = np.asarray(y, dtype=float).ravel()
    fit = np.asarray(fit, dtype=float).ravel()
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def finite_difference_norm(X) -> np.ndarray:
    """Per-column l2 norm of first differences."""
    return np.linalg.norm(np.diff(np.asarray(X, dtype=float), axis=0), axis=0)
