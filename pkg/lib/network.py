"""Dense feedforward nets: taps, training, Jacobians and persistence."""

import copy
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg as sla

from lib.errors import MatrixFormatError, NetFormatError, NonFiniteError, ShapeError, TrainingDivergedError
from lib.lib_io import FORMAT_VERSION, read_json, read_matrix_bin, utc_now, write_json, write_matrix_bin
from lib.signal_models import LabeledBatch

logger = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "relu", "sigmoid", "identity")
OPTIMIZERS = ("sgd", "adam")
LOSSES = ("rmse", "mse")


# -------------------------
# Types
# -------------------------
@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}, expected one of {ACTIVATIONS}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"weight {self.W.shape} and bias {self.b.shape} do not match")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise NonFiniteError("layer parameters have non-finite entries")


@dataclass
class FeedForwardNet:
    layers: List[Layer]
    renormalize_output: bool = False

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a net needs at least one layer")
        for k in range(1, len(self.layers)):
            prev, cur = self.layers[k - 1], self.layers[k]
            if cur.W.shape[1] != prev.W.shape[0]:
                raise ShapeError(
                    f"layer {k + 1} expects {cur.W.shape[1]} inputs, layer {k} gives {prev.W.shape[0]}"
                )

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> List[int]:
        return [self.layers[0].W.shape[1]] + [layer.W.shape[0] for layer in self.layers]

    @property
    def activations(self) -> List[str]:
        return [layer.activation for layer in self.layers]

    def weight(self, k: int) -> np.ndarray:
        self._check_k(k)
        return self.layers[k - 1].W

    def copy(self) -> "FeedForwardNet":
        return copy.deepcopy(self)

    def _check_k(self, k: int):
        if not 1 <= k <= self.depth:
            raise ValueError(f"layer index must be in 1..{self.depth}, got {k}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 0          # 0 = full batch
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: Optional[int] = 0
    loss: str = "rmse"
    lr_decay: float = 1.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 0:
            raise ValueError("epochs and batch_size must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.eps > 0 and self.lr_decay > 0):
            raise ValueError("bad optimizer hyperparameters")


# -------------------------
# Activations
# -------------------------
def _act(name: str, Z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(Z)
    if name == "relu":
        return np.maximum(Z, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * Z))
    return Z


def _act_prime(name: str, Z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - np.tanh(Z) ** 2
    if name == "relu":
        return (Z > 0).astype(float)
    if name == "sigmoid":
        s = 0.5 * (1.0 + np.tanh(0.5 * Z))
        return s * (1.0 - s)
    return np.ones_like(Z)


def renormalize(Y: np.ndarray) -> np.ndarray:
    """Clip to >= 0 and scale columns to unit sum; an all-zero column becomes uniform."""
    C = np.clip(Y, 0.0, None)
    s = C.sum(axis=0, keepdims=True)
    dead = s[0] == 0.0
    out = np.divide(C, s, out=np.zeros_like(C), where=s > 0)
    out[:, dead] = 1.0 / Y.shape[0]
    return out


# -------------------------
# Construction and evaluation
# -------------------------
def init_net(dims: Sequence[int], activations: Sequence[str], seed=None, renormalize_output: bool = False,
             init_scale: float = 1.0) -> FeedForwardNet:
    """Xavier-uniform weights (He-normal for relu), zero biases."""
    if len(dims) < 2 or len(activations) != len(dims) - 1:
        raise ShapeError(f"{len(dims)} dims need {max(len(dims) - 1, 0)} activations, got {len(activations)}")
    if any(int(d) < 1 for d in dims):
        raise ShapeError(f"layer widths must be positive, got {list(dims)}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        if act == "relu":
            W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(Layer(W=init_scale * W, b=np.zeros(fan_out), activation=act))
    return FeedForwardNet(layers=layers, renormalize_output=renormalize_output)


def _check_input(net: FeedForwardNet, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != net.dims[0]:
        raise ShapeError(f"net expects {net.dims[0]} input rows, got {X.shape[0]}")
    return X


def layer_output(net: FeedForwardNet, k: int, X) -> np.ndarray:
    """Pre-activation output f_k(X) = W_k sigma(... sigma(W_1 X + b_1) ...) + b_k."""
    net._check_k(k)
    H = _check_input(net, X)
    Z = H
    for j, layer in enumerate(net.layers[:k]):
        Z = layer.W @ H + layer.b[:, None]
        if j < k - 1:
            H = _act(layer.activation, Z)
    return Z


def forward(net: FeedForwardNet, X) -> np.ndarray:
    Z = layer_output(net, net.depth, X)
    Y = _act(net.layers[-1].activation, Z)
    return renormalize(Y) if net.renormalize_output else Y


def jacobian_at(net: FeedForwardNet, k: int, xbar) -> np.ndarray:
    """d f_k / dx at xbar by the chain rule; relu'(0) = 0."""
    net._check_k(k)
    x = _check_input(net, np.asarray(xbar, dtype=float).ravel())
    layer = net.layers[0]
    J = layer.W.copy()
    z = layer.W @ x + layer.b[:, None]
    for j in range(1, k):
        prev = net.layers[j - 1]
        cur = net.layers[j]
        J = cur.W @ (_act_prime(prev.activation, z) * J)
        z = cur.W @ _act(prev.activation, z) + cur.b[:, None]
    return J


def circulant_from_filter(w, m: int, symmetric: bool = False) -> np.ndarray:
    """m x m matrix whose first row is the zero-padded filter, each row shifted right by one."""
    w = np.asarray(w, dtype=float).ravel()
    if w.size > m:
        raise ShapeError(f"filter of length {w.size} does not fit m={m}")
    row = np.zeros(m)
    row[: w.size] = w
    if symmetric and not np.allclose(row[1:], row[1:][::-1], rtol=0, atol=1e-12):
        raise ValueError("filter is not symmetric about index 0")
    # circulant(c)[i, j] = c[(i - j) % m], so the transpose shifts rows right
    return sla.circulant(row).T.copy()


# -------------------------
# Training
# -------------------------
def _loss(Y: np.ndarray, T: np.ndarray, kind: str) -> float:
    mse = float(np.mean((Y - T) ** 2))
    return float(np.sqrt(mse)) if kind == "rmse" else mse


def _forward_cache(net: FeedForwardNet, X: np.ndarray):
    Hs, Zs = [X], []
    H = X
    for layer in net.layers:
        Z = layer.W @ H + layer.b[:, None]
        H = _act(layer.activation, Z)
        Zs.append(Z)
        Hs.append(H)
    out = renormalize(H) if net.renormalize_output else H
    return Hs, Zs, out


def _gradients(net: FeedForwardNet, X: np.ndarray, T: np.ndarray, kind: str):
    Hs, Zs, Y = _forward_cache(net, X)
    n_el = Y.size
    diff = Y - T
    if kind == "rmse":
        rmse = np.sqrt(np.mean(diff ** 2))
        G = diff / (n_el * rmse) if rmse > 0 else np.zeros_like(diff)
    else:
        G = 2.0 * diff / n_el

    if net.renormalize_output:
        A = Hs[-1]
        C = np.clip(A, 0.0, None)
        s = C.sum(axis=0, keepdims=True)
        live = s > 0
        dC = np.divide(G - np.sum(G * Y, axis=0, keepdims=True), s, out=np.zeros_like(G), where=live)
        G = dC * (A > 0)

    grads: List[Tuple[np.ndarray, np.ndarray]] = [None] * net.depth
    delta = G * _act_prime(net.layers[-1].activation, Zs[-1])
    for j in range(net.depth - 1, -1, -1):
        grads[j] = (delta @ Hs[j].T, delta.sum(axis=1))
        if j > 0:
            delta = (net.layers[j].W.T @ delta) * _act_prime(net.layers[j - 1].activation, Zs[j - 1])
    return grads


def train(net: FeedForwardNet, batch: LabeledBatch, cfg: TrainConfig) -> Tuple[FeedForwardNet, np.ndarray]:
    """Minibatch descent on the full-output loss.

    Returns a trained copy and a trace of epochs + 1 full-data losses, entry 0
    taken before the first update.
    """
    X = _check_input(net, batch.inputs)
    T = np.asarray(batch.targets, dtype=float)
    if T.shape[0] != net.dims[-1]:
        raise ShapeError(f"net outputs {net.dims[-1]} rows, targets have {T.shape[0]}")
    net = net.copy()
    n = X.shape[1]
    size = n if cfg.batch_size == 0 or cfg.batch_size >= n else cfg.batch_size
    rng = np.random.default_rng(cfg.seed)

    m_state = [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in net.layers]
    v_state = [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in net.layers]
    step = 0
    lr = cfg.learning_rate

    trace = [_loss(forward(net, X), T, cfg.loss)]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n) if size < n else np.arange(n)
        for lo in range(0, n, size):
            idx = order[lo:lo + size]
            grads = _gradients(net, X[:, idx], T[:, idx], cfg.loss)
            step += 1
            for j, (layer, (gW, gb)) in enumerate(zip(net.layers, grads)):
                if cfg.optimizer == "sgd":
                    layer.W -= lr * gW
                    layer.b -= lr * gb
                    continue
                mW, mb = m_state[j]
                vW, vb = v_state[j]
                mW[:] = cfg.beta1 * mW + (1 - cfg.beta1) * gW
                mb[:] = cfg.beta1 * mb + (1 - cfg.beta1) * gb
                vW[:] = cfg.beta2 * vW + (1 - cfg.beta2) * gW ** 2
                vb[:] = cfg.beta2 * vb + (1 - cfg.beta2) * gb ** 2
                c1 = 1 - cfg.beta1 ** step
                c2 = 1 - cfg.beta2 ** step
                layer.W -= lr * (mW / c1) / (np.sqrt(vW / c2) + cfg.eps)
                layer.b -= lr * (mb / c1) / (np.sqrt(vb / c2) + cfg.eps)
        lr *= cfg.lr_decay
        loss = _loss(forward(net, X), T, cfg.loss)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(l.W)) for l in net.layers):
            raise TrainingDivergedError(epoch, loss)
        trace.append(loss)
        if epoch == 1 or epoch % max(1, cfg.epochs // 10) == 0:
            logger.debug("epoch %d/%d loss=%.6g", epoch, cfg.epochs, loss)
    return net, np.asarray(trace)


# -------------------------
# Persistence
# -------------------------
def save_net(net: FeedForwardNet, path: Union[str, Path]) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    for k, layer in enumerate(net.layers, start=1):
        write_matrix_bin(layer.W, out / f"W{k}.bin")
        write_matrix_bin(layer.b[:, None], out / f"b{k}.bin")
    write_json({
        "format": "descrambler-kit-net",
        "version": FORMAT_VERSION,
        "dims": net.dims,
        "activations": net.activations,
        "renormalize_output": net.renormalize_output,
        "created": utc_now(),
    }, out / "manifest.json")
    logger.info("Saved %d-layer net to %s", net.depth, out)
    return out


def load_net(path: Union[str, Path]) -> FeedForwardNet:
    src = Path(path)
    try:
        manifest = read_json(src / "manifest.json")
    except MatrixFormatError as e:
        raise NetFormatError(str(e)) from e
    if manifest.get("version") != FORMAT_VERSION:
        raise NetFormatError(f"{src}: unsupported net version {manifest.get('version')}")
    dims = manifest.get("dims")
    acts = manifest.get("activations")
    if not isinstance(dims, list) or not isinstance(acts, list) or len(acts) != len(dims) - 1:
        raise NetFormatError(f"{src}: manifest dims/activations are inconsistent")
    layers = []
    for k in range(1, len(dims)):
        try:
            W = read_matrix_bin(src / f"W{k}.bin")
            b = read_matrix_bin(src / f"b{k}.bin")
        except MatrixFormatError as e:
            raise NetFormatError(f"layer {k}: {e}") from e
        if W.shape != (dims[k], dims[k - 1]) or b.shape != (dims[k], 1):
            raise NetFormatError(
                f"layer {k}: weight {W.shape} / bias {b.shape} disagree with manifest dims {dims[k - 1]}->{dims[k]}"
            )
        layers.append(Layer(W=W, b=b.ravel(), activation=acts[k - 1]))
    return FeedForwardNet(layers=layers, renormalize_output=bool(manifest.get("renormalize_output", False)))
