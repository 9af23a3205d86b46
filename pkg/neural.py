"""
Minimal numpy neural-network engine: Conv1D, MaxPool1D, Dense, ReLU, Dropout,
Softmax and LSTM layers with exact backpropagation, cross-entropy loss and Adam.

Layouts are batch-first: Conv1D/MaxPool1D take (B, L, C), LSTM takes (B, T, D),
Dense works on the last axis of anything.
"""

from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, LabelError, NumericalError, ShapeError
from logger_config import setup_logger

logger = setup_logger(__name__)

DTYPE = np.float32
PROB_FLOOR = 1e-12


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def he_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


class Layer:
    """Base layer. `forward` caches what `backward` needs; `infer` is cache-free."""

    kind = "layer"

    def __init__(self):
        self.params: List[np.ndarray] = []
        self.grads: List[np.ndarray] = []
        self.param_names: List[str] = []
        self._cache = None

    def _forward(self, x: np.ndarray, training: bool):
        raise NotImplementedError

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        y, self._cache = self._forward(x, training)
        return y

    def infer(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x, False)[0]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _require_cache(self):
        if self._cache is None:
            raise ShapeError(f"{self.kind}: backward called before forward")
        return self._cache

    def set_dtype(self, dtype) -> None:
        self.params[:] = [p.astype(dtype) for p in self.params]
        self.grads[:] = [np.zeros_like(p) for p in self.params]
        self._bind()

    def _bind(self) -> None:
        """Re-attach named attributes after params were replaced."""
        for name, value in zip(self.param_names, self.params):
            setattr(self, name, value)

    def spec(self) -> Dict:
        return {"type": self.kind}

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params))


class Conv1D(Layer):
    """
    'Same' 1-D cross-correlation along the length axis.

    Weight layout (kernel, in_ch, out_ch). Zero padding left = floor((k-1)/2),
    right = ceil((k-1)/2). Optional fused ReLU on the output.
    """

    kind = "conv1d"

    def __init__(self, kernel: int, in_ch: int, out_ch: int, relu: bool = False,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        if kernel < 1 or in_ch < 1 or out_ch < 1:
            raise ConfigError(f"invalid Conv1D({kernel}, {in_ch}, {out_ch})")
        rng = rng or np.random.default_rng(0)
        self.kernel, self.in_ch, self.out_ch, self.relu = kernel, in_ch, out_ch, relu
        self.pad_left = (kernel - 1) // 2
        self.pad_right = kernel - 1 - self.pad_left
        self.param_names = ["W", "b"]
        self.params = [he_uniform(rng, (kernel, in_ch, out_ch), kernel * in_ch),
                       np.zeros(out_ch, dtype=DTYPE)]
        self.grads = [np.zeros_like(p) for p in self.params]
        self._bind()

    def _forward(self, x, training):
        if x.ndim != 3 or x.shape[2] != self.in_ch:
            raise ShapeError(f"Conv1D expects (B, L, {self.in_ch}), got {x.shape}")
        B, L, _ = x.shape
        if self.kernel > L:
            raise ShapeError(f"kernel {self.kernel} longer than input length {L}")

        xp = np.pad(x, ((0, 0), (self.pad_left, self.pad_right), (0, 0)))
        windows = np.lib.stride_tricks.sliding_window_view(xp, self.kernel, axis=1)
        # (B, L, C_in, k) -> rows of (k, C_in)
        cols = np.ascontiguousarray(windows.transpose(0, 1, 3, 2)).reshape(B * L, self.kernel * self.in_ch)
        out = (cols @ self.W.reshape(-1, self.out_ch) + self.b).reshape(B, L, self.out_ch)
        mask = None
        if self.relu:
            mask = out > 0
            out = out * mask
        return out, (cols, mask, B, L)

    def backward(self, grad):
        cols, mask, B, L = self._require_cache()
        if mask is not None:
            grad = grad * mask
        g2 = grad.reshape(B * L, self.out_ch)
        self.grads[0][...] = (cols.T @ g2).reshape(self.W.shape)
        self.grads[1][...] = g2.sum(axis=0)

        dcols = (g2 @ self.W.reshape(-1, self.out_ch).T).reshape(B, L, self.kernel, self.in_ch)
        dxp = np.zeros((B, L + self.kernel - 1, self.in_ch), dtype=grad.dtype)
        for j in range(self.kernel):
            dxp[:, j : j + L, :] += dcols[:, :, j, :]
        return dxp[:, self.pad_left : self.pad_left + L, :]

    def spec(self):
        return {"type": self.kind, "kernel": self.kernel, "in_ch": self.in_ch,
                "out_ch": self.out_ch, "relu": self.relu}


class MaxPool1D(Layer):
    """Non-overlapping max pooling along the length axis; an odd tail is dropped."""

    kind = "maxpool1d"

    def __init__(self, size: int = 2):
        super().__init__()
        if size < 1:
            raise ConfigError(f"pool size must be >= 1, got {size}")
        self.size = size

    def _forward(self, x, training):
        if x.ndim != 3:
            raise ShapeError(f"MaxPool1D expects (B, L, C), got {x.shape}")
        B, L, C = x.shape
        if L < self.size:
            raise ShapeError(f"input length {L} shorter than pool size {self.size}")
        lo = L // self.size
        xr = x[:, : lo * self.size].reshape(B, lo, self.size, C)
        # argmax returns the first index on ties
        idx = np.argmax(xr, axis=2)[:, :, None, :]
        out = np.take_along_axis(xr, idx, axis=2)[:, :, 0, :]
        return out, (idx, x.shape)

    def backward(self, grad):
        idx, shape = self._require_cache()
        B, L, C = shape
        lo = L // self.size
        dxr = np.zeros((B, lo, self.size, C), dtype=grad.dtype)
        np.put_along_axis(dxr, idx, grad[:, :, None, :], axis=2)
        dx = np.zeros(shape, dtype=grad.dtype)
        dx[:, : lo * self.size] = dxr.reshape(B, lo * self.size, C)
        return dx

    def spec(self):
        return {"type": self.kind, "size": self.size}


class Dense(Layer):
    """
    y = x W + b on the last axis.

    With flatten=True a (B, L, C) input is flattened channel-major to (B, C*L) first.
    """

    kind = "dense"

    def __init__(self, n_in: int, n_out: int, flatten: bool = False,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        if n_in < 1 or n_out < 1:
            raise ConfigError(f"invalid Dense({n_in}, {n_out})")
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_out, self.flatten = n_in, n_out, flatten
        self.param_names = ["W", "b"]
        self.params = [he_uniform(rng, (n_in, n_out), n_in), np.zeros(n_out, dtype=DTYPE)]
        self.grads = [np.zeros_like(p) for p in self.params]
        self._bind()

    def _forward(self, x, training):
        in_shape = x.shape
        if self.flatten:
            if x.ndim != 3:
                raise ShapeError(f"flattening Dense expects (B, L, C), got {x.shape}")
            x = x.transpose(0, 2, 1).reshape(x.shape[0], -1)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"Dense expects last dim {self.n_in}, got {x.shape[-1]}")
        return x @ self.W + self.b, (x, in_shape)

    def backward(self, grad):
        x, in_shape = self._require_cache()
        x2 = x.reshape(-1, self.n_in)
        g2 = grad.reshape(-1, self.n_out)
        self.grads[0][...] = x2.T @ g2
        self.grads[1][...] = g2.sum(axis=0)
        dx = grad @ self.W.T
        if self.flatten:
            B, L, C = in_shape
            dx = dx.reshape(B, C, L).transpose(0, 2, 1)
        return dx

    def spec(self):
        return {"type": self.kind, "n_in": self.n_in, "n_out": self.n_out, "flatten": self.flatten}


class ReLU(Layer):
    kind = "relu"

    def _forward(self, x, training):
        mask = x > 0
        return x * mask, mask

    def backward(self, grad):
        return grad * self._require_cache()


class Dropout(Layer):
    """Inverted dropout; identity at inference."""

    kind = "dropout"

    def __init__(self, rate: float = 0.5, seed: int = 0):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def _forward(self, x, training):
        if not training or self.rate == 0.0:
            return x, None
        keep = (self.rng.random(x.shape) >= self.rate).astype(x.dtype) / (1.0 - self.rate)
        return x * keep, keep

    def backward(self, grad):
        keep = self._cache
        return grad if keep is None else grad * keep

    def spec(self):
        return {"type": self.kind, "rate": self.rate}


class Softmax(Layer):
    kind = "softmax"

    def _forward(self, x, training):
        z = x - np.max(x, axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / np.sum(e, axis=-1, keepdims=True)
        return p, p

    def backward(self, grad):
        p = self._require_cache()
        return p * (grad - np.sum(grad * p, axis=-1, keepdims=True))


class LSTM(Layer):
    """
    Unidirectional LSTM over (B, T, D), returning every hidden state (B, T, H).

    Gate order in the fused weights: input, forget, candidate, output.
    Forget-gate bias starts at 1; h and c start at zero.
    """

    kind = "lstm"

    def __init__(self, n_in: int, hidden: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        if n_in < 1 or hidden < 1:
            raise ConfigError(f"invalid LSTM({n_in}, {hidden})")
        rng = rng or np.random.default_rng(0)
        self.n_in, self.hidden = n_in, hidden
        limit = 1.0 / np.sqrt(hidden)
        b = np.zeros(4 * hidden, dtype=DTYPE)
        b[hidden : 2 * hidden] = 1.0
        self.param_names = ["W", "U", "b"]
        self.params = [
            rng.uniform(-limit, limit, (n_in, 4 * hidden)).astype(DTYPE),
            rng.uniform(-limit, limit, (hidden, 4 * hidden)).astype(DTYPE),
            b,
        ]
        self.grads = [np.zeros_like(p) for p in self.params]
        self._bind()

    def _forward(self, x, training):
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ShapeError(f"LSTM expects (B, T, {self.n_in}), got {x.shape}")
        B, T, _ = x.shape
        if T < 1:
            raise ShapeError("LSTM needs at least one time step")
        H = self.hidden

        xw = x @ self.W + self.b
        gates = np.empty((B, T, 4 * H), dtype=xw.dtype)
        cs = np.empty((B, T, H), dtype=xw.dtype)
        hs = np.empty((B, T, H), dtype=xw.dtype)
        h = np.zeros((B, H), dtype=xw.dtype)
        c = np.zeros((B, H), dtype=xw.dtype)
        for t in range(T):
            z = xw[:, t] + h @ self.U
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H : 2 * H])
            g = np.tanh(z[:, 2 * H : 3 * H])
            o = sigmoid(z[:, 3 * H :])
            c = f * c + i * g
            h = o * np.tanh(c)
            gates[:, t] = np.concatenate((i, f, g, o), axis=1)
            cs[:, t] = c
            hs[:, t] = h
        return hs, (x, gates, cs, hs)

    def backward(self, grad):
        x, gates, cs, hs = self._require_cache()
        B, T, _ = x.shape
        H = self.hidden

        dz_all = np.empty_like(gates)
        dU = np.zeros_like(self.U)
        dh_next = np.zeros((B, H), dtype=grad.dtype)
        dc_next = np.zeros((B, H), dtype=grad.dtype)
        for t in reversed(range(T)):
            i, f, g, o = (gates[:, t, k * H : (k + 1) * H] for k in range(4))
            c = cs[:, t]
            c_prev = cs[:, t - 1] if t > 0 else np.zeros_like(c)
            h_prev = hs[:, t - 1] if t > 0 else np.zeros_like(c)
            tanh_c = np.tanh(c)

            dh = grad[:, t] + dh_next
            dc = dh * o * (1.0 - tanh_c ** 2) + dc_next
            dz = np.concatenate(
                (
                    dc * g * i * (1.0 - i),
                    dc * c_prev * f * (1.0 - f),
                    dc * i * (1.0 - g ** 2),
                    dh * tanh_c * o * (1.0 - o),
                ),
                axis=1,
            )
            dz_all[:, t] = dz
            dU += h_prev.T @ dz
            dh_next = dz @ self.U.T
            dc_next = dc * f

        self.grads[0][...] = x.reshape(-1, self.n_in).T @ dz_all.reshape(-1, 4 * H)
        self.grads[1][...] = dU
        self.grads[2][...] = dz_all.sum(axis=(0, 1))
        return dz_all @ self.W.T

    def spec(self):
        return {"type": self.kind, "n_in": self.n_in, "hidden": self.hidden}


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


class Network:
    """Ordered stack of layers ending (usually) in Softmax."""

    def __init__(self, layers: Sequence[Layer], debug: bool = False):
        self.layers: List[Layer] = list(layers)
        self.debug = debug

    @property
    def dtype(self):
        for layer in self.layers:
            if layer.params:
                return layer.params[0].dtype
        return np.dtype(DTYPE)

    def parameters(self) -> List[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def gradients(self) -> List[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads]

    def named_parameters(self) -> Iterator[Tuple[str, np.ndarray]]:
        for idx, layer in enumerate(self.layers):
            for name, p in zip(layer.param_names, layer.params):
                yield f"{idx}.{layer.kind}.{name}", p

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def set_dtype(self, dtype) -> "Network":
        for layer in self.layers:
            if layer.params:
                layer.set_dtype(dtype)
        return self

    def set_dropout(self, rate: float) -> None:
        for layer in self.layers:
            if isinstance(layer, Dropout):
                if not 0.0 <= rate < 1.0:
                    raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
                layer.rate = rate

    def _check(self, layer: Layer, out: np.ndarray) -> None:
        if self.debug and not np.all(np.isfinite(out)):
            raise NumericalError(f"non-finite output from {layer.kind}")

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            out = layer.forward(out, training)
            self._check(layer, out)
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Inference without touching layer caches; safe to call from several threads."""
        out = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            out = layer.infer(out)
            self._check(layer, out)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def backward_from_logits(self, posteriors: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Fused softmax + mean cross-entropy gradient, (p - onehot) / N, fed below the Softmax."""
        if not self.layers or not isinstance(self.layers[-1], Softmax):
            raise ShapeError("backward_from_logits needs a network ending in Softmax")
        labels = _check_labels(labels, posteriors.shape[-1])
        if labels.shape != posteriors.shape[:-1]:
            raise ShapeError(f"labels {labels.shape} do not match posteriors {posteriors.shape}")
        grad = posteriors.copy()
        np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], axis=-1) - 1.0, axis=-1)
        grad /= labels.size
        for layer in reversed(self.layers[:-1]):
            grad = layer.backward(grad)
        return grad


# ---------------------------------------------------------------------------
# Loss and optimizer
# ---------------------------------------------------------------------------


def _check_labels(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.dtype.kind not in "iu":
        if labels.dtype.kind == "f" and np.all(np.equal(np.mod(labels, 1), 0)):
            labels = labels.astype(np.int64)
        else:
            raise LabelError(f"labels must be integer class indices, got dtype {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"label outside [0, {n_classes})")
    return labels.astype(np.int64)


def cross_entropy(posteriors: np.ndarray, labels) -> Tuple[float, np.ndarray]:
    """
    Mean of -log p[label] over all rows, with p floored at 1e-12.

    Returns (loss, d loss / d posteriors).
    """
    posteriors = np.asarray(posteriors)
    labels = _check_labels(labels, posteriors.shape[-1])
    if labels.shape != posteriors.shape[:-1]:
        raise ShapeError(f"labels {labels.shape} do not match posteriors {posteriors.shape}")
    n = max(labels.size, 1)
    picked = np.take_along_axis(posteriors, labels[..., None], axis=-1)[..., 0]
    clipped = np.maximum(picked, PROB_FLOOR)
    loss = float(np.mean(-np.log(clipped)))

    grad = np.zeros_like(posteriors)
    np.put_along_axis(grad, labels[..., None], (-1.0 / clipped / n)[..., None], axis=-1)
    return loss, grad


def adam_step(params: List[np.ndarray], grads: List[np.ndarray], state: Optional[Dict], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> Dict:
    """In-place bias-corrected Adam update. Pass the returned state to the next call."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} gradients")
    if state is None or not state:
        state = {"t": 0, "m": [np.zeros_like(p) for p in params], "v": [np.zeros_like(p) for p in params]}

    state["t"] += 1
    t = state["t"]
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if p.shape != g.shape:
            raise ShapeError(f"param {p.shape} vs grad {g.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p -= (lr * (m / correction1) / (np.sqrt(v / correction2) + eps)).astype(p.dtype)
    return state


class Adam:
    def __init__(self, params: List[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state: Dict = {}

    def step(self, grads: List[np.ndarray]) -> None:
        self.state = adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def numerical_gradient(f, array: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central differences of scalar f() with respect to every entry of `array` (mutated and restored)."""
    grad = np.zeros_like(array, dtype=np.float64)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + eps
        plus = f()
        array[idx] = orig - eps
        minus = f()
        array[idx] = orig
        grad[idx] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(np.asarray(analytic, dtype=np.float64) - numeric)
    den = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return 0.0 if den == 0.0 else float(num / den)
