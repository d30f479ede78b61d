"""Reference segmentation network with its Adam optimizer and checkpoint format.

The scheduler only needs an object with ``params`` (a flat float64 array
updated in place), ``forward(x) -> probs`` and ``backward(x, dprobs) ->
flat grads``; :class:`TinySegNet` is the desk-scale implementation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import N_CLASSES, labels_from_channels
from .numerics import NumericError, Rng, ShapeError


class SegModel(Protocol):
    params: np.ndarray

    def forward(self, x: np.ndarray) -> np.ndarray: ...

    def backward(self, x: np.ndarray, dprobs: np.ndarray) -> np.ndarray: ...


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _im2col(x: np.ndarray) -> np.ndarray:
    """[d,H,W,C] -> [d*H*W, 9*C] patches of a zero-padded 3x3 window per slice."""
    d, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # [d,H,W,C,3,3]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(d * H * W, 9 * C)


class TinySegNet:
    """3x3 conv -> ReLU -> 1x1 conv -> softmax, applied slice by slice."""

    def __init__(self, c_in: int, hidden: int = 16, n_classes: int = N_CLASSES, params=None):
        if c_in < 1 or hidden < 1 or n_classes < 2:
            raise ValueError("c_in, hidden >= 1 and n_classes >= 2 required")
        self.c_in, self.hidden, self.n_classes = c_in, hidden, n_classes
        n = self.param_count(c_in, hidden, n_classes)
        if params is None:
            self.params = np.zeros(n)
        else:
            self.params = np.array(params, dtype=np.float64)
            if self.params.shape != (n,):
                raise ShapeError(f"expected {n} parameters, got {self.params.shape}")
        self._bind()

    @staticmethod
    def param_count(c_in: int, hidden: int, n_classes: int = N_CLASSES) -> int:
        return 9 * c_in * hidden + hidden + hidden * n_classes + n_classes

    def _bind(self):
        C, F, K = self.c_in, self.hidden, self.n_classes
        o = 0
        self.w1 = self.params[o : o + 9 * C * F].reshape(9 * C, F)
        o += 9 * C * F
        self.b1 = self.params[o : o + F]
        o += F
        self.w2 = self.params[o : o + F * K].reshape(F, K)
        o += F * K
        self.b2 = self.params[o : o + K]

    @classmethod
    def initialized(cls, c_in: int, hidden: int, rng: Rng, n_classes: int = N_CLASSES) -> "TinySegNet":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases of each layer."""
        net = cls(c_in, hidden, n_classes)
        b1 = 1.0 / np.sqrt(9 * c_in)
        b2 = 1.0 / np.sqrt(hidden)
        net.w1[...] = rng.uniform(-b1, b1, net.w1.shape)
        net.b1[...] = rng.uniform(-b1, b1, net.b1.shape)
        net.w2[...] = rng.uniform(-b2, b2, net.w2.shape)
        net.b2[...] = rng.uniform(-b2, b2, net.b2.shape)
        return net

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4:
            raise ShapeError(f"input must be [d,H,W,C], got {x.shape}")
        if x.shape[-1] != self.c_in:
            raise ShapeError(f"input has {x.shape[-1]} channels, network expects {self.c_in}")
        return x

    def _activations(self, x):
        cols = _im2col(x)
        pre = cols @ self.w1 + self.b1
        hid = np.maximum(pre, 0.0)
        probs = softmax(hid @ self.w2 + self.b2)
        return cols, pre, hid, probs

    def forward(self, x) -> np.ndarray:
        x = self._check_input(x)
        *_, probs = self._activations(x)
        return probs.reshape(x.shape[:3] + (self.n_classes,))

    def backward(self, x, dprobs) -> np.ndarray:
        x = self._check_input(x)
        dprobs = np.asarray(dprobs, dtype=np.float64)
        if dprobs.shape != x.shape[:3] + (self.n_classes,):
            raise ShapeError(f"upstream gradient dims {dprobs.shape} do not match output")
        cols, pre, hid, probs = self._activations(x)
        g = dprobs.reshape(-1, self.n_classes)
        dz = probs * (g - (g * probs).sum(axis=1, keepdims=True))
        dh = dz @ self.w2.T
        da = dh * (pre > 0)
        grads = np.empty_like(self.params)
        parts = (cols.T @ da, da.sum(axis=0), hid.T @ dz, dz.sum(axis=0))
        o = 0
        for p in parts:
            grads[o : o + p.size] = p.reshape(-1)
            o += p.size
        return grads

    def predict_labels(self, x) -> np.ndarray:
        return labels_from_channels(self.forward(x).argmax(axis=-1))

    def config(self) -> dict:
        return {"c_in": self.c_in, "hidden": self.hidden, "n_classes": self.n_classes}


@dataclass
class Adam:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> None:
        """Bias-corrected Adam update, applied to ``params`` in place."""
        grads = np.asarray(grads, dtype=np.float64)
        if grads.shape != params.shape:
            raise ShapeError(f"{grads.shape[0]} gradients for {params.shape[0]} parameters")
        bad = ~np.isfinite(grads)
        if bad.any():
            raise NumericError(f"non-finite gradient at parameter index {int(np.argmax(bad))}")
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grads
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# checkpoint: <u32 LE header length><UTF-8 JSON header><float64 LE params>


def save_checkpoint(path, net: TinySegNet, meta: dict | None = None) -> None:
    header = dict(net.config(), n_params=int(net.params.size))
    if meta:
        header["meta"] = meta
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    data = struct.pack("<I", len(blob)) + blob + net.params.astype("<f8").tobytes()
    Path(path).write_bytes(data)


def load_checkpoint(path) -> tuple[TinySegNet, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack_from("<I", raw, 0)
    try:
        header = json.loads(raw[4 : 4 + n].decode("utf-8"))
    except ValueError as exc:
        raise ValueError(f"{path}: bad checkpoint header") from exc
    body = raw[4 + n :]
    if len(body) != 8 * header["n_params"]:
        raise ValueError(f"{path}: expected {header['n_params']} parameters, found {len(body) // 8}")
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    net = TinySegNet(header["c_in"], header["hidden"], header["n_classes"], params=params)
    return net, header.get("meta", {})
