"""Rotation-equivariant convolution front-end with analytic backpropagation.

Tensors are ``(N, H, W, C)`` and filters ``(h, w, c_in, c_out)``.
"Convolution" here is cross-correlation (no filter flip), the usual ML
convention. A group convolution averages the correlation over the four
rotated copies of its filter; by linearity that is one correlation with
the rotation-averaged filter, which is how it is computed.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .circuits import CircuitPlan, ModelSpec, build_model, init_params
from .errors import ShapeError, StateError, ValidationError
from .metrics import classify, compute_metrics
from .symmetry import compute_orbits, rotate_image
from .training import DTYPES, AdamState, EpochRecord, TrainHistory, adam_step


def conv_output_side(n_x: int, n_w: int, stride: int = 1, padding: int = 0) -> int:
    """``(n_x + 2p - n_w) / s + 1``; raises if not a positive integer."""
    span = n_x + 2 * padding - n_w
    if span < 0 or span % stride:
        raise ShapeError(f"({n_x} + 2*{padding} - {n_w}) / {stride} + 1 is not a positive integer")
    return span // stride + 1


def _as4(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 4:
        raise ShapeError(f"expected an (N, H, W, C) tensor, got shape {x.shape}")
    return x


def conv2d_valid(x, f, stride: int = 1, padding: int = 0) -> np.ndarray:
    x, f = _as4(x), np.asarray(f, dtype=float)
    if f.ndim != 4 or f.shape[0] != f.shape[1] or f.shape[2] != x.shape[3]:
        raise ShapeError(f"filter {f.shape} does not fit input {x.shape}")
    conv_output_side(x.shape[1], f.shape[0], stride, padding)
    conv_output_side(x.shape[2], f.shape[1], stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    win = sliding_window_view(x, f.shape[:2], axis=(1, 2))[:, ::stride, ::stride]
    return np.einsum("nijcab,abco->nijo", win, f, optimize=True)


def _conv_backward(x, f, grad_out, stride: int = 1, padding: int = 0):
    """Gradients of :func:`conv2d_valid` with respect to the input and the filter."""
    h, w = f.shape[:2]
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x
    win = sliding_window_view(xp, (h, w), axis=(1, 2))[:, ::stride, ::stride]
    d_f = np.einsum("nijcab,nijo->abco", win, grad_out, optimize=True)
    d_xp = np.zeros_like(xp)
    ho, wo = grad_out.shape[1:3]
    for a in range(h):
        for b in range(w):
            d_xp[:, a:a + stride * ho:stride, b:b + stride * wo:stride, :] += grad_out @ f[a, b].T
    if padding:
        d_xp = d_xp[:, padding:-padding, padding:-padding, :]
    return d_xp, d_f


def rotate_filter(f, times: int = 1) -> np.ndarray:
    """Rotate the spatial slices like an image, leaving the channel axes alone."""
    f = np.asarray(f, dtype=float)
    return np.ascontiguousarray(rotate_image(f, times, axes=(0, 1)))


def symmetrize_filter(f) -> np.ndarray:
    return sum(rotate_filter(f, t) for t in range(4)) / 4.0


def gconv(x, f, stride: int = 1, padding: int = 0) -> np.ndarray:
    """``(1/4) sum_t conv2d_valid(x, rotate_filter(f, t))``."""
    return conv2d_valid(x, symmetrize_filter(f), stride, padding)


def avg_pool(x, window: int) -> np.ndarray:
    x = _as4(x)
    n, h, w, c = x.shape
    if window < 1 or h % window or w % window:
        raise ShapeError(f"pool window {window} does not divide {h}x{w}")
    return x.reshape(n, h // window, window, w // window, window, c).mean(axis=(2, 4))


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=float), 0.0)


# ---------------------------------------------------------------- pipeline


@dataclass(frozen=True)
class ConvLayer:
    n_w: int  # filter side
    n_c: int  # output channels
    n_p: int = 0  # average-pool window (0: none)
    relu: bool = True


def shape_chain(side: int, channels: int, layers: Sequence[ConvLayer], stride: int = 1,
                padding: int = 0) -> list[tuple[int, int]]:
    """``(side, channels)`` after the input and after every conv (and pool) stage."""
    chain = [(side, channels)]
    for k, layer in enumerate(layers):
        try:
            side = conv_output_side(side, layer.n_w, stride, padding)
        except ShapeError as exc:
            raise ShapeError(str(exc), stage=k) from None
        chain.append((side, layer.n_c))
        if layer.n_p:
            if side % layer.n_p:
                raise ShapeError(f"pool window {layer.n_p} does not divide side {side}", stage=k)
            side //= layer.n_p
            chain.append((side, layer.n_c))
    return chain


# Filter, channel and pool columns of the hyperparameter table for the
# extended models
TABLE_CONFIGS = {
    "mnist": dict(side=28, channels=1, n_w=(11, 11, 3, 3), n_c=(10, 10, 10, 1), n_p=(0, 0, 0, 0)),
    "11khands": dict(side=256, channels=3, n_w=(3, 2, 2, 4, 7), n_c=(8, 64, 64, 6, 1), n_p=(2, 2, 2, 2, 2)),
    "resisc45": dict(side=256, channels=3, n_w=(3, 2, 2, 4, 7), n_c=(32, 32, 32, 32, 1), n_p=(2, 2, 2, 2, 2)),
}


def layers_from_table(n_w, n_c, n_p=None) -> list[ConvLayer]:
    n_p = n_p or [0] * len(n_w)
    if not len(n_w) == len(n_c) == len(n_p):
        raise ValidationError("n_w, n_c and n_p must have one entry per layer")
    # the last layer feeds the encoder directly: no ReLU, so features can take any sign
    return [ConvLayer(int(w), int(c), int(p or 0), k < len(n_w) - 1) for k, (w, c, p) in enumerate(zip(n_w, n_c, n_p))]


@dataclass
class FeatureScaler:
    """Logistic squash of latent features into ``(low, high)`` with a frozen centre and width.

    Centre and width are per-feature mean and standard deviation, tied
    across each rotation orbit of the latent grid so a rotated image gets
    exactly permuted angles. The squash never saturates to a flat zero
    gradient, so features that drift while the filters train still learn.
    """

    side: int
    low: float = 0.0
    high: float = math.pi
    centre: np.ndarray | None = None
    width: np.ndarray | None = None

    @property
    def fitted(self) -> bool:
        return self.centre is not None

    def fit(self, z: np.ndarray) -> "FeatureScaler":
        z = z.reshape(z.shape[0], -1)
        centre, width = z.mean(axis=0), z.std(axis=0)
        table = compute_orbits(self.side)
        for o in range(table.n_orbits):
            q = list(table.orbit_qubits(o))
            centre[q] = centre[q].mean()
            width[q] = width[q].mean()
        self.centre, self.width = centre, np.maximum(width, 1e-12)
        return self

    def forward(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Scaled features and their elementwise derivative."""
        if not self.fitted:
            raise StateError("feature scaler used before fit")
        z = z.reshape(z.shape[0], -1)
        s = 0.5 * (1.0 + np.tanh(0.5 * (z - self.centre) / self.width))
        span = self.high - self.low
        return self.low + span * s, span * s * (1.0 - s) / self.width

    def to_dict(self) -> dict:
        return {"side": self.side, "low": self.low, "high": self.high,
                "centre": None if self.centre is None else self.centre.tolist(),
                "width": None if self.width is None else self.width.tolist()}


@dataclass
class CnnPipeline:
    layers: list[ConvLayer]
    filters: list[np.ndarray]
    in_channels: int = 1
    _cache: dict | None = field(default=None, repr=False)

    @classmethod
    def create(cls, layers: Sequence[ConvLayer], in_channels: int = 1, seed: int = 0) -> "CnnPipeline":
        """Filters drawn uniformly from ``+-1/sqrt(h*w*c_in)``."""
        rng = np.random.default_rng(seed)
        filters, c_in = [], in_channels
        for layer in layers:
            bound = 1.0 / math.sqrt(layer.n_w * layer.n_w * c_in)
            filters.append(rng.uniform(-bound, bound, (layer.n_w, layer.n_w, c_in, layer.n_c)))
            c_in = layer.n_c
        return cls(list(layers), filters, in_channels)

    def output_shape(self, side: int) -> tuple[int, int]:
        return shape_chain(side, self.in_channels, self.layers)[-1]

    def forward(self, x) -> np.ndarray:
        x = _as4(x)
        if x.shape[3] != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} input channels, got {x.shape[3]}", stage=0)
        shape_chain(x.shape[1], self.in_channels, self.layers)
        steps = []
        h = x
        for layer, f in zip(self.layers, self.filters):
            fs = symmetrize_filter(f)
            pre = conv2d_valid(h, fs)
            out = relu(pre) if layer.relu else pre
            if layer.n_p:
                out = avg_pool(out, layer.n_p)
            steps.append((h, fs, pre))
            h = out
        self._cache = {"steps": steps}
        return h

    def backward(self, upstream) -> tuple[list[np.ndarray], np.ndarray]:
        """Filter gradients and input gradient for ``upstream = dL/d(output)``."""
        if self._cache is None:
            raise StateError("pipeline_backward needs a forward pass first")
        g = _as4(upstream)
        grads = [None] * len(self.layers)
        for k in reversed(range(len(self.layers))):
            layer = self.layers[k]
            h, fs, pre = self._cache["steps"][k]
            if layer.n_p:
                p = layer.n_p
                g = np.repeat(np.repeat(g, p, axis=1), p, axis=2) / (p * p)
            if layer.relu:
                g = g * (pre > 0)
            g, d_fs = _conv_backward(h, fs, g)
            # d/df of symmetrize(f): average of the inversely rotated gradients
            grads[k] = sum(rotate_filter(d_fs, -t) for t in range(4)) / 4.0
        return grads, g


def pipeline_forward(p: CnnPipeline, x) -> np.ndarray:
    return p.forward(x)


def pipeline_backward(p: CnnPipeline, upstream):
    return p.backward(upstream)


# ---------------------------------------------------------------- hybrid


@dataclass
class HybridModel:
    """CNN front-end, orbit-tied feature scaling and a variational circuit on the latent grid."""

    pipeline: CnnPipeline
    spec: ModelSpec
    scaler: FeatureScaler

    @property
    def plan(self) -> CircuitPlan:
        return build_model(self.spec)

    def features(self, x) -> np.ndarray:
        z = self.pipeline.forward(x)
        if z.shape[1:] != (self.spec.n, self.spec.n, 1):
            raise ShapeError(f"pipeline output {z.shape[1:]} does not match a {self.spec.n}x{self.spec.n} circuit")
        if not self.scaler.fitted:
            self.scaler.fit(z)
        return self.scaler.forward(z)[0]

    def forward(self, x, params, dtype=np.float64) -> np.ndarray:
        return self.plan.compiled.forward(params, self.features(x), dtype=dtype)

    def loss_and_grads(self, x, y, params, dtype=np.float64):
        """MSE loss, circuit-parameter gradient and filter gradients."""
        z = self.pipeline.forward(x)
        if not self.scaler.fitted:
            self.scaler.fit(z)
        feats, jac = self.scaler.forward(z)
        y = np.asarray(y, dtype=float)
        scale = 2.0 / y.size
        f, d_params, d_feats = self.plan.compiled.vjp(
            params, feats, lambda f, rows: scale * (f - y[rows]), dtype=dtype
        )
        upstream = (d_feats * jac).reshape(z.shape)
        d_filters, _ = self.pipeline.backward(upstream)
        return float(np.mean((f - y) ** 2)), d_params, d_filters, f


__all__ = [
    "CnnPipeline",
    "ConvLayer",
    "FeatureScaler",
    "HybridModel",
    "TABLE_CONFIGS",
    "avg_pool",
    "conv2d_valid",
    "conv_output_side",
    "gconv",
    "layers_from_table",
    "pipeline_backward",
    "pipeline_forward",
    "relu",
    "rotate_filter",
    "shape_chain",
    "symmetrize_filter",
    "train_hybrid",
]


def train_hybrid(pipeline: CnnPipeline, spec: ModelSpec, x, y, config, x_test=None, y_test=None,
                 feature_range=(0.0, math.pi)):
    """Joint Adam on filters and circuit angles; the scaler is refitted each epoch, then frozen.

    Returns ``(HybridModel, params, TrainHistory)``.
    """
    dtype = DTYPES[config.dtype]
    model = HybridModel(pipeline, spec, FeatureScaler(spec.n, *feature_range))
    params = init_params(spec, config.seed, *config.init_range).values
    sizes = [f.size for f in pipeline.filters]
    state = AdamState.zeros(params.size + sum(sizes))
    rng = np.random.default_rng(config.seed)
    y = np.asarray(y, dtype=float)
    history = TrainHistory()
    start = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        # filters move the latent distribution a lot per step, so the scaler
        # statistics follow the training set once per epoch (held constant
        # within it) and stay frozen after the last epoch
        model.scaler.fit(pipeline.forward(x))
        if config.batch_size and config.batch_size < y.size:
            order = rng.permutation(y.size)
            batches = [order[i:i + config.batch_size] for i in range(0, y.size, config.batch_size)]
        else:
            batches = [np.arange(y.size)]
        preds = np.empty(y.size)
        for idx in batches:
            _, d_params, d_filters, f = model.loss_and_grads(x[idx], y[idx], params, dtype)
            preds[idx] = f
            flat = np.concatenate([params] + [fl.ravel() for fl in pipeline.filters])
            grad = np.concatenate([d_params] + [g.ravel() for g in d_filters])
            flat, state = adam_step(state, flat, grad, config.learning_rate)
            params = flat[:params.size]
            pos = params.size
            for k, size in enumerate(sizes):
                pipeline.filters[k] = flat[pos:pos + size].reshape(pipeline.filters[k].shape)
                pos += size
        loss = float(np.mean((preds - y) ** 2))
        test = None
        if x_test is not None and (epoch == config.max_epochs or (config.eval_every and epoch % config.eval_every == 0)):
            test = compute_metrics(classify(model.forward(x_test, params, dtype)), y_test)
        history.records.append(EpochRecord(epoch, loss, compute_metrics(classify(preds), y), test,
                                           time.perf_counter() - start))
    return model, params, history
