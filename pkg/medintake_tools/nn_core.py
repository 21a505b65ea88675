"""Numerical kernel for the shallow CNN: initialisation, layer forward and
backward passes, dropout, softmax/cross-entropy and Adam.

Arrays are float32 in normal use. Passing float64 parameters and inputs runs
every primitive in float64, which is what the gradient check does. Primitives
accept either a single example or a leading batch axis."""

import logging
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel

from .errors import ConfigError, NumericError


logger = logging.getLogger(__name__)


ADAM_BETA1 = 0.9
ADAM_EPSILON = 1e-8
PROB_FLOOR = 1e-12
N_CLASSES = 3


class ConvCache(BaseModel):
    windows: np.ndarray
    pre: np.ndarray
    argmax: np.ndarray
    width: int
    batched: bool

    class Config:
        arbitrary_types_allowed = True


class DenseCache(BaseModel):
    x: np.ndarray
    pre: np.ndarray
    activation: str
    batched: bool

    class Config:
        arbitrary_types_allowed = True


class AdamState(BaseModel):
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = 0.999
    epsilon: float = ADAM_EPSILON

    class Config:
        arbitrary_types_allowed = True

    @classmethod
    def fresh(cls, params: Dict[str, np.ndarray], beta2: float) -> "AdamState":
        if not 0 < beta2 < 1:
            raise ConfigError(f"adam beta2 must be in (0, 1), got {beta2}")

        return cls(
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
            t=0,
            beta2=beta2
        )

    def clone(self) -> "AdamState":
        return AdamState(
            m={name: a.copy() for name, a in self.m.items()},
            v={name: a.copy() for name, a in self.v.items()},
            t=self.t,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon
        )


def xavier_bound(fan_in: int, fan_out: int) -> float:

    if fan_in < 1 or fan_out < 1:
        raise ConfigError(f"Xavier init needs positive fan values, got fan_in={fan_in} fan_out={fan_out}")

    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_init(fan_in: int, fan_out: int, shape, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Uniform samples on [-b, b], b = sqrt(6 / (fan_in + fan_out))."""

    bound = xavier_bound(fan_in, fan_out)

    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def as_batch(x: np.ndarray, ndim: int) -> Tuple[np.ndarray, bool]:

    if x.ndim == ndim:
        return x[np.newaxis], False
    if x.ndim == ndim + 1:
        return x, True

    raise ConfigError(f"expected an array of rank {ndim} or {ndim + 1}, got shape {x.shape}")


def conv_group_forward(doc, W: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, ConvCache]:
    """Valid 1-D convolution of W (h x dim x f) over the document rows, ReLU,
    then max-over-time pooling. Ties in the max go to the earliest position."""

    values = getattr(doc, "values", doc)
    docs, batched = as_batch(np.asarray(values), 2)
    n_docs, length, dim = docs.shape

    if W.ndim != 3:
        raise ConfigError(f"conv weights must be h x dim x f, got shape {W.shape}")
    width, w_dim, n_filters = W.shape
    if w_dim != dim:
        raise ConfigError(f"conv weights expect dimension {w_dim}, document has {dim}")
    if b.shape != (n_filters,):
        raise ConfigError(f"conv bias shape {b.shape} does not match {n_filters} filters")
    if width > length:
        raise ConfigError(f"filter width {width} exceeds document length {length}")

    # (n, positions, dim, width) -> (n, positions, width * dim), row-major over the window
    windows = np.lib.stride_tricks.sliding_window_view(docs, width, axis=1)
    windows = windows.transpose(0, 1, 3, 2).reshape(n_docs, length - width + 1, width * dim)

    pre = windows @ W.reshape(width * dim, n_filters) + b
    activations = np.maximum(pre, 0)
    argmax = np.argmax(activations, axis=1)
    pooled = np.take_along_axis(activations, argmax[:, np.newaxis, :], axis=1)[:, 0, :]

    cache = ConvCache(windows=windows, pre=pre, argmax=argmax, width=width, batched=batched)

    return (pooled if batched else pooled[0]), cache


def pool_backward(d_pooled: np.ndarray, cache: ConvCache) -> np.ndarray:
    """Gradient of the pre-activations. Only the argmax position of each filter
    receives gradient, gated by its pre-activation being positive."""

    d_pooled, _ = as_batch(d_pooled, 1)
    n_docs = cache.pre.shape[0]
    rows = np.arange(n_docs)[:, np.newaxis]
    cols = np.arange(d_pooled.shape[1])[np.newaxis, :]

    gate = cache.pre[rows, cache.argmax, cols] > 0

    d_pre = np.zeros_like(cache.pre)
    d_pre[rows, cache.argmax, cols] = d_pooled * gate

    return d_pre


def conv_group_backward(d_pooled: np.ndarray, W: np.ndarray, cache: ConvCache) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of W and b."""

    d_pre = pool_backward(d_pooled, cache)

    flat_windows = cache.windows.reshape(-1, cache.windows.shape[-1])
    dW = (flat_windows.T @ d_pre.reshape(-1, d_pre.shape[-1])).reshape(W.shape)
    db = d_pre.sum(axis=(0, 1))

    return dW, db


def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray, activation: str = "identity") -> Tuple[np.ndarray, DenseCache]:
    """y = act(x W + b) with act one of relu, identity."""

    if activation not in ("relu", "identity"):
        raise ConfigError(f"unknown activation {activation!r}")

    xs, batched = as_batch(np.asarray(x), 1)
    if W.ndim != 2 or W.shape[0] != xs.shape[1] or b.shape != (W.shape[1],):
        raise ConfigError(f"dense shapes disagree: x {np.shape(x)}, W {W.shape}, b {b.shape}")

    pre = xs @ W + b
    y = np.maximum(pre, 0) if activation == "relu" else pre

    cache = DenseCache(x=xs, pre=pre, activation=activation, batched=batched)

    return (y if batched else y[0]), cache


def dense_backward(dy: np.ndarray, W: np.ndarray, cache: DenseCache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dW, db)."""

    dy, _ = as_batch(dy, 1)
    d_pre = dy * (cache.pre > 0) if cache.activation == "relu" else dy

    dW = cache.x.T @ d_pre
    db = d_pre.sum(axis=0)
    dx = d_pre @ W.T

    return (dx if cache.batched else dx[0]), dW, db


def softmax(logits: np.ndarray) -> np.ndarray:

    logits = np.asarray(logits)
    if np.isnan(logits).any():
        raise NumericError("NaN in softmax input")
    if not np.isfinite(logits).all():
        raise NumericError("non-finite softmax input")

    shifted = logits - logits.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)

    return exps / exps.sum(axis=-1, keepdims=True)


def cross_entropy(p: np.ndarray, gold: int) -> float:
    """-ln p_gold, with p_gold clamped at 1e-12. Labels are 1-based classes."""

    return float(-np.log(max(float(p[gold - 1]), PROB_FLOOR)))


def mean_cross_entropy(probs: np.ndarray, golds: np.ndarray) -> float:

    picked = probs[np.arange(len(golds)), np.asarray(golds) - 1]

    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def one_hot(golds, dtype=np.float32) -> np.ndarray:

    golds = np.asarray(golds)
    targets = np.zeros((len(golds), N_CLASSES), dtype=dtype)
    targets[np.arange(len(golds)), golds - 1] = 1

    return targets


def check_keep_prob(keep_prob: float):

    if not 0 < keep_prob <= 1:
        raise ConfigError(f"keep_prob must be in (0, 1], got {keep_prob}")


def dropout(x: np.ndarray, keep_prob: float, rng: Optional[np.random.Generator], training: bool) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverted dropout. The mask holds 1/keep_prob for kept entries and 0
    otherwise; at inference x is returned untouched and the mask is None."""

    check_keep_prob(keep_prob)

    if not training:
        return x, None

    keep = rng.random(x.shape) < keep_prob
    mask = keep.astype(x.dtype) / x.dtype.type(keep_prob)

    return x * mask, mask


def dropout_backward(dy: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:

    return dy if mask is None else dy * mask


def adam_step(
        params: Dict[str, np.ndarray],
        grads: Dict[str, np.ndarray],
        state: AdamState,
        lr: float
    ) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are left unmodified; the updated
    parameters and state are returned."""

    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")

    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ConfigError(f"gradient {name} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in {name}")

    t = state.t + 1
    beta1, beta2, eps = state.beta1, state.beta2, state.epsilon
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t

    new_params, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        dtype = theta.dtype.type

        m = dtype(beta1) * state.m[name] + dtype(1.0 - beta1) * g
        v = dtype(beta2) * state.v[name] + dtype(1.0 - beta2) * (g * g)
        m_hat = m / dtype(correction1)
        v_hat = v / dtype(correction2)

        new_params[name] = theta - dtype(lr) * m_hat / (np.sqrt(v_hat) + dtype(eps))
        new_m[name] = m
        new_v[name] = v

    new_state = AdamState(m=new_m, v=new_v, t=t, beta1=beta1, beta2=beta2, epsilon=eps)

    return new_params, new_state


class NetworkCache(BaseModel):
    """Everything the network backward pass needs from one forward pass."""
    conv: List[ConvCache]
    pooled_mask: Optional[np.ndarray]
    hidden: DenseCache
    hidden_mask: Optional[np.ndarray]
    output: DenseCache
    probs: np.ndarray

    class Config:
        arbitrary_types_allowed = True


def conv_param_names(group: int) -> Tuple[str, str]:
    return f"conv{group}_W", f"conv{group}_b"


def backward(params: Dict[str, np.ndarray], cache: Optional[NetworkCache], golds) -> Dict[str, np.ndarray]:
    """Gradients of the mean batch cross-entropy for every parameter tensor."""

    if cache is None:
        raise ValueError("backward called without forward caches")

    probs, _ = as_batch(cache.probs, 1)
    golds = np.atleast_1d(np.asarray(golds))
    if len(golds) != probs.shape[0]:
        raise ValueError(f"{len(golds)} labels for a batch of {probs.shape[0]}")

    grads = {}

    d_logits = (probs - one_hot(golds, probs.dtype)) / probs.dtype.type(len(golds))

    d_hidden, grads["out_W"], grads["out_b"] = dense_backward(d_logits, params["out_W"], cache.output)
    d_hidden = dropout_backward(d_hidden, cache.hidden_mask)

    d_pooled, grads["dense_W"], grads["dense_b"] = dense_backward(d_hidden, params["dense_W"], cache.hidden)
    d_pooled = dropout_backward(d_pooled, cache.pooled_mask)
    d_pooled, _ = as_batch(d_pooled, 1)

    offset = 0
    for group, conv_cache in enumerate(cache.conv):
        w_name, b_name = conv_param_names(group)
        n_filters = params[b_name].shape[0]
        d_group = d_pooled[:, offset:offset + n_filters]
        grads[w_name], grads[b_name] = conv_group_backward(d_group, params[w_name], conv_cache)
        offset += n_filters

    return grads
