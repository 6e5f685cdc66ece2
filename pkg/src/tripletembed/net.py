"""Feedforward encoder with PReLU activations, trained by hand-rolled Adam.

The encoder is a stack of affine layers with a learnable-slope PReLU between
consecutive layers and no activation after the last one. Everything here is
plain numpy with explicit reverse-mode gradients; parameters and optimizer
state are immutable values threaded through the train loop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np


@dataclass
class EncoderParams:
    """Weights (out x in), biases, and one PReLU slope per hidden site."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    slopes: np.ndarray

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self) -> "EncoderParams":
        return EncoderParams([w.copy() for w in self.weights],
                             [b.copy() for b in self.biases],
                             self.slopes.copy())


@dataclass
class GradSet:
    """Gradient buffers matching EncoderParams shapes exactly."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    slopes: np.ndarray


@dataclass
class AutoencoderParams:
    """Encoder plus a decoder mirroring its layer sizes in reverse."""

    encoder: EncoderParams
    decoder: EncoderParams

    def copy(self) -> "AutoencoderParams":
        return AutoencoderParams(self.encoder.copy(), self.decoder.copy())


@dataclass
class AdamState:
    """First/second moment buffers and step count for Adam."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def prelu(x, slope):
    """PReLU: x for x > 0, slope*x otherwise (subgradient 1 at x = 0)."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x, slope * x)


def init_params(layer_sizes, seed) -> EncoderParams:
    """Glorot-uniform weights, zero biases, PReLU slopes 0.25.

    Weights of a (fan_out x fan_in) layer are drawn uniformly from
    +-sqrt(6 / (fan_in + fan_out)); deterministic for a given seed.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output size")
    if any(s <= 0 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    slopes = np.full(len(weights) - 1, 0.25)
    return EncoderParams(weights, biases, slopes)


def init_autoencoder(layer_sizes, seed) -> AutoencoderParams:
    """Encoder for the given sizes plus a mirrored decoder, one seed for both."""
    rng = np.random.default_rng(seed)
    encoder = init_params(layer_sizes, rng)
    decoder = init_params(list(layer_sizes)[::-1], rng)
    return AutoencoderParams(encoder, decoder)


def _forward_cached(params: EncoderParams, batch: np.ndarray):
    """Forward pass keeping layer inputs and pre-activations for backprop."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.weights[0].shape[1]:
        raise ValueError(
            f"batch shape {batch.shape} does not match input size "
            f"{params.weights[0].shape[1]}"
        )
    inputs = [batch]
    preacts = []
    h = batch
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        preacts.append(z)
        if i < last:
            h = prelu(z, params.slopes[i])
            inputs.append(h)
    return preacts[-1], inputs, preacts


def encode_forward(params: EncoderParams, batch: np.ndarray) -> np.ndarray:
    """Map a (m x d_in) batch to its (m x d_emb) embedding."""
    out, _, _ = _forward_cached(params, batch)
    return out


def _backward_with_input(params: EncoderParams, batch, upstream_grad):
    """Gradients of sum(upstream * output) w.r.t. params and the batch."""
    out, inputs, preacts = _forward_cached(params, batch)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != out.shape:
        raise ValueError(
            f"upstream gradient shape {upstream_grad.shape} does not match "
            f"output shape {out.shape}"
        )
    n_layers = params.n_layers
    g_w = [None] * n_layers
    g_b = [None] * n_layers
    g_s = np.zeros_like(params.slopes)
    delta = upstream_grad
    for i in range(n_layers - 1, -1, -1):
        g_w[i] = delta.T @ inputs[i]
        g_b[i] = delta.sum(axis=0)
        if i == 0:
            d_input = delta @ params.weights[i]
            break
        d_act = delta @ params.weights[i]
        z = preacts[i - 1]
        neg = z < 0
        g_s[i - 1] = float(np.sum(d_act * z * neg))
        # d prelu/dz is 1 on z >= 0 (the z = 0 convention) and slope below.
        delta = d_act * np.where(neg, params.slopes[i - 1], 1.0)
    return GradSet(g_w, g_b, g_s), d_input


def backward(params: EncoderParams, batch, upstream_grad) -> GradSet:
    """Exact gradients w.r.t. every weight, bias and PReLU slope.

    upstream_grad is the gradient of the scalar objective w.r.t. the
    encoder output, shaped like encode_forward(params, batch).
    """
    grads, _ = _backward_with_input(params, batch, upstream_grad)
    return grads


def autoencoder_forward(params: AutoencoderParams, batch):
    """Returns (reconstruction, embedding) for a batch."""
    emb = encode_forward(params.encoder, batch)
    return encode_forward(params.decoder, emb), emb


def autoencoder_backward(params: AutoencoderParams, batch, upstream_grad):
    """Backprop a reconstruction-space gradient through decoder then encoder."""
    emb = encode_forward(params.encoder, batch)
    dec_grads, d_emb = _backward_with_input(params.decoder, emb, upstream_grad)
    enc_grads = backward(params.encoder, batch, d_emb)
    return enc_grads, dec_grads


def mse_loss(pred, target):
    """Mean of squared entrywise differences and its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


def _named_buffers(params):
    if isinstance(params, AutoencoderParams):
        enc = [("encoder." + n, a) for n, a in _named_buffers(params.encoder)]
        dec = [("decoder." + n, a) for n, a in _named_buffers(params.decoder)]
        return enc + dec
    named = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases), start=1):
        named.append((f"W{i}", w))
        named.append((f"b{i}", b))
    named.append(("prelu_slopes", params.slopes))
    return named


def _grad_buffers(grads):
    if isinstance(grads, tuple):  # (encoder GradSet, decoder GradSet)
        return _grad_buffers(grads[0]) + _grad_buffers(grads[1])
    out = []
    for w, b in zip(grads.weights, grads.biases):
        out.append(w)
        out.append(b)
    out.append(np.asarray(grads.slopes, dtype=np.float64))
    return out


def _rebuild_like(params, arrays):
    if isinstance(params, AutoencoderParams):
        n_enc = 2 * params.encoder.n_layers + 1
        return AutoencoderParams(_rebuild_like(params.encoder, arrays[:n_enc]),
                                 _rebuild_like(params.decoder, arrays[n_enc:]))
    n = params.n_layers
    weights = [arrays[2 * i] for i in range(n)]
    biases = [arrays[2 * i + 1] for i in range(n)]
    return EncoderParams(weights, biases, arrays[2 * n])


def adam_init(params, learning_rate=1e-3, beta1=0.9, beta2=0.999,
              eps=1e-8) -> AdamState:
    buffers = [a for _, a in _named_buffers(params)]
    return AdamState([np.zeros_like(a) for a in buffers],
                     [np.zeros_like(a) for a in buffers],
                     0, learning_rate, beta1, beta2, eps)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update; returns (new params, new state).

    Works for EncoderParams with a GradSet, or AutoencoderParams with an
    (encoder GradSet, decoder GradSet) pair. Fails on non-finite gradient
    entries, naming the offending buffer.
    """
    named = _named_buffers(params)
    gs = _grad_buffers(grads)
    if len(named) != len(gs):
        raise ValueError("gradient buffers do not match parameter buffers")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = [], [], []
    for (name, theta), g, m, v in zip(named, gs, state.m, state.v):
        if theta.shape != g.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {name}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params.append(theta - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return _rebuild_like(params, new_params), replace(state, m=new_m, v=new_v, step=t)


def params_to_dict(params: EncoderParams) -> dict:
    """JSON-ready document: layer sizes plus row-major weight/bias/slope lists."""
    return {
        "layer_sizes": params.layer_sizes,
        "weights": [w.ravel().tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "prelu_slopes": params.slopes.tolist(),
    }


def params_from_dict(doc: dict) -> EncoderParams:
    sizes = doc["layer_sizes"]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        weights.append(np.array(doc["weights"][i], dtype=np.float64)
                       .reshape(fan_out, fan_in))
        biases.append(np.array(doc["biases"][i], dtype=np.float64))
    return EncoderParams(weights, biases,
                         np.array(doc["prelu_slopes"], dtype=np.float64))


def save_params(params: EncoderParams, path) -> None:
    # json emits shortest round-trip decimal floats, so loading is bit-exact
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(params), fh)


def load_params(path) -> EncoderParams:
    with open(path, encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))
