"""Memoryless feed-forward receiver working on one 96-sample slot at a time."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .grid import SAMPLES_PER_SYMBOL, WaveformGrid

HIDDEN = (32, 32)
N_OUT = 16
FEATURES = {"interleaved": 2 * SAMPLES_PER_SYMBOL, "strict96": SAMPLES_PER_SYMBOL}


@dataclass
class MlpParams:
    weights: list
    biases: list
    activations: tuple = ("selu", "selu", "softmax")
    featurization: str = "interleaved"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) != len(self.activations):
            raise ValueError("one weight, bias and activation per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if np.shape(b) != (np.shape(w)[1],):
                raise ValueError(f"layer {i}: bias shape {np.shape(b)} vs weights {np.shape(w)}")
            if i and np.shape(w)[0] != np.shape(self.weights[i - 1])[1]:
                raise ValueError(f"layer {i} does not chain onto layer {i - 1}")
        if self.featurization not in FEATURES:
            raise ValueError(f"unknown featurization {self.featurization!r}")
        if np.shape(self.weights[0])[0] != FEATURES[self.featurization]:
            raise ValueError("input width does not match the featurization")

    @property
    def shapes(self) -> list:
        return [np.shape(w) for w in self.weights]

    def as_dict(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = np.asarray(w)
            out[f"b{i}"] = np.asarray(b)
        return out

    def with_dict(self, d: dict) -> "MlpParams":
        n = len(self.weights)
        return MlpParams([np.asarray(d[f"W{i}"]) for i in range(n)],
                         [np.asarray(d[f"b{i}"]) for i in range(n)],
                         self.activations, self.featurization)


def layer_shapes(featurization: str = "interleaved") -> list:
    sizes = (FEATURES[featurization],) + HIDDEN + (N_OUT,)
    return list(zip(sizes[:-1], sizes[1:]))


def glorot_init(shapes, rng, featurization: str = "interleaved") -> MlpParams:
    """Uniform weights on +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    ws, bs = [], []
    for fan_in, fan_out in shapes:
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    acts = ("selu",) * (len(shapes) - 1) + ("softmax",)
    return MlpParams(ws, bs, acts, featurization)


def slice_blocks(w) -> np.ndarray:
    """Non-overlapping 96-sample slots, (..., n) -> (..., n/96, 96)."""
    x = w.samples if isinstance(w, WaveformGrid) else np.asarray(w)
    n = x.shape[-1]
    if n % SAMPLES_PER_SYMBOL:
        raise ValueError(f"{n} samples do not split into {SAMPLES_PER_SYMBOL}-sample blocks")
    return x.reshape(x.shape[:-1] + (n // SAMPLES_PER_SYMBOL, SAMPLES_PER_SYMBOL))


def features(blocks, featurization: str = "interleaved", scale: float = 1.0):
    """Real input vectors (B, n_in) from complex blocks (B, 96); tape-aware.

    ``interleaved`` keeps every sample as (Re, Im); ``strict96`` keeps every
    second sample so that 48 complex samples fill 96 inputs.
    """
    if featurization == "strict96":
        blocks = ad.apply("getitem", blocks, index=(Ellipsis, slice(0, None, 2)))
    elif featurization != "interleaved":
        raise ValueError(f"unknown featurization {featurization!r}")
    x = ad.interleave(blocks)
    return x * scale if scale != 1.0 else x


def _check(x, where):
    if not np.all(np.isfinite(ad.value_of(x))):
        raise FloatingPointError(f"non-finite activations in {where}")


def nn_forward(p, x, activations=None):
    """Probabilities (B, 16) from features (B, n_in).

    ``p`` is an :class:`MlpParams` or a dict of (possibly taped) ``W{i}``,
    ``b{i}`` entries.
    """
    if isinstance(p, MlpParams):
        activations = p.activations
        p = p.as_dict()
    activations = activations or ("selu", "selu", "softmax")
    h = x
    for i, act in enumerate(activations):
        h = ad.matmul(h, p[f"W{i}"]) + p[f"b{i}"]
        if act == "selu":
            h = ad.selu(h)
        elif act == "softmax":
            h = ad.softmax(h)
        elif act != "linear":
            raise ValueError(f"unknown activation {act!r}")
        _check(h, f"layer {i}")
    return h


def decide(probs) -> np.ndarray:
    """Most likely symbol (1-based); ties go to the lowest index."""
    return np.argmax(np.asarray(probs), axis=-1) + 1


def cross_entropy(probs, labels):
    """Mean ``-log p[label]`` for 1-based labels, p floored at 1e-12."""
    return ad.cross_entropy(probs, np.asarray(labels) - 1)
