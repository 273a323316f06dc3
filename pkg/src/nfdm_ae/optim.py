"""Nadam (Adam with Nesterov momentum) and the step-decay learning rate."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict, **hyper) -> "OptimizerState":
        return cls({k: np.zeros_like(np.asarray(v, float)) for k, v in params.items()},
                   {k: np.zeros_like(np.asarray(v, float)) for k, v in params.items()}, 0, **hyper)

    def copy(self) -> "OptimizerState":
        return OptimizerState({k: v.copy() for k, v in self.first_moment.items()},
                              {k: v.copy() for k, v in self.second_moment.items()},
                              self.step_count, self.beta1, self.beta2, self.eps)


def nadam_step(state: OptimizerState, params: dict, grads: dict, lr: float, trainable=None):
    """One Nadam update (Dozat's form with a constant momentum schedule).

    With ``m_t``, ``v_t`` the Adam moments at step ``t``::

        m_hat = b1 m_t / (1 - b1^(t+1)) + (1 - b1) g / (1 - b1^t)
        theta -= lr m_hat / (sqrt(v_t / (1 - b2^t)) + eps)

    Only names in ``trainable`` (all by default) are touched; the others are
    returned as the very same arrays and their moments stay untouched.
    """
    names = list(params) if trainable is None else [k for k in params if k in trainable]
    for k in names:
        g = np.asarray(grads[k])
        if g.shape != np.shape(params[k]):
            raise ValueError(f"gradient shape mismatch for {k!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k!r}; step rejected")
    new = state.copy()
    new.step_count += 1
    t = new.step_count
    b1, b2 = state.beta1, state.beta2
    out = dict(params)
    for k in names:
        g = np.asarray(grads[k], float)
        m = b1 * new.first_moment[k] + (1 - b1) * g
        v = b2 * new.second_moment[k] + (1 - b2) * g * g
        new.first_moment[k], new.second_moment[k] = m, v
        m_hat = b1 * m / (1 - b1 ** (t + 1)) + (1 - b1) * g / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        out[k] = np.asarray(params[k], float) - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, out


PAPER_BREAKS = (1600, 4000)
PAPER_RATES = (0.01, 0.003, 0.001)
PAPER_ITERATIONS = 6400


def lr_schedule(iteration: int, n_iter: int = PAPER_ITERATIONS, breaks=PAPER_BREAKS,
                rates=PAPER_RATES) -> float:
    """Step decay: ``rates[j]`` after ``breaks[j-1]`` iterations (1-based)."""
    if not 1 <= iteration <= n_iter:
        raise ValueError(f"iteration {iteration} outside 1..{n_iter}")
    for b, r in zip(breaks, rates):
        if iteration <= b:
            return r
    return rates[len(breaks)]


def scaled_breaks(n_iter: int, breaks=PAPER_BREAKS, ref: int = PAPER_ITERATIONS) -> tuple:
    """Breakpoints stretched to a run of ``n_iter`` iterations."""
    return tuple(int(round(b * n_iter / ref)) for b in breaks)
