"""FFT along the last axis, backed by FFTW.

Plans use FFTW_ESTIMATE so that the chosen algorithm (and hence every
rounding) is the same in every process; FFTW_MEASURE would make repeated
runs differ in the last bit.
"""
from __future__ import annotations

import numpy as np
import pyfftw

_FLAGS = ("FFTW_ESTIMATE",)
_plans: dict = {}
_chains: dict = {}


def _plan(shape, direction):
    key = (shape, direction)
    plan = _plans.get(key)
    if plan is None:
        a = pyfftw.empty_aligned(shape, dtype="complex128")
        b = pyfftw.empty_aligned(shape, dtype="complex128")
        plan = pyfftw.FFTW(a, b, axes=(-1,), direction=direction, flags=_FLAGS, threads=1)
        _plans[key] = plan
    return plan


def fft(x: np.ndarray) -> np.ndarray:
    plan = _plan(np.shape(x), "FFTW_FORWARD")
    plan.input_array[...] = x
    plan.execute()
    return plan.output_array.copy()


def ifft(x: np.ndarray) -> np.ndarray:
    plan = _plan(np.shape(x), "FFTW_BACKWARD")
    plan.input_array[...] = x
    plan.execute()
    return plan.output_array / x.shape[-1]


class FilterChain:
    """``out = IDFT(H DFT(inp))`` on fixed aligned buffers, without copies.

    ``H`` must already contain the 1/N of the inverse transform. Write the
    input into ``inp`` (or let a kernel fill it), call :meth:`run`, read
    ``out``; ``out`` is overwritten by the next run.
    """

    def __init__(self, shape):
        self.inp = pyfftw.empty_aligned(shape, dtype="complex128")
        self.freq = pyfftw.empty_aligned(shape, dtype="complex128")
        self.out = pyfftw.empty_aligned(shape, dtype="complex128")
        self._fwd = pyfftw.FFTW(self.inp, self.freq, axes=(-1,), direction="FFTW_FORWARD",
                                flags=_FLAGS, threads=1)
        self._bwd = pyfftw.FFTW(self.freq, self.out, axes=(-1,), direction="FFTW_BACKWARD",
                                flags=_FLAGS, threads=1)

    def run(self, H) -> np.ndarray:
        self._fwd.execute()
        np.multiply(self.freq, H, out=self.freq)
        self._bwd.execute()
        return self.out


def chain(shape) -> FilterChain:
    shape = tuple(shape)
    c = _chains.get(shape)
    if c is None:
        if len(_chains) > 8:
            _chains.clear()
        c = _chains[shape] = FilterChain(shape)
    return c


def clear_cache() -> None:
    _plans.clear()
    _chains.clear()
