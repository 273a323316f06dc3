"""Sampled waveforms and the physical constants shared by every stage."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

C_LIGHT = 299_792_458.0
PLANCK = 6.62607015e-34
LAMBDA_REF = 1550e-9
NU_REF = C_LIGHT / LAMBDA_REF

SAMPLES_PER_SYMBOL = 96
SYMBOL_PERIOD = 1e-9
OSNR_REF_BANDWIDTH = 12.5e9

PHYSICAL = "physical"
NORMALIZED = "normalized"


class FrameError(ValueError):
    """Raised when a waveform is handed to a stage expecting the other frame."""


@dataclass(frozen=True)
class WaveformGrid:
    """Uniformly sampled complex envelope.

    ``dt`` is in seconds for the physical frame and in units of the
    normalization time ``T0`` for the normalized frame. The last axis is
    time; leading axes (if any) index independent waveforms.
    """

    samples: np.ndarray
    dt: float
    frame: str = PHYSICAL

    def __post_init__(self):
        if self.frame not in (PHYSICAL, NORMALIZED):
            raise ValueError(f"unknown frame {self.frame!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        n = np.shape(self.samples)[-1]
        if n % SAMPLES_PER_SYMBOL:
            raise ValueError(f"{n} samples is not a multiple of {SAMPLES_PER_SYMBOL}")

    @property
    def n(self) -> int:
        return self.samples.shape[-1]

    @property
    def times(self) -> np.ndarray:
        return centered_times(self.n, self.dt)

    def energy(self) -> np.ndarray:
        return np.sum(np.abs(self.samples) ** 2, axis=-1) * self.dt

    def average_power(self) -> np.ndarray:
        return np.mean(np.abs(self.samples) ** 2, axis=-1)

    def expect(self, frame: str) -> "WaveformGrid":
        if self.frame != frame:
            raise FrameError(f"expected a {frame} waveform, got {self.frame}")
        return self

    def with_samples(self, samples: np.ndarray) -> "WaveformGrid":
        return WaveformGrid(samples, self.dt, self.frame)


def centered_times(n: int, dt: float) -> np.ndarray:
    """Cell-centred sample times of a window ``[-n dt/2, n dt/2]``."""
    return (np.arange(n) - (n - 1) / 2) * dt


def db_to_lin(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def watt_to_dbm(p):
    return 10.0 * np.log10(np.asarray(p, dtype=float) / 1e-3)


def beta2_from_dispersion(D_ps_nm_km: float, wavelength: float = LAMBDA_REF) -> float:
    """GVD coefficient in s^2/m from D in ps/(nm km)."""
    D = D_ps_nm_km * 1e-6  # s/m^2
    return -D * wavelength**2 / (2 * np.pi * C_LIGHT)
