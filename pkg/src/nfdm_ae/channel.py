"""Lossy single-polarization fiber link: SSFM spans, EDFAs and OSNR loading.

Field envelope A(l, tau) in sqrt(W) obeys

    dA/dl = -alpha/2 A - i beta2/2 d2A/dtau2 + i gamma |A|^2 A

With numpy's DFT sign convention the linear part is the frequency-domain
multiplier exp(i beta2/2 omega^2 h). The nonlinear/loss sub-step is solved
exactly, A -> A exp(-alpha h/2) exp(i gamma h_eff |A|^2) with
h_eff = (1 - exp(-alpha h))/alpha, so loss never needs its own step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from . import autodiff as ad
from . import fft as _fft
from .grid import (NU_REF, OSNR_REF_BANDWIDTH, PHYSICAL, PLANCK, WaveformGrid,
                   beta2_from_dispersion, db_to_lin)


@dataclass(frozen=True)
class FiberParams:
    span_length: float = 80e3  # m
    D: float = 17.5  # ps/(nm km)
    gamma: float = 1.25  # 1/(W km)
    alpha_db: float = 0.195  # dB/km

    def __post_init__(self):
        if not self.span_length > 0 or not self.D > 0:
            raise ValueError("span length and dispersion must be positive")
        if self.gamma < 0 or self.alpha_db < 0:
            raise ValueError("gamma and alpha must be non-negative")

    @property
    def beta2(self) -> float:
        """s^2/m, negative (anomalous)."""
        return beta2_from_dispersion(self.D)

    @property
    def gamma_per_m(self) -> float:
        return self.gamma * 1e-3

    @property
    def alpha_per_m(self) -> float:
        """Power attenuation coefficient in 1/m."""
        return self.alpha_db * 1e-3 * math.log(10) / 10

    @property
    def span_loss_db(self) -> float:
        return self.alpha_db * self.span_length * 1e-3


@dataclass(frozen=True)
class StepPlan:
    boundaries: np.ndarray = field(repr=False)

    def __post_init__(self):
        z = np.asarray(self.boundaries, dtype=float)
        if z.ndim != 1 or z.size < 2 or z[0] != 0:
            raise ValueError("boundaries must start at 0 and hold at least one step")
        if np.any(np.diff(z) <= 0):
            raise ValueError("boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", z)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.boundaries)

    @property
    def n_steps(self) -> int:
        return self.boundaries.size - 1

    @property
    def length(self) -> float:
        return float(self.boundaries[-1])


@dataclass(frozen=True)
class LinkConfig:
    n_spans: int
    fiber: FiberParams = FiberParams()
    noise_figure_db: float = 5.0
    rng_seed: int = 0
    edfa_gain_db: float | None = None

    def __post_init__(self):
        if self.n_spans < 0:
            raise ValueError("n_spans must be non-negative")
        if self.edfa_gain_db is None:
            object.__setattr__(self, "edfa_gain_db", self.fiber.span_loss_db)
        elif not math.isclose(self.edfa_gain_db, self.fiber.span_loss_db, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError("EDFA gain must equal the span loss")

    @property
    def noiseless(self) -> bool:
        return self.noise_figure_db == -math.inf


def plan_steps(fiber: FiberParams, max_phase_deg: float, ref_peak_power: float) -> StepPlan:
    """Logarithmic step plan for one span.

    Every step accumulates the same nonlinear phase
    ``gamma P_ref int exp(-alpha z) dz`` over it, and the step count is the
    smallest for which the start-of-step bound
    ``gamma P_ref exp(-alpha z_k) h_k <= max_phase`` holds everywhere.
    """
    if not max_phase_deg > 0 or not ref_peak_power > 0:
        raise ValueError("max phase and reference power must be positive")
    phi = math.radians(max_phase_deg)
    L = fiber.span_length
    g = fiber.gamma_per_m * ref_peak_power
    a = fiber.alpha_per_m
    if g == 0:
        return StepPlan(np.array([0.0, L]))
    if a == 0:
        k = math.ceil(g * L / phi * (1 - 1e-12))
        return StepPlan(np.linspace(0.0, L, k + 1))
    c = -math.expm1(-a * L)
    k = max(1, math.ceil(g * c / (a * phi) * (1 - 1e-12)))
    while True:
        u = 1.0 - np.arange(k + 1) * (c / k)
        u[-1] = math.exp(-a * L)
        z = -np.log(u) / a
        z[0], z[-1] = 0.0, L
        h = np.diff(z)
        if np.all(g * np.exp(-a * z[:-1]) * h <= phi * (1 + 1e-12)):
            return StepPlan(z)
        k += 1


# --------------------------------------------------------------------------
# kernels shared by the plain and the taped propagation


SERIES_MAX_PHASE = 0.1


@numba.njit(cache=True, inline="always")
def _cos_sin(th, series):
    if series:
        t2 = th * th
        cs = 1.0 - t2 / 2.0 * (1.0 - t2 / 12.0 * (1.0 - t2 / 30.0 * (1.0 - t2 / 56.0 * (1.0 - t2 / 90.0))))
        sn = th * (1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0 * (1.0 - t2 / 110.0)))))
        return cs, sn
    return math.cos(th), math.sin(th)


@numba.njit(cache=True)
def _max_abs2(xv):
    m = 0.0
    for i in range(xv.size // 2):
        p = xv[2 * i] * xv[2 * i] + xv[2 * i + 1] * xv[2 * i + 1]
        if p > m:
            m = p
    return m


@numba.njit(cache=True)
def _kerr_loop(xv, ov, c, kappa, series):
    for i in range(xv.size // 2):
        xr = xv[2 * i]
        xi = xv[2 * i + 1]
        cs, sn = _cos_sin(kappa * (xr * xr + xi * xi), series)
        ov[2 * i] = c * (xr * cs - xi * sn)
        ov[2 * i + 1] = c * (xr * sn + xi * cs)


@numba.njit(cache=True)
def _kerr_adjoint_loop(xv, gv, ov, c, kappa, series):
    # y = c x exp(i th), th = kappa |x|^2:
    # adj_x = c exp(-i th) g - 2 kappa Im(conj(g) y) x
    for i in range(xv.size // 2):
        xr = xv[2 * i]
        xi = xv[2 * i + 1]
        cs, sn = _cos_sin(kappa * (xr * xr + xi * xi), series)
        yr = c * (xr * cs - xi * sn)
        yi = c * (xr * sn + xi * cs)
        gr = gv[2 * i]
        gi = gv[2 * i + 1]
        im = gr * yi - gi * yr
        ov[2 * i] = c * (gr * cs + gi * sn) - 2.0 * kappa * im * xr
        ov[2 * i + 1] = c * (gi * cs - gr * sn) - 2.0 * kappa * im * xi


def _flat(x):
    return x.reshape(-1).view(np.float64)


def kerr(x, out, c, kappa):
    """``out = c x exp(i kappa |x|^2)``; a short series when every phase is small."""
    xv = _flat(x)
    series = kappa * _max_abs2(xv) < SERIES_MAX_PHASE
    _kerr_loop(xv, _flat(out), c, kappa, series)
    return out


def kerr_adjoint(x, g, out, c, kappa):
    xv = _flat(x)
    series = kappa * _max_abs2(xv) < SERIES_MAX_PHASE
    _kerr_adjoint_loop(xv, _flat(np.ascontiguousarray(g)), _flat(out), c, kappa, series)
    return out


def nonlinear_substep(x, c, kappa):
    x = np.ascontiguousarray(x, dtype=complex)
    return kerr(x, np.empty_like(x), c, kappa)


def angular_frequencies(n: int, dt: float) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(n, dt)


class SpanOperator:
    """Precomputed split-step sequence for one span on a fixed time grid.

    Adjacent half-step dispersion operators are merged, so the span is one
    initial half-step followed by ``n_steps`` fused (nonlinearity, dispersion)
    sub-steps. Filters carry the 1/N of the inverse DFT.
    """

    _FILTER_BYTES = 400 * 2**20

    def __init__(self, n: int, dt: float, fiber: FiberParams, plan: StepPlan):
        self.n, self.dt, self.fiber, self.plan = n, dt, fiber, plan
        h = plan.steps
        a = fiber.alpha_per_m
        self.loss = np.exp(-a * h / 2)
        heff = -np.expm1(-a * h) / a if a > 0 else h.copy()
        self.kappa = fiber.gamma_per_m * heff
        lin = np.empty_like(h)
        lin[:-1] = (h[:-1] + h[1:]) / 2
        lin[-1] = h[-1] / 2
        self.lin_lengths = lin
        self.first_length = h[0] / 2
        self._w2 = 0.5 * fiber.beta2 * angular_frequencies(n, dt) ** 2
        self.first_filter = self._make(self.first_length)
        self._bank = None
        if h.size * n * 16 <= self._FILTER_BYTES:
            self._bank = np.exp(1j * np.outer(lin, self._w2)) / n

    def _make(self, length):
        return np.exp(1j * self._w2 * length) / self.n

    @property
    def n_steps(self) -> int:
        return self.lin_lengths.size

    def filter(self, k: int) -> np.ndarray:
        if self._bank is not None:
            return self._bank[k]
        return self._make(self.lin_lengths[k])

    def propagate(self, x: np.ndarray) -> np.ndarray:
        ch = _fft.chain(np.shape(x))
        ch.inp[...] = x
        ch.run(self.first_filter)
        for k in range(self.n_steps):
            kerr(ch.out, ch.inp, self.loss[k], self.kappa[k])
            ch.run(self.filter(k))
        return ch.out.copy()

    def propagate_taped(self, x):
        x = ad.apply("linear_filter", x, H=self.first_filter)
        for k in range(self.n_steps):
            x = ad.apply("ssfm_step", x, c=self.loss[k], kappa=self.kappa[k], H=self.filter(k))
        return x


_operators: dict = {}


def span_operator(n: int, dt: float, fiber: FiberParams, plan: StepPlan) -> SpanOperator:
    key = (n, float(dt), fiber, plan.boundaries.tobytes())
    op = _operators.get(key)
    if op is None:
        if len(_operators) > 4:
            _operators.clear()
        op = _operators[key] = SpanOperator(n, dt, fiber, plan)
    return op


def _filtered(x, H):
    ch = _fft.chain(np.shape(x))
    ch.inp[...] = x
    return ch.run(H).copy()


@ad.register
class _LinearFilter(ad.Primitive):
    """``IDFT(H DFT(x))`` for an even (omega -> -omega symmetric) filter ``H``."""

    name = "linear_filter"

    def forward(self, x, H):
        return _filtered(x, H)

    def vjp(self, g, xs, y, H):
        return (_filtered(g, np.conj(H)),)


@ad.register
class _SSFMStep(ad.Primitive):
    """Exact lossy Kerr sub-step followed by a dispersion filter."""

    name = "ssfm_step"

    def forward(self, x, c, kappa, H):
        ch = _fft.chain(np.shape(x))
        kerr(np.ascontiguousarray(x, dtype=complex), ch.inp, c, kappa)
        return ch.run(H).copy()

    def vjp(self, g, xs, y, c, kappa, H):
        (x,) = xs
        gn = _filtered(g, np.conj(H))
        return (kerr_adjoint(np.ascontiguousarray(x, dtype=complex), gn, np.empty_like(gn), c, kappa),)


def _check_finite(x, where):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite field after {where}")


def ssfm_span(w: WaveformGrid, fiber: FiberParams, plan: StepPlan) -> WaveformGrid:
    w.expect(PHYSICAL)
    op = span_operator(w.n, w.dt, fiber, plan)
    x = op.propagate(np.asarray(w.samples, dtype=complex))
    _check_finite(x, "SSFM span")
    return w.with_samples(x)


# --------------------------------------------------------------------------
# noise


def ase_psd(gain_db: float, nf_db: float, nu: float = NU_REF) -> float:
    """Single-polarization ASE PSD n_sp h nu (G - 1) in W/Hz."""
    if nf_db == -math.inf:
        return 0.0
    n_sp = db_to_lin(nf_db) / 2
    return float(n_sp * PLANCK * nu * (db_to_lin(gain_db) - 1))


def complex_normal(rng, shape) -> np.ndarray:
    """Circular complex Gaussian with unit variance E|n|^2 = 1."""
    z = rng.standard_normal((2,) + tuple(shape))
    return (z[0] + 1j * z[1]) * math.sqrt(0.5)


def edfa_amplify(w: WaveformGrid, gain_db: float, nf_db: float, rng, noise=None) -> WaveformGrid:
    """Amplify by ``gain_db`` and add ASE; ``noise`` may supply the unit draws."""
    if gain_db < 0:
        raise ValueError("gain must be non-negative")
    w.expect(PHYSICAL)
    x = w.samples * 10 ** (gain_db / 20)
    var = ase_psd(gain_db, nf_db) / w.dt
    if var > 0:
        if noise is None:
            noise = complex_normal(rng, x.shape)
        x = x + math.sqrt(var) * noise
    return w.with_samples(x)


def osnr_noise_scale(osnr_db: float, dt: float) -> float:
    """Noise std per unit sqrt(signal power): sqrt(fs / (OSNR B_ref))."""
    if osnr_db == math.inf:
        return 0.0
    return math.sqrt((1 / dt) / (db_to_lin(osnr_db) * OSNR_REF_BANDWIDTH))


def load_osnr(w: WaveformGrid, osnr_db: float, rng, noise=None) -> WaveformGrid:
    """Add white noise so that P_signal / (N0 * 12.5 GHz) equals the OSNR.

    Signal power is averaged over the last axis.
    """
    w.expect(PHYSICAL)
    x = np.asarray(w.samples)
    p = np.mean(x.real**2 + x.imag**2, axis=-1)
    if np.any(p <= 0):
        raise ValueError("cannot set the OSNR of a zero-power waveform")
    s = osnr_noise_scale(osnr_db, w.dt)
    if s == 0:
        return w.with_samples(np.array(x, copy=True))
    if noise is None:
        noise = complex_normal(rng, x.shape)
    amp = np.reshape(np.power(p, 0.5), p.shape + (1,))
    return w.with_samples(x + amp * (s * noise))


def load_osnr_taped(x, osnr_db: float, dt: float, noise):
    """Tape-aware :func:`load_osnr` with given unit noise draws."""
    s = osnr_noise_scale(osnr_db, dt)
    if s == 0:
        return x
    p = ad.mean(ad.abs2(x), axis=-1)
    amp = ad.reshape(ad.sqrt(p), np.shape(ad.value_of(p)) + (1,))
    return x + amp * (s * noise)


# --------------------------------------------------------------------------
# link


def draw_link_noise(rng, link: LinkConfig, shape) -> np.ndarray | None:
    """Unit ASE draws for every span, in consumption order."""
    if link.noiseless or link.n_spans == 0:
        return None
    return complex_normal(rng, (link.n_spans,) + tuple(shape))


def propagate_link(w: WaveformGrid, link: LinkConfig, plan: StepPlan, rng=None,
                   noise=None) -> WaveformGrid:
    """``n_spans`` x (SSFM span, EDFA). Deterministic given the generator state."""
    w.expect(PHYSICAL)
    if noise is None and not link.noiseless and link.n_spans:
        if rng is None:
            rng = np.random.default_rng(link.rng_seed)
        noise = draw_link_noise(rng, link, np.shape(w.samples))
    op = span_operator(w.n, w.dt, link.fiber, plan)
    gain = 10 ** (link.edfa_gain_db / 20)
    sigma = math.sqrt(ase_psd(link.edfa_gain_db, link.noise_figure_db) / w.dt)
    x = np.asarray(w.samples, dtype=complex)
    for k in range(link.n_spans):
        x = op.propagate(x) * gain
        if noise is not None:
            x = x + sigma * noise[k]
        _check_finite(x, f"span {k + 1}")
    return w.with_samples(x)


def propagate_link_taped(x, dt: float, link: LinkConfig, plan: StepPlan, noise=None,
                         checkpointed: bool = True):
    """Taped counterpart of :func:`propagate_link`; one checkpoint per span."""
    n = ad.value_of(x).shape[-1]
    op = span_operator(n, dt, link.fiber, plan)
    gain = 10 ** (link.edfa_gain_db / 20)
    sigma = math.sqrt(ase_psd(link.edfa_gain_db, link.noise_figure_db) / dt)
    for k in range(link.n_spans):
        nk = None if noise is None else sigma * noise[k]

        def span(v, nk=nk):
            v = op.propagate_taped(v) * gain
            return v if nk is None else v + nk

        x = ad.checkpoint(span, x) if checkpointed else span(x)
    return x
