"""Normalized NLSE frame, Darboux inverse NFT and a discrete forward NFT.

Conventions. The normalized field obeys ``i q_z = q_tt + 2|q|^2 q``. The
Zakharov-Shabat problem is ``v_t = [[-i lam, q], [-conj(q), i lam]] v`` with
the Jost solution ``phi -> [exp(-i lam t), 0]`` as ``t -> -inf`` and
``phi -> [a exp(-i lam t), b exp(i lam t)]`` as ``t -> +inf``. A discrete
eigenvalue is a root of ``a`` in the upper half plane and its ``b`` is the
connection coefficient ``phi = b psi`` with ``psi -> [0, exp(i lam t)]``.

With this convention a lone soliton with eigenvalue ``i eta`` is centred at
``t0 = ln|b| / (2 eta)``, so ``|b| = 1`` places it in the middle of the slot.
"""
from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np

from .grid import NORMALIZED, PHYSICAL, WaveformGrid, centered_times

EDGE_TOL = 1e-6
DEGENERACY_TOL = 1e-9
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
MERGE_RADIUS = 1e-6
OVERFLOW_EXP = 650.0


class NumericalDegeneracyError(ValueError):
    """Two eigenvalues are too close for the Darboux recursion."""


class EdgeWarning(UserWarning):
    """The waveform has not decayed at the edges of its window."""


# --------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormalizationParams:
    T0: float  # s
    P: float  # W
    L_nft: float  # m
    gamma_hat: float  # 1/(W km)
    beta2: float  # s^2/m

    def __post_init__(self):
        if not self.T0 > 0 or not self.gamma_hat > 0:
            raise ValueError("T0 and gamma_hat must be positive")
        if not self.beta2 < 0:
            raise ValueError("normalization requires anomalous dispersion (beta2 < 0)")


def derive_normalization(fiber, T0: float, gamma_hat: float) -> NormalizationParams:
    """Scales of the normalized frame for a fiber, ``T0`` and ``gamma_hat``."""
    beta2 = fiber.beta2
    if not beta2 < 0:
        raise ValueError("normalization requires anomalous dispersion (D > 0)")
    if not T0 > 0 or not gamma_hat > 0:
        raise ValueError("T0 and gamma_hat must be positive")
    P = abs(beta2) / (gamma_hat * 1e-3 * T0**2)
    return NormalizationParams(T0=T0, P=P, L_nft=2 * T0**2 / abs(beta2),
                               gamma_hat=gamma_hat, beta2=beta2)


def denormalize(q: WaveformGrid, norm: NormalizationParams) -> WaveformGrid:
    q.expect(NORMALIZED)
    return WaveformGrid(q.samples * math.sqrt(norm.P), q.dt * norm.T0, PHYSICAL)


def normalize(w: WaveformGrid, norm: NormalizationParams) -> WaveformGrid:
    w.expect(PHYSICAL)
    return WaveformGrid(w.samples / math.sqrt(norm.P), w.dt / norm.T0, NORMALIZED)


# --------------------------------------------------------------------------
# spectra


@dataclass(frozen=True)
class DiscreteSpectrum:
    eigenvalues: tuple
    b_coeffs: tuple

    def __post_init__(self):
        lam = tuple(complex(x) for x in np.atleast_1d(self.eigenvalues))
        b = tuple(complex(x) for x in np.atleast_1d(self.b_coeffs))
        if len(lam) != len(b):
            raise ValueError("need one b coefficient per eigenvalue")
        if any(not x.imag > 0 for x in lam):
            raise ValueError("eigenvalues must lie in the upper half plane")
        if any(x == 0 or not np.isfinite(x) for x in b):
            raise ValueError("b coefficients must be finite and nonzero")
        check_distinct(lam)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "b_coeffs", b)

    def __len__(self):
        return len(self.eigenvalues)


def check_distinct(eigs, tol: float = DEGENERACY_TOL) -> None:
    eigs = np.asarray(eigs, dtype=complex)
    for i in range(eigs.size):
        for j in range(i + 1, eigs.size):
            if abs(eigs[i] - eigs[j]) < tol:
                raise NumericalDegeneracyError(
                    f"eigenvalues {eigs[i]} and {eigs[j]} are nearly coincident")


def spectrum_energy(spectrum: DiscreteSpectrum) -> float:
    """Normalized energy 4 sum Im(lam); the b coefficients do not enter."""
    return 4.0 * sum(x.imag for x in spectrum.eigenvalues)


# --------------------------------------------------------------------------
# inverse NFT


def darboux_batch(eigs, b, t) -> np.ndarray:
    """Multi-soliton potentials for fixed eigenvalues and a batch of b's.

    ``eigs`` has shape (K,), ``b`` shape (..., K); returns (..., len(t)).
    Eigenvalues are added in ascending order of their imaginary part.
    """
    eigs = np.asarray(eigs, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if b.shape[-1] != eigs.size:
        raise ValueError("b must have one entry per eigenvalue on its last axis")
    check_distinct(eigs)
    order = np.argsort(eigs.imag, kind="stable")
    eigs = eigs[order]
    b = b[..., order]
    t = np.asarray(t, dtype=float)
    # seeds [exp(-i lam t), -b exp(i lam t)], scaled by their larger modulus
    phis = []
    for k, lam in enumerate(eigs):
        e1 = -1j * lam * t
        e2 = 1j * lam * t + np.log(-b[..., k])[..., None]
        s = np.maximum(e1.real, e2.real)
        phis.append([np.exp(e1 - s), np.exp(e2 - s)])
    q = np.zeros(b.shape[:-1] + t.shape, dtype=complex)
    for k, lam in enumerate(eigs):
        p1, p2 = phis[k]
        n1 = p1.real**2 + p1.imag**2
        n2 = p2.real**2 + p2.imag**2
        d = n1 + n2
        cross = p1 * np.conj(p2) / d
        q = q + 4.0 * lam.imag * cross
        lc = np.conj(lam)
        s11 = (lam * n1 + lc * n2) / d
        s22 = (lc * n1 + lam * n2) / d
        s12 = (lam - lc) * cross
        s21 = (lam - lc) * np.conj(cross)
        for j in range(k + 1, eigs.size):
            u1, u2 = phis[j]
            w1 = (eigs[j] - s11) * u1 - s12 * u2
            w2 = -s21 * u1 + (eigs[j] - s22) * u2
            m = np.maximum(np.abs(w1), np.abs(w2))
            phis[j] = [w1 / m, w2 / m]
    return q


def edge_ratio(q: np.ndarray) -> np.ndarray:
    """Largest edge modulus relative to the peak, per waveform."""
    a = np.abs(q)
    peak = np.max(a, axis=-1)
    edge = np.maximum(a[..., 0], a[..., -1])
    return edge / np.where(peak > 0, peak, 1.0)


def inft_darboux(spectrum: DiscreteSpectrum, n_samples: int, dt: float) -> WaveformGrid:
    """Sample the multi-soliton of ``spectrum`` on a window centred on t = 0."""
    t = centered_times(n_samples, dt)
    q = darboux_batch(spectrum.eigenvalues, spectrum.b_coeffs, t)
    if edge_ratio(q) > EDGE_TOL:
        warnings.warn(f"waveform edge at {float(edge_ratio(q)):.2e} of its peak; "
                      "the window truncates the soliton", EdgeWarning, stacklevel=2)
    return WaveformGrid(q, dt, NORMALIZED)


# --------------------------------------------------------------------------
# forward NFT: piecewise-constant layers with exact per-layer exponentials


@numba.njit(cache=True)
def _layer(qn, h, lam, want_deriv):
    # M = C I + S U, U = [[-i lam, q], [-conj q, i lam]], kappa^2 = -lam^2 - |q|^2
    x = -lam * lam - (qn.real * qn.real + qn.imag * qn.imag)
    xh2 = x * h * h
    if abs(xh2) < 0.1:
        C = 1 + xh2 / 2 * (1 + xh2 / 12 * (1 + xh2 / 30 * (1 + xh2 / 56 * (1 + xh2 / 90))))
        S = h * (1 + xh2 / 6 * (1 + xh2 / 20 * (1 + xh2 / 42 * (1 + xh2 / 72 * (1 + xh2 / 110)))))
        # (hC - S)/x
        R = h**3 * (1 / 3 + xh2 * (1 / 30 + xh2 * (1 / 840 + xh2 * (1 / 45360 + xh2 / 4989600))))
    else:
        k = cmath.sqrt(x)
        C = cmath.cosh(k * h)
        S = cmath.sinh(k * h) / k
        R = (h * C - S) / x if want_deriv else 0j
    m11 = C - 1j * lam * S
    m12 = S * qn
    m21 = -S * np.conj(qn)
    m22 = C + 1j * lam * S
    if not want_deriv:
        return m11, m12, m21, m22, 0j, 0j, 0j, 0j
    dC = -lam * h * S
    dS = -lam * R
    d11 = dC - 1j * lam * dS - 1j * S
    d12 = dS * qn
    d21 = -dS * np.conj(qn)
    d22 = dC + 1j * lam * dS + 1j * S
    return m11, m12, m21, m22, d11, d12, d21, d22


@numba.njit(cache=True)
def _a_and_da(q, h, lam):
    # propagate u = phi exp(i lam ts) from [1, 0]; returns u1, du1/dlam and log scale
    u1 = 1.0 + 0j
    u2 = 0j
    v1 = 0j
    v2 = 0j
    logs = 0.0
    for n in range(q.size):
        m11, m12, m21, m22, d11, d12, d21, d22 = _layer(q[n], h, lam, True)
        nv1 = d11 * u1 + d12 * u2 + m11 * v1 + m12 * v2
        nv2 = d21 * u1 + d22 * u2 + m21 * v1 + m22 * v2
        nu1 = m11 * u1 + m12 * u2
        nu2 = m21 * u1 + m22 * u2
        s = max(abs(nu1.real) + abs(nu1.imag), abs(nu2.real) + abs(nu2.imag))
        if s > 1e100 or s < 1e-100:
            logs += math.log(s)
            nu1 /= s
            nu2 /= s
            nv1 /= s
            nv2 /= s
        u1, u2, v1, v2 = nu1, nu2, nv1, nv2
    return u1, v1, logs


@numba.njit(cache=True)
def _a_batch(Q, h, lams, width, out_a, out_da, out_exp):
    # Q (B, N), lams (B, K); a = exp(logs + i lam W) u1, a' adds i W u1
    for i in range(Q.shape[0]):
        for j in range(lams.shape[1]):
            lam = lams[i, j]
            u1, v1, logs = _a_and_da(Q[i], h, lam)
            e = logs + 1j * lam * width
            out_exp[i, j] = e.real
            if e.real > 700.0:
                out_a[i, j] = np.nan
                out_da[i, j] = np.nan
                continue
            f = cmath.exp(e)
            out_a[i, j] = f * u1
            out_da[i, j] = f * (v1 + 1j * width * u1)


@numba.njit(cache=True)
def _bound_state_b(q, h, lam, ts, te):
    # b from phi = b psi at the node where both solutions are largest
    n = q.size
    pu1 = np.empty(n + 1, np.complex128)
    pu2 = np.empty(n + 1, np.complex128)
    pl = np.empty(n + 1)
    pu1[0] = 1.0
    pu2[0] = 0.0
    pl[0] = 0.0
    for k in range(n):
        m11, m12, m21, m22, _, _, _, _ = _layer(q[k], h, lam, False)
        a1 = m11 * pu1[k] + m12 * pu2[k]
        a2 = m21 * pu1[k] + m22 * pu2[k]
        s = max(abs(a1), abs(a2))
        pu1[k + 1] = a1 / s
        pu2[k + 1] = a2 / s
        pl[k + 1] = pl[k] + math.log(s)
    qu1 = np.empty(n + 1, np.complex128)
    qu2 = np.empty(n + 1, np.complex128)
    ql = np.empty(n + 1)
    qu1[n] = 0.0
    qu2[n] = 1.0
    ql[n] = 0.0
    for k in range(n - 1, -1, -1):
        # inverse layer: C I - S U (unit determinant)
        m11, m12, m21, m22, _, _, _, _ = _layer(q[k], h, lam, False)
        a1 = m22 * qu1[k + 1] - m12 * qu2[k + 1]
        a2 = -m21 * qu1[k + 1] + m11 * qu2[k + 1]
        s = max(abs(a1), abs(a2))
        qu1[k] = a1 / s
        qu2[k] = a2 / s
        ql[k] = ql[k + 1] + math.log(s)
    best = 0
    score = -1e300
    for k in range(n + 1):
        v = pl[k] + ql[k]
        if v > score:
            score = v
            best = k
    if abs(qu1[best]) > abs(qu2[best]):
        r = pu1[best] / qu1[best]
    else:
        r = pu2[best] / qu2[best]
    return r * cmath.exp(pl[best] - ql[best] - 1j * lam * (ts + te))


@numba.njit(cache=True)
def _b_batch(Q, h, lams, ts, te, out):
    for i in range(Q.shape[0]):
        for j in range(lams.shape[1]):
            out[i, j] = _bound_state_b(Q[i], h, lams[i, j], ts, te)


@numba.njit(cache=True)
def _b_real_axis(q, h, lam, ts, te):
    u1 = cmath.exp(-1j * lam * ts)
    u2 = 0j
    for k in range(q.size):
        m11, m12, m21, m22, _, _, _, _ = _layer(q[k], h, lam, False)
        u1, u2 = m11 * u1 + m12 * u2, m21 * u1 + m22 * u2
    return u2 * cmath.exp(-1j * lam * te)


# stride s of the Richardson ladder uses samples o, o + s, ... with o = (s - 1) // 2
_RICHARDSON = {1: (1.0,), 2: (4 / 3, -1 / 3), 3: (64 / 45, -20 / 45, 1 / 45)}


def _level(samples, dt, stride):
    o = (stride - 1) // 2
    n = samples.shape[-1]
    t0 = -(n - 1) / 2 * dt + o * dt
    h = stride * dt
    ts = t0 - h / 2
    return np.ascontiguousarray(samples[..., o::stride]), h, ts, ts + n * dt


def _as_batch(q):
    Q = np.asarray(q, dtype=complex)
    return Q.reshape(-1, Q.shape[-1]), Q.shape[:-1]


def scattering_a(samples, dt, lams, stride: int = 1):
    """``a`` and ``da/dlam`` for potentials (B, N) at eigenvalue guesses (B, K)."""
    Q, h, ts, te = _level(samples, dt, stride)
    lams = np.ascontiguousarray(lams, dtype=complex)
    a = np.empty(lams.shape, complex)
    da = np.empty(lams.shape, complex)
    ex = np.empty(lams.shape)
    _a_batch(Q, h, lams, te - ts, a, da, ex)
    if np.any(ex > OVERFLOW_EXP):
        raise FloatingPointError("scattering coefficient overflow; Im(lam) * T too large")
    return a, da


def scattering_b(samples, dt, lams, stride: int = 1):
    Q, h, ts, te = _level(samples, dt, stride)
    lams = np.ascontiguousarray(lams, dtype=complex)
    out = np.empty(lams.shape, complex)
    _b_batch(Q, h, lams, ts, te, out)
    return out


def _check_window(q: WaveformGrid, lam):
    if abs(complex(lam).imag) * q.n * q.dt > OVERFLOW_EXP:
        raise FloatingPointError("scattering coefficient overflow; Im(lam) * T too large")


def nft_scattering(q: WaveformGrid, lam: complex):
    """``(a, da/dlam, b)`` of one normalized potential at ``lam``.

    Off the real axis ``b`` is the bound-state connection coefficient, which
    equals the spectral ``b`` whenever ``lam`` is an eigenvalue; on the real
    axis it is the usual ``phi_2(t_end) exp(-i lam t_end)``.
    """
    q.expect(NORMALIZED)
    lam = complex(lam)
    if lam.imag < 0:
        raise ValueError("lambda must lie in the closed upper half plane")
    _check_window(q, lam)
    s = np.ascontiguousarray(np.reshape(q.samples, (1, -1)), dtype=complex)
    a, da = scattering_a(s, q.dt, np.array([[lam]]))
    Qs, h, ts, te = _level(s, q.dt, 1)
    if lam.imag == 0:
        b = _b_real_axis(Qs[0], h, lam, ts, te)
    else:
        b = scattering_b(s, q.dt, np.array([[lam]]))[0, 0]
    return complex(a[0, 0]), complex(da[0, 0]), complex(b)


# --------------------------------------------------------------------------
# eigenvalue search


def newton_batch(samples, dt, guesses, stride: int = 1, tol: float = NEWTON_TOL,
                 max_iter: int = NEWTON_MAX_ITER):
    """Vectorized Newton iteration on ``a``. Returns ``(roots, converged)``."""
    Q, shape = _as_batch(samples)
    lam = np.array(guesses, dtype=complex).reshape(Q.shape[0], -1)
    done = np.zeros(lam.shape, bool)
    alive = np.ones(lam.shape, bool)
    for _ in range(max_iter):
        rows = np.flatnonzero(np.any(alive & ~done, axis=1))
        if rows.size == 0:
            break
        a, da = scattering_a(Q[rows], dt, lam[rows], stride)
        ok = np.isfinite(a) & np.isfinite(da) & (da != 0)
        step = np.where(ok, a / np.where(ok, da, 1), 0)
        act = alive[rows] & ~done[rows]
        conv = ok & (np.abs(a) < tol)
        new = np.where(act & ~conv, lam[rows] - step, lam[rows])
        bad = ~ok | (new.imag <= 0) | ~np.isfinite(new)
        alive[rows] &= ~(act & bad & ~conv)
        lam[rows] = np.where(act & ~bad, new, lam[rows])
        done[rows] |= act & conv
    return lam.reshape(shape + lam.shape[-1:]), done.reshape(shape + lam.shape[-1:])


@dataclass
class EigenvalueResult:
    roots: list
    per_guess: list
    converged: list

    @property
    def failures(self) -> list:
        return [i for i, c in enumerate(self.converged) if not c]


def merge_roots(roots, radius: float = MERGE_RADIUS) -> list:
    out = []
    for r in roots:
        if all(abs(r - o) >= radius for o in out):
            out.append(r)
    return out


def richardson_spectrum(samples, dt, guesses, levels: int = 1):
    """Eigenvalues and b's refined over strided sub-grids.

    Each level runs its own Newton search (warm-started from the finest
    grid) so ``b`` is always evaluated at an exact root of that grid's
    ``a``; the per-level results are then combined to cancel the h^2 and
    h^4 error terms.
    """
    if levels not in _RICHARDSON:
        raise ValueError("levels must be 1, 2 or 3")
    Q, shape = _as_batch(samples)
    if Q.shape[-1] % (2 ** (levels - 1)):
        raise ValueError("sample count must be divisible by the coarsest stride")
    g = np.asarray(guesses, dtype=complex).reshape(Q.shape[0], -1)
    lam, conv = newton_batch(Q, dt, g, 1)
    lam_tot = np.zeros_like(lam)
    b_tot = np.zeros_like(lam)
    for w, s in zip(_RICHARDSON[levels], (1, 2, 4)):
        if s == 1:
            ls = lam
        else:
            ls, cs = newton_batch(Q, dt, lam, s)
            conv &= cs
        safe = np.where(conv, ls, 1j)
        lam_tot += w * ls
        b_tot += w * scattering_b(Q, dt, safe, s)
    out_shape = shape + lam.shape[-1:]
    return lam_tot.reshape(out_shape), b_tot.reshape(out_shape), conv.reshape(out_shape)


def nft_eigenvalues(q: WaveformGrid, guesses, levels: int = 1) -> EigenvalueResult:
    """Newton search on ``a`` from every guess; duplicates merged."""
    q.expect(NORMALIZED)
    g = np.atleast_1d(np.asarray(guesses, dtype=complex))
    if np.any(g.imag <= 0):
        raise ValueError("guesses must lie in the upper half plane")
    for x in g:
        _check_window(q, x)
    lam, _, conv = richardson_spectrum(np.reshape(q.samples, (1, -1)), q.dt, g[None], levels)
    lam, conv = lam[0], conv[0]
    roots = merge_roots([complex(x) for x, c in zip(lam, conv) if c])
    return EigenvalueResult(roots, [complex(x) for x in lam], [bool(c) for c in conv])


def nft_spectrum(q: WaveformGrid, guesses, levels: int = 1) -> DiscreteSpectrum:
    """Eigenvalues and b coefficients of a potential whose roots are all found."""
    q.expect(NORMALIZED)
    g = np.atleast_1d(np.asarray(guesses, dtype=complex))
    lam, b, conv = richardson_spectrum(np.reshape(q.samples, (1, -1)), q.dt, g[None], levels)
    if not np.all(conv):
        raise ValueError("not every eigenvalue converged")
    return DiscreteSpectrum(tuple(lam[0]), tuple(b[0]))
