import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nfdm_ae import channel, harness, nft
from nfdm_ae.grid import NORMALIZED, PHYSICAL, FrameError, WaveformGrid, centered_times


def sech_grid(amp=1.0, n=1920, dt=0.05):
    t = centered_times(n, dt)
    return WaveformGrid(amp / np.cosh(t) + 0j, dt, NORMALIZED)


def test_normalization_scales():
    norm = nft.derive_normalization(channel.FiberParams(), 47e-12, 1.25)
    b2 = channel.FiberParams().beta2
    assert norm.P == pytest.approx(abs(b2) / (1.25e-3 * 47e-12**2))
    assert norm.L_nft == pytest.approx(2 * 47e-12**2 / abs(b2))


def test_normalize_roundtrip(rng):
    norm = nft.derive_normalization(channel.FiberParams(), 47e-12, 0.34)
    w = WaveformGrid(rng.standard_normal(192) + 1j * rng.standard_normal(192), 1e-11, PHYSICAL)
    back = nft.denormalize(nft.normalize(w, norm), norm)
    assert np.max(np.abs(back.samples - w.samples)) <= 1e-12 * np.max(np.abs(w.samples))
    assert back.dt == pytest.approx(w.dt, rel=1e-12)


def test_frame_mismatch_rejected():
    norm = nft.derive_normalization(channel.FiberParams(), 47e-12, 0.34)
    with pytest.raises(FrameError):
        nft.normalize(sech_grid(), norm)


def test_normal_dispersion_rejected():
    with pytest.raises(ValueError):
        nft.derive_normalization(channel.FiberParams(D=-17.0), 47e-12, 0.34)


@pytest.mark.parametrize("eigs,energy", [((0.3j, 0.6j), 3.6), ((0.5j,), 2.0), ((0.33j, 0.37j), 2.8)])
def test_spectrum_energy(eigs, energy):
    s = nft.DiscreteSpectrum(eigs, (1.0,) * len(eigs))
    assert nft.spectrum_energy(s) == pytest.approx(energy)


def test_spectrum_validation():
    with pytest.raises(ValueError):
        nft.DiscreteSpectrum((0.3j, -0.2j), (1, 1))
    with pytest.raises(ValueError):
        nft.DiscreteSpectrum((0.3j,), (0,))
    with pytest.raises(nft.NumericalDegeneracyError):
        nft.DiscreteSpectrum((0.3j, 0.3j + 1e-12), (1, 1))


def test_single_soliton_closed_form():
    # eta = 0.5, |b| = 1: q = sech(t) up to a constant phase
    q = nft.inft_darboux(nft.DiscreteSpectrum((0.5j,), (-1.0,)), 1920, 0.05)
    t = centered_times(1920, 0.05)
    assert np.max(np.abs(q.samples - 1 / np.cosh(t))) < 1e-12


def test_soliton_position_follows_b():
    eta, b = 0.5, 4.0
    q = nft.inft_darboux(nft.DiscreteSpectrum((1j * eta,), (b,)), 1920, 0.05)
    t = centered_times(1920, 0.05)
    centre = np.sum(t * np.abs(q.samples) ** 2) / np.sum(np.abs(q.samples) ** 2)
    assert centre == pytest.approx(math.log(b) / (2 * eta), abs=1e-6)


def test_edge_warning():
    with pytest.warns(nft.EdgeWarning):
        nft.inft_darboux(nft.DiscreteSpectrum((0.1j,), (1.0,)), 96, 0.05)


def test_darboux_energy_matches_spectrum():
    s = nft.DiscreteSpectrum((0.3j, 0.6j), (1.0, 1j))
    q = nft.inft_darboux(s, 5760, 0.02)
    assert float(q.energy()) == pytest.approx(nft.spectrum_energy(s), rel=1e-3)


@given(st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi))
def test_energy_independent_of_b_phase(p1, p2):
    base = nft.inft_darboux(nft.DiscreteSpectrum((0.3j, 0.6j), (0.7, 1.3)), 5760, 0.02)
    s = nft.DiscreteSpectrum((0.3j, 0.6j), (0.7 * np.exp(1j * p1), 1.3 * np.exp(1j * p2)))
    q = nft.inft_darboux(s, 5760, 0.02)
    assert float(q.energy()) == pytest.approx(float(base.energy()), rel=1e-9)


@pytest.mark.parametrize("levels,tol", [(1, 1e-4), (2, 1e-7), (3, 1e-10)])
def test_sech_eigenvalue(levels, tol):
    res = nft.nft_eigenvalues(sech_grid(), [0.4j], levels)
    assert res.failures == []
    assert abs(res.roots[0] - 0.5j) < tol


def test_two_soliton_sech_has_two_roots():
    res = nft.nft_eigenvalues(sech_grid(2.0), [0.4j, 1.4j], 3)
    assert sorted(r.imag for r in res.roots) == pytest.approx([0.5, 1.5], abs=1e-8)


def test_zero_potential_has_no_roots():
    q = WaveformGrid(np.zeros(960, complex), 0.05, NORMALIZED)
    res = nft.nft_eigenvalues(q, [0.3j, 0.6j])
    assert res.roots == [] and res.failures == [0, 1]


def test_sech_scattering_closed_form():
    q = sech_grid()
    # a(lam) = (lam - i/2) / (lam + i/2) for sech; b(i/2) = -1
    for lam in (0.3 + 0.2j, 1.0 + 0.5j):
        a, da, _ = nft.nft_scattering(q, lam)
        assert abs(a - (lam - 0.5j) / (lam + 0.5j)) < 1e-3
    a, da, b = nft.nft_scattering(q, 0.5j)
    assert abs(a) < 1e-3 and abs(b + 1) < 1e-3
    assert abs(da - 1 / 1j) < 1e-2


def test_real_axis_scattering_of_reflectionless_potential():
    _, _, b = nft.nft_scattering(sech_grid(), 0.7)
    assert abs(b) < 1e-3


def test_duplicate_guesses_merge():
    res = nft.nft_eigenvalues(sech_grid(), [0.45j, 0.55j], 2)
    assert len(res.roots) == 1


def test_overflow_is_reported():
    q = WaveformGrid(np.zeros(96 * 100, complex) + 1e-3, 1.0, NORMALIZED)
    with pytest.raises(FloatingPointError):
        nft.nft_scattering(q, 1j)


def _roundtrip_one(eigs, b):
    sp = nft.DiscreteSpectrum(eigs, b)
    n, dt = harness.roundtrip_grid(sp)
    with warnings.catch_warnings():
        warnings.simplefilter("error", nft.EdgeWarning)
        q = nft.inft_darboux(sp, n, dt)
    return sp, nft.nft_spectrum(q, sp.eigenvalues, 3)


@given(st.floats(0.1, 1.0), st.floats(0.1, 1.0), st.floats(0.05, 2.5), st.floats(0.05, 2.5),
       st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi))
def test_roundtrip_property(e1, e2, r1, r2, p1, p2):
    if abs(e1 - e2) < 0.02:
        e2 = e1 + 0.02 if e1 < 0.98 else e1 - 0.02
    sp, got = _roundtrip_one((1j * e1, 1j * e2), (r1 * np.exp(1j * p1), r2 * np.exp(1j * p2)))
    assert np.max(np.abs(np.array(got.eigenvalues) - np.array(sp.eigenvalues))) < 1e-6
    rel = np.abs(np.array(got.b_coeffs) - np.array(sp.b_coeffs)) / np.abs(sp.b_coeffs)
    assert np.max(rel) < 1e-4
