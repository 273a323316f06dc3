import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nfdm_ae import autodiff as ad
from nfdm_ae import channel, nft, transmitter as txm
from nfdm_ae.grid import watt_to_dbm

FIBER = channel.FiberParams()


def test_unit_qpsk():
    C = txm.build_constellations((1, 1), (0, 0.25 * np.pi))
    assert np.allclose(C[0], [1, 1j, -1, -1j])
    assert np.allclose(C[1], np.exp(1j * (np.arange(4) * np.pi / 2 + np.pi / 4)))


@given(st.floats(0.01, 3), st.floats(-7, 7))
def test_constellation_magnitude(r, phi):
    C = txm.build_constellations((r, 2.03), (phi, 0.0))
    assert np.allclose(np.abs(C[0]), r) and np.allclose(np.abs(C[1]), 2.03)


def test_mapping_bijective():
    C = txm.build_constellations((0.7, 1.3), (0.2, 0.9))
    s = np.arange(1, 17)
    b = txm.map_symbol(s, C)
    assert len({(round(x.real, 9), round(x.imag, 9), round(y.real, 9), round(y.imag, 9))
                for x, y in b}) == 16
    assert np.array_equal(txm.demap(b, C), s)
    assert np.allclose(b[0], [C[0][0], C[1][0]])


def test_out_of_range_symbol():
    with pytest.raises(ValueError):
        txm.symbol_bits(np.array([0]))
    with pytest.raises(ValueError):
        txm.map_symbol(17, txm.build_constellations((1, 1), (0, 0)))


def test_gray_labels():
    bits = txm.symbol_bits(np.arange(1, 17))
    assert bits.shape == (16, 4)
    assert len({tuple(b) for b in bits}) == 16
    # neighbouring PSK points differ in one bit
    for k in range(4):
        assert np.sum(txm.GRAY[k] != txm.GRAY[(k + 1) % 4]) == 1


def test_symbols_uniform():
    s = txm.generate_symbols(np.random.default_rng(0), 160_000)
    counts = np.bincount(s, minlength=17)[1:]
    assert s.min() == 1 and s.max() == 16
    assert np.all(np.abs(counts / 10_000 - 1) < 0.05)


def test_config_masks():
    assert txm.TxConfig().trainable == ()
    assert txm.TxConfig(config_id=0, scenario="e2e").trainable == ("gamma_hat",)
    assert txm.TxConfig(config_id=1).trainable == ("radius", "phase")
    assert txm.TxConfig(config_id=3, scenario="e2e").trainable == txm.TX_PARAMS
    with pytest.raises(ValueError):
        txm.TxConfig(config_id=1, trainable_mask={k: True for k in txm.TX_PARAMS})


def test_config_validation():
    with pytest.raises(ValueError):
        txm.TxConfig(im_lambda=(0.3, 0.0))
    with pytest.raises(ValueError):
        txm.TxConfig(radius=(1.0, -1.0))
    with pytest.raises(ValueError):
        txm.TxConfig(config_id=5)


def test_waveform_shape_and_single_symbol():
    w = txm.modulate_batch(np.array([3]), txm.TxConfig(), FIBER, osnr_db=math.inf)
    assert w.samples.shape == (96,)
    w = txm.modulate_batch(np.arange(64) % 16 + 1, txm.TxConfig(), FIBER, osnr_db=math.inf)
    assert w.samples.shape == (6144,)


@pytest.mark.parametrize("scen", txm.SCENARIOS)
@pytest.mark.parametrize("cid", range(4))
def test_grid_power_matches_analytic(scen, cid):
    cfg = txm.table_config(cid, scen)
    a = watt_to_dbm(txm.average_power_analytic(cfg, FIBER))
    g = watt_to_dbm(txm.average_power_grid(cfg, FIBER))
    assert abs(a - g) < 0.05


def test_config0_batch_power():
    rng = np.random.default_rng(4)
    s = np.concatenate([np.arange(1, 17)] * 4)
    rng.shuffle(s)
    w = txm.modulate_batch(s, txm.TxConfig(), FIBER, osnr_db=math.inf)
    assert float(watt_to_dbm(w.average_power())) == pytest.approx(7.03, abs=0.1)


def test_config2_e2e_power():
    cfg = txm.TxConfig(im_lambda=(0.42, 0.66), gamma_hat=2.41, config_id=2, scenario="e2e")
    s = np.arange(1, 17)
    w = txm.modulate_batch(s, cfg, FIBER, osnr_db=math.inf)
    assert float(watt_to_dbm(w.average_power())) == pytest.approx(-0.67, abs=0.1)


def test_eigenvalues_purely_imaginary():
    cfg = txm.TxConfig(im_lambda=(0.2, 0.5))
    assert np.all(cfg.eigenvalues.real == 0)


def test_slot_overflow_warning():
    with pytest.warns(txm.SlotOverflowWarning):
        txm.waveform_table((0.05, 0.6), (1.0, 1.0), (0.0, 0.0))
    with warnings.catch_warnings():
        warnings.simplefilter("error", txm.SlotOverflowWarning)
        txm.waveform_table((0.6, 0.9), (1.0, 1.0), (0.0, 0.0))


def test_waveforms_carry_the_spectrum():
    cfg = txm.TxConfig()
    table = txm.waveform_table(cfg.im_lambda, cfg.radius, cfg.phase, warn=False)
    C = txm.build_constellations(cfg.radius, cfg.phase)
    b = txm.map_symbol(np.arange(1, 17), C)
    for s in (0, 5, 15):
        q = nft.inft_darboux(nft.DiscreteSpectrum(tuple(cfg.eigenvalues), tuple(b[s])), 96,
                             txm.slot_dt())
        assert np.allclose(q.samples, table[s], atol=1e-12)


def test_modulate_taped_matches_plain():
    cfg = txm.TxConfig(config_id=3, scenario="e2e", gamma_hat=0.9)
    rng = np.random.default_rng(2)
    s = rng.integers(1, 17, (2, 8))
    noise = channel.complex_normal(rng, (2, 768))
    plain = txm.modulate_batch(s, cfg, FIBER, noise=noise).samples
    out, _ = ad.record_forward(lambda v: txm.modulate_taped(v, s, FIBER, noise=noise), cfg.values())
    assert out.value.tobytes() == plain.tobytes()


def test_osnr_loading_is_seeded():
    cfg = txm.TxConfig()
    s = np.arange(1, 17)
    a = txm.modulate_batch(s, cfg, FIBER, rng=np.random.default_rng(1)).samples
    b = txm.modulate_batch(s, cfg, FIBER, rng=np.random.default_rng(1)).samples
    assert a.tobytes() == b.tobytes()


def test_power_table_rows():
    rows = txm.power_table()
    assert len(rows) == 8
    for scen, cid, a, g, pub in rows:
        assert abs(a - pub) < 0.1, (scen, cid)
