import numpy as np
import pytest

from nfdm_ae import config, harness, persist
from nfdm_ae import transmitter as txm


def small_ctx(**train):
    values = {"train": {"n_spans": 1, "n_iter": 3, "batch": 16, **train},
              "rx": {"retrain_symbols": 512, "retrain_batch": 128, "retrain_iter": 60,
                     "test_symbols": 512}}
    return harness.build_context(config.resolve("desk", values, seed=3))


def test_count_ber():
    assert harness.count_ber([0, 1, 1, 0], [0, 1, 1, 0]) == (0.0, 0, 4)
    assert harness.count_ber([0, 1, 1, 0], [1, 1, 1, 0]) == (0.25, 1, 4)
    assert harness.count_ber(np.ones(8, int), np.zeros(8, int))[0] == 1.0
    with pytest.raises(ValueError):
        harness.count_ber([], [])
    with pytest.raises(ValueError):
        harness.count_ber([0, 1], [0])


def test_simulate_rejects_empty():
    ctx = small_ctx()
    with pytest.raises(ValueError):
        list(harness.simulate(ctx, txm.TxConfig(), 0, 1, np.random.default_rng(0), True))


def test_training_deterministic():
    runs = [harness.train_e2e(small_ctx()) for _ in range(2)]
    assert persist.checkpoint_bytes(runs[0][0]) == persist.checkpoint_bytes(runs[1][0])
    assert runs[0][1] == runs[1][1]
    assert [r[0] for r in runs[0][1]] == [1, 2, 3]


def test_resume_matches_straight_run():
    ctx = small_ctx(n_iter=4)
    straight, _ = harness.train_e2e(ctx)
    half, _ = harness.train_e2e(small_ctx(n_iter=2, lr_breaks=list(ctx.cfg.train.lr_breaks)))
    half = persist.parse_checkpoint(persist.checkpoint_bytes(half))
    resumed, rows = harness.train_e2e(ctx, half)
    assert [r[0] for r in rows] == [3, 4]
    assert persist.checkpoint_bytes(resumed) == persist.checkpoint_bytes(straight)


def test_lpa_config0_transmitter_frozen():
    ctx = harness.build_context(config.resolve(
        "desk", {"tx": {"config_id": 0, "scenario": "lpa"}, "train": {"n_spans": 1, "n_iter": 3,
                                                                      "batch": 16}}))
    ck0 = harness.init_checkpoint(ctx)
    ck, _ = harness.train_e2e(ctx, ck0)
    assert ck.tx == ck0.tx and ck.tx.gamma_hat == 0.34
    assert not all(np.array_equal(a, b) for a, b in zip(ck.nn.weights, ck0.nn.weights))


def test_e2e_config0_trains_only_gamma():
    ctx = harness.build_context(config.resolve(
        "desk", {"tx": {"config_id": 0, "scenario": "e2e"}, "train": {"n_spans": 1, "n_iter": 3,
                                                                      "batch": 16}}))
    ck0 = harness.init_checkpoint(ctx)
    ck, _ = harness.train_e2e(ctx, ck0)
    assert ck.tx.gamma_hat != ck0.tx.gamma_hat
    assert (ck.tx.im_lambda, ck.tx.radius, ck.tx.phase) == (ck0.tx.im_lambda, ck0.tx.radius,
                                                            ck0.tx.phase)


def test_awgn_only_training_converges():
    # zero spans leaves only the transmitter-side OSNR loading
    ctx = harness.build_context(config.resolve(
        "desk", {"tx": {"config_id": 0, "scenario": "lpa"}, "train": {"n_spans": 0, "n_iter": 500}}))
    _, rows = harness.train_e2e(ctx)
    assert min(r[2] for r in rows) <= 0.1
    assert np.mean([r[2] for r in rows[-20:]]) < np.mean([r[2] for r in rows[:20]])


def test_loss_decreases_over_short_run():
    ctx = small_ctx(n_iter=30)
    _, rows = harness.train_e2e(ctx)
    loss = [r[2] for r in rows]
    assert np.mean(loss[-5:]) < 0.5 * np.mean(loss[:5])


def test_retrain_keeps_transmitter_and_helps():
    ctx = small_ctx()
    ck = harness.init_checkpoint(ctx)
    before = harness.test_ber_nn(ctx, ck, 1, 512)[0]
    new, losses = harness.retrain_receiver(ctx, ck, 1)
    assert new.tx == ck.tx
    assert losses[-1] < losses[0]
    assert harness.test_ber_nn(ctx, new, 1, 512)[0] <= before


def test_noiseless_sweep_error_free():
    ctx = small_ctx()
    ck, _ = harness.retrain_receiver(ctx, harness.init_checkpoint(ctx), 1, noiseless=True)
    rows = harness.sweep_ber(ctx, ck, [1], 256, "nn", noiseless=True)
    assert rows == [(1, 0.0, 0, 1024, 3)]


def test_nft_receiver_short_link():
    ctx = small_ctx()
    ber, e, n = harness.test_ber_nft(ctx, txm.table_config(1, "lpa"), 1, 232)
    assert n == 4 * 232 and ber < 0.01


def test_gradcheck_link_short():
    rep = harness.gradcheck_link(small_ctx(), n_spans=1, n_probes=4)
    assert rep.max_rel_error < 1e-4


def test_roundtrip_small():
    rep = harness.roundtrip(seed=5, n=10)
    assert rep.n_failed == 0 and rep.max_eig_error < 1e-6 and rep.max_b_rel_error < 1e-4


def test_random_spectra_separated(rng):
    for sp in harness.random_spectra(rng, 50):
        e = np.imag(sp.eigenvalues)
        assert abs(e[0] - e[1]) >= 0.02 and np.all((e >= 0.1) & (e <= 1.0))
