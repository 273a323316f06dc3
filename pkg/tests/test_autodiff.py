import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nfdm_ae import autodiff as ad
from nfdm_ae import channel, harness, transmitter as txm
from nfdm_ae.optim import OptimizerState, lr_schedule, nadam_step, scaled_breaks


def cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_every_primitive_is_covered(rng):
    covered = {c[0] for c in harness.primitive_cases(rng)}
    assert set(ad.registered()) <= covered


@pytest.mark.parametrize("case", range(len(harness.primitive_cases(np.random.default_rng(0)))))
def test_primitive_adjoint_vs_finite_difference(case):
    name, rep = harness.gradcheck_primitive(case)
    assert rep.max_rel_error < 1e-6, (name, rep.rel_errors)


def test_linear_program_exact(rng):
    A = rng.standard_normal((5, 3))
    rep = ad.gradcheck(lambda v: ad.vsum(ad.matmul(v["x"], A)), {"x": rng.standard_normal((2, 5))},
                       n_probes=5, eps=1e-2, rng=rng)
    # central differences of a linear map are exact; only rounding remains
    assert rep.max_rel_error < 1e-10


def test_sum_of_squares_gradient(rng):
    x = rng.standard_normal(7)
    _, tape = ad.record_forward(lambda v: ad.vsum(ad.abs2(v["x"])), {"x": x})
    assert np.allclose(ad.backward(tape)["x"], 2 * x, rtol=0, atol=1e-14)


def test_complex_adjoint_convention(rng):
    # L = |z|^2 has adjoint dL/dRe + i dL/dIm = 2 z
    z = cplx(rng, 4)
    _, tape = ad.record_forward(lambda v: ad.vsum(ad.abs2(v["z"])), {"z": z})
    assert np.allclose(ad.backward(tape)["z"], 2 * z)


def test_identity_and_fft_forward(rng):
    x = cplx(rng, 32)
    out, tape = ad.record_forward(lambda v: v["x"], {"x": x})
    assert np.array_equal(out.value, x) and tape.nodes == []
    out, _ = ad.record_forward(lambda v: ad.fft(v["x"]), {"x": x})
    assert np.allclose(out.value, np.fft.fft(x), atol=1e-12)


def test_unregistered_primitive():
    with pytest.raises(ad.UnregisteredPrimitiveError):
        ad.apply("no_such_op", 1.0)


def test_backward_names_nonfinite_node():
    def program(v):
        return ad.vsum(ad.power(v["x"], 0.5))

    _, tape = ad.record_forward(program, {"x": np.array([0.0, 1.0])})
    with np.errstate(divide="ignore"), pytest.raises(FloatingPointError, match="power"):
        ad.backward(tape)


def test_seed_shape_checked(rng):
    _, tape = ad.record_forward(lambda v: v["x"] * 2.0, {"x": rng.standard_normal(3)})
    with pytest.raises(ValueError):
        ad.backward(tape)
    g = ad.backward(tape, seed_adjoint=np.ones(3))
    assert np.allclose(g["x"], 2.0)


# -- the link on the tape ----------------------------------------------------


def link_setup(n_spans=2, noisy=True, seed=3):
    rng = np.random.default_rng(seed)
    fiber = channel.FiberParams()
    plan = channel.plan_steps(fiber, 2.0, txm.reference_peak_power(fiber))
    link = channel.LinkConfig(n_spans, fiber, noise_figure_db=5.0 if noisy else -math.inf)
    symbols = rng.integers(1, 17, (1, 16))
    shape = (1, 16 * 96)
    osnr = channel.complex_normal(rng, shape) if noisy else None
    ase = channel.draw_link_noise(rng, link, shape) if noisy else None
    return fiber, plan, link, symbols, osnr, ase


def test_taped_link_matches_untaped():
    fiber, plan, link, symbols, osnr, ase = link_setup()
    cfg = txm.TxConfig(config_id=3, scenario="e2e", gamma_hat=1.0, phase=(0.1, 0.9))
    plain = txm.modulate_batch(symbols, cfg, fiber, noise=osnr)
    plain = channel.propagate_link(plain, link, plan, noise=ase).samples

    def program(v):
        x = txm.modulate_taped(v, symbols, fiber, noise=osnr)
        return channel.propagate_link_taped(x, 1e-9 / 96, link, plan, ase)

    out, _ = ad.record_forward(program, cfg.values())
    assert out.value.tobytes() == plain.tobytes()


@pytest.mark.parametrize("noisy", [False, True])
def test_checkpointed_backward_bit_identical(noisy):
    fiber, plan, link, symbols, osnr, ase = link_setup(noisy=noisy)
    cfg = txm.TxConfig(config_id=3, scenario="e2e", gamma_hat=1.0)

    def make(checkpointed):
        def program(v):
            x = txm.modulate_taped(v, symbols, fiber, noise=osnr)
            y = channel.propagate_link_taped(x, 1e-9 / 96, link, plan, ase, checkpointed)
            return ad.vsum(ad.abs2(y[..., :200]))
        return program

    grads = []
    for flag in (True, False):
        _, tape = ad.record_forward(make(flag), cfg.values())
        grads.append(ad.backward(tape))
    for k in grads[0]:
        assert grads[0][k].tobytes() == grads[1][k].tobytes(), k


def test_one_span_phase_gradient():
    fiber, plan, link, symbols, _, _ = link_setup(n_spans=1, noisy=False)
    cfg = txm.TxConfig(config_id=1, scenario="lpa")
    target = np.random.default_rng(9).standard_normal(16 * 96)

    def loss(phase):
        def program(v):
            p = {**cfg.values(), "phase": v["phase"]}
            x = txm.modulate_taped(p, symbols, fiber, osnr_db=math.inf)
            y = channel.propagate_link_taped(x, 1e-9 / 96, link, plan)
            return ad.vsum(ad.abs2(y) * target)
        return program

    ph = np.array(cfg.phase)
    _, tape = ad.record_forward(loss(ph), {"phase": ph})
    g = ad.backward(tape)["phase"][0]

    def f(p1):
        with ad.no_record():
            return float(loss(None)({"phase": np.array([p1, ph[1]])}))

    h = 1e-5
    fd = (f(ph[0] + h) - f(ph[0] - h)) / (2 * h)
    assert abs(g - fd) / abs(fd) < 1e-4


# -- optimizer -------------------------------------------------------------


def test_nadam_hand_value():
    st0 = OptimizerState.zeros_like({"x": np.zeros(1)})
    _, new = nadam_step(st0, {"x": np.zeros(1)}, {"x": np.ones(1)}, 0.01)
    b1 = 0.9
    m_hat = b1 * 0.1 / (1 - b1**2) + (1 - b1) / (1 - b1)
    assert new["x"][0] == pytest.approx(-0.01 * m_hat / (1 + 1e-8), rel=1e-12)
    assert new["x"][0] == pytest.approx(-0.0147368, abs=1e-7)


def test_nadam_zero_gradient_and_mask(rng):
    p = {"a": rng.standard_normal(3), "b": rng.standard_normal(2)}
    s = OptimizerState.zeros_like(p)
    s1, q = nadam_step(s, p, {"a": np.zeros(3), "b": np.ones(2)}, 0.01, trainable=("a",))
    assert np.array_equal(q["a"], p["a"])
    assert q["b"] is p["b"]
    assert s1.step_count == 1 and s.step_count == 0


def test_nadam_rejects_nonfinite():
    p = {"a": np.zeros(2)}
    with pytest.raises(FloatingPointError):
        nadam_step(OptimizerState.zeros_like(p), p, {"a": np.array([np.nan, 0])}, 0.01)


def test_nadam_deterministic(rng):
    p = {"a": rng.standard_normal(4)}
    gs = [rng.standard_normal(4) for _ in range(5)]

    def run():
        s, q = OptimizerState.zeros_like(p), dict(p)
        for g in gs:
            s, q = nadam_step(s, q, {"a": g}, 0.003)
        return q["a"]

    assert run().tobytes() == run().tobytes()


@pytest.mark.parametrize("it,lr", [(1, 0.01), (1600, 0.01), (1601, 0.003), (4000, 0.003),
                                   (4001, 0.001), (6400, 0.001)])
def test_lr_schedule(it, lr):
    assert lr_schedule(it) == lr


def test_lr_schedule_range():
    with pytest.raises(ValueError):
        lr_schedule(0)
    with pytest.raises(ValueError):
        lr_schedule(6401)


@given(st.integers(1, 20000))
def test_scaled_breaks_monotone(n):
    b = scaled_breaks(n)
    assert 0 <= b[0] <= b[1] <= n
