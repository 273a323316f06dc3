"""Training, receiver retraining and BER evaluation of the NFDM autoencoder."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import channel, nft
from . import receiver_nft as rxnft
from . import transmitter as txm
from .config import (STREAM_INIT, STREAM_PROBE, STREAM_RETRAIN, STREAM_TEST, STREAM_TRAIN,
                     RunConfig, rng_for)
from .grid import SAMPLES_PER_SYMBOL, SYMBOL_PERIOD, WaveformGrid
from .optim import OptimizerState, lr_schedule, nadam_step
from .persist import Checkpoint, save_checkpoint
from .receiver_nn import (cross_entropy, decide, features, glorot_init, layer_shapes, nn_forward,
                          slice_blocks)

log = logging.getLogger(__name__)

DT = SYMBOL_PERIOD / SAMPLES_PER_SYMBOL
POSITIVE = ("im_lambda", "radius", "gamma_hat")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class Context:
    """Objects derived once per run from a :class:`RunConfig`."""

    cfg: RunConfig
    fiber: channel.FiberParams
    plan: channel.StepPlan
    feat_scale: float

    @property
    def T0(self) -> float:
        return self.cfg.tx.T0

    @property
    def frame(self) -> int:
        return self.cfg.train.batch

    def link(self, n_spans: int, noiseless: bool = False) -> channel.LinkConfig:
        nf = -math.inf if noiseless else self.cfg.fiber.noise_figure_db
        return channel.LinkConfig(n_spans, self.fiber, noise_figure_db=nf)


def build_context(cfg: RunConfig) -> Context:
    f = cfg.fiber
    fiber = channel.FiberParams(f.span_length, f.D, f.gamma, f.alpha_db)
    p_ref = txm.reference_peak_power(fiber, cfg.tx.T0)
    plan = channel.plan_steps(fiber, cfg.train.max_phase_deg, p_ref)
    scale = 1.0 / math.sqrt(txm.power_scale(txm.GAMMA_LPA, fiber, cfg.tx.T0))
    return Context(cfg, fiber, plan, scale)


def decisions(cfg: RunConfig) -> dict:
    """Flags recorded in every manifest."""
    return {
        "featurization": cfg.rx.featurization,
        "osnr_ref_bandwidth_hz": cfg.nft_rx.osnr_ref_bandwidth_hz,
        "bps_phases": cfg.nft_rx.bps_phases,
        "bps_block": cfg.nft_rx.bps_block,
        "lmmse_train": cfg.nft_rx.lmmse_train,
        "nadam": {"beta1": cfg.train.beta1, "beta2": cfg.train.beta2, "eps": cfg.train.eps},
        "frame_symbols": cfg.train.batch,
        "reference_wavelength_m": 1550e-9,
        "gray_labeling": "per 4-PSK digit 00,01,11,10",
    }


# --------------------------------------------------------------------------
# training


def init_checkpoint(ctx: Context) -> Checkpoint:
    cfg = ctx.cfg
    tx = txm.initial_config(cfg.tx.config_id, cfg.tx.scenario, gamma=ctx.fiber.gamma)
    nn = glorot_init(layer_shapes(cfg.rx.featurization), rng_for(cfg.seed, STREAM_INIT),
                     cfg.rx.featurization)
    params = {**{k: tx.values()[k] for k in tx.trainable}, **nn.as_dict()}
    opt = OptimizerState.zeros_like(params, beta1=cfg.train.beta1, beta2=cfg.train.beta2,
                                    eps=cfg.train.eps)
    return Checkpoint(tx, nn, opt, 0, np.zeros(0))


def make_loss_program(ctx: Context, ck: Checkpoint, symbols, osnr_noise, ase_noise, n_spans: int,
                      noiseless: bool = False):
    """Cross-entropy of one batch as a function of a parameter dict.

    Transmitter parameters absent from the dict are held at their
    checkpoint values.
    """
    tx_fixed = ck.tx.values()
    link = ctx.link(n_spans, noiseless)
    osnr = math.inf if noiseless else ctx.cfg.tx.osnr_db
    acts = ck.nn.activations
    feat = ck.nn.featurization
    labels = np.asarray(symbols).reshape(-1)

    def program(v):
        txp = {k: v.get(k, tx_fixed[k]) for k in txm.TX_PARAMS}
        x = txm.modulate_taped(txp, symbols, ctx.fiber, ctx.T0, osnr, noise=osnr_noise)
        y = channel.propagate_link_taped(x, DT, link, ctx.plan, ase_noise)
        blocks = ad.reshape(y, (labels.size, SAMPLES_PER_SYMBOL))
        p = nn_forward(v, features(blocks, feat, ctx.feat_scale), acts)
        return cross_entropy(p, labels)

    return program


def batch_draws(ctx: Context, rng, n_frames: int, n_spans: int, noiseless: bool = False):
    """Symbols, OSNR draws and ASE draws of one batch, in a fixed order."""
    symbols = txm.generate_symbols(rng, (n_frames, ctx.frame))
    shape = (n_frames, ctx.frame * SAMPLES_PER_SYMBOL)
    if noiseless:
        return symbols, None, None
    osnr = channel.complex_normal(rng, shape)
    ase = channel.draw_link_noise(rng, ctx.link(n_spans), shape)
    return symbols, osnr, ase


def _clamp(params: dict, floor: float) -> dict:
    out = dict(params)
    for k in POSITIVE:
        if k in out:
            out[k] = np.maximum(out[k], floor)
    return out


def train_e2e(ctx: Context, ck: Checkpoint | None = None, n_spans: int | None = None,
              on_iteration=None, failure_path=None):
    """End-to-end training loop; returns ``(checkpoint, loss_rows)``.

    ``loss_rows`` holds (iteration, lr, loss). On a non-finite loss or
    gradient the last finite state is written to ``failure_path`` (if given)
    and :class:`TrainingDiverged` is raised.
    """
    cfg = ctx.cfg
    ck = init_checkpoint(ctx) if ck is None else ck
    n_spans = cfg.train.n_spans if n_spans is None else n_spans
    names = ck.tx.trainable + tuple(ck.nn.as_dict())
    params = {**{k: ck.tx.values()[k] for k in ck.tx.trainable}, **ck.nn.as_dict()}
    opt = ck.opt
    rows = []
    history = list(ck.loss_history)
    start = ck.iteration
    t0 = time.time()
    for it in range(start + 1, cfg.train.n_iter + 1):
        rng = rng_for(cfg.seed, STREAM_TRAIN, it)
        symbols, osnr, ase = batch_draws(ctx, rng, 1, n_spans)
        lr = lr_schedule(it, cfg.train.n_iter, cfg.train.lr_breaks, cfg.train.lr_rates)
        try:
            program = make_loss_program(ctx, ck, symbols, osnr, ase, n_spans)
            out, tape = ad.record_forward(program, params)
            loss = float(ad.value_of(out))
            if not math.isfinite(loss):
                raise FloatingPointError(f"loss is {loss}")
            grads = ad.backward(tape)
            opt, new = nadam_step(opt, params, grads, lr, names)
        except FloatingPointError as e:
            if failure_path is not None:
                save_checkpoint(ck, failure_path)
            raise TrainingDiverged(f"iteration {it}: {e}") from e
        params = _clamp(new, cfg.train.param_floor)
        history.append(loss)
        rows.append((it, lr, loss))
        tx_vals = {**ck.tx.values(), **{k: params[k] for k in ck.tx.trainable}}
        ck = Checkpoint(ck.tx.with_values(tx_vals), ck.nn.with_dict(params), opt, it,
                        np.array(history))
        if on_iteration is not None:
            on_iteration(it, lr, loss, ck)
        if it % 25 == 0 or it == cfg.train.n_iter:
            log.info("iter %d  lr %.4g  loss %.4f  gamma_hat %.3f  (%.0f s)", it, lr, loss,
                     ck.tx.gamma_hat, time.time() - t0)
    return ck, rows


# --------------------------------------------------------------------------
# evaluation


def simulate(ctx: Context, tx_cfg: txm.TxConfig, n_symbols: int, n_spans: int, rng,
             noiseless: bool = False):
    """Yield ``(symbols (F, S), received (F, S*96))`` chunks of a transmission.

    ``n_symbols`` is rounded up to whole frames.
    """
    if n_symbols < 1:
        raise ValueError("n_symbols must be positive")
    n_frames = -(-n_symbols // ctx.frame)
    chunk = ctx.cfg.rx.frames_per_chunk
    link = ctx.link(n_spans, noiseless)
    osnr_db = math.inf if noiseless else ctx.cfg.tx.osnr_db
    for f0 in range(0, n_frames, chunk):
        nf = min(chunk, n_frames - f0)
        symbols, osnr, ase = batch_draws(ctx, rng, nf, n_spans, noiseless)
        w = txm.modulate_batch(symbols, tx_cfg, ctx.fiber, osnr_db=osnr_db, T0=ctx.T0, noise=osnr)
        w = channel.propagate_link(w, link, ctx.plan, noise=ase)
        yield symbols, w.samples


def nn_inputs(ctx: Context, samples, featurization: str) -> np.ndarray:
    blocks = slice_blocks(samples).reshape(-1, SAMPLES_PER_SYMBOL)
    return features(blocks, featurization, ctx.feat_scale)


def dataset(ctx: Context, ck: Checkpoint, n_symbols: int, n_spans: int, rng, noiseless=False):
    xs, ys = [], []
    for s, r in simulate(ctx, ck.tx, n_symbols, n_spans, rng, noiseless):
        xs.append(nn_inputs(ctx, r, ck.nn.featurization))
        ys.append(s.reshape(-1))
    return np.concatenate(xs), np.concatenate(ys)


def fit_receiver(nn, X, y, rng, n_iter: int, batch: int, lr: float, hyper=None):
    """NN-only Nadam training on a fixed dataset; returns ``(MlpParams, losses)``."""
    params = nn.as_dict()
    opt = OptimizerState.zeros_like(params, **(hyper or {}))
    losses = []
    acts = nn.activations
    n = len(y)
    batch = min(batch, n)
    for _ in range(n_iter):
        idx = rng.choice(n, size=batch, replace=False)
        xb, yb = X[idx], y[idx]
        out, tape = ad.record_forward(lambda v: cross_entropy(nn_forward(v, xb, acts), yb), params)
        loss = float(out.value)
        if not math.isfinite(loss):
            raise TrainingDiverged("receiver retraining produced a non-finite loss")
        opt, params = nadam_step(opt, params, ad.backward(tape), lr)
        losses.append(loss)
    return nn.with_dict(params), np.array(losses)


def retrain_receiver(ctx: Context, ck: Checkpoint, n_spans: int, noiseless: bool = False):
    """Retrain the NN with the transmitter frozen; returns ``(checkpoint, losses)``."""
    cfg = ctx.cfg
    rng = rng_for(cfg.seed, STREAM_RETRAIN, n_spans)
    X, y = dataset(ctx, ck, cfg.rx.retrain_symbols, n_spans, rng, noiseless)
    hyper = {"beta1": cfg.train.beta1, "beta2": cfg.train.beta2, "eps": cfg.train.eps}
    nn, losses = fit_receiver(ck.nn, X, y, rng, cfg.rx.retrain_iter, cfg.rx.retrain_batch,
                              cfg.rx.retrain_lr, hyper)
    return replace(ck, nn=nn), losses


def count_ber(tx_bits, rx_bits):
    """(ber, n_errors, n_bits) from two equal-length bit arrays."""
    a = np.asarray(tx_bits).reshape(-1)
    b = np.asarray(rx_bits).reshape(-1)
    if a.shape != b.shape:
        raise ValueError("bit streams differ in length")
    if a.size == 0:
        raise ValueError("empty bit stream")
    n = int(np.count_nonzero(a != b))
    return n / a.size, n, int(a.size)


def test_ber_nn(ctx: Context, ck: Checkpoint, n_spans: int, n_symbols: int, noiseless=False):
    rng = rng_for(ctx.cfg.seed, STREAM_TEST, n_spans)
    n_err = n_bits = 0
    for s, r in simulate(ctx, ck.tx, n_symbols, n_spans, rng, noiseless):
        with ad.no_record():
            p = nn_forward(ck.nn, nn_inputs(ctx, r, ck.nn.featurization))
        _, e, b = count_ber(txm.symbol_bits(s.reshape(-1)), txm.symbol_bits(decide(p)))
        n_err += e
        n_bits += b
    return n_err / n_bits, n_err, n_bits


def test_ber_nft(ctx: Context, tx_cfg: txm.TxConfig, n_spans: int, n_symbols: int,
                 noiseless=False):
    """BER of the conventional NFT receiver; the first symbols train the LMMSE."""
    c = ctx.cfg.nft_rx
    rng = rng_for(ctx.cfg.seed, STREAM_TEST, n_spans)
    norm = nft.derive_normalization(ctx.fiber, ctx.T0, tx_cfg.gamma_hat)
    syms, streams = [], []
    for s, r in simulate(ctx, tx_cfg, n_symbols + c.lmmse_train, n_spans, rng, noiseless):
        w = rxnft.bandpass(WaveformGrid(r, DT), c.bandwidth_hz)
        q = nft.normalize(w, norm)
        blocks = slice_blocks(q.samples).reshape(-1, SAMPLES_PER_SYMBOL)
        streams.append(rxnft.detect_spectrum(blocks, tx_cfg.eigenvalues, q.dt,
                                             c.richardson_levels, c.upsample))
        syms.append(s.reshape(-1))
    s = np.concatenate(syms)
    stream = rxnft.SpectrumPointStream(np.concatenate([x.eigenvalues for x in streams]),
                                       np.concatenate([x.b for x in streams]),
                                       np.concatenate([x.flags for x in streams]))
    C = txm.build_constellations(tx_cfg.radius, tx_cfg.phase)
    stream = rxnft.bps_compensate(stream, c.bps_phases, c.bps_block, tx_cfg.phase)
    stream = rxnft.lmmse_equalize(stream, txm.map_symbol(s, C), c.lmmse_train)
    return rxnft.demap_count_ber(stream, s, C, skip=c.lmmse_train)


def sweep_ber(ctx: Context, ck: Checkpoint, distances, n_symbols: int, receiver: str = "nn",
              noiseless: bool = False, on_row=None):
    """Rows (distance_spans, ber, n_errors, n_bits, seed), retraining the NN per distance."""
    if n_symbols < 1:
        raise ValueError("n_symbols must be positive")
    rows = []
    for d in distances:
        t0 = time.time()
        if receiver == "nn":
            ckd, _ = retrain_receiver(ctx, ck, int(d), noiseless)
            ber, e, b = test_ber_nn(ctx, ckd, int(d), n_symbols, noiseless)
        elif receiver == "nft":
            ber, e, b = test_ber_nft(ctx, ck.tx, int(d), n_symbols, noiseless)
        else:
            raise ValueError(f"unknown receiver {receiver!r}")
        row = (int(d), ber, e, b, ctx.cfg.seed)
        rows.append(row)
        log.info("%d spans: BER %.3e (%d/%d)  %.0f s", d, ber, e, b, time.time() - t0)
        if on_row is not None:
            on_row(row)
    return rows


# --------------------------------------------------------------------------
# self-tests


def roundtrip_window(eigs, b, pad: float = 16.0) -> float:
    """Half-width that holds every soliton component with tails below e^-2pad."""
    eta = np.asarray(eigs).imag
    half = 0.0
    for k, (lam, bk) in enumerate(zip(eigs, b)):
        shift = abs(math.log(abs(bk))) / (2 * eta[k])
        for j, mu in enumerate(eigs):
            if j != k:
                shift += abs(math.log(abs((lam - np.conj(mu)) / (lam - mu)))) / eta[k]
        half = max(half, shift + pad / eta[k])
    return half


@dataclass
class RoundtripReport:
    n: int
    max_eig_error: float
    max_b_rel_error: float
    seconds: float
    n_failed: int


def random_spectra(rng, n: int, im_range=(0.1, 1.0), r_range=(0.05, 2.5), min_sep: float = 0.02):
    """``n`` random 2-eigenvalue spectra with a minimum eigenvalue gap."""
    out = []
    while len(out) < n:
        im = rng.uniform(*im_range, size=2)
        if abs(im[0] - im[1]) < min_sep:
            continue
        r = rng.uniform(*r_range, size=2)
        ph = rng.uniform(0, 2 * np.pi, size=2)
        out.append(nft.DiscreteSpectrum(tuple(1j * im), tuple(r * np.exp(1j * ph))))
    return out


def roundtrip_grid(spectrum, resolution: float = 0.025, dt_max: float = 0.05,
                   separation: float = 0.05, quantum: int = 4 * SAMPLES_PER_SYMBOL):
    """``(n_samples, dt)`` for a round trip of ``spectrum``.

    The step shrinks with the summed imaginary parts (peak amplitude) and
    with the eigenvalue gap, since a'(lam) at a root is proportional to the
    distance to the other roots and the coarsest Richardson level must
    still separate them.
    """
    eigs = np.asarray(spectrum.eigenvalues)
    dt = min(dt_max, resolution / float(np.sum(eigs.imag)))
    if eigs.size > 1:
        gap = min(abs(x - y) for i, x in enumerate(eigs) for y in eigs[i + 1:])
        dt = min(dt, separation * gap / float(np.max(eigs.imag)))
    half = roundtrip_window(spectrum.eigenvalues, spectrum.b_coeffs)
    return int(math.ceil(2 * half / dt / quantum)) * quantum, dt


def roundtrip(seed: int, n: int = 200, levels: int = 3) -> RoundtripReport:
    """INFT then NFT of random spectra; worst eigenvalue and b errors."""
    t0 = time.time()
    rng = rng_for(seed, STREAM_PROBE)
    e_max = b_max = 0.0
    failed = 0
    for sp in random_spectra(rng, n):
        N, dt = roundtrip_grid(sp)
        q = nft.inft_darboux(sp, N, dt)
        try:
            got = nft.nft_spectrum(q, sp.eigenvalues, levels)
        except ValueError:
            failed += 1
            continue
        lam = np.array(got.eigenvalues)
        bb = np.array(got.b_coeffs)
        e_max = max(e_max, float(np.max(np.abs(lam - np.array(sp.eigenvalues)))))
        ref = np.array(sp.b_coeffs)
        b_max = max(b_max, float(np.max(np.abs(bb - ref) / np.abs(ref))))
    return RoundtripReport(n, e_max, b_max, time.time() - t0, failed)


def gradcheck_link(ctx: Context, n_spans: int = 2, n_probes: int = 10, frozen_noise: bool = False,
                   eps: float = 1e-6):
    """Taped gradient of the full chain versus central differences."""
    cfg = ctx.cfg
    base = init_checkpoint(ctx)
    tx = txm.TxConfig(config_id=3, scenario="e2e", gamma_hat=ctx.fiber.gamma)
    ck = replace(base, tx=tx)
    rng = rng_for(cfg.seed, STREAM_PROBE, n_spans)
    symbols, osnr, ase = batch_draws(ctx, rng, 1, n_spans, noiseless=not frozen_noise)
    program = make_loss_program(ctx, ck, symbols, osnr, ase, n_spans, noiseless=not frozen_noise)
    params = {**tx.values(), **ck.nn.as_dict()}
    return ad.gradcheck(program, params, n_probes, eps=eps, rng=rng)


def _cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def primitive_cases(rng):
    """(primitive, inputs, constants) covering every registered primitive."""
    n = SAMPLES_PER_SYMBOL
    x = _cplx(rng, 3, 4)
    r = rng.standard_normal((3, 4))
    w = 2 * np.pi * np.fft.fftfreq(n)
    H = np.exp(0.3j * w**2) / n
    return [
        ("add", [x, _cplx(rng, 4)], {}),
        ("sub", [r, rng.standard_normal((3, 4))], {}),
        ("mul", [x, _cplx(rng, 3, 4)], {}),
        ("mul", [x, rng.standard_normal(1)], {}),
        ("power", [np.abs(r) + 0.5], {"p": -0.5}),
        ("sum", [x], {"axis": 1}),
        ("mean", [r], {"axis": None}),
        ("abs2", [x], {}),
        ("reshape", [x], {"shape": (2, 6)}),
        ("getitem", [x], {"index": (Ellipsis, slice(0, None, 2))}),
        ("take", [x], {"idx": np.array([2, 0, 2, 1])}),
        ("interleave", [x], {}),
        ("fft", [_cplx(rng, 2, 16)], {}),
        ("ifft", [_cplx(rng, 2, 16)], {}),
        ("matmul", [r, rng.standard_normal((4, 5))], {}),
        ("selu", [r], {}),
        ("softmax", [r], {}),
        ("cross_entropy", [np.abs(r) + 0.1], {"labels": np.array([0, 3, 1])}),
        ("linear_filter", [_cplx(rng, 2, n)], {"H": H}),
        ("ssfm_step", [_cplx(rng, 2, n)], {"c": 0.97, "kappa": 0.03, "H": H}),
        ("ssfm_step", [3 * _cplx(rng, n)], {"c": 1.0, "kappa": 0.2, "H": H}),
        ("inft_table", [np.array([0.3, 0.6]), np.array([1.0, 0.8]), np.array([0.1, 0.9])],
         {"T0": txm.T0_DEFAULT}),
    ]


def gradcheck_primitive(case: int, seed: int = 100, n_probes: int = 4, eps: float = 1e-6):
    """Gradcheck of one primitive inside L = sum w |y + d|^2 with random d, w."""
    rng = np.random.default_rng(seed + case)
    name, xs, consts = primitive_cases(rng)[case]
    y = ad.apply(name, *xs, **consts)
    shape = np.shape(y)
    d = rng.standard_normal(shape)
    if np.iscomplexobj(y):
        d = d + 1j * rng.standard_normal(shape)
    wt = rng.uniform(0.5, 1.5, shape)

    def program(v):
        out = ad.apply(name, *[v[f"x{i}"] for i in range(len(xs))], **consts)
        return ad.vsum(ad.abs2(out + d) * wt)

    return name, ad.gradcheck(program, {f"x{i}": x for i, x in enumerate(xs)}, n_probes,
                              eps=eps, rng=rng)


def gradcheck_primitives(seed: int = 100) -> dict:
    """Worst relative error per primitive name."""
    worst = {}
    for case in range(len(primitive_cases(np.random.default_rng(0)))):
        name, rep = gradcheck_primitive(case, seed)
        worst[name] = max(worst.get(name, 0.0), rep.max_rel_error)
    return worst


@dataclass
class SolitonReport:
    max_phase_deg: float
    n_steps: int
    shape_error: float  # relative L2 of |q| after one L_nft against the launch
    eig_error: float
    b_error: float  # against b(0) exp(4 i lambda^2)


def soliton_check(max_phase_deg: float, T0: float = txm.T0_DEFAULT, eta: float = 0.5,
                  n: int = 384) -> SolitonReport:
    """Fundamental soliton over one L_nft of lossless noiseless fiber."""
    lossless = channel.FiberParams(alpha_db=0.0)
    norm = nft.derive_normalization(lossless, T0, lossless.gamma)
    fiber = channel.FiberParams(span_length=norm.L_nft, alpha_db=0.0)
    lam = 1j * eta
    q0 = nft.inft_darboux(nft.DiscreteSpectrum((lam,), (-1.0,)), n, DT / T0)
    w = nft.denormalize(q0, norm)
    plan = channel.plan_steps(fiber, max_phase_deg, float(np.max(np.abs(w.samples) ** 2)))
    out = channel.ssfm_span(w, fiber, plan)
    a, b = np.abs(out.samples), np.abs(w.samples)
    sp = nft.nft_spectrum(nft.normalize(out, norm), [lam], 3)
    b_ref = -np.exp(4j * lam**2)
    return SolitonReport(max_phase_deg, plan.n_steps, float(np.linalg.norm(a - b) / np.linalg.norm(b)),
                         float(abs(sp.eigenvalues[0] - lam)), float(abs(sp.b_coeffs[0] - b_ref)))
