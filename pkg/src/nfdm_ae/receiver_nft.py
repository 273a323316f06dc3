"""Conventional NFDM receiver: filter, NFT detection, BPS, LMMSE, demapping."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import nft
from . import transmitter as tx
from .grid import WaveformGrid

BANDWIDTH_HZ = 20e9
UPSAMPLE = 4
NFT_LEVELS = 2
BPS_PHASES = 64
BPS_BLOCK = 64
N_TRAIN = 1000
MIN_TRAIN = 4


@dataclass
class SpectrumPointStream:
    eigenvalues: np.ndarray  # (S, 2) complex, NaN where flagged
    b: np.ndarray  # (S, 2) complex, NaN where flagged
    flags: np.ndarray  # (S, 2) bool, True = not detected

    def __post_init__(self):
        shapes = {np.shape(self.eigenvalues), np.shape(self.b), np.shape(self.flags)}
        if len(shapes) != 1 or np.ndim(self.b) != 2:
            raise ValueError("stream arrays must share one (S, K) shape")

    def __len__(self):
        return self.b.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return ~self.flags


def bandpass(w: WaveformGrid, bandwidth_hz: float = BANDWIDTH_HZ) -> WaveformGrid:
    """Ideal brick-wall filter passing |f| <= bandwidth / 2."""
    fs = 1.0 / w.dt
    if not 0 < bandwidth_hz < fs:
        raise ValueError("bandwidth must be positive and below the sampling rate")
    f = np.fft.fftfreq(w.n, w.dt)
    keep = np.abs(f) <= bandwidth_hz / 2
    return w.with_samples(np.fft.ifft(np.fft.fft(w.samples, axis=-1) * keep, axis=-1))


def upsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Band-limited (periodic) interpolation along the last axis."""
    if factor == 1:
        return np.asarray(x)
    n = x.shape[-1]
    X = np.fft.fft(x, axis=-1)
    Y = np.zeros(x.shape[:-1] + (n * factor,), complex)
    h = n // 2
    Y[..., :h] = X[..., :h]
    Y[..., -h:] = X[..., -h:]
    if n % 2 == 0:
        # split the Nyquist bin to keep real signals real
        Y[..., h] = X[..., h] / 2
        Y[..., -h] = X[..., h] / 2
    return np.fft.ifft(Y, axis=-1) * factor


def detect_spectrum(blocks, tx_eigenvalues, dt: float, levels: int = NFT_LEVELS,
                    upsample_factor: int = UPSAMPLE) -> SpectrumPointStream:
    """Eigenvalues and b's of normalized blocks (S, n), seeded at the transmit eigenvalues.

    Each root is associated with the nearest transmit eigenvalue; a slot left
    without a root (no convergence, or two roots claiming the same slot) is
    flagged.
    """
    q = np.asarray(blocks, dtype=complex)
    if q.ndim == 1:
        q = q[None]
    lam_tx = np.asarray(tx_eigenvalues, dtype=complex)
    q = upsample(q, upsample_factor)
    h = dt / upsample_factor
    guesses = np.broadcast_to(lam_tx, (q.shape[0], lam_tx.size))
    lam, b, conv = nft.richardson_spectrum(q, h, guesses, levels)
    # upsampling keeps sample 0 in place, so the fine grid sits (dt - h) / 2
    # late against its own centred time axis; undo that shift in b
    b = b * np.exp(-2j * np.where(conv, lam, 0) * (dt - h) / 2)
    S, K = lam.shape
    out_l = np.full((S, K), np.nan + 0j)
    out_b = np.full((S, K), np.nan + 0j)
    dist = np.abs(lam[:, :, None] - lam_tx[None, None, :])
    slot = np.argmin(dist, axis=-1)
    d = np.take_along_axis(dist, slot[..., None], -1)[..., 0]
    # visit roots closest first so the better match keeps a contested slot
    order = np.argsort(np.where(conv, d, np.inf), axis=1, kind="stable")
    for j in range(K):
        g = order[:, j]
        rows = np.arange(S)
        ok = conv[rows, g]
        tgt = slot[rows, g]
        free = ok & np.isnan(out_l[rows, tgt].real)
        # drop roots that duplicate one already placed
        for m in range(K):
            placed = ~np.isnan(out_l[:, m].real)
            free &= ~(placed & (np.abs(out_l[:, m] - lam[rows, g]) < nft.MERGE_RADIUS))
        r = rows[free]
        out_l[r, tgt[free]] = lam[r, g[free]]
        out_b[r, tgt[free]] = b[r, g[free]]
    flags = np.isnan(out_l.real)
    return SpectrumPointStream(out_l, out_b, flags)


def bps_compensate(stream: SpectrumPointStream, n_test_phases: int = BPS_PHASES,
                   block_len: int = BPS_BLOCK, phase_offset=(0.0, 0.0)) -> SpectrumPointStream:
    """Blind phase search per eigenvalue track, modulo pi/2.

    Points are RMS-normalized and compared with a unit QPSK rotated by
    ``phase_offset``; the winning test phase of each block is unwrapped
    across blocks (with period pi/2) and removed from the stream.
    """
    if n_test_phases < 2:
        raise ValueError("need at least two test phases")
    if block_len < 1:
        raise ValueError("block length must be positive")
    b = stream.b.copy()
    theta = np.arange(n_test_phases) * (np.pi / 2 / n_test_phases)
    ideal = np.exp(1j * np.pi / 2 * np.arange(4))
    S = len(stream)
    for k in range(b.shape[1]):
        ok = stream.valid[:, k]
        if not np.any(ok):
            continue
        rms = np.sqrt(np.mean(np.abs(b[ok, k]) ** 2))
        z = np.where(ok, b[:, k], 0) / rms * np.exp(-1j * phase_offset[k])
        est = []
        for s0 in range(0, S, block_len):
            zb = z[s0:s0 + block_len][ok[s0:s0 + block_len]]
            if zb.size == 0:
                est.append(est[-1] if est else 0.0)
                continue
            rot = zb[None, :] * np.exp(-1j * theta)[:, None]
            dmin = np.min(np.abs(rot[..., None] - ideal) ** 2, axis=-1)
            est.append(theta[np.argmin(np.sum(dmin, axis=1))])
        est = np.unwrap(np.array(est) * 4) / 4
        ph = np.repeat(est, block_len)[:S]
        b[:, k] = np.where(ok, b[:, k] * np.exp(-1j * ph), b[:, k])
    return replace(stream, b=b)


def lmmse_equalize(stream: SpectrumPointStream, training_b, n_train: int = N_TRAIN):
    """2x2 complex LMMSE on (b1, b2), trained on the first ``n_train`` symbols.

    ``training_b`` holds the transmitted pairs (>= n_train, 2). Flagged
    symbols are left out of the covariance estimates and stay flagged.
    """
    x = np.asarray(training_b, complex)[:n_train]
    y = stream.b[:n_train]
    ok = np.all(stream.valid[:n_train], axis=1)
    if int(ok.sum()) < MIN_TRAIN:
        raise ValueError(f"need at least {MIN_TRAIN} unflagged training symbols")
    Y, X = y[ok], x[ok]
    Ryy = Y.T @ np.conj(Y) / len(Y)
    Rxy = X.T @ np.conj(Y) / len(Y)
    W = Rxy @ np.linalg.pinv(Ryy)
    # a flagged entry enters as zero; it stays flagged in the output
    out = np.where(stream.valid, stream.b, 0) @ W.T
    return replace(stream, b=np.where(stream.valid, out, np.nan + 0j))


def demap_count_ber(stream: SpectrumPointStream, tx_symbols, constellations, skip: int = 0):
    """(ber, n_errors, n_bits) after nearest-point decisions and Gray decoding.

    A flagged eigenvalue costs one of its two bits, the expected loss of a
    random guess, so an all-flagged stream has BER 0.5.
    """
    s = np.asarray(tx_symbols)[skip:]
    b = stream.b[skip:]
    flags = stream.flags[skip:]
    C = np.asarray(constellations)
    k_hat = np.stack([np.argmin(np.abs(np.where(flags[:, k], 0, b[:, k])[:, None] - C[k]), axis=1)
                      for k in range(2)], axis=1)
    ref = tx.symbol_bits(s).reshape(-1, 2, 2)
    got = tx.GRAY[k_hat]
    err = np.sum(ref != got, axis=-1)
    err = np.where(flags, 1, err)
    n_err = int(err.sum())
    n_bits = 4 * s.size
    return n_err / n_bits, n_err, n_bits


def receive(rx: WaveformGrid, symbols, cfg: tx.TxConfig, fiber, T0: float = tx.T0_DEFAULT,
            bandwidth_hz: float = BANDWIDTH_HZ, n_train: int = N_TRAIN, levels: int = NFT_LEVELS,
            upsample_factor: int = UPSAMPLE, n_test_phases: int = BPS_PHASES,
            block_len: int = BPS_BLOCK):
    """Full NFT receiver chain; returns ``(ber, n_errors, n_bits, stream)``.

    The first ``n_train`` symbols train the equalizer and are not counted.
    """
    s = np.asarray(symbols).reshape(-1)
    if s.size <= n_train:
        raise ValueError("need more symbols than equalizer training symbols")
    w = bandpass(rx, bandwidth_hz)
    norm = nft.derive_normalization(fiber, T0, cfg.gamma_hat)
    q = nft.normalize(w, norm)
    blocks = q.samples.reshape(-1, q.n)
    blocks = blocks.reshape(-1, tx.SAMPLES_PER_SYMBOL)
    stream = detect_spectrum(blocks, cfg.eigenvalues, q.dt, levels, upsample_factor)
    C = tx.build_constellations(cfg.radius, cfg.phase)
    stream = bps_compensate(stream, n_test_phases, block_len, cfg.phase)
    stream = lmmse_equalize(stream, tx.map_symbol(s, C), n_train)
    ber, n_err, n_bits = demap_count_ber(stream, s, C, skip=n_train)
    return ber, n_err, n_bits, stream


def binomial_interval(n_err: int, n: int, z: float = 1.959963984540054):
    """Wilson score interval for an error probability."""
    if n <= 0:
        raise ValueError("need at least one trial")
    p = n_err / n
    d = 1 + z * z / n
    c = (p + z * z / (2 * n)) / d
    h = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / d
    return max(0.0, c - h), min(1.0, c + h)

