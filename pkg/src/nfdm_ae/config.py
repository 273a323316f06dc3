"""Run configuration, the two shipped profiles, and seed-derived RNG streams."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import numpy as np

from .optim import scaled_breaks

PROFILES = ("desk", "paper")

# RNG stream tags
STREAM_INIT = 0
STREAM_TRAIN = 1
STREAM_RETRAIN = 2
STREAM_TEST = 3
STREAM_PROBE = 4


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for one (seed, tag, index...) tuple."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


@dataclass
class FiberSection:
    span_length: float = 80e3
    D: float = 17.5
    gamma: float = 1.25
    alpha_db: float = 0.195
    noise_figure_db: float = 5.0


@dataclass
class TxSection:
    config_id: int = 2
    scenario: str = "e2e"
    T0: float = 47e-12
    osnr_db: float = 30.0


@dataclass
class TrainSection:
    n_spans: int = 10
    n_iter: int = 500
    batch: int = 64
    max_phase_deg: float = 0.1
    lr_rates: tuple = (0.01, 0.003, 0.001)
    lr_breaks: tuple = (125, 312)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    param_floor: float = 1e-3


@dataclass
class ReceiverSection:
    featurization: str = "interleaved"
    retrain_symbols: int = 10_000
    retrain_batch: int = 1000
    retrain_iter: int = 1000
    retrain_lr: float = 0.003
    test_symbols: int = 50_000
    frames_per_chunk: int = 16


@dataclass
class NftReceiverSection:
    bandwidth_hz: float = 20e9
    upsample: int = 4
    richardson_levels: int = 2
    bps_phases: int = 64
    bps_block: int = 64
    lmmse_train: int = 1000
    osnr_ref_bandwidth_hz: float = 12.5e9


@dataclass
class SweepSection:
    distances: tuple = (6, 8, 10, 12, 14)
    receiver: str = "nn"


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 1
    fiber: FiberSection = field(default_factory=FiberSection)
    tx: TxSection = field(default_factory=TxSection)
    train: TrainSection = field(default_factory=TrainSection)
    rx: ReceiverSection = field(default_factory=ReceiverSection)
    nft_rx: NftReceiverSection = field(default_factory=NftReceiverSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def profile_defaults(profile: str) -> RunConfig:
    if profile == "desk":
        return RunConfig(profile="desk")
    if profile == "paper":
        return RunConfig(
            profile="paper",
            train=TrainSection(n_spans=69, n_iter=6400, max_phase_deg=0.01, lr_breaks=(1600, 4000)),
            rx=ReceiverSection(retrain_symbols=500_000, test_symbols=500_000),
            sweep=SweepSection(distances=tuple(range(49, 90, 4))),
        )
    raise ValueError(f"profile must be one of {PROFILES}")


def _merge(obj, updates: dict, where: str = ""):
    names = {f.name: f for f in fields(obj)}
    for k, v in updates.items():
        if k not in names:
            raise KeyError(f"unknown configuration key {where}{k!r}")
        cur = getattr(obj, k)
        if is_dataclass(cur):
            if not isinstance(v, dict):
                raise TypeError(f"{where}{k} must be a table")
            _merge(cur, v, f"{where}{k}.")
        elif isinstance(cur, tuple):
            setattr(obj, k, tuple(v))
        elif isinstance(cur, bool) or cur is None:
            setattr(obj, k, v)
        elif isinstance(cur, int) and not isinstance(v, bool):
            if float(v) != int(v):
                raise TypeError(f"{where}{k} must be an integer")
            setattr(obj, k, int(v))
        elif isinstance(cur, float):
            setattr(obj, k, float(v))
        else:
            setattr(obj, k, v)


def resolve(profile: str | None = None, file_values: dict | None = None,
            seed: int | None = None) -> RunConfig:
    """Profile defaults, then the config file, then command-line overrides."""
    values = copy.deepcopy(file_values or {})
    file_profile = values.pop("profile", None)
    profile = profile or file_profile or "desk"
    cfg = profile_defaults(profile)
    _merge(cfg, values)
    train = values.get("train", {})
    if "n_iter" in train and "lr_breaks" not in train:
        cfg.train.lr_breaks = scaled_breaks(cfg.train.n_iter)
    if seed is not None:
        cfg.seed = int(seed)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.tx.config_id not in (0, 1, 2, 3):
        raise ValueError("tx.config_id must be 0..3")
    if cfg.tx.scenario not in ("lpa", "e2e"):
        raise ValueError("tx.scenario must be 'lpa' or 'e2e'")
    if cfg.train.n_iter < 1 or cfg.train.batch < 1:
        raise ValueError("n_iter and batch must be positive")
    if len(cfg.train.lr_rates) != len(cfg.train.lr_breaks) + 1:
        raise ValueError("need one more learning rate than breakpoints")
    if cfg.rx.featurization not in ("interleaved", "strict96"):
        raise ValueError("rx.featurization must be 'interleaved' or 'strict96'")
    if cfg.sweep.receiver not in ("nn", "nft"):
        raise ValueError("sweep.receiver must be 'nn' or 'nft'")
    if cfg.rx.test_symbols < 1:
        raise ValueError("test_symbols must be positive")


def load_file(path) -> dict:
    """Structured configuration text (JSON object)."""
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("configuration file must hold a JSON object")
    return data
