"""Checkpoints, CSV tables and run manifests.

Checkpoint layout (all integers little-endian)::

    magic      8 bytes  b"NFDMCKPT"
    version    u32
    n_sections u32
    table      n_sections x (name 48 bytes NUL-padded, ndim u32, dims 4 x u64,
                             offset u64, count u64)
    payload    float64 little-endian, sections back to back

Sections are written in sorted name order, so the bytes depend only on the
stored values.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .optim import OptimizerState
from .receiver_nn import MlpParams
from .transmitter import SCENARIOS, TxConfig

MAGIC = b"NFDMCKPT"
VERSION = 1
_NAME = 48
_MAXDIM = 4
_ENTRY = struct.Struct("<%dsI%dQQQ" % (_NAME, _MAXDIM))
_HEAD = struct.Struct("<8sII")
FEATURIZATIONS = ("interleaved", "strict96")
ACTIVATIONS = ("selu", "softmax", "linear")

LOSS_FORMAT = "nfdm-loss/1"
BER_FORMAT = "nfdm-ber/1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tx: TxConfig
    nn: MlpParams
    opt: OptimizerState
    iteration: int = 0
    loss_history: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _sections(ck: Checkpoint) -> dict:
    sec = {}
    for k, v in ck.tx.values().items():
        sec[f"tx/{k}"] = np.asarray(v, float)
    for k, v in ck.nn.as_dict().items():
        sec[f"nn/{k}"] = np.asarray(v, float)
    for k, v in ck.opt.first_moment.items():
        sec[f"opt/m/{k}"] = np.asarray(v, float)
    for k, v in ck.opt.second_moment.items():
        sec[f"opt/v/{k}"] = np.asarray(v, float)
    sec["opt/hyper"] = np.array([ck.opt.step_count, ck.opt.beta1, ck.opt.beta2, ck.opt.eps], float)
    sec["meta"] = np.array([ck.iteration, ck.tx.config_id, SCENARIOS.index(ck.tx.scenario),
                            FEATURIZATIONS.index(ck.nn.featurization)], float)
    sec["nn/activations"] = np.array([ACTIVATIONS.index(a) for a in ck.nn.activations], float)
    sec["loss_history"] = np.asarray(ck.loss_history, float).reshape(-1)
    return sec


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    sec = _sections(ck)
    names = sorted(sec)
    head = _HEAD.pack(MAGIC, VERSION, len(names))
    offset = 0
    table, payload = [], []
    for name in names:
        a = np.ascontiguousarray(sec[name], dtype="<f8")
        if a.ndim > _MAXDIM:
            raise CheckpointError(f"section {name} has too many dimensions")
        dims = list(a.shape) + [0] * (_MAXDIM - a.ndim)
        table.append(_ENTRY.pack(name.encode("ascii"), a.ndim, *dims, offset, a.size))
        payload.append(a.tobytes())
        offset += a.size
    return head + b"".join(table) + b"".join(payload)


def save_checkpoint(ck: Checkpoint, path) -> None:
    data = checkpoint_bytes(ck)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def parse_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < _HEAD.size:
        raise CheckpointError("truncated checkpoint")
    magic, version, n = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    base = _HEAD.size + n * _ENTRY.size
    sec = {}
    for i in range(n):
        name, ndim, *rest = _ENTRY.unpack_from(data, _HEAD.size + i * _ENTRY.size)
        dims, offset, count = rest[:_MAXDIM], rest[_MAXDIM], rest[_MAXDIM + 1]
        start = base + 8 * offset
        if start + 8 * count > len(data):
            raise CheckpointError("section runs past the end of the file")
        a = np.frombuffer(data, dtype="<f8", count=count, offset=start).astype(float)
        sec[name.rstrip(b"\0").decode("ascii")] = a.reshape(tuple(dims[:ndim]))
    meta = sec["meta"]
    it, cid, scen, feat = (int(x) for x in meta)
    tx = TxConfig(im_lambda=tuple(sec["tx/im_lambda"]), radius=tuple(sec["tx/radius"]),
                  phase=tuple(sec["tx/phase"]), gamma_hat=float(sec["tx/gamma_hat"].reshape(-1)[0]),
                  config_id=cid, scenario=SCENARIOS[scen])
    acts = tuple(ACTIVATIONS[int(x)] for x in sec["nn/activations"])
    nl = len(acts)
    nn = MlpParams([sec[f"nn/W{i}"] for i in range(nl)], [sec[f"nn/b{i}"] for i in range(nl)],
                   acts, FEATURIZATIONS[feat])
    hyper = sec["opt/hyper"]
    m = {k[6:]: v for k, v in sec.items() if k.startswith("opt/m/")}
    v = {k[6:]: x for k, x in sec.items() if k.startswith("opt/v/")}
    opt = OptimizerState(m, v, int(hyper[0]), float(hyper[1]), float(hyper[2]), float(hyper[3]))
    return Checkpoint(tx, nn, opt, it, sec["loss_history"])


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())


# --------------------------------------------------------------------------
# CSV


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def csv_text(header, rows, tag: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {tag}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def write_csv(path, header, rows, tag: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(csv_text(header, rows, tag))


def read_csv(path):
    """(tag, header, rows) with numeric fields converted."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    tag = lines[0][2:] if lines and lines[0].startswith("# ") else None
    body = [ln for ln in lines if not ln.startswith("#")]
    r = list(csv.reader(body))
    out = []
    for row in r[1:]:
        out.append([_parse(x) for x in row])
    return tag, r[0], out


def _parse(x: str):
    if x.lstrip("-").isdigit():
        return int(x)
    try:
        return float(x)
    except ValueError:
        return x


LOSS_HEADER = ("iteration", "lr", "loss")
BER_HEADER = ("distance_spans", "ber", "n_errors", "n_bits", "seed")


# --------------------------------------------------------------------------
# manifest


def write_manifest(path, config: dict, command: str, decisions: dict, extra: dict | None = None) -> dict:
    """Resolved configuration plus provenance, written before any compute."""
    m = {
        "format": "nfdm-manifest/1",
        "command": command,
        "code_version": __version__,
        "seed": config.get("seed"),
        "profile": config.get("profile"),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": config,
        "decisions": decisions,
    }
    if extra:
        m.update(extra)
    with open(path, "w") as fh:
        json.dump(m, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return m


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and math.isinf(x):
        return str(x)
    raise TypeError(f"cannot serialize {type(x)}")
