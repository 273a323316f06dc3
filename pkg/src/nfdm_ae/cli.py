"""Command-line entry point: ``nfdm-ae <command> [config.json] [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

from . import config as cfgmod
from . import harness, persist
from . import transmitter as txm
from .optim import lr_schedule

log = logging.getLogger("nfdm_ae")


def _common(p):
    p.add_argument("config", nargs="?", help="JSON configuration (or a previous manifest)")
    p.add_argument("--config", dest="config_opt", help="same as the positional argument")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--profile", choices=cfgmod.PROFILES, default=None)
    p.add_argument("--out", default="runs/out", help="output directory")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nfdm-ae", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="end-to-end training of transmitter and receiver")
    _common(p)
    p.add_argument("--spans", type=int, default=None, help="override train.n_spans")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")

    p = sub.add_parser("retrain", help="retrain the receiver of a checkpoint and test it")
    _common(p)
    _transmitter_source(p)
    p.add_argument("--spans", type=int, default=None)

    p = sub.add_parser("sweep", help="BER against distance")
    _common(p)
    _transmitter_source(p)
    p.add_argument("--receiver", choices=("nn", "nft"), default=None)
    p.add_argument("--distances", type=int, nargs="+", default=None)

    p = sub.add_parser("roundtrip", help="INFT/NFT round trip over random spectra")
    _common(p)
    p.add_argument("--n", type=int, default=200)

    p = sub.add_parser("gradcheck", help="taped gradient against finite differences")
    _common(p)
    p.add_argument("--spans", type=int, default=2)
    p.add_argument("--probes", type=int, default=10)

    p = sub.add_parser("power-table", help="launch power of the optimized configurations")
    _common(p)
    return ap


def _transmitter_source(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--checkpoint", help="trained checkpoint")
    g.add_argument("--table-config", type=int, choices=range(4),
                   help="tabulated optimized parameters of configuration N")
    g.add_argument("--config-id", type=int, choices=range(4),
                   help="initial (untrained) parameters with a fresh receiver")
    p.add_argument("--scenario", choices=txm.SCENARIOS, default="lpa")


def read_config(path) -> dict:
    data = cfgmod.load_file(path)
    if data.get("format", "").startswith("nfdm-manifest"):
        return data["config"]
    return data


def resolve_args(args) -> cfgmod.RunConfig:
    path = args.config_opt or args.config
    values = read_config(path) if path else {}
    cfg = cfgmod.resolve(args.profile, values, args.seed)
    if getattr(args, "spans", None) is not None and args.command == "train":
        cfg.train.n_spans = args.spans
    if args.command == "sweep":
        if args.receiver:
            cfg.sweep.receiver = args.receiver
        if args.distances:
            cfg.sweep.distances = tuple(args.distances)
    return cfg


def _source_checkpoint(ctx, args) -> persist.Checkpoint:
    if args.checkpoint:
        return persist.load_checkpoint(args.checkpoint)
    base = harness.init_checkpoint(ctx)
    if args.table_config is not None:
        return persist.Checkpoint(txm.table_config(args.table_config, args.scenario), base.nn,
                                  base.opt)
    cid = 0 if args.config_id is None else args.config_id
    tx = txm.initial_config(cid, args.scenario, gamma=ctx.fiber.gamma)
    return persist.Checkpoint(tx, base.nn, base.opt)


def _source_info(args) -> dict:
    keys = ("checkpoint", "table_config", "config_id", "scenario")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(message)s", datefmt="%H:%M:%S")
    try:
        cfg = resolve_args(args)
    except (OSError, KeyError, TypeError, ValueError) as e:
        ap.error(f"bad configuration: {e}")
    out = args.out
    os.makedirs(out, exist_ok=True)
    extra = {"source": _source_info(args)} if args.command in ("retrain", "sweep") else None
    persist.write_manifest(os.path.join(out, "manifest.json"), cfg.to_dict(), args.command,
                           harness.decisions(cfg), extra)
    ctx = harness.build_context(cfg)
    try:
        return COMMANDS[args.command](ctx, args, out)
    except harness.TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 3


def cmd_train(ctx, args, out):
    ck = persist.load_checkpoint(args.resume) if args.resume else None
    ck_path = os.path.join(out, "checkpoint.bin")
    t = ctx.cfg.train
    # a resumed run still writes the whole loss history
    rows = [] if ck is None else [
        (i + 1, lr_schedule(i + 1, t.n_iter, t.lr_breaks, t.lr_rates), float(x))
        for i, x in enumerate(ck.loss_history)]
    ck, new = harness.train_e2e(ctx, ck, failure_path=os.path.join(out, "checkpoint_last_finite.bin"))
    rows += new
    persist.write_csv(os.path.join(out, "loss.csv"), persist.LOSS_HEADER, rows, persist.LOSS_FORMAT)
    persist.save_checkpoint(ck, ck_path)
    tx = ck.tx
    print(f"final loss {rows[-1][2]:.4f}  gamma_hat {tx.gamma_hat:.4f}  "
          f"im_lambda {tx.im_lambda}  radius {tx.radius}  phase {tx.phase}")
    return 0


def cmd_retrain(ctx, args, out):
    ck = _source_checkpoint(ctx, args)
    d = args.spans if args.spans is not None else ctx.cfg.train.n_spans
    ckr, losses = harness.retrain_receiver(ctx, ck, d)
    persist.save_checkpoint(ckr, os.path.join(out, "checkpoint_retrained.bin"))
    ber, e, b = harness.test_ber_nn(ctx, ckr, d, ctx.cfg.rx.test_symbols)
    persist.write_csv(os.path.join(out, "ber.csv"), persist.BER_HEADER,
                      [(d, ber, e, b, ctx.cfg.seed)], persist.BER_FORMAT)
    print(f"{d} spans: BER {ber:.4e} ({e}/{b}), retrain loss {losses[0]:.3f} -> {losses[-1]:.3f}")
    return 0


def cmd_sweep(ctx, args, out):
    ck = _source_checkpoint(ctx, args)
    rows = harness.sweep_ber(ctx, ck, ctx.cfg.sweep.distances, ctx.cfg.rx.test_symbols,
                             ctx.cfg.sweep.receiver)
    persist.write_csv(os.path.join(out, "ber.csv"), persist.BER_HEADER, rows, persist.BER_FORMAT)
    for r in rows:
        print(f"{r[0]:4d} spans  BER {r[1]:.4e}  ({r[2]}/{r[3]})")
    return 0


def cmd_roundtrip(ctx, args, out):
    r = harness.roundtrip(ctx.cfg.seed, args.n)
    _dump(out, "roundtrip.json", vars(r))
    print(f"{r.n} spectra: max eigenvalue error {r.max_eig_error:.2e}, "
          f"max b relative error {r.max_b_rel_error:.2e}, {r.n_failed} failed, {r.seconds:.1f} s")
    return 0 if r.n_failed == 0 else 1


def cmd_gradcheck(ctx, args, out):
    r = harness.gradcheck_link(ctx, args.spans, args.probes)
    _dump(out, "gradcheck.json", vars(r))
    print(f"{args.probes} probes over {args.spans} spans: max relative error {r.max_rel_error:.2e}")
    return 0


def cmd_power_table(ctx, args, out):
    rows = txm.power_table(ctx.fiber, ctx.T0)
    header = ("scenario", "config", "power_dbm", "power_grid_dbm", "reference_dbm")
    persist.write_csv(os.path.join(out, "power_table.csv"), header, rows, "nfdm-power/1")
    print(f"{'scenario':>8} {'config':>6} {'dBm':>8} {'grid dBm':>9} {'reference':>9}")
    for s, c, a, g, p in rows:
        print(f"{s:>8} {c:>6d} {a:8.3f} {g:9.3f} {p:9.2f}")
    return 0


def _dump(out, name, obj):
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return str(x)
        return x
    with open(os.path.join(out, name), "w") as fh:
        json.dump({k: clean(v) for k, v in obj.items()}, fh, indent=2, sort_keys=True)
        fh.write("\n")


COMMANDS = {"train": cmd_train, "retrain": cmd_retrain, "sweep": cmd_sweep,
            "roundtrip": cmd_roundtrip, "gradcheck": cmd_gradcheck,
            "power-table": cmd_power_table}


if __name__ == "__main__":
    sys.exit(main())
