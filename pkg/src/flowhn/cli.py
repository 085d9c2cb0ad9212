"""Command-line entry point: train / eval / bench / flops / route.

Every subcommand is deterministic given (config, seed, corpus). Flags win
over config-file values; the FLOWHN_SEED environment variable is a seed
override of last resort (used only when neither a --seed flag nor a seed
key in the config file was given). Failures exit nonzero with a single
machine-parsable `error: ...` line on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path

from . import bench, data, flops, model, trainer
from .config import (ConfigError, RunConfig, load_run_config,
                     save_run_config, with_overrides)
from .routing import SplitMode, format_plan, plan


def _build_parser():
    p = argparse.ArgumentParser(prog="flowhn",
                                description="Parallel hybrid attention/SSM model tools")
    sub = p.add_subparsers(dest="command", required=True)

    def add_config(sp):
        sp.add_argument("--config", required=True, help="INI run config file")

    tr = sub.add_parser("train", help="train a model and write checkpoints/metrics")
    add_config(tr)
    tr.add_argument("--corpus", help="raw-byte corpus file (overrides config)")
    tr.add_argument("--out-dir", help="artifact directory (overrides config)")
    tr.add_argument("--steps", type=int, help="total applied optimizer steps")
    tr.add_argument("--mode", help="split mode: no_split|ae|fa|fac")
    tr.add_argument("--exec", dest="exec_mode", choices=["parallel", "serial"],
                    help="branch execution mode")
    tr.add_argument("--seed", type=int, help="seed override")
    tr.add_argument("--ckpt-every", type=int, help="checkpoint every K applied steps")

    ev = sub.add_parser("eval", help="mean corpus loss of a saved checkpoint")
    add_config(ev)
    ev.add_argument("--checkpoint", help="checkpoint file (overrides config)")
    ev.add_argument("--corpus", help="corpus file (overrides config)")
    ev.add_argument("--out-dir", help="artifact directory (overrides config)")

    be = sub.add_parser("bench", help="measure TPS/MFU per split mode")
    add_config(be)
    be.add_argument("--modes", default="no_split,ae,fa,fac",
                    help="comma-separated split modes")
    be.add_argument("--exec", dest="exec_mode", choices=["parallel", "serial"],
                    default="parallel")
    be.add_argument("--peak-flops", type=float, required=True,
                    help="declared device peak FLOPs/sec (never auto-detected)")
    be.add_argument("--warmup", type=int, default=5)
    be.add_argument("--iters", type=int, default=20)
    be.add_argument("--batch-size", type=int, default=4)
    be.add_argument("--out-dir", help="where bench.csv is written (overrides config)")

    fl = sub.add_parser("flops", help="per-branch FLOPs/token and block size")
    add_config(fl)
    fl.add_argument("--seq-len", type=int, help="context length override")

    ro = sub.add_parser("route", help="dump per-block token assignments")
    ro.add_argument("--mode", required=True, help="no_split|ae|fa|fac")
    ro.add_argument("--seq-len", type=int, required=True)
    ro.add_argument("--blocks", type=int, required=True)
    ro.add_argument("--flop-ratio", type=float, default=1.0,
                    help="attention-to-SSM FLOPs/token ratio (sets block size)")
    ro.add_argument("--block-size", type=int,
                    help="explicit SSM token count (overrides --flop-ratio)")
    return p


def _file_sets_seed(path) -> bool:
    parser = configparser.ConfigParser()
    parser.read_string(Path(path).read_text())
    return any(parser.has_option(section, "seed") for section in parser.sections())


def _load(args) -> RunConfig:
    cfg = load_run_config(args.config)
    model_over, train_over, paths_over = {}, {}, {}
    if getattr(args, "mode", None):
        model_over["split_mode"] = SplitMode.parse(args.mode)
    if getattr(args, "exec_mode", None):
        model_over["exec_mode"] = args.exec_mode
    if getattr(args, "steps", None) is not None:
        train_over["total_steps"] = args.steps
    if getattr(args, "ckpt_every", None) is not None:
        train_over["ckpt_every"] = args.ckpt_every
    seed = getattr(args, "seed", None)
    if seed is None and not _file_sets_seed(args.config):
        env = os.environ.get("FLOWHN_SEED")
        if env is not None:
            seed = int(env)
    if seed is not None:
        model_over["seed"] = seed
        train_over["seed"] = seed
    for key in ("corpus", "out_dir", "checkpoint"):
        val = getattr(args, key, None)
        if val:
            paths_over[key] = val
    return with_overrides(cfg, model_over, train_over, paths_over)


def _prepare_out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_run_config(cfg, out / "config.ini")
    return out


def cmd_train(args):
    cfg = _load(args)
    if not cfg.corpus:
        raise ConfigError(["paths.corpus is required for train"])
    windows = data.ingest_corpus(cfg.corpus, cfg.model.seq_len)
    out = _prepare_out_dir(cfg)
    tr, history = trainer.train_loop(
        cfg.model, cfg.train, windows,
        metrics_path=out / "metrics.jsonl", ckpt_dir=out,
        log=lambda msg: print(msg, flush=True))
    model.save_checkpoint(tr.params, out / "model_final.flwh")
    print(f"final loss {history[-1]:.6f}; artifacts in {out}")
    return 0


def cmd_eval(args):
    cfg = _load(args)
    if not cfg.corpus:
        raise ConfigError(["paths.corpus is required for eval"])
    if not cfg.checkpoint:
        raise ConfigError(["paths.checkpoint is required for eval"])
    params = model.init_params(cfg.model)
    model.apply_flat(params, model.load_checkpoint(cfg.checkpoint))
    windows = data.ingest_corpus(cfg.corpus, cfg.model.seq_len)
    total, count = 0.0, 0
    for start in range(0, len(windows), 16):
        batch = windows[start:start + 16]
        logits, _ = model.forward(cfg.model, params, batch[:, :-1],
                                  collect_cache=False)
        total += model.loss(logits, batch[:, 1:]) * len(batch)
        count += len(batch)
    result = {"eval_loss": total / count, "windows": count,
              "checkpoint": str(cfg.checkpoint)}
    out = _prepare_out_dir(cfg)
    (out / "eval.json").write_text(json.dumps(result) + "\n")
    print(json.dumps(result))
    return 0


def cmd_bench(args):
    cfg = _load(args)
    modes = [SplitMode.parse(m) for m in args.modes.split(",") if m.strip()]
    reports = [bench.measure(cfg.model, m, args.exec_mode, args.peak_flops,
                             warmup_iters=args.warmup, timed_iters=args.iters,
                             batch_size=args.batch_size, seed=cfg.model.seed)
               for m in modes]
    print(bench.report_table(reports))
    out = _prepare_out_dir(cfg)
    (out / "bench.csv").write_text(bench.report_csv(reports))
    return 0


def cmd_flops(args):
    cfg = _load(args)
    mcfg = cfg.model
    if args.seq_len:
        from dataclasses import replace
        mcfg = replace(mcfg, seq_len=args.seq_len).validate()
    print(flops.flops_table(mcfg))
    return 0


def cmd_route(args):
    mode = SplitMode.parse(args.mode)
    L = args.seq_len
    if args.block_size is not None:
        block_size = args.block_size
    elif mode in (SplitMode.FA_SPLIT, SplitMode.FAC_SPLIT):
        if args.flop_ratio <= 0:
            raise ValueError("--flop-ratio must be positive")
        block_size = flops.compute_block_size(L, args.flop_ratio, 1.0)
    else:
        block_size = 0
    for i in range(args.blocks):
        print(format_plan(plan(mode, L, i, block_size)))
    return 0


_COMMANDS = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench,
             "flops": cmd_flops, "route": cmd_route}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
