"""Command-line entry point: ``weakforge <subcommand> [flags]``.

Run settings resolve in this order, later winning: the preset, the
``--config`` JSON file, the ``WEAKFORGE_SEED`` environment variable, then
explicit flags. Exit status is 0 on success, 2 when a self-reinforcement
round aborted for lack of accepted pairs, and 1 on any error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import typing
from pathlib import Path

from . import gradsuite
from .checkpoint import load_snapshot, save_snapshot
from .corpus import Dataset, emit_jsonl, ingest_jsonl
from .errors import WeakforgeError
from .pipeline import (RunConfig, build_base, desk_config, difficulty_report, evaluate, execute,
                       make_splits, write_report_csv)
from .model import DecodeConfig
from .rng import derive_seed
from .sft import sft_train
from .vocab import Vocab

log = logging.getLogger("weakforge")

EXIT_OK, EXIT_ERROR, EXIT_ABORTED = 0, 1, 2
SEED_ENV = "WEAKFORGE_SEED"
PRESETS = {"desk": desk_config, "paper": RunConfig}
NESTED = ("arch", "sft", "pref", "decode")
# per-pair decode seeds are derived from the run seed
_SKIP = {("decode", "seed")}


def _flag_type(cls, name: str):
    hint = typing.get_type_hints(cls)[name]
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    return args[0] if args else hint


def _config_fields():
    """Yield (section or None, field name, python type) for every RunConfig knob."""
    for f in dataclasses.fields(RunConfig):
        if f.name in NESTED:
            sub = _flag_type(RunConfig, f.name)
            for g in dataclasses.fields(sub):
                if (f.name, g.name) not in _SKIP:
                    yield f.name, g.name, _flag_type(sub, g.name)
        else:
            yield None, f.name, _flag_type(RunConfig, f.name)


def _dest(section, name):
    return f"{section}__{name}" if section else name


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--config", type=Path, help="JSON file with RunConfig keys (nested sections allowed)")
    grp = p.add_argument_group("run configuration")
    for section, name, typ in _config_fields():
        flag = "--" + (f"{section}-{name}" if section else name).replace("_", "-")
        kw = dict(dest=_dest(section, name), default=argparse.SUPPRESS)
        if typ is bool:
            grp.add_argument(flag, action=argparse.BooleanOptionalAction, **kw)
        else:
            grp.add_argument(flag, type=typ, metavar=typ.__name__.upper(), **kw)


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def resolve_config(args: argparse.Namespace, environ: typing.Mapping[str, str] | None = None) -> RunConfig:
    environ = os.environ if environ is None else environ
    d = PRESETS[args.preset]().to_dict()
    if args.config is not None:
        d = _merge(d, json.loads(Path(args.config).read_text()))
    if environ.get(SEED_ENV):
        d["seed"] = int(environ[SEED_ENV])
    for section, name, _ in _config_fields():
        dest = _dest(section, name)
        if hasattr(args, dest):
            if section:
                d[section] = dict(d[section], **{name: getattr(args, dest)})
            else:
                d[name] = getattr(args, dest)
    return RunConfig.from_dict(d)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _out_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir or f"runs/seed-{cfg.seed}")


def _testset(args, cfg: RunConfig) -> Dataset:
    if args.data is None:
        return make_splits(cfg)[2]
    ds = ingest_jsonl(args.data)
    test = [ex for ex in ds if ex.split == "test"]
    return Dataset(tuple(test), ds.provenance) if test else ds


# -- subcommands -------------------------------------------------------------


def cmd_gen_data(args, cfg: RunConfig) -> int:
    seed_ds, pool, test = make_splits(cfg)
    path = emit_jsonl(list(seed_ds) + list(pool) + list(test), args.out)
    _emit({"path": str(path), "seed": len(seed_ds), "unlabeled": len(pool), "test": len(test)})
    return EXIT_OK


def cmd_train_sft(args, cfg: RunConfig) -> int:
    vocab = Vocab()
    out = _out_dir(cfg)
    seed_ds, _, test = make_splits(cfg)
    base = build_base(cfg, vocab)
    pi1 = sft_train(base, seed_ds, cfg.sft, derive_seed(cfg.seed, "sft"), vocab)
    save_snapshot(base, out / "checkpoints" / "pi0.wkfg")
    path = save_snapshot(pi1, out / "checkpoints" / "pi1.wkfg")
    row = {"checkpoint": str(path), "version_id": pi1.version_id, "parent_id": pi1.parent_id}
    if not args.skip_eval:
        row["accuracy"] = evaluate(pi1, test, vocab, _eval_cfg(cfg)).accuracy
    _emit(row)
    return EXIT_OK


def cmd_self_reinforce(args, cfg: RunConfig) -> int:
    cfg = cfg.replace(output_dir=str(_out_dir(cfg)))
    result = execute(cfg)
    for rec in result.records:
        _emit(rec.metrics())
    return EXIT_ABORTED if result.aborted else EXIT_OK


def _eval_cfg(cfg: RunConfig) -> DecodeConfig:
    return DecodeConfig(temperature=0.0, max_new_tokens=cfg.eval_max_new_tokens)


def cmd_eval(args, cfg: RunConfig) -> int:
    snap = load_snapshot(args.checkpoint)
    res = evaluate(snap, _testset(args, cfg), Vocab(), _eval_cfg(cfg))
    _emit(dict(res.to_dict(), version_id=snap.version_id))
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    snap = load_snapshot(args.checkpoint)
    rows = difficulty_report(snap, _testset(args, cfg), args.buckets, Vocab(), _eval_cfg(cfg))
    path = write_report_csv(rows, args.out)
    _emit({"path": str(path), "buckets": len(rows)})
    return EXIT_OK


def cmd_grad_check(args, cfg: RunConfig) -> int:
    cases, seconds = gradsuite.timed_suite(n_snapshots=args.snapshots, seed=args.grad_seed)
    summary = gradsuite.summarize(cases, args.tol, seconds)
    _emit(summary)
    return EXIT_OK if summary["passed"] == summary["cases"] else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weakforge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        _add_config_flags(sp)
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen-data", cmd_gen_data, "write the run's seed/unlabeled/test examples as JSONL")
    sp.add_argument("--out", type=Path, required=True)
    sp = add("train-sft", cmd_train_sft, "build the base model and fine-tune it on the seed split")
    sp.add_argument("--skip-eval", action="store_true")
    add("self-reinforce", cmd_self_reinforce, "run SFT plus every preference round")
    for name, fn, help_ in (("eval", cmd_eval, "greedy accuracy of a checkpoint"),
                            ("report", cmd_report, "accuracy per difficulty bucket as CSV")):
        sp = add(name, fn, help_)
        sp.add_argument("--checkpoint", type=Path, required=True)
        sp.add_argument("--data", type=Path, help="JSONL dataset; defaults to the run's test split")
        if name == "report":
            sp.add_argument("--buckets", type=int, default=4)
            sp.add_argument("--out", type=Path, required=True)
    sp = add("grad-check", cmd_grad_check, "finite-difference check of every trainable loss")
    sp.add_argument("--snapshots", type=int, default=100)
    sp.add_argument("--grad-seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-4)
    return p


def main(argv: typing.Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except (WeakforgeError, OSError, ValueError, TypeError) as exc:
        print(f"weakforge: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
