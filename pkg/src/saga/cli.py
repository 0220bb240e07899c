"""Command-line pipeline: gen-data, pretrain, adapt, eval, tsig.

Every subcommand writes ``config.json`` into its output directory before
doing any work. Timestamps and wall-clock figures go only to ``run.log`` so
that repeated runs produce byte-identical outputs otherwise.

Exit codes: 0 success, 2 usage/config, 3 IO/format, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .embeddings import (DatasetIndex, EmbeddingStore, SyntheticSpec, default_spec, split_dataset, synth_generate,
                         write_embedding_file)
from .errors import ConfigError, FormatError, NumericError, SagaError
from .labels import AttributionLevel, load_manifest
from .losses import DEFAULT_ALPHA, DEFAULT_LAMBDA
from .model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .tensor import Prng, set_precision
from .training import (LOSSES, Metrics, TrainConfig, adapt_stage2, evaluate, evaluate_projected, export_embeddings,
                       pretrain_stage1)
from .training.optim import AdamState
from .tsig import class_signatures, export_heatmap, unseen_signature_probe

log = logging.getLogger("saga")

DATA_FILE = "data.semb"
MANIFEST_FILE = "manifest.json"
SPLITS_FILE = "splits.json"
SPEC_FILE = "spec.json"


class UsageError(ConfigError):
    pass


# ---------------------------------------------------------------- helpers

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out: Path, args) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n",
                                     encoding="utf-8")


def _attach_log(out: Path) -> logging.Handler:
    handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("saga").addHandler(handler)
    logging.getLogger("saga").setLevel(logging.INFO)
    return handler


def _floats(text: str, n: int | None = None, flag: str = "") -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise UsageError(f"{flag}: expected {n} values, got {len(vals)}")
    return vals


def _load_data(data_dir) -> DatasetIndex:
    d = Path(data_dir)
    for name in (DATA_FILE, MANIFEST_FILE, SPLITS_FILE):
        if not (d / name).exists():
            raise FileNotFoundError(f"{d / name} not found (run gen-data first)")
    store = EmbeddingStore.load(d / DATA_FILE)
    manifest = load_manifest(d / MANIFEST_FILE)
    return DatasetIndex.build(store, manifest).load_splits(d / SPLITS_FILE)


def _model_config(args, n_classes: int, dims) -> ModelConfig:
    L, l_t, d_t = dims
    cfg = ModelConfig(d_t=d_t, l_t=l_t, L_max=max(args.L_max, L), n_heads=args.heads, depth=args.depth,
                      mlp_hidden=args.mlp_hidden if args.mlp_hidden else 2 * d_t,
                      dropout_rate=args.dropout, n_classes=n_classes)
    cfg.validate()
    return cfg


def _write_metrics(out: Path, metrics: dict[str, Metrics], primary: str) -> None:
    (out / "metrics.json").write_text(
        json.dumps({k: m.to_dict() for k, m in metrics.items()}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    metrics[primary].write_confusion_csv(out / "confusion.csv")
    metrics[primary].write_per_class_csv(out / "metrics.csv")


def _opt_state(model, state: AdamState | None):
    if state is None:
        return None
    names = [n for n, _ in model.named_parameters()]
    if len(state.m) != len(names):
        return None
    return state.to_named(names)


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(args) -> int:
    out = _out_dir(args)
    _echo_config(out, args)
    for flag, value, low in (("--L", args.L, 2), ("--l-t", args.l_t, 1), ("--d-t", args.d_t, 8),
                             ("--videos-per-class", args.videos_per_class, 1), ("--classes", args.classes, 2)):
        if value < low:
            raise UsageError(f"{flag} must be >= {low}, got {value}")
    if args.spec:
        spec = SyntheticSpec.from_dict(json.loads(Path(args.spec).read_text(encoding="utf-8")))
    else:
        if args.overlap_pair.lower() == "none":
            pair = None
        else:
            vals = _floats(args.overlap_pair, 2, "--overlap-pair")
            pair = (int(vals[0]), int(vals[1]))
        spec = default_spec(videos_per_class=args.videos_per_class, seed=args.seed, n_classes=args.classes,
                            overlap_pair=pair, L=args.L, l_t=args.l_t, d_t=args.d_t,
                            held_out_videos=args.held_out_videos)
    if args.no_held_out:
        spec = replace(spec, held_out=())
    fractions = _floats(args.split, 3, "--split")
    store, manifest = synth_generate(spec)
    index = split_dataset(DatasetIndex.build(store, manifest), fractions, args.seed)
    write_embedding_file(out / DATA_FILE, store.video_ids, store.generator_ids, store.frames)
    manifest.save(out / MANIFEST_FILE)
    index.save_index(out / SPLITS_FILE, {"seed": args.seed, "fractions": fractions})
    (out / SPEC_FILE).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    counts: dict[str, int] = {}
    for g in store.generator_ids:
        counts[g] = counts.get(g, 0) + 1
    for g, c in counts.items():
        tag = "" if g in manifest else "  (held out)"
        print(f"{g}\t{c}{tag}")
    return 0


def cmd_pretrain(args) -> int:
    out = _out_dir(args)
    _echo_config(out, args)
    index = _load_data(args.data)
    train, test = index.split("TRAIN"), index.split("TEST")
    config = _model_config(args, 2, index.store.dims)
    model = build_model(config, Prng(args.seed))
    tc = TrainConfig.stage1(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
                            real_fraction=args.real_fraction, alpha=args.alpha, lam=args.lam, seed=args.seed)
    val = index.split("VAL") if args.eval_every else None
    tc = replace(tc, eval_every=args.eval_every)
    model, report = pretrain_stage1(model, train, tc, val_index=val if val is not None and len(val) else None)
    (out / "checkpoints").mkdir(exist_ok=True)
    save_checkpoint(model, out / "checkpoints" / "stage1.ckpt")
    metrics = {"BIN": evaluate(model, test, "BIN")} if len(test) else {}
    report.metrics = {k: m.to_dict() for k, m in metrics.items()}
    report.save(out / "report.json")
    if metrics:
        _write_metrics(out, metrics, "BIN")
    log.info("stage1 finished in %.1fs", report.wall_clock)
    print(f"stage1: {len(report.epoch_losses)} epochs, BIN accuracy "
          f"{metrics['BIN'].accuracy:.4f}" if metrics else "stage1: done")
    return 0


def cmd_adapt(args) -> int:
    out = _out_dir(args)
    _echo_config(out, args)
    if bool(args.scratch) == bool(args.from_checkpoint):
        raise UsageError("exactly one of --from-checkpoint or --scratch is required")
    index = _load_data(args.data)
    level = AttributionLevel.parse(args.level)
    train, test = index.split("TRAIN"), index.split("TEST")
    if args.scratch:
        base = build_model(_model_config(args, 2, index.store.dims), Prng(args.seed))
    else:
        base, _ = load_checkpoint(args.from_checkpoint)
    freeze = tuple(f for f in args.freeze.split(",") if f) if args.freeze else ()
    tc = TrainConfig.stage2(epochs=args.epochs, lr=args.lr, P=args.P, K=args.K, loss=args.loss, alpha=args.alpha,
                            lam=args.lam, normalize=args.normalize, fraction=args.fraction, floor=args.floor,
                            seed=args.seed, freeze=freeze)
    model, report = adapt_stage2(base, train, level, tc, allow_scratch=args.scratch)
    (out / "checkpoints").mkdir(exist_ok=True)
    save_checkpoint(model, out / "checkpoints" / "stage2.ckpt")
    metrics = {}
    if len(test):
        metrics[level.name] = evaluate(model, test, level)
        if level == AttributionLevel.GEN:
            for coarse in ("TASK", "BIN"):
                metrics[f"{coarse}<-GEN"] = evaluate_projected(model, test, coarse)
    report.metrics = {k: m.to_dict() for k, m in metrics.items()}
    report.save(out / "report.json")
    if metrics:
        _write_metrics(out, metrics, level.name)
    if args.export_embeddings:
        export_embeddings(model, test, out / "embeddings.csv")
    log.info("stage2 finished in %.1fs", report.wall_clock)
    print(f"stage2 ({args.loss}, level {level.name}): subset {sum(report.subset_sizes.values())} items, "
          + (f"accuracy {metrics[level.name].accuracy:.4f}" if metrics else "no test split"))
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    _echo_config(out, args)
    index = _load_data(args.data).split(args.split)
    model, _ = load_checkpoint(args.checkpoint)
    level = AttributionLevel.parse(args.level)
    if args.project_from:
        if AttributionLevel.parse(args.project_from) != AttributionLevel.GEN:
            raise UsageError("--project-from only supports GEN")
        metrics = {level.name: evaluate_projected(model, index, level), "GEN": evaluate(model, index, "GEN")}
    else:
        metrics = {level.name: evaluate(model, index, level)}
    _write_metrics(out, metrics, level.name)
    m = metrics[level.name]
    print(f"{level.name}: accuracy {m.accuracy:.4f} precision {m.precision:.4f} recall {m.recall:.4f} "
          f"({m.total} items)")
    return 0


def cmd_tsig(args) -> int:
    out = _out_dir(args)
    _echo_config(out, args)
    full = _load_data(args.data)
    index = full.split(args.split)
    model, _ = load_checkpoint(args.checkpoint)
    classes = None if args.classes == "all" else [c for c in args.classes.split(",") if c]
    tdir = out / "tsig"
    tdir.mkdir(exist_ok=True)
    sigs, report = class_signatures(model, index, classes, None, args.seed)
    for name, sig in sigs.items():
        export_heatmap(sig, tdir / _safe(name))
    if args.per_head:
        for h in range(model.config.n_heads):
            head_sigs, _ = class_signatures(model, index, classes, h, args.seed)
            for name, sig in head_sigs.items():
                export_heatmap(sig, tdir / f"{_safe(name)}.h{h}")
    if args.probe_unseen:
        store = full.store
        rows = [i for i, g in enumerate(store.generator_ids) if g == args.probe_unseen]
        if not rows:
            raise UsageError(f"--probe-unseen: no videos of generator {args.probe_unseen!r} in the data file")
        if args.probe_unseen in full.manifest:
            log.warning("probe class %s is part of the training manifest", args.probe_unseen)
        sig, probe = unseen_signature_probe(model, store.frames[rows], sigs, args.probe_unseen)
        probe["below_min_intra"] = bool(probe["max_similarity"] < report.min_intra)
        report.probe = probe
        export_heatmap(sig, tdir / f"probe_{_safe(args.probe_unseen)}")
    report.save(tdir / "report.json")
    print(f"tsig: {len(sigs)} classes, min intra {report.min_intra:.4f}, max inter {report.max_inter:.4f}")
    return 0


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


# ---------------------------------------------------------------- parser

def _env_seed() -> int:
    raw = os.environ.get("SAGA_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"SAGA_SEED must be an integer, got {raw!r}") from None


def _add_model_flags(p):
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--depth", type=int, default=5, help="temporal blocks = depth + 1")
    p.add_argument("--mlp-hidden", dest="mlp_hidden", type=int, default=0, help="0 means 2 * d_t")
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--L-max", dest="L_max", type=int, default=64)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="defaults to $SAGA_SEED, then 0")
    common.add_argument("--precision", choices=("f32", "f64"), default="f32")
    common.add_argument("--out", default="out", help="output directory")

    parser = argparse.ArgumentParser(prog="saga", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic embedding dataset")
    p.add_argument("--videos-per-class", dest="videos_per_class", type=int, default=2000)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--overlap-pair", dest="overlap_pair", default="4,5", help="'a,b' or 'none'")
    p.add_argument("--L", type=int, default=8)
    p.add_argument("--l-t", dest="l_t", type=int, default=16)
    p.add_argument("--d-t", dest="d_t", type=int, default=64)
    p.add_argument("--held-out-videos", dest="held_out_videos", type=int, default=200)
    p.add_argument("--no-held-out", dest="no_held_out", action="store_true")
    p.add_argument("--split", default="0.8,0.1,0.1", help="train,val,test fractions")
    p.add_argument("--spec", default=None, help="JSON SyntheticSpec overriding the class flags")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", parents=[common], help="stage 1: binary real/fake pretraining")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=64)
    p.add_argument("--real-fraction", dest="real_fraction", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=0)
    _add_model_flags(p)
    p.set_defaults(func=cmd_pretrain)

    s2 = TrainConfig.stage2()
    p = sub.add_parser("adapt", parents=[common], help="stage 2: few-label multi-class adaptation")
    p.add_argument("--data", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--from-checkpoint", dest="from_checkpoint", default=None)
    src.add_argument("--scratch", action="store_true")
    p.add_argument("--level", default="GEN")
    p.add_argument("--fraction", type=float, default=0.005)
    p.add_argument("--floor", type=int, default=s2.floor)
    p.add_argument("--loss", choices=LOSSES, default="ce+hnm")
    p.add_argument("--epochs", type=int, default=s2.epochs)
    p.add_argument("--lr", type=float, default=s2.lr)
    p.add_argument("--P", type=int, default=s2.P)
    p.add_argument("--K", type=int, default=s2.K)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=s2.normalize)
    p.add_argument("--freeze", default="", help="comma-separated parameter prefixes, e.g. spatial")
    p.add_argument("--export-embeddings", dest="export_embeddings", action="store_true")
    _add_model_flags(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint at one attribution level")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--level", default="GEN")
    p.add_argument("--project-from", dest="project_from", default=None)
    p.add_argument("--split", default="TEST", choices=("TRAIN", "VAL", "TEST"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tsig", parents=[common], help="temporal attention signatures and heatmaps")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--classes", default="all", help="'all' or comma-separated generator ids")
    p.add_argument("--per-head", dest="per_head", action="store_true")
    p.add_argument("--probe-unseen", dest="probe_unseen", default=None)
    p.add_argument("--split", default="VAL", choices=("TRAIN", "VAL", "TEST"))
    p.set_defaults(func=cmd_tsig)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = None
    try:
        if args.seed is None:
            args.seed = _env_seed()
        set_precision(args.precision)
        handler = _attach_log(_out_dir(args))
        t0 = time.perf_counter()
        log.info("command %s seed %d precision %s", args.command, args.seed, args.precision)
        code = args.func(args)
        log.info("command %s finished in %.2fs", args.command, time.perf_counter() - t0)
        return code
    except SagaError as exc:
        print(f"saga {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code if exc.exit_code != 1 else 2
    except (OSError, UnicodeDecodeError) as exc:
        print(f"saga {args.command}: io error: {exc}", file=sys.stderr)
        return FormatError.exit_code
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"saga {args.command}: numeric error: {exc}", file=sys.stderr)
        return NumericError.exit_code
    finally:
        set_precision("f32")
        if handler is not None:
            logging.getLogger("saga").removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
