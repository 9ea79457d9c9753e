"""Command-line entry point: ``csdasa <subcommand> ...``.

Settings resolve as dataclass defaults < ``--config`` file < explicit flags.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from .container import load_checkpoint, load_dataset, save_checkpoint, write_dataset
from .harness import (
    VARIANTS,
    SynthConfig,
    TransferConfig,
    bench,
    evaluate,
    pretrain_source,
    read_config,
    stratified_split,
    synth_subjects,
    transfer_adapt,
    write_results,
)
from .imaging import ConfigError, DataError, ElectrodeMontage, ImageBuilder, SubjectDomain
from .model import ModelConfig

log = logging.getLogger("csdasa")

_SKIP = {"source_id", "target_id", "seed"}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_dataclass_flags(parser: argparse.ArgumentParser, cls, section: str) -> None:
    group = parser.add_argument_group(f"[{section}] settings")
    for f in fields(cls):
        if f.name in _SKIP:
            continue
        default = f.default
        if isinstance(default, tuple):
            group.add_argument(_flag(f.name), dest=f"{section}.{f.name}", type=int, nargs="+", default=None,
                               metavar="N", help=f"default: {' '.join(map(str, default))}")
        elif isinstance(default, bool):
            group.add_argument(_flag(f.name), dest=f"{section}.{f.name}", default=None,
                               type=lambda s: s.lower() in ("1", "true", "yes", "on"),
                               metavar="BOOL", help=f"default: {default}")
        else:
            kind = type(default) if isinstance(default, (int, float)) else str
            group.add_argument(_flag(f.name), dest=f"{section}.{f.name}", type=kind, default=None,
                               help=f"default: {default}")


def _settings(args, section: str, cls, **extra):
    values = {}
    if getattr(args, "config", None):
        values.update(read_config(args.config).get(section, {}))
    for f in fields(cls):
        v = getattr(args, f"{section}.{f.name}", None)
        if v is not None:
            values[f.name] = tuple(v) if isinstance(v, list) else v
    values.update({k: v for k, v in extra.items() if v is not None})
    if section == "model":
        # the first fully-connected width is fixed by the head conv output
        ck = values.get("classifier_kernels", ModelConfig.classifier_kernels)
        g = values.get("grid", ModelConfig.grid)
        hidden = tuple(values.get("fc_units", ModelConfig.fc_units))[1:]
        values["fc_units"] = (ck * g * g,) + hidden
    return cls(**values)


def _find(domains: list[SubjectDomain], sid: str) -> SubjectDomain:
    for d in domains:
        if d.subject_id == sid:
            return d
    raise DataError(f"subject {sid!r} not in dataset (have {[d.subject_id for d in domains]})")


# ---------------------------------------------------------------- subcommands


def cmd_build_images(args) -> int:
    raw = np.load(args.raw, allow_pickle=False)
    for key in ("trials", "labels", "subjects"):
        if key not in raw:
            raise DataError(f"{args.raw}: missing array {key!r} (need trials, labels, subjects)")
    trials, labels, subjects = raw["trials"], raw["labels"], raw["subjects"].astype(str)
    montage = ElectrodeMontage.load(args.montage)
    builder = ImageBuilder(montage, sample_rate=args.sample_rate, window_len=args.window_len,
                           n_frames=args.frames, size=args.grid)
    domains = []
    for sid in dict.fromkeys(subjects):
        idx = np.flatnonzero(subjects == sid)
        images = np.stack([builder(trials[i], int(labels[i])).frames for i in idx])
        domains.append(SubjectDomain(str(sid), images, labels[idx]))
        log.info("subject %s: %d trials", sid, len(idx))
    write_dataset(args.out, domains)
    print(f"wrote {sum(len(d) for d in domains)} samples from {len(domains)} subjects to {args.out}")
    return 0


def cmd_synth(args) -> int:
    mcfg = _settings(args, "model", ModelConfig)
    scfg = _settings(args, "synth", SynthConfig)
    domains = synth_subjects(scfg.n_subjects, scfg.n_per_subject, scfg.shift, args.seed, mcfg.frames,
                             mcfg.grid, mcfg.in_channels, mcfg.n_classes, scfg.noise)
    write_dataset(args.out, domains, mcfg.n_classes)
    print(f"wrote {scfg.n_subjects} x {scfg.n_per_subject} synthetic samples to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    mcfg = _settings(args, "model", ModelConfig)
    tcfg = _settings(args, "transfer", TransferConfig, seed=args.seed)
    src = _find(load_dataset(args.dataset), args.source)
    train, _ = stratified_split(src, tcfg.test_fraction, tcfg.seed)
    res = pretrain_source(train, tcfg, mcfg, log.info)
    meta = {"stage": "pretrained", "source_id": src.subject_id, "seed": tcfg.seed,
            "train_accuracy": res.train_accuracy, "val_accuracy": res.val_accuracy,
            "epochs_run": res.epochs_run, "final_ce": res.final_loss}
    save_checkpoint(args.out, res.model, meta)
    print(f"source {src.subject_id}: train {res.train_accuracy:.2f}%  val {res.val_accuracy:.2f}%  "
          f"epochs {res.epochs_run}  -> {args.out}")
    return 0


def cmd_transfer(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    tcfg = _settings(args, "transfer", TransferConfig, seed=args.seed)
    domains = load_dataset(args.dataset)
    src = _find(domains, args.source or meta.get("source_id", ""))
    tgt = _find(domains, args.target)
    src_train, _ = stratified_split(src, tcfg.test_fraction, tcfg.seed)
    tgt_train, _ = stratified_split(tgt, tcfg.test_fraction, tcfg.seed)
    res = transfer_adapt(model, src_train, tgt_train, tcfg, log.info)
    for e, (ce, mmd) in enumerate(zip(res.ce, res.mmd)):
        print(f"epoch {e}: ce={ce:.6f} mmd={mmd:.6f}")
    meta = dict(meta, stage="adapted", target_id=tgt.subject_id, final_ce=res.ce[-1],
                final_mmd=res.mmd[-1], epochs_run=res.epochs_run)
    save_checkpoint(args.out, res.model, meta)
    print(f"adapted {src.subject_id} -> {tgt.subject_id} -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    dom = _find(load_dataset(args.dataset), args.subject)
    model, _ = load_checkpoint(args.checkpoint)
    if args.split != "all":
        train, test = stratified_split(dom, args.test_fraction, args.seed)
        dom = test if args.split == "test" else train
    acc = evaluate(model, dom, args.branch)
    print(f"{dom.subject_id} {args.split} accuracy: {acc:.2f}% over {dom.n_labeled} samples")
    return 0


def cmd_bench(args) -> int:
    mcfg = _settings(args, "model", ModelConfig)
    scfg = _settings(args, "synth", SynthConfig)
    tcfg = _settings(args, "transfer", TransferConfig)
    fixed = load_dataset(args.dataset) if args.dataset else None
    started = time.perf_counter()
    seeds = range(args.seed, args.seed + args.repeats)
    results = bench(seeds, tcfg, mcfg, scfg, fixed, args.variants or VARIANTS, log.info)
    write_results(args.out, results)
    print((Path(args.out) / "table.txt").read_text(), end="")
    log.info("bench finished in %.1f s", time.perf_counter() - started)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csdasa", description="Cross-subject adaptation for multi-frame EEG images.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-images", help="raw trials (.npz) -> dataset container")
    b.add_argument("--raw", required=True, help="npz with trials[N, electrodes, samples], labels[N], subjects[N]")
    b.add_argument("--montage", required=True, help="text file of 'name x y z' lines")
    b.add_argument("--out", required=True)
    b.add_argument("--sample-rate", type=float, default=128.0)
    b.add_argument("--window-len", type=int, default=128)
    b.add_argument("--frames", type=int, default=7)
    b.add_argument("--grid", type=int, default=32)
    b.set_defaults(func=cmd_build_images)

    s = sub.add_parser("synth", help="write a synthetic multi-subject dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config")
    _add_dataclass_flags(s, SynthConfig, "synth")
    _add_dataclass_flags(s, ModelConfig, "model")
    s.set_defaults(func=cmd_synth)

    pt = sub.add_parser("pretrain", help="train the full network on one source subject")
    pt.add_argument("--dataset", required=True)
    pt.add_argument("--source", required=True)
    pt.add_argument("--out", required=True)
    pt.add_argument("--seed", type=int)
    pt.add_argument("--config")
    _add_dataclass_flags(pt, TransferConfig, "transfer")
    _add_dataclass_flags(pt, ModelConfig, "model")
    pt.set_defaults(func=cmd_pretrain)

    tr = sub.add_parser("transfer", help="adapt a pretrained checkpoint to a target subject")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--source", help="defaults to the checkpoint's source subject")
    tr.add_argument("--target", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--config")
    _add_dataclass_flags(tr, TransferConfig, "transfer")
    tr.set_defaults(func=cmd_transfer)

    ev = sub.add_parser("evaluate", help="accuracy of a checkpoint on one subject")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--subject", required=True)
    ev.add_argument("--split", choices=("test", "train", "all"), default="test")
    ev.add_argument("--branch", choices=("tgt", "src"), default="tgt")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--test-fraction", type=float, default=0.2)
    ev.set_defaults(func=cmd_evaluate)

    be = sub.add_parser("bench", help="one-to-one sweep plus baselines; writes CSVs and a text table")
    be.add_argument("--seed", type=int, required=True)
    be.add_argument("--repeats", type=int, default=1, help="seeds seed .. seed+repeats-1")
    be.add_argument("--dataset", help="use this dataset instead of regenerating synthetic subjects per seed")
    be.add_argument("--variants", nargs="+", choices=VARIANTS)
    be.add_argument("--out", required=True)
    be.add_argument("--config")
    _add_dataclass_flags(be, TransferConfig, "transfer")
    _add_dataclass_flags(be, ModelConfig, "model")
    _add_dataclass_flags(be, SynthConfig, "synth")
    be.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
