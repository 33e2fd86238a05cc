"""``matchkit`` command line.

Exit codes: 0 success, 1 validation error (bad config, empty dataset, bad
file), 2 runtime failure. Files a failing command created are removed.
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..errors import MatchkitError, ValidationError
from ..formats import (atomic_write, format_keypoints, load_checkpoint, load_report, save_checkpoint, summary_from_rows,
                       write_descriptors, write_keypoints, write_labels, write_matches, format_summary)
from ..matcher import TrainingPair, train
from . import experiments as ex
from .config import RunConfig, derive_seed, load_config
from .data import PairItem, load_dataset, make_items, write_dataset

log = logging.getLogger("matchkit")

SUBCOMMANDS = ("gen", "detect", "describe", "match", "train", "finetune", "eval", "ensemble", "ablate", "report")


def _setup_logging():
    level = os.environ.get("MATCHKIT_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ValidationError(f"MATCHKIT_LOG must be one of {sorted(levels)}")
    logging.basicConfig(level=levels[level], stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        force=True)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--jobs", type=int, default=1)
    p = argparse.ArgumentParser(prog="matchkit", description="synthetic matcher benchmark harness")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "gen":
            sp.add_argument("--kind", choices=["homography", "posed"])
            sp.add_argument("--count", type=int)
        elif name == "ablate":
            sp.add_argument("--experiment", choices=["nearby", "cross_detector", "ensemble", "all"])
        elif name == "report":
            sp.add_argument("--input", required=True, help="run directory holding *_report.csv files")
        else:
            sp.add_argument("--input", required=True, help="dataset manifest")
            if name in ("match", "eval", "ensemble", "finetune"):
                sp.add_argument("--checkpoint", required=name in ("ensemble", "finetune"))
    return p


# -- helpers -------------------------------------------------------------------------------
def _items(path) -> list[PairItem]:
    items = load_dataset(path)
    if not items:
        raise ValidationError("empty dataset")
    return items


def _policy(cfg: RunConfig) -> ex.Policy:
    return ex.policy_for("clutter" if cfg.clutter else cfg.detector, cfg)


def _pmap(fn, args: list, jobs: int) -> list:
    if jobs <= 1 or len(args) < 2:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, args))


def _features_job(arg):
    cfg, item = arg
    bank = ex.FeatureBank(cfg)
    return bank.features(item, _policy(cfg))


def _pair_job(arg):
    cfg, item = arg
    return ex.FeatureBank(cfg).pair(item, _policy(cfg))


def _pairs(cfg, items, jobs) -> list[TrainingPair]:
    return _pmap(_pair_job, [(cfg, it) for it in items], jobs)


def _history_csv(hist: list[dict]) -> str:
    cols = ["epoch", "lr", "train_loss", "val_loss", "precision", "recall", "f1"]
    lines = [",".join(cols)]
    for rec in hist:
        lines.append(",".join(str(rec.get(c, "")) if c == "epoch" else
                              (f"{rec[c]:.9g}" if c in rec else "") for c in cols))
    return "\n".join(lines) + "\n"


# -- subcommands --------------------------------------------------------------------------------
def cmd_gen(cfg, args, out: Path):
    kind = args.kind or cfg.kind
    count = cfg.count if args.count is None else args.count
    if count < 1:
        raise ValidationError("empty dataset")
    write_dataset(out, make_items(kind, count, args.seed, cfg))


def cmd_detect(cfg, args, out: Path):
    items = _items(args.input)
    feats = _pmap(_features_job, [(cfg, it) for it in items], args.jobs)
    for it, (fa, fb) in zip(items, feats):
        write_keypoints(out / f"{it.pair_id}_a.kps", fa.keypoints, *fa.image_size)
        write_keypoints(out / f"{it.pair_id}_b.kps", fb.keypoints, *fb.image_size)


def cmd_describe(cfg, args, out: Path):
    items = _items(args.input)
    feats = _pmap(_features_job, [(cfg, it) for it in items], args.jobs)
    for it, pair in zip(items, feats):
        for side, f in zip("ab", pair):
            write_keypoints(out / f"{it.pair_id}_{side}.kps", f.keypoints, *f.image_size)
            desc = f.descriptors if f.binary else np.asarray(f.descriptors, dtype=np.float32).reshape(len(f), -1)
            write_descriptors(out / f"{it.pair_id}_{side}.mkds", desc, f.binary)


def _load_params(args):
    return load_checkpoint(args.checkpoint) if getattr(args, "checkpoint", None) else None


def cmd_match(cfg, args, out: Path):
    items = _items(args.input)
    params = _load_params(args)
    if params is None and cfg.matcher == "learned":
        cfg = cfg.with_(matcher="mnn")
    for pr in _pairs(cfg, items, args.jobs):
        write_matches(out / f"{pr.pair_id}.matches", ex.match_pair(pr, params, cfg))
        write_labels(out / f"{pr.pair_id}.labels", pr.labels)


def _train_common(cfg, args, out: Path, finetune: bool):
    items = _items(args.input)
    pairs = _pairs(cfg, items, args.jobs)
    arm = "finetune" if finetune else "train"
    s = derive_seed(args.seed, arm)
    tcfg = ex.train_config(cfg, s, finetune=finetune)
    tcfg = type(tcfg)(**{**tcfg.__dict__, "val_fraction": 0.1, "eval_every": 1})
    base = _load_params(args) if finetune else ex.fresh_params(cfg, s)
    params = train(pairs, tcfg, base)
    save_checkpoint(out / "model.mkpw", params)
    atomic_write(out / f"{arm}_history.csv", _history_csv(params.history))


def cmd_train(cfg, args, out):
    _train_common(cfg, args, out, finetune=False)


def cmd_finetune(cfg, args, out):
    """Multi-detector fine-tuning (corner + blob) with the configured descriptor source frozen."""
    items = _items(args.input)
    base = _load_params(args)
    bank = ex.FeatureBank(cfg)
    params = ex.finetune_detector_agnostic(cfg, args.seed, base, items, bank)
    save_checkpoint(out / "model.mkpw", params)
    atomic_write(out / "finetune_history.csv", _history_csv(params.history))


def cmd_eval(cfg, args, out: Path):
    items = _items(args.input)
    params = _load_params(args)
    if params is None and cfg.matcher == "learned":
        cfg = cfg.with_(matcher="mnn")
    pairs = _pairs(cfg, items, args.jobs)
    det = "clutter" if cfg.clutter else cfg.detector
    res = ex.evaluate_matches("eval", pairs, params, cfg, items,
                              {"detector": det, "descriptor": cfg.descriptor, "matcher": cfg.matcher})
    summary = {"precision": res.precision, "recall": res.recall, "f1": res.f1}
    if res.rows:
        summary.update(ex.write_report_files(out, "eval", res.rows, cfg.auc_thresholds))
    atomic_write(out / "eval_matches.csv", format_summary(summary))


def cmd_ensemble(cfg, args, out: Path):
    items = _items(args.input)
    ex.ablate_ensemble(cfg, _load_params(args), items, ex.FeatureBank(cfg), out)


def cmd_ablate(cfg, args, out: Path):
    which = args.experiment or cfg.experiment
    seed = args.seed
    bank = ex.FeatureBank(cfg)
    need_train = which in ("nearby", "cross_detector", "all")
    train_items = make_items("homography", cfg.train_pairs, derive_seed(seed, "data/train"), cfg, "tr") if need_train else []
    eval_items = make_items("homography", cfg.eval_pairs, derive_seed(seed, "data/eval"), cfg, "ev") if need_train else []
    if not (train_items or eval_items) and need_train:
        raise ValidationError("empty dataset")
    base = finetuned = None
    if which in ("nearby", "all"):
        res = ex.ablate_nearby_keypoints(cfg, seed, train_items, eval_items, bank, out)
        base = res.models["clean"]
        save_checkpoint(out / "nearby_clean.mkpw", res.models["clean"])
        save_checkpoint(out / "nearby_clutter.mkpw", res.models["clutter"])
    if which in ("cross_detector", "all"):
        if base is None:
            base = ex.train_arm(cfg, seed, "nearby/clean", [bank.pair(it, ex.policy_for("clean", cfg)) for it in train_items])
        res = ex.ablate_cross_detector(cfg, seed, base, train_items, eval_items, bank, out)
        finetuned = res.finetuned
        save_checkpoint(out / "cross_detector_finetuned.mkpw", finetuned)
    if which in ("ensemble", "all"):
        if finetuned is None:
            raise ValidationError("the ensemble ablation needs the fine-tuned model; run with experiment = all "
                                  "or use the ensemble subcommand with --checkpoint")
        posed = make_items("posed", cfg.eval_pairs, derive_seed(seed, "data/posed"), cfg, "po")
        ex.ablate_ensemble(cfg, finetuned, posed, ex.FeatureBank(cfg), out)


def cmd_report(cfg, args, out: Path):
    run = Path(args.input)
    if not run.is_dir():
        raise ValidationError(f"run directory {run} does not exist")
    reports = sorted(run.glob("*_report.csv"))
    if not reports:
        raise ValidationError("empty dataset: no *_report.csv files in run directory")
    thresholds = cfg.auc_thresholds
    header = ["report", "num_pairs"] + [f"auc@{t:g}" for t in thresholds] + ["mean_inliers"]
    lines = [",".join(header)]
    for rp in reports:
        stem = rp.name[: -len("_report.csv")]
        sp = rp.with_name(f"{stem}_summary.csv")
        rows, _ = load_report(rp, sp if sp.exists() else None)
        s = summary_from_rows(rows, thresholds)
        lines.append(",".join([stem, str(len(rows))] + [f"{s[f'auc@{t:g}']:.12g}" for t in thresholds]
                              + [f"{s['mean_inliers']:.12g}"]))
    atomic_write(out / "report.csv", "\n".join(lines) + "\n")


COMMANDS = {name: globals()[f"cmd_{name}"] for name in SUBCOMMANDS}


def _snapshot(out: Path) -> set[Path]:
    return set(out.rglob("*")) if out.exists() else set()


def _cleanup(out: Path, before: set[Path], existed: bool):
    if not existed:
        shutil.rmtree(out, ignore_errors=True)
        return
    for p in sorted(_snapshot(out) - before, key=lambda q: len(q.parts), reverse=True):
        if p.is_dir():
            shutil.rmtree(p, ignore_errors=True)
        else:
            p.unlink(missing_ok=True)


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    out = Path(args.out)
    existed = out.exists()
    before = _snapshot(out)
    try:
        _setup_logging()
        if args.jobs < 1:
            raise ValidationError("--jobs must be >= 1")
        cfg = load_config(args.config)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args, out)
        return 0
    except ValidationError as e:
        _cleanup(out, before, existed)
        print(f"matchkit {args.command}: error: {e}", file=sys.stderr)
        return 1
    except (MatchkitError, Exception) as e:  # noqa: BLE001
        _cleanup(out, before, existed)
        print(f"matchkit {args.command}: runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
