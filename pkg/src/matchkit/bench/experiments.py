"""Ablation drivers: nearby-keypoint clutter, cross-detector transfer, ensembles."""

from __future__ import annotations

import csv
import io
import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from ..baseline_match import mutual_nn, ratio_test
from ..detect import DetectorConfig
from ..ensemble import EnsembleConfig, merge_features
from ..errors import ValidationError
from ..features import FeatureSet, MatchSet
from ..formats import atomic_write, format_report, format_summary, parse_report, summary_from_rows
from ..gtlabel import labels_for_pair
from ..matcher import (MatcherParams, MatchScore, TrainConfig, TrainingPair, extract_matches, finetune_multi_detector,
                       forward, init_matcher, score_matches, train)
from ..pipeline import DescriptorSource, build_features
from ..robustpose import RansacConfig, evaluate_pair
from ..synthgen import inject_clutter
from . import svg
from .config import RunConfig, derive_seed
from .data import PairItem

log = logging.getLogger(__name__)


# -- policies ----------------------------------------------------------------------------
@dataclass(frozen=True)
class Policy:
    """A detector configuration plus optional clutter injection."""

    name: str
    detector: DetectorConfig
    clutter_mode: str | None = None
    clutter_magnitude: float = 0.0

    def clutter_fn(self, seed: int) -> Callable | None:
        if self.clutter_mode is None:
            return None
        return lambda kps: inject_clutter(kps, self.clutter_mode, self.clutter_magnitude, seed)


def detector_for(name: str, cfg: RunConfig, budget: int | None = None) -> DetectorConfig:
    k = budget or cfg.max_keypoints
    base = dict(single_scale=True, nms_radius=cfg.nms_radius, max_keypoints=k, min_side=cfg.min_side, name=name)
    if name == "corner":
        return DetectorConfig("corner", **base)
    if name == "blob":
        return DetectorConfig("blob", **base)
    if name == "blob_wide":
        # held-out policy: a coarser DoG ladder than the training blob detector
        return DetectorConfig("blob", blob_sigma0=2.4, blob_intervals=2, **base)
    raise ValidationError(f"unknown detector {name!r}")


def policy_for(name: str, cfg: RunConfig) -> Policy:
    if name == "clean":
        return Policy("clean", detector_for("corner", cfg))
    if name == "clutter":
        det = DetectorConfig("corner", num_scales=cfg.num_scales, single_scale=False, nms_radius=0.0,
                             max_keypoints=cfg.max_keypoints, min_side=cfg.clutter_min_side, name="corner")
        return Policy("clutter", det, cfg.clutter_mode, cfg.clutter_magnitude)
    return Policy(name, detector_for(name, cfg))


def descriptor_source(cfg: RunConfig) -> DescriptorSource:
    return DescriptorSource(cfg.descriptor, cfg.stride, cfg.patch_size)


# -- feature bank --------------------------------------------------------------------------
class FeatureBank:
    """Caches labelled pairs per (pair, policy) and the most recent dense maps.

    A 256x256 dense map is 8 MB, so only ``max_maps`` pairs of maps are kept;
    recomputing one is deterministic.
    """

    def __init__(self, cfg: RunConfig, max_maps: int = 64):
        self.cfg = cfg
        self.source = descriptor_source(cfg)
        self.max_maps = max_maps
        self._maps: OrderedDict = OrderedDict()
        self._pairs: dict = {}

    def maps(self, item: PairItem):
        if item.pair_id in self._maps:
            self._maps.move_to_end(item.pair_id)
        else:
            self._maps[item.pair_id] = (self.source.dense_map(item.image_a), self.source.dense_map(item.image_b))
            while len(self._maps) > self.max_maps:
                self._maps.popitem(last=False)
        return self._maps[item.pair_id]

    def features(self, item: PairItem, policy: Policy) -> tuple[FeatureSet, FeatureSet]:
        dm = self.maps(item)
        fa = build_features(item.image_a, policy.detector, self.source, dm[0], policy.clutter_fn(item.seed * 2))
        fb = build_features(item.image_b, policy.detector, self.source, dm[1], policy.clutter_fn(item.seed * 2 + 1))
        return fa, fb

    def pair(self, item: PairItem, policy: Policy) -> TrainingPair:
        # the name is only a label: clean and corner share one entry
        key = (item.pair_id, replace(policy, name=""))
        if key not in self._pairs:
            fa, fb = self.features(item, policy)
            if len(fa) == 0 or len(fb) == 0:
                raise ValidationError(f"pair {item.pair_id}: no describable keypoints")
            lab = labels_for_pair(fa, fb, item.supervision(self.cfg.match_threshold))
            self._pairs[key] = TrainingPair(fa, fb, lab, item.pair_id)
        return self._pairs[key]

    def ensemble_pair(self, item: PairItem, ens: EnsembleConfig) -> TrainingPair:
        dm = self.maps(item)
        fa = merge_features(item.image_a, ens, dm[0])
        fb = merge_features(item.image_b, ens, dm[1])
        lab = labels_for_pair(fa, fb, item.supervision(self.cfg.match_threshold))
        return TrainingPair(fa, fb, lab, item.pair_id)


# -- training / evaluation helpers ---------------------------------------------------------------
def train_config(cfg: RunConfig, seed: int, finetune: bool = False) -> TrainConfig:
    if finetune:
        return TrainConfig(epochs=cfg.finetune_epochs, lr_initial=cfg.finetune_lr_initial,
                           lr_final=cfg.finetune_lr_final, decay_epochs=max(cfg.finetune_epochs, 1),
                           batch_size=cfg.batch_size, confidence=cfg.confidence, grad_clip=cfg.grad_clip,
                           val_fraction=0.0, eval_every=10**9, seed=seed)
    return TrainConfig(epochs=cfg.epochs, lr_initial=cfg.lr_initial, lr_final=cfg.lr_final,
                       decay_epochs=cfg.decay_epochs, batch_size=cfg.batch_size, confidence=cfg.confidence,
                       grad_clip=cfg.grad_clip, val_fraction=0.0, eval_every=10**9, seed=seed)


def fresh_params(cfg: RunConfig, seed: int) -> MatcherParams:
    src = descriptor_source(cfg)
    return init_matcher({src.source_id: src.spec()}, d=cfg.model_dim, num_layers=cfg.num_layers,
                        num_heads=cfg.num_heads, rope_scale=cfg.rope_scale, seed=seed)


def train_arm(cfg: RunConfig, seed: int, arm: str, pairs: list[TrainingPair]) -> MatcherParams:
    s = derive_seed(seed, arm)
    t0 = time.perf_counter()
    params = train(pairs, train_config(cfg, s), fresh_params(cfg, s), val=[])
    log.info("trained arm %s on %d pairs in %.1fs", arm, len(pairs), time.perf_counter() - t0)
    return params


def match_pair(pair: TrainingPair, params: MatcherParams | None, cfg: RunConfig) -> MatchSet:
    if cfg.matcher == "mnn" or params is None:
        return mutual_nn(pair.feat_a.descriptors, pair.feat_b.descriptors, _metric(pair.feat_a))
    if cfg.matcher == "ratio":
        return ratio_test(pair.feat_a.descriptors, pair.feat_b.descriptors, cfg.ratio, _metric(pair.feat_a))
    return extract_matches(forward(pair.feat_a, pair.feat_b, params), cfg.confidence)


def _metric(feat: FeatureSet) -> str:
    return "hamming" if feat.binary else "euclidean"


@dataclass
class ArmResult:
    name: str
    total: MatchScore
    per_pair_f1: list[float] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)

    @property
    def f1(self) -> float:
        return self.total.f1

    @property
    def precision(self) -> float:
        return self.total.precision

    @property
    def recall(self) -> float:
        return self.total.recall


def evaluate_matches(name: str, pairs: list[TrainingPair], params: MatcherParams | None, cfg: RunConfig,
                     items: list[PairItem] | None = None, labels: dict | None = None) -> ArmResult:
    """Match F1 against GT labels; with posed ``items`` also pose rows for the report."""
    total = MatchScore(0, 0, 0)
    per_pair, rows = [], []
    rcfg = RansacConfig(max_iterations=cfg.ransac_iterations, threshold_grid=tuple(cfg.ransac_thresholds))
    for k, pr in enumerate(pairs):
        ms = match_pair(pr, params, cfg)
        sc = score_matches(ms, pr.labels)
        total = total + sc
        per_pair.append(sc.f1)
        if items is not None and items[k].kind == "posed":
            it = items[k]
            ev = evaluate_pair(ms, pr.feat_a.keypoints, pr.feat_b.keypoints, it.pose, it.k_a, it.k_b,
                               replace(rcfg, seed=it.seed))
            rows.append({"pair_id": pr.pair_id, "detector": (labels or {}).get("detector", ""),
                         "descriptor": (labels or {}).get("descriptor", cfg.descriptor),
                         "matcher": (labels or {}).get("matcher", cfg.matcher), "num_matches": len(ms),
                         "num_inliers": ev.num_inliers, "rot_deg": ev.error.rot_deg,
                         "trans_deg": ev.error.trans_deg, "max_deg": ev.error.max_deg})
    return ArmResult(name, total, per_pair, rows)


def _table(header: list[str], rows: list[list]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in r])
    return out.getvalue()


def write_report_files(out_dir: Path, stem: str, rows: list[dict], thresholds) -> dict:
    """Per-pair CSV plus a summary whose AUCs are computed from the CSV as written."""
    text = format_report(rows)
    summary = summary_from_rows(parse_report(text), thresholds)
    atomic_write(out_dir / f"{stem}_report.csv", text)
    atomic_write(out_dir / f"{stem}_summary.csv", format_summary(summary))
    return summary


# -- ablation 1: nearby keypoints ------------------------------------------------------------
@dataclass
class NearbyResult:
    grid: dict[tuple[str, str], ArmResult]
    models: dict[str, MatcherParams]
    nearby_pairs: dict[str, float]

    def f1(self, train_cond: str, eval_cond: str) -> float:
        return self.grid[(train_cond, eval_cond)].f1


def ablate_nearby_keypoints(cfg: RunConfig, seed: int, train_items: list[PairItem], eval_items: list[PairItem],
                            bank: FeatureBank | None = None, out_dir: Path | None = None,
                            models: dict[str, MatcherParams] | None = None) -> NearbyResult:
    """2x2 grid: {clean, clutter}-trained matcher on {clean, clutter} eval features."""
    bank = bank or FeatureBank(cfg)
    conds = ("clean", "clutter")
    pols = {c: policy_for(c, cfg) for c in conds}
    models = dict(models or {})
    for c in conds:
        if c not in models:
            models[c] = train_arm(cfg, seed, f"nearby/{c}", [bank.pair(it, pols[c]) for it in train_items])
    grid = {}
    nearby = {}
    for ec in conds:
        pairs = [bank.pair(it, pols[ec]) for it in eval_items]
        nearby[ec] = float(np.mean([p.labels.diagnostics["nearby_pairs_a"] for p in pairs])) if pairs else 0.0
        for tc in conds:
            grid[(tc, ec)] = evaluate_matches(f"{tc}->{ec}", pairs, models[tc], cfg)
    res = NearbyResult(grid, models, nearby)
    if out_dir is not None:
        rows = [[tc, ec, r.precision, r.recall, r.f1, r.total.num_pred, r.total.num_gt]
                for (tc, ec), r in grid.items()]
        atomic_write(out_dir / "nearby_table.csv",
                     _table(["train_condition", "eval_condition", "precision", "recall", "f1", "num_pred", "num_gt"], rows))
        mat = np.array([[grid[(tc, ec)].f1 for ec in conds] for tc in conds])
        atomic_write(out_dir / "nearby_f1.svg",
                     svg.heatmap(mat, [f"train {c}" for c in conds], [f"eval {c}" for c in conds], "match F1"))
    return res


# -- ablation 2: cross-detector transfer -------------------------------------------------------
EVAL_DETECTORS = ("corner", "blob", "blob_wide")
FINETUNE_DETECTORS = ("corner", "blob")


@dataclass
class CrossDetectorResult:
    matrix: dict[tuple[str, str], ArmResult]
    base: MatcherParams
    finetuned: MatcherParams

    def f1(self, model: str, det: str) -> float:
        return self.matrix[(model, det)].f1


def finetune_detector_agnostic(cfg: RunConfig, seed: int, base: MatcherParams, train_items: list[PairItem],
                               bank: FeatureBank, detectors=FINETUNE_DETECTORS) -> MatcherParams:
    pols = [policy_for(d, cfg) for d in detectors]
    s = derive_seed(seed, "cross_detector/finetune")
    t0 = time.perf_counter()
    out = finetune_multi_detector(base, pols, lambda i, pol: bank.pair(train_items[i], pol), len(train_items),
                                  train_config(cfg, s, finetune=True))
    log.info("fine-tuned on %s in %.1fs", "+".join(detectors), time.perf_counter() - t0)
    return out


def ablate_cross_detector(cfg: RunConfig, seed: int, base: MatcherParams, train_items: list[PairItem],
                          eval_items: list[PairItem], bank: FeatureBank | None = None, out_dir: Path | None = None,
                          finetuned: MatcherParams | None = None) -> CrossDetectorResult:
    """Generalisation matrix of the corner specialist and the multi-detector fine-tune."""
    bank = bank or FeatureBank(cfg)
    if finetuned is None:
        finetuned = finetune_detector_agnostic(cfg, seed, base, train_items, bank)
    models = {"corner": base, "corner+blob": finetuned}
    matrix = {}
    for det in EVAL_DETECTORS:
        pol = policy_for(det, cfg)
        pairs = [bank.pair(it, pol) for it in eval_items]
        for name, p in models.items():
            matrix[(name, det)] = evaluate_matches(f"{name}@{det}", pairs, p, cfg)
    res = CrossDetectorResult(matrix, base, finetuned)
    if out_dir is not None:
        rows = [[m, d, r.precision, r.recall, r.f1] for (m, d), r in matrix.items()]
        atomic_write(out_dir / "cross_detector_table.csv",
                     _table(["trained_on", "eval_detector", "precision", "recall", "f1"], rows))
        mat = np.array([[matrix[(m, d)].f1 for d in EVAL_DETECTORS] for m in models])
        atomic_write(out_dir / "cross_detector_matrix.svg",
                     svg.heatmap(mat, [f"trained {m}" for m in models], list(EVAL_DETECTORS), "match F1"))
    return res


# -- ablation 3: ensembles ---------------------------------------------------------------------------
@dataclass
class EnsembleResult:
    cells: dict[tuple[str, int], ArmResult]
    summaries: dict[tuple[str, int], dict]

    def f1(self, config: str, budget: int) -> float:
        return self.cells[(config, budget)].f1


ENSEMBLE_CONFIGS = ("corner", "blob", "corner+blob")


def ablate_ensemble(cfg: RunConfig, params: MatcherParams, eval_items: list[PairItem], bank: FeatureBank | None = None,
                    out_dir: Path | None = None) -> EnsembleResult:
    """Single detectors at each total budget vs a two-detector ensemble splitting it."""
    bank = bank or FeatureBank(cfg)
    cells, summaries = {}, {}
    for budget in cfg.budgets:
        for name in ENSEMBLE_CONFIGS:
            if name == "corner+blob":
                ens = EnsembleConfig((detector_for("corner", cfg), detector_for("blob", cfg)),
                                     max(budget // 2, 1), cfg.cross_nms_radius, bank.source)
                pairs = [bank.ensemble_pair(it, ens) for it in eval_items]
            else:
                pol = policy_for(name, cfg)
                pol = replace(pol, detector=replace(pol.detector, max_keypoints=budget))
                pairs = [bank.pair(it, pol) for it in eval_items]
            r = evaluate_matches(f"{name}@{budget}", pairs, params, cfg, eval_items,
                                 {"detector": name, "descriptor": cfg.descriptor, "matcher": cfg.matcher})
            cells[(name, budget)] = r
            summaries[(name, budget)] = summary_from_rows(parse_report(format_report(r.rows)), cfg.auc_thresholds)
            if out_dir is not None:
                write_report_files(out_dir, f"ensemble_{name.replace('+', '-')}_{budget}", r.rows, cfg.auc_thresholds)
    res = EnsembleResult(cells, summaries)
    if out_dir is not None:
        tau = cfg.auc_thresholds
        header = ["config", "budget", "f1", "precision", "recall"] + [f"auc@{t:g}" for t in tau] + ["mean_inliers"]
        rows = []
        for (name, b), r in cells.items():
            s = summaries[(name, b)]
            rows.append([name, b, r.f1, r.precision, r.recall] + [s[f"auc@{t:g}"] for t in tau] + [s["mean_inliers"]])
        atomic_write(out_dir / "ensemble_curve.csv", _table(header, rows))
        series = {n: (list(cfg.budgets), [summaries[(n, b)][f"auc@{tau[0]:g}"] for b in cfg.budgets])
                  for n in ENSEMBLE_CONFIGS}
        atomic_write(out_dir / "ensemble_auc_budget.svg",
                     svg.line_chart(series, f"AUC@{tau[0]:g} vs keypoint budget", "total keypoints", f"AUC@{tau[0]:g}"))
        f1s = {n: (list(cfg.budgets), [cells[(n, b)].f1 for b in cfg.budgets]) for n in ENSEMBLE_CONFIGS}
        atomic_write(out_dir / "ensemble_f1_budget.svg",
                     svg.line_chart(f1s, "match F1 vs keypoint budget", "total keypoints", "F1"))
    return res
