"""Synthetic pair datasets, in memory and on disk (manifest + PGM + sidecars)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError, ValidationError
from ..formats import (ManifestItem, format_homography, format_pose, parse_homography, parse_pose, quantize,
                       read_depth, read_manifest, read_pgm, write_depth, write_manifest, write_pgm, atomic_write)
from ..geometry import CameraPose, Homography, Intrinsics
from ..gtlabel import PairSupervision, PoseDepth
from ..synthgen import HomographyGenConfig, SceneConfig, gen_homography_pair, gen_posed_pair
from .config import RunConfig, derive_seed


@dataclass
class PairItem:
    pair_id: str
    seed: int
    kind: str
    image_a: np.ndarray
    image_b: np.ndarray
    homography: Homography | None = None
    pose: CameraPose | None = None
    k_a: Intrinsics | None = None
    k_b: Intrinsics | None = None
    depth_a: np.ndarray | None = None
    depth_b: np.ndarray | None = None

    def supervision(self, match_threshold: float = 3.0) -> PairSupervision:
        if self.kind == "homography":
            return PairSupervision(self.homography, match_threshold)
        return PairSupervision(PoseDepth(self.pose, self.k_a, self.k_b, self.depth_a, self.depth_b), match_threshold)


def item_seed(seed: int, kind: str, index: int) -> int:
    return derive_seed(seed, f"{kind}:{index}") & 0x7FFFFFFF


def make_item(kind: str, index: int, seed: int, cfg: RunConfig, prefix: str = "") -> PairItem:
    """One pair, quantised exactly as a PGM/MKDS round trip would store it."""
    s = item_seed(seed, kind, index)
    pid = f"{prefix}{kind[0]}{index:05d}"
    if kind == "homography":
        a, b, h = gen_homography_pair(HomographyGenConfig(width=cfg.width, height=cfg.height), seed=s)
        return PairItem(pid, s, kind, quantize(a), quantize(b), homography=h)
    if kind == "posed":
        pp = gen_posed_pair(SceneConfig(width=cfg.width, height=cfg.height), seed=s)
        f32 = lambda d: np.asarray(d, dtype=np.float32).astype(np.float64)  # noqa: E731
        return PairItem(pid, s, kind, quantize(pp.image_a), quantize(pp.image_b), pose=pp.pose, k_a=pp.k_a,
                        k_b=pp.k_b, depth_a=f32(pp.depth_a), depth_b=f32(pp.depth_b))
    raise ValidationError(f"unknown dataset kind {kind!r}")


def make_items(kind: str, count: int, seed: int, cfg: RunConfig, prefix: str = "") -> list[PairItem]:
    return [make_item(kind, i, seed, cfg, prefix) for i in range(count)]


def write_dataset(out_dir, items: list[PairItem]) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for it in items:
        a, b = f"{it.pair_id}_a.pgm", f"{it.pair_id}_b.pgm"
        write_pgm(out / a, it.image_a)
        write_pgm(out / b, it.image_b)
        if it.kind == "homography":
            g = f"{it.pair_id}_H.txt"
            atomic_write(out / g, format_homography(it.homography))
            entries.append(ManifestItem(it.pair_id, it.seed, it.kind, (a, b, g)))
        else:
            da, db, g = f"{it.pair_id}_da.mkds", f"{it.pair_id}_db.mkds", f"{it.pair_id}_pose.txt"
            write_depth(out / da, it.depth_a)
            write_depth(out / db, it.depth_b)
            atomic_write(out / g, format_pose(it.pose, it.k_a, it.k_b))
            entries.append(ManifestItem(it.pair_id, it.seed, it.kind, (a, b, da, db, g)))
    manifest = out / "manifest.txt"
    write_manifest(manifest, entries)
    return manifest


def load_dataset(manifest_path) -> list[PairItem]:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise ValidationError(f"manifest {manifest_path} does not exist")
    root = manifest_path.parent
    items = []
    for m in read_manifest(manifest_path):
        p = [root / x for x in m.paths]
        for q in p:
            if not q.is_file():
                raise ValidationError(f"manifest item {m.item_id}: missing file {q.name}")
        if m.kind == "homography":
            if len(p) != 3:
                raise FormatError(f"homography item {m.item_id} needs 3 paths")
            items.append(PairItem(m.item_id, m.seed, m.kind, read_pgm(p[0]), read_pgm(p[1]),
                                  homography=parse_homography(p[2].read_text())))
        elif m.kind == "posed":
            if len(p) != 5:
                raise FormatError(f"posed item {m.item_id} needs 5 paths")
            pose, ka, kb = parse_pose(p[4].read_text())
            items.append(PairItem(m.item_id, m.seed, m.kind, read_pgm(p[0]), read_pgm(p[1]), pose=pose, k_a=ka,
                                  k_b=kb, depth_a=read_depth(p[2]), depth_b=read_depth(p[3])))
        else:
            raise FormatError(f"unknown item kind {m.kind!r}")
    return items
