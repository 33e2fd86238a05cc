"""Keypoint detection on image pyramids with score-ordered greedy NMS.

Two hand-crafted detectors are provided: a Shi-Tomasi corner detector and a
difference-of-Gaussians blob detector. Distances used by :func:`nms` and
:func:`count_nearby_pairs` are always measured in level-0 pixels, so the
same corner found on two pyramid levels counts as a nearby pair.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import EmptyPyramid, ValidationError
from .features import Keypoints


def as_image(pixels) -> np.ndarray:
    """Validate a grayscale image: 2-D, at least 16x16, values in [0, 1]."""
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim != 2:
        raise ValidationError(f"expected a 2-D grayscale image, got shape {img.shape}")
    if img.shape[0] < 16 or img.shape[1] < 16:
        raise ValidationError(f"image {img.shape} is smaller than 16x16")
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
        raise ValidationError("pixel values must lie in [0, 1]")
    return img


@dataclass(frozen=True)
class DetectorConfig:
    kind: str = "corner"  # "corner" | "blob"
    num_scales: int = 5
    scale_factor: float = 1.2
    nms_radius: float = 3.0
    single_scale: bool = False
    max_keypoints: int = 2048
    response_threshold: float | None = None  # None: 1e-3 corner, 1e-2 blob
    min_side: int = 256
    border: int = 8
    blob_sigma0: float = 1.6
    blob_intervals: int = 4
    edge_ratio: float = 10.0
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("corner", "blob"):
            raise ValidationError(f"unknown detector kind {self.kind!r}")
        if self.num_scales < 1:
            raise ValidationError("num_scales must be >= 1")
        if self.scale_factor <= 1:
            raise ValidationError("scale_factor must be > 1")
        if self.response_threshold is None:
            object.__setattr__(self, "response_threshold", 1e-3 if self.kind == "corner" else 1e-2)
        if self.nms_radius < 0 or self.response_threshold < 0:
            raise ValidationError("nms_radius and response_threshold must be >= 0")
        if self.max_keypoints < 1:
            raise ValidationError("max_keypoints must be >= 1")
        if self.blob_intervals < 1 or self.blob_sigma0 <= 0:
            raise ValidationError("invalid blob sigma ladder")
        if self.single_scale and self.num_scales != 1:
            object.__setattr__(self, "num_scales", 1)
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    def with_(self, **kw) -> "DetectorConfig":
        return replace(self, **kw)


def _downsample(img: np.ndarray, s: float, shape: tuple[int, int]) -> np.ndarray:
    sigma = 0.5 * np.sqrt(s * s - 1.0)
    blurred = ndimage.gaussian_filter(img, sigma, mode="nearest") if sigma > 0 else img
    ys = np.arange(shape[0], dtype=np.float64) * s
    xs = np.arange(shape[1], dtype=np.float64) * s
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = ndimage.map_coordinates(blurred, [yy, xx], order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def build_pyramid(img, cfg: DetectorConfig) -> list[tuple[np.ndarray, float]]:
    """Levels ``k = 0..num_scales-1`` of size ``floor(dim / factor**k)``.

    Levels with a side shorter than ``cfg.min_side`` are dropped.
    """
    img = as_image(img)
    h, w = img.shape
    if min(h, w) < cfg.min_side:
        raise EmptyPyramid(f"image {w}x{h} is below min_side={cfg.min_side}")
    levels = [(img, 1.0)]
    n = 1 if cfg.single_scale else cfg.num_scales
    for k in range(1, n):
        s = cfg.scale_factor ** k
        shape = (int(np.floor(h / s)), int(np.floor(w / s)))
        if min(shape) < cfg.min_side or min(shape) < 16:
            continue
        levels.append((_downsample(img, s, shape), s))
    return levels


def shi_tomasi_response(img: np.ndarray) -> np.ndarray:
    """Smaller eigenvalue of the 3x3-summed structure tensor (Sobel gradients)."""
    gx = ndimage.sobel(img, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(img, axis=0, mode="nearest") / 8.0
    a = ndimage.uniform_filter(gx * gx, 3, mode="constant") * 9.0
    b = ndimage.uniform_filter(gx * gy, 3, mode="constant") * 9.0
    c = ndimage.uniform_filter(gy * gy, 3, mode="constant") * 9.0
    half_tr = 0.5 * (a + c)
    root = np.sqrt(np.maximum((0.5 * (a - c)) ** 2 + b * b, 0.0))
    return np.maximum(half_tr - root, 0.0)


def _level_keypoints(ys, xs, score, s, tag) -> Keypoints:
    return Keypoints(np.c_[xs * s, ys * s].astype(np.float64), s, score, tag)


def detect_corners(img, cfg: DetectorConfig) -> Keypoints:
    if cfg.kind != "corner":
        raise ValidationError("detect_corners needs kind='corner'")
    parts = []
    for level, s in build_pyramid(img, cfg):
        r = np.ascontiguousarray(shi_tomasi_response(level))
        ys, xs = _kernels.local_max_2d(r, float(cfg.response_threshold), int(cfg.border))
        parts.append(_level_keypoints(ys, xs, r[ys, xs], s, cfg.name))
    return Keypoints.concat(parts)


def dog_stack(img: np.ndarray, sigma0: float, intervals: int) -> np.ndarray:
    """Differences of Gaussians for ``sigma_s = sigma0 * 2**(s/3)``.

    ``intervals + 2`` layers are returned so that every searched layer
    ``1..intervals`` has a neighbour above and below.
    """
    sigmas = [sigma0 * 2.0 ** (s / 3.0) for s in range(intervals + 3)]
    g = np.stack([ndimage.gaussian_filter(img, sg, mode="nearest") for sg in sigmas])
    return np.ascontiguousarray(g[1:] - g[:-1])


def _edge_like(d, ss, ys, xs, ratio):
    """Principal-curvature test on the DoG Hessian; True rejects the point."""
    dxx = d[ss, ys, xs + 1] + d[ss, ys, xs - 1] - 2 * d[ss, ys, xs]
    dyy = d[ss, ys + 1, xs] + d[ss, ys - 1, xs] - 2 * d[ss, ys, xs]
    dxy = 0.25 * (d[ss, ys + 1, xs + 1] - d[ss, ys + 1, xs - 1] - d[ss, ys - 1, xs + 1] + d[ss, ys - 1, xs - 1])
    tr = dxx + dyy
    det = dxx * dyy - dxy * dxy
    return (det <= 0) | (tr * tr * ratio >= (ratio + 1) ** 2 * det)


def detect_blobs(img, cfg: DetectorConfig) -> Keypoints:
    if cfg.kind != "blob":
        raise ValidationError("detect_blobs needs kind='blob'")
    parts = []
    for level, s in build_pyramid(img, cfg):
        d = dog_stack(level, cfg.blob_sigma0, cfg.blob_intervals)
        ss, ys, xs = _kernels.extrema_3d(d, float(cfg.response_threshold), int(cfg.border))
        if cfg.edge_ratio > 0 and len(ss):
            keep = ~_edge_like(d, ss, ys, xs, cfg.edge_ratio)
            ss, ys, xs = ss[keep], ys[keep], xs[keep]
        parts.append(_level_keypoints(ys, xs, np.abs(d[ss, ys, xs]), s, cfg.name))
    return Keypoints.concat(parts)


def nms(kps: Keypoints, radius: float) -> Keypoints:
    """Greedy suppression in descending-score order (ties by ascending y, x).

    A keypoint survives iff it is farther than ``radius`` from every
    keypoint already kept. ``radius == 0`` only sorts.
    """
    if radius < 0:
        raise ValidationError("radius must be >= 0")
    order = kps.score_order()
    if radius == 0 or len(kps) < 2:
        return kps[order]
    keep = _kernels.greedy_nms(np.ascontiguousarray(kps.xy), order.astype(np.int64), float(radius))
    return kps[keep]


def top_k(kps: Keypoints, k: int) -> Keypoints:
    if k < 1:
        raise ValidationError("k must be >= 1")
    return kps[kps.score_order()[:k]]


def count_nearby_pairs(kps: Keypoints, radius: float) -> int:
    """Unordered pairs of keypoints at level-0 distance <= radius."""
    if radius <= 0:
        raise ValidationError("radius must be > 0")
    return int(_kernels.count_pairs_within(np.ascontiguousarray(kps.xy), float(radius)))


def detect(img, cfg: DetectorConfig) -> Keypoints:
    """Full detector policy: raw detection, NMS, then the keypoint budget."""
    raw = detect_corners(img, cfg) if cfg.kind == "corner" else detect_blobs(img, cfg)
    return top_k(nms(raw, cfg.nms_radius), cfg.max_keypoints) if len(raw) else raw
