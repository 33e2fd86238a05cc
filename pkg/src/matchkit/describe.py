"""Descriptors decoupled from detection.

* dense gradient-histogram maps (128-D, dense-SIFT layout) sampled bilinearly
  at arbitrary keypoint positions,
* 256-bit BRIEF descriptors for the binary path,
* a trainable 4-layer patch MLP (the detector-oblivious baseline),
* per-source projection into the matcher's model dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import autograd as ag
from ._brief_pattern import BRIEF_PATTERN
from .detect import _downsample, as_image
from .errors import DimensionMismatch, OutOfBounds, PatchOutOfBounds, ValidationError
from .features import Keypoint, Keypoints

NUM_BINS = 8
CELL = 4
CELLS = 4
DENSE_DIM = CELLS * CELLS * NUM_BINS
# cell centres relative to the node, in pixels: -6, -2, 2, 6
_CELL_OFFSETS = np.arange(CELLS) * CELL - (CELLS - 1) * CELL // 2
_CELL_SIGMA = 0.5 * CELL * CELLS
_CLAMP = 0.2

BRIEF_BITS = 256
BRIEF_RADIUS = 15
BRIEF_SMOOTH_SIGMA = 2.0
_BRIEF_TRUNCATE = 4.0
BRIEF_SUPPORT = BRIEF_RADIUS + int(_BRIEF_TRUNCATE * BRIEF_SMOOTH_SIGMA + 0.5)
_PATTERN = np.asarray(BRIEF_PATTERN, dtype=np.int64)


@dataclass
class DescriptorMap:
    grid: np.ndarray  # (Gh, Gw, D) float32
    stride: int
    source_id: str
    empty: np.ndarray = field(repr=False, default=None)  # (Gh, Gw) bool

    @property
    def dim(self) -> int:
        return self.grid.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape[:2]


def _orientation_channels(img: np.ndarray) -> np.ndarray:
    gx = ndimage.sobel(img, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(img, axis=0, mode="nearest") / 8.0
    mag = np.hypot(gx, gy)
    pos = np.mod(np.arctan2(gy, gx) / (2 * np.pi / NUM_BINS), NUM_BINS)
    lo = np.floor(pos).astype(np.int64) % NUM_BINS
    frac = pos - np.floor(pos)
    hi = (lo + 1) % NUM_BINS
    ch = np.zeros((NUM_BINS,) + img.shape)
    rows, cols = np.indices(img.shape)
    np.add.at(ch, (lo, rows, cols), mag * (1 - frac))
    np.add.at(ch, (hi, rows, cols), mag * frac)
    return ch


def _triangle_pool(ch: np.ndarray) -> np.ndarray:
    o = np.arange(-(CELL - 1), CELL)
    w = 1.0 - np.abs(o) / CELL
    out = ndimage.correlate1d(ch, w, axis=1, mode="constant")
    return ndimage.correlate1d(out, w, axis=2, mode="constant")


def _normalize_sift(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    empty = n[..., 0] < 1e-10
    v = np.where(empty[..., None], 0.0, v / np.maximum(n, 1e-300))
    v = np.minimum(v, _CLAMP)
    n2 = np.linalg.norm(v, axis=-1, keepdims=True)
    v = np.where(empty[..., None], 0.0, v / np.maximum(n2, 1e-300))
    return v, empty


def grid_shape(width: int, height: int, stride: int) -> tuple[int, int]:
    return (height - 1) // stride + 1, (width - 1) // stride + 1


def dense_descriptor_map(img, stride: int = 2, source_id: str = "dsift") -> DescriptorMap:
    """128-D gradient-orientation histograms on a regular grid of nodes.

    Node ``(gx, gy)`` sits on pixel ``(gx * stride, gy * stride)`` and pools a
    4x4 arrangement of cells spaced 4 px apart, each with 8 soft-binned
    orientations, triangular spatial weights and a Gaussian cell weight.
    """
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    img = as_image(img)
    h, w = img.shape
    pooled = _triangle_pool(_orientation_channels(img))
    pad = int(np.abs(_CELL_OFFSETS).max())
    pooled = np.pad(pooled, ((0, 0), (pad, pad), (pad, pad)))
    gh, gw = grid_shape(w, h, stride)
    ys = np.arange(gh) * stride + pad
    xs = np.arange(gw) * stride + pad
    parts = []
    for oy in _CELL_OFFSETS:
        for ox in _CELL_OFFSETS:
            wgt = np.exp(-(ox * ox + oy * oy) / (2 * _CELL_SIGMA**2))
            cell = pooled[:, ys + oy][:, :, xs + ox]  # (8, gh, gw)
            parts.append(np.moveaxis(cell, 0, -1) * wgt)
    v = np.concatenate(parts, axis=-1)
    v, empty = _normalize_sift(v)
    return DescriptorMap(v.astype(np.float32), stride, source_id, empty)


def sample_descriptors(dmap: DescriptorMap, xy) -> np.ndarray:
    """Bilinear interpolation of grid vectors at (N, 2) pixel positions, renormalised."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    gh, gw = dmap.shape
    u = xy[:, 0] / dmap.stride
    v = xy[:, 1] / dmap.stride
    bad = (u < 0) | (v < 0) | (u > gw - 1) | (v > gh - 1) | ~np.isfinite(u) | ~np.isfinite(v)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise OutOfBounds(f"keypoint ({xy[i, 0]:.2f}, {xy[i, 1]:.2f}) is outside the descriptor grid")
    x0 = np.minimum(np.floor(u).astype(np.int64), max(gw - 2, 0))
    y0 = np.minimum(np.floor(v).astype(np.int64), max(gh - 2, 0))
    x1 = np.minimum(x0 + 1, gw - 1)
    y1 = np.minimum(y0 + 1, gh - 1)
    fx = (u - x0)[:, None]
    fy = (v - y0)[:, None]
    g = dmap.grid
    out = (
        g[y0, x0] * (1 - fx) * (1 - fy)
        + g[y0, x1] * fx * (1 - fy)
        + g[y1, x0] * (1 - fx) * fy
        + g[y1, x1] * fx * fy
    )
    n = np.linalg.norm(out, axis=1, keepdims=True)
    return np.where(n > 1e-12, out / np.maximum(n, 1e-300), 0.0)


def sample_descriptor(dmap: DescriptorMap, kp: Keypoint) -> np.ndarray:
    return sample_descriptors(dmap, [[kp.x, kp.y]])[0]


def in_grid(dmap: DescriptorMap, xy) -> np.ndarray:
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    gh, gw = dmap.shape
    u, v = xy[:, 0] / dmap.stride, xy[:, 1] / dmap.stride
    return (u >= 0) & (v >= 0) & (u <= gw - 1) & (v <= gh - 1)


# -- BRIEF -----------------------------------------------------------------------
def _level_image(img: np.ndarray, scale: float) -> np.ndarray:
    if scale == 1.0:
        return img
    h, w = img.shape
    return _downsample(img, scale, (int(np.floor(h / scale)), int(np.floor(w / scale))))


def _brief_center(kp_xy, scale) -> tuple[int, int]:
    return int(np.rint(kp_xy[0] / scale)), int(np.rint(kp_xy[1] / scale))


def brief_fits(shape, kp_xy, scale: float = 1.0) -> bool:
    h, w = shape[0], shape[1]
    if scale != 1.0:
        h, w = int(np.floor(h / scale)), int(np.floor(w / scale))
    cx, cy = _brief_center(kp_xy, scale)
    r = BRIEF_SUPPORT
    return r <= cx <= w - 1 - r and r <= cy <= h - 1 - r


def _brief_bits(level: np.ndarray, cx: int, cy: int) -> np.ndarray:
    r = BRIEF_SUPPORT
    h, w = level.shape
    if not (r <= cx <= w - 1 - r and r <= cy <= h - 1 - r):
        raise PatchOutOfBounds(f"BRIEF support around ({cx}, {cy}) leaves the {w}x{h} image")
    crop = level[cy - r:cy + r + 1, cx - r:cx + r + 1]
    sm = ndimage.gaussian_filter(crop, BRIEF_SMOOTH_SIGMA, mode="nearest", truncate=_BRIEF_TRUNCATE)
    p = sm[r + _PATTERN[:, 1], r + _PATTERN[:, 0]]
    q = sm[r + _PATTERN[:, 3], r + _PATTERN[:, 2]]
    return p < q


def binary_descriptor(img, kp: Keypoint) -> np.ndarray:
    """256 smoothed-intensity comparisons packed into 32 bytes.

    The keypoint is described on its own pyramid level. Only pixels within
    ``BRIEF_SUPPORT`` of the (level) keypoint position are read.
    """
    img = as_image(img)
    level = _level_image(img, kp.scale)
    cx, cy = _brief_center((kp.x, kp.y), kp.scale)
    return np.packbits(_brief_bits(level, cx, cy))


def binary_descriptors(img, kps: Keypoints) -> np.ndarray:
    img = as_image(img)
    out = np.zeros((len(kps), BRIEF_BITS // 8), dtype=np.uint8)
    levels: dict[float, np.ndarray] = {}
    for i in range(len(kps)):
        s = float(kps.scale[i])
        if s not in levels:
            levels[s] = _level_image(img, s)
        cx, cy = _brief_center(kps.xy[i], s)
        out[i] = np.packbits(_brief_bits(levels[s], cx, cy))
    return out


def unpack_bits(packed: np.ndarray) -> np.ndarray:
    return np.unpackbits(np.asarray(packed, dtype=np.uint8), axis=-1)


def binary_to_real(packed: np.ndarray) -> np.ndarray:
    """Bits as a ±1/sqrt(256) vector (unit norm by construction)."""
    bits = unpack_bits(packed).astype(np.float64)
    return (2.0 * bits - 1.0) / np.sqrt(bits.shape[-1])


# -- patch MLP (detector-oblivious baseline) ----------------------------------------
@dataclass(frozen=True)
class PatchEmbedConfig:
    patch_size: int = 15
    hidden_dim: int = 64
    out_dim: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.patch_size % 2 != 1 or self.patch_size < 1:
            raise ValidationError("patch_size must be odd")
        if self.out_dim <= 0 or self.hidden_dim <= 0:
            raise ValidationError("dimensions must be positive")


def init_patch_embed(cfg: PatchEmbedConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    dims = [cfg.patch_size**2, cfg.hidden_dim, cfg.hidden_dim, cfg.hidden_dim, cfg.out_dim]
    params = {}
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"patch.w{i}"] = rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b))
        params[f"patch.b{i}"] = np.zeros(b)
    return params


def extract_patches(img, xy, patch_size: int) -> np.ndarray:
    """Mean/std-normalised P×P crops centred on the rounded keypoint pixels."""
    img = np.asarray(img, dtype=np.float64)
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    r = patch_size // 2
    h, w = img.shape
    cx = np.rint(xy[:, 0]).astype(np.int64)
    cy = np.rint(xy[:, 1]).astype(np.int64)
    bad = (cx - r < 0) | (cy - r < 0) | (cx + r > w - 1) | (cy + r > h - 1)
    if np.any(bad):
        raise PatchOutOfBounds(f"{int(bad.sum())} patch(es) leave the image")
    off = np.arange(-r, r + 1)
    rows = cy[:, None, None] + off[None, :, None]
    cols = cx[:, None, None] + off[None, None, :]
    p = img[rows, cols].reshape(len(xy), -1)
    mu = p.mean(1, keepdims=True)
    sd = p.std(1, keepdims=True)
    return (p - mu) / (sd + 1e-6)


def patch_embed_forward(patches, params: dict) -> ag.Tensor:
    """4 fully-connected layers with ReLU in between, L2-normalised output."""
    x = patches if isinstance(patches, ag.Tensor) else ag.Tensor(patches)
    for i in range(4):
        x = ag.linear(x, params[f"patch.w{i}"], params[f"patch.b{i}"])
        if i < 3:
            x = ag.relu(x)
    return ag.l2_normalize(x, axis=-1)


def patch_embed(img, kp: Keypoint, cfg: PatchEmbedConfig, params: dict | None = None) -> np.ndarray:
    params = init_patch_embed(cfg) if params is None else params
    patches = extract_patches(img, [[kp.x, kp.y]], cfg.patch_size)
    with ag.no_grad():
        tparams = {k: ag.Tensor(v) for k, v in params.items()}
        return patch_embed_forward(patches, tparams).data[0]


# -- projection into the matcher ------------------------------------------------------
def descriptor_input(desc: np.ndarray, binary: bool) -> np.ndarray:
    """Real-valued matcher input for a descriptor array (binary → scaled ±1)."""
    return binary_to_real(desc) if binary else np.asarray(desc, dtype=np.float64)


def project_descriptor(d, proj: dict, binary: bool = False) -> ag.Tensor:
    """Affine map ``d @ w + b`` followed by L2 normalisation.

    ``d`` may be one descriptor or a stack; binary descriptors (packed uint8)
    are first expanded to ±1/16 vectors.
    """
    x = d if isinstance(d, ag.Tensor) else ag.Tensor(descriptor_input(d, binary))
    w = proj["w"]
    din = w.shape[0]
    if x.shape[-1] != din:
        raise DimensionMismatch(f"descriptor dim {x.shape[-1]} does not match projection input {din}")
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, -1)
    y = ag.l2_normalize(ag.linear(x, w, proj["b"]), axis=-1)
    return y[0] if squeeze else y
