"""Synthetic training and evaluation data.

Textures are band-limited noise overlaid with random polygons, discs and
Gaussian blobs. Homography pairs warp one texture canvas; posed pairs
render several textured planes from two pinhole cameras with exact depth.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import RetryExhausted, TextureTooFlat, ValidationError
from .features import Keypoints
from .geometry import CameraPose, Homography, Intrinsics, rotation_from_axis_angle, warp_points


@dataclass(frozen=True)
class TextureConfig:
    width: int = 256
    height: int = 256
    kind: str = "mixed"  # checker-noise | blob-noise | mixed
    noise_amplitude: float = 0.15
    noise_sigma: float = 1.5
    shape_amplitude: float = 0.7
    num_shapes: int = 140  # per 256x256 area
    blur: float = 0.6

    def __post_init__(self):
        if self.kind not in ("checker-noise", "blob-noise", "mixed"):
            raise ValidationError(f"unknown texture kind {self.kind!r}")
        if self.width < 16 or self.height < 16:
            raise ValidationError("texture must be at least 16x16")


def _polygon_mask(xx, yy, verts) -> np.ndarray:
    """Even-odd rule point-in-polygon test on pixel centres."""
    inside = np.zeros(xx.shape, dtype=bool)
    n = len(verts)
    for k in range(n):
        x1, y1 = verts[k]
        x2, y2 = verts[(k + 1) % n]
        cond = (y1 > yy) != (y2 > yy)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (x2 - x1) * (yy - y1) / (y2 - y1) + x1
        inside ^= cond & (xx < xint)
    return inside


def gen_texture(cfg: TextureConfig, seed: int) -> np.ndarray:
    if cfg.noise_amplitude <= 0 and (cfg.shape_amplitude <= 0 or cfg.num_shapes == 0):
        raise TextureTooFlat("texture has no intensity variation")
    rng = np.random.default_rng(seed)
    h, w = cfg.height, cfg.width
    noise = ndimage.gaussian_filter(rng.normal(size=(h, w)), cfg.noise_sigma, mode="wrap")
    noise /= noise.std() + 1e-12
    img = 0.5 + cfg.noise_amplitude * 0.5 * noise
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    for _ in range(int(round(cfg.num_shapes * h * w / 256.0**2))):
        kind = cfg.kind
        if kind == "mixed":
            kind = "checker-noise" if rng.random() < 0.6 else "blob-noise"
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        size = rng.uniform(4, 22)
        level = rng.uniform(-1, 1) * cfg.shape_amplitude
        if kind == "checker-noise":
            nv = int(rng.integers(3, 6))
            ang = np.sort(rng.uniform(0, 2 * np.pi, nv))
            rad = size * rng.uniform(0.5, 1.0, nv)
            verts = np.c_[cx + rad * np.cos(ang), cy + rad * np.sin(ang)]
            lo = np.floor(verts.min(0)).astype(int)
            hi = np.ceil(verts.max(0)).astype(int) + 1
            x0, y0 = max(lo[0], 0), max(lo[1], 0)
            x1, y1 = min(hi[0], w), min(hi[1], h)
            if x1 <= x0 or y1 <= y0:
                continue
            m = _polygon_mask(xx[y0:y1, x0:x1], yy[y0:y1, x0:x1], verts)
            img[y0:y1, x0:x1][m] += level
        else:
            s = size * 0.4
            gauss = rng.random() < 0.5
            reach = 3.5 * s if gauss else s + 1
            x0, x1 = max(int(cx - reach), 0), min(int(cx + reach) + 2, w)
            y0, y1 = max(int(cy - reach), 0), min(int(cy + reach) + 2, h)
            if x1 <= x0 or y1 <= y0:
                continue
            r2 = (xx[y0:y1, x0:x1] - cx) ** 2 + (yy[y0:y1, x0:x1] - cy) ** 2
            if gauss:
                img[y0:y1, x0:x1] += level * np.exp(-r2 / (2 * s * s))
            else:
                img[y0:y1, x0:x1][r2 < s * s] += level
    if cfg.blur > 0:
        img = ndimage.gaussian_filter(img, cfg.blur, mode="nearest")
    lo, hi = np.percentile(img, [1, 99])
    if hi - lo < 1e-6:
        raise TextureTooFlat("texture has no intensity variation")
    img = (img - lo) / (hi - lo) * 0.9 + 0.05
    return np.clip(img, 0.0, 1.0)


# -- homography pairs --------------------------------------------------------------
@dataclass(frozen=True)
class HomographyGenConfig:
    width: int = 256
    height: int = 256
    rotation_deg: float = 25.0
    scale_range: tuple[float, float] = (0.8, 1.25)
    perspective: float = 0.25
    translation: float = 0.1
    brightness: float = 0.1
    contrast: tuple[float, float] = (0.8, 1.2)
    noise_sigma: float = 0.01
    texture: TextureConfig | None = None
    seed: int = 0

    def texture_cfg(self) -> TextureConfig:
        base = self.texture or TextureConfig()
        return replace(base, width=2 * self.width, height=2 * self.height)


def sample_homography(cfg: HomographyGenConfig, rng: np.random.Generator) -> Homography:
    w, h = cfg.width, cfg.height
    c = np.array([(w - 1) / 2, (h - 1) / 2])
    a = np.radians(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    lo, hi = cfg.scale_range
    s = np.exp(rng.uniform(np.log(lo), np.log(hi))) if hi > lo else lo
    px, py = rng.uniform(-cfg.perspective, cfg.perspective, 2) / np.array([w, h])
    tx, ty = rng.uniform(-cfg.translation, cfg.translation, 2) * np.array([w, h])
    T1 = np.array([[1, 0, -c[0]], [0, 1, -c[1]], [0, 0, 1.0]])
    A = np.array([[s * np.cos(a), -s * np.sin(a), 0], [s * np.sin(a), s * np.cos(a), 0], [0, 0, 1.0]])
    P = np.array([[1, 0, 0], [0, 1, 0], [px, py, 1.0]])
    T2 = np.array([[1, 0, c[0] + tx], [0, 1, c[1] + ty], [0, 0, 1.0]])
    return Homography(T2 @ A @ P @ T1)


def _corners(w, h) -> np.ndarray:
    return np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)


def _within_double_bounds(pts, w, h) -> bool:
    return bool(np.all(np.isfinite(pts)) and np.all(pts[:, 0] >= -w / 2) and np.all(pts[:, 0] <= 1.5 * w)
                and np.all(pts[:, 1] >= -h / 2) and np.all(pts[:, 1] <= 1.5 * h))


def photometric_jitter(img, rng, brightness, contrast, noise_sigma) -> np.ndarray:
    b = rng.uniform(-brightness, brightness) if brightness > 0 else 0.0
    c = rng.uniform(*contrast) if contrast[1] > contrast[0] else contrast[0]
    out = (img - 0.5) * c + 0.5 + b
    if noise_sigma > 0:
        out = out + rng.normal(0.0, noise_sigma, img.shape)
    return np.clip(out, 0.0, 1.0)


def gen_homography_pair(cfg: HomographyGenConfig, seed: int | None = None):
    """Returns ``(image_a, image_b, H)`` with ``H`` mapping A pixels to B pixels."""
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    w, h = cfg.width, cfg.height
    canvas = gen_texture(cfg.texture_cfg(), int(rng.integers(2**31)))
    ox, oy = w / 2, h / 2
    img_a = canvas[int(oy):int(oy) + h, int(ox):int(ox) + w]
    for _ in range(100):
        H = sample_homography(cfg, rng)
        try:
            fwd = warp_points(H, _corners(w, h))
            back = warp_points(H.inverse(), _corners(w, h))
        except Exception:
            continue
        if _within_double_bounds(fwd, w, h) and _within_double_bounds(back, w, h) and np.linalg.cond(H.h) < 1e6:
            break
    else:
        raise RetryExhausted("no homography kept the image within bounds after 100 draws")
    yy, xx = np.mgrid[0:h, 0:w]
    src = warp_points(H.inverse(), np.c_[xx.ravel(), yy.ravel()])
    img_b = ndimage.map_coordinates(canvas, [src[:, 1] + oy, src[:, 0] + ox], order=1, mode="reflect")
    img_b = photometric_jitter(img_b.reshape(h, w), rng, cfg.brightness, cfg.contrast, cfg.noise_sigma)
    return np.ascontiguousarray(img_a), img_b, H


# -- posed multi-plane scenes ---------------------------------------------------
@dataclass(frozen=True)
class SceneConfig:
    num_planes: int = 2
    texture_kind: str = "mixed"
    baseline_range: tuple[float, float] = (0.5, 1.0)
    rotation_range: float = 5.0  # extra random rotation of camera B, degrees
    width: int = 256
    height: int = 256
    focal_ratio: float = 0.9
    depth: float = 6.0
    tilt_deg: float = 40.0
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.num_planes < 2:
            raise ValidationError("posed scenes need at least two planes")
        lo, hi = self.baseline_range
        if hi < lo or lo < 0:
            raise ValidationError("invalid baseline range")
        if hi <= 1e-3 and self.rotation_range <= 0:
            raise ValidationError("zero baseline would give a pure-rotation pair")
        if lo <= 1e-3:
            raise ValidationError("baseline must exceed 1e-3 scene units")


@dataclass
class PosedPair:
    image_a: np.ndarray
    image_b: np.ndarray
    depth_a: np.ndarray
    depth_b: np.ndarray
    pose: CameraPose  # A -> B
    k_a: Intrinsics
    k_b: Intrinsics
    plane_a: np.ndarray  # per-pixel plane index in A (-1 for none)

    def __iter__(self):
        return iter((self.image_a, self.image_b, self.depth_a, self.depth_b, self.pose, self.k_a, self.k_b))


def _render(planes, textures, K_inv, R_wc, C, w, h, ppu):
    """Ray-cast the nearest plane for every pixel of a camera.

    ``R_wc`` rotates camera rays into world (camera-A) coordinates and ``C``
    is the camera centre in world coordinates.
    """
    yy, xx = np.mgrid[0:h, 0:w]
    rays = np.c_[xx.ravel(), yy.ravel(), np.ones(w * h)] @ K_inv.T  # z = 1 in camera
    rays_w = rays @ R_wc.T
    best = np.full(w * h, np.inf)
    idx = np.full(w * h, -1)
    for k, (n, c, _, _, _) in enumerate(planes):
        denom = rays_w @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (c - C @ n) / denom
        ok = (lam > 1e-6) & np.isfinite(lam) & (lam < best)
        best[ok] = lam[ok]
        idx[ok] = k
    img = np.full(w * h, 0.5)
    for k, (n, c, o, u, v) in enumerate(planes):
        sel = idx == k
        if not sel.any():
            continue
        X = C + best[sel, None] * rays_w[sel]
        tu = (X - o) @ u * ppu + textures[k].shape[1] / 2
        tv = (X - o) @ v * ppu + textures[k].shape[0] / 2
        img[sel] = ndimage.map_coordinates(textures[k], [tv, tu], order=1, mode="reflect")
    depth = np.where(idx >= 0, best, 0.0)  # rays have z = 1, so lambda is the depth
    return img.reshape(h, w), depth.reshape(h, w), idx.reshape(h, w)


def _look_rotation(forward, up_hint=np.array([0.0, -1.0, 0.0])) -> np.ndarray:
    """World-from-camera rotation whose optical axis is ``forward`` (y down)."""
    z = forward / np.linalg.norm(forward)
    x = np.cross(-up_hint, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.c_[x, y, z]


def gen_posed_pair(cfg: SceneConfig, seed: int | None = None) -> PosedPair:
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    w, h = cfg.width, cfg.height
    f = cfg.focal_ratio * w
    K = Intrinsics(f, f, (w - 1) / 2, (h - 1) / 2)
    tex_cfg = TextureConfig(width=640, height=640, kind=cfg.texture_kind)
    ppu = f / cfg.depth
    for _ in range(100):
        planes = []
        for k in range(cfg.num_planes):
            # tilt each plane about a random in-image axis; spread the tilt directions
            base = 2 * np.pi * k / cfg.num_planes + rng.uniform(-0.4, 0.4)
            axis = np.array([np.cos(base), np.sin(base), 0.0])
            tilt = rng.uniform(0.6, 1.0) * cfg.tilt_deg
            n = rotation_from_axis_angle(axis, tilt) @ np.array([0.0, 0.0, -1.0])
            o = np.array([*rng.uniform(-0.3, 0.3, 2), cfg.depth * rng.uniform(0.95, 1.05)])
            u = np.cross(n, [0.0, 1.0, 0.0])
            u /= np.linalg.norm(u)
            v = np.cross(n, u)
            planes.append((n, float(n @ o), o, u, v))
        textures = [gen_texture(tex_cfg, int(rng.integers(2**31))) for _ in planes]

        baseline = rng.uniform(*cfg.baseline_range)
        d = rng.normal(size=3) * np.array([1.0, 0.6, 0.3])
        C_b = baseline * d / np.linalg.norm(d)
        target = np.array([0.0, 0.0, cfg.depth]) + rng.uniform(-0.3, 0.3, 3)
        R_wb = _look_rotation(target - C_b)
        if cfg.rotation_range > 0:
            R_wb = R_wb @ rotation_from_axis_angle(rng.normal(size=3), rng.uniform(0, cfg.rotation_range))
        R = R_wb.T  # world (= camera A) to camera B
        t = -R @ C_b
        if np.linalg.norm(t) <= 1e-3:
            continue
        img_a, depth_a, lab_a = _render(planes, textures, K.K_inv, np.eye(3), np.zeros(3), w, h, ppu)
        img_b, depth_b, lab_b = _render(planes, textures, K.K_inv, R_wb, C_b, w, h, ppu)
        if (depth_a <= 0).mean() > 0.01 or (depth_b <= 0).mean() > 0.01:
            continue
        counts = np.bincount(lab_a[lab_a >= 0].ravel(), minlength=len(planes))
        if counts.sum() == 0 or 1.0 - counts.max() / counts.sum() < 0.3:
            continue
        # camera-B depth is the z coordinate in camera B; rays there also have z = 1
        img_b = photometric_jitter(img_b, rng, 0.0, (1.0, 1.0), cfg.noise_sigma)
        img_a = np.clip(img_a, 0.0, 1.0)
        return PosedPair(img_a, img_b, depth_a, depth_b, CameraPose(R, t), K, K, lab_a)
    raise RetryExhausted("could not place planes satisfying the visibility constraints")


# -- clutter -----------------------------------------------------------------------
def inject_clutter(kps: Keypoints, mode: str, magnitude: float, seed: int = 0) -> Keypoints:
    """Add a near-duplicate of every keypoint.

    ``duplicate_offset`` moves each copy by a random vector of length at most
    ``magnitude``. ``multi_scale_sim`` mimics re-detection one pyramid level up:
    the copy is snapped to a grid of spacing ``magnitude`` with its scale
    multiplied by 1.2. Copies score 1 % lower than their source.
    """
    if not magnitude > 0:
        raise ValidationError("magnitude must be positive")
    rng = np.random.default_rng(seed)
    n = len(kps)
    if mode == "duplicate_offset":
        ang = rng.uniform(0, 2 * np.pi, n)
        rad = magnitude * np.sqrt(rng.uniform(0, 1, n))
        xy = kps.xy + np.c_[rad * np.cos(ang), rad * np.sin(ang)]
        scale = kps.scale
    elif mode == "multi_scale_sim":
        xy = np.rint(kps.xy / magnitude) * magnitude
        scale = kps.scale * 1.2
    else:
        raise ValidationError(f"unknown clutter mode {mode!r}")
    copies = Keypoints(xy, scale, kps.score * 0.99, kps.detector_id)
    return Keypoints.concat([kps, copies])
