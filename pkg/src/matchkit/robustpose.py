"""LO-RANSAC for homographies and essential matrices, pose recovery, evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .errors import CheiralityTie, DegenerateSample, TooFewPoints, ValidationError
from .features import MatchSet
from .geometry import CameraPose, Homography, Intrinsics, PoseError, pose_error


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 2000
    inlier_threshold: float = 1.0
    threshold_grid: tuple[float, ...] = (0.5, 1.0, 2.0)
    confidence: float = 0.9999
    lo_enabled: bool = True
    lo_max_points: int = 64
    lo_rounds: int = 2
    min_iterations: int = 20
    polish: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.confidence < 1:
            raise ValidationError("confidence must lie in (0, 1)")
        if not self.threshold_grid or min(self.threshold_grid) <= 0 or self.inlier_threshold <= 0:
            raise ValidationError("thresholds must be positive and the grid nonempty")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")


@dataclass
class EstimateResult:
    model: np.ndarray
    inliers: np.ndarray
    threshold_used: float
    residuals: np.ndarray = field(repr=False, default=None)
    diagnostics: dict = field(default_factory=dict)

    @property
    def num_inliers(self) -> int:
        return int(len(self.inliers))


def _split(corr, pts_b=None) -> tuple[np.ndarray, np.ndarray]:
    if pts_b is not None:
        return np.asarray(corr, dtype=np.float64).reshape(-1, 2), np.asarray(pts_b, dtype=np.float64).reshape(-1, 2)
    c = np.asarray(corr, dtype=np.float64).reshape(-1, 4)
    return c[:, :2], c[:, 2:]


def _hartley(p: np.ndarray) -> np.ndarray:
    c = p.mean(0)
    d = np.sqrt(((p - c) ** 2).sum(1)).mean()
    s = np.sqrt(2) / d if d > 1e-12 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _homog(p: np.ndarray) -> np.ndarray:
    return np.hstack([p, np.ones((len(p), 1))])


def _adaptive_iterations(w: float, sample: int, conf: float, cap: int) -> int:
    if w <= 0:
        return cap
    denom = np.log(max(1.0 - w**sample, 1e-300))
    if denom >= 0:
        return cap
    return int(min(cap, np.ceil(np.log(1 - conf) / denom)))


# -- homography ------------------------------------------------------------------
def fit_homography(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Normalised DLT; least squares when more than four points are given."""
    if len(a) < 4:
        raise TooFewPoints("homography needs >= 4 correspondences")
    Ta, Tb = _hartley(a), _hartley(b)
    an = _homog(a) @ Ta.T
    bn = _homog(b) @ Tb.T
    n = len(a)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:3] = an
    A[0::2, 6:9] = -bn[:, 0:1] * an
    A[1::2, 3:6] = an
    A[1::2, 6:9] = -bn[:, 1:2] * an
    _, s, vt = np.linalg.svd(A)
    if n == 4 and s[7] < 1e-10 * s[0]:
        raise DegenerateSample("rank-deficient minimal sample")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Tb) @ Hn @ Ta
    if abs(H[2, 2]) > 1e-15:
        H = H / H[2, 2]
    if abs(np.linalg.det(H)) < 1e-12:
        raise DegenerateSample("singular homography")
    return H


def _collinear(p: np.ndarray) -> bool:
    """True when any three of the four sample points are (nearly) collinear."""
    tri = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])
    u = p[tri[:, 1]] - p[tri[:, 0]]
    v = p[tri[:, 2]] - p[tri[:, 0]]
    area = np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
    scale = max(np.ptp(p[:, 0]), np.ptp(p[:, 1]), 1e-12) ** 2
    return bool((area < 1e-6 * scale).any())


def homography_residuals(H: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Symmetric transfer error ``sqrt((|Ha - b|^2 + |H^-1 b - a|^2) / 2)`` in px."""
    def tr(M, p):
        q = _homog(p) @ M.T
        w = q[:, 2:]
        w = np.where(np.abs(w) < 1e-12, np.nan, w)
        return q[:, :2] / w

    try:
        Hi = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return np.full(len(a), np.inf)
    ef = ((tr(H, a) - b) ** 2).sum(1)
    eb = ((tr(Hi, b) - a) ** 2).sum(1)
    r = np.sqrt(0.5 * (ef + eb))
    return np.where(np.isfinite(r), r, np.inf)


def _ransac(a, b, sample_size, fit, residuals, thr, cfg: RansacConfig, degenerate=None):
    n = len(a)
    rng = np.random.default_rng(cfg.seed)
    best_model, best_inl, best_score = None, np.empty(0, dtype=np.int64), (-1, np.inf)

    def score(model):
        r = residuals(model, a, b)
        inl = np.flatnonzero(r <= thr)
        return r, inl, (len(inl), float(np.minimum(r, thr).sum()))

    def better(s, t):
        return s[0] > t[0] or (s[0] == t[0] and s[1] < t[1])

    limit = cfg.max_iterations
    it = 0
    while it < limit:
        it += 1
        idx = rng.choice(n, sample_size, replace=False)
        if degenerate is not None and degenerate(a[idx], b[idx]):
            continue
        try:
            model = fit(a[idx], b[idx])
        except (DegenerateSample, np.linalg.LinAlgError):
            continue
        models = model if isinstance(model, list) else [model]
        for m in models:
            _, inl, s = score(m)
            if not better(s, best_score):
                continue
            best_model, best_inl, best_score = m, inl, s
            if cfg.lo_enabled and len(inl) > sample_size:
                for _ in range(cfg.lo_rounds):
                    sub = best_inl
                    if len(sub) > cfg.lo_max_points:
                        sub = np.sort(rng.choice(sub, cfg.lo_max_points, replace=False))
                    try:
                        refit = fit(a[sub], b[sub])
                    except (DegenerateSample, np.linalg.LinAlgError, TooFewPoints):
                        break
                    refits = refit if isinstance(refit, list) else [refit]
                    improved = False
                    for rm in refits:
                        _, rinl, rs = score(rm)
                        if better(rs, best_score) or (rs[0] >= best_score[0] and rs[1] <= best_score[1]):
                            best_model, best_inl, best_score = rm, rinl, rs
                            improved = True
                    if not improved:
                        break
            limit = max(cfg.min_iterations, _adaptive_iterations(len(best_inl) / n, sample_size,
                                                                 cfg.confidence, cfg.max_iterations))
    if best_model is None:
        raise DegenerateSample("no non-degenerate sample found")
    r = residuals(best_model, a, b)
    inl = np.flatnonzero(r <= thr)
    return best_model, inl, r, it


def ransac_homography(corr, cfg: RansacConfig = RansacConfig(), pts_b=None) -> EstimateResult:
    a, b = _split(corr, pts_b)
    if len(a) < 4:
        raise TooFewPoints(f"{len(a)} correspondences; homography needs >= 4")
    thr = cfg.inlier_threshold
    H, inl, r, it = _ransac(a, b, 4, fit_homography, homography_residuals, thr, cfg,
                            degenerate=lambda p, q: _collinear(p) or _collinear(q))
    return EstimateResult(H / H[2, 2] if abs(H[2, 2]) > 1e-15 else H, inl, thr, r, {"iterations": it})


# -- essential matrix -------------------------------------------------------------
def _to_essential(F: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(F)
    E = U @ np.diag([1.0, 1.0, 0.0]) @ Vt
    return E / np.linalg.norm(E) * np.sqrt(2)


def fit_essential(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Normalised 8-point algorithm on calibrated coordinates."""
    if len(xa) < 8:
        raise TooFewPoints("essential matrix needs >= 8 correspondences")
    Ta, Tb = _hartley(xa), _hartley(xb)
    an = _homog(xa) @ Ta.T
    bn = _homog(xb) @ Tb.T
    A = (bn[:, :, None] * an[:, None, :]).reshape(len(xa), 9)
    _, s, vt = np.linalg.svd(A)
    if len(xa) == 8 and s[7] < 1e-10 * s[0]:
        raise DegenerateSample("rank-deficient 8-point sample")
    F = vt[-1].reshape(3, 3)
    return _to_essential(Tb.T @ F @ Ta)


def sampson_distance(E: np.ndarray, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Square root of the Sampson error, in normalised image units."""
    ha, hb = _homog(xa), _homog(xb)
    Ex = ha @ E.T
    Etx = hb @ E
    num = (hb * Ex).sum(1) ** 2
    den = Ex[:, 0] ** 2 + Ex[:, 1] ** 2 + Etx[:, 0] ** 2 + Etx[:, 1] ** 2
    return np.sqrt(num / np.maximum(den, 1e-300))


def polish_essential(E: np.ndarray, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Minimise Sampson distances over (R, t) starting from the best cheirality candidate."""
    try:
        R0, t0 = _cheirality_pick(E, xa, xb)
    except CheiralityTie:
        return E

    def resid(v):
        R = Rotation.from_rotvec(v[:3]).as_matrix() @ R0
        t = v[3:] / np.linalg.norm(v[3:])
        return sampson_distance(_skew(t) @ R, xa, xb)

    sol = least_squares(resid, np.r_[np.zeros(3), t0], method="lm" if len(xa) >= 6 else "trf")
    R = Rotation.from_rotvec(sol.x[:3]).as_matrix() @ R0
    t = sol.x[3:] / np.linalg.norm(sol.x[3:])
    return _skew(t) @ R


def _skew(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0.0]])


def normalize_points(p: np.ndarray, k: Intrinsics) -> np.ndarray:
    return np.c_[(p[:, 0] - k.cx) / k.fx, (p[:, 1] - k.cy) / k.fy]


def pixel_to_normalized_threshold(thr_px: float, k_a: Intrinsics, k_b: Intrinsics) -> float:
    return thr_px / np.mean([k_a.fx, k_a.fy, k_b.fx, k_b.fy])


def ransac_essential(corr, k_a: Intrinsics, k_b: Intrinsics, cfg: RansacConfig = RansacConfig(),
                     pts_b=None, check_planar: bool = True) -> EstimateResult:
    a, b = _split(corr, pts_b)
    if len(a) < 8:
        raise TooFewPoints(f"{len(a)} correspondences; essential matrix needs >= 8")
    xa, xb = normalize_points(a, k_a), normalize_points(b, k_b)
    thr = pixel_to_normalized_threshold(cfg.inlier_threshold, k_a, k_b)
    E, inl, r, it = _ransac(xa, xb, 8, fit_essential, sampson_distance, thr, cfg)
    diag = {"iterations": it, "threshold_normalized": thr, "polished": False}
    if cfg.polish and len(inl) >= 8:
        Ep = polish_essential(E, xa[inl], xb[inl])
        rp = sampson_distance(Ep, xa, xb)
        inl_p = np.flatnonzero(rp <= thr)
        if len(inl_p) >= len(inl):
            E, inl, r = Ep, inl_p, rp
            diag["polished"] = True
    if check_planar and len(inl) >= 8:
        try:
            hres = ransac_homography(a[inl], RansacConfig(
                max_iterations=500, inlier_threshold=cfg.inlier_threshold, seed=cfg.seed, lo_enabled=True),
                pts_b=b[inl])
            diag["homography_inlier_ratio"] = hres.num_inliers / len(inl)
            diag["planar_degenerate"] = hres.num_inliers >= 0.95 * len(inl)
        except (TooFewPoints, DegenerateSample):
            diag["planar_degenerate"] = False
    return EstimateResult(E, inl, cfg.inlier_threshold, r * np.mean([k_a.fx, k_a.fy, k_b.fx, k_b.fy]), diag)


# -- pose recovery -------------------------------------------------------------------
def _triangulate(R, t, xa, xb) -> tuple[np.ndarray, np.ndarray]:
    """Linear triangulation; returns depths in camera A and camera B."""
    P1 = np.c_[np.eye(3), np.zeros(3)]
    P2 = np.c_[R, t]
    A = np.stack([
        xa[:, 0, None] * P1[2] - P1[0],
        xa[:, 1, None] * P1[2] - P1[1],
        xb[:, 0, None] * P2[2] - P2[0],
        xb[:, 1, None] * P2[2] - P2[1],
    ], axis=1)
    _, _, vt = np.linalg.svd(A)
    X = vt[:, -1, :]
    w = X[:, 3]
    w = np.where(np.abs(w) < 1e-15, 1e-15, w)
    X = X[:, :3] / w[:, None]
    return X[:, 2], (X @ R.T + t)[:, 2]


def pose_candidates(E: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    R1, R2 = U @ W @ Vt, U @ W.T @ Vt
    t = U[:, 2]
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def recover_pose(E, corr, k_a: Intrinsics, k_b: Intrinsics, pts_b=None) -> CameraPose:
    """Pick the decomposition of ``E`` with the most points in front of both cameras."""
    a, b = _split(corr, pts_b)
    if len(a) < 1:
        raise TooFewPoints("recover_pose needs at least one correspondence")
    R, t = _cheirality_pick(E, normalize_points(a, k_a), normalize_points(b, k_b))
    return CameraPose(R, t / np.linalg.norm(t))


def _cheirality_pick(E, xa, xb):
    counts = []
    cands = pose_candidates(np.asarray(E, dtype=np.float64))
    for R, t in cands:
        za, zb = _triangulate(R, t, xa, xb)
        counts.append(int(np.count_nonzero((za > 0) & (zb > 0))))
    order = np.argsort(counts)[::-1]
    if counts[order[0]] == counts[order[1]]:
        raise CheiralityTie(f"cheirality counts {counts} have no strict winner")
    return cands[order[0]]


# -- evaluation ------------------------------------------------------------------------
@dataclass
class PairEvaluation:
    error: PoseError
    num_inliers: int
    threshold_used: float | None = None
    pose: CameraPose | None = None


def evaluate_pair(matches: MatchSet, kps_a, kps_b, gt: CameraPose, k_a: Intrinsics, k_b: Intrinsics,
                  cfg: RansacConfig = RansacConfig()) -> PairEvaluation:
    """Essential-matrix pose over the threshold grid, keeping the max-inlier threshold.

    Every failure (too few matches, degeneracy, cheirality tie) is reported
    as an infinite error with zero inliers.
    """
    fail = PairEvaluation(PoseError.failure(), 0)
    if len(matches) < 8:
        return fail
    xy_a = kps_a.xy if hasattr(kps_a, "xy") else np.asarray(kps_a)
    xy_b = kps_b.xy if hasattr(kps_b, "xy") else np.asarray(kps_b)
    a = xy_a[matches.pairs[:, 0]]
    b = xy_b[matches.pairs[:, 1]]
    best = None
    for thr in cfg.threshold_grid:
        c = replace(cfg, inlier_threshold=thr)
        try:
            res = ransac_essential(a, k_a, k_b, c, pts_b=b, check_planar=False)
        except (TooFewPoints, DegenerateSample):
            continue
        if best is None or res.num_inliers > best.num_inliers:
            best = res
    if best is None or best.num_inliers < 5:
        return fail
    try:
        pose = recover_pose(best.model, a[best.inliers], k_a, k_b, pts_b=b[best.inliers])
    except (CheiralityTie, TooFewPoints):
        return fail
    return PairEvaluation(pose_error(pose, gt), best.num_inliers, best.threshold_used, pose)
