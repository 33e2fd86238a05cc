"""Flat ``key = value`` run configuration; unknown keys are rejected."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from ..errors import ValidationError


@dataclass(frozen=True)
class RunConfig:
    # data
    kind: str = "homography"  # homography | posed
    count: int = 20
    width: int = 256
    height: int = 256
    train_pairs: int = 200
    eval_pairs: int = 50
    # detection / description
    detector: str = "corner"  # corner | blob | blob_wide
    max_keypoints: int = 512
    nms_radius: float = 3.0
    single_scale: bool = True
    num_scales: int = 5
    min_side: int = 256
    descriptor: str = "dsift"  # dsift | brief | don
    stride: int = 2
    patch_size: int = 15
    # clutter arm (clutter = true switches detect/train/eval to the cluttered policy)
    clutter: bool = False
    clutter_mode: str = "duplicate_offset"
    clutter_magnitude: float = 1.5
    clutter_min_side: int = 128
    # labels
    match_threshold: float = 3.0
    # matcher
    model_dim: int = 64
    num_layers: int = 4
    num_heads: int = 4
    rope_scale: float = 32.0
    confidence: float = 0.1
    matcher: str = "learned"  # learned | mnn | ratio
    ratio: float = 0.8
    # optimisation
    epochs: int = 2
    lr_initial: float = 1e-3
    lr_final: float = 1e-4
    decay_epochs: int = 2
    batch_size: int = 4
    grad_clip: float = 1.0
    finetune_epochs: int = 2
    finetune_lr_initial: float = 3e-4
    finetune_lr_final: float = 3e-5
    # robust estimation / evaluation
    ransac_iterations: int = 2000
    ransac_thresholds: tuple = (0.5, 1.0, 2.0)
    auc_thresholds: tuple = (5.0, 10.0, 20.0)
    # ensemble
    budgets: tuple = (256, 512)
    cross_nms_radius: float = 3.0
    # ablation
    experiment: str = "all"  # nearby | cross_detector | ensemble | all

    def __post_init__(self):
        checks = [
            (self.kind in ("homography", "posed"), "kind must be homography or posed"),
            (self.count >= 0 and self.train_pairs >= 0 and self.eval_pairs >= 0, "counts must be >= 0"),
            (self.width >= 16 and self.height >= 16, "images must be at least 16x16"),
            (self.detector in ("corner", "blob", "blob_wide"), f"unknown detector {self.detector!r}"),
            (self.descriptor in ("dsift", "brief", "don"), f"unknown descriptor {self.descriptor!r}"),
            (self.matcher in ("learned", "mnn", "ratio"), f"unknown matcher {self.matcher!r}"),
            (self.max_keypoints >= 1, "max_keypoints must be >= 1"),
            (0 < self.confidence < 1, "confidence must lie in (0, 1)"),
            (list(self.auc_thresholds) == sorted(self.auc_thresholds) and len(self.auc_thresholds) > 0,
             "auc_thresholds must be ascending"),
            (len(self.ransac_thresholds) > 0, "ransac_thresholds must be nonempty"),
            (self.experiment in ("nearby", "cross_detector", "ensemble", "all"), f"unknown experiment {self.experiment!r}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValidationError(msg)

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"


_FIELDS = {f.name: f for f in fields(RunConfig)}
_DEFAULTS = RunConfig()


def _coerce(key: str, raw: str):
    default = getattr(_DEFAULTS, key)
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            elem = type(default[0]) if default else float
            return tuple(elem(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ValidationError(f"config key {key!r}: cannot parse {raw!r}") from None


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    updates = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {n}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ValidationError(f"config line {n}: unknown key {key!r}")
        updates[key] = _coerce(key, raw)
    return replace(base or RunConfig(), **updates)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file {p} does not exist")
    return parse_config_text(p.read_text(encoding="utf-8"))


def derive_seed(seed: int, arm: str) -> int:
    """Per-arm seed: ``seed`` xor a stable 64-bit hash of the arm name."""
    h = int.from_bytes(hashlib.sha256(arm.encode("utf-8")).digest()[:8], "little")
    return (int(seed) ^ h) & 0xFFFFFFFFFFFFFFFF
