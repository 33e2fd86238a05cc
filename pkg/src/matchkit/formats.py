"""Readers and writers for every on-disk artifact.

Text formats carry a ``# matchkit-<what> v1`` header; binary containers
(descriptors "MKDS", checkpoints "MKPW") are little-endian.
"""

from __future__ import annotations

import csv
import io
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .features import Keypoints, MatchSet
from .geometry import CameraPose, Homography, Intrinsics, auc
from .gtlabel import GTLabels
from .matcher import MatcherParams, SourceSpec

KP_HEADER = "# matchkit-keypoints v1"
LABELS_HEADER = "# matchkit-labels v1"
MATCHES_HEADER = "# matchkit-matches v1"
MANIFEST_HEADER = "# matchkit-manifest v1"
MKDS_MAGIC = b"MKDS"
MKPW_MAGIC = b"MKPW"
REPORT_FIELDS = ["pair_id", "detector", "descriptor", "matcher", "num_matches", "num_inliers",
                 "rot_deg", "trans_deg", "max_deg"]


def atomic_write(path, data: bytes | str):
    """Write via a temporary sibling and rename, so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".part")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"})) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _header_fields(line: str, header: str) -> dict[str, str]:
    if not line.startswith(header):
        raise FormatError(f"expected header {header!r}, got {line[:40]!r}")
    out = {}
    for tok in line[len(header):].split():
        if "=" not in tok:
            raise FormatError(f"malformed header token {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def _lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln.rstrip("\n") for ln in fh]


# -- keypoints -----------------------------------------------------------------
def format_keypoints(kps: Keypoints, width: int, height: int) -> str:
    buf = [f"{KP_HEADER} count={len(kps)} width={int(width)} height={int(height)}"]
    for (x, y), s, sc, did in zip(kps.xy, kps.scale, kps.score, kps.detector_id):
        did = str(did)
        if not did or any(c.isspace() for c in did):
            raise FormatError(f"detector_id {did!r} must be a nonempty token without whitespace")
        buf.append(f"{x:.6f} {y:.6f} {s:.6f} {sc:.6f} {did}")
    return "\n".join(buf) + "\n"


def write_keypoints(path, kps: Keypoints, width: int, height: int):
    atomic_write(path, format_keypoints(kps, width, height))


def read_keypoints(path) -> tuple[Keypoints, int, int]:
    lines = _lines(path)
    if not lines:
        raise FormatError("empty keypoint file")
    hdr = _header_fields(lines[0], KP_HEADER)
    try:
        n, w, h = int(hdr["count"]), int(hdr["width"]), int(hdr["height"])
    except (KeyError, ValueError) as e:
        raise FormatError(f"bad keypoint header: {e}") from None
    rows = [ln.split() for ln in lines[1:] if ln.strip()]
    if len(rows) != n:
        raise FormatError(f"header says {n} keypoints, file has {len(rows)}")
    if any(len(r) != 5 for r in rows):
        raise FormatError("keypoint records need 5 fields")
    if not rows:
        return Keypoints.empty(), w, h
    num = np.array([[float(v) for v in r[:4]] for r in rows])
    ids = np.array([r[4] for r in rows], dtype=object)
    return Keypoints(num[:, :2], num[:, 2], num[:, 3], ids), w, h


# -- descriptors / depth ------------------------------------------------------------
def encode_mkds(arr: np.ndarray, binary: bool = False, dim: int | None = None) -> bytes:
    """``binary``: ``arr`` is (count, ceil(dim/8)) packed bits; otherwise real rows as f32."""
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise FormatError("descriptor payload must be 2-D")
    count = arr.shape[0]
    if binary:
        dim = arr.shape[1] * 8 if dim is None else dim
        if arr.shape[1] != (dim + 7) // 8:
            raise FormatError("packed width does not match dim")
        payload = np.ascontiguousarray(arr, dtype=np.uint8).tobytes()
    else:
        dim = arr.shape[1]
        payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return MKDS_MAGIC + struct.pack("<IIIB", 1, count, dim, 1 if binary else 0) + payload


def decode_mkds(data: bytes) -> tuple[np.ndarray, bool]:
    if data[:4] != MKDS_MAGIC:
        raise FormatError("not an MKDS container")
    if len(data) < 17:
        raise FormatError("truncated MKDS header")
    version, count, dim, kind = struct.unpack("<IIIB", data[4:17])
    if version != 1:
        raise FormatError(f"unsupported MKDS version {version}")
    body = data[17:]
    if kind == 0:
        if len(body) != count * dim * 4:
            raise FormatError("MKDS payload length mismatch")
        return np.frombuffer(body, dtype="<f4").reshape(count, dim).astype(np.float32), False
    if kind == 1:
        width = (dim + 7) // 8
        if len(body) != count * width:
            raise FormatError("MKDS payload length mismatch")
        return np.frombuffer(body, dtype=np.uint8).reshape(count, width).copy(), True
    raise FormatError(f"unknown MKDS kind {kind}")


def write_descriptors(path, arr, binary: bool = False):
    atomic_write(path, encode_mkds(arr, binary))


def read_descriptors(path) -> tuple[np.ndarray, bool]:
    return decode_mkds(Path(path).read_bytes())


def write_depth(path, depth: np.ndarray):
    atomic_write(path, encode_mkds(np.asarray(depth, dtype=np.float32), False))


def read_depth(path) -> np.ndarray:
    arr, binary = read_descriptors(path)
    if binary:
        raise FormatError("depth must be stored as real MKDS")
    return arr.astype(np.float64)


# -- images ----------------------------------------------------------------------------
def quantize(img: np.ndarray) -> np.ndarray:
    """Round [0,1] intensities to 8 bits and back, as a PGM round trip does."""
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255) / 255.0


def encode_pgm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    h, w = img.shape
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FormatError("only binary PGM (P5) is supported")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise FormatError("only 8-bit PGM is supported")
    body = data[pos + 1:pos + 1 + w * h]
    if len(body) != w * h:
        raise FormatError("truncated PGM payload")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def write_pgm(path, img):
    atomic_write(path, encode_pgm(img))


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


# -- labels / matches ----------------------------------------------------------------
def format_labels(lab: GTLabels) -> str:
    buf = [f"{LABELS_HEADER} num_a={lab.num_a} num_b={lab.num_b}"]
    buf += [f"M {i} {j}" for i, j in lab.matches]
    buf += [f"NA {i}" for i in lab.negatives_a]
    buf += [f"NB {j}" for j in lab.negatives_b]
    buf += [f"IA {i}" for i in lab.ignored_a]
    buf += [f"IB {j}" for j in lab.ignored_b]
    return "\n".join(buf) + "\n"


def write_labels(path, lab: GTLabels):
    atomic_write(path, format_labels(lab))


def read_labels(path) -> GTLabels:
    lines = _lines(path)
    if not lines:
        raise FormatError("empty labels file")
    hdr = _header_fields(lines[0], LABELS_HEADER)
    groups = {"M": [], "NA": [], "NB": [], "IA": [], "IB": []}
    for ln in lines[1:]:
        if not ln.strip():
            continue
        tag, *vals = ln.split()
        if tag not in groups or len(vals) != (2 if tag == "M" else 1):
            raise FormatError(f"bad labels line {ln!r}")
        groups[tag].append([int(v) for v in vals])
    m = np.array(groups["M"], dtype=np.int64).reshape(-1, 2)
    one = lambda k: np.array(groups[k], dtype=np.int64).reshape(-1)  # noqa: E731
    num_a = int(hdr.get("num_a", -1))
    num_b = int(hdr.get("num_b", -1))
    return GTLabels(m, one("NA"), one("NB"), one("IA"), one("IB"), num_a, num_b)


def format_matches(ms: MatchSet) -> str:
    buf = [MATCHES_HEADER]
    buf += [f"{i} {j} {c:.6f}" for (i, j), c in zip(ms.pairs, ms.confidence)]
    return "\n".join(buf) + "\n"


def write_matches(path, ms: MatchSet):
    atomic_write(path, format_matches(ms))


def read_matches(path) -> MatchSet:
    lines = _lines(path)
    if not lines or lines[0].strip() != MATCHES_HEADER:
        raise FormatError("missing matches header")
    rows = [ln.split() for ln in lines[1:] if ln.strip()]
    if any(len(r) != 3 for r in rows):
        raise FormatError("match records need 3 fields")
    if not rows:
        return MatchSet.empty()
    return MatchSet(np.array([[int(r[0]), int(r[1])] for r in rows]), np.array([float(r[2]) for r in rows]))


# -- checkpoints -----------------------------------------------------------------------
_KIND_CODE = {"real": 0, "binary": 1, "patch": 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def _name(b: str) -> bytes:
    raw = b.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def encode_checkpoint(p: MatcherParams) -> bytes:
    out = io.BytesIO()
    out.write(MKPW_MAGIC)
    out.write(struct.pack("<IIIIdQ", 1, p.d, p.num_layers, p.num_heads, p.rope_scale, p.seed))
    out.write(struct.pack("<I", len(p.sources)))
    for name in sorted(p.sources):
        s = p.sources[name]
        out.write(_name(name) + struct.pack("<IB", s.dim, _KIND_CODE[s.kind]))
    out.write(struct.pack("<I", len(p.blocks)))
    for name in sorted(p.blocks):
        arr = np.ascontiguousarray(p.blocks[name], dtype="<f8")
        out.write(_name(name))
        out.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(struct.pack("<Q", arr.size))
        out.write(arr.tobytes())
    return out.getvalue()


def decode_checkpoint(data: bytes) -> MatcherParams:
    buf = memoryview(data)
    pos = 0

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise FormatError("truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    def take_name():
        nonlocal pos
        (n,) = take("<H")
        if pos + n > len(buf):
            raise FormatError("truncated checkpoint")
        s = bytes(buf[pos:pos + n]).decode("utf-8")
        pos += n
        return s

    if bytes(buf[:4]) != MKPW_MAGIC:
        raise FormatError("not an MKPW checkpoint")
    pos = 4
    version, d, L, heads, rope, seed = take("<IIIIdQ")
    if version != 1:
        raise FormatError(f"unsupported checkpoint version {version}")
    (ns,) = take("<I")
    sources = {}
    for _ in range(ns):
        name = take_name()
        dim, kind = take("<IB")
        if kind not in _CODE_KIND:
            raise FormatError(f"unknown source kind code {kind}")
        sources[name] = SourceSpec(dim, _CODE_KIND[kind])
    (nb,) = take("<I")
    blocks = {}
    for _ in range(nb):
        name = take_name()
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I") if ndim else ()
        (size,) = take("<Q")
        if size != math.prod(shape):
            raise FormatError(f"block {name}: length {size} does not match shape {shape}")
        if pos + 8 * size > len(buf):
            raise FormatError("truncated checkpoint")
        blocks[name] = np.frombuffer(buf[pos:pos + 8 * size], dtype="<f8").reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(buf):
        raise FormatError("trailing bytes after checkpoint")
    return MatcherParams(d, L, heads, sources, blocks, rope, seed)


def save_checkpoint(path, p: MatcherParams):
    atomic_write(path, encode_checkpoint(p))


def load_checkpoint(path) -> MatcherParams:
    return decode_checkpoint(Path(path).read_bytes())


# -- pair geometry sidecars ----------------------------------------------------------------
def format_homography(h: Homography) -> str:
    return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in h.h) + "\n"


def parse_homography(text: str) -> Homography:
    vals = [float(v) for v in text.split()]
    if len(vals) != 9:
        raise FormatError("homography file needs 9 numbers")
    return Homography(np.array(vals).reshape(3, 3))


def format_pose(pose: CameraPose, k_a: Intrinsics, k_b: Intrinsics) -> str:
    f = lambda vs: " ".join(f"{v:.17g}" for v in vs)  # noqa: E731
    return (f"R {f(pose.R.ravel())}\nt {f(pose.t)}\n"
            f"ka {f([k_a.fx, k_a.fy, k_a.cx, k_a.cy])}\nkb {f([k_b.fx, k_b.fy, k_b.cx, k_b.cy])}\n")


def parse_pose(text: str) -> tuple[CameraPose, Intrinsics, Intrinsics]:
    rec = {}
    for ln in text.splitlines():
        if ln.strip():
            tag, *vals = ln.split()
            rec[tag] = np.array([float(v) for v in vals])
    try:
        return (CameraPose(rec["R"].reshape(3, 3), rec["t"]), Intrinsics(*rec["ka"]), Intrinsics(*rec["kb"]))
    except (KeyError, ValueError, TypeError) as e:
        raise FormatError(f"bad pose file: {e}") from None


# -- manifests ---------------------------------------------------------------------------------
@dataclass(frozen=True)
class ManifestItem:
    item_id: str
    seed: int
    kind: str
    paths: tuple[str, ...]


def format_manifest(items: list[ManifestItem]) -> str:
    buf = [MANIFEST_HEADER]
    for it in items:
        for tok in (it.item_id, it.kind, *it.paths):
            if not tok or any(c.isspace() for c in tok):
                raise FormatError(f"manifest token {tok!r} must be nonempty without whitespace")
        buf.append(" ".join([it.item_id, str(it.seed), it.kind, *it.paths]))
    return "\n".join(buf) + "\n"


def write_manifest(path, items):
    atomic_write(path, format_manifest(list(items)))


def read_manifest(path) -> list[ManifestItem]:
    lines = _lines(path)
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise FormatError("missing manifest header")
    out = []
    for ln in lines[1:]:
        if not ln.strip() or ln.startswith("#"):
            continue
        toks = ln.split()
        if len(toks) < 3:
            raise FormatError(f"bad manifest line {ln!r}")
        try:
            seed = int(toks[1])
        except ValueError:
            raise FormatError(f"bad seed in manifest line {ln!r}") from None
        out.append(ManifestItem(toks[0], seed, toks[2], tuple(toks[3:])))
    return out


# -- evaluation reports -------------------------------------------------------------------------
def _fmt_float(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.6f}"


def format_report(rows: list[dict]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for r in rows:
        w.writerow([r["pair_id"], r["detector"], r["descriptor"], r["matcher"], int(r["num_matches"]),
                    int(r["num_inliers"]), _fmt_float(r["rot_deg"]), _fmt_float(r["trans_deg"]),
                    _fmt_float(r["max_deg"])])
    return out.getvalue()


def parse_report(text: str) -> list[dict]:
    rd = csv.reader(io.StringIO(text))
    try:
        header = next(rd)
    except StopIteration:
        raise FormatError("empty report") from None
    if header != REPORT_FIELDS:
        raise FormatError(f"unexpected report columns {header}")
    rows = []
    for rec in rd:
        if len(rec) != len(REPORT_FIELDS):
            raise FormatError(f"bad report row {rec}")
        r = dict(zip(REPORT_FIELDS, rec))
        for k in ("num_matches", "num_inliers"):
            r[k] = int(r[k])
        for k in ("rot_deg", "trans_deg", "max_deg"):
            r[k] = float(r[k])
        rows.append(r)
    return rows


def summary_from_rows(rows: list[dict], thresholds=(5.0, 10.0, 20.0)) -> dict[str, float]:
    errs = [r["max_deg"] for r in rows]
    thresholds = [float(t) for t in thresholds]
    out = dict(zip((f"auc@{t:g}" for t in thresholds), auc(errs, thresholds)))
    out["mean_inliers"] = float(np.mean([r["num_inliers"] for r in rows])) if rows else 0.0
    return out


def format_summary(summary: dict[str, float]) -> str:
    return "metric,value\n" + "".join(f"{k},{v:.12g}\n" for k, v in summary.items())


def parse_summary(text: str) -> dict[str, float]:
    rd = csv.reader(io.StringIO(text))
    if next(rd, None) != ["metric", "value"]:
        raise FormatError("bad summary header")
    return {k: float(v) for k, v in rd}


def load_report(report_path, summary_path=None, tol: float = 1e-9) -> tuple[list[dict], dict[str, float]]:
    """Read a report and check its stored AUC aggregates against the rows."""
    rows = parse_report(Path(report_path).read_text(encoding="utf-8"))
    if summary_path is None:
        return rows, summary_from_rows(rows)
    stored = parse_summary(Path(summary_path).read_text(encoding="utf-8"))
    fresh = summary_from_rows(rows, [float(k[4:]) for k in stored if k.startswith("auc@")])
    for k, v in fresh.items():
        if k.startswith("auc@") and abs(stored.get(k, float("nan")) - v) > tol:
            raise FormatError(f"stored {k}={stored.get(k)} disagrees with rows ({v})")
    return rows, stored
