"""Dataset manifests, frame and cube I/O, and the synthetic corpus generator.

Manifests are JSON-Lines with exactly the fields
{frame_path, label, split, video_id, frame_index}; frame paths are stored
relative to the manifest's directory so generated trees are relocatable.
Cubes use the HSC1 container: magic "HSC1", little-endian uint32 C,H,W,
then C*H*W float32 values band-major, row-major.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import (
    ChannelError,
    FormatError,
    LeakageError,
    SchemaError,
    ShapeError,
    StratificationError,
    ValidationError,
)
from .kernels import pybackend
from .util import derive_rng

MANIFEST_FIELDS = ("frame_path", "label", "split", "video_id", "frame_index")
SPLITS = ("train", "val", "test")
BANDS = 31
_HSC1_MAGIC = b"HSC1"


@dataclass(frozen=True)
class SampleRecord:
    frame_path: str
    label: int
    split: str
    video_id: str
    frame_index: int


@dataclass
class DatasetManifest:
    records: list[SampleRecord]
    seed: int | None = None
    resolution: tuple[int, int] | None = None
    root: Path | None = field(default=None, compare=False)

    def split_records(self, split: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == split]


def validate_frame(pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise ShapeError(f"frame must be 3xHxW, got {pixels.shape}")
    if not np.all(np.isfinite(pixels)):
        raise ValidationError("frame contains non-finite values")
    if pixels.min() < 0.0 or pixels.max() > 1.0:
        raise ValidationError("frame values must lie in [0, 1]")
    return pixels


def validate_cube(bands: np.ndarray) -> np.ndarray:
    bands = np.asarray(bands)
    if bands.ndim != 3 or bands.shape[0] != BANDS:
        raise ShapeError(f"cube must be {BANDS}xHxW, got {bands.shape}")
    if not np.all(np.isfinite(bands)):
        raise ValidationError("cube contains non-finite values")
    return bands


# -- manifests ---------------------------------------------------------------


def _validate_records(records: list[SampleRecord]) -> None:
    if not records:
        raise ValidationError("empty manifest")
    video_split: dict[str, str] = {}
    split_labels: dict[str, set[int]] = {}
    for rec in records:
        prior = video_split.setdefault(rec.video_id, rec.split)
        if prior != rec.split:
            raise LeakageError(
                f"video {rec.video_id!r} appears in splits {prior!r} and {rec.split!r}"
            )
        split_labels.setdefault(rec.split, set()).add(rec.label)
    for split, labels in split_labels.items():
        if labels != {0, 1}:
            raise ValidationError(f"split {split!r} lacks one of the labels (has {sorted(labels)})")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    records: list[SampleRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(row, dict):
                raise SchemaError(f"line {lineno}: expected an object")
            missing = [k for k in MANIFEST_FIELDS if k not in row]
            if missing:
                raise SchemaError(f"line {lineno}: missing field(s) {missing}")
            extra = [k for k in row if k not in MANIFEST_FIELDS]
            if extra:
                raise SchemaError(f"line {lineno}: unknown field(s) {extra}")
            if row["label"] not in (0, 1):
                raise ValidationError(f"line {lineno}: label must be 0 or 1, got {row['label']!r}")
            if row["split"] not in SPLITS:
                raise ValidationError(f"line {lineno}: split must be one of {SPLITS}")
            if not isinstance(row["frame_index"], int) or row["frame_index"] < 0:
                raise ValidationError(f"line {lineno}: frame_index must be a non-negative integer")
            records.append(
                SampleRecord(
                    frame_path=str(row["frame_path"]),
                    label=int(row["label"]),
                    split=str(row["split"]),
                    video_id=str(row["video_id"]),
                    frame_index=int(row["frame_index"]),
                )
            )
    _validate_records(records)
    return DatasetManifest(records=records, root=path.parent)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in manifest.records:
            row = {
                "frame_path": rec.frame_path,
                "label": rec.label,
                "split": rec.split,
                "video_id": rec.video_id,
                "frame_index": rec.frame_index,
            }
            fh.write(json.dumps(row, separators=(", ", ": ")) + "\n")


# -- frames ------------------------------------------------------------------


def load_frame(
    record: SampleRecord | str | Path,
    resolution: tuple[int, int],
    root: Path | None = None,
) -> np.ndarray:
    """Decode, center-crop to square, bilinear-resize, scale to [0,1] RGB.

    Returns a float32 array of shape (3, H, W).
    """
    rel = record.frame_path if isinstance(record, SampleRecord) else str(record)
    path = Path(rel)
    if not path.is_absolute() and root is not None:
        path = Path(root) / path
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"cannot decode image {path}")
    if raw.ndim != 3 or raw.shape[2] != 3:
        nch = 1 if raw.ndim == 2 else raw.shape[2]
        raise ChannelError(f"expected 3-channel image, got {nch} channel(s) in {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ValidationError(f"unsupported image dtype {raw.dtype} in {path}")
    rgb = raw[:, :, ::-1].astype(np.float32) / np.float32(scale)
    h, w = rgb.shape[:2]
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    rgb = rgb[top : top + side, left : left + side]
    chw = np.ascontiguousarray(rgb.transpose(2, 0, 1))
    th, tw = resolution
    if (side, side) != (th, tw):
        chw = pybackend.resize_bilinear(chw[None], th, tw)[0]
    return validate_frame(np.clip(chw, 0.0, 1.0))


def write_frame_png(pixels: np.ndarray, path: str | Path) -> None:
    """Store a (3,H,W) [0,1] frame as an 8-bit RGB PNG."""
    pixels = validate_frame(pixels)
    hwc = np.clip(np.rint(pixels.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), hwc[:, :, ::-1]):
        raise IOError(f"cannot write PNG {path}")


# -- cubes (HSC1) --------------------------------------------------------------


def write_cube(cube: np.ndarray, path: str | Path) -> None:
    cube = validate_cube(cube)
    c, h, w = cube.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HSC1_MAGIC)
        fh.write(struct.pack("<III", c, h, w))
        fh.write(np.ascontiguousarray(cube, dtype="<f4").tobytes())


def read_cube(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != _HSC1_MAGIC:
        raise FormatError(f"{path}: bad magic (expected HSC1)")
    c, h, w = struct.unpack("<III", blob[4:16])
    if c != BANDS:
        raise FormatError(f"{path}: expected {BANDS} bands, header claims {c}")
    expected = 16 + 4 * c * h * w
    if len(blob) != expected:
        raise FormatError(f"{path}: truncated or oversized payload ({len(blob)} != {expected})")
    return np.frombuffer(blob, dtype="<f4", offset=16).reshape(c, h, w).copy()


# -- splitting -----------------------------------------------------------------


def split_dataset(
    records: list[SampleRecord], fractions: tuple[float, float], seed: int
) -> list[SampleRecord]:
    """Reassign train/val splits video-wise, stratified by label.

    All frames of a video land in one split; per label, round(frac*n) videos
    go to train (clamped so both splits stay non-empty per label).
    """
    train_frac, val_frac = fractions
    if train_frac <= 0 or val_frac <= 0 or abs(train_frac + val_frac - 1.0) > 1e-9:
        raise ValidationError(f"fractions must be positive and sum to 1, got {fractions}")
    video_label: dict[str, int] = {}
    for rec in records:
        prior = video_label.setdefault(rec.video_id, rec.label)
        if prior != rec.label:
            raise ValidationError(f"video {rec.video_id!r} has mixed labels")
    assignment: dict[str, str] = {}
    for label in (0, 1):
        vids = sorted(v for v, lab in video_label.items() if lab == label)
        if len(vids) < 2:
            raise StratificationError(
                f"need at least 2 distinct videos for label {label}, got {len(vids)}"
            )
        k = int(math.floor(train_frac * len(vids) + 0.5))
        k = min(max(k, 1), len(vids) - 1)
        order = derive_rng(seed, "split", label).permutation(len(vids))
        for pos, idx in enumerate(order):
            assignment[vids[idx]] = "train" if pos < k else "val"
    return [
        SampleRecord(r.frame_path, r.label, assignment[r.video_id], r.video_id, r.frame_index)
        for r in records
    ]


# -- synthetic corpus -----------------------------------------------------------


def _cosine_field(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Smooth low-frequency field: sum of <=4 random 2-D cosines per channel,
    min-max rescaled to [0.2, 0.8]."""
    ys, xs = np.meshgrid(np.linspace(0, 1, h, endpoint=False),
                         np.linspace(0, 1, w, endpoint=False), indexing="ij")
    out = np.empty((3, h, w), dtype=np.float64)
    for c in range(3):
        n_waves = int(rng.integers(1, 5))
        acc = np.zeros((h, w))
        for _ in range(n_waves):
            amp = rng.uniform(0.3, 1.0)
            fx, fy = rng.uniform(0.5, 2.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            acc += amp * np.cos(2 * np.pi * (fx * xs + fy * ys) + phase)
        lo, hi = acc.min(), acc.max()
        if hi - lo < 1e-12:
            out[c] = 0.5
        else:
            out[c] = 0.2 + 0.6 * (acc - lo) / (hi - lo)
    return out


def _ellipse_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Random elliptical region covering 25-50% of the frame (rejection-sampled
    so border clipping cannot shrink coverage below range)."""
    ys, xs = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    for _ in range(200):
        frac = rng.uniform(0.25, 0.50)
        ratio = rng.uniform(0.5, 2.0)
        a = math.sqrt(frac * ratio / math.pi)
        b = math.sqrt(frac / (ratio * math.pi))
        cx, cy = rng.uniform(0.3, 0.7, size=2)
        theta = rng.uniform(0, math.pi)
        dx, dy = xs - cx, ys - cy
        u = dx * math.cos(theta) + dy * math.sin(theta)
        v = -dx * math.sin(theta) + dy * math.cos(theta)
        mask = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        cover = mask.mean()
        if 0.25 <= cover <= 0.50:
            return mask
    return mask  # pragma: no cover - 200 draws virtually always suffice


def synth_dataset(
    n_per_class: int, resolution: tuple[int, int], seed: int, out_dir: str | Path
) -> DatasetManifest:
    """Generate a deterministic synthetic corpus.

    Real frames are smooth random color fields; fakes additionally get a
    localized cross-channel remix (I + 0.15*P inside a random ellipse), an
    inter-channel artifact that is nearly invisible per channel.
    """
    if n_per_class < 2:
        raise ValidationError("n_per_class must be >= 2")
    h, w = resolution
    if h < 16 or w < 16:
        raise ValidationError("resolution must be at least 16x16")
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    mix = np.eye(3) + 0.15 * derive_rng(seed, "mix").standard_normal((3, 3))
    records: list[SampleRecord] = []
    for label, name in ((0, "real"), (1, "fake")):
        for v in range(n_per_class):
            rng = derive_rng(seed, "frame", name, v)
            frame = _cosine_field(rng, h, w)
            if label == 1:
                mask = _ellipse_mask(rng, h, w)
                remixed = np.einsum("dc,chw->dhw", mix, frame)
                frame = np.where(mask[None], remixed, frame)
            frame = np.clip(frame, 0.0, 1.0)
            video_id = f"{name}_v{v:03d}"
            rel = f"frames/{video_id}_f0.png"
            write_frame_png(frame.astype(np.float32), out_dir / rel)
            records.append(SampleRecord(rel, label, "train", video_id, 0))
    records = split_dataset(records, (0.7, 0.3), seed)
    manifest = DatasetManifest(records=records, seed=seed, resolution=(h, w), root=out_dir)
    write_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
