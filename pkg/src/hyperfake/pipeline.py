"""Shared end-to-end forward path and the reconstruction cube cache.

The frozen reconstruction model is input-deterministic, so cubes are
computed once per frame and cached (in memory always, on disk when a cache
directory is given) keyed by (reconstruction weights hash, frame hash).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .autodiff import Var
from .classifier import ClassifierModel, _stable_sigmoid, classify
from .datamodel import DatasetManifest, SampleRecord, load_frame, read_cube, write_cube
from .errors import IntegrityError, MetricError
from .evaluation import MetricsReport, ScoreSet, build_report
from .reconstruction import ReconstructionModel, recon_header, reconstruct
from .spectral import SpectralAttentionParams, band_descriptors, mixing_scores, spectral_attention, reduce_bands
from .util import archive_bytes, sha256_bytes, sha256_file


def recon_state_hash(model: ReconstructionModel) -> str:
    """Hash of the model's canonical weights archive; equals the sha256 of a
    file produced by `save_recon_weights` for the same model."""
    arrays = {name: var.data.astype(np.float32) for name, var in model.named_params().items()}
    return sha256_bytes(archive_bytes(arrays, recon_header(model)))


class CubeCache:
    def __init__(self, recon_hash: str, cache_dir: str | Path | None = None):
        self.recon_hash = recon_hash
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._memory: dict[str, np.ndarray] = {}

    def _key(self, frame: np.ndarray) -> str:
        return sha256_bytes(self.recon_hash.encode() + frame.tobytes())[:32]

    def cube_for(self, frame: np.ndarray, model: ReconstructionModel) -> np.ndarray:
        key = self._key(frame)
        cube = self._memory.get(key)
        if cube is not None:
            return cube
        if self.cache_dir is not None:
            path = self.cache_dir / f"{key}.hsc1"
            if path.exists():
                cube = read_cube(path)
                self._memory[key] = cube
                return cube
        cube = reconstruct(frame, model).astype(np.float32)
        self._memory[key] = cube
        if self.cache_dir is not None:
            write_cube(cube, self.cache_dir / f"{key}.hsc1")
        return cube


def load_split_cubes(
    manifest: DatasetManifest,
    split: str,
    resolution: tuple[int, int],
    recon: ReconstructionModel,
    cache: CubeCache | None = None,
) -> tuple[np.ndarray, np.ndarray, list[SampleRecord]]:
    """Frames of one split -> stacked cubes (N,31,H,W) float32 plus labels."""
    records = manifest.split_records(split)
    if not records:
        raise MetricError(f"split {split!r} is empty")
    cache = cache or CubeCache(recon_state_hash(recon))
    cubes, labels = [], []
    for rec in records:
        frame = load_frame(rec, resolution, root=manifest.root)
        cubes.append(cache.cube_for(frame, recon))
        labels.append(rec.label)
    return np.stack(cubes), np.array(labels, dtype=np.int64), records


def cube_logits(
    cubes, spectral: SpectralAttentionParams, model: ClassifierModel, train: bool = False
) -> Var:
    """(B,31,H,W) cubes -> (B,) logits through descriptors, band attention,
    mixing, reduction and the classifier. Gradients reach only the spectral
    and classifier parameters (cubes enter as constants)."""
    x = cubes if isinstance(cubes, Var) else Var(np.asarray(cubes))
    descriptors = band_descriptors(x, spectral.pool_size)
    values, _ = spectral_attention(descriptors, spectral)
    alpha = mixing_scores(values, spectral)
    reduced = reduce_bands(x, alpha)
    return classify(reduced, model, train)


def cube_probabilities(
    cubes: np.ndarray, spectral: SpectralAttentionParams, model: ClassifierModel
) -> np.ndarray:
    logits = cube_logits(cubes, spectral, model, train=False)
    return _stable_sigmoid(logits.data.astype(np.float64))


def frame_probability(
    frame: np.ndarray,
    recon: ReconstructionModel,
    spectral: SpectralAttentionParams,
    model: ClassifierModel,
) -> float:
    cube = reconstruct(frame, recon).astype(np.float32)
    return float(cube_probabilities(cube[None], spectral, model)[0])


def evaluate_checkpoint(
    checkpoint_path,
    manifest: DatasetManifest,
    split: str,
    recon,
    out_path=None,
    threshold: float = 0.5,
    cache: CubeCache | None = None,
    per_video: bool = False,
) -> MetricsReport:
    """Run the full inference pipeline over one split and build the report.

    `recon` is a weights archive path (hash-checked against the checkpoint's
    recorded hash) or an already-loaded ReconstructionModel (hashed from its
    canonical serialization). With `per_video`, frame probabilities are
    averaged per video_id and metrics are computed over videos (the single
    supported aggregation)."""
    from .reconstruction import load_recon_weights
    from .training import restore_pipeline

    spectral, model, header = restore_pipeline(checkpoint_path)
    if isinstance(recon, ReconstructionModel):
        recon_model, recon_hash = recon, recon_state_hash(recon)
    else:
        recon_model, recon_hash = load_recon_weights(recon), sha256_file(recon)
    if recon_hash != header["recon_weights_hash"]:
        raise IntegrityError(
            "reconstruction weights hash does not match the checkpoint "
            f"({recon_hash[:12]}... vs {header['recon_weights_hash'][:12]}...)"
        )
    resolution = model.config.input_resolution
    cubes, labels, records = load_split_cubes(manifest, split, resolution, recon_model, cache)
    probs = cube_probabilities(cubes, spectral, model)
    if per_video:
        by_video: dict[str, list[int]] = {}
        for i, rec in enumerate(records):
            by_video.setdefault(rec.video_id, []).append(i)
        video_ids = sorted(by_video)
        probs = np.array([probs[by_video[v]].mean() for v in video_ids])
        labels = np.array([labels[by_video[v][0]] for v in video_ids])
    report = build_report(
        ScoreSet(probs, labels),
        split=split,
        threshold=threshold,
        provenance={
            "checkpoint_hash": sha256_file(checkpoint_path),
            "recon_hash": recon_hash,
            "seed": int(header["seed"]),
        },
    )
    if out_path is not None:
        report.write_json(out_path)
    return report
