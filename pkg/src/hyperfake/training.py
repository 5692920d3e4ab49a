"""End-to-end optimization of the band attention + classifier with the
reconstruction network frozen: Adam with cosine learning-rate decay,
deterministic seeding, and bit-exact checkpoint/resume.

Determinism contract: parameter init streams derive from (seed, "init", *),
the epoch shuffle from (seed, "shuffle", epoch), and checkpoints are
deterministic zip archives, so (seed, data, config) fixes every byte of the
run's outputs. The serialized train config omits checkpoint_dir so runs
into different directories stay bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Var
from .classifier import ClassifierConfig, ClassifierModel, bce_loss_var
from .datamodel import DatasetManifest
from .errors import (
    CheckpointError,
    ConfigError,
    DomainError,
    NumericError,
    ValidationError,
)
from .nn import Buffer
from .pipeline import CubeCache, cube_logits, cube_probabilities, load_split_cubes
from .reconstruction import ReconstructionModel, load_recon_weights, save_recon_weights
from .spectral import SpectralAttentionParams, SpectralConfig
from .util import derive_rng, read_array_archive, sha256_file, write_array_archive

CHECKPOINT_KIND = "hyperfake-checkpoint"
CHECKPOINT_VERSION = 1
CHECKPOINT_NAME = "checkpoint.hfc"
RECON_WEIGHTS_NAME = "recon_weights.hfw"
HISTORY_NAME = "history.json"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr0: float = 1e-3
    lr_min: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every: int = 50
    checkpoint_dir: str = "run"

    def validate(self) -> "TrainConfig":
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("epochs, batch_size and eval_every must be positive")
        if not 0.0 < self.lr_min <= self.lr0:
            raise ConfigError("need 0 < lr_min <= lr0")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ConfigError("betas must lie in (0, 1)")
        if self.adam_eps <= 0.0:
            raise ConfigError("adam_eps must be positive")
        return self

    def serializable(self) -> dict:
        out = asdict(self)
        out.pop("checkpoint_dir")  # path-free header keeps checkpoints location-independent
        return out


def cosine_lr(step: int, total_steps: int, lr0: float, lr_min: float) -> float:
    """lr_min + (lr0-lr_min)/2 * (1 + cos(pi * step/total_steps))."""
    if total_steps < 1:
        raise DomainError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise DomainError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, Var]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, Var],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """One in-place Adam update with bias correction."""
    if lr <= 0:
        raise DomainError("learning rate must be positive")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, param in params.items():
        g = grads[name]
        if g is None or not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if g.shape != param.data.shape:
            raise ConfigError(f"gradient shape mismatch for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


@dataclass
class TrainState:
    step: int
    epoch: int
    spectral: SpectralAttentionParams
    model: ClassifierModel
    adam: AdamState
    history: list[dict] = field(default_factory=list)
    seed: int = 0
    recon_hash: str = ""

    def trainable(self) -> dict[str, Var]:
        out = {f"spectral.{k}": p for k, p in self.spectral.named_params().items()}
        out.update({f"classifier.{k}": p for k, p in self.model.named_params().items()})
        return out

    def buffers(self) -> dict[str, Buffer]:
        return {f"classifier.{k}": b for k, b in self.model.named_buffers().items()}

    @property
    def rng_state(self) -> dict:
        """Shuffle streams derive from (seed, epoch); this pair restores them."""
        return {"seed": self.seed, "next_epoch": self.epoch}


def init_state(
    spectral_cfg: SpectralConfig,
    classifier_cfg: ClassifierConfig,
    seed: int,
    recon_hash: str,
) -> TrainState:
    spectral = SpectralAttentionParams(spectral_cfg, derive_rng(seed, "init", "spectral"))
    model = ClassifierModel(classifier_cfg, derive_rng(seed, "init", "classifier"))
    state = TrainState(
        step=0, epoch=0, spectral=spectral, model=model,
        adam=AdamState.for_params({}), seed=seed, recon_hash=recon_hash,
    )
    state.adam = AdamState.for_params(state.trainable())
    return state


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(
    state: TrainState,
    configs: dict,
    path: str | Path,
) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, var in state.trainable().items():
        arrays[f"params/{name}"] = var.data.astype(np.float32)
        arrays[f"adam_m/{name}"] = state.adam.m[name].astype(np.float32)
        arrays[f"adam_v/{name}"] = state.adam.v[name].astype(np.float32)
    for name, buf in state.buffers().items():
        arrays[f"buffers/{name}"] = buf.value.astype(np.float32)
    header = {
        "kind": CHECKPOINT_KIND,
        "format_version": CHECKPOINT_VERSION,
        "step": state.step,
        "epoch": state.epoch,
        "adam_t": state.adam.t,
        "seed": state.seed,
        "rng_state": state.rng_state,
        "recon_weights_hash": state.recon_hash,
        "history": state.history,
        "configs": configs,
    }
    write_array_archive(path, arrays, header)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    arrays, header = read_array_archive(path)
    if header.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: not a pipeline checkpoint")
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format {header.get('format_version')} != {CHECKPOINT_VERSION}"
        )
    return arrays, header


def restore_pipeline(path: str | Path) -> tuple[SpectralAttentionParams, ClassifierModel, dict]:
    """Rebuild the trainable modules recorded in a checkpoint."""
    arrays, header = load_checkpoint(path)
    configs = header["configs"]
    spectral_cfg = SpectralConfig(**configs["spectral"])
    classifier_cfg = ClassifierConfig(
        backbone=configs["classifier"]["backbone"],
        recalib_reduction=configs["classifier"]["recalib_reduction"],
        input_resolution=tuple(configs["classifier"]["input_resolution"]),
    )
    state = init_state(spectral_cfg, classifier_cfg, int(header["seed"]),
                       header["recon_weights_hash"])
    params = {k[len("params/"):]: v for k, v in arrays.items() if k.startswith("params/")}
    buffers = {k[len("buffers/"):]: v for k, v in arrays.items() if k.startswith("buffers/")}
    _load_state_arrays(state, params, buffers)
    return state.spectral, state.model, header


def _load_state_arrays(state: TrainState, params: dict, buffers: dict) -> None:
    own = state.trainable()
    if set(params) != set(own):
        raise CheckpointError("checkpoint parameter names do not match the configured models")
    for name, var in own.items():
        arr = np.asarray(params[name], dtype=var.data.dtype)
        if arr.shape != var.data.shape:
            raise CheckpointError(f"parameter {name!r}: shape {arr.shape} != {var.data.shape}")
        var.data = arr.copy()
    own_buffers = state.buffers()
    if set(buffers) != set(own_buffers):
        raise CheckpointError("checkpoint buffer names do not match the configured models")
    for name, buf in own_buffers.items():
        buf.value = np.asarray(buffers[name], dtype=buf.value.dtype).copy()


def _resume_state(
    path: str | Path,
    spectral_cfg: SpectralConfig,
    classifier_cfg: ClassifierConfig,
    train_cfg: TrainConfig,
    recon_hash: str,
) -> TrainState:
    arrays, header = load_checkpoint(path)
    expected = {
        "spectral": asdict(spectral_cfg),
        "classifier": asdict(classifier_cfg),
        "train": train_cfg.serializable(),
    }
    if _normalize(header["configs"]) != _normalize(expected):
        raise CheckpointError("checkpoint configs do not match the requested run")
    if header["recon_weights_hash"] != recon_hash:
        raise CheckpointError("checkpoint was trained against different reconstruction weights")
    state = init_state(spectral_cfg, classifier_cfg, int(header["seed"]), recon_hash)
    params = {k[len("params/"):]: v for k, v in arrays.items() if k.startswith("params/")}
    buffers = {k[len("buffers/"):]: v for k, v in arrays.items() if k.startswith("buffers/")}
    _load_state_arrays(state, params, buffers)
    state.adam = AdamState(
        m={k[len("adam_m/"):]: v.copy() for k, v in arrays.items() if k.startswith("adam_m/")},
        v={k[len("adam_v/"):]: v.copy() for k, v in arrays.items() if k.startswith("adam_v/")},
        t=int(header["adam_t"]),
    )
    state.step = int(header["step"])
    state.epoch = int(header["epoch"])
    state.history = list(header["history"])
    return state


def _normalize(obj):
    if isinstance(obj, dict):
        return {k: _normalize(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    return obj


# -- training loop ----------------------------------------------------------------


def train(
    manifest: DatasetManifest,
    recon: ReconstructionModel,
    spectral_cfg: SpectralConfig,
    classifier_cfg: ClassifierConfig,
    train_cfg: TrainConfig,
    resume_from: str | Path | None = None,
    stop_epoch: int | None = None,
    cache_dir: str | Path | None = None,
    on_step=None,
    log=None,
) -> tuple[Path, list[dict]]:
    """Optimize band attention + classifier on the manifest's train split.

    Returns (final checkpoint path, history). The reconstruction model must
    be frozen; its parameters never enter the optimizer and gradients are
    blocked by construction (cubes are constants to the tape).

    `epochs` fixes the cosine-schedule horizon; `stop_epoch` pauses a run
    early so it can be resumed bit-exactly (resume requires identical
    configs, including the horizon).
    """
    train_cfg.validate()
    spectral_cfg.validate()
    classifier_cfg.validate()
    if not recon.frozen:
        raise ValidationError("reconstruction model must be frozen before training")
    if tuple(recon.resolution) != tuple(classifier_cfg.input_resolution):
        raise ConfigError(
            f"reconstruction resolution {recon.resolution} != classifier input "
            f"{classifier_cfg.input_resolution}"
        )
    out_dir = Path(train_cfg.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    recon_path = out_dir / RECON_WEIGHTS_NAME
    save_recon_weights(recon, recon_path)
    recon_hash = sha256_file(recon_path)
    # all cubes come from the canonical float32 weights file, so a later
    # evaluate() against that file reproduces training inference exactly
    recon_used = load_recon_weights(recon_path)

    resolution = classifier_cfg.input_resolution
    cache = CubeCache(recon_hash, cache_dir)
    cubes, labels, _ = load_split_cubes(manifest, "train", resolution, recon_used, cache)
    if len(set(labels.tolist())) < 2:
        raise ValidationError("train split must contain both labels")
    if manifest.split_records("val"):
        val_cubes, val_labels, _ = load_split_cubes(manifest, "val", resolution, recon_used, cache)
    else:
        val_cubes, val_labels = None, None

    configs = {
        "spectral": asdict(spectral_cfg),
        "classifier": asdict(classifier_cfg),
        "train": train_cfg.serializable(),
    }
    if resume_from is not None:
        state = _resume_state(resume_from, spectral_cfg, classifier_cfg, train_cfg, recon_hash)
    else:
        state = init_state(spectral_cfg, classifier_cfg, train_cfg.seed, recon_hash)

    n = cubes.shape[0]
    batches_per_epoch = (n + train_cfg.batch_size - 1) // train_cfg.batch_size
    total_steps = train_cfg.epochs * batches_per_epoch
    betas = (train_cfg.adam_beta1, train_cfg.adam_beta2)
    trainable = state.trainable()
    ckpt_path = out_dir / CHECKPOINT_NAME
    last_epoch = train_cfg.epochs if stop_epoch is None else min(stop_epoch, train_cfg.epochs)

    for epoch in range(state.epoch, last_epoch):
        order = derive_rng(train_cfg.seed, "shuffle", epoch).permutation(n)
        epoch_loss = 0.0
        epoch_hits = 0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            batch = Var(cubes[idx])
            y = labels[idx]
            for var in trainable.values():
                var.grad = None
            logits = cube_logits(batch, state.spectral, state.model, train=True)
            loss = bce_loss_var(logits, y)
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {state.step} "
                    f"(batch indices {idx.tolist()})"
                )
            loss.backward()
            lr = cosine_lr(state.step, total_steps, train_cfg.lr0, train_cfg.lr_min)
            adam_step(trainable, {k: v.grad for k, v in trainable.items()},
                      state.adam, lr, betas, train_cfg.adam_eps)
            state.step += 1
            epoch_loss += float(loss.data) * len(idx)
            epoch_hits += int(np.count_nonzero((logits.data >= 0.0) == (y == 1)))
            if on_step is not None:
                on_step(state)
        state.epoch = epoch + 1
        if val_cubes is not None:
            probs = cube_probabilities(val_cubes, state.spectral, state.model)
            val_acc = float(np.mean((probs >= 0.5) == (val_labels == 1)))
        else:
            val_acc = float("nan")
        record = {
            "epoch": epoch,
            "train_loss": epoch_loss / n,
            "train_acc": epoch_hits / n,
            "val_acc": val_acc,
        }
        state.history.append(record)
        if log is not None:
            log(record)
        if (epoch + 1) % train_cfg.eval_every == 0 and epoch + 1 < last_epoch:
            save_checkpoint(state, configs, ckpt_path)
    save_checkpoint(state, configs, ckpt_path)
    (out_dir / HISTORY_NAME).write_text(
        json.dumps(state.history, indent=2) + "\n", encoding="utf-8"
    )
    return ckpt_path, state.history
