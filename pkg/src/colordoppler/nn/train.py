"""Masked-MSE training, k-fold cross-validation, ensemble inference and checkpoints."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from ..augment import DatasetManifest, normalize_sample, train_val_split
from ..core import (
    DataError,
    DopplerSample,
    NumericError,
    VelocityMap,
    atomic_write_bytes,
    canonical_json,
    phase_to_velocity,
    read_bundle,
    velocity_to_phase,
)
from ..estimate import reduce_packet
from .models import build_model, model_input
from .optim import AdamW, PlateauScheduler


def masked_mse(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean of ``(pred - target)^2`` over the pixels where ``mask`` is true."""
    if pred.shape != target.shape or mask.shape != pred.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)}, {tuple(target.shape)}, {tuple(mask.shape)}")
    count = mask.sum()
    if count == 0:
        raise ValueError("mask selects no pixels")
    diff = torch.where(mask, pred - target, torch.zeros((), dtype=pred.dtype))
    return (diff * diff).sum() / count


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2
    patience: int = 10
    factor: float = 0.1
    min_lr: float = 1e-6
    threshold: float = 1e-4
    folds: int = 9
    val_fraction: float = 0.1
    seed: int = 0
    epochs: int = 100
    packet: int = 2
    start_k: int = 0
    stop_loss: float | None = None

    def __post_init__(self):
        positive = (self.batch_size, self.lr, self.eps, self.patience, self.folds, self.epochs, self.min_lr)
        if any(v <= 0 for v in positive) or self.weight_decay < 0 or not 0 < self.factor < 1:
            raise ValueError("training hyperparameters must be positive")
        if self.packet < 2 or self.start_k < 0:
            raise ValueError("packet must be >= 2 and start_k >= 0")
        object.__setattr__(self, "betas", tuple(self.betas))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        return cls(**d)


# --- data -------------------------------------------------------------------------


def network_input(sample: DopplerSample, packet: int = 2, start_k: int = 0) -> np.ndarray:
    """Frames ``start_k .. start_k + packet - 1`` of the I/Q data, scaled to unit peak modulus."""
    reduced = replace(sample, iq=reduce_packet(sample.iq, start_k, packet))
    return normalize_sample(reduced).iq.data


@dataclass(frozen=True)
class TensorSet:
    """Stacked network inputs (complex ``[N, m, H, W]``), phase targets and masks (``[N, 1, H, W]``)."""

    inputs: torch.Tensor
    targets: torch.Tensor
    masks: torch.Tensor
    nyquist: torch.Tensor

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx) -> TensorSet:
        idx = torch.as_tensor(idx, dtype=torch.long)
        return TensorSet(self.inputs[idx], self.targets[idx], self.masks[idx], self.nyquist[idx])


def make_tensor_set(samples, packet: int = 2, start_k: int = 0) -> TensorSet:
    samples = list(samples)
    if not samples:
        raise DataError("no samples")
    shapes = {s.iq.shape[1:] for s in samples}
    if len(shapes) != 1:
        raise DataError(f"samples have different grid sizes: {sorted(shapes)}")
    x = np.stack([network_input(s, packet, start_k) for s in samples]).astype(np.complex64)
    y = np.stack([velocity_to_phase(s.truth, s.nyquist_mps) for s in samples])[:, None].astype(np.float32)
    m = np.stack([s.mask for s in samples])[:, None]
    v = np.array([s.nyquist_mps for s in samples])
    return TensorSet(torch.from_numpy(x), torch.from_numpy(y), torch.from_numpy(m), torch.from_numpy(v))


# --- training -------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: torch.nn.Module
    log: list[dict] = field(default_factory=list)
    best_epoch: int | None = None


def _evaluate(model, data: TensorSet, batch_size) -> float:
    model.eval()
    sse, count = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(data), batch_size):
            b = data.subset(range(i, min(i + batch_size, len(data))))
            pred = model(model_input(model, b.inputs))
            n = int(b.masks.sum())
            if n:
                sse += float(masked_mse(pred, b.targets, b.masks)) * n
                count += n
    if count == 0:
        raise DataError("evaluation set has no masked pixels")
    return sse / count


def evaluate_loss(model, data: TensorSet, batch_size: int = 16) -> float:
    """Masked MSE (rad^2) of ``model`` in inference mode over ``data``."""
    return _evaluate(model, data, batch_size)


def train_model(model, train: TensorSet, val: TensorSet | None, config: TrainConfig, on_epoch=None) -> TrainResult:
    """Minibatch AdamW on the masked phase MSE.

    The plateau schedule follows the validation loss, or the training loss
    when there is no validation set. With validation data the weights of the
    best validation epoch are restored at the end. Training stops early once
    the epoch training loss falls below ``config.stop_loss``.
    """
    if len(train) == 0:
        raise DataError("empty training set")
    opt = AdamW(model.parameters(), lr=config.lr, betas=config.betas, eps=config.eps,
                weight_decay=config.weight_decay)
    sched = PlateauScheduler(config.lr, config.factor, config.patience, config.threshold, config.min_lr)
    gen = torch.Generator().manual_seed(config.seed)
    result = TrainResult(model)
    best_val, best_state = math.inf, None
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = torch.randperm(len(train), generator=gen)
        sse, count = 0.0, 0
        for i in range(0, len(train), config.batch_size):
            b = train.subset(order[i : i + config.batch_size])
            n = int(b.masks.sum())
            if n == 0:
                continue
            opt.zero_grad(set_to_none=True)
            loss = masked_mse(model(model_input(model, b.inputs)), b.targets, b.masks)
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            opt.step()
            sse += loss.item() * n
            count += n
        train_loss = sse / count
        val_loss = _evaluate(model, val, config.batch_size) if val is not None and len(val) else None
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": sched.lr}
        result.log.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if val_loss is not None and val_loss < best_val:
            best_val, result.best_epoch = val_loss, epoch
            best_state = {k: t.detach().clone() for k, t in model.state_dict().items()}
        sched.step(val_loss if val_loss is not None else train_loss)
        sched.apply(opt)
        if config.stop_loss is not None and train_loss < config.stop_loss:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return result


def train_new_model(kind, train: TensorSet, val, config: TrainConfig, on_epoch=None, **arch) -> TrainResult:
    """Xavier-initialize a fresh model from ``config.seed`` and train it."""
    torch.manual_seed(config.seed)
    model = build_model(kind, config.packet, **arch)
    return train_model(model, train, val, config, on_epoch)


@dataclass
class FoldResult:
    fold: int
    result: TrainResult
    test_paths: list[str]


def train_kfold(manifest: DatasetManifest, kind: str, config: TrainConfig, *, root=".", samples=None,
                on_epoch=None, **arch) -> list[FoldResult]:
    """One model per fold, trained on the other folds with a sequence-level validation split.

    ``samples`` optionally maps manifest paths to already loaded samples;
    otherwise bundles are read from ``root``.
    """
    if manifest.folds is None:
        raise DataError("manifest has no fold assignment")
    if manifest.folds != config.folds:
        raise DataError(f"manifest has {manifest.folds} folds, config expects {config.folds}")
    cache = dict(samples or {})

    def load(m):
        for e in m.entries:
            if e.path not in cache:
                cache[e.path] = read_bundle(Path(root) / e.path)
        return [cache[e.path] for e in m.entries]

    results = []
    for fold in range(config.folds):
        train_m, val_m, test_m = train_val_split(manifest, fold, config.val_fraction, config.seed)
        if not train_m.entries:
            raise DataError(f"fold {fold} leaves no training data")
        train = make_tensor_set(load(train_m), config.packet, config.start_k)
        val = make_tensor_set(load(val_m), config.packet, config.start_k) if val_m.entries else None
        cb = (lambda row, f=fold: on_epoch(f, row)) if on_epoch else None
        res = train_new_model(kind, train, val, replace(config, seed=config.seed + fold), cb, **arch)
        results.append(FoldResult(fold, res, [e.path for e in test_m.entries]))
    return results


# --- inference ------------------------------------------------------------------------


def predict_phase(model, sample: DopplerSample, packet: int = 2, start_k: int = 0) -> np.ndarray:
    model.eval()
    x = torch.from_numpy(network_input(sample, packet, start_k)[None].astype(np.complex64))
    with torch.no_grad():
        return model(model_input(model, x))[0, 0].double().numpy()


def ensemble_median_infer(models, sample: DopplerSample, packet: int = 2, start_k: int = 0):
    """Per-pixel median of the models' phase maps, and the matching velocity map."""
    models = list(models)
    if not models:
        raise ValueError("need at least one model")
    phase = np.median(np.stack([predict_phase(m, sample, packet, start_k) for m in models]), axis=0)
    v_n = sample.nyquist_mps
    return phase, VelocityMap(phase_to_velocity(phase, v_n), v_n, np.ones(phase.shape, bool))


# --- checkpoints and logs -----------------------------------------------------------


def save_checkpoint(model, path, config: TrainConfig | None = None, epoch: int | None = None) -> Path:
    """Write ``meta.json`` and ``params.bin`` (little-endian float32, state-dict order)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    buf = io.BytesIO()
    layout = []
    for name, t in state.items():
        arr = t.detach().cpu().numpy().astype("<f4")
        layout.append({"name": name, "shape": list(arr.shape)})
        buf.write(arr.tobytes())
    meta = {
        "format": "colordoppler-checkpoint-1",
        "architecture": model.config(),
        "train_config": config.to_dict() if config else None,
        "epoch": epoch,
        "dtype": "float32",
        "parameters": layout,
    }
    atomic_write_bytes(path / "params.bin", buf.getvalue())
    atomic_write_bytes(path / "meta.json", canonical_json(meta))
    return path


def load_checkpoint(path):
    """Rebuild the model described by ``meta.json`` and load its weights. Returns ``(model, meta)``."""
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
        arch = dict(meta["architecture"])
        layout = meta["parameters"]
        raw = (path / "params.bin").read_bytes()
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"{path}: unreadable checkpoint ({exc})") from exc
    kind, n = arch.pop("kind"), arch.pop("n")
    model = build_model(kind, n, **arch)
    expected = sum(int(np.prod(p["shape"])) for p in layout) * 4
    if len(raw) != expected:
        raise DataError(f"{path}: params.bin has {len(raw)} bytes, expected {expected}")
    state, offset = {}, 0
    for p in layout:
        count = int(np.prod(p["shape"]))
        arr = np.frombuffer(raw, "<f4", count, offset).reshape(p["shape"])
        state[p["name"]] = torch.from_numpy(arr.copy())
        offset += count * 4
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise DataError(f"{path}: parameters do not match the architecture ({exc})") from exc
    model.eval()
    return model, meta


def training_log_csv(log: list[dict]) -> bytes:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
    for row in log:
        val = "" if row["val_loss"] is None else repr(row["val_loss"])
        writer.writerow([row["epoch"], repr(row["train_loss"]), val, repr(row["lr"])])
    return out.getvalue().encode()
