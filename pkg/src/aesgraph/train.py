"""End-to-end optimization: losses, Adam with polynomial decay, augmentation,
metrics, and the epoch loop with per-epoch checkpoints.

The shuffle and augmentation stream for epoch e is seeded from (seed, e), so
a run resumed from a checkpoint replays exactly the schedule of a fresh run.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import Manifest, load_image
from .encoder import ConfigError
from .head import classify
from .imageops import crop, hflip, resize_bilinear
from .model import Model, ModelConfig
from .tensor import NumericError, Tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# FC_CNN trains at a proportionally smaller input than the dense variants,
# mirroring the 224-vs-300 split of the classifier baseline.
FC_CNN_SIDE_RATIO = 224 / 300


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    batch_size: int = 32
    lr0: float = 1e-4
    weight_decay: float = 1e-5
    power: float = 0.9
    seed: int = 0
    input_side: int = 300
    loss: str = "bce"
    hflip: bool = True
    scale_crop: bool = True

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.input_side < 64:
            raise ConfigError("input_side must be >= 64")
        if self.loss not in ("bce", "mse"):
            raise ConfigError(f"loss must be bce or mse, got {self.loss!r}")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Polynomial decay: lr0 * (1 - epoch/maxEpochs)^power, per epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.lr0 * (1.0 - epoch / cfg.epochs) ** cfg.power


# -- losses ----------------------------------------------------------------------


def bce_loss(p1: Tensor, targets: np.ndarray) -> Tensor:
    """Binary cross entropy on high-class probabilities, batch averaged.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs.
    """
    p = T.clip(p1, 1e-7, 1.0 - 1e-7)
    t = Tensor(np.asarray(targets, dtype=float))
    pos = T.mul(t, T.log(p))
    negt = T.sub(Tensor(1.0), t)
    neg = T.mul(negt, T.log(T.sub(Tensor(1.0), p)))
    return T.neg(T.mean(T.add(pos, neg)))


def mse_loss(pred: Tensor, targets: np.ndarray) -> Tensor:
    """Mean squared error, batch averaged."""
    diff = T.sub(pred, Tensor(np.asarray(targets, dtype=float)))
    return T.mean(T.mul(diff, diff))


# -- optimizer -------------------------------------------------------------------


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step_count = 0


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float,
              weight_decay: float = 0.0) -> None:
    """One bias-corrected Adam update with decoupled weight decay."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        p.data = p.data - lr * update - lr * weight_decay * p.data


# -- augmentation ------------------------------------------------------------------


def augment(img: Tensor, rng: np.random.Generator,
            flip: bool = True, scale_crop: bool = True) -> Tensor:
    """Horizontal flip (p = 0.5), uniform upscale in [1.05, 1.25], random crop
    back to the original side. Deterministic under a fixed generator state."""
    out = img
    if flip and rng.uniform() < 0.5:
        out = hflip(out)
    if scale_crop:
        side = img.shape[1]
        factor = rng.uniform(1.05, 1.25)
        scaled = int(round(side * factor))
        out = resize_bilinear(out, scaled, scaled)
        top = int(rng.integers(0, scaled - side + 1))
        left = int(rng.integers(0, scaled - side + 1))
        out = crop(out, top, left, side, side)
    return out


# -- metrics ---------------------------------------------------------------------


@dataclass
class Metrics:
    accuracy: float | None = None
    ap: float | None = None
    spearman_rho: float | None = None

    def as_row(self) -> dict:
        return {k: ("" if v is None else v) for k, v in self.__dict__.items()}


def average_precision(scores, labels) -> float:
    """Mean of precision-at-k over the positives of the score-sorted list.

    Ties keep input (manifest) order. A single-class input has no ranking to
    measure; by convention it scores 0 with a warning.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    npos = int(labels.sum())
    if npos == 0 or npos == len(labels):
        warnings.warn("average precision undefined for a single-class manifest; reporting 0")
        return 0.0
    order = np.argsort(-scores, kind="stable")
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if labels[idx] == 1:
            hits += 1
            total += hits / rank
    return total / npos


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=float)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(pred, truth) -> float:
    """Rank correlation with average-rank tie handling."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if len(pred) < 2 or len(pred) != len(truth):
        raise ValueError("spearman_rho needs two equal-length series of >= 2 samples")
    rp = _average_ranks(pred)
    rt = _average_ranks(truth)
    rp -= rp.mean()
    rt -= rt.mean()
    denom = math.sqrt(float((rp * rp).sum()) * float((rt * rt).sum()))
    if denom == 0.0:
        return 0.0
    return float((rp * rt).sum() / denom)


# -- data plumbing ------------------------------------------------------------------


@dataclass
class LoadedDataset:
    images: list[np.ndarray]
    targets: np.ndarray
    paths: list[str]
    task: str


def load_dataset(manifest: Manifest, side: int) -> LoadedDataset:
    """Decode and resize every manifest image once; targets per the task."""
    images, targets, paths = [], [], []
    for sample in manifest.samples:
        img = load_image(manifest.resolve(sample), side=side)
        images.append(img.data)
        paths.append(sample.path)
        if manifest.task == "score":
            targets.append(sample.score)
        else:
            targets.append(sample.binary_label())
    return LoadedDataset(images=images, targets=np.asarray(targets, dtype=float),
                         paths=paths, task=manifest.task)


def effective_input_side(variant: str, input_side: int) -> int:
    if variant == "FC_CNN":
        return max(64, round(input_side * FC_CNN_SIDE_RATIO))
    return input_side


# -- training loop -----------------------------------------------------------------


@dataclass
class TrainState:
    model: Model
    adam: AdamState
    epoch: int
    seed: int


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float
    lr: float


def _class_loss_and_hits(model: Model, batch: Tensor, targets: np.ndarray):
    _, _, probs = model.class_probs(batch, "train")
    pick = np.zeros((1, 2))
    pick[0, 1] = 1.0
    p1 = T.sum_(T.mul(probs, Tensor(pick)), axis=1)
    loss = bce_loss(p1, targets)
    preds = (probs.data[:, 1] > probs.data[:, 0]).astype(int)
    return loss, int((preds == targets.astype(int)).sum())


def _regress_loss_and_hits(model: Model, batch: Tensor, targets: np.ndarray):
    pred = model.regress(batch, "train")
    loss = mse_loss(pred, targets)
    hits = int(((pred.data >= 0.5).astype(int) == (targets >= 0.5).astype(int)).sum())
    return loss, hits


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, manifest: Manifest,
          out_dir: str | None = None, digest: str = "",
          progress=None) -> tuple[TrainState, list[EpochStats]]:
    """Run the full optimization loop over a manifest.

    Writes metrics.csv and (re)writes checkpoint.rgck under ``out_dir`` after
    every epoch when an output directory is given.
    """
    train_cfg.validate()
    if len(manifest) == 0:
        raise ConfigError("manifest is empty")
    if manifest.task == "score" and train_cfg.loss != "mse":
        raise ConfigError("score manifests require the mse loss")

    model = Model(model_cfg, train_cfg.seed)
    params = model.named_params()
    adam = AdamState(params)
    side = effective_input_side(model_cfg.variant, train_cfg.input_side)
    data = load_dataset(manifest, side)
    targets = data.targets
    step_fn = _regress_loss_and_hits if train_cfg.loss == "mse" else _class_loss_and_hits

    stats: list[EpochStats] = []
    metrics_path = os.path.join(out_dir, "metrics.csv") if out_dir else None
    if metrics_path:
        os.makedirs(out_dir, exist_ok=True)
        with open(metrics_path, "w", encoding="utf-8") as f:
            f.write(f"# config_digest={digest}\n")
            f.write("epoch,loss,accuracy,lr\n")

    n = len(data.images)
    for epoch in range(train_cfg.epochs):
        lr = lr_at(epoch, train_cfg)
        rng = np.random.default_rng([train_cfg.seed, epoch])
        order = rng.permutation(n)
        total_loss = 0.0
        hits = 0
        batches = 0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            stack = [augment(Tensor(data.images[i]), rng,
                             flip=train_cfg.hflip,
                             scale_crop=train_cfg.scale_crop).data for i in idx]
            batch = Tensor(np.stack(stack))
            try:
                loss, batch_hits = step_fn(model, batch, targets[idx])
                T.backward(loss)
                adam_step(params, adam, lr, train_cfg.weight_decay)
            except NumericError as e:
                raise NumericError(
                    f"aborted at epoch {epoch}, step {adam.step_count}: {e}") from e
            for p in params.values():
                p.grad = None
            total_loss += loss.item()
            hits += batch_hits
            batches += 1
        stat = EpochStats(epoch=epoch, loss=total_loss / batches,
                          accuracy=hits / n, lr=lr)
        stats.append(stat)
        if progress is not None:
            progress(stat)
        if metrics_path:
            with open(metrics_path, "a", encoding="utf-8") as f:
                f.write(f"{stat.epoch},{stat.loss!r},{stat.accuracy!r},{stat.lr!r}\n")
        if out_dir:
            state = TrainState(model=model, adam=adam, epoch=epoch + 1, seed=train_cfg.seed)
            save_train_state(os.path.join(out_dir, "checkpoint.rgck"), state, digest)
    return TrainState(model=model, adam=adam, epoch=train_cfg.epochs,
                      seed=train_cfg.seed), stats


# -- evaluation ---------------------------------------------------------------------


def predict_class_probs(model: Model, images: list[np.ndarray],
                        batch_size: int = 32) -> np.ndarray:
    """Eval-mode class probabilities (n, 2) for decoded images."""
    out = []
    with T.no_grad():
        for start in range(0, len(images), batch_size):
            batch = Tensor(np.stack(images[start:start + batch_size]))
            _, _, probs = model.class_probs(batch, "eval")
            out.append(probs.data.copy())
    return np.concatenate(out, axis=0)


def predict_scores(model: Model, images: list[np.ndarray],
                   batch_size: int = 32) -> np.ndarray:
    out = []
    with T.no_grad():
        for start in range(0, len(images), batch_size):
            batch = Tensor(np.stack(images[start:start + batch_size]))
            out.append(model.regress(batch, "eval").data.copy())
    return np.concatenate(out, axis=0)


def evaluate(model: Model, manifest: Manifest, task: str,
             input_side: int | None = None, batch_size: int = 32) -> Metrics:
    """Accuracy and AP for classification, Spearman rho for regression."""
    if len(manifest) == 0:
        raise ConfigError("manifest is empty")
    if task not in ("classify", "regress"):
        raise ConfigError(f"task must be classify or regress, got {task!r}")
    side = effective_input_side(model.cfg.variant,
                                input_side if input_side else 300)
    data = load_dataset(manifest, side)
    if task == "classify":
        probs = predict_class_probs(model, data.images, batch_size)
        labels = data.targets.astype(int)
        preds = np.array([classify(p0, p1) for p0, p1 in probs])
        return Metrics(accuracy=float((preds == labels).mean()),
                       ap=average_precision(probs[:, 1], labels))
    preds = predict_scores(model, data.images, batch_size)
    return Metrics(spearman_rho=spearman_rho(preds, data.targets))


# -- checkpoint adapters ---------------------------------------------------------------


def state_to_arrays(state: TrainState) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for name, p in state.model.named_params().items():
        arrays[f"param/{name}"] = p.data
        arrays[f"adam_m/{name}"] = state.adam.m[name]
        arrays[f"adam_v/{name}"] = state.adam.v[name]
    for name, bn in state.model.named_state().items():
        arrays[f"bnstat/{name}/mean"] = bn.mean
        arrays[f"bnstat/{name}/var"] = bn.var
    arrays["meta/step"] = np.array(float(state.adam.step_count))
    arrays["meta/epoch"] = np.array(float(state.epoch))
    arrays["meta/seed"] = np.array(float(state.seed))
    return arrays


def save_train_state(path, state: TrainState, digest: str) -> None:
    save_checkpoint(path, digest, state_to_arrays(state))


def load_train_state(path, model_cfg: ModelConfig,
                     expected_digest: str | None = None) -> tuple[TrainState, str]:
    """Rebuild a TrainState from a checkpoint; digests must agree if given."""
    digest, arrays = load_checkpoint(path)
    if expected_digest is not None and digest != expected_digest:
        raise CheckpointError(
            f"config digest mismatch: checkpoint {digest[:12]}..., build {expected_digest[:12]}...")
    seed = int(arrays.get("meta/seed", np.array(0.0)))
    model = Model(model_cfg, seed)
    params = model.named_params()
    adam = AdamState(params)
    for name, p in params.items():
        key = f"param/{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint missing parameter {name!r}")
        if arrays[key].shape != p.data.shape:
            raise CheckpointError(f"checkpoint shape mismatch for {name!r}")
        p.data = arrays[key].astype(p.data.dtype)
        adam.m[name] = arrays[f"adam_m/{name}"].astype(p.data.dtype)
        adam.v[name] = arrays[f"adam_v/{name}"].astype(p.data.dtype)
    for name, bn in model.named_state().items():
        bn.mean = arrays[f"bnstat/{name}/mean"].astype(np.float64)
        bn.var = arrays[f"bnstat/{name}/var"].astype(np.float64)
    adam.step_count = int(arrays["meta/step"])
    epoch = int(arrays["meta/epoch"])
    return TrainState(model=model, adam=adam, epoch=epoch, seed=seed), digest
