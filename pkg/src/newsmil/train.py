"""Bag-level supervised training: binary cross-entropy, Adadelta, the
epoch loop with early stopping on validation accuracy, evaluation, and
the per-instance probability report.

Three variants share every code path here; only the forward graph
differs:
  * mil-rep  - Bi-LSTM + attention instance vectors, probability-weighted
               bag aggregation;
  * mil-s    - mean-of-word-embeddings instance vectors, probability-
               weighted aggregation;
  * s-avg    - mean-of-word-embeddings instance vectors, plain-mean
               aggregation (no instance classifier in the loss path).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import model
from .corpus import Bag, Dataset
from .errors import DimensionError, NumericError
from .tensor import make_rng
from .textprep import EmbeddingMatrix

VARIANTS = ("mil-rep", "mil-s", "s-avg")

BCE_EPS = 1e-7


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    keep_prob: float = 0.5
    seed: int = 0
    variant: str = "mil-rep"
    fine_tune_embeddings: bool = False
    lstm_units: int = 50
    attn_dim: int = 100
    clf_hidden: int = 150
    lr: float = 0.1
    rho: float = 0.95
    eps: float = 1e-6

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError(f"keep_prob must be in (0, 1], got {self.keep_prob}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if min(self.lstm_units, self.attn_dim, self.clf_hidden) < 1:
            raise ValueError("model dimensions must be positive")

    @property
    def uses_encoder(self) -> bool:
        return self.variant == "mil-rep"

    @property
    def weighted(self) -> bool:
        return self.variant != "s-avg"


@dataclass
class Metrics:
    accuracy: float
    tp: int
    tn: int
    fp: int
    fn: int
    loss: float

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_accuracy: float


def bce_loss(y_hat: float, y: int) -> float:
    """Binary cross-entropy with the prediction clamped to
    [BCE_EPS, 1 - BCE_EPS] so the value is always finite."""
    p = min(max(y_hat, BCE_EPS), 1.0 - BCE_EPS)
    return -(math.log(p) if y else math.log(1.0 - p))


def bce_dldy(y_hat: float, y: int) -> float:
    """d(bce_loss)/d y_hat at the clamped prediction."""
    p = min(max(y_hat, BCE_EPS), 1.0 - BCE_EPS)
    return (p - y) / (p * (1.0 - p))


class AdadeltaState:
    """Running E[g^2] and E[dx^2] per trainable tensor (zeros at start)."""

    def __init__(self, params: model.ModelParams, rho: float = 0.95,
                 eps: float = 1e-6, lr: float = 0.1):
        self.rho = rho
        self.eps = eps
        self.lr = lr
        self.acc_grad = {n: np.zeros_like(t) for n, t in model.trainable_tensors(params)}
        self.acc_delta = {n: np.zeros_like(t) for n, t in model.trainable_tensors(params)}


def adadelta_step(state: AdadeltaState, params: model.ModelParams,
                  grads: dict[str, np.ndarray]) -> None:
    """One in-place update per trainable tensor:
    E[g2] <- rho E[g2] + (1-rho) g^2
    delta = -sqrt(E[dx2]+eps)/sqrt(E[g2]+eps) * g
    E[dx2] <- rho E[dx2] + (1-rho) delta^2
    x <- x + lr * delta
    """
    rho, eps = state.rho, state.eps
    for name, tensor in model.trainable_tensors(params):
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != tensor.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, "
                                 f"parameter has {tensor.shape}")
        eg = state.acc_grad[name]
        ed = state.acc_delta[name]
        eg *= rho
        eg += (1.0 - rho) * g * g
        delta = -np.sqrt(ed + eps) / np.sqrt(eg + eps) * g
        ed *= rho
        ed += (1.0 - rho) * delta * delta
        tensor += state.lr * delta


def _forward_bag(params, bag, config: TrainConfig, mode: str, rng=None):
    return model.forward(params, bag, mode=mode,
                         keep_prob=config.keep_prob if mode == "train" else 1.0,
                         weighted=config.weighted, rng=rng)


def train_epoch(
    params: model.ModelParams,
    state: AdadeltaState,
    bags: tuple[Bag, ...],
    config: TrainConfig,
    rng: np.random.Generator,
    epoch: int = 0,
) -> float:
    """One pass over the training bags: seeded shuffle, per-mini-batch
    mean-BCE gradients accumulated in bag order, one Adadelta update per
    batch (the final short batch is kept).  Returns the mean loss."""
    if not bags:
        raise ValueError("cannot train on an empty bag list")
    order = rng.permutation(len(bags))
    total_loss = 0.0
    for batch_no, start in enumerate(range(0, len(bags), config.batch_size)):
        idx = order[start:start + config.batch_size]
        batch_grads: dict[str, np.ndarray] = {}
        batch_loss = 0.0
        for i in idx:
            bag = bags[int(i)]
            y_hat, trace = _forward_bag(params, bag, config, "train", rng)
            batch_loss += bce_loss(y_hat, bag.label)
            for name, g in model.backward(params, trace, bce_dldy(y_hat, bag.label)).items():
                if name in batch_grads:
                    batch_grads[name] += g
                else:
                    batch_grads[name] = g.copy()
        if not math.isfinite(batch_loss):
            raise NumericError(f"non-finite loss in epoch {epoch}, batch {batch_no}")
        scale = 1.0 / len(idx)
        for g in batch_grads.values():
            g *= scale
        adadelta_step(state, params, batch_grads)
        for name, tensor in model.trainable_tensors(params):
            if not np.isfinite(tensor).all():
                raise NumericError(
                    f"non-finite values in {name} after epoch {epoch}, batch {batch_no}")
        total_loss += batch_loss
    return total_loss / len(bags)


def evaluate(params: model.ModelParams, bags: tuple[Bag, ...],
             variant: str = "mil-rep") -> Metrics:
    """Inference-mode accuracy/confusion/mean-BCE; predictions threshold
    at 0.5 with ties going to class 1."""
    if not bags:
        raise ValueError("cannot evaluate an empty bag list")
    weighted = variant != "s-avg"
    tp = tn = fp = fn = 0
    loss = 0.0
    for bag in bags:
        y_hat, _ = model.forward(params, bag, mode="infer", weighted=weighted)
        loss += bce_loss(y_hat, bag.label)
        pred = 1 if y_hat >= 0.5 else 0
        if pred == 1 and bag.label == 1:
            tp += 1
        elif pred == 0 and bag.label == 0:
            tn += 1
        elif pred == 1:
            fp += 1
        else:
            fn += 1
    return Metrics(accuracy=(tp + tn) / len(bags), tp=tp, tn=tn, fp=fp, fn=fn,
                   loss=loss / len(bags))


def fit(
    dataset: Dataset,
    embeddings: EmbeddingMatrix,
    config: TrainConfig,
    progress=None,
) -> tuple[model.ModelParams, list[EpochStats]]:
    """Train up to max_epochs with early stopping after `patience` epochs
    without a validation-accuracy improvement; ties keep the earlier
    checkpoint.  Returns the best-validation parameters and the history."""
    config.validate()
    train_bags, val_bags = dataset.train, dataset.val
    if not train_bags or not val_bags:
        raise ValueError(f"training needs nonempty train/val splits, got "
                         f"{len(train_bags)}/{len(val_bags)} bags")
    rng = make_rng(config.seed)
    embeddings.trainable = config.fine_tune_embeddings
    params = model.init_params(
        embeddings, units=config.lstm_units, attn_dim=config.attn_dim,
        clf_hidden=config.clf_hidden, rng=rng, use_encoder=config.uses_encoder)
    state = AdadeltaState(params, rho=config.rho, eps=config.eps, lr=config.lr)

    best = model.clone_params(params)
    best_accuracy = -1.0
    history: list[EpochStats] = []
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        train_loss = train_epoch(params, state, train_bags, config, rng, epoch=epoch)
        val = evaluate(params, val_bags, variant=config.variant)
        history.append(EpochStats(epoch=epoch, train_loss=train_loss,
                                  val_accuracy=val.accuracy))
        if progress is not None:
            progress(history[-1])
        if val.accuracy > best_accuracy:
            best_accuracy = val.accuracy
            best = model.clone_params(params)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best, history


def instance_report(params: model.ModelParams, bags: tuple[Bag, ...],
                    variant: str = "mil-rep") -> list[tuple]:
    """(date, instance_index, p_hat, headline) rows, sorted by descending
    probability within each bag; instance_index is the original position."""
    weighted = variant != "s-avg"
    rows = []
    for bag in bags:
        _, trace = model.forward(params, bag, mode="infer", weighted=weighted)
        scored = [
            (bag.day, idx, tr.p_hat, bag.items[idx].title if idx < len(bag.items) else "")
            for idx, tr in enumerate(trace.instances)
        ]
        scored.sort(key=lambda r: -r[2])
        rows.extend(scored)
    return rows


def write_history_csv(path, history: list[EpochStats]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_accuracy"])
        for h in history:
            writer.writerow([h.epoch, f"{h.train_loss:.6f}", f"{h.val_accuracy:.6f}"])


def write_metrics_csv(path, rows: list[tuple[str, Metrics]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "accuracy", "tp", "tn", "fp", "fn", "loss"])
        for split_name, m in rows:
            writer.writerow([split_name, f"{m.accuracy:.6f}", m.tp, m.tn, m.fp, m.fn,
                             f"{m.loss:.6f}"])


def write_instance_csv(path, rows: list[tuple]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "instance_index", "p_hat", "headline"])
        for day, idx, p_hat, title in rows:
            writer.writerow([day.isoformat(), idx, f"{p_hat:.6f}", title])
