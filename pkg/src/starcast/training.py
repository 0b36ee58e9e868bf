"""Winner-takes-all loss, ADE/FDE metrics and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .decoder import TrajectoryPrediction
from .model import FrameInput, TrajectoryModel
from .nn import Adam, ReduceOnPlateau
from .nn import tensor as T

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "split", "loss", "ade", "fde", "lr")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class LossConfig:
    beta: float = 1.0
    regression: str = "smooth-l1"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.regression not in ("smooth-l1", "l2"):
            raise ValueError("regression must be 'smooth-l1' or 'l2'")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch: int = 8
    lr: float = 1e-4
    plateau_factor: float = 0.2
    plateau_patience: int = 2
    epsilon_region: float = 1e-4
    seed: int = 0
    mode: str = "single"
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1 or self.plateau_patience < 1:
            raise ValueError("epochs, batch and plateau_patience must be >= 1")
        if self.lr < 0 or not 0 < self.plateau_factor <= 1 or self.epsilon_region < 0:
            raise ValueError("lr >= 0, 0 < plateau_factor <= 1 and epsilon_region >= 0 required")
        if self.mode not in ("single", "joint"):
            raise ValueError("mode must be 'single' or 'joint'")


@dataclass
class LossBreakdown:
    total: float
    regression: float
    classification: float
    best_mode: int


# -- loss -------------------------------------------------------------------------
def best_modes(positions, gt):
    """Index of the mode with the smallest mean L2 distance; ties -> lowest."""
    dist = np.linalg.norm(np.asarray(positions, dtype=float) - np.asarray(gt, dtype=float)[:, None], axis=-1)
    return np.argmin(dist.mean(axis=-1), axis=1)


def wta_loss(positions, logits, gt, cfg: LossConfig):
    """Per-row loss terms for positions (B, m, T, 2), logits (B, m) and
    ground truth (B, T, 2). Returns ``(total, regression, classification,
    best)`` with tensor terms of shape (B,)."""
    positions = T.as_tensor(positions)
    logits = T.as_tensor(logits, dtype=positions.dtype)
    gt = np.asarray(gt, dtype=positions.dtype)
    if positions.shape[0] != gt.shape[0] or positions.shape[2:] != gt.shape[1:]:
        raise ValueError(f"prediction {positions.shape} does not match ground truth {gt.shape}")
    for name, arr in (("prediction", positions.data), ("scores", logits.data), ("ground truth", gt)):
        if np.isnan(arr).any():
            raise ValueError(f"NaN in {name}")
    b = positions.shape[0]
    rows = np.arange(b)
    best = best_modes(positions.data, gt)
    diff = positions[rows, best] - gt
    if cfg.regression == "l2":
        elem = diff * diff
    else:
        ad = T.abs_(diff)
        elem = T.where(ad.data < 1.0, 0.5 * diff * diff, ad - 0.5)
    reg = elem.reshape(b, -1).mean(axis=1)
    cls = -T.log_softmax(logits, axis=1)[rows, best]
    return reg + cls * cfg.beta, reg, cls, best


def multimodal_loss(pred: TrajectoryPrediction, gt, cfg: LossConfig | None = None) -> LossBreakdown:
    """Loss of one prediction against its ground truth (scores are the mode
    probabilities, so the class term is ``-log score[k*]``)."""
    cfg = cfg or LossConfig()
    modes = np.asarray(pred.modes, dtype=float)
    scores = np.asarray(pred.scores, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if np.isnan(scores).any():
        raise ValueError("NaN in scores")
    with T.no_grad(), np.errstate(divide="ignore"):
        total, reg, cls, best = wta_loss(modes[None], np.log(scores)[None], gt[None], cfg)
    return LossBreakdown(float(total.data[0]), float(reg.data[0]), float(cls.data[0]), int(best[0]))


def batch_loss(out, cfg: LossConfig):
    """Scene loss = sum over the scene's target agents; batch loss = mean over scenes."""
    gt = np.stack([f.gt for f in out.frames])
    total, reg, cls, _ = wta_loss(out.positions, out.logits, gt, cfg)
    n_samples = int(out.sample_index.max()) + 1
    per_sample = T.segment_sum(total, out.sample_index, n_samples)
    return per_sample.mean(), reg, cls


# -- metrics ---------------------------------------------------------------------
def ade_fde(pred, gt, select="min"):
    """(ADE, FDE) in metres.

    ``select="min"`` takes the minimum over modes, separately for each
    metric; ``select="score"`` reports the highest-scoring mode.
    ``pred`` is a :class:`TrajectoryPrediction` or an (m, T, 2) array.
    """
    modes = np.asarray(pred.modes if isinstance(pred, TrajectoryPrediction) else pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if gt.size == 0:
        raise ValueError("empty ground truth")
    if modes.ndim == 2:
        modes = modes[None]
    if modes.shape[1:] != gt.shape:
        raise ValueError(f"prediction {modes.shape} does not match ground truth {gt.shape}")
    err = np.linalg.norm(modes - gt[None], axis=-1)
    ade, fde = err.mean(axis=1), err[:, -1]
    if select == "min":
        return float(ade.min()), float(fde.min())
    if select == "score":
        if not isinstance(pred, TrajectoryPrediction):
            raise ValueError("score selection needs a TrajectoryPrediction")
        k = int(np.argmax(pred.scores))
        return float(ade[k]), float(fde[k])
    raise ValueError("select must be 'min' or 'score'")


@dataclass
class EvalResult:
    loss: float
    ade: float
    fde: float
    rows: list[dict]  # per target: sample, agent, ade, fde
    predictions: list[TrajectoryPrediction]


def batches(data, size, order=None):
    order = np.arange(len(data)) if order is None else order
    for i in range(0, len(order), size):
        yield [data[j] for j in order[i : i + size]]


def evaluate(model: TrajectoryModel, data: list[list[FrameInput]], joint=False, batch=8,
             loss_cfg: LossConfig | None = None, select="min") -> EvalResult:
    loss_cfg = loss_cfg or LossConfig()
    rows, preds, losses = [], [], []
    for start in range(0, len(data), batch):
        chunk = data[start : start + batch]
        chunk_preds, out = model.predict(chunk, joint)
        with T.no_grad():
            loss, _, _ = batch_loss(out, loss_cfg)
        losses.append(float(loss.data) * len(chunk))
        for p, f, s in zip(chunk_preds, out.frames, out.sample_index):
            a, fd = ade_fde(p, f.gt, select)
            rows.append({"sample": start + int(s), "agent": f.ego_id, "ade": a, "fde": fd})
            preds.append(p)
    n = max(len(rows), 1)
    return EvalResult(
        loss=sum(losses) / max(len(data), 1),
        ade=sum(r["ade"] for r in rows) / n,
        fde=sum(r["fde"] for r in rows) / n,
        rows=rows,
        predictions=preds,
    )


# -- training loop ---------------------------------------------------------------
@dataclass
class TrainResult:
    history: list[dict]
    epochs_run: int
    final_lr: float


def train(model: TrajectoryModel, data: list[list[FrameInput]], cfg: TrainConfig,
          val_data: list[list[FrameInput]] | None = None, on_epoch=None, stop=None) -> TrainResult:
    """Adam on the batch loss with plateau decay driven by validation ADE
    (training-set ADE when no validation data is given).

    ``on_epoch(history_rows)`` is called after every epoch; training stops
    early when ``stop(history_rows)`` returns true.
    """
    if not data:
        raise ValueError("training data is empty")
    joint = cfg.mode == "joint"
    params = list(model.store.params.values())
    opt = Adam(params, lr=cfg.lr)
    sched = ReduceOnPlateau(opt, cfg.plateau_factor, cfg.plateau_patience, cfg.epsilon_region)
    rng = np.random.default_rng(cfg.seed)
    history = []
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        lr = opt.lr
        total, count = 0.0, 0
        for b, chunk in enumerate(batches(data, cfg.batch, rng.permutation(len(data)))):
            opt.zero_grad()
            out = model.forward(chunk, joint)
            if not (np.isfinite(out.positions.data).all() and np.isfinite(out.logits.data).all()):
                raise TrainingDiverged(f"non-finite prediction at epoch {epoch}, batch {b} (lr={opt.lr:g})")
            loss, _, _ = batch_loss(out, cfg.loss)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {epoch}, batch {b} (lr={opt.lr:g})")
            loss.backward()
            opt.step()
            total += value * len(chunk)
            count += len(chunk)
        train_eval = evaluate(model, data, joint, cfg.batch, cfg.loss)
        rows = [dict(epoch=epoch, split="train", loss=total / count, ade=train_eval.ade, fde=train_eval.fde, lr=lr)]
        monitor = train_eval.ade
        if val_data:
            val = evaluate(model, val_data, joint, cfg.batch, cfg.loss)
            rows.append(dict(epoch=epoch, split="val", loss=val.loss, ade=val.ade, fde=val.fde, lr=lr))
            monitor = val.ade
        sched.step(monitor)
        history.extend(rows)
        log.info("epoch %d: %s", epoch, ", ".join(f"{r['split']} ade={r['ade']:.4f} fde={r['fde']:.4f}" for r in rows))
        if on_epoch is not None:
            on_epoch(rows)
        if stop is not None and stop(rows):
            break
    return TrainResult(history, epoch, opt.lr)


def write_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([_fmt(row[c]) for c in HISTORY_COLUMNS])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)
