"""Training loop: Noam schedule, periodic duration refresh and best-validation selection."""

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import pad_batch
from .dtw import dtw_refined, path_to_durations
from .model import LOSS_TERMS, Ssrnet, total_loss
from .nn.checkpoint import save_checkpoint
from .nn.optim import adam_step, clip_grad_norm
from .nn.tensor import NonFiniteError, no_grad
from .tonemes import tone_of

log = logging.getLogger(__name__)

LOSS_LOG_COLUMNS = ("step",) + LOSS_TERMS + ("total", "lr")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    batch_size: int = 8
    step_w: int = 4000
    d_model: int = 384
    lambda_align: float = 10.0
    epochs: int = 100
    refresh_period: int = 5
    warm_epochs: int = 4
    seed: int = 0
    grad_clip: float = 1.0
    lr_scale: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.step_w < 1:
            raise ValueError("step_w must be >= 1")
        if self.lambda_align < 0:
            raise ValueError("lambda_align must be >= 0")
        if self.epochs < 1 or self.refresh_period < 1 or self.warm_epochs < 0:
            raise ValueError("epochs and refresh_period must be positive, warm_epochs non-negative")


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    durations: dict = field(default_factory=dict)
    best_val: float = float("inf")
    best_epoch: int = 0
    best_params: dict = None


@dataclass
class TrainResult:
    state: TrainState
    epoch_log: list
    step_log: list


def noam_lr(step, step_w=4000, d_model=384, scale=1.0):
    if step < 1:
        raise ValueError("step must be >= 1")
    return scale * d_model ** -0.5 * min(step ** -0.5, step * step_w ** -1.5)


def refresh_due(epoch, cfg: TrainingConfig):
    return epoch > cfg.warm_epochs and epoch % cfg.refresh_period == 0


def refresh_durations(model: Ssrnet, corpus, lambda_align):
    """Re-derive every utterance's durations from the model-refined DTW cost."""
    table = {}
    for utt in corpus:
        mel_star = model.bypass(utt.silent)
        path = dtw_refined(utt.silent, utt.vocal, mel_star, utt.mel, lambda_align)
        d = path_to_durations(path, utt.N, utt.M)
        if d.sum() != utt.M:
            raise TrainingError(f"{utt.uid}: refreshed durations sum to {d.sum()}, expected {utt.M}")
        table[utt.uid] = d
    return table


def batches(items, batch_size, rng):
    order = rng.permutation(len(items))
    for k in range(0, len(items), batch_size):
        yield [items[i] for i in order[k:k + batch_size]]


def evaluate_loss(model, corpus, batch_size=8):
    """Eval-mode composite loss pooled over ``corpus`` (element-weighted like training)."""
    totals = {}
    weight = 0
    with no_grad():
        for k in range(0, len(corpus), batch_size):
            chunk = corpus[k:k + batch_size]
            batch = pad_batch(chunk)
            out = model.forward(batch["X"], batch["src_mask"], batch["durations_list"], training=False)
            _, parts = total_loss(out, batch["targets"], model.cfg)
            n = len(chunk)
            for key, val in parts.items():
                totals[key] = totals.get(key, 0.0) + val * n
            weight += n
    return {k: v / weight for k, v in totals.items()}


def train_step(model, batch, state, cfg: TrainingConfig):
    out = model.forward(batch["X"], batch["src_mask"], batch["durations_list"], training=True)
    loss, parts = total_loss(out, batch["targets"], model.cfg)
    loss.backward()
    clip_grad_norm(model.store, cfg.grad_clip)
    state.step += 1
    lr = noam_lr(state.step, cfg.step_w, cfg.d_model, cfg.lr_scale)
    adam_step(model.store, lr)
    parts["lr"] = lr
    return parts


def write_loss_log(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_LOG_COLUMNS)
        for row in rows:
            writer.writerow([row["step"]] + [repr(float(row[c])) for c in LOSS_LOG_COLUMNS[1:]])


def train(model: Ssrnet, train_set, val_set, cfg: TrainingConfig, out_dir=None, progress=None):
    """Train ``model`` in place; returns the final state plus per-epoch and per-step logs.

    ``train_set`` / ``val_set`` are lists of :class:`UtteranceData` whose
    ``durations`` hold the initial (plain DTW) ground truth.
    """
    if not train_set:
        raise TrainingError("empty training split")
    if not val_set:
        raise TrainingError("empty validation split")
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    state = TrainState(durations={u.uid: u.durations.copy() for u in train_set})
    epoch_log, step_log = [], []
    for epoch in range(1, cfg.epochs + 1):
        state.epoch = epoch
        refreshed = refresh_due(epoch, cfg)
        if refreshed:
            state.durations = refresh_durations(model, train_set, cfg.lambda_align)
            for u in train_set:
                u.durations = state.durations[u.uid]
        rng = np.random.default_rng([cfg.seed, epoch])
        sums, count = {}, 0
        for chunk in batches(train_set, cfg.batch_size, rng):
            try:
                parts = train_step(model, pad_batch(chunk), state, cfg)
            except NonFiniteError as exc:
                raise TrainingError(f"non-finite value at epoch {epoch}, step {state.step + 1}: {exc}") from exc
            step_log.append({"step": state.step, **parts})
            # item-weighted, so a short last batch counts for what it holds
            for key in LOSS_TERMS + ("total",):
                sums[key] = sums.get(key, 0.0) + parts[key] * len(chunk)
            count += len(chunk)
        train_loss = {k: v / count for k, v in sums.items()}
        val = evaluate_loss(model, val_set, cfg.batch_size)
        improved = val["total"] < state.best_val
        if improved:
            state.best_val, state.best_epoch = val["total"], epoch
            state.best_params = model.store.state_dict()
        row = {"epoch": epoch, "train_total": train_loss["total"], "val_total": val["total"],
               "refreshed": refreshed, "best": improved}
        epoch_log.append(row)
        if progress:
            progress(row)
        log.info("epoch %d train %.4f val %.4f%s", epoch, row["train_total"], row["val_total"],
                 " (refreshed)" if refreshed else "")
        if out_dir and (refreshed or improved):
            meta = {"epoch": epoch, "step": state.step, "model": model.cfg.to_dict(), "training": asdict(cfg)}
            if refreshed:
                save_checkpoint(out_dir / f"epoch{epoch:04d}.ckpt", model.store.state_dict(), meta)
            if improved:
                save_checkpoint(out_dir / "best.ckpt", state.best_params, meta)
    if out_dir:
        write_loss_log(out_dir / "loss_log.csv", step_log)
        with open(out_dir / "epoch_log.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(epoch_log[0]))
            writer.writeheader()
            for row in epoch_log:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return TrainResult(state, epoch_log, step_log)


def toneme_accuracy(model, corpus, exclude_silence=True):
    """Frame accuracy of the toneme head under each utterance's current durations."""
    hit = total = 0
    for u in corpus:
        pred = model.classify(u.silent, u.durations)
        keep = u.tonemes != 0 if exclude_silence else np.ones(u.M, dtype=bool)
        hit += int(np.sum(pred[keep] == u.tonemes[keep]))
        total += int(keep.sum())
    return hit / max(total, 1)


def tone_accuracy(model, corpus, toneme_set):
    """Share of toned frames whose predicted label carries the true tone digit."""
    tones = np.array([tone_of(lab) or 0 for lab in toneme_set.labels])
    hit = total = 0
    for u in corpus:
        pred = model.classify(u.silent, u.durations)
        keep = tones[u.tonemes] > 0
        hit += int(np.sum(tones[pred[keep]] == tones[u.tonemes[keep]]))
        total += int(keep.sum())
    return hit / max(total, 1)


def confusion_matrix(model, corpus, n_classes, exclude_silence=True):
    """Row-normalised frame confusion (true label i, predicted j); empty rows stay zero."""
    counts = np.zeros((n_classes, n_classes))
    for u in corpus:
        pred = model.classify(u.silent, u.durations)
        keep = u.tonemes != 0 if exclude_silence else np.ones(u.M, dtype=bool)
        np.add.at(counts, (u.tonemes[keep], pred[keep]), 1.0)
    rows = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
