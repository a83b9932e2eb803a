"""EasyCore — SGD training loops (standard and TRADES), schedulers, AIGN scoring pass.

One epoch = seeded Fisher-Yates shuffle, mini-batch SGD over every batch
(final partial batch kept), then, when AIGN recording is on, a read-only pass
computing each sample's input-gradient norm on clean inputs.
"""

from __future__ import annotations

import glob
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..errors import NonFiniteError, ShapeMismatchError, UnknownKindError, ValidationError
from .attack import AttackConfig, input_gradients, pgd
from .autodiff import Tape, Tensor, backward, op_forward
from .coreset import AignLedger
from .io import write_rows
from .model import load_checkpoint, save_checkpoint
from .random import fisher_yates, generator

logger = logging.getLogger(__name__)

SCORING_CHUNK = 256


# ---------------------------------------------------------------------------
# Learning-rate schedules

@dataclass(frozen=True)
class SchedulerSpec:
    kind: str = "cosine"
    milestones: Tuple[int, ...] = ()
    gamma: float = 0.1
    step_size: int = 30
    t_max: int = 100
    eta_min: float = 0.0

    def validate(self):
        problems = []
        if self.kind not in SCHEDULERS:
            problems.append(f"scheduler.kind must be one of {', '.join(SCHEDULERS)}, got '{self.kind}'")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            problems.append(f"scheduler.milestones must be strictly increasing, got {list(self.milestones)}")
        if not 0.0 < float(self.gamma) <= 1.0:
            problems.append(f"scheduler.gamma must lie in (0, 1], got {self.gamma}")
        if int(self.step_size) <= 0:
            problems.append(f"scheduler.step_size must be positive, got {self.step_size}")
        if int(self.t_max) <= 0:
            problems.append(f"scheduler.t_max must be positive, got {self.t_max}")
        if not float(self.eta_min) >= 0:
            problems.append(f"scheduler.eta_min must be nonnegative, got {self.eta_min}")
        if problems:
            raise ValidationError("invalid scheduler", problems)
        return self


def _multistep(spec, initial_lr, epoch):
    passed = sum(1 for m in spec.milestones if m <= epoch)
    return initial_lr * spec.gamma ** passed


def _step(spec, initial_lr, epoch):
    return initial_lr * spec.gamma ** (epoch // spec.step_size)


def _cosine(spec, initial_lr, epoch):
    # holds at eta_min past t_max
    epoch = min(epoch, spec.t_max)
    return spec.eta_min + 0.5 * (initial_lr - spec.eta_min) * (1.0 + math.cos(math.pi * epoch / spec.t_max))


SCHEDULERS = {
    "multistep": _multistep,
    "step": _step,
    "cosine": _cosine,
}


def lr_at(spec, initial_lr, epoch):
    try:
        rule = SCHEDULERS[spec.kind]
    except KeyError:
        raise UnknownKindError("scheduler", spec.kind, SCHEDULERS) from None
    return rule(spec, initial_lr, epoch)


# ---------------------------------------------------------------------------
# Configs

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    initial_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    scheduler: SchedulerSpec = field(default_factory=SchedulerSpec)
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint_dir: str = "checkpoints"
    record_aign: bool = False
    record_trajectory: bool = False
    log_path: Optional[str] = None
    workers: int = 1

    def validate(self):
        problems = []
        if int(self.epochs) < 0:
            problems.append(f"train.epochs must be nonnegative, got {self.epochs}")
        if int(self.batch_size) <= 0:
            problems.append(f"train.batch_size must be positive, got {self.batch_size}")
        if not float(self.initial_lr) > 0:
            problems.append(f"train.initial_lr must be positive, got {self.initial_lr}")
        if not 0.0 <= float(self.momentum) < 1.0:
            problems.append(f"train.momentum must lie in [0, 1), got {self.momentum}")
        if not float(self.weight_decay) >= 0:
            problems.append(f"train.weight_decay must be nonnegative, got {self.weight_decay}")
        if int(self.checkpoint_every) < 0:
            problems.append(f"train.checkpoint_every must be nonnegative, got {self.checkpoint_every}")
        if int(self.workers) <= 0:
            problems.append(f"train.workers must be positive, got {self.workers}")
        if self.scheduler.kind == "cosine":
            if int(self.epochs) > int(self.scheduler.t_max):
                problems.append(f"train.epochs ({self.epochs}) exceeds scheduler.t_max ({self.scheduler.t_max})"
                                " for the cosine schedule")
            if float(self.scheduler.eta_min) > float(self.initial_lr):
                problems.append(f"scheduler.eta_min ({self.scheduler.eta_min}) exceeds train.initial_lr ({self.initial_lr})")
        try:
            self.scheduler.validate()
        except ValidationError as e:
            problems.extend(e.problems)
        if problems:
            raise ValidationError("invalid training config", problems)
        return self


@dataclass(frozen=True)
class TradesConfig:
    """TRADES objective: CE(f(x), y) + beta * KL between adversarial and clean predictions.

    `kl_order` "adv-clean" is KL(softmax(f(x')) || softmax(f(x))); "clean-adv"
    swaps the arguments.
    """

    beta: float = 6.0
    inner_attack: AttackConfig = field(
        default_factory=lambda: AttackConfig(epsilon=0.5, steps=10, random_start=True, objective="kl-to-clean")
    )
    kl_order: str = "adv-clean"

    def validate(self):
        problems = []
        if not float(self.beta) >= 0:
            problems.append(f"trades.beta must be nonnegative, got {self.beta}")
        if self.inner_attack.objective != "kl-to-clean":
            problems.append("trades inner attack must target the KL divergence to the clean prediction")
        if self.kl_order not in ("adv-clean", "clean-adv"):
            problems.append(f"trades.kl_order must be 'adv-clean' or 'clean-adv', got '{self.kl_order}'")
        try:
            self.inner_attack.validate()
        except ValidationError as e:
            problems.extend(e.problems)
        if problems:
            raise ValidationError("invalid TRADES config", problems)
        return self


# ---------------------------------------------------------------------------
# Optimizer

def sgd_step(model, grads, lr, momentum, weight_decay, state):
    """v <- momentum * v + (grad + weight_decay * w); w <- w - lr * v.

    Args:
        grads: {parameter name: gradient array}.
        state: {parameter name: velocity}; updated in place.

    Returns:
        (model, state)
    """
    for name, param in model.named_parameters():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeMismatchError(f"sgd_step {name}", grad.shape, param.shape)
        d_p = grad + weight_decay * param.data if weight_decay else grad
        velocity = state.get(name)
        velocity = d_p.copy() if velocity is None else momentum * velocity + d_p
        state[name] = velocity
        param.data -= lr * velocity
    return model, state


# ---------------------------------------------------------------------------
# Losses

def _cross_entropy(model, x, y, tape):
    logits = model.forward(Tensor(x), tape)
    loss = op_forward("softmax-cross-entropy", [logits], tape, labels=y, reduction="mean")
    return loss, logits


def _trades_objective(model, x, y, cfg, tape, rng):
    ce, clean_logits = _cross_entropy(model, x, y, tape)
    if cfg.beta == 0:
        return ce, clean_logits
    if cfg.inner_attack.epsilon == 0:
        x_adv = np.array(x, dtype=np.float64)
    else:
        x_adv = pgd(model, x, y, cfg.inner_attack, rng)
    adv_logits = model.forward(Tensor(x_adv), tape)
    pair = [adv_logits, clean_logits] if cfg.kl_order == "adv-clean" else [clean_logits, adv_logits]
    kl = op_forward("kl-divergence", pair, tape, reduction="mean")
    return op_forward("add", [ce, op_forward("scale", [kl], tape, factor=cfg.beta)], tape), clean_logits


def trades_loss(model, x, y, cfg, tape=None, rng=None):
    """CE(f(x), y) + beta * KL, with x' from the inner attack held constant."""
    cfg.validate()
    loss, _ = _trades_objective(model, x, y, cfg, tape, rng)
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteError("non-finite TRADES loss")
    return loss


# ---------------------------------------------------------------------------
# AIGN scoring pass

def input_gradient_norms(model, data, chunk_size=SCORING_CHUNK, workers=1):
    """||grad_x CE(f(x_i), y_i)||_2 for every row, in row order.

    Chunks are fixed-size slices in row order regardless of `workers`, so the
    result is bitwise independent of the worker count.
    """
    frozen = model.frozen()
    starts = list(range(0, len(data), chunk_size))

    def run(start):
        xb = data.features[start:start + chunk_size]
        yb = data.labels[start:start + chunk_size]
        return np.linalg.norm(input_gradients(frozen, xb, yb), axis=1)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    return np.concatenate(parts) if parts else np.zeros(0)


def score_checkpoints(paths, data, config=None, keep_trajectory=False, workers=1):
    """Rebuild an AIGN ledger by replaying saved checkpoints in order."""
    ledger = AignLedger(data.ids, keep_trajectory)
    for path in paths:
        model = load_checkpoint(path, config)
        ledger.record(input_gradient_norms(model, data, workers=workers))
    logger.info("replayed %d checkpoint(s) over %d samples", len(paths), len(data))
    return ledger


# ---------------------------------------------------------------------------
# Checkpoints

def checkpoint_path(directory, epoch):
    return os.path.join(directory, f"epoch_{epoch:04d}.ezc")


def epoch_checkpoints(directory):
    """Epoch checkpoints under `directory`, oldest first."""
    return sorted(glob.glob(os.path.join(directory, "epoch_*.ezc")))


def _clear_checkpoints(directory):
    stale = epoch_checkpoints(directory)
    for path in stale:
        os.remove(path)
    if stale:
        logger.info("removed %d epoch checkpoints left in %s by an earlier run", len(stale), directory)


# ---------------------------------------------------------------------------
# Loops

def fit(model, data, config, trades=None, score_data=None):
    """Train `model` in place; standard CE, or TRADES when `trades` is given.

    Returns:
        (model, ledger); ledger is None unless config.record_aign.
    """
    config.validate()
    if trades is not None:
        trades.validate()
    if len(data) == 0:
        raise ValidationError("cannot train on an empty dataset")
    scored = data if score_data is None else score_data
    ledger = AignLedger(scored.ids, config.record_trajectory) if config.record_aign else None

    shuffle_rng = generator(config.seed, "shuffle")
    attack_rng = generator(config.seed, "trades-start")
    velocity = {}
    history = []
    n = len(data)
    if config.checkpoint_every:
        _clear_checkpoints(config.checkpoint_dir)

    for epoch in range(config.epochs):
        lr = lr_at(config.scheduler, config.initial_lr, epoch)
        order = fisher_yates(n, shuffle_rng)
        total_loss = 0.0
        correct = 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            rows = order[start:start + config.batch_size]
            xb, yb = data.features[rows], data.labels[rows]
            tape = Tape()
            if trades is None:
                loss, logits = _cross_entropy(model, xb, yb, tape)
            else:
                loss, logits = _trades_objective(model, xb, yb, trades, tape, attack_rng)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteError("non-finite training loss", {"epoch": epoch, "batch": b})
            model.zero_grad()
            backward(tape, loss)
            grads = {name: p.grad for name, p in model.named_parameters()}
            sgd_step(model, grads, lr, config.momentum, config.weight_decay, velocity)
            total_loss += value * len(rows)
            correct += int((np.argmax(logits.data, axis=1) == yb).sum())
        model.zero_grad()

        row = (epoch, lr, total_loss / n, correct / n)
        history.append(row)
        logger.info("epoch %d lr %.6g loss %.6f acc %.4f", *row)

        if ledger is not None:
            ledger.record(input_gradient_norms(model, scored, workers=config.workers))
        if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(model, checkpoint_path(config.checkpoint_dir, epoch))

    if config.log_path:
        write_rows(config.log_path, ["epoch", "lr", "mean_loss", "train_accuracy"], history)
    return model, ledger


def train_standard(model, data, config, score_data=None):
    """Mini-batch SGD on softmax cross-entropy; returns (model, ledger or None)."""
    return fit(model, data, config, score_data=score_data)


def train_trades(model, data, config, trades):
    """Mini-batch SGD on the TRADES objective; returns the model."""
    model, _ = fit(model, data, config, trades=trades)
    return model


def evaluate_accuracy(model, data):
    if len(data) == 0:
        return 0.0
    return float((model.predict(data.features) == data.labels).mean())
