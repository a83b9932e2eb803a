"""EasyCore — FGSM and PGD adversaries in the l-inf ball, adversarial accuracy.

Each PGD iterate takes a signed gradient step, is projected back into the
epsilon-ball around the clean input, and is then clipped to the input domain.
The two clips do not commute at domain boundaries; this order keeps the domain
bounds exact.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import NonFiniteError, ShapeMismatchError, ValidationError
from .autodiff import Tape, Tensor, backward, op_forward
from .random import generator, uniform_ball

logger = logging.getLogger(__name__)

OBJECTIVES = ("cross-entropy", "kl-to-clean")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.5
    steps: int = 20
    step_size: Optional[float] = None
    random_start: bool = False
    start_seed: int = 0
    clip_min: Optional[float] = None
    clip_max: Optional[float] = None
    objective: str = "cross-entropy"

    @property
    def alpha(self):
        """Step size; epsilon / 4 unless set."""
        return self.epsilon / 4.0 if self.step_size is None else float(self.step_size)

    def validate(self):
        problems = []
        if not float(self.epsilon) >= 0:
            problems.append(f"attack.epsilon must be nonnegative, got {self.epsilon}")
        if int(self.steps) <= 0:
            problems.append(f"attack.steps must be positive, got {self.steps}")
        if self.step_size is not None and not float(self.step_size) > 0:
            problems.append(f"attack.step_size must be positive, got {self.step_size}")
        if self.clip_min is not None and self.clip_max is not None and not self.clip_min < self.clip_max:
            problems.append(f"attack.clip_min ({self.clip_min}) must be below attack.clip_max ({self.clip_max})")
        if self.objective not in OBJECTIVES:
            problems.append(f"attack.objective must be one of {', '.join(OBJECTIVES)}, got '{self.objective}'")
        if problems:
            raise ValidationError("invalid attack config", problems)
        return self


def _clip(x, clip_min, clip_max):
    if clip_min is None and clip_max is None:
        return x
    return np.clip(x, clip_min, clip_max)


def input_gradients(model, x, y, objective="cross-entropy", reference_logits=None):
    """Per-sample gradient of the unreduced objective w.r.t. each input row.

    `model` should be frozen so that no parameter gradients accumulate.
    """
    tape = Tape()
    xt = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    logits = model.forward(xt, tape)
    if objective == "cross-entropy":
        loss = op_forward("softmax-cross-entropy", [logits], tape, labels=y, reduction="sum")
    elif objective == "kl-to-clean":
        loss = op_forward("kl-divergence", [Tensor(reference_logits), logits], tape, reduction="sum")
    else:
        raise ValidationError(f"unknown attack objective '{objective}'")
    backward(tape, loss)
    grad = xt.grad if xt.grad is not None else np.zeros_like(xt.data)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite input gradient")
    return grad


def fgsm(model, x, y, epsilon, clip=None):
    """x + epsilon * sign(grad_x CE), clipped to `clip` = (min, max) when given."""
    if not epsilon >= 0:
        raise ValidationError(f"epsilon must be nonnegative, got {epsilon}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ShapeMismatchError("fgsm", x.shape, y.shape)
    clip_min, clip_max = clip if clip is not None else (None, None)
    g = input_gradients(model.frozen(), x, y)
    return _clip(x + epsilon * np.sign(g), clip_min, clip_max)


def pgd(model, x, y, cfg, rng=None):
    """Projected sign-gradient ascent on `cfg.objective` within the epsilon-ball.

    Args:
        rng: Generator for the random start; defaults to the
            (cfg.start_seed, "attack-start") stream.
    """
    cfg.validate()
    x0 = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x0.ndim != 2 or len(x0) != len(y):
        raise ShapeMismatchError("pgd", x0.shape, y.shape)
    eps = float(cfg.epsilon)
    frozen = model.frozen()
    reference = frozen.forward(Tensor(x0)).data if cfg.objective == "kl-to-clean" else None

    lower, upper = x0 - eps, x0 + eps
    if cfg.random_start:
        rng = rng if rng is not None else generator(cfg.start_seed, "attack-start")
        x_adv = _clip(uniform_ball(rng, x0, eps), cfg.clip_min, cfg.clip_max)
    else:
        x_adv = x0.copy()

    for _ in range(int(cfg.steps)):
        g = input_gradients(frozen, x_adv, y, cfg.objective, reference)
        x_adv = x_adv + cfg.alpha * np.sign(g)
        x_adv = np.clip(x_adv, lower, upper)
        x_adv = _clip(x_adv, cfg.clip_min, cfg.clip_max)
    return x_adv


@dataclass(frozen=True, eq=False)
class AttackReport:
    ids: np.ndarray
    clean_correct: np.ndarray
    adv_correct: np.ndarray
    linf: np.ndarray

    @property
    def clean_accuracy(self):
        return float(self.clean_correct.mean()) if len(self.ids) else 0.0

    @property
    def adversarial_accuracy(self):
        return float(self.adv_correct.mean()) if len(self.ids) else 0.0


def attack_dataset(model, data, cfg, batch_size=256, workers=1):
    """Attack every sample; batches run on a thread pool against a read-only model.

    The random start of batch b draws from (start_seed, "attack-start/b"), so
    results do not depend on the worker count.
    """
    if len(data) == 0:
        raise ValidationError("cannot attack an empty dataset")
    cfg.validate()
    frozen = model.frozen()
    starts = list(range(0, len(data), batch_size))

    def run(b, start):
        xb = data.features[start:start + batch_size]
        yb = data.labels[start:start + batch_size]
        rng = generator(cfg.start_seed, f"attack-start/{b}") if cfg.random_start else None
        x_adv = pgd(frozen, xb, yb, cfg, rng)
        clean = frozen.predict(xb) == yb
        adv = frozen.predict(x_adv) == yb
        linf = np.abs(x_adv - xb).max(axis=1) if xb.shape[1] else np.zeros(len(xb))
        return clean, adv, linf

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(starts)), starts))
    else:
        parts = [run(b, s) for b, s in enumerate(starts)]

    report = AttackReport(
        ids=np.asarray(data.ids),
        clean_correct=np.concatenate([p[0] for p in parts]),
        adv_correct=np.concatenate([p[1] for p in parts]),
        linf=np.concatenate([p[2] for p in parts]),
    )
    logger.info(
        "eps=%g steps=%d: clean %.4f, adversarial %.4f over %d samples",
        cfg.epsilon, cfg.steps, report.clean_accuracy, report.adversarial_accuracy, len(data),
    )
    return report


def adversarial_accuracy(model, data, cfg, batch_size=256, workers=1):
    """(overall adversarial accuracy, per-sample still-correct flags)."""
    report = attack_dataset(model, data, cfg, batch_size, workers)
    return report.adversarial_accuracy, report.adv_correct
