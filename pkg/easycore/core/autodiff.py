"""EasyCore — Reverse-mode differentiation over dense float64 tensors.

A forward pass records one `Node` per differentiable operation on a `Tape`;
`backward` replays the tape in reverse and accumulates gradients into every
leaf tensor that requires them. Operation kinds live in the `OP_KINDS`
registry; each rule returns its result and a local vector-Jacobian product.

Tapes and the tensors they reference are confined to one thread.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Sequence, Tuple

import numpy as np

from ..errors import NonFiniteError, ShapeMismatchError, UnknownKindError, ValidationError

logger = logging.getLogger(__name__)


class Tensor:
    """Dense float64 array with an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        return self.data.reshape(-1)

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        """Constant view sharing the same buffer."""
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f"'{self.name}', " if self.name else ""
        return f"Tensor({label}shape={self.shape}{flag})"


VJP = Callable[[np.ndarray, Tuple[bool, ...]], Tuple[object, ...]]


@dataclass(frozen=True)
class Node:
    kind: str
    operands: Tuple[Tensor, ...]
    output: Tensor
    vjp: VJP


class Tape:
    """Ordered record of operations; operands always precede their consumers."""

    def __init__(self):
        self.nodes = []

    def record(self, node):
        self.nodes.append(node)

    def __len__(self):
        return len(self.nodes)


# ---------------------------------------------------------------------------
# Numerics shared with attacks and analyses

def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def _reduce(per_sample, reduction):
    if reduction == "none":
        return per_sample
    if reduction == "sum":
        return np.asarray(per_sample.sum())
    if reduction == "mean":
        return np.asarray(per_sample.sum() / per_sample.shape[0])
    raise ValidationError(f"unknown reduction '{reduction}' (known: none, sum, mean)")


def _row_weights(g, reduction, rows):
    """Upstream gradient of a reduced per-sample loss, as a column vector."""
    if reduction == "none":
        return g.reshape(rows, 1)
    if reduction == "sum":
        return np.full((rows, 1), float(g))
    return np.full((rows, 1), float(g) / rows)


def _check_labels(kind, logits, labels):
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatchError(kind, logits.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValidationError(f"{kind}: labels must lie in [0, {logits.shape[1]})")
    return labels


# ---------------------------------------------------------------------------
# Operation rules: (arrays..., **attrs) -> (result, vjp)

def _matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)

    def vjp(g, needs):
        return (g @ b.T if needs[0] else None, a.T @ g if needs[1] else None)

    return a @ b, vjp


def _add(a, b):
    bias = a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]
    if a.shape != b.shape and not bias:
        raise ShapeMismatchError("add", a.shape, b.shape)

    def vjp(g, needs):
        gb = None
        if needs[1]:
            gb = g.sum(axis=0) if bias else g
        return (g if needs[0] else None, gb)

    return a + b, vjp


def _residual_add(a, b):
    if a.shape != b.shape:
        raise ShapeMismatchError("residual-add", a.shape, b.shape)

    def vjp(g, needs):
        return (g if needs[0] else None, g if needs[1] else None)

    return a + b, vjp


def _relu(a):
    # subgradient at 0 is 0
    mask = a > 0

    def vjp(g, needs):
        return (g * mask,)

    return np.where(mask, a, 0.0), vjp


def _scale(a, *, factor):
    factor = float(factor)

    def vjp(g, needs):
        return (g * factor,)

    return a * factor, vjp


def _sum(a):
    def vjp(g, needs):
        return (np.full(a.shape, float(g)),)

    return np.asarray(a.sum()), vjp


def _softmax_cross_entropy(logits, *, labels, reduction="mean"):
    labels = _check_labels("softmax-cross-entropy", logits, labels)
    rows = np.arange(labels.shape[0])
    logp = log_softmax(logits)
    out = _reduce(-logp[rows, labels], reduction)

    def vjp(g, needs):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * _row_weights(g, reduction, labels.shape[0]),)

    return out, vjp


def _kl_divergence(p_logits, q_logits, *, reduction="mean"):
    """KL(softmax(p_logits) || softmax(q_logits)) per row."""
    if p_logits.shape != q_logits.shape or p_logits.ndim != 2:
        raise ShapeMismatchError("kl-divergence", p_logits.shape, q_logits.shape)
    logp = log_softmax(p_logits)
    logq = log_softmax(q_logits)
    p = np.exp(logp)
    ratio = logp - logq
    out = _reduce((p * ratio).sum(axis=1), reduction)

    def vjp(g, needs):
        w = _row_weights(g, reduction, p.shape[0])
        gp = gq = None
        if needs[0]:
            gp = p * (ratio - (p * ratio).sum(axis=1, keepdims=True)) * w
        if needs[1]:
            gq = (np.exp(logq) - p) * w
        return (gp, gq)

    return out, vjp


OP_KINDS: Dict[str, Callable] = {
    "matmul": _matmul,
    "add": _add,
    "residual-add": _residual_add,
    "relu": _relu,
    "scale": _scale,
    "sum": _sum,
    "softmax-cross-entropy": _softmax_cross_entropy,
    "kl-divergence": _kl_divergence,
}


def op_forward(kind, operands: Sequence[Tensor], tape=None, **attrs):
    """Evaluate one operation kind and record it when gradients are needed.

    Args:
        kind: Key of `OP_KINDS`.
        operands: Input tensors.
        tape: Tape to record on; without one the result is a constant.
        **attrs: Non-differentiable attributes (labels, factor, reduction).

    Returns:
        The result tensor.
    """
    try:
        rule = OP_KINDS[kind]
    except KeyError:
        raise UnknownKindError("operation", kind, OP_KINDS) from None
    operands = tuple(operands)
    data, vjp = rule(*(t.data for t in operands), **attrs)
    tracked = tape is not None and any(t.requires_grad for t in operands)
    out = Tensor(data, requires_grad=tracked, name=kind)
    if tracked:
        tape.record(Node(kind, operands, out, vjp))
    return out


def backward(tape, loss):
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf on `tape`.

    Leaves that the loss does not reach receive a zero gradient. Calling
    twice without clearing grads accumulates.

    Returns:
        Mapping from each leaf tensor to its accumulated gradient.
    """
    if loss.size != 1:
        raise ValidationError(f"backward needs a scalar loss, got shape {loss.shape}")

    adjoints = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    produced = {id(node.output) for node in tape.nodes}

    for node in reversed(tape.nodes):
        g = adjoints.pop(id(node.output), None)
        needs = tuple(t.requires_grad for t in node.operands)
        for t in node.operands:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t
        if g is None:
            continue
        for operand, og in zip(node.operands, node.vjp(g, needs)):
            if og is None or not operand.requires_grad:
                continue
            key = id(operand)
            adjoints[key] = og if key not in adjoints else adjoints[key] + og

    gradients = {}
    for key, leaf in leaves.items():
        contribution = adjoints.get(key)
        if contribution is None:
            contribution = np.zeros_like(leaf.data)
        contribution = np.broadcast_to(contribution, leaf.shape)
        leaf.grad = np.array(contribution) if leaf.grad is None else leaf.grad + contribution
        gradients[leaf] = leaf.grad
    return gradients


def finite_diff_check(program, point, h=1e-6):
    """Compare analytic and central-difference gradients of a scalar program.

    Args:
        program: Callable (x: Tensor, tape: Tape | None) -> scalar Tensor.
        point: Where to evaluate (Tensor or array).
        h: Central-difference half step.

    Returns:
        max_i |analytic_i - central_i| / max(|analytic_i|, |central_i|, 1e-12)
    """
    if not h > 0:
        raise ValidationError(f"finite_diff_check needs h > 0, got {h}")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)

    x = Tensor(base.copy(), requires_grad=True)
    tape = Tape()
    loss = program(x, tape)
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteError("program is not finite at the check point")
    backward(tape, loss)
    analytic = x.grad if x.grad is not None else np.zeros_like(base)

    def evaluate(values):
        value = program(Tensor(values), None).item()
        if not np.isfinite(value):
            raise NonFiniteError("program is not finite in the h-neighbourhood")
        return value

    central = np.empty(base.size)
    flat = base.reshape(-1)
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += h
        minus[i] -= h
        central[i] = (evaluate(plus.reshape(base.shape)) - evaluate(minus.reshape(base.shape))) / (2.0 * h)

    analytic = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(central)), 1e-12)
    error = float(np.max(np.abs(analytic - central) / denom)) if flat.size else 0.0
    logger.debug("finite-difference check over %d coordinates: max rel err %.3e", flat.size, error)
    return error
