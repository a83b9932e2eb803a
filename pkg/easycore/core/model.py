"""EasyCore — Residual MLP classifiers and EZC1 checkpoints.

Layout: input linear layer, `num_blocks` residual blocks computing
x <- x + Linear(relu(x)), then a linear head. Weights are stored as
[fan_in, fan_out] so a layer is x @ W + b.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import CheckpointError, ShapeMismatchError, ValidationError
from .autodiff import Tensor, op_forward
from .random import generator

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"EZC1"


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 2
    hidden_dim: int = 256
    num_blocks: int = 20
    num_classes: int = 2

    def validate(self):
        problems = []
        for field in ("input_dim", "hidden_dim"):
            if int(getattr(self, field)) <= 0:
                problems.append(f"model.{field} must be positive, got {getattr(self, field)}")
        if int(self.num_blocks) < 0:
            problems.append(f"model.num_blocks must be nonnegative, got {self.num_blocks}")
        if int(self.num_classes) < 2:
            problems.append(f"model.num_classes must be at least 2, got {self.num_classes}")
        if problems:
            raise ValidationError("invalid model config", problems)
        return self

    def parameter_count(self):
        d, h, b, c = self.input_dim, self.hidden_dim, self.num_blocks, self.num_classes
        return d * h + h + b * (h * h + h) + h * c + c

    def parameter_shapes(self):
        """Ordered (name, shape) pairs; this order is also the checkpoint order."""
        h = self.hidden_dim
        shapes = [("input.weight", (self.input_dim, h)), ("input.bias", (h,))]
        for i in range(self.num_blocks):
            shapes += [(f"blocks.{i}.weight", (h, h)), (f"blocks.{i}.bias", (h,))]
        shapes += [("head.weight", (h, self.num_classes)), ("head.bias", (self.num_classes,))]
        return shapes


class Model:
    """A residual MLP: named parameter tensors plus the config they satisfy."""

    def __init__(self, config, parameters):
        self.config = config
        expected = config.parameter_shapes()
        if {name for name, _ in expected} != set(parameters):
            raise CheckpointError("parameter names do not match the model config")
        self.parameters = {name: parameters[name] for name, _ in expected}
        for name, shape in expected:
            if self.parameters[name].shape != shape:
                raise ShapeMismatchError(name, self.parameters[name].shape, shape)

    def __getitem__(self, name):
        return self.parameters[name]

    def named_parameters(self):
        return self.parameters.items()

    def parameter_count(self):
        return sum(t.size for t in self.parameters.values())

    def zero_grad(self):
        for t in self.parameters.values():
            t.zero_grad()

    def frozen(self):
        """Read-only view sharing buffers; forward passes record no parameter grads."""
        return Model(self.config, {n: t.detach() for n, t in self.parameters.items()})

    def copy(self, requires_grad=None):
        """Deep copy; `requires_grad` overrides the flag on every parameter when given."""
        return Model(
            self.config,
            {n: Tensor(t.data.copy(), requires_grad=t.requires_grad if requires_grad is None else requires_grad, name=n)
             for n, t in self.parameters.items()},
        )

    # -- forward ----------------------------------------------------------

    def _linear(self, x, prefix, tape):
        z = op_forward("matmul", [x, self.parameters[f"{prefix}.weight"]], tape)
        return op_forward("add", [z, self.parameters[f"{prefix}.bias"]], tape)

    def features(self, x, tape=None):
        if x.data.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ShapeMismatchError("model input", x.shape, ("batch", self.config.input_dim))
        h = self._linear(x, "input", tape)
        for i in range(self.config.num_blocks):
            branch = self._linear(op_forward("relu", [h], tape), f"blocks.{i}", tape)
            h = op_forward("residual-add", [h, branch], tape)
        return h

    def head(self, features, tape=None):
        return self._linear(features, "head", tape)

    def forward(self, x, tape=None):
        return self.head(self.features(x, tape), tape)

    def predict(self, x):
        """Predicted class per row; ties go to the lowest class index."""
        logits = self.frozen().forward(Tensor(x)).data
        return np.argmax(logits, axis=1)


def build_model(config, init_seed):
    """Build a model with fan-in uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    Deterministic given `init_seed`; biases use the fan-in of their layer.
    """
    config.validate()
    rng = generator(init_seed, "init")
    parameters = {}
    fan_in = None
    for name, shape in config.parameter_shapes():
        if name.endswith(".weight"):
            fan_in = shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        parameters[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)
    model = Model(config, parameters)
    logger.debug("built model %s with %d parameters", config, model.parameter_count())
    return model


def forward_logits(model, batch, tape=None):
    return model.forward(batch if isinstance(batch, Tensor) else Tensor(batch), tape)


def penultimate_features(model, batch, tape=None):
    return model.features(batch if isinstance(batch, Tensor) else Tensor(batch), tape)


# ---------------------------------------------------------------------------
# EZC1 checkpoints: magic, u32 count, then per tensor
# u16 name length, utf-8 name, u8 rank, u32 dims, f64 values (little-endian).

def save_checkpoint(model, path):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(model.parameters))]
    for name, tensor in model.named_parameters():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", tensor.data.ndim))
        chunks.append(struct.pack(f"<{tensor.data.ndim}I", *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))
    return path


def read_checkpoint(path):
    """Parse an EZC1 file into an ordered {name: array} dict."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not an EZC1 checkpoint")
    try:
        (count,) = struct.unpack_from("<I", blob, 4)
        offset = 8
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
            offset += 8 * size
            tensors[name] = values.astype(np.float64).reshape(dims)
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({e})") from e
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return tensors


def infer_config(tensors):
    try:
        input_dim, hidden_dim = tensors["input.weight"].shape
        num_classes = tensors["head.weight"].shape[1]
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint lacks input/head layers ({e})") from e
    num_blocks = sum(1 for name in tensors if name.startswith("blocks.") and name.endswith(".weight"))
    return ModelConfig(int(input_dim), int(hidden_dim), num_blocks, int(num_classes))


def load_checkpoint(path, config=None):
    """Load a model; with `config`, a shape mismatch is a CheckpointError."""
    tensors = read_checkpoint(path)
    stored = infer_config(tensors)
    if config is not None and stored != config:
        raise CheckpointError(f"{path}: checkpoint holds {stored}, expected {config}")
    try:
        return Model(stored, {n: Tensor(a, requires_grad=True, name=n) for n, a in tensors.items()})
    except ShapeMismatchError as e:
        raise CheckpointError(f"{path}: {e}") from e
