"""EasyCore — Run manifests and staleness checks."""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List

from ..core.io import file_digest, read_yaml, write_yaml
from ..errors import ValidationError
from .config import config_digest, resolved_dict

logger = logging.getLogger(__name__)


@dataclass
class RunManifest:
    run_id: str
    seed: int
    config_digest: str
    subcommand: str
    inputs: Dict[str, str] = field(default_factory=dict)  # path -> sha256
    outputs: List[str] = field(default_factory=list)
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)


def manifest_path(output_dir, subcommand, tag=None):
    name = f"manifest_{subcommand}_{tag}.yaml" if tag else f"manifest_{subcommand}.yaml"
    return os.path.join(output_dir, name)


def new_manifest(cfg, subcommand, tag=None):
    digest = config_digest(cfg)
    run_id = f"{subcommand}-{tag}-{digest[:12]}" if tag else f"{subcommand}-{digest[:12]}"
    return RunManifest(run_id, cfg.seed, digest, subcommand, config=resolved_dict(cfg))


def record_inputs(manifest, paths):
    for path in paths:
        if path and os.path.exists(path):
            manifest.inputs[path] = file_digest(path)


def write_manifest(path, manifest):
    missing = [p for p in manifest.outputs if not os.path.exists(p)]
    if missing:
        raise ValidationError(f"manifest references missing output(s): {', '.join(missing)}")
    write_yaml(path, asdict(manifest))
    logger.info("wrote manifest %s (run %s)", path, manifest.run_id)
    return path


def read_manifest(path):
    data = read_yaml(path)
    try:
        return RunManifest(**data)
    except TypeError as e:
        raise ValidationError(f"{path}: malformed manifest ({e})") from None


def verify(path, cfg):
    """Problems that make the artifacts behind `path` stale; empty when current."""
    if not os.path.exists(path):
        return [f"no manifest at {path}"]
    manifest = read_manifest(path)
    problems = []
    digest = config_digest(cfg)
    if manifest.config_digest != digest:
        problems.append(f"config digest changed: manifest {manifest.config_digest[:12]}, now {digest[:12]}")
    for output in manifest.outputs:
        if not os.path.exists(output):
            problems.append(f"missing output {output}")
    for source, recorded in manifest.inputs.items():
        if not os.path.exists(source):
            problems.append(f"missing input {source}")
        elif file_digest(source) != recorded:
            problems.append(f"input changed since the run: {source}")
    return problems
