"""EasyCore — Run configuration: loading, overrides, validation, digest.

Config files are TOML (or YAML by extension) with sections [dataset],
[model], [train], [trades], [attack], [select], [score], [analysis] and
[output], plus a top-level `seed` from which every random stream is derived.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import yaml

from ..core.attack import AttackConfig
from ..core.coreset import CoresetSpec
from ..core.data import ClusterConfig
from ..core.model import ModelConfig
from ..core.train import SchedulerSpec, TradesConfig, TrainConfig
from ..errors import ValidationError

logger = logging.getLogger(__name__)

THREADS_ENV = "EASYCORE_THREADS"
SPLITS = ("train", "test")


@dataclass(frozen=True)
class DatasetSection:
    kind: str = "clusters"
    train: Optional[str] = None
    test: Optional[str] = None
    header: bool = False
    scale: bool = False
    export: bool = False
    clusters: ClusterConfig = field(default_factory=ClusterConfig.six_clusters)


@dataclass(frozen=True)
class ScoreSection:
    split: str = "train"
    trajectory: bool = False


@dataclass(frozen=True)
class AttackSection:
    split: str = "test"
    batch_size: int = 256


@dataclass(frozen=True)
class AnalysisSection:
    split: str = "train"
    bins: int = 20
    histogram_bins: int = 50
    resolution: int = 400
    padding: float = 0.1
    variance_target: float = 0.95
    lemma_batch_size: int = 2
    lemma_batches: int = 10
    svg: bool = True


@dataclass(frozen=True)
class OutputSection:
    dir: str = "runs/default"
    log_file: str = "easycore"


@dataclass(frozen=True)
class RunConfig:
    seed: int
    dataset: DatasetSection
    model: ModelConfig
    mode: str
    train: TrainConfig
    trades: TradesConfig
    attack: AttackConfig
    attack_run: AttackSection
    select: CoresetSpec
    score: ScoreSection
    analysis: AnalysisSection
    output: OutputSection
    raw: dict = field(default_factory=dict, compare=False, repr=False)


# ---------------------------------------------------------------------------
# Loading and overrides

def load_config(path):
    """Read a TOML or YAML config file into a plain dict."""
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ValidationError(f"config file not found: {path}")
    try:
        if path.lower().endswith((".yaml", ".yml")):
            with open(path, "r", encoding="utf-8") as f:
                raw = yaml.safe_load(f) or {}
        else:
            with open(path, "rb") as f:
                raw = tomllib.load(f)
    except (tomllib.TOMLDecodeError, yaml.YAMLError) as e:
        raise ValidationError(f"{path}: cannot parse config ({e})") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: top level must be a table")
    return raw


def _parse_scalar(text):
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw, assignments):
    """Apply 'section.key=value' assignments; values are parsed as TOML scalars.

    Returns a new dict; `raw` is left untouched.
    """
    resolved = copy.deepcopy(raw)
    problems = []
    for assignment in assignments or ():
        key, sep, text = assignment.partition("=")
        if not sep or not key.strip():
            problems.append(f"override '{assignment}' is not of the form section.key=value")
            continue
        *parents, leaf = [part.strip() for part in key.split(".")]
        node = resolved
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                problems.append(f"override '{assignment}': '{part}' is not a table")
                break
        else:
            node[leaf] = _parse_scalar(text.strip())
    if problems:
        raise ValidationError("invalid overrides", problems)
    return resolved


# ---------------------------------------------------------------------------
# Validation

def _section(raw, name, problems):
    value = raw.get(name, {})
    if not isinstance(value, dict):
        problems.append(f"[{name}] must be a table")
        return {}
    return dict(value)


def _type_ok(value, expected):
    if expected is bool:
        return isinstance(value, bool)
    if expected is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if expected is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, expected)


def _check_types(obj, label, problems):
    """Scalar fields must match the type of their default; bad values fall back to it."""
    fixes = {}
    for f in dataclasses.fields(obj):
        default = f.default
        if default is dataclasses.MISSING or default is None or not isinstance(default, (bool, int, float, str)):
            continue
        value = getattr(obj, f.name)
        if not _type_ok(value, type(default)):
            problems.append(f"{label}.{f.name} must be {type(default).__name__}, got {value!r}")
            fixes[f.name] = default
    return dataclasses.replace(obj, **fixes) if fixes else obj


def _build(cls, label, values, problems, fallback=None, **fixed):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        problems.append(f"[{label}] unknown key(s): {', '.join(unknown)}")
    kwargs = {k: v for k, v in values.items() if k in known}
    kwargs.update(fixed)
    try:
        obj = cls(**kwargs)
    except (TypeError, ValueError) as e:
        problems.append(f"[{label}] {e}")
        return fallback() if fallback else cls(**fixed)
    obj = _check_types(obj, label, problems)
    if hasattr(obj, "validate"):
        try:
            obj.validate()
        except ValidationError as e:
            problems.extend(e.problems or [str(e)])
        except (TypeError, ValueError) as e:
            problems.append(f"[{label}] {e}")
    return obj


def _tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(_tuple(v) for v in value)
    return value


def validate(raw):
    """Resolve a raw config dict into a RunConfig, reporting every problem at once."""
    problems = []
    known_sections = {"seed", "dataset", "model", "train", "trades", "attack", "select", "score", "analysis", "output"}
    unknown = sorted(set(raw) - known_sections)
    if unknown:
        problems.append(f"unknown top-level key(s): {', '.join(unknown)}")

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        problems.append(f"seed must be a nonnegative integer, got {seed!r}")
        seed = 0

    dataset_raw = _section(raw, "dataset", problems)
    clusters_raw = dataset_raw.pop("clusters", None)
    if not isinstance(clusters_raw, (dict, type(None))):
        problems.append("[dataset.clusters] must be a table")
        clusters_raw = None
    if clusters_raw is None:
        clusters = ClusterConfig.six_clusters()
    else:
        clusters = _build(
            ClusterConfig, "dataset.clusters", {k: _tuple(v) for k, v in clusters_raw.items()}, problems,
            fallback=ClusterConfig.six_clusters,
        )
    dataset = _build(DatasetSection, "dataset", dataset_raw, problems, clusters=clusters)
    if dataset.kind not in ("clusters", "csv"):
        problems.append(f"dataset.kind must be 'clusters' or 'csv', got '{dataset.kind}'")
    if dataset.kind == "csv" and not dataset.train:
        problems.append("dataset.train is required when dataset.kind = 'csv'")

    model = _build(ModelConfig, "model", _section(raw, "model", problems), problems)

    train_raw = _section(raw, "train", problems)
    mode = train_raw.pop("mode", "standard")
    if mode not in ("standard", "trades"):
        problems.append(f"train.mode must be 'standard' or 'trades', got '{mode}'")
    scheduler_raw = train_raw.pop("scheduler", {})
    scheduler = _build(SchedulerSpec, "train.scheduler", {k: _tuple(v) for k, v in scheduler_raw.items()}, problems)
    train = _build(TrainConfig, "train", train_raw, problems, scheduler=scheduler, seed=seed)

    trades_raw = _section(raw, "trades", problems)
    inner = AttackConfig(
        epsilon=trades_raw.pop("epsilon", 0.5),
        steps=trades_raw.pop("steps", 10),
        step_size=trades_raw.pop("step_size", None),
        random_start=True,
        start_seed=seed,
        objective="kl-to-clean",
    )
    trades = _build(TradesConfig, "trades", trades_raw, problems, inner_attack=inner)

    attack_raw = _section(raw, "attack", problems)
    run_keys = {k: attack_raw.pop(k) for k in ("split", "batch_size") if k in attack_raw}
    attack_run = _build(AttackSection, "attack", run_keys, problems)
    attack = _build(AttackConfig, "attack", attack_raw, problems, start_seed=seed)

    select = _build(CoresetSpec, "select", _section(raw, "select", problems), problems, seed=seed)
    score = _build(ScoreSection, "score", _section(raw, "score", problems), problems)
    analysis = _build(AnalysisSection, "analysis", _section(raw, "analysis", problems), problems)
    output = _build(OutputSection, "output", _section(raw, "output", problems), problems)

    for label, split in (("score.split", score.split), ("attack.split", attack_run.split),
                         ("analysis.split", analysis.split)):
        if split not in SPLITS:
            problems.append(f"{label} must be 'train' or 'test', got '{split}'")
    if int(attack_run.batch_size) <= 0:
        problems.append(f"attack.batch_size must be positive, got {attack_run.batch_size}")
    if int(analysis.resolution) < 2:
        problems.append(f"analysis.resolution must be at least 2, got {analysis.resolution}")
    if int(analysis.bins) < 2:
        problems.append(f"analysis.bins must be at least 2, got {analysis.bins}")
    if int(analysis.histogram_bins) < 1:
        problems.append(f"analysis.histogram_bins must be at least 1, got {analysis.histogram_bins}")
    if not 0.0 < float(analysis.variance_target) <= 1.0:
        problems.append(f"analysis.variance_target must lie in (0, 1], got {analysis.variance_target}")
    if int(analysis.lemma_batch_size) <= 0 or int(analysis.lemma_batches) <= 0:
        problems.append("analysis.lemma_batch_size and analysis.lemma_batches must be positive")

    if problems:
        raise ValidationError(f"invalid configuration ({len(problems)} problem(s))", problems)
    return RunConfig(seed, dataset, model, mode, train, trades, attack, attack_run,
                     select, score, analysis, output, raw=copy.deepcopy(raw))


# ---------------------------------------------------------------------------
# Digest and environment

def resolved_dict(cfg):
    """Plain-data view of the resolved config (what the manifest echoes)."""
    data = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg) if f.name != "raw"}
    data = {k: dataclasses.asdict(v) if dataclasses.is_dataclass(v) else v for k, v in data.items()}
    data["train"].pop("workers", None)
    return json.loads(json.dumps(data))


def config_digest(cfg):
    """SHA-256 over the canonical JSON form (sorted keys) of the resolved config."""
    canonical = json.dumps(resolved_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def worker_count(environ=None):
    """Worker cap from EASYCORE_THREADS; defaults to the CPU count."""
    environ = os.environ if environ is None else environ
    value = environ.get(THREADS_ENV, "").strip()
    if not value:
        return os.cpu_count() or 1
    try:
        count = int(value)
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be a positive integer, got '{value}'") from None
    if count <= 0:
        raise ValidationError(f"{THREADS_ENV} must be a positive integer, got '{value}'")
    return count
