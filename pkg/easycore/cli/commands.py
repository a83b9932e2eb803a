"""EasyCore — Subcommand handlers.

Each handler is registered with @command(name) and receives a RunContext.
Handlers read inputs, write CSV artifacts (plus optional SVGs) into the output
directory and list them on the context; `dispatch` times the run, writes the
manifest and maps failures to exit codes.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import replace

import numpy as np

from ..core.analysis import (
    ANALYSIS_KINDS,
    GridSpec,
    aign_histogram,
    aign_summary,
    boundary_complexity,
    boundary_raster,
    hardness_accuracy_curve,
    lemma1_check,
    pca_kappa,
    pca_project2d,
    prototypicality,
    rank_correlation,
    score_agreement,
)
from ..core.attack import attack_dataset
from ..core.coreset import (
    aign_scores,
    hardness_order,
    read_scores,
    read_selection,
    select,
    write_scores,
    write_selection,
)
from ..core.data import generate_clusters, load_csv_dataset, save_generated, subset
from ..core.io import read_table, write_rows, write_yaml
from ..core.model import build_model, load_checkpoint, penultimate_features, save_checkpoint
from ..core.train import epoch_checkpoints, evaluate_accuracy, fit, score_checkpoints, train_standard, train_trades
from ..core import visualization
from ..errors import SelectionError, UnknownKindError, ValidationError
from .config import worker_count
from .manifest import manifest_path, new_manifest, record_inputs, verify, write_manifest

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2

COMMANDS = {}


def command(name):
    """Register a subcommand handler under `name`."""
    def register(handler):
        COMMANDS[name] = handler
        return handler
    return register


class RunContext:
    """Resolved config, parsed flags, and the artifacts one subcommand produces."""

    def __init__(self, cfg, args, name, tag=None, workers=1):
        self.cfg = cfg
        self.args = args
        self.name = name
        self.tag = tag
        self.workers = workers
        self.out_dir = cfg.output.dir
        self.manifest = new_manifest(cfg, name, tag)
        self._splits = None

    def path(self, stem, ext=None):
        user_tag = getattr(self.args, "tag", None)
        name = f"{stem}_{user_tag}" if user_tag else stem
        return os.path.join(self.out_dir, f"{name}.{ext}" if ext else name)

    def output(self, path):
        if path is not None:
            self.manifest.outputs.append(path)
        return path

    def inputs(self, *paths):
        record_inputs(self.manifest, paths)

    # -- data -------------------------------------------------------------

    def splits(self):
        if self._splits is None:
            self._splits = self._load_splits()
        return self._splits

    def _load_splits(self):
        ds, model = self.cfg.dataset, self.cfg.model
        if ds.kind == "clusters":
            train, test = generate_clusters(ds.clusters, self.cfg.seed)
            if ds.export:
                data_dir = os.path.join(self.out_dir, "data")
                for path in save_generated(train, test, ds.clusters, self.cfg.seed, data_dir):
                    self.output(path)
                self.output(os.path.join(data_dir, "dataset.yaml"))
        else:
            self.inputs(ds.train, ds.test)
            train = load_csv_dataset(ds.train, ds.header, ds.scale, class_count=model.num_classes)
            test = None
            if ds.test:
                test = load_csv_dataset(ds.test, ds.header, ds.scale, class_count=model.num_classes)
        if train.class_count > model.num_classes:
            raise ValidationError(f"dataset has {train.class_count} classes but model.num_classes = {model.num_classes}")
        if train.dim != model.input_dim:
            raise ValidationError(f"dataset has {train.dim} features but model.input_dim = {model.input_dim}")
        return train, test

    def split(self, name):
        train, test = self.splits()
        if name == "train":
            return train
        if test is None:
            raise ValidationError("no test split configured (dataset.test)")
        return test

    def checkpoint(self, default_stem="model"):
        path = getattr(self.args, "checkpoint", None) or self.path(default_stem, "ezc")
        self.inputs(path)
        return load_checkpoint(path, self.cfg.model)

    def training_config(self, log_stem, checkpoint_stem="checkpoints"):
        return replace(
            self.cfg.train,
            workers=self.workers,
            log_path=self.output(self.path(log_stem, "csv")),
            checkpoint_dir=self.path(checkpoint_stem),
        )


def _aligned(table, ids):
    """Scores from `table` reordered to `ids`."""
    lookup = dict(zip(table.ids.tolist(), table.aign.tolist()))
    try:
        return np.array([lookup[int(i)] for i in ids], dtype=np.float64)
    except KeyError as e:
        raise ValidationError(f"score file has no entry for sample id {e.args[0]}") from None


def _required(args, flag):
    value = getattr(args, flag, None)
    if not value:
        raise ValidationError(f"--{flag.replace('_', '-')} is required here")
    return value


def _svg(ctx, render, *a, **kw):
    if ctx.cfg.analysis.svg:
        ctx.output(render(*a, **kw))


# ---------------------------------------------------------------------------
# Subcommands

@command("score")
def cmd_score(ctx):
    """Train the scoring model with AIGN recording (or replay checkpoints) and write scores."""
    cfg = ctx.cfg
    train, _ = ctx.splits()
    scored = ctx.split(cfg.score.split)
    replay = getattr(ctx.args, "replay", None)

    if replay:
        paths = epoch_checkpoints(replay)
        if not paths:
            raise ValidationError(f"no epoch checkpoints under {replay}")
        ctx.inputs(*paths)
        ledger = score_checkpoints(paths, scored, cfg.model, cfg.score.trajectory, ctx.workers)
    else:
        tcfg = replace(ctx.training_config("score_train_log", "score_checkpoints"),
                       record_aign=True, record_trajectory=cfg.score.trajectory)
        model = build_model(cfg.model, cfg.seed)
        if cfg.mode == "trades":
            model, ledger = fit(model, train, tcfg, trades=cfg.trades, score_data=scored)
        else:
            model, ledger = train_standard(model, train, tcfg, score_data=scored)
        ctx.output(save_checkpoint(model, ctx.path("score_model", "ezc")))
        for path in epoch_checkpoints(tcfg.checkpoint_dir) if tcfg.checkpoint_every else ():
            ctx.output(path)

    scores = aign_scores(ledger)
    ctx.output(write_scores(ctx.path("scores", "csv"), scored.ids, scored.labels, scores))
    if cfg.score.trajectory:
        norms = ledger.trajectory()
        rows = ((epoch, int(i), float(v)) for epoch, row in enumerate(norms) for i, v in zip(scored.ids, row))
        ctx.output(write_rows(ctx.path("trajectory", "csv"), ["epoch", "id", "norm"], rows))
    summary = aign_summary(scores)
    logger.info("scored %d %s samples over %d epoch(s): mean AIGN %.6g", len(scores), cfg.score.split,
                ledger.epochs, summary["mean"])


@command("select")
def cmd_select(ctx):
    """Pick a coreset from a score file."""
    scores_path = getattr(ctx.args, "scores", None) or os.path.join(ctx.out_dir, "scores.csv")
    ctx.inputs(scores_path)
    table = read_scores(scores_path)
    labels = table.labels
    labels_path = getattr(ctx.args, "labels", None)
    if labels_path:
        ctx.inputs(labels_path)
        cols = read_table(labels_path, ["id", "label"])
        lookup = {int(i): int(y) for i, y in zip(cols["id"], cols["label"])}
        try:
            labels = np.array([lookup[int(i)] for i in table.ids], dtype=np.int64)
        except KeyError as e:
            raise ValidationError(f"{labels_path}: no label for sample id {e.args[0]}") from None
    chosen = select(ctx.cfg.select, table.aign, labels, table.ids)
    ctx.output(write_selection(ctx.path(f"selection_{ctx.cfg.select.method}", "csv"), chosen))


@command("train")
def cmd_train(ctx):
    """Train on the full training split or on a selection of it."""
    cfg = ctx.cfg
    train, test = ctx.splits()
    data = train
    selection_path = getattr(ctx.args, "selection", None)
    if selection_path:
        ctx.inputs(selection_path)
        ids = read_selection(selection_path)
        if len(ids) == 0:
            raise SelectionError(f"{selection_path}: empty selection")
        # Train in dataset order so a full selection reproduces the full-data run.
        data = subset(train, train.ids[np.sort(train.positions(ids))])
        logger.info("training on %d of %d samples from %s", len(data), len(train), selection_path)

    tcfg = ctx.training_config("train_log")
    model = build_model(cfg.model, cfg.seed)
    if cfg.mode == "trades":
        model = train_trades(model, data, tcfg, cfg.trades)
    else:
        model, _ = train_standard(model, data, tcfg)
    ctx.output(save_checkpoint(model, ctx.path("model", "ezc")))
    for path in epoch_checkpoints(tcfg.checkpoint_dir) if tcfg.checkpoint_every else ():
        ctx.output(path)

    logger.info("clean accuracy: train %.4f%s", evaluate_accuracy(model, data),
                f", test {evaluate_accuracy(model, test):.4f}" if test is not None else "")


@command("attack")
def cmd_attack(ctx):
    """PGD every sample of a split; per-sample flags and a summary."""
    cfg = ctx.cfg
    model = ctx.checkpoint()
    data = ctx.split(cfg.attack_run.split)
    report = attack_dataset(model, data, cfg.attack, cfg.attack_run.batch_size, ctx.workers)
    rows = zip(report.ids.tolist(), report.clean_correct.tolist(), report.adv_correct.tolist(), report.linf.tolist())
    ctx.output(write_rows(ctx.path("attack", "csv"), ["id", "clean_correct", "adv_correct", "linf_perturbation"], rows))
    summary = {
        "n": len(data),
        "split": cfg.attack_run.split,
        "clean_accuracy": report.clean_accuracy,
        "adversarial_accuracy": report.adversarial_accuracy,
        "epsilon": float(cfg.attack.epsilon),
        "steps": int(cfg.attack.steps),
        "step_size": float(cfg.attack.alpha),
        "random_start": bool(cfg.attack.random_start),
    }
    ctx.output(write_yaml(ctx.path("attack_summary", "yaml"), summary))


@command("analyze")
def cmd_analyze(ctx):
    kind = getattr(ctx.args, "kind", None)
    if kind not in ANALYSIS_KINDS:
        raise UnknownKindError("analysis", kind, ANALYSIS_KINDS)
    ANALYZERS[kind](ctx)


# ---------------------------------------------------------------------------
# Analyses

def _analyze_boundary(ctx):
    a = ctx.cfg.analysis
    model = ctx.checkpoint()
    data = ctx.split(a.split)
    grid = GridSpec.around(data.features, a.padding, a.resolution)
    raster = boundary_raster(model, grid)
    complexity = boundary_complexity(raster)
    ctx.output(write_rows(ctx.path("boundary", "csv"), ["x", "y", "class"], raster.rows()))
    ctx.output(write_yaml(ctx.path("boundary_summary", "yaml"), {
        "complexity": complexity,
        "x_range": list(grid.x_range),
        "y_range": list(grid.y_range),
        "resolution": list(grid.resolution),
    }))
    _svg(ctx, visualization.plot_boundary, raster, ctx.path("boundary", "svg"), data.features, data.labels)
    logger.info("boundary complexity %d at %dx%d", complexity, *grid.resolution)


def _analyze_kappa(ctx):
    a = ctx.cfg.analysis
    model = ctx.checkpoint()
    data = ctx.split(a.split)
    features = penultimate_features(model.frozen(), data.features).data
    kappa = pca_kappa(features, a.variance_target)
    ctx.output(write_rows(ctx.path("kappa", "csv"), ["target", "kappa", "total_dim"],
                          [[float(a.variance_target), kappa, features.shape[1]]]))
    logger.info("kappa %d of %d at %.2f explained variance", kappa, features.shape[1], a.variance_target)


def _read_attack(path):
    cols = read_table(path, ["id", "adv_correct"])
    try:
        ids = np.array([int(v) for v in cols["id"]], dtype=np.int64)
        flags = np.array([int(v) for v in cols["adv_correct"]], dtype=bool)
    except ValueError as e:
        raise ValidationError(f"{path}: malformed attack file ({e})") from None
    return ids, flags


def _analyze_curve(ctx):
    attack_path = getattr(ctx.args, "attack", None) or ctx.path("attack", "csv")
    scores_path = _required(ctx.args, "scores")
    ctx.inputs(attack_path, scores_path)
    ids, flags = _read_attack(attack_path)
    scores = _aligned(read_scores(scores_path), ids)
    position = {int(i): p for p, i in enumerate(ids)}
    order = np.array([position[int(i)] for i in hardness_order(scores, ids)], dtype=np.int64)
    curve = hardness_accuracy_curve(flags, order, ctx.cfg.analysis.bins)
    ctx.output(write_rows(ctx.path("curve", "csv"), ["bin", "accuracy"], enumerate(curve.tolist())))

    try:
        rho = rank_correlation(scores, flags)
    except ValidationError as e:
        logger.warning("rank correlation skipped: %s", e)
        rho = None
    ctx.output(write_yaml(ctx.path("curve_summary", "yaml"), {
        "bins": int(ctx.cfg.analysis.bins),
        "spearman": rho,
        "first_bin": float(curve[0]),
        "last_bin": float(curve[-1]),
        "adversarial_accuracy": float(flags.mean()),
    }))
    _svg(ctx, visualization.plot_curve, curve, ctx.path("curve", "svg"))


def _analyze_lemma1(ctx):
    a = ctx.cfg.analysis
    model = ctx.checkpoint()
    data = ctx.split(a.split)
    size = int(a.lemma_batch_size)
    rows = []
    for b in range(int(a.lemma_batches)):
        start = b * size
        if start + size > len(data):
            break
        report = lemma1_check(model, data.features[start:start + size], data.labels[start:start + size])
        rows.append([b, report.input_grad_norm, report.weight_grad_norm, report.k_g, report.s_P, report.holds])
    if not rows:
        raise ValidationError(f"split has fewer than {size} samples for one lemma batch")
    ctx.output(write_rows(ctx.path("lemma1", "csv"),
                          ["batch", "input_grad_norm", "weight_grad_norm", "k_g", "s_P", "holds"], rows))
    held = sum(1 for r in rows if r[-1])
    logger.info("input-gradient bound held on %d/%d batches", held, len(rows))


def _analyze_histogram(ctx):
    scores_path = _required(ctx.args, "scores")
    ctx.inputs(scores_path)
    table = read_scores(scores_path)
    edges, densities = aign_histogram(table.normalized, ctx.cfg.analysis.histogram_bins)
    rows = zip(edges[:-1].tolist(), edges[1:].tolist(), densities.tolist())
    ctx.output(write_rows(ctx.path("histogram", "csv"), ["left", "right", "density"], rows))
    summary = aign_summary(table.normalized)
    summary["raw_mean"] = float(table.aign.mean())
    ctx.output(write_yaml(ctx.path("histogram_summary", "yaml"), summary))
    _svg(ctx, visualization.plot_histogram, edges, densities, ctx.path("histogram", "svg"))


def _analyze_project2d(ctx):
    a = ctx.cfg.analysis
    model = ctx.checkpoint()
    data = ctx.split(a.split)
    features = penultimate_features(model.frozen(), data.features).data
    projection = pca_project2d(features, data.labels)
    rows = zip(data.ids.tolist(), data.labels.tolist(), projection.coords[:, 0].tolist(),
               projection.coords[:, 1].tolist(), projection.centroid_distance.tolist())
    ctx.output(write_rows(ctx.path("project2d", "csv"), ["id", "label", "pc1", "pc2", "centroid_distance"], rows))

    scores = None
    scores_path = getattr(ctx.args, "scores", None)
    if scores_path:
        ctx.inputs(scores_path)
        scores = _aligned(read_scores(scores_path), data.ids)
        summary = {"prototypicality": prototypicality(scores, projection.centroid_distance)}
        summary["centroids"] = {int(c): projection.centroids[k].tolist() for k, c in enumerate(projection.classes)}
        ctx.output(write_yaml(ctx.path("project2d_summary", "yaml"), summary))
    _svg(ctx, visualization.plot_projection, projection.coords, data.labels, ctx.path("project2d", "svg"), scores)


def _analyze_agreement(ctx):
    path_a, path_b = _required(ctx.args, "scores"), _required(ctx.args, "scores_b")
    ctx.inputs(path_a, path_b)
    table_a = read_scores(path_a)
    scores_b = _aligned(read_scores(path_b), table_a.ids)
    fraction = ctx.cfg.select.fraction
    result = score_agreement(table_a.aign, scores_b, fraction)
    ctx.output(write_rows(ctx.path("agreement", "csv"), ["spearman", "jaccard", "fraction"],
                          [[result["spearman"], result["jaccard"], float(fraction)]]))
    logger.info("spearman %.4f, jaccard %.4f at fraction %s", result["spearman"], result["jaccard"], fraction)


ANALYZERS = {
    "boundary": _analyze_boundary,
    "kappa": _analyze_kappa,
    "curve": _analyze_curve,
    "lemma1": _analyze_lemma1,
    "histogram": _analyze_histogram,
    "project2d": _analyze_project2d,
    "agreement": _analyze_agreement,
}


# ---------------------------------------------------------------------------
# Dispatch

def guarded(tag, fn, *args, **kwargs):
    """Run `fn`, mapping validation errors to exit 2 and anything else to exit 1."""
    log = logging.getLogger(f"easycore.{tag}")
    try:
        result = fn(*args, **kwargs)
    except ValidationError as e:
        log.error("%s", e)
        return EXIT_VALIDATION
    except Exception as e:
        log.error("%s: %s", type(e).__name__, e)
        log.debug("traceback", exc_info=True)
        return EXIT_RUNTIME
    return EXIT_OK if result is None else result


def _run(name, cfg, args):
    if name not in COMMANDS:
        raise UnknownKindError("command", name, COMMANDS)
    kind = getattr(args, "kind", None) if name == "analyze" else None
    tag = "_".join(t for t in (kind, getattr(args, "tag", None)) if t) or None
    path = manifest_path(cfg.output.dir, name, tag)

    if getattr(args, "verify", False):
        problems = verify(path, cfg)
        if problems:
            raise ValidationError(f"stale artifacts for {name}", problems)
        logger.info("%s is up to date", path)
        return EXIT_OK

    ctx = RunContext(cfg, args, name, tag, worker_count())
    start = time.perf_counter()
    COMMANDS[name](ctx)
    ctx.manifest.wall_time = round(time.perf_counter() - start, 3)
    write_manifest(path, ctx.manifest)
    return EXIT_OK


def dispatch(name, cfg, args):
    """Run one subcommand; returns the process exit code."""
    return guarded(name, _run, name, cfg, args)
