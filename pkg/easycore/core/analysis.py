"""EasyCore — Geometric and statistical analyses.

Decision-boundary rasters and their edge-count complexity, PCA-based
dimensionality (kappa) and 2D projections, hardness-vs-robustness curves,
rank correlations, the input/weight gradient-norm bound check, and AIGN
distribution summaries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import stats

from ..errors import RankDeficientError, ShapeMismatchError, ValidationError
from .autodiff import Tape, Tensor, backward, op_forward
from .coreset import easycore_select

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Decision boundary

@dataclass(frozen=True)
class GridSpec:
    x_range: Tuple[float, float]
    y_range: Tuple[float, float]
    resolution: Tuple[int, int] = (400, 400)

    @classmethod
    def around(cls, points, padding=0.1, resolution=400):
        """Bounding box of `points` padded by `padding` of its extent on each side."""
        points = np.asarray(points, dtype=np.float64)
        lo, hi = points.min(axis=0), points.max(axis=0)
        pad = (hi - lo) * padding
        return cls(
            (float(lo[0] - pad[0]), float(hi[0] + pad[0])),
            (float(lo[1] - pad[1]), float(hi[1] + pad[1])),
            (int(resolution), int(resolution)),
        )

    def centers(self):
        """(xs, ys) cell-center coordinates along each axis."""
        (x0, x1), (y0, y1) = self.x_range, self.y_range
        rx, ry = self.resolution
        xs = x0 + (np.arange(rx) + 0.5) * (x1 - x0) / rx
        ys = y0 + (np.arange(ry) + 0.5) * (y1 - y0) / ry
        return xs, ys


@dataclass(frozen=True, eq=False)
class BoundaryRaster:
    grid: GridSpec
    class_grid: np.ndarray  # [ry, rx]: row = y index, column = x index

    def rows(self):
        xs, ys = self.grid.centers()
        for j, y in enumerate(ys):
            for i, x in enumerate(xs):
                yield float(x), float(y), int(self.class_grid[j, i])


def boundary_raster(model, grid, chunk=8192):
    """Predicted class at every cell center; argmax ties go to the lowest class."""
    if model.config.input_dim != 2:
        raise ValidationError(f"boundary raster needs a 2D-input model, got input_dim={model.config.input_dim}")
    rx, ry = grid.resolution
    if rx < 2 or ry < 2:
        raise ValidationError(f"raster resolution must be at least 2 per axis, got {grid.resolution}")
    xs, ys = grid.centers()
    gx, gy = np.meshgrid(xs, ys)
    cells = np.column_stack([gx.ravel(), gy.ravel()])
    frozen = model.frozen()
    labels = np.concatenate(
        [frozen.predict(cells[start:start + chunk]) for start in range(0, len(cells), chunk)]
    )
    return BoundaryRaster(grid, labels.reshape(ry, rx))


def boundary_complexity(raster):
    """Number of 4-neighbour cell pairs whose predicted classes differ."""
    g = raster.class_grid
    return int((g[:, 1:] != g[:, :-1]).sum() + (g[1:, :] != g[:-1, :]).sum())


# ---------------------------------------------------------------------------
# PCA

def _centered_spectrum(features):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or len(features) < 2:
        raise ValidationError(f"PCA needs an [n x d] matrix with n >= 2, got shape {features.shape}")
    centered = features - features.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    eigenvalues = s ** 2 / (len(features) - 1)
    total = eigenvalues.sum()
    if not total > 0:
        raise ValidationError("features have zero total variance")
    return centered, eigenvalues, vt


def explained_variance(features):
    """Cumulative explained-variance ratio per number of components."""
    _, eigenvalues, _ = _centered_spectrum(features)
    return np.cumsum(eigenvalues) / eigenvalues.sum()


def pca_kappa(features, variance_target=0.95):
    """Smallest number of principal components explaining `variance_target` of the variance."""
    if not 0.0 < variance_target <= 1.0:
        raise ValidationError(f"variance_target must lie in (0, 1], got {variance_target}")
    ratio = explained_variance(features)
    reached = ratio >= variance_target - 1e-12
    return int(np.argmax(reached)) + 1 if reached.any() else len(ratio)


@dataclass(frozen=True, eq=False)
class Projection:
    coords: np.ndarray            # [n x 2]
    classes: np.ndarray           # class label per centroid row
    centroids: np.ndarray         # [classes x 2]
    centroid_distance: np.ndarray  # per sample, to its own class centroid


def pca_project2d(features, labels):
    """Project onto the top-2 principal axes; per-class centroids in projected space.

    Axis signs are fixed so each axis's largest-magnitude loading is positive.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) < 3:
        raise ValidationError(f"pca_project2d needs at least 3 samples, got {len(features)}")
    if labels.shape != (len(features),):
        raise ShapeMismatchError("pca_project2d", features.shape, labels.shape)
    centered, _, vt = _centered_spectrum(features)
    axes = np.zeros((2, features.shape[1]))
    axes[: min(2, len(vt))] = vt[:2]
    for k in range(2):
        pivot = np.argmax(np.abs(axes[k]))
        if axes[k, pivot] < 0:
            axes[k] = -axes[k]
    coords = centered @ axes.T
    classes = np.unique(labels)
    centroids = np.array([coords[labels == c].mean(axis=0) for c in classes])
    own = centroids[np.searchsorted(classes, labels)]
    return Projection(coords, classes, centroids, np.linalg.norm(coords - own, axis=1))


# ---------------------------------------------------------------------------
# Hardness vs robustness

def bin_sizes(n, bins):
    """Contiguous equal-size bins; the remainder goes to the last bin."""
    if bins < 2:
        raise ValidationError(f"bins must be at least 2, got {bins}")
    if bins > n:
        raise ValidationError(f"bins ({bins}) exceeds the number of samples ({n})")
    sizes = np.full(bins, n // bins, dtype=np.int64)
    sizes[-1] += n - sizes.sum()
    return sizes


def hardness_accuracy_curve(per_sample_adv, order, bins=20):
    """Mean adversarial correctness per contiguous bin of the hardness order.

    Args:
        per_sample_adv: Boolean flags indexed by position.
        order: Permutation of positions, easiest first.
    """
    flags = np.asarray(per_sample_adv, dtype=np.float64)
    order = np.asarray(order, dtype=np.int64)
    if sorted(order.tolist()) != list(range(len(flags))):
        raise ValidationError("order must be a permutation of all sample positions")
    sizes = bin_sizes(len(flags), bins)
    edges = np.concatenate([[0], np.cumsum(sizes)])
    ordered = flags[order]
    return np.array([ordered[a:b].mean() for a, b in zip(edges[:-1], edges[1:])])


def rank_correlation(scores, outcomes):
    """Spearman rho with average-rank ties."""
    scores = np.asarray(scores, dtype=np.float64)
    outcomes = np.asarray(outcomes, dtype=np.float64)
    if scores.shape != outcomes.shape:
        raise ShapeMismatchError("rank_correlation", scores.shape, outcomes.shape)
    if len(scores) < 3:
        raise ValidationError(f"rank correlation needs at least 3 samples, got {len(scores)}")
    if np.ptp(scores) == 0 or np.ptp(outcomes) == 0:
        raise ValidationError("rank correlation is undefined for a constant argument")
    rho, _ = stats.spearmanr(scores, outcomes)
    return float(rho)


def prototypicality(scores, centroid_distance):
    """Spearman rho between AIGN and distance to the class centroid."""
    return rank_correlation(scores, centroid_distance)


def score_agreement(scores_a, scores_b, fraction=0.6):
    """Spearman rho between two score vectors and Jaccard overlap of their EasyCore picks."""
    picks_a = set(easycore_select(scores_a, fraction).tolist())
    picks_b = set(easycore_select(scores_b, fraction).tolist())
    return {
        "spearman": rank_correlation(scores_a, scores_b),
        "jaccard": len(picks_a & picks_b) / len(picks_a | picks_b),
    }


# ---------------------------------------------------------------------------
# Input-gradient vs weight-gradient bound

@dataclass(frozen=True)
class Lemma1Report:
    input_grad_norm: float
    weight_grad_norm: float
    k_g: float
    s_P: float
    holds: bool


def lemma1_check(model, batch, labels, tolerance=1e-6):
    """Check ||grad_X l||_F <= k_g ||grad_w l||_F on one batch.

    k_g = ||W1||_F ||(X^T)^+||_F / s_P with P = X^T (X^T)^+, where s_P is the
    smallest of P's rank(X) leading singular values. The mini-batch loss is the
    mean cross-entropy; w covers every weight and bias.
    """
    x = np.asarray(batch, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    singular = np.linalg.svd(x, compute_uv=False)
    if singular.size == 0 or singular.min() <= 1e-8:
        raise RankDeficientError("lemma1_check needs a full-rank batch (smallest singular value <= 1e-8)")

    scratch = model.copy(requires_grad=True)
    tape = Tape()
    xt = Tensor(x.copy(), requires_grad=True)
    logits = scratch.forward(xt, tape)
    loss = op_forward("softmax-cross-entropy", [logits], tape, labels=labels, reduction="mean")
    backward(tape, loss)

    input_norm = float(np.linalg.norm(xt.grad))
    weight_norm = float(np.sqrt(sum(np.sum(p.grad ** 2) for _, p in scratch.named_parameters())))

    pinv = np.linalg.pinv(x.T)
    projector = x.T @ pinv
    rank = len(singular)
    s_p = float(np.linalg.svd(projector, compute_uv=False)[:rank].min())
    k_g = float(np.linalg.norm(model["input.weight"].data) * np.linalg.norm(pinv) / s_p)
    holds = input_norm <= k_g * weight_norm * (1.0 + tolerance)
    return Lemma1Report(input_norm, weight_norm, k_g, s_p, bool(holds))


# ---------------------------------------------------------------------------
# AIGN distributions

def aign_histogram(scores, bins=50):
    """Equal-width density histogram over [min, max].

    A constant score vector yields one bin of width 1 starting at the value.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if bins < 1:
        raise ValidationError(f"bins must be at least 1, got {bins}")
    if scores.size == 0:
        raise ValidationError("cannot histogram an empty score vector")
    lo, hi = float(scores.min()), float(scores.max())
    if lo == hi:
        return np.array([lo, lo + 1.0]), np.array([1.0])
    densities, edges = np.histogram(scores, bins=bins, range=(lo, hi), density=True)
    return edges, densities


def aign_summary(scores):
    scores = np.asarray(scores, dtype=np.float64)
    return {
        "n": int(scores.size),
        "mean": float(scores.mean()),
        "median": float(np.median(scores)),
        "std": float(scores.std()),
        "skewness": float(stats.skew(scores)) if np.ptp(scores) > 0 else 0.0,
        "p90": float(np.percentile(scores, 90)),
    }


ANALYSIS_KINDS = {
    "boundary": boundary_raster,
    "kappa": pca_kappa,
    "curve": hardness_accuracy_curve,
    "lemma1": lemma1_check,
    "histogram": aign_histogram,
    "project2d": pca_project2d,
    "agreement": score_agreement,
}
