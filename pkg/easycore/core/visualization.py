"""EasyCore — Optional SVG figures for analysis outputs.

CSV files are the contract; figures are a convenience and are skipped with a
warning when matplotlib is not installed.
"""

import logging
import os

import numpy as np

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.colors import ListedColormap

    HAS_MATPLOTLIB = True
except ImportError:
    HAS_MATPLOTLIB = False

logger = logging.getLogger(__name__)

_PALETTE = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


def _save(fig, path):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    # No timestamp and a fixed id salt so identical figures produce identical bytes.
    with matplotlib.rc_context({"svg.hashsalt": "easycore"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.debug("wrote %s", path)
    return path


def _available(what):
    if not HAS_MATPLOTLIB:
        logger.warning("matplotlib is not installed; skipping %s figure", what)
    return HAS_MATPLOTLIB


def plot_boundary(raster, path, points=None, labels=None, title=None):
    """Class-prediction raster, optionally with the training points on top."""
    if not _available("boundary"):
        return None
    (x0, x1), (y0, y1) = raster.grid.x_range, raster.grid.y_range
    classes = int(raster.class_grid.max()) + 1
    cmap = ListedColormap(_PALETTE[: max(classes, 2)])
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(
        raster.class_grid, origin="lower", extent=(x0, x1, y0, y1),
        cmap=cmap, vmin=0, vmax=max(classes, 2) - 1, alpha=0.35, interpolation="nearest",
    )
    if points is not None:
        ax.scatter(points[:, 0], points[:, 1], c=labels, cmap=cmap, s=6, vmin=0, vmax=max(classes, 2) - 1)
    ax.set_xlim(x0, x1)
    ax.set_ylim(y0, y1)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_curve(values, path, xlabel="hardness bin (easy to hard)", ylabel="adversarial accuracy"):
    if not _available("curve"):
        return None
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(np.arange(len(values)), values, marker="o")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_histogram(edges, densities, path, xlabel="AIGN"):
    if not _available("histogram"):
        return None
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.stairs(densities, edges, fill=True, alpha=0.6)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("density")
    return _save(fig, path)


def plot_projection(coords, labels, path, scores=None):
    """2D PCA scatter; colored by AIGN when `scores` are given, else by class."""
    if not _available("projection"):
        return None
    fig, ax = plt.subplots(figsize=(6, 6))
    if scores is not None:
        handle = ax.scatter(coords[:, 0], coords[:, 1], c=scores, cmap="viridis", s=6)
        fig.colorbar(handle, ax=ax, label="AIGN")
    else:
        ax.scatter(coords[:, 0], coords[:, 1], c=labels, cmap=ListedColormap(_PALETTE), s=6)
    ax.set_xlabel("pc1")
    ax.set_ylabel("pc2")
    return _save(fig, path)
