import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from easycore.core.analysis import (
    ANALYSIS_KINDS,
    BoundaryRaster,
    GridSpec,
    aign_histogram,
    aign_summary,
    bin_sizes,
    boundary_complexity,
    boundary_raster,
    explained_variance,
    hardness_accuracy_curve,
    lemma1_check,
    pca_kappa,
    pca_project2d,
    prototypicality,
    rank_correlation,
    score_agreement,
)
from easycore.core.autodiff import Tensor
from easycore.core.model import Model, ModelConfig, build_model
from easycore.core.random import generator
from easycore.errors import RankDeficientError, ShapeMismatchError, ValidationError


@pytest.fixture
def sign_model():
    """Predicts class 1 exactly when x > 0."""
    config = ModelConfig(input_dim=2, hidden_dim=2, num_blocks=0, num_classes=2)
    params = {
        "input.weight": np.eye(2), "input.bias": np.zeros(2),
        "head.weight": np.array([[-1.0, 1.0], [0.0, 0.0]]), "head.bias": np.zeros(2),
    }
    return Model(config, {k: Tensor(v, requires_grad=True) for k, v in params.items()})


# -- boundary ------------------------------------------------------------------

def test_grid_around_pads_extent():
    grid = GridSpec.around([[0.0, 0.0], [10.0, 20.0]], padding=0.1, resolution=5)
    assert grid.x_range == pytest.approx((-1.0, 11.0))
    assert grid.y_range == pytest.approx((-2.0, 22.0))
    assert grid.resolution == (5, 5)


def test_grid_centers():
    xs, ys = GridSpec((0.0, 4.0), (0.0, 2.0), (4, 2)).centers()
    assert_allclose(xs, [0.5, 1.5, 2.5, 3.5])
    assert_allclose(ys, [0.5, 1.5])


def test_boundary_raster_of_sign_model(sign_model):
    raster = boundary_raster(sign_model, GridSpec((-1.0, 1.0), (-1.0, 1.0), (4, 3)))
    assert raster.class_grid.shape == (3, 4)
    assert_array_equal(raster.class_grid, [[0, 0, 1, 1]] * 3)
    assert boundary_complexity(raster) == 3
    rows = list(raster.rows())
    assert len(rows) == 12
    assert rows[0] == (pytest.approx(-0.75), pytest.approx(-2.0 / 3.0), 0)
    assert rows[-1][2] == 1


def test_boundary_raster_chunking_is_invisible(small_model):
    grid = GridSpec((-3.0, 3.0), (-3.0, 3.0), (17, 13))
    assert_array_equal(boundary_raster(small_model, grid, chunk=10).class_grid,
                       boundary_raster(small_model, grid).class_grid)


def test_boundary_raster_errors(small_model):
    with pytest.raises(ValidationError):
        boundary_raster(build_model(ModelConfig(3, 4, 0, 2), 0), GridSpec((0, 1), (0, 1), (4, 4)))
    with pytest.raises(ValidationError):
        boundary_raster(small_model, GridSpec((0, 1), (0, 1), (1, 4)))


@pytest.mark.parametrize("grid,edges", [
    ([[0, 0], [0, 0]], 0),
    ([[0, 1], [0, 1]], 2),
    ([[0, 1, 0], [1, 0, 1], [0, 1, 0]], 12),
    ([[0, 0, 0], [0, 2, 0], [0, 0, 0]], 4),
])
def test_boundary_complexity_on_hand_rasters(grid, edges):
    raster = BoundaryRaster(GridSpec((0, 1), (0, 1), (len(grid[0]), len(grid))), np.array(grid))
    assert boundary_complexity(raster) == edges


@given(st.integers(0, 10_000))
def test_boundary_complexity_ignores_class_names(seed):
    rng = generator(seed, "test")
    grid = rng.integers(0, 3, size=(9, 7))
    renamed = (rng.permutation(3) + 5)[grid]
    spec = GridSpec((0, 1), (0, 1), (7, 9))
    assert boundary_complexity(BoundaryRaster(spec, renamed)) == boundary_complexity(BoundaryRaster(spec, grid))


# -- PCA -----------------------------------------------------------------------

def test_kappa_of_points_on_a_line():
    t = np.linspace(-1.0, 1.0, 50)
    features = np.column_stack([t, 2 * t, -t])
    assert pca_kappa(features) == 1
    assert_allclose(explained_variance(features), [1.0, 1.0, 1.0])


def test_kappa_of_isotropic_cloud():
    features = generator(1, "test").standard_normal((5000, 4))
    assert pca_kappa(features, 0.95) == 4
    assert pca_kappa(features, 0.2) == 1


def test_kappa_target_one_counts_every_nonzero_axis():
    features = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
    assert pca_kappa(features, 1.0) == 2


@pytest.mark.parametrize("features", [np.zeros((5, 3)), np.ones((1, 3))])
def test_kappa_degenerate_inputs(features):
    with pytest.raises(ValidationError):
        pca_kappa(features)


def test_kappa_rejects_bad_target():
    with pytest.raises(ValidationError):
        pca_kappa(np.eye(3), 0.0)


def _anisotropic_cloud(seed, n=300):
    rng = generator(seed, "test")
    return rng.standard_normal((n, 6)) * np.array([10.0, 5.0, 2.0, 1.0, 0.5, 0.1]), rng


@given(st.integers(0, 10_000))
def test_kappa_ignores_rotation_and_offset(seed):
    features, rng = _anisotropic_cloud(seed)
    rotation, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    moved = features @ rotation + rng.uniform(-50.0, 50.0, size=6)
    assert_allclose(explained_variance(moved), explained_variance(features), atol=1e-10)
    for target in (0.5, 0.9, 0.95, 0.99):
        assert pca_kappa(moved, target) == pca_kappa(features, target)


@given(st.integers(0, 10_000))
def test_kappa_never_drops_as_target_rises(seed):
    features, _ = _anisotropic_cloud(seed)
    kappas = [pca_kappa(features, t) for t in (0.1, 0.5, 0.8, 0.9, 0.95, 0.99, 0.999, 1.0)]
    assert kappas == sorted(kappas)
    assert kappas[-1] == 6


def test_projection_sign_convention_and_centroids():
    rng = generator(2, "test")
    features = rng.standard_normal((40, 5)) * [5.0, 2.0, 1.0, 0.5, 0.1]
    labels = (np.arange(40) % 2).astype(int)
    a, b = pca_project2d(features, labels), pca_project2d(-features, labels)
    assert_allclose(b.coords, -a.coords, atol=1e-10)
    assert_allclose(b.centroid_distance, a.centroid_distance, atol=1e-10)
    assert_array_equal(a.classes, [0, 1])
    assert_allclose(a.centroids[1], a.coords[labels == 1].mean(axis=0))
    assert a.coords[:, 0].var() >= a.coords[:, 1].var()
    assert_allclose(a.coords.mean(axis=0), [0.0, 0.0], atol=1e-10)


def test_projection_of_one_dimensional_data_pads_second_axis():
    p = pca_project2d(np.array([[0.0], [1.0], [3.0]]), [0, 0, 1])
    assert_allclose(p.coords[:, 0], [-4.0 / 3.0, -1.0 / 3.0, 5.0 / 3.0])
    assert_array_equal(p.coords[:, 1], [0.0, 0.0, 0.0])
    assert_allclose(p.centroid_distance, [0.5, 0.5, 0.0])


def test_projection_errors():
    with pytest.raises(ValidationError):
        pca_project2d(np.eye(2), [0, 1])
    with pytest.raises(ShapeMismatchError):
        pca_project2d(np.eye(3), [0, 1])


# -- hardness curve and correlations ------------------------------------------

def test_bin_sizes_remainder_goes_last():
    assert_array_equal(bin_sizes(10, 3), [3, 3, 4])
    assert_array_equal(bin_sizes(1200, 20), [60] * 20)
    with pytest.raises(ValidationError):
        bin_sizes(5, 1)
    with pytest.raises(ValidationError):
        bin_sizes(3, 4)


def test_curve_follows_order():
    flags = np.array([1, 0, 1, 1, 0, 0], dtype=bool)
    order = np.array([0, 2, 3, 1, 4, 5])
    assert_allclose(hardness_accuracy_curve(flags, order, bins=2), [1.0, 0.0])
    assert_allclose(hardness_accuracy_curve(flags, order, bins=3), [1.0, 0.5, 0.0])


@given(st.integers(0, 10_000), st.integers(2, 60))
def test_two_bin_curve_weighted_mean_is_accuracy(seed, n):
    rng = generator(seed, "test")
    flags = rng.random(n) < 0.6
    order = rng.permutation(n)
    curve = hardness_accuracy_curve(flags, order, bins=2)
    sizes = bin_sizes(n, 2)
    assert (curve * sizes).sum() / n == pytest.approx(flags.mean(), abs=1e-12)


def test_curve_rejects_non_permutation():
    with pytest.raises(ValidationError):
        hardness_accuracy_curve([1, 0, 1], [0, 0, 1], bins=2)


def test_rank_correlation():
    assert rank_correlation([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert rank_correlation([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    assert rank_correlation([0.1, 0.5, 0.9, 0.7], [0, 1, 1, 1]) == pytest.approx(0.7745966692414834)


@pytest.mark.parametrize("a,b", [([1, 2], [1, 2]), ([1, 1, 1], [1, 2, 3]), ([1, 2, 3], [1, 2])])
def test_rank_correlation_errors(a, b):
    with pytest.raises(ValidationError):
        rank_correlation(a, b)


def test_prototypicality_is_rank_correlation():
    scores, distances = [0.3, 0.1, 0.2, 0.9], [1.0, 0.2, 0.5, 3.0]
    assert prototypicality(scores, distances) == pytest.approx(1.0)


def test_score_agreement():
    scores = generator(3, "test").random(20)
    same = score_agreement(scores, scores)
    assert same == {"spearman": pytest.approx(1.0), "jaccard": 1.0}
    flipped = score_agreement(scores, -scores, fraction=0.5)
    assert flipped["spearman"] == pytest.approx(-1.0)
    assert flipped["jaccard"] == 0.0


# -- input/weight gradient bound -----------------------------------------------

def test_bound_holds_on_seeded_square_batches():
    for seed in range(100):
        rng = generator(seed, "lemma-instance")
        config = ModelConfig(2, int(rng.integers(2, 9)), int(rng.integers(0, 3)), 2)
        model = build_model(config, init_seed=seed)
        x = rng.standard_normal((2, 2)) * 3.0
        y = rng.integers(0, 2, size=2)
        report = lemma1_check(model, x, y)
        assert report.holds, (seed, report)
        assert report.s_P == pytest.approx(1.0)
        assert report.input_grad_norm <= report.k_g * report.weight_grad_norm * (1 + 1e-6)


def test_bound_check_does_not_touch_model(small_model):
    lemma1_check(small_model, np.array([[1.0, 0.5], [-0.3, 2.0]]), [0, 1])
    assert all(p.grad is None for _, p in small_model.named_parameters())


def test_bound_check_accepts_frozen_view(small_model):
    x, y = np.array([[1.0, 0.5], [-0.3, 2.0]]), [0, 1]
    assert lemma1_check(small_model.frozen(), x, y) == lemma1_check(small_model, x, y)


def test_bound_check_rejects_rank_deficient_batch(small_model):
    with pytest.raises(RankDeficientError):
        lemma1_check(small_model, np.array([[1.0, 2.0], [2.0, 4.0]]), [0, 1])


# -- AIGN distributions --------------------------------------------------------

@given(st.integers(0, 10_000), st.integers(1, 60))
def test_histogram_integrates_to_one(seed, bins):
    scores = generator(seed, "test").gamma(2.0, size=200)
    edges, densities = aign_histogram(scores, bins)
    assert len(edges) == bins + 1 and len(densities) == bins
    assert (densities * np.diff(edges)).sum() == pytest.approx(1.0)
    assert edges[0] == scores.min() and edges[-1] == scores.max()


def test_histogram_of_constant_scores():
    edges, densities = aign_histogram(np.full(7, 0.25))
    assert_array_equal(edges, [0.25, 1.25])
    assert_array_equal(densities, [1.0])


def test_histogram_errors():
    with pytest.raises(ValidationError):
        aign_histogram([])
    with pytest.raises(ValidationError):
        aign_histogram([1.0, 2.0], bins=0)


def test_summary():
    summary = aign_summary([1.0, 2.0, 3.0, 4.0, 10.0])
    assert summary["n"] == 5
    assert summary["mean"] == pytest.approx(4.0)
    assert summary["median"] == 3.0
    assert summary["p90"] == pytest.approx(7.6)
    assert summary["skewness"] > 0
    assert aign_summary([2.0, 2.0])["skewness"] == 0.0


def test_analysis_registry():
    assert set(ANALYSIS_KINDS) == {"boundary", "kappa", "curve", "lemma1", "histogram", "project2d", "agreement"}


def test_core_registries_are_merged():
    from easycore.core import REGISTRIES

    assert REGISTRIES["analysis"] is ANALYSIS_KINDS
    assert set(REGISTRIES) == {"op", "scheduler", "selection", "analysis"}
    assert {"multistep", "step", "cosine"} <= set(REGISTRIES["scheduler"])
    assert {"easycore", "easycore_balanced", "uniform", "hardest"} <= set(REGISTRIES["selection"])
