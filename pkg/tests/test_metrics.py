import numpy as np
import pytest
from sklearn.decomposition import PCA
from sklearn.metrics import confusion_matrix as sk_confusion
from sklearn.metrics import silhouette_score

from picolab.errors import DegenerateDataError, ValidationError
from picolab.metrics import (action_mse, confusion_matrix, evaluate, label_accuracy, pca_project,
                             random_labels, silhouette)


def test_accuracy_all_match():
    assert label_accuracy(np.array([0, 1, 2]), np.array([0, 1, 2])) == 1.0


def test_accuracy_partial():
    assert label_accuracy(np.array([0, 0, 2, 2]), np.array([0, 1, 2, 1])) == 0.5


def test_accuracy_micro_averaged_over_trajectories():
    pred = [np.array([0]), np.array([1, 1, 1])]
    truth = [np.array([1]), np.array([1, 1, 1])]
    assert label_accuracy(pred, truth) == 0.75


def test_accuracy_shape_mismatch():
    with pytest.raises(ValidationError):
        label_accuracy(np.array([0, 1]), np.array([0, 1, 2]))
    with pytest.raises(ValidationError):
        label_accuracy([np.array([0])], [np.array([0]), np.array([1])])


def test_accuracy_empty():
    with pytest.raises(ValidationError):
        label_accuracy(np.array([]), np.array([]))


def test_mse_values():
    assert action_mse(np.zeros((2, 2)), np.ones((2, 2))) == 1.0
    assert action_mse([np.zeros((1, 2))], [np.array([[0.0, 2.0]])]) == 2.0


def test_confusion_matches_sklearn(rng):
    t = rng.integers(0, 4, size=200)
    p = rng.integers(0, 4, size=200)
    np.testing.assert_array_equal(confusion_matrix(p, t, 4), sk_confusion(t, p, labels=range(4)))


def test_confusion_range_check():
    with pytest.raises(ValidationError):
        confusion_matrix(np.array([0, 5]), np.array([0, 1]), 3)


def test_evaluate_breakdown():
    rep = evaluate([np.array([0, 1]), np.array([2])], [np.array([0, 0]), np.array([2])],
                   [np.zeros((2, 1)), np.zeros((1, 1))], [np.zeros((2, 1)), np.ones((1, 1))], 3)
    assert rep.label_accuracy == 2 / 3 and rep.n_timesteps == 3
    assert abs(rep.action_mse - 1 / 3) < 1e-15
    assert [r["label_accuracy"] for r in rep.per_trajectory] == [0.5, 1.0]
    assert rep.confusion.sum() == 3


def test_random_labels_near_chance():
    rng = np.random.default_rng(0)
    truth = rng.integers(0, 10, size=10_000)
    acc = label_accuracy(random_labels(10_000, 10, np.random.default_rng(1)), truth)
    assert abs(acc - 0.1) < 0.02


# ---------------------------------------------------------------- latent space

def test_pca_matches_sklearn(rng):
    X = rng.normal(size=(100, 5)) @ rng.normal(size=(5, 5))
    proj = pca_project(X, 2)
    ref = PCA(2).fit(X)
    np.testing.assert_allclose(proj.explained_variance_ratio, ref.explained_variance_ratio_, rtol=1e-10)
    coords_ref = ref.transform(X)
    # components are defined up to sign
    for j in range(2):
        sign = np.sign(coords_ref[:, j] @ proj.coords[:, j])
        np.testing.assert_allclose(proj.coords[:, j], sign * coords_ref[:, j], atol=1e-10)


def test_pca_sign_convention(rng):
    X = rng.normal(size=(30, 4))
    proj = pca_project(X, 3)
    for row in proj.components:
        assert row[np.argmax(np.abs(row))] > 0
    np.testing.assert_allclose(proj.transform(X), proj.coords, atol=1e-12)


def test_pca_degenerate():
    with pytest.raises(DegenerateDataError):
        pca_project(np.ones((10, 3)))
    with pytest.raises(ValidationError):
        pca_project(np.ones((1, 3)))
    with pytest.raises(ValidationError):
        pca_project(np.arange(10.0).reshape(5, 2), components=3)


def test_silhouette_matches_sklearn(rng):
    X = np.concatenate([rng.normal(size=(20, 2)), rng.normal(size=(20, 2)) + 3, rng.normal(size=(5, 2)) - 3])
    y = np.repeat([0, 1, 2], [20, 20, 5])
    assert abs(silhouette(X, y) - silhouette_score(X, y)) < 1e-12


def test_silhouette_needs_two_clusters():
    with pytest.raises(ValidationError):
        silhouette(np.zeros((3, 2)), [1, 1, 1])


# ---------------------------------------------------------------- worked cases

def test_confusion_of_perfect_predictions_is_diagonal():
    truth = np.repeat([0, 1, 2], [100, 120, 80])
    C = confusion_matrix(truth, truth, 3)
    assert C.tolist() == np.diag([100, 120, 80]).tolist()


def test_confusion_of_constant_prediction():
    truth = np.repeat([0, 1, 2], 100)
    C = confusion_matrix(np.zeros(300, dtype=int), truth, 3)
    assert C[:, 0].sum() == 300 and C[:, 1:].sum() == 0


def test_pca_of_points_on_a_line():
    x = np.linspace(-1, 1, 50)
    proj = pca_project(np.stack([x, 2 * x], axis=1), 2)
    np.testing.assert_allclose(proj.explained_variance_ratio, [1.0, 0.0], atol=1e-9)


def test_pca_of_isotropic_cloud():
    X = np.random.default_rng(3).normal(size=(10_000, 2))
    proj = pca_project(X, 2)
    np.testing.assert_allclose(proj.explained_variance_ratio, [0.5, 0.5], atol=0.05)
