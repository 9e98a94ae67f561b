import numpy as np
import pytest

from modelprints.correlation import (CorrelationMatrix, abs_pearson,
                                     correlation_matrix, decorrelation_score,
                                     fingerprint_distance_matrix, separation)

from oracles import pearson_naive


def test_abs_pearson_hand_cases():
    assert abs_pearson([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert abs_pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(1.0)
    # covariance 4.0 over norms sqrt(5)*sqrt(5)
    assert abs_pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)


def test_abs_pearson_matches_naive_formula():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = rng.integers(2, 40)
        u = rng.normal(size=n)
        v = rng.normal(size=n)
        assert abs_pearson(u, v) == pytest.approx(abs(pearson_naive(u, v)), abs=1e-12)


def test_abs_pearson_affine_invariance():
    rng = np.random.default_rng(1)
    for _ in range(25):
        u = rng.normal(size=12)
        v = rng.normal(size=12)
        a = rng.uniform(0.1, 5) * rng.choice([-1, 1])
        b = rng.uniform(-3, 3)
        assert abs_pearson(a * u + b, v) == pytest.approx(abs_pearson(u, v), abs=1e-10)


def test_abs_pearson_errors():
    with pytest.raises(ValueError, match="zero variance"):
        abs_pearson([2, 2, 2], [1, 2, 3])
    with pytest.raises(ValueError, match="mismatch"):
        abs_pearson([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        abs_pearson([1], [2])


def test_correlation_matrix_single_model_identity():
    fp = {"a": np.array([1.0, -1.0, 0.5, 0.0])}
    codes = {"a": np.array([[1.0, -1.0, 0.5, 0.0]])}
    rho = correlation_matrix(fp, codes)
    assert rho.matrix.shape == (1, 1)
    assert rho.matrix[0, 0] == pytest.approx(1.0)


def test_correlation_matrix_orthogonal_pair_is_identity():
    fp = {"a": np.array([1.0, -1.0, 0.0, 0.0]), "b": np.array([0.0, 0.0, 1.0, -1.0])}
    codes = {m: v[None, :] for m, v in fp.items()}
    rho = correlation_matrix(fp, codes)
    assert np.allclose(rho.matrix, np.eye(2), atol=1e-12)


def test_correlation_matrix_averages_codes_and_bounds():
    rng = np.random.default_rng(2)
    fp = {f"m{i}": rng.normal(size=16) for i in range(4)}
    codes = {m: rng.normal(size=(7, 16)) for m in fp}
    rho = correlation_matrix(fp, codes)
    assert rho.codes_per_model == [7, 7, 7, 7]
    assert np.all(rho.matrix >= 0) and np.all(rho.matrix <= 1)
    # row 0 entry vs fingerprint 1, recomputed by hand
    want = np.mean([abs(pearson_naive(row, fp["m1"])) for row in codes["m0"]])
    assert rho.matrix[0, 1] == pytest.approx(want, abs=1e-12)


def test_correlation_matrix_constant_code_warns_and_scores_zero():
    fp = {"a": np.array([1.0, 2.0, 4.0]), "b": np.array([4.0, 1.0, 2.0])}
    codes = {"a": np.array([[1.0, 1.0, 1.0]]), "b": np.array([[4.0, 1.0, 2.0]])}
    with pytest.warns(UserWarning, match="constant"):
        rho = correlation_matrix(fp, codes)
    assert rho.matrix[0, 0] == 0.0
    assert rho.matrix[0, 1] == 0.0
    assert rho.matrix[1, 1] == pytest.approx(1.0)


def test_correlation_matrix_shape_mismatch_errors():
    fp = {"a": np.zeros(4) + [1, 2, 3, 4], "b": [1.0, 2.0, 3.0]}
    codes = {"a": np.eye(4)[:1], "b": np.eye(3)[:1]}
    with pytest.raises(ValueError, match="mixed shapes"):
        correlation_matrix(fp, codes)
    fp = {"a": np.array([1.0, 2.0, 3.0, 4.0])}
    with pytest.raises(ValueError, match="kind mismatch"):
        correlation_matrix(fp, {"a": np.array([[1.0, 2.0]])})


def test_correlation_matrix_rejects_out_of_range_entries():
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        CorrelationMatrix(np.array([[1.0, 1.2], [0.0, 1.0]]), ["a", "b"], [1, 1])


def test_decorrelation_score_hand_cases():
    for m in (2, 3, 7):
        assert decorrelation_score(np.eye(m)) == 0.0
    assert decorrelation_score(np.ones((2, 2))) == pytest.approx(np.sqrt(2) / 4, abs=1e-9)
    mixed = np.array([[0.9, 0.1], [0.2, 0.8]])
    assert decorrelation_score(mixed) == pytest.approx(np.sqrt(0.10) / 4, abs=1e-9)


def test_decorrelation_score_permutation_invariant():
    rng = np.random.default_rng(3)
    m = rng.uniform(size=(6, 6))
    base = decorrelation_score(m)
    for _ in range(10):
        p = rng.permutation(6)
        assert decorrelation_score(m[np.ix_(p, p)]) == pytest.approx(base, abs=1e-12)


def test_separation_diagnostic():
    assert separation(np.eye(3)) == pytest.approx(1.0)
    assert separation(np.ones((4, 4))) == pytest.approx(0.0)
    mixed = np.array([[0.9, 0.1], [0.2, 0.8]])
    assert separation(mixed) == pytest.approx(0.85 - 0.15)
    with pytest.raises(ValueError):
        separation(np.ones((1, 1)))
    with pytest.raises(ValueError, match="square"):
        decorrelation_score(np.ones((2, 3)))


def test_fingerprint_distance_matrix():
    z = np.array([1.0, 2.0, 3.0, 4.0])
    fps = {"a": z, "b": -z, "c": np.array([1.0, -1.0, -1.0, 1.0])}
    d = fingerprint_distance_matrix(fps)
    assert np.allclose(np.diag(d), 0.0)
    assert np.allclose(d, d.T)
    assert d[0, 1] == pytest.approx(0.0)  # anti-correlated collapses under |.|
    assert d[0, 2] == pytest.approx(1.0)  # orthogonal mean-zero pair
    with pytest.raises(ValueError, match="zero variance"):
        fingerprint_distance_matrix({"a": np.ones(4), "b": z})
    with pytest.raises(ValueError, match="at least 2"):
        fingerprint_distance_matrix({"a": z})
