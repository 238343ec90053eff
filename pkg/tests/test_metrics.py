import warnings

import numpy as np
import pytest

import oracles
from conftest import rep
from usim.errors import DegenerateInput, ShapeMismatch
from usim.metrics import (
    MetricConfig,
    compute_baselines,
    linear_cka,
    mean_cca,
    rdm,
    rsa,
    spearman,
    svcca,
)


@pytest.fixture
def a(rng):
    return rep(rng.standard_normal((80, 5)))


def test_cka_integer_example():
    a = [[1, 0], [0, 1], [1, 1], [0, 0]]
    b = [[2, 1], [1, 3], [0, 1], [1, 0]]
    assert linear_cka(rep(a), rep(b)) == pytest.approx(oracles.hsic_cka(a, b), abs=1e-12)


def test_cka_self_and_invariances(a, rng):
    q = oracles.random_orthogonal(5, rng)
    assert linear_cka(a, a) == pytest.approx(1.0, abs=1e-12)
    assert linear_cka(a, rep(a.data @ q + 3.0)) == pytest.approx(1.0, abs=1e-6)
    b = rep(rng.standard_normal((80, 3)))
    base = linear_cka(a, b)
    assert abs(linear_cka(b, a) - base) <= 1e-9
    assert abs(linear_cka(rep(7.5 * a.data), b) - base) <= 1e-9
    assert abs(linear_cka(rep(a.data @ q), b) - base) <= 1e-6
    assert 0.0 <= base <= 1.0


def test_cka_matches_oracle_on_random(rng):
    x, y = rng.standard_normal((30, 4)), rng.standard_normal((30, 6))
    assert linear_cka(rep(x), rep(y)) == pytest.approx(oracles.hsic_cka(x, y), abs=1e-10)


def test_cka_errors(a):
    with pytest.raises(ShapeMismatch):
        linear_cka(a, rep(np.ones((10, 2)) * np.arange(10)[:, None]))
    with pytest.raises(DegenerateInput):
        linear_cka(a, rep(np.ones((80, 2))))


def test_spearman_examples():
    assert spearman([1, 2, 3], [1, 2, 3]) == 1.0
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    u, v = [1, 2, 2, 3], [4, 1, 1, 0]
    assert spearman(u, v) == pytest.approx(oracles.spearman_brute(u, v), abs=1e-12)
    with pytest.raises(DegenerateInput):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(ShapeMismatch):
        spearman([1, 2], [1, 2, 3])


def test_spearman_exhaustive_small_vectors():
    vectors = list(oracles.exhaustive_vectors(max_len=7))
    by_len = {}
    for u in vectors:
        if len(set(u)) > 1:
            by_len.setdefault(len(u), []).append(u)
    rng = np.random.default_rng(0)
    checked = 0
    for n, group in by_len.items():
        # every non-constant u against a fixed sample of partners of the same length
        partners = [group[i] for i in rng.choice(len(group), size=min(len(group), 12), replace=False)]
        for u in group:
            for v in partners:
                assert abs(spearman(u, v) - oracles.spearman_brute(u, v)) <= 1e-12
                checked += 1
    assert checked > 10000


def test_rsa_matches_brute_oracle(rng):
    # 5 points whose distance ranks are hand-permuted by moving one point
    a = np.array([[0, 0], [1, 0], [0, 2], [3, 3], [-1, 4]], dtype=float)
    b = a.copy()
    b[4] = [5, -2]
    assert rsa(rep(a), rep(b)) == pytest.approx(oracles.rsa_brute(a, b), abs=1e-12)
    x, y = rng.standard_normal((12, 3)), rng.standard_normal((12, 2))
    assert rsa(rep(x), rep(y)) == pytest.approx(oracles.rsa_brute(x, y), abs=1e-12)


def test_rsa_invariances(a):
    assert rsa(a, a) == pytest.approx(1.0)
    assert rsa(a, rep(4.2 * a.data)) == pytest.approx(1.0, abs=1e-9)
    # a strictly increasing transform of one RDM leaves the value unchanged
    da, db = rdm(a), rdm(rep(a.data[:, :3]))
    assert spearman(np.exp(da), db) == pytest.approx(spearman(da, db), abs=1e-9)


def test_rsa_errors():
    with pytest.raises(DegenerateInput):
        rsa(rep(np.eye(3)), rep(np.eye(3)))
    square = rep([[0, 0], [1, 0], [0, 1], [1, 1]])
    simplex = rep([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])
    with pytest.raises(DegenerateInput):
        rsa(square, simplex)


def test_svcca_identity_and_rotation(a, rng):
    q = oracles.random_orthogonal(5, rng)
    assert svcca(a, a) == pytest.approx(1.0, abs=1e-6)
    assert svcca(a, rep(a.data @ q)) == pytest.approx(1.0, abs=1e-5)


def test_svcca_small_example_against_eig_oracle(rng):
    a = rng.standard_normal((20, 3)) * [3.0, 2.0, 0.05]
    ac = a - a.mean(axis=0)
    _, _, vt = np.linalg.svd(ac, full_matrices=False)
    b = ac @ vt[:2].T + 0.01 * rng.standard_normal((20, 2))
    # oracle: truncate each side to its 0.99-energy subspace, then solve CCA as a generalized eigenproblem
    def top(x):
        xc = x - x.mean(axis=0)
        u, s, _ = np.linalg.svd(xc, full_matrices=False)
        e = np.cumsum(s**2) / np.sum(s**2)
        k = int(np.argmax(e >= 0.99 - 1e-12)) + 1
        return u[:, :k] * s[:k]
    expected = oracles.cca_generalized_eig(top(a), top(b)).mean()
    assert svcca(rep(a), rep(b)) == pytest.approx(expected, abs=1e-6)


def test_mean_cca_invariance_and_oracle(a, rng):
    m = rng.standard_normal((5, 5)) + 3 * np.eye(5)
    assert mean_cca(a, rep(a.data @ m)) == pytest.approx(1.0, abs=1e-5)
    assert mean_cca(a, a) == pytest.approx(1.0, abs=1e-6)
    b = rng.standard_normal((80, 3))
    assert mean_cca(a, rep(b)) == pytest.approx(oracles.cca_generalized_eig(a.data, b).mean(), abs=1e-8)


def test_mean_cca_independent_is_small(rng):
    a = rng.standard_normal((1000, 4))
    b = rng.standard_normal((1000, 4))
    value = mean_cca(rep(a), rep(b))
    # permutation null: shuffling rows of b gives the same distribution
    null = [mean_cca(rep(a), rep(b[rng.permutation(1000)])) for _ in range(30)]
    assert value < 0.5
    assert value <= np.max(null) + 0.05


def test_short_sample_warns(rng):
    with pytest.warns(RuntimeWarning):
        mean_cca(rep(rng.standard_normal((4, 5))), rep(rng.standard_normal((4, 5))))


def test_compute_baselines(a, rng):
    b = rep(rng.standard_normal((80, 5)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = compute_baselines(a, b, cfg=MetricConfig())
    assert set(out) == {"cka", "rsa", "svcca", "cca"}
    for key in ("cka", "svcca", "cca"):
        assert 0.0 <= out[key] <= 1.0
    with pytest.raises(ValueError):
        compute_baselines(a, b, names=["pwcca"])
