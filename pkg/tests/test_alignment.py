import math

import numpy as np
import pytest
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import rep
from usim.alignment import (
    GradientConfig,
    directed_rep_similarity,
    fit_affine,
    fit_invertible_affine,
    fit_map,
    fit_orthogonal,
    fit_orthogonal_gradient,
    fit_orthogonal_scale,
    score_from_mse,
    symmetric_rep_similarity,
)
from usim.core import AFFINE, INVERTIBLE_AFFINE, NESTED_FAMILIES, ORTHOGONAL, ORTHOGONAL_SCALE
from usim.errors import ConvergenceFailure, DegenerateInput, ShapeMismatch


@pytest.fixture
def src(rng):
    return rng.standard_normal((120, 4)) @ np.diag([2.0, 1.0, 0.7, 0.4]) + 1.5


def test_affine_realizable(src, rng):
    m = rng.standard_normal((4, 3))
    dst = src @ m + [1.0, -2.0, 0.5]
    fitted = fit_affine(rep(src), rep(dst))
    assert fitted.mse(rep(src), rep(dst)) <= 1e-16


def test_affine_constant_target(src):
    dst = np.tile([3.0, -1.0], (src.shape[0], 1))
    fitted = fit_affine(rep(src), rep(dst))
    np.testing.assert_allclose(fitted.weight, 0.0, atol=1e-12)
    np.testing.assert_allclose(fitted.bias, [3.0, -1.0], atol=1e-12)


def test_affine_matches_normal_equations(rng):
    x = rng.standard_normal((50, 3))
    y = x @ rng.standard_normal((3, 2)) + 0.1 * rng.standard_normal((50, 2))
    _, _, oracle_mse = oracles.affine_normal_equations(x, y)
    assert abs(fit_affine(rep(x), rep(y)).mse(rep(x), rep(y)) - oracle_mse) <= 1e-9


def test_affine_beats_random_affine_maps(rng):
    x = rng.standard_normal((60, 3))
    y = rng.standard_normal((60, 2))
    best = fit_affine(rep(x), rep(y)).mse(rep(x), rep(y))
    for _ in range(50):
        w, b = rng.standard_normal((3, 2)), rng.standard_normal(2)
        assert best <= oracles.mse_rows(y, x @ w + b) + 1e-8


def test_orthogonal_realizable(src, rng):
    q0 = oracles.random_orthogonal(4, rng)
    dst = src @ q0 - 4.0
    fitted = fit_orthogonal(rep(src), rep(dst))
    assert fitted.mse(rep(src), rep(dst)) <= 1e-12
    assert fitted.orthogonality_error() <= 1e-6
    sc = src - src.mean(axis=0)
    assert np.linalg.norm(sc @ fitted.weight - sc @ q0) <= 1e-6


def test_orthogonal_identity(src):
    fitted = fit_orthogonal(rep(src), rep(src))
    assert fitted.mse(rep(src), rep(src)) <= 1e-12
    np.testing.assert_allclose(np.abs(fitted.weight), np.eye(4), atol=1e-8)


def test_orthogonal_recovers_30_degrees(rng):
    x = rng.standard_normal((40, 2))
    theta = math.radians(30)
    y = x @ oracles.rotation_2d(theta)
    fitted = fit_orthogonal(rep(x), rep(y))
    recovered = math.atan2(fitted.weight[0, 1], fitted.weight[0, 0])
    assert abs(recovered - theta) <= 1e-6
    assert abs(recovered - oracles.procrustes_angle_2d(x, y)) <= 1e-6


def test_orthogonal_beats_sampled_rotations(rng):
    for d_src, d_dst in [(4, 4), (3, 5), (5, 2)]:
        x = rng.standard_normal((50, d_src))
        y = rng.standard_normal((50, d_dst))
        fitted = fit_orthogonal(rep(x), rep(y))
        width = max(d_src, d_dst)
        full = np.zeros((width, width))
        full[:d_src] = fitted.weight
        if d_src < width:
            # complete the reachable rows to a square orthogonal matrix for the oracle
            u, _, _ = np.linalg.svd(fitted.weight.T, full_matrices=True)
            full[d_src:] = u[:, d_src:].T
        assert np.linalg.norm(full.T @ full - np.eye(width)) <= 1e-6
        best = oracles.padded_procrustes_residual(x, y, full)
        assert abs(best - fitted.mse(rep(x), rep(y))) <= 1e-10
        for _ in range(200):
            q = oracles.random_orthogonal(width, rng)
            assert best <= oracles.padded_procrustes_residual(x, y, q) + 1e-12


def test_orthogonal_zero_source_is_degenerate():
    with pytest.raises(DegenerateInput):
        fit_orthogonal(rep(np.ones((5, 2))), rep(np.arange(10.0).reshape(5, 2)))


def test_orthogonal_scale_realizable(src, rng):
    q0 = oracles.random_orthogonal(4, rng)
    fitted = fit_orthogonal_scale(rep(src), rep(2.5 * src @ q0))
    assert fitted.scale == pytest.approx(2.5, abs=1e-9)
    assert fitted.mse(rep(src), rep(2.5 * src @ q0)) <= 1e-12
    assert fit_orthogonal_scale(rep(src), rep(src)).scale == pytest.approx(1.0, abs=1e-9)


def test_orthogonal_scale_matches_golden_section(src, rng):
    q0 = oracles.random_orthogonal(4, rng)
    dst = 0.3 * src @ q0 + 0.05 * rng.standard_normal(src.shape)
    fitted = fit_orthogonal_scale(rep(src), rep(dst))
    q = fitted.weight
    xc, yc = src - src.mean(axis=0), dst - dst.mean(axis=0)
    res = scipy.optimize.minimize_scalar(
        lambda s: oracles.mse_rows(yc, s * xc @ q), bracket=(0.0, 1.0), method="golden", tol=1e-12
    )
    assert fitted.mse(rep(src), rep(dst)) == pytest.approx(res.fun, abs=1e-6)
    assert fitted.scale == pytest.approx(res.x, abs=1e-5)
    assert fitted.mse(rep(src), rep(dst)) <= fit_orthogonal(rep(src), rep(dst)).mse(rep(src), rep(dst)) + 1e-10


def test_invertible_realizable(src, rng):
    m = rng.standard_normal((4, 4)) + 2 * np.eye(4)
    fitted = fit_invertible_affine(rep(src), rep(src @ m))
    assert fitted.mse(rep(src), rep(src @ m)) <= 1e-8


def test_invertible_independent_target_stays_invertible(rng):
    x, y = rng.standard_normal((200, 3)), rng.standard_normal((200, 3))
    fitted = fit_invertible_affine(rep(x), rep(y))
    assert fitted.min_singular_value() >= 1e-4


def test_invertible_floor_binds(rng):
    x = rng.standard_normal((100, 3))
    u = oracles.random_orthogonal(3, rng)
    v = oracles.random_orthogonal(3, rng)
    m = u @ np.diag([1.0, 0.5, 1e-5]) @ v
    y = x @ m
    oracle_w, _, _ = oracles.affine_normal_equations(x, y)
    assert np.linalg.svd(oracle_w, compute_uv=False).min() < 1e-4
    fitted = fit_invertible_affine(rep(x), rep(y))
    assert fitted.min_singular_value() > 1e-5
    assert fitted.min_singular_value() >= 1e-4


def test_invertible_requires_square():
    with pytest.raises(ShapeMismatch):
        fit_invertible_affine(rep(np.eye(4)[:, :2]), rep(np.eye(4)[:, :3]))


def test_invertible_reports_non_convergence(rng):
    x, y = rng.standard_normal((50, 3)), rng.standard_normal((50, 3))
    m = rng.standard_normal((3, 3))
    cfg = GradientConfig(max_iter=1, window=20)
    with pytest.raises(ConvergenceFailure) as info:
        fit_invertible_affine(rep(x), rep(x @ m + 0.3 * y), cfg=cfg)
    assert info.value.last is not None


def test_capacity_ordering_of_residuals(rng):
    x = rng.standard_normal((80, 3))
    y = x @ rng.standard_normal((3, 3)) + 0.2 * rng.standard_normal((80, 3))
    a, b = rep(x), rep(y)
    r_aff = fit_affine(a, b).mse(a, b)
    r_inv = fit_invertible_affine(a, b).mse(a, b)
    r_os = fit_orthogonal_scale(a, b).mse(a, b)
    assert r_aff <= r_inv + 1e-8
    assert r_inv <= r_os + 1e-8


@pytest.mark.parametrize("fam", [ORTHOGONAL, ORTHOGONAL_SCALE])
def test_gradient_backend_is_nearly_orthogonal(fam, src, rng):
    q0 = oracles.random_orthogonal(4, rng)
    dst = src @ q0 + 0.05 * rng.standard_normal(src.shape)
    try:
        fitted = fit_orthogonal_gradient(rep(src), rep(dst), fam, GradientConfig(seed=3))
    except ConvergenceFailure as exc:
        fitted = exc.last
    assert fitted.orthogonality_error() <= 0.05
    closed = fit_map(rep(src), rep(dst), fam)
    assert fitted.mse(rep(src), rep(dst)) <= closed.mse(rep(src), rep(dst)) + 0.05 * np.var(dst) * 4


def test_gradient_backend_deterministic(src, rng):
    dst = src @ oracles.random_orthogonal(4, rng)
    cfg = GradientConfig(seed=7, max_iter=300)

    def run():
        try:
            return fit_map(rep(src), rep(dst), ORTHOGONAL, backend="gradient", cfg=cfg)
        except ConvergenceFailure as exc:
            return exc.last

    first, second = run(), run()
    assert np.array_equal(first.weight, second.weight)


def test_fit_map_rejects_unknown_backend(src):
    with pytest.raises(ValueError):
        fit_map(rep(src), rep(src), AFFINE, backend="newton")


def test_directed_scores_examples(src, rng):
    q0 = oracles.random_orthogonal(4, rng)
    for fam in NESTED_FAMILIES:
        assert directed_rep_similarity(rep(src), rep(src), fam) == pytest.approx(1.0, abs=1e-9)
        assert directed_rep_similarity(rep(src), rep(src @ q0), fam) == pytest.approx(1.0, abs=1e-9)
    m = np.diag([3.0, 1.0, 0.2, 1.5]) @ q0
    dst = src @ m
    assert directed_rep_similarity(rep(src), rep(dst), AFFINE) == pytest.approx(1.0, abs=1e-9)
    ortho = directed_rep_similarity(rep(src), rep(dst), ORTHOGONAL)
    assert ortho < 1.0 - 1e-3
    # oracle: explicit Procrustes residual on centered data
    xc, yc = src - src.mean(axis=0), dst - dst.mean(axis=0)
    u, _, vt = np.linalg.svd(xc.T @ yc)
    expected = 1 - oracles.mse_rows(yc, xc @ (u @ vt)) / oracles.mse_rows(yc, 0 * yc)
    assert ortho == pytest.approx(expected, abs=1e-9)


def test_symmetric_information_loss(src):
    lossy = src.copy()
    lossy[:, 1] = 0.0
    fwd = directed_rep_similarity(rep(src), rep(lossy), AFFINE)
    bwd = directed_rep_similarity(rep(lossy), rep(src), AFFINE)
    assert fwd == pytest.approx(1.0, abs=1e-9)
    assert bwd < 0.99
    assert symmetric_rep_similarity(rep(src), rep(lossy), AFFINE) == bwd


def test_symmetric_is_min_of_directed(rng):
    a, b = rep(rng.standard_normal((40, 3))), rep(rng.standard_normal((40, 5)))
    for fam in NESTED_FAMILIES:
        expected = min(directed_rep_similarity(a, b, fam), directed_rep_similarity(b, a, fam))
        assert symmetric_rep_similarity(a, b, fam) == expected


def test_score_constant_target_convention():
    assert score_from_mse(0.0, 0.0) == 1.0
    assert score_from_mse(1.0, 0.0) == 0.0
    assert score_from_mse(0.25, 1.0) == 0.75


pairs = st.tuples(
    st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 5), st.floats(0.0, 2.0)
)


@settings(max_examples=60, deadline=None)
@given(pairs)
def test_nested_family_monotonicity(params):
    seed, d1, d2, noise = params
    g = np.random.default_rng(seed)
    x = g.standard_normal((30, d1)) * g.uniform(0.1, 5.0, d1)
    y = x @ g.standard_normal((d1, d2)) + noise * g.standard_normal((30, d2))
    a, b = rep(x), rep(y)
    for s, t in [(a, b), (b, a)]:
        o = directed_rep_similarity(s, t, ORTHOGONAL)
        os_ = directed_rep_similarity(s, t, ORTHOGONAL_SCALE)
        af = directed_rep_similarity(s, t, AFFINE)
        assert o <= os_ + 1e-9
        assert os_ <= af + 1e-9
    sym = [symmetric_rep_similarity(a, b, f) for f in (ORTHOGONAL, ORTHOGONAL_SCALE, AFFINE)]
    assert sym[0] <= sym[1] + 1e-9 <= sym[2] + 2e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50), st.floats(0.1, 10.0))
def test_translation_and_scale_invariance(seed, shift, c):
    g = np.random.default_rng(seed)
    x = g.standard_normal((40, 3))
    y = x @ g.standard_normal((3, 3)) + 0.5 * g.standard_normal((40, 3))
    for fam in (ORTHOGONAL, ORTHOGONAL_SCALE, AFFINE):
        base = directed_rep_similarity(rep(x), rep(y), fam)
        assert directed_rep_similarity(rep(x + shift), rep(y - shift), fam) == pytest.approx(base, abs=1e-9)
    for fam in (ORTHOGONAL_SCALE, AFFINE):
        base = directed_rep_similarity(rep(x), rep(y), fam)
        assert directed_rep_similarity(rep(x), rep(c * y), fam) == pytest.approx(base, abs=1e-9)


def test_invertible_family_via_fit_map(src, rng):
    m = rng.standard_normal((4, 4)) + 2 * np.eye(4)
    score = directed_rep_similarity(rep(src), rep(src @ m), INVERTIBLE_AFFINE)
    assert score == pytest.approx(1.0, abs=1e-8)
