import itertools
import math

import numpy as np
import pytest

from mixgrad.features import (
    CapacityError,
    augmented_features,
    augmented_rows,
    build_feature_map,
    feature_dimension,
    features,
    features_grad,
    features_hess,
    features_partial,
    row_gram,
)
from mixgrad.kernels import AnovaKernelSpec, KernelSpec, NonDifferentiableKernelError, anova_kernel_eval

MATERN = KernelSpec("matern52", 0.6)


def test_dimensions_and_layout():
    assert feature_dimension(3, 3, 8) == 3 * 8 + 3 * 64 + 512 == 728
    assert feature_dimension(3, 1, 20) == 60
    fmap = build_feature_map(3, 3, 8, MATERN)
    assert fmap.M == 728
    subsets = [b.subset for b in fmap.layout]
    assert subsets == [(0,), (1,), (2,), (0, 1), (0, 2), (1, 2), (0, 1, 2)]
    ends = 0
    for b in fmap.layout:
        assert b.offset == ends
        ends += b.length
    assert ends == fmap.M


def test_determinism_and_frozen_draws():
    a = build_feature_map(2, 2, 5, MATERN, p_max=2, seed=11)
    b = build_feature_map(2, 2, 5, MATERN, p_max=0, seed=11)
    assert np.array_equal(a.omegas, b.omegas) and np.array_equal(a.phases, b.phases)
    t = np.random.default_rng(0).uniform(size=(4, 2))
    assert np.array_equal(features(a, t), features(b, t))
    with pytest.raises(ValueError):
        a.omegas[0, 0] = 1.0
    c = build_feature_map(2, 2, 5, MATERN, seed=12)
    assert not np.array_equal(a.omegas, c.omegas)


def test_validation():
    with pytest.raises(ValueError):
        build_feature_map(2, 3, 4, MATERN)
    with pytest.raises(NonDifferentiableKernelError):
        build_feature_map(2, 1, 4, KernelSpec("laplacian", 1.0), p_max=1)
    build_feature_map(2, 1, 4, KernelSpec("laplacian", 1.0), p_max=0)
    with pytest.raises(CapacityError):
        build_feature_map(4, 4, 40, MATERN)
    build_feature_map(2, 2, 3000, MATERN, cap=None)


def test_cosine_bound():
    fmap = build_feature_map(3, 2, 7, MATERN, seed=1)
    Z = features(fmap, np.random.default_rng(1).uniform(size=(20, 3)))
    bound = math.sqrt(2 / 7)
    for b in fmap.layout[:3]:
        assert np.all(np.abs(Z[:, b.offset : b.offset + b.length]) <= bound + 1e-15)


def test_tensor_block_against_explicit_loop():
    fmap = build_feature_map(2, 2, 2, MATERN, seed=3)
    t = np.array([0.31, 0.77])
    z = features(fmap, t)
    psi = [math.sqrt(2 / 2) * np.cos(fmap.omegas[j] * t[j] + fmap.phases[j]) for j in range(2)]
    block = fmap.layout[2]
    for nu, mu in itertools.product(range(2), range(2)):
        assert z[block.offset + 2 * nu + mu] == pytest.approx(psi[0][nu] * psi[1][mu], abs=1e-15)


def test_single_cosine_gradient():
    fmap = build_feature_map(1, 1, 1, MATERN, p_max=1, seed=4)
    w, b = fmap.omegas[0, 0], fmap.phases[0, 0]
    assert features_grad(fmap, np.array([0.4]), 0)[0] == pytest.approx(-math.sqrt(2) * w * math.sin(0.4 * w + b), abs=1e-14)


def test_gradient_block_sparsity():
    fmap = build_feature_map(2, 1, 6, MATERN, p_max=2, seed=5)
    t = np.random.default_rng(2).uniform(size=(5, 2))
    g = features_grad(fmap, t, 1)
    assert np.all(g[:, :6] == 0)
    assert np.all(features_hess(fmap, t, 0, 1) == 0)


def test_partials_match_finite_differences():
    rng = np.random.default_rng(6)
    fmap = build_feature_map(3, 2, 6, MATERN, p_max=3, seed=6)
    scale = np.max(np.abs(fmap.omegas))
    for _ in range(100):
        t = rng.uniform(size=3)
        j, j2 = rng.integers(3, size=2)
        h = 1e-6
        e = np.eye(3)[j]
        fd = (features(fmap, t + h * e) - features(fmap, t - h * e)) / (2 * h)
        an = features_grad(fmap, t, j)
        assert np.max(np.abs(an - fd)) <= 1e-5 * max(1.0, scale)
        h = 1e-4
        e2 = np.eye(3)[j2]
        fd2 = (features_grad(fmap, t + h * e2, j) - features_grad(fmap, t - h * e2, j)) / (2 * h)
        an2 = features_hess(fmap, t, j, j2)
        assert np.max(np.abs(an2 - fd2)) <= 1e-4 * max(1.0, scale**2)
        assert np.array_equal(an2, features_hess(fmap, t, j2, j))


def test_augmented_features():
    fmap = build_feature_map(3, 3, 8, MATERN, p_max=3, seed=7)
    t = np.random.default_rng(3).uniform(size=(2, 3))
    assert augmented_features(fmap, t, 0).concat().shape == (2, 728)
    aug = augmented_features(fmap, t, 3)
    full = aug.concat()
    assert full.shape == (2, 2912)
    assert np.array_equal(full[:, :728], features(fmap, t))
    assert np.array_equal(full[:, 728 * 2 : 728 * 3], features_grad(fmap, t, 1))
    with pytest.raises(ValueError):
        augmented_features(build_feature_map(3, 1, 2, MATERN, p_max=1), t, 2)


def test_augmented_rows_are_partials_of_value_rows():
    fmap = build_feature_map(2, 2, 4, MATERN, p_max=2, seed=8)
    t = np.random.default_rng(4).uniform(size=(3, 2))
    val = augmented_rows(fmap, t, 2)
    h = 1e-5
    for k in range(2):
        e = np.eye(2)[k]
        fd = (augmented_rows(fmap, t + h * e, 2) - augmented_rows(fmap, t - h * e, 2)) / (2 * h)
        np.testing.assert_allclose(augmented_rows(fmap, t, 2, k), fd, atol=1e-4)
    assert np.array_equal(val[:, : fmap.M], features(fmap, t))


@pytest.mark.parametrize("p,da,db", [(0, None, None), (2, None, 1), (2, 0, 1), (1, 1, 1)])
def test_row_gram_matches_explicit_product(p, da, db):
    fmap = build_feature_map(3, 2, 5, MATERN, p_max=3, seed=9)
    rng = np.random.default_rng(5)
    ta, tb = rng.uniform(size=(4, 3)), rng.uniform(size=(6, 3))
    explicit = augmented_rows(fmap, ta, p, da) @ augmented_rows(fmap, tb, p, db).T
    np.testing.assert_allclose(row_gram(fmap, ta, da, tb, db, p), explicit, rtol=1e-11, atol=1e-11)


def test_kernel_recovery():
    spec = AnovaKernelSpec.uniform("matern52", 0.5, 2, 2)
    g = np.linspace(0.1, 0.9, 5)
    grid = np.array(list(itertools.product(g, g)))
    exact = anova_kernel_eval(spec, grid[:, None, :], grid[None, :, :])
    errs = []
    for s in (64, 4096):
        # the s^2 tensor block is too large to form; use the structured Gram
        fmap = build_feature_map(2, 2, s, spec.base[0], seed=10, cap=None)
        errs.append(np.max(np.abs(row_gram(fmap, grid, None, grid, None, 0) - exact)))
    assert errs[1] < 0.1
    assert errs[1] < errs[0]


def test_mixed_partial_orders_generic():
    fmap = build_feature_map(2, 2, 3, MATERN, p_max=2, seed=12)
    t = np.array([0.2, 0.6])
    h = 1e-4
    e = np.eye(2)[0]
    fd = (features_partial(fmap, t + h * e, [1, 1]) - features_partial(fmap, t - h * e, [1, 1])) / (2 * h)
    np.testing.assert_allclose(features_partial(fmap, t, [2, 1]), fd, atol=1e-4 * np.max(np.abs(fmap.omegas)) ** 3)
