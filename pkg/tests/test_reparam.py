import numpy as np
import pytest
from numpy.testing import assert_allclose

from apcsmooth.basis import KnotSet, crs_basis
from apcsmooth.errors import ConfigurationError, NumericalRankError
from apcsmooth.reparam import (
    apply_transform,
    null_space,
    orthogonalize_to_linear,
    sum_to_zero,
)


def small_block(n=30, K=6, lo=0.0, hi=10.0):
    x = np.linspace(lo, hi, n)
    knots = np.linspace(lo, hi, K)
    return x, crs_basis(x, KnotSet(knots))


def test_sum_to_zero_null_space():
    t = null_space(np.array([[1.0, 1.0, 1.0]]))
    assert t.Z.shape == (3, 2)
    assert_allclose(t.Z.sum(axis=0), 0.0, atol=1e-12)
    assert_allclose(t.Z.T @ t.Z, np.eye(2), atol=1e-12)


def test_linear_constraint_removes_two_columns():
    x, block = small_block()
    constraint = np.vstack([np.ones_like(x), x]) @ block.design
    t = null_space(constraint)
    assert t.Z.shape == (block.width, block.width - 2)
    assert np.max(np.abs(constraint @ t.Z)) < 1e-10 * np.max(np.abs(constraint))


def test_random_constraint_residual(rng):
    constraint = rng.normal(size=(2, 6))
    t = null_space(constraint)
    assert np.max(np.abs(constraint @ t.Z)) < 1e-10


def test_rank_deficient_constraint_reports_rank():
    row = np.array([1.0, 2.0, 3.0, 4.0])
    with pytest.raises(NumericalRankError) as err:
        null_space(np.vstack([row, 2.0 * row]))
    assert err.value.detected_rank == 1


def test_apply_transform_enforces_constraints():
    x, block = small_block()
    z = sum_to_zero(block)
    assert_allclose(np.ones(len(x)) @ z.design, 0.0, atol=1e-10)

    both = orthogonalize_to_linear(block, x)
    assert_allclose(np.ones(len(x)) @ both.design, 0.0, atol=1e-10)
    assert_allclose(x @ both.design, 0.0, atol=1e-10)
    assert both.width == block.width - 2
    # rows() reproduces the transformed design at the build points
    assert_allclose(both.rows(x), both.design, atol=1e-12)


def test_transform_dimension_mismatch():
    x, block = small_block()
    t = null_space(np.ones((1, block.width + 1)))
    with pytest.raises(ConfigurationError):
        apply_transform(block, t)


def test_penalty_conjugation_preserves_psd(rng):
    x, block = small_block(K=8)
    constrained = orthogonalize_to_linear(block, x)
    eig = np.linalg.eigvalsh(constrained.penalty)
    assert eig.min() > -1e-10 * max(eig.max(), 1.0)
    # the orthogonalized curvature penalty is strictly positive definite
    assert eig.min() > 1e-12 * eig.max()


def test_constrained_fit_matches_elimination_oracle(rng):
    """Fitted values via the null-space reparameterization equal those of
    the equality-constrained least squares problem solved directly."""
    x, block = small_block(n=40, K=7)
    y = np.sin(x) + 0.1 * rng.normal(size=x.size)
    constraint = np.vstack([np.ones_like(x), x]) @ block.design

    constrained = orthogonalize_to_linear(block, x)
    gamma, *_ = np.linalg.lstsq(constrained.design, y, rcond=None)
    fitted_z = constrained.design @ gamma

    # oracle: eliminate two coefficients using the constraint rows
    q = block.width
    _, R, piv = __import__("scipy.linalg", fromlist=["qr"]).qr(
        constraint, pivoting=True
    )
    basic, free = piv[:2], piv[2:]
    # beta_basic = -R11^{-1} R12 beta_free  (constraint == 0)
    R11, R12 = R[:, :2], R[:, 2:]
    T = np.zeros((q, q - 2))
    T[free, np.arange(q - 2)] = 1.0
    T[basic] = -np.linalg.solve(R11[:2], R12[:2])
    gamma2, *_ = np.linalg.lstsq(block.design @ T, y, rcond=None)
    fitted_direct = block.design @ (T @ gamma2)

    assert_allclose(fitted_z, fitted_direct, atol=1e-8)


def test_column_space_decomposition(rng):
    """span(Z-transformed design) + span[1 : x] recovers span[1 : x : design]."""
    import scipy.linalg

    x, block = small_block(n=35, K=7)
    constrained = orthogonalize_to_linear(block, x)
    # [1 : x : design] is rank deficient by construction (the basis spans
    # affine functions), so use rank-revealing orthonormal bases
    Qf = scipy.linalg.orth(np.column_stack([np.ones_like(x), x, block.design]))
    Qs = scipy.linalg.orth(np.column_stack([np.ones_like(x), x, constrained.design]))
    assert Qf.shape[1] == Qs.shape[1] == block.width
    for _ in range(10):
        v = rng.normal(size=x.size)
        rf = v - Qf @ (Qf.T @ v)
        rs = v - Qs @ (Qs.T @ v)
        assert abs(np.linalg.norm(rf) - np.linalg.norm(rs)) < 1e-8 * np.linalg.norm(v)


def test_double_application_keeps_constraints():
    x, block = small_block()
    once = orthogonalize_to_linear(block, x)
    again = apply_transform(once, null_space(np.ones((1, once.width))))
    assert_allclose(np.ones(len(x)) @ again.design, 0.0, atol=1e-10)
    assert_allclose(x @ again.design, 0.0, atol=1e-10)
    assert_allclose(again.rows(x), again.design, atol=1e-12)
