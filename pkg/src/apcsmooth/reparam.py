"""Null-space reparameterization of basis blocks.

A linear constraint C b = 0 on the coefficients of a smooth is absorbed by
rewriting b = Z b* where the columns of Z form an orthonormal basis of the
null space of C.  The block's design becomes X Z and its penalty Z' S Z.
The two constraints used here are sum-to-zero (orthogonality to the
intercept) and joint orthogonality to intercept and linear trend, with
C = [1 : x]' X.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .basis import BasisBlock, _symmetrize
from .errors import ConfigurationError, NumericalRankError


@dataclass(frozen=True)
class NullSpaceTransform:
    """Orthonormal null-space basis Z of a full-row-rank constraint."""

    Z: np.ndarray
    constraint: np.ndarray
    r: int


def null_space(constraint: np.ndarray) -> NullSpaceTransform:
    """Orthonormal basis of the null space of a full-row-rank constraint.

    Rank is detected by column-pivoted QR of the transposed constraint;
    a deficient constraint raises :class:`NumericalRankError` carrying the
    detected rank.
    """
    constraint = np.atleast_2d(np.asarray(constraint, dtype=float))
    r, q = constraint.shape
    if r >= q:
        raise ConfigurationError(f"constraint {r}x{q} leaves no free coefficients")
    _, R, _ = scipy.linalg.qr(constraint.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = 1e-9 * diag.max() if diag.size else 0.0
    detected = int(np.sum(diag > tol))
    if detected < r:
        raise NumericalRankError("constraint is rank deficient", detected)
    Q, _ = scipy.linalg.qr(constraint.T, mode="full")
    return NullSpaceTransform(Z=Q[:, r:], constraint=constraint, r=r)


def apply_transform(block: BasisBlock, t: NullSpaceTransform) -> BasisBlock:
    """Re-express a block in null-space coordinates: X Z and Z' S Z."""
    if t.constraint.shape[1] != block.width:
        raise ConfigurationError(
            f"constraint width {t.constraint.shape[1]} != block width {block.width}"
        )
    if block.keep is not None:
        raise ConfigurationError("cannot transform a column-pruned block")
    new_design = block.design @ t.Z
    new_penalty = _symmetrize(t.Z.T @ block.penalty @ t.Z)
    if block.transform is not None:
        # compose so that rows() maps raw basis -> final coordinates
        record = NullSpaceTransform(
            Z=block.transform.Z @ t.Z,
            constraint=t.constraint,
            r=block.transform.r + t.r,
        )
    else:
        record = t
    return replace(block, design=new_design, penalty=new_penalty, transform=record)


def orthogonalize_to_linear(block: BasisBlock, x: np.ndarray) -> BasisBlock:
    """Remove the intercept and linear-in-x overlap from a block.

    Builds the 2 x q constraint [1 : x]' X and applies its null-space
    transform to the design and penalty.
    """
    x = np.asarray(x, dtype=float)
    if x.size != block.design.shape[0]:
        raise ConfigurationError("covariate length does not match design rows")
    constraint = np.vstack([np.ones_like(x), x]) @ block.design
    return apply_transform(block, null_space(constraint))


def sum_to_zero(block: BasisBlock) -> BasisBlock:
    """Remove only the intercept overlap from a block."""
    constraint = np.ones((1, block.design.shape[0])) @ block.design
    return apply_transform(block, null_space(constraint))
