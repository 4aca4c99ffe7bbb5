"""Cubic regression spline bases with analytic curvature penalties.

The standard basis uses the value-at-knots parameterization: coefficient j
is the function value at knot j, and the basis functions are the natural
cubic interpolants of the knot unit vectors.  Writing h_j for the knot
gaps, the interior second derivatives d solve B d = D b for the classical
tridiagonal B and second-difference D, which gives the exact roughness

    integral f''(x)^2 dx = b' D' B^{-1} D b

so the penalty matrix is S = D' B^{-1} D.  The cyclic variant wraps the
same construction around a period.  Evaluation beyond the boundary knots
extrapolates linearly (natural end conditions).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .errors import ConfigurationError


@dataclass(frozen=True)
class KnotSet:
    """Strictly increasing knots; for cyclic knots the first and last
    entries identify the wrap point."""

    knots: np.ndarray
    kind: str = "standard"  # "standard" | "cyclic"

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)  # own copy, frozen below
        knots.flags.writeable = False
        object.__setattr__(self, "knots", knots)
        if self.kind not in ("standard", "cyclic"):
            raise ConfigurationError(f"unknown knot kind {self.kind!r}")
        if knots.ndim != 1 or knots.size < 3:
            raise ConfigurationError("need at least 3 knots")
        if not np.all(np.diff(knots) > 0):
            raise ConfigurationError("knots must be strictly increasing")


def default_knots(values: np.ndarray, count: int) -> KnotSet:
    """Place ``count`` knots at evenly spaced quantiles of the unique
    values, endpoints included."""
    if count < 3:
        raise ConfigurationError(f"knot count {count} < 3")
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ConfigurationError("empty covariate")
    unique = np.unique(values)
    if unique.size < count:
        raise ConfigurationError(
            f"{unique.size} unique values cannot support {count} knots"
        )
    probs = np.linspace(0.0, 1.0, count)
    knots = np.quantile(unique, probs)
    return KnotSet(knots=knots, kind="standard")


def default_knot_count(n_unique: int, fraction: float = 0.25, minimum: int = 3) -> int:
    """Default knot count: round(fraction * unique values), floored."""
    return max(minimum, int(np.floor(fraction * n_unique + 0.5)))


@dataclass(frozen=True)
class BasisBlock:
    """Evaluated basis with its curvature penalty and transform history.

    ``design`` holds the basis evaluated at the build covariate values and
    ``penalty`` the matching quadratic-form matrix; both live in the same
    (possibly transformed, possibly column-pruned) coefficient space.
    ``rows`` re-evaluates the block at new covariate values, which is what
    downstream effect extraction on the full age-period-cohort cube needs.
    """

    design: np.ndarray
    penalty: np.ndarray
    knots: KnotSet | None
    evaluator: object
    transform: object = None  # NullSpaceTransform, set by reparam
    keep: np.ndarray | None = None  # surviving column indices after rank repair

    def __post_init__(self):
        if self.design.shape[1] != self.penalty.shape[0]:
            raise ConfigurationError("design/penalty dimension mismatch")

    @property
    def width(self) -> int:
        return self.design.shape[1]

    def rows(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the block (with its transforms applied) at new x."""
        raw = self.evaluator.rows(np.asarray(x, dtype=float))
        if self.transform is not None:
            raw = raw @ self.transform.Z
        if self.keep is not None:
            raw = raw[:, self.keep]
        return raw

    def restrict(self, keep: np.ndarray) -> "BasisBlock":
        """Keep only the given columns (rank repair)."""
        keep = np.asarray(keep, dtype=int)
        prior = self.keep if self.keep is not None else np.arange(self.width)
        return replace(
            self,
            design=self.design[:, keep],
            penalty=self.penalty[np.ix_(keep, keep)],
            keep=prior[keep],
        )


def _symmetrize(S: np.ndarray) -> np.ndarray:
    return (S + S.T) / 2.0


class CrsEvaluator:
    """Natural cubic regression spline in value-at-knots form."""

    def __init__(self, knots: np.ndarray):
        knots = np.asarray(knots, dtype=float)
        K = knots.size
        if K < 3:
            raise ConfigurationError("cubic regression spline needs >= 3 knots")
        h = np.diff(knots)
        B = np.zeros((K - 2, K - 2))
        D = np.zeros((K - 2, K))
        for i in range(K - 2):
            D[i, i] = 1.0 / h[i]
            D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
            D[i, i + 2] = 1.0 / h[i + 1]
            B[i, i] = (h[i] + h[i + 1]) / 3.0
            if i + 1 < K - 2:
                B[i, i + 1] = h[i + 1] / 6.0
                B[i + 1, i] = h[i + 1] / 6.0
        F = scipy.linalg.solve(B, D, assume_a="pos")
        self.knots = knots
        self.h = h
        # Rows map coefficients to second derivatives at each knot; the
        # natural conditions zero the boundary rows.
        self.F_full = np.vstack([np.zeros(K), F, np.zeros(K)])
        self.penalty = _symmetrize(D.T @ F)

    def rows(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        knots, h, F = self.knots, self.h, self.F_full
        K = knots.size
        n = x.size
        X = np.zeros((n, K))

        inside = (x >= knots[0]) & (x <= knots[-1])
        if np.any(inside):
            xi = x[inside]
            j = np.clip(np.searchsorted(knots, xi, side="right") - 1, 0, K - 2)
            lo, hi = knots[j], knots[j + 1]
            hj = h[j]
            am = (hi - xi) / hj
            ap = (xi - lo) / hj
            cm = ((hi - xi) ** 3 / hj - hj * (hi - xi)) / 6.0
            cp = ((xi - lo) ** 3 / hj - hj * (xi - lo)) / 6.0
            rows = np.zeros((xi.size, K))
            np.add.at(rows, (np.arange(xi.size), j), am)
            np.add.at(rows, (np.arange(xi.size), j + 1), ap)
            rows += cm[:, None] * F[j] + cp[:, None] * F[j + 1]
            X[inside] = rows

        left = x < knots[0]
        if np.any(left):
            d = np.zeros(K)
            d[0] -= 1.0 / h[0]
            d[1] += 1.0 / h[0]
            d -= (h[0] / 3.0) * F[0] + (h[0] / 6.0) * F[1]
            base = np.zeros(K)
            base[0] = 1.0
            X[left] = base + np.outer(x[left] - knots[0], d)

        right = x > knots[-1]
        if np.any(right):
            d = np.zeros(K)
            d[K - 2] -= 1.0 / h[-1]
            d[K - 1] += 1.0 / h[-1]
            d += (h[-1] / 6.0) * F[K - 2] + (h[-1] / 3.0) * F[K - 1]
            base = np.zeros(K)
            base[K - 1] = 1.0
            X[right] = base + np.outer(x[right] - knots[-1], d)

        return X


class CyclicCrsEvaluator:
    """Cyclic cubic regression spline; coefficient j is the value at the
    j-th distinct knot, with the last knot identified with the first."""

    def __init__(self, knots: np.ndarray):
        knots = np.asarray(knots, dtype=float)
        K = knots.size
        if K < 4:
            raise ConfigurationError("cyclic spline needs >= 4 knots (3 distinct)")
        n = K - 1
        h = np.diff(knots)  # h[n-1] closes the cycle
        B = np.zeros((n, n))
        D = np.zeros((n, n))
        for j in range(n):
            jm, jp = (j - 1) % n, (j + 1) % n
            hm, hj = h[jm], h[j]
            B[j, jm] += hm / 6.0
            B[j, j] += (hm + hj) / 3.0
            B[j, jp] += hj / 6.0
            D[j, jm] += 1.0 / hm
            D[j, j] += -1.0 / hm - 1.0 / hj
            D[j, jp] += 1.0 / hj
        F = scipy.linalg.solve(B, D)
        self.knots = knots
        self.h = h
        self.period = knots[-1] - knots[0]
        self.F = F  # n x n: coefficients -> second derivatives at knots
        self.penalty = _symmetrize(D.T @ F)

    def rows(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        knots, h, F = self.knots, self.h, self.F
        n = knots.size - 1
        xm = knots[0] + np.mod(x - knots[0], self.period)
        j = np.clip(np.searchsorted(knots, xm, side="right") - 1, 0, n - 1)
        lo, hi = knots[j], knots[j + 1]
        hj = h[j]
        am = (hi - xm) / hj
        ap = (xm - lo) / hj
        cm = ((hi - xm) ** 3 / hj - hj * (hi - xm)) / 6.0
        cp = ((xm - lo) ** 3 / hj - hj * (xm - lo)) / 6.0
        jp = (j + 1) % n
        X = np.zeros((x.size, n))
        np.add.at(X, (np.arange(x.size), j), am)
        np.add.at(X, (np.arange(x.size), jp), ap)
        X += cm[:, None] * F[j] + cp[:, None] * F[jp]
        return X


def crs_basis(x: np.ndarray, knots: KnotSet) -> BasisBlock:
    """Standard cubic regression spline block evaluated at x."""
    if knots.kind != "standard":
        raise ConfigurationError("crs_basis requires standard knots")
    ev = CrsEvaluator(knots.knots)
    return BasisBlock(
        design=ev.rows(x), penalty=ev.penalty, knots=knots, evaluator=ev
    )


def cyclic_crs_basis(x: np.ndarray, knots: KnotSet, period: float) -> BasisBlock:
    """Cyclic cubic regression spline block with the given period."""
    if knots.kind != "cyclic":
        raise ConfigurationError("cyclic_crs_basis requires cyclic knots")
    if period <= 0:
        raise ConfigurationError("period must be positive")
    span = knots.knots[-1] - knots.knots[0]
    if abs(span - period) > 1e-9 * period:
        raise ConfigurationError(
            f"knot span {span} does not match period {period}"
        )
    ev = CyclicCrsEvaluator(knots.knots)
    return BasisBlock(
        design=ev.rows(x), penalty=ev.penalty, knots=knots, evaluator=ev
    )


class NaturalCubicSpline:
    """Interpolating natural cubic spline with linear tails.

    Second derivatives are exactly zero at (and beyond) the boundary
    knots, making the roughness integral over the knot span exact for the
    piecewise-linear second derivative.
    """

    def __init__(self, knots: np.ndarray, values: np.ndarray):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.shape != knots.shape:
            raise ConfigurationError("one value per knot required")
        self._ev = CrsEvaluator(knots)
        self.knots = knots
        self.values = values
        self.h = self._ev.h
        self.d2_at_knots = self._ev.F_full @ values

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        out = self._ev.rows(np.atleast_1d(x)) @ self.values
        return float(out[0]) if scalar else out

    def second_derivative(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        knots, d2 = self.knots, self.d2_at_knots
        K = knots.size
        out = np.zeros(x.size)
        inside = (x >= knots[0]) & (x <= knots[-1])
        xi = x[inside]
        j = np.clip(np.searchsorted(knots, xi, side="right") - 1, 0, K - 2)
        t = (xi - knots[j]) / self.h[j]
        out[inside] = d2[j] * (1 - t) + d2[j + 1] * t
        return out

    def third_derivatives(self) -> np.ndarray:
        """Constant third derivative on each knot interval."""
        return np.diff(self.d2_at_knots) / self.h

    def roughness(self) -> float:
        """Exact integral of f''(x)^2 over the knot span."""
        d = self.d2_at_knots
        a, b = d[:-1], d[1:]
        return float(np.sum(self.h * (a * a + a * b + b * b) / 3.0))


def natural_cubic_fit(knots: KnotSet, values_at_knots: np.ndarray) -> NaturalCubicSpline:
    """Interpolating natural cubic spline through (knots, values)."""
    if knots.kind != "standard":
        raise ConfigurationError("natural_cubic_fit requires standard knots")
    return NaturalCubicSpline(knots.knots, values_at_knots)
