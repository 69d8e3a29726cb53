"""Almon lag polynomials in the direct (linear) parametrisation.

A lag profile over lags ``m = 1..M`` is the polynomial
``gamma_m = sum_i theta_i * m**i`` of order ``p``.  With endpoint restrictions
the polynomial and its slope vanish at ``m = M`` and the free parameters live
in the null space of those two linear conditions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space


@dataclass(frozen=True)
class AlmonMap:
    M: int
    p: int
    r: int
    phi: np.ndarray
    null_basis: np.ndarray

    @property
    def n_params(self) -> int:
        return self.p + 1 - self.r

    @property
    def restricted(self) -> bool:
        return self.r > 0

    @property
    def lag_weights(self) -> np.ndarray:
        """``(M, n_params)`` matrix taking restricted parameters to the lag profile."""
        return self.phi.T @ self.null_basis

    def transform(self, W: np.ndarray) -> np.ndarray:
        """Regressors for the restricted parameters given raw lags ``W`` (T x M)."""
        W = np.asarray(W, dtype=float)
        if W.shape[-1] != self.M:
            raise ValueError(f"expected {self.M} lags, got {W.shape[-1]}")
        return W @ self.lag_weights

    def full_theta(self, theta_restricted) -> np.ndarray:
        theta_restricted = np.asarray(theta_restricted, dtype=float)
        if theta_restricted.shape[0] != self.n_params:
            raise ValueError(f"theta must have length {self.n_params}, got {theta_restricted.shape[0]}")
        return self.null_basis @ theta_restricted

    def names(self, prefix: str) -> list[str]:
        return [f"{prefix}_almon{i}" for i in range(self.n_params)]


def _analytic_null_basis_p3(M: int) -> np.ndarray:
    # theta0 = theta2 M^2 + 2 theta3 M^3, theta1 = -2 theta2 M - 3 theta3 M^2
    return np.array(
        [
            [M**2, 2 * M**3],
            [-2 * M, -3 * M**2],
            [1, 0],
            [0, 1],
        ],
        dtype=float,
    )


def endpoint_conditions(M: int, p: int) -> np.ndarray:
    """Rows giving ``B(M)`` and ``B'(M)`` as linear functions of theta."""
    i = np.arange(p + 1)
    value = np.power(float(M), i)
    slope = np.where(i > 0, i * np.power(float(M), np.maximum(i - 1, 0)), 0.0)
    return np.vstack([value, slope])


def make_almon_map(M: int, p: int, restricted: bool = True) -> AlmonMap:
    """Polynomial weighting matrix over lags 1..M, optionally tail-restricted."""
    if M < 1 or p < 0:
        raise ValueError("M must be positive and p non-negative")
    if p >= M:
        raise ValueError("polynomial order must be below lag count")
    if restricted and p < 2:
        raise ValueError("restrictions exceed parameters")
    m = np.arange(1, M + 1, dtype=float)
    phi = np.vstack([m**i for i in range(p + 1)])
    if not restricted:
        return AlmonMap(M, p, 0, phi, np.eye(p + 1))
    if p == 3:
        basis = _analytic_null_basis_p3(M)
    else:
        basis = null_space(endpoint_conditions(M, p))
    return AlmonMap(M, p, 2, phi, basis)


@dataclass(frozen=True)
class LagProfile:
    variable: str
    gamma: np.ndarray
    quantile: float | None = None


def lag_profile(map: AlmonMap, theta_restricted, variable: str = "", quantile: float | None = None) -> LagProfile:
    return LagProfile(variable, map.phi.T @ map.full_theta(theta_restricted), quantile)


def overall_effect(map: AlmonMap, theta_restricted) -> float:
    """Cumulative effect over all lags."""
    return float(lag_profile(map, theta_restricted).gamma.sum())


@dataclass(frozen=True)
class LagAverage:
    """Mean of the ``n`` most recent lags, the quarterly-average regressor."""

    M: int
    n: int

    @property
    def n_params(self) -> int:
        return 1

    @property
    def lag_weights(self) -> np.ndarray:
        w = np.zeros((self.M, 1))
        w[: self.n, 0] = 1.0 / self.n
        return w

    def transform(self, W: np.ndarray) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        if W.shape[-1] != self.M:
            raise ValueError(f"expected {self.M} lags, got {W.shape[-1]}")
        return W @ self.lag_weights

    def names(self, prefix: str) -> list[str]:
        return [f"{prefix}_avg{self.n}"]
