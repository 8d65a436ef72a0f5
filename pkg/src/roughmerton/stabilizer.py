"""Stabilizer: the time-dependent diffusion modulation making Var(V_t) constant.

The stabilizer sigma = varsigma_{alpha,lam,c} solves the functional equation

    c lam^2 (1 - R(t)^2) = (f^2 * varsigma^2)(t)

(f the resolvent density, R the resolvent), which characterizes the
fake-stationary regime: constant mean and variance of the Volterra
square-root process over time.  For the fractional kernel it admits the
power-series form

    varsigma^2_{alpha,lam,c}(t) = c lam^(2 - 1/alpha) *
                                  varsigma_alpha^2(lam^(1/alpha) t),
    varsigma_alpha^2(tau)       = 2 tau^(1-alpha) sum_k (-1)^k c_k tau^(alpha k)

with coefficients c_k given by a Beta/Cauchy-product recurrence.

Provides:
  - ``stabilizer_coefficients``: the c_k recurrence (extended-range, via gammaln).
  - ``stabilizer_eval``: pointwise evaluation with trust-radius guard.
  - ``build_stabilizer``: grid tabulation as a ``StabilizerTable``.
  - ``functional_equation_residual``: singularity-aware residual check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, gammaln, roots_jacobi

from .kernels import KernelSpec, ResolventTable, _f_series_smooth, f_l2_norm, resolvent

__all__ = [
    "StabilizerTable",
    "stabilizer_coefficients",
    "stabilizer_eval",
    "build_stabilizer",
    "functional_equation_residual",
]

# Largest number of series coefficients kept (hard cap).
_K_CAP = 200
# Relative size under which additional series terms are considered converged.
_TERM_TOL = 1e-12


@dataclass(frozen=True)
class StabilizerTable:
    """Stabilizer values on a grid, plus the series data that produced them.

    Attributes
    ----------
    spec : KernelSpec
        Kernel parameters (alpha, lam).
    c : float
        Variance scale c = v0 / (nu^2 x_inf) >= 0.
    coeffs : np.ndarray
        Series coefficients c_0..c_K (empty when alpha = 1).
    grid : np.ndarray
        Times, starting at 0.
    values : np.ndarray
        varsigma(t) >= 0 per grid point.
    limit : float
        Long-time limit sqrt(c) lam / ||f||_L2.
    """

    spec: KernelSpec
    c: float
    coeffs: np.ndarray
    grid: np.ndarray
    values: np.ndarray
    limit: float

    def __call__(self, t):
        """Evaluate varsigma at arbitrary times via the series."""
        return stabilizer_eval(self.spec, self.c, self.coeffs, t, limit=self.limit)

    @property
    def sup_norm(self) -> float:
        return float(np.max(self.values))


def stabilizer_coefficients(alpha: float, n_coeffs: int) -> np.ndarray:
    """Coefficients c_0..c_K of the stabilizer series, K = n_coeffs - 1.

    c_0 = Gamma(alpha)^2 / (Gamma(2 alpha - 1) Gamma(2 - alpha)) and, for k >= 1,

      c_k = Gamma(alpha)^2 Gamma(alpha (k+1)) /
            (Gamma(2 alpha - 1) Gamma(alpha k + 2 - alpha)) *
            [ (a*b)_k - alpha (k+1) sum_{l=1..k}
                B(alpha (l+2) - 1, alpha (k-l-1) + 2) (b*b)_l c_{k-l} ]

    with a_k = 1/Gamma(alpha k + 1), b_k = 1/Gamma(alpha (k+1)) and (u*v) the
    Cauchy product.  Gamma ratios go through gammaln to survive large k.
    """
    if not (0.5 < alpha < 1.0):
        raise ValueError(f"coefficient recurrence requires alpha in (1/2, 1), got {alpha}")
    if n_coeffs < 1:
        raise ValueError("n_coeffs must be >= 1")
    K = n_coeffs - 1
    ks = np.arange(K + 1)
    a = np.exp(-gammaln(alpha * ks + 1.0))
    b = np.exp(-gammaln(alpha * (ks + 1)))
    ab = np.array([np.sum(a[: k + 1] * b[k::-1]) for k in range(K + 1)])
    bb = np.array([np.sum(b[: k + 1] * b[k::-1]) for k in range(K + 1)])

    log_g2a1 = gammaln(2.0 * alpha - 1.0)
    log_ga = gammaln(alpha)
    c = np.empty(K + 1)
    c[0] = math.exp(2.0 * log_ga - log_g2a1 - gammaln(2.0 - alpha))
    for k in range(1, K + 1):
        pref = math.exp(
            2.0 * log_ga + gammaln(alpha * (k + 1)) - log_g2a1 - gammaln(alpha * k + 2.0 - alpha)
        )
        ells = np.arange(1, k + 1)
        beta_vals = np.exp(betaln(alpha * (ells + 2) - 1.0, alpha * (k - ells - 1) + 2.0))
        conv = np.sum(beta_vals * bb[1 : k + 1] * c[k - 1 :: -1][: k])
        c[k] = pref * (ab[k] - alpha * (k + 1) * conv)
    return c


def _series_sq_scaled(alpha: float, coeffs: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """varsigma_alpha^2(tau) = 2 tau^(1-alpha) sum_k (-1)^k c_k tau^(alpha k)."""
    signs = (-1.0) ** np.arange(coeffs.size)
    powers = tau[..., None] ** (alpha * np.arange(coeffs.size))
    return 2.0 * tau ** (1.0 - alpha) * (powers @ (signs * coeffs))


def _trust_radius(alpha: float, coeffs: np.ndarray) -> float:
    """Largest tau where the partial sums have visibly converged.

    A point tau is trusted when the last kept term is below _TERM_TOL relative
    to the partial sum and the partial sum is positive.
    """
    taus = np.geomspace(1e-4, 1e4, 200)
    k = np.arange(coeffs.size)
    trusted = taus[0]
    for tau in taus:
        terms = (-1.0) ** k * coeffs * tau ** (alpha * k)
        total = np.sum(terms)
        if total > 0.0 and abs(terms[-1]) < _TERM_TOL * total:
            trusted = tau
        else:
            break
    return trusted


def stabilizer_eval(
    spec: KernelSpec,
    c: float,
    coeffs: np.ndarray,
    t,
    limit: float | None = None,
):
    """varsigma_{alpha,lam,c}(t) = sqrt(max(series, 0)), t >= 0.

    Beyond the series trust radius the asymptotic limit
    sqrt(c) lam / ||f||_L2 is returned, blended linearly over one decade edge.
    Raises on materially negative series values inside the trust radius.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("stabilizer_eval requires t >= 0")
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    if c < 0.0:
        raise ValueError("variance scale c must be >= 0")
    if c == 0.0:
        out = np.zeros_like(t)
        return float(out[0]) if scalar else out
    if limit is None:
        limit = math.sqrt(c) * spec.lam / f_l2_norm(spec)
    alpha, lam = spec.alpha, spec.lam
    if alpha == 1.0:
        # classical square-root diffusion: constant modulation
        out = np.full_like(t, limit)
        return float(out[0]) if scalar else out

    tau = lam ** (1.0 / alpha) * t
    radius = _trust_radius(alpha, coeffs)
    sq = np.zeros_like(tau)
    inside = tau <= radius
    if np.any(inside):
        vals = c * lam ** (2.0 - 1.0 / alpha) * _series_sq_scaled(alpha, coeffs, tau[inside])
        if np.any(vals < -1e-10 * limit**2):
            raise ArithmeticError(
                "stabilizer series went negative inside its trust radius; "
                "increase the number of coefficients or reduce the horizon"
            )
        sq[inside] = np.maximum(vals, 0.0)
    out = np.sqrt(sq)
    if np.any(~inside):
        # blend linearly into the limit over one trust-radius-sized cell
        edge = math.sqrt(
            max(c * lam ** (2.0 - 1.0 / alpha) * _series_sq_scaled(alpha, coeffs, np.array([radius]))[0], 0.0)
        )
        frac = np.clip((tau[~inside] - radius) / max(radius, 1e-12), 0.0, 1.0)
        out[~inside] = (1.0 - frac) * edge + frac * limit
    return float(out[0]) if scalar else out


def build_stabilizer(
    spec: KernelSpec,
    c: float,
    grid,
    n_coeffs: int = _K_CAP,
) -> StabilizerTable:
    """Tabulate the stabilizer on ``grid`` (starting at 0)."""
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0.0):
        raise ValueError("grid must start at 0 and be strictly increasing")
    if c < 0.0:
        raise ValueError("variance scale c must be >= 0")
    limit = math.sqrt(c) * spec.lam / f_l2_norm(spec) if c > 0.0 else 0.0
    coeffs = (
        np.empty(0)
        if spec.alpha == 1.0
        else stabilizer_coefficients(spec.alpha, n_coeffs)
    )
    values = stabilizer_eval(spec, c, coeffs, grid, limit=limit)
    return StabilizerTable(
        spec=spec, c=c, coeffs=coeffs, grid=grid, values=values, limit=limit
    )


def functional_equation_residual(
    table: StabilizerTable,
    rtable: ResolventTable | None = None,
) -> float:
    """sup_t |c lam^2 (1 - R(t)^2) - (f^2 * varsigma^2)(t)| / (c lam^2).

    The right side is evaluated by convolving the two power series term by
    term: with f(u)^2 = lam^2 u^(2a-2) sum_m d_m u^(a m)
    (d_m = (-lam)^m (b*b)_m, b_k = 1/Gamma(a(k+1))) and
    varsigma^2(tau) = 2 c lam sum_j e_j tau^(1 - a + a j)
    (e_j = (-lam)^j c_j), each cross term integrates to a Beta function:

      (f^2 * s^2)(t) = 2 c lam^3 sum_{m,j} d_m e_j
                       B(2a - 1 + a m, 2 - a + a j) t^(a (1 + m + j)).

    This is exact up to series truncation, so the residual isolates how well
    the recurrence coefficients satisfy the defining equation.
    """
    spec, c = table.spec, table.c
    alpha, lam = spec.alpha, spec.lam
    if c == 0.0:
        return 0.0
    grid = table.grid[table.grid > 0.0]

    if alpha == 1.0:
        # constant varsigma: (f^2 * s^2)(t) = s^2 lam (1 - e^(-2 lam t)) / 2 exactly
        s_sq = table(grid) ** 2
        rhs = s_sq * lam * (1.0 - np.exp(-2.0 * lam * grid)) / 2.0
        lhs = c * lam**2 * (1.0 - np.exp(-2.0 * lam * grid))
        return float(np.max(np.abs(lhs - rhs)) / (c * lam**2))

    coeffs = table.coeffs
    K = coeffs.size
    ks = np.arange(K)
    b = np.exp(-gammaln(alpha * (ks + 1)))
    bb = np.array([np.sum(b[: k + 1] * b[k::-1]) for k in range(K)])
    d = (-lam) ** ks * bb
    e = (-lam) ** ks * coeffs
    beta_mat = np.exp(
        betaln(2.0 * alpha - 1.0 + alpha * ks[:, None], 2.0 - alpha + alpha * ks[None, :])
    )
    M = beta_mat * d[:, None] * e[None, :]

    powers = grid[:, None] ** (alpha * ks[None, :])  # p[t, m] = t^(a m)
    rhs = 2.0 * c * lam**3 * grid**alpha * np.einsum("tm,mj,tj->t", powers, M, powers)
    lhs = c * lam**2 * (1.0 - resolvent(spec, grid) ** 2)
    return float(np.max(np.abs(lhs - rhs)) / (c * lam**2))
