"""Optimal investment rules, the adjusted forward curve, and analytic value functions.

The optimal fraction-of-wealth strategy is alpha*_t,i = pi_i(t) sqrt(V_t^i)
with deterministic multiplier

  power:        pi_i(t) = (theta_i + rho_i nu_i s_i(t) psi^i(T-t)) / (1-gamma)
  exponential:  pi_i(t) = e^{-int_t^T r} (theta_i + rho_i nu_i s_i(t) psi^i(T-t)) / gamma

(s = varsigma, psi the Riccati--Volterra exponent curve; the exponential rule
is in currency units rather than fractions).  The value function has the
exponential-affine form

  power:        (x0^gamma/gamma) exp(gamma int_0^T r
                    + sum_i int_0^T (a_i + F_i(s, psi^i(T-s))) g_0^i(s) ds)
  exponential:  -(1/gamma) exp(-gamma e^{int_0^T r} x0) exp(sum_i int ... ds)

with the adjusted forward curve g_0^i(s) = E[V_0^i] + mu0_i s^alpha_i /
Gamma(alpha_i + 1), evaluated at the mean initial variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.special import gamma as sp_gamma

from .riccati import RiccatiSolution
from .simulate import ModelParams

__all__ = [
    "UtilitySpec",
    "StrategyValue",
    "g0_curve",
    "optimal_rule",
    "value_function",
    "strategy_profile",
]


@dataclass(frozen=True)
class UtilitySpec:
    """Utility family: power U(x) = x^gamma/gamma or exponential U(x) = -(1/gamma)e^(-gamma x)."""

    kind: str
    gamma: float

    def __post_init__(self):
        if self.kind not in ("power", "exponential"):
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.kind == "power" and not (0.0 < self.gamma < 1.0):
            raise ValueError("power utility requires 0 < gamma < 1")
        if self.kind == "exponential" and self.gamma <= 0.0:
            raise ValueError("exponential utility requires gamma > 0")

    def u(self, x):
        """Utility of terminal wealth."""
        x = np.asarray(x, dtype=float)
        if self.kind == "power":
            return x**self.gamma / self.gamma
        return -np.exp(-self.gamma * x) / self.gamma


@dataclass(frozen=True)
class StrategyValue:
    """Deterministic rule curves and the analytic value.

    ``pi_star[i, k]`` multiplies sqrt(V^i) at time ``times[k]``; ``value`` is
    the analytic value function at x0 and V_0 = E[V_0].
    """

    times: np.ndarray
    pi_star: np.ndarray
    value: float


def g0_curve(params: ModelParams, s) -> np.ndarray:
    """Adjusted forward curve g_0^i(s) = E[V_0^i] + mu0_i s^alpha_i / Gamma(alpha_i+1).

    Returns shape (d,) + shape(s).
    """
    s = np.asarray(s, dtype=float)
    if np.any(s < 0.0):
        raise ValueError("g0_curve requires s >= 0")
    alpha = params.alpha
    return (
        params.x_inf[(...,) + (None,) * s.ndim]
        + params.mu0[(...,) + (None,) * s.ndim]
        * s[None, ...] ** alpha[(...,) + (None,) * s.ndim]
        / sp_gamma(alpha + 1.0)[(...,) + (None,) * s.ndim]
    )


def _check_variant(util, sol: RiccatiSolution):
    want = "power" if util.kind == "power" else "exponential"
    if not sol.variant.startswith(want):
        raise ValueError(f"{util.kind} utility needs a {want} Riccati solution, got {sol.variant}")


def optimal_rule(util: UtilitySpec, params: ModelParams, sol: RiccatiSolution, t) -> np.ndarray:
    """Deterministic multiplier of sqrt(V^i) in the optimal strategy at time(s) t.

    For the degenerate power solution the hedging term carries the distortion
    coefficient delta (theta + delta rho nu varsigma psi_deg, consistent with
    the general rule through psi_general = delta psi_degenerate).
    """
    _check_variant(util, sol)
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    if np.any((t < 0.0) | (t > sol.spec.T + 1e-12)):
        raise ValueError("t must lie in [0, T]")
    T = sol.spec.T
    psi_rev = sol.psi_at(T - t)  # (d, len(t))
    sig = np.stack([np.asarray(sol.spec.stabilizers[i](t)) for i in range(params.d)])
    hedge = params.rho[:, None] * params.nu[:, None] * sig * psi_rev
    if sol.variant == "power_degenerate":
        g = params.gamma
        delta = (1.0 - g) / (1.0 - g + g * params.rho**2)
        hedge = delta[:, None] * hedge
    base = params.theta[:, None] + hedge
    if util.kind == "power":
        out = base / (1.0 - util.gamma)
    else:
        disc = np.array([math.exp(-params.rate.integral(ti, T)) for ti in t])
        out = disc[None, :] * base / util.gamma
    return out[:, 0] if scalar else out


def value_function(
    util: UtilitySpec,
    params: ModelParams,
    sol: RiccatiSolution,
    stab=None,
    x0: float | None = None,
) -> float:
    """Analytic value function at initial wealth x0 and V_0 = E[V_0].

    The exponent integral uses the solver's stored right-hand-side values:
    a_i + F_i(s, psi^i(T-s)) on the grid is the time reversal of
    ``sol.rhs_values[i]``; composite Simpson integrates it against g_0^i.
    The degenerate power solution is rejected (the theorem's exponent uses
    the general-correlation forcing).
    """
    _check_variant(util, sol)
    if sol.variant == "power_degenerate":
        raise ValueError("value_function requires the general-correlation power solution")
    if x0 is None:
        x0 = params.x0
    T, times = sol.spec.T, sol.times
    g0 = g0_curve(params, times)  # (d, n+1)
    integrand = sol.rhs_values[:, ::-1] * g0
    expo = float(sum(simpson(integrand[i], x=times) for i in range(params.d)))
    r_int = params.rate.integral(0.0, T)
    g = util.gamma
    if util.kind == "power":
        if x0 <= 0.0:
            raise ValueError("power utility requires x0 > 0")
        return x0**g / g * math.exp(g * r_int + expo)
    return -1.0 / g * math.exp(-g * math.exp(r_int) * x0) * math.exp(expo)


def strategy_profile(util: UtilitySpec, params: ModelParams, sol: RiccatiSolution) -> StrategyValue:
    """Rule curves on the solver grid plus the analytic value at params.x0."""
    pi = optimal_rule(util, params, sol, sol.times)
    val = value_function(util, params, sol, x0=params.x0)
    return StrategyValue(times=sol.times, pi_star=pi, value=val)
