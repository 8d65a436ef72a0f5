"""Monte Carlo verification harness: wealth simulation, value agreement, optimality.

Wealth under a candidate rule pi (multiplier of sqrt(V)) evolves, on the
bundle's grid and with the SAME Brownian increments dB that drove V:

  power (fractions of wealth, alpha_i = pi_i sqrt(V_i)):
      log X advanced by (r + alpha' lambda - |alpha|^2/2) D + alpha' dB,
      lambda_i = theta_i sqrt(V_i)   (exact in log, so X > 0 pathwise);
  exponential (amounts): discounted Euler
      Xd_{k+1} = Xd_k + e^{-int_0^{t_k} r} (alpha' lambda D + alpha' dB),
      X_T = e^{int_0^T r} Xd_n.

The martingale optimality principle is probed two ways: paired common-random-
number comparisons of E[U(X_T)] between the optimal rule and perturbed rules
(suboptimality gap ~ eps^2), and the pathwise profile of

  J_t = U-scaled Gamma_t,
  Gamma_t = exp( [gamma int_t^T r]_power
                 + sum_i int_t^T (a_i + F_i(s, psi^i(T-s))) g^i_t(s) ds ),

with the pathwise adjusted forward curve discretized from the simulated path:
g_t(s) = g_0(s) + sum_{l <= k} Kbar_l(s) DZ_l, where DZ_l = -lam V_{l-1} D
+ nu varsigma(t_l) sqrt(V_{l-1}) DW_l and Kbar_l is the increment-averaged
fractional kernel (K1(s - t_{l-1}) - K1(s - t_l))/D, K1(t) = t^alpha /
Gamma(alpha + 1) -- the exact average of K over the increment interval, which
avoids the K(0) singularity at grid points.  J should be flat in t for the
optimal rule, with J_0 = value function and J_T = U(X_T).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as sp_gamma

from .riccati import RiccatiSolution
from .simulate import ModelParams, PathBundle
from .strategy import UtilitySpec, g0_curve, optimal_rule, value_function

__all__ = [
    "WealthRun",
    "PerturbationSpec",
    "simulate_wealth",
    "optimality_test",
    "martingale_profile",
    "stationarity_report",
]


@dataclass(frozen=True)
class WealthRun:
    """Terminal wealth and utility statistics for one strategy on one bundle."""

    util: UtilitySpec
    tag: str
    x_T: np.ndarray
    u_T: np.ndarray
    mean: float
    se: float
    X_path: np.ndarray | None = None

    @property
    def ci95(self) -> tuple:
        return (self.mean - 1.96 * self.se, self.mean + 1.96 * self.se)


@dataclass(frozen=True)
class PerturbationSpec:
    """Additive perturbation of the rule: pi(t) -> pi(t) + eps * h(t).

    ``h`` maps a time array (m,) to a direction array (d, m); ``label`` tags
    the direction in reports.
    """

    epsilon: float
    h: object
    label: str = ""

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be >= 0")


def _rule_matrix(rule, times: np.ndarray, d: int) -> np.ndarray:
    """Evaluate a time->d-vector rule at left endpoints; returns (d, n)."""
    out = np.asarray(rule(times), dtype=float)
    if out.shape != (d, times.size):
        raise ValueError(f"rule must return shape {(d, times.size)}, got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError("rule produced non-finite values")
    return out


def simulate_wealth(
    bundle: PathBundle,
    util: UtilitySpec,
    rule,
    params: ModelParams,
    tag: str = "",
    store_path: bool = False,
) -> WealthRun:
    """Terminal wealth/utility under ``rule`` on the bundle's paths.

    ``rule(t)`` returns the per-asset multiplier of sqrt(V) for a time array
    t, shape (d, len(t)); it is evaluated at the left endpoint of each step.
    """
    d = params.d
    times = bundle.times
    n = times.size - 1
    dt = times[1] - times[0]
    P = bundle.n_paths
    R = _rule_matrix(rule, times[:-1], d)
    theta = params.theta
    r_left = params.rate(times[:-1]) * np.ones(n)

    if util.kind == "power":
        inc_sum = np.full(P, math.log(params.x0) + float(np.sum(r_left)) * dt)
        incs = np.zeros((n, P)) if store_path else None
        for i in range(d):
            Vi = bundle.V[i, :-1, :]
            drift = (R[i] * theta[i] - 0.5 * R[i] ** 2)[:, None] * Vi * dt
            noise = R[i][:, None] * np.sqrt(Vi) * bundle.dB[i]
            step = drift + noise
            inc_sum += step.sum(axis=0)
            if store_path:
                incs += step
        x_T = np.exp(inc_sum)
        if store_path:
            logX = np.empty((n + 1, P))
            logX[0] = math.log(params.x0)
            logX[1:] = math.log(params.x0) + np.cumsum(incs + (r_left * dt)[:, None], axis=0)
            X_path = np.exp(logX)
        else:
            X_path = None
    else:
        disc = np.array([math.exp(-params.rate.integral(0.0, t)) for t in times[:-1]])
        grow = math.exp(params.rate.integral(0.0, params.T))
        xd = np.full(P, params.x0)
        incs = np.zeros((n, P))
        for i in range(d):
            Vi = bundle.V[i, :-1, :]
            incs += (
                R[i][:, None] * theta[i] * Vi * dt + R[i][:, None] * np.sqrt(Vi) * bundle.dB[i]
            )
        incs *= disc[:, None]
        x_T = grow * (xd + incs.sum(axis=0))
        if store_path:
            xd_path = np.empty((n + 1, P))
            xd_path[0] = params.x0
            xd_path[1:] = params.x0 + np.cumsum(incs, axis=0)
            # undiscount at each grid time
            grow_k = np.array([math.exp(params.rate.integral(0.0, t)) for t in times])
            X_path = grow_k[:, None] * xd_path
        else:
            X_path = None

    bad = np.flatnonzero(~np.isfinite(x_T))
    if bad.size:
        raise FloatingPointError(f"non-finite terminal wealth at path index {bad[0]}")
    u = util.u(x_T)
    mean = float(np.mean(u))
    se = float(np.std(u, ddof=1) / math.sqrt(P))
    return WealthRun(util=util, tag=tag, x_T=x_T, u_T=u, mean=mean, se=se, X_path=X_path)


def optimality_test(
    bundle: PathBundle,
    util: UtilitySpec,
    params: ModelParams,
    sol: RiccatiSolution,
    perturbations: list,
) -> dict:
    """Paired common-random-number comparison of the optimal rule vs perturbed rules.

    For each PerturbationSpec, Delta = E[U(X^{pi*})] - E[U(X^{pi* + eps h})]
    with the paired-sample standard error; Delta should be >= 0 and scale
    like eps^2.  Returns the base run statistics and one entry per
    perturbation with keys 'label', 'epsilon', 'delta', 'se', 'z',
    'delta_over_eps2'.
    """
    base_rule = lambda t: optimal_rule(util, params, sol, t)
    base = simulate_wealth(bundle, util, base_rule, params, tag="optimal")
    entries = []
    for pert in perturbations:
        eps, h = pert.epsilon, pert.h
        rule = lambda t, eps=eps, h=h: optimal_rule(util, params, sol, t) + eps * np.asarray(h(t))
        run = simulate_wealth(bundle, util, rule, params, tag=f"pert[{pert.label}]x{eps}")
        diff = base.u_T - run.u_T
        delta = float(np.mean(diff))
        se = float(np.std(diff, ddof=1) / math.sqrt(diff.size))
        entries.append(
            {
                "label": pert.label,
                "epsilon": eps,
                "delta": delta,
                "se": se,
                "z": delta / se if se > 0.0 else math.inf if delta > 0 else 0.0,
                "delta_over_eps2": delta / eps**2 if eps > 0.0 else 0.0,
            }
        )
    return {"base_mean": base.mean, "base_se": base.se, "perturbations": entries}


def _reverse_cumtrapz(y: np.ndarray, dt: float) -> np.ndarray:
    """I[k] = int_{t_k}^{t_n} y via trapezoid; y has n+1 points along axis 0."""
    seg = dt * 0.5 * (y[:-1] + y[1:])
    out = np.zeros_like(y)
    out[:-1] = np.cumsum(seg[::-1], axis=0)[::-1]
    return out


def martingale_profile(
    bundle: PathBundle,
    util: UtilitySpec,
    params: ModelParams,
    sol: RiccatiSolution,
    stab=None,
) -> dict:
    """Sample-mean profile of the pathwise value process J_t under the optimal rule.

    Requires a bundle with dBperp stored (to reconstruct dW) and simulated
    with V_0 = E[V_0] if the J_0 endpoint is to match the analytic value.
    Returns a dict with the time grid, mean J, the paired standard error of
    J_t - J_0, the flatness statistic max_k |mean_k - mean_0| / SE_k, and the
    two endpoint references.
    """
    d = params.d
    times = bundle.times
    n = times.size - 1
    dt = times[1] - times[0]
    P = bundle.n_paths
    T = params.T

    rule = lambda t: optimal_rule(util, params, sol, t)
    run = simulate_wealth(bundle, util, rule, params, tag="optimal", store_path=True)
    X = run.X_path  # (n+1, P)

    g = util.gamma
    expo = np.zeros((n + 1, P))
    g0 = g0_curve(params, times)  # (d, n+1)
    for i in range(d):
        # value integrand a_i + F_i(s, psi(T-s)) interpolated to the bundle grid
        s_nodes = (T - sol.times)[::-1]
        rv = np.interp(times, s_nodes, sol.rhs_values[i][::-1])
        expo += _reverse_cumtrapz(rv * g0[i], dt)[:, None]

        # averaged-kernel weights: kbar[j] = (K1((j+1)D) - K1(j D)) / D
        alpha_i = params.alpha[i]
        k1 = (dt * np.arange(n + 1)) ** alpha_i / sp_gamma(alpha_i + 1.0)
        kbar = (k1[1:] - k1[:-1]) / dt
        M = np.zeros((n + 1, n))
        for ell in range(1, n + 1):
            y = np.zeros(n + 1)
            y[ell:] = rv[ell:] * kbar[: n - ell + 1]
            col = _reverse_cumtrapz(y, dt)
            col[:ell] = 0.0  # increment l not yet observed before t_l
            M[:, ell - 1] = col

        sig = np.asarray(sol.spec.stabilizers[i](times))
        Vprev = bundle.V[i, :-1, :]
        dW = bundle.dW(i)
        dZ = -params.lam[i] * Vprev * dt + params.nu[i] * sig[1:, None] * np.sqrt(Vprev) * dW
        expo += M @ dZ

    if util.kind == "power":
        r_tail = np.array([params.rate.integral(t, T) for t in times])
        J = X**g / g * np.exp(g * r_tail[:, None] + expo)
        value = value_function(util, params, sol, x0=params.x0)
    else:
        r_tail = np.array([params.rate.integral(t, T) for t in times])
        J = -np.exp(-g * np.exp(r_tail)[:, None] * X + expo) / g
        value = value_function(util, params, sol, x0=params.x0)

    j_mean = J.mean(axis=1)
    diff = J - J[0]
    se = np.std(diff, axis=1, ddof=1) / math.sqrt(P)
    with np.errstate(invalid="ignore", divide="ignore"):
        stats = np.abs(j_mean - j_mean[0]) / se
    stats[0] = 0.0
    flat = float(np.nanmax(stats))
    return {
        "times": times,
        "j_mean": j_mean,
        "se_paired": se,
        "flat_stat": flat,
        "value": value,
        "terminal_mean_utility": float(np.mean(run.u_T)),
    }


def stationarity_report(bundle: PathBundle) -> list[dict]:
    """Per-asset flatness of sample mean and variance of V across the grid.

    Reports max_k |mean_k - x_inf| / SE(mean_k) and
    max_k |var_k - v0| / SE(var_k), with SE(var) from the fourth central
    moment.  Both should be small (<= 3) under fake stationarity.
    """
    params = bundle.params
    P = bundle.n_paths
    out = []
    for i in range(params.d):
        Vi = bundle.V[i]
        mean_k = Vi.mean(axis=1)
        sd_k = Vi.std(axis=1, ddof=1)
        se_mean = sd_k / math.sqrt(P)
        var_k = sd_k**2
        m4 = ((Vi - mean_k[:, None]) ** 4).mean(axis=1)
        se_var = np.sqrt(np.maximum(m4 - var_k**2, 0.0) / P)
        # floor the SEs at rounding-noise scale so degenerate (constant-path)
        # cases yield 0 statistics instead of 0/0
        floor = 8.0 * np.finfo(float).eps * max(params.x_inf[i], 1.0)
        stat_mean = np.abs(mean_k - params.x_inf[i]) / np.maximum(se_mean, floor)
        stat_var = np.abs(var_k - params.v0_var[i]) / np.maximum(se_var, floor**2 + params.v0_var[i] * 8.0 * np.finfo(float).eps)
        # t_0 is the (possibly deterministic) initial condition
        out.append(
            {
                "asset": i,
                "mean_stat": float(np.max(stat_mean[1:])),
                "var_stat": float(np.max(stat_var[1:])),
                "mean_level": params.x_inf[i],
                "var_level": params.v0_var[i],
            }
        )
    return out
