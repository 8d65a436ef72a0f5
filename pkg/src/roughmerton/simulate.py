"""Path simulation of the multivariate fake-stationary Volterra square-root process.

The variance of asset i follows the integrated Euler--Maruyama scheme

    V^i_{t_k} = h^i(t_k) + (nu_i / lam_i) sum_{l=1..k}
                varsigma^i(t_l) sqrt(max(V^i_{t_{l-1}}, 0)) I^{i,l}_k,

    h^i(t_k) = x_inf^i + (V_0^i - x_inf^i) R_{lam_i}(t_k),   x_inf = mu0 / lam,

where I^{l}_k = int_{t_{l-1}}^{t_l} f(t_k - s) dW_s are Gaussian integrals of
the resolvent density f.  On a uniform grid their covariance is lag
stationary: with j = k1 - l, m = k2 - l,

    Cov(I^l_{k1}, I^l_{k2}) = int_0^D f(j D + u) f(m D + u) du,
    Cov(I^l_k, DW_l)        = R(j D) - R((j+1) D),      Var(DW_l) = D,

so a single (n+1) x (n+1) covariance per asset (row 0 = the Brownian
increment, rows 1..n = lags 0..n-1) gives, through one symmetric factor A,
the joint draw (DW_l, I^l_l, ..., I^l_n) at every step l from fresh standard
normals.  The stock drivers are B^i with W^i = rho_i B^i + sqrt(1-rho_i^2)
B^{perp,i}; the same W drives both V and the wealth equation.

Provides:
  - ``ModelParams`` / ``SimGrid`` / ``PathBundle`` / ``RateCurve`` types.
  - ``gaussian_integral_covariance``: single covariance entries (singularity-aware).
  - ``integral_factor``: the per-asset joint factor A (exact rank-2 when alpha = 1).
  - ``sample_v0``: truncated Gaussian initial variance draws.
  - ``simulate_variance``: block-streamed, seed-deterministic path generation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec, _f_smooth, resolvent, resolvent_density
from .stabilizer import StabilizerTable

__all__ = [
    "RateCurve",
    "ModelParams",
    "SimGrid",
    "PathBundle",
    "gaussian_integral_covariance",
    "lag_covariance_matrix",
    "integral_factor",
    "sample_v0",
    "simulate_variance",
]

# Floor applied to truncated Gaussian initial-variance draws.
_V0_FLOOR = 1e-12
# PSD tolerance on the smallest covariance eigenvalue.
_PSD_TOL = 1e-10
# Relative eigenvalue cutoff for the truncated factor.
_EIG_CUT = 1e-13
# Quadrature nodes per covariance integral.
_QUAD_NODES = 64


@dataclass(frozen=True)
class RateCurve:
    """Piecewise-constant short rate r(t) >= 0.

    ``values[j]`` applies on [knots[j], knots[j+1]), with knots[0] = 0 and the
    last value extended to infinity.  The default is r = 0.
    """

    knots: np.ndarray = field(default_factory=lambda: np.array([0.0]))
    values: np.ndarray = field(default_factory=lambda: np.array([0.0]))

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.shape != values.shape or knots.ndim != 1 or knots.size == 0:
            raise ValueError("knots and values must be equal-length 1-d arrays")
        if knots[0] != 0.0 or np.any(np.diff(knots) <= 0.0):
            raise ValueError("knots must start at 0 and be strictly increasing")
        if np.any(values < 0.0):
            raise ValueError("rates must be >= 0")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, None)
        out = self.values[idx]
        return float(out) if out.ndim == 0 else out

    def integral(self, t0: float, t1: float) -> float:
        """int_{t0}^{t1} r(s) ds (t0 <= t1)."""
        if t1 < t0:
            raise ValueError("integral requires t0 <= t1")
        edges = np.concatenate([[t0], self.knots[(self.knots > t0) & (self.knots < t1)], [t1]])
        return float(np.sum(self(edges[:-1]) * np.diff(edges)))


@dataclass(frozen=True)
class ModelParams:
    """Market and variance-process parameters for d assets.

    Per-asset arrays (length d): kernel exponent ``alpha`` in (1/2, 1],
    mean reversion ``lam`` > 0, vol-of-vol ``nu`` >= 0, market price of risk
    ``theta`` >= 0, leverage ``rho`` in [-1, 1], mean-level drive ``mu0``,
    and variance scale ``c`` >= 0 (so Var(V_0) = c nu^2 x_inf).

    ``rate`` is the piecewise-constant short rate, ``T`` the horizon,
    ``gamma`` the risk aversion and ``x0`` the initial wealth.
    """

    alpha: np.ndarray
    lam: np.ndarray
    nu: np.ndarray
    theta: np.ndarray
    rho: np.ndarray
    mu0: np.ndarray
    c: np.ndarray
    T: float
    gamma: float
    x0: float = 1.0
    rate: RateCurve = field(default_factory=RateCurve)

    def __post_init__(self):
        arrays = {}
        for name in ("alpha", "lam", "nu", "theta", "rho", "mu0", "c"):
            arrays[name] = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
        d = arrays["alpha"].size
        for name, arr in arrays.items():
            if arr.shape != (d,):
                raise ValueError(f"parameter {name} must have length {d}")
            object.__setattr__(self, name, arr)
        if np.any((arrays["alpha"] <= 0.5) | (arrays["alpha"] > 1.0)):
            raise ValueError("alpha must lie in (1/2, 1]")
        if np.any(arrays["lam"] <= 0.0):
            raise ValueError("lam must be > 0")
        if np.any(arrays["nu"] < 0.0) or np.any(arrays["theta"] < 0.0):
            raise ValueError("nu and theta must be >= 0")
        if np.any(np.abs(arrays["rho"]) > 1.0):
            raise ValueError("|rho| must be <= 1")
        if np.any(arrays["c"] < 0.0):
            raise ValueError("c must be >= 0")
        if np.any(arrays["mu0"] < 0.0):
            raise ValueError("mu0 must be >= 0")
        if self.T <= 0.0:
            raise ValueError("horizon T must be > 0")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be > 0")

    @property
    def d(self) -> int:
        return self.alpha.size

    @property
    def x_inf(self) -> np.ndarray:
        """Stationary mean x_inf = mu0 / lam = E[V_0]."""
        return self.mu0 / self.lam

    @property
    def v0_mean(self) -> np.ndarray:
        return self.x_inf

    @property
    def v0_var(self) -> np.ndarray:
        """Var(V_0) = c nu^2 x_inf."""
        return self.c * self.nu**2 * self.x_inf

    def kernel_spec(self, i: int) -> KernelSpec:
        return KernelSpec(alpha=float(self.alpha[i]), lam=float(self.lam[i]))


@dataclass(frozen=True)
class SimGrid:
    """Uniform time grid t_k = k T / n on [0, T]."""

    T: float
    n_steps: int

    def __post_init__(self):
        if self.T <= 0.0 or self.n_steps < 1:
            raise ValueError("SimGrid requires T > 0 and n_steps >= 1")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass(frozen=True)
class PathBundle:
    """Simulated variance paths and the Brownian increments that drove them.

    Attributes
    ----------
    seed : int
        Master seed; equal seeds give bit-identical bundles.
    times : np.ndarray
        Grid times t_0..t_n.
    V : np.ndarray
        Variance paths, shape (d, n+1, n_paths), truncated at 0.
    dB : np.ndarray
        Stock-driver increments, shape (d, n, n_paths).
    dBperp : np.ndarray or None
        Orthogonal increments; the variance driver is reconstructed as
        dW = rho dB + sqrt(1 - rho^2) dBperp.
    integrals : np.ndarray or None
        Lag-zero Gaussian integral draws I^{i,l}_l per step, shape (d, n, n_paths).
    v0 : np.ndarray
        Initial variance per asset and path, shape (d, n_paths).
    params : ModelParams
        The parameters the bundle was simulated under.
    """

    seed: int
    times: np.ndarray
    V: np.ndarray
    dB: np.ndarray
    dBperp: np.ndarray | None
    integrals: np.ndarray | None
    v0: np.ndarray
    params: "ModelParams"

    @property
    def n_paths(self) -> int:
        return self.V.shape[2]

    def dW(self, i: int) -> np.ndarray:
        """Variance-driver increments dW^i = rho_i dB^i + sqrt(1-rho_i^2) dBperp^i."""
        if self.dBperp is None:
            raise ValueError("bundle was built without dBperp storage")
        r = self.params.rho[i]
        return r * self.dB[i] + math.sqrt(max(1.0 - r * r, 0.0)) * self.dBperp[i]


def _gl_nodes(n: int, a: float, b: float):
    """Gauss-Legendre nodes/weights on (a, b)."""
    x, w = np.polynomial.legendre.leggauss(n)
    return a + (b - a) * (x + 1.0) / 2.0, (b - a) / 2.0 * w


def _lag_entry_00(spec: KernelSpec, dt: float, q: int = _QUAD_NODES) -> float:
    """int_0^dt f(u)^2 du via the power substitution u = w^(1/(2a-1))."""
    alpha, lam = spec.alpha, spec.lam
    if alpha == 1.0:
        return lam * (1.0 - math.exp(-2.0 * lam * dt)) / 2.0
    # u^(2a-2) du = dw / (2a-1) with w = u^(2a-1): the integrand becomes smooth
    w, wts = _gl_nodes(q, 0.0, dt ** (2.0 * alpha - 1.0))
    u = w ** (1.0 / (2.0 * alpha - 1.0))
    s = _f_smooth(spec, u)
    return lam**2 / (2.0 * alpha - 1.0) * float(np.sum(wts * s**2))


def gaussian_integral_covariance(
    spec: KernelSpec,
    grid: SimGrid,
    ell: int,
    k1: int,
    k2: int,
    quad_nodes: int = _QUAD_NODES,
) -> float:
    """Cov(I^ell_{k1}, I^ell_{k2}) = int_{t_{ell-1}}^{t_ell} f(t_k1 - s) f(t_k2 - s) ds.

    Requires 1 <= ell <= k1 <= k2 <= n.  Only the lags j = k1 - ell and
    m = k2 - ell enter (uniform grid).  The j = m = 0 entry is handled by a
    power substitution, the j = 0 < m row by Gauss-Jacobi quadrature with
    weight u^(alpha-1), and the rest by Gauss-Legendre on a smooth integrand.
    """
    n = grid.n_steps
    if not (1 <= ell <= k1 <= k2 <= n):
        raise ValueError("indices must satisfy 1 <= ell <= k1 <= k2 <= n_steps")
    dt = grid.dt
    alpha, lam = spec.alpha, spec.lam
    j, m = k1 - ell, k2 - ell
    if alpha == 1.0:
        return lam * math.exp(-lam * (j + m) * dt) * (1.0 - math.exp(-2.0 * lam * dt)) / 2.0
    if j == 0 and m == 0:
        return _lag_entry_00(spec, dt, quad_nodes)
    if j == 0:
        # with w = u^a, f(u) du = (lam/a) S(w^(1/a)) dw and S is analytic in w
        w, wts = _gl_nodes(quad_nodes, 0.0, dt**alpha)
        u = w ** (1.0 / alpha)
        g = _f_smooth(spec, u) * resolvent_density(spec, m * dt + u)
        return lam / alpha * float(np.sum(wts * g))
    u, w = _gl_nodes(quad_nodes, 0.0, dt)
    return float(np.sum(w * resolvent_density(spec, j * dt + u) * resolvent_density(spec, m * dt + u)))


def lag_covariance_matrix(spec: KernelSpec, dt: float, n: int, quad_nodes: int = _QUAD_NODES) -> np.ndarray:
    """Joint covariance of (DW_l, I^l_l, ..., I^l_{l+n-1}) on a uniform grid.

    Returns the (n+1) x (n+1) matrix C with C[0,0] = dt,
    C[0, 1+j] = R(j dt) - R((j+1) dt) and C[1+j, 1+m] the lag-(j,m) integral
    covariance; the same matrix serves every step column by leading-submatrix
    restriction.
    """
    alpha, lam = spec.alpha, spec.lam
    C = np.empty((n + 1, n + 1))
    C[0, 0] = dt
    rv = resolvent(spec, dt * np.arange(n + 1))
    C[0, 1:] = rv[:-1] - rv[1:]
    C[1:, 0] = C[0, 1:]
    if alpha == 1.0:
        e = np.exp(-lam * dt * np.arange(n))
        C[1:, 1:] = np.outer(e, e) * (lam * (1.0 - math.exp(-2.0 * lam * dt)) / 2.0)
        return C
    C[1, 1] = _lag_entry_00(spec, dt, quad_nodes)
    if n >= 2:
        # lag-0 row against smooth lags: substitution w = u^alpha absorbs the
        # singularity and leaves the smooth factor analytic in w
        w0, wts0 = _gl_nodes(quad_nodes, 0.0, dt**alpha)
        u0 = w0 ** (1.0 / alpha)
        s0 = lam / alpha * _f_smooth(spec, u0) * wts0
        lags = dt * np.arange(1, n)
        F0 = resolvent_density(spec, lags[:, None] + u0[None, :])
        C[1, 2:] = F0 @ s0
        C[2:, 1] = C[1, 2:]
        # smooth block via a single Gram product
        u, wts = _gl_nodes(quad_nodes, 0.0, dt)
        F = resolvent_density(spec, lags[:, None] + u[None, :])
        C[2:, 2:] = (F * wts[None, :]) @ F.T
    return C


def integral_factor(spec: KernelSpec, dt: float, n: int, quad_nodes: int = _QUAD_NODES) -> np.ndarray:
    """Factor A with A A^T = lag_covariance_matrix, shape (n+1, q).

    At step l the joint draw (DW_l, I^l_l, ..., I^l_n) is A[:n-l+2] @ xi with
    xi ~ N(0, I_q).  For alpha = 1 the integral rows are exactly proportional
    (e^(-lam j dt)), so an exact rank-2 factor is built from the closed-form
    2 x 2 covariance of (DW, I^l_l); otherwise a truncated eigenfactor is used
    after a positive-semidefiniteness check.
    """
    lam = spec.lam
    if spec.alpha == 1.0:
        e = math.exp(-lam * dt)
        C2 = np.array(
            [[dt, 1.0 - e], [1.0 - e, lam * (1.0 - e * e) / 2.0]]
        )
        L = np.linalg.cholesky(C2)
        A = np.empty((n + 1, 2))
        A[0] = L[0]
        A[1:] = np.exp(-lam * dt * np.arange(n))[:, None] * L[1]
        return A
    C = lag_covariance_matrix(spec, dt, n, quad_nodes)
    evals, evecs = np.linalg.eigh(C)
    top = evals[-1]
    if evals[0] < -_PSD_TOL * max(top, 1.0):
        raise ValueError(
            f"integral covariance is not positive semidefinite "
            f"(min eigenvalue {evals[0]:.3e}); check kernel parameters and grid"
        )
    keep = evals > _EIG_CUT * top
    return evecs[:, keep] * np.sqrt(evals[keep])


def sample_v0(params: ModelParams, n_paths: int, seed: int) -> np.ndarray:
    """Initial variance draws V_0^i ~ N(x_inf_i, v0_var_i), floored at 1e-12.

    Returns shape (d, n_paths).
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    draws = params.x_inf[:, None] + np.sqrt(params.v0_var)[:, None] * rng.standard_normal(
        (params.d, n_paths)
    )
    return np.maximum(draws, _V0_FLOOR)


def simulate_variance(
    params: ModelParams,
    stab: list[StabilizerTable],
    grid: SimGrid,
    n_paths: int,
    seed: int,
    v0_mode: str = "gaussian",
    store_bperp: bool = True,
    store_integrals: bool = False,
    block_size: int = 25000,
    quad_nodes: int = _QUAD_NODES,
) -> PathBundle:
    """Simulate variance paths and correlated Brownian drivers.

    Parameters
    ----------
    params : ModelParams
    stab : list of StabilizerTable
        One per asset, covering [0, T].
    grid : SimGrid
    n_paths : int
    seed : int
        Master seed.  Streams are spawned per path block and, within a block,
        per asset plus one for V_0 and one for the orthogonal driver, so the
        result is bit-reproducible and blocks are independent.
    v0_mode : {"gaussian", "mean"}
        Draw V_0 from its stationary Gaussian, or pin it at E[V_0] = x_inf.
    store_bperp, store_integrals : bool
        Optional storage (memory: each field is d*n*n_paths doubles).
    block_size : int
        Paths per streamed block.

    Returns
    -------
    PathBundle
    """
    d, n, dt = params.d, grid.n_steps, grid.dt
    times = grid.times
    if len(stab) != d:
        raise ValueError(f"need one stabilizer table per asset ({d}), got {len(stab)}")
    if v0_mode not in ("gaussian", "mean"):
        raise ValueError(f"unknown v0_mode {v0_mode!r}")
    for i, tab in enumerate(stab):
        if tab.grid[-1] < params.T - 1e-12:
            raise ValueError(f"stabilizer table {i} does not cover [0, T]")

    factors = [integral_factor(params.kernel_spec(i), dt, n, quad_nodes) for i in range(d)]
    r_vals = [resolvent(params.kernel_spec(i), times) for i in range(d)]
    s_vals = [np.asarray(stab[i](times)) for i in range(d)]
    x_inf, v0_sd = params.x_inf, np.sqrt(params.v0_var)
    rho = params.rho
    rho_c = np.sqrt(np.maximum(1.0 - rho**2, 0.0))

    V = np.empty((d, n + 1, n_paths))
    dB = np.empty((d, n, n_paths))
    dBperp = np.empty((d, n, n_paths)) if store_bperp else None
    integrals = np.empty((d, n, n_paths)) if store_integrals else None
    v0_out = np.empty((d, n_paths))

    n_blocks = (n_paths + block_size - 1) // block_size
    block_seeds = np.random.SeedSequence(seed).spawn(n_blocks)
    sqrt_dt = math.sqrt(dt)

    for b, bss in enumerate(block_seeds):
        lo = b * block_size
        hi = min(lo + block_size, n_paths)
        P = hi - lo
        subs = bss.spawn(d + 2)
        v0_rng = np.random.default_rng(subs[d])
        bperp_rng = np.random.default_rng(subs[d + 1])

        if v0_mode == "gaussian":
            v0 = np.maximum(
                x_inf[:, None] + v0_sd[:, None] * v0_rng.standard_normal((d, P)), _V0_FLOOR
            )
        else:
            v0 = np.broadcast_to(x_inf[:, None], (d, P)).copy()
        v0_out[:, lo:hi] = v0

        for i in range(d):
            rng = np.random.default_rng(subs[i])
            A = factors[i]
            q = A.shape[1]
            scale = params.nu[i] / params.lam[i]
            h = x_inf[i] + (v0[i][None, :] - x_inf[i]) * r_vals[i][:, None]  # (n+1, P)
            acc = np.zeros((n, P))
            dW = np.empty((n, P))
            Vi = V[i, :, lo:hi]
            Vi[0] = v0[i]
            for ell in range(1, n + 1):
                xi = rng.standard_normal((q, P))
                G = A[: n - ell + 2] @ xi
                dW[ell - 1] = G[0]
                u = scale * s_vals[i][ell] * np.sqrt(Vi[ell - 1])
                acc[ell - 1 :] += u[None, :] * G[1:]
                Vi[ell] = np.maximum(h[ell] + acc[ell - 1], 0.0)
                if store_integrals:
                    integrals[i, ell - 1, lo:hi] = G[1]
            # B = rho W + rho_c What, Bperp = rho_c W - rho What: independent
            # Brownian pair with W = rho B + rho_c Bperp and Corr(B, W) = rho
            what = sqrt_dt * bperp_rng.standard_normal((n, P))
            dB[i, :, lo:hi] = rho[i] * dW + rho_c[i] * what
            if store_bperp:
                dBperp[i, :, lo:hi] = rho_c[i] * dW - rho[i] * what

    return PathBundle(
        seed=seed,
        times=times,
        V=V,
        dB=dB,
        dBperp=dBperp,
        integrals=integrals,
        v0=v0_out,
        params=params,
    )
