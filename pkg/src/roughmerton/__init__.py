"""Merton portfolio optimization under fake-stationary rough Heston volatility.

Modules
-------
kernels    : fractional kernels, Mittag-Leffler resolvents, resolvent densities
stabilizer : the variance-stabilizing diffusion modulation varsigma
simulate   : path simulation of the stabilized Volterra square-root process
riccati    : fractional-Adams solver for the Riccati-Volterra equations
strategy   : optimal investment rules and analytic value functions
verify     : Monte Carlo verification harness (value, optimality, martingale)
cli        : command-line front end
"""

__version__ = "0.1.0"
