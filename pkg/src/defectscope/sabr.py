"""Lognormal (beta = 1) SABR model.

The Hagan-style implied-vol expansion is the forward map of the calibration
problem; Monte Carlo simulation of the same dynamics serves as its
independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ExpansionBreakdownError, NuDegenerateError

DEFAULT_STEPS_PER_YEAR = 500


@dataclass(frozen=True)
class SabrParams:
    """Parameter triple theta = (alpha, nu, rho)."""

    alpha: float
    nu: float
    rho: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.nu)
                and math.isfinite(self.rho)):
            raise ValueError("SABR parameters must be finite")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if self.nu < 0.0:
            raise ValueError("nu must be non-negative")
        if abs(self.rho) > 1.0:
            raise ValueError("rho must lie in [-1, 1]")

    def gamma(self) -> float:
        """rho * alpha / nu; defined only for nu > 0."""
        if self.nu == 0.0:
            raise NuDegenerateError("gamma undefined for nu = 0")
        return self.rho * self.alpha / self.nu


@dataclass(frozen=True)
class McConfig:
    """Path count, step count and seed for the simulation oracles."""

    n_paths: int
    n_steps: int
    seed: int

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")


def default_steps(maturity: float) -> int:
    """Default Euler step count: 500 per year, at least 50."""
    return max(50, int(round(DEFAULT_STEPS_PER_YEAR * maturity)))


def hagan_implied_vol(params: SabrParams, forward: float, strike: float,
                      maturity: float) -> float:
    """Implied vol of the lognormal-SABR expansion at one strike.

    Raises ExpansionBreakdownError where the expansion returns a non-finite
    or non-positive value (extreme rho with large log-moneyness).
    """
    if forward <= 0.0 or strike <= 0.0:
        raise ValueError("forward and strike must be positive")
    if maturity <= 0.0:
        raise ValueError("maturity must be positive")
    vol = kernels.hagan_vol(params.alpha, params.nu, params.rho,
                            forward, strike, maturity)
    if math.isnan(vol):
        raise ExpansionBreakdownError(
            f"expansion breakdown at strike {strike} for {params}")
    return float(vol)


def hagan_smile(params: SabrParams, forward: float, strikes, maturity: float) -> np.ndarray:
    """Vectorized expansion over strikes; nan marks per-strike breakdown."""
    strikes = np.asarray(strikes, dtype=float)
    return kernels.hagan_vol_array(params.alpha, params.nu, params.rho,
                                   forward, strikes, maturity)


def sabr_simulate_forward(params: SabrParams, maturity: float, mc: McConfig,
                          forward: float = 1.0) -> np.ndarray:
    """Sample of terminal forwards.

    Log-Euler on log F with the exact lognormal update for the vol factor and
    correlation rho between the two Gaussian increments. Every returned
    forward is strictly positive.
    """
    if maturity <= 0.0:
        raise ValueError("maturity must be positive")
    if forward <= 0.0:
        raise ValueError("forward must be positive")
    return kernels.sabr_terminal_forwards(forward, params.alpha, params.nu,
                                          params.rho, maturity, mc.n_steps,
                                          mc.n_paths, mc.seed & (2**63 - 1))


def price_from_forwards(forwards: np.ndarray, strike: float, side,
                        discount: float) -> tuple[float, float]:
    """Discounted sample-mean payoff and its standard error."""
    from .pricing import OptionSide

    if side is OptionSide.CALL:
        pay = np.maximum(forwards - strike, 0.0)
    else:
        pay = np.maximum(strike - forwards, 0.0)
    n = pay.shape[0]
    mean = float(np.mean(pay))
    se = float(np.std(pay) / math.sqrt(n)) if n > 1 else 0.0
    return discount * mean, discount * se


def sabr_mc_price(params: SabrParams, forward: float, strike: float,
                  maturity: float, side, discount: float,
                  mc: McConfig) -> tuple[float, float]:
    """Monte Carlo option price and standard error under SABR dynamics."""
    terminal = forward * sabr_simulate_forward(params, maturity, mc)
    return price_from_forwards(terminal, strike, side, discount)
