"""Deterministic option-pricing primitives.

Black (forward) European pricing with bisection implied vols, and an
American-exercise Crank-Nicolson finite-difference pricer with projected SOR
for the early-exercise constraint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .errors import NoConvergenceError, OutOfBoundsError

VOL_BRACKET_LO = 1e-6
VOL_BRACKET_HI = 5.0
MAX_BISECT_ITER = 200


class OptionSide(Enum):
    CALL = "call"
    PUT = "put"


@dataclass(frozen=True)
class FdGrid:
    """Finite-difference discretization and PSOR controls."""

    n_space: int = 400
    n_time: int = 200
    x_max_mult: float = 4.0
    omega: float = 1.2
    psor_tol: float = 1e-8
    psor_max_iter: int = 10_000

    def __post_init__(self):
        if self.n_space < 3:
            raise ValueError("n_space must be >= 3")
        if self.n_time < 1:
            raise ValueError("n_time must be >= 1")
        if not 1.0 < self.omega < 2.0:
            raise ValueError("omega must lie in (1, 2)")
        if self.psor_tol <= 0.0:
            raise ValueError("psor_tol must be positive")
        if self.x_max_mult <= 1.0:
            raise ValueError("x_max_mult must exceed 1")


def _norm_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _check_finite(**kwargs):
    for name, value in kwargs.items():
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value!r}")


def black_price(forward: float, strike: float, maturity: float, vol: float,
                discount: float, side: OptionSide) -> float:
    """Discounted lognormal-forward (Black-76) price of a European option."""
    _check_finite(forward=forward, strike=strike, maturity=maturity, vol=vol,
                  discount=discount)
    if forward <= 0.0:
        raise ValueError("forward must be positive")
    if strike < 0.0:
        raise ValueError("strike must be non-negative")
    if maturity <= 0.0:
        raise ValueError("maturity must be positive")
    if vol < 0.0:
        raise ValueError("vol must be non-negative")
    if not 0.0 < discount <= 1.0:
        raise ValueError("discount must lie in (0, 1]")

    if strike == 0.0:
        intrinsic = forward if side is OptionSide.CALL else 0.0
        return discount * intrinsic
    if vol == 0.0:
        if side is OptionSide.CALL:
            return discount * max(forward - strike, 0.0)
        return discount * max(strike - forward, 0.0)

    sd = vol * math.sqrt(maturity)
    d1 = (math.log(forward / strike) + 0.5 * sd * sd) / sd
    d2 = d1 - sd
    if side is OptionSide.CALL:
        return discount * (forward * _norm_cdf(d1) - strike * _norm_cdf(d2))
    return discount * (strike * _norm_cdf(-d2) - forward * _norm_cdf(-d1))


def _black_bounds(forward, strike, discount, side):
    if side is OptionSide.CALL:
        return discount * max(forward - strike, 0.0), discount * forward
    return discount * max(strike - forward, 0.0), discount * strike


def implied_vol(price: float, forward: float, strike: float, maturity: float,
                discount: float, side: OptionSide) -> float:
    """Invert black_price by bisection to |price error| <= 1e-10 * df * F."""
    _check_finite(price=price, forward=forward, strike=strike,
                  maturity=maturity, discount=discount)
    lower, upper = _black_bounds(forward, strike, discount, side)
    if not lower < price < upper:
        raise OutOfBoundsError(
            f"price {price} outside no-arbitrage range ({lower}, {upper})")

    tol = 1e-10 * discount * forward
    lo, hi = VOL_BRACKET_LO, VOL_BRACKET_HI
    while black_price(forward, strike, maturity, hi, discount, side) < price:
        hi *= 2.0
        if hi > 1e6:
            raise NoConvergenceError("implied vol bracket could not be widened")
    for _ in range(MAX_BISECT_ITER):
        mid = 0.5 * (lo + hi)
        pm = black_price(forward, strike, maturity, mid, discount, side)
        if abs(pm - price) <= tol:
            return mid
        if pm < price:
            lo = mid
        else:
            hi = mid
    raise NoConvergenceError("implied vol bisection did not meet tolerance")


def _fd_solve(spot, strike, maturity, vol, rate, carry_yield, side, grid):
    """Run the CN+PSOR march; returns (nodes, values, payoff)."""
    s_max = grid.x_max_mult * max(spot, strike)
    n = grid.n_space
    s = np.linspace(0.0, s_max, n)
    h = s[1] - s[0]
    dt = maturity / grid.n_time

    if side is OptionSide.CALL:
        payoff = np.maximum(s - strike, 0.0)
    else:
        payoff = np.maximum(strike - s, 0.0)

    a = 0.5 * vol * vol * s * s / (h * h)
    b = 0.5 * (rate - carry_yield) * s / h
    lo = -0.5 * dt * (a - b)
    di = 1.0 + 0.5 * dt * (2.0 * a + rate)
    up = -0.5 * dt * (a + b)
    ex_lo = 0.5 * dt * (a - b)
    ex_di = 1.0 - 0.5 * dt * (2.0 * a + rate)
    ex_up = 0.5 * dt * (a + b)

    # Dirichlet values at each time level (tau = time to maturity).
    tau = dt * np.arange(grid.n_time + 1)
    if side is OptionSide.CALL:
        bc_low = np.zeros_like(tau)
        bc_high = s_max * np.exp(-carry_yield * tau) - strike * np.exp(-rate * tau)
    else:
        bc_low = strike * np.exp(-rate * tau)
        bc_high = np.zeros_like(tau)

    v = payoff.copy()
    status = kernels.cn_psor_march(v, payoff, lo, di, up, ex_lo, ex_di, ex_up,
                                   bc_low, bc_high, grid.omega, grid.psor_tol,
                                   grid.psor_max_iter)
    if status < 0:
        raise NoConvergenceError(
            f"projected SOR exceeded {grid.psor_max_iter} iterations")
    return s, v, payoff


def _quadratic_interp(s, v, x):
    """Three-point Lagrange interpolation around the node nearest x."""
    n = s.shape[0]
    i = int(np.searchsorted(s, x))
    i = min(max(i, 1), n - 2)
    x0, x1, x2 = s[i - 1], s[i], s[i + 1]
    y0, y1, y2 = v[i - 1], v[i], v[i + 1]
    l0 = (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
    l1 = (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2))
    l2 = (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1))
    return y0 * l0 + y1 * l1 + y2 * l2


def american_fd_price(spot: float, strike: float, maturity: float, vol: float,
                      rate: float, carry_yield: float, side: OptionSide,
                      grid: FdGrid = FdGrid()) -> float:
    """American option price on a uniform spot grid (CN + projected SOR)."""
    _check_finite(spot=spot, strike=strike, maturity=maturity, vol=vol,
                  rate=rate, carry_yield=carry_yield)
    if spot <= 0.0 or strike <= 0.0:
        raise ValueError("spot and strike must be positive")
    if vol <= 0.0:
        raise ValueError("vol must be positive")
    if maturity <= 0.0:
        raise ValueError("maturity must be positive")

    s, v, _ = _fd_solve(spot, strike, maturity, vol, rate, carry_yield, side, grid)
    if spot >= s[-1]:
        value = v[-1]
    else:
        value = _quadratic_interp(s, v, spot)
    intrinsic = max(spot - strike, 0.0) if side is OptionSide.CALL else max(strike - spot, 0.0)
    return max(float(value), intrinsic)


def american_implied_vol(price: float, spot: float, strike: float,
                         maturity: float, rate: float, carry_yield: float,
                         side: OptionSide, grid: FdGrid = FdGrid()) -> float:
    """Bisection on american_fd_price to |price error| <= max(1e-6, 1e-4*price)."""
    _check_finite(price=price, spot=spot, strike=strike, maturity=maturity,
                  rate=rate, carry_yield=carry_yield)
    lo, hi = VOL_BRACKET_LO, VOL_BRACKET_HI
    p_lo = american_fd_price(spot, strike, maturity, lo, rate, carry_yield, side, grid)
    p_hi = american_fd_price(spot, strike, maturity, hi, rate, carry_yield, side, grid)
    if not p_lo <= price <= p_hi:
        raise OutOfBoundsError(
            f"price {price} not attainable for vol in [{lo}, {hi}] "
            f"(range [{p_lo}, {p_hi}])")
    tol = max(1e-6, 1e-4 * price)
    for _ in range(MAX_BISECT_ITER):
        mid = 0.5 * (lo + hi)
        pm = american_fd_price(spot, strike, maturity, mid, rate, carry_yield, side, grid)
        if abs(pm - price) <= tol:
            return mid
        if pm < price:
            lo = mid
        else:
            hi = mid
    raise NoConvergenceError("American implied vol bisection did not converge")
