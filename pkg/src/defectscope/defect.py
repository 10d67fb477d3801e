"""Martingale defect of the lognormal SABR forward.

Closed-form finite-horizon defect via an oscillatory Bessel integral, its
long-horizon limit (the bubble indicator), the large-T asymptotic expansion,
and an absorbing-SDE Monte Carlo oracle for all of the above. Also the
pricing identities that consume the defect: fundamental value, collateralized
call, and the explicit quadratic-elasticity expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, loggamma

from . import kernels
from .errors import NuDegenerateError, QuadratureError, TauTooSmallError
from .sabr import McConfig, SabrParams

# Below TAU_MIN the defect decays faster than any power of T while the
# oscillatory integral's cancellation noise floor ~ exp(pi^2/(8 tau)) * eps
# overwhelms it; 0.1 keeps that floor near 1e-10 and the truncation error of
# returning 0 below 1e-13.
TAU_MIN = 0.1

_MAX_SIMPSON_NODES = 2**21
_SERIES_KMAX = 120
_EXP_OVERFLOW = 709.0


@dataclass(frozen=True)
class DefectQuadConfig:
    """Controls for the defect quadratures."""

    s_max_floor: float = 10.0
    tail_log_cut: float = 40.0
    rel_tol: float = 1e-7
    bessel_t_step_factor: float = 0.1

    def __post_init__(self):
        if min(self.s_max_floor, self.tail_log_cut, self.rel_tol,
               self.bessel_t_step_factor) <= 0.0:
            raise ValueError("all quadrature controls must be positive")
        if self.rel_tol > 1e-6:
            raise ValueError("rel_tol must be <= 1e-6")


DEFAULT_QUAD = DefectQuadConfig()


@dataclass(frozen=True)
class DefectCurve:
    """Defect values on a maturity grid, each in [0, 1)."""

    maturities: tuple[float, ...]
    defects: tuple[float, ...]

    def __post_init__(self):
        if len(self.maturities) != len(self.defects):
            raise ValueError("maturities and defects must have equal length")
        for d in self.defects:
            if not 0.0 <= d < 1.0:
                raise ValueError("defects must lie in [0, 1)")


def _simpson(values: np.ndarray, width: float) -> float:
    n = values.shape[0] - 1
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((width / n) / 3.0 * np.dot(w, values))


def bessel_k_imag(s: float, gamma: float,
                  cfg: DefectQuadConfig = DEFAULT_QUAD) -> float:
    """Modified Bessel function of the second kind with imaginary order.

    Computed as the real cosine-kernel integral of exp(-gamma*cosh t) over
    [0, t_max] by composite Simpson quadrature, t_max chosen where the
    integrand underflows. Accuracy degrades for large s (the result is then
    exponentially small relative to the integrand); the defect quadrature
    uses a scaled series instead in that regime.
    """
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    if s < 0.0:
        raise ValueError("order parameter s must be non-negative")
    t_max = math.acosh(745.0 / gamma)
    h = min(cfg.bessel_t_step_factor, math.pi / (10.0 * max(s, 1.0)))
    n = int(math.ceil(t_max / h))
    if n % 2 == 1:
        n += 1
    t = np.linspace(0.0, t_max, n + 1)
    return _simpson(np.exp(-gamma * np.cosh(t)) * np.cos(s * t), t_max)


def _scaled_sinh_k_imag(s: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-pi s / 2) * sinh(pi s) * K_{is}(gamma), stable for large s.

    Uses sinh(pi s) K_{is}(x) = -pi Im I_{is}(x) and evaluates the Bessel-I
    series with log-gamma scaling so no term overflows or suffers the
    quadrature's cancellation.
    """
    lg_half = math.log(gamma / 2.0)
    total = np.zeros_like(s)
    scale = -math.pi * s / 2.0 + 1j * s * lg_half
    for k in range(_SERIES_KMAX):
        term = np.exp(2 * k * lg_half - gammaln(k + 1) + scale
                      - loggamma(k + 1 + 1j * s))
        total += term.imag
        if k > 5 and np.max(np.abs(term)) < 1e-20:
            break
    return -math.pi * total


def _ac_integral(gamma: float, tau: float, s_max: float, n: int) -> float:
    s = np.linspace(0.0, s_max, n + 1)
    f = (8.0 * s / (4.0 * s * s + 1.0)
         * _scaled_sinh_k_imag(s, gamma)
         * np.exp(np.pi * s / 2.0 - 0.5 * s * s * tau))
    return _simpson(f, s_max)


def a_c(gamma: float, tau: float, cfg: DefectQuadConfig = DEFAULT_QUAD) -> float:
    """Survival term of the finite-horizon defect, in [0, 1 - exp(-2 gamma)].

    Adaptive Simpson refinement of the truncated oscillatory integral;
    successive halvings must agree to cfg.rel_tol relative.
    """
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    if tau < TAU_MIN:
        raise TauTooSmallError(
            f"tau={tau} below {TAU_MIN}; use the small-T branch (defect ~ 0)")
    s_max = max(cfg.s_max_floor,
                math.pi / tau + math.sqrt(2.0 * cfg.tail_log_cut / tau))
    prefactor = math.sqrt(2.0 * gamma / math.pi**3) * math.exp(-(gamma + tau / 8.0))
    limit = 1.0 - math.exp(-2.0 * gamma)

    n = 512
    prev = None
    while n <= _MAX_SIMPSON_NODES:
        val = prefactor * _ac_integral(gamma, tau, s_max, n)
        if prev is not None and abs(val - prev) <= cfg.rel_tol * max(abs(val), 1e-280):
            return min(max(val, 0.0), limit)
        prev = val
        n *= 2
    raise QuadratureError(
        f"defect quadrature did not converge for gamma={gamma}, tau={tau}")


def indicator(params: SabrParams) -> float:
    """Long-horizon defect limit 1 - exp(-2 rho alpha / nu).

    Negative for rho < 0 and reported unclamped: any non-positive value
    means no bubble.
    """
    if params.nu == 0.0:
        raise NuDegenerateError("indicator undefined for nu = 0")
    w = -2.0 * params.rho * params.alpha / params.nu
    if w > _EXP_OVERFLOW:
        return -math.inf
    return 1.0 - math.exp(w)


def defect_finite_T(params: SabrParams, maturity: float,
                    cfg: DefectQuadConfig = DEFAULT_QUAD) -> float:
    """Normalized martingale defect over [0, maturity], clamped to [0, 1).

    Zero when rho <= 0 (no bubble) and on the rapid-decay small-T branch
    (nu^2 T below TAU_MIN).
    """
    if maturity <= 0.0:
        raise ValueError("maturity must be positive")
    if params.rho <= 0.0 or params.nu == 0.0:
        return 0.0
    tau = params.nu * params.nu * maturity
    if tau < TAU_MIN:
        return 0.0
    gamma = params.gamma()
    value = 1.0 - math.exp(-2.0 * gamma) - a_c(gamma, tau, cfg)
    return min(max(value, 0.0), math.nextafter(1.0, 0.0))


def defect_curve(params: SabrParams, maturities,
                 cfg: DefectQuadConfig = DEFAULT_QUAD) -> DefectCurve:
    """Defect evaluated on a maturity grid."""
    mats = tuple(float(t) for t in maturities)
    return DefectCurve(mats, tuple(defect_finite_T(params, t, cfg) for t in mats))


def defect_asymptotic_large_T(params: SabrParams, maturity: float) -> float:
    """Leading-order large-T expansion of the finite-horizon defect."""
    if params.rho <= 0.0:
        raise ValueError("large-T expansion requires rho > 0")
    if params.nu == 0.0:
        raise NuDegenerateError("expansion undefined for nu = 0")
    tau = params.nu * params.nu * maturity
    if tau < 10.0:
        raise TauTooSmallError(f"nu^2 T = {tau} < 10: expansion not applicable")
    gamma = params.gamma()
    correction = (8.0 * math.sqrt(gamma) / tau**1.5
                  * math.exp(-(gamma + tau / 8.0))
                  * bessel_k_imag(0.0, gamma))
    return 1.0 - math.exp(-2.0 * gamma) - correction


def absorption_mc_oracle(gamma: float, tau: float,
                         mc: McConfig) -> tuple[float, float]:
    """Hitting probability of 0 for dX = (X-1)dt - X dW, X_0 = 1/gamma.

    Euler scheme absorbing at the first non-positive value; returns the
    probability estimate and its binomial standard error.
    """
    if gamma <= 0.0 or tau <= 0.0:
        raise ValueError("gamma and tau must be positive")
    hits = kernels.absorption_hits(1.0 / gamma, tau, mc.n_steps, mc.n_paths,
                                   mc.seed & (2**63 - 1))
    p = hits / mc.n_paths
    se = math.sqrt(p * (1.0 - p) / mc.n_paths)
    return p, se


def absorption_default_steps() -> int:
    """Default Euler step count for the absorption oracle (dt = tau/5000)."""
    return 5000


def fundamental_value(params: SabrParams, spot: float, rate: float,
                      carry_yield: float, maturity: float,
                      cfg: DefectQuadConfig = DEFAULT_QUAD) -> float:
    """Discounted expected terminal asset value x e^{-qT} (1 - defect).

    The rate enters the forward and its discounting symmetrically and
    cancels; it is accepted for interface completeness.
    """
    del rate
    if spot <= 0.0:
        raise ValueError("spot must be positive")
    d = defect_finite_T(params, maturity, cfg)
    return spot * math.exp(-carry_yield * maturity) * (1.0 - d)


def collateralized_call_price(uncollateralized: float, spot: float,
                              carry_yield: float, maturity: float,
                              fundamental: float) -> float:
    """Super-replication price of a fully collateralized call.

    Adds the defect premium x e^{-qT} - m, restoring put-call parity.
    """
    cap = spot * math.exp(-carry_yield * maturity)
    if fundamental > cap * (1.0 + 1e-12):
        raise ValueError(
            f"fundamental {fundamental} exceeds discounted spot {cap}")
    return uncollateralized + (cap - fundamental)


def cev_expected_value(spot: float, maturity: float) -> float:
    """E[X_T] for dX = X^2 dW: x (1 - 2 Phi(-1/(x sqrt(T)))).

    Inverse-Bessel(3) closed form (exponent 1 on x inside Phi); strictly
    below x for every positive maturity.
    """
    if spot <= 0.0 or maturity <= 0.0:
        raise ValueError("spot and maturity must be positive")
    z = 1.0 / (spot * math.sqrt(maturity))
    phi = 0.5 * (1.0 + math.erf(-z / math.sqrt(2.0)))
    return spot * (1.0 - 2.0 * phi)
