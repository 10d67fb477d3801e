"""Bayesian calibration of the SABR smile and posterior summaries.

Flat-box prior, Gaussian likelihood truncated to the half-spread windows,
MAP search (Nelder-Mead over (rho, nu) with alpha eliminated through the
at-the-money vol-level root), adaptive single-component Metropolis-Hastings,
and Epanechnikov-kernel posterior summaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels
from .defect import indicator
from .errors import (
    DegenerateSampleError,
    EmptyChainError,
    InfeasibleStartError,
    InvalidInitError,
    NoPositiveRootError,
    NuDegenerateError,
)
from .market_data import VolObservation
from .sabr import SabrParams

NM_DIAMETER_TOL = 1e-6
NM_MAX_EVALS = 2000
PENALTY_WEIGHT = 1e6
ADAPT_BATCH = 50
ADAPT_TARGET = 0.44
SCALE_MIN = 1e-6
SCALE_MAX = 10.0
KDE_POINTS = 512


@dataclass(frozen=True)
class PosteriorSpec:
    """Observed smile, pricing context and observation-noise scale."""

    observations: tuple[VolObservation, ...]
    forward: float
    maturity: float
    obs_sigma: float = 1.0

    def __post_init__(self):
        if not self.observations:
            raise ValueError("observations must be non-empty")
        if self.obs_sigma <= 0.0:
            raise ValueError("obs_sigma must be positive")
        if self.forward <= 0.0 or self.maturity <= 0.0:
            raise ValueError("forward and maturity must be positive")

    @cached_property
    def strikes(self) -> np.ndarray:
        return np.array([o.strike for o in self.observations])

    @cached_property
    def mid_vols(self) -> np.ndarray:
        return np.array([o.mid_vol for o in self.observations])

    @cached_property
    def half_spreads(self) -> np.ndarray:
        return np.array([0.5 * o.spread_vol for o in self.observations])


@dataclass(frozen=True)
class McmcChain:
    """Sampled parameters and indicator path plus sampler state."""

    params: np.ndarray          # (J, 3) columns alpha, rho, nu
    indicator_values: np.ndarray  # (J,)
    accepted: np.ndarray        # (J, 3) int8 per-component accept flags
    acceptance_counts: np.ndarray  # (3,) totals
    proposal_scales: tuple[float, float, float]  # final adapted scales
    seed: int
    length: int

    @property
    def alphas(self) -> np.ndarray:
        return self.params[:, 0]

    @property
    def rhos(self) -> np.ndarray:
        return self.params[:, 1]

    @property
    def nus(self) -> np.ndarray:
        return self.params[:, 2]


@dataclass(frozen=True)
class PosteriorSummary:
    burn_in_fraction: float
    cond_means: dict[str, float]
    credible_intervals: dict[str, tuple[float, float]]
    prob_bubble: float
    kde_curves: dict[str, tuple[np.ndarray, np.ndarray] | None]

    def to_dict(self) -> dict:
        return {
            "burn_in_fraction": self.burn_in_fraction,
            "cond_means": dict(self.cond_means),
            "credible_intervals": {k: [v[0], v[1]]
                                   for k, v in self.credible_intervals.items()},
            "prob_bubble": self.prob_bubble,
        }


def log_posterior(params: SabrParams, spec: PosteriorSpec) -> float:
    """Log posterior density up to a constant; -inf outside the support."""
    return float(kernels.sabr_log_posterior(
        params.alpha, params.nu, params.rho, spec.mid_vols, spec.half_spreads,
        spec.strikes, spec.forward, spec.maturity, spec.obs_sigma))


def _log_posterior_raw(alpha: float, rho: float, nu: float,
                       spec: PosteriorSpec) -> float:
    return float(kernels.sabr_log_posterior(
        alpha, nu, rho, spec.mid_vols, spec.half_spreads, spec.strikes,
        spec.forward, spec.maturity, spec.obs_sigma))


def west_alpha_root(atm_vol: float, forward: float, maturity: float,
                    nu: float, rho: float) -> float:
    """Smallest positive root of the ATM vol-level polynomial in alpha.

    For the lognormal model the general cubic collapses to
    (rho nu T / 4) a^2 + (1 + (2 - 3 rho^2) nu^2 T / 24) a - atm_vol = 0.
    """
    del forward  # enters only for elasticity < 1
    if atm_vol <= 0.0:
        raise ValueError("atm_vol must be positive")
    a = rho * nu * maturity / 4.0
    b = 1.0 + (2.0 - 3.0 * rho * rho) * nu * nu * maturity / 24.0
    c = atm_vol
    if a == 0.0:
        if b <= 0.0:
            raise NoPositiveRootError("degenerate linear equation has no positive root")
        return c / b
    roots = np.roots([a, b, -c])
    real = [float(r.real) for r in roots if abs(r.imag) < 1e-12 and r.real > 0.0]
    if not real:
        raise NoPositiveRootError(
            f"no positive alpha solves the ATM identity (nu={nu}, rho={rho})")
    return min(real)


def _skew_sign(spec: PosteriorSpec) -> float:
    """Sign of the mid-vol slope in log-moneyness (cheap rho heuristic)."""
    x = np.log(spec.strikes / spec.forward)
    y = spec.mid_vols
    if x.size < 2 or np.ptp(x) == 0.0:
        return 0.0
    slope = np.polyfit(x, y, 1)[0]
    return math.copysign(1.0, slope) if slope != 0.0 else 0.0


def _penalized_objective(rho: float, nu: float, spec: PosteriorSpec,
                         atm_vol: float) -> float:
    """Negative log posterior with the spread windows softened to a penalty."""
    if abs(rho) >= 1.0 or nu < 0.0:
        return math.inf
    try:
        alpha = west_alpha_root(atm_vol, spec.forward, spec.maturity, nu, rho)
    except NoPositiveRootError:
        return math.inf
    vols = kernels.hagan_vol_array(alpha, nu, rho, spec.forward, spec.strikes,
                                   spec.maturity)
    if np.isnan(vols).any():
        return math.inf
    resid = spec.mid_vols - vols
    gauss = 0.5 * float(np.sum(resid * resid)) / (spec.obs_sigma ** 2)
    excess = np.maximum(np.abs(resid) - spec.half_spreads, 0.0)
    return gauss + PENALTY_WEIGHT * float(np.sum(excess * excess))


def _nelder_mead(objective, x0: np.ndarray, step: float = 0.1):
    """Minimize with standard coefficients (1, 2, 1/2, 1/2).

    Stops when the simplex diameter drops below NM_DIAMETER_TOL or after
    NM_MAX_EVALS objective evaluations. Returns (x_best, f_best, n_evals).
    """
    n = x0.size
    sim = [x0.astype(float)]
    for i in range(n):
        v = x0.copy().astype(float)
        v[i] += step
        sim.append(v)
    evals = 0

    def call(x):
        nonlocal evals
        evals += 1
        return objective(*x)

    fs = [call(v) for v in sim]
    if all(math.isinf(f) for f in fs):
        raise InfeasibleStartError(
            "no initial simplex vertex has finite penalized objective")

    while evals < NM_MAX_EVALS:
        order = np.argsort(fs, kind="stable")
        sim = [sim[i] for i in order]
        fs = [fs[i] for i in order]
        diameter = max(float(np.max(np.abs(sim[i] - sim[0])))
                       for i in range(1, n + 1))
        if diameter < NM_DIAMETER_TOL:
            break
        centroid = np.mean(sim[:-1], axis=0)
        xr = centroid + (centroid - sim[-1])
        fr = call(xr)
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - sim[-1])
            fe = call(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
        elif fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
        else:
            xc = centroid + 0.5 * (sim[-1] - centroid)
            fc = call(xc)
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
                    fs[i] = call(sim[i])
    i_best = int(np.argmin(fs))
    return sim[i_best], fs[i_best], evals


def nelder_mead_map(spec: PosteriorSpec, rho0: float | None = None,
                    nu0: float | None = None) -> SabrParams:
    """MAP point via Nelder-Mead over (rho, nu), alpha eliminated at the ATM
    observation. Raises InfeasibleStartError when no point with positive
    posterior density is reachable (e.g. zero spreads off the model manifold).
    """
    atm_idx = int(np.argmin(np.abs(spec.strikes - spec.forward)))
    atm_vol = float(spec.mid_vols[atm_idx])
    if rho0 is None:
        rho0 = _skew_sign(spec) * 0.5
    if nu0 is None:
        nu0 = 0.5
    rho0 = min(max(rho0, -0.95), 0.95)
    nu0 = max(nu0, 1e-3)

    x, _, _ = _nelder_mead(
        lambda rho, nu: _penalized_objective(rho, nu, spec, atm_vol),
        np.array([rho0, nu0]))
    rho, nu = float(x[0]), float(max(x[1], 0.0))
    alpha = west_alpha_root(atm_vol, spec.forward, spec.maturity, nu, rho)
    theta = SabrParams(alpha=alpha, nu=nu, rho=rho)
    if log_posterior(theta, spec) == -math.inf:
        raise InfeasibleStartError(
            "optimum violates a half-spread window: no feasible point found")
    return theta


def _indicator_limit(alpha: float, rho: float, nu: float) -> float:
    """indicator() extended by its nu -> 0 limit so chains cannot crash."""
    if nu > 0.0:
        return indicator(SabrParams(alpha=alpha, nu=nu, rho=rho))
    if rho > 0.0:
        return 1.0
    if rho < 0.0:
        return -math.inf
    return 0.0


def adaptive_mcmc_run(spec: PosteriorSpec, init: SabrParams, J: int,
                      seed: int, adapt: bool = True) -> McmcChain:
    """Adaptive single-component Metropolis-Hastings, J iterations.

    Component order alpha, rho, nu with symmetric Gaussian proposals; the
    indicator value is recorded at every iteration. Fully reproducible from
    the seed (all randomness is pre-drawn with numpy's default generator).
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    if log_posterior(init, spec) == -math.inf:
        raise InvalidInitError("initial state has zero posterior density")

    rng = np.random.default_rng(seed)
    normals = rng.standard_normal((J, 3))
    uniforms = rng.random((J, 3))
    s_init = np.array([0.1 * init.alpha, 0.1, 0.1 * max(init.nu, 0.1)])

    params, accepted, acc_tot, scales = kernels.mcmc_chain(
        spec.mid_vols, spec.half_spreads, spec.strikes, spec.forward,
        spec.maturity, spec.obs_sigma, init.alpha, init.rho, init.nu,
        normals, uniforms, s_init, adapt, ADAPT_BATCH, ADAPT_TARGET,
        SCALE_MIN, SCALE_MAX)

    ind = np.array([_indicator_limit(params[j, 0], params[j, 1], params[j, 2])
                    for j in range(J)])
    return McmcChain(params=params, indicator_values=ind, accepted=accepted,
                     acceptance_counts=acc_tot,
                     proposal_scales=(float(scales[0]), float(scales[1]),
                                      float(scales[2])),
                     seed=seed, length=J)


def kde_epanechnikov(samples, bandwidth_override: float | None = None,
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Epanechnikov-kernel density on 512 points spanning the sample range
    padded by one bandwidth; h = (max - min) / 15 unless overridden."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2 or np.min(x) == np.max(x):
        raise DegenerateSampleError("need at least two distinct samples")
    lo, hi = float(np.min(x)), float(np.max(x))
    h = (hi - lo) / 15.0 if bandwidth_override is None else float(bandwidth_override)
    if h <= 0.0:
        raise DegenerateSampleError("bandwidth must be positive")
    grid = np.linspace(lo - h, hi + h, KDE_POINTS)
    dens = np.empty(KDE_POINTS)
    inv_nh = 1.0 / (x.size * h)
    for i, g in enumerate(grid):
        u = (g - x) / h
        m = np.abs(u) <= 1.0
        dens[i] = inv_nh * 0.75 * float(np.sum(1.0 - u[m] * u[m]))
    return grid, dens


def cumulative_averages(values: np.ndarray) -> np.ndarray:
    """Running means, the standard mixing diagnostic series."""
    v = np.asarray(values, dtype=float)
    return np.cumsum(v) / np.arange(1, v.size + 1)


def summarize_posterior(chain: McmcChain,
                        burn_in_fraction: float = 0.25) -> PosteriorSummary:
    """Burn-in-trimmed means, central 95% intervals, P(A > 0) and KDEs."""
    if not 0.0 <= burn_in_fraction < 1.0:
        raise ValueError("burn_in_fraction must lie in [0, 1)")
    n_burn = int(chain.length * burn_in_fraction)
    kept = {
        "alpha": chain.alphas[n_burn:],
        "rho": chain.rhos[n_burn:],
        "nu": chain.nus[n_burn:],
        "A": chain.indicator_values[n_burn:],
    }
    if kept["alpha"].size == 0:
        raise EmptyChainError("no samples remain after burn-in")

    means = {k: float(np.mean(v)) for k, v in kept.items()}
    intervals = {k: (float(np.quantile(v, 0.025)), float(np.quantile(v, 0.975)))
                 for k, v in kept.items()}
    prob_bubble = float(np.mean(kept["A"] > 0.0))
    curves: dict[str, tuple[np.ndarray, np.ndarray] | None] = {}
    for k, v in kept.items():
        try:
            curves[k] = kde_epanechnikov(v)
        except DegenerateSampleError:
            curves[k] = None
    return PosteriorSummary(burn_in_fraction=burn_in_fraction,
                            cond_means=means, credible_intervals=intervals,
                            prob_bubble=prob_bubble, kde_curves=curves)
