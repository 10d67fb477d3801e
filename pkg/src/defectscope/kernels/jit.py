"""Numba-compiled hot loops.

Mirror of :mod:`defectscope.kernels.plain`; see that module for the reference
semantics. Compiled lazily on first call; keep signatures numpy-scalar only.

Path simulations draw from per-path splitmix64 streams (counter-based, so
results are independent of thread scheduling) and parallelize over paths.
"""

import numpy as np
from numba import njit, prange

_SM64_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM64_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_M2 = np.uint64(0x94D049BB133111EB)
_STREAM_STEP = np.uint64(0xD1B54A32D192ED03)
_TWO_PI = 6.283185307179586
_INV_2_53 = 1.0 / 9007199254740992.0


@njit(inline="always")
def _sm64_next(state):
    state = state + _SM64_GAMMA
    z = state
    z = (z ^ (z >> np.uint64(30))) * _SM64_M1
    z = (z ^ (z >> np.uint64(27))) * _SM64_M2
    return state, z ^ (z >> np.uint64(31))


@njit(inline="always")
def _stream_state(seed, path):
    # scramble (seed, path) twice so per-path streams are decorrelated
    s = np.uint64(seed) + np.uint64(path) * _STREAM_STEP
    s, _ = _sm64_next(s)
    s, z = _sm64_next(s)
    return s ^ z


@njit(inline="always")
def _u01(z):
    # top 53 bits mapped to (0, 1]; never 0 so log() is safe
    return (np.float64(z >> np.uint64(11)) + 1.0) * _INV_2_53


@njit(inline="always")
def _normal_pair(state):
    state, z1 = _sm64_next(state)
    state, z2 = _sm64_next(state)
    r = np.sqrt(-2.0 * np.log(_u01(z1)))
    t = _TWO_PI * _u01(z2)
    return state, r * np.cos(t), r * np.sin(t)


@njit(cache=True)
def hagan_vol(alpha, nu, rho, forward, strike, maturity):
    """Lognormal-SABR implied vol; returns nan on expansion breakdown."""
    if alpha <= 0.0 or nu < 0.0 or abs(rho) > 1.0:
        return np.nan
    if forward <= 0.0 or strike <= 0.0 or maturity <= 0.0:
        return np.nan
    corr = 1.0 + (rho * nu * alpha / 4.0 + (2.0 - 3.0 * rho * rho) * nu * nu / 24.0) * maturity
    z = (nu / alpha) * np.log(forward / strike)
    if abs(z) < 1e-6:
        ratio = 1.0 - 0.5 * rho * z + (2.0 - 3.0 * rho * rho) * z * z / 12.0
    else:
        disc = 1.0 - 2.0 * rho * z + z * z
        if disc < 0.0:
            return np.nan
        num = np.sqrt(disc) + z - rho
        den = 1.0 - rho
        if num <= 0.0 or den <= 0.0:
            return np.nan
        chi = np.log(num / den)
        if chi == 0.0:
            return np.nan
        ratio = z / chi
    vol = alpha * ratio * corr
    if not np.isfinite(vol) or vol <= 0.0:
        return np.nan
    return vol


@njit(cache=True)
def hagan_vol_array(alpha, nu, rho, forward, strikes, maturity):
    out = np.empty(strikes.shape[0])
    for i in range(strikes.shape[0]):
        out[i] = hagan_vol(alpha, nu, rho, forward, strikes[i], maturity)
    return out


@njit(cache=True)
def sabr_log_posterior(alpha, nu, rho, y, ba_half, strikes, forward, maturity, obs_sigma):
    """Flat-prior log posterior: -inf outside the prior box, outside any
    half-spread window, or on expansion breakdown; Gaussian misfit otherwise."""
    if alpha <= 0.0 or nu < 0.0 or abs(rho) > 1.0:
        return -np.inf
    ss = 0.0
    for i in range(strikes.shape[0]):
        f = hagan_vol(alpha, nu, rho, forward, strikes[i], maturity)
        if np.isnan(f):
            return -np.inf
        r = y[i] - f
        if abs(r) > ba_half[i]:
            return -np.inf
        ss += r * r
    return -0.5 * ss / (obs_sigma * obs_sigma)


@njit(cache=True)
def cn_psor_march(v, payoff, lo, di, up, ex_lo, ex_di, ex_up, bc_low, bc_high,
                  omega, tol, max_iter):
    """Crank-Nicolson time march with projected SOR at every step.

    ``v`` is updated in place from the payoff layer to the valuation layer.
    Returns the worst per-step PSOR iteration count, or -1 on iteration
    exhaustion.
    """
    n = v.shape[0]
    n_time = bc_low.shape[0] - 1
    rhs = np.empty(n)
    worst = 0
    for m in range(1, n_time + 1):
        for i in range(1, n - 1):
            rhs[i] = ex_lo[i] * v[i - 1] + ex_di[i] * v[i] + ex_up[i] * v[i + 1]
        b0 = bc_low[m]
        if payoff[0] > b0:
            b0 = payoff[0]
        bn = bc_high[m]
        if payoff[n - 1] > bn:
            bn = payoff[n - 1]
        v[0] = b0
        v[n - 1] = bn
        it = 0
        while True:
            it += 1
            diff = 0.0
            for i in range(1, n - 1):
                gs = (rhs[i] - lo[i] * v[i - 1] - up[i] * v[i + 1]) / di[i]
                nv = v[i] + omega * (gs - v[i])
                if nv < payoff[i]:
                    nv = payoff[i]
                d = abs(nv - v[i])
                if d > diff:
                    diff = d
                v[i] = nv
            if diff <= tol:
                break
            if it >= max_iter:
                return -1
        if it > worst:
            worst = it
    return worst


@njit(cache=True)
def mcmc_chain(y, ba_half, strikes, forward, maturity, obs_sigma,
               alpha0, rho0, nu0, normals, uniforms, s_init,
               adapt, batch_size, target_rate, s_min, s_max):
    """Single-component Metropolis-Hastings over (alpha, rho, nu).

    Proposal scales adapt per component in batches of ``batch_size``:
    log-scale +/- min(0.01, batch^-1/2) toward ``target_rate`` acceptance,
    clamped to [s_min, s_max]. Consumes pre-drawn normals/uniforms so the
    chain is a pure function of its inputs.
    """
    J = normals.shape[0]
    out = np.empty((J, 3))
    accepted = np.zeros((J, 3), dtype=np.int8)
    acc_tot = np.zeros(3, dtype=np.int64)
    log_s = np.empty(3)
    for c in range(3):
        log_s[c] = np.log(s_init[c])
    log_s_min = np.log(s_min)
    log_s_max = np.log(s_max)
    batch_acc = np.zeros(3)
    cur = np.empty(3)
    cur[0] = alpha0
    cur[1] = rho0
    cur[2] = nu0
    lp = sabr_log_posterior(cur[0], cur[2], cur[1], y, ba_half, strikes,
                            forward, maturity, obs_sigma)
    for j in range(J):
        for c in range(3):
            prop0 = cur[0]
            prop1 = cur[1]
            prop2 = cur[2]
            step = np.exp(log_s[c]) * normals[j, c]
            if c == 0:
                prop0 = cur[0] + step
            elif c == 1:
                prop1 = cur[1] + step
            else:
                prop2 = cur[2] + step
            lpp = sabr_log_posterior(prop0, prop2, prop1, y, ba_half, strikes,
                                     forward, maturity, obs_sigma)
            ok = False
            if lpp > -np.inf:
                d = lpp - lp
                if d >= 0.0:
                    ok = True
                else:
                    ok = uniforms[j, c] < np.exp(d)
            if ok:
                cur[0] = prop0
                cur[1] = prop1
                cur[2] = prop2
                lp = lpp
                accepted[j, c] = 1
                acc_tot[c] += 1
                batch_acc[c] += 1.0
        if adapt and (j + 1) % batch_size == 0:
            b = (j + 1) // batch_size
            delta = min(0.01, 1.0 / np.sqrt(b))
            for c in range(3):
                if batch_acc[c] / batch_size > target_rate:
                    log_s[c] += delta
                else:
                    log_s[c] -= delta
                if log_s[c] < log_s_min:
                    log_s[c] = log_s_min
                elif log_s[c] > log_s_max:
                    log_s[c] = log_s_max
                batch_acc[c] = 0.0
        out[j, 0] = cur[0]
        out[j, 1] = cur[1]
        out[j, 2] = cur[2]
    return out, accepted, acc_tot, np.exp(log_s)


@njit(cache=True, parallel=True)
def absorption_hits(x0, tau, n_steps, n_paths, seed):
    """Count paths of dX = (X-1)dt - X dW absorbed at 0 before tau."""
    dt = tau / n_steps
    sq = np.sqrt(dt)
    hits = 0
    for p in prange(n_paths):
        state = _stream_state(seed, p)
        x = x0
        spare = 0.0
        have_spare = False
        for _ in range(n_steps):
            if have_spare:
                z = spare
                have_spare = False
            else:
                state, z, spare = _normal_pair(state)
                have_spare = True
            x = x + (x - 1.0) * dt - x * sq * z
            if x <= 0.0:
                hits += 1
                break
    return hits


@njit(cache=True, parallel=True)
def sabr_terminal_forwards(f0, alpha, nu, rho, maturity, n_steps, n_paths, seed):
    """Terminal forwards under log-Euler F dynamics with exact vol updates."""
    dt = maturity / n_steps
    sq = np.sqrt(dt)
    srho = np.sqrt(1.0 - rho * rho)
    vol_drift = -0.5 * nu * nu * dt
    lf0 = np.log(f0)
    out = np.empty(n_paths)
    for p in prange(n_paths):
        state = _stream_state(seed, p)
        lf = lf0
        a = alpha
        for _ in range(n_steps):
            state, z1, z2 = _normal_pair(state)
            zf = rho * z2 + srho * z1
            lf += -0.5 * a * a * dt + a * sq * zf
            a *= np.exp(vol_drift + nu * sq * z2)
        out[p] = np.exp(lf)
    return out
