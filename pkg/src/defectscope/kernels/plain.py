"""Pure numpy/python reference implementations of the hot kernels.

This is the fallback backend (``DEFECTSCOPE_NO_NUMBA=1`` or numba absent) and
the readable specification of what the jit kernels compute. Sequential loops
that numba executes per element are vectorized across paths/nodes here; the
algorithms are identical, but random-number streams and floating-point
summation order may differ from the jit backend at the last-ulp level.
"""

import math

import numpy as np


def hagan_vol(alpha, nu, rho, forward, strike, maturity):
    """Lognormal-SABR implied vol; returns nan on expansion breakdown."""
    if alpha <= 0.0 or nu < 0.0 or abs(rho) > 1.0:
        return math.nan
    if forward <= 0.0 or strike <= 0.0 or maturity <= 0.0:
        return math.nan
    corr = 1.0 + (rho * nu * alpha / 4.0 + (2.0 - 3.0 * rho * rho) * nu * nu / 24.0) * maturity
    z = (nu / alpha) * math.log(forward / strike)
    if abs(z) < 1e-6:
        ratio = 1.0 - 0.5 * rho * z + (2.0 - 3.0 * rho * rho) * z * z / 12.0
    else:
        disc = 1.0 - 2.0 * rho * z + z * z
        if disc < 0.0:
            return math.nan
        num = math.sqrt(disc) + z - rho
        den = 1.0 - rho
        if num <= 0.0 or den <= 0.0:
            return math.nan
        chi = math.log(num / den)
        if chi == 0.0:
            return math.nan
        ratio = z / chi
    vol = alpha * ratio * corr
    if not math.isfinite(vol) or vol <= 0.0:
        return math.nan
    return vol


def hagan_vol_array(alpha, nu, rho, forward, strikes, maturity):
    strikes = np.asarray(strikes, dtype=float)
    return np.array([hagan_vol(alpha, nu, rho, forward, k, maturity) for k in strikes])


def sabr_log_posterior(alpha, nu, rho, y, ba_half, strikes, forward, maturity, obs_sigma):
    if alpha <= 0.0 or nu < 0.0 or abs(rho) > 1.0:
        return -math.inf
    ss = 0.0
    for i in range(len(strikes)):
        f = hagan_vol(alpha, nu, rho, forward, strikes[i], maturity)
        if math.isnan(f):
            return -math.inf
        r = y[i] - f
        if abs(r) > ba_half[i]:
            return -math.inf
        ss += r * r
    return -0.5 * ss / (obs_sigma * obs_sigma)


def cn_psor_march(v, payoff, lo, di, up, ex_lo, ex_di, ex_up, bc_low, bc_high,
                  omega, tol, max_iter):
    """Crank-Nicolson march with projected SOR (red-black ordering).

    Red-black sweeps vectorize under numpy and converge to the same
    complementarity solution as the lexicographic sweeps of the jit backend
    (both are projected SOR; iterates differ below ``tol``).
    """
    n = v.shape[0]
    n_time = bc_low.shape[0] - 1
    idx = np.arange(1, n - 1)
    groups = (idx[idx % 2 == 1], idx[idx % 2 == 0])
    worst = 0
    for m in range(1, n_time + 1):
        rhs = np.empty(n)
        rhs[1:-1] = ex_lo[1:-1] * v[:-2] + ex_di[1:-1] * v[1:-1] + ex_up[1:-1] * v[2:]
        v[0] = max(bc_low[m], payoff[0])
        v[-1] = max(bc_high[m], payoff[-1])
        it = 0
        while True:
            it += 1
            diff = 0.0
            for g in groups:
                gs = (rhs[g] - lo[g] * v[g - 1] - up[g] * v[g + 1]) / di[g]
                nv = np.maximum(payoff[g], v[g] + omega * (gs - v[g]))
                if g.size:
                    diff = max(diff, float(np.max(np.abs(nv - v[g]))))
                v[g] = nv
            if diff <= tol:
                break
            if it >= max_iter:
                return -1
        worst = max(worst, it)
    return worst


def mcmc_chain(y, ba_half, strikes, forward, maturity, obs_sigma,
               alpha0, rho0, nu0, normals, uniforms, s_init,
               adapt, batch_size, target_rate, s_min, s_max):
    """See the jit backend for the algorithm; identical given the same
    pre-drawn normals/uniforms (up to floating-point ordering)."""
    J = normals.shape[0]
    out = np.empty((J, 3))
    accepted = np.zeros((J, 3), dtype=np.int8)
    acc_tot = np.zeros(3, dtype=np.int64)
    log_s = np.log(np.asarray(s_init, dtype=float)).copy()
    log_s_min = math.log(s_min)
    log_s_max = math.log(s_max)
    batch_acc = np.zeros(3)
    cur = [alpha0, rho0, nu0]
    lp = sabr_log_posterior(cur[0], cur[2], cur[1], y, ba_half, strikes,
                            forward, maturity, obs_sigma)
    for j in range(J):
        for c in range(3):
            prop = cur.copy()
            prop[c] = cur[c] + math.exp(log_s[c]) * normals[j, c]
            lpp = sabr_log_posterior(prop[0], prop[2], prop[1], y, ba_half,
                                     strikes, forward, maturity, obs_sigma)
            ok = False
            if lpp > -math.inf:
                d = lpp - lp
                ok = d >= 0.0 or uniforms[j, c] < math.exp(d)
            if ok:
                cur = prop
                lp = lpp
                accepted[j, c] = 1
                acc_tot[c] += 1
                batch_acc[c] += 1.0
        if adapt and (j + 1) % batch_size == 0:
            b = (j + 1) // batch_size
            delta = min(0.01, 1.0 / math.sqrt(b))
            for c in range(3):
                log_s[c] += delta if batch_acc[c] / batch_size > target_rate else -delta
                log_s[c] = min(max(log_s[c], log_s_min), log_s_max)
                batch_acc[c] = 0.0
        out[j, 0], out[j, 1], out[j, 2] = cur
    return out, accepted, acc_tot, np.exp(log_s)


def absorption_hits(x0, tau, n_steps, n_paths, seed):
    """Count paths of dX = (X-1)dt - X dW absorbed at 0 before tau."""
    rng = np.random.default_rng(seed)
    dt = tau / n_steps
    sq = math.sqrt(dt)
    x = np.full(n_paths, float(x0))
    hits = 0
    for _ in range(n_steps):
        if x.size == 0:
            break
        z = rng.standard_normal(x.size)
        x += (x - 1.0) * dt - x * sq * z
        dead = x <= 0.0
        k = int(dead.sum())
        if k:
            hits += k
            x = x[~dead]
    return hits


def sabr_terminal_forwards(f0, alpha, nu, rho, maturity, n_steps, n_paths, seed):
    """Terminal forwards under log-Euler F dynamics with exact vol updates."""
    rng = np.random.default_rng(seed)
    dt = maturity / n_steps
    sq = math.sqrt(dt)
    srho = math.sqrt(1.0 - rho * rho)
    vol_drift = -0.5 * nu * nu * dt
    lf = np.full(n_paths, math.log(f0))
    a = np.full(n_paths, float(alpha))
    for _ in range(n_steps):
        z1 = rng.standard_normal(n_paths)
        z2 = rng.standard_normal(n_paths)
        lf += (-0.5 * dt) * a * a + sq * a * (rho * z2 + srho * z1)
        a *= np.exp(vol_drift + (nu * sq) * z2)
    return np.exp(lf)
