"""Numba kernels for one Metropolis-within-Gibbs sweep.

Random numbers are drawn by the caller (numpy ``Generator``) and passed in,
so a chain's trajectory depends only on its seed.

Every latent-field move is a translation along a direction that keeps the
sum-to-zero constraints satisfied, with the level it removes pushed into
another parameter so the linear predictor changes only at the target site:

* ``u[i] += d``        : component of ``i`` recentred, ``alpha += d/n_c``
* ``kappa[m] += d``    : months recentred, ``alpha += d/T``
* ``omega[i, m] += d`` : double-centred, ``v[i] += d/T``, ``kappa[m] += d/n_c``

Areas outside the moved component only see a change when the graph has more
than one component (or isolated areas); those rows are evaluated explicitly.
The moves are volume preserving and symmetric, so the plain Metropolis ratio
(including the prior change of the compensating parameter) is exact.

Structured fields are carried unprojected inside a sweep (``u``, ``kappa`` and
``omega`` only enter priors through differences that are invariant to the
compensating shifts) and projected back onto the constraint set at the end.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True)
def update_pi(y, mu, rho, unif, pi):
    """Exact Gibbs draw of every structural-zero indicator. Returns their sum."""
    n, T = y.shape
    total = 0
    for i in range(n):
        for m in range(T):
            if y[i, m] > 0:
                pi[i, m] = 0
                continue
            a = rho
            b = (1.0 - rho) * math.exp(-mu[i, m])
            p1 = a / (a + b) if a + b > 0 else 0.0
            if unif[i * T + m] < p1:
                pi[i, m] = 1
                total += 1
            else:
                pi[i, m] = 0
    return total


@njit(cache=True)
def _row_delta(i, d, y, mu, pi):
    T = y.shape[1]
    sy = 0.0
    smu = 0.0
    for m in range(T):
        if pi[i, m] == 0:
            sy += y[i, m]
            smu += mu[i, m]
    return d * sy - math.expm1(d) * smu


@njit(cache=True)
def _col_delta(m, d, y, mu, pi):
    n = y.shape[0]
    sy = 0.0
    smu = 0.0
    for i in range(n):
        if pi[i, m] == 0:
            sy += y[i, m]
            smu += mu[i, m]
    return d * sy - math.expm1(d) * smu


@njit(cache=True)
def _cell_delta(i, m, d, y, mu, pi):
    if pi[i, m] != 0:
        return 0.0
    return d * y[i, m] - math.expm1(d) * mu[i, m]


@njit(cache=True)
def _outside_u_delta(c, d, y, mu, pi, out_ptr, out_idx):
    tot = 0.0
    for p in range(out_ptr[c], out_ptr[c + 1]):
        tot += _row_delta(out_idx[p], d, y, mu, pi)
    return tot


@njit(cache=True)
def _outside_omega_delta(c, m, a, y, mu, pi, out_ptr, out_idx):
    """Likelihood change on rows outside component ``c`` when kappa moves by
    ``a * (e_m - 1/T)``."""
    T = y.shape[1]
    tot = 0.0
    for p in range(out_ptr[c], out_ptr[c + 1]):
        j = out_idx[p]
        for k in range(T):
            s = a * ((1.0 if k == m else 0.0) - 1.0 / T)
            tot += _cell_delta(j, k, s, y, mu, pi)
    return tot


@njit(cache=True)
def _icar_local(i, x, d, nb_ptr, nb_idx):
    """Change of sum_{edges} (x_a - x_b)^2 when x[i] += d."""
    deg = nb_ptr[i + 1] - nb_ptr[i]
    s = 0.0
    for p in range(nb_ptr[i], nb_ptr[i + 1]):
        s += x[nb_idx[p]]
    return 2.0 * d * (deg * x[i] - s) + deg * d * d


@njit(cache=True)
def _omega_local(i, m, d, om, nb_ptr, nb_idx):
    """Change of the type IV quadratic form when omega[i, m] += d."""
    T = om.shape[1]
    deg = nb_ptr[i + 1] - nb_ptr[i]
    out = 0.0
    if m >= 1:
        s = 0.0
        for p in range(nb_ptr[i], nb_ptr[i + 1]):
            j = nb_idx[p]
            s += om[j, m] - om[j, m - 1]
        inc = om[i, m] - om[i, m - 1]
        out += 2.0 * d * (deg * inc - s) + deg * d * d
    if m + 1 < T:
        s = 0.0
        for p in range(nb_ptr[i], nb_ptr[i + 1]):
            j = nb_idx[p]
            s += om[j, m + 1] - om[j, m]
        inc = om[i, m + 1] - om[i, m]
        out += -2.0 * d * (deg * inc - s) + deg * d * d
    return out


@njit(cache=True)
def _rw_local(m, kap, a):
    """Change of sum (kappa_k - kappa_{k-1})^2 when kappa[m] += a."""
    T = kap.shape[0]
    out = 0.0
    if m >= 1:
        old = kap[m] - kap[m - 1]
        out += (old + a) ** 2 - old * old
    if m + 1 < T:
        old = kap[m + 1] - kap[m]
        out += (old - a) ** 2 - old * old
    return out


@njit(cache=True)
def icar_q(x, nb_ptr, nb_idx):
    n = x.shape[0]
    q = 0.0
    for i in range(n):
        for p in range(nb_ptr[i], nb_ptr[i + 1]):
            j = nb_idx[p]
            if j > i:
                q += (x[i] - x[j]) ** 2
    return q


@njit(cache=True)
def omega_q(om, nb_ptr, nb_idx):
    n, T = om.shape
    q = 0.0
    for k in range(1, T):
        for i in range(n):
            inc_i = om[i, k] - om[i, k - 1]
            for p in range(nb_ptr[i], nb_ptr[i + 1]):
                j = nb_idx[p]
                if j > i:
                    q += (inc_i - (om[j, k] - om[j, k - 1])) ** 2
    return q


@njit(cache=True)
def rw_q(kap):
    q = 0.0
    for k in range(1, kap.shape[0]):
        q += (kap[k] - kap[k - 1]) ** 2
    return q


@njit(cache=True)
def _accept(lr, e):
    # accept with probability min(1, exp(lr)); e ~ Exp(1) so -e = log U
    return lr == lr and lr >= -e


@njit(cache=True)
def project(u, kap, om, comp, comp_size, n_comp):
    """Project structured fields onto the sum-to-zero constraint set in place."""
    n, T = om.shape
    if T > 0:
        mk = 0.0
        for k in range(T):
            mk += kap[k]
        mk /= T
        for k in range(T):
            kap[k] -= mk
    usum = np.zeros(n_comp)
    colsum = np.zeros((n_comp, T))
    for i in range(n):
        usum[comp[i]] += u[i]
    for i in range(n):
        c = comp[i]
        if comp_size[c] < 2:
            u[i] = 0.0
        else:
            u[i] -= usum[c] / comp_size[c]
    if T == 0:
        return
    for i in range(n):
        rm = 0.0
        for k in range(T):
            rm += om[i, k]
        rm /= T
        for k in range(T):
            om[i, k] -= rm
    for i in range(n):
        c = comp[i]
        for k in range(T):
            colsum[c, k] += om[i, k]
    for i in range(n):
        c = comp[i]
        if comp_size[c] < 2:
            for k in range(T):
                om[i, k] = 0.0
        else:
            for k in range(T):
                om[i, k] -= colsum[c, k] / comp_size[c]


@njit(cache=True)
def linear_predictor(alpha, u, v, kap, om, X, eta, mu):
    """Refresh the linear predictor and Poisson mean caches from scratch."""
    n, T = om.shape
    for i in range(n):
        for k in range(T):
            eta[i, k] = alpha + u[i] + v[i] + kap[k] + om[i, k]
            mu[i, k] = X[i, k] * math.exp(eta[i, k])


@njit(cache=True)
def mh_sweep(
    y, mu, pi, eta,
    par, u, v, kap, om, sds,
    nb_ptr, nb_idx, comp, comp_size, out_ptr, out_idx,
    hp_scale, rank_u,
    z, e,
    step_alpha, step_v, step_u, step_kappa, step_omega, step_sd, step_scale,
    acc_alpha, acc_v, acc_u, acc_kappa, acc_omega, acc_sd, acc_scale,
    n_comp,
):
    """One fixed-order pass of random-walk Metropolis updates.

    ``eta`` and ``mu = X exp(eta)`` are caches kept in step with every
    accepted move. ``par[0]`` is alpha; ``sds`` holds (sd_alpha, sd_v, sd_u, sd_kappa, sd_omega).
    ``z``/``e`` supply one standard normal and one Exp(1) draw per site in the
    fixed layout alpha, v[n], u[n], kappa[T], omega[n*T], sds[5], scale[5].
    Structured fields are projected onto the constraint set before the
    standard-deviation stage. Field proposal scales are relative: the step
    for a site is ``step_x[site] * sd_x`` at the sd's current value.
    """
    n, T = y.shape
    p = 0
    ratio = np.empty((n, T))

    # alpha
    d = step_alpha[0] * z[p]
    a0 = par[0]
    sa = sds[0]
    lr = 0.0
    for i in range(n):
        lr += _row_delta(i, d, y, mu, pi)
    lr += -((a0 + d) ** 2 - a0 * a0) / (2.0 * sa * sa)
    if _accept(lr, e[p]):
        par[0] = a0 + d
        ed = math.exp(d)
        for i in range(n):
            for k in range(T):
                eta[i, k] += d
                mu[i, k] *= ed
        acc_alpha[0] += 1
    p += 1

    # v
    sv = sds[1]
    for i in range(n):
        d = step_v[i] * sv * z[p]
        lr = _row_delta(i, d, y, mu, pi)
        lr += -((v[i] + d) ** 2 - v[i] * v[i]) / (2.0 * sv * sv)
        if _accept(lr, e[p]):
            v[i] += d
            ed = math.exp(d)
            for k in range(T):
                eta[i, k] += d
                mu[i, k] *= ed
            acc_v[i] += 1
        p += 1

    # u, recentred within its component and compensated into alpha
    su = sds[2]
    for i in range(n):
        c = comp[i]
        nc = comp_size[c]
        if nc < 2:
            p += 1
            continue
        d = step_u[i] * su * z[p]
        b = d / nc
        lr = _row_delta(i, d, y, mu, pi)
        if out_ptr[c + 1] > out_ptr[c]:
            lr += _outside_u_delta(c, b, y, mu, pi, out_ptr, out_idx)
        lr += -_icar_local(i, u, d, nb_ptr, nb_idx) / (2.0 * su * su)
        a0 = par[0]
        lr += -((a0 + b) ** 2 - a0 * a0) / (2.0 * sds[0] * sds[0])
        if _accept(lr, e[p]):
            u[i] += d
            par[0] = a0 + b
            ed = math.exp(d)
            for k in range(T):
                eta[i, k] += d
                mu[i, k] *= ed
            eb = math.exp(b)
            for q in range(out_ptr[c], out_ptr[c + 1]):
                j = out_idx[q]
                for k in range(T):
                    eta[j, k] += b
                    mu[j, k] *= eb
            acc_u[i] += 1
        p += 1

    # kappa, recentred over months and compensated into alpha
    sk = sds[3]
    for m in range(T):
        if T < 2:
            p += 1
            continue
        d = step_kappa[m] * sk * z[p]
        b = d / T
        lr = _col_delta(m, d, y, mu, pi)
        lr += -_rw_local(m, kap, d) / (2.0 * sk * sk)
        a0 = par[0]
        lr += -((a0 + b) ** 2 - a0 * a0) / (2.0 * sds[0] * sds[0])
        if _accept(lr, e[p]):
            kap[m] += d
            par[0] = a0 + b
            ed = math.exp(d)
            for i in range(n):
                eta[i, m] += d
                mu[i, m] *= ed
            acc_kappa[m] += 1
        p += 1

    # omega, double-centred; compensation into v[i] and kappa[m]
    so = sds[4]
    for i in range(n):
        c = comp[i]
        nc = comp_size[c]
        for m in range(T):
            if nc < 2 or T < 2:
                p += 1
                continue
            d = step_omega[i, m] * so * z[p]
            bv = d / T
            bk = d / nc
            lr = _cell_delta(i, m, d, y, mu, pi)
            if out_ptr[c + 1] > out_ptr[c]:
                lr += _outside_omega_delta(c, m, bk, y, mu, pi, out_ptr, out_idx)
            lr += -_omega_local(i, m, d, om, nb_ptr, nb_idx) / (2.0 * so * so)
            lr += -_rw_local(m, kap, bk) / (2.0 * sk * sk)
            lr += -((v[i] + bv) ** 2 - v[i] * v[i]) / (2.0 * sv * sv)
            if _accept(lr, e[p]):
                om[i, m] += d
                v[i] += bv
                kap[m] += bk
                eta[i, m] += d
                mu[i, m] *= math.exp(d)
                for q in range(out_ptr[c], out_ptr[c + 1]):
                    j = out_idx[q]
                    for k in range(T):
                        s = bk * ((1.0 if k == m else 0.0) - 1.0 / T)
                        eta[j, k] += s
                        mu[j, k] *= math.exp(s)
                acc_omega[i, m] += 1
            p += 1

    project(u, kap, om, comp, comp_size, n_comp)

    # standard deviations, random walk on the log scale (Jacobian included)
    qu = icar_q(u, nb_ptr, nb_idx)
    qk = rw_q(kap)
    qo = omega_q(om, nb_ptr, nb_idx)
    sv2 = 0.0
    for i in range(n):
        sv2 += v[i] * v[i]
    n_rw = max(T - 1, 0)
    ranks = np.empty(5)
    quads = np.empty(5)
    ranks[0] = 1.0
    quads[0] = par[0] * par[0]
    ranks[1] = n
    quads[1] = sv2
    ranks[2] = rank_u
    quads[2] = qu
    ranks[3] = n_rw
    quads[3] = qk
    ranks[4] = n_rw * rank_u
    quads[4] = qo
    for k in range(5):
        s0 = sds[k]
        ls = math.log(s0)
        d = step_sd[k] * z[p]
        s1 = math.exp(ls + d)
        h = hp_scale[k]
        lp1 = -ranks[k] * (ls + d) - quads[k] / (2.0 * s1 * s1) - s1 * s1 / (2.0 * h * h) + (ls + d)
        lp0 = -ranks[k] * ls - quads[k] / (2.0 * s0 * s0) - s0 * s0 / (2.0 * h * h) + ls
        if _accept(lp1 - lp0, e[p]):
            sds[k] = s1
            acc_sd[k] += 1
        p += 1

    # joint rescaling of each sd with its field: (s, x) -> (c s, c x).
    # The field's prior density and the Jacobian cancel, leaving the
    # likelihood change plus the half-normal and log-scale terms.
    for k in range(5):
        d = step_scale[k] * z[p]
        cm1 = math.expm1(d)
        s0 = sds[k]
        s1 = s0 * math.exp(d)
        h = hp_scale[k]
        lr = -(s1 * s1 - s0 * s0) / (2.0 * h * h) + d
        if k == 0:
            shift = cm1 * par[0]
            for i in range(n):
                lr += _row_delta(i, shift, y, mu, pi)
        elif k == 1 or k == 2:
            x = v if k == 1 else u
            for i in range(n):
                if x[i] != 0.0:
                    lr += _row_delta(i, cm1 * x[i], y, mu, pi)
        elif k == 3:
            for m in range(T):
                lr += _col_delta(m, cm1 * kap[m], y, mu, pi)
        else:
            for i in range(n):
                for m in range(T):
                    s = cm1 * om[i, m]
                    ratio[i, m] = math.exp(s)
                    if pi[i, m] == 0:
                        lr += s * y[i, m] - (ratio[i, m] - 1.0) * mu[i, m]
        if _accept(lr, e[p]):
            sds[k] = s1
            c = 1.0 + cm1
            if k == 0:
                shift = cm1 * par[0]
                es = math.exp(shift)
                for i in range(n):
                    for m in range(T):
                        eta[i, m] += shift
                        mu[i, m] *= es
                par[0] *= c
            elif k == 1 or k == 2:
                x = v if k == 1 else u
                for i in range(n):
                    shift = cm1 * x[i]
                    es = math.exp(shift)
                    for m in range(T):
                        eta[i, m] += shift
                        mu[i, m] *= es
                    x[i] *= c
            elif k == 3:
                for m in range(T):
                    shift = cm1 * kap[m]
                    es = math.exp(shift)
                    for i in range(n):
                        eta[i, m] += shift
                        mu[i, m] *= es
                    kap[m] *= c
            else:
                for i in range(n):
                    for m in range(T):
                        eta[i, m] += cm1 * om[i, m]
                        mu[i, m] *= ratio[i, m]
                        om[i, m] *= c
            acc_scale[k] += 1
        p += 1
    return p


@njit(cache=True)
def _field_loglik(eta, cur, nu, c, s, X, y, pi):
    n, T = eta.shape
    ll = 0.0
    for i in range(n):
        for m in range(T):
            if pi[i, m] == 0:
                e = eta[i, m] + (c - 1.0) * cur[i, m] + s * nu[i, m]
                ll += y[i, m] * e - X[i, m] * math.exp(e)
    return ll


@njit(cache=True)
def ess_field(eta, mu, X, y, pi, cur, nu, log_u, unif):
    """Elliptical slice step for one Gaussian field's contribution ``cur`` to
    ``eta`` with prior draw ``nu`` (same layout). ``unif`` supplies the angle
    draws; if it runs out the bracket has shrunk onto the current state.
    Returns the accepted angle (0 means unchanged) and updates the caches."""
    n, T = eta.shape
    ll0 = 0.0
    for i in range(n):
        for m in range(T):
            if pi[i, m] == 0:
                ll0 += y[i, m] * eta[i, m] - mu[i, m]
    level = ll0 + log_u
    th = 2.0 * math.pi * unif[0]
    lo = th - 2.0 * math.pi
    hi = th
    k = 1
    while True:
        c = math.cos(th)
        s = math.sin(th)
        if _field_loglik(eta, cur, nu, c, s, X, y, pi) > level:
            for i in range(n):
                for m in range(T):
                    eta[i, m] += (c - 1.0) * cur[i, m] + s * nu[i, m]
                    mu[i, m] = X[i, m] * math.exp(eta[i, m])
            return th
        if th < 0.0:
            lo = th
        else:
            hi = th
        if k >= unif.shape[0]:
            return 0.0
        th = lo + (hi - lo) * unif[k]
        k += 1
