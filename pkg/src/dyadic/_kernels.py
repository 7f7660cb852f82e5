"""Compiled inner loops for the shell system.

Array convention used throughout this module: ``x[j]`` holds shell ``j + 1``
and ``k[n]`` holds the coefficient of shell ``n`` (so ``k[0] == 0``).  The
coefficient array must have at least ``x.size + 1`` entries.
"""
import numpy as np
from numba import njit

# Dormand-Prince 5(4) tableau.  The 5th-order solution is propagated; the
# embedded 4th-order one only feeds the error estimate.  FSAL: the last stage
# is the derivative at the new point.
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (
    9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0)
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
# b - b_hat (difference between the 5th- and embedded 4th-order weights)
E1, E3, E4, E5, E6, E7 = (
    71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 5.0
PI_ALPHA = 0.7 / 5.0
PI_BETA = 0.4 / 5.0

# status codes shared with integrate.py
OK = 0
STIFF = 1
BUDGET = 2
NONFINITE = 3

EV_UNDERSHOOT = 0
EV_FLOOR = 1


@njit(cache=True)
def rhs_into(x, k, out):
    n = x.size
    for j in range(n):
        xm = x[j - 1] if j > 0 else 0.0
        xp = x[j + 1] if j < n - 1 else 0.0
        out[j] = k[j] * xm * xm - k[j + 1] * x[j] * xp


@njit(cache=True)
def gershgorin_rate(x, k):
    """Upper bound on the spectral radius of the Jacobian (row sums)."""
    n = x.size
    rho = 0.0
    for j in range(n):
        r = 2.0 * k[j] * abs(x[j - 1]) if j > 0 else 0.0
        if j < n - 1:
            r += k[j + 1] * abs(x[j + 1]) + k[j + 1] * abs(x[j])
        if r > rho:
            rho = r
    return rho


@njit(cache=True)
def exponential_rate(x, k):
    """Rate of the parts the exponential stepper treats explicitly.

    The damping -k_j X_{j+1} acting on shell j is integrated exactly, so only
    the coupling terms and any exponential growth limit the step.
    """
    n = x.size
    rho = 0.0
    for j in range(n):
        r = 2.0 * k[j] * abs(x[j - 1]) if j > 0 else 0.0
        if j < n - 1:
            r += k[j + 1] * abs(x[j])
            if x[j + 1] < 0.0:
                r += -k[j + 1] * x[j + 1]
        if r > rho:
            rho = r
    return rho


@njit(cache=True)
def _max_abs(v):
    m = 0.0
    for i in range(v.size):
        a = abs(v[i])
        if a > m:
            m = a
    return m


@njit(cache=True)
def _all_finite(v):
    for i in range(v.size):
        if not np.isfinite(v[i]):
            return False
    return True


@njit(cache=True)
def rhs_padded(p, k, out):
    """Same arithmetic as rhs_into, on a vector padded with X_0 = X_{N+1} = 0."""
    for j in range(out.size):
        out[j] = k[j] * p[j] * p[j] - k[j + 1] * p[j + 1] * p[j + 2]


@njit(cache=True)
def dp5_attempt(xp, f0, k, h, s2, s3, s4, s5, s6, yp, fy, err, tp):
    """One Dormand-Prince trial step on padded vectors.

    Fills ``yp`` (5th order), ``fy = f(y)`` and the error vector ``err``;
    returns ``(max|err|, max|y|)``.
    """
    n = f0.size
    for i in range(n):
        tp[i + 1] = xp[i + 1] + h * A21 * f0[i]
    rhs_padded(tp, k, s2)
    for i in range(n):
        tp[i + 1] = xp[i + 1] + h * (A31 * f0[i] + A32 * s2[i])
    rhs_padded(tp, k, s3)
    for i in range(n):
        tp[i + 1] = xp[i + 1] + h * (A41 * f0[i] + A42 * s2[i] + A43 * s3[i])
    rhs_padded(tp, k, s4)
    for i in range(n):
        tp[i + 1] = xp[i + 1] + h * (A51 * f0[i] + A52 * s2[i] + A53 * s3[i] + A54 * s4[i])
    rhs_padded(tp, k, s5)
    for i in range(n):
        tp[i + 1] = xp[i + 1] + h * (A61 * f0[i] + A62 * s2[i] + A63 * s3[i] + A64 * s4[i]
                                     + A65 * s5[i])
    rhs_padded(tp, k, s6)
    ymax = 0.0
    for i in range(n):
        v = xp[i + 1] + h * (B1 * f0[i] + B3 * s3[i] + B4 * s4[i] + B5 * s5[i] + B6 * s6[i])
        yp[i + 1] = v
        ymax = max(ymax, abs(v))
    rhs_padded(yp, k, fy)
    emax = 0.0
    for i in range(n):
        e = h * (E1 * f0[i] + E3 * s3[i] + E4 * s4[i] + E5 * s5[i] + E6 * s6[i] + E7 * fy[i])
        err[i] = e
        emax = max(emax, abs(e))
    return emax, ymax


@njit(cache=True)
def hermite_into(x0, f0, x1, f1, h, theta, out):
    t2 = theta * theta
    t3 = t2 * theta
    h00 = 2.0 * t3 - 3.0 * t2 + 1.0
    h10 = t3 - 2.0 * t2 + theta
    h01 = -2.0 * t3 + 3.0 * t2
    h11 = t3 - t2
    for i in range(x0.size):
        out[i] = h00 * x0[i] + h10 * h * f0[i] + h01 * x1[i] + h11 * h * f1[i]


@njit(cache=True)
def _push_event(ev_t, ev_kind, ev_shell, ev_val, count, t, kind, shell, val):
    if count >= ev_t.size:
        cap = 2 * ev_t.size
        nt = np.empty(cap)
        nk = np.empty(cap, dtype=np.int64)
        ns = np.empty(cap, dtype=np.int64)
        nv = np.empty(cap)
        nt[:count] = ev_t[:count]
        nk[:count] = ev_kind[:count]
        ns[:count] = ev_shell[:count]
        nv[:count] = ev_val[:count]
        ev_t, ev_kind, ev_shell, ev_val = nt, nk, ns, nv
    ev_t[count] = t
    ev_kind[count] = kind
    ev_shell[count] = shell
    ev_val[count] = val
    return ev_t, ev_kind, ev_shell, ev_val, count + 1


@njit(cache=True)
def run_rk(x0, k, t0, t_end, h_init, h_min, h_max, atol, rtol, cap_factor,
           floor_value, sample_t, max_steps, fixed_h, max_accepted):
    """Adaptive (or fixed-step when fixed_h > 0) Dormand-Prince integration.

    Returns (samples, n_samples, status, t_reached, x_reached, n_acc, n_rej,
    h_lo, h_hi, ev_t, ev_kind, ev_shell, ev_val, n_events, h_next, err_last)
    where err_last is the max-norm error estimate of the last accepted step.
    """
    n = x0.size
    n_s = sample_t.size
    samples = np.empty((n_s, n))
    xpad = np.zeros(n + 2)
    xpad[1:n + 1] = x0
    x = xpad[1:n + 1]
    ypad = np.zeros(n + 2)
    y = ypad[1:n + 1]
    tpad = np.zeros(n + 2)
    f = np.empty(n)
    rhs_padded(xpad, k, f)
    s2 = np.empty(n)
    s3 = np.empty(n)
    s4 = np.empty(n)
    s5 = np.empty(n)
    s6 = np.empty(n)
    err = np.empty(n)
    fy = np.empty(n)
    ev_t = np.empty(16)
    ev_kind = np.empty(16, dtype=np.int64)
    ev_shell = np.empty(16, dtype=np.int64)
    ev_val = np.empty(16)
    n_ev = 0

    si = 0
    while si < n_s and sample_t[si] <= t0:
        samples[si] = x
        si += 1

    t = t0
    h = h_init
    ratio_prev = 1e-4
    n_acc = 0
    n_rej = 0
    h_lo = np.inf
    h_hi = 0.0
    status = OK
    err_last = 0.0
    positivity_floor_threshold = -10.0 * atol
    fixed = fixed_h > 0.0
    xmax = _max_abs(x)

    while t < t_end:
        if n_acc + n_rej >= max_steps:
            status = BUDGET
            break
        rem = t_end - t
        if fixed:
            h = fixed_h
        else:
            rho = gershgorin_rate(x, k)
            if rho > 0.0:
                cap = cap_factor / rho
                if cap < h:
                    h = cap
            if h > h_max:
                h = h_max
            if h < h_min and rem > h:
                status = STIFF
                break
        last = False
        if h >= rem:
            h = rem
            last = True

        emax, ymax = dp5_attempt(xpad, f, k, h, s2, s3, s4, s5, s6, ypad, fy, err, tpad)
        if fixed:
            ratio = 0.0
        else:
            ratio = emax / (atol + rtol * max(xmax, ymax))
            if not np.isfinite(ratio):
                ratio = 1e300
        if ratio > 1.0:
            n_rej += 1
            fac = SAFETY * ratio ** (-0.2)
            if fac < FAC_MIN:
                fac = FAC_MIN
            if fac > 1.0:
                fac = 1.0
            h = h * fac
            if h < h_min:
                status = STIFF
                break
            continue

        # one pass: finiteness, sign dips below -10 atol, deepest undershoot
        finite = True
        bad = False
        worst = 0.0
        worst_i = -1
        for i in range(n):
            v = y[i]
            if not np.isfinite(v):
                finite = False
            elif x[i] >= 0.0 and v < 0.0:
                if v < positivity_floor_threshold:
                    bad = True
                if v < worst:
                    worst = v
                    worst_i = i
        if not finite:
            status = NONFINITE
            break
        if bad and not fixed:
            if 0.5 * h >= h_min:
                n_rej += 1
                h = 0.5 * h
                continue
            # last resort: hard floor, logged per shell
            worst = 0.0
            worst_i = -1
            for i in range(n):
                if x[i] >= 0.0 and y[i] < positivity_floor_threshold:
                    ev_t, ev_kind, ev_shell, ev_val, n_ev = _push_event(
                        ev_t, ev_kind, ev_shell, ev_val, n_ev, t + h, EV_FLOOR, i + 1, y[i])
                    y[i] = floor_value
                elif x[i] >= 0.0 and y[i] < worst:
                    worst = y[i]
                    worst_i = i
            rhs_padded(ypad, k, fy)
            ymax = _max_abs(y)

        t_new = t_end if last else t + h
        if worst_i >= 0 and not fixed:
            for i in range(n):
                if x[i] >= 0.0 and y[i] < 0.0:
                    ev_t, ev_kind, ev_shell, ev_val, n_ev = _push_event(
                        ev_t, ev_kind, ev_shell, ev_val, n_ev, t_new, EV_UNDERSHOOT, i + 1, y[i])

        while si < n_s and sample_t[si] <= t_new:
            if sample_t[si] == t_new:
                samples[si] = y
            else:
                theta = (sample_t[si] - t) / h
                hermite_into(x, f, y, fy, h, theta, samples[si])
                if not fixed:
                    # dense output can dip below zero between nonnegative endpoints
                    for i in range(n):
                        if x[i] >= 0.0 and samples[si, i] < 0.0 and y[i] >= 0.0:
                            ev_t, ev_kind, ev_shell, ev_val, n_ev = _push_event(
                                ev_t, ev_kind, ev_shell, ev_val, n_ev, sample_t[si],
                                EV_UNDERSHOOT, i + 1, samples[si, i])
            si += 1

        n_acc += 1
        if h < h_lo:
            h_lo = h
        if h > h_hi:
            h_hi = h
        err_last = emax
        xmax = ymax
        xpad, ypad = ypad, xpad
        x, y = y, x
        f, fy = fy, f
        t = t_new

        if not fixed:
            if ratio == 0.0:
                fac = FAC_MAX
            else:
                fac = SAFETY * ratio ** (-PI_ALPHA) * ratio_prev ** PI_BETA
                if fac < FAC_MIN:
                    fac = FAC_MIN
                if fac > FAC_MAX:
                    fac = FAC_MAX
            ratio_prev = max(ratio, 1e-4)
            if not last:
                h = h * fac
        if n_acc >= max_accepted:
            break

    return (samples, si, status, t, x, n_acc, n_rej, h_lo, h_hi,
            ev_t, ev_kind, ev_shell, ev_val, n_ev, h, err_last)


@njit(cache=True)
def exponential_step(x, k, h, out):
    """Frozen-coefficient variation-of-constants update, nonnegativity preserving."""
    n = x.size
    for j in range(n):
        xm = x[j - 1] if j > 0 else 0.0
        xp = x[j + 1] if j < n - 1 else 0.0
        a = -k[j + 1] * xp
        z = a * h
        if z == 0.0:
            phi = h
        else:
            phi = np.expm1(z) / a
        out[j] = np.exp(z) * x[j] + phi * (k[j] * xm * xm)


@njit(cache=True)
def run_exponential(x0, k, t0, t_end, h_min, h_max, cap_factor, sample_t, max_steps):
    """Exponential (positivity-preserving) stepping with linear dense output."""
    n = x0.size
    n_s = sample_t.size
    samples = np.empty((n_s, n))
    x = x0.copy()
    y = np.empty(n)
    si = 0
    while si < n_s and sample_t[si] <= t0:
        samples[si] = x
        si += 1
    t = t0
    n_acc = 0
    h_lo = np.inf
    h_hi = 0.0
    status = OK
    while t < t_end:
        if n_acc >= max_steps:
            status = BUDGET
            break
        rem = t_end - t
        h = h_max
        rho = exponential_rate(x, k)
        if rho > 0.0 and cap_factor / rho < h:
            h = cap_factor / rho
        if h < h_min and rem > h:
            status = STIFF
            break
        last = False
        if h >= rem:
            h = rem
            last = True
        exponential_step(x, k, h, y)
        if not _all_finite(y):
            status = NONFINITE
            break
        t_new = t_end if last else t + h
        while si < n_s and sample_t[si] <= t_new:
            if sample_t[si] == t_new:
                samples[si] = y
            else:
                theta = (sample_t[si] - t) / h
                for i in range(n):
                    samples[si, i] = (1.0 - theta) * x[i] + theta * y[i]
            si += 1
        n_acc += 1
        if h < h_lo:
            h_lo = h
        if h > h_hi:
            h_hi = h
        for i in range(n):
            x[i] = y[i]
        t = t_new
    return samples, si, status, t, x, n_acc, h_lo, h_hi


@njit(cache=True)
def neumaier_cumsum(v):
    """Running compensated sums; entry i is the rounded sum of v[0..i]."""
    out = np.empty(v.size)
    s = 0.0
    c = 0.0
    for i in range(v.size):
        a = v[i]
        t = s + a
        if abs(s) >= abs(a):
            c += (s - t) + a
        else:
            c += (a - t) + s
        s = t
        out[i] = s + c
    return out
