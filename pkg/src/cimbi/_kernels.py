"""Compiled path kernels shared by the engine, transform and montecarlo modules.

All state arrays are float64. Random draws go through :mod:`cimbi.rng` with
per-path counters ``ctr = [gaussian, exponential, uniform, atom_select]``.
"""

import math

import numba as nb
import numpy as np

from .rng import ATOM_SELECT, UNIFORM, exponential_at, normal_at, uniform_at

STOP_HIT = 0
STOP_EXTINCTION = 1
STOP_HORIZON = 2

MAX_HALVINGS = 45  # keeps h >= dt * 2**-45 so elapsed time always advances
EVENT_CAPACITY = 512

# ---------------------------------------------------------------- coefficients


@nb.njit(cache=True, nogil=True)
def drift_full(x, eta, B, C, m1t, alpha, m, out):
    """Drift including the own-type jump compensator, evaluated at ``min(x+, m)``."""
    d = x.shape[0]
    for i in range(d):
        xi = x[i] if x[i] > 0.0 else 0.0
        if xi > m:
            xi = m
        lin = 0.0
        inter = 0.0
        for j in range(d):
            xj = x[j] if x[j] > 0.0 else 0.0
            if xj > m:
                xj = m
            lin += B[i, j] * xj
            inter += C[i, j] * xj
        out[i] = eta[i] + lin + xi * inter - xi * m1t[i] - alpha[i] * xi


@nb.njit(cache=True, nogil=True)
def diffusion_step(x, dr, sigma, m, h, dW, out):
    """Full-truncation Euler step followed by clamping at zero."""
    d = x.shape[0]
    for i in range(d):
        v = x[i] if x[i] > 0.0 else 0.0
        xm = v if v < m else m
        y = x[i] + dr[i] * h + math.sqrt(2.0 * sigma[i] * xm) * dW[i]
        out[i] = y if y > 0.0 else 0.0


@nb.njit(cache=True, nogil=True)
def choose_step(x, dr, sigma, h, substep_cap, refine):
    """Halve ``h`` until ``|drift_i| * h <= substep_cap * (1 + |x_i|)`` for all i.

    With ``refine = k > 0`` also halve while ``2 sigma_i h k^2 > x_i`` for some
    ``x_i > 0``, which resolves the square-root diffusion near the boundary.
    """
    d = x.shape[0]
    for _ in range(MAX_HALVINGS):
        ok = True
        for i in range(d):
            if abs(dr[i]) * h > substep_cap * (1.0 + abs(x[i])):
                ok = False
                break
            if refine > 0.0 and x[i] > 0.0 and 2.0 * sigma[i] * h * refine * refine > x[i]:
                ok = False
                break
        if ok:
            return h
        h *= 0.5
    return h


# ---------------------------------------------------------------- jumps


@nb.njit(cache=True, nogil=True)
def _select(cum, k, v):
    for a in range(k - 1):
        if v <= cum[a]:
            return a
    return k - 1


@nb.njit(cache=True, nogil=True)
def sample_window(xbar, t, h, m, nu_tot, nu_cum, mu_tot, mu_cum, mu_k,
                  key0, key1, pid, ctr, ev_t, ev_src, ev_atom, ev_u):
    """Candidate jump events in ``(t, t + h]`` sorted by time.

    ``ev_src`` is 0 for immigration and ``i + 1`` for a branching candidate of
    type ``i``; ``ev_u`` holds the thinning mark drawn on ``[0, xbar_i ^ m]``.
    Returns the number of events, or -1 if the buffer overflowed.
    """
    cap = ev_t.shape[0]
    n = 0
    t_end = t + h
    k0 = nu_cum.shape[0]
    if nu_tot > 0.0:
        s = t
        while True:
            s += exponential_at(key0, key1, pid, ctr[1]) / nu_tot
            ctr[1] += 1
            if s > t_end:
                break
            if n >= cap:
                return -1
            v = uniform_at(key0, key1, pid, ATOM_SELECT, ctr[3])
            ctr[3] += 1
            ev_t[n] = s
            ev_src[n] = 0
            ev_atom[n] = _select(nu_cum, k0, v)
            ev_u[n] = 0.0
            n += 1
    d = xbar.shape[0]
    for i in range(d):
        k = mu_k[i]
        if k == 0:
            continue
        xb = xbar[i] if xbar[i] < m else m
        rate = xb * mu_tot[i]
        if rate <= 0.0:
            continue
        s = t
        while True:
            s += exponential_at(key0, key1, pid, ctr[1]) / rate
            ctr[1] += 1
            if s > t_end:
                break
            if n >= cap:
                return -1
            v = uniform_at(key0, key1, pid, ATOM_SELECT, ctr[3])
            ctr[3] += 1
            u = uniform_at(key0, key1, pid, UNIFORM, ctr[2]) * xb
            ctr[2] += 1
            ev_t[n] = s
            ev_src[n] = i + 1
            ev_atom[n] = _select(mu_cum[i], k, v)
            ev_u[n] = u
            n += 1
    # insertion sort; windows hold few events
    for a in range(1, n):
        tt, ss, aa, uu = ev_t[a], ev_src[a], ev_atom[a], ev_u[a]
        b = a - 1
        while b >= 0 and ev_t[b] > tt:
            ev_t[b + 1] = ev_t[b]
            ev_src[b + 1] = ev_src[b]
            ev_atom[b + 1] = ev_atom[b]
            ev_u[b + 1] = ev_u[b]
            b -= 1
        ev_t[b + 1] = tt
        ev_src[b + 1] = ss
        ev_atom[b + 1] = aa
        ev_u[b + 1] = uu
    return n


@nb.njit(cache=True, nogil=True)
def apply_events(n, xbar, m, ev_src, ev_atom, ev_u, nu_z, mu_z, x, accepted, run):
    """Walk events in time order, thin branching candidates, add accepted jumps to ``x``.

    Thinning compares the mark against the running state ``xbar + accepted jumps``
    (``run`` is scratch space of length d).
    """
    d = xbar.shape[0]
    for j in range(d):
        run[j] = xbar[j]
    for e in range(n):
        src = ev_src[e]
        if src == 0:
            ok = True
        else:
            i = src - 1
            ri = run[i] if run[i] < m else m
            ok = ev_u[e] <= ri
        accepted[e] = ok
        if ok:
            a = ev_atom[e]
            for j in range(d):
                z = nu_z[a, j] if src == 0 else mu_z[src - 1, a, j]
                x[j] += z
                run[j] += z


# ---------------------------------------------------------------- one path


@nb.njit(cache=True, nogil=True)
def run_path(x0, eta, sigma, B, C, m1t, alpha, m,
             nu_tot, nu_cum, nu_z, mu_tot, mu_cum, mu_z, mu_k,
             dt, T, eps_hit, substep_cap, refine, x_cap, stop_mode, record_stride,
             key0, key1, pid, ctr, samples, x_out, face_out):
    """Simulate one path; returns ``(hit, hit_time, ext_time, exceeded, overflow, n_samples)``."""
    d = x0.shape[0]
    x = x0.copy()
    xn = np.empty(d)
    dr = np.empty(d)
    dW = np.empty(d)
    has_jumps = nu_tot > 0.0
    for i in range(d):
        if mu_k[i] > 0:
            has_jumps = True
    ev_t = np.empty(EVENT_CAPACITY)
    ev_src = np.empty(EVENT_CAPACITY, dtype=np.int64)
    ev_atom = np.empty(EVENT_CAPACITY, dtype=np.int64)
    ev_u = np.empty(EVENT_CAPACITY)
    accepted = np.empty(EVENT_CAPACITY, dtype=np.bool_)
    run = np.empty(d)

    hit = False
    hit_time = np.nan
    ext_time = np.nan
    exceeded = False
    overflow = False
    for i in range(d):
        face_out[i] = False

    n_rec = 0
    rec_cap = samples.shape[0]
    if record_stride > 0 and rec_cap > 0:
        samples[0, 0] = 0.0
        for i in range(d):
            samples[0, i + 1] = x[i]
        n_rec = 1

    n_base = int(math.ceil(T / dt - 1e-9))
    t = 0.0
    done = False
    for k in range(n_base):
        t_start = k * dt
        t_stop = (k + 1) * dt
        if t_stop > T or k == n_base - 1:
            t_stop = T
        span = t_stop - t_start
        elapsed = 0.0
        while elapsed < span:
            remaining = span - elapsed
            drift_full(x, eta, B, C, m1t, alpha, m, dr)
            h = choose_step(x, dr, sigma, remaining, substep_cap, refine)
            sq = math.sqrt(h)
            for i in range(d):
                dW[i] = sq * normal_at(key0, key1, pid, ctr[0])
                ctr[0] += 1
            diffusion_step(x, dr, sigma, m, h, dW, xn)
            elapsed = span if h == remaining else elapsed + h
            t_new = t_stop if elapsed == span else t_start + elapsed

            lo = xn[0]
            hi = xn[0]
            for i in range(1, d):
                if xn[i] < lo:
                    lo = xn[i]
                if xn[i] > hi:
                    hi = xn[i]
            if not hit and lo <= eps_hit:
                hit = True
                hit_time = t_new
                for i in range(d):
                    face_out[i] = xn[i] <= eps_hit
                if stop_mode == STOP_HIT:
                    done = True
            if hi <= eps_hit and math.isnan(ext_time):
                ext_time = t_new
                if stop_mode == STOP_EXTINCTION:
                    done = True

            if has_jumps and not done:
                n_ev = sample_window(x, t, h, m, nu_tot, nu_cum, mu_tot, mu_cum, mu_k,
                                     key0, key1, pid, ctr, ev_t, ev_src, ev_atom, ev_u)
                if n_ev < 0:
                    overflow = True
                    done = True
                elif n_ev > 0:
                    apply_events(n_ev, x, m, ev_src, ev_atom, ev_u, nu_z, mu_z, xn, accepted, run)

            for i in range(d):
                x[i] = xn[i]
                if not math.isfinite(x[i]) or x[i] > x_cap:
                    overflow = True
                    done = True
                if x[i] > m:
                    exceeded = True
                    done = True
            t = t_new
            if done:
                break
        if record_stride > 0 and n_rec < rec_cap and (done or (k + 1) % record_stride == 0 or k == n_base - 1):
            samples[n_rec, 0] = t
            for i in range(d):
                samples[n_rec, i + 1] = x[i]
            n_rec += 1
        if done:
            break
    for i in range(d):
        x_out[i] = x[i]
    return hit, hit_time, ext_time, exceeded, overflow, n_rec


@nb.njit(cache=True, nogil=True)
def run_batch(p0, p1, x0, eta, sigma, B, C, m1t, alpha, m,
              nu_tot, nu_cum, nu_z, mu_tot, mu_cum, mu_z, mu_k,
              dt, T, eps_hit, substep_cap, refine, x_cap, stop_mode, record_stride,
              key0, key1, ctr0,
              hit, hit_time, ext_time, exceeded, overflow, x_final, faces, samples, n_samples, counters):
    """Paths ``p0..p1-1``; outputs are indexed by path id."""
    d = x0.shape[0]
    no_rec = np.empty((0, d + 1))
    for p in range(p0, p1):
        ctr = ctr0.copy()
        rec = samples[p] if samples.shape[0] > 0 else no_rec
        res = run_path(x0, eta, sigma, B, C, m1t, alpha, m,
                       nu_tot, nu_cum, nu_z, mu_tot, mu_cum, mu_z, mu_k,
                       dt, T, eps_hit, substep_cap, refine, x_cap, stop_mode, record_stride,
                       key0, key1, p, ctr, rec, x_final[p], faces[p])
        hit[p] = res[0]
        hit_time[p] = res[1]
        ext_time[p] = res[2]
        exceeded[p] = res[3]
        overflow[p] = res[4]
        n_samples[p] = res[5]
        for c in range(4):
            counters[p, c] = ctr[c]


# ---------------------------------------------------------------- coupled runs


@nb.njit(cache=True, nogil=True)
def u_drift_kernel(u, bdiag, C, sigma, out):
    d = u.shape[0]
    for i in range(d):
        s = 0.0
        for j in range(d):
            s += C[i, j] * sigma[j] * u[j] * u[j]
        out[i] = 0.5 * bdiag[i] * u[i] + 0.25 * u[i] * s


@nb.njit(cache=True, nogil=True)
def run_zu_batch(p0, p1, x0, eta, sigma, B, C, dt, T, eps_hit, substep_cap, refine, x_cap, tol,
                 key0, key1, base, c_start, n_steps, violations, max_excess, hit_time, u_blowup):
    """Couple the square-root diffusion X with the comparison diffusion U through shared noise.

    After every base step before X reaches the boundary, a step counts as a
    violation if ``Z_i > U_i + tol`` for some i, with ``Z_i = 2 sqrt(X_i / (2 sigma_i))``.
    Outputs for path p go to index ``p - base``; Gaussian counters start at ``c_start``.
    """
    d = x0.shape[0]
    zeros = np.zeros(d)
    bdiag = np.empty(d)
    for i in range(d):
        bdiag[i] = B[i, i]
    inf = np.inf
    n_base = int(math.ceil(T / dt - 1e-9))
    for p in range(p0, p1):
        x = x0.copy()
        u = np.empty(d)
        for i in range(d):
            u[i] = 2.0 * math.sqrt(x0[i] / (2.0 * sigma[i]))
        xn = np.empty(d)
        dr = np.empty(d)
        du = np.empty(d)
        dW = np.empty(d)
        c0 = c_start
        steps = 0
        viol = 0
        mx = -inf
        ht = np.nan
        blow = False
        t = 0.0
        done = False
        for k in range(n_base):
            t_stop = (k + 1) * dt
            if t_stop > T or k == n_base - 1:
                t_stop = T
            span = t_stop - k * dt
            elapsed = 0.0
            while elapsed < span:
                remaining = span - elapsed
                drift_full(x, eta, B, C, zeros, zeros, inf, dr)
                u_drift_kernel(u, bdiag, C, sigma, du)
                h = choose_step(x, dr, sigma, remaining, substep_cap, refine)
                h = choose_step(u, du, sigma, h, substep_cap, 0.0)
                sq = math.sqrt(h)
                for i in range(d):
                    dW[i] = sq * normal_at(key0, key1, p, c0)
                    c0 += 1
                diffusion_step(x, dr, sigma, inf, h, dW, xn)
                for i in range(d):
                    x[i] = xn[i]
                    u[i] = u[i] + du[i] * h + dW[i]
                    if not math.isfinite(u[i]) or abs(u[i]) > x_cap:
                        blow = True
                elapsed = span if h == remaining else elapsed + h
                t = t_stop if elapsed == span else k * dt + elapsed
                lo = x[0]
                for i in range(1, d):
                    if x[i] < lo:
                        lo = x[i]
                if lo <= eps_hit:
                    ht = t
                    done = True
                    break
                if blow:
                    done = True
                    break
            if done:
                break
            steps += 1
            bad = False
            for i in range(d):
                z = 2.0 * math.sqrt(x[i] / (2.0 * sigma[i]))
                ex = z - u[i]
                if ex > mx:
                    mx = ex
                if ex > tol:
                    bad = True
            if bad:
                viol += 1
        q = p - base
        n_steps[q] = steps
        violations[q] = viol
        max_excess[q] = mx
        hit_time[q] = ht
        u_blowup[q] = blow


@nb.njit(cache=True, nogil=True)
def run_xy_batch(p0, p1, x0, eta, sigma, B, C, dt, T, eps_hit, substep_cap, refine, x_cap, tol,
                 key0, key1, n_steps, coord_viol, any_viol, x_final, y_final, overflow):
    """Couple X with independent single-type competitive diffusions Y_i through shared noise.

    ``dY_i = (eta_i + b_ii Y_i + c_ii Y_i^2) dt + sqrt(2 sigma_i Y_i) dW_i``. Runs to the horizon.
    """
    d = x0.shape[0]
    zeros = np.zeros(d)
    inf = np.inf
    Bd = np.zeros((d, d))
    Cd = np.zeros((d, d))
    for i in range(d):
        Bd[i, i] = B[i, i]
        Cd[i, i] = C[i, i]
    n_base = int(math.ceil(T / dt - 1e-9))
    for p in range(p0, p1):
        x = x0.copy()
        y = x0.copy()
        xn = np.empty(d)
        yn = np.empty(d)
        dr = np.empty(d)
        dy = np.empty(d)
        dW = np.empty(d)
        c0 = 0
        steps = 0
        tot = 0
        ovf = False
        t = 0.0
        for k in range(n_base):
            t_stop = (k + 1) * dt
            if t_stop > T or k == n_base - 1:
                t_stop = T
            span = t_stop - k * dt
            elapsed = 0.0
            while elapsed < span:
                remaining = span - elapsed
                drift_full(x, eta, B, C, zeros, zeros, inf, dr)
                drift_full(y, eta, Bd, Cd, zeros, zeros, inf, dy)
                h = choose_step(x, dr, sigma, remaining, substep_cap, refine)
                h = choose_step(y, dy, sigma, h, substep_cap, refine)
                sq = math.sqrt(h)
                for i in range(d):
                    dW[i] = sq * normal_at(key0, key1, p, c0)
                    c0 += 1
                diffusion_step(x, dr, sigma, inf, h, dW, xn)
                diffusion_step(y, dy, sigma, inf, h, dW, yn)
                for i in range(d):
                    x[i] = xn[i]
                    y[i] = yn[i]
                    if not (math.isfinite(x[i]) and math.isfinite(y[i])) or x[i] > x_cap or y[i] > x_cap:
                        ovf = True
                elapsed = span if h == remaining else elapsed + h
                t = t_stop if elapsed == span else k * dt + elapsed
                if ovf:
                    break
            if ovf:
                break
            steps += 1
            bad = False
            for i in range(d):
                if x[i] > y[i] + tol:
                    coord_viol[p, i] += 1
                    bad = True
            if bad:
                tot += 1
        n_steps[p] = steps
        any_viol[p] = tot
        overflow[p] = ovf
        for i in range(d):
            x_final[p, i] = x[i]
            y_final[p, i] = y[i]
