"""Numba step kernels.

All kernels consume pre-drawn random arrays (normals indexed one per step,
uniforms through a moving pointer) so that the sequence of generator calls in
the driver fully determines the path.  Kernels return early with a resume
status when a random array is nearly exhausted; drivers top up and call again,
which keeps replay byte-exact.

Drift is a cubic polynomial c0 + c1 x + c2 x^2 + c3 x^3 and jumps are additive
(displacement sigma_l * r); models outside that envelope use the slow python
stepper in simulate.py.
"""

import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_OVERFLOW = 1
STATUS_NEED_RANDOM = 2
STATUS_NONFINITE = 3
STATUS_HIT_A = 11
STATUS_HIT_B = 12
# transition path process terminal states
TPP_RUNNING = 0
TPP_HIT_B = 1
TPP_FLOOR = 2
TPP_ENTERED_A = 3
TPP_TIMEOUT = 4
TPP_NONFINITE = 5
TPP_REC_OVERFLOW = 6
TPP_MAJORANT = 7

_RESERVE = 512  # uniforms a single step may consume, upper bound


@njit(cache=True, nogil=True, inline="always")
def _drift(x, c0, c1, c2, c3):
    return c0 + x * (c1 + x * (c2 + x * c3))


@njit(cache=True, nogil=True, inline="always")
def _interp_clamped(x, lo, inv_dx, v):
    t = (x - lo) * inv_dx
    if t <= 0.0:
        return v[0]
    n1 = v.shape[0] - 1
    if t >= n1:
        return v[n1]
    j = int(t)
    th = t - j
    return v[j] * (1.0 - th) + v[j + 1] * th


@njit(cache=True, nogil=True, inline="always")
def _poisson_count(u, pcum):
    k = 0
    m = pcum.shape[0]
    while k < m and u > pcum[k]:
        k += 1
    return k


@njit(cache=True, nogil=True)
def path_block(x, c0, c1, c2, c3, sig, sl, bcomp, dt, nsteps,
               normals, us, pcum, mu, mr,
               lj_step, lj_disp, lj_r,
               states, flags, off,
               ev_step, ev_r, ev_disp, n_ev,
               abs_step0):
    """Advance nsteps, recording states, per-step jump flags, and jump events.

    Returns (status, steps_done, uptr, n_ev, x).
    """
    uptr = 0
    ulen = us.shape[0]
    ev_cap = ev_step.shape[0]
    sqdt = math.sqrt(dt)
    ljp = 0
    nlj = lj_step.shape[0]
    for i in range(nsteps):
        if uptr + _RESERVE > ulen:
            return STATUS_NEED_RANDOM, i, uptr, n_ev, x
        abs_step = abs_step0 + i
        x = x + (_drift(x, c0, c1, c2, c3) - bcomp) * dt + sig * sqdt * normals[i]
        flag = 0
        nj = _poisson_count(us[uptr], pcum)
        uptr += 1
        for _ in range(nj):
            if n_ev >= ev_cap:
                return STATUS_OVERFLOW, i, uptr, n_ev, x
            r = np.interp(us[uptr], mu, mr)
            uptr += 1
            d = sl * r
            x += d
            ev_step[n_ev] = abs_step
            ev_r[n_ev] = r
            ev_disp[n_ev] = d
            n_ev += 1
            flag = 1
        while ljp < nlj and lj_step[ljp] == abs_step:
            if n_ev >= ev_cap:
                return STATUS_OVERFLOW, i, uptr, n_ev, x
            x += lj_disp[ljp]
            ev_step[n_ev] = abs_step
            ev_r[n_ev] = lj_r[ljp]
            ev_disp[n_ev] = lj_disp[ljp]
            n_ev += 1
            flag = 1
            ljp += 1
        if not math.isfinite(x):
            return STATUS_NONFINITE, i, uptr, n_ev, x
        states[off + i + 1] = x
        flags[off + i + 1] = flag
    return STATUS_OK, nsteps, uptr, n_ev, x


@njit(cache=True, nogil=True)
def untilhit_block(x, c0, c1, c2, c3, sig, sl, bcomp, dt, nsteps,
                   normals, us, pcum, mu, mr,
                   has_a, a_lo, a_hi, has_b, b_lo, b_hi):
    """Step until an end-of-step (or post-jump) state lies in a target closure.

    Returns (status, steps_done, uptr, x_end, pre_jump, hit_by_jump);
    steps_done counts the hitting step.  pre_jump is the left limit when the
    entry happened through a jump, NaN otherwise.
    """
    uptr = 0
    ulen = us.shape[0]
    sqdt = math.sqrt(dt)
    for i in range(nsteps):
        if uptr + _RESERVE > ulen:
            return STATUS_NEED_RANDOM, i, uptr, x, np.nan, False
        x = x + (_drift(x, c0, c1, c2, c3) - bcomp) * dt + sig * sqdt * normals[i]
        if has_a and a_lo <= x <= a_hi:
            return STATUS_HIT_A, i + 1, uptr, x, np.nan, False
        if has_b and b_lo <= x <= b_hi:
            return STATUS_HIT_B, i + 1, uptr, x, np.nan, False
        nj = _poisson_count(us[uptr], pcum)
        uptr += 1
        for _ in range(nj):
            r = np.interp(us[uptr], mu, mr)
            uptr += 1
            x_before = x
            x += sl * r
            if has_a and a_lo <= x <= a_hi:
                return STATUS_HIT_A, i + 1, uptr, x, x_before, True
            if has_b and b_lo <= x <= b_hi:
                return STATUS_HIT_B, i + 1, uptr, x, x_before, True
        if not math.isfinite(x):
            return STATUS_NONFINITE, i + 1, uptr, x, np.nan, False
    return STATUS_OK, nsteps, uptr, x, np.nan, False


@njit(cache=True, nogil=True)
def reactive_block(c0, c1, c2, c3, sig, sl, bcomp, dt, nsteps,
                   normals, us, pcum, mu, mr,
                   a_lo, a_hi, b_lo, b_hi,
                   h_lo, h_inv_dx, hist, last_a, last_b,
                   q_lo, q_inv_dx, qv, q_level,
                   fst, ist,
                   rec_dir, rec_exit_step, rec_ent_step,
                   rec_exit_x, rec_start_x, rec_ent_x, rec_cross_x):
    """Single fused pass: step the SDE, bin the state, run the last-touched
    automaton, and extract transition records, without storing the path.

    fst: [x, cand_exit_x, cand_start_x, cross_x, -, -]
    ist: [last, phase, cand_exit_step, crossed, n_trans, reactive_steps_ab,
          cur_step, direct_hops, reactive_steps_ba, -]
    phase: 0 in A, 1 in B, 2 outside coming from A, 3 outside coming from B,
           4 outside and never touched either set.
    Returns (status, steps_done, uptr).  On OVERFLOW/NONFINITE the caller must
    restore its pre-block snapshot of fst/ist/hist arrays before retrying.
    """
    uptr = 0
    ulen = us.shape[0]
    sqdt = math.sqrt(dt)
    nbins = hist.shape[0]
    cap = rec_dir.shape[0]
    x = fst[0]
    for i in range(nsteps):
        if uptr + _RESERVE > ulen:
            fst[0] = x
            return STATUS_NEED_RANDOM, i, uptr
        x_prev = x
        x = x + (_drift(x, c0, c1, c2, c3) - bcomp) * dt + sig * sqdt * normals[i]
        nj = _poisson_count(us[uptr], pcum)
        uptr += 1
        for _ in range(nj):
            r = np.interp(us[uptr], mu, mr)
            uptr += 1
            x += sl * r
        if not math.isfinite(x):
            return STATUS_NONFINITE, i, uptr
        step = ist[6] + 1
        in_a = a_lo <= x <= a_hi
        in_b = b_lo <= x <= b_hi
        ph = ist[1]
        if ph == 0:
            if in_b:
                # one-step hop straight into B: exit, start and entrance merge
                if ist[4] >= cap:
                    return STATUS_OVERFLOW, i, uptr
                n = ist[4]
                rec_dir[n] = 0
                rec_exit_step[n] = step - 1
                rec_ent_step[n] = step
                rec_exit_x[n] = x_prev
                rec_start_x[n] = x
                rec_ent_x[n] = x
                rec_cross_x[n] = x
                ist[4] = n + 1
                ist[5] += 1
                ist[7] += 1
                ist[1] = 1
            elif not in_a:
                ist[1] = 2
                ist[2] = step - 1
                fst[1] = x_prev
                fst[2] = x
                qx = _interp_clamped(x, q_lo, q_inv_dx, qv)
                if qx >= q_level:
                    ist[3] = 1
                    fst[3] = x
                else:
                    ist[3] = 0
        elif ph == 2:
            if in_a:
                ist[1] = 0
            elif in_b:
                if ist[4] >= cap:
                    return STATUS_OVERFLOW, i, uptr
                n = ist[4]
                rec_dir[n] = 0
                rec_exit_step[n] = ist[2]
                rec_ent_step[n] = step
                rec_exit_x[n] = fst[1]
                rec_start_x[n] = fst[2]
                rec_ent_x[n] = x
                if ist[3] == 1:
                    rec_cross_x[n] = fst[3]
                else:
                    rec_cross_x[n] = x
                ist[4] = n + 1
                ist[5] += step - ist[2]
                ist[1] = 1
            elif ist[3] == 0:
                qx = _interp_clamped(x, q_lo, q_inv_dx, qv)
                if qx >= q_level:
                    ist[3] = 1
                    fst[3] = x
        elif ph == 1:
            if in_a:
                if ist[4] >= cap:
                    return STATUS_OVERFLOW, i, uptr
                n = ist[4]
                rec_dir[n] = 1
                rec_exit_step[n] = step - 1
                rec_ent_step[n] = step
                rec_exit_x[n] = x_prev
                rec_start_x[n] = x
                rec_ent_x[n] = x
                rec_cross_x[n] = np.nan
                ist[4] = n + 1
                ist[8] += 1
                ist[7] += 1
                ist[1] = 0
            elif not in_b:
                ist[1] = 3
                ist[2] = step - 1
                fst[1] = x_prev
                fst[2] = x
        elif ph == 3:
            if in_b:
                ist[1] = 1
            elif in_a:
                if ist[4] >= cap:
                    return STATUS_OVERFLOW, i, uptr
                n = ist[4]
                rec_dir[n] = 1
                rec_exit_step[n] = ist[2]
                rec_ent_step[n] = step
                rec_exit_x[n] = fst[1]
                rec_start_x[n] = fst[2]
                rec_ent_x[n] = x
                rec_cross_x[n] = np.nan
                ist[4] = n + 1
                ist[8] += step - ist[2]
                ist[1] = 0
        else:  # never touched either set yet
            if in_a:
                ist[1] = 0
            elif in_b:
                ist[1] = 1
        if in_a:
            ist[0] = 0
        elif in_b:
            ist[0] = 1
        ist[6] = step
        hb = int((x - h_lo) * h_inv_dx)
        if 0 <= hb < nbins:
            hist[hb] += 1
            if ist[0] == 0:
                last_a[hb] += 1
            elif ist[0] == 1:
                last_b[hb] += 1
    fst[0] = x
    return STATUS_OK, nsteps, uptr


@njit(cache=True, nogil=True, inline="always")
def _window_mq(y, q_lo, q_inv_dx, n1, mqv):
    """Majorant of the committor over everything within jump reach of y."""
    tj = (y - q_lo) * q_inv_dx
    if tj <= 0.0:
        j = 0
    elif tj >= n1:
        j = n1 - 1
    else:
        j = int(tj)
    if mqv[j + 1] > mqv[j]:
        return mqv[j + 1]
    return mqv[j]


@njit(cache=True, nogil=True, inline="always")
def _tilted_drift(y, q_lo, q_inv_dx, n1, qv, bv, sig2):
    """K(y) = (b - int F nu) + Sigma q'/q with q piecewise linear.

    Inside the cell next to the source-set wall the linear committor makes
    the quotient term sig2/(distance to the zero node), the exact repelling
    boundary drift of the conditioned diffusion; interpolating a precomputed
    K table instead would flatten that divergence and let paths be absorbed.
    """
    tj = (y - q_lo) * q_inv_dx
    if tj <= 0.0:
        j = 0
        th = 0.0
    elif tj >= n1:
        j = n1 - 1
        th = 1.0
    else:
        j = int(tj)
        th = tj - j
    qy = qv[j] * (1.0 - th) + qv[j + 1] * th
    k = bv[j] * (1.0 - th) + bv[j + 1] * th
    if qy > 0.0:
        k += sig2 * (qv[j + 1] - qv[j]) * q_inv_dx / qy
    if k > 1e12:
        k = 1e12
    elif k < -1e12:
        k = -1e12
    return k


@njit(cache=True, nogil=True)
def tpp_path_block(fst, ist, dt, cap_t,
                   sig, sl, mass, mu, mr,
                   q_lo, q_inv_dx, qv, bv, mqv,
                   a_lo, a_hi, b_lo, b_hi,
                   q_stop, q_level,
                   ck0, ck1,
                   disp_cap, rate_cap, bdry_c,
                   has_lj, lj_mass, lj_sl, lj_mu, lj_mr, lj_mqv,
                   us, rec_y, rec_dt):
    """One path of the committor-tilted transition path process.

    Substeps adapt to three caps: |K| dt_sub <= disp_cap, candidate jump rate
    times dt_sub <= rate_cap, and sig*sqrt(dt_sub) <= bdry_c * dist(y, A) so
    the diffusive move cannot overshoot the repelling boundary.  Candidate
    jumps are proposed from the base mark table and accepted with probability
    q(dest)/qmax_window, which realizes marks tilted by the committor at the
    destination exactly; jumps into A have q(dest)=0 and are never accepted.

    fst: [y, t, cross_x, q_at_ck0, q_at_ck1, y_terminal]
    ist: [crossed, ck_stage, n_jumps, rec_count, substeps]
    Returns (status, uptr).  TPP_RUNNING means the uniform array ran out;
    top it up and call again with the same state vectors.
    """
    uptr = 0
    ulen = us.shape[0]
    y = fst[0]
    t = fst[1]
    n1 = qv.shape[0] - 1
    rec_cap = rec_y.shape[0]
    sig2 = sig * sig
    status = TPP_RUNNING
    while True:
        if uptr + _RESERVE > ulen:
            fst[0] = y
            fst[1] = t
            return TPP_RUNNING, uptr
        # pre-move tables: drift for the Euler move, rates for step-size control
        qy = _interp_clamped(y, q_lo, q_inv_dx, qv)
        k = _tilted_drift(y, q_lo, q_inv_dx, n1, qv, bv, sig2)
        mq = _window_mq(y, q_lo, q_inv_dx, n1, mqv)
        rate = mass * mq / qy
        if has_lj:
            rate += lj_mass * _window_mq(y, q_lo, q_inv_dx, n1, lj_mqv) / qy
        dts = dt
        ak = abs(k)
        if ak * dts > disp_cap:
            dts = disp_cap / ak
        if rate * dts > rate_cap:
            dts = rate_cap / rate
        if sig > 0.0:
            da = y - a_hi
            if a_lo - y > da:
                da = a_lo - y
            if da > 0.0:
                cap_d = bdry_c * bdry_c * da * da / sig2
                if dts > cap_d:
                    dts = cap_d
        if dts < 1e-9:
            dts = 1e-9
        if ist[1] == 0:
            if ck0 > t and t + dts > ck0:
                dts = ck0 - t
        elif ist[1] == 1:
            if ck1 > t and t + dts > ck1:
                dts = ck1 - t
        if t + dts > cap_t:
            dts = cap_t - t
            if dts <= 0.0:
                status = TPP_TIMEOUT
                break
        u1 = 1.0 - us[uptr]
        u2 = us[uptr + 1]
        uptr += 2
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(6.283185307179586 * u2)
        y = y + k * dts + sig * math.sqrt(dts) * z
        t += dts
        if not math.isfinite(y):
            status = TPP_NONFINITE
            break
        if b_lo <= y <= b_hi:
            status = TPP_HIT_B
            break
        if a_lo <= y <= a_hi:
            status = TPP_ENTERED_A
            break
        # candidate counts use the post-move state, the launch point of the
        # splitting; the majorant is refreshed per candidate so the committor
        # acceptance ratio is a probability for every reachable destination
        qy = _interp_clamped(y, q_lo, q_inv_dx, qv)
        lam = mass * _window_mq(y, q_lo, q_inv_dx, n1, mqv) / qy * dts
        p = math.exp(-lam)
        cum = p
        u = us[uptr]
        uptr += 1
        nc = 0
        while u > cum and nc < 64:
            nc += 1
            p *= lam / nc
            cum += p
        for _ in range(nc):
            r = np.interp(us[uptr], mu, mr)
            dest = y + sl * r
            qd = _interp_clamped(dest, q_lo, q_inv_dx, qv)
            mqc = _window_mq(y, q_lo, q_inv_dx, n1, mqv)
            if qd > mqc:
                status = TPP_MAJORANT
            elif us[uptr + 1] * mqc < qd:
                y = dest
                ist[2] += 1
                if b_lo <= y <= b_hi:
                    status = TPP_HIT_B
            uptr += 2
            if status != TPP_RUNNING:
                break
        if status != TPP_RUNNING:
            break
        if has_lj:
            lam = lj_mass * _window_mq(y, q_lo, q_inv_dx, n1, lj_mqv) / qy * dts
            p = math.exp(-lam)
            cum = p
            u = us[uptr]
            uptr += 1
            nc = 0
            while u > cum and nc < 64:
                nc += 1
                p *= lam / nc
                cum += p
            for _ in range(nc):
                r = np.interp(us[uptr], lj_mu, lj_mr)
                dest = y + lj_sl * r
                qd = _interp_clamped(dest, q_lo, q_inv_dx, qv)
                mqc = _window_mq(y, q_lo, q_inv_dx, n1, lj_mqv)
                if qd > mqc:
                    status = TPP_MAJORANT
                elif us[uptr + 1] * mqc < qd:
                    y = dest
                    ist[2] += 1
                    if b_lo <= y <= b_hi:
                        status = TPP_HIT_B
                uptr += 2
                if status != TPP_RUNNING:
                    break
            if status != TPP_RUNNING:
                break
        ist[4] += 1
        qy = _interp_clamped(y, q_lo, q_inv_dx, qv)
        if ist[0] == 0 and qy >= q_level:
            ist[0] = 1
            fst[2] = y
        if ist[1] == 0 and t >= ck0 - 1e-15:
            fst[3] = qy
            ist[1] = 1
        if ist[1] == 1 and t >= ck1 - 1e-15:
            fst[4] = qy
            ist[1] = 2
        if rec_dt > 0.0:
            while t >= ist[3] * rec_dt - 1e-15:
                if ist[3] >= rec_cap:
                    status = TPP_REC_OVERFLOW
                    break
                rec_y[ist[3]] = y
                ist[3] += 1
            if status != TPP_RUNNING:
                break
        if qy < q_stop:
            status = TPP_FLOOR
            break
    # common terminal bookkeeping
    ist[4] += 1
    if status == TPP_HIT_B and ist[0] == 0:
        ist[0] = 1
        fst[2] = y
    fst[0] = y
    fst[1] = t
    fst[5] = y
    return status, uptr
