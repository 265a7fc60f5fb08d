"""Compiled inner loops.  Callers validate inputs; nothing here allocates per node."""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def sl_step_1d(u_next, run_cost, inv2a, dt, vel, k, th, edge, u_now, vidx):
    """One discrete Lax-Oleinik step on a 1D periodic grid.

    ``u_now[i] = min_j dt*vel[j]^2*inv2a[i] + I[u_next](x_i + dt*vel[j]) + run_cost[i]``.
    The foot-point offset of velocity ``j`` is ``k[j]`` cells plus a fraction
    ``th[j]``.  Returns the first node whose argmin lies on the box edge, or -1.
    """
    n = u_next.shape[0]
    nv = vel.shape[0]
    lo = 0
    hi = 0
    for j in range(nv):
        lo = min(lo, k[j])
        hi = max(hi, k[j] + 1)
    # wrap-padded copy so the inner loop needs no modulo
    buf = np.empty(n + hi - lo)
    for p in range(buf.shape[0]):
        buf[p] = u_next[(p + lo) % n]
    quad = np.empty(nv)
    for j in range(nv):
        quad[j] = dt * vel[j] * vel[j]
    hit = -1
    for i in range(n):
        best = np.inf
        bj = 0
        ai = inv2a[i]
        base = i - lo
        for j in range(nv):
            i0 = base + k[j]
            cost = quad[j] * ai + (1.0 - th[j]) * buf[i0] + th[j] * buf[i0 + 1]
            if cost < best or (cost == best and abs(vel[j]) < abs(vel[bj])):
                best = cost
                bj = j
        u_now[i] = best + run_cost[i]
        vidx[i] = bj
        if edge[bj] and hit < 0:
            hit = i
    return hit


@njit(cache=True)
def sl_step_2d(u_next, run_cost, inv2a, dt, vel, k, th, edge, u_now, vidx):
    """2D analogue of :func:`sl_step_1d` over the product velocity grid.

    ``vidx`` has shape ``(2, n, n)`` and stores the per-axis velocity indices.
    Returns the flat index of the first node hitting the box edge, or -1.
    """
    n = u_next.shape[0]
    nv = vel.shape[0]
    hit = -1
    for i in range(n):
        for l in range(n):
            best = np.inf
            bj = 0
            bq = 0
            for j in range(nv):
                i0 = (i + k[j]) % n
                i1 = (i0 + 1) % n
                tx = th[j]
                for q in range(nv):
                    l0 = (l + k[q]) % n
                    l1 = (l0 + 1) % n
                    ty = th[q]
                    val = (
                        (1.0 - tx) * (1.0 - ty) * u_next[i0, l0]
                        + tx * (1.0 - ty) * u_next[i1, l0]
                        + (1.0 - tx) * ty * u_next[i0, l1]
                        + tx * ty * u_next[i1, l1]
                    )
                    sp = vel[j] * vel[j] + vel[q] * vel[q]
                    cost = dt * sp * inv2a[i, l] + val
                    if cost < best or (
                        cost == best and sp < vel[bj] * vel[bj] + vel[bq] * vel[bq]
                    ):
                        best = cost
                        bj = j
                        bq = q
            u_now[i, l] = best + run_cost[i, l]
            vidx[0, i, l] = bj
            vidx[1, i, l] = bq
            if (edge[bj] or edge[bq]) and hit < 0:
                hit = i * n + l
    return hit


@njit(cache=True)
def hj_backward_1d(u_final, run_cost, inv2a, dt, vel, k, th, edge, u_out, vidx_out):
    """Full backward sweep; returns ``(time_index, node)`` of a box hit or ``(-1, -1)``."""
    nt = run_cost.shape[0] - 1
    u_out[nt, :] = u_final
    for t in range(nt - 1, -1, -1):
        hit = sl_step_1d(u_out[t + 1], run_cost[t], inv2a, dt, vel, k, th, edge, u_out[t], vidx_out[t])
        if hit >= 0:
            return t, hit
    return -1, -1


@njit(cache=True)
def hj_backward_2d(u_final, run_cost, inv2a, dt, vel, k, th, edge, u_out, vidx_out):
    nt = run_cost.shape[0] - 1
    u_out[nt, :, :] = u_final
    for t in range(nt - 1, -1, -1):
        hit = sl_step_2d(u_out[t + 1], run_cost[t], inv2a, dt, vel, k, th, edge, u_out[t], vidx_out[t])
        if hit >= 0:
            return t, hit
    return -1, -1


@njit(cache=True)
def _upwind_pass_1d(m, c):
    # c = tau * b / h per node; node-velocity donor cell, positive when |c| <= 1
    n = m.shape[0]
    out = m.copy()
    for i in range(n):
        if c[i] > 0.0:
            f = m[i] * c[i]
            out[i] -= f
            out[(i + 1) % n] += f
        elif c[i] < 0.0:
            f = -m[i] * c[i]
            out[i] -= f
            out[(i - 1) % n] += f
    return out


@njit(cache=True)
def upwind_step_1d(m, b, dt, h, cfl):
    """Donor-cell step with CFL sub-stepping; returns ``(m_new, substeps)``."""
    bmax = 0.0
    for i in range(b.shape[0]):
        bmax = max(bmax, abs(b[i]))
    nsub = max(1, int(math.ceil(dt * bmax / (cfl * h) - 1e-12)))
    c = b * (dt / nsub / h)
    out = m.copy()
    for _ in range(nsub):
        out = _upwind_pass_1d(out, c)
    return out, nsub


@njit(cache=True)
def upwind_step_2d(m, b, dt, h, cfl, x_first):
    bmax = 0.0
    for ax in range(2):
        for i in range(m.shape[0]):
            for l in range(m.shape[1]):
                bmax = max(bmax, abs(b[ax, i, l]))
    nsub = max(1, int(math.ceil(dt * bmax / (cfl * h) - 1e-12)))
    cx = b[0] * (dt / nsub / h)
    cy = b[1] * (dt / nsub / h)
    out = m.copy()
    n0, n1 = m.shape
    for s in range(nsub):
        for p in range(2):
            ax = p if x_first else 1 - p
            if ax == 0:
                for l in range(n1):
                    out[:, l] = _upwind_pass_1d(out[:, l].copy(), cx[:, l].copy())
            else:
                for i in range(n0):
                    out[i, :] = _upwind_pass_1d(out[i, :].copy(), cy[i, :].copy())
    return out, nsub


@njit(cache=True)
def upwind_forward_1d(m0, b, dt, h, cfl, out):
    """March ``m0`` through ``b.shape[0]`` steps; returns the total substep count."""
    out[0, :] = m0
    total = 0
    for t in range(b.shape[0]):
        m, nsub = upwind_step_1d(out[t], b[t], dt, h, cfl)
        out[t + 1, :] = m
        total += nsub
    return total


@njit(cache=True)
def pushforward_1d(m, b, dt, h):
    """Move each node's mass to ``x_i + dt*b_i`` with linear deposit weights."""
    n = m.shape[0]
    out = np.zeros_like(m)
    for i in range(n):
        s = i + dt * b[i] / h
        k0 = int(math.floor(s))
        t = s - k0
        i0 = k0 % n
        out[i0] += (1.0 - t) * m[i]
        out[(i0 + 1) % n] += t * m[i]
    return out


@njit(cache=True)
def pushforward_2d(m, b, dt, h):
    n0, n1 = m.shape
    out = np.zeros_like(m)
    for i in range(n0):
        for l in range(n1):
            sx = i + dt * b[0, i, l] / h
            sy = l + dt * b[1, i, l] / h
            kx = int(math.floor(sx))
            ky = int(math.floor(sy))
            tx = sx - kx
            ty = sy - ky
            i0 = kx % n0
            l0 = ky % n1
            i1 = (i0 + 1) % n0
            l1 = (l0 + 1) % n1
            w = m[i, l]
            out[i0, l0] += (1 - tx) * (1 - ty) * w
            out[i1, l0] += tx * (1 - ty) * w
            out[i0, l1] += (1 - tx) * ty * w
            out[i1, l1] += tx * ty * w
    return out


@njit(cache=True)
def pushforward_forward_1d(m0, b, dt, h, out):
    out[0, :] = m0
    for t in range(b.shape[0]):
        out[t + 1, :] = pushforward_1d(out[t], b[t], dt, h)


@njit(cache=True)
def _simplex_project(y, total, out):
    u = np.sort(y)[::-1]
    css = 0.0
    tau = 0.0
    for k in range(u.shape[0]):
        css += u[k]
        t = (css - total) / (k + 1)
        if u[k] > t:
            tau = t
    for k in range(y.shape[0]):
        out[k] = max(y[k] - tau, 0.0)


@njit(cache=True)
def _potential_grad(KS, x, V, family, kappa, g, sigma, w, z, out):
    n, s = KS.shape
    for i in range(n):
        acc = 0.0
        for j in range(s):
            acc += KS[i, j] * x[j]
        if family == 0:
            z[i] = kappa * acc + g[i]
        elif family == 1:
            z[i] = acc + 0.5 * sigma * math.sin(acc) * w[i]
        else:
            z[i] = 0.0
    for j in range(s):
        acc = V[j]
        for i in range(n):
            acc += KS[i, j] * z[i]
        out[j] = acc


@njit(cache=True)
def fista_simplex(KS, V, family, kappa, g, sigma, w, x, total, step, tol, vol, max_iter, check_every):
    """Accelerated projected gradient for ``V.x + Psi(x)`` on a scaled simplex.

    ``KS`` holds the convolution columns of the free nodes (symmetric kernel).
    Restarts the momentum when the step goes uphill.  Returns the final
    Frank-Wolfe gap and the iteration count; ``x`` is updated in place.
    """
    n, s = KS.shape
    z = np.empty(n)
    gy = np.empty(s)
    y = x.copy()
    xn = np.empty(s)
    trial = np.empty(s)
    tk = 1.0
    gap = np.inf
    it = 0
    while it < max_iter:
        it += 1
        _potential_grad(KS, y, V, family, kappa, g, sigma, w, z, gy)
        for j in range(s):
            trial[j] = y[j] - step * gy[j]
        _simplex_project(trial, total, xn)
        up = 0.0
        for j in range(s):
            up += gy[j] * (xn[j] - x[j])
        if up > 0.0 and tk > 1.0:
            y[:] = x
            tk = 1.0
            continue
        tn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
        c = (tk - 1.0) / tn
        for j in range(s):
            y[j] = xn[j] + c * (xn[j] - x[j])
            x[j] = xn[j]
        tk = tn
        if it % check_every == 0:
            _potential_grad(KS, x, V, family, kappa, g, sigma, w, z, gy)
            lo = np.inf
            dot = 0.0
            for j in range(s):
                dot += gy[j] * x[j]
                lo = min(lo, gy[j])
            gap = dot * vol - lo
            if gap < tol:
                break
    return gap, it
