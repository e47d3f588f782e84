"""Compiled per-point kernels for rotation, propagation and the adjoint pass.

Every point is handled by the same scalar code path, so results do not
depend on how points are batched.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, inline="always")
def _factors(t2):
    t = math.sqrt(t2)
    if t == 0.0:
        return 1.0, 1.0, 0.5, 0.0
    h = math.sin(0.5 * t) / t
    return math.cos(t), math.sin(t) / t, 2.0 * h * h, t


@njit(cache=True, nogil=True, inline="always")
def _rot(mx, my, mz, vx, vy, vz):
    co, s, c, t = _factors(vx * vx + vy * vy + vz * vz)
    if t == 0.0:
        return mx, my, mz
    vm = vx * mx + vy * my + vz * mz
    cx = vy * mz - vz * my
    cy = vz * mx - vx * mz
    cz = vx * my - vy * mx
    return (co * mx + s * cx + c * vm * vx,
            co * my + s * cy + c * vm * vy,
            co * mz + s * cz + c * vm * vz)


@njit(cache=True, nogil=True)
def rotate_many(m, v):
    out = np.empty_like(m)
    for p in range(m.shape[0]):
        a, b, c = _rot(m[p, 0], m[p, 1], m[p, 2], v[p, 0], v[p, 1], v[p, 2])
        out[p, 0] = a
        out[p, 1] = b
        out[p, 2] = c
    return out


@njit(cache=True, nogil=True)
def propagate_points(steps, dt, det, scale, m0):
    n = steps.shape[0]
    out = np.empty((det.shape[0], 3))
    for p in range(det.shape[0]):
        mx, my, mz = m0[p, 0], m0[p, 1], m0[p, 2]
        sc = scale[p]
        for k in range(n):
            mx, my, mz = _rot(mx, my, mz, sc * steps[k, 0] * dt, sc * steps[k, 1] * dt,
                              (steps[k, 2] + det[p]) * dt)
        out[p, 0] = mx
        out[p, 1] = my
        out[p, 2] = mz
    return out


@njit(cache=True, nogil=True, inline="always")
def _dfactors(t):
    # s'(t)/t and c'(t)/t; the closed forms cancel badly for small t
    if t < 0.1:
        t2 = t * t
        t4 = t2 * t2
        f2 = -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0 + t4 * t2 / 45360.0
        f3 = -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0 + t4 * t2 / 453600.0
        return f2, f3
    st = math.sin(t)
    ct = math.cos(t)
    f2 = (t * ct - st) / (t * t * t)
    f3 = (t * st - 2.0 * (1.0 - ct)) / (t * t * t * t)
    return f2, f3


@njit(cache=True, nogil=True)
def value_and_grad_points(steps, dt, det, scale, w, tz):
    n = steps.shape[0]
    grad = np.zeros((n, 3))
    ms = np.empty((n + 1, 3))
    value = 0.0
    for p in range(det.shape[0]):
        sc = scale[p]
        ms[0, 0] = 0.0
        ms[0, 1] = 0.0
        ms[0, 2] = 1.0
        for k in range(n):
            a, b, c = _rot(ms[k, 0], ms[k, 1], ms[k, 2], sc * steps[k, 0] * dt,
                           sc * steps[k, 1] * dt, (steps[k, 2] + det[p]) * dt)
            ms[k + 1, 0] = a
            ms[k + 1, 1] = b
            ms[k + 1, 2] = c
        err = ms[n, 2] - tz[p]
        value += w[p] * err * err
        lx = 0.0
        ly = 0.0
        lz = 2.0 * w[p] * err
        for k in range(n - 1, -1, -1):
            vx = sc * steps[k, 0] * dt
            vy = sc * steps[k, 1] * dt
            vz = (steps[k, 2] + det[p]) * dt
            mx, my, mz = ms[k, 0], ms[k, 1], ms[k, 2]
            co, s, c, t = _factors(vx * vx + vy * vy + vz * vz)
            f2, f3 = _dfactors(t)
            vm = vx * mx + vy * my + vz * mz
            lv = lx * vx + ly * vy + lz * vz
            lm = lx * mx + ly * my + lz * mz
            lvm = (lx * (vy * mz - vz * my) + ly * (vz * mx - vx * mz)
                   + lz * (vx * my - vy * mx))
            a = -s * lm + f2 * lvm + f3 * lv * vm
            gx = a * vx + s * (my * lz - mz * ly) + c * (vm * lx + lv * mx)
            gy = a * vy + s * (mz * lx - mx * lz) + c * (vm * ly + lv * my)
            gz = a * vz + s * (mx * ly - my * lx) + c * (vm * lz + lv * mz)
            grad[k, 0] += dt * sc * gx
            grad[k, 1] += dt * sc * gy
            grad[k, 2] += dt * gz
            lx, ly, lz = _rot(lx, ly, lz, -vx, -vy, -vz)
    return value, grad
