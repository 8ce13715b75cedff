"""Bisection stepper kernel shared by the gas integrators.

One (possibly bisected) Euler-Maruyama step is processed iteratively
with an explicit stack: try the interval, and on rejection push both
halves with Brownian-bridge-refined noise.  Refinement normals come
from a counter-based hash stream (splitmix64 finalizer feeding a
Box-Muller transform) keyed by (seed, macro step, depth, index within
depth, particle), so refining one subinterval never perturbs sibling or
parent draws and paths are reproducible under adaptive refinement.
"""

from __future__ import annotations

import math

import numba
import numpy as np

MODE_REAL_X = 0
MODE_HALF_X = 1
MODE_HALF_LAMBDA = 2

_MASK = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_REFINE_SALT = 0xC2B2AE3D27D4EB4F
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 2.0 ** -53.0


def bridge_normal_reference(seed, step, depth, index, j):
    """Pure-python reference of the refinement stream (tests only)."""
    seed, step, depth, index, j = (int(v) for v in (seed, step, depth, index, j))

    def mix(z):
        z = (z + _GAMMA) & _MASK
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return z ^ (z >> 31)

    h = mix(seed ^ _REFINE_SALT)
    h = mix(h ^ step)
    h = mix(h ^ depth)
    h = mix(h ^ index)
    u1 = float((mix(h ^ (2 * j)) >> 11) + 1) * _INV_2_53
    u2 = float(mix(h ^ (2 * j + 1)) >> 11) * _INV_2_53
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)


@numba.njit(cache=True)
def _mix(z):
    z = z + np.uint64(_GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _bridge_normal(seed, step, depth, index, j):
    h = _mix(seed ^ np.uint64(_REFINE_SALT))
    h = _mix(h ^ step)
    h = _mix(h ^ np.uint64(depth))
    h = _mix(h ^ np.uint64(index))
    u1 = float((_mix(h ^ np.uint64(2 * j)) >> np.uint64(11)) + np.uint64(1)) * _INV_2_53
    u2 = float(_mix(h ^ np.uint64(2 * j + 1)) >> np.uint64(11)) * _INV_2_53
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)


@numba.njit(cache=True)
def _try_leaf(mode, x, dt, g, kappa, nu, guard_frac, coll_tol, prop):
    """Write the EM proposal into ``prop``; False when guard/constraints reject."""
    n = x.shape[0]
    if mode == MODE_HALF_LAMBDA:
        wall = 8.0 * (nu + 1.0)
        for i in range(n):
            li = x[i]
            s = 0.0
            for j in range(n):
                if j != i:
                    s += 1.0 / (li - x[j])
            inter = 16.0 * li * s
            clear = math.inf
            if i > 0:
                clear = li - x[i - 1]
            if i < n - 1:
                c2 = x[i + 1] - li
                if c2 < clear:
                    clear = c2
            if abs(inter) * dt > guard_frac * clear:
                return False
            prop[i] = li + (wall + inter) * dt + 2.0 * math.sqrt(kappa * li * dt) * g[i]
        tol2 = coll_tol * coll_tol
        for i in range(n):
            if prop[i] < tol2:
                return False
        for i in range(n - 1):
            if math.sqrt(prop[i + 1]) - math.sqrt(prop[i]) < coll_tol:
                return False
        return True

    sq = math.sqrt(kappa * dt)
    for i in range(n):
        xi = x[i]
        if mode == MODE_HALF_X:
            b = (8.0 * (nu + 1.0) - kappa) / (2.0 * xi)
            clear = xi
        else:
            b = 0.0
            clear = math.inf
        for j in range(n):
            if j != i:
                if mode == MODE_HALF_X:
                    b += 4.0 * (1.0 / (xi - x[j]) + 1.0 / (xi + x[j]))
                else:
                    b += 4.0 / (xi - x[j])
        if i > 0:
            c2 = xi - x[i - 1]
            if c2 < clear:
                clear = c2
        if i < n - 1:
            c2 = x[i + 1] - xi
            if c2 < clear:
                clear = c2
        if abs(b) * dt > guard_frac * clear:
            return False
        prop[i] = xi + b * dt + sq * g[i]
    if mode == MODE_HALF_X and prop[0] < coll_tol:
        return False
    for i in range(n - 1):
        if prop[i + 1] - prop[i] < coll_tol:
            return False
    return True


@numba.njit(cache=True)
def _advance_kernel(
    mode, state, dt, g0, kappa, nu, seed, step, max_depth, guard_frac, coll_tol
):
    n = state.shape[0]
    x = state.copy()
    prop = np.empty(n)
    # LIFO stack of pending subintervals; the left child is processed
    # first, so only right siblings along one descent are stored.
    depths = np.empty(max_depth + 2, dtype=np.int64)
    indices = np.empty(max_depth + 2, dtype=np.int64)
    gs = np.empty((max_depth + 2, n))
    top = 0
    depths[0] = 0
    indices[0] = 0
    for i in range(n):
        gs[0, i] = g0[i]
    splits = 0
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    g = np.empty(n)
    while top >= 0:
        depth = depths[top]
        index = indices[top]
        for i in range(n):
            g[i] = gs[top, i]
        top -= 1
        dt_k = dt * 2.0 ** (-float(depth))
        if _try_leaf(mode, x, dt_k, g, kappa, nu, guard_frac, coll_tol, prop):
            for i in range(n):
                x[i] = prop[i]
            continue
        if depth >= max_depth:
            return False, splits
        splits += 1
        top += 1
        depths[top] = depth + 1
        indices[top] = 2 * index + 1
        for i in range(n):
            xi = _bridge_normal(seed, step, depth, index, i)
            gs[top, i] = (g[i] - xi) * inv_sqrt2
            g[i] = (g[i] + xi) * inv_sqrt2
        top += 1
        depths[top] = depth + 1
        indices[top] = 2 * index
        for i in range(n):
            gs[top, i] = g[i]
    for i in range(n):
        state[i] = x[i]
    return True, splits


def advance(mode, state, dt, g, kappa, nu, seed, step, max_depth, guard_frac, coll_tol):
    """Advance ``state`` by dt with adaptive bisection.

    Returns (ok, splits, state'); ok False means the bisection hit
    max_depth and the returned state equals the input.
    """
    state = np.ascontiguousarray(state, dtype=float)
    g = np.ascontiguousarray(g, dtype=float)
    ok, splits = _advance_kernel(
        mode, state, float(dt), g, float(kappa), float(nu),
        np.uint64(int(seed) & _MASK), np.uint64(int(step)),
        max_depth, float(guard_frac), float(coll_tol),
    )
    return bool(ok), int(splits), state
