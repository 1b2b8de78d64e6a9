"""Compiled inner loops shared by EVI and the multiplier search.

All numba kernels live in this one module: numba's on-disk cache is keyed on
the defining file, so keeping callers and callees together means any edit
invalidates every dependent compiled function.
"""

import math

import numpy as np
from numba import njit

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@njit(cache=True, inline="always")
def _order_desc(values, order):
    # insertion sort, descending, lower index first among ties
    n = values.shape[0]
    for k in range(n):
        order[k] = k
    for k in range(1, n):
        cur = order[k]
        j = k - 1
        while j >= 0 and values[order[j]] < values[cur]:
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = cur


@njit(cache=True, inline="always")
def _inner_max(center, radius, values, order, out):
    n = center.shape[0]
    for k in range(n):
        out[k] = center[k]
    best = order[0]
    top = values[best]
    below = 0.0
    for k in range(n):
        if values[k] < top:
            below += center[k]
    if below <= 0.0:
        return
    if radius / 2.0 >= min(1.0 - center[best], below):
        # the ball is not binding: drain every lower state exactly
        out[best] += below
        for k in range(n):
            if values[k] < top:
                out[k] = 0.0
        return
    add = radius / 2.0
    out[best] += add
    left = add
    for j in range(n - 1, 0, -1):
        s = order[j]
        if values[s] >= top:
            break
        take = min(out[s], left)
        out[s] -= take
        left -= take
        if left <= 0.0:
            break


@njit(cache=True, inline="always")
def _optimistic_mean(center, radius, values, order):
    # value of _inner_max's maximizer without materializing the row
    n = center.shape[0]
    best = order[0]
    top = values[best]
    mean = 0.0
    below = 0.0
    for k in range(n):
        mean += center[k] * values[k]
        if values[k] < top:
            below += center[k]
    if below <= 0.0:
        return mean
    if radius / 2.0 >= min(1.0 - center[best], below):
        mean += below * top
        for k in range(n):
            if values[k] < top:
                mean -= center[k] * values[k]
        return mean
    add = radius / 2.0
    mean += add * top
    left = add
    for j in range(n - 1, 0, -1):
        s = order[j]
        if values[s] >= top:
            break
        take = min(center[s], left)
        mean -= take * values[s]
        left -= take
        if left <= 0.0:
            break
    return mean


@njit(cache=True)
def _evi_arm(centers, radii, rewards, lam, gamma, tol, max_iters, q, kernel, deltas):
    n_s = centers.shape[0]
    q[:, :] = 0.0
    values = np.zeros(n_s)
    order = np.zeros(n_s, dtype=np.int64)
    low = np.zeros(n_s, dtype=np.int64)
    sweeps = 0
    for u in range(max_iters):
        for s in range(n_s):
            values[s] = max(q[s, 0], q[s, 1])
        _order_desc(values, order)
        # per-sweep constants of _optimistic_mean, hoisted out of the row loop;
        # summation order matches it exactly
        best = order[0]
        top = values[best]
        n_low = 0
        for j in range(n_s - 1, 0, -1):
            k = order[j]
            if values[k] < top:
                low[n_low] = k
                n_low += 1
        delta = 0.0
        for s in range(n_s):
            for a in range(2):
                row = centers[s, a]
                mean = 0.0
                below = 0.0
                for k in range(n_s):
                    mean += row[k] * values[k]
                    if values[k] < top:
                        below += row[k]
                if below > 0.0:
                    add = radii[s, a] / 2.0
                    room = 1.0 - row[best]
                    if below < room:
                        room = below
                    if add >= room:
                        mean += below * top
                        for k in range(n_s):
                            if values[k] < top:
                                mean -= row[k] * values[k]
                    else:
                        mean += add * top
                        left = add
                        for j in range(n_low):
                            k = low[j]
                            take = row[k]
                            if left < take:
                                take = left
                            mean -= take * values[k]
                            left -= take
                            if left <= 0.0:
                                break
                new = -lam * a + rewards[s, a] + gamma * mean
                diff = abs(new - q[s, a])
                if diff > delta:
                    delta = diff
                q[s, a] = new
        deltas[u] = delta
        sweeps = u + 1
        if delta <= tol:
            break
    for s in range(n_s):
        values[s] = max(q[s, 0], q[s, 1])
    _order_desc(values, order)
    for s in range(n_s):
        for a in range(2):
            _inner_max(centers[s, a], radii[s, a], values, order, kernel[s, a])
    return sweeps


@njit(cache=True)
def _evi_arms(centers, radii, rewards, lam, gamma, tol, max_iters, q, kernel, deltas, sweeps):
    for i in range(centers.shape[0]):
        sweeps[i] = _evi_arm(centers[i], radii[i], rewards[i], lam, gamma, tol, max_iters,
                             q[i], kernel[i], deltas[i])


@njit(cache=True)
def _objective_value(q, states, lam, budget, gamma):
    total = 0.0
    for i in range(q.shape[0]):
        total += max(q[i, states[i], 0], q[i, states[i], 1])
    return total + lam * budget / (1.0 - gamma)


@njit(cache=True)
def _eval(centers, radii, rewards, states, lam, budget, gamma, tol, max_iters, q, kernel,
          deltas, sweeps):
    _evi_arms(centers, radii, rewards, lam, gamma, tol, max_iters, q, kernel, deltas, sweeps)
    return _objective_value(q, states, lam, budget, gamma)


@njit(cache=True)
def _golden_dual(centers, radii, rewards, states, budget, gamma, tol, max_iters, lo, hi, kappa,
                 tie_tol, q, kernel, deltas, sweeps):
    # mirrors golden_section() step for step so both paths agree bit for bit
    evals = 0
    a = lo
    if hi > lo:
        b = hi
        x1 = b - INV_PHI * (b - a)
        x2 = a + INV_PHI * (b - a)
        f1 = _eval(centers, radii, rewards, states, x1, budget, gamma, tol, max_iters, q, kernel,
                   deltas, sweeps)
        f2 = _eval(centers, radii, rewards, states, x2, budget, gamma, tol, max_iters, q, kernel,
                   deltas, sweeps)
        evals = 2
        while b - a > kappa:
            if f1 <= f2 + tie_tol:
                b = x2
                x2 = x1
                f2 = f1
                x1 = b - INV_PHI * (b - a)
                f1 = _eval(centers, radii, rewards, states, x1, budget, gamma, tol, max_iters, q,
                           kernel, deltas, sweeps)
            else:
                a = x1
                x1 = x2
                f1 = f2
                x2 = a + INV_PHI * (b - a)
                f2 = _eval(centers, radii, rewards, states, x2, budget, gamma, tol, max_iters, q,
                           kernel, deltas, sweeps)
            evals += 1
    value = _eval(centers, radii, rewards, states, a, budget, gamma, tol, max_iters, q, kernel,
                  deltas, sweeps)
    return a, value, evals + 1
