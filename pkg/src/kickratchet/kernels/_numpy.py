"""Pure-numpy reference kernels (selected with KICKRATCHET_BACKEND=numpy)."""
import math

import numpy as np

from ..rng import substream, uniform

TWO_PI = 2.0 * np.pi
_U4 = np.uint64(4)


def _drive(x, k, a, phi):
    return k * (np.sin(x) + a * np.sin(2.0 * x + phi))


def _box_muller(u1, u2):
    return np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(TWO_PI * u2)


def evolve_points(x, n, keys, step0, n_steps, k, gamma, tau, a, phi, sigma, guard):
    """Advance trajectories ``n_steps`` map iterations.

    Returns ``(x, n, nsum, status)``: ``nsum`` accumulates n after every step,
    ``status[i]`` is the absolute step at which trajectory i crossed the guard
    (then frozen) or -1.
    """
    x = np.array(x, dtype=np.float64)
    n = np.array(n, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.uint64)
    nsum = np.zeros_like(n)
    status = np.full(n.shape, -1, dtype=np.int64)
    alive = np.ones(n.shape, dtype=bool)
    for t in range(n_steps):
        step = step0 + t
        nb = gamma * n + _drive(x, k, a, phi)
        if sigma > 0.0:
            c = np.uint64(2 * step)
            nb = nb + sigma * _box_muller(uniform(keys, c), uniform(keys, c + np.uint64(1)))
        xb = x + tau * nb
        bad = alive & ~(np.abs(nb) <= guard)
        if bad.any():
            status[bad] = step
            alive &= ~bad
        n = np.where(alive, nb, n)
        x = np.where(alive, xb, x)
        nsum += n
    return x, n, nsum, status


def ulam_block(col_start, col_stop, m, p_min, p_max, n_tr, base_key,
               k, gamma, tau, a, phi, sigma):
    """Destination counts for source cells ``col_start:col_stop``.

    Cell index j = ip * m + ix.  Returns COO ``(rows, cols, counts)`` sorted by
    (col, row) plus the per-column number of leaked samples.
    """
    cols = np.arange(col_start, col_stop, dtype=np.int64)
    ncol = cols.size
    dx = TWO_PI / m
    dp = (p_max - p_min) / m
    s = max(math.isqrt(n_tr), 1)
    c = np.arange(n_tr, dtype=np.uint64)
    sx = (np.arange(n_tr) % s).astype(np.float64)
    sp = ((np.arange(n_tr) // s) % s).astype(np.float64)
    keys = substream(np.uint64(base_key), cols.astype(np.uint64))[:, None]
    ux = uniform(keys, _U4 * c)
    up = uniform(keys, _U4 * c + np.uint64(1))
    x = ((cols % m)[:, None] + (sx + ux) / s) * dx
    p = p_min + ((cols // m)[:, None] + (sp + up) / s) * dp
    nb = gamma * (p / tau) + _drive(x, k, a, phi)
    if sigma > 0.0:
        nb = nb + sigma * _box_muller(uniform(keys, _U4 * c + np.uint64(2)),
                                      uniform(keys, _U4 * c + np.uint64(3)))
    xb = x + tau * nb
    pb = tau * nb
    ix = np.minimum(np.floor(np.mod(xb, TWO_PI) / dx).astype(np.int64), m - 1)
    ip = np.floor((pb - p_min) / dp)
    inside = (ip >= 0) & (ip < m)
    dest = np.where(inside, ip.astype(np.int64) * m + ix, -1)
    leaked = np.count_nonzero(~inside, axis=1).astype(np.int64)
    local = np.broadcast_to(np.arange(ncol, dtype=np.int64)[:, None], dest.shape)
    ok = dest >= 0
    flat = local[ok] * (m * m) + dest[ok]
    uniq, counts = np.unique(flat, return_counts=True)
    return (uniq % (m * m)).astype(np.int64), uniq // (m * m) + col_start, counts.astype(np.int64), leaked


def damp_quadrant(q, alpha):
    """out[a, b] = sum_j alpha[a, j] alpha[b, j] q[a + j, b + j] (amplitude-damping chain)."""
    size = q.shape[0]
    out = np.outer(alpha[:, 0], alpha[:, 0]) * q
    for j in range(1, size):
        col = alpha[: size - j, j]
        out[: size - j, : size - j] += np.outer(col, col) * q[j:, j:]
    return out


def dissipate_rk4(rho, decay, feed_pos, feed_neg, substeps):
    """Fixed-step RK4 integration of the dissipator over unit time."""
    h = 1.0 / substeps

    def rhs(r):
        out = decay * r
        out[:-1, :-1] += feed_pos * r[1:, 1:]
        out[1:, 1:] += feed_neg * r[:-1, :-1]
        return out

    r = np.array(rho, dtype=np.complex128)
    for _ in range(substeps):
        k1 = rhs(r)
        k2 = rhs(r + 0.5 * h * k1)
        k3 = rhs(r + 0.5 * h * k2)
        k4 = rhs(r + h * k3)
        r = r + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return r
