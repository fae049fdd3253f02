"""numba-compiled kernels; same signatures and streams as ``_numpy``."""
import math

import numpy as np
from numba import njit, prange

from ..rng import GOLDEN, INV_2_53, MUL1, MUL2

TWO_PI = 2.0 * math.pi
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * MUL1
    z = (z ^ (z >> _S27)) * MUL2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def _uniform(key, counter):
    return np.float64(_mix(key + (counter + _ONE) * GOLDEN) >> _S11) * INV_2_53


@njit(cache=True, inline="always")
def _box_muller(u1, u2):
    return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(TWO_PI * u2)


@njit(cache=True, parallel=True)
def _evolve(x, n, keys, step0, n_steps, k, gamma, tau, a, phi, sigma, guard):
    npts = x.shape[0]
    nsum = np.zeros(npts)
    status = np.full(npts, -1, dtype=np.int64)
    for i in prange(npts):
        xi = x[i]
        ni = n[i]
        acc = 0.0
        key = keys[i]
        for t in range(n_steps):
            step = step0 + t
            nb = gamma * ni + k * (math.sin(xi) + a * math.sin(2.0 * xi + phi))
            if sigma > 0.0:
                c = np.uint64(2 * step)
                nb += sigma * _box_muller(_uniform(key, c), _uniform(key, c + _ONE))
            if not abs(nb) <= guard:
                status[i] = step
                # frozen: keep accumulating the last valid momentum
                acc += ni * (n_steps - t)
                break
            ni = nb
            xi = xi + tau * nb
            acc += ni
        x[i] = xi
        n[i] = ni
        nsum[i] = acc
    return nsum, status


def evolve_points(x, n, keys, step0, n_steps, k, gamma, tau, a, phi, sigma, guard):
    x = np.array(x, dtype=np.float64)
    n = np.array(n, dtype=np.float64)
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    nsum, status = _evolve(x, n, keys, int(step0), int(n_steps), float(k), float(gamma),
                           float(tau), float(a), float(phi), float(sigma), float(guard))
    return x, n, nsum, status


@njit(cache=True, parallel=True)
def _ulam(col_start, ncol, m, p_min, p_max, n_tr, s, base_key, k, gamma, tau, a, phi, sigma,
          rows_buf, counts_buf, nnz, leaked):
    dx = TWO_PI / m
    dp = (p_max - p_min) / m
    ncell = m * m
    for lc in prange(ncol):
        j = col_start + lc
        key = _mix(np.uint64(base_key) ^ _mix(np.uint64(j) + GOLDEN))
        ix0 = j % m
        ip0 = j // m
        dest = np.empty(n_tr, dtype=np.int64)
        nleak = 0
        for c in range(n_tr):
            cc = np.uint64(4 * c)
            ux = _uniform(key, cc)
            up = _uniform(key, cc + _ONE)
            x = (ix0 + ((c % s) + ux) / s) * dx
            p = p_min + (ip0 + (((c // s) % s) + up) / s) * dp
            nb = gamma * (p / tau) + k * (math.sin(x) + a * math.sin(2.0 * x + phi))
            if sigma > 0.0:
                nb += sigma * _box_muller(_uniform(key, cc + np.uint64(2)),
                                          _uniform(key, cc + np.uint64(3)))
            xb = x + tau * nb
            pb = tau * nb
            ix = np.int64(math.floor((xb % TWO_PI) / dx))
            if ix > m - 1:
                ix = m - 1
            ipf = math.floor((pb - p_min) / dp)
            if ipf >= 0 and ipf < m:
                dest[c] = np.int64(ipf) * m + ix
            else:
                dest[c] = ncell
                nleak += 1
        dest.sort()
        cnt = 0
        c = 0
        while c < n_tr and dest[c] < ncell:
            r = dest[c]
            run = 0
            while c < n_tr and dest[c] == r:
                run += 1
                c += 1
            rows_buf[lc, cnt] = r
            counts_buf[lc, cnt] = run
            cnt += 1
        nnz[lc] = cnt
        leaked[lc] = nleak


def ulam_block(col_start, col_stop, m, p_min, p_max, n_tr, base_key,
               k, gamma, tau, a, phi, sigma):
    ncol = col_stop - col_start
    rows_buf = np.empty((ncol, n_tr), dtype=np.int64)
    counts_buf = np.empty((ncol, n_tr), dtype=np.int64)
    nnz = np.zeros(ncol, dtype=np.int64)
    leaked = np.zeros(ncol, dtype=np.int64)
    # stratification side s = floor(sqrt(n_tr)), computed here since njit lacks isqrt
    side = max(math.isqrt(int(n_tr)), 1)
    _ulam(int(col_start), int(ncol), int(m), float(p_min), float(p_max), int(n_tr), side,
          np.uint64(base_key), float(k), float(gamma), float(tau), float(a), float(phi),
          float(sigma), rows_buf, counts_buf, nnz, leaked)
    mask = np.arange(n_tr)[None, :] < nnz[:, None]
    cols = np.broadcast_to(np.arange(col_start, col_stop, dtype=np.int64)[:, None], mask.shape)
    return rows_buf[mask], cols[mask], counts_buf[mask], leaked


@njit(cache=True, parallel=True)
def damp_quadrant(q, alpha):
    size = q.shape[0]
    out = np.empty_like(q)
    for a in prange(size):
        for b in range(size):
            acc = 0.0 + 0.0j
            top = size - max(a, b)
            for j in range(top):
                acc += (alpha[a, j] * alpha[b, j]) * q[a + j, b + j]
            out[a, b] = acc
    return out


@njit(cache=True)
def _rhs(r, decay, feed_pos, feed_neg, out):
    size = r.shape[0]
    for i in range(size):
        for j in range(size):
            v = decay[i, j] * r[i, j]
            if i < size - 1 and j < size - 1:
                v += feed_pos[i, j] * r[i + 1, j + 1]
            if i > 0 and j > 0:
                v += feed_neg[i - 1, j - 1] * r[i - 1, j - 1]
            out[i, j] = v


@njit(cache=True)
def dissipate_rk4(rho, decay, feed_pos, feed_neg, substeps):
    h = 1.0 / substeps
    r = rho.astype(np.complex128)
    k1 = np.empty_like(r)
    k2 = np.empty_like(r)
    k3 = np.empty_like(r)
    k4 = np.empty_like(r)
    for _ in range(substeps):
        _rhs(r, decay, feed_pos, feed_neg, k1)
        _rhs(r + 0.5 * h * k1, decay, feed_pos, feed_neg, k2)
        _rhs(r + 0.5 * h * k2, decay, feed_pos, feed_neg, k3)
        _rhs(r + h * k3, decay, feed_pos, feed_neg, k4)
        r = r + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return r
