"""Discrete Weyl-Wigner symbols on the torus and classical/quantum overlaps.

The redundant symbol lives on a 2N x 2N grid of half-integer points.  A
band-limiting projection in the conjugate (chord) representation keeps
each matrix element exactly once; sampling the result on the integer
sublattice gives the ghost-free N x N physical field.  Rows are momenta
(tau n), columns positions q_j = 2pi (j + 1/2) / N.
"""
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GeometryError
from .quantum import HilbertSpec, SteadyState, to_position

TWO_PI = 2.0 * math.pi


@dataclass
class PhaseField:
    """Values on a phase-space grid; ``values[i, j]`` sits at (p_axis[i], x_axis[j])."""

    values: np.ndarray
    p_axis: np.ndarray
    x_axis: np.ndarray
    redundant: bool = False

    @property
    def shape(self):
        return self.values.shape

    def same_grid(self, other, tol=1e-9):
        return (self.shape == other.shape and self.redundant == other.redundant
                and np.allclose(self.p_axis, other.p_axis, atol=tol)
                and np.allclose(self.x_axis, other.x_axis, atol=tol))

    def real(self):
        return PhaseField(self.values.real.copy(), self.p_axis, self.x_axis, self.redundant)

    def p_marginal(self):
        return self.values.sum(axis=1)

    def x_marginal(self):
        return self.values.sum(axis=0)

    def to_csv(self):
        """Dense matrix: header row of x values, then p followed by the row values."""
        v = np.real_if_close(self.values)
        buf = io.StringIO()
        buf.write("p\\x," + ",".join(repr(float(x)) for x in self.x_axis) + "\n")
        for p, row in zip(self.p_axis, v):
            buf.write(repr(float(p)) + "," + ",".join(repr(float(c)) for c in np.real(row)) + "\n")
        return buf.getvalue()

    def split_sign(self):
        """(positive part, magnitude of negative part) as two nonnegative fields."""
        v = np.real(self.values)
        pos = PhaseField(np.clip(v, 0.0, None), self.p_axis, self.x_axis, self.redundant)
        neg = PhaseField(np.clip(-v, 0.0, None), self.p_axis, self.x_axis, self.redundant)
        return pos, neg

    def save(self, stem):
        """``stem.bin`` (little-endian float64 or complex128, row-major) plus ``stem.json``."""
        cplx = np.iscomplexobj(self.values) and np.abs(self.values.imag).max() > 0
        dtype = "<c16" if cplx else "<f8"
        data = np.ascontiguousarray(self.values if cplx else np.real(self.values), dtype=dtype)
        with open(f"{stem}.bin", "wb") as fh:
            fh.write(data.tobytes())
        head = {"shape": list(self.shape), "dtype": dtype, "redundant": self.redundant,
                "p_axis": self.p_axis.tolist(), "x_axis": self.x_axis.tolist()}
        with open(f"{stem}.json", "w", encoding="utf-8") as fh:
            json.dump(head, fh)

    def save_sign_split(self, stem):
        pos, neg = self.split_sign()
        with open(f"{stem}_pos.csv", "w", encoding="utf-8") as fh:
            fh.write(pos.to_csv())
        with open(f"{stem}_neg.csv", "w", encoding="utf-8") as fh:
            fh.write(neg.to_csv())

    @classmethod
    def load(cls, stem):
        with open(f"{stem}.json", encoding="utf-8") as fh:
            head = json.load(fh)
        with open(f"{stem}.bin", "rb") as fh:
            vals = np.frombuffer(fh.read(), dtype=head["dtype"]).reshape(head["shape"]).copy()
        return cls(vals, np.asarray(head["p_axis"]), np.asarray(head["x_axis"]), head["redundant"])


def _unpack(rho, spec):
    if isinstance(rho, SteadyState):
        return rho.rho, rho.spec
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DomainError("operator must be a square matrix")
    return rho, spec or HilbertSpec(rho.shape[0])


def weyl_wigner_symbol(rho, spec=None, tau=1.0):
    """Redundant symbol R(a, b) = sum_n <q_{2b-n}|R|q_n> exp(i 2pi/N 2a(b - n)).

    Index alpha = 2a runs over the 2N momentum half-integers, beta = 2b over
    the positions; the result is not normalized.
    """
    rho, spec = _unpack(rho, spec)
    n = spec.n_dim
    rq = to_position(rho)
    beta = np.arange(2 * n)
    cols = np.arange(n)
    v = rq[(beta[:, None] - cols[None, :]) % n, cols[None, :]]
    fv = np.fft.fft(v, axis=1)
    alpha = np.arange(2 * n)
    w = np.exp(1j * math.pi * np.outer(alpha, beta) / n) * fv[:, alpha % n].T
    p_axis = tau * (spec.n_min + alpha / 2.0)
    x_axis = TWO_PI * (beta / 2.0 + 0.5) / n
    return PhaseField(w, p_axis, x_axis, redundant=True)


def _band(size, n):
    f = np.arange(size)
    return (f < n // 2) | (f >= size - n // 2)


def chord_filter(field):
    """Project onto chords in the fundamental range [-N/2, N/2) on both axes."""
    if not field.redundant:
        raise GeometryError("chord filtering needs the redundant 2N x 2N field")
    size = field.shape[0]
    n = size // 2
    c = np.fft.fft2(field.values)
    mask = _band(size, n)
    c *= mask[:, None] & mask[None, :]
    return PhaseField(np.fft.ifft2(c), field.p_axis, field.x_axis, redundant=True)


def remove_ghosts(field, trace=None):
    """Ghost-free physical N x N field with rows ordered by momentum n.

    The chords +-N/2 alias onto the same sublattice frequency, so both are
    kept at half weight; this makes the field of a Hermitian operator real.
    Row a of the filtered integer sublattice belongs to n = n_min + (-a mod N);
    rows are reordered to ascending n.  When ``trace`` is given the
    field is scaled so that its sum equals it.
    """
    if not field.redundant:
        raise GeometryError("ghost removal needs the redundant 2N x 2N field")
    size = field.shape[0]
    n = size // 2
    f = np.abs(np.fft.fftfreq(size) * size)
    weight = np.where(f < n / 2, 1.0, np.where(f == n / 2, 0.5, 0.0))
    sub = np.fft.ifft2(np.fft.fft2(field.values) * np.outer(weight, weight))[::2, ::2]
    vals = sub[(-np.arange(n)) % n]
    p_axis = field.p_axis[::2][: n]
    x_axis = field.x_axis[::2]
    if trace is not None:
        total = vals.sum()
        if abs(total) > 0:
            vals = vals * (trace / total)
    return PhaseField(vals, p_axis, x_axis, redundant=False)


def wigner_field(rho, spec=None, tau=1.0):
    """Physical Wigner function normalized to sum Tr(rho); real for Hermitian rho."""
    rho, spec = _unpack(rho, spec)
    field = remove_ghosts(weyl_wigner_symbol(rho, spec, tau), trace=np.trace(rho))
    if np.allclose(rho, rho.conj().T, atol=1e-12):
        field = field.real()
    return field


def wigner_grid(spec, tau):
    """(p_axis, x_axis) of the physical grid for ``spec``."""
    return tau * spec.n_values.astype(np.float64), TWO_PI * (np.arange(spec.n_dim) + 0.5) / spec.n_dim


def _frac_index(coord, origin, step):
    f = (coord - origin) / step
    near = np.round(f)
    return np.where(np.abs(f - near) < 1e-9, near, f)


def resample_classical(vector, grid, spec, tau):
    """Bilinear interpolation of an Ulam cell density onto the physical Wigner grid.

    x is periodic; in p the field is clamped to the outermost cell centres.
    The result is renormalized to unit sum.
    """
    v = np.asarray(vector, dtype=np.float64)
    if v.size != grid.n_cells:
        raise GeometryError("vector length does not match the Ulam grid")
    p_axis, x_axis = wigner_grid(spec, tau)
    eps = 1e-9 * grid.dp
    if p_axis[0] < grid.p_min - eps or p_axis[-1] > grid.p_max + eps:
        raise GeometryError(f"Ulam window [{grid.p_min}, {grid.p_max}] does not cover "
                            f"p in [{p_axis[0]}, {p_axis[-1]}]")
    dens = v.reshape(grid.m, grid.m)
    m = grid.m
    fx = _frac_index(x_axis, 0.5 * grid.dx, grid.dx)
    ix0 = np.floor(fx).astype(np.int64)
    wx = fx - ix0
    ix0 %= m
    ix1 = (ix0 + 1) % m
    fp = np.clip(_frac_index(p_axis, grid.p_min + 0.5 * grid.dp, grid.dp), 0.0, m - 1)
    ip0 = np.minimum(np.floor(fp).astype(np.int64), m - 1)
    ip1 = np.minimum(ip0 + 1, m - 1)
    wp = fp - ip0
    top = (1 - wx)[None, :] * dens[ip0][:, ix0] + wx[None, :] * dens[ip0][:, ix1]
    bot = (1 - wx)[None, :] * dens[ip1][:, ix0] + wx[None, :] * dens[ip1][:, ix1]
    vals = (1 - wp)[:, None] * top + wp[:, None] * bot
    total = vals.sum()
    if total > 0:
        vals = vals / total
    return PhaseField(vals, p_axis, x_axis, redundant=False)


def overlap(r1, r2):
    """Normalized inner product sum R1 conj(R2) / sqrt(sum|R1|^2 sum|R2|^2)."""
    if not r1.same_grid(r2):
        raise GeometryError("fields live on different grids")
    a, b = r1.values, r2.values
    num = np.vdot(b, a)
    den = math.sqrt(float(np.vdot(a, a).real) * float(np.vdot(b, b).real))
    if den == 0.0:
        raise DomainError("overlap with an all-zero field")
    return complex(num / den)


def negativity_fraction(field):
    """Share of the total absolute weight carried by negative values."""
    v = np.real(field.values)
    total = np.abs(v).sum()
    if total == 0.0:
        return 0.0
    return float(np.abs(v[v < 0]).sum() / total)
