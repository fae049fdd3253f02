"""Ulam coarse-graining of the Perron-Frobenius operator.

Phase space x in [0, 2pi) times p in [p_min, p_max) is cut into M x M
cells, cell index ``j = ip * M + ix``.  Column j of the transfer matrix
holds the fraction of ``n_tr`` stratified samples from cell j that land in
each destination cell after one map step.
"""
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .eigen import arnoldi_topk, real_operator
from .errors import DomainError, LeakError
from .params import SeedLineage, derive_seed

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
DEFAULT_WINDOW = (-20.0, 20.0)
DEFAULT_LEAK_TOL = 1e-3


class ResolutionWarning(UserWarning):
    """Cell resolution coarser than the thermal scale."""


@dataclass(frozen=True)
class UlamGrid:
    m: int
    p_min: float
    p_max: float

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise DomainError(f"need M >= 2 cells per axis, got {self.m}")
        if not (math.isfinite(self.p_min) and math.isfinite(self.p_max)) or self.p_min >= self.p_max:
            raise DomainError(f"bad momentum window [{self.p_min}, {self.p_max})")

    @property
    def n_cells(self):
        return self.m * self.m

    @property
    def dx(self):
        return TWO_PI / self.m

    @property
    def dp(self):
        return (self.p_max - self.p_min) / self.m

    @property
    def h_eff(self):
        return TWO_PI / self.m

    def cell(self, ix, ip):
        if not (0 <= ix < self.m and 0 <= ip < self.m):
            raise IndexError("cell index out of range")
        return ip * self.m + ix

    def cell_bounds(self, j):
        ip, ix = divmod(j, self.m)
        x0, p0 = ix * self.dx, self.p_min + ip * self.dp
        return (x0, x0 + self.dx), (p0, p0 + self.dp)

    def x_centers(self):
        return (np.arange(self.m) + 0.5) * self.dx

    def p_centers(self):
        return self.p_min + (np.arange(self.m) + 0.5) * self.dp

    def widened(self, factor=2.0):
        mid, half = 0.5 * (self.p_min + self.p_max), 0.5 * (self.p_max - self.p_min)
        return UlamGrid(self.m, mid - factor * half, mid + factor * half)

    def to_dict(self):
        return {"m": self.m, "p_min": self.p_min, "p_max": self.p_max}


def build_grid(m, p_min, p_max):
    return UlamGrid(int(m), float(p_min), float(p_max))


def auto_window(params, noisy=True, margin_sigmas=6.0):
    """Momentum window enclosing every noiseless attractor plus a noise margin."""
    lo, hi = params.p_bounds()
    if not math.isfinite(lo):
        return DEFAULT_WINDOW
    margin = 0.5
    if noisy and params.gamma < 1.0:
        margin += margin_sigmas * params.noise_sigma_n * params.tau / math.sqrt(1.0 - params.gamma ** 2)
    return lo - margin, hi + margin


@dataclass
class TransferMatrix:
    """Column-stochastic sparse matrix with its sampling provenance."""

    matrix: sp.csc_matrix
    grid: UlamGrid
    column_leak: np.ndarray
    leak_fraction: float
    n_tr: int
    seed: SeedLineage
    noisy: bool

    @property
    def dim(self):
        return self.matrix.shape[0]

    def column_sums(self):
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def apply(self, v):
        return self.matrix @ v

    def header(self):
        s = self.seed
        return {
            **self.grid.to_dict(), "n_tr": self.n_tr, "noisy": self.noisy,
            "master_seed": s.master_seed, "point_index": s.point_index,
            "stream_index": s.stream_index, "leak_fraction": self.leak_fraction,
            "nnz": int(self.matrix.nnz),
        }

    def to_coo_text(self):
        coo = self.matrix.tocoo()
        buf = io.StringIO()
        for r, c, v in zip(coo.row, coo.col, coo.data):
            buf.write(f"{r} {c} {float(v)!r}\n")
        return buf.getvalue()

    def save(self, stem):
        """Write ``stem.coo`` (row col value per line) and ``stem.json``."""
        with open(f"{stem}.coo", "w", encoding="utf-8") as fh:
            fh.write(self.to_coo_text())
        with open(f"{stem}.json", "w", encoding="utf-8") as fh:
            json.dump({**self.header(), "column_leak": self.column_leak.tolist()}, fh)

    @classmethod
    def load(cls, stem):
        with open(f"{stem}.json", encoding="utf-8") as fh:
            head = json.load(fh)
        data = np.loadtxt(f"{stem}.coo", ndmin=2)
        grid = UlamGrid(head["m"], head["p_min"], head["p_max"])
        dim = grid.n_cells
        mat = sp.csc_matrix((data[:, 2], (data[:, 0].astype(np.int64), data[:, 1].astype(np.int64))),
                            shape=(dim, dim))
        seed = SeedLineage(head["master_seed"], head["point_index"], head["stream_index"])
        return cls(mat, grid, np.asarray(head["column_leak"]), head["leak_fraction"], head["n_tr"],
                   seed, head["noisy"])


def _assemble(grid, params, n_tr, sigma, base_key, block):
    m, dim = grid.m, grid.n_cells
    rows, cols, counts = [], [], []
    leaked = np.empty(dim, dtype=np.int64)
    for start in range(0, dim, block):
        stop = min(start + block, dim)
        r, c, cnt, lk = kernels.ulam_block(
            start, stop, m, grid.p_min, grid.p_max, n_tr, base_key,
            params.k, params.gamma, params.tau, params.a, params.phi, sigma)
        rows.append(r)
        cols.append(c)
        counts.append(cnt)
        leaked[start:stop] = lk
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    counts = np.concatenate(counts).astype(np.float64)
    return rows, cols, counts, leaked


def build_ulam_matrix(grid, params, n_tr=10_000, noisy=True, seed=None, leak_tol=DEFAULT_LEAK_TOL,
                      auto_widen=False, block=None, max_widen=4):
    """Sample the one-step transfer matrix on ``grid``.

    Samples leaving the momentum window are dropped and their column
    renormalized; a column that loses every sample keeps its mass in place.
    Raises LeakError when the overall leaked fraction exceeds ``leak_tol``
    (after up to ``max_widen`` window doublings if ``auto_widen``).
    """
    if n_tr < 1:
        raise DomainError("n_tr must be >= 1")
    if noisy and params.gamma >= 1.0:
        raise DomainError("thermal noise is undefined at gamma = 1")
    seed = seed if seed is not None else SeedLineage(0)
    if grid.h_eff > params.hbar_eff:
        warnings.warn(f"cell scale 2pi/M = {grid.h_eff:.4g} exceeds hbar_eff = {params.hbar_eff}",
                      ResolutionWarning, stacklevel=2)
    sigma = params.noise_sigma_n if noisy else 0.0
    base_key = derive_seed(seed)
    if block is None:
        block = 256 if kernels.BACKEND == "numba" else max(1, 2_000_000 // n_tr)
    for attempt in range(max_widen + 1):
        rows, cols, counts, leaked = _assemble(grid, params, n_tr, sigma, base_key, block)
        total = float(leaked.sum()) / (grid.n_cells * n_tr)
        if total <= leak_tol:
            break
        if not auto_widen or attempt == max_widen:
            raise LeakError(f"{total:.3g} of samples left the window [{grid.p_min}, {grid.p_max})",
                            leak_fraction=total)
        grid = grid.widened()
        log.info("leak %.3g: widening window to [%g, %g)", total, grid.p_min, grid.p_max)
    dim = grid.n_cells
    kept = n_tr - leaked
    empty = np.flatnonzero(kept == 0)
    if empty.size:
        rows = np.concatenate([rows, empty])
        cols = np.concatenate([cols, empty])
        counts = np.concatenate([counts, np.ones(empty.size)])
        kept = kept.copy()
        kept[empty] = 1
    values = counts / kept[cols]
    mat = sp.csc_matrix((values, (rows, cols)), shape=(dim, dim))
    mat.sort_indices()
    return TransferMatrix(mat, grid, leaked / n_tr, total, n_tr, seed, noisy)


def normalize_density(vec):
    """Fix sign, clip tiny negatives and scale to unit sum."""
    v = np.asarray(vec)
    if np.iscomplexobj(v):
        # remove the arbitrary global phase using the dominant entry
        v = v * np.exp(-1j * np.angle(v[np.argmax(np.abs(v))]))
        v = v.real
    v = np.array(v, dtype=np.float64)
    if v.sum() < 0:
        v = -v
    scale = np.abs(v).max()
    if v.min() < -1e-6 * scale:
        raise DomainError(f"eigenvector has a significant negative part ({v.min() / scale:.3g})")
    v = np.clip(v, 0.0, None)
    return v / v.sum()


@dataclass
class InvariantDensity:
    vector: np.ndarray
    eigenvalue: complex
    residual: float


def invariant_vector(tm, tol=1e-10, seed=0, max_restarts=300):
    """Eigenvalue-1 eigenvector of ``tm`` as a probability vector over cells."""
    spec = arnoldi_topk(real_operator(tm.matrix), tm.dim, 1, tol=tol, seed=seed,
                        max_restarts=max_restarts, krylov_dim=30)
    return InvariantDensity(normalize_density(spec.eigenvectors[0]), complex(spec.eigenvalues[0]),
                            float(spec.residuals[0]))


def pf_current(vector, grid):
    """J = sum over cells of p_center * mass."""
    v = np.asarray(vector, dtype=np.float64)
    if v.size != grid.n_cells:
        raise DomainError("vector length does not match the grid")
    if v.min() < -1e-10:
        raise DomainError(f"density has negative entries down to {v.min():.3g}")
    mass = v.reshape(grid.m, grid.m).sum(axis=1)
    return float(mass @ grid.p_centers() / mass.sum())


def p_marginal(vector, grid):
    """Momentum marginal of a cell density, one value per p row."""
    return np.asarray(vector, dtype=np.float64).reshape(grid.m, grid.m).sum(axis=1)


def power_iterate(tm, n_iter=2000, tol=1e-12):
    """Plain power iteration from the uniform density (oracle for the Arnoldi path)."""
    v = np.full(tm.dim, 1.0 / tm.dim)
    for _ in range(n_iter):
        w = tm.matrix @ v
        if np.abs(w - v).sum() < tol:
            return w
        v = w
    return v
