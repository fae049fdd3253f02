"""Leading eigenpairs of nonsymmetric operators.

``arnoldi_topk`` is a Krylov-Schur restarted Arnoldi iteration working in
complex arithmetic on an arbitrary linear action; ``dense_spectrum`` is the
LAPACK oracle used to validate it on small problems.
"""
import io
import json
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, SizeError
from .rng import as_u64, normal

log = logging.getLogger(__name__)

DENSE_LIMIT = 4096


@dataclass
class Spectrum:
    """Eigenvalues sorted by descending modulus.

    ``eigenvectors`` has one vector per row when present.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None
    residuals: np.ndarray | None = None

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.complex128)
        if self.residuals is None:
            self.residuals = np.zeros(self.eigenvalues.size)
        self.residuals = np.asarray(self.residuals, dtype=np.float64)

    def __len__(self):
        return self.eigenvalues.size

    @property
    def moduli(self):
        return np.abs(self.eigenvalues)

    def take(self, index):
        vecs = None if self.eigenvectors is None else self.eigenvectors[index]
        return Spectrum(self.eigenvalues[index], vecs, self.residuals[index])

    def to_csv(self):
        buf = io.StringIO()
        buf.write("re,im,modulus,residual\n")
        for lam, res in zip(self.eigenvalues, self.residuals):
            buf.write(f"{float(lam.real)!r},{float(lam.imag)!r},{float(abs(lam))!r},{float(res)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = [line.split(",") for line in text.strip().splitlines()[1:] if line]
        lam = np.array([complex(float(r[0]), float(r[1])) for r in rows], dtype=np.complex128)
        res = np.array([float(r[3]) for r in rows])
        return cls(lam, None, res)

    def to_json(self):
        return json.dumps({
            "eigenvalues": [[float(v.real), float(v.imag)] for v in self.eigenvalues],
            "residuals": [float(r) for r in self.residuals],
        })

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        lam = np.array([complex(*pair) for pair in data["eigenvalues"]], dtype=np.complex128)
        return cls(lam, None, np.array(data["residuals"], dtype=np.float64))


def _order(values):
    # descending modulus, ties broken by argument so conjugates stay adjacent
    return np.lexsort((-np.angle(values), -np.round(np.abs(values), 13)))


def dense_spectrum(matrix, vectors=False):
    a = matrix.toarray() if hasattr(matrix, "toarray") else np.asarray(matrix)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if a.shape[0] > DENSE_LIMIT:
        raise SizeError(f"dense_spectrum limited to dimension {DENSE_LIMIT}, got {a.shape[0]}")
    if vectors:
        lam, vec = np.linalg.eig(a)
        idx = _order(lam)
        vec = vec[:, idx].T
        res = np.linalg.norm(vec @ a.T - lam[idx, None] * vec, axis=1)
        return Spectrum(lam[idx], vec, res)
    lam = np.linalg.eigvals(a)
    return Spectrum(lam[_order(lam)])


def start_vector(dim, seed):
    """All-ones direction perturbed by the seeded stream."""
    v = np.ones(dim, dtype=np.complex128) / math.sqrt(dim)
    v += 0.1 * normal(as_u64(seed), np.arange(dim, dtype=np.uint64)) / math.sqrt(dim)
    return v / np.linalg.norm(v)


def _random_orthogonal(basis, dim, seed, attempt):
    key = as_u64(seed ^ (0x9E3779B97F4A7C15 * (attempt + 1)))
    w = normal(key, np.arange(dim, dtype=np.uint64)).astype(np.complex128)
    for _ in range(2):
        w -= basis.T @ (basis.conj() @ w)
    return w / np.linalg.norm(w)


def arnoldi_topk(apply, dim, k_eigs, tol=1e-8, max_restarts=300, seed=0, krylov_dim=None,
                 return_vectors=True, guard=None):
    """Largest-modulus eigenpairs of the linear action ``apply``.

    Returns at least ``k_eigs`` pairs whose explicitly recomputed residuals
    ``||A v - lambda v|| / ||v||`` are reported in ``Spectrum.residuals``.
    Raises ConvergenceError once ``max_restarts`` restarts are spent.

    ``guard`` extra Ritz pairs (default max(2, k/5)) must converge as well;
    they catch eigenvalues whose modulus nearly ties the k-th one.
    """
    if not 1 <= k_eigs <= dim:
        raise ValueError(f"need 1 <= k_eigs <= dim, got k_eigs={k_eigs}, dim={dim}")
    n_want = min(dim, k_eigs + (max(2, k_eigs // 5) if guard is None else guard))
    m = max(krylov_dim or 0, 3 * n_want + 10)
    m = min(m, dim)
    V = np.zeros((m + 1, dim), dtype=np.complex128)
    H = np.zeros((m + 1, m), dtype=np.complex128)
    V[0] = start_vector(dim, seed)
    p = 0
    n_extra = 0
    converged = 0
    for restart in range(max_restarts + 1):
        for j in range(p, m):
            w = np.asarray(apply(V[j]), dtype=np.complex128).ravel()
            if w.shape[0] != dim:
                raise ValueError("operator action changed the vector length")
            basis = V[: j + 1]
            h = (basis @ w.conj()).conj()
            w = w - h @ basis
            h2 = (basis @ w.conj()).conj()
            w = w - h2 @ basis
            h += h2
            H[: j + 1, j] = h
            beta = np.linalg.norm(w)
            scale = max(np.linalg.norm(h), 1.0)
            if beta <= 1e-12 * scale:
                # invariant subspace: continue with a fresh orthogonal direction
                H[j + 1, j] = 0.0
                if j + 1 < dim:
                    V[j + 1] = _random_orthogonal(basis, dim, seed, n_extra)
                    n_extra += 1
            else:
                H[j + 1, j] = beta
                V[j + 1] = w / beta
        Hm = H[:m, :m]
        beta = H[m, m - 1]
        ritz = np.linalg.eigvals(Hm)
        mods = np.sort(np.abs(ritz))[::-1]
        keep = min(m - 1, max(n_want + (m - n_want) // 2, n_want)) if m < dim else m
        while keep < m and mods[keep - 1] - mods[keep] <= 1e-10 * max(mods[0], 1e-300):
            keep += 1
        if keep < m:
            threshold = 0.5 * (mods[keep - 1] + mods[keep])
            T, Z, sdim = scipy.linalg.schur(Hm, output="complex", sort=lambda z: abs(z) > threshold)
            keep = sdim
        else:
            T, Z = scipy.linalg.schur(Hm, output="complex")
        Tk = T[:keep, :keep]
        bk = beta * Z[m - 1, :keep]
        theta, Y = scipy.linalg.eig(Tk)
        Y /= np.linalg.norm(Y, axis=0)
        est = np.abs(bk @ Y)
        order = _order(theta)[:n_want]
        converged = int(np.count_nonzero(est[order] <= tol))
        if converged == len(order) or m == dim:
            order = order[:k_eigs]
            basis = Z[:, :keep].T @ V[:m]
            vecs = (Y[:, order].T @ basis)
            vecs /= np.linalg.norm(vecs, axis=1)[:, None]
            lam = theta[order]
            res = np.array([np.linalg.norm(np.asarray(apply(v)).ravel() - l * v)
                            for v, l in zip(vecs, lam)])
            log.debug("arnoldi converged after %d restarts", restart)
            return Spectrum(lam, vecs if return_vectors else None, res)
        # Krylov-Schur truncation
        V[:keep] = Z[:, :keep].T @ V[:m]
        V[keep] = V[m]
        H[:] = 0.0
        H[:keep, :keep] = Tk
        H[keep, :keep] = bk
        p = keep
    raise ConvergenceError(
        f"Arnoldi: {converged}/{n_want} eigenpairs converged after {max_restarts} restarts",
        converged=converged)


def real_operator(matrix):
    """Action of a real (sparse or dense) matrix on complex vectors without upcasting it."""
    def apply(v):
        return matrix @ v.real + 1j * (matrix @ v.imag)
    return apply


def arnoldi_above(apply, dim, r_min, k_start=50, tol=1e-8, seed=0, max_restarts=300, k_max=None,
                  return_vectors=False):
    """All eigenvalues with modulus >= ``r_min``, enlarging k until the cut is passed."""
    k = min(k_start, dim)
    k_max = dim if k_max is None else min(k_max, dim)
    while True:
        spec = arnoldi_topk(apply, dim, k, tol=tol, seed=seed, max_restarts=max_restarts,
                            return_vectors=return_vectors)
        if spec.moduli.min() < r_min or k >= k_max:
            return spec
        k = min(2 * k, k_max)
