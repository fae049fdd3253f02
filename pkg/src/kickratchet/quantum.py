"""Quantum kicked rotator with momentum damping, in the momentum basis.

One period of the channel is built from three pieces:

* ``dissipate``: the two lowering-operator Lindblad terms integrated over
  unit time at rate g^2 = -ln(gamma).  Each sign sector of |n| is an
  amplitude-damping channel with transmissivity gamma, applied exactly in
  Kraus form (or by fixed-step RK4 for cross-checks).
* ``kick_apply``: U = exp(-i k V(x)) applied on an N-point position grid.
* ``free_rotation``: rho_nm -> exp(-i tau (n^2 - m^2) / 2) rho_nm.

The default order ("map") is dissipate, kick, rotate, which is the order of
the classical map n' = gamma n + kick, x' = x + tau n'.
"""
import json
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft
from scipy.special import gammaln

from . import kernels
from .classical import MomentumHistogram
from .eigen import arnoldi_topk
from .errors import DegeneracyError, DomainError, IntegrationError, SizeError

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
ASSEMBLY_LIMIT = 32
ORDERS = ("map", "kick_first")
INTEGRATORS = ("kraus", "rk4")


@dataclass(frozen=True)
class HilbertSpec:
    """Momenta n = n_min, ..., n_min + N - 1 (default window centred on 0)."""

    n_dim: int
    n_min: int | None = None

    def __post_init__(self):
        if int(self.n_dim) != self.n_dim or self.n_dim < 8 or self.n_dim % 2:
            raise DomainError(f"N must be an even integer >= 8, got {self.n_dim}")
        if self.n_min is None:
            object.__setattr__(self, "n_min", -(self.n_dim // 2))
        if not -self.n_dim < self.n_min <= 0:
            raise DomainError("the momentum window must contain n = 0")

    @property
    def n_max(self):
        return self.n_min + self.n_dim - 1

    @property
    def n_values(self):
        return np.arange(self.n_min, self.n_min + self.n_dim)

    @property
    def zero_index(self):
        return -self.n_min

    def p_values(self, tau):
        return tau * self.n_values

    def p_window(self, tau):
        return tau * self.n_min, tau * self.n_max

    def positions(self):
        """Position grid q_j = 2pi (j + 1/2) / N shared with the Wigner grid."""
        return TWO_PI * (np.arange(self.n_dim) + 0.5) / self.n_dim

    @classmethod
    def covering(cls, params, margin=None, multiple=8, min_dim=16):
        """Smallest window holding every classical attractor plus ``margin`` in p."""
        lo, hi = params.p_bounds()
        if not math.isfinite(lo):
            raise DomainError("no bounded attractor at gamma = 1; give N explicitly")
        if margin is None:
            margin = 0.5
            if params.gamma < 1.0:
                margin += 6.0 * math.sqrt(params.hbar_eff) / math.sqrt(1.0 - params.gamma ** 2)
        n_lo = min(math.floor((lo - margin) / params.tau), 0)
        n_hi = max(math.ceil((hi + margin) / params.tau), 0)
        size = max(n_hi - n_lo + 1, min_dim)
        size = -(-size // multiple) * multiple
        return cls(size, n_lo)

    def to_dict(self):
        return {"n_dim": self.n_dim, "n_min": self.n_min}


def check_density(rho, tol=1e-10, pos_tol=1e-8):
    """Raise DomainError unless rho is Hermitian, unit-trace and positive within tolerances."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DomainError("density matrix must be square")
    herm = np.abs(rho - rho.conj().T).max()
    if herm > tol:
        raise DomainError(f"not Hermitian (deviation {herm:.3g})")
    tr = np.trace(rho)
    if abs(tr - 1.0) > tol:
        raise DomainError(f"trace is {tr.real:.12g}, expected 1")
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
    if lam < -pos_tol:
        raise DomainError(f"negative eigenvalue {lam:.3g}")
    return rho


def _spec_for(rho, spec):
    """Default to the centred window; asymmetric windows must be passed explicitly."""
    if spec is None:
        spec = HilbertSpec(rho.shape[0])
    if rho.shape != (spec.n_dim, spec.n_dim):
        raise DomainError(f"rho has shape {rho.shape}, expected N = {spec.n_dim}")
    return spec


def potential(q, params):
    return np.cos(q) + 0.5 * params.a * np.cos(2.0 * q + params.phi)


def _half_shift(n_dim):
    return np.exp(1j * math.pi * np.arange(n_dim) / n_dim)


def to_position(rho):
    """<q_j|rho|q_l> on the grid q_j = 2pi (j + 1/2) / N.

    Momentum labels are taken relative to n_min; the offset is a momentum
    translation and drops out of everything position-diagonal.
    """
    s = _half_shift(rho.shape[0])
    a = s[:, None] * rho * s.conj()[None, :]
    return scipy.fft.fft(scipy.fft.ifft(a, axis=0), axis=1)


def from_position(rho_q):
    s = _half_shift(rho_q.shape[0])
    a = scipy.fft.ifft(scipy.fft.fft(rho_q, axis=0), axis=1)
    return s.conj()[:, None] * a * s[None, :]


def kick_phases(params, n_dim):
    q = TWO_PI * (np.arange(n_dim) + 0.5) / n_dim
    return np.exp(-1j * params.k * potential(q, params))


def kick_apply(rho, params, spec=None, phases=None):
    """rho -> U rho U^dagger with U = exp(-i k [cos x + (a/2) cos(2x + phi)])."""
    rho = np.asarray(rho, dtype=np.complex128)
    spec = _spec_for(rho, spec)
    u = kick_phases(params, spec.n_dim) if phases is None else phases
    rq = to_position(rho)
    return from_position(u[:, None] * rq * u.conj()[None, :])


def kick_unitary(params, spec):
    """Dense kick matrix in the momentum basis (small N only)."""
    eye = np.eye(spec.n_dim, dtype=np.complex128)
    s = _half_shift(spec.n_dim)
    u = kick_phases(params, spec.n_dim)
    w = scipy.fft.ifft(s[:, None] * eye, axis=0) * math.sqrt(spec.n_dim)
    return (s.conj()[:, None] * scipy.fft.fft(u[:, None] * w, axis=0)) / math.sqrt(spec.n_dim)


def rotation_phases(params, spec):
    n = spec.n_values.astype(np.float64)
    return np.exp(-0.5j * params.tau * n * n)


def free_rotation(rho, params, spec=None):
    """rho_nm -> exp(-i tau (n^2 - m^2) / 2) rho_nm."""
    rho = np.asarray(rho, dtype=np.complex128)
    spec = _spec_for(rho, spec)
    u = rotation_phases(params, spec)
    return u[:, None] * rho * u.conj()[None, :]


def damping_amplitudes(gamma, size):
    """alpha[a, j] with alpha[a, j] alpha[b, j] the weight of rho_{a+j, b+j} in rho'_{ab}."""
    a = np.arange(size)[:, None]
    j = np.arange(size)[None, :]
    log_c = gammaln(a + j + 1.0) - gammaln(a + 1.0) - gammaln(j + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_w = 0.5 * log_c + 0.5 * a * math.log(gamma)
        if gamma < 1.0:
            log_w = log_w + 0.5 * j * math.log1p(-gamma)
            alpha = np.exp(log_w)
        else:
            alpha = np.where(j == 0, np.exp(log_w), 0.0)
    alpha[a + j >= size] = 0.0
    return np.ascontiguousarray(alpha)


class _Dissipator:
    """Precomputed tables for one (gamma, spec) pair."""

    def __init__(self, gamma, spec, integrator="kraus", substeps=200):
        if not 0.0 < gamma <= 1.0:
            raise DomainError(f"dissipation needs gamma in (0, 1], got {gamma}")
        if integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if substeps < 1:
            raise DomainError("substeps must be >= 1")
        self.gamma = gamma
        self.spec = spec
        self.integrator = integrator
        self.substeps = int(substeps)
        n = np.abs(spec.n_values).astype(np.float64)
        self.z = spec.zero_index
        self.size_pos = spec.n_max + 1
        self.size_neg = self.z + 1
        if integrator == "kraus":
            alpha = damping_amplitudes(gamma, max(self.size_pos, self.size_neg))
            self.alpha_pos = np.ascontiguousarray(alpha[: self.size_pos, : self.size_pos])
            self.alpha_neg = np.ascontiguousarray(alpha[: self.size_neg, : self.size_neg])
            root = np.sqrt(gamma) ** n
            self.decay = np.outer(root, root)
        else:
            g2 = -math.log(gamma)
            nv = spec.n_values
            self.decay = -0.5 * g2 * (n[:, None] + n[None, :])
            pos = np.where(nv[:-1] >= 0, np.sqrt(n[:-1] + 1.0), 0.0)
            neg = np.where(nv[1:] <= 0, np.sqrt(n[1:] + 1.0), 0.0)
            self.feed_pos = g2 * np.outer(pos, pos)
            self.feed_neg = g2 * np.outer(neg, neg)

    def __call__(self, rho):
        if self.gamma == 1.0:
            return np.array(rho, dtype=np.complex128)
        if self.integrator == "rk4":
            out = kernels.dissipate_rk4(np.ascontiguousarray(rho, dtype=np.complex128), self.decay,
                                        self.feed_pos, self.feed_neg, self.substeps)
            drift = abs(np.trace(out) - np.trace(rho))
            if drift > 1e-6:
                raise IntegrationError(f"trace drift {drift:.3g}; increase substeps beyond {self.substeps}")
            return out
        z = self.z
        out = self.decay * rho
        pos = kernels.damp_quadrant(np.ascontiguousarray(rho[z:, z:]), self.alpha_pos)
        neg_in = np.ascontiguousarray(rho[z::-1, z::-1])
        neg = kernels.damp_quadrant(neg_in, self.alpha_neg)
        out[z:, z:] = pos
        out[: z + 1, : z + 1] = neg[::-1, ::-1]
        # n = m = 0 is fed by both sectors
        out[z, z] = pos[0, 0] + neg[0, 0] - rho[z, z]
        return out


def dissipate(rho, params, spec=None, integrator="kraus", substeps=200):
    """Lindblad damping over one period (no Hamiltonian part)."""
    rho = np.asarray(rho, dtype=np.complex128)
    spec = _spec_for(rho, spec)
    return _Dissipator(params.gamma, spec, integrator, substeps)(rho)


def dissipative_segment(rho, params, substeps=200, spec=None, integrator="kraus"):
    """Evolution between two kicks: free rotation followed by damping.

    At gamma = 1 this is the bare free rotation.
    """
    rho = np.asarray(rho, dtype=np.complex128)
    spec = _spec_for(rho, spec)
    return dissipate(free_rotation(rho, params, spec), params, spec, integrator, substeps)


class ChannelApplier:
    """Matrix-free one-period channel rho_{t+1} = e^Lambda rho_t."""

    def __init__(self, params, spec, substeps=200, integrator="kraus", order="map"):
        if order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}")
        self.params = params
        self.spec = spec
        self.order = order
        self.n = spec.n_dim
        self._diss = _Dissipator(params.gamma, spec, integrator, substeps)
        self._kick = kick_phases(params, self.n)
        self._rot = rotation_phases(params, spec)

    @property
    def dim(self):
        return self.n * self.n

    def _kick_op(self, rho):
        rq = to_position(rho)
        return from_position(self._kick[:, None] * rq * self._kick.conj()[None, :])

    def _rotate(self, rho):
        return self._rot[:, None] * rho * self._rot.conj()[None, :]

    def apply(self, rho):
        rho = np.asarray(rho, dtype=np.complex128)
        if rho.shape != (self.n, self.n):
            raise DomainError(f"rho has shape {rho.shape}, expected {(self.n, self.n)}")
        if self.order == "map":
            return self._rotate(self._kick_op(self._diss(rho)))
        return self._diss(self._rotate(self._kick_op(rho)))

    __call__ = apply

    def matvec(self, v):
        return self.apply(v.reshape(self.n, self.n)).ravel()

    def iterate(self, rho, n_steps):
        for _ in range(n_steps):
            rho = self.apply(rho)
        return rho


def period_map(rho, params, spec=None, substeps=200, integrator="kraus", order="map"):
    rho = np.asarray(rho, dtype=np.complex128)
    spec = _spec_for(rho, spec)
    return ChannelApplier(params, spec, substeps, integrator, order).apply(rho)


def assemble_superoperator(applier):
    """Dense N^2 x N^2 matrix of the channel acting on row-major vec(rho)."""
    if applier.n > ASSEMBLY_LIMIT:
        raise SizeError(f"explicit assembly limited to N <= {ASSEMBLY_LIMIT}")
    dim = applier.dim
    out = np.empty((dim, dim), dtype=np.complex128)
    e = np.zeros(dim, dtype=np.complex128)
    for c in range(dim):
        e[c] = 1.0
        out[:, c] = applier.matvec(e)
        e[c] = 0.0
    return out


@dataclass
class SteadyState:
    rho: np.ndarray
    eigenvalue: complex
    residual: float
    spec: HilbertSpec

    @property
    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.rho).min())


def quantum_steady_state(params, spec, substeps=200, integrator="kraus", order="map", tol=1e-10,
                         seed=0, k_eigs=3, krylov_dim=24, max_restarts=500, applier=None):
    """Eigenvalue-1 fixed point of the channel, Hermitized and trace-normalized."""
    if params.gamma >= 1.0:
        raise DomainError("steady state requires gamma < 1")
    ch = applier or ChannelApplier(params, spec, substeps, integrator, order)
    k_eigs = min(k_eigs, ch.dim)
    sp = arnoldi_topk(ch.matvec, ch.dim, k_eigs, tol=tol, seed=seed, krylov_dim=krylov_dim,
                      max_restarts=max_restarts)
    near = np.flatnonzero(np.abs(sp.eigenvalues - 1.0) <= 1e-6)
    if near.size != 1:
        raise DegeneracyError(f"{near.size} eigenvalues within 1e-6 of 1: {sp.eigenvalues[near]}",
                              eigenvalues=sp.eigenvalues[near])
    i = int(near[0])
    r = sp.eigenvectors[i].reshape(ch.n, ch.n)
    r = r / np.trace(r)
    r = 0.5 * (r + r.conj().T)
    r /= np.trace(r).real
    return SteadyState(r, complex(sp.eigenvalues[i]), float(sp.residuals[i]), spec)


def quantum_spectrum(params, spec, k_eigs=50, substeps=200, integrator="kraus", order="map", tol=1e-8,
                     seed=0, krylov_dim=120, max_restarts=500, r_min=None, applier=None):
    """Leading channel eigenvalues; with ``r_min`` k grows until |lambda| < r_min is reached."""
    ch = applier or ChannelApplier(params, spec, substeps, integrator, order)
    k = min(k_eigs, ch.dim)
    while True:
        sp = arnoldi_topk(ch.matvec, ch.dim, k, tol=tol, seed=seed,
                          krylov_dim=max(krylov_dim, 2 * k + 10), max_restarts=max_restarts,
                          return_vectors=False)
        if r_min is None or sp.moduli.min() < r_min or k >= ch.dim:
            return sp
        k = min(2 * k, ch.dim)
        log.info("quantum spectrum: raising k to %d to reach |lambda| < %g", k, r_min)


def _unpack(state, spec):
    if isinstance(state, SteadyState):
        return state.rho, state.spec
    rho = np.asarray(state)
    return rho, _spec_for(rho, spec)


def quantum_current(rho, params, spec=None):
    """J = tau Tr(rho n); ``rho`` may be a SteadyState, which carries its window."""
    rho, spec = _unpack(rho, spec)
    return float(params.tau * np.real(np.diagonal(rho) @ spec.n_values))


def momentum_distribution(rho, params, spec=None):
    """P(p = tau n) = rho_nn as a histogram with one bin per momentum."""
    rho, spec = _unpack(rho, spec)
    mass = np.clip(np.real(np.diagonal(rho)), 0.0, None)
    edges = params.tau * (np.arange(spec.n_min, spec.n_max + 2) - 0.5)
    return MomentumHistogram(edges, mass / mass.sum())


def purity(rho):
    return float(np.real(np.vdot(rho, rho)))


def save_density(stem, rho, params, spec):
    """``stem.bin`` holds little-endian complex128 row-major data; ``stem.json`` the header."""
    rho = np.ascontiguousarray(rho, dtype="<c16")
    with open(f"{stem}.bin", "wb") as fh:
        fh.write(rho.tobytes())
    head = {
        **spec.to_dict(), "params": params.to_dict(),
        "trace": [float(np.trace(rho).real), float(np.trace(rho).imag)],
        "hermiticity": float(np.abs(rho - rho.conj().T).max()),
    }
    with open(f"{stem}.json", "w", encoding="utf-8") as fh:
        json.dump(head, fh)


def load_density(stem):
    with open(f"{stem}.json", encoding="utf-8") as fh:
        head = json.load(fh)
    spec = HilbertSpec(head["n_dim"], head["n_min"])
    with open(f"{stem}.bin", "rb") as fh:
        rho = np.frombuffer(fh.read(), dtype="<c16").reshape(spec.n_dim, spec.n_dim).copy()
    return rho, spec, head
