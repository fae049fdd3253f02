"""Dissipative kicked-rotator map, thermal noise and ensemble statistics."""
import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError, TrajectoryOverflowError
from .params import SeedLineage, derive_seed
from .rng import as_u64, substream, uniform

DEFAULT_GUARD = 1e6
_INIT_TAG = 0x5EED_1A17_0000_0001


@dataclass(frozen=True)
class PhasePoint:
    x: float
    n: float

    def p(self, params):
        return params.tau * self.n


@dataclass
class Ensemble:
    """Trajectories stored as parallel arrays (x unbounded, n unscaled momentum)."""

    x: np.ndarray
    n: np.ndarray
    seed: SeedLineage
    steps_taken: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.n = np.asarray(self.n, dtype=np.float64)
        if self.x.ndim != 1 or self.x.shape != self.n.shape:
            raise ValueError("x and n must be 1-d arrays of equal length")
        if self.x.size == 0:
            raise ValueError("ensemble must be non-empty")

    def __len__(self):
        return self.x.size

    def points(self):
        return [PhasePoint(float(a), float(b)) for a, b in zip(self.x, self.n)]

    def p(self, params):
        return params.tau * self.n

    def copy(self):
        return Ensemble(self.x.copy(), self.n.copy(), self.seed, self.steps_taken)

    def trajectory_keys(self):
        base = np.uint64(derive_seed(self.seed))
        return substream(base, np.arange(len(self), dtype=np.uint64))

    # -- serialization -------------------------------------------------
    _HEADER = struct.Struct("<8sQQQQQ")
    _MAGIC = b"KRENS001"

    def to_bytes(self):
        s = self.seed
        head = self._HEADER.pack(self._MAGIC, len(self), s.master_seed & 0xFFFFFFFFFFFFFFFF,
                                 s.point_index, s.stream_index, self.steps_taken)
        body = np.stack([self.x, self.n], axis=1).astype("<f8").tobytes()
        return head + body

    @classmethod
    def from_bytes(cls, data):
        magic, count, master, point, stream, steps = cls._HEADER.unpack_from(data)
        if magic != cls._MAGIC:
            raise ValueError("not an ensemble dump")
        arr = np.frombuffer(data, dtype="<f8", offset=cls._HEADER.size, count=2 * count)
        arr = arr.reshape(count, 2)
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), SeedLineage(master, point, stream), steps)

    def to_csv(self):
        buf = io.StringIO()
        buf.write("x,n\n")
        for a, b in zip(self.x, self.n):
            buf.write(f"{float(a)!r},{float(b)!r}\n")
        return buf.getvalue()


@dataclass
class MomentumHistogram:
    p_edges: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        self.p_edges = np.asarray(self.p_edges, dtype=np.float64)
        self.mass = np.asarray(self.mass, dtype=np.float64)
        if self.p_edges.size != self.mass.size + 1:
            raise ValueError("need len(edges) == len(mass) + 1")
        if np.any(np.diff(self.p_edges) <= 0):
            raise ValueError("edges must be strictly increasing")

    @property
    def centers(self):
        return 0.5 * (self.p_edges[1:] + self.p_edges[:-1])

    def to_csv(self):
        lines = ["p_center,mass"]
        lines += [f"{float(c)!r},{float(m)!r}" for c, m in zip(self.centers, self.mass)]
        return "\n".join(lines) + "\n"

    def window_mass(self, lo, hi):
        c = self.centers
        return float(self.mass[(c >= lo) & (c <= hi)].sum())


def drive(x, params):
    return params.k * (np.sin(x) + params.a * np.sin(2.0 * x + params.phi))


def step_deterministic(s, params, guard=DEFAULT_GUARD):
    nb = params.gamma * s.n + params.k * (math.sin(s.x) + params.a * math.sin(2.0 * s.x + params.phi))
    if not abs(nb) <= guard:
        raise TrajectoryOverflowError(f"|n| = {abs(nb):.3g} exceeds guard {guard:g}")
    return PhasePoint(s.x + params.tau * nb, nb)


def step_thermal(s, params, rng, guard=DEFAULT_GUARD):
    """One noisy step; ``rng`` needs ``standard_normal()`` (None means zero noise)."""
    if params.gamma == 1.0:
        raise DomainError("thermal noise is undefined at gamma = 1")
    nb = params.gamma * s.n + params.k * (math.sin(s.x) + params.a * math.sin(2.0 * s.x + params.phi))
    if rng is not None:
        nb = nb + params.noise_sigma_n * rng.standard_normal()
    if not abs(nb) <= guard:
        raise TrajectoryOverflowError(f"|n| = {abs(nb):.3g} exceeds guard {guard:g}")
    return PhasePoint(s.x + params.tau * nb, nb)


def initial_ensemble(size, lineage, params, p_range=(-math.pi, math.pi)):
    """Uniform on x in [0, 2pi), p in ``p_range``."""
    if size < 1:
        raise ValueError("ensemble size must be >= 1")
    base = np.uint64(derive_seed(lineage)) ^ as_u64(_INIT_TAG)
    keys = substream(base, np.arange(size, dtype=np.uint64))
    x = 2.0 * np.pi * uniform(keys, 0)
    p = p_range[0] + (p_range[1] - p_range[0]) * uniform(keys, 1)
    return Ensemble(x, p / params.tau, lineage, 0)


def _noise_sigma(params, noisy):
    if not noisy:
        return 0.0
    if params.gamma == 1.0:
        raise DomainError("thermal noise is undefined at gamma = 1")
    return params.noise_sigma_n


def _advance(e, params, n_steps, noisy, guard):
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    sigma = _noise_sigma(params, noisy)
    x, n, nsum, status = kernels.evolve_points(
        e.x, e.n, e.trajectory_keys(), e.steps_taken, n_steps,
        params.k, params.gamma, params.tau, params.a, params.phi, sigma, guard)
    bad = np.flatnonzero(status >= 0)
    if bad.size:
        i = int(bad[0])
        raise TrajectoryOverflowError(
            f"trajectory {i} exceeded |n| <= {guard:g} at step {int(status[i])}", index=i)
    return Ensemble(x, n, e.seed, e.steps_taken + n_steps), nsum


def evolve_ensemble(e, params, n_steps, noisy, guard=DEFAULT_GUARD):
    """Advance every trajectory; noise at step t depends only on (seed, index, t)."""
    return _advance(e, params, n_steps, noisy, guard)[0]


def classical_current(e, params):
    """Snapshot current J = <tau n> and its standard error."""
    p = e.p(params)
    se = float(p.std(ddof=1) / math.sqrt(p.size)) if p.size > 1 else 0.0
    return float(p.mean()), se


@dataclass
class CurrentEstimate:
    J: float
    se: float
    subensemble_std: float
    ensemble: Ensemble = field(repr=False)


def time_averaged_current(e, params, n_steps, noisy, n_sub=16, guard=DEFAULT_GUARD):
    """Current from per-trajectory time averages over ``n_steps`` further steps.

    ``subensemble_std`` is the spread of J over ``n_sub`` interleaved
    sub-ensembles: a large value flags coexisting attractors.
    """
    if n_steps < 1:
        raise ValueError("need at least one measurement step")
    out, nsum = _advance(e, params, n_steps, noisy, guard)
    pbar = params.tau * nsum / n_steps
    J = float(pbar.mean())
    se = float(pbar.std(ddof=1) / math.sqrt(pbar.size)) if pbar.size > 1 else 0.0
    n_sub = min(n_sub, pbar.size)
    subs = np.array([pbar[i::n_sub].mean() for i in range(n_sub)])
    sub_std = float(subs.std(ddof=1)) if n_sub > 1 else 0.0
    return CurrentEstimate(J, se, sub_std, out)


def momentum_histogram(e, params, bin_width, center=0.0):
    """Normalized histogram of p with bins centred on ``center + j * bin_width``."""
    if not bin_width > 0:
        raise DomainError("bin_width must be positive")
    p = e.p(params)
    lo = math.floor((p.min() - center) / bin_width + 0.5)
    hi = math.floor((p.max() - center) / bin_width + 0.5)
    edges = center + (np.arange(lo, hi + 2) - 0.5) * bin_width
    counts = np.bincount(np.floor((p - center) / bin_width + 0.5).astype(np.int64) - lo,
                         minlength=hi - lo + 1)
    return MomentumHistogram(edges, counts / counts.sum())


def histogram_on_grid(e, params, centers):
    """Histogram of p on a fixed uniform grid of bin centres (out-of-range mass dropped)."""
    centers = np.asarray(centers, dtype=np.float64)
    width = centers[1] - centers[0]
    edges = np.concatenate([centers - width / 2, [centers[-1] + width / 2]])
    idx = np.floor((e.p(params) - edges[0]) / width).astype(np.int64)
    idx = idx[(idx >= 0) & (idx < centers.size)]
    counts = np.bincount(idx, minlength=centers.size).astype(np.float64)
    return MomentumHistogram(edges, counts / max(counts.sum(), 1.0))


def ensemble_header(e):
    s = e.seed
    return json.dumps({"count": len(e), "master_seed": s.master_seed, "point_index": s.point_index,
                       "stream_index": s.stream_index, "steps_taken": e.steps_taken})
