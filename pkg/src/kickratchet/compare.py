"""Classical/quantum comparison metrics: spectral distance and current gaps."""
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .eigen import Spectrum
from .errors import DomainError, EmptyError

THRESHOLDS = (0.25, 0.35, 0.4)
MODES = ("symmetric", "q_to_c", "c_to_q")


def filter_spectrum(spec, r_min):
    """Eigenvalues with |lambda| >= r_min, order preserved."""
    if not 0.0 < r_min <= 1.0:
        raise DomainError(f"r_min must lie in (0, 1], got {r_min}")
    keep = np.flatnonzero(np.abs(spec.eigenvalues) >= r_min)
    if keep.size == 0:
        raise EmptyError(f"no eigenvalue with modulus >= {r_min}")
    return spec.take(keep)


def _nearest(src, dst):
    return np.abs(src[:, None] - dst[None, :]).min(axis=1)


def nearest_distances(spec_c, spec_q, r_min):
    """(quantum -> classical, classical -> quantum) nearest-neighbour distances."""
    lc = filter_spectrum(spec_c, r_min).eigenvalues
    lq = filter_spectrum(spec_q, r_min).eigenvalues
    return _nearest(lq, lc), _nearest(lc, lq)


def spectral_distance(spec_c, spec_q, r_min, mode="symmetric"):
    """Mean nearest-neighbour distance between the two filtered spectra.

    ``symmetric`` pools both directions; ``q_to_c`` and ``c_to_q`` are the
    one-sided variants.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    dq, dc = nearest_distances(spec_c, spec_q, r_min)
    if mode == "q_to_c":
        return float(dq.mean())
    if mode == "c_to_q":
        return float(dc.mean())
    return float(np.concatenate([dq, dc]).mean())


def matched_pairs(spec_c, spec_q, r_min):
    """Segments (classical, quantum) joining each quantum eigenvalue to its nearest classical one."""
    lc = filter_spectrum(spec_c, r_min).eigenvalues
    lq = filter_spectrum(spec_q, r_min).eigenvalues
    idx = np.abs(lq[:, None] - lc[None, :]).argmin(axis=1)
    return [(complex(lc[i]), complex(q)) for i, q in zip(idx, lq)]


def sgn(x):
    return 0 if x == 0 else (1 if x > 0 else -1)


def current_difference(j_c, j_q):
    """(|J_c - J_q|, (sgn J_c - sgn J_q) / 2)."""
    if not (math.isfinite(j_c) and math.isfinite(j_q)):
        raise DomainError("currents must be finite")
    return abs(j_c - j_q), (sgn(j_c) - sgn(j_q)) / 2


CSV_FIELDS = ("k", "gamma", "J_c_thermal", "J_q", "abs_diff", "sign_diff", "half_sign",
              "delta_0.25", "delta_0.35", "delta_0.4")


@dataclass
class ComparisonRecord:
    k: float
    gamma: float
    J_c_thermal: float | None = None
    J_q: float | None = None
    delta_spectral: dict = field(default_factory=dict)

    @property
    def abs_diff(self):
        if self.J_c_thermal is None or self.J_q is None:
            return None
        return current_difference(self.J_c_thermal, self.J_q)[0]

    @property
    def sign_diff(self):
        if self.J_c_thermal is None or self.J_q is None:
            return None
        return current_difference(self.J_c_thermal, self.J_q)[1]

    @property
    def half_sign(self):
        """True when exactly one current vanishes, making sign_diff +-1/2; None without currents."""
        s = self.sign_diff
        return None if s is None else s != int(s)

    def delta(self, r_min):
        return self.delta_spectral.get(float(r_min))

    def csv_row(self):
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return str(int(v))
            return repr(float(v))
        vals = [self.k, self.gamma, self.J_c_thermal, self.J_q, self.abs_diff, self.sign_diff,
                self.half_sign] + [self.delta(t) for t in THRESHOLDS]
        return ",".join(fmt(v) for v in vals)

    def to_dict(self):
        d = asdict(self)
        d["delta_spectral"] = {repr(float(t)): v for t, v in self.delta_spectral.items()}
        d["abs_diff"], d["sign_diff"], d["half_sign"] = self.abs_diff, self.sign_diff, self.half_sign
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["k"], d["gamma"], d.get("J_c_thermal"), d.get("J_q"),
                   {float(t): v for t, v in d.get("delta_spectral", {}).items()})

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def records_to_csv(records):
    buf = io.StringIO()
    buf.write(",".join(CSV_FIELDS) + "\n")
    for r in records:
        buf.write(r.csv_row() + "\n")
    return buf.getvalue()


def spectrum_pair_for(spec_c, spec_q, thresholds=THRESHOLDS):
    """Delta at every threshold; thresholds that empty either spectrum map to None."""
    out = {}
    for t in thresholds:
        try:
            out[float(t)] = spectral_distance(spec_c, spec_q, t)
        except EmptyError:
            out[float(t)] = None
    return out


__all__ = ["Spectrum", "THRESHOLDS", "ComparisonRecord", "filter_spectrum", "spectral_distance",
           "nearest_distances", "matched_pairs", "current_difference", "records_to_csv",
           "spectrum_pair_for"]
