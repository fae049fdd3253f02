"""Parameter bundle, derived constants and seed lineage."""
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .rng import as_u64, mix64, substream

DEFAULT_HBAR_EFF = 0.137
DEFAULT_A = 0.5
DEFAULT_PHI = math.pi / 2
# "p": xi is added to p-bar = tau * n-bar; "n": xi is added to n-bar directly
NOISE_FRAMES = ("p", "n")


@dataclass(frozen=True)
class Params:
    """Dissipative modified kicked rotator parameters.

    ``hbar_eff`` doubles as the kicking period tau.  Derived quantities are
    properties so they can never drift out of sync with the inputs.
    """

    k: float
    gamma: float
    hbar_eff: float = DEFAULT_HBAR_EFF
    a: float = DEFAULT_A
    phi: float = DEFAULT_PHI
    noise_frame: str = "p"

    def __post_init__(self):
        if self.noise_frame not in NOISE_FRAMES:
            raise DomainError(f"noise_frame must be one of {NOISE_FRAMES}, got {self.noise_frame!r}")
        for name in ("k", "gamma", "hbar_eff", "a", "phi"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.hbar_eff <= 0.0:
            raise DomainError(f"hbar_eff must be positive, got {self.hbar_eff}")
        if self.k < 0.0:
            raise DomainError(f"k must be non-negative, got {self.k}")

    @property
    def tau(self):
        return self.hbar_eff

    @property
    def K(self):
        return self.k * self.hbar_eff

    @property
    def g(self):
        """Lindblad coupling sqrt(-ln gamma); undefined at gamma = 0."""
        if self.gamma == 0.0:
            raise DomainError("g = sqrt(-ln gamma) diverges at gamma = 0")
        return math.sqrt(-math.log(self.gamma))

    @property
    def temperature(self):
        if self.gamma == 1.0:
            raise DomainError("temperature is undefined at gamma = 1")
        return self.hbar_eff / (2.0 * (1.0 - self.gamma))

    @property
    def noise_variance(self):
        # k_B = 1
        return 2.0 * (1.0 - self.gamma) * self.temperature

    @property
    def noise_sigma(self):
        """Standard deviation of xi in its own frame (p or n units)."""
        return math.sqrt(self.noise_variance)

    @property
    def noise_sigma_n(self):
        """Standard deviation of the kick added to n-bar per step."""
        sigma = self.noise_sigma
        return sigma / self.tau if self.noise_frame == "p" else sigma

    @classmethod
    def from_rescaled(cls, K, gamma, hbar_eff=DEFAULT_HBAR_EFF, a=DEFAULT_A, phi=DEFAULT_PHI,
                      noise_frame="p"):
        """Build from the rescaled kick strength K = k * tau."""
        return cls(k=K / hbar_eff, gamma=gamma, hbar_eff=hbar_eff, a=a, phi=phi,
                   noise_frame=noise_frame)

    def p_bounds(self):
        """Bounds on p reachable on any attractor of the noiseless map."""
        if self.gamma == 1.0:
            return -math.inf, math.inf
        xs = np.linspace(0.0, 2.0 * math.pi, 4097)
        f = np.sin(xs) + self.a * np.sin(2.0 * xs + self.phi)
        scale = self.K / (1.0 - self.gamma)
        return float(f.min()) * scale, float(f.max()) * scale

    def replace(self, **changes):
        data = asdict(self)
        data.update(changes)
        return Params(**data)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def to_kv(self):
        return "".join(f"{key} = {value if isinstance(value, str) else repr(value)}\n"
                       for key, value in self.to_dict().items())

    @classmethod
    def from_kv(cls, text):
        raw = parse_kv(text)
        known = {"k", "gamma", "hbar_eff", "a", "phi", "noise_frame"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown parameter keys: {sorted(unknown)}")
        try:
            values = {key: (value if key == "noise_frame" else float(value))
                      for key, value in raw.items()}
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def make_params(k, gamma, hbar_eff=DEFAULT_HBAR_EFF, a=DEFAULT_A, phi=DEFAULT_PHI, noise_frame="p"):
    return Params(k=k, gamma=gamma, hbar_eff=hbar_eff, a=a, phi=phi, noise_frame=noise_frame)


def parse_kv(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


@dataclass(frozen=True)
class SeedLineage:
    master_seed: int
    point_index: int = 0
    stream_index: int = 0

    def __post_init__(self):
        if self.point_index < 0 or self.stream_index < 0:
            raise DomainError("seed lineage indices must be non-negative")

    def child(self, stream_index):
        return SeedLineage(self.master_seed, self.point_index, stream_index)


def derive_seed(lineage):
    """64-bit child seed, a pure function of the three lineage integers."""
    h = mix64(as_u64(lineage.master_seed))
    h = substream(h, as_u64(lineage.point_index))
    h = substream(h ^ np.uint64(0xD1B54A32D192ED03), as_u64(lineage.stream_index))
    return int(h)
