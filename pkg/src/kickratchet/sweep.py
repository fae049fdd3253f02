"""Parameter sweeps over (k, gamma): per-point pipeline, checkpointed store, plot tables.

A store directory holds ``config.kv``, ``ledger.json`` and one folder per
point.  Each (point, task) pair is checkpointed independently: a worker
writes the task's artifacts and then a ``<task>.done.json`` marker, and the
owning sweep process folds markers into the ledger.
"""
import concurrent.futures as cf
import contextlib
import dataclasses
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from .classical import evolve_ensemble, histogram_on_grid, initial_ensemble, time_averaged_current
from .compare import THRESHOLDS, ComparisonRecord, matched_pairs, records_to_csv, spectrum_pair_for
from .eigen import Spectrum, arnoldi_above, real_operator
from .errors import (ConfigError, EmptyError, KickRatchetError, MissingArtifactError, StageError,
                     StoreLockedError)
from .params import DEFAULT_A, DEFAULT_HBAR_EFF, DEFAULT_PHI, Params, SeedLineage, parse_kv
from .phase_space import PhaseField, negativity_fraction, overlap, resample_classical, wigner_field
from .quantum import (ChannelApplier, HilbertSpec, momentum_distribution, quantum_current,
                      quantum_spectrum, quantum_steady_state, save_density)
from .ulam import auto_window, build_grid, build_ulam_matrix, invariant_vector, pf_current

log = logging.getLogger(__name__)

TASKS = ("currents", "spectra", "equilibrium")
FIGURES = ("fig1", "fig2", "fig3", "fig4", "fig5")
WORKERS_ENV = "KICKRATCHET_WORKERS"
PAIR_THRESHOLD = 0.35

# seed streams inside one point
STREAM_NOISY, STREAM_NOISELESS, STREAM_ULAM = 0, 1, 2

STAGES = {
    "currents": ("noisy_ensemble", "noiseless_ensemble", "steady_state"),
    "spectra": ("noiseless_ensemble", "ulam", "classical_spectrum", "quantum_spectrum",
                "spectral_distance"),
    "equilibrium": ("ulam", "steady_state", "wigner"),
}


def _tuple_of(conv):
    def parse(text):
        items = [s.strip() for s in str(text).split(",") if s.strip()]
        return tuple(conv(s) for s in items)
    return parse


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class SweepConfig:
    """Sweep geometry plus every numerical setting of the per-point pipeline.

    ``kick_axis = K`` reads k values as the rescaled strength K = k tau;
    ``k_list``, when non-empty, replaces the (k_min, k_max, k_step) range.
    ``p_window`` is ``auto`` or ``lo,hi``; ``quantum_n`` is ``auto`` or an even integer.
    """

    k_min: float = 5.0
    k_max: float = 10.0
    k_step: float = 0.25
    k_list: tuple = ()
    gamma_list: tuple = (0.4, 0.45, 0.5, 0.55, 0.6)
    hbar_eff: float = DEFAULT_HBAR_EFF
    a: float = DEFAULT_A
    phi: float = DEFAULT_PHI
    kick_axis: str = "K"
    noise_frame: str = "p"
    ensemble_size: int = 100_000
    transient: int = 1000
    measure_steps: int = 1000
    n_sub: int = 16
    ulam_m: int = 128
    n_tr: int = 10_000
    p_window: str = "auto"
    leak_tol: float = 1e-3
    auto_widen: bool = True
    quantum_n: str = "auto"
    substeps: int = 200
    integrator: str = "kraus"
    order: str = "map"
    k_eigs: int = 50
    krylov_dim: int = 120
    eig_tol: float = 1e-8
    thresholds: tuple = THRESHOLDS
    master_seed: int = 20240521
    output_dir: str = "sweep_out"
    tasks: tuple = ("currents",)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.k_list:
            if not self.k_step > 0:
                raise ConfigError("k_step must be > 0")
            if self.k_min > self.k_max:
                raise ConfigError("k_min must not exceed k_max")
        if not self.gamma_list:
            raise ConfigError("gamma_list must be non-empty")
        if not self.thresholds or not all(0 < t <= 1 for t in self.thresholds):
            raise ConfigError("thresholds must be a non-empty list in (0, 1]")
        if not self.tasks or set(self.tasks) - set(TASKS):
            raise ConfigError(f"tasks must be a non-empty subset of {TASKS}")
        if self.kick_axis not in ("K", "k"):
            raise ConfigError("kick_axis must be 'K' or 'k'")
        for name in ("ensemble_size", "measure_steps", "n_sub", "ulam_m", "n_tr", "substeps", "k_eigs",
                     "krylov_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.transient < 0:
            raise ConfigError("transient must be >= 0")
        if self.p_window != "auto":
            lo, hi = self.window_bounds()
            if not lo < hi:
                raise ConfigError("p_window must be 'auto' or 'lo,hi' with lo < hi")
        if self.quantum_n != "auto":
            try:
                n = int(self.quantum_n)
            except ValueError:
                raise ConfigError("quantum_n must be 'auto' or an integer") from None
            if n < 8 or n % 2:
                raise ConfigError("quantum_n must be an even integer >= 8")
        try:
            for k in self.k_values():
                for g in self.gamma_list:
                    self.params(k, g)
        except KickRatchetError as exc:
            raise ConfigError(f"invalid model parameters: {exc}") from exc

    def window_bounds(self):
        try:
            lo, hi = (float(s) for s in self.p_window.split(","))
        except ValueError:
            raise ConfigError(f"bad p_window {self.p_window!r}") from None
        return lo, hi

    def k_values(self):
        if self.k_list:
            return [float(k) for k in self.k_list]
        count = int(math.floor((self.k_max - self.k_min) / self.k_step + 1e-9)) + 1
        return [round(self.k_min + i * self.k_step, 10) for i in range(count)]

    def points(self):
        """(point_index, k, gamma), gamma-major so that indices never depend on scheduling."""
        ks = self.k_values()
        return [(i * len(ks) + j, k, float(g))
                for i, g in enumerate(self.gamma_list) for j, k in enumerate(ks)]

    def index_of(self, k, gamma):
        for idx, kk, gg in self.points():
            if math.isclose(kk, k, abs_tol=1e-9) and math.isclose(gg, gamma, abs_tol=1e-9):
                return idx
        return None

    def params(self, k, gamma):
        if self.kick_axis == "K":
            return Params.from_rescaled(k, gamma, self.hbar_eff, self.a, self.phi, self.noise_frame)
        return Params(k=k, gamma=gamma, hbar_eff=self.hbar_eff, a=self.a, phi=self.phi,
                      noise_frame=self.noise_frame)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_kv(self):
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                text = ", ".join(repr(v) if not isinstance(v, str) else v for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name} = {text}\n")
        return "".join(lines)

    @classmethod
    def from_kv(cls, text):
        raw = parse_kv(text)
        unknown = set(raw) - set(_PARSERS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values = {}
        for key, value in raw.items():
            try:
                values[key] = _PARSERS[key](value)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        return cls(**values)

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_kv(text)


_PARSERS = {
    "k_min": float, "k_max": float, "k_step": float, "k_list": _tuple_of(float),
    "gamma_list": _tuple_of(float), "hbar_eff": float, "a": float, "phi": float,
    "kick_axis": str, "noise_frame": str, "ensemble_size": int, "transient": int,
    "measure_steps": int, "n_sub": int, "ulam_m": int, "n_tr": int, "p_window": str,
    "leak_tol": float, "auto_widen": _bool, "quantum_n": str, "substeps": int, "integrator": str,
    "order": str, "k_eigs": int, "krylov_dim": int, "eig_tol": float,
    "thresholds": _tuple_of(float), "master_seed": int, "output_dir": str, "tasks": _tuple_of(str),
}


def check_writable(path):
    """ConfigError unless ``path`` (or its nearest existing parent) is a writable directory."""
    p = Path(path).resolve()
    while not p.exists():
        p = p.parent
    if not p.is_dir() or not os.access(p, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")


# --- atomic file output ---------------------------------------------------


def atomic_write(path, data):
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _atomic_save(save, stem, suffixes):
    """Run ``save(tmp_stem)`` then rename each produced file into place."""
    stem = Path(stem)
    tmp_stem = stem.parent / f".{stem.name}.{os.getpid()}.tmp"
    save(str(tmp_stem))
    out = []
    for suffix in suffixes:
        os.replace(f"{tmp_stem}{suffix}", f"{stem}{suffix}")
        out.append(f"{stem.name}{suffix}")
    return out


def _write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


# --- per-point pipeline ---------------------------------------------------


@dataclass
class PointResult:
    index: int
    k: float
    gamma: float
    record: ComparisonRecord
    metrics: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not self.errors


class _Pipeline:
    """Lazily evaluated stages of one point; each stage runs at most once."""

    def __init__(self, k, gamma, config, index):
        self.k, self.gamma, self.config, self.index = k, gamma, config, index
        self.params = config.params(k, gamma)
        self.lineage = SeedLineage(config.master_seed, index)
        self._cache = {}

    def get(self, name):
        if name not in self._cache:
            t0 = time.perf_counter()
            try:
                self._cache[name] = (True, getattr(self, f"_{name}")())
            except StageError as exc:  # a dependency failed; keep its stage tag
                self._cache[name] = (False, exc)
            except Exception as exc:  # tagged and re-raised below
                err = StageError(f"stage {name} failed: {type(exc).__name__}: {exc}", stage=name,
                                 error_class=type(exc).__name__)
                err.__cause__ = exc
                self._cache[name] = (False, err)
            log.debug("point %d stage %s: %.2fs", self.index, name, time.perf_counter() - t0)
        ok, value = self._cache[name]
        if not ok:
            raise value
        return value

    def _hilbert(self):
        c, P = self.config, self.params
        if c.quantum_n == "auto":
            return HilbertSpec.covering(P)
        n = int(c.quantum_n)
        lo, hi = P.p_bounds()
        n_min = int(round(0.5 * (lo + hi) / P.tau)) - n // 2
        n_min = min(max(n_min, -n + 1), 0)
        spec = HilbertSpec(n, n_min)
        plo, phi_ = spec.p_window(P.tau)
        if plo > lo or phi_ < hi:
            log.warning("N=%d window [%.3g, %.3g] misses classical range [%.3g, %.3g]",
                        n, plo, phi_, lo, hi)
        return spec

    def spec(self):
        if "spec" not in self._cache:
            self._cache["spec"] = (True, self._hilbert())
        return self._cache["spec"][1]

    def _ensemble(self, stream, noisy):
        c, P = self.config, self.params
        e = initial_ensemble(c.ensemble_size, self.lineage.child(stream), P)
        e = evolve_ensemble(e, P, c.transient, noisy)
        return time_averaged_current(e, P, c.measure_steps, noisy, n_sub=c.n_sub)

    def _noisy_ensemble(self):
        return self._ensemble(STREAM_NOISY, True)

    def _noiseless_ensemble(self):
        return self._ensemble(STREAM_NOISELESS, False)

    def _ulam(self):
        c, P = self.config, self.params
        if c.p_window == "auto":
            lo, hi = auto_window(P)
            # the resampled classical field needs the quantum window inside the grid
            qlo, qhi = self.spec().p_window(P.tau)
            lo, hi = min(lo, qlo - 0.01), max(hi, qhi + 0.01)
        else:
            lo, hi = c.window_bounds()
        grid = build_grid(c.ulam_m, lo, hi)
        return build_ulam_matrix(grid, P, c.n_tr, True, self.lineage.child(STREAM_ULAM),
                                 leak_tol=c.leak_tol, auto_widen=c.auto_widen)

    def _invariant(self):
        return invariant_vector(self.get("ulam"))

    def _classical_spectrum(self):
        tm = self.get("ulam")
        return arnoldi_above(real_operator(tm.matrix), tm.dim, min(self.config.thresholds),
                             k_start=self.config.k_eigs, tol=self.config.eig_tol)

    def _applier(self):
        c = self.config
        return ChannelApplier(self.params, self.spec(), c.substeps, c.integrator, c.order)

    def _steady_state(self):
        return quantum_steady_state(self.params, self.spec(), applier=self._applier())

    def _quantum_spectrum(self):
        c = self.config
        return quantum_spectrum(self.params, self.spec(), k_eigs=c.k_eigs, tol=c.eig_tol,
                                krylov_dim=c.krylov_dim, r_min=min(c.thresholds),
                                applier=self._applier())

    def _spectral_distance(self):
        return spectrum_pair_for(self.get("classical_spectrum"), self.get("quantum_spectrum"),
                                 self.config.thresholds)

    def _wigner(self):
        P, spec = self.params, self.spec()
        fq = wigner_field(self.get("steady_state"), tau=P.tau)
        tm = self.get("ulam")
        inv = self.get("invariant")
        fc = resample_classical(inv.vector, tm.grid, spec, P.tau)
        return fq, fc


def _task_currents(pipe, out):
    noisy = pipe.get("noisy_ensemble")
    clean = pipe.get("noiseless_ensemble")
    st = pipe.get("steady_state")
    P, spec = pipe.params, pipe.spec()
    j_q = quantum_current(st, P)
    metrics = {
        "J_c_thermal": noisy.J, "J_c_thermal_se": noisy.se, "J_c_thermal_sub_std": noisy.subensemble_std,
        "J_c_noiseless": clean.J, "J_c_noiseless_sub_std": clean.subensemble_std,
        "J_q": j_q, "N": spec.n_dim, "n_min": spec.n_min,
    }
    files = []
    if out is not None:
        centers = spec.p_values(P.tau)
        h_th = histogram_on_grid(noisy.ensemble, P, centers).mass
        h_cl = histogram_on_grid(clean.ensemble, P, centers).mass
        h_q = momentum_distribution(st, P).mass
        lines = ["p,P_c_thermal,P_c_noiseless,P_q\n"]
        lines += [f"{p!r},{a!r},{b!r},{c!r}\n" for p, a, b, c in
                  zip(centers.tolist(), h_th.tolist(), h_cl.tolist(), h_q.tolist())]
        atomic_write(out / "hist.csv", "".join(lines))
        _write_json(out / "currents.json", metrics)
        files = ["hist.csv", "currents.json"]
    return metrics, files


def _task_spectra(pipe, out):
    clean = pipe.get("noiseless_ensemble")
    deltas = pipe.get("spectral_distance")
    sc, sq = pipe.get("classical_spectrum"), pipe.get("quantum_spectrum")
    tm = pipe.get("ulam")
    metrics = {f"delta_{t!r}": v for t, v in deltas.items()}
    metrics.update({
        "J_c_noiseless": clean.J, "n_eigs_c": len(sc), "n_eigs_q": len(sq),
        "min_modulus_c": float(sc.moduli.min()), "min_modulus_q": float(sq.moduli.min()),
        "ulam_p_min": tm.grid.p_min, "ulam_p_max": tm.grid.p_max, "leak_fraction": tm.leak_fraction,
    })
    files = []
    if out is not None:
        atomic_write(out / "spectrum_c.csv", sc.to_csv())
        atomic_write(out / "spectrum_q.csv", sq.to_csv())
        _write_json(out / "ulam.json", tm.header())
        _write_json(out / "spectra.json", metrics)
        files = ["spectrum_c.csv", "spectrum_q.csv", "ulam.json", "spectra.json"]
    return metrics, files


def _task_equilibrium(pipe, out):
    st = pipe.get("steady_state")
    fq, fc = pipe.get("wigner")
    tm, inv = pipe.get("ulam"), pipe.get("invariant")
    o = overlap(fc, fq)
    metrics = {
        "overlap_abs": abs(o), "overlap_re": o.real, "overlap_im": o.imag,
        "negativity_q": negativity_fraction(fq), "negativity_c": negativity_fraction(fc),
        "J_q": quantum_current(st, pipe.params), "J_pf": pf_current(inv.vector, tm.grid),
        "ulam_p_min": tm.grid.p_min, "ulam_p_max": tm.grid.p_max,
    }
    files = []
    if out is not None:
        spec = pipe.spec()
        files += _atomic_save(lambda s: save_density(s, st.rho, pipe.params, spec), out / "state",
                              (".bin", ".json"))
        files += _atomic_save(fq.save, out / "field_q", (".bin", ".json"))
        files += _atomic_save(fc.save, out / "field_c", (".bin", ".json"))
        _write_json(out / "equilibrium.json", metrics)
        files.append("equilibrium.json")
    return metrics, files


_TASK_FUNCS = {"currents": _task_currents, "spectra": _task_spectra, "equilibrium": _task_equilibrium}


def _ordered_tasks(tasks):
    return [t for t in TASKS if t in set(tasks)]


def run_point(k, gamma, config, tasks=None, point_index=None, out_dir=None):
    """Run the requested tasks at one (k, gamma); failures are collected per task.

    Stages shared by several tasks are computed once.  With ``out_dir``
    every task writes its artifacts there atomically.
    """
    from threadpoolctl import threadpool_limits

    tasks = _ordered_tasks(tasks or config.tasks)
    if point_index is None:
        point_index = config.index_of(k, gamma)
        point_index = 0 if point_index is None else point_index
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
    pipe = _Pipeline(float(k), float(gamma), config, point_index)
    result = PointResult(point_index, float(k), float(gamma), ComparisonRecord(float(k), float(gamma)))
    # single-threaded BLAS keeps results independent of the worker layout
    with threadpool_limits(limits=1):
        for task in tasks:
            try:
                metrics, files = _TASK_FUNCS[task](pipe, out)
            except StageError as exc:
                result.errors[task] = {"stage": exc.stage, "error_class": exc.error_class,
                                       "message": str(exc)}
                log.error("point %d (k=%g, gamma=%g) task %s: %s", point_index, k, gamma, task, exc)
                continue
            result.metrics[task] = metrics
            result.artifacts[task] = files
    _fill_record(result.record, result.metrics)
    return result


def _fill_record(record, metrics):
    cur = metrics.get("currents")
    if cur:
        record.J_c_thermal, record.J_q = cur["J_c_thermal"], cur["J_q"]
    spe = metrics.get("spectra")
    if spe:
        record.delta_spectral = {float(key[len("delta_"):]): v for key, v in spe.items()
                                 if key.startswith("delta_")}
    return record


# --- result store ---------------------------------------------------------


def _ledger_key(k, gamma, task):
    return f"{float(k)!r}|{float(gamma)!r}|{task}"


def point_dirname(index, k, gamma):
    return f"p{index:04d}_k{k:g}_g{gamma:g}"


def _artifact_ok(path):
    try:
        if not path.is_file() or path.stat().st_size == 0:
            return False
        if path.suffix == ".json":
            json.loads(path.read_text(encoding="utf-8"))
        elif path.suffix == ".csv":
            if "," not in path.read_text(encoding="utf-8").splitlines()[0]:
                return False
    except (OSError, ValueError, IndexError):
        return False
    return True


class SweepResultStore:
    """Directory-backed store: config, ledger and per-point artifacts."""

    def __init__(self, path, config, ledger=None):
        self.path = Path(path)
        self.config = config
        self.ledger = ledger if ledger is not None else {}

    @classmethod
    def open(cls, path):
        path = Path(path)
        cfg_file = path / "config.kv"
        if not cfg_file.is_file():
            raise ConfigError(f"{path} is not a sweep store (no config.kv)")
        config = SweepConfig.load(cfg_file)
        ledger = {}
        if (path / "ledger.json").is_file():
            ledger = json.loads((path / "ledger.json").read_text(encoding="utf-8"))["entries"]
        return cls(path, config, ledger)

    def point_dir(self, index, k, gamma):
        return self.path / "points" / point_dirname(index, k, gamma)

    def save_ledger(self):
        atomic_write(self.path / "ledger.json",
                     json.dumps({"entries": self.ledger}, indent=1, sort_keys=True) + "\n")

    def entry(self, k, gamma, task):
        return self.ledger.get(_ledger_key(k, gamma, task))

    def is_done(self, k, gamma, task, verify=True):
        e = self.entry(k, gamma, task)
        if not e or e.get("status") != "done":
            return False
        if not verify:
            return True
        base = self.path / e["dir"]
        return all(_artifact_ok(base / name) for name in e["artifacts"])

    def record(self, entry_data):
        self.ledger[_ledger_key(entry_data["k"], entry_data["gamma"], entry_data["task"])] = entry_data

    def adopt_markers(self):
        """Fold ``<task>.done.json`` markers left by interrupted runs into the ledger."""
        adopted = 0
        for idx, k, g in self.config.points():
            d = self.point_dir(idx, k, g)
            for task in TASKS:
                marker = d / f"{task}.done.json"
                if marker.is_file() and not self.is_done(k, g, task, verify=False):
                    try:
                        self.record(json.loads(marker.read_text(encoding="utf-8")))
                        adopted += 1
                    except ValueError:
                        continue
        return adopted

    def records(self):
        """ComparisonRecords in point order for points with any completed task."""
        out = []
        for idx, k, g in self.config.points():
            metrics = {t: self.entry(k, g, t)["metrics"] for t in TASKS if self.is_done(k, g, t, False)}
            if metrics:
                out.append(_fill_record(ComparisonRecord(k, g), metrics))
        return out

    def failures(self):
        return {key: e for key, e in self.ledger.items() if e.get("status") == "failed"}

    def write_tables(self):
        atomic_write(self.path / "records.csv", records_to_csv(self.records()))
        atomic_write(self.path / "points.csv", self._points_csv())

    def _points_csv(self):
        cols = ["J_c_thermal_se", "J_c_thermal_sub_std", "J_c_noiseless", "J_c_noiseless_sub_std",
                "N", "n_min", "overlap_abs", "negativity_q", "negativity_c", "J_pf", "min_modulus_c",
                "min_modulus_q", "leak_fraction"]
        lines = ["index,k,gamma," + ",".join(f"status_{t}" for t in TASKS) + "," + ",".join(cols) + "\n"]
        for idx, k, g in self.config.points():
            status, merged = [], {}
            for t in TASKS:
                e = self.entry(k, g, t)
                status.append(e["status"] if e else "")
                if e and e["status"] == "done":
                    merged.update(e["metrics"])
            vals = ["" if merged.get(c) is None else repr(merged[c]) for c in cols]
            lines.append(f"{idx},{k!r},{g!r}," + ",".join(status) + "," + ",".join(vals) + "\n")
        return "".join(lines)


@contextlib.contextmanager
def store_lock(path):
    """Exclusive ownership of a store via ``.lock``; stale locks of dead processes are taken over."""
    lock = Path(path) / ".lock"
    for _ in range(2):
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            break
        except FileExistsError:
            try:
                pid = int(lock.read_text().strip() or 0)
            except (OSError, ValueError):
                pid = 0
            if pid and _alive(pid):
                raise StoreLockedError(f"store {path} is locked by process {pid}") from None
            with contextlib.suppress(OSError):
                lock.unlink()
    else:
        raise StoreLockedError(f"cannot acquire {lock}")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(OSError):
            lock.unlink()


def _alive(pid):
    if pid == os.getpid():
        return True
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def default_workers():
    env = os.environ.get(WORKERS_ENV, "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{WORKERS_ENV} must be >= 1")
        return n
    return os.cpu_count() or 1


def _job(config_kv, store_path, index, k, gamma, tasks):
    """Worker entry: run one point and leave a done-marker per finished task."""
    config = SweepConfig.from_kv(config_kv)
    rel = Path("points") / point_dirname(index, k, gamma)
    out = Path(store_path) / rel
    res = run_point(k, gamma, config, tasks, point_index=index, out_dir=out)
    entries = []
    for task in tasks:
        entry = {"k": k, "gamma": gamma, "task": task, "index": index, "dir": str(rel)}
        if task in res.metrics:
            entry.update(status="done", metrics=res.metrics[task], artifacts=res.artifacts[task])
            _write_json(out / f"{task}.done.json", entry)
        else:
            entry.update(status="failed", **res.errors[task])
        entries.append(entry)
    # plain JSON types, so in-memory and reloaded ledgers format identically
    return json.loads(json.dumps(entries))


def _init_worker():
    logging.basicConfig(level=logging.WARNING)


def run_sweep(config, workers=None, force=False, store_path=None):
    """Evaluate every pending (point, task) of ``config`` into its store; returns the store."""
    path = Path(store_path or config.output_dir)
    check_writable(path)
    path.mkdir(parents=True, exist_ok=True)
    with store_lock(path):
        cfg_file = path / "config.kv"
        if cfg_file.is_file():
            existing = SweepConfig.load(cfg_file)
            if existing.to_kv() != config.replace(output_dir=existing.output_dir).to_kv():
                raise ConfigError(f"store {path} was created with a different config")
            config = existing
        else:
            atomic_write(cfg_file, config.to_kv())
        store = SweepResultStore.open(path)
        store.adopt_markers()
        jobs = []
        for idx, k, g in config.points():
            todo = [t for t in _ordered_tasks(config.tasks) if force or not store.is_done(k, g, t)]
            if todo:
                jobs.append((idx, k, g, todo))
        log.info("sweep %s: %d points pending", path, len(jobs))
        workers = workers or default_workers()
        kv = config.to_kv()
        if workers == 1 or len(jobs) <= 1:
            for idx, k, g, todo in jobs:
                _commit(store, _job(kv, str(path), idx, k, g, todo))
        else:
            with cf.ProcessPoolExecutor(max_workers=min(workers, len(jobs)),
                                        initializer=_init_worker) as pool:
                futs = {pool.submit(_job, kv, str(path), *job): job for job in jobs}
                for fut in cf.as_completed(futs):
                    idx, k, g, todo = futs[fut]
                    try:
                        entries = fut.result()
                    except Exception as exc:  # a crashed worker fails the whole point
                        entries = [{"k": k, "gamma": g, "task": t, "index": idx,
                                    "dir": str(Path("points") / point_dirname(idx, k, g)),
                                    "status": "failed", "stage": None,
                                    "error_class": type(exc).__name__, "message": str(exc)}
                                   for t in todo]
                    _commit(store, entries)
        store.write_tables()
        for fig in ("fig1", "fig2"):
            try:
                emit_plotdata(store, fig)
            except MissingArtifactError as exc:
                log.info("%s not emitted: %s", fig, exc)
    return store


def _commit(store, entries):
    for e in entries:
        store.record(e)
    store.save_ledger()


def resume(store_path, workers=None, force=False):
    """Continue a sweep from its store, skipping every verified ledger entry."""
    store = SweepResultStore.open(store_path)
    return run_sweep(store.config, workers=workers, force=force, store_path=store_path)


# --- plot tables ----------------------------------------------------------


def _require(store, task):
    pts = store.config.points()
    if task not in store.config.tasks:
        raise MissingArtifactError(f"store was not configured with task {task}",
                                   missing=[_ledger_key(k, g, task) for _, k, g in pts])
    missing = [_ledger_key(k, g, task) for _, k, g in pts if not store.is_done(k, g, task)]
    if missing:
        raise MissingArtifactError(f"{len(missing)} ledger entries missing for {task}: "
                                   f"{', '.join(missing[:5])}", missing=missing)
    return pts


def _fmt(v):
    return "" if v is None else repr(float(v))


def _emit_fig1(store, out):
    pts = _require(store, "currents")
    lines = ["k,gamma,abs_diff,sign_diff,J_c_thermal,J_q\n"]
    for _, k, g in pts:
        m = store.entry(k, g, "currents")["metrics"]
        rec = ComparisonRecord(k, g, m["J_c_thermal"], m["J_q"])
        lines.append(f"{k!r},{g!r},{_fmt(rec.abs_diff)},{_fmt(rec.sign_diff)},"
                     f"{_fmt(rec.J_c_thermal)},{_fmt(rec.J_q)}\n")
    target = out / "fig1.csv"
    atomic_write(target, "".join(lines))
    return [target]


def _emit_fig2(store, out):
    _require(store, "spectra")
    ths = store.config.thresholds
    written = []
    for g in store.config.gamma_list:
        lines = ["k," + ",".join(f"delta_{t!r}" for t in ths) + ",J_c_noiseless\n"]
        for _, k, gg in store.config.points():
            if gg != g:
                continue
            m = store.entry(k, g, "spectra")["metrics"]
            lines.append(f"{k!r}," + ",".join(_fmt(m.get(f"delta_{float(t)!r}")) for t in ths)
                         + f",{_fmt(m['J_c_noiseless'])}\n")
        target = out / f"fig2_gamma{g:g}.csv"
        atomic_write(target, "".join(lines))
        written.append(target)
    return written


def _load_spectrum(path):
    return Spectrum.from_csv(path.read_text(encoding="utf-8"))


def _emit_fig3(store, out):
    _require(store, "spectra")
    written = []
    for g in store.config.gamma_list:
        eig_lines = ["k,re,im,source\n"]
        pair_lines = ["k,re_c,im_c,re_q,im_q\n"]
        for idx, k, gg in store.config.points():
            if gg != g:
                continue
            base = store.path / store.entry(k, g, "spectra")["dir"]
            sc, sq = _load_spectrum(base / "spectrum_c.csv"), _load_spectrum(base / "spectrum_q.csv")
            for src, sp in (("c", sc), ("q", sq)):
                eig_lines += [f"{k!r},{lam.real!r},{lam.imag!r},{src}\n" for lam in sp.eigenvalues.tolist()]
            try:
                pairs = matched_pairs(sc, sq, PAIR_THRESHOLD)
            except EmptyError:
                pairs = []
            pair_lines += [f"{k!r},{c.real!r},{c.imag!r},{q.real!r},{q.imag!r}\n" for c, q in pairs]
        for name, lines in ((f"fig3_gamma{g:g}_eigs.csv", eig_lines),
                            (f"fig3_gamma{g:g}_pairs.csv", pair_lines)):
            atomic_write(out / name, "".join(lines))
            written.append(out / name)
    return written


def _emit_fig4(store, out):
    pts = _require(store, "equilibrium")
    written = []
    for idx, k, g in pts:
        base = store.path / store.entry(k, g, "equilibrium")["dir"]
        for src in ("q", "c"):
            pos, neg = PhaseField.load(str(base / f"field_{src}")).split_sign()
            for part, fld in (("pos", pos), ("neg", neg)):
                target = out / f"fig4_k{k:g}_g{g:g}_{src}_{part}.csv"
                atomic_write(target, fld.to_csv())
                written.append(target)
    return written


def _emit_fig5(store, out):
    pts = _require(store, "currents")
    written = []
    for idx, k, g in pts:
        base = store.path / store.entry(k, g, "currents")["dir"]
        target = out / f"fig5_k{k:g}_g{g:g}.csv"
        atomic_write(target, (base / "hist.csv").read_text(encoding="utf-8"))
        written.append(target)
    return written


_EMITTERS = {"fig1": _emit_fig1, "fig2": _emit_fig2, "fig3": _emit_fig3, "fig4": _emit_fig4,
             "fig5": _emit_fig5}


def emit_plotdata(store, figure, out_dir=None):
    """Write the CSV tables behind ``figure`` into ``store/figures``; returns the paths."""
    if figure not in _EMITTERS:
        raise ValueError(f"figure must be one of {FIGURES}")
    if not isinstance(store, SweepResultStore):
        store = SweepResultStore.open(store)
    out = Path(out_dir) if out_dir else store.path / "figures"
    out.mkdir(parents=True, exist_ok=True)
    return _EMITTERS[figure](store, out)
