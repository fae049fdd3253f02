import math

import numpy as np
import pytest

from kickratchet import kernels
from kickratchet.classical import (Ensemble, PhasePoint, classical_current, evolve_ensemble,
                                   histogram_on_grid, initial_ensemble, momentum_histogram,
                                   step_deterministic, step_thermal, time_averaged_current)
from kickratchet.errors import DomainError, TrajectoryOverflowError
from kickratchet.params import Params, SeedLineage, make_params
from kickratchet.rng import CounterNormal


def test_step_deterministic_hand_value():
    p = make_params(5, 0.5)
    s = step_deterministic(PhasePoint(0.0, 2.0), p)
    assert s.n == pytest.approx(3.5, abs=1e-15)
    assert s.x == pytest.approx(0.137 * 3.5, abs=1e-15)
    assert s.x == pytest.approx(0.4795, abs=1e-12)


def test_step_zero_kick():
    s = step_deterministic(PhasePoint(1.0, 4.0), make_params(0, 0.5))
    assert (s.n, s.x) == pytest.approx((2.0, 1.274))


def test_free_rotation_keeps_n():
    p = make_params(0, 1.0)
    s = PhasePoint(0.3, 7.0)
    for _ in range(20):
        s = step_deterministic(s, p)
    assert s.n == 7.0


def test_null_rng_matches_deterministic():
    p = make_params(5, 0.5)
    s = PhasePoint(0.7, -1.3)
    assert step_thermal(s, p, None) == step_deterministic(s, p)


def test_thermal_rejected_at_gamma_one():
    with pytest.raises(DomainError):
        step_thermal(PhasePoint(0, 0), make_params(5, 1.0), None)


def test_guard_raises():
    with pytest.raises(TrajectoryOverflowError):
        step_deterministic(PhasePoint(0.0, 10.0), make_params(5, 1.0), guard=5.0)
    e = Ensemble([0.0, 1.0], [0.0, 1e9], SeedLineage(1))
    with pytest.raises(TrajectoryOverflowError) as info:
        evolve_ensemble(e, make_params(5, 1.0), 2, False)
    assert info.value.index == 1


def test_zero_steps_is_identity():
    p = make_params(5, 0.5)
    e = initial_ensemble(100, SeedLineage(3), p)
    out = evolve_ensemble(e, p, 0, True)
    assert np.array_equal(out.x, e.x) and np.array_equal(out.n, e.n)


def test_kernel_matches_scalar_map():
    p = Params.from_rescaled(5.0, 0.5)
    e = initial_ensemble(5, SeedLineage(11), p)
    out = evolve_ensemble(e, p, 30, False)
    for i, pt in enumerate(e.points()):
        for _ in range(30):
            pt = step_deterministic(pt, p)
        assert pt.x == pytest.approx(out.x[i], rel=1e-9, abs=1e-9)
        assert pt.n == pytest.approx(out.n[i], rel=1e-9, abs=1e-9)


def test_noisy_kernel_matches_scalar_stream():
    # trajectory i draws its step-t noise from counter t of its own key
    p = Params.from_rescaled(5.0, 0.5)
    e = initial_ensemble(4, SeedLineage(12), p)
    out = evolve_ensemble(e, p, 10, True)
    keys = e.trajectory_keys()
    for i, pt in enumerate(e.points()):
        rng = CounterNormal(int(keys[i]))
        for _ in range(10):
            pt = step_thermal(pt, p, rng)
        assert pt.n == pytest.approx(out.n[i], rel=1e-9, abs=1e-9)


def test_evolution_is_split_invariant():
    p = Params.from_rescaled(5.0, 0.5)
    e = initial_ensemble(500, SeedLineage(5), p)
    whole = evolve_ensemble(e, p, 40, True)
    parts = evolve_ensemble(evolve_ensemble(e, p, 15, True), p, 25, True)
    assert whole.to_bytes() == parts.to_bytes()


def test_backends_agree_on_short_horizon():
    p = Params.from_rescaled(5.0, 0.5)
    e = initial_ensemble(1000, SeedLineage(6), p)
    args = (e.x, e.n, e.trajectory_keys(), 0, 20, p.k, p.gamma, p.tau, p.a, p.phi, p.noise_sigma_n, 1e6)
    a = kernels.load("numba").evolve_points(*args)
    b = kernels.load("numpy").evolve_points(*args)
    assert np.allclose(a[0], b[0], rtol=1e-12, atol=1e-9)
    assert np.allclose(a[1], b[1], rtol=1e-12, atol=1e-9)


def test_contraction_without_kick():
    p = make_params(0, 0.6)
    e = Ensemble([0.1, 2.0], [10.0, -3.0], SeedLineage(0))
    out = evolve_ensemble(e, p, 25, False)
    assert np.allclose(np.abs(out.n), 0.6 ** 25 * np.abs(e.n), rtol=1e-12)


def test_current_trivial_cases():
    p = make_params(5, 0.5)
    e = Ensemble(np.zeros(10), np.full(10, 0.5 / p.tau), SeedLineage(0))
    assert classical_current(e, p)[0] == pytest.approx(0.5)
    m = Ensemble([0.1, -0.1, 1.0, -1.0], [2.0, -2.0, 5.0, -5.0], SeedLineage(0))
    assert classical_current(m, p)[0] == pytest.approx(0.0, abs=1e-15)


def test_symmetric_potential_has_no_current():
    p = Params.from_rescaled(5.0, 0.5, a=0.0)
    half = initial_ensemble(2000, SeedLineage(21), p)
    e = Ensemble(np.concatenate([half.x, -half.x]), np.concatenate([half.n, -half.n]), half.seed)
    e = evolve_ensemble(e, p, 200, False)
    est = time_averaged_current(e, p, 200, False)
    assert abs(est.J) <= 3 * est.se + 1e-9


def test_noise_calibration():
    # gamma = 0, k = 0 and n = 0: one step leaves p = xi
    p = make_params(0, 0.0)
    e = Ensemble(np.zeros(1_000_000), np.zeros(1_000_000), SeedLineage(77))
    xi = evolve_ensemble(e, p, 1, True).p(p)
    assert xi.var() == pytest.approx(0.137, rel=0.01)
    assert abs(xi.mean()) < 5 * math.sqrt(0.137 / xi.size)


def _reference_current(params, size, transient, steps, seed):
    """Straightforward loop over the map with numpy's own generator."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 2 * np.pi, size)
    n = rng.uniform(-np.pi, np.pi, size) / params.tau
    sigma = math.sqrt(params.hbar_eff) / params.tau
    acc = np.zeros(size)
    for t in range(transient + steps):
        n = params.gamma * n + params.k * (np.sin(x) + params.a * np.sin(2 * x + params.phi))
        n = n + sigma * rng.standard_normal(size)
        x = x + params.tau * n
        if t >= transient:
            acc += n
    pbar = params.tau * acc / steps
    return pbar.mean(), pbar.std(ddof=1) / math.sqrt(size)


def test_current_against_independent_implementation():
    p = Params.from_rescaled(5.0, 0.5)
    e = evolve_ensemble(initial_ensemble(20_000, SeedLineage(31), p), p, 300, True)
    est = time_averaged_current(e, p, 1000, True)
    j_ref, se_ref = _reference_current(p, 20_000, 300, 1000, seed=4)
    assert abs(est.J - j_ref) <= 3 * math.hypot(est.se, se_ref)


def test_histogram_single_point_and_mirror():
    p = make_params(5, 0.5)
    h = momentum_histogram(Ensemble([0.0], [3.0], SeedLineage(0)), p, 0.1)
    assert h.mass.size == 1 and h.mass[0] == 1.0
    rng = np.random.default_rng(0)
    n = rng.normal(size=20000) * 10
    m = Ensemble(np.zeros(2 * n.size), np.concatenate([n, -n]), SeedLineage(0))
    h = momentum_histogram(m, p, 0.2)
    assert np.allclose(h.mass, h.mass[::-1], atol=1e-12)
    assert h.mass.sum() == pytest.approx(1.0, abs=1e-12)
    assert h.p_edges[0] <= m.p(p).min() and h.p_edges[-1] >= m.p(p).max()


def test_histogram_on_grid():
    p = make_params(5, 0.5)
    e = Ensemble(np.zeros(3), np.array([0.0, 1.0, 1.0]), SeedLineage(0))
    h = histogram_on_grid(e, p, p.tau * np.arange(-2, 3))
    assert np.allclose(h.mass, [0, 0, 1 / 3, 2 / 3, 0])


def test_ensemble_serialization():
    p = make_params(5, 0.5)
    e = evolve_ensemble(initial_ensemble(50, SeedLineage(8, 2, 1), p), p, 3, True)
    back = Ensemble.from_bytes(e.to_bytes())
    assert np.array_equal(back.x, e.x) and np.array_equal(back.n, e.n)
    assert back.seed == e.seed and back.steps_taken == 3
    assert e.to_csv().splitlines()[0] == "x,n"
