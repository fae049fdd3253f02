import numpy as np
import pytest

from kickratchet.eigen import dense_spectrum
from kickratchet.errors import DomainError, SizeError
from kickratchet.params import Params, make_params
from kickratchet.quantum import (ChannelApplier, HilbertSpec, assemble_superoperator, check_density,
                                 dissipate, dissipative_segment, kick_apply,
                                 kick_unitary, load_density, momentum_distribution, period_map,
                                 purity, quantum_current, quantum_spectrum, quantum_steady_state,
                                 save_density)

P5 = Params.from_rescaled(5.0, 0.5)


def random_state(n, rng, rank=None):
    a = rng.normal(size=(n, rank or n)) + 1j * rng.normal(size=(n, rank or n))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def basis_state(spec, n):
    rho = np.zeros((spec.n_dim, spec.n_dim), dtype=complex)
    i = n - spec.n_min
    rho[i, i] = 1.0
    return rho


def test_hilbert_spec_validation():
    with pytest.raises(DomainError):
        HilbertSpec(7)
    with pytest.raises(DomainError):
        HilbertSpec(6)
    with pytest.raises(DomainError):
        HilbertSpec(16, 1)
    s = HilbertSpec(16)
    assert s.n_min == -8 and s.n_max == 7 and s.zero_index == 8


def test_covering_window_holds_attractor():
    for K, g in [(5.0, 0.5), (5.55, 0.55), (9.25, 0.55)]:
        p = Params.from_rescaled(K, g)
        spec = HilbertSpec.covering(p)
        lo, hi = p.p_bounds()
        plo, phi_ = spec.p_window(p.tau)
        assert plo < lo and phi_ > hi and spec.n_dim % 8 == 0


def test_kick_zero_is_identity():
    rng = np.random.default_rng(0)
    rho = random_state(16, rng)
    assert np.allclose(kick_apply(rho, make_params(0, 0.5)), rho, atol=1e-13)


def test_kick_preserves_purity_and_matches_dense_unitary():
    rng = np.random.default_rng(1)
    spec = HilbertSpec(32, -12)
    rho = random_state(32, rng, rank=2)
    p = make_params(3.0, 0.5)
    out = kick_apply(rho, p, spec)
    assert purity(out) == pytest.approx(purity(rho), abs=1e-10)
    u = kick_unitary(p, spec)
    assert np.allclose(u @ u.conj().T, np.eye(32), atol=1e-12)
    assert np.allclose(u @ rho @ u.conj().T, out, atol=1e-12)


def test_kick_on_zero_momentum_matches_quadrature():
    k, spec = 2.0, HilbertSpec(64)
    p = make_params(k, 0.5)
    out = kick_apply(basis_state(spec, 0), p, spec)
    # Fourier coefficients c_m of exp(-i k V(x)) by a fine trapezoid rule
    x = 2 * np.pi * np.arange(4096) / 4096
    f = np.exp(-1j * k * (np.cos(x) + 0.25 * np.cos(2 * x + p.phi)))
    c = np.array([np.mean(f * np.exp(-1j * m * x)) for m in spec.n_values])
    assert np.allclose(np.real(np.diag(out)), np.abs(c) ** 2, atol=1e-10)


def test_free_segment_without_damping():
    rng = np.random.default_rng(2)
    spec = HilbertSpec(16)
    rho = random_state(16, rng)
    p = make_params(5, 1.0)
    out = dissipative_segment(rho, p, spec=spec)
    n = spec.n_values
    phase = np.exp(-0.5j * p.tau * (n[:, None] ** 2 - n[None, :] ** 2))
    assert np.allclose(out, phase * rho, atol=1e-13)
    assert np.allclose(np.diag(out), np.diag(rho))


@pytest.mark.parametrize("gamma", [0.4, 0.5, 0.6])
@pytest.mark.parametrize("integrator", ["kraus", "rk4"])
def test_ehrenfest_contraction(gamma, integrator):
    rng = np.random.default_rng(3)
    spec = HilbertSpec(32, -14)
    p = make_params(5, gamma)
    n = spec.n_values
    for _ in range(5):
        rho = random_state(32, rng)
        out = dissipative_segment(rho, p, spec=spec, integrator=integrator)
        before, after = np.real(np.diag(rho) @ n), np.real(np.diag(out) @ n)
        assert after == pytest.approx(gamma * before, abs=1e-6)


def test_two_level_decay():
    spec = HilbertSpec(8)
    out = dissipate(basis_state(spec, 1), make_params(0, 0.5), spec)
    z = spec.zero_index
    diag = np.real(np.diag(out))
    assert diag[z] == pytest.approx(0.5, abs=1e-14) and diag[z + 1] == pytest.approx(0.5, abs=1e-14)
    assert np.abs(np.delete(diag, [z, z + 1])).max() == 0


def test_kraus_and_rk4_agree():
    rng = np.random.default_rng(4)
    spec = HilbertSpec(32, -20)
    p = make_params(0, 0.55)
    rho = random_state(32, rng)
    a = dissipate(rho, p, spec, "kraus")
    b = dissipate(rho, p, spec, "rk4", substeps=400)
    assert np.abs(a - b).max() < 1e-8


def test_channel_laws():
    rng = np.random.default_rng(5)
    spec = HilbertSpec(32, -16)
    p = make_params(5.0, 0.5)
    ch = ChannelApplier(p, spec)
    r1, r2 = random_state(32, rng), random_state(32, rng)
    for rho in (r1, r2):
        out = ch.apply(rho)
        assert abs(np.trace(out) - 1) < 1e-8
        assert np.abs(out - out.conj().T).max() < 1e-9
        assert np.linalg.eigvalsh(0.5 * (out + out.conj().T)).min() > -1e-7
    a, b = 0.3, -1.7 + 0.4j
    lin = ch.apply(a * r1 + b * r2) - (a * ch.apply(r1) + b * ch.apply(r2))
    assert np.abs(lin).max() < 1e-10


def test_long_iteration_keeps_trace_and_positivity():
    rng = np.random.default_rng(6)
    spec = HilbertSpec(32, -16)
    ch = ChannelApplier(make_params(5.0, 0.5), spec)
    rho = random_state(32, rng)
    for t in range(1000):
        rho = ch.apply(rho)
        if t % 100 == 99:
            assert abs(np.trace(rho) - 1) < 1e-8
            assert np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() > -1e-7


def test_period_map_function_matches_applier():
    rng = np.random.default_rng(7)
    spec = HilbertSpec(16)
    rho = random_state(16, rng)
    p = make_params(2.0, 0.6)
    assert np.allclose(period_map(rho, p, spec), ChannelApplier(p, spec).apply(rho))


def test_steady_state_zero_kick():
    spec = HilbertSpec(16)
    st = quantum_steady_state(make_params(0, 0.5), spec)
    assert np.allclose(st.rho, basis_state(spec, 0), atol=1e-8)


def test_steady_state_is_fixed_point_and_iteration_limit():
    spec = HilbertSpec.covering(P5)
    st = quantum_steady_state(P5, spec)
    assert abs(st.eigenvalue - 1) < 1e-8
    check_density(st.rho, tol=1e-10, pos_tol=1e-8)
    ch = ChannelApplier(P5, spec)
    rho = ch.iterate(random_state(spec.n_dim, np.random.default_rng(8), rank=3), 400)
    assert np.abs(np.linalg.eigvalsh(rho - st.rho)).sum() < 1e-6


def test_steady_state_rejects_gamma_one():
    with pytest.raises(DomainError):
        quantum_steady_state(make_params(1.0, 1.0), HilbertSpec(16))


def test_truncation_robustness():
    s1 = HilbertSpec.covering(P5)
    s2 = HilbertSpec(2 * s1.n_dim, s1.n_min - s1.n_dim // 2)
    j1 = quantum_current(quantum_steady_state(P5, s1), P5)
    j2 = quantum_current(quantum_steady_state(P5, s2), P5)
    assert abs(j1 - j2) < 1e-3


def test_quantum_current_examples():
    spec = HilbertSpec(16)
    p = make_params(5, 0.5)
    assert quantum_current(basis_state(spec, 0), p, spec) == 0
    assert quantum_current(basis_state(spec, 3), p, spec) == pytest.approx(0.411)
    mix = 0.5 * (basis_state(spec, 4) + basis_state(spec, -4))
    assert quantum_current(mix, p, spec) == pytest.approx(0.0, abs=1e-15)


def test_momentum_distribution():
    spec = HilbertSpec(16)
    p = make_params(5, 0.5)
    h = momentum_distribution(basis_state(spec, 2), p, spec)
    assert h.centers[np.argmax(h.mass)] == pytest.approx(0.274)
    assert h.mass.max() == 1.0
    rho = random_state(16, np.random.default_rng(9))
    assert momentum_distribution(rho, p, spec).mass.sum() == pytest.approx(1.0, abs=1e-10)


def test_matrix_free_spectrum_matches_assembled_superoperator():
    spec = HilbertSpec(16)
    p = make_params(4.0, 0.5)
    ch = ChannelApplier(p, spec)
    dense = dense_spectrum(assemble_superoperator(ch)).eigenvalues
    sp = quantum_spectrum(p, spec, k_eigs=30, tol=1e-10)
    for lam in sp.eigenvalues:
        assert np.abs(dense - lam).min() < 1e-6
    assert abs(sp.eigenvalues[0] - 1) < 1e-8
    assert sp.moduli.max() <= 1 + 1e-6
    # conjugation closure from Hermiticity preservation
    for lam in dense[:30]:
        assert np.abs(dense - np.conj(lam)).min() < 1e-8


def test_assembly_limit():
    with pytest.raises(SizeError):
        assemble_superoperator(ChannelApplier(make_params(1, 0.5), HilbertSpec(40)))


def test_cyclic_order_leaves_spectrum_invariant():
    spec = HilbertSpec(16)
    p = make_params(4.0, 0.5)
    a = dense_spectrum(assemble_superoperator(ChannelApplier(p, spec, order="map"))).eigenvalues
    b = dense_spectrum(assemble_superoperator(ChannelApplier(p, spec, order="kick_first"))).eigenvalues
    for lam in a[:40]:
        assert np.abs(b - lam).min() < 1e-8


def test_density_round_trip(tmp_path):
    spec = HilbertSpec(16, -5)
    rho = random_state(16, np.random.default_rng(10))
    save_density(tmp_path / "state", rho, P5, spec)
    back, spec2, head = load_density(tmp_path / "state")
    assert np.array_equal(back, rho) and spec2 == spec
    assert head["params"]["k"] == P5.k
    assert abs(head["trace"][0] - 1) < 1e-12
