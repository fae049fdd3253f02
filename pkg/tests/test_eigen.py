import math

import numpy as np
import pytest
import scipy.sparse as sp

from kickratchet.eigen import Spectrum, arnoldi_above, arnoldi_topk, dense_spectrum, real_operator
from kickratchet.errors import ConvergenceError, SizeError


def _match(a, b):
    """Greedy multiset matching; returns the largest pairwise distance."""
    b = list(b)
    worst = 0.0
    for z in a:
        i = int(np.argmin([abs(z - w) for w in b]))
        worst = max(worst, abs(z - b.pop(i)))
    return worst


def _stochastic(n, seed, density=None):
    rng = np.random.default_rng(seed)
    a = rng.random((n, n))
    if density is not None:
        a *= rng.random((n, n)) < density
        a[np.arange(n), (np.arange(n) + 1) % n] += 0.5
    return a / a.sum(axis=0)


def test_identity():
    s = arnoldi_topk(lambda v: v, 50, 3)
    assert np.allclose(s.eigenvalues, 1.0)
    assert s.residuals.max() < 1e-12


def test_rotation():
    th = 0.7
    r = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    s = arnoldi_topk(lambda v: r @ v, 2, 2)
    assert _match(s.eigenvalues, [np.exp(1j * th), np.exp(-1j * th)]) < 1e-12


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_stochastic_matches_dense(seed):
    a = _stochastic(200, seed, density=0.05)
    ref = dense_spectrum(a).eigenvalues[:10]
    s = arnoldi_topk(real_operator(a), 200, 10, tol=1e-10)
    assert _match(s.eigenvalues, ref) < 1e-8
    assert abs(s.eigenvalues[0] - 1) < 1e-10
    assert s.residuals.max() <= 1e-10


def test_dense_known_spectra():
    assert dense_spectrum(np.diag([0.1, 0.9, 0.5])).eigenvalues == pytest.approx([0.9, 0.5, 0.1])
    comp = np.array([[1.0, -0.25], [1.0, 0.0]])
    assert np.allclose(dense_spectrum(comp).eigenvalues, 0.5, atol=1e-7)


def test_dense_guard():
    with pytest.raises(SizeError):
        dense_spectrum(np.broadcast_to(0.0, (4097, 4097)))


def test_real_operator_conjugate_closure():
    a = _stochastic(120, 5, density=0.1)
    s = arnoldi_topk(real_operator(sp.csc_matrix(a)), 120, 12, tol=1e-10)
    lam = s.eigenvalues
    for z in lam:
        if abs(z.imag) > 1e-6 and min(abs(lam - z.conjugate())) > 1e-6:
            # the partner may sit just past the requested count
            assert abs(abs(z) - abs(lam[-1])) < 1e-6


def test_reproducible_with_seed():
    a = _stochastic(150, 3, density=0.1)
    s1 = arnoldi_topk(real_operator(a), 150, 6, seed=4)
    s2 = arnoldi_topk(real_operator(a), 150, 6, seed=4)
    assert np.array_equal(s1.eigenvalues, s2.eigenvalues)


def test_eigenvectors_satisfy_definition():
    a = _stochastic(100, 9, density=0.1)
    s = arnoldi_topk(real_operator(a), 100, 4)
    for lam, v in zip(s.eigenvalues, s.eigenvectors):
        assert np.linalg.norm(a @ v - lam * v) < 1e-7


def test_convergence_error():
    a = _stochastic(300, 1)
    with pytest.raises(ConvergenceError) as info:
        arnoldi_topk(real_operator(a), 300, 40, tol=1e-14, max_restarts=0, krylov_dim=90)
    assert info.value.converged < 40


def test_arnoldi_above_reaches_cut():
    d = np.linspace(1.0, 0.01, 300)
    s = arnoldi_above(lambda v: d * v, 300, 0.5, k_start=10)
    assert s.moduli.min() < 0.5
    assert np.sum(s.moduli >= 0.5) == np.sum(d >= 0.5)


def test_bad_k():
    with pytest.raises(ValueError):
        arnoldi_topk(lambda v: v, 5, 6)


def test_serialization_round_trip():
    s = Spectrum(np.array([1.0, 0.5 + 0.25j, 0.5 - 0.25j]), None, np.array([1e-12, 2e-11, 2e-11]))
    for back in (Spectrum.from_csv(s.to_csv()), Spectrum.from_json(s.to_json())):
        assert np.array_equal(back.eigenvalues, s.eigenvalues)
        assert np.array_equal(back.residuals, s.residuals)
    assert s.to_csv().splitlines()[0] == "re,im,modulus,residual"
