import math
import warnings

import numpy as np
import pytest

from kickratchet import kernels
from kickratchet.classical import evolve_ensemble, initial_ensemble, time_averaged_current
from kickratchet.eigen import arnoldi_topk, dense_spectrum, real_operator
from kickratchet.errors import DomainError, LeakError
from kickratchet.params import Params, SeedLineage, make_params
from kickratchet.ulam import (ResolutionWarning, TransferMatrix, UlamGrid, auto_window, build_grid,
                              build_ulam_matrix, invariant_vector, normalize_density, p_marginal,
                              pf_current, power_iterate)

P5 = Params.from_rescaled(5.0, 0.5)


def test_grid_geometry():
    g = build_grid(2, -math.pi, math.pi)
    assert g.n_cells == 4
    (x0, x1), (p0, p1) = g.cell_bounds(g.cell(0, 0))
    assert (x0, x1, p0, p1) == pytest.approx((0, math.pi, -math.pi, 0))
    assert sorted(g.cell(ix, ip) for ix in range(2) for ip in range(2)) == [0, 1, 2, 3]
    with pytest.raises(DomainError):
        build_grid(1, -1, 1)
    with pytest.raises(DomainError):
        build_grid(4, 1, -1)


def test_resolution_warning_threshold():
    p = make_params(0, 0.5)
    assert 2 * math.pi / 45 > 0.137 >= 2 * math.pi / 46
    with pytest.warns(ResolutionWarning):
        build_ulam_matrix(build_grid(45, -1, 1), p, 4, noisy=False)
    with warnings.catch_warnings():
        warnings.simplefilter("error", ResolutionWarning)
        build_ulam_matrix(build_grid(46, -1, 1), p, 4, noisy=False)


def test_full_damping_collapses_to_zero_row():
    # gamma = 0, k = 0: every sample lands on p = 0 at its own x
    m = 8
    grid = build_grid(m, -1.0, 1.0)
    tm = build_ulam_matrix(grid, make_params(0, 0.0), 64, noisy=False)
    dense = tm.matrix.toarray()
    assert np.all((dense == 0) | (dense == 1))
    assert np.all((dense == 1).sum(axis=0) == 1)
    rows = dense.argmax(axis=0)
    assert np.array_equal(rows // m, np.full(m * m, m // 2))
    assert np.array_equal(rows % m, np.arange(m * m) % m)


def test_free_rotation_keeps_momentum_rows():
    m = 16
    grid = build_grid(m, -2.0, 2.0)
    tm = build_ulam_matrix(grid, make_params(0, 1.0), 100, noisy=False)
    coo = tm.matrix.tocoo()
    assert np.array_equal(coo.row // m, coo.col // m)


def test_columns_stochastic_and_entries_bounded():
    lo, hi = auto_window(P5)
    tm = build_ulam_matrix(build_grid(32, lo, hi), P5, 400, seed=SeedLineage(3))
    assert np.abs(tm.column_sums() - 1).max() < 1e-12
    assert tm.matrix.data.min() > 0 and tm.matrix.data.max() <= 1
    v = np.random.default_rng(0).random(tm.dim)
    assert tm.apply(v).sum() == pytest.approx(v.sum(), rel=1e-12)


def test_leak_error_and_auto_widen():
    grid = build_grid(16, -1.0, 1.0)
    with pytest.raises(LeakError) as info:
        build_ulam_matrix(grid, P5, 16)
    assert info.value.leak_fraction > 1e-3
    tm = build_ulam_matrix(grid, P5, 16, auto_widen=True, max_widen=5)
    assert tm.grid.p_max - tm.grid.p_min > 2.0
    assert tm.leak_fraction <= 1e-3
    assert np.abs(tm.column_sums() - 1).max() < 1e-12


def test_invariant_vector_matches_power_iteration():
    lo, hi = auto_window(P5)
    tm = build_ulam_matrix(build_grid(64, lo, hi), P5, 10_000, seed=SeedLineage(1))
    inv = invariant_vector(tm)
    assert abs(inv.eigenvalue - 1) < 1e-6
    assert inv.vector.min() >= 0 and inv.vector.sum() == pytest.approx(1.0)
    ref = power_iterate(tm, n_iter=5000, tol=1e-13)
    assert np.abs(inv.vector - ref).sum() < 1e-6


def test_pf_current_trivial():
    grid = build_grid(4, -1.0, 1.0)
    v = np.zeros(16)
    v[grid.cell(2, 3)] = 1.0
    assert pf_current(v, grid) == pytest.approx(0.75)
    sym = np.zeros(16)
    sym[grid.cell(1, 0)] = sym[grid.cell(1, 3)] = 0.5
    assert pf_current(sym, grid) == pytest.approx(0.0, abs=1e-15)
    v[0] = -1e-6
    with pytest.raises(DomainError):
        pf_current(v, grid)
    assert p_marginal(sym, grid) == pytest.approx([0.5, 0, 0, 0.5])


@pytest.mark.parametrize("K,gamma", [(5.0, 0.5), (5.55, 0.55)])
def test_pf_current_agrees_with_monte_carlo(K, gamma):
    p = Params.from_rescaled(K, gamma)
    lo, hi = auto_window(p)
    grid = build_grid(64, lo, hi)
    tm = build_ulam_matrix(grid, p, 4000, seed=SeedLineage(2))
    j_pf = pf_current(invariant_vector(tm).vector, grid)
    e = evolve_ensemble(initial_ensemble(20_000, SeedLineage(2), p), p, 300, True)
    est = time_averaged_current(e, p, 500, True)
    assert abs(j_pf - est.J) <= grid.dp + 3 * est.se


def test_refinement_stability():
    lo, hi = auto_window(P5)
    mods = []
    for m in (64, 128):
        tm = build_ulam_matrix(build_grid(m, lo, hi), P5, 2500, seed=SeedLineage(4))
        mods.append(arnoldi_topk(real_operator(tm.matrix), tm.dim, 10, return_vectors=False).moduli)
    assert np.abs(mods[0] - mods[1]).max() < 0.02


def test_dense_oracle_small_grid():
    lo, hi = auto_window(P5)
    tm = build_ulam_matrix(build_grid(16, lo, hi), P5, 400, seed=SeedLineage(5))
    sp = dense_spectrum(tm.matrix.toarray())
    assert abs(sp.eigenvalues[0] - 1) < 1e-10


def test_backends_build_same_matrix():
    lo, hi = auto_window(P5)
    args = (0, 200, 32, lo, hi, 100, 987654321, P5.k, P5.gamma, P5.tau, P5.a, P5.phi, P5.noise_sigma_n)
    out = [kernels.load(name).ulam_block(*args) for name in ("numba", "numpy")]
    mats = []
    for rows, cols, counts, leaked in out:
        dense = np.zeros((32 * 32, 200))
        dense[rows, cols] = counts
        mats.append(dense)
    # libm rounding can move a sample across a cell edge, nothing more
    assert np.abs(mats[0] - mats[1]).sum() <= 4
    assert np.array_equal(out[0][3], out[1][3])


def test_normalize_density_sign_and_phase():
    v = -np.array([0.2, 0.3, 0.5]) * np.exp(0.7j)
    assert normalize_density(v) == pytest.approx([0.2, 0.3, 0.5])
    with pytest.raises(DomainError):
        normalize_density(np.array([1.0, -0.5]))


def test_save_load_round_trip(tmp_path):
    grid = build_grid(8, -3.0, 3.0)
    tm = build_ulam_matrix(grid, make_params(2, 0.3), 50, seed=SeedLineage(7, 1, 2))
    stem = tmp_path / "ulam"
    tm.save(stem)
    back = TransferMatrix.load(stem)
    assert back.grid == grid and back.seed == tm.seed and back.n_tr == 50
    assert abs(back.matrix - tm.matrix).max() == 0
    assert isinstance(back.grid, UlamGrid)
