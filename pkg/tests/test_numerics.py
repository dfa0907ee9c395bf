import numpy as np
import pytest
from scipy import integrate, stats

from tdqmc.errors import ConfigError, DegeneracyError, GridMismatchError
from tdqmc.model import harmonic_eigenstate
from tdqmc.numerics import (Grid1D, Orbital, ensemble_std, gram_schmidt,
                            imag_time_step, inner_product, laplacian,
                            sample_positions, solve_tridiagonal)


@pytest.fixture
def grid():
    return Grid1D(-8.0, 8.0, 256)


def test_grid_invariants(grid):
    assert grid.dx == pytest.approx(16.0 / 255)
    assert grid.x[0] == -8.0 and grid.x[-1] == 8.0
    assert np.isclose(grid.weights.sum(), 16.0)


def test_grid_validation():
    with pytest.raises(ConfigError):
        Grid1D(-8.0, 8.0, 4)
    with pytest.raises(ConfigError):
        Grid1D(-7.0, 8.0, 64)
    with pytest.raises(ConfigError):
        Grid1D(8.0, -8.0, 64)


def test_laplacian_constant_is_zero(grid):
    phi = Orbital(grid, np.ones(grid.n_points))
    lap = laplacian(phi)
    assert np.max(np.abs(lap.values[1:-1])) == 0.0


def test_laplacian_quadratic_exact(grid):
    phi = Orbital(grid, grid.x**2)
    lap = laplacian(phi)
    assert np.allclose(lap.values[1:-1].real, 2.0, atol=1e-9)


def test_laplacian_second_order_convergence():
    # gaussian: laplacian of exp(-x^2/2) is (x^2 - 1) exp(-x^2/2)
    errors = []
    for n in (129, 257, 513):
        g = Grid1D(-8.0, 8.0, n)
        phi = np.exp(-g.x**2 / 2)
        exact = (g.x**2 - 1.0) * phi
        lap = laplacian(Orbital(g, phi)).values.real
        errors.append(np.max(np.abs(lap[1:-1] - exact[1:-1])))
    order1 = np.log2(errors[0] / errors[1])
    order2 = np.log2(errors[1] / errors[2])
    assert order1 >= 1.9 and order2 >= 1.9


def test_inner_product_normalization(grid):
    phi = harmonic_eigenstate(grid, 0, 1.0)
    assert abs(inner_product(phi, phi) - 1.0) <= 1e-12


def test_inner_product_opposite_parity(grid):
    phi0 = harmonic_eigenstate(grid, 0, 1.0)
    phi1 = harmonic_eigenstate(grid, 1, 1.0)
    assert abs(inner_product(phi0, phi1)) <= 1e-10


def test_inner_product_conjugate_symmetry(grid):
    rng = np.random.default_rng(0)
    a = Orbital(grid, rng.normal(size=grid.n_points)
                + 1j * rng.normal(size=grid.n_points))
    b = Orbital(grid, rng.normal(size=grid.n_points)
                + 1j * rng.normal(size=grid.n_points))
    assert inner_product(a, b) == pytest.approx(np.conj(inner_product(b, a)))


def test_inner_product_vs_quadrature_oracle(grid):
    # shifted-gaussian overlap against adaptive quadrature
    shift = grid.dx
    phi = Orbital(grid, np.exp(-grid.x**2 / 2) / np.pi**0.25).normalized()
    chi = Orbital(grid, np.exp(-(grid.x - shift) ** 2 / 2) / np.pi**0.25).normalized()
    expected, _ = integrate.quad(
        lambda x: np.exp(-x**2 / 2) * np.exp(-(x - shift) ** 2 / 2) / np.sqrt(np.pi),
        -np.inf, np.inf)
    assert inner_product(phi, chi).real == pytest.approx(expected, abs=1e-8)


def test_inner_product_grid_mismatch(grid):
    other = Grid1D(-8.0, 8.0, 128)
    with pytest.raises(GridMismatchError):
        inner_product(Orbital(grid, np.ones(grid.n_points)),
                      Orbital(other, np.ones(other.n_points)))


def test_gram_schmidt_idempotent(grid):
    phi0 = harmonic_eigenstate(grid, 0, 1.0)
    phi1 = harmonic_eigenstate(grid, 1, 1.0)
    out = gram_schmidt([phi0, phi1])
    for before, after in zip((phi0, phi1), out):
        assert np.max(np.abs(after.values - before.values)) <= 1e-10
    again = gram_schmidt(out)
    for before, after in zip(out, again):
        assert np.max(np.abs(after.values - before.values)) <= 1e-10


def test_gram_schmidt_two_vector(grid):
    phi0 = harmonic_eigenstate(grid, 0, 1.0)
    phi1 = harmonic_eigenstate(grid, 1, 1.0)
    mixed = Orbital(grid, phi0.values + 0.5 * phi1.values)
    out = gram_schmidt([phi0, mixed])
    assert np.max(np.abs(out[0].values - phi0.values)) <= 1e-10
    phase = np.sign((out[1].values.real * phi1.values.real).sum())
    assert np.max(np.abs(phase * out[1].values - phi1.values)) <= 1e-8


def test_gram_schmidt_random_triplet(grid):
    rng = np.random.default_rng(3)
    orbs = []
    for _ in range(3):
        smooth = np.convolve(rng.normal(size=grid.n_points), np.ones(25) / 25, "same")
        orbs.append(Orbital(grid, smooth))
    out = gram_schmidt(orbs)
    for i, a in enumerate(out):
        for j, b in enumerate(out):
            target = 1.0 if i == j else 0.0
            assert abs(inner_product(a, b) - target) <= 1e-10


def test_gram_schmidt_degenerate(grid):
    phi0 = harmonic_eigenstate(grid, 0, 1.0)
    near = Orbital(grid, phi0.values * (1.0 + 1e-15))
    with pytest.raises(DegeneracyError):
        gram_schmidt([phi0, near])


def test_imag_time_eigenstate_fixed_point(grid):
    from scipy.linalg import eigh_tridiagonal

    from tdqmc.model import harmonic_confinement

    # the exact discrete ground state is a fixed point up to rescale
    v = harmonic_confinement(grid.x, 1.0)
    inv_dx2 = 1.0 / grid.dx**2
    _, vecs = eigh_tridiagonal(inv_dx2 + v, np.full(grid.n_points - 1, -0.5 * inv_dx2),
                               select="i", select_range=(0, 0))
    phi = Orbital(grid, np.sign(vecs[grid.n_points // 2, 0]) * vecs[:, 0]).normalized()
    stepped = imag_time_step(phi, v, 1e-3).normalized()
    assert np.max(np.abs(stepped.values - phi.values)) <= 1e-8


def test_imag_time_zero_dtau_identity(grid):
    phi = harmonic_eigenstate(grid, 2, 1.0)
    out = imag_time_step(phi, np.zeros(grid.n_points), 0.0)
    assert np.array_equal(out.values, phi.values)


def test_imag_time_ground_state_energy(grid):
    from tdqmc.model import harmonic_confinement

    rng = np.random.default_rng(1)
    v = harmonic_confinement(grid.x, 1.0)
    smooth = np.convolve(rng.normal(size=grid.n_points), np.ones(15) / 15, "same")
    phi = Orbital(grid, smooth + 0.5).normalized()
    for _ in range(2000):
        phi = imag_time_step(phi, v, 0.01).normalized()
    lap = laplacian(phi)
    energy = inner_product(Orbital(grid, -0.5 * lap.values + v * phi.values), phi).real
    assert energy == pytest.approx(0.5, abs=5e-4)


def test_imag_time_norm_decay(grid):
    rng = np.random.default_rng(5)
    v = np.abs(rng.normal(size=grid.n_points))
    phi = Orbital(grid, rng.normal(size=grid.n_points)).normalized()
    out = imag_time_step(phi, v, 0.05)
    assert out.norm() <= phi.norm() + 1e-10


def test_imag_time_nonfinite_potential(grid):
    phi = harmonic_eigenstate(grid, 0, 1.0)
    v = np.zeros(grid.n_points)
    v[10] = np.inf
    with pytest.raises(ValueError):
        imag_time_step(phi, v, 0.01)


def test_imag_time_refinement_order():
    # energy error shrinks at least quadratically under dx, dtau refinement
    from tdqmc.model import harmonic_confinement

    def ground_energy(n, dtau):
        g = Grid1D(-8.0, 8.0, n)
        v = harmonic_confinement(g.x, 1.0)
        phi = harmonic_eigenstate(g, 0, 1.0)
        phi = Orbital(g, phi.values + 0.1 * np.exp(-g.x**2)).normalized()
        for _ in range(1500):
            phi = imag_time_step(phi, v, dtau).normalized()
        lap = laplacian(phi)
        return inner_product(Orbital(g, -0.5 * lap.values + v * phi.values), phi).real

    coarse = abs(ground_energy(128, 0.02) - 0.5)
    fine = abs(ground_energy(256, 0.01) - 0.5)
    assert fine <= coarse / 3.0


def test_sample_positions_delta(grid):
    rng = np.random.default_rng(2)
    density = np.zeros(grid.n_points)
    density[100] = 1.0
    samples = sample_positions(grid, density, 500, rng)
    assert np.all(samples >= grid.x[99]) and np.all(samples <= grid.x[101])


def test_sample_positions_moments(grid):
    rng = np.random.default_rng(4)
    density = np.exp(-grid.x**2)  # |phi0|^2, variance 1/2
    m = 10**5
    samples = sample_positions(grid, density, m, rng)
    sigma_pop = np.sqrt(0.5)
    assert abs(samples.mean()) <= 4 * sigma_pop / np.sqrt(m)
    assert samples.var() == pytest.approx(0.5, rel=0.05)


def test_sample_positions_chi2(grid):
    rng = np.random.default_rng(6)
    density = np.exp(-grid.x**2) * (1.0 + 0.3 * np.sin(grid.x))
    m = 10**5
    samples = sample_positions(grid, density, m, rng)
    from tdqmc.numerics import density_cdf
    cdf = density_cdf(grid, density)
    cdf /= cdf[-1]
    edges = np.linspace(-5, 5, 33)
    probs = np.diff(np.interp(edges, grid.x, cdf))
    counts, _ = np.histogram(samples, bins=edges)
    inside = counts.sum()
    probs = probs / probs.sum()
    stat = np.sum((counts - inside * probs) ** 2 / (inside * probs))
    p = stats.chi2.sf(stat, len(probs) - 1)
    assert p > 0.001


def test_sample_positions_zero_density(grid):
    rng = np.random.default_rng(7)
    with pytest.raises(ValueError):
        sample_positions(grid, np.zeros(grid.n_points), 10, rng)


def test_sample_positions_reproducible(grid):
    density = np.exp(-grid.x**2)
    a = sample_positions(grid, density, 1000, np.random.default_rng(99))
    b = sample_positions(grid, density, 1000, np.random.default_rng(99))
    assert np.array_equal(a, b)


def test_ensemble_std():
    assert ensemble_std([-1.0, 1.0]) == pytest.approx(1.0)
    assert ensemble_std([3.0, 3.0, 3.0]) == 0.0
    with pytest.raises(ValueError):
        ensemble_std([1.0])


def test_ensemble_std_harmonic_ground(grid):
    rng = np.random.default_rng(8)
    samples = sample_positions(grid, np.exp(-grid.x**2), 10**5, rng)
    assert ensemble_std(samples) == pytest.approx(1.0 / np.sqrt(2.0), rel=0.02)


def test_solve_tridiagonal_matches_dense():
    rng = np.random.default_rng(11)
    n = 40
    d = 4.0 + rng.normal(size=n)
    lo = rng.normal(size=n - 1)
    up = rng.normal(size=n - 1)
    b = rng.normal(size=(3, n))
    mat = np.diag(d) + np.diag(lo, -1) + np.diag(up, 1)
    expected = np.linalg.solve(mat, b.T).T
    got = solve_tridiagonal(lo, d, up, b)
    assert np.allclose(got, expected, atol=1e-10)
