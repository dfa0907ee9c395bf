import math

import numpy as np
import pytest

from tdqmc.errors import ConfigError
from tdqmc.model import (NonlocalityParams, SystemConfig, compensated_config,
                         harmonic_confinement, harmonic_eigenstate,
                         nonlocal_length, polarized_config, soft_coulomb)
from tdqmc.numerics import Grid1D


def test_confinement_values():
    assert harmonic_confinement(0.0, 1.0) == 0.0
    assert harmonic_confinement(1.0, 1.0) == pytest.approx(0.5)
    assert harmonic_confinement(0.5, 2.0) == pytest.approx(0.5)


def test_confinement_even():
    x = np.linspace(-3, 3, 31)
    assert np.allclose(harmonic_confinement(x, 1.3), harmonic_confinement(-x, 1.3))


def test_soft_coulomb_values():
    assert soft_coulomb(0.0, 0.0, 1.0) == pytest.approx(1.0)
    assert soft_coulomb(math.sqrt(3.0), 0.0, 1.0) == pytest.approx(0.5)
    # large-r tail: 1/r * (1 - a^2/(2 r^2) + ...) = 0.0099995000...
    assert soft_coulomb(100.0, 0.0, 1.0) == pytest.approx(0.0099995000375, abs=1e-10)


def test_soft_coulomb_symmetric_monotone():
    r = np.linspace(0.0, 6.0, 50)
    v = soft_coulomb(r, 0.0, 1.0)
    assert np.all(np.diff(v) < 0)
    assert np.allclose(soft_coulomb(r, 1.0, 0.7), soft_coulomb(1.0, r, 0.7))


def test_soft_coulomb_coupling_off():
    assert soft_coulomb(1.0, 0.0, 1.0, e_squared=0.0) == 0.0


def test_nonlocal_length():
    assert nonlocal_length(0.0, 0.9) == 0.0
    assert math.isinf(nonlocal_length(math.inf, 0.9))
    assert nonlocal_length(1.2, 0.7) == pytest.approx(0.84)
    # linear in the spread for finite alpha
    assert nonlocal_length(1.2, 1.4) == pytest.approx(2 * nonlocal_length(1.2, 0.7))


def test_harmonic_eigenstate_orthonormal():
    grid = Grid1D(-8.0, 8.0, 256)
    orbs = [harmonic_eigenstate(grid, n, 1.0) for n in range(4)]
    for i, a in enumerate(orbs):
        for j, b in enumerate(orbs):
            target = 1.0 if i == j else 0.0
            ov = np.sum(a.values * np.conj(b.values) * grid.weights)
            assert abs(ov - target) <= 1e-8


def test_config_presets():
    pol = polarized_config(3)
    assert pol.spins == ("up", "up", "up")
    assert pol.levels == (0, 1, 2)
    comp = compensated_config(4)
    assert comp.spins == ("up", "down", "up", "down")
    assert comp.levels == (0, 0, 1, 1)
    assert comp.spin_block("up") == (0, 2)


def test_config_validation():
    with pytest.raises(ConfigError, match="spins"):
        SystemConfig(2, ("up",))
    with pytest.raises(ConfigError, match="spins"):
        SystemConfig(1, ("sideways",))
    with pytest.raises(ConfigError):
        polarized_config(2, n_walkers=10)
    with pytest.raises(ConfigError):
        polarized_config(2, omega=-1.0)
    with pytest.raises(ConfigError):
        compensated_config(3)
    with pytest.raises(ConfigError):
        polarized_config(2, sigma_update="sometimes")


def test_nonlocality_params_sigma_matrix():
    params = NonlocalityParams.ground_row(3, 1.5)
    spreads = np.array([0.8, 1.0, 1.2])
    sig = params.sigma_matrix(spreads)
    assert sig[0, 1] == pytest.approx(1.2)
    assert sig[0, 2] == pytest.approx(1.2)
    assert math.isinf(sig[1, 0]) and math.isinf(sig[2, 1])


def test_nonlocality_params_fixed_sigma():
    params = NonlocalityParams.outer_pair_sigma(4, 0.6)
    sig = params.sigma_matrix(np.ones(4))
    assert sig[2, 3] == pytest.approx(0.6)
    assert sig[3, 2] == pytest.approx(0.6)
    assert math.isinf(sig[0, 1])


def test_nonlocality_params_validation():
    with pytest.raises(ConfigError):
        NonlocalityParams(np.full((2, 3), np.inf))
    bad = np.full((2, 2), np.inf)
    bad[0, 1] = -1.0
    with pytest.raises(ConfigError):
        NonlocalityParams(bad)
