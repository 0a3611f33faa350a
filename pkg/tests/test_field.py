import numpy as np
import pytest
from scipy.integrate import quad

from nelsontunnel.errors import ConfigurationError
from nelsontunnel.field import (BarrierSpec, CrankNicolson, Grid1D, PacketSpec, WaveState,
                                energy_expectation, init_gaussian, momentum_mean, position_cdf,
                                position_moments, probability_in_region, rect_potential,
                                step_propagator)

REF_GRID = Grid1D.from_spacing(-1000.0, 1000.0, 0.1)


def test_grid_spacing_and_nodes():
    g = Grid1D(-1.0, 1.0, 5)
    assert g.dx == 0.5
    assert np.allclose(g.x, [-1, -0.5, 0, 0.5, 1])
    with pytest.raises(ConfigurationError):
        Grid1D(1.0, -1.0, 5)
    with pytest.raises(ConfigurationError):
        Grid1D(-1.0, 1.0, 2)


def test_barrier_and_packet_invariants():
    with pytest.raises(ConfigurationError):
        BarrierSpec(0.0, 1.0)
    with pytest.raises(ConfigurationError):
        PacketSpec(0.0, 1.0, -1.0)
    p = PacketSpec(-500.0, 1.3, 50.0, m=2.0)
    assert p.e0 == 1.3 ** 2 / 4.0
    assert BarrierSpec(1.0, 10.0).kappa(0.5) == pytest.approx(1.0)


def test_rect_potential_point_values():
    b = BarrierSpec(1.0, 10.0)
    g = REF_GRID
    v = rect_potential(b, g)
    x = g.x
    assert v[np.argmin(np.abs(x))] == 1.0
    assert v[np.argmin(np.abs(x + 500))] == 0.0
    # nodes at exactly +-d/2 belong to the closed interval
    assert v[np.argmin(np.abs(x - 5.0))] == 1.0
    assert v[np.argmin(np.abs(x + 5.0))] == 1.0
    assert v[np.argmin(np.abs(x - 5.1))] == 0.0


def test_rect_potential_cell_sampling_preserves_area():
    g = Grid1D.from_spacing(-20.0, 20.0, 0.3)
    b = BarrierSpec(2.0, 3.05)
    v = rect_potential(b, g, sampling="cell")
    assert v.sum() * g.dx == pytest.approx(2.0 * 3.05, rel=1e-12)
    assert v.max() == 2.0 and v.min() == 0.0


def test_barrier_wider_than_grid_rejected():
    with pytest.raises(ConfigurationError):
        rect_potential(BarrierSpec(1.0, 30.0), Grid1D(-10.0, 10.0, 201))


def test_init_gaussian_moments():
    p = PacketSpec(-500.0, 1.0, 50.0)
    s = init_gaussian(p, REF_GRID)
    assert s.norm() == pytest.approx(1.0, abs=1e-12)
    mean, var = position_moments(s)
    assert abs(mean + 500.0) < REF_GRID.dx
    assert var == pytest.approx(2500.0, rel=1e-3)
    assert momentum_mean(s) == pytest.approx(1.0, rel=1e-3)
    assert s.psi[0] == 0 and s.psi[-1] == 0
    assert probability_in_region(s, -1000.0, -5.0) == pytest.approx(1.0, abs=1e-12)


def test_init_gaussian_rejects_truncated_tail():
    with pytest.raises(ConfigurationError):
        init_gaussian(PacketSpec(-900.0, 1.0, 50.0), REF_GRID)


def test_probability_in_region_edges():
    s = init_gaussian(PacketSpec(0.0, 1.0, 5.0), Grid1D.from_spacing(-100, 100, 0.1))
    assert probability_in_region(s, -1e9, 1e9) == pytest.approx(1.0, abs=1e-8)
    assert probability_in_region(s, 500.0, 600.0) == 0.0
    assert probability_in_region(s, -100, 0) == pytest.approx(0.5, abs=1e-2)


def test_single_step_is_unitary():
    g = Grid1D.from_spacing(-200, 200, 0.1)
    s = init_gaussian(PacketSpec(-50.0, 1.0, 10.0), g)
    out = step_propagator(s, np.zeros(g.n_points), 0.01)
    assert abs(out.norm() - s.norm()) < 1e-12
    assert out.t == pytest.approx(0.01)
    assert out.psi[0] == 0 and out.psi[-1] == 0


def test_free_spreading_law():
    """Width follows sqrt(dx^2 + t^2/(4 dx^2)) up to the twofold-spreading time."""
    g = Grid1D.from_spacing(-150.0, 400.0, 0.1)
    dx0 = 10.0
    s = init_gaussian(PacketSpec(0.0, 1.0, dx0), g)
    dt = 0.01
    prop = CrankNicolson(g, np.zeros(g.n_points), dt)
    t_end = 2.0 * dx0 ** 2
    worst = 0.0
    for k in range(1, int(round(t_end / dt)) + 1):
        prop.step(s.psi)
        if k % 2000 == 0:
            t = k * dt
            _, var = position_moments(s)
            expected = np.sqrt(dx0 ** 2 + t ** 2 / (4.0 * dx0 ** 2))
            worst = max(worst, abs(np.sqrt(var) / expected - 1.0))
    assert worst < 0.01
    assert abs(s.norm() - 1.0) < 1e-10


def test_scattering_conserves_norm_energy_and_partition():
    g = Grid1D.from_spacing(-200.0, 200.0, 0.1)
    b = BarrierSpec(1.0, 2.0)
    v = rect_potential(b, g, "cell")
    s = init_gaussian(PacketSpec(-80.0, 1.0, 10.0), g)
    prop = CrankNicolson(g, v, 0.01)
    e0 = energy_expectation(s, prop)
    for k in range(16_000):
        prop.step(s.psi)
        if k % 4000 == 0:
            parts = (probability_in_region(s, -1e9, -1.0 - 1e-9)
                     + probability_in_region(s, -1.0, 1.0)
                     + probability_in_region(s, 1.0 + 1e-9, 1e9))
            assert abs(parts - 1.0) < 1e-8
    assert abs(s.norm() - 1.0) < 1e-8
    assert abs(energy_expectation(s, prop) / e0 - 1.0) < 1e-3


def test_crank_nicolson_rejects_bad_inputs():
    g = Grid1D(-1.0, 1.0, 11)
    with pytest.raises(ConfigurationError):
        CrankNicolson(g, np.zeros(11), 0.0)
    with pytest.raises(ConfigurationError):
        CrankNicolson(g, np.zeros(7), 0.1)


def test_position_cdf_is_monotone_unit():
    s = init_gaussian(PacketSpec(0.0, 1.0, 5.0), Grid1D.from_spacing(-60, 60, 0.1))
    cdf = position_cdf(s)
    q = np.linspace(-60, 60, 500)
    c = cdf(q)
    assert c[0] == 0.0 and c[-1] == pytest.approx(1.0)
    assert np.all(np.diff(c) >= 0)
    assert cdf(0.0) == pytest.approx(0.5, abs=1e-3)


def test_packet_constructor_matches_continuum_normalization():
    from nelsontunnel.field import gaussian_packet
    p = PacketSpec(3.0, 0.7, 2.0)
    val, _ = quad(lambda x: abs(gaussian_packet(p, np.array([x]))[0]) ** 2, -40, 40)
    assert val == pytest.approx(1.0, abs=1e-10)
