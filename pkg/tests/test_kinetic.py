import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paulilab.fields import preset_fields
from paulilab.initial import PhaseSpaceGaussian
from paulilab.kinetic import (KineticError, ParticleEnsemble, deposit, deposit_scalar, flow_map, interpolate,
                              lorentz_step, pair_particles, rk4_step, sample_particles, solve_linear_vlasov,
                              solve_vlasov_poisson)
from paulilab.spectral import make_grid

TWO_PI = 2 * np.pi
UNIFORM_B = np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------- characteristics


def test_cyclotron_quarter_turn():
    x, p = flow_map([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], (None, UNIFORM_B), T=np.pi / 2, dt=np.pi / 2000)
    np.testing.assert_allclose(p, [0.0, -1.0, 0.0], atol=1e-6)
    assert abs(np.linalg.norm(p) - 1) <= 1e-12


def test_free_and_uniform_electric_motion():
    x0, p0 = np.array([0.1, -0.2, 0.3]), np.array([0.5, 0.25, -1.0])
    x, p = flow_map(x0, p0, (None, None), T=1.3, dt=0.1)
    np.testing.assert_allclose(x, x0 + 1.3 * p0, rtol=0, atol=1e-14)
    np.testing.assert_array_equal(p, p0)
    E0 = np.array([0.7, 0.0, 0.0])
    x, p = flow_map(x0, p0, (E0, None), T=1.0, dt=0.125)
    np.testing.assert_allclose(p, p0 + E0, atol=1e-14)
    np.testing.assert_allclose(x, x0 + p0 + 0.5 * E0, atol=1e-14)


def test_harmonic_energy_second_order():
    g = make_grid(1, 64, 40.0, origin=-20.0)
    f = preset_fields("harmonic_V", g, omega=1.0, center=[0.0])
    drifts = []
    for dt in (0.02, 0.01):
        ch = flow_map([1.0], [0.5], f, T=10 * TWO_PI, dt=dt, record=True)
        drifts.append(np.max(np.abs(ch.H - ch.H[0])))
    assert 3.5 < drifts[0] / drifts[1] < 4.5


def test_magnetic_force_does_no_work():
    rng = np.random.default_rng(0)
    x0, p0 = rng.standard_normal((50, 3)), rng.standard_normal((50, 3))
    x, p = flow_map(x0, p0, (None, UNIFORM_B * 2.5), T=7.0, dt=0.01)
    assert np.max(np.abs(np.linalg.norm(p, axis=1) - np.linalg.norm(p0, axis=1))) <= 1e-12
    ch = flow_map([0.0, 0.0], [0.3, -0.4], (None, None), T=2.0, dt=0.1, record=True)
    assert np.all(ch.H == ch.H[0])


def test_nonuniform_B_against_rk4():
    g = make_grid(2, 64, TWO_PI)
    f = preset_fields("sinusoidal_B", g, a=1.0)
    x0, p0 = np.array([[0.3, 0.2]]), np.array([[0.8, 0.4]])
    ref = flow_map(x0, p0, f, T=2.0, dt=1e-3, method="rk4")
    errs = [np.max(np.abs(flow_map(x0, p0, f, T=2.0, dt=dt)[0] - ref[0])) for dt in (0.04, 0.02)]
    assert 3.5 < errs[0] / errs[1] < 4.5
    # |p| is exactly invariant under the magnetic part even for nonuniform B
    xb, pb = flow_map(x0, p0, f, T=2.0, dt=0.04)
    assert abs(np.linalg.norm(pb) - np.linalg.norm(p0)) <= 1e-12


def test_large_rotation_rejected():
    ens = ParticleEnsemble(np.zeros((1, 3)), np.ones((1, 3)), np.ones(1))
    with pytest.raises(KineticError, match="aliasing"):
        lorentz_step(ens, None, UNIFORM_B * 100, 0.1)
    with pytest.raises(KineticError):
        lorentz_step(ens, None, None, 0.0)


def test_liouville_simplex_volume():
    g = make_grid(2, 64, TWO_PI)
    f = preset_fields("sinusoidal_B", g, a=1.0, omega=1.0)
    z0 = np.array([0.4, -0.3, 0.6, 0.2])
    eps = 1e-4
    pts = np.vstack([z0, z0 + eps * np.eye(4)])
    x, p = flow_map(pts[:, :2], pts[:, 2:], f, T=1.0, dt=0.005)
    z = np.hstack([x, p])
    edges = z[1:] - z[0]
    edges[:, :2] -= np.array(g.L) * np.round(edges[:, :2] / np.array(g.L))
    vol = abs(np.linalg.det(edges)) / eps**4
    assert abs(vol - 1) < 1e-3


# ---------------------------------------------------------------- grid transfer


def test_deposit_at_node_and_mid_cell():
    g = make_grid(2, 8, 8.0)
    rho = deposit_scalar(g, np.array([[2.0, 3.0]]), np.ones(1))
    assert abs(rho.sum() * g.cell_volume - 1) <= 1e-15
    assert np.count_nonzero(rho) == 1 and rho[2, 3] > 0
    rho = deposit_scalar(g, np.array([[2.25, 3.5]]), np.ones(1))
    corners = rho[2:4, 3:5] * g.cell_volume
    np.testing.assert_allclose(corners, [[0.75 * 0.5, 0.75 * 0.5], [0.25 * 0.5, 0.25 * 0.5]])
    assert abs(corners.sum() - 1) <= 1e-15


def test_uniform_lattice_deposits_constant():
    # four particles per cell and axis, offset half a particle spacing
    g = make_grid(2, 16, (2.0, 3.0))
    Y = np.stack(np.meshgrid((np.arange(64) + 0.5) / 64 * 2.0, (np.arange(64) + 0.5) / 64 * 3.0,
                             indexing="ij"), axis=-1).reshape(-1, 2)
    rho = deposit_scalar(g, Y, np.full(len(Y), 1.0 / len(Y)))
    assert np.max(np.abs(rho - rho.mean())) <= 1e-12 * rho.mean()
    assert abs(rho.sum() * g.cell_volume - 1) <= 1e-12


def test_interpolate_linear_exact():
    g = make_grid(1, 16, 16.0)
    values = np.stack([2.0 * g.mesh()[0] + 1.0])
    x = np.array([[3.3], [7.75]])
    np.testing.assert_allclose(interpolate(g, values, x)[:, 0], 2.0 * x[:, 0] + 1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), N=st.integers(1, 200))
def test_deposit_conserves_mass(seed, N):
    g = make_grid(2, 8, (1.0, 2.5), origin=(-0.5, 0.3))
    rng = np.random.default_rng(seed)
    x = rng.uniform(-5, 5, (N, 2))
    w = rng.uniform(0, 1, N)
    ens = ParticleEnsemble.from_grid(x, rng.standard_normal((N, 2)), w, g)
    mom = deposit(ens, g)
    assert abs(mom.mass - w.sum()) <= 1e-12 * max(w.sum(), 1)
    np.testing.assert_allclose(mom.J.sum(axis=(1, 2)) * g.cell_volume, ens.momentum, atol=1e-12)


# ---------------------------------------------------------------- linear transport


def test_T0_marginal():
    g = make_grid(1, 32, 8.0, origin=-4.0)
    f = PhaseSpaceGaussian.make(1, 0.0, 0.7, 0.0, 0.5)
    N = 20000
    ens = solve_linear_vlasov(f, preset_fields("zero", g), T=0.0, dt=0.1, N=N, method="random")
    rho = deposit(ens, g).rho
    x = g.mesh()[0]
    exact = np.exp(-x**2 / (2 * 0.49)) / np.sqrt(2 * np.pi * 0.49)
    assert np.max(np.abs(rho - exact)) <= 3 / np.sqrt(N) + 0.01


def test_free_streaming_variance():
    g = make_grid(1, 32, 200.0, origin=-100.0)
    f = PhaseSpaceGaussian.make(1, 0.0, 0.7, 0.0, 0.5)
    N, T = 20000, 3.0
    ens = solve_linear_vlasov(f, preset_fields("zero", g), T=T, dt=0.1, N=N)
    var = np.var(ens.x[:, 0])
    assert abs(var - (0.49 + T**2 * 0.25)) <= 3 / np.sqrt(N) * (0.49 + T**2 * 0.25) * np.sqrt(2)


def test_harmonic_period_returns():
    g = make_grid(2, 32, 20.0, origin=-10.0)
    f = preset_fields("harmonic_V", g, omega=1.0, center=[0.0, 0.0])
    sampler = PhaseSpaceGaussian.make(2, 0.0, 0.5, 0.0, 0.5)
    ens0 = sample_particles(sampler, 500, grid=g)
    ens = solve_linear_vlasov(sampler, f, T=TWO_PI, dt=TWO_PI / 2000, N=500)
    assert np.max(np.abs(ens.x - ens0.x)) < 1e-4
    assert abs(ens.mass - 1) <= 1e-15


def test_sampling_rate_over_seeds():
    g = make_grid(1, 64, 12.0, origin=-6.0)
    f = PhaseSpaceGaussian.make(1, 0.0, 0.8, 0.0, 0.5)
    x = g.mesh()[0]
    phi = np.cos(x)
    exact = np.exp(-0.32)
    rms = []
    for N in (500, 8000):
        errs = []
        for seed in range(16):
            ens = sample_particles(f, N, seed=seed, method="random", grid=g)
            rho = deposit(ens, g).rho
            errs.append(np.sum(rho * phi) * g.cell_volume - exact)
        rms.append(np.sqrt(np.mean(np.square(errs))))
    assert 2.0 < rms[0] / rms[1] < 8.0


# ---------------------------------------------------------------- particle-in-cell


def test_zero_coupling_reduces_to_linear():
    g = make_grid(2, 32, TWO_PI)
    f = preset_fields("sinusoidal_B", g, a=0.5, omega=1.0)
    s = PhaseSpaceGaussian.make(2, 0.0, 0.4, 0.2, 0.4)
    lin = solve_linear_vlasov(s, f, T=0.5, dt=0.05, N=2000)
    pic = solve_vlasov_poisson(s, f, T=0.5, dt=0.05, N=2000, coupling=0.0)
    np.testing.assert_allclose(pic.final.x, lin.x, atol=1e-12)
    np.testing.assert_allclose(pic.final.p, lin.p, atol=1e-12)


def test_pic_momentum_conserved():
    g = make_grid(2, 32, TWO_PI)
    s = PhaseSpaceGaussian.make(2, (1.0, 2.0), 0.5, (0.2, -0.1), 0.3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        tr = solve_vlasov_poisson(s, preset_fields("zero", g), T=1.0, dt=0.02, N=5000, coupling=5.0)
    assert np.max(np.abs(tr.momentum - tr.momentum[0])) <= 1e-8
    assert abs(tr.final.mass - 1) <= 1e-12


def test_pic_energy_second_order():
    # steps large enough that the time error dominates the particle noise
    g = make_grid(1, 32, TWO_PI)
    s = PhaseSpaceGaussian.make(1, 3.0, 0.6, 0.0, 0.3)
    drifts = []
    for dt in (0.1, 0.05):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            tr = solve_vlasov_poisson(s, preset_fields("harmonic_V", g, omega=1.0), T=2.0, dt=dt, N=20000,
                                      coupling=1.0)
        drifts.append(np.max(np.abs(tr.E_total - tr.E_total[0])))
    assert 3.0 <= drifts[0] / drifts[1] <= 5.0


def test_cfl_warning():
    g = make_grid(1, 16, 1.0)
    s = PhaseSpaceGaussian.make(1, 0.0, 0.1, 5.0, 0.1)
    with pytest.warns(RuntimeWarning, match="cell"):
        solve_vlasov_poisson(s, preset_fields("zero", g), T=0.1, dt=0.05, N=100)


def test_pair_particles_periodic():
    g = make_grid(1, 16, 10.0, origin=-5.0)
    ens = ParticleEnsemble.from_grid(np.array([[4.9], [-4.9]]), np.zeros((2, 1)), np.array([0.5, 0.5]), g)
    moved = ens.moved(ens.x + 0.2, ens.p).wrapped()
    assert np.all(np.abs(moved.x) <= 5.0)

    def phi(x, p, box=None):
        return np.ones(len(x))

    assert pair_particles(ens, phi) == 1.0


def test_rk4_step_exact_for_free_motion():
    ens = ParticleEnsemble(np.zeros((3, 2)), np.arange(6.0).reshape(3, 2), np.full(3, 1 / 3))
    out = rk4_step(ens, None, None, 0.5)
    np.testing.assert_allclose(out.x, 0.5 * ens.p)
