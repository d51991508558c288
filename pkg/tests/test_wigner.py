import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paulilab.fields import make_fieldset, preset_fields
from paulilab.quantum import MixedState, coherent_state, current, density, pure_state
from paulilab.spectral import make_grid
from paulilab.wigner import (PhaseSpaceError, TestFunction, WignerFunction, apply_theta, gaussian_battery, husimi,
                             husimi_from_state, make_phase_grid, moment_current, moment_density, oscillatory_tail,
                             pair_against, pauli_wigner_residual, pauli_wigner_terms, wigner_direct, wigner_matrix,
                             wigner_transform, xi_derivative)

HBAR = 0.1


def grid_1d(n=128, L=10.0):
    return make_grid(1, n, L, origin=-L / 2)


def normalized(g, u):
    return u / np.sqrt(np.sum(np.abs(u) ** 2) * g.cell_volume)


def packet(g, hbar, x0, p0, spin=(1.0, 0.0)):
    """Minimum-uncertainty packet without the resolution guard of ``coherent_state``."""
    x = g.axes[0]
    psi = np.exp(-((x - x0) ** 2) / (2 * hbar) + 1j * p0 * (x - x0) / hbar)
    return np.asarray(spin, dtype=complex)[:, None] * psi


def gaussian_1d(hbar=HBAR, n=128, L=10.0, x0=0.0, p0=0.0, spin=(1.0, 0.0)):
    g = grid_1d(n, L)
    return pure_state(g, hbar, normalized(g, packet(g, hbar, x0, p0, spin=spin)), C=1e6)


def closed_form(ph, hbar, x0=0.0, p0=0.0, scale=1.0):
    X, XI = np.meshgrid(ph.x.axes[0], ph.xi.axes[0], indexing="ij")
    s = scale * hbar
    return np.exp(-((X - x0) ** 2 + (XI - p0) ** 2) / s) / (np.pi * s)


def test_gaussian_closed_form():
    st_ = gaussian_1d()
    ph = make_phase_grid(st_.grid, HBAR)
    f = wigner_transform(st_, ph)
    assert np.max(np.abs(f.values - closed_form(ph, HBAR))) <= 1e-6
    assert abs(f.mass - 1) <= 1e-10
    assert f.imag_residue <= 1e-10


def test_displaced_gaussian_closed_form():
    st_ = gaussian_1d(x0=0.7, p0=-0.4)
    ph = make_phase_grid(st_.grid, HBAR)
    f = wigner_transform(st_, ph)
    assert np.max(np.abs(f.values - closed_form(ph, HBAR, 0.7, -0.4))) <= 1e-6


def test_direct_quadrature_oracle():
    hbar = 0.3
    g = grid_1d(64, 8.0)
    cat = coherent_state(g, hbar, -1.0, 0.4) + coherent_state(g, hbar, 1.0, -0.4, spin=(0.6, 0.8j))
    st_ = pure_state(g, hbar, normalized(g, cat), C=1e6)
    ph = make_phase_grid(g, hbar)
    f = wigner_transform(st_, ph)
    # the unpaired Nyquist offset leaves an imaginary part; the real part is f
    ref = wigner_direct(st_, ph)
    assert np.max(np.abs(ref.real - f.values)) <= 1e-8


def test_plane_wave_is_a_momentum_column():
    g = grid_1d()
    m = 3
    k0 = 2 * np.pi * m / g.L[0]
    u = np.stack([np.exp(1j * k0 * g.axes[0]), np.zeros(g.n[0])]) / np.sqrt(g.L[0])
    ph = make_phase_grid(g, HBAR, pad=1.0)
    f = wigner_transform(pure_state(g, HBAR, u, C=1e6), ph)
    j = int(np.argmin(np.abs(ph.xi.axes[0] - HBAR * k0)))
    assert abs(ph.xi.axes[0][j] - HBAR * k0) <= 1e-12
    dxi = ph.xi.h[0]
    np.testing.assert_allclose(f.values[:, j], 1 / (g.L[0] * dxi), rtol=1e-10)
    rest = np.delete(f.values, j, axis=1)
    assert np.max(np.abs(rest)) <= 1e-10
    assert abs(f.mass - 1) <= 1e-10


def test_momentum_box_too_small_rejected():
    st_ = gaussian_1d(p0=2.0)
    ph = make_phase_grid(st_.grid, HBAR, xi_max=1.0)
    with pytest.raises(PhaseSpaceError, match="momentum box"):
        wigner_transform(st_, ph)


def test_matrix_spin_structure():
    for spin in ((1, 0), (1 / np.sqrt(2), 1 / np.sqrt(2)), (0.6, 0.8j)):
        st_ = gaussian_1d(spin=spin)
        ph = make_phase_grid(st_.grid, HBAR)
        F = wigner_matrix(st_, ph)
        f = closed_form(ph, HBAR)
        c = np.asarray(spin, dtype=complex)
        for a in range(2):
            for b in range(2):
                assert np.max(np.abs(F.values[a, b] - c[a] * np.conj(c[b]) * f)) <= 1e-6
        assert F.hermiticity_error() <= 1e-10
        np.testing.assert_allclose(F.trace().values, wigner_transform(st_, ph).values, atol=1e-12)


def test_zero_function_maps_to_zero():
    ph = make_phase_grid(grid_1d(), HBAR)
    z = WignerFunction(ph, np.zeros(ph.shape), HBAR)
    assert not np.any(husimi(z).values)
    assert not np.any(moment_density(z))
    assert pair_against(z, TestFunction((0.0,), (0.0,), 0.5, 0.5)) == 0
    assert z.mass == 0


def test_husimi_closed_form_and_mass():
    st_ = gaussian_1d()
    ph = make_phase_grid(st_.grid, HBAR)
    f = wigner_transform(st_, ph)
    fh = husimi(f)
    assert np.max(np.abs(fh.values - closed_form(ph, HBAR, scale=2.0))) <= 1e-6
    assert abs(fh.mass - f.mass) <= 1e-10


def test_husimi_rejects_small_box():
    g = make_grid(1, 64, 1.0, origin=-0.5)
    ph = make_phase_grid(g, HBAR)
    with pytest.raises(PhaseSpaceError):
        husimi(WignerFunction(ph, np.zeros(ph.shape), HBAR))


def test_husimi_from_state_matches_smoothed_wigner():
    g = grid_1d()
    cat = packet(g, HBAR, -1.0, 0.3) + packet(g, HBAR, 1.0, -0.3)
    st_ = pure_state(g, HBAR, normalized(g, cat), C=1e6)
    fh = husimi(wigner_transform(st_, make_phase_grid(g, HBAR)))
    fs = husimi_from_state(st_)
    assert abs(fs.mass - 1) <= 1e-8
    assert fs.values.min() >= 0
    for phi in gaussian_battery((0.0,), (0.0,), spread_x=1.0, spread_p=0.3, widths=(0.3, 0.6), count=6):
        assert abs(pair_against(fs, phi) - pair_against(fh, phi)) <= 1e-7


def test_marginal_matches_density():
    g = grid_1d()
    members = np.stack([normalized(g, packet(g, HBAR, x0, p0, spin=s))
                        for x0, p0, s in ((-1.0, 0.5, (1, 0)), (0.8, -0.2, (0.6, 0.8j)))])
    st_ = MixedState(g, HBAR, np.array([0.3, 0.7]), members, C=1e6)
    ph = make_phase_grid(g, HBAR)
    F = wigner_matrix(st_, ph)
    assert np.max(np.abs(moment_density(F) - density(st_))) <= 1e-8
    assert abs(np.sum(moment_density(F)) * g.cell_volume - 1) <= 1e-10


def state_2d(hbar=0.2, n=60, spin=(0.6, 0.8j)):
    s = math.sqrt(hbar / 2)
    L = 20 * s
    g = make_grid(2, n, L, origin=-L / 2)
    u = normalized(g, coherent_state(g, hbar, (0.1, -0.1), (0.3, 0.2), spin=spin))
    st_ = pure_state(g, hbar, u, C=100)
    Xi = 5.5 * math.sqrt(hbar) + 0.4
    # y offsets must reach the doubled box used by pad=2
    n_xi = int(math.ceil(2 * (16 * s / hbar) * Xi / np.pi / 2)) * 2
    ph = make_phase_grid(g, hbar, n_xi=n_xi, xi_max=Xi)
    return st_, ph


def test_moment_current_matches_quantum_current():
    st_, ph = state_2d()
    F = wigner_matrix(st_, ph, pad=2)
    zero = preset_fields("zero", st_.grid)
    J = moment_current(F, zero)
    ref = current(st_, zero)
    assert np.max(np.abs(J - ref)) <= 1e-7 * np.max(np.abs(ref))


def test_moment_current_uniform_vector_potential():
    st_, ph = state_2d()
    F = wigner_matrix(st_, ph, pad=2)
    g = st_.grid
    a = np.array([0.3, -0.2])
    A = np.broadcast_to(a.reshape(2, 1, 1), (2,) + g.shape).copy()
    J0 = moment_current(F, preset_fields("zero", g))
    JA = moment_current(F, make_fieldset(g, A=A))
    rho = density(st_)
    np.testing.assert_allclose(JA, J0 - a.reshape(2, 1, 1) * rho, atol=1e-10)


def test_moment_current_plane_wave():
    hbar = 0.2
    g = make_grid(2, 16, 2 * np.pi)
    k = np.array([2.0, -1.0])
    X, Y = g.mesh()
    u = np.stack([np.exp(1j * (k[0] * X + k[1] * Y)) * np.ones(g.shape), np.zeros(g.shape)]) / (2 * np.pi)
    st_ = pure_state(g, hbar, u, C=100)
    ph = make_phase_grid(g, hbar, pad=1.0)
    J = moment_current(wigner_matrix(st_, ph), preset_fields("zero", g))
    rho = 1 / (2 * np.pi) ** 2
    for a in range(2):
        np.testing.assert_allclose(J[a], hbar * k[a] * rho, atol=1e-12)


def test_moment_current_needs_two_dimensions():
    st_ = gaussian_1d()
    F = wigner_matrix(st_, make_phase_grid(st_.grid, HBAR))
    with pytest.raises(PhaseSpaceError):
        moment_current(F, preset_fields("zero", st_.grid))


def test_theta_constant_and_quadratic():
    st_ = gaussian_1d()
    ph = make_phase_grid(st_.grid, HBAR)
    f = wigner_transform(st_, ph)
    assert np.max(np.abs(apply_theta(lambda p: np.full(p.shape[:-1], 2.5), f).values)) <= 1e-12
    c, x0 = -0.4, 0.2
    th = apply_theta(lambda p: c * (p[..., 0] - x0) ** 2, f)
    X = ph.x.axes[0][:, None]
    ref = 2 * c * (X - x0) * xi_derivative(f, 0).real
    assert np.max(np.abs(th.values - ref)) <= 1e-8 * np.max(np.abs(ref))


def test_xi_derivative_of_gaussian():
    st_ = gaussian_1d()
    ph = make_phase_grid(st_.grid, HBAR)
    f = wigner_transform(st_, ph)
    XI = ph.xi.axes[0][None, :]
    exact = -2 * XI / HBAR * closed_form(ph, HBAR)
    assert np.max(np.abs(xi_derivative(f, 0).real - exact)) <= 1e-5 * np.max(np.abs(exact))


def test_theta_of_low_mode_approximates_linear_symbol():
    # alpha (L/2pi) sin(2pi x/L) equals alpha x to third order near the packet
    st_ = gaussian_1d(n=256, L=40.0)
    ph = make_phase_grid(st_.grid, HBAR)
    f = wigner_transform(st_, ph)
    alpha, L = 0.8, 40.0
    th = apply_theta(lambda p: alpha * L / (2 * np.pi) * np.sin(2 * np.pi * p[..., 0] / L), f)
    XI = ph.xi.axes[0][None, :]
    exact = alpha * (-2 * XI / HBAR) * closed_form(ph, HBAR)
    assert np.max(np.abs(th.values - exact)) <= 1e-3 * np.max(np.abs(exact))


def harmonic_setup(hbar=HBAR):
    s = math.sqrt(hbar / 2)
    L = 20 * s
    g = make_grid(1, 128, L, origin=-L / 2)
    fields = preset_fields("harmonic_V", g, omega=1.0)
    ph = make_phase_grid(g, hbar, n_xi=128, xi_max=5.5 * math.sqrt(hbar) + 1.0)
    return g, fields, ph


def test_ground_state_is_stationary():
    g, fields, ph = harmonic_setup()
    st_ = pure_state(g, HBAR, normalized(g, coherent_state(g, HBAR, 0.0, 0.0)), C=1e9)
    F = wigner_matrix(st_, ph, pad=2)
    S = pauli_wigner_terms(F, fields, fields.V_fn)
    total = sum(S.values())
    assert np.linalg.norm(total) <= 1e-8 * np.linalg.norm(S["transport"])


def test_residual_of_zero_trajectory():
    g, fields, ph = harmonic_setup()
    st_ = gaussian_1d()
    F = wigner_matrix(pure_state(g, HBAR, normalized(g, coherent_state(g, HBAR, 0.0, 0.0)), C=1e9), ph)
    Z = type(F)(ph, np.zeros_like(F.values), HBAR)
    np.testing.assert_array_equal(pauli_wigner_residual([Z, Z, Z], fields, fields.V_fn, HBAR, 0.1), [0.0])
    with pytest.raises(PhaseSpaceError):
        pauli_wigner_residual([Z, Z], fields, fields.V_fn, HBAR, 0.1)
    with pytest.raises(PhaseSpaceError, match="uniform"):
        pauli_wigner_residual([Z, Z, Z], fields, fields.V_fn, HBAR, np.array([0.0, 0.1, 0.3]))
    assert st_.hbar == HBAR


def test_residual_tracks_exact_rotation():
    # harmonic flow rotates f rigidly in phase space; sample it exactly and
    # check the centred-difference residual shrinks by four per halving
    g, fields, ph = harmonic_setup()
    res = []
    for tau in (0.04, 0.02):
        traj = []
        for i in range(3):
            t = i * tau
            x0, p0 = 0.3 * np.cos(t) + 0.4 * np.sin(t), 0.4 * np.cos(t) - 0.3 * np.sin(t)
            u = normalized(g, coherent_state(g, HBAR, x0, p0))
            traj.append(wigner_matrix(pure_state(g, HBAR, u, C=1e9), ph, pad=2))
        res.append(float(pauli_wigner_residual(traj, fields, fields.V_fn, HBAR, tau)[0]))
    assert 3.5 <= res[0] / res[1] <= 4.5


def test_oscillatory_tail_plane_wave_and_bound():
    g = grid_1d()
    k0 = 2 * np.pi * 5 / g.L[0]
    u = np.stack([np.exp(1j * k0 * g.axes[0]), np.zeros(g.n[0])]) / np.sqrt(g.L[0])
    st_ = pure_state(g, HBAR, u, C=1e6)
    tail, comp = oscillatory_tail(st_, 0.9 * HBAR * k0)
    assert abs(tail - 1) <= 1e-12 and abs(comp - (HBAR * k0) ** 2) <= 1e-12
    assert oscillatory_tail(st_, 1.1 * HBAR * k0)[0] <= 1e-24
    with pytest.raises(ValueError):
        oscillatory_tail(st_, 0.0)


@settings(max_examples=15, deadline=None)
@given(x0=st.floats(-2, 2), p0=st.floats(-1, 1), Rs=st.lists(st.floats(0.05, 2.0), min_size=2, max_size=5))
def test_oscillatory_tail_monotone_and_chebyshev(x0, p0, Rs):
    st_ = gaussian_1d(x0=x0, p0=p0)
    Rs = sorted(Rs)
    vals = [oscillatory_tail(st_, R) for R in Rs]
    tails = [v[0] for v in vals]
    assert all(a >= b - 1e-15 for a, b in zip(tails, tails[1:]))
    for R, (t, c) in zip(Rs, vals):
        assert t <= c / R**2 + 1e-15


def test_pairing_constant_and_gaussian_overlap():
    st_ = gaussian_1d(x0=0.5, p0=-0.3)
    ph = make_phase_grid(st_.grid, HBAR)
    f = wigner_transform(st_, ph)
    assert abs(pair_against(f, TestFunction.constant()) - 1) <= 1e-10
    a, b = 0.4, 0.3
    phi = TestFunction((0.5,), (-0.3,), a, b)
    exact = math.sqrt(a**2 / (HBAR / 2 + a**2)) * math.sqrt(b**2 / (HBAR / 2 + b**2))
    assert abs(pair_against(f, phi) - exact) <= 1e-6
    # Husimi variance is hbar per variable
    exact_h = math.sqrt(a**2 / (HBAR + a**2)) * math.sqrt(b**2 / (HBAR + b**2))
    assert abs(pair_against(husimi(f), phi) - exact_h) <= 1e-6


def test_pairing_rejects_escaping_support():
    # a plane wave fills the periodic seam, so a wide x factor reaches it
    g = grid_1d()
    k0 = 2 * np.pi * 3 / g.L[0]
    u = np.stack([np.exp(1j * k0 * g.axes[0]), np.zeros(g.n[0])]) / np.sqrt(g.L[0])
    f = wigner_transform(pure_state(g, HBAR, u, C=1e6), make_phase_grid(g, HBAR, pad=1.0))
    with pytest.raises(PhaseSpaceError, match="support"):
        pair_against(f, TestFunction((0.0,), (HBAR * k0,), 3.0, 0.5))
    assert abs(pair_against(f, TestFunction((0.0,), (HBAR * k0,), 0.3, 0.5))
               - 0.3 * math.sqrt(2 * np.pi) / g.L[0]) <= 1e-10


def test_pairing_uses_kinetic_momentum_shift():
    st_ = gaussian_1d()
    ph = make_phase_grid(st_.grid, HBAR)
    f = wigner_transform(st_, ph)
    shift = np.full((1,) + ph.x.shape, 0.2)
    # tabulated in canonical xi, so the kinetic momentum is xi - 0.2
    fs = WignerFunction(ph, f.values, HBAR, 0.0, shift)
    phi = TestFunction((0.0,), (-0.2,), 0.4, 0.3)
    assert abs(pair_against(fs, phi) - pair_against(f, TestFunction((0.0,), (0.0,), 0.4, 0.3))) <= 1e-10


def test_gaussian_battery_is_deterministic():
    b1 = gaussian_battery((0.0, 1.0), (0.5, 0.0), count=7, widths=(0.5, 1.0))
    b2 = gaussian_battery((0.0, 1.0), (0.5, 0.0), count=7, widths=(0.5, 1.0))
    assert b1 == b2 and len(b1) == 7
    assert [t.a for t in b1[:3]] == [0.5, 1.0, 0.5]
    for t in b1:
        assert np.all(np.abs(np.subtract(t.x0, (0.0, 1.0))) <= 0.3)
        assert t.to_dict()["kind"] == "gaussian"


@settings(max_examples=10, deadline=None)
@given(x1=st.floats(-2, 2), x2=st.floats(-2, 2), p1=st.floats(-1, 1), p2=st.floats(-1, 1),
       lam=st.floats(0.05, 0.95), phase=st.floats(0, 2 * np.pi))
def test_wigner_properties_of_random_mixtures(x1, x2, p1, p2, lam, phase):
    g = grid_1d()
    cat = packet(g, HBAR, x1, p1) + np.exp(1j * phase) * packet(g, HBAR, x2, p2, spin=(0.6, 0.8))
    members = np.stack([normalized(g, cat), normalized(g, packet(g, HBAR, x2, p1, spin=(0, 1)))])
    st_ = MixedState(g, HBAR, np.array([lam, 1 - lam]), members, C=1e6)
    # offsets must span the cat separation or the unpaired edge offset breaks Hermiticity
    ph = make_phase_grid(g, HBAR, n_xi=256)
    F = wigner_matrix(st_, ph, pad=2)
    f = F.trace()
    assert abs(f.mass - 1) <= 1e-10
    assert F.hermiticity_error() <= 1e-10
    assert f.imag_residue <= 1e-10
    fh = husimi(f)
    assert fh.values.min() >= -1e-12
    assert abs(fh.mass - 1) <= 1e-10
    assert np.max(np.abs(moment_density(f) - density(st_))) <= 1e-8
