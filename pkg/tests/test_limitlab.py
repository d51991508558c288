import json

import numpy as np
import pytest

from paulilab.fields import preset_fields
from paulilab.kinetic import ParticleEnsemble
from paulilab.limitlab import (Ladder, SweepConfig, SweepError, auto_grid_size, current_convergence,
                               density_norm_bound, order_fit, particle_pairing, run_hbar_sweep, sg_ablation,
                               symbol_eigenvalue, uniform_diagnostics, weak_error)
from paulilab.spectral import make_grid
from paulilab.wigner import TestFunction, WignerFunction, make_phase_grid, pair_against


def small_1d(**over):
    base = dict(hbars=(0.4, 0.2, 0.1), d=1, L=10.0, preset="zero", preset_params={}, x_mean=(0.0,),
                x_std=(0.5,), p_mean=(0.5,), p_std=(0.5,), T=0.2, dt0=0.05, n_particles=4000,
                kinetic_dt=0.02, kinetic_n=32, battery_count=3, battery_widths=(0.5,), spin=(1.0, 0.0))
    base.update(over)
    return SweepConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError, match="decreasing"):
        SweepConfig(hbars=(0.1, 0.2))
    with pytest.raises(ValueError):
        SweepConfig(hbars=(2.0,))
    with pytest.raises(ValueError):
        SweepConfig(grid_sizes=(64,))
    with pytest.raises(ValueError):
        SweepConfig(d=3)
    cfg = SweepConfig()
    assert cfg.dt(0.0625) == 0.015625 and cfg.dt(0.5) == 0.05
    assert cfg.config_hash == SweepConfig().config_hash
    assert cfg.config_hash != SweepConfig(seed=1).config_hash


def test_auto_grid_size():
    assert [auto_grid_size(9.0, h) for h in (0.5, 0.25, 0.125, 0.0625)] == [64, 80, 112, 160]
    assert auto_grid_size(1.0, 1.0) == 32
    n = auto_grid_size(10.0, 0.1)
    assert n % 16 == 0 and 10.0 / n <= np.sqrt(0.05) / 3


def test_order_fit():
    h = np.array([0.4, 0.2, 0.1])
    assert abs(order_fit(h, 3 * h**1.5) - 1.5) <= 1e-12
    assert order_fit([0.5], [1.0]) is None
    assert order_fit([0.5, 0.25], [1.0, 0.0]) is None


def test_symbol_eigenvalue_examples():
    g = make_grid(2, 16, 9.0, origin=-4.5)
    zero = preset_fields("zero", g)
    np.testing.assert_allclose(symbol_eigenvalue([[0.0, 0.0]], [[1.0, 2.0]], zero), [2.5])
    h = preset_fields("harmonic_V", g, omega=2.0)
    np.testing.assert_allclose(symbol_eigenvalue([[1.0, 0.0]], [[0.0, 0.0]], h), [2.0])
    s = preset_fields("sinusoidal_B", g, a=0.5, mode=1)
    x = np.array([[0.3, 0.1]])
    xi = np.array([[0.2, 0.7]])
    kin = xi - s.A_at(x)
    np.testing.assert_allclose(symbol_eigenvalue(x, xi, s), 0.5 * np.sum(kin**2, axis=-1))


def test_weak_error_self_comparison():
    # a tabulated f_I against particles drawn from it: Monte Carlo level only
    cfg = small_1d()
    f_I = cfg.f_I()
    g = make_grid(1, 128, 10.0, origin=-5.0)
    ph = make_phase_grid(g, 0.1, n_xi=128, xi_max=4.0)
    X, XI = np.meshgrid(g.axes[0], ph.xi.axes[0], indexing="ij")
    f = WignerFunction(ph, f_I.density(X[..., None], XI[..., None]), 0.1)
    N = 4000
    x, p = f_I.sample(N, seed=7, method="random")
    ens = ParticleEnsemble(x, p, np.full(N, 1 / N), g.L, g.origin)
    errs = weak_error(f, ens, cfg.battery())
    assert np.all(errs <= 3 / np.sqrt(N))
    assert abs(pair_against(f, TestFunction.constant()) - 1) <= 1e-8
    assert abs(particle_pairing(ens, TestFunction.constant()) - 1) <= 1e-12


def test_single_hbar_sweep_has_no_order():
    rep = run_hbar_sweep(small_1d(hbars=(0.4,)))
    assert len(rep.rows) == 1 and rep.summary["order"] is None
    row = rep.rows[0]
    assert abs(row["husimi_mass"] - 1) <= 1e-8 and row["kinetic_mass"] == pytest.approx(1.0)
    assert row["members"] == 1


def test_free_sweep_decreases_and_is_deterministic(tmp_path):
    cfg = small_1d()
    lad = Ladder(cfg)
    rep = run_hbar_sweep(cfg, ladder=lad)
    assert rep.summary["monotone"]
    assert [r["members"] for r in rep.rows] == [1, 2, 3]
    again = run_hbar_sweep(cfg)
    assert rep.to_json() == again.to_json()
    paths = rep.write(tmp_path)
    doc = json.loads(open(paths[0]).read())
    assert doc["config_hash"] and doc["kind"] == "sweep"
    head = open(paths[1]).read().splitlines()
    assert head[0].startswith("# paulilab") and "aggregate" in head[1]
    diag = uniform_diagnostics(rep, density_norm_bound(cfg))
    assert diag["lp_bounded"]


def test_ablation_without_magnetic_field_is_zero():
    rep = sg_ablation(small_1d(hbars=(0.4, 0.2), preset="harmonic_V", preset_params={"omega": 1.0}))
    assert all(r["distance"] == 0 for r in rep.rows)


def test_ablation_distance_grows_with_time():
    d = [sg_ablation(SweepConfig(hbars=(0.5,), T=T, battery_count=2)).rows[0]["distance"] for T in (0.05, 0.2)]
    assert 0 < d[0] < d[1]


def test_current_convergence_rows():
    cfg = SweepConfig(hbars=(0.5,), T=0.1, n_particles=2000, battery_count=2)
    rep = current_convergence(cfg)
    assert len(rep.rows) == 1
    assert rep.rows[0]["spin_curl"] > 0 and np.isfinite(rep.rows[0]["error"])


def test_stage_errors_are_tagged():
    # the coarse grid cannot resolve the coherent states
    cfg = small_1d(hbars=(0.1,), grid_sizes=(32,))
    with pytest.raises(SweepError) as exc:
        run_hbar_sweep(cfg)
    assert exc.value.stage == "quantum"
    assert exc.value.partial is not None and exc.value.partial.rows == []
