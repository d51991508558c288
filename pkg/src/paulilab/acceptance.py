"""Acceptance checks shared by the test suite and the ``selftest`` command.

Every check returns a :class:`CriterionResult`. The ``full`` profile uses the
documented problem sizes; ``quick`` shrinks the expensive experiments so that
``paulilab selftest`` finishes in about a minute. Results contain no timing
information, so reports are byte-reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import __version__
from .fields import preset_fields
from .initial import PhaseSpaceGaussian
from .kinetic import ParticleEnsemble, lorentz_step
from .limitlab import (Ladder, SweepConfig, current_convergence, density_norm_bound, run_hbar_sweep,
                       sg_ablation, uniform_diagnostics)
from .quantum import (AdmissibilityError, MixedState, build_mixed_state, coherent_state, density,
                      evolve_pauli_poisson, propagate_step, pure_state)
from .spectral import make_grid
from .wigner import (apply_theta, husimi, make_phase_grid, moment_density, pauli_wigner_residual,
                     wigner_direct, wigner_matrix, wigner_transform, xi_derivative)

PROFILES = ("full", "quick")


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    values: dict = field(default_factory=dict)
    threshold: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_short(v)}" for k, v in self.values.items())
        return f"criterion {self.number:2d} [{status}] {self.name}: {shown} ({self.threshold})"

    def to_dict(self) -> dict:
        return dict(number=self.number, name=self.name, passed=self.passed, values=_plain(self.values),
                    threshold=self.threshold)


def _short(v):
    if isinstance(v, float):
        return f"{v:.3e}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


# ---------------------------------------------------------------- conservation (1, 2)


def conservation_state(n: int = 64, hbar: float = 0.25, seed: int = 1):
    """d=2 harmonic trap with a 16-member admissible ensemble."""
    g = make_grid(2, n, 2 * np.pi)
    fields = preset_fields("harmonic_V", g, omega=1.0)
    f_I = PhaseSpaceGaussian.make(2, g.center, 0.4, 0.0, 0.4)
    state = build_mixed_state(g, hbar, 1.0, f_I, seed=seed)
    return state, fields


def conservation_runs(profile: str = "full"):
    """Self-consistent runs at ``dt0`` and ``dt0/2`` over the same horizon."""
    if profile == "full":
        n, steps, dt0 = 64, 500, 0.005
    else:
        n, steps, dt0 = 64, 40, 0.01
    state, fields = conservation_state(n)
    T = steps * dt0
    runs = {}
    for dt in (dt0, dt0 / 2):
        runs[dt] = evolve_pauli_poisson(state, fields, T, dt, coupling=1.0, method="krylov")
    return runs


def _drift(traj):
    E = traj.E_total
    return float(np.max(np.abs(E - E[0])) / abs(E[0]))


def criterion_charge(runs) -> CriterionResult:
    dt0 = max(runs)
    tr = runs[dt0]
    err = float(np.max(np.abs(tr.Q - tr.Q[0])) / tr.Q[0])
    return CriterionResult(1, "charge conservation", err <= 1e-10,
                           dict(steps=len(tr.times) - 1, members=tr.final.N, charge_error=err), "<= 1e-10")


def criterion_energy(runs) -> CriterionResult:
    dt0 = max(runs)
    d1 = _drift(runs[dt0])
    d2 = _drift(runs[dt0 / 2])
    ratio = d1 / d2 if d2 > 0 else math.inf
    ok = d1 <= 1e-4 and 3.0 <= ratio <= 5.0
    return CriterionResult(2, "energy conservation", ok, dict(drift_dt0=d1, drift_half=d2, ratio=ratio),
                           "drift <= 1e-4, ratio in [3, 5]")


# ---------------------------------------------------------------- phase space (3, 4, 5, 7, 8)


def gaussian_state_1d(hbar: float = 0.1, n: int = 128, L: float = 10.0):
    g = make_grid(1, n, L, origin=-L / 2)
    x = g.axes[0]
    psi = (np.pi * hbar) ** -0.25 * np.exp(-(x**2) / (2 * hbar))
    u = np.stack([psi, 0 * psi]).astype(complex)
    u /= np.sqrt(np.sum(np.abs(u) ** 2) * g.cell_volume)
    return pure_state(g, hbar, u, C=1e6)


def criterion_wigner_match() -> CriterionResult:
    st = gaussian_state_1d()
    hbar = st.hbar
    ph = make_phase_grid(st.grid, hbar)
    f = wigner_transform(st, ph)
    X, XI = np.meshgrid(st.grid.axes[0], ph.xi.axes[0], indexing="ij")
    exact = np.exp(-(X**2 + XI**2) / hbar) / (np.pi * hbar)
    err = float(np.max(np.abs(f.values - exact)))
    oracle = float(np.max(np.abs(wigner_direct(st, ph).real - f.values)))
    ok = err <= 1e-6 and oracle <= 1e-8
    return CriterionResult(3, "Wigner analytic match", ok,
                           dict(shape=list(ph.shape), closed_form_error=err, oracle_error=oracle),
                           "closed form <= 1e-6, oracle <= 1e-8")


def corpus():
    """Named ``(state, phase_grid, pad)`` triples covering pure, cat, mixed and spinor states."""
    out = []
    st = gaussian_state_1d()
    out.append(("gaussian_1d", st, make_phase_grid(st.grid, st.hbar), 1))
    hbar = 0.1
    # 160 points keep three cells per packet standard deviation
    g = make_grid(1, 160, 10.0, origin=-5.0)
    cat = coherent_state(g, hbar, -1.2, 0.3) + coherent_state(g, hbar, 1.2, -0.3)
    cat /= np.sqrt(np.sum(np.abs(cat) ** 2) * g.cell_volume)
    out.append(("cat_1d", pure_state(g, hbar, cat, C=1e6), make_phase_grid(g, hbar), 1))
    members = np.stack([coherent_state(g, hbar, x0, p0, spin=s) for x0, p0, s in
                        ((-1.0, 0.5, (1, 0)), (0.5, -0.4, (0, 1)), (1.5, 0.2, (0.6, 0.8j)), (0.0, 0.0, (0.8, 0.6)))])
    mixed = MixedState(g, hbar, np.full(4, 0.25), members, C=1e6)
    out.append(("mixed_1d", mixed, make_phase_grid(g, hbar), 1))
    hbar = 0.2
    s = math.sqrt(hbar / 2)
    L = 20 * s
    g2 = make_grid(2, 60, L, origin=-L / 2)
    u1 = coherent_state(g2, hbar, (0.1, -0.1), (0.3, 0.2), spin=(0.6, 0.8j))
    u2 = coherent_state(g2, hbar, (-0.2, 0.1), (-0.3, 0.1), spin=(1, 0))
    st2 = MixedState(g2, hbar, np.array([0.5, 0.5]), np.stack([u1, u2]), C=100)
    Xi = 5.5 * math.sqrt(hbar) + 0.4
    n_xi = int(math.ceil(2 * (16 * s / hbar) * Xi / np.pi / 2)) * 2
    out.append(("mixed_spinor_2d", st2, make_phase_grid(g2, hbar, n_xi=n_xi, xi_max=Xi), 2))
    return out


def corpus_measurements():
    rows = []
    for name, st, ph, pad in corpus():
        f = wigner_matrix(st, ph, pad=pad).trace()
        fh = husimi(f)
        rows.append(dict(state=name, husimi_min=float(fh.values.min()), mass_error=abs(fh.mass - f.mass),
                         marginal_error=float(np.max(np.abs(moment_density(f) - density(st))))))
    return rows


def criterion_husimi(rows) -> CriterionResult:
    hmin = min(r["husimi_min"] for r in rows)
    merr = max(r["mass_error"] for r in rows)
    ok = hmin >= -1e-12 and merr <= 1e-8
    return CriterionResult(4, "Husimi nonnegativity and mass", ok,
                           dict(states=len(rows), min_husimi=hmin, max_mass_error=merr),
                           "min >= -1e-12, mass error <= 1e-8")


def criterion_marginal(rows) -> CriterionResult:
    err = max(r["marginal_error"] for r in rows)
    return CriterionResult(5, "marginal identity", err <= 1e-8, dict(states=len(rows), max_error=err), "<= 1e-8")


def criterion_cyclotron() -> CriterionResult:
    B0 = 1.0
    period = 2 * np.pi / B0
    steps = 1000
    dt = period / steps
    p0 = np.array([1.0, 0.0, 0.0])
    x0 = np.array([0.0, 1.0, 0.0])
    ens = ParticleEnsemble.from_grid(x0[None], p0[None], 1.0)
    B = np.array([0.0, 0.0, B0])
    dev = 0.0
    pdrift = 0.0
    for i in range(10 * steps):
        ens = lorentz_step(ens, None, B, dt)
        t = (i + 1) * dt
        # p' = p x B: clockwise rotation about z, circle of radius |p|/B0 around the origin
        exact = np.array([np.sin(B0 * t), np.cos(B0 * t), 0.0]) / B0
        dev = max(dev, float(np.linalg.norm(ens.x[0] - exact)))
        pdrift = max(pdrift, abs(float(np.linalg.norm(ens.p[0])) - 1.0))
    ok = pdrift <= 1e-12 and dev <= 1e-6
    return CriterionResult(6, "cyclotron invariants", ok, dict(p_drift=pdrift, position_error=dev),
                           "|p| drift <= 1e-12, position <= 1e-6")


def criterion_theta() -> CriterionResult:
    st = gaussian_state_1d()
    ph = make_phase_grid(st.grid, st.hbar)
    f = wigner_transform(st, ph)
    c, x0 = 0.7, 0.3
    th = apply_theta(lambda p: c * (p[..., 0] - x0) ** 2, f)
    X = st.grid.axes[0][:, None]
    ref = 2 * c * (X - x0) * xi_derivative(f, 0).real
    rel = float(np.max(np.abs(th.values - ref)) / np.max(np.abs(ref)))
    return CriterionResult(7, "theta exactness on quadratic symbols", rel <= 1e-8, dict(relative_error=rel),
                           "<= 1e-8")


def criterion_residual(taus=(0.04, 0.02, 0.01)) -> CriterionResult:
    hbar = 0.1
    s = math.sqrt(hbar / 2)
    L = 20 * s
    g = make_grid(1, 128, L, origin=-L / 2)
    fields = preset_fields("harmonic_V", g, omega=1.0)
    st = pure_state(g, hbar, coherent_state(g, hbar, 0.3, 0.4, spin=(0.6, 0.8j)), C=1e9)
    ph = make_phase_grid(g, hbar, n_xi=128, xi_max=5.5 * math.sqrt(hbar) + 1.0)
    res = []
    for tau in taus:
        sts = [st]
        for _ in range(2):
            sts.append(propagate_step(sts[-1], fields, fields.V_ext, tau))
        F = [wigner_matrix(q, ph, pad=2) for q in sts]
        res.append(float(pauli_wigner_residual(F, fields, fields.V_fn, hbar, tau)[0]))
    ratios = [res[i] / res[i + 1] for i in range(len(res) - 1)]
    ok = all(3.0 <= r <= 5.0 for r in ratios)
    return CriterionResult(8, "Pauli-Wigner residual order", ok, dict(dt=list(taus), residual=res, ratios=ratios),
                           "each halving ratio in [3, 5]")


# ---------------------------------------------------------------- sweeps (9-13)


def sweep_config(profile: str = "full", **over) -> SweepConfig:
    if profile == "full":
        cfg = SweepConfig()
    else:
        cfg = SweepConfig(hbars=(0.5, 0.25, 0.125), n_particles=20_000, kinetic_n=32, battery_count=4)
    return replace(cfg, **over) if over else cfg


def criterion_linear(report) -> CriterionResult:
    agg = [r["aggregate"] for r in report.rows]
    return CriterionResult(9, "linear semiclassical convergence", report.summary["monotone"],
                           dict(hbar=[r["hbar"] for r in report.rows], aggregate=agg, order=report.summary["order"]),
                           "aggregate weak error strictly decreasing")


def criterion_self_consistent(report) -> CriterionResult:
    agg = [r["aggregate"] for r in report.rows]
    return CriterionResult(10, "self-consistent convergence", report.summary["monotone"],
                           dict(hbar=[r["hbar"] for r in report.rows], aggregate=agg, order=report.summary["order"]),
                           "aggregate weak error strictly decreasing")


def criterion_current(report) -> CriterionResult:
    slope = report.summary["spin_curl_slope"]
    ok = report.summary["monotone"] and slope is not None and abs(slope - 1.0) <= 0.2
    return CriterionResult(11, "current convergence", ok,
                           dict(error=[r["error"] for r in report.rows], spin_curl=[r["spin_curl"] for r in report.rows],
                                spin_curl_slope=slope),
                           "errors strictly decreasing, spin-curl slope within 20% of 1")


def criterion_ablation(report, zero_report) -> CriterionResult:
    zero = max(r["distance"] for r in zero_report.rows)
    ok = report.summary["monotone"] and zero <= 1e-10
    return CriterionResult(12, "Stern-Gerlach ablation", ok,
                           dict(distance=[r["distance"] for r in report.rows], zero_field_distance=zero),
                           "distances strictly decreasing, B=0 distance <= 1e-10")


def criterion_uniform(report, cfg: SweepConfig) -> CriterionResult:
    diag = uniform_diagnostics(report, density_norm_bound(cfg))
    tails4 = [r["tails"][list(cfg.tail_R).index(4.0)] if 4.0 in cfg.tail_R else r["tails"][-1] for r in report.rows]
    ok = diag["lp_bounded"] and all(diag["tails_decreasing"])
    return CriterionResult(13, "uniform diagnostics", ok,
                           dict(lp_max=diag["lp"], bound=diag["bound"], tail_R4=tails4,
                                tails_decreasing=diag["tails_decreasing"]),
                           "L^7/5 below one constant, tails nonincreasing in R")


def zero_field_ablation(cfg: SweepConfig):
    zcfg = replace(cfg, preset="harmonic_V", preset_params={"omega": 1.0}, T=min(cfg.T, 0.25))
    return sg_ablation(zcfg)


# ---------------------------------------------------------------- gate (14)


def criterion_admissibility() -> CriterionResult:
    g = make_grid(2, 64, 2 * np.pi)
    f_I = PhaseSpaceGaussian.make(2, g.center, 0.5, 0.0, 0.5)
    try:
        build_mixed_state(g, 0.25, 1.0, f_I, N=1)
        pure_rejected = False
    except AdmissibilityError:
        pure_rejected = True
    st = build_mixed_state(g, 0.25, 1.0, f_I)
    value = st.admissibility
    ok = pure_rejected and value <= 1.0 and st.N == 16
    return CriterionResult(14, "admissibility gate", ok, dict(pure_rejected=pure_rejected, members=st.N,
                                                              value=value), "pure state fails, value <= C")


# ---------------------------------------------------------------- driver


def run_all(profile: str = "quick", log: Optional[Callable] = None, seed: int = 0) -> list:
    """Run criteria 1-14 and return their results (15 is a property of this output)."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    log = log or (lambda msg: None)
    out = []
    log("conservation")
    runs = conservation_runs(profile)
    out += [criterion_charge(runs), criterion_energy(runs)]
    log("phase space")
    out.append(criterion_wigner_match())
    rows = corpus_measurements()
    out += [criterion_husimi(rows), criterion_marginal(rows)]
    out.append(criterion_cyclotron())
    out.append(criterion_theta())
    out.append(criterion_residual())
    cfg = sweep_config(profile, seed=seed)
    lad = Ladder(cfg, "linear", log)
    lin = run_hbar_sweep(cfg, "linear", lad)
    out.append(criterion_linear(lin))
    sc = run_hbar_sweep(cfg, "self_consistent", log=log)
    out.append(criterion_self_consistent(sc))
    out.append(criterion_current(current_convergence(cfg, "linear", lad)))
    out.append(criterion_ablation(sg_ablation(cfg, lad), zero_field_ablation(cfg)))
    out.append(criterion_uniform(lin, cfg))
    out.append(criterion_admissibility())
    out.sort(key=lambda r: r.number)
    return out


def selftest_report(results, profile: str, seed: int) -> str:
    doc = dict(tool="paulilab", version=__version__, profile=profile, seed=seed,
               passed=all(r.passed for r in results), criteria=[r.to_dict() for r in results])
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"
