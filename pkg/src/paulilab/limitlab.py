"""Semiclassical experiments: hbar sweeps against the kinetic limit.

Each ladder entry builds a uniform-weight coherent-state ensemble from the
initial density f_I, evolves it, forms the Husimi function in kinetic
momentum ``p = xi - A(x)``, and pairs it with a fixed battery of phase-space
Gaussians. The kinetic side transports samples of the same f_I. Reports are
deterministic functions of the configuration.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .fields import FieldSet, preset_fields
from .initial import PhaseSpaceGaussian
from .kinetic import ParticleEnsemble, sample_particles, solve_linear_vlasov, solve_vlasov_poisson
from .quantum import (MixedState, build_mixed_state, current, evolve_pauli_poisson, lp_norm,
                      strang_applicable)
from .spectral import Grid, make_grid
from .wigner import (TestFunction, WignerFunction, gaussian_battery, husimi_from_state, oscillatory_tail,
                     pair_against)


class SweepError(RuntimeError):
    """A sweep stage failed; ``stage`` names it and ``partial`` holds finished rows."""

    def __init__(self, message, stage: str, partial=None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.partial = partial


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class SweepConfig:
    """Parameters of an hbar ladder.

    Attributes
    ----------
    hbars : tuple of float
        Strictly decreasing ladder.
    L : float
        Box length of the square periodic domain, centred at the origin.
    grid_sizes : tuple of int or None
        Quantum grid points per axis for each hbar; None chooses the smallest
        FFT-friendly size resolving the coherent-state width (3 cells per std).
    preset, preset_params
        Field preset shared by both sides.
    x_mean, x_std, p_mean, p_std
        Gaussian initial density f_I.
    T, dt0 : float
        Horizon and base step; the quantum step is ``min(dt0, hbar/4)``.
    method : str
        Quantum stepper; ``strang`` falls back to ``krylov`` when the
        splitting does not apply to the preset.
    C : float
        Weight-condition constant; ``N = ceil(hbar^-d / C)`` members.
    n_particles, kinetic_dt, kinetic_n
        Kinetic sample size, step, and PIC grid size (self-consistent mode).
    coupling : float
        Poisson coupling strength in self-consistent mode.
    battery_count, battery_widths, battery_spread_x, battery_spread_p
        Test-function battery around the f_I means.
    tail_R : tuple of float
        Cutoffs for the oscillatory-tail diagnostic.
    seed : int
    """

    hbars: tuple = (0.5, 0.25, 0.125, 0.0625)
    d: int = 2
    L: float = 9.0
    grid_sizes: Optional[tuple] = None
    preset: str = "sinusoidal_B"
    preset_params: dict = field(default_factory=lambda: {"a": 0.5, "mode": 2, "omega": 1.0})
    x_mean: tuple = (0.0, 0.0)
    x_std: tuple = (0.3, 0.3)
    p_mean: tuple = (0.3, 0.0)
    p_std: tuple = (0.3, 0.3)
    T: float = 1.0
    dt0: float = 0.05
    method: str = "strang"
    C: float = 4.0
    spin: tuple = (1.0, 0.0)
    n_particles: int = 100_000
    kinetic_dt: float = 0.01
    kinetic_n: int = 64
    coupling: float = 1.0
    battery_count: int = 10
    battery_widths: tuple = (0.5, 1.0)
    battery_spread_x: float = 0.3
    battery_spread_p: float = 0.3
    tail_R: tuple = (0.5, 1.0, 2.0, 4.0)
    seed: int = 0

    def __post_init__(self):
        h = np.asarray(self.hbars, dtype=float)
        if h.size == 0 or np.any(h <= 0) or np.any(h > 1):
            raise ValueError("hbar values must lie in (0, 1]")
        if np.any(np.diff(h) >= 0):
            raise ValueError("hbar list must be strictly decreasing")
        if self.grid_sizes is not None and len(self.grid_sizes) != len(self.hbars):
            raise ValueError("grid_sizes must match the hbar list")
        if self.battery_count < 1:
            raise ValueError("battery must be nonempty")
        if self.d not in (1, 2):
            raise ValueError("sweeps support d = 1 or 2 (Husimi by coherent projections)")

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def f_I(self) -> PhaseSpaceGaussian:
        return PhaseSpaceGaussian.make(self.d, self.x_mean, self.x_std, self.p_mean, self.p_std)

    def battery(self) -> list:
        return gaussian_battery(self.x_mean, self.p_mean, self.battery_spread_x, self.battery_spread_p,
                                self.battery_widths, self.battery_count)

    def dt(self, hbar: float) -> float:
        return min(self.dt0, hbar / 4)

    def grid_size(self, i: int) -> int:
        if self.grid_sizes is not None:
            return int(self.grid_sizes[i])
        return auto_grid_size(self.L, self.hbars[i])

    def grid(self, n: int) -> Grid:
        return make_grid(self.d, n, self.L, origin=-self.L / 2)

    def fields(self, grid: Grid, spin: bool = True) -> FieldSet:
        f = preset_fields(self.preset, grid, **self.preset_params)
        return f if spin else f.without_spin()


def auto_grid_size(L: float, hbar: float, cells_per_std: float = 3.0, minimum: int = 32) -> int:
    """Smallest multiple of 16 with ``L/n <= sqrt(hbar/2)/cells_per_std``.

    Multiples of 16 keep the FFT sizes smooth and admit power-of-two strides
    in the coherent-state Husimi evaluation.
    """
    need = L * cells_per_std / math.sqrt(hbar / 2)
    n = max(minimum, int(math.ceil(need * (1 + 1e-9))))
    return 16 * int(math.ceil(n / 16))


def order_fit(hbars, errors) -> Optional[float]:
    """Least-squares slope of ``log(error)`` against ``log(hbar)``."""
    h = np.asarray(hbars, dtype=float)
    e = np.asarray(errors, dtype=float)
    ok = e > 0
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(h[ok]), np.log(e[ok]), 1)[0])


# ---------------------------------------------------------------- basic operations


def symbol_eigenvalue(x, xi, fields: FieldSet) -> np.ndarray:
    """Doubly degenerate eigenvalue ``|xi - A(x)|^2/2 + V(x)`` of the Pauli symbol."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    kin = xi - fields.A_at(x)
    return 0.5 * np.sum(kin**2, axis=-1) + fields.V_at(x)


def particle_pairing(particles: ParticleEnsemble, phi: TestFunction) -> float:
    return float(particles.w @ phi(particles.x, particles.p, box=particles.box))


def weak_error(f_q: WignerFunction, particles: ParticleEnsemble, battery: Sequence[TestFunction]) -> np.ndarray:
    """``|<f_q, phi> - sum_i w_i phi(x_i, p_i)|`` for each test function."""
    return np.array([abs(pair_against(f_q, phi) - particle_pairing(particles, phi)) for phi in battery])


def current_pairing(grid: Grid, J, phi: TestFunction) -> np.ndarray:
    """``int J(x) phi_x(x) dx`` for the position factor of ``phi``."""
    X = np.stack(grid.mesh(), axis=-1)
    w = phi.x_part(X, box=grid.L)
    return np.array([np.sum(J[a] * w) * grid.cell_volume for a in range(J.shape[0])])


def kinetic_current_pairing(particles: ParticleEnsemble, phi: TestFunction) -> np.ndarray:
    return (particles.w * phi.x_part(particles.x, box=particles.box)) @ particles.p


# ---------------------------------------------------------------- ladder runs


@dataclass
class QuantumRun:
    """Outcome of one quantum evolution at fixed hbar."""

    hbar: float
    n: int
    dt: float
    steps: int
    state0: MixedState
    final: MixedState
    fields: FieldSet
    lp_max: float
    energy_drift: float
    charge_drift: float


def quantum_run(cfg: SweepConfig, i: int, mode: str, spin: bool = True, progress=None) -> QuantumRun:
    hbar = cfg.hbars[i]
    n = cfg.grid_size(i)
    g = cfg.grid(n)
    fields = cfg.fields(g, spin)
    state = build_mixed_state(g, hbar, cfg.C, cfg.f_I(), spin=cfg.spin, seed=cfg.seed, fields=fields)
    coupling = cfg.coupling if mode == "self_consistent" else 0.0
    method = cfg.method
    if method == "strang" and not strang_applicable(fields):
        method = "krylov"
    traj = evolve_pauli_poisson(state, fields, cfg.T, cfg.dt(hbar), coupling=coupling, method=method,
                                progress=progress)
    E = traj.E_total
    drift = float(np.max(np.abs(E - E[0])) / max(abs(E[0]), 1e-300))
    qd = float(np.max(np.abs(traj.Q - traj.Q[0])) / traj.Q[0])
    return QuantumRun(hbar, n, traj.dt, len(traj.times) - 1, state, traj.final, fields,
                      float(np.max(traj.lp)), drift, qd)


def kinetic_run(cfg: SweepConfig, mode: str) -> ParticleEnsemble:
    g = cfg.grid(cfg.kinetic_n)
    fields = cfg.fields(g)
    seed = cfg.seed + 1
    if mode == "linear":
        return solve_linear_vlasov(cfg.f_I(), fields, cfg.T, cfg.kinetic_dt, cfg.n_particles, seed=seed)
    tr = solve_vlasov_poisson(cfg.f_I(), fields, cfg.T, cfg.kinetic_dt, cfg.n_particles, grid=g,
                              coupling=cfg.coupling, seed=seed)
    return tr.final


class Ladder:
    """Lazily evaluated quantum and kinetic runs shared between experiments."""

    def __init__(self, cfg: SweepConfig, mode: str = "linear", log: Optional[Callable] = None):
        if mode not in ("linear", "self_consistent"):
            raise ValueError(f"unknown sweep mode {mode!r}")
        self.cfg = cfg
        self.mode = mode
        self.log = log or (lambda msg: None)
        self._q = {}
        self._k = None
        self._hus = {}

    def quantum(self, i: int, spin: bool = True) -> QuantumRun:
        key = (i, spin)
        if key not in self._q:
            self.log(f"quantum hbar={self.cfg.hbars[i]} spin={spin}")
            try:
                self._q[key] = quantum_run(self.cfg, i, self.mode, spin)
            except Exception as exc:
                raise SweepError(str(exc), "quantum") from exc
        return self._q[key]

    def husimi(self, i: int, spin: bool = True) -> WignerFunction:
        key = (i, spin)
        if key not in self._hus:
            run = self.quantum(i, spin)
            try:
                self._hus[key] = husimi_from_state(run.final, run.fields)
            except Exception as exc:
                raise SweepError(str(exc), "husimi") from exc
        return self._hus[key]

    def kinetic(self) -> ParticleEnsemble:
        if self._k is None:
            self.log("kinetic")
            try:
                self._k = kinetic_run(self.cfg, self.mode)
            except Exception as exc:
                raise SweepError(str(exc), "kinetic") from exc
        return self._k


# ---------------------------------------------------------------- report


@dataclass
class ConvergenceReport:
    """Per-hbar rows plus fitted orders and metadata."""

    kind: str
    mode: str
    config: dict
    rows: list
    summary: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = dict(tool="paulilab", version=__version__, config_hash=_hash(self.config), kind=self.kind,
                   mode=self.mode, config=self.config, rows=self.rows, summary=self.summary)
        return json.dumps(_plain(doc), sort_keys=True, indent=2) + "\n"

    def write(self, directory, stem: Optional[str] = None) -> list:
        """Write ``<stem>.json`` and ``<stem>.csv``; returns the paths."""
        import os

        stem = stem or f"{self.kind}_{self.mode}"
        jp = os.path.join(directory, stem + ".json")
        cp = os.path.join(directory, stem + ".csv")
        with open(jp, "w") as fh:
            fh.write(self.to_json())
        with open(cp, "w", newline="") as fh:
            fh.write(f"# paulilab {__version__} config_hash={_hash(self.config)}\n")
            keys = [k for k in self.rows[0] if not isinstance(self.rows[0][k], (list, dict))] if self.rows else []
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(keys)
            for r in self.rows:
                wr.writerow([_fmt(r[k]) for k in keys])
        return [jp, cp]


def _hash(config: dict) -> str:
    blob = json.dumps(_plain(config), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _strictly_decreasing(v) -> bool:
    v = np.asarray(v, dtype=float)
    return bool(v.size < 2 or np.all(np.diff(v) < 0))


# ---------------------------------------------------------------- experiments


def run_hbar_sweep(cfg: SweepConfig, mode: str = "linear", ladder: Optional[Ladder] = None,
                   log: Optional[Callable] = None) -> ConvergenceReport:
    """Weak errors between quantum Husimi functions and the kinetic solution.

    Rows carry per-test-function errors, their mean (the aggregate), member
    count, grid size, the time maximum of ``||rho||_{7/5}``, oscillatory tails
    at ``cfg.tail_R`` and conservation diagnostics. The summary holds the
    empirical order of the aggregate error and the monotonicity verdict.
    """
    lad = ladder or Ladder(cfg, mode, log)
    battery = cfg.battery()
    rows = []
    try:
        kin = lad.kinetic()
        k_mass = kin.mass
        for i, hbar in enumerate(cfg.hbars):
            run = lad.quantum(i)
            f = lad.husimi(i)
            try:
                errs = weak_error(f, kin, battery)
                mass = pair_against(f, TestFunction.constant())
            except Exception as exc:
                raise SweepError(str(exc), "pairing") from exc
            tails = [oscillatory_tail(run.final, R) for R in cfg.tail_R]
            rows.append(dict(
                hbar=hbar, n=run.n, members=run.final.N, dt=run.dt, steps=run.steps,
                aggregate=float(np.mean(errs)), errors=errs.tolist(),
                husimi_mass=mass, kinetic_mass=k_mass,
                lp_max=run.lp_max, energy_drift=run.energy_drift, charge_drift=run.charge_drift,
                gram_deviation=run.final.gram_deviation(),
                tails=[t for t, _ in tails], tail_companion=tails[0][1],
            ))
    except SweepError as exc:
        exc.partial = ConvergenceReport("sweep", mode, cfg.to_dict(), rows)
        raise
    agg = [r["aggregate"] for r in rows]
    summary = dict(order=order_fit(cfg.hbars[: len(rows)], agg), monotone=_strictly_decreasing(agg),
                   battery=[phi.to_dict() for phi in battery], tail_R=list(cfg.tail_R))
    return ConvergenceReport("sweep", mode, cfg.to_dict(), rows, summary)


def sg_ablation(cfg: SweepConfig, ladder: Optional[Ladder] = None, log: Optional[Callable] = None
                ) -> ConvergenceReport:
    """Weak distance between Husimi functions with and without the spin coupling."""
    lad = ladder or Ladder(cfg, "linear", log)
    battery = cfg.battery()
    rows = []
    for i, hbar in enumerate(cfg.hbars):
        on = lad.husimi(i, True)
        off = lad.husimi(i, False)
        diff = WignerFunction(on.phase, on.values - off.values, hbar, 0.0, on.momentum_shift)
        dist = np.array([abs(pair_against(diff, phi)) for phi in battery])
        rows.append(dict(hbar=hbar, distance=float(np.mean(dist)), distances=dist.tolist()))
    dists = [r["distance"] for r in rows]
    summary = dict(order=order_fit(cfg.hbars, dists), monotone=_strictly_decreasing(dists))
    return ConvergenceReport("ablation", lad.mode, cfg.to_dict(), rows, summary)


def current_convergence(cfg: SweepConfig, mode: str = "linear", ladder: Optional[Ladder] = None,
                        log: Optional[Callable] = None) -> ConvergenceReport:
    """Paired current errors and the size of the spin-curl contribution.

    ``error`` is the mean over the battery's position factors of
    ``|<J^hbar, phi> - sum_i w_i p_i phi(x_i)|``; ``spin_curl`` the mean of
    ``|<J_spin, phi>|``, whose log-log slope against hbar is reported.
    """
    lad = ladder or Ladder(cfg, mode, log)
    battery = cfg.battery()
    kin = lad.kinetic()
    rows = []
    for i, hbar in enumerate(cfg.hbars):
        run = lad.quantum(i)
        cp = current(run.final, run.fields, parts=True)
        g = run.final.grid
        errs, spins = [], []
        for phi in battery:
            q = current_pairing(g, cp.total, phi)
            k = kinetic_current_pairing(kin, phi)
            errs.append(float(np.linalg.norm(q - k)))
            s = current_pairing(g, cp.spin_curl, phi) if cp.spin_curl is not None else np.zeros(g.d)
            spins.append(float(np.linalg.norm(s)))
        rows.append(dict(hbar=hbar, error=float(np.mean(errs)), spin_curl=float(np.mean(spins)),
                         errors=errs, spin_curl_parts=spins))
    errs = [r["error"] for r in rows]
    spins = [r["spin_curl"] for r in rows]
    summary = dict(order=order_fit(cfg.hbars, errs), monotone=_strictly_decreasing(errs),
                   spin_curl_slope=order_fit(cfg.hbars, spins))
    return ConvergenceReport("current", lad.mode, cfg.to_dict(), rows, summary)


def uniform_diagnostics(report: ConvergenceReport, bound: float) -> dict:
    """Check the L^{7/5} bound and tail monotonicity recorded in a sweep report."""
    lps = [r["lp_max"] for r in report.rows]
    tails_ok = [bool(np.all(np.diff(r["tails"]) <= 0) and r["tails"][-1] < r["tails"][0]) for r in report.rows]
    return dict(lp=lps, bound=bound, lp_bounded=bool(max(lps) <= bound), tails_decreasing=tails_ok)


def density_norm_bound(cfg: SweepConfig, factor: float = 2.0, n: int = 256) -> float:
    """``factor`` times ``||rho_I||_{7/5}`` of the initial position marginal."""
    g = cfg.grid(n)
    X = np.stack(g.mesh(), axis=-1)
    sx = np.asarray(cfg.x_std)
    dx = g.displacement(X, cfg.x_mean)
    rho = np.exp(-0.5 * np.sum((dx / sx) ** 2, axis=-1)) / ((2 * np.pi) ** (cfg.d / 2) * np.prod(sx))
    return factor * lp_norm(g, rho)
