"""Command-line interface.

Usage::

    paulilab VERB [--config PATH] [--out DIR] [--seed N] [--jobs N] [--dry-run]

Verbs are ``evolve``, ``wigner``, ``vlasov``, ``sweep``, ``ablate-sg``,
``current`` and ``selftest``. Configuration files are INI-style: ``[section]``
headers followed by ``key = value`` lines, ``#`` comments, lists written as
comma-separated values. Every key is optional; unknown sections or keys are
errors. The recognised keys and their defaults are listed in ``SCHEMA``; the
``[fields]`` section takes ``preset`` plus arbitrary numeric preset
parameters.

Exit codes: 0 success, 1 selftest failure, 2 configuration, 3 fields,
4 quantum, 5 wigner, 6 kinetic, 7 sweep, 8 io. Errors are printed as
``paulilab: [stage] message`` on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.fft as sfft

from . import __version__

EXIT_CODES = {"selftest": 1, "config": 2, "fields": 3, "quantum": 4, "wigner": 5, "kinetic": 6,
              "sweep": 7, "io": 8}
EXPERIMENTS = ("evolve", "wigner", "vlasov", "sweep", "ablation", "current")
VERBS = {"evolve": "evolve", "wigner": "wigner", "vlasov": "vlasov", "sweep": "sweep",
         "ablate-sg": "ablation", "current": "current"}
MODES = ("linear", "self_consistent")
METHODS = ("krylov", "strang")
DEFAULT_PRESET = "sinusoidal_B"
DEFAULT_PRESET_PARAMS = {"a": 0.5, "mode": 2.0, "omega": 1.0}


class CLIError(Exception):
    """Failure tagged with the pipeline stage that produced it."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage

    @property
    def code(self) -> int:
        return EXIT_CODES[self.stage]


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration.

    Attributes
    ----------
    experiment : str
        One of ``EXPERIMENTS``; the verb overrides it on the command line.
    d : int
        Spatial dimension.
    n : tuple of int
        Grid points per axis: one value (all runs) or one per hbar; empty
        chooses a resolving size per hbar.
    L : float
        Box length, domain ``[-L/2, L/2)^d``.
    hbar : float
        Single-run semiclassical parameter (``evolve``, ``wigner``).
    hbars : tuple of float
        Strictly decreasing ladder for ``sweep``, ``ablation``, ``current``.
    T, dt : float
        Horizon and base step; quantum sweeps use ``min(dt, hbar/4)``.
    C : float
        Weight-condition constant.
    mode : str
        ``linear`` or ``self_consistent``.
    coupling : float
        Poisson coupling in self-consistent mode.
    method : str
        Quantum stepper, ``strang`` (falls back to ``krylov``) or ``krylov``.
    seed : int
    out : str
        Output directory.
    snapshot_every : int
        Write member snapshots every this many steps in ``evolve`` (0: none).
    preset, preset_params
        Field preset and its parameters.
    spin : tuple of float
        Spinor of every coherent state.
    x_mean, x_std, p_mean, p_std : tuple of float
        Gaussian initial density, broadcast to ``d`` components.
    particles : int
    kinetic_dt : float
    kinetic_n : int
        PIC grid points per axis.
    battery_count : int
    battery_widths : tuple of float
    battery_spread_x, battery_spread_p : float
    """

    experiment: str = "sweep"
    d: int = 2
    n: tuple = ()
    L: float = 9.0
    hbar: float = 0.25
    hbars: tuple = (0.5, 0.25, 0.125, 0.0625)
    T: float = 1.0
    dt: float = 0.05
    C: float = 4.0
    mode: str = "linear"
    coupling: float = 1.0
    method: str = "strang"
    seed: int = 0
    out: str = "results"
    snapshot_every: int = 0
    preset: str = DEFAULT_PRESET
    preset_params: dict = field(default_factory=lambda: dict(DEFAULT_PRESET_PARAMS))
    spin: tuple = (1.0, 0.0)
    x_mean: tuple = (0.0, 0.0)
    x_std: tuple = (0.3, 0.3)
    p_mean: tuple = (0.3, 0.0)
    p_std: tuple = (0.3, 0.3)
    particles: int = 100_000
    kinetic_dt: float = 0.01
    kinetic_n: int = 64
    battery_count: int = 10
    battery_widths: tuple = (0.5, 1.0)
    battery_spread_x: float = 0.3
    battery_spread_p: float = 0.3

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    def identity(self) -> dict:
        """Everything that determines the results (the output directory does not)."""
        out = self.to_dict()
        del out["out"]
        return out

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def grid_size(self, hbar: float, i: int = 0) -> int:
        from .limitlab import auto_grid_size

        if not self.n:
            return auto_grid_size(self.L, hbar)
        return int(self.n[i] if len(self.n) > 1 else self.n[0])

    def vec(self, name: str) -> tuple:
        """``d``-component value; the 2-vector defaults are cut or zero-padded."""
        v = tuple(getattr(self, name))
        if len(v) == 1:
            return v * self.d
        if len(v) == self.d:
            return v
        if name.endswith("std"):
            return (v[0],) * self.d
        return (v + (0.0,) * self.d)[: self.d]

    def sweep_config(self):
        from .limitlab import SweepConfig

        sizes = None
        if self.n:
            sizes = tuple(self.grid_size(h, i) for i, h in enumerate(self.hbars))
        return SweepConfig(
            hbars=tuple(self.hbars), d=self.d, L=self.L, grid_sizes=sizes, preset=self.preset,
            preset_params=dict(self.preset_params), x_mean=self.vec("x_mean"), x_std=self.vec("x_std"),
            p_mean=self.vec("p_mean"), p_std=self.vec("p_std"), T=self.T, dt0=self.dt, method=self.method,
            C=self.C, spin=tuple(self.spin), n_particles=self.particles, kinetic_dt=self.kinetic_dt,
            kinetic_n=self.kinetic_n, coupling=self.coupling, battery_count=self.battery_count,
            battery_widths=tuple(self.battery_widths), battery_spread_x=self.battery_spread_x,
            battery_spread_p=self.battery_spread_p, seed=self.seed,
        )


# section -> {key: (RunConfig attribute, kind)}
SCHEMA = {
    "run": {
        "experiment": ("experiment", "str"), "d": ("d", "int"), "n": ("n", "ints"), "L": ("L", "float"),
        "hbar": ("hbar", "float"), "hbars": ("hbars", "floats"), "T": ("T", "float"), "dt": ("dt", "float"),
        "C": ("C", "float"), "mode": ("mode", "str"), "coupling": ("coupling", "float"),
        "method": ("method", "str"), "seed": ("seed", "int"), "out": ("out", "str"),
        "snapshot_every": ("snapshot_every", "int"),
    },
    "initial": {
        "spin": ("spin", "floats"), "x_mean": ("x_mean", "floats"), "x_std": ("x_std", "floats"),
        "p_mean": ("p_mean", "floats"), "p_std": ("p_std", "floats"),
    },
    "kinetic": {
        "particles": ("particles", "int"), "dt": ("kinetic_dt", "float"), "n": ("kinetic_n", "int"),
    },
    "sweep": {
        "battery_count": ("battery_count", "int"), "battery_widths": ("battery_widths", "floats"),
        "battery_spread_x": ("battery_spread_x", "float"), "battery_spread_p": ("battery_spread_p", "float"),
    },
}
SECTIONS = tuple(SCHEMA) + ("fields",)


def _line_of(lines, section: str, key: Optional[str] = None) -> Optional[int]:
    current = None
    for i, raw in enumerate(lines, 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if key is None and current == section:
                return i
        elif current == section and key is not None and "=" in s:
            if s.split("=", 1)[0].strip() == key:
                return i
    return None


def _convert(kind: str, text: str):
    if kind == "str":
        return text.strip()
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    items = [t.strip() for t in text.split(",") if t.strip()]
    if kind == "ints":
        return tuple(int(t) for t in items)
    return tuple(float(t) for t in items)


def _where(path, lines, section, key=None) -> str:
    ln = _line_of(lines, section, key)
    loc = f"{path}:{ln}" if ln else str(path)
    return f"{loc}: [{section}]" + (f" {key}" if key else "")


def parse_config_text(text: str, path: str = "<config>") -> RunConfig:
    """Parse configuration text; see :func:`parse_config`."""
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",), empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise CLIError("config", f"{path}: {exc}") from exc
    lines = text.splitlines()
    values = {}
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise CLIError("config", f"{_where(path, lines, sec)}: unknown section {sec!r}")
        if sec == "fields":
            continue
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise CLIError("config", f"{_where(path, lines, sec, key)}: unknown key {key!r}")
            attr, kind = SCHEMA[sec][key]
            try:
                values[attr] = _convert(kind, raw)
            except ValueError:
                raise CLIError("config", f"{_where(path, lines, sec, key)}: expected {kind}, got {raw!r}") from None
    if cp.has_section("fields"):
        params = {}
        for key, raw in cp.items("fields"):
            if key == "preset":
                values["preset"] = raw.strip()
                continue
            try:
                vals = _convert("floats", raw)
            except ValueError:
                raise CLIError("config", f"{_where(path, lines, 'fields', key)}: expected numbers, got {raw!r}") from None
            params[key] = vals[0] if len(vals) == 1 else vals
        values["preset_params"] = params
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise CLIError("config", f"{path}: {exc}") from exc
    validate(cfg, path, lines)
    return cfg


def validate(cfg: RunConfig, path: str = "<config>", lines=()) -> None:
    """Raise :class:`CLIError` (stage ``config``) on a schema violation."""

    def fail(section, key, msg):
        raise CLIError("config", f"{_where(path, lines, section, key)}: {msg}")

    if cfg.experiment not in EXPERIMENTS:
        fail("run", "experiment", f"unknown experiment {cfg.experiment!r} (expected one of {', '.join(EXPERIMENTS)})")
    if cfg.d not in (1, 2, 3):
        fail("run", "d", "dimension must be 1, 2 or 3")
    if any(k < 4 for k in cfg.n):
        fail("run", "n", "grid sizes must be at least 4")
    if len(cfg.n) > 1 and len(cfg.n) != len(cfg.hbars):
        fail("run", "n", "give one grid size or one per hbar")
    for name in ("L", "hbar", "T", "dt", "C", "kinetic_dt", "battery_spread_x", "battery_spread_p"):
        if not getattr(cfg, name) > 0:
            section = next((s for s, keys in SCHEMA.items() for k, (a, _) in keys.items() if a == name), "run")
            key = next(k for k, (a, _) in SCHEMA[section].items() if a == name)
            fail(section, key, "must be positive")
    h = np.asarray(cfg.hbars, dtype=float)
    if h.size == 0 or np.any(h <= 0) or np.any(h > 1):
        fail("run", "hbars", "hbar values must lie in (0, 1]")
    if np.any(np.diff(h) >= 0):
        fail("run", "hbars", f"hbar list must be strictly decreasing, got {list(cfg.hbars)}")
    if cfg.mode not in MODES:
        fail("run", "mode", f"unknown mode {cfg.mode!r} (expected linear or self_consistent)")
    if cfg.method not in METHODS:
        fail("run", "method", f"unknown method {cfg.method!r} (expected krylov or strang)")
    if cfg.seed < 0:
        fail("run", "seed", "seed must be nonnegative")
    if cfg.snapshot_every < 0:
        fail("run", "snapshot_every", "must be nonnegative")
    if len(cfg.spin) != 2 or not np.any(cfg.spin):
        fail("initial", "spin", "spin must be two numbers, not both zero")
    for name in ("x_mean", "x_std", "p_mean", "p_std"):
        v = getattr(cfg, name)
        if len(v) not in (1, cfg.d) and v != getattr(RunConfig, name):
            fail("initial", name, f"expected 1 or {cfg.d} values")
        if name.endswith("std") and any(s <= 0 for s in v):
            fail("initial", name, "standard deviations must be positive")
    if cfg.particles < 1:
        fail("kinetic", "particles", "must be positive")
    if cfg.kinetic_n < 4:
        fail("kinetic", "n", "grid size must be at least 4")
    if cfg.battery_count < 1 or not cfg.battery_widths:
        fail("sweep", "battery_count", "battery must be nonempty")


def parse_config(path) -> RunConfig:
    """Read and validate a configuration file.

    Missing keys take the ``RunConfig`` defaults; unknown sections and keys,
    malformed values and a non-decreasing hbar list are errors naming the
    offending line and key.
    """
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise CLIError("config", f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config_text(text, str(path))


def _format(kind: str, value) -> str:
    if kind in ("ints", "floats"):
        return ", ".join(repr(v) for v in value)
    return repr(value) if kind == "float" else str(value)


def serialize_config(cfg: RunConfig) -> str:
    """INI text that :func:`parse_config_text` maps back to ``cfg``."""
    out = []
    for sec, keys in SCHEMA.items():
        out.append(f"[{sec}]")
        for key, (attr, kind) in keys.items():
            out.append(f"{key} = {_format(kind, getattr(cfg, attr))}")
        out.append("")
    out.append("[fields]")
    out.append(f"preset = {cfg.preset}")
    for key in sorted(cfg.preset_params):
        v = cfg.preset_params[key]
        out.append(f"{key} = {_format('floats', v) if isinstance(v, tuple) else repr(float(v))}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- experiments


def _meta(cfg: RunConfig) -> dict:
    return {"tool": "paulilab", "version": __version__, "config_hash": cfg.config_hash, "seed": cfg.seed}


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=2, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _stage(name: str):
    """Context manager mapping any exception to a tagged :class:`CLIError`."""

    @contextlib.contextmanager
    def wrapped():
        try:
            yield
        except CLIError:
            raise
        except OSError as exc:
            raise CLIError("io", f"{getattr(exc, 'filename', '') or ''} {exc.strerror or exc}".strip()) from exc
        except Exception as exc:
            raise CLIError(name, f"{type(exc).__name__}: {exc}") from exc

    return wrapped()


def _grid(cfg: RunConfig, n: int):
    from .spectral import make_grid

    return make_grid(cfg.d, n, cfg.L, origin=-cfg.L / 2)


def _fields(cfg: RunConfig, grid):
    from .fields import preset_fields

    with _stage("fields"):
        return preset_fields(cfg.preset, grid, **cfg.preset_params)


def _initial(cfg: RunConfig):
    from .initial import PhaseSpaceGaussian

    return PhaseSpaceGaussian.make(cfg.d, cfg.vec("x_mean"), cfg.vec("x_std"), cfg.vec("p_mean"), cfg.vec("p_std"))


def _quantum_state(cfg: RunConfig, grid, fields):
    from .quantum import build_mixed_state

    with _stage("quantum"):
        return build_mixed_state(grid, cfg.hbar, cfg.C, _initial(cfg), spin=cfg.spin, seed=cfg.seed, fields=fields)


def _method(cfg: RunConfig, fields) -> str:
    from .quantum import strang_applicable

    return "krylov" if cfg.method == "strang" and not strang_applicable(fields) else cfg.method


def check_fields(cfg: RunConfig) -> None:
    """Build the preset on a coarse grid; raises with stage ``fields``."""
    _fields(cfg, _grid(cfg, 8))


def run_evolve(cfg: RunConfig, out: str) -> list:
    from .io import write_field
    from .quantum import density, evolve_pauli_poisson

    g = _grid(cfg, cfg.grid_size(cfg.hbar))
    fields = _fields(cfg, g)
    state = _quantum_state(cfg, g, fields)
    coupling = cfg.coupling if cfg.mode == "self_consistent" else 0.0
    with _stage("quantum"):
        traj = evolve_pauli_poisson(state, fields, cfg.T, min(cfg.dt, cfg.hbar / 4), coupling=coupling,
                                    method=_method(cfg, fields), snapshot_every=cfg.snapshot_every or None)
    meta = _meta(cfg)
    paths = [os.path.join(out, "trajectory.csv"), os.path.join(out, "density.pwps"),
             os.path.join(out, "members.pwps"), os.path.join(out, "run.json")]
    with _stage("io"):
        traj.write_csv(paths[0], [f"paulilab {__version__} config_hash={cfg.config_hash}"])
        write_field(paths[1], g, density(traj.final), meta=meta)
        write_field(paths[2], g, traj.final.members, meta=dict(meta, weights=traj.final.weights.tolist()))
        for t, members in traj.snapshots:
            step = int(round(t / traj.dt))
            p = os.path.join(out, f"members_{step:06d}.pwps")
            write_field(p, g, members, meta=dict(meta, t=t))
            paths.append(p)
        E = traj.E_total
        summary = {
            "steps": len(traj.times) - 1, "dt": traj.dt, "members": state.N, "grid": list(g.n),
            "charge_drift": float(np.max(np.abs(traj.Q - traj.Q[0])) / traj.Q[0]),
            "energy_drift": float(np.max(np.abs(E - E[0])) / abs(E[0])),
            "final_energy": float(E[-1]), "lp_max": float(np.max(traj.lp)),
        }
        _write_json(paths[3], dict(meta, experiment="evolve", config=cfg.identity(), summary=summary))
    return paths


def run_wigner(cfg: RunConfig, out: str) -> list:
    from .io import write_field
    from .quantum import density
    from .wigner import husimi_from_state, make_phase_grid, moment_density, wigner_transform

    g = _grid(cfg, cfg.grid_size(cfg.hbar))
    fields = _fields(cfg, g)
    state = _quantum_state(cfg, g, fields)
    meta = _meta(cfg)
    summary = {"members": state.N, "grid": list(g.n)}
    paths = []
    with _stage("wigner"):
        if cfg.d > 2:
            raise ValueError("phase-space output supports d = 1 or 2")
        hus = husimi_from_state(state, fields)
        summary["husimi_min"] = float(hus.values.min())
        summary["husimi_mass"] = hus.mass
        outputs = [("husimi.pwps", hus)]
        if cfg.d == 1:
            W = wigner_transform(state, make_phase_grid(g, cfg.hbar))
            marg = moment_density(W)
            summary["wigner_mass"] = W.mass
            summary["marginal_error"] = float(np.max(np.abs(marg - density(state))))
            outputs.append(("wigner.pwps", W))
    with _stage("io"):
        for name, F in outputs:
            p = os.path.join(out, name)
            write_field(p, F.phase.x, F.values, xi_grid=F.phase.xi, hbar=cfg.hbar, meta=meta)
            paths.append(p)
        p = os.path.join(out, "run.json")
        _write_json(p, dict(meta, experiment="wigner", config=cfg.identity(), summary=summary))
        paths.append(p)
    return paths


def run_vlasov(cfg: RunConfig, out: str) -> list:
    from .io import write_field, write_particles
    from .kinetic import deposit, solve_linear_vlasov, solve_vlasov_poisson

    g = _grid(cfg, cfg.kinetic_n)
    fields = _fields(cfg, g)
    meta = _meta(cfg)
    paths = [os.path.join(out, "particles.pwpp"), os.path.join(out, "moments.pwps"), os.path.join(out, "run.json")]
    with _stage("kinetic"):
        if cfg.mode == "linear":
            final = solve_linear_vlasov(_initial(cfg), fields, cfg.T, cfg.kinetic_dt, cfg.particles, seed=cfg.seed)
            summary = {"steps": int(round(cfg.T / cfg.kinetic_dt))}
            traj = None
        else:
            traj = solve_vlasov_poisson(_initial(cfg), fields, cfg.T, cfg.kinetic_dt, cfg.particles, grid=g,
                                        coupling=cfg.coupling, seed=cfg.seed)
            final = traj.final
            E = traj.E_total
            summary = {"steps": len(traj.times) - 1,
                       "energy_drift": float(np.max(np.abs(E - E[0])) / abs(E[0])),
                       "momentum_drift": float(np.max(np.abs(traj.momentum - traj.momentum[0])))}
        mom = deposit(final, g)
        summary.update(particles=final.N, mass=float(final.mass))
    with _stage("io"):
        write_particles(paths[0], final, meta=meta)
        write_field(paths[1], g, np.concatenate([mom.rho[None], mom.J]), meta=dict(meta, components="rho,J"))
        if traj is not None:
            p = os.path.join(out, "energies.csv")
            with open(p, "w") as fh:
                fh.write(f"# paulilab {__version__} config_hash={cfg.config_hash}\n")
                fh.write("t,E_kin,E_field,E_ext,E_total\n")
                for row in zip(traj.times, traj.E_kin, traj.E_field, traj.E_ext, traj.E_total):
                    fh.write(",".join(repr(float(v)) for v in row) + "\n")
            paths.append(p)
        _write_json(paths[2], dict(meta, experiment="vlasov", config=cfg.identity(), summary=summary))
    return paths


def run_report(cfg: RunConfig, out: str, experiment: str, log=None) -> list:
    from .limitlab import Ladder, SweepError, current_convergence, run_hbar_sweep, sg_ablation

    with _stage("config"):
        scfg = cfg.sweep_config()
    check_fields(cfg)
    try:
        lad = Ladder(scfg, cfg.mode, log)
        if experiment == "sweep":
            report = run_hbar_sweep(scfg, cfg.mode, lad)
        elif experiment == "ablation":
            report = sg_ablation(scfg, lad)
        else:
            report = current_convergence(scfg, cfg.mode, lad)
    except SweepError as exc:
        stage = {"quantum": "quantum", "husimi": "wigner", "kinetic": "kinetic"}.get(exc.stage, "sweep")
        raise CLIError(stage, str(exc)) from exc
    except Exception as exc:
        raise CLIError("sweep", f"{type(exc).__name__}: {exc}") from exc
    with _stage("io"):
        return report.write(out)


def run_selftest(out: str, seed: int, profile: str, log=None) -> tuple:
    from .acceptance import run_all, selftest_report

    with _stage("selftest"):
        results = run_all(profile, log=log, seed=seed)
    path = os.path.join(out, "selftest.json")
    with _stage("io"):
        with open(path, "w") as fh:
            fh.write(selftest_report(results, profile, seed))
    return results, path


def run(cfg: RunConfig, out: str, dry_run: bool = False, log=None) -> list:
    """Execute ``cfg.experiment``; returns the written paths (none for a dry run)."""
    check_fields(cfg)
    if dry_run:
        return []
    with _stage("io"):
        os.makedirs(out, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(13, "output directory not writable", out)
    exp = cfg.experiment
    if exp == "evolve":
        return run_evolve(cfg, out)
    if exp == "wigner":
        return run_wigner(cfg, out)
    if exp == "vlasov":
        return run_vlasov(cfg, out)
    return run_report(cfg, out, exp, log)


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI configuration file")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (overrides [run] out)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="RNG seed (overrides [run] seed)")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="FFT worker threads")
    common.add_argument("--dry-run", action="store_true", default=argparse.SUPPRESS,
                        help="validate configuration and presets without computing")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="no progress output")
    parser = argparse.ArgumentParser(prog="paulilab", parents=[common],
                                     description="Semiclassical Pauli to Vlasov limit experiments.")
    parser.add_argument("--version", action="version", version=f"paulilab {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        sub.add_parser(verb, parents=[common], help=f"run the {VERBS[verb]} experiment")
    st = sub.add_parser("selftest", parents=[common], help="run the acceptance criteria")
    st.add_argument("--profile", choices=("quick", "full"), default="quick")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    opt = vars(args)
    quiet = opt.get("quiet", False)
    log = None if quiet else (lambda msg: print(f"  {msg}", file=sys.stderr, flush=True))
    jobs = opt.get("jobs")
    try:
        if jobs is not None and jobs < 1:
            raise CLIError("config", "--jobs must be positive")
        workers = sfft.set_workers(jobs) if jobs else contextlib.nullcontext()
        with workers:
            if args.verb == "selftest":
                seed = opt.get("seed", 0)
                if opt.get("dry_run"):
                    return 0
                out = opt.get("out", "results")
                with _stage("io"):
                    os.makedirs(out, exist_ok=True)
                results, path = run_selftest(out, seed, args.profile, log)
                for r in results:
                    print(r.line())
                ok = all(r.passed for r in results)
                print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed; report {path}")
                return 0 if ok else EXIT_CODES["selftest"]
            cfg = parse_config(opt["config"]) if "config" in opt else RunConfig()
            over = {"experiment": VERBS[args.verb]}
            if "seed" in opt:
                over["seed"] = opt["seed"]
            if "out" in opt:
                over["out"] = opt["out"]
            cfg = replace(cfg, **over)
            validate(cfg)
            paths = run(cfg, cfg.out, opt.get("dry_run", False), log)
            if opt.get("dry_run"):
                print(f"config ok ({cfg.experiment}, hash {cfg.config_hash})")
            for p in paths:
                print(p)
            return 0
    except CLIError as exc:
        print(f"paulilab: [{exc.stage}] {exc}", file=sys.stderr)
        return exc.code
    except KeyboardInterrupt:
        print("paulilab: interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    raise SystemExit(main())
