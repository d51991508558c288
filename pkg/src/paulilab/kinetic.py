"""Characteristics of the Vlasov equation with Lorentz force and a PIC loop.

Particles carry positions ``x`` (shape ``(N, d)``), kinetic momenta ``p`` of
the same shape and weights ``w``. Force fields are given as ``None`` (zero),
a constant array (uniform field), a callable of positions ``(..., d)`` or a
:class:`~paulilab.spectral.Grid` sample interpolated with the cloud-in-cell
kernel. The magnetic field is a scalar (out of plane) for d=2 and a 3-vector
for d=3; d=1 has no magnetic force.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .fields import FieldSet, grad, solve_poisson
from .spectral import Grid


class KineticError(ValueError):
    """Invalid particle configuration or time step."""


@dataclass(frozen=True)
class ParticleEnsemble:
    """Weighted phase-space particles.

    Attributes
    ----------
    x, p : ndarray, shape (N, d)
    w : ndarray, shape (N,)
        Nonnegative weights.
    box, origin : tuple or None
        Periodic box; positions are wrapped into ``[origin, origin + box)``
        after every step. ``None`` means the whole space.
    """

    x: np.ndarray
    p: np.ndarray
    w: np.ndarray
    box: Optional[tuple] = None
    origin: Optional[tuple] = None

    def __post_init__(self):
        if self.x.ndim != 2 or self.p.shape != self.x.shape or self.w.shape != self.x.shape[:1]:
            raise KineticError("particle arrays must have shapes (N, d), (N, d), (N,)")
        if np.any(self.w < 0):
            raise KineticError("particle weights must be nonnegative")

    @classmethod
    def from_grid(cls, x, p, w, grid: Optional[Grid] = None):
        x = np.array(x, dtype=float, ndmin=2)
        p = np.array(p, dtype=float, ndmin=2)
        w = np.broadcast_to(np.asarray(w, dtype=float), x.shape[:1]).copy()
        if grid is None:
            return cls(x, p, w)
        ens = cls(x, p, w, tuple(grid.L), tuple(grid.origin))
        return ens.wrapped()

    @property
    def N(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def mass(self) -> float:
        return float(np.sum(self.w))

    @property
    def momentum(self) -> np.ndarray:
        return self.w @ self.p

    @property
    def kinetic_energy(self) -> float:
        return 0.5 * float(self.w @ np.sum(self.p**2, axis=1))

    def wrapped(self) -> "ParticleEnsemble":
        if self.box is None:
            return self
        L = np.asarray(self.box)
        o = np.asarray(self.origin)
        x = o + np.mod(self.x - o, L)
        # mod can round up to exactly L for tiny negative offsets
        x = np.where(x >= o + L, o, x)
        return replace(self, x=x)

    def moved(self, x, p) -> "ParticleEnsemble":
        return replace(self, x=x, p=p).wrapped()


# ---------------------------------------------------------------- grid transfer


def _cic(grid: Grid, x):
    """Corner indices and multilinear weights, each shaped ``(2^d, N)``."""
    d = grid.d
    s = (np.asarray(x, dtype=float) - np.asarray(grid.origin)) / np.asarray(grid.h)
    i0 = np.floor(s)
    frac = s - i0
    i0 = i0.astype(np.int64)
    n = np.asarray(grid.n)
    idx, wts = [], []
    for corner in range(2**d):
        bits = [(corner >> a) & 1 for a in range(d)]
        flat = np.zeros(len(s), dtype=np.int64)
        wt = np.ones(len(s))
        for a in range(d):
            ia = np.mod(i0[:, a] + bits[a], n[a])
            flat = flat * n[a] + ia
            wt = wt * (frac[:, a] if bits[a] else 1.0 - frac[:, a])
        idx.append(flat)
        wts.append(wt)
    return np.array(idx), np.array(wts)


def deposit_scalar(grid: Grid, x, q) -> np.ndarray:
    """Cloud-in-cell density of point charges ``q`` at ``x``; integrates to ``sum(q)``."""
    idx, wts = _cic(grid, x)
    q = np.asarray(q, dtype=float)
    acc = np.bincount(idx.ravel(), weights=(wts * q[None, :]).ravel(), minlength=grid.size)
    return acc.reshape(grid.shape) / grid.cell_volume


def interpolate(grid: Grid, values, x) -> np.ndarray:
    """Cloud-in-cell gather of grid ``values`` with shape ``(..., *n)`` at ``x``.

    Returns shape ``(N, ...)``; the transpose of :func:`deposit_scalar` so the
    pair conserves momentum in the self-consistent loop.
    """
    values = np.asarray(values)
    lead = values.shape[: values.ndim - grid.d]
    flat = values.reshape(lead + (grid.size,))
    idx, wts = _cic(grid, x)
    out = np.einsum("...cn,cn->n...", flat[..., idx], wts)
    return out


@dataclass(frozen=True)
class KineticMoments:
    """Deposited density ``rho`` (shape ``n``) and current ``J`` (shape ``(d, *n)``)."""

    grid: Grid
    rho: np.ndarray
    J: np.ndarray

    @property
    def mass(self) -> float:
        return float(np.sum(self.rho) * self.grid.cell_volume)


def deposit(particles: ParticleEnsemble, grid: Grid) -> KineticMoments:
    """Cloud-in-cell deposition of ``w`` and ``w p`` onto ``grid``."""
    idx, wts = _cic(grid, particles.x)
    flat = idx.ravel()
    ww = wts * particles.w[None, :]
    rho = np.bincount(flat, weights=ww.ravel(), minlength=grid.size).reshape(grid.shape)
    J = np.stack([
        np.bincount(flat, weights=(ww * particles.p[None, :, a]).ravel(), minlength=grid.size).reshape(grid.shape)
        for a in range(particles.d)
    ])
    return KineticMoments(grid, rho / grid.cell_volume, J / grid.cell_volume)


# ---------------------------------------------------------------- force evaluation


def _evaluate(src, x, kind: str, d: int, grid: Optional[Grid] = None):
    """Evaluate a force source at ``x``; ``kind`` is ``"E"`` or ``"B"``."""
    N = x.shape[0]
    if kind == "E":
        shape = (N, d)
    else:
        shape = (N,) if d == 2 else (N, 3)
    if src is None:
        return np.zeros(shape)
    if callable(src):
        return np.broadcast_to(src(x), shape)
    arr = np.asarray(src, dtype=float)
    if grid is not None and arr.ndim >= grid.d and arr.shape[arr.ndim - grid.d:] == grid.shape:
        vals = interpolate(grid, arr, x)
        return np.broadcast_to(vals, shape)
    return np.broadcast_to(arr, shape)


def _check_magnetic(B, d, dt):
    if d == 1:
        if np.any(B):
            raise KineticError("no magnetic force in d=1")
        return
    mag = np.abs(B) if d == 2 else np.linalg.norm(B, axis=-1)
    if mag.size and float(np.max(mag)) * dt > math.pi:
        raise KineticError(f"dt*|B| = {float(np.max(mag)) * dt:.3g} > pi: rotation aliasing")


def _gyrate(x, p, B, dt):
    """Exact motion in a frozen uniform magnetic field over ``dt``.

    ``p' = p x B`` rotates the perpendicular momentum by ``-|B| dt`` about
    ``B``; the position integrates the rotating momentum in closed form.
    """
    d = x.shape[1]
    if d == 1:
        return x + p * dt, p
    if d == 2:
        # B along z: p' = (p_y B, -p_x B)
        th = B * dt
        c, s = np.cos(th), np.sin(th)
        px, py = p[:, 0], p[:, 1]
        pn = np.stack([c * px + s * py, -s * px + c * py], axis=1)
        # int_0^dt of the rotating momentum
        S = dt * np.sinc(th / np.pi)
        Cm = 0.5 * B * dt**2 * np.sinc(th / (2 * np.pi)) ** 2
        dx = np.stack([S * px + Cm * py, -Cm * px + S * py], axis=1)
        return x + dx, pn
    om = np.linalg.norm(B, axis=1)
    safe = np.where(om > 0, om, 1.0)
    b = B / safe[:, None]
    b[om == 0] = 0.0
    par = np.sum(p * b, axis=1)[:, None] * b
    perp = p - par
    cr = np.cross(perp, b)
    th = (om * dt)[:, None]
    c, s = np.cos(th), np.sin(th)
    pn = par + c * perp + s * cr
    S = dt * np.sinc(th / np.pi)
    Cm = 0.5 * om[:, None] * dt**2 * np.sinc(th / (2 * np.pi)) ** 2
    return x + par * dt + S * perp + Cm * cr, pn


def lorentz_step(particles: ParticleEnsemble, E, B, dt: float, grid: Optional[Grid] = None) -> ParticleEnsemble:
    """One step of ``x' = p, p' = E + p x B``.

    Half electric kick, exact gyration in the magnetic field frozen at the
    predicted mid-path position, half electric kick at the new position. The
    magnetic part is an exact rotation, so ``|p|`` is invariant when ``E = 0``
    and trajectories in a uniform field are exact up to roundoff. Second order
    for smooth nonuniform fields.
    """
    if dt <= 0:
        raise KineticError("dt must be positive")
    d = particles.d
    x, p = particles.x, particles.p
    p = p + 0.5 * dt * _evaluate(E, x, "E", d, grid)
    if B is None:
        x = x + dt * p
    else:
        Bm = _evaluate(B, x + 0.5 * dt * p, "B", d, grid)
        _check_magnetic(Bm, d, dt)
        x, p = _gyrate(x, p, Bm, dt)
    p = p + 0.5 * dt * _evaluate(E, x, "E", d, grid)
    return particles.moved(x, p)


def rk4_step(particles: ParticleEnsemble, E, B, dt: float, grid: Optional[Grid] = None) -> ParticleEnsemble:
    """Classical Runge-Kutta step of the same equations (cross-check integrator)."""
    d = particles.d

    def rhs(x, p):
        f = _evaluate(E, x, "E", d, grid)
        if B is not None and d > 1:
            b = _evaluate(B, x, "B", d, grid)
            if d == 2:
                f = f + np.stack([p[:, 1] * b, -p[:, 0] * b], axis=1)
            else:
                f = f + np.cross(p, b)
        return p, f

    x, p = particles.x, particles.p
    k1 = rhs(x, p)
    k2 = rhs(x + 0.5 * dt * k1[0], p + 0.5 * dt * k1[1])
    k3 = rhs(x + 0.5 * dt * k2[0], p + 0.5 * dt * k2[1])
    k4 = rhs(x + dt * k3[0], p + dt * k3[1])
    xn = x + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    pn = p + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return particles.moved(xn, pn)


STEPPERS = {"boris": lorentz_step, "rk4": rk4_step}


def external_forces(fields: FieldSet, closed_form: bool = True):
    """``(E, B, V)`` sources for the particle side of a :class:`FieldSet`.

    With ``closed_form`` the preset callables are used when available;
    otherwise the grid samples (``E = -grad V_ext`` and ``B``) are interpolated.
    """
    g = fields.grid
    if closed_form and (fields.V_ext is None or fields.E_fn is not None) and (
        fields.a_is_zero or fields.B_fn is not None
    ):
        E = fields.E_fn
        B = fields.B_fn if not fields.a_is_zero else None
        V = fields.V_fn
        return E, B, V
    E = None if fields.V_ext is None else -grad(g, fields.V_ext)
    B = None if fields.a_is_zero else (fields.B if g.d == 2 else np.moveaxis(fields.B, 0, -1))
    return E, B, fields.V_ext


def _potential_at(V, x, grid):
    if V is None:
        return np.zeros(x.shape[0])
    if callable(V):
        return V(x)
    return interpolate(grid, V, x)


def _nsteps(T, dt):
    if T < 0 or dt <= 0:
        raise KineticError("T must be nonnegative and dt positive")
    n = int(math.ceil(T / dt - 1e-9))
    return n, (T / n if n else dt)


@dataclass
class Characteristic:
    """Single trajectory with its Hamiltonian ``H = |p|^2/2 + V(x)``."""

    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    H: np.ndarray


def flow_map(x0, p0, fields, T: float, dt: float, method: str = "boris", record: bool = False):
    """Integrate characteristics from ``(x0, p0)`` to time ``T``.

    ``fields`` is a :class:`FieldSet` (closed forms used when present) or a
    tuple ``(E, B, V)`` of sources. ``x0, p0`` may hold one point or a batch
    ``(N, d)``. Returns ``(x(T), p(T))``, or a :class:`Characteristic` for a
    single point when ``record`` is set.
    """
    if isinstance(fields, FieldSet):
        E, B, V = external_forces(fields)
        grid = fields.grid
        box, origin = tuple(grid.L), tuple(grid.origin)
    else:
        E, B, V = (tuple(fields) + (None, None, None))[:3]
        grid, box, origin = None, None, None
    single = np.ndim(x0) == 1
    x = np.array(x0, dtype=float, ndmin=2)
    p = np.array(p0, dtype=float, ndmin=2)
    ens = ParticleEnsemble(x, p, np.ones(len(x)), box, origin).wrapped()
    step = STEPPERS[method]
    n, dt = _nsteps(T, dt)
    ts, xs, ps, Hs = [0.0], [ens.x.copy()], [ens.p.copy()], []

    def hamiltonian(e):
        return 0.5 * np.sum(e.p**2, axis=1) + _potential_at(V, e.x, grid)

    if record:
        Hs.append(hamiltonian(ens))
    for i in range(n):
        ens = step(ens, E, B, dt, grid)
        if record:
            ts.append((i + 1) * dt)
            xs.append(ens.x.copy())
            ps.append(ens.p.copy())
            Hs.append(hamiltonian(ens))
    if record:
        sel = 0 if single else slice(None)
        X = np.array(xs)[:, sel]
        P = np.array(ps)[:, sel]
        H = np.array(Hs)[:, sel]
        return Characteristic(np.array(ts), X, P, H)
    if single:
        return ens.x[0], ens.p[0]
    return ens.x, ens.p


def sample_particles(sampler, N: int, seed: int = 0, method: str = "sobol", grid: Optional[Grid] = None,
                     mass: float = 1.0) -> ParticleEnsemble:
    """Equal-weight particles drawn from ``sampler.sample(N, seed, method)``."""
    x, p = sampler.sample(N, seed=seed, method=method)
    return ParticleEnsemble.from_grid(x, p, np.full(N, mass / N), grid)


def solve_linear_vlasov(sampler, fields: FieldSet, T: float, dt: float, N: int, seed: int = 0,
                        method: str = "sobol", stepper: str = "boris") -> ParticleEnsemble:
    """Push ``N`` samples of f_I along the characteristics of the external fields.

    The empirical measure of the result represents ``f_I`` transported by the
    Hamiltonian flow to time ``T``.
    """
    ens = sample_particles(sampler, N, seed, method, fields.grid)
    E, B, _ = external_forces(fields)
    step = STEPPERS[stepper]
    n, dt = _nsteps(T, dt)
    for _ in range(n):
        ens = step(ens, E, B, dt, fields.grid)
    return ens


@dataclass
class KineticTrajectory:
    """Diagnostics of a particle-in-cell run.

    ``E_field`` is the self-consistent energy ``(1/2) int V_self rho``,
    ``E_ext`` the external potential energy ``sum w V_ext(x)``.
    """

    times: np.ndarray
    E_kin: np.ndarray
    E_field: np.ndarray
    E_ext: np.ndarray
    E_total: np.ndarray
    momentum: np.ndarray
    final: ParticleEnsemble
    moments: KineticMoments
    V: np.ndarray
    dt: float
    snapshots: list = field(default_factory=list)

    CSV_HEADER = ("t", "E_kin", "E_field", "E_ext", "E_total")

    def rows(self):
        for i in range(len(self.times)):
            yield (self.times[i], self.E_kin[i], self.E_field[i], self.E_ext[i], self.E_total[i])


def solve_vlasov_poisson(sampler, fields: FieldSet, T: float, dt: float, N: int, grid: Optional[Grid] = None,
                         coupling: float = 1.0, seed: int = 0, method: str = "sobol",
                         snapshot_every: Optional[int] = None, particles: Optional[ParticleEnsemble] = None,
                         ) -> KineticTrajectory:
    """Particle-in-cell Vlasov-Poisson loop with Lorentz force.

    Each step deposits the density, solves the periodic Poisson equation for
    ``V_self`` (scaled by ``coupling``), and advances the particles with
    :func:`lorentz_step` in ``E = -grad V_self`` plus the external fields.
    The self field uses the same cloud-in-cell kernel for deposition and
    interpolation, so the total self-force vanishes and momentum is conserved
    when no external force acts.
    """
    grid = fields.grid if grid is None else grid
    if particles is None:
        particles = sample_particles(sampler, N, seed, method, grid)
    ens = particles
    E_ext, B, V_ext = external_forces(fields)
    n, dt = _nsteps(T, dt)
    hmin = min(grid.h)

    def self_field(e):
        mom = deposit(e, grid)
        if coupling:
            V = solve_poisson(grid, coupling * mom.rho)
            Eg = -grad(grid, V)
        else:
            V = np.zeros(grid.shape)
            Eg = None
        return mom, V, Eg

    def energies(e, mom, V):
        ef = 0.5 * float(np.sum(V * mom.rho) * grid.cell_volume)
        ex = float(e.w @ _potential_at(V_ext, e.x, fields.grid)) if V_ext is not None else 0.0
        return e.kinetic_energy, ef, ex

    def total_E(e, Eg):
        Ex = _evaluate(E_ext, e.x, "E", grid.d, fields.grid)
        return Ex if Eg is None else Ex + interpolate(grid, Eg, e.x)

    mom, V, Eg = self_field(ens)
    E_cur = total_E(ens, Eg)
    rec = [energies(ens, mom, V)]
    P = [ens.momentum]
    snaps = [(0.0, ens)] if snapshot_every else []
    warned = False
    for i in range(n):
        if not warned and float(np.max(np.abs(ens.p))) * dt > hmin:
            warnings.warn("particles cross more than one cell per step (max|p| dt > h)", RuntimeWarning)
            warned = True
        # Half kick, gyration, self field at the new positions, half kick.
        p = ens.p + 0.5 * dt * E_cur
        x = ens.x
        if B is None:
            x = x + dt * p
        else:
            Bm = _evaluate(B, x + 0.5 * dt * p, "B", grid.d, fields.grid)
            _check_magnetic(Bm, grid.d, dt)
            x, p = _gyrate(x, p, Bm, dt)
        ens = ens.moved(x, p)
        mom, V, Eg = self_field(ens)
        E_cur = total_E(ens, Eg)
        ens = replace(ens, p=ens.p + 0.5 * dt * E_cur)
        rec.append(energies(ens, mom, V))
        P.append(ens.momentum)
        if snapshot_every and (i + 1) % snapshot_every == 0:
            snaps.append(((i + 1) * dt, ens))
    rec = np.array(rec)
    times = np.arange(n + 1) * dt
    return KineticTrajectory(times, rec[:, 0], rec[:, 1], rec[:, 2], rec.sum(axis=1), np.array(P), ens, mom, V,
                             dt, snaps)


def pair_particles(particles: ParticleEnsemble, phi: Callable) -> float:
    """``sum_i w_i phi(x_i, p_i)`` with minimum-image positions when periodic."""
    return float(particles.w @ phi(particles.x, particles.p, box=particles.box))
