"""Electromagnetic field configurations and the Poisson solver.

A :class:`FieldSet` holds grid samples of the magnetic potential ``A`` (shape
``(d, *n)``), the derived magnetic field ``B`` and an optional external
potential ``V_ext``. Presets additionally carry closed-form callables so the
particle side can evaluate the same fields exactly at arbitrary positions.
Positions passed to those callables have shape ``(..., d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft

from .spectral import Grid, gradient, ifft, fft, spectral_derivative

PRESETS = ("zero", "sinusoidal_B", "harmonic_V", "uniform_B_override")


class FieldError(ValueError):
    """Invalid field configuration."""


@dataclass(frozen=True)
class FieldSet:
    """Static external fields on a periodic grid.

    Attributes
    ----------
    grid : Grid
    A : ndarray, shape (d, *n)
        Real magnetic potential.
    B : ndarray or None
        ``curl A``; scalar field for d=2, shape ``(3, *n)`` for d=3, None for d=1.
    V_ext : ndarray or None
        External electric potential.
    b_override : ndarray or None
        Uniform 3-vector used in place of ``B`` in the spin coupling (test mode,
        requires ``A = 0``).
    spin_coupling : bool
        When False the spin term is dropped (Stern-Gerlach ablation).
    preset, params : str, dict
        Provenance (preset name and its parameters).
    V_fn, E_fn, A_fn, B_fn : callables or None
        Closed forms of the same fields at positions ``(..., d)``. ``B_fn``
        returns a scalar for d=2 and a 3-vector for d=3.
    """

    grid: Grid
    A: np.ndarray
    B: Optional[np.ndarray] = None
    V_ext: Optional[np.ndarray] = None
    b_override: Optional[np.ndarray] = None
    preset: str = "custom"
    params: dict = field(default_factory=dict)
    V_fn: Optional[Callable] = None
    E_fn: Optional[Callable] = None
    A_fn: Optional[Callable] = None
    B_fn: Optional[Callable] = None
    spin_coupling: bool = True

    @property
    def a_is_zero(self) -> bool:
        return not np.any(self.A)

    def nonzero_a_axes(self) -> list:
        return [a for a in range(self.grid.d) if np.any(self.A[a])]

    @property
    def has_spin_field(self) -> bool:
        if not self.spin_coupling:
            return False
        if self.b_override is not None:
            return bool(np.any(self.b_override))
        return self.B is not None and bool(np.any(self.B))

    def spin_field(self) -> Optional[np.ndarray]:
        """Magnetic field seen by the spin coupling, shape ``(3, *n)`` or None."""
        g = self.grid
        if not self.spin_coupling:
            return None
        if self.b_override is not None:
            b = np.asarray(self.b_override, dtype=float)
            return np.broadcast_to(b.reshape((3,) + (1,) * g.d), (3,) + g.shape)
        if self.B is None:
            return None
        if g.d == 2:
            zero = np.zeros(g.shape)
            return np.stack([zero, zero, self.B])
        return self.B

    def without_spin(self) -> "FieldSet":
        """Same orbital fields with the spin coupling removed."""
        return replace(self, spin_coupling=False)

    def V_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.V_fn is not None:
            return self.V_fn(x)
        if self.V_ext is None:
            return np.zeros(x.shape[:-1])
        raise FieldError("no closed form for V_ext")

    def E_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.E_fn is not None:
            return self.E_fn(x)
        if self.V_ext is None:
            return np.zeros(x.shape)
        raise FieldError("no closed form for E_ext")

    def A_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.A_fn is not None:
            return self.A_fn(x)
        if self.a_is_zero:
            return np.zeros(x.shape)
        raise FieldError("no closed form for A")

    def B_at(self, x) -> np.ndarray:
        """Orbital magnetic field at positions: scalar for d=2, 3-vector for d=3."""
        x = np.asarray(x, dtype=float)
        d = self.grid.d
        if self.B_fn is not None:
            return self.B_fn(x)
        if self.a_is_zero:
            return np.zeros(x.shape[:-1]) if d == 2 else np.zeros(x.shape[:-1] + (3,))
        raise FieldError("no closed form for B")


def curl(grid: Grid, A) -> np.ndarray:
    """Spectral curl of a real vector potential.

    Returns the out-of-plane scalar ``dA_y/dx - dA_x/dy`` for d=2 and the
    3-vector curl for d=3.
    """
    if grid.d == 1:
        raise FieldError("curl is undefined for d=1")
    A = np.asarray(A)
    if np.iscomplexobj(A):
        raise FieldError("A must be real")
    D = spectral_derivative
    if grid.d == 2:
        return D(grid, A[1], 0) - D(grid, A[0], 1)
    return np.stack([
        D(grid, A[2], 1) - D(grid, A[1], 2),
        D(grid, A[0], 2) - D(grid, A[2], 0),
        D(grid, A[1], 0) - D(grid, A[0], 1),
    ])


def grad(grid: Grid, V) -> np.ndarray:
    """Spectral gradient of a real potential, shape ``(d, *n)``."""
    return gradient(grid, V)


def solve_poisson(grid: Grid, rho, mode: str = "periodic") -> np.ndarray:
    """Solve ``-Laplace V = rho``.

    ``periodic`` subtracts the mean of ``rho`` (neutralizing background) and
    sets the zero mode of ``V`` to 0. ``free`` (d=3 only) returns the
    Newtonian potential ``rho * 1/(4 pi |x|)`` of the density supported in the
    box, using a truncated kernel on a three-fold zero-padded grid.
    """
    rho = np.asarray(rho)
    if np.iscomplexobj(rho):
        raise FieldError("rho must be real")
    if mode == "periodic":
        k2 = grid.k2
        inv = np.zeros_like(k2)
        inv[k2 > 0] = 1.0 / k2[k2 > 0]
        return ifft(grid, fft(grid, rho) * inv).real
    if mode == "free":
        return _free_space_poisson(grid, rho)
    raise FieldError(f"unknown Poisson mode {mode!r}")


def _free_space_poisson(grid: Grid, rho) -> np.ndarray:
    if grid.d != 3:
        raise FieldError("free-space Poisson is only available for d=3")
    # Truncated Green's function: 1/(4 pi r) cut at R = box diagonal. Its
    # Fourier transform is 2 sin^2(R|k|/2)/|k|^2, and a padding factor of 3
    # keeps periodic images of the cut kernel out of the box.
    pad = 3
    n = tuple(pad * m for m in grid.n)
    Lp = tuple(pad * L for L in grid.L)
    R = float(np.sqrt(np.sum(np.square(grid.L))))
    ks = [2 * np.pi * sfft.fftfreq(m, d=L / m) for m, L in zip(n, Lp)]
    kk = np.sqrt(sum(k**2 for k in np.meshgrid(*ks, indexing="ij", sparse=True)))
    with np.errstate(divide="ignore", invalid="ignore"):
        kernel = 2 * np.sin(R * kk / 2) ** 2 / kk**2
    kernel[kk == 0] = R**2 / 2
    rhat = sfft.fftn(rho, s=n)
    V = sfft.ifftn(rhat * kernel).real
    return V[tuple(slice(0, m) for m in grid.n)]


def make_fieldset(grid: Grid, A=None, V_ext=None, b_override=None, **kw) -> FieldSet:
    """Build a FieldSet from grid samples, deriving ``B = curl A``."""
    d = grid.d
    if A is None:
        A = np.zeros((d,) + grid.shape)
    A = np.asarray(A)
    if np.iscomplexobj(A):
        raise FieldError("A must be real")
    A = np.array(A, dtype=float)
    if A.shape != (d,) + grid.shape:
        raise FieldError(f"A has shape {A.shape}, expected {(d,) + grid.shape}")
    if d == 1 and np.any(A):
        raise FieldError("d=1 requires A = 0")
    B = None if d == 1 else curl(grid, A)
    if b_override is not None:
        if np.any(A):
            raise FieldError("b_override requires A = 0")
        b = np.atleast_1d(np.asarray(b_override, dtype=float))
        if b.size == 1:
            b = np.array([0.0, 0.0, b[0]])
        if b.shape != (3,):
            raise FieldError("b_override must be a scalar or a 3-vector")
        b_override = b
    if V_ext is not None:
        V_ext = np.asarray(V_ext)
        if np.iscomplexobj(V_ext):
            raise FieldError("V_ext must be real")
        if V_ext.shape != grid.shape:
            raise FieldError("V_ext shape does not match grid")
    return FieldSet(grid, A, B, V_ext, b_override, **kw)


def _harmonic(grid: Grid, omega: float, center):
    L = np.asarray(grid.L)
    c = np.asarray(center, dtype=float)

    def disp(x):
        dx = x - c
        return dx - L * np.round(dx / L)

    def V_fn(x):
        return 0.5 * omega**2 * np.sum(disp(x) ** 2, axis=-1)

    def E_fn(x):
        return -(omega**2) * disp(x)

    return V_fn, E_fn


def preset_fields(name: str, grid: Grid, **params) -> FieldSet:
    """Analytic field presets.

    ``zero``
        ``A = 0``, ``V_ext = 0``.
    ``harmonic_V(omega=1, center=box center)``
        ``V_ext = omega^2 dist^2/2`` with the periodic (minimum-image) distance.
    ``sinusoidal_B(a=1, mode=1, omega=0)``
        ``A = (0, a sin(kappa x), 0)`` with ``kappa = 2 pi mode / L_x``, so
        ``B_z = a kappa cos(kappa x)``. A nonzero ``omega`` adds the harmonic
        potential. On a box of length ``2 pi`` with ``mode=1`` this is
        ``A = (0, a sin x)``, ``B = a cos x``.
    ``uniform_B_override(B0=1, direction=(0, 0, 1))``
        ``A = 0`` and a uniform spin-coupling field ``B0 * direction``.
    """
    d = grid.d
    params = dict(params)
    if name not in PRESETS:
        raise FieldError(f"unknown preset {name!r}")

    def take(key, default):
        return params.pop(key, default)

    if name == "zero":
        out = dict(A=None, V_ext=None)
        fns = {}
    elif name == "harmonic_V":
        omega = float(take("omega", 1.0))
        center = take("center", grid.center)
        V_fn, E_fn = _harmonic(grid, omega, center)
        pts = np.stack(grid.mesh(), axis=-1)
        out = dict(A=None, V_ext=V_fn(pts))
        fns = dict(V_fn=V_fn, E_fn=E_fn)
    elif name == "sinusoidal_B":
        if d == 1:
            raise FieldError("sinusoidal_B needs d >= 2")
        a = float(take("a", 1.0))
        mode = int(take("mode", 1))
        omega = float(take("omega", 0.0))
        center = take("center", grid.center)
        kappa = 2 * np.pi * mode / grid.L[0]
        x = grid.mesh()[0]
        A = np.zeros((d,) + grid.shape)
        A[1] = a * np.sin(kappa * x)

        def A_fn(p):
            out = np.zeros(p.shape)
            out[..., 1] = a * np.sin(kappa * p[..., 0])
            return out

        def B_fn(p):
            bz = a * kappa * np.cos(kappa * p[..., 0])
            if d == 2:
                return bz
            zero = np.zeros_like(bz)
            return np.stack([zero, zero, bz], axis=-1)

        fns = dict(A_fn=A_fn, B_fn=B_fn)
        V_ext = None
        if omega:
            V_fn, E_fn = _harmonic(grid, omega, center)
            V_ext = V_fn(np.stack(grid.mesh(), axis=-1))
            fns.update(V_fn=V_fn, E_fn=E_fn)
        out = dict(A=A, V_ext=V_ext)
        params_out = dict(a=a, mode=mode, omega=omega)
    else:
        B0 = float(take("B0", 1.0))
        direction = np.asarray(take("direction", (0.0, 0.0, 1.0)), dtype=float)
        direction = direction / np.linalg.norm(direction)
        out = dict(A=None, V_ext=None, b_override=B0 * direction)
        fns = {}
    if params:
        raise FieldError(f"unknown parameters for preset {name}: {sorted(params)}")
    recorded = {}
    if name == "harmonic_V":
        recorded = dict(omega=omega, center=[float(c) for c in np.asarray(center)])
    elif name == "sinusoidal_B":
        recorded = dict(params_out, center=[float(c) for c in np.asarray(center)])
    elif name == "uniform_B_override":
        recorded = dict(B0=B0, direction=[float(v) for v in direction])
    return make_fieldset(grid, preset=name, params=recorded, **out, **fns)


def gauge_transform(fields: FieldSet, phi) -> FieldSet:
    """Return the fields with ``A -> A + grad phi`` (closed forms dropped)."""
    g = fields.grid
    A = fields.A + gradient(g, np.asarray(phi, dtype=float))
    return make_fieldset(g, A=A, V_ext=fields.V_ext, preset=fields.preset + "+gauge", params=fields.params,
                         V_fn=fields.V_fn, E_fn=fields.E_fn)
