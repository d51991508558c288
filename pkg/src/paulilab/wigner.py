"""Phase-space representations of spinor ensembles.

Phase-space arrays are laid out with the ``d`` position axes first and the
``d`` momentum axes last; Wigner matrices carry two extra leading axes for the
2x2 spin structure. The transform pairs the position offset ``y`` (kernel
variable) with the momentum ``xi`` through ``exp(-i xi.y)`` and the prefactor
``(2 pi)^{-d}``, which makes the momentum marginal equal the density exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.fft as sfft

from .fields import FieldSet
from .quantum import SIGMA, MixedState
from .spectral import Grid, fft, ifft, make_grid, spectral_derivative


class PhaseSpaceError(ValueError):
    """Phase grid cannot represent the requested object."""


@dataclass(frozen=True)
class PhaseGrid:
    """Position grid times a centred momentum grid.

    ``xi`` is a :class:`Grid` with origin ``-Xi`` and length ``2 Xi`` per axis;
    the matching kernel offsets are ``y_l = l * dy`` with ``dy = pi / Xi`` and
    ``l = -n_xi/2 .. n_xi/2 - 1``.
    """

    x: Grid
    xi: Grid
    hbar: float

    @property
    def d(self) -> int:
        return self.x.d

    @property
    def Xi(self) -> tuple:
        return tuple(L / 2 for L in self.xi.L)

    @property
    def dy(self) -> tuple:
        return tuple(2 * np.pi / (n * h) for n, h in zip(self.xi.n, self.xi.h))

    @property
    def y_axes(self) -> tuple:
        return tuple(dy * (np.arange(n) - n // 2) for dy, n in zip(self.dy, self.xi.n))

    @property
    def shape(self) -> tuple:
        return self.x.shape + self.xi.shape

    @property
    def cell_volume(self) -> float:
        return self.x.cell_volume * self.xi.cell_volume

    def xi_mesh(self) -> tuple:
        return self.xi.mesh()


def make_phase_grid(x_grid: Grid, hbar: float, n_xi=None, xi_max=None, pad: float = 1.25) -> PhaseGrid:
    """Phase grid whose momentum box covers ``hbar * k_max`` (padded by ``pad``)."""
    d = x_grid.d
    if n_xi is None:
        n_xi = x_grid.n
    n_xi = tuple(int(v) for v in np.broadcast_to(np.asarray(n_xi), (d,)))
    if xi_max is None:
        xi_max = [pad * hbar * np.pi / h for h in x_grid.h]
    xi_max = np.broadcast_to(np.asarray(xi_max, dtype=float), (d,))
    xi = make_grid(d, n_xi, 2 * xi_max, origin=-xi_max)
    return PhaseGrid(x_grid, xi, float(hbar))


@dataclass(frozen=True)
class WignerFunction:
    """Real phase-space function ``f(x, xi)``.

    ``momentum_shift`` (shape ``(d, *n_x)``) marks a function tabulated in
    ``xi`` whose physical momentum is ``p = xi - shift(x)``; pairing uses it.
    """

    phase: PhaseGrid
    values: np.ndarray
    hbar: float
    imag_residue: float = 0.0
    momentum_shift: Optional[np.ndarray] = None

    @property
    def mass(self) -> float:
        return float(np.sum(self.values) * self.phase.cell_volume)


@dataclass(frozen=True)
class WignerMatrix:
    """2x2 Hermitian-matrix-valued phase-space function, values ``(2, 2, *shape)``."""

    phase: PhaseGrid
    values: np.ndarray
    hbar: float

    def trace(self) -> WignerFunction:
        return WignerFunction(self.phase, np.real(self.values[0, 0] + self.values[1, 1]), self.hbar,
                              float(np.max(np.abs(np.imag(self.values[0, 0] + self.values[1, 1])), initial=0.0)))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.values - np.conj(np.swapaxes(self.values, 0, 1)))))


# ---------------------------------------------------------------- kernel <-> phase space


def _y_axes(d):
    return tuple(range(-d, 0))


def kernel_to_wigner(phase: PhaseGrid, K):
    """``(2 pi)^{-d} sum_y exp(-i xi.y) K(x, y) dy^d`` over the trailing ``d`` axes."""
    ax = _y_axes(phase.d)
    F = sfft.fftshift(sfft.fftn(sfft.ifftshift(K, axes=ax), axes=ax), axes=ax)
    return F * (np.prod(phase.dy) / (2 * np.pi) ** phase.d)


def wigner_to_kernel(phase: PhaseGrid, F):
    """Inverse of :func:`kernel_to_wigner`."""
    ax = _y_axes(phase.d)
    K = sfft.fftshift(sfft.ifftn(sfft.ifftshift(F, axes=ax), axes=ax), axes=ax)
    return K * (phase.xi.cell_volume * phase.xi.size)


def _shift_phases(grid: Grid, offsets):
    """Fourier multipliers ``exp(i k.s)`` for offsets of shape ``(m, d)``; Nyquist uses cos."""
    out = np.ones((len(offsets),) + grid.shape, dtype=complex)
    for a in range(grid.d):
        k = grid.k[a]
        ph = np.exp(1j * np.outer(offsets[:, a], k))
        ny = grid.n[a] // 2
        ph[:, ny] = np.cos(offsets[:, a] * k[ny])
        shape = [len(offsets)] + [1] * grid.d
        shape[1 + a] = grid.n[a]
        out = out * ph.reshape(shape)
    return out


def _y_points(phase: PhaseGrid):
    return np.stack(np.meshgrid(*phase.y_axes, indexing="ij"), axis=-1).reshape(-1, phase.d)


def spectral_mass_outside(state: MixedState, Xi) -> float:
    """Fraction of ensemble momentum mass with ``hbar |k_a| > Xi_a`` on some axis."""
    g = state.grid
    uhat = fft(g, state.members)
    p = np.abs(uhat) ** 2
    total = np.tensordot(state.weights, np.sum(p, axis=tuple(range(1, p.ndim))), axes=1)
    mask = np.zeros(g.shape, dtype=bool)
    for a, K in enumerate(g.kmesh()):
        mask |= state.hbar * np.abs(K) > Xi[a] * (1 + 1e-12)
    out = np.tensordot(state.weights, np.sum(p * mask, axis=tuple(range(1, p.ndim))), axes=1)
    return float(out / total) if total > 0 else 0.0


def density_kernel(state: MixedState, phase: PhaseGrid, matrix: bool = False, chunk: int = 64, pad: int = 1):
    """``K(x, y) = sum_j lambda_j u_j(x + hbar y/2) conj(u_j(x - hbar y/2))``.

    Returns shape ``(*n_x, *n_y)`` (trace only) or ``(2, 2, *n_x, *n_y)``.
    Shifted values are exact band-limited shifts. With ``pad > 1`` the members
    are embedded in a box ``pad`` times larger before shifting, so long
    offsets do not wrap a packet onto itself; this assumes the members vanish
    near the edge of their box.
    """
    g = state.grid
    if g != phase.x:
        raise PhaseSpaceError("state grid and phase grid differ")
    d = g.d
    hbar = state.hbar
    ys = _y_points(phase)
    u = state.members
    gs = g
    if pad > 1:
        gs = Grid(d, tuple(pad * n for n in g.n), tuple(pad * L for L in g.L),
                  tuple(o - (pad - 1) * L / 2 for o, L in zip(g.origin, g.L)))
        big = np.zeros(u.shape[:2] + gs.shape, dtype=complex)
        inner = tuple(slice((pad - 1) * n // 2, (pad - 1) * n // 2 + n) for n in g.n)
        big[(slice(None), slice(None)) + inner] = u
        u = big
    uhat = fft(gs, u)
    w = state.weights.reshape((-1,) + (1,) * (d + 1))
    ny = phase.xi.shape
    if matrix:
        K = np.zeros((2, 2) + g.shape + (len(ys),), dtype=complex)
    else:
        K = np.zeros(g.shape + (len(ys),), dtype=complex)
    crop = (slice(None),) * 3 + (inner if pad > 1 else ())
    for start in range(0, len(ys), chunk):
        s = ys[start : start + chunk] * (hbar / 2)
        ph = _shift_phases(gs, s)[:, None, None]
        up = ifft(gs, uhat[None] * ph)[crop]
        um = ifft(gs, uhat[None] * np.conj(ph))[crop]
        if matrix:
            for a in range(2):
                for b in range(2):
                    val = np.sum(w * up[:, :, a : a + 1] * np.conj(um[:, :, b : b + 1]), axis=(1, 2))
                    K[a, b, ..., start : start + len(s)] = np.moveaxis(val, 0, -1)
        else:
            val = np.sum(w * up * np.conj(um), axis=(1, 2))
            K[..., start : start + len(s)] = np.moveaxis(val, 0, -1)
    return K.reshape(K.shape[:-1] + ny)


def _check_resolution(state: MixedState, phase: PhaseGrid, tol: float = 1e-6):
    out = spectral_mass_outside(state, phase.Xi)
    if out > tol:
        raise PhaseSpaceError(f"momentum box too small: mass {out:.2e} beyond Xi={phase.Xi}")


def wigner_transform(state: MixedState, phase: PhaseGrid, pad: int = 1) -> WignerFunction:
    """Scalar Wigner function ``f = Tr F`` of a mixed state (``pad`` as in :func:`density_kernel`)."""
    _check_resolution(state, phase)
    F = kernel_to_wigner(phase, density_kernel(state, phase, pad=pad))
    return WignerFunction(phase, F.real, state.hbar, float(np.max(np.abs(F.imag), initial=0.0)))


def wigner_matrix(state: MixedState, phase: PhaseGrid, pad: int = 1) -> WignerMatrix:
    """Wigner matrix of the spinor density matrix."""
    _check_resolution(state, phase)
    K = density_kernel(state, phase, matrix=True, pad=pad)
    return WignerMatrix(phase, kernel_to_wigner(phase, K), state.hbar)


def wigner_direct(state: MixedState, phase: PhaseGrid) -> np.ndarray:
    """Reference transform by explicit quadrature, one shifted field per offset.

    Evaluates ``sum_y exp(-i xi.y) K(x,y)`` as a dense sum; O(n^2) per point in
    d=1, intended for small grids.
    """
    from .spectral import spectral_shift

    g = state.grid
    d = g.d
    ys = _y_points(phase)
    xis = np.stack(np.meshgrid(*phase.xi.axes, indexing="ij"), axis=-1).reshape(-1, d)
    out = np.zeros(g.shape + (len(xis),), dtype=complex)
    for y in ys:
        Kxy = 0
        for lam, u in zip(state.weights, state.members):
            up = spectral_shift(g, u, state.hbar * y / 2)
            um = spectral_shift(g, u, -state.hbar * y / 2)
            Kxy = Kxy + lam * np.sum(up * np.conj(um), axis=0)
        out += Kxy[..., None] * np.exp(-1j * xis @ y)
    out *= np.prod(phase.dy) / (2 * np.pi) ** d
    return out.reshape(g.shape + phase.xi.shape)


# ---------------------------------------------------------------- moments


def moment_density(f: Union[WignerFunction, WignerMatrix]) -> np.ndarray:
    """``int f dxi`` (trace taken for a Wigner matrix)."""
    if isinstance(f, WignerMatrix):
        f = f.trace()
    d = f.phase.d
    return np.sum(f.values, axis=_y_axes(d)) * f.phase.xi.cell_volume


def _xi_broadcast(phase: PhaseGrid, a: int):
    shape = [1] * phase.d + list(phase.xi.shape)
    return phase.xi_mesh()[a].reshape(shape)


def moment_current(F: WignerMatrix, fields: FieldSet, spin_curl: bool = True) -> np.ndarray:
    """Current density from the Wigner matrix.

    Computes ``J_k = Re Tr(sigma_k sigma_j (M_j - A_j R - (i hbar/2) d_j R))``
    with ``R = int F dxi`` and ``M_j = int xi_j F dxi``. The ``d_j R`` term
    turns the symmetric-ordered first moment into the spin-curl part of the
    current; ``spin_curl=False`` drops it, leaving the plain moment
    ``int Re Tr(sigma (sigma.(xi - A)) F) dxi``, which carries only the
    convective part.
    """
    phase = F.phase
    d = phase.d
    if d == 1:
        raise PhaseSpaceError("moment_current needs d >= 2")
    g = phase.x
    dxi = phase.xi.cell_volume
    ax = _y_axes(d)
    R = np.sum(F.values, axis=ax) * dxi
    J = []
    P = []
    for j in range(d):
        M = np.sum(F.values * _xi_broadcast(phase, j), axis=ax) * dxi
        Pj = M - fields.A[j] * R
        if spin_curl:
            Pj = Pj - 0.5j * F.hbar * spectral_derivative(g, R, j)
        P.append(Pj)
    for k in range(d):
        tot = 0
        for j in range(d):
            S = SIGMA[k] @ SIGMA[j]
            tot = tot + np.einsum("ab,ba...->...", S, P[j])
        J.append(np.real(tot))
    return np.stack(J)


# ---------------------------------------------------------------- Husimi


def _gauss_multiplier(grid: Grid, hbar: float):
    return np.exp(-0.25 * hbar * grid.k2)


def husimi(f: WignerFunction) -> WignerFunction:
    """Smooth ``f`` with ``G(z) = (pi hbar)^{-d/2} exp(-|z|^2/hbar)`` in x and in xi.

    Implemented as a Fourier multiplier ``exp(-hbar |k|^2/4)`` on each set of
    axes. The Gaussian must be resolved (std ``sqrt(hbar/2)`` at least one
    cell) and negligible at half the box on both grids.
    """
    ph = f.phase
    hbar = f.hbar
    s = math.sqrt(hbar / 2)
    for grid, name in ((ph.x, "x"), (ph.xi, "xi")):
        if s < max(grid.h):
            raise PhaseSpaceError(f"Husimi Gaussian under-resolved on the {name} grid")
        if math.exp(-((min(grid.L) / 2) ** 2) / hbar) > 1e-10:
            raise PhaseSpaceError(f"Husimi Gaussian not contained in the {name} box")
    d = ph.d
    mx = _gauss_multiplier(ph.x, hbar).reshape(ph.x.shape + (1,) * d)
    mk = _gauss_multiplier(ph.xi, hbar).reshape((1,) * d + ph.xi.shape)
    ax = tuple(range(2 * d))
    out = sfft.ifftn(sfft.fftn(f.values, axes=ax) * mx * mk, axes=ax).real
    return WignerFunction(ph, out, hbar, 0.0, f.momentum_shift)


def _fast_even(n):
    m = sfft.next_fast_len(n)
    while m % 2:
        m = sfft.next_fast_len(m + 1)
    return m


def husimi_from_state(state: MixedState, fields: Optional[FieldSet] = None, stride: Optional[int] = None,
                      patch: Optional[int] = None, chunk: int = 8) -> WignerFunction:
    """Husimi function from coherent-state projections.

    ``f~(x0, xi) = (2 pi hbar)^{-d} sum_j lambda_j |<phi_{x0,xi}, u_j>|^2`` with
    ``phi`` the minimum-uncertainty packet of position variance ``hbar/2``.
    ``x0`` runs over every ``stride``-th grid point, ``xi`` over the momentum
    lattice of a local window of ``patch`` points, so each projection is one
    small FFT. Equal to :func:`husimi` of the Wigner function. When ``fields``
    has a nonzero ``A`` the result records ``momentum_shift = A(x0)`` so that
    pairing happens in kinetic momentum ``p = xi - A``.
    """
    g = state.grid
    d = g.d
    hbar = state.hbar
    h = g.h[0]
    if any(abs(hh - h) > 1e-12 * h for hh in g.h) or len(set(g.n)) != 1:
        raise PhaseSpaceError("husimi_from_state needs a cubic grid")
    n = g.n[0]
    if stride is None:
        stride = 1
        while (n % (4 * stride) == 0 and n // (2 * stride) >= 8
               and 2 * stride * h <= 0.9 * math.sqrt(hbar)):
            stride *= 2
    if n % stride or (n // stride) % 2 or n // stride < 8:
        raise PhaseSpaceError(f"stride {stride} incompatible with n={n}")
    if patch is None:
        r = math.sqrt(2 * hbar * math.log(1e10))
        patch = min(n, _fast_even(2 * int(math.ceil(r / h)) + 2))
    P = patch
    offs = np.arange(P) - P // 2
    win1 = np.exp(-((offs * h) ** 2) / (2 * hbar))
    win = win1
    for _ in range(d - 1):
        win = np.multiply.outer(win, win1)
    norm = (np.pi * hbar) ** (-d / 4) * h**d
    pref = (2 * np.pi * hbar) ** (-d)
    x_sub = make_grid(d, n // stride, g.L, g.origin)
    dxi = 2 * np.pi * hbar / (P * h)
    xi_grid = make_grid(d, P, P * dxi, origin=-(P // 2) * dxi)
    phase = PhaseGrid(x_sub, xi_grid, hbar)
    centers = np.arange(0, n, stride)
    u = state.members
    w = state.weights
    out = np.empty(x_sub.shape + xi_grid.shape)
    fft_axes = tuple(range(-d, 0))

    def project(batch):
        # batch: (B, N, 2, P...) windowed samples around B centres.
        c = sfft.fftn(batch * win, axes=fft_axes)
        p = np.abs(c) ** 2
        p = np.tensordot(w, np.sum(p, axis=2), axes=([0], [1]))
        return sfft.fftshift(p, axes=fft_axes) * (pref * norm**2)

    if d == 1:
        idx = (centers[:, None] + offs[None, :]) % n
        for s0 in range(0, len(centers), chunk * 8):
            sl = idx[s0 : s0 + chunk * 8]
            batch = np.moveaxis(u[:, :, sl], 2, 0)
            out[s0 : s0 + len(sl)] = project(batch)
    elif d == 2:
        for i, ci in enumerate(centers):
            rows = u[:, :, (ci + offs) % n, :]
            for s0 in range(0, len(centers), chunk):
                cj = centers[s0 : s0 + chunk]
                cols = (cj[:, None] + offs[None, :]) % n
                batch = np.moveaxis(rows[:, :, :, cols], 3, 0)  # (B, N, 2, P, P)
                out[i, s0 : s0 + len(cj)] = project(batch)
    else:
        raise PhaseSpaceError("husimi_from_state supports d <= 2")
    shift = None
    if fields is not None and not fields.a_is_zero:
        sl = (slice(None),) + (slice(None, None, stride),) * d
        shift = fields.A[sl].copy()
    return WignerFunction(phase, out, hbar, 0.0, shift)


# ---------------------------------------------------------------- test functions


@dataclass(frozen=True)
class TestFunction:
    """Phase-space Gaussian ``exp(-|x-x0|^2/(2a^2) - |p-p0|^2/(2b^2))`` or a constant.

    Positions use the minimum-image distance. Gaussians have integrable
    Fourier transforms in every variable, so they belong to the test algebra.
    """

    x0: tuple = ()
    p0: tuple = ()
    a: float = 1.0
    b: float = 1.0
    kind: str = "gaussian"
    value: float = 1.0

    __test__ = False

    @classmethod
    def constant(cls, value: float = 1.0):
        return cls(kind="constant", value=float(value))

    def __call__(self, x, p, box=None):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        if self.kind == "constant":
            return np.full(np.broadcast_shapes(x.shape[:-1], p.shape[:-1]), self.value)
        dx = x - np.asarray(self.x0)
        if box is not None:
            L = np.asarray(box, dtype=float)
            dx = dx - L * np.round(dx / L)
        dp = p - np.asarray(self.p0)
        return np.exp(-np.sum(dx**2, axis=-1) / (2 * self.a**2) - np.sum(dp**2, axis=-1) / (2 * self.b**2))

    def x_part(self, x, box=None):
        """Position factor alone, for pairing against densities and currents."""
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self.value)
        dx = x - np.asarray(self.x0)
        if box is not None:
            L = np.asarray(box, dtype=float)
            dx = dx - L * np.round(dx / L)
        return np.exp(-np.sum(dx**2, axis=-1) / (2 * self.a**2))

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return dict(kind="constant", value=self.value)
        return dict(kind="gaussian", x0=list(self.x0), p0=list(self.p0), a=self.a, b=self.b)


def pair_against(f: WignerFunction, phi: TestFunction, support_tol: float = 1e-8) -> float:
    """``<f, phi> = int int f phi dx dxi`` by Riemann sum.

    When ``f`` carries a momentum shift, ``phi`` is evaluated at
    ``p = xi - shift(x)``. Gaussian test functions must be negligible on the
    periodic seam in x and at the momentum box edge: the pairing mass of that
    boundary shell above ``support_tol`` is an error.
    """
    ph = f.phase
    d = ph.d
    X = np.stack(ph.x.mesh(), axis=-1)
    XI = np.stack(ph.xi.mesh(), axis=-1)
    nx = ph.x.size
    Xf = X.reshape(nx, d)
    vals = f.values.reshape(nx, -1)
    XIf = XI.reshape(-1, d)
    shift = None if f.momentum_shift is None else f.momentum_shift.reshape(d, nx).T
    total = 0.0
    shell = 0.0
    if phi.kind != "constant":
        L = np.asarray(ph.x.L)
        dx = ph.x.displacement(Xf, phi.x0)
        seam = np.any(np.abs(dx) >= L / 2 - 1.5 * np.asarray(ph.x.h), axis=-1)
        lo = np.asarray(ph.xi.origin)
        hi = lo + np.asarray(ph.xi.L)
        edge_xi = np.any((XIf < lo + 1.5 * np.asarray(ph.xi.h)) | (XIf > hi - 2.5 * np.asarray(ph.xi.h)), axis=-1)
    step = max(1, 2_000_000 // max(1, vals.shape[1]))
    for s0 in range(0, nx, step):
        xs = Xf[s0 : s0 + step]
        P = XIf[None, :, :] if shift is None else XIf[None, :, :] - shift[s0 : s0 + step, None, :]
        phv = phi(xs[:, None, :], P, box=ph.x.L)
        fv = vals[s0 : s0 + step]
        total += float(np.sum(fv * phv))
        if phi.kind != "constant":
            m = seam[s0 : s0 + step, None] | edge_xi[None, :]
            shell += float(np.sum(np.abs(fv) * phv * m))
    total *= ph.cell_volume
    shell *= ph.cell_volume
    if shell > support_tol:
        raise PhaseSpaceError(f"test function support leaves the phase box (boundary mass {shell:.2e})")
    return total


def gaussian_battery(center_x, center_p, spread_x=0.3, spread_p=0.3, widths=(0.5, 1.0), count: int = 10,
                     seed: int = 0) -> list:
    """Deterministic battery of Gaussian test functions around the bulk of f_I.

    Centres are the mean plus offsets on a fixed low-discrepancy pattern scaled
    by ``spread_*``; widths alternate through ``widths`` and are shared by the
    x and p factors.
    """
    from scipy.stats import qmc

    d = len(center_x)
    eng = qmc.Halton(d=2 * d, scramble=False)
    pts = eng.random(count + 1)[1:] * 2 - 1
    out = []
    for i in range(count):
        w = float(widths[i % len(widths)])
        x0 = tuple(float(c + spread_x * o) for c, o in zip(center_x, pts[i, :d]))
        p0 = tuple(float(c + spread_p * o) for c, o in zip(center_p, pts[i, d:]))
        out.append(TestFunction(x0, p0, w, w))
    return out


# ---------------------------------------------------------------- pseudo-differential operators


Symbol = Union[np.ndarray, Callable]


def _shifted_symbol(phase: PhaseGrid, g: Symbol, sign: float, hbar: float):
    """``g(x + sign * hbar y/2)`` on the (x, y) grid, shape ``(*lead, *n_x, *n_y)``.

    Callables are evaluated exactly at unwrapped positions; grid samples are
    shifted spectrally. Grid symbols may have leading component axes.
    """
    d = phase.d
    ys = _y_points(phase)
    if callable(g):
        X = np.stack(phase.x.mesh(), axis=-1)
        pts = X[..., None, :] + sign * 0.5 * hbar * ys
        val = np.asarray(g(pts))
        # g returns (*n_x, ny) or (*n_x, ny, c) for vector symbols
        if val.ndim == d + 2:
            val = np.moveaxis(val, -1, 0)
        return val.reshape(val.shape[:-1] + phase.xi.shape)
    g = np.asarray(g)
    lead = g.shape[:-d]
    ghat = fft(phase.x, g)
    cplx = np.iscomplexobj(g)
    out = np.empty(lead + phase.x.shape + (len(ys),), dtype=complex if cplx else float)
    for s0 in range(0, len(ys), 256):
        s = ys[s0 : s0 + 256] * (sign * 0.5 * hbar)
        ph = _shift_phases(phase.x, s).reshape((len(s),) + (1,) * len(lead) + phase.x.shape)
        val = ifft(phase.x, ghat[None] * ph)
        out[..., s0 : s0 + len(s)] = np.moveaxis(val if cplx else val.real, 0, -1)
    return out.reshape(lead + phase.x.shape + phase.xi.shape)


def _check_shift(phase: PhaseGrid, hbar: float, g):
    if callable(g):
        return
    ymax = max(n // 2 * dy for n, dy in zip(phase.xi.n, phase.dy))
    if hbar * ymax / 2 > min(phase.x.L) / 2:
        raise PhaseSpaceError("symbol shifts exceed half the box (aliasing)")


def delta_symbol(phase: PhaseGrid, g: Symbol, hbar: float):
    """``(i/hbar)(g(x + hbar y/2) - g(x - hbar y/2))``."""
    _check_shift(phase, hbar, g)
    return (1j / hbar) * (_shifted_symbol(phase, g, 1.0, hbar) - _shifted_symbol(phase, g, -1.0, hbar))


def beta_symbol(phase: PhaseGrid, g: Symbol, hbar: float):
    """``(g(x + hbar y/2) + g(x - hbar y/2))/2``."""
    _check_shift(phase, hbar, g)
    return 0.5 * (_shifted_symbol(phase, g, 1.0, hbar) + _shifted_symbol(phase, g, -1.0, hbar))


def apply_theta(g: Symbol, F: Union[WignerFunction, WignerMatrix], hbar: Optional[float] = None):
    """Pseudo-differential operator ``theta[g]`` acting in phase space.

    ``F`` is taken back to the kernel variable ``y``, multiplied by
    ``-(i/hbar)(g(x + hbar y/2) - g(x - hbar y/2))`` and transformed forward.
    With this orientation ``theta[g] F = grad g . grad_xi F`` for quadratic
    ``g`` (all higher Moyal terms vanish), and the Vlasov part of the
    phase-space equation reads ``d_t F + xi.grad_x F - theta[V] F = 0``.
    """
    phase = F.phase
    hbar = F.hbar if hbar is None else hbar
    vals = F.values
    K = wigner_to_kernel(phase, vals)
    D = -delta_symbol(phase, g, hbar)
    out = kernel_to_wigner(phase, D * K)
    if isinstance(F, WignerFunction):
        return WignerFunction(phase, out.real, F.hbar, float(np.max(np.abs(out.imag), initial=0.0)), F.momentum_shift)
    return WignerMatrix(phase, out, F.hbar)


def xi_derivative(F: Union[WignerFunction, WignerMatrix], axis: int):
    """Spectral derivative of a phase-space function along momentum ``axis``."""
    phase = F.phase
    K = wigner_to_kernel(phase, F.values)
    y = phase.y_axes[axis].copy()
    y[0] = 0.0  # unpaired Nyquist offset
    shape = [1] * (2 * phase.d)
    shape[phase.d + axis] = len(y)
    return kernel_to_wigner(phase, -1j * y.reshape(shape) * K)


def _x_derivative(phase: PhaseGrid, vals, axis: int):
    d = phase.d
    lead = vals.ndim - 2 * d
    k = phase.x.k_odd(axis)
    k = k.reshape(k.shape + (1,) * d)
    ax = tuple(range(lead, lead + d))
    return sfft.ifftn(1j * k * sfft.fftn(vals, axes=ax), axes=ax)


def _spin_field_symbol(fields: FieldSet):
    """``sigma . B`` as a callable or grid array of shape ``(2, 2, *n)``."""
    g = fields.grid
    b = fields.spin_field()
    if b is None or not np.any(b):
        return None
    b = np.asarray(b)
    return np.einsum("lij,l...->ij...", SIGMA, b)


def pauli_wigner_terms(F: WignerMatrix, fields: FieldSet, V: Symbol, A_symbol: Optional[Callable] = None):
    """Spatial part of the Pauli-Wigner equation, ``dF/dt = -(terms)``.

    Returns a dict of phase-space arrays whose sum ``S`` satisfies
    ``d_t F + S = 0``:

    - ``transport``: ``xi . grad_x F``;
    - ``beta_A``: ``-W[beta[A] . grad_x K]``;
    - ``theta_A_xi``: ``theta[A] . (xi F)``;
    - ``theta_A2``: ``-(1/2) theta[|A|^2] F``;
    - ``beta_divA``: ``-W[beta[div A] K]`` (zero in Coulomb gauge);
    - ``theta_V``: ``-theta[V] F``;
    - ``spin``: ``-W[(i/2)((sigma.B)(x+hbar y/2) K - K (sigma.B)(x-hbar y/2))]``.

    ``K`` is the kernel of ``F``. The spin term keeps the matrix ordering (left
    factor at ``x + hbar y/2``, right factor at ``x - hbar y/2``).
    """
    phase = F.phase
    hbar = F.hbar
    d = phase.d
    Fv = F.values
    K = wigner_to_kernel(phase, Fv)
    terms = {}
    tr = 0
    for a in range(d):
        tr = tr + _xi_broadcast(phase, a) * _x_derivative(phase, Fv, a)
    terms["transport"] = tr
    terms["theta_V"] = -apply_theta(V, F).values
    if not fields.a_is_zero:
        from .spectral import divergence

        Asym = A_symbol if A_symbol is not None else fields.A
        Ab = beta_symbol(phase, Asym, hbar)  # (d, *x, *y)
        gradK = [_x_derivative(phase, K, a) for a in range(d)]
        terms["beta_A"] = -kernel_to_wigner(phase, sum(Ab[a] * gradK[a] for a in range(d)))
        Ad = (_shifted_symbol(phase, Asym, 1.0, hbar) - _shifted_symbol(phase, Asym, -1.0, hbar)) / hbar
        # theta[A].(xi F) written on the kernel: (A+ - A-)/hbar . grad_y K, with grad_y K = W^{-1}[i xi F].
        acc = 0
        for a in range(d):
            gyK = wigner_to_kernel(phase, 1j * _xi_broadcast(phase, a) * Fv)
            acc = acc + Ad[a] * gyK
        terms["theta_A_xi"] = -kernel_to_wigner(phase, acc)
        A2 = (lambda x: np.sum(Asym(x) ** 2, axis=-1)) if callable(Asym) else np.sum(fields.A**2, axis=0)
        terms["theta_A2"] = 0.5 * kernel_to_wigner(phase, delta_symbol(phase, A2, hbar) * K)
        divA = divergence(fields.grid, fields.A)
        if np.max(np.abs(divA)) > 1e-12 * max(1.0, np.max(np.abs(fields.A))):
            terms["beta_divA"] = -kernel_to_wigner(phase, beta_symbol(phase, divA, hbar) * K)
    SB = _spin_field_symbol(fields)
    if SB is not None:
        Sp = _shifted_symbol(phase, SB, 1.0, hbar)
        Sm = _shifted_symbol(phase, SB, -1.0, hbar)
        comm = np.einsum("ij...,jk...->ik...", Sp, K) - np.einsum("ij...,jk...->ik...", K, Sm)
        terms["spin"] = -kernel_to_wigner(phase, 0.5j * comm)
    return terms


def pauli_wigner_residual(F_traj: Sequence[WignerMatrix], fields: FieldSet, V_traj, hbar: float, dt,
                          A_symbol: Optional[Callable] = None) -> np.ndarray:
    """Relative residual of the Pauli-Wigner equation along a trajectory.

    ``d_t F`` is the centred difference of consecutive snapshots; the spatial
    terms come from :func:`pauli_wigner_terms` at the middle snapshot. Each
    entry is ``||d_t F + S|| / max(||d_t F||, ||xi . grad_x F||)``. ``V_traj``
    is one symbol (frozen potential) or one per snapshot; ``dt`` is a number
    or the array of snapshot times, which must be uniform.
    """
    if np.ndim(dt):
        t = np.asarray(dt, dtype=float)
        steps = np.diff(t)
        if np.max(np.abs(steps - steps[0])) > 1e-9 * abs(steps[0]):
            raise PhaseSpaceError("snapshot spacing is not uniform")
        dt = float(steps[0])
    if len(F_traj) < 3:
        raise PhaseSpaceError("residual needs at least three snapshots")
    frozen = callable(V_traj) or (isinstance(V_traj, np.ndarray) and V_traj.ndim == F_traj[0].phase.d)
    out = []
    for i in range(1, len(F_traj) - 1):
        V = V_traj if frozen else V_traj[i]
        dF = (F_traj[i + 1].values - F_traj[i - 1].values) / (2 * dt)
        S = pauli_wigner_terms(F_traj[i], fields, V, A_symbol)
        tot = dF + sum(S.values())
        scale = max(np.linalg.norm(dF), np.linalg.norm(S["transport"]))
        out.append(np.linalg.norm(tot) / scale if scale > 0 else 0.0)
    return np.array(out)


# ---------------------------------------------------------------- oscillation diagnostics


def oscillatory_tail(state: MixedState, R: float):
    """Spectral tail beyond ``|k| >= R/hbar`` and its gradient companion.

    Returns ``(tail, companion)`` with ``tail = sum_j lambda_j ||P_{|k| >= R/hbar} u_j||^2``
    and ``companion = hbar^2 sum_j lambda_j ||grad u_j||^2``. Chebyshev's
    inequality gives ``tail <= companion / R^2``.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    g = state.grid
    uhat = fft(g, state.members)
    p = np.sum(np.abs(uhat) ** 2, axis=1) * (g.cell_volume / g.size)
    k2 = g.k2
    mask = np.sqrt(k2) >= R / state.hbar
    tail = float(np.dot(state.weights, np.sum(p * mask, axis=tuple(range(1, p.ndim)))))
    comp = float(state.hbar**2 * np.dot(state.weights, np.sum(p * k2, axis=tuple(range(1, p.ndim)))))
    return tail, comp
