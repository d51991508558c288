"""Mixed-state Pauli(-Poisson) dynamics and observables.

A spinor field is an array of shape ``(2, *n)``; an ensemble stores its
members stacked as ``(N, 2, *n)``. Units are scaled (q = m = c = 1) so the
Hamiltonian reads ``H = (1/2)(-i hbar grad - A)^2 + V - (hbar/2) sigma.B``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.fft as sfft

from .fields import FieldSet, solve_poisson
from .krylov import expm_krylov
from .spectral import Grid, fft, ifft, integrate, gradient, divergence, laplacian

SIGMA = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)


class AdmissibilityError(ValueError):
    """Weights violate the mixed-state weight condition."""


class StateError(ValueError):
    """Malformed spinor ensemble."""


class EnergyDriftError(RuntimeError):
    """Total energy drifted past the abort threshold."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


def admissibility_value(weights, hbar: float, d: int) -> float:
    """``hbar^{-d} * sum(lambda_j^2)``."""
    w = np.asarray(weights, dtype=float)
    return float(np.sum(w**2) / hbar**d)


@dataclass(frozen=True)
class MixedState:
    """Weighted ensemble of normalized 2-spinors.

    Attributes
    ----------
    grid : Grid
    hbar : float
    weights : ndarray, shape (N,)
    members : ndarray, shape (N, 2, *n)
    C : float
        Admissibility constant; ``hbar^{-d} sum lambda^2 <= C`` is enforced.
    """

    grid: Grid
    hbar: float
    weights: np.ndarray
    members: np.ndarray
    C: float = 1.0

    def __post_init__(self):
        g = self.grid
        w = np.asarray(self.weights, dtype=float)
        u = np.asarray(self.members)
        if not 0 < self.hbar <= 1:
            raise StateError(f"hbar must lie in (0, 1], got {self.hbar}")
        if u.shape != (w.size, 2) + g.shape:
            raise StateError(f"members shape {u.shape} does not match {(w.size, 2) + g.shape}")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise StateError("weights must be nonnegative and sum to 1")
        norms = np.sqrt(np.sum(np.abs(u) ** 2, axis=tuple(range(1, u.ndim))) * g.cell_volume)
        if np.any(np.abs(norms - 1) > 1e-10):
            raise StateError(f"members not normalized (max deviation {np.max(np.abs(norms - 1)):.2e})")
        value = admissibility_value(w, self.hbar, g.d)
        if value > self.C * (1 + 1e-12):
            raise AdmissibilityError(
                f"weight condition violated: hbar^-{g.d} * sum(lambda^2) = {value:.6g} > C = {self.C}"
            )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "members", u.astype(complex, copy=False))

    @property
    def N(self) -> int:
        return self.weights.size

    @property
    def admissibility(self) -> float:
        return admissibility_value(self.weights, self.hbar, self.grid.d)

    def with_members(self, members) -> "MixedState":
        return replace(self, members=members)

    def gram_deviation(self) -> float:
        """Largest entry of ``|G - I|`` for the member Gram matrix."""
        flat = self.members.reshape(self.N, -1)
        G = flat.conj() @ flat.T * self.grid.cell_volume
        return float(np.max(np.abs(G - np.eye(self.N))))


# ---------------------------------------------------------------- construction


def coherent_state(grid: Grid, hbar: float, x0, p0, sigma: Optional[float] = None, spin=(1.0, 0.0)):
    """Gaussian wave packet ``exp(-|x-x0|^2/(4 sigma^2)) exp(i p0.(x-x0)/hbar) chi``.

    ``sigma`` is the standard deviation of the position density ``|u|^2``;
    the default ``sqrt(hbar/2)`` gives the minimum-uncertainty packet with
    density ``(pi hbar)^{-d/2} exp(-|x-x0|^2/hbar)``. The Gaussian uses the
    minimum-image distance and the result is normalized on the grid.
    """
    d = grid.d
    if sigma is None:
        sigma = math.sqrt(hbar / 2)
    if sigma < 3 * max(grid.h) * (1 - 1e-12):
        raise StateError(f"coherent state under-resolved: sigma={sigma:.4g} < 3h={3 * max(grid.h):.4g}")
    chi = np.asarray(spin, dtype=complex)
    if chi.shape != (2,) or abs(np.linalg.norm(chi) - 1) > 1e-12:
        raise StateError("spin must be a normalized 2-vector")
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (d,))
    p0 = np.broadcast_to(np.asarray(p0, dtype=float), (d,))
    X = grid.mesh()
    phase = np.zeros(grid.shape)
    r2 = np.zeros(grid.shape)
    for a in range(d):
        dx = X[a] - x0[a]
        dx = dx - grid.L[a] * np.round(dx / grid.L[a])
        r2 += dx**2
        phase += p0[a] * dx
    u = np.exp(-r2 / (4 * sigma**2) + 1j * phase / hbar)
    u = chi.reshape((2,) + (1,) * d) * u
    return u / np.sqrt(np.sum(np.abs(u) ** 2) * grid.cell_volume)


def member_count(hbar: float, d: int, C: float) -> int:
    """Smallest uniform ensemble size satisfying the weight condition."""
    return max(1, math.ceil(hbar ** (-d) / C - 1e-9))


def build_mixed_state(grid: Grid, hbar: float, C: float, sampler, spin=(1.0, 0.0), N=None,
                      seed: int = 0, sigma: Optional[float] = None, method: str = "sobol",
                      fields: Optional[FieldSet] = None) -> MixedState:
    """Uniform-weight ensemble of coherent states centred on samples of f_I.

    ``sampler`` provides ``sample(N, seed, method) -> (x, p)``. ``N`` defaults
    to ``ceil(hbar^{-d}/C)``; an explicit ``N`` that violates the weight
    condition (for instance a pure state) raises :class:`AdmissibilityError`.
    Samples are kinetic momenta; with ``fields`` carrying a nonzero ``A`` the
    packets are centred at the canonical momentum ``p + A(x)``.
    """
    if C < 1:
        raise AdmissibilityError("C must be at least 1")
    d = grid.d
    if N is None:
        N = member_count(hbar, d, C)
    value = hbar ** (-d) / N
    if value > C * (1 + 1e-12):
        kind = "pure state" if N == 1 else f"ensemble of {N}"
        raise AdmissibilityError(
            f"{kind} excluded by the weight condition: hbar^-{d}/N = {value:.6g} > C = {C}"
        )
    xs, ps = sampler.sample(N, seed=seed, method=method)
    if fields is not None and not fields.a_is_zero:
        ps = ps + fields.A_at(xs)
    members = np.stack([coherent_state(grid, hbar, x, p, sigma, spin) for x, p in zip(xs, ps)])
    return MixedState(grid, hbar, np.full(N, 1.0 / N), members, C)


def pure_state(grid: Grid, hbar: float, u, C: float = 1.0) -> MixedState:
    """Single-member state; subject to the same weight condition."""
    return MixedState(grid, hbar, np.ones(1), np.asarray(u)[None], C)


# ---------------------------------------------------------------- Hamiltonian


def _kvec(grid: Grid, a: int):
    return grid.k_odd(a)


def _sigma_dot(b, u):
    """``(sigma . b) u`` for b of shape (3, *n) and u of shape (..., 2, *n)."""
    ax = -b.ndim
    u1 = np.take(u, 0, axis=ax)
    u2 = np.take(u, 1, axis=ax)
    bx, by, bz = b
    return np.stack([bz * u1 + (bx - 1j * by) * u2, (bx + 1j * by) * u1 - bz * u2], axis=ax)


def spin_term(fields: FieldSet, u, hbar: float):
    """``-(hbar/2)(sigma . B) u``, or zero when there is no spin field."""
    b = fields.spin_field()
    if b is None or not np.any(b):
        return np.zeros_like(u)
    return -0.5 * hbar * _sigma_dot(np.asarray(b), u)


def momentum(grid: Grid, fields: FieldSet, u, hbar: float, a: int, uhat=None):
    """``P_a u = -i hbar D_a u - A_a u``."""
    if uhat is None:
        uhat = fft(grid, u)
    out = hbar * ifft(grid, _kvec(grid, a) * uhat)
    if np.any(fields.A[a]):
        out = out - fields.A[a] * u
    return out


def apply_pauli_hamiltonian(u, fields: FieldSet, V, hbar: float, form: str = "symmetric"):
    """Apply ``H = (1/2)(-i hbar grad - A)^2 + V - (hbar/2) sigma.B``.

    ``u`` has shape ``(..., 2, *n)``. Three discretizations are offered:

    ``symmetric``
        ``(1/2) sum_a P_a (P_a u)``; exactly Hermitian, used for time stepping.
    ``expanded``
        ``-(hbar^2/2) Lap u + i hbar A.grad u + (i hbar/2)(div A) u + |A|^2 u/2``.
    ``pauli``
        ``(1/2)(sigma.P)^2 u``; the spin coupling to ``curl A`` arises from the
        commutator of ``P_x`` and ``P_y`` (d >= 2). A ``b_override`` field is
        added explicitly.
    """
    g = fields.grid
    u = np.asarray(u)
    if np.iscomplexobj(V):
        raise StateError("V must be real")
    if V is not None and np.shape(V) != g.shape:
        raise StateError("V shape does not match grid")
    if tuple(u.shape[-g.d - 1 :]) != (2,) + g.shape:
        raise StateError(f"spinor shape {u.shape} does not match grid {g.shape}")
    if form == "symmetric":
        out = _kinetic_symmetric(g, fields, u, hbar)
        if fields.spin_field() is not None:
            out = out + spin_term(fields, u, hbar)
    elif form == "expanded":
        out = _kinetic_expanded(g, fields, u, hbar) + spin_term(fields, u, hbar)
    elif form == "pauli":
        if not fields.spin_coupling:
            raise StateError("the pauli form always contains the spin coupling")
        out = _kinetic_pauli(g, fields, u, hbar)
        if fields.b_override is not None:
            out = out + spin_term(fields, u, hbar)
    else:
        raise StateError(f"unknown Hamiltonian form {form!r}")
    if V is not None:
        out = out + V * u
    return out


def _kinetic_symmetric(g: Grid, fields: FieldSet, u, hbar):
    uhat = fft(g, u)
    if fields.a_is_zero:
        return ifft(g, (0.5 * hbar**2) * g.k2_odd * uhat)
    acc = np.zeros_like(uhat)
    extra = None
    for a in range(g.d):
        k = _kvec(g, a)
        if np.any(fields.A[a]):
            Pu = hbar * ifft(g, k * uhat) - fields.A[a] * u
            acc += 0.5 * hbar * k * fft(g, Pu)
            term = -0.5 * fields.A[a] * Pu
            extra = term if extra is None else extra + term
        else:
            acc += 0.5 * hbar**2 * k**2 * uhat
    out = ifft(g, acc)
    return out if extra is None else out + extra


def _kinetic_expanded(g: Grid, fields: FieldSet, u, hbar):
    out = -0.5 * hbar**2 * laplacian(g, u)
    if fields.a_is_zero:
        return out
    A = fields.A
    gu = gradient(g, u)
    adotgrad = sum(A[a] * gu[a] for a in range(g.d))
    divA = divergence(g, A)
    A2 = np.sum(A**2, axis=0)
    return out + 1j * hbar * adotgrad + 0.5j * hbar * divA * u + 0.5 * A2 * u


def _sigma_matrix_apply(s, u, spin_axis):
    u1 = np.take(u, 0, axis=spin_axis)
    u2 = np.take(u, 1, axis=spin_axis)
    return np.stack([s[0, 0] * u1 + s[0, 1] * u2, s[1, 0] * u1 + s[1, 1] * u2], axis=spin_axis)


def sigma_dot_P(g: Grid, fields: FieldSet, u, hbar):
    """``(sigma . P) u`` summing over the d in-plane components."""
    uhat = fft(g, u)
    spin_axis = -g.d - 1
    out = None
    for a in range(g.d):
        Pu = momentum(g, fields, u, hbar, a, uhat)
        term = _sigma_matrix_apply(SIGMA[a], Pu, spin_axis)
        out = term if out is None else out + term
    return out


def _kinetic_pauli(g: Grid, fields: FieldSet, u, hbar):
    return 0.5 * sigma_dot_P(g, fields, sigma_dot_P(g, fields, u, hbar), hbar)


# ---------------------------------------------------------------- propagation


def propagate_members(members, fields: FieldSet, V, hbar: float, dt: float, method: str = "krylov",
                      tol: float = 1e-10, m_max: int = 20):
    """Advance a stack of spinors by ``exp(-i dt H/hbar)`` with ``V`` frozen."""
    g = fields.grid
    if dt <= 0:
        raise ValueError("dt must be positive")
    if method == "krylov":
        def apply(v):
            return apply_pauli_hamiltonian(v, fields, V, hbar)

        out, _ = expm_krylov(apply, members, -1j * dt / hbar, tol=tol, m_max=m_max)
        return out
    if method == "strang":
        if not strang_applicable(fields):
            raise ValueError("strang splitting requires every A_a to be independent of x_a")
        return _strang(g, fields, members, V, hbar, dt)
    raise ValueError(f"unknown propagation method {method!r}")


def strang_applicable(fields: FieldSet) -> bool:
    """True when each ``(hbar k_a - A_a)^2`` is diagonal in a mixed representation.

    That holds when ``A_a`` does not depend on ``x_a`` (for instance
    ``A = (0, a sin x)``), and trivially for ``A = 0``.
    """
    A = fields.A
    for a in fields.nonzero_a_axes():
        dev = np.max(np.abs(A[a] - np.mean(A[a], axis=a, keepdims=True)))
        if dev > 1e-13 * max(1.0, float(np.max(np.abs(A[a])))):
            return False
    return True


def _strang(g: Grid, fields: FieldSet, u, V, hbar, dt):
    """Symmetric splitting ``P/2 K_1/2 ... K_d ... K_1/2 P/2``.

    ``P`` holds ``V`` and the spin coupling (pointwise, the 2x2 factor in
    closed form); ``K_a = (1/2)(hbar k_a - A_a)^2`` is applied after a Fourier
    transform along axis ``a`` alone.
    """
    d = g.d
    Vg = np.zeros(g.shape) if V is None else np.asarray(V)
    b = fields.spin_field()
    if b is not None and not np.any(b):
        b = None
    pot = np.exp(-0.5j * dt * Vg / hbar)
    if b is not None:
        b = np.asarray(b)
        nb = np.sqrt(np.sum(b**2, axis=0))
        th = 0.25 * dt * nb
        cos_t = np.cos(th)
        # i sin(th) (n.sigma) = i (dt/4) sinc(th/pi) (sigma.b)
        sin_f = 0.25j * dt * np.sinc(th / np.pi)

    def half_potential(v):
        v = pot * v
        if b is None:
            return v
        return cos_t * v + sin_f * _sigma_dot(b, v)

    phases = []
    for a in range(d):
        k = _kvec(g, a)
        q = hbar * k - fields.A[a] if np.any(fields.A[a]) else hbar * k
        phases.append(q**2)

    def kinetic(v, a, frac):
        ax = a - d
        vh = sfft.fft(v, axis=ax)
        return sfft.ifft(np.exp(-0.5j * frac * dt * phases[a] / hbar) * vh, axis=ax)

    u = half_potential(u)
    if fields.a_is_zero:
        k2 = sum(_kvec(g, a) ** 2 for a in range(d))
        u = ifft(g, np.exp(-0.5j * dt * hbar * k2) * fft(g, u))
    else:
        for a in range(d - 1):
            u = kinetic(u, a, 0.5)
        u = kinetic(u, d - 1, 1.0)
        for a in reversed(range(d - 1)):
            u = kinetic(u, a, 0.5)
    return half_potential(u)


def propagate_step(state: MixedState, fields: FieldSet, V, dt: float, method: str = "krylov",
                   tol: float = 1e-10, m_max: int = 20) -> MixedState:
    """Advance every member by one step of length ``dt`` with ``V`` frozen."""
    out = propagate_members(state.members, fields, V, state.hbar, dt, method, tol, m_max)
    return state.with_members(out)


# ---------------------------------------------------------------- observables


def member_density(grid: Grid, members):
    return np.sum(np.abs(members) ** 2, axis=-grid.d - 1)


def density(state: MixedState):
    """``rho(x) = sum_j lambda_j |u_j(x)|^2``."""
    return np.tensordot(state.weights, member_density(state.grid, state.members), axes=1)


def spin_density(state: MixedState):
    """``s_l(x) = sum_j lambda_j conj(u_j) sigma_l u_j``, shape ``(3, *n)``."""
    u = state.members
    u1, u2 = u[:, 0], u[:, 1]
    w = state.weights.reshape((-1,) + (1,) * state.grid.d)
    c = np.sum(w * np.conj(u1) * u2, axis=0)
    return np.stack([
        2 * c.real,
        2 * c.imag,
        np.sum(w * (np.abs(u1) ** 2 - np.abs(u2) ** 2), axis=0),
    ])


@dataclass
class CurrentParts:
    """Convective and spin-curl contributions to the current density."""

    convective: np.ndarray
    spin_curl: Optional[np.ndarray]

    @property
    def total(self):
        return self.convective if self.spin_curl is None else self.convective + self.spin_curl


def current(state: MixedState, fields: FieldSet, form: str = "expanded", parts: bool = False):
    """Mixed-state Pauli current density, shape ``(d, *n)``.

    ``expanded`` sums the convective part ``Im(conj(u)(hbar grad - iA)u)`` and
    the spin-curl part ``(hbar/2) curl(conj(u) sigma u)`` (for d=2 the in-plane
    curl of the out-of-plane spin density). ``compact`` evaluates
    ``Re(conj(u) sigma_k (sigma.P) u)`` directly. In d=1 only the convective
    part exists and ``compact`` is unavailable.
    """
    g = state.grid
    d = g.d
    hbar = state.hbar
    u = state.members
    w = state.weights.reshape((-1,) + (1,) * (d + 1))
    if form == "compact":
        if d == 1:
            raise StateError("compact current needs d >= 2")
        sp = sigma_dot_P(g, fields, u, hbar)
        J = np.stack([
            np.sum(w * np.real(np.conj(u) * _sigma_matrix_apply(SIGMA[k], sp, -d - 1)), axis=(0, 1))
            for k in range(d)
        ])
        return J
    if form != "expanded":
        raise StateError(f"unknown current form {form!r}")
    gu = gradient(g, u)  # (d, N, 2, *n)
    rho = density(state)
    conv = np.stack([
        hbar * np.sum(w * np.imag(np.conj(u) * gu[a]), axis=(0, 1)) - fields.A[a] * rho
        for a in range(d)
    ])
    spin = None
    if d >= 2:
        s = spin_density(state)
        if d == 2:
            gs3 = gradient(g, s[2])
            spin = 0.5 * hbar * np.stack([gs3[1], -gs3[0]])
        else:
            gs = [gradient(g, s[l]) for l in range(3)]
            spin = 0.5 * hbar * np.stack([
                gs[2][1] - gs[1][2],
                gs[0][2] - gs[2][0],
                gs[1][0] - gs[0][1],
            ])
    cp = CurrentParts(conv, spin)
    return cp if parts else cp.total


@dataclass(frozen=True)
class Observables:
    """Charge, density, current and energy of a state in given fields."""

    rho_diag: np.ndarray
    J: np.ndarray
    Q: float
    E_kin: float
    E_pot: float
    E_total: float


def kinetic_energy(state: MixedState, fields: FieldSet) -> float:
    """``(1/2) sum_j lambda_j ||(sigma.P) u_j||^2`` plus any override spin energy."""
    g = state.grid
    hbar = state.hbar
    u = state.members
    w = state.weights
    if g.d == 1:
        P = momentum(g, fields, u, hbar, 0)
        e = 0.5 * np.sum(np.abs(P) ** 2, axis=tuple(range(1, u.ndim)))
    elif fields.spin_coupling:
        sp = sigma_dot_P(g, fields, u, hbar)
        e = 0.5 * np.sum(np.abs(sp) ** 2, axis=tuple(range(1, u.ndim)))
    else:
        e = 0.0
        uhat = fft(g, u)
        for a in range(g.d):
            P = momentum(g, fields, u, hbar, a, uhat)
            e = e + 0.5 * np.sum(np.abs(P) ** 2, axis=tuple(range(1, u.ndim)))
    e = e * g.cell_volume
    if fields.spin_coupling and fields.b_override is not None and np.any(fields.b_override):
        su = spin_term(fields, u, hbar)
        e = e + np.real(np.sum(np.conj(u) * su, axis=tuple(range(1, u.ndim)))) * g.cell_volume
    return float(np.dot(w, e))


def charge_energy(state: MixedState, fields: FieldSet, V_self=None, J=None) -> Observables:
    """Charge ``Q``, kinetic energy, and potential energy.

    ``E_pot = (1/2) int V_self rho + int V_ext rho``; with ``V_self`` the
    periodic Poisson potential of ``rho`` the first term equals
    ``(1/2) int |grad V_self|^2``. ``J`` reuses a current computed by the caller.
    """
    g = state.grid
    rho = density(state)
    Q = float(integrate(g, rho))
    E_kin = kinetic_energy(state, fields)
    E_pot = 0.0
    if V_self is not None:
        E_pot += 0.5 * float(integrate(g, V_self * rho))
    if fields.V_ext is not None:
        E_pot += float(integrate(g, fields.V_ext * rho))
    if J is None:
        J = current(state, fields)
    return Observables(rho, J, Q, E_kin, E_pot, E_kin + E_pot)


def lp_norm(grid: Grid, f, p: float = 7 / 5) -> float:
    return float(integrate(grid, np.abs(f) ** p)) ** (1 / p)


# ---------------------------------------------------------------- evolution


@dataclass
class Trajectory:
    """Per-step diagnostics of a Pauli-Poisson run.

    ``continuity[i]`` is the centred residual at ``times[i]`` (NaN at the ends).
    ``snapshots`` holds ``(t, members)`` pairs when requested.
    """

    times: np.ndarray
    Q: np.ndarray
    E_kin: np.ndarray
    E_pot: np.ndarray
    E_total: np.ndarray
    continuity: np.ndarray
    lp: np.ndarray
    final: MixedState
    dt: float
    snapshots: list = field(default_factory=list)
    V_snapshots: list = field(default_factory=list)

    CSV_HEADER = ("t", "Q", "E_kin", "E_pot", "E_total", "continuity_residual", "rho_L7/5")

    def rows(self):
        for i in range(len(self.times)):
            yield (self.times[i], self.Q[i], self.E_kin[i], self.E_pot[i], self.E_total[i],
                   self.continuity[i], self.lp[i])

    def write_csv(self, path, comment_lines=()):
        with open(path, "w", newline="") as fh:
            for line in comment_lines:
                fh.write(f"# {line}\n")
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.CSV_HEADER)
            for row in self.rows():
                wr.writerow([repr(float(v)) for v in row])


def self_consistent_potential(state_or_members, fields: FieldSet, weights=None, coupling: float = 1.0):
    """Return ``(V_total, V_self)`` for the periodic Poisson coupling."""
    g = fields.grid
    if isinstance(state_or_members, MixedState):
        rho = density(state_or_members)
    else:
        rho = np.tensordot(weights, member_density(g, state_or_members), axes=1)
    V_self = solve_poisson(g, coupling * rho) if coupling else np.zeros(g.shape)
    V = V_self if fields.V_ext is None else V_self + fields.V_ext
    return V, V_self


def _continuity(grid, rho_prev, rho_next, divJ, dt):
    r = (rho_next - rho_prev) / (2 * dt) + divJ
    den = np.sqrt(np.sum(divJ**2) * grid.cell_volume)
    num = np.sqrt(np.sum(r**2) * grid.cell_volume)
    return num / den if den > 1e-12 else num


def predictor_method(fields: FieldSet, method: str) -> str:
    """Stepper for the midpoint predictor.

    The predicted density only enters through ``V_{n+1/2}``, so a local error
    of order ``dt^3`` suffices; Strang splitting provides that at a fraction of
    the Krylov cost whenever it applies (see :func:`strang_applicable`).
    """
    if method == "krylov" and strang_applicable(fields):
        return "strang"
    return method


def evolve_pauli_poisson(state: MixedState, fields: FieldSet, T: float, dt: float, coupling: float = 1.0,
                         method: str = "krylov", snapshot_every: Optional[int] = None,
                         abort_drift: float = 1e-3, tol: float = 1e-10, m_max: int = 20,
                         progress=None) -> Trajectory:
    """Self-consistent Pauli-Poisson evolution with a midpoint predictor-corrector.

    Each step: ``V_n`` from the current density, a half step under ``V_n``
    (see :func:`predictor_method`) predicts the midpoint density, its potential ``V_{n+1/2}`` drives the full
    step from ``u_n``. With ``coupling = 0`` the Poisson term vanishes and the
    run is the linear evolution in ``V_ext``. ``dt`` is adjusted down so that
    ``T`` is an integer number of steps.
    """
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    g = state.grid
    hbar = state.hbar
    nsteps = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / nsteps
    w = state.weights
    u = state.members

    def observe(members):
        st = state.with_members(members)
        V, V_self = self_consistent_potential(st, fields, coupling=coupling)
        cp = current(st, fields, parts=True)
        obs = charge_energy(st, fields, V_self if coupling else None, J=cp.total)
        return st, V, obs, divergence(g, cp.convective)

    st, V, obs, div_J = observe(u)
    times, Q, Ek, Ep, Et, cont, lp = [0.0], [obs.Q], [obs.E_kin], [obs.E_pot], [obs.E_total], [np.nan], []
    lp.append(lp_norm(g, obs.rho_diag))
    E0 = obs.E_total
    rho_hist = [obs.rho_diag]
    divJ_prev = div_J
    snaps, vsnaps = [], []
    if snapshot_every:
        snaps.append((0.0, u.copy()))
        vsnaps.append(V.copy())
    predictor = predictor_method(fields, method)
    for n in range(nsteps):
        if coupling:
            u_half = propagate_members(u, fields, V, hbar, dt / 2, predictor, tol, m_max)
            V_half, _ = self_consistent_potential(u_half, fields, w, coupling)
        else:
            V_half = V
        u = propagate_members(u, fields, V_half, hbar, dt, method, tol, m_max)
        st, V, obs, div_J = observe(u)
        t = (n + 1) * dt
        cont[-1] = _continuity(g, rho_hist[-2], obs.rho_diag, divJ_prev, dt) if len(rho_hist) > 1 else np.nan
        rho_hist = [rho_hist[-1], obs.rho_diag]
        divJ_prev = div_J
        times.append(t)
        Q.append(obs.Q)
        Ek.append(obs.E_kin)
        Ep.append(obs.E_pot)
        Et.append(obs.E_total)
        cont.append(np.nan)
        lp.append(lp_norm(g, obs.rho_diag))
        if snapshot_every and (n + 1) % snapshot_every == 0:
            snaps.append((t, u.copy()))
            vsnaps.append(V.copy())
        if progress is not None:
            progress(n + 1, nsteps)
        drift = abs(obs.E_total - E0) / max(abs(E0), 1e-300)
        if drift > abort_drift:
            traj = Trajectory(np.array(times), np.array(Q), np.array(Ek), np.array(Ep), np.array(Et),
                              np.array(cont), np.array(lp), st, dt, snaps, vsnaps)
            raise EnergyDriftError(
                f"relative energy drift {drift:.3e} exceeds {abort_drift:.1e} at t={t:.6g} (step {n + 1})",
                traj,
            )
    return Trajectory(np.array(times), np.array(Q), np.array(Ek), np.array(Ep), np.array(Et),
                      np.array(cont), np.array(lp), st, dt, snaps, vsnaps)


def continuity_residual(trajectory: Trajectory, fields: FieldSet, hbar: Optional[float] = None,
                        weights=None):
    """Centred continuity residual from stored snapshots.

    ``r(t) = ||(rho(t+dt) - rho(t-dt))/(2 dt) + div J(t)|| / ||div J(t)||``, or
    the absolute residual when ``div J`` vanishes. Requires at least three
    snapshots at uniform spacing.
    """
    snaps = trajectory.snapshots
    if len(snaps) < 3:
        raise ValueError("continuity residual needs at least three snapshots")
    ts = np.array([t for t, _ in snaps])
    steps = np.diff(ts)
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])):
        raise ValueError("snapshots are not uniformly spaced")
    h = steps[0]
    st0 = trajectory.final
    g = st0.grid
    out = []
    for i in range(1, len(snaps) - 1):
        rp = density(st0.with_members(snaps[i - 1][1]))
        rn = density(st0.with_members(snaps[i + 1][1]))
        cp = current(st0.with_members(snaps[i][1]), fields, parts=True)
        out.append(_continuity(g, rp, rn, divergence(g, cp.convective), h))
    return np.array(out)
