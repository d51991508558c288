"""Batched Arnoldi approximation of exp(tau H) v for Hermitian H."""

from __future__ import annotations

import numpy as np


class KrylovError(RuntimeError):
    """The Krylov exponential did not reach its tolerance."""


def _small_expm(Hm, tau):
    # Hm: (B, m, m) Hessenberg projections of a Hermitian operator. The exact
    # projection is Hermitian tridiagonal, so symmetrize and use eigh; the
    # resulting small exponential is exactly unitary for imaginary tau.
    T = 0.5 * (Hm + np.conj(np.swapaxes(Hm, -1, -2)))
    lam, Q = np.linalg.eigh(T)
    return np.einsum("bij,bj,bj->bi", Q, np.exp(tau * lam), np.conj(Q[:, 0, :]))


def _norms(w):
    f = w.view(np.float64)
    return np.sqrt(np.einsum("bi,bi->b", f, f))


def _project_out(V, k, w, acc):
    # Gram-Schmidt against the first k basis vectors, member by member so the
    # products run as BLAS matrix-vector calls; coefficients are added to acc.
    for b in range(w.shape[0]):
        Vb = V[b, :k]
        h = np.conj(Vb @ np.conj(w[b]))
        w[b] -= h @ Vb
        acc[b] += h


def expm_krylov(apply, v, tau, tol: float = 1e-10, m_max: int = 20, m_min: int = 2):
    """Compute ``exp(tau * H) v`` for a batch of vectors.

    Parameters
    ----------
    apply : callable
        Matrix-free Hermitian operator acting on arrays shaped like ``v``.
    v : ndarray, shape (B, ...)
        Batch of independent vectors (first axis).
    tau : complex
        Scalar factor, ``-1j * dt / hbar`` for a Schroedinger step.
    tol : float
        Bound on the a posteriori error estimate
        ``h_{m+1,m} |[exp(tau H_m)]_{m,1}| * ||v||`` relative to ``||v||``.
    m_max : int
        Largest subspace dimension before giving up.

    Returns
    -------
    w : ndarray
        Same shape as ``v``.
    info : dict
        ``m`` (subspace size used) and ``err`` (largest error estimate).
    """
    shape = v.shape
    B = shape[0]
    M = int(np.prod(shape[1:]))
    flat = v.reshape(B, M).astype(complex)
    beta = np.linalg.norm(flat, axis=1)
    live = beta > 0
    V = np.empty((B, m_max + 1, M), dtype=complex)
    V[:, 0] = 0.0
    V[live, 0] = flat[live] / beta[live, None]
    H = np.zeros((B, m_max + 1, m_max), dtype=complex)
    err = np.zeros(B)
    for j in range(m_max):
        w = np.array(apply(V[:, j].reshape(shape)), dtype=complex).reshape(B, M)
        wn = _norms(w)
        for _ in range(2):
            _project_out(V, j + 1, w, H[:, : j + 1, j])
            hn = _norms(w)
            # Second Gram-Schmidt pass only when cancellation was severe.
            if np.all(hn > 0.7 * wn):
                break
            wn = hn
        H[:, j + 1, j] = hn
        m = j + 1
        y = _small_expm(H[:, :m, :m], tau)
        err = hn * np.abs(y[:, m - 1])
        err[~live] = 0.0
        # Invariant subspace found: the projection is exact for that member.
        broke = hn <= 1e-13 * np.maximum(1.0, np.abs(np.diagonal(H[:, :m, :m], axis1=1, axis2=2)).max(axis=1))
        err[broke] = 0.0
        scale = np.where(broke | (hn == 0), 0.0, 1.0 / np.where(hn == 0, 1.0, hn))
        V[:, j + 1] = w * scale[:, None]
        if m >= m_min and np.all(err <= tol):
            out = beta[:, None] * np.matmul(y[:, None, :], V[:, :m])[:, 0]
            return out.reshape(shape), {"m": m, "err": float(err.max(initial=0.0))}
    raise KrylovError(
        f"Krylov exponential not converged with m={m_max}: error estimate {err.max():.3e} > {tol:.1e}"
    )
