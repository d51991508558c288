"""Initial phase-space densities shared by the quantum and particle sides."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, qmc


@dataclass(frozen=True)
class PhaseSpaceGaussian:
    """Product Gaussian density f_I(x, p) with unit mass.

    Attributes
    ----------
    x_mean, p_mean : tuple of float
        Means in position and momentum, length ``d``.
    x_std, p_std : tuple of float
        Standard deviations per axis.
    """

    x_mean: tuple
    x_std: tuple
    p_mean: tuple
    p_std: tuple

    @classmethod
    def make(cls, d, x_mean=0.0, x_std=1.0, p_mean=0.0, p_std=1.0):
        def vec(v):
            return tuple(float(a) for a in np.broadcast_to(np.asarray(v, dtype=float), (d,)))

        return cls(vec(x_mean), vec(x_std), vec(p_mean), vec(p_std))

    @property
    def d(self) -> int:
        return len(self.x_mean)

    def density(self, x, p, box=None) -> np.ndarray:
        """Evaluate f_I at ``x, p`` of shape ``(..., d)``; ``box`` enables minimum image."""
        dx = np.asarray(x, dtype=float) - np.asarray(self.x_mean)
        if box is not None:
            L = np.asarray(box, dtype=float)
            dx = dx - L * np.round(dx / L)
        dp = np.asarray(p, dtype=float) - np.asarray(self.p_mean)
        sx, sp = np.asarray(self.x_std), np.asarray(self.p_std)
        q = np.sum((dx / sx) ** 2, axis=-1) + np.sum((dp / sp) ** 2, axis=-1)
        return np.exp(-0.5 * q) / ((2 * np.pi) ** self.d * np.prod(sx) * np.prod(sp))

    def sample(self, N: int, seed: int = 0, method: str = "sobol"):
        """Draw ``N`` phase-space points, returned as ``(x, p)`` of shape ``(N, d)``.

        ``sobol`` uses a scrambled Sobol sequence pushed through the normal
        quantile; ``random`` uses numpy's PCG64 generator.
        """
        d = self.d
        if method == "sobol":
            engine = qmc.Sobol(d=2 * d, scramble=True, seed=seed)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                u = engine.random(N)
            z = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
        elif method == "random":
            z = np.random.default_rng(seed).standard_normal((N, 2 * d))
        else:
            raise ValueError(f"unknown sampling method {method!r}")
        x = np.asarray(self.x_mean) + np.asarray(self.x_std) * z[:, :d]
        p = np.asarray(self.p_mean) + np.asarray(self.p_std) * z[:, d:]
        return x, p

    def to_dict(self) -> dict:
        return dict(x_mean=list(self.x_mean), x_std=list(self.x_std),
                    p_mean=list(self.p_mean), p_std=list(self.p_std))
