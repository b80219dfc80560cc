"""Diagonal spectral truncation of the state space.

States are plain ``numpy`` arrays of mode coefficients ``x_j = <x, e_j>``
in the eigen-basis of ``-A``. A leading batch axis is allowed everywhere:
an array of shape ``(..., n)`` holds one mode vector per leading index.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


class Pairing(enum.Enum):
    """Which inner product to use for a pairing."""

    H = "h"
    HTILDE = "htilde"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown pairing {value!r}; expected 'h' or 'htilde'") from None


@dataclass(frozen=True)
class SpectralBasis:
    """Eigenvalues ``0 < lambda_1 <= ... <= lambda_n`` of ``-A``.

    ``A e_j = -lambda_j e_j``, so the semigroup acts diagonally as
    ``exp(-lambda_j t)`` on mode ``j``.
    """

    eigenvalues: np.ndarray

    def __post_init__(self):
        eig = np.array(self.eigenvalues, dtype=float).reshape(-1)
        if eig.size == 0:
            raise DimensionError("a spectral basis needs at least one mode")
        if not np.all(np.isfinite(eig)) or np.any(eig <= 0):
            raise ValueError("eigenvalues of -A must be finite and strictly positive")
        if np.any(np.diff(eig) < 0):
            raise ValueError("eigenvalues of -A must be nondecreasing")
        eig.setflags(write=False)
        object.__setattr__(self, "eigenvalues", eig)

    @classmethod
    def dirichlet(cls, n):
        """Basis with ``lambda_j = j**2`` (Dirichlet Laplacian on ``(0, pi)``)."""
        if int(n) < 1:
            raise DimensionError("dimension must be a positive integer")
        j = np.arange(1, int(n) + 1, dtype=float)
        return cls(j * j)

    @property
    def dimension(self):
        return self.eigenvalues.size

    @property
    def summability_witness(self):
        """Partial sum of ``1 / lambda_j`` over the retained modes."""
        return float(np.sum(1.0 / self.eigenvalues))

    @property
    def htilde_weights(self):
        return 0.5 ** np.arange(1, self.dimension + 1, dtype=float)

    def unit(self, k):
        """The basis vector ``e_k`` (1-based mode index)."""
        if not 1 <= k <= self.dimension:
            raise DimensionError(f"mode index {k} outside 1..{self.dimension}")
        e = np.zeros(self.dimension)
        e[k - 1] = 1.0
        return e

    def decay(self, t):
        """Per-mode factors ``exp(-lambda_j t)``; ``t`` may carry batch axes."""
        t = np.asarray(t, dtype=float)
        return np.exp(-self.eigenvalues * t[..., None])

    def check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dimension,):
            raise DimensionError(
                f"mode vector has trailing length {x.shape[-1:]}, basis has {self.dimension}"
            )
        return x


def _pair_dims(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != y.shape[-1]:
        raise DimensionError(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    return x, y


def inner(x, y, pairing=Pairing.H):
    """Inner product of mode vectors along the last axis.

    ``Pairing.H`` gives ``sum x_i y_i``; ``Pairing.HTILDE`` gives
    ``sum 2**-i x_i y_i`` with the first mode weighted by ``1/2``.
    """
    x, y = _pair_dims(x, y)
    if Pairing.parse(pairing) is Pairing.H:
        return np.sum(x * y, axis=-1)
    w = 0.5 ** np.arange(1, x.shape[-1] + 1, dtype=float)
    return np.sum(w * x * y, axis=-1)


def norm_sq(x, pairing=Pairing.H):
    return inner(x, x, pairing)


def semigroup_apply(basis, t, x):
    """Apply ``exp(tA)`` to ``x``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("semigroup time must be nonnegative")
    x = basis.check(x)
    return basis.decay(t) * x


def apply_A(basis, x):
    x = basis.check(x)
    return -basis.eigenvalues * x


def project(x, m):
    """Orthogonal projection onto the first ``m`` modes."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if not 1 <= int(m) <= n:
        raise DimensionError(f"projection rank {m} outside 1..{n}")
    out = np.array(x, copy=True)
    out[..., int(m):] = 0.0
    return out


def mode_mask(dimension, m):
    mask = np.zeros(dimension)
    mask[:m] = 1.0
    return mask
