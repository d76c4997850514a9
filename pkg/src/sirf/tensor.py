"""Multi-band image helpers and the discrete operators shared by all solvers.

All images are ``(s, m, n)`` float64 arrays (band-major planar). Differences
are forward differences with zero beyond the last row/column, and the same
convention is used by :func:`l_op` / :func:`l_adjoint` so that the adjoint
identity holds to rounding error.
"""

from typing import NamedTuple

import numpy as np


class GradientField(NamedTuple):
    """Forward differences of a multi-band image.

    ``d1`` holds vertical differences (last row zero), ``d2`` horizontal
    differences (last column zero). Both have the image's shape.
    """

    d1: np.ndarray
    d2: np.ndarray

    def __sub__(self, other):
        return GradientField(self.d1 - other.d1, self.d2 - other.d2)

    def __add__(self, other):
        return GradientField(self.d1 + other.d1, self.d2 + other.d2)

    def scale(self, a: float) -> "GradientField":
        return GradientField(a * self.d1, a * self.d2)


class DualPair(NamedTuple):
    """Dual variables of the vectorial TV denoiser, ``(R, S)``."""

    r: np.ndarray
    s: np.ndarray

    def __add__(self, other):
        return DualPair(self.r + other.r, self.s + other.s)

    def __sub__(self, other):
        return DualPair(self.r - other.r, self.s - other.s)

    def scale(self, a: float) -> "DualPair":
        return DualPair(a * self.r, a * self.s)

    @classmethod
    def zeros(cls, shape) -> "DualPair":
        return cls(np.zeros(shape), np.zeros(shape))


def as_image(x, name: str = "image") -> np.ndarray:
    """Validate ``x`` and return it as a float64 ``(s, m, n)`` array.

    A 2-D array is treated as a single band. Raises ``ValueError`` when the
    shape is too small or the data contains NaN/Inf.
    """
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 2:
        a = a[np.newaxis]
    if a.ndim != 3:
        raise ValueError(f"{name}: expected a 2-D or 3-D array, got shape {a.shape}")
    s, m, n = a.shape
    if s < 1 or m < 2 or n < 2:
        raise ValueError(f"{name}: need at least 1 band and 2x2 pixels, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: contains non-finite values")
    return a


def forward_gradient(x: np.ndarray) -> GradientField:
    d1 = np.zeros_like(x)
    d2 = np.zeros_like(x)
    d1[:, :-1, :] = x[:, 1:, :] - x[:, :-1, :]
    d2[:, :, :-1] = x[:, :, 1:] - x[:, :, :-1]
    return GradientField(d1, d2)


def l_op(d: DualPair) -> np.ndarray:
    """``L(R, S)[i,j] = R[i,j] - R[i-1,j] + S[i,j] - S[i,j-1]``.

    ``R`` lives on rows ``0..m-2`` and ``S`` on columns ``0..n-2`` (the
    forward differences that exist); entries outside are treated as zero,
    which makes ``L`` the exact adjoint of the negated forward gradient.
    """
    r, s = d
    if r.shape != s.shape:
        raise ValueError(f"dual pair shapes differ: {r.shape} vs {s.shape}")
    out = np.zeros_like(r)
    out[:, :-1, :] += r[:, :-1, :]
    out[:, 1:, :] -= r[:, :-1, :]
    out[:, :, :-1] += s[:, :, :-1]
    out[:, :, 1:] -= s[:, :, :-1]
    return out


def l_adjoint(x: np.ndarray) -> DualPair:
    """Adjoint of :func:`l_op`: ``R = X[i] - X[i+1]``, ``S = X[j] - X[j+1]``."""
    g = forward_gradient(x)
    return DualPair(-g.d1, -g.d2)


def project_dual(d: DualPair) -> DualPair:
    """Project each pixel's 2s-vector ``(R[:, i, j], S[:, i, j])`` onto the unit ball.

    The last row of R and last column of S are structurally zero, so on the
    boundary the projection reduces to a clamp of the remaining entries and
    every pixel satisfies ``sum_d R^2 + S^2 <= 1``.
    """
    r, s = d
    norm = np.sqrt(np.sum(r * r + s * s, axis=0))
    scale = 1.0 / np.maximum(1.0, norm)
    return DualPair(r * scale, s * scale)


def pixel_group_norm(g: GradientField) -> np.ndarray:
    """Per-pixel Euclidean norm over bands and both directions, shape ``(m, n)``."""
    return np.sqrt(np.sum(g.d1 * g.d1 + g.d2 * g.d2, axis=0))


def group_l21_norm(g: GradientField) -> float:
    return float(np.sum(pixel_group_norm(g)))


def gradient_group_norm(x: np.ndarray) -> np.ndarray:
    """``pixel_group_norm(forward_gradient(x))`` without materialising the gradient field."""
    sq = np.zeros(x.shape[1:])
    d = np.subtract(x[:, 1:, :], x[:, :-1, :])
    sq[:-1, :] = np.einsum("bij,bij->ij", d, d)
    d = np.subtract(x[:, :, 1:], x[:, :, :-1])
    sq[:, :-1] += np.einsum("bij,bij->ij", d, d)
    return np.sqrt(sq, out=sq)


def replicate_pan(p: np.ndarray, s: int) -> np.ndarray:
    """Stack ``s`` copies of a single-band image."""
    if s < 1:
        raise ValueError(f"band count must be >= 1, got {s}")
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 3:
        if p.shape[0] != 1:
            raise ValueError(f"expected a single-band image, got {p.shape[0]} bands")
        p = p[0]
    return np.repeat(p[np.newaxis], s, axis=0)
