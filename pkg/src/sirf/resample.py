"""Resampling: bicubic decimation/interpolation, parametric warps, pyramids.

Pixel ``(i, j)`` sits at coordinate ``y = i`` (row), ``x = j`` (column).
Rescaling by an integer factor ``c`` is centre-aligned: output pixel ``k`` of
a decimation samples the input at ``(k + 0.5) * c - 0.5``.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from sirf.tensor import GradientField

CUBIC_A = -0.5  # Catmull-Rom


def cubic_kernel(t, a: float = CUBIC_A):
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


@lru_cache(maxsize=64)
def resample_matrix(n_in: int, n_out: int, antialias: bool = True) -> sp.csr_matrix:
    """Sparse ``(n_out, n_in)`` matrix of 1-D bicubic weights, replicate edges.

    When shrinking with ``antialias`` the kernel is stretched by the scale
    factor (and renormalised), which low-pass filters before decimation.
    """
    scale = n_in / n_out
    stretch = scale if (antialias and scale > 1) else 1.0
    pos = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(pos).astype(np.int64)
    reach = int(np.ceil(2 * stretch))
    offsets = range(-reach + 1, reach + 1)
    idx = np.stack([base + k for k in offsets])
    w = cubic_kernel((pos - idx) / stretch)
    w /= w.sum(axis=0)
    rows = np.broadcast_to(np.arange(n_out), idx.shape)
    mat = sp.csr_matrix((w.ravel(), (rows.ravel(), np.clip(idx, 0, n_in - 1).ravel())), shape=(n_out, n_in))
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


def _apply_separable(x: np.ndarray, wr, wc) -> np.ndarray:
    s, m, n = x.shape
    mo, no = wr.shape[0], wc.shape[0]
    # rows: (mo, m) @ (m, s*n)
    t = wr @ x.transpose(1, 0, 2).reshape(m, s * n)
    t = t.reshape(mo, s, n).transpose(1, 0, 2).reshape(s * mo, n)
    # columns: (no, n) @ (n, s*mo)
    out = (wc @ t.T).T
    return np.ascontiguousarray(out.reshape(s, mo, no))


def _check_factor(c: int) -> int:
    if int(c) != c or c < 1:
        raise ValueError(f"resolution factor must be a positive integer, got {c}")
    return int(c)


def downsample(x: np.ndarray, c: int, antialias: bool = True) -> np.ndarray:
    """Bicubic decimation by ``c``; ``c == 1`` is the identity.

    ``antialias=False`` samples the unstretched kernel (plain decimation).
    """
    c = _check_factor(c)
    s, m, n = x.shape
    if m % c or n % c:
        raise ValueError(f"image size {m}x{n} is not divisible by factor {c}")
    if c == 1:
        return x.copy()
    return _apply_separable(x, resample_matrix(m, m // c, antialias), resample_matrix(n, n // c, antialias))


def downsample_adjoint(r: np.ndarray, c: int, antialias: bool = True) -> np.ndarray:
    """Exact transpose of :func:`downsample`, mapping ``(s, m/c, n/c)`` to ``(s, m, n)``."""
    c = _check_factor(c)
    s, mo, no = r.shape
    if c == 1:
        return r.copy()
    wr = resample_matrix(mo * c, mo, antialias).T.tocsr()
    wc = resample_matrix(no * c, no, antialias).T.tocsr()
    return _apply_separable(r, wr, wc)


def upsample(x: np.ndarray, c: int) -> np.ndarray:
    """Bicubic interpolation to ``c`` times the size; constants are preserved."""
    c = _check_factor(c)
    s, m, n = x.shape
    if c == 1:
        return x.copy()
    return _apply_separable(x, resample_matrix(m, m * c), resample_matrix(n, n * c))


def _spectral_norm(mat: sp.csr_matrix) -> float:
    if min(mat.shape) <= 2048:
        return float(np.linalg.norm(mat.toarray(), 2))
    return float(spla.svds(mat, k=1, return_singular_vectors=False, tol=1e-12)[0])


def psi_norm_squared(shape, c: int, antialias: bool = True) -> float:
    """``||downsample^T downsample||`` for images of ``shape``; exact, by separability.

    The 2-D operator is a Kronecker product of the row and column matrices,
    so its largest singular value is the product of theirs.
    """
    c = _check_factor(c)
    m, n = shape[-2:]
    if c == 1:
        return 1.0
    wr = resample_matrix(m, m // c, antialias)
    wc = resample_matrix(n, n // c, antialias)
    return (_spectral_norm(wr) * _spectral_norm(wc)) ** 2


@dataclass(frozen=True)
class TransformParams:
    """Translation ``(tx, ty)`` or affine ``(a11, a12, a13, a21, a22, a23)``.

    The warp samples the source image at ``A @ (x, y, 1)``; a translation
    samples at ``(x + tx, y + ty)``. Values are in pixels.
    """

    kind: str
    theta: tuple

    def __post_init__(self):
        theta = tuple(float(v) for v in np.ravel(self.theta))
        object.__setattr__(self, "theta", theta)
        if self.kind == "translation":
            if len(theta) != 2:
                raise ValueError(f"translation needs 2 parameters, got {len(theta)}")
        elif self.kind == "affine":
            if len(theta) != 6:
                raise ValueError(f"affine needs 6 parameters, got {len(theta)}")
            det = theta[0] * theta[4] - theta[1] * theta[3]
            if not abs(det) > 1e-12:
                raise ValueError("affine transform has a singular linear part")
        else:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if not all(np.isfinite(theta)):
            raise ValueError("transform parameters must be finite")

    @classmethod
    def identity(cls, kind: str = "translation") -> "TransformParams":
        if kind == "translation":
            return cls(kind, (0.0, 0.0))
        return cls(kind, (1.0, 0.0, 0.0, 0.0, 1.0, 0.0))

    @classmethod
    def translation(cls, tx: float, ty: float = 0.0) -> "TransformParams":
        return cls("translation", (tx, ty))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.theta)

    def with_vector(self, v) -> "TransformParams":
        return TransformParams(self.kind, tuple(v))

    def matrix(self) -> np.ndarray:
        if self.kind == "translation":
            tx, ty = self.theta
            return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty]])
        return np.array(self.theta).reshape(2, 3)

    @property
    def shift(self) -> tuple:
        a = self.matrix()
        return float(a[0, 2]), float(a[1, 2])

    def inverse(self) -> "TransformParams":
        a = self.matrix()
        lin_inv = np.linalg.inv(a[:, :2])
        b = -lin_inv @ a[:, 2]
        if self.kind == "translation":
            return TransformParams(self.kind, tuple(b))
        return TransformParams(self.kind, tuple(np.hstack([lin_inv, b[:, None]]).ravel()))

    def to_coarser(self) -> "TransformParams":
        """Same motion expressed on the next pyramid level (half resolution)."""
        a = self.matrix()
        b = 0.5 * (a[:, 2] + 0.5 * (a[:, :2] - np.eye(2)).sum(axis=1))
        return self._with_offset(b)

    def to_finer(self) -> "TransformParams":
        a = self.matrix()
        b = 2.0 * a[:, 2] - 0.5 * (a[:, :2] - np.eye(2)).sum(axis=1)
        return self._with_offset(b)

    def _with_offset(self, b) -> "TransformParams":
        if self.kind == "translation":
            return TransformParams(self.kind, tuple(b))
        a = self.matrix()
        a[:, 2] = b
        return TransformParams(self.kind, tuple(a.ravel()))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "theta": list(self.theta)}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformParams":
        return cls(d["kind"], tuple(d["theta"]))


@dataclass
class OverlapMask:
    """Output pixels whose source coordinates fall inside the source image."""

    mask: np.ndarray

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.mask))


_EDGE_TOL = 1e-9


def source_coords(shape, theta: TransformParams):
    m, n = shape
    y, x = np.mgrid[0:m, 0:n].astype(np.float64)
    if theta.kind == "translation":
        tx, ty = theta.theta
        return x + tx, y + ty
    a = theta.matrix()
    return a[0, 0] * x + a[0, 1] * y + a[0, 2], a[1, 0] * x + a[1, 1] * y + a[1, 2]


def bilinear(img: np.ndarray, sx: np.ndarray, sy: np.ndarray, fill: str = "zero"):
    """Sample ``img`` (s, m, n) at ``(sx, sy)``.

    Returns ``(values, d_dx, d_dy, inside)`` where the derivatives are those
    of the bilinear interpolant with respect to the sample coordinates. With
    ``fill="zero"`` samples outside the image are 0; with ``fill="edge"``
    coordinates are clamped to the border first.
    """
    s, m, n = img.shape
    inside = (
        (sx >= -_EDGE_TOL) & (sx <= n - 1 + _EDGE_TOL) & (sy >= -_EDGE_TOL) & (sy <= m - 1 + _EDGE_TOL)
    )
    cx = np.clip(sx, 0.0, n - 1)
    cy = np.clip(sy, 0.0, m - 1)
    x0 = np.minimum(np.floor(cx).astype(np.int64), n - 2)
    y0 = np.minimum(np.floor(cy).astype(np.int64), m - 2)
    fx = cx - x0
    fy = cy - y0
    a = img[:, y0, x0]
    b = img[:, y0, x0 + 1]
    c = img[:, y0 + 1, x0]
    d = img[:, y0 + 1, x0 + 1]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    val = top + fy * (bot - top)
    ddx = (1.0 - fy) * (b - a) + fy * (d - c)
    ddy = bot - top
    if fill == "zero":
        val = np.where(inside, val, 0.0)
        ddx = np.where(inside, ddx, 0.0)
        ddy = np.where(inside, ddy, 0.0)
    elif fill != "edge":
        raise ValueError(f"unknown fill mode {fill!r}")
    return val, ddx, ddy, inside


def _is_identity(theta: TransformParams) -> bool:
    return np.array_equal(theta.matrix(), np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))


def warp(p: np.ndarray, theta: TransformParams, fill: str = "zero"):
    """Inverse-mapping bilinear warp of every band of ``p``.

    Returns the warped image and the :class:`OverlapMask`. Outside the
    overlap the output is 0 (``fill="zero"``) or the clamped border value
    (``fill="edge"``).
    """
    s, m, n = p.shape
    if _is_identity(theta):
        return p.copy(), OverlapMask(np.ones((m, n), dtype=bool))
    sx, sy = source_coords((m, n), theta)
    val, _, _, inside = bilinear(p, sx, sy, fill)
    return val, OverlapMask(inside)


def image_gradient_at_warp(p: np.ndarray, theta: TransformParams) -> GradientField:
    """Intensity gradient of the source image sampled along the warp.

    ``d1`` is the derivative with respect to the source row coordinate and
    ``d2`` with respect to the source column coordinate, both taken through
    the bilinear interpolant; zero outside the overlap.
    """
    s, m, n = p.shape
    sx, sy = source_coords((m, n), theta)
    _, ddx, ddy, _ = bilinear(p, sx, sy, "zero")
    return GradientField(ddy, ddx)


def max_pyramid_levels(shape, min_size: int = 16) -> int:
    m, n = shape
    levels = 1
    while m % 2 == 0 and n % 2 == 0 and m // 2 >= min_size and n // 2 >= min_size:
        m //= 2
        n //= 2
        levels += 1
    return levels


def build_pyramid(img: np.ndarray, levels: int, min_size: int = 16, antialias: bool = True) -> list:
    """``[img, downsample(img, 2), ...]`` with ``levels`` entries, finest first."""
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    limit = max_pyramid_levels(img.shape[1:], min_size)
    if levels > limit:
        raise ValueError(
            f"{levels} pyramid levels requested but a {img.shape[1]}x{img.shape[2]} "
            f"image supports at most {limit} (coarsest >= {min_size} px, even sizes)"
        )
    out = [img]
    for _ in range(levels - 1):
        out.append(downsample(out[-1], 2, antialias))
    return out
