"""Registration by minimising the smoothed dynamic-gradient-sparsity energy.

The energy of a transform ``theta`` is

    E(theta) = sum_{(i,j) in overlap} sqrt( sum_d sum_q (grad_q X - grad_q T(P))^2 + eps )

and is always compared after dividing by the overlap count ``M``. It is
minimised with backtracking gradient descent on a coarse-to-fine pyramid.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from sirf.resample import (
    TransformParams,
    bilinear,
    build_pyramid,
    max_pyramid_levels,
    source_coords,
)
from sirf.tensor import DualPair, forward_gradient, l_op

log = logging.getLogger(__name__)


@dataclass
class RegistrationConfig:
    eps: float = 1e-10
    step0: float = 1.0
    eta: float = 0.8
    inner_iters: int = 3
    pyramid_levels: int | None = None  # None: pick from image size
    kind: str = "translation"
    max_backtracks: int = 30
    armijo: float = 0.1  # sufficient-decrease constant; 0 accepts any non-increase
    grow: float = 1.0  # step multiplier after an accepted step (1 keeps it)

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.inner_iters < 1:
            raise ValueError(f"inner_iters must be >= 1, got {self.inner_iters}")
        if not 0.0 <= self.armijo < 1.0:
            raise ValueError(f"armijo must lie in [0, 1), got {self.armijo}")
        if not self.grow >= 1.0:
            raise ValueError(f"grow must be >= 1, got {self.grow}")
        if self.kind not in ("translation", "affine"):
            raise ValueError(f"unknown transform kind {self.kind!r}")


@dataclass
class RegistrationTrace:
    """One row per accepted step: level, theta, normalised energy, step size, overlap."""

    rows: list = field(default_factory=list)

    def add(self, level, theta, energy, step, overlap):
        self.rows.append(
            {"level": level, "theta": tuple(theta.theta), "energy": energy, "step": step, "overlap": overlap}
        )

    def __len__(self):
        return len(self.rows)


def default_levels(shape) -> int:
    m, n = shape
    k = int(math.floor(math.log2(max(min(m, n), 1) / 32.0))) + 1 if min(m, n) >= 32 else 1
    return max(1, min(4, k, max_pyramid_levels(shape)))


def _single_band(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 2:
        p = p[np.newaxis]
    if p.shape[0] != 1:
        raise ValueError(f"pan image must have one band, got {p.shape[0]}")
    return p


def gradient_region(inside: np.ndarray) -> np.ndarray:
    """Pixels whose value and forward neighbours all lie inside the overlap."""
    region = inside.copy()
    region[:-1, :] &= inside[1:, :]
    region[:, :-1] &= inside[:, 1:]
    return region


def _sample(p, theta, shape):
    sx, sy = source_coords(shape, theta)
    w, ddx, ddy, inside = bilinear(p, sx, sy, "zero")
    return w, ddx[0], ddy[0], inside, sx, sy


def _residual(x, w):
    gx = forward_gradient(x)
    gw = forward_gradient(w)
    return gx.d1 - gw.d1, gx.d2 - gw.d2


def dgs_energy(x, p, theta: TransformParams, eps: float = 1e-10, region=None):
    """Return ``(E, M)``; ``region`` fixes the summation set (default: overlap)."""
    p = _single_band(p)
    if x.shape[1:] != p.shape[1:]:
        raise ValueError(f"image {x.shape[1:]} and pan {p.shape[1:]} sizes differ")
    w, _, _, inside, _, _ = _sample(p, theta, x.shape[1:])
    if region is None:
        region = gradient_region(inside)
    count = int(np.count_nonzero(region))
    if count == 0:
        return math.inf, 0
    r1, r2 = _residual(x, w)
    rho = np.sqrt(np.sum(r1 * r1 + r2 * r2, axis=0) + eps)
    return float(np.sum(rho[region])), count


def normalized_energy(x, p, theta, eps=1e-10, region=None) -> float:
    e, count = dgs_energy(x, p, theta, eps, region)
    return math.inf if count == 0 else e / count


def _central_slopes(p, sx, sy):
    """Central-difference intensity gradients of ``p`` interpolated at the sample points."""
    gy, gx = np.gradient(p[0])
    ddx = bilinear(gx[np.newaxis], sx, sy, "zero")[0][0]
    ddy = bilinear(gy[np.newaxis], sx, sy, "zero")[0][0]
    return ddx, ddy


def dgs_gradient(x, p, theta: TransformParams, eps: float = 1e-10, region=None, derivative: str = "exact"):
    """Gradient of ``E / M`` with respect to ``theta.theta`` (overlap held fixed).

    ``derivative="exact"`` differentiates the bilinear interpolant itself,
    which is what finite differences of the energy see away from the pixel
    grid. ``"central"`` interpolates central-difference gradient images of
    ``p`` instead; it is smoother and still gives a descent direction where
    the exact one is a one-sided derivative at a kink (integer positions).
    """
    p = _single_band(p)
    w, ddx, ddy, inside, sx, sy = _sample(p, theta, x.shape[1:])
    if derivative == "central":
        ddx, ddy = _central_slopes(p, sx, sy)
    elif derivative != "exact":
        raise ValueError(f"unknown derivative mode {derivative!r}")
    if region is None:
        region = gradient_region(inside)
    count = int(np.count_nonzero(region))
    if count == 0:
        raise ValueError("transform leaves no overlap; energy gradient undefined")
    r1, r2 = _residual(x, w)
    rho = np.sqrt(np.sum(r1 * r1 + r2 * r2, axis=0) + eps)
    inv = np.where(region, 1.0 / rho, 0.0)
    g1 = (np.sum(r1, axis=0) * inv)[np.newaxis]
    g2 = (np.sum(r2, axis=0) * inv)[np.newaxis]
    # dE/dW = -(forward difference)^T g = L(g)
    de_dw = l_op(DualPair(g1, g2))[0]
    ax = de_dw * ddx
    ay = de_dw * ddy
    if theta.kind == "translation":
        grad = np.array([ax.sum(), ay.sum()])
    else:
        m, n = x.shape[1:]
        yy, xx = np.mgrid[0:m, 0:n].astype(np.float64)
        grad = np.array(
            [(ax * xx).sum(), (ax * yy).sum(), ax.sum(), (ay * xx).sum(), (ay * yy).sum(), ay.sum()]
        )
    return grad / count


def _try_params(theta, vec):
    try:
        return theta.with_vector(vec)
    except ValueError:
        return None


def _preconditioner(theta, shape):
    """Metric ``J D J^T`` for the descent direction.

    Affine steps are taken in centre-referenced coordinates (linear part, displacement
    of the image centre) with the linear part measured as displacement at the image
    extent; ``J`` maps those coordinates back to the stored parameters.
    """
    if theta.kind != "affine":
        return np.eye(2)
    m, n = shape
    cx, cy = (n - 1) / 2.0, (m - 1) / 2.0
    row = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-cx, -cy, 1.0]])
    jac = np.kron(np.eye(2), row)
    ext = float(max(m, n))
    d = np.tile([ext**-2, ext**-2, 1.0], 2)
    return jac @ np.diag(d) @ jac.T


def _line_search(x, p, theta, f, g, step, cfg):
    """Backtrack along ``-D g``; returns ``(candidate, energy, step)`` or ``None`` at the cap."""
    d = _preconditioner(theta, x.shape[1:]) @ g
    gd = float(g @ d)
    for _ in range(cfg.max_backtracks):
        cand = _try_params(theta, theta.vector - step * d)
        fc = normalized_energy(x, p, cand, cfg.eps) if cand is not None else math.inf
        if fc <= f - cfg.armijo * step * gd:
            return cand, fc, step
        step *= cfg.eta
    return None


def _descend_level(x, p, theta, cfg, step, level, trace):
    f = normalized_energy(x, p, theta, cfg.eps)
    if not math.isfinite(f):
        raise ValueError(f"no overlap between images at level {level} for theta={theta.theta}")
    for _ in range(cfg.inner_iters):
        found = None
        for mode in ("exact", "central"):
            g = dgs_gradient(x, p, theta, cfg.eps, derivative=mode)
            if np.any(g):
                found = _line_search(x, p, theta, f, g, step, cfg)
            if found is not None:
                break
            log.debug("level %d: no decrease along the %s gradient", level, mode)
        if found is None:
            return theta, step
        theta, f, step = found
        trace.add(level, theta, f, step, dgs_energy(x, p, theta, cfg.eps)[1])
        step *= cfg.grow
    return theta, step


def register(x, p, theta0: TransformParams | None = None, cfg: RegistrationConfig | None = None):
    """Estimate the transform aligning ``T(P)`` with ``X``; returns ``(theta, trace)``."""
    cfg = cfg or RegistrationConfig()
    p = _single_band(p)
    x = np.asarray(x, dtype=np.float64)
    if theta0 is None:
        theta0 = TransformParams.identity(cfg.kind)
    if theta0.kind != cfg.kind:
        theta0 = TransformParams("affine", tuple(theta0.matrix().ravel())) if cfg.kind == "affine" else theta0
    levels = cfg.pyramid_levels or default_levels(x.shape[1:])

    f0 = normalized_energy(x, p, theta0, cfg.eps)
    if not math.isfinite(f0):
        raise ValueError(f"energy is not finite at the initial transform {theta0.theta}")

    xs = build_pyramid(x, levels)
    ps = build_pyramid(p, levels)
    theta = theta0
    for _ in range(levels - 1):
        theta = theta.to_coarser()

    trace = RegistrationTrace()
    step = cfg.step0
    for level in range(levels - 1, -1, -1):
        theta, step = _descend_level(xs[level], ps[level], theta, cfg, step, level, trace)
        if level > 0:
            theta = theta.to_finer()

    if normalized_energy(x, p, theta, cfg.eps) > f0:
        theta = theta0
    return theta, trace


def translation_sweep(x, p, shifts, axis: str = "x", eps: float = 1e-10) -> np.ndarray:
    """Normalised energy over a list of integer (or real) translations along one axis."""
    out = []
    for s in shifts:
        theta = TransformParams.translation(s, 0.0) if axis == "x" else TransformParams.translation(0.0, s)
        out.append(normalized_energy(x, p, theta, eps))
    return np.array(out)
