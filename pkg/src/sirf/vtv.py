"""Vectorial-TV denoising around a reference image (accelerated dual projection).

Solves ``min_X 1/2 ||X - Y||_F^2 + lam * ||grad X - grad Pw||_{2,1}`` by
substituting ``Z = X - Pw`` and running FISTA on the dual of the plain VTV
problem in ``Z``.
"""

import math
from dataclasses import dataclass

import numpy as np

from sirf.tensor import DualPair, gradient_group_norm


def next_t(t: float) -> float:
    return (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0


@dataclass
class DenoiseState:
    """Dual iterate ``(R, S)``, momentum point ``(U, V)``, FISTA scalar and counter."""

    rs: DualPair
    uv: DualPair
    t: float = 1.0
    k: int = 0

    @classmethod
    def zeros(cls, shape) -> "DenoiseState":
        return cls(DualPair.zeros(shape), DualPair.zeros(shape))

    def restarted(self) -> "DenoiseState":
        """Keep the dual point, reset momentum (used for warm starts)."""
        return DenoiseState(self.rs, self.rs, 1.0, self.k)


def vtv_objective(x, y, pw, lam: float) -> float:
    fid = 0.5 * float(np.sum((x - y) ** 2))
    reg = float(np.sum(gradient_group_norm(x - pw)))
    return fid + lam * reg


def _l_op_into(r, s, out):
    """``l_op`` into a preallocated array (R's last row and S's last column are ignored)."""
    out[:, :-1, :] = r[:, :-1, :]
    out[:, -1, :] = 0.0
    out[:, 1:, :] -= r[:, :-1, :]
    out[:, :, :-1] += s[:, :, :-1]
    out[:, :, 1:] -= s[:, :, :-1]
    return out


# Elements per array in one row strip. Larger images are processed strip by
# strip so the dual loop's working set stays cache resident.
BLOCK_ELEMENTS = 1 << 16


def _denoise_block(y, pw, rs, uv, lam, iters, t, accelerate):
    """The dual-projection loop on one block of rows; returns ``(X, R, S, U, V, t)``.

    The block's first and last rows are treated as image borders, so rows
    within ``iters + 1`` of a cut edge are only valid if the cut is a real border.
    """
    b = y - pw
    step = 1.0 / (8.0 * lam)
    # In-place buffers: the arrays are large and the loop is memory bound.
    u, v = uv.r.copy(), uv.s.copy()
    r_prev, s_prev = rs.r.copy(), rs.s.copy()
    r, s = np.empty_like(b), np.empty_like(b)
    z = np.empty_like(b)
    norm = np.empty(b.shape[1:])
    for _ in range(iters):
        # z = B - lam L(U, V)
        _l_op_into(u, v, z)
        z *= -lam
        z += b
        # (R, S) = P[(U, V) + step L^T z], with L^T z = -grad z
        np.subtract(z[:, :-1, :], z[:, 1:, :], out=r[:, :-1, :])
        r[:, -1, :] = 0.0
        np.subtract(z[:, :, :-1], z[:, :, 1:], out=s[:, :, :-1])
        s[:, :, -1] = 0.0
        r *= step
        r += u
        s *= step
        s += v
        np.einsum("bij,bij->ij", r, r, out=norm)
        norm += np.einsum("bij,bij->ij", s, s)
        np.sqrt(norm, out=norm)
        np.maximum(norm, 1.0, out=norm)
        r /= norm
        s /= norm
        if accelerate:
            t_new = next_t(t)
            coef = (t - 1.0) / t_new
            t = t_new
        else:
            coef = 0.0
        # (U, V) = (R, S) + coef ((R, S) - previous)
        np.subtract(r, r_prev, out=u)
        u *= coef
        u += r
        np.subtract(s, s_prev, out=v)
        v *= coef
        v += s
        r, r_prev = r_prev, r
        s, s_prev = s_prev, s
    _l_op_into(r_prev, s_prev, z)
    z *= -lam
    z += b
    z += pw
    return z, r_prev, s_prev, u, v, t


def vtv_denoise(y, pw, lam: float, iters: int = 3, warm: DenoiseState | None = None, accelerate: bool = True):
    """Run ``iters`` dual-projection steps and return ``(X, state)``.

    ``warm`` continues from a previous dual point (momentum restarted);
    ``accelerate=False`` drops the momentum step, giving the plain dual
    projection iteration.
    """
    y = np.asarray(y, dtype=np.float64)
    pw = np.asarray(pw, dtype=np.float64)
    if y.shape != pw.shape:
        raise ValueError(f"image and reference shapes differ: {y.shape} vs {pw.shape}")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")

    state = DenoiseState.zeros(y.shape) if warm is None else warm.restarted()
    bands, m, n = y.shape
    rows = max(16, BLOCK_ELEMENTS // (bands * n))
    if rows >= m:
        x, r, s, u, v, t = _denoise_block(y, pw, state.rs, state.uv, lam, iters, state.t, accelerate)
        return x, DenoiseState(DualPair(r, s), DualPair(u, v), t, state.k + iters)

    # Row strips with a halo: the stencil reaches one row further per iteration,
    # so strip rows further than iters + 1 from a cut are computed exactly.
    halo = iters + 1
    x = np.empty_like(y)
    out = [np.empty_like(y) for _ in range(4)]
    t = state.t
    for a in range(0, m, rows):
        e = min(a + rows, m)
        lo, hi = max(0, a - halo), min(m, e + halo)
        cut = slice(lo, hi)
        part = lambda d: DualPair(d.r[:, cut], d.s[:, cut])  # noqa: E731
        xb, *duals, t_end = _denoise_block(y[:, cut], pw[:, cut], part(state.rs), part(state.uv), lam, iters, t, accelerate)
        keep = slice(a - lo, e - lo)
        x[:, a:e] = xb[:, keep]
        for dst, src in zip(out, duals):
            dst[:, a:e] = src[:, keep]
    r, s, u, v = out
    return x, DenoiseState(DualPair(r, s), DualPair(u, v), t_end, state.k + iters)
