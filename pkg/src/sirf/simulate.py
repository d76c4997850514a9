"""Synthetic scenes and the reduced-resolution simulation protocol.

The ground truth is degraded into a low-resolution multispectral image
(bicubic decimation) and a pan image (weighted band sum), optionally
misregistered by a known transform.
"""

import numpy as np

from sirf.resample import TransformParams, downsample, warp


def piecewise_constant_scene(height=128, width=128, bands=4, n_shapes=12, seed=0, spread=0.2, low=40.0, high=220.0):
    """Random rectangles and ellipses on a flat background, one spectrum per shape.

    Spectra are band-correlated the way real land covers are: a brightness
    drawn from ``[low, high]`` times a scene-wide spectral shape, perturbed
    per band by up to ``+-spread`` (relative).
    """
    rng = np.random.default_rng(seed)
    shape = rng.uniform(0.8, 1.2, size=bands)

    def spectrum():
        return rng.uniform(low, high) * shape * (1.0 + spread * rng.uniform(-1.0, 1.0, size=bands))

    img = np.empty((bands, height, width))
    img[:] = spectrum()[:, None, None]
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(n_shapes):
        values = spectrum()
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry = rng.uniform(0.06, 0.25) * height
        rx = rng.uniform(0.06, 0.25) * width
        if rng.random() < 0.5:
            sel = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            sel = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        img[:, sel] = values[:, None]
    return img


def pan_from_bands(gt, weights=None) -> np.ndarray:
    s = gt.shape[0]
    w = np.full(s, 1.0 / s) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (s,):
        raise ValueError(f"need {s} pan weights, got {w.shape}")
    if np.any(w < 0) or not np.isclose(w.sum(), 1.0, rtol=0, atol=1e-9):
        raise ValueError("pan weights must be non-negative and sum to 1")
    return np.tensordot(w, gt, axes=1)[np.newaxis]


def simulate(gt, c: int = 4, pan_weights=None, theta_true: TransformParams | None = None, antialias: bool = True):
    """Return ``(ms, pan)`` for ground truth ``gt`` (s, m, n).

    With ``theta_true`` the pan content is displaced so that registering
    the pan onto the fused image recovers ``theta_true``; border pixels that
    come from outside the scene are clamped copies of the edge.
    """
    gt = np.asarray(gt, dtype=np.float64)
    ms = downsample(gt, c, antialias)
    pan = pan_from_bands(gt, pan_weights)
    if theta_true is not None:
        pan, _ = warp(pan, theta_true.inverse(), fill="edge")
    return ms, pan
