"""Full-reference fusion quality metrics.

Conventions fixed here so reports are comparable between runs:

* QAVE: universal image quality index on 8x8 sliding windows (stride 1), per
  band, averaged over windows and bands; windows with a zero denominator are
  skipped.
* MSSIM: 11x11 Gaussian window (sigma 1.5), C1 = (0.01 peak)^2,
  C2 = (0.03 peak)^2, valid windows only, averaged over bands.
* FCC: 3x3 Laplacian high-pass, interior pixels only, Pearson correlation
  per band against the pan image, averaged.
* ERGAS uses the resolution ratio 1/c.
* PSNR pools all bands.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import correlate2d

QAVE_WINDOW = 8
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
LAPLACIAN = np.array([[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]])


def _pair(x, g):
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if x.ndim == 2:
        x = x[np.newaxis]
    if g.ndim == 2:
        g = g[np.newaxis]
    if x.shape != g.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {g.shape}")
    return x, g


def band_rmse(x, g) -> np.ndarray:
    x, g = _pair(x, g)
    return np.sqrt(np.mean((x - g) ** 2, axis=(1, 2)))


def rmse(x, g) -> float:
    x, g = _pair(x, g)
    return float(np.sqrt(np.mean((x - g) ** 2)))


def psnr(x, g, peak: float = 255.0) -> float:
    e = rmse(x, g)
    return math.inf if e == 0 else 20.0 * math.log10(peak / e)


def sam(x, g) -> float:
    """Mean spectral angle in degrees; pixels where either spectrum is zero are skipped.

    The angle is ``2 atan2(|a - b|, |a + b|)`` on unit spectra, which is exact
    at zero and keeps full precision for small angles (``arccos`` does not).
    """
    x, g = _pair(x, g)
    nx = np.sqrt(np.sum(x * x, axis=0))
    ng = np.sqrt(np.sum(g * g, axis=0))
    ok = (nx > 0) & (ng > 0)
    if not np.any(ok):
        raise ValueError("SAM undefined: every pixel has a zero spectral vector")
    a = x[:, ok] / nx[ok]
    b = g[:, ok] / ng[ok]
    diff = np.sqrt(np.sum((a - b) ** 2, axis=0))
    tot = np.sqrt(np.sum((a + b) ** 2, axis=0))
    return float(np.degrees(np.mean(2.0 * np.arctan2(diff, tot))))


def _band_means(g):
    mu = np.mean(g, axis=(1, 2))
    if np.any(mu == 0):
        raise ValueError("reference band with zero mean")
    return mu


def ergas(x, g, c: float) -> float:
    x, g = _pair(x, g)
    mu = _band_means(g)
    e = band_rmse(x, g)
    return float(100.0 / c * np.sqrt(np.mean(e**2 / mu**2)))


def rase(x, g) -> float:
    x, g = _pair(x, g)
    mu = _band_means(g)
    e = band_rmse(x, g)
    return float(100.0 / np.mean(mu) * np.sqrt(np.mean(e**2)))


def _window_q(a, b, w):
    """Q index for every valid w x w window of two 2-D arrays (NaN where degenerate)."""
    wa = sliding_window_view(a, (w, w))
    wb = sliding_window_view(b, (w, w))
    ma = wa.mean(axis=(-1, -2))
    mb = wb.mean(axis=(-1, -2))
    va = (wa * wa).mean(axis=(-1, -2)) - ma * ma
    vb = (wb * wb).mean(axis=(-1, -2)) - mb * mb
    cov = (wa * wb).mean(axis=(-1, -2)) - ma * mb
    den = (va + vb) * (ma * ma + mb * mb)
    # variances of constant windows come out as tiny rounding residue
    scale = np.maximum(ma * ma + mb * mb, 1.0)
    degenerate = (np.abs(va + vb) <= 1e-12 * scale) | (den == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = 4.0 * cov * ma * mb / den
    q[degenerate] = np.nan
    return q


def qave(x, g, window: int = QAVE_WINDOW, per_band: bool = False):
    x, g = _pair(x, g)
    if min(x.shape[1:]) < window:
        raise ValueError(f"image smaller than the {window}x{window} window")
    bands = []
    for xb, gb in zip(x, g):
        q = _window_q(xb, gb, window)
        bands.append(np.nanmean(q) if np.any(~np.isnan(q)) else np.nan)
    bands = np.array(bands)
    if np.all(np.isnan(bands)):
        raise ValueError("QAVE undefined: every window is degenerate")
    return bands if per_band else float(np.nanmean(bands))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(r**2) / (2.0 * sigma**2))
    w = np.outer(k, k)
    return w / w.sum()


def mssim(x, g, peak: float = 255.0, per_band: bool = False):
    x, g = _pair(x, g)
    if min(x.shape[1:]) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = gaussian_window()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    bands = []
    for a, b in zip(x, g):
        mu_a = correlate2d(a, w, mode="valid")
        mu_b = correlate2d(b, w, mode="valid")
        saa = correlate2d(a * a, w, mode="valid") - mu_a**2
        sbb = correlate2d(b * b, w, mode="valid") - mu_b**2
        sab = correlate2d(a * b, w, mode="valid") - mu_a * mu_b
        ssim = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2))
        bands.append(float(np.mean(ssim)))
    bands = np.array(bands)
    return bands if per_band else float(np.mean(bands))


def highpass(img2d: np.ndarray) -> np.ndarray:
    return correlate2d(img2d, LAPLACIAN, mode="valid")


def fcc(x, p, per_band: bool = False):
    """Correlation between Laplacian-filtered bands of ``x`` and the pan image."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[np.newaxis]
    p = np.asarray(p, dtype=np.float64).reshape(x.shape[1:])
    hp = highpass(p)
    hp = hp - hp.mean()
    out = []
    for band in x:
        hb = highpass(band)
        hb = hb - hb.mean()
        den = np.sqrt(np.sum(hb * hb) * np.sum(hp * hp))
        if den == 0:
            raise ValueError("FCC undefined: a high-pass filtered image is constant")
        out.append(float(np.sum(hb * hp) / den))
    out = np.array(out)
    return out if per_band else float(np.mean(out))


@dataclass
class MetricsReport:
    ergas: float
    qave: float
    rase: float
    sam_degrees: float
    fcc: float
    psnr_db: float
    mssim: float
    rmse: float
    per_band: dict = field(default_factory=dict)

    ORDER = ("ergas", "qave", "rase", "sam_degrees", "fcc", "psnr_db", "mssim", "rmse")

    @property
    def psnr_infinite(self) -> bool:
        return math.isinf(self.psnr_db)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["psnr_infinite"] = self.psnr_infinite
        if self.psnr_infinite:
            d["psnr_db"] = None
        return d

    def csv_rows(self):
        yield ("metric", "value")
        for k in self.ORDER:
            yield (k, repr(getattr(self, k)))


def evaluate(x, g, pan=None, c: float = 4, peak: float = 255.0) -> MetricsReport:
    """All eight metrics of ``x`` against ground truth ``g``.

    FCC is measured against ``pan`` when given, otherwise against the band
    mean of ``g``.
    """
    x, g = _pair(x, g)
    if pan is None:
        pan = g.mean(axis=0)
    per_band = {
        "rmse": band_rmse(x, g).tolist(),
        "qave": qave(x, g, per_band=True).tolist(),
        "mssim": mssim(x, g, peak, per_band=True).tolist(),
        "fcc": fcc(x, pan, per_band=True).tolist(),
    }
    return MetricsReport(
        ergas=ergas(x, g, c),
        qave=float(np.nanmean(per_band["qave"])),
        rase=rase(x, g),
        sam_degrees=sam(x, g) if x.shape[0] >= 2 else 0.0,
        fcc=float(np.mean(per_band["fcc"])),
        psnr_db=psnr(x, g, peak),
        mssim=float(np.mean(per_band["mssim"])),
        rmse=rmse(x, g),
        per_band=per_band,
    )
