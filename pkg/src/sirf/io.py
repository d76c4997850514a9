"""Reading and writing band-major float images.

Three formats are understood, chosen by file suffix:

* ``.mbf``: "MBF1" magic, little-endian u32 ``m, n, s``, then ``m*n*s``
  little-endian float64 values, band-major. Lossless.
* ``.png``: 8 or 16 bit, 1 to 4 channels.
* ``.tif`` / ``.tiff``: 8 or 16 bit integers, or 32/64 bit floats.

Integer pixels are read as their raw counts (0..255 or 0..65535). On write
values are clamped to that range and rounded half away from zero.
"""

import struct
from pathlib import Path

import numpy as np
import png
import tifffile

MAGIC = b"MBF1"
HEADER = struct.Struct("<4sIII")
PNG_SUFFIXES = (".png",)
TIFF_SUFFIXES = (".tif", ".tiff")
MBF_SUFFIXES = (".mbf", ".mbf1")


class ImageFormatError(ValueError):
    """Unknown suffix, malformed header, or data a format cannot hold."""


def _kind(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in MBF_SUFFIXES:
        return "mbf"
    if suffix in PNG_SUFFIXES:
        return "png"
    if suffix in TIFF_SUFFIXES:
        return "tiff"
    raise ImageFormatError(f"{path}: unknown image format {suffix!r} (use .mbf, .png, .tif or .tiff)")


def _as_bands(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[np.newaxis]
    if x.ndim != 3 or x.shape[0] < 1:
        raise ImageFormatError(f"expected a (bands, rows, cols) array, got shape {x.shape}")
    return x


def round_half_away(x) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(x, bitdepth: int) -> np.ndarray:
    """Clamp to the integer range of ``bitdepth`` and round half away from zero."""
    if bitdepth not in (8, 16):
        raise ImageFormatError(f"integer bit depth must be 8 or 16, got {bitdepth}")
    top = (1 << bitdepth) - 1
    q = round_half_away(np.clip(np.asarray(x, dtype=np.float64), 0.0, top))
    return q.astype(np.uint8 if bitdepth == 8 else np.uint16)


# --- MBF1 -----------------------------------------------------------------


def save_mbf(x, path) -> None:
    x = _as_bands(x).astype("<f8", copy=False)
    s, m, n = x.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, m, n, s))
        fh.write(np.ascontiguousarray(x).tobytes())


def load_mbf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise ImageFormatError(f"{path}: file too short for an MBF1 header ({len(raw)} bytes)")
    magic, m, n, s = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ImageFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    expected = HEADER.size + 8 * m * n * s
    if len(raw) != expected:
        raise ImageFormatError(f"{path}: header says {s}x{m}x{n} ({expected} bytes) but file has {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=HEADER.size)
    return data.reshape(s, m, n).astype(np.float64)


# --- PNG ------------------------------------------------------------------


def save_png(x, path, bitdepth: int = 8) -> None:
    x = _as_bands(x)
    s, m, n = x.shape
    if s > 4:
        raise ImageFormatError(f"PNG holds at most 4 channels, image has {s} bands")
    q = quantize(x, bitdepth)
    rows = np.moveaxis(q, 0, -1).reshape(m, n * s)
    writer = png.Writer(width=n, height=m, greyscale=s <= 2, alpha=s in (2, 4), bitdepth=bitdepth)
    with open(path, "wb") as fh:
        writer.write(fh, rows.tolist())


def load_png(path) -> np.ndarray:
    try:
        width, height, rows, info = png.Reader(filename=str(path)).asDirect()
        data = np.vstack([np.asarray(r, dtype=np.float64) for r in rows])
    except png.Error as exc:
        raise ImageFormatError(f"{path}: cannot decode PNG ({exc})") from exc
    planes = info["planes"]
    return np.moveaxis(data.reshape(height, width, planes), -1, 0).copy()


# --- TIFF -----------------------------------------------------------------


def save_tiff(x, path, bitdepth: int | str = 16) -> None:
    """``bitdepth`` is 8, 16, or "float" for a lossless float64 file."""
    x = _as_bands(x)
    if bitdepth == "float":
        data = x.astype(np.float64)
    else:
        data = quantize(x, int(bitdepth))
    tifffile.imwrite(path, data, photometric="minisblack", planarconfig="separate")


def load_tiff(path) -> np.ndarray:
    try:
        data = tifffile.imread(path)
    except (tifffile.TiffFileError, ValueError) as exc:
        raise ImageFormatError(f"{path}: cannot decode TIFF ({exc})") from exc
    if data.ndim == 3 and data.shape[-1] <= 4 < data.shape[0]:
        data = np.moveaxis(data, -1, 0)  # interleaved samples
    if data.ndim not in (2, 3):
        raise ImageFormatError(f"{path}: unsupported TIFF layout with shape {data.shape}")
    return _as_bands(data).astype(np.float64)


def load_image(path) -> np.ndarray:
    """Read ``path`` into a float64 (bands, rows, cols) array."""
    if not Path(path).is_file():
        raise FileNotFoundError(f"{path}: no such file")
    return {"mbf": load_mbf, "png": load_png, "tiff": load_tiff}[_kind(path)](path)


def save_image(x, path, bitdepth=None) -> None:
    kind = _kind(path)
    if kind == "mbf":
        save_mbf(x, path)
    elif kind == "png":
        save_png(x, path, bitdepth or 8)
    else:
        save_tiff(x, path, bitdepth or 16)


def rgb_view(x, bands=(0, 1, 2)) -> np.ndarray:
    """The three display bands of a multi-band image (unchanged below 4 bands)."""
    x = _as_bands(x)
    if x.shape[0] < 4:
        return x
    bands = tuple(bands)
    if len(bands) != 3 or not all(0 <= b < x.shape[0] for b in bands):
        raise ValueError(f"need three band indices in [0, {x.shape[0]}), got {bands}")
    return x[list(bands)]
