"""Slow, loop-based reference implementations used only by the tests.

Everything here is written from the defining formulas with explicit Python
loops and shares no code with the package.
"""

import math

import numpy as np


def grad_loop(x):
    s, m, n = x.shape
    d1 = np.zeros_like(x)
    d2 = np.zeros_like(x)
    for b in range(s):
        for i in range(m):
            for j in range(n):
                if i < m - 1:
                    d1[b, i, j] = x[b, i + 1, j] - x[b, i, j]
                if j < n - 1:
                    d2[b, i, j] = x[b, i, j + 1] - x[b, i, j]
    return d1, d2


def difference_matrix(m, n):
    """Dense (2mn, mn) matrix G with G @ vec(x) = [vec(d1); vec(d2)] for one band."""
    g = np.zeros((2 * m * n, m * n))
    idx = lambda i, j: i * n + j
    for i in range(m):
        for j in range(n):
            if i < m - 1:
                g[idx(i, j), idx(i + 1, j)] = 1.0
                g[idx(i, j), idx(i, j)] = -1.0
            if j < n - 1:
                g[m * n + idx(i, j), idx(i, j + 1)] = 1.0
                g[m * n + idx(i, j), idx(i, j)] = -1.0
    return g


def l_op_matrix(r, s):
    """Apply L = -G^T band by band using the assembled matrix."""
    bands, m, n = r.shape
    g = difference_matrix(m, n)
    out = np.empty_like(r)
    for b in range(bands):
        out[b] = (-g.T @ np.concatenate([r[b].ravel(), s[b].ravel()])).reshape(m, n)
    return out


def group_norm_loop(d1, d2):
    s, m, n = d1.shape
    total = 0.0
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for b in range(s):
                acc += d1[b, i, j] ** 2 + d2[b, i, j] ** 2
            total += math.sqrt(acc)
    return total


def vtv_objective_loop(x, y, pw, lam):
    fid = 0.0
    for v in (x - y).ravel():
        fid += v * v
    d1, d2 = grad_loop(x - pw)
    return 0.5 * fid + lam * group_norm_loop(d1, d2)


def cubic(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


def resample_1d(v, n_out, antialias=True):
    """Centre-aligned bicubic resampling of a 1-D signal with replicated edges."""
    n_in = len(v)
    scale = n_in / n_out
    stretch = scale if (antialias and scale > 1) else 1.0
    out = np.zeros(n_out)
    for k in range(n_out):
        pos = (k + 0.5) * scale - 0.5
        lo = math.floor(pos - 2 * stretch)
        hi = math.ceil(pos + 2 * stretch)
        wsum = 0.0
        acc = 0.0
        for q in range(lo, hi + 1):
            w = cubic((pos - q) / stretch)
            acc += w * v[min(max(q, 0), n_in - 1)]
            wsum += w
        out[k] = acc / wsum
    return out


def resample_2d(x, m_out, n_out, antialias=True):
    s, m, n = x.shape
    tmp = np.zeros((s, m_out, n))
    for b in range(s):
        for j in range(n):
            tmp[b, :, j] = resample_1d(x[b, :, j], m_out, antialias)
    out = np.zeros((s, m_out, n_out))
    for b in range(s):
        for i in range(m_out):
            out[b, i, :] = resample_1d(tmp[b, i, :], n_out, antialias)
    return out


def bilinear_loop(img, sx, sy, fill="zero"):
    """Sample a 2-D image at one point; returns (value, inside)."""
    m, n = img.shape
    inside = -1e-9 <= sx <= n - 1 + 1e-9 and -1e-9 <= sy <= m - 1 + 1e-9
    if not inside and fill == "zero":
        return 0.0, False
    cx = min(max(sx, 0.0), n - 1)
    cy = min(max(sy, 0.0), m - 1)
    x0 = min(int(math.floor(cx)), n - 2)
    y0 = min(int(math.floor(cy)), m - 2)
    fx, fy = cx - x0, cy - y0
    val = (
        (1 - fx) * (1 - fy) * img[y0, x0]
        + fx * (1 - fy) * img[y0, x0 + 1]
        + (1 - fx) * fy * img[y0 + 1, x0]
        + fx * fy * img[y0 + 1, x0 + 1]
    )
    return val, inside


def affine_of(kind, theta):
    if kind == "translation":
        return np.array([[1.0, 0.0, theta[0]], [0.0, 1.0, theta[1]]])
    return np.asarray(theta, dtype=np.float64).reshape(2, 3)


def warp_loop(p2d, kind, theta, fill="zero"):
    a = affine_of(kind, theta)
    m, n = p2d.shape
    out = np.zeros((m, n))
    inside = np.zeros((m, n), dtype=bool)
    for i in range(m):
        for j in range(n):
            sx = a[0, 0] * j + a[0, 1] * i + a[0, 2]
            sy = a[1, 0] * j + a[1, 1] * i + a[1, 2]
            out[i, j], inside[i, j] = bilinear_loop(p2d, sx, sy, fill)
    return out, inside


def dgs_energy_loop(x, p2d, kind, theta, eps):
    """Energy over pixels whose value and forward neighbours lie in the overlap."""
    w, inside = warp_loop(p2d, kind, theta)
    s, m, n = x.shape
    total = 0.0
    count = 0
    for i in range(m):
        for j in range(n):
            if not inside[i, j]:
                continue
            if i < m - 1 and not inside[i + 1, j]:
                continue
            if j < n - 1 and not inside[i, j + 1]:
                continue
            acc = 0.0
            for b in range(s):
                r1 = (x[b, i + 1, j] - x[b, i, j] if i < m - 1 else 0.0) - (w[i + 1, j] - w[i, j] if i < m - 1 else 0.0)
                r2 = (x[b, i, j + 1] - x[b, i, j] if j < n - 1 else 0.0) - (w[i, j + 1] - w[i, j] if j < n - 1 else 0.0)
                acc += r1 * r1 + r2 * r2
            total += math.sqrt(acc + eps)
            count += 1
    return total, count


def sirf_objective_loop(x, kind, theta, ms, p2d, lam, c, antialias=True):
    s, m, n = x.shape
    psi = resample_2d(x, m // c, n // c, antialias)
    data = 0.5 * float(np.sum((psi - ms) ** 2))
    w, _ = warp_loop(p2d, kind, theta, fill="edge")
    ref = np.repeat(w[np.newaxis], s, axis=0)
    d1, d2 = grad_loop(x - ref)
    return data + lam * group_norm_loop(d1, d2)


def q_index_loop(a, b):
    n = a.size
    ma = a.sum() / n
    mb = b.sum() / n
    va = ((a - ma) ** 2).sum() / n
    vb = ((b - mb) ** 2).sum() / n
    cov = ((a - ma) * (b - mb)).sum() / n
    return 4 * cov * ma * mb / ((va + vb) * (ma * ma + mb * mb))


def qave_loop(x, g, w=8):
    vals = []
    for b in range(x.shape[0]):
        qs = []
        for i in range(x.shape[1] - w + 1):
            for j in range(x.shape[2] - w + 1):
                qs.append(q_index_loop(x[b, i:i + w, j:j + w], g[b, i:i + w, j:j + w]))
        vals.append(np.mean(qs))
    return float(np.mean(vals))


def ssim_loop(a, b, peak=255.0, size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2
    k = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(k, k)
    w /= w.sum()
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    vals = []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa = a[i:i + size, j:j + size]
            pb = b[i:i + size, j:j + size]
            mu_a, mu_b = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - mu_a) ** 2).sum()
            vb = (w * (pb - mu_b) ** 2).sum()
            cov = (w * (pa - mu_a) * (pb - mu_b)).sum()
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def laplacian_loop(img):
    m, n = img.shape
    out = np.zeros((m - 2, n - 2))
    for i in range(1, m - 1):
        for j in range(1, n - 1):
            out[i - 1, j - 1] = 8 * img[i, j] - (img[i - 1:i + 2, j - 1:j + 2].sum() - img[i, j])
    return out


def fcc_loop(x, p2d):
    hp = laplacian_loop(p2d).ravel()
    vals = []
    for b in range(x.shape[0]):
        hb = laplacian_loop(x[b]).ravel()
        vals.append(np.corrcoef(hb, hp)[0, 1])
    return float(np.mean(vals))
