"""Hot 2-D image kernels used by the metrics and the dark-channel baseline.

Every public function dispatches to a numba loop kernel or to a vectorized
numpy equivalent depending on :func:`hazegan._accel.get_backend`. Inputs are
2-D float arrays; outputs are float64.
"""
import numpy as np
from scipy import ndimage

from . import _accel
from ._accel import njit, prange

# Sobel taps scaled by 1/2: a ramp of slope s per pixel responds with 4*s.
SOBEL_SCALE = 0.5


def _as2d(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {x.shape}")
    return x


# ---------------------------------------------------------------- min filter


@njit(cache=True, parallel=True)
def _min_filter_nb(x, size):
    h, w = x.shape
    r = size // 2
    tmp = np.empty((h, w))
    out = np.empty((h, w))
    for i in prange(h):
        for j in range(w):
            m = np.inf
            for dj in range(-r, r + 1):
                jj = min(max(j + dj, 0), w - 1)
                v = x[i, jj]
                if v < m:
                    m = v
            tmp[i, j] = m
    for i in prange(h):
        for j in range(w):
            m = np.inf
            for di in range(-r, r + 1):
                ii = min(max(i + di, 0), h - 1)
                v = tmp[ii, j]
                if v < m:
                    m = v
            out[i, j] = m
    return out


def _min_filter_np(x, size):
    return ndimage.minimum_filter(x, size=size, mode="nearest")


def min_filter(x, size):
    """Square min filter with edge-replicated borders."""
    x = _as2d(x)
    if _accel.get_backend() == "numba":
        return _min_filter_nb(x, int(size))
    return _min_filter_np(x, int(size))


# ------------------------------------------------------- clipped box average


@njit(cache=True)
def _box_mean_nb(x, radius):
    h, w = x.shape
    integral = np.zeros((h + 1, w + 1))
    for i in range(h):
        acc = 0.0
        for j in range(w):
            acc += x[i, j]
            integral[i + 1, j + 1] = integral[i, j + 1] + acc
    out = np.empty((h, w))
    for i in range(h):
        i0 = max(i - radius, 0)
        i1 = min(i + radius + 1, h)
        for j in range(w):
            j0 = max(j - radius, 0)
            j1 = min(j + radius + 1, w)
            s = integral[i1, j1] - integral[i0, j1] - integral[i1, j0] + integral[i0, j0]
            out[i, j] = s / ((i1 - i0) * (j1 - j0))
    return out


def _box_mean_np(x, radius):
    h, w = x.shape
    integral = np.zeros((h + 1, w + 1))
    integral[1:, 1:] = x.cumsum(0).cumsum(1)
    rows = np.arange(h)
    cols = np.arange(w)
    i0 = np.clip(rows - radius, 0, h)[:, None]
    i1 = np.clip(rows + radius + 1, 0, h)[:, None]
    j0 = np.clip(cols - radius, 0, w)[None, :]
    j1 = np.clip(cols + radius + 1, 0, w)[None, :]
    s = integral[i1, j1] - integral[i0, j1] - integral[i1, j0] + integral[i0, j0]
    return s / ((i1 - i0) * (j1 - j0))


def box_mean(x, radius):
    """Mean over the in-bounds part of each (2r+1)x(2r+1) window.

    Windows are truncated at the border and normalized by the number of
    pixels actually covered, so a radius larger than the image degenerates to
    the global mean.
    """
    x = _as2d(x)
    if _accel.get_backend() == "numba":
        return _box_mean_nb(x, int(radius))
    return _box_mean_np(x, int(radius))


# ---------------------------------------------------------------------- Sobel


@njit(cache=True, parallel=True)
def _sobel_nb(y, scale):
    h, w = y.shape
    gx = np.empty((h, w))
    gy = np.empty((h, w))
    for i in prange(h):
        im = max(i - 1, 0)
        ip = min(i + 1, h - 1)
        for j in range(w):
            jm = max(j - 1, 0)
            jp = min(j + 1, w - 1)
            dx = (y[im, jp] - y[im, jm]) + 2.0 * (y[i, jp] - y[i, jm]) + (y[ip, jp] - y[ip, jm])
            dy = (y[ip, jm] - y[im, jm]) + 2.0 * (y[ip, j] - y[im, j]) + (y[ip, jp] - y[im, jp])
            gx[i, j] = scale * dx
            gy[i, j] = scale * dy
    return gx, gy


def _sobel_np(y, scale):
    p = np.pad(y, 1, mode="edge")
    dx = p[:, 2:] - p[:, :-2]
    dy = p[2:, :] - p[:-2, :]
    gx = dx[:-2, :] + 2.0 * dx[1:-1, :] + dx[2:, :]
    gy = dy[:, :-2] + 2.0 * dy[:, 1:-1] + dy[:, 2:]
    return scale * gx, scale * gy


def sobel(y, scale=SOBEL_SCALE):
    """Horizontal and vertical Sobel responses with edge-replicated borders."""
    y = _as2d(y)
    if _accel.get_backend() == "numba":
        return _sobel_nb(y, float(scale))
    return _sobel_np(y, float(scale))


def sobel_magnitude(y, scale=SOBEL_SCALE):
    gx, gy = sobel(y, scale)
    return np.sqrt(gx * gx + gy * gy)


# ----------------------------------------------------- separable valid filter


@njit(cache=True, parallel=True)
def _separable_valid_nb(x, k):
    h, w = x.shape
    n = k.shape[0]
    ho = h - n + 1
    wo = w - n + 1
    tmp = np.empty((h, wo))
    for i in prange(h):
        for j in range(wo):
            acc = 0.0
            for t in range(n):
                acc += k[t] * x[i, j + t]
            tmp[i, j] = acc
    out = np.empty((ho, wo))
    for i in prange(ho):
        for j in range(wo):
            acc = 0.0
            for t in range(n):
                acc += k[t] * tmp[i + t, j]
            out[i, j] = acc
    return out


def _separable_valid_np(x, k):
    n = k.shape[0]
    wo = x.shape[1] - n + 1
    ho = x.shape[0] - n + 1
    tmp = sum(k[t] * x[:, t : t + wo] for t in range(n))
    return sum(k[t] * tmp[t : t + ho, :] for t in range(n))


def separable_valid(x, kernel1d):
    """Correlate with the outer product ``k k^T`` at fully-inside positions only."""
    x = _as2d(x)
    k = np.ascontiguousarray(kernel1d, dtype=np.float64)
    if x.shape[0] < k.shape[0] or x.shape[1] < k.shape[0]:
        raise ValueError("image smaller than the filter window")
    if _accel.get_backend() == "numba":
        return _separable_valid_nb(x, k)
    return _separable_valid_np(x, k)


# ------------------------------------------------------ local mean and std


@njit(cache=True, parallel=True)
def _local_mean_std_nb(y, size):
    h, w = y.shape
    r = size // 2
    n = size * size
    mean = np.empty((h, w))
    std = np.empty((h, w))
    for i in prange(h):
        for j in range(w):
            acc = 0.0
            for di in range(-r, r + 1):
                ii = min(max(i + di, 0), h - 1)
                for dj in range(-r, r + 1):
                    jj = min(max(j + dj, 0), w - 1)
                    acc += y[ii, jj]
            mu = acc / n
            acc = 0.0
            for di in range(-r, r + 1):
                ii = min(max(i + di, 0), h - 1)
                for dj in range(-r, r + 1):
                    jj = min(max(j + dj, 0), w - 1)
                    d = y[ii, jj] - mu
                    acc += d * d
            mean[i, j] = mu
            std[i, j] = np.sqrt(acc / n)
    return mean, std


def _local_mean_std_np(y, size):
    h, w = y.shape
    r = size // 2
    p = np.pad(y, r, mode="edge")
    taps = [p[di : di + h, dj : dj + w] for di in range(size) for dj in range(size)]
    mean = sum(taps) / len(taps)
    var = sum((t - mean) ** 2 for t in taps) / len(taps)
    return mean, np.sqrt(var)


def local_mean_std(y, size=5):
    """Windowed mean and population std, edge-replicated borders."""
    y = _as2d(y)
    if size < 1 or size % 2 == 0:
        raise ValueError("window size must be a positive odd integer")
    if _accel.get_backend() == "numba":
        return _local_mean_std_nb(y, int(size))
    return _local_mean_std_np(y, int(size))
