import numpy as np

from padkit.image_core import Image


def gray_image(rows) -> Image:
    """Grayscale Image from a nested list or 2-d array of 0-255 values."""
    arr = np.asarray(rows, dtype=np.uint8)
    return Image(arr[:, :, None])


def rgb_image(arr) -> Image:
    return Image(np.asarray(arr, dtype=np.uint8))


def fd_grad(f, x, h=1e-5):
    """Central finite differences of a scalar function over every coordinate."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def max_rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale))
