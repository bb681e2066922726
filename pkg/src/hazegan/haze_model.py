"""Koschmieder atmospheric scattering model.

A hazy observation is a per-pixel blend of the scene radiance and the
airlight, weighted by the transmission ``t = exp(-k * depth)``::

    hazy = clear * t + airlight * (1 - t)

All arrays are float images normalized to [0, 1]; images are H x W x 3 and
depth / transmission maps are H x W.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, ShapeError

DEFAULT_T_FLOOR = 0.1


@dataclass(frozen=True)
class HazeParams:
    k: float
    airlight: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        k = float(self.k)
        if not np.isfinite(k) or k < 0:
            raise InvalidParameterError(f"extinction coefficient must be >= 0, got {self.k}")
        airlight = tuple(float(a) for a in as_airlight(self.airlight))
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "airlight", airlight)


def as_airlight(airlight):
    """Broadcast a scalar or 3-vector airlight to a validated float 3-vector."""
    a = np.asarray(airlight, dtype=np.float64)
    if a.ndim == 0:
        a = np.repeat(a, 3)
    if a.shape != (3,):
        raise InvalidParameterError(f"airlight must be a scalar or 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a < 0) or np.any(a > 1):
        raise InvalidParameterError(f"airlight channels must lie in [0, 1], got {a.tolist()}")
    return a


def _check_image(img, name):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeError(f"{name} must be H x W x 3, got shape {img.shape}")
    return img


def transmission(depth, k):
    """Elementwise ``exp(-k * depth)``."""
    depth = np.asarray(depth, dtype=np.float64)
    k = float(k)
    if not np.isfinite(k) or k < 0:
        raise InvalidParameterError(f"extinction coefficient must be >= 0, got {k}")
    if not np.all(np.isfinite(depth)):
        raise InvalidParameterError("depth map contains non-finite entries")
    if np.any(depth < 0):
        raise InvalidParameterError("depth map contains negative entries")
    return np.exp(-k * depth)


def synthesize_haze(clear, depth, params):
    """Render haze over ``clear`` using ``depth`` and :class:`HazeParams`."""
    clear = _check_image(clear, "clear image")
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != clear.shape[:2]:
        raise ShapeError(f"depth shape {depth.shape} does not match image {clear.shape[:2]}")
    t = transmission(depth, params.k)[..., None]
    airlight = np.asarray(params.airlight, dtype=np.float64)
    hazy = clear * t + airlight * (1.0 - t)
    return np.clip(hazy, 0.0, 1.0)


def restore_with_transmission(hazy, t, airlight, t_floor=DEFAULT_T_FLOOR):
    """Invert the scattering model given transmission and airlight.

    The transmission is floored at ``t_floor`` before dividing, which caps the
    amplification of noise at ``1 / t_floor``.
    """
    t_floor = float(t_floor)
    if not (0 < t_floor <= 1):
        raise InvalidParameterError(f"t_floor must lie in (0, 1], got {t_floor}")
    hazy = _check_image(hazy, "hazy image")
    t = np.asarray(t, dtype=np.float64)
    if t.shape != hazy.shape[:2]:
        raise ShapeError(f"transmission shape {t.shape} does not match image {hazy.shape[:2]}")
    a = as_airlight(airlight)
    clear = (hazy - a) / np.maximum(t, t_floor)[..., None] + a
    return np.clip(clear, 0.0, 1.0)
