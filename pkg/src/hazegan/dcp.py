"""Dark channel prior dehazing with guided-filter refinement.

Pipeline: dark channel -> airlight from the brightest dark-channel pixels ->
coarse transmission ``1 - omega * dark(I / A)`` -> guided filter with the
hazy luminance as guide -> inversion of the scattering model.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidParameterError, ShapeError
from .haze_model import restore_with_transmission
from .metrics import LUMA_WEIGHTS, luminance

RAW_T_FLOOR = 1e-3
MIN_AIRLIGHT = 0.05


@dataclass(frozen=True)
class DcpParams:
    patch_size: int = 15
    omega: float = 0.95
    airlight_fraction: float = 0.001
    t_floor: float = 0.1
    guided_radius: int = 40
    guided_eps: float = 1e-3

    def __post_init__(self):
        _check_patch(self.patch_size)
        if not (0 < self.omega <= 1):
            raise InvalidParameterError(f"omega must lie in (0, 1], got {self.omega}")
        if not (0 < self.airlight_fraction <= 1):
            raise InvalidParameterError(f"airlight_fraction must lie in (0, 1], got {self.airlight_fraction}")
        if not (0 < self.t_floor <= 1):
            raise InvalidParameterError(f"t_floor must lie in (0, 1], got {self.t_floor}")
        if self.guided_radius < 1 or self.guided_eps <= 0:
            raise InvalidParameterError("guided filter needs radius >= 1 and eps > 0")


def _check_patch(patch_size):
    if int(patch_size) != patch_size or patch_size < 3 or patch_size % 2 == 0:
        raise InvalidParameterError(f"patch_size must be an odd integer >= 3, got {patch_size}")


def _image(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected H x W x 3 image, got {img.shape}")
    return img


def dark_channel(image, patch_size=15):
    _check_patch(patch_size)
    return kernels.min_filter(_image(image).min(axis=2), patch_size)


def estimate_airlight(image, dark, airlight_fraction=0.001):
    """Colour of the most luminous pixel among the top ``fraction`` of the dark channel."""
    if not (0 < airlight_fraction <= 1):
        raise InvalidParameterError(f"airlight_fraction must lie in (0, 1], got {airlight_fraction}")
    image = _image(image)
    flat_dark = np.asarray(dark, dtype=np.float64).ravel()
    n = max(1, int(np.floor(flat_dark.size * airlight_fraction)))
    candidates = np.argsort(-flat_dark, kind="stable")[:n]
    pixels = image.reshape(-1, 3)
    best = candidates[np.argmax(pixels[candidates] @ LUMA_WEIGHTS)]
    return pixels[best].copy()


def estimate_transmission(image, airlight, omega=0.95, patch_size=15):
    airlight = np.asarray(airlight, dtype=np.float64)
    if np.any(airlight <= MIN_AIRLIGHT):
        raise InvalidParameterError(f"airlight {airlight.tolist()} too dark to normalize by")
    t = 1.0 - omega * dark_channel(_image(image) / airlight, patch_size)
    return np.clip(t, RAW_T_FLOOR, 1.0)


def guided_filter(p, guide, radius, eps):
    """Grey-guide guided filter with border-truncated box means."""
    I = np.asarray(guide, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    mean_I = kernels.box_mean(I, radius)
    mean_p = kernels.box_mean(p, radius)
    cov_Ip = kernels.box_mean(I * p, radius) - mean_I * mean_p
    var_I = kernels.box_mean(I * I, radius) - mean_I * mean_I
    a = cov_Ip / (var_I + eps)
    b = mean_p - a * mean_I
    return kernels.box_mean(a, radius) * I + kernels.box_mean(b, radius)


def refine_transmission(t, guide, radius=40, eps=1e-3):
    t = np.asarray(t, dtype=np.float64)
    guide = np.asarray(guide, dtype=np.float64)
    if guide.ndim == 3:
        guide = luminance(guide)
    if guide.shape != t.shape:
        raise ShapeError(f"guide {guide.shape} and transmission {t.shape} differ")
    return np.clip(guided_filter(t, guide, radius, eps), RAW_T_FLOOR, 1.0)


def dcp_dehaze(image, params=None, return_maps=False):
    params = params or DcpParams()
    image = _image(image)
    dark = dark_channel(image, params.patch_size)
    airlight = np.maximum(estimate_airlight(image, dark, params.airlight_fraction), MIN_AIRLIGHT + 1e-3)
    raw = estimate_transmission(image, airlight, params.omega, params.patch_size)
    t = refine_transmission(raw, image, params.guided_radius, params.guided_eps)
    out = restore_with_transmission(image, t, airlight, params.t_floor)
    if return_maps:
        return out, {"dark": dark, "airlight": airlight, "raw_transmission": raw, "transmission": t}
    return out
