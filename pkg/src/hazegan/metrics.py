"""Full-reference (PSNR, SSIM) and no-reference (r, sigma, C) dehazing metrics.

Images are H x W x 3 float arrays in [0, 1]. The no-reference metrics
compare a dehazed output against the hazy input it came from:

* ``r``     geometric mean, over visible edges of the output, of the ratio of
            output to input gradient magnitude;
* ``sigma`` percentage of pixels saturated (any channel at 0 or 255 after
            8-bit quantization) in the output but not in the input;
* ``C``     mean local contrast (5x5 std / mean of luminance) of the output
            minus that of the input.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image

from . import kernels
from .data import from_net_tensor, read_image, to_net_tensor
from .errors import InvalidParameterError, ShapeError

log = logging.getLogger(__name__)

PSNR_CAP = 100.0
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
EDGE_THRESHOLD = 0.02
RATIO_EPS = 1e-6
CONTRAST_WINDOW = 5
CONTRAST_MEAN_FLOOR = 0.01

METRIC_NAMES = ("psnr", "ssim", "r", "sigma", "c_gain")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def luminance(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img @ LUMA_WEIGHTS


def psnr(reference, candidate):
    reference, candidate = _pair(reference, candidate)
    mse = np.mean((reference - candidate) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_kernel(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def ssim(reference, candidate):
    """Gaussian-window SSIM on BT.601 luminance, averaged over fully-inside windows."""
    reference, candidate = _pair(reference, candidate)
    x, y = luminance(reference), luminance(candidate)
    if min(x.shape) < SSIM_WINDOW:
        raise InvalidParameterError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    k = gaussian_kernel()
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mu_x = kernels.separable_valid(x, k)
    mu_y = kernels.separable_valid(y, k)
    sxx = kernels.separable_valid(x * x, k) - mu_x**2
    syy = kernels.separable_valid(y * y, k) - mu_y**2
    sxy = kernels.separable_valid(x * y, k) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class EdgeMask:
    mask: np.ndarray
    magnitude: np.ndarray


def visible_edges(image, threshold=EDGE_THRESHOLD):
    magnitude = kernels.sobel_magnitude(luminance(image))
    return EdgeMask(magnitude > threshold, magnitude)


class GradientRatio(NamedTuple):
    r: float
    n_edges: int

    @property
    def empty_mask(self):
        return self.n_edges == 0


def gradient_ratio_details(hazy, output, threshold=EDGE_THRESHOLD):
    hazy, output = _pair(hazy, output)
    edges = visible_edges(output, threshold)
    n = int(edges.mask.sum())
    if n == 0:
        return GradientRatio(1.0, 0)
    g_in = kernels.sobel_magnitude(luminance(hazy))[edges.mask]
    g_out = edges.magnitude[edges.mask]
    ratio = g_out / np.maximum(g_in, RATIO_EPS)
    return GradientRatio(float(np.exp(np.mean(np.log(ratio)))), n)


def gradient_ratio_r(hazy, output, threshold=EDGE_THRESHOLD):
    return gradient_ratio_details(hazy, output, threshold).r


def _saturated(img):
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0)
    return np.any((q == 0) | (q == 255), axis=-1)


def saturation_sigma(hazy, output):
    hazy, output = _pair(hazy, output)
    new = _saturated(output) & ~_saturated(hazy)
    return 100.0 * float(new.sum()) / new.size


def mean_local_contrast(img, window=CONTRAST_WINDOW):
    mu, sd = kernels.local_mean_std(luminance(img), window)
    return float(np.mean(sd / np.maximum(mu, CONTRAST_MEAN_FLOOR)))


def contrast_gain_c(hazy, output, window=CONTRAST_WINDOW):
    hazy, output = _pair(hazy, output)
    return mean_local_contrast(output, window) - mean_local_contrast(hazy, window)


# -------------------------------------------------------------- aggregation


def mean_std(values):
    """Exactly-rounded mean and sample std; a single value has std 0."""
    values = [float(v) for v in values]
    if not values:
        return float("nan"), float("nan")
    m = math.fsum(values) / len(values)
    if len(values) == 1:
        return m, 0.0
    var = math.fsum((v - m) ** 2 for v in values) / (len(values) - 1)
    return m, math.sqrt(var)


@dataclass
class MetricsReport:
    records: list
    method: str = "method"
    errors: list = field(default_factory=list)

    def column(self, name):
        return [r[name] for r in self.records if r.get(name) is not None]

    @property
    def aggregates(self):
        out = {}
        for name in METRIC_NAMES:
            col = self.column(name)
            if col:
                m, s = mean_std(col)
                out[name] = {"mean": m, "std": s, "count": len(col)}
        return out

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", *METRIC_NAMES])
            for r in self.records:
                w.writerow([r["id"], *(_fmt(r.get(k)) for k in METRIC_NAMES)])
            w.writerow([])
            for stat in ("mean", "std", "count"):
                agg = self.aggregates
                w.writerow([f"#{stat}", *(_fmt(agg[k][stat]) if k in agg else "" for k in METRIC_NAMES)])
            for err in self.errors:
                w.writerow([f"#error {err}"])
        return path


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def read_report_csv(path, method=None):
    records, errors = [], []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    for row in rows[1:]:
        if not row:
            continue
        if row[0].startswith("#error"):
            errors.append(row[0][len("#error ") :])
            continue
        if row[0].startswith("#"):
            continue
        rec = {"id": row[0]}
        for k, v in zip(header[1:], row[1:]):
            rec[k] = float(v) if v != "" else None
        records.append(rec)
    return MetricsReport(records, method or Path(path).stem, errors)


def image_metrics(hazy, output, reference=None):
    rec = {}
    if reference is not None:
        rec["psnr"] = psnr(reference, output)
        rec["ssim"] = ssim(reference, output)
    details = gradient_ratio_details(hazy, output)
    rec["r"] = details.r
    rec["r_empty_mask"] = details.empty_mask
    rec["sigma"] = saturation_sigma(hazy, output)
    rec["c_gain"] = contrast_gain_c(hazy, output)
    return rec


def _resize_to(img, shape):
    if img.shape[:2] == shape:
        return img
    # to_net_tensor resizes square; non-square outputs go through PIL
    if shape[0] == shape[1]:
        return from_net_tensor(to_net_tensor(img, shape[0]))
    arr = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    return np.asarray(Image.fromarray(arr).resize((shape[1], shape[0]), Image.BILINEAR), dtype=np.float64) / 255.0


def find_output(outputs_dir, pid):
    for ext in (".png", ".jpg", ".jpeg"):
        p = Path(outputs_dir) / f"{pid}{ext}"
        if p.is_file():
            return p
    return None


def evaluate_set(manifest, outputs_dir, method="method"):
    """Per-image metrics for every manifest entry with an output ``<id>.png`` in ``outputs_dir``.

    Hazy/clear images are bilinearly resized to the output's size when they
    differ (network outputs are produced at the training resolution).
    """
    records, errors = [], []
    for pair in manifest.pairs:
        out_path = find_output(outputs_dir, pair.id)
        if out_path is None:
            errors.append(f"{pair.id}: missing output")
            log.warning("%s: no output in %s", pair.id, outputs_dir)
            continue
        output = read_image(out_path)
        hazy = _resize_to(read_image(pair.hazy_path), output.shape[:2])
        reference = None
        if manifest.has_references and pair.clear_path is not None:
            reference = _resize_to(read_image(pair.clear_path), output.shape[:2])
        records.append({"id": pair.id, **image_metrics(hazy, output, reference)})
    if errors:
        log.warning("%d of %d entries missing; aggregates use %d", len(errors), len(manifest), len(records))
    return MetricsReport(records, method, errors)


_ROW_LABELS = {"psnr": "PSNR", "ssim": "SSIM", "r": "r", "sigma": "σ", "c_gain": "C"}
_DIGITS = {"psnr": 3, "ssim": 3, "r": 3, "sigma": 4, "c_gain": 4}


def markdown_table(reports, dataset="dataset"):
    """Metric rows x method columns, each cell ``mean±std``."""
    methods = [r.method for r in reports]
    aggs = [r.aggregates for r in reports]
    n = max((len(r.records) for r in reports), default=0)
    lines = [
        "| Dataset | Metric | " + " | ".join(methods) + " |",
        "|" + "---|" * (len(methods) + 2),
    ]
    first = True
    for name in METRIC_NAMES:
        if not any(name in a for a in aggs):
            continue
        cells = []
        for a in aggs:
            if name in a:
                d = _DIGITS[name]
                cells.append(f"{a[name]['mean']:.{d}f}±{a[name]['std']:.{d}f}")
            else:
                cells.append("")
        label = f"{dataset} ({n} images)" if first else ""
        first = False
        lines.append(f"| {label} | {_ROW_LABELS[name]} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
