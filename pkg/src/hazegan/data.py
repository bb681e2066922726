"""Dataset ingestion, deterministic splitting, tensor conversion and synthetic data.

Two on-disk layouts are understood:

* ``dirs``:   ``<root>/hazy/<stem>.png`` paired with ``<root>/clear/<stem>.png``
* ``suffix``: ``<root>/<stem>_hazy.png`` paired with ``<root>/<stem>_gt.png``

A manifest can also be persisted as JSON; paths inside it are relative to
the JSON file's directory.
"""
import colorsys
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import DataError, EmptyDatasetError, InvalidParameterError
from .haze_model import HazeParams, synthesize_haze

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
NET_SIZE = 256
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class ImagePair:
    id: str
    hazy_path: Path
    clear_path: Path = None
    meta: dict = field(default_factory=dict, compare=False)


@dataclass
class DatasetManifest:
    pairs: list
    source_name: str = "dataset"
    has_references: bool = True
    diagnostics: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        self.pairs = sorted(self.pairs, key=lambda p: p.id)
        ids = [p.id for p in self.pairs]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate ids in manifest")

    def __len__(self):
        return len(self.pairs)

    @property
    def ids(self):
        return [p.id for p in self.pairs]

    def subset(self, ids, source_name=None):
        wanted = set(ids)
        return DatasetManifest(
            [p for p in self.pairs if p.id in wanted],
            source_name or self.source_name,
            self.has_references,
        )


@dataclass
class SplitResult:
    train: DatasetManifest
    test: DatasetManifest
    seed: int
    ratio: float


# ----------------------------------------------------------------- image I/O


def read_image(path):
    """Decode an image file to an H x W x 3 float64 array in [0, 1]."""
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode != "RGB":
                log.warning("%s: converting mode %s to RGB", path, mode)
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return arr.astype(np.float64) / 255.0


def quantize(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, img):
    """Write a [0, 1] float image (or uint8 array) as an 8-bit RGB file."""
    arr = img if np.asarray(img).dtype == np.uint8 else quantize(np.asarray(img))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path)


def _image_size(path):
    try:
        with Image.open(path) as im:
            return im.size
    except (UnidentifiedImageError, OSError):
        return None


def _list_images(directory):
    return sorted(
        p for p in Path(directory).iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    )


# ------------------------------------------------------------------ manifests


def load_manifest(root, layout="auto", source_name=None):
    """Scan ``root`` for hazy/clear pairs.

    Undecodable files and size-mismatched pairs are skipped; each skip is
    logged and recorded in ``manifest.diagnostics``. Hazy images without a
    clear counterpart are kept only when the dataset has no references at all.
    """
    root = Path(root)
    if root.is_file() and root.suffix == ".json":
        return read_manifest(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    if layout == "auto":
        layout = "dirs" if (root / "hazy").is_dir() else "suffix"

    if layout == "dirs":
        hazy = {p.stem: p for p in _list_images(root / "hazy")}
        clear_dir = root / "clear"
        clear = {p.stem: p for p in _list_images(clear_dir)} if clear_dir.is_dir() else {}
    elif layout == "suffix":
        hazy, clear = {}, {}
        for p in _list_images(root):
            if p.stem.endswith("_hazy"):
                hazy[p.stem[: -len("_hazy")]] = p
            elif p.stem.endswith("_gt"):
                clear[p.stem[: -len("_gt")]] = p
    else:
        raise InvalidParameterError(f"unknown layout {layout!r}")

    if not hazy:
        raise EmptyDatasetError(f"no hazy images found under {root}")

    has_references = bool(clear)
    diagnostics, pairs = [], []
    for stem in sorted(hazy):
        hazy_size = _image_size(hazy[stem])
        if hazy_size is None:
            diagnostics.append(f"{stem}: undecodable hazy image {hazy[stem]}")
            continue
        clear_path = clear.get(stem)
        if has_references:
            if clear_path is None:
                diagnostics.append(f"{stem}: no matching clear image")
                continue
            clear_size = _image_size(clear_path)
            if clear_size is None:
                diagnostics.append(f"{stem}: undecodable clear image {clear_path}")
                continue
            if clear_size != hazy_size:
                diagnostics.append(f"{stem}: size mismatch hazy {hazy_size} vs clear {clear_size}")
                continue
        pairs.append(ImagePair(stem, hazy[stem], clear_path))
    for msg in diagnostics:
        log.warning(msg)
    if not pairs:
        raise EmptyDatasetError(f"no usable pairs under {root}")
    return DatasetManifest(pairs, source_name or root.name, has_references, diagnostics)


def save_manifest(manifest, path):
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        return None if p is None else os.path.relpath(Path(p).resolve(), base)

    doc = {
        "version": MANIFEST_VERSION,
        "source_name": manifest.source_name,
        "has_references": manifest.has_references,
        "pairs": [
            {"id": p.id, "hazy": rel(p.hazy_path), "clear": rel(p.clear_path), **p.meta}
            for p in manifest.pairs
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def read_manifest(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    base = path.parent
    pairs = []
    for entry in doc.get("pairs", []):
        entry = dict(entry)
        pid, hazy, clear = entry.pop("id"), entry.pop("hazy"), entry.pop("clear", None)
        pairs.append(ImagePair(pid, base / hazy, None if clear is None else base / clear, entry))
    if not pairs:
        raise EmptyDatasetError(f"manifest {path} lists no pairs")
    return DatasetManifest(pairs, doc.get("source_name", path.stem), bool(doc.get("has_references", True)))


def open_dataset(path, layout="auto"):
    """Accept either a manifest JSON file or a dataset directory."""
    path = Path(path)
    if path.is_dir() and (path / "manifest.json").is_file():
        return read_manifest(path / "manifest.json")
    return load_manifest(path, layout)


# ---------------------------------------------------------------------- split


def split_size(n, test_ratio):
    """Half-up rounding of ``test_ratio * n``."""
    return int(math.floor(test_ratio * n + 0.5))


def split(manifest, test_ratio=0.2, seed=0):
    """Seeded shuffle of the sorted ids, then a test/train partition."""
    test_ratio = float(test_ratio)
    if not (0.0 < test_ratio < 1.0):
        raise InvalidParameterError(f"test_ratio must lie in (0, 1), got {test_ratio}")
    if len(manifest) == 0:
        raise EmptyDatasetError("cannot split an empty manifest")
    ids = sorted(manifest.ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    n_test = split_size(len(ids), test_ratio)
    test_ids = [ids[i] for i in order[:n_test]]
    train_ids = [ids[i] for i in order[n_test:]]
    return SplitResult(
        manifest.subset(train_ids, f"{manifest.source_name}-train"),
        manifest.subset(test_ids, f"{manifest.source_name}-test"),
        seed,
        test_ratio,
    )


# --------------------------------------------------------- network tensors


def _resize_chw(t, size):
    if t.shape[-2:] == (size, size):
        return t
    return F.interpolate(t[None], size=(size, size), mode="bilinear", align_corners=False, antialias=True)[0]


def to_net_tensor(image, size=NET_SIZE):
    """Image (path or H x W x 3 array in [0, 1]) -> 3 x size x size float32 in [-1, 1]."""
    if isinstance(image, (str, Path)):
        image = read_image(image)
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 2:
        log.warning("grayscale input replicated to 3 channels")
        arr = np.repeat(arr[..., None], 3, axis=2)
    elif arr.shape[2] == 4:
        log.warning("alpha channel dropped")
        arr = arr[..., :3]
    t = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))
    t = _resize_chw(t, size).clamp(0.0, 1.0)
    return t * 2.0 - 1.0


def from_net_tensor(t):
    """3 x H x W tensor in [-1, 1] -> H x W x 3 float64 array in [0, 1]."""
    t = t.detach().to("cpu", torch.float64)
    if t.ndim == 4 and t.shape[0] == 1:
        t = t[0]
    return ((t + 1.0) / 2.0).clamp(0.0, 1.0).permute(1, 2, 0).numpy()


class PairTensors:
    """Whole dataset resident in memory as uint8 tensors at network size."""

    def __init__(self, manifest, size=NET_SIZE):
        if not manifest.has_references:
            raise DataError("training pairs need clear references")
        self.ids = manifest.ids
        self.size = size
        hazy, clear = [], []
        for p in manifest.pairs:
            hazy.append(self._load(p.hazy_path))
            clear.append(self._load(p.clear_path))
        self.hazy = torch.stack(hazy)
        self.clear = torch.stack(clear)

    def _load(self, path):
        t = (to_net_tensor(path, self.size) + 1.0) * 127.5
        return t.round().clamp(0, 255).to(torch.uint8)

    def __len__(self):
        return len(self.ids)

    def batch(self, indices):
        idx = torch.as_tensor(np.asarray(indices, dtype=np.int64))
        return (
            self.hazy[idx].to(torch.float32) / 127.5 - 1.0,
            self.clear[idx].to(torch.float32) / 127.5 - 1.0,
        )


# ---------------------------------------------------------- synthetic data


def _smooth_field(rng, shape, cells):
    h, w = shape
    grid = rng.random((cells, cells))
    field_ = ndimage.zoom(grid, (h / cells, w / cells), order=3, mode="nearest")[:h, :w]
    lo, hi = field_.min(), field_.max()
    return (field_ - lo) / (hi - lo) if hi > lo else np.zeros_like(field_)


def _random_color(rng, dark=False):
    hue = rng.random()
    sat = rng.uniform(0.5, 1.0)
    val = rng.uniform(0.05, 0.3) if dark else rng.uniform(0.35, 1.0)
    return np.array(colorsys.hsv_to_rgb(hue, sat, val))


def render_scene(rng, shape):
    """Clear scene: smooth saturated colour field, flat shapes, fine texture."""
    h, w = shape
    cells = 4
    colors = np.stack([_random_color(rng) for _ in range(cells * cells)]).reshape(cells, cells, 3)
    img = np.stack(
        [ndimage.zoom(colors[..., c], (h / cells, w / cells), order=1, mode="nearest")[:h, :w] for c in range(3)],
        axis=-1,
    )
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(3, 9)):
        color = _random_color(rng, dark=rng.random() < 0.35)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(0.05, 0.25) * h, rng.uniform(0.05, 0.25) * w
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) < ry) & (np.abs(xx - cx) < rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
        img[mask] = color
    texture = ndimage.gaussian_filter(rng.standard_normal((h, w)), 0.7)
    img = img * (1.0 + 0.08 * texture[..., None])
    return np.clip(img, 0.0, 1.0)


def render_depth(rng, shape, depth_range=(0.5, 2.5)):
    """Smooth positive depth: far at the top, plus low-frequency variation."""
    h, w = shape
    ramp = np.linspace(1.0, 0.0, h)[:, None] * np.ones((1, w))
    blob = _smooth_field(rng, shape, 3)
    d = 0.6 * ramp + 0.4 * blob
    lo, hi = depth_range
    return lo + (hi - lo) * d


def generate_synthetic_dataset(
    out_dir,
    n,
    image_size=(64, 64),
    seed=0,
    k_range=(0.3, 1.0),
    airlight_range=(0.75, 1.0),
    depth_range=(0.5, 2.5),
    source_name="synthetic",
):
    """Render ``n`` clear/hazy pairs into ``out_dir`` and write ``manifest.json``.

    The output is a pure function of the arguments: image ``i`` is drawn from
    its own child seed, so files are byte-identical across runs.
    """
    n = int(n)
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    k_lo, k_hi = map(float, k_range)
    a_lo, a_hi = map(float, airlight_range)
    if not (0 <= k_lo <= k_hi):
        raise InvalidParameterError(f"bad k_range {k_range}")
    if not (0 <= a_lo <= a_hi <= 1):
        raise InvalidParameterError(f"bad airlight_range {airlight_range}")

    out = Path(out_dir)
    try:
        for sub in ("hazy", "clear", "depth"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc

    width = max(5, len(str(n - 1)))
    pairs = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        rng = np.random.default_rng(child)
        clear = render_scene(rng, image_size)
        depth = render_depth(rng, image_size, depth_range)
        k = rng.uniform(k_lo, k_hi) if k_hi > k_lo else k_lo
        grey = rng.uniform(a_lo, a_hi) if a_hi > a_lo else a_lo
        tint = rng.uniform(-0.03, 0.03, 3)
        airlight = np.clip(grey + tint, a_lo, a_hi)
        params = HazeParams(k, airlight)
        hazy = synthesize_haze(clear, depth, params)

        pid = f"syn_{i:0{width}d}"
        clear_q = quantize(clear)
        write_image(out / "clear" / f"{pid}.png", clear_q)
        write_image(out / "hazy" / f"{pid}.png", quantize(hazy))
        np.save(out / "depth" / f"{pid}.npy", depth.astype(np.float32))
        meta = {"k": round(params.k, 10), "airlight": [round(a, 10) for a in params.airlight], "depth": f"depth/{pid}.npy"}
        pairs.append(ImagePair(pid, out / "hazy" / f"{pid}.png", out / "clear" / f"{pid}.png", meta))

    manifest = DatasetManifest(pairs, source_name, True)
    save_manifest(manifest, out / "manifest.json")
    return manifest
