"""Synthetic corpus, degradation operators and batch iteration.

Images are float32 arrays of shape (H, W, C) in [0, 1]. Every degradation
returns an ImagePair whose ``provenance`` is enough to rebuild ``i_lq``
from ``i_gt`` via :func:`regenerate`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy import ndimage

SR_FACTOR = 4
NARROW = (0.01, 0.10)
WIDE = (0.10, 0.40)


@dataclass
class ImagePair:
    i_gt: np.ndarray
    i_lq: np.ndarray
    mask: Optional[np.ndarray] = None
    provenance: Dict = field(default_factory=dict)


def _rng(*seed) -> np.random.Generator:
    return np.random.default_rng([int(s) for s in seed])


# ---------------------------------------------------------------- corpus


def _procedural_image(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = np.empty((size, size, 3))
    # smooth gradient background
    for c in range(3):
        a, b, o = rng.uniform(-1, 1, 3)
        img[..., c] = 0.5 + 0.35 * (a * xx + b * yy) + 0.15 * o
    # stripes
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(2, 8)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy))
    img += 0.2 * (stripes[..., None] - 0.5) * rng.uniform(0, 1, 3)
    # ellipses
    for _ in range(rng.integers(1, 4)):
        cx, cy = rng.uniform(0.1, 0.9, 2)
        rx, ry = rng.uniform(0.08, 0.35, 2)
        inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        img[inside] = 0.6 * img[inside] + 0.4 * rng.uniform(0, 1, 3)
    # band-limited noise
    noise = ndimage.gaussian_filter(rng.standard_normal((size, size, 3)), sigma=(size / 16, size / 16, 0))
    noise /= np.abs(noise).max() + 1e-12
    img += 0.1 * noise
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def gen_corpus(seed: int, n: int, size: int) -> np.ndarray:
    """``n`` procedural RGB images; content depends only on (seed, index)."""
    if size % 8:
        raise ValueError("image size must be divisible by 8")
    return np.stack([_procedural_image(_rng(seed, i), size) for i in range(n)]) if n else np.zeros((0, size, size, 3), np.float32)


# ---------------------------------------------------------------- masks


def _stamp_rect(mask, rng, h, w):
    rh = int(rng.integers(max(1, h // 16), max(2, h // 4)))
    rw = int(rng.integers(max(1, w // 16), max(2, w // 4)))
    y = int(rng.integers(0, h - rh + 1))
    x = int(rng.integers(0, w - rw + 1))
    mask[y : y + rh, x : x + rw] = 1


def _stamp_polyline(mask, rng, h, w):
    width = int(rng.integers(1, max(2, min(h, w) // 12) + 1))
    pts = [rng.uniform(0, [h, w])]
    for _ in range(int(rng.integers(1, 4))):
        ang = rng.uniform(0, 2 * np.pi)
        length = rng.uniform(0.1, 0.4) * min(h, w)
        pts.append(np.clip(pts[-1] + length * np.array([np.sin(ang), np.cos(ang)]), 0, [h - 1, w - 1]))
    half = width // 2
    for p0, p1 in zip(pts, pts[1:]):
        for s in np.linspace(0.0, 1.0, int(np.linalg.norm(p1 - p0)) * 2 + 2):
            y, x = np.round(p0 + s * (p1 - p0)).astype(int)
            mask[max(0, y - half) : y + half + 1, max(0, x - half) : x + half + 1] = 1


def make_mask(h: int, w: int, seed: int, coverage: Tuple[float, float], max_attempts: int = 200) -> np.ndarray:
    lo, hi = coverage
    if not (0.0 <= lo <= hi <= 0.9) or (lo == hi and hi != 0.0):
        raise ValueError(f"invalid coverage band {coverage}")
    if hi == 0.0:
        return np.zeros((h, w), np.float32)
    rng = _rng(seed, 1)
    for _ in range(max_attempts):
        mask = np.zeros((h, w), np.float32)
        while mask.mean() < lo:
            (_stamp_rect if rng.random() < 0.5 else _stamp_polyline)(mask, rng, h, w)
        if lo <= mask.mean() <= hi:
            return mask
    raise ValueError(f"could not reach coverage {coverage} in {max_attempts} attempts")


def apply_mask(img: np.ndarray, seed: int, coverage=(0.1, 0.3)) -> ImagePair:
    h, w = img.shape[:2]
    mask = make_mask(h, w, seed, tuple(coverage))
    lq = (img * (1 - mask)[..., None]).astype(img.dtype)
    prov = {"kind": "mask", "seed": int(seed), "coverage": [float(c) for c in coverage]}
    return ImagePair(img, lq, mask, prov)


# ---------------------------------------------------------------- blur


def motion_kernel(length: int, angle: float) -> np.ndarray:
    """Normalized linear motion kernel, symmetric about its center; angle in degrees."""
    if length < 1 or length % 2 == 0:
        raise ValueError(f"kernel length must be odd and positive, got {length}")
    k = np.zeros((length, length))
    c = length // 2
    rad = np.deg2rad(angle)
    for s in np.linspace(-c, c, 8 * length + 1):
        y = int(np.round(c - s * np.sin(rad)))
        x = int(np.round(c + s * np.cos(rad)))
        k[y, x] += 1.0
    return k / k.sum()


def apply_blur(img: np.ndarray, seed: int, kernel_len: int = 9, angle: Optional[float] = None) -> ImagePair:
    if angle is None:
        angle = float(_rng(seed, 2).uniform(0.0, 180.0))
    k = motion_kernel(kernel_len, angle)
    out = np.stack([ndimage.convolve(img[..., c].astype(np.float64), k, mode="reflect") for c in range(img.shape[-1])], -1)
    lq = np.clip(out, 0.0, 1.0).astype(img.dtype)
    prov = {"kind": "blur", "seed": int(seed), "kernel_len": int(kernel_len), "angle": float(angle)}
    return ImagePair(img, lq, None, prov)


# ---------------------------------------------------------------- bicubic


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic kernel; a = -0.5 is Catmull-Rom."""
    x = np.abs(x)
    return np.where(
        x <= 1,
        (a + 2) * x**3 - (a + 3) * x**2 + 1,
        np.where(x < 2, a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, 0.0),
    )


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i interpolates the input at the center of output pixel i.
    Out-of-range taps are clamped to the edge."""
    scale = n_in / n_out
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        x = (i + 0.5) * scale - 0.5
        base = int(np.floor(x))
        for j in range(base - 1, base + 3):
            m[i, min(max(j, 0), n_in - 1)] += cubic(x - j)
    return m


def bicubic_resize(img: np.ndarray, h_out: int, w_out: int) -> np.ndarray:
    h, w = img.shape[:2]
    rows, cols = _resize_matrix(h, h_out), _resize_matrix(w, w_out)
    out = np.einsum("ij,jkc,lk->ilc", rows, img.astype(np.float64), cols)
    return out


def apply_downsample(img: np.ndarray, factor: int = SR_FACTOR) -> ImagePair:
    h, w = img.shape[:2]
    if h % factor or w % factor:
        raise ValueError(f"{h}x{w} not divisible by {factor}")
    lq = np.clip(bicubic_resize(img, h // factor, w // factor), 0.0, 1.0).astype(img.dtype)
    return ImagePair(img, lq, None, {"kind": "downsample", "factor": int(factor)})


def upsample(img: np.ndarray, factor: int = SR_FACTOR) -> np.ndarray:
    h, w = img.shape[:2]
    return np.clip(bicubic_resize(img, h * factor, w * factor), 0.0, 1.0).astype(img.dtype)


# ---------------------------------------------------------------- tasks


def degrade(img: np.ndarray, task: str, seed: int, **kw) -> ImagePair:
    if task == "inpainting":
        return apply_mask(img, seed, kw.get("coverage", WIDE))
    if task == "deblur":
        return apply_blur(img, seed, kw.get("kernel_len", 9), kw.get("angle"))
    if task == "sr":
        return apply_downsample(img, kw.get("factor", SR_FACTOR))
    raise ValueError(f"unknown task {task!r}")


def regenerate(i_gt: np.ndarray, prov: Dict) -> ImagePair:
    kind = prov["kind"]
    if kind == "mask":
        return apply_mask(i_gt, prov["seed"], prov["coverage"])
    if kind == "blur":
        return apply_blur(i_gt, prov["seed"], prov["kernel_len"], prov["angle"])
    if kind == "downsample":
        return apply_downsample(i_gt, prov["factor"])
    raise ValueError(f"unknown degradation {kind!r}")


@dataclass
class PairDataset:
    """Stacked pairs for one task. ``inputs`` is what the restorer sees: the
    LQ image at GT resolution (bicubic-upsampled for SR), plus the mask as a
    fourth channel for inpainting."""

    task: str
    gt: np.ndarray
    lq: np.ndarray
    inputs: np.ndarray
    masks: Optional[np.ndarray]
    provenance: List[Dict]

    def __len__(self) -> int:
        return len(self.gt)

    @property
    def in_channels(self) -> int:
        return self.inputs.shape[-1]


def build_pairs(images: np.ndarray, task: str, seed: int, **kw) -> PairDataset:
    if len(images) == 0:
        raise ValueError("empty dataset")
    pairs = [degrade(img, task, seed * 100003 + i, **kw) for i, img in enumerate(images)]
    gt = np.stack([p.i_gt for p in pairs])
    lq = np.stack([p.i_lq for p in pairs])
    masks = None
    if task == "inpainting":
        masks = np.stack([p.mask for p in pairs])
        inputs = np.concatenate([lq, masks[..., None]], axis=-1)
    elif task == "sr":
        inputs = np.stack([upsample(x) for x in lq])
    else:
        inputs = lq
    return PairDataset(task, gt, lq, inputs.astype(np.float32), masks, [p.provenance for p in pairs])


@dataclass
class Batch:
    inputs: torch.Tensor  # (N, Cin, P, P)
    gt: torch.Tensor  # (N, 3, P, P)
    mask: Optional[torch.Tensor]  # (N, 1, P, P)
    indices: List[int]

    @property
    def lq_rgb(self) -> torch.Tensor:
        return self.inputs[:, :3]


def to_tensor(a: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(a, -1, -3))).to(dtype)


def make_batch(ds: PairDataset, idx: Sequence[int], crops: Sequence[Tuple[int, int]], patch: int, dtype=torch.float32) -> Batch:
    sl = [(slice(y, y + patch), slice(x, x + patch)) for y, x in crops]
    inputs = np.stack([ds.inputs[i][sy, sx] for i, (sy, sx) in zip(idx, sl)])
    gt = np.stack([ds.gt[i][sy, sx] for i, (sy, sx) in zip(idx, sl)])
    mask = None
    if ds.masks is not None:
        mask = to_tensor(np.stack([ds.masks[i][sy, sx] for i, (sy, sx) in zip(idx, sl)])[..., None], dtype)
    return Batch(to_tensor(inputs, dtype), to_tensor(gt, dtype), mask, list(idx))


def full_batch(ds: PairDataset, dtype=torch.float32) -> Batch:
    size = ds.gt.shape[1]
    return make_batch(ds, range(len(ds)), [(0, 0)] * len(ds), size, dtype)


def index_stream(n: int, seed: int) -> Iterator[int]:
    """Concatenated seeded permutations: each epoch visits every index once."""
    rng = _rng(seed, 3)
    while True:
        yield from (int(i) for i in rng.permutation(n))


def batch_iter(ds: PairDataset, batch_size: int, patch_size: int, seed: int, dtype=torch.float32) -> Iterator[Batch]:
    """Infinite deterministic stream of randomly cropped batches.

    A batch larger than the dataset simply spans several epochs, so
    indices repeat within it.
    """
    size = ds.gt.shape[1]
    if patch_size > size or patch_size % 8:
        raise ValueError(f"patch {patch_size} must be <= {size} and divisible by 8")
    align = SR_FACTOR if ds.task == "sr" else 1
    stream = index_stream(len(ds), seed)
    crop_rng = _rng(seed, 4)
    n_pos = (size - patch_size) // align + 1
    while True:
        idx = [next(stream) for _ in range(batch_size)]
        crops = [tuple(int(v) * align for v in crop_rng.integers(0, n_pos, 2)) for _ in idx]
        yield make_batch(ds, idx, crops, patch_size, dtype)


# ---------------------------------------------------------------- disk


def save_image(path: Path, img: np.ndarray) -> None:
    from PIL import Image

    arr = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_image(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def write_corpus(out_dir: Path, images: np.ndarray, seed: int, task: Optional[str] = None, fmt: str = "png") -> Path:
    """One image per sample plus ``index.json`` with (filename, seed, degradation)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, img in enumerate(images):
        name = f"{i:05d}.{fmt}"
        save_image(out_dir / name, img)
        entry = {"filename": name, "seed": int(seed), "index": i, "degradation": None}
        if task is not None:
            entry["degradation"] = degrade(img, task, seed * 100003 + i).provenance
        entries.append(entry)
    index = out_dir / "index.json"
    index.write_text(json.dumps(entries, indent=1) + "\n", encoding="utf-8")
    return index


def load_folder(folder: Path, size: Optional[int] = None) -> np.ndarray:
    """Ingest 8-bit PNG / PPM images, center-cropped to a common square size."""
    files = sorted(p for p in Path(folder).iterdir() if p.suffix.lower() in (".png", ".ppm"))
    if not files:
        raise ValueError(f"no PNG/PPM images in {folder}")
    imgs = [load_image(p) for p in files]
    if size is None:
        size = min(min(im.shape[:2]) for im in imgs) // 8 * 8
    out = []
    for im in imgs:
        h, w = im.shape[:2]
        if min(h, w) < size:
            raise ValueError(f"image smaller than {size}px")
        y, x = (h - size) // 2, (w - size) // 2
        out.append(im[y : y + size, x : x + size])
    return np.stack(out)
