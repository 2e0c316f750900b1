"""Paired-sample supply: synthetic dataset generation, disk layout, and
training-set normalization.

Disk layout is `raw/NNNNN.png` (16-bit grayscale mosaic) paired with
`rgb/NNNNN.png` (8-bit color target), plus a key-value manifest
recording how the set was made.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np
from PIL import Image

from .isp import PairedSample, SyntheticISPParams, synth_clean_image, synth_pair
from .tensor import rng_from


@dataclass
class NormStats:
    """Per-channel mean and standard deviation of a training split."""

    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    def __post_init__(self):
        for name in ("input_mean", "input_std", "target_mean", "target_std"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.input_std <= 0) or np.any(self.target_std <= 0):
            raise ValueError("normalization std must be positive in every channel")

    def normalize_input(self, x: np.ndarray) -> np.ndarray:
        return _affine(x, 1.0 / self.input_std, -self.input_mean / self.input_std)

    def denormalize_input(self, x: np.ndarray) -> np.ndarray:
        return _affine(x, self.input_std, self.input_mean)

    def normalize_target(self, x: np.ndarray) -> np.ndarray:
        return _affine(x, 1.0 / self.target_std, -self.target_mean / self.target_std)

    def denormalize_target(self, x: np.ndarray) -> np.ndarray:
        return _affine(x, self.target_std, self.target_mean)

    def to_dict(self) -> dict:
        return {
            "input_mean": self.input_mean.tolist(),
            "input_std": self.input_std.tolist(),
            "target_mean": self.target_mean.tolist(),
            "target_std": self.target_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(d["input_mean"], d["input_std"], d["target_mean"], d["target_std"])


def _affine(x: np.ndarray, scale, shift) -> np.ndarray:
    """Per-channel x*scale + shift; channel axis is -3."""
    x = np.asarray(x)
    c = x.shape[-3]
    scale = np.asarray(scale, dtype=np.float64).reshape(c, 1, 1)
    shift = np.asarray(shift, dtype=np.float64).reshape(c, 1, 1)
    return (x * scale + shift).astype(x.dtype, copy=False)


def compute_norm_stats(samples) -> NormStats:
    """Population mean/std over every pixel of the whole split."""
    samples = list(samples)
    if not samples:
        raise ValueError("cannot compute normalization stats on an empty dataset")

    def channel_stats(arrays):
        c = arrays[0].shape[0]
        total = np.zeros(c)
        total_sq = np.zeros(c)
        count = 0
        for a in arrays:
            a64 = a.astype(np.float64)
            total += a64.sum(axis=(1, 2))
            total_sq += (a64 * a64).sum(axis=(1, 2))
            count += a.shape[1] * a.shape[2]
        mean = total / count
        var = total_sq / count - mean * mean
        if np.any(var <= 1e-12):
            raise ValueError("degenerate data: a channel has zero variance")
        return mean, np.sqrt(var)

    in_mean, in_std = channel_stats([s.raw for s in samples])
    tg_mean, tg_std = channel_stats([s.target_rgb for s in samples])
    return NormStats(in_mean, in_std, tg_mean, tg_std)


# ---------------------------------------------------------------------------
# synthetic dataset generation
# ---------------------------------------------------------------------------


def synthesize_samples(count: int, seed: int, size: int = 64,
                       params: SyntheticISPParams | None = None,
                       max_shift: float = 0.0, max_rotate: float = 0.0) -> list[PairedSample]:
    """Generate `count` pairs; per-sample misalignment is drawn uniformly
    from [-max_shift, max_shift] px and [-max_rotate, max_rotate] degrees."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    base = params if params is not None else SyntheticISPParams()
    base.validate()
    rng = rng_from(seed, "misalign-draw")
    out = []
    for i in range(count):
        if max_shift > 0 or max_rotate > 0:
            dx = rng.uniform(-max_shift, max_shift)
            dy = rng.uniform(-max_shift, max_shift)
            theta = rng.uniform(-max_rotate, max_rotate)
            p = replace(base, misalign=(dx, dy, theta))
        else:
            p = base
        clean = synth_clean_image(seed * 100003 + i, size=size)
        out.append(synth_pair(clean, p, seed=seed * 100003 + i))
    return out


def write_manifest(path, entries: dict) -> None:
    lines = [f"{k} = {v}" for k, v in entries.items()]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                k, _, v = line.partition("=")
                out[k.strip()] = v.strip()
    return out


def write_dataset(samples, out_dir, manifest_extra: dict | None = None) -> None:
    """Persist pairs as raw/ (16-bit gray PNG) and rgb/ (8-bit PNG)."""
    raw_dir = os.path.join(out_dir, "raw")
    rgb_dir = os.path.join(out_dir, "rgb")
    os.makedirs(raw_dir, exist_ok=True)
    os.makedirs(rgb_dir, exist_ok=True)
    for i, s in enumerate(samples):
        save_raw_png(os.path.join(raw_dir, f"{i:05d}.png"), s.raw[0])
        save_rgb_png(os.path.join(rgb_dir, f"{i:05d}.png"), s.target_rgb)
    entries = {"count": len(samples)}
    if manifest_extra:
        entries.update(manifest_extra)
    write_manifest(os.path.join(out_dir, "manifest.txt"), entries)


def save_raw_png(path, plane: np.ndarray) -> None:
    arr = np.round(np.clip(plane, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(arr).save(path)


def save_rgb_png(path, rgb: np.ndarray) -> None:
    arr = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(np.moveaxis(arr, 0, 2), mode="RGB").save(path)


def load_raw_png(path) -> np.ndarray:
    """Grayscale mosaic as (1, H, W) float32 in [0, 1]; 8- or 16-bit."""
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a grayscale mosaic, got shape {arr.shape}")
    if arr.dtype == np.uint16 or img.mode in ("I;16", "I"):
        scale = 65535.0
    elif arr.dtype == np.uint8:
        scale = 255.0
    else:
        raise ValueError(f"{path}: unsupported pixel type {arr.dtype}")
    return (arr.astype(np.float32) / scale)[None]


def load_rgb_png(path) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    arr = np.asarray(img).astype(np.float32) / 255.0
    return np.moveaxis(arr, 2, 0)


def _parse_split(split_spec: str | None, n: int) -> range:
    if not split_spec:
        return range(n)
    start_s, _, stop_s = split_spec.partition(":")
    try:
        start = int(start_s) if start_s.strip() else 0
        stop = int(stop_s) if stop_s.strip() else n
    except ValueError:
        raise ValueError(f"bad split spec {split_spec!r}; expected 'start:stop'")
    if not (0 <= start <= stop <= n):
        raise ValueError(f"split {split_spec!r} out of range for {n} pairs")
    return range(start, stop)


def load_dataset(directory, split_spec: str | None = None) -> list[PairedSample]:
    """Read paired PNGs in deterministic index order, scaled to [0, 1].

    split_spec is 'start:stop' over the sorted pair indices; either end
    may be blank.
    """
    raw_dir = os.path.join(directory, "raw")
    rgb_dir = os.path.join(directory, "rgb")
    if not os.path.isdir(raw_dir) or not os.path.isdir(rgb_dir):
        raise FileNotFoundError(f"{directory}: expected raw/ and rgb/ subdirectories")
    raw_names = sorted(n for n in os.listdir(raw_dir) if n.endswith(".png"))
    rgb_names = sorted(n for n in os.listdir(rgb_dir) if n.endswith(".png"))
    if not raw_names:
        raise FileNotFoundError(f"{directory}: no pairs found")
    if raw_names != rgb_names:
        missing = sorted(set(raw_names) ^ set(rgb_names))
        raise FileNotFoundError(f"{directory}: unpaired files {missing[:4]}")

    samples = []
    for idx in _parse_split(split_spec, len(raw_names)):
        name = raw_names[idx]
        raw_path = os.path.join(raw_dir, name)
        rgb_path = os.path.join(rgb_dir, name)
        try:
            raw = load_raw_png(raw_path)
            rgb = load_rgb_png(rgb_path)
        except (OSError, ValueError) as e:
            raise ValueError(f"pair {name}: {e}") from e
        if raw.shape[1:] != rgb.shape[1:]:
            raise ValueError(
                f"pair {name}: raw is {raw.shape[1:]} but rgb is {rgb.shape[1:]}")
        samples.append(PairedSample(raw=raw, target_rgb=rgb, meta=raw_path))
    return samples


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def batch_indices(n: int, batch_size: int, shuffle_seed: int, epoch: int = 0):
    """Seeded permutation of range(n), chunked; the short tail is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = rng_from(shuffle_seed, f"shuffle/epoch{epoch}").permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def batch_iterator(dataset, batch_size: int, shuffle_seed: int, epoch: int = 0):
    """Yield (raw, target) stacks of shape (B, C, H, W); no augmentation."""
    samples = list(dataset)
    for idx in batch_indices(len(samples), batch_size, shuffle_seed, epoch):
        raws = np.stack([samples[i].raw for i in idx])
        targets = np.stack([samples[i].target_rgb for i in idx])
        yield raws, targets
