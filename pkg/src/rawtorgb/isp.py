"""Synthetic camera pipeline used to manufacture raw/RGB training pairs.

The forward model runs a clean linear image through white balance, a
3x3 color matrix, gamma compression, and an optional similarity warp to
produce the display-referred target; the raw input is an RGGB mosaic of
the same linear image plus sensor noise.  Misalignment between raw and
target is therefore fully controlled by the warp parameters.

Everything here works on plain numpy arrays in float64; images are
channel-first, (3, H, W) for RGB and (H, W) for mosaics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import rng_from

_LAYOUT = ((0, 0, "R"), (0, 1, "G"), (1, 0, "G"), (1, 1, "B"))


def default_ccm() -> np.ndarray:
    """Mildly saturating color matrix; rows sum to one."""
    return np.array([
        [1.45, -0.35, -0.10],
        [-0.15, 1.40, -0.25],
        [0.00, -0.40, 1.40],
    ])


@dataclass
class SyntheticISPParams:
    wb_gains: tuple = (1.6, 1.0, 1.4)
    ccm: np.ndarray = field(default_factory=default_ccm)
    gamma: float = 2.2
    noise_sigma: float = 0.0
    misalign: tuple = (0.0, 0.0, 0.0)  # dx px, dy px, theta degrees

    def validate(self) -> None:
        gains = np.asarray(self.wb_gains, dtype=np.float64)
        if gains.shape != (3,) or np.any(gains <= 0):
            raise ValueError(f"wb_gains must be 3 positive floats, got {self.wb_gains}")
        ccm = np.asarray(self.ccm, dtype=np.float64)
        if ccm.shape != (3, 3):
            raise ValueError(f"ccm must be 3x3, got shape {ccm.shape}")
        if abs(np.linalg.det(ccm)) <= 1e-6:
            raise ValueError("ccm is not invertible (|det| <= 1e-6)")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        dx, dy, theta = self.misalign
        if abs(dx) > 4 or abs(dy) > 4:
            raise ValueError(f"|dx|,|dy| must be <= 4 px, got ({dx}, {dy})")
        if abs(theta) > 1.0:
            raise ValueError(f"|theta| must be <= 1.0 degree, got {theta}")

    def to_dict(self) -> dict:
        return {
            "wb_gains": [float(g) for g in self.wb_gains],
            "ccm": np.asarray(self.ccm, dtype=np.float64).reshape(-1).tolist(),
            "gamma": float(self.gamma),
            "noise_sigma": float(self.noise_sigma),
            "misalign": [float(v) for v in self.misalign],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticISPParams":
        p = cls(
            wb_gains=tuple(d["wb_gains"]),
            ccm=np.asarray(d["ccm"], dtype=np.float64).reshape(3, 3),
            gamma=d["gamma"],
            noise_sigma=d["noise_sigma"],
            misalign=tuple(d["misalign"]),
        )
        p.validate()
        return p


@dataclass
class PairedSample:
    """One training pair: raw mosaic input and display-referred target."""

    raw: np.ndarray          # (1, H, W) float32 in [0, 1]
    target_rgb: np.ndarray   # (3, H, W) float32 in [0, 1]
    meta: object = None      # SyntheticISPParams or a source path string


# ---------------------------------------------------------------------------
# pipeline stages
# ---------------------------------------------------------------------------


def apply_white_balance(rgb: np.ndarray, gains) -> np.ndarray:
    gains = np.asarray(gains, dtype=np.float64).reshape(3, 1, 1)
    return rgb * gains


def apply_ccm(rgb: np.ndarray, ccm) -> np.ndarray:
    ccm = np.asarray(ccm, dtype=np.float64)
    return np.einsum("ij,jhw->ihw", ccm, rgb)


def gamma_compress(rgb: np.ndarray, gamma: float) -> np.ndarray:
    return np.power(np.clip(rgb, 0.0, None), 1.0 / gamma)


def gamma_expand(rgb: np.ndarray, gamma: float) -> np.ndarray:
    return np.power(np.clip(rgb, 0.0, None), gamma)


def warp_image(img: np.ndarray, dx: float, dy: float, theta: float) -> np.ndarray:
    """Rotate about the image center by theta degrees, then shift (dx, dy).

    Sampling is bilinear with edge clamping, so an integer shift with
    theta = 0 reduces to an exact pixel gather.  Works on (H, W) or
    (C, H, W).
    """
    if dx == 0.0 and dy == 0.0 and theta == 0.0:
        return img.copy()
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    _, h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    # forward map is p' = R(p - c) + c + t; sample source at its inverse
    rad = np.deg2rad(theta)
    cos_t, sin_t = np.cos(rad), np.sin(rad)
    ux = xs - cx - dx
    uy = ys - cy - dy
    src_x = cos_t * ux + sin_t * uy + cx
    src_y = -sin_t * ux + cos_t * uy + cy

    x0 = np.floor(src_x)
    y0 = np.floor(src_y)
    fx = src_x - x0
    fy = src_y - y0
    x0 = np.clip(x0, 0, w - 1).astype(np.intp)
    y0 = np.clip(y0, 0, h - 1).astype(np.intp)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)

    out = np.empty_like(img, dtype=np.float64)
    for c in range(img.shape[0]):
        plane = img[c]
        top = plane[y0, x0] * (1 - fx) + plane[y0, x1] * fx
        bot = plane[y1, x0] * (1 - fx) + plane[y1, x1] * fx
        out[c] = top * (1 - fy) + bot * fy
    return out[0] if squeeze else out


def mosaic_rggb(rgb: np.ndarray) -> np.ndarray:
    """Sample an RGGB Bayer mosaic (R at (0,0)) from a linear RGB image."""
    _check_rgb(rgb, "mosaic_rggb")
    _, h, w = rgb.shape
    if h % 2 or w % 2:
        raise ValueError(f"mosaic needs even dims, got {h}x{w}")
    raw = np.empty((h, w), dtype=np.float64)
    raw[0::2, 0::2] = rgb[0, 0::2, 0::2]
    raw[0::2, 1::2] = rgb[1, 0::2, 1::2]
    raw[1::2, 0::2] = rgb[1, 1::2, 0::2]
    raw[1::2, 1::2] = rgb[2, 1::2, 1::2]
    return raw


def channel_masks(h: int, w: int) -> dict[str, np.ndarray]:
    masks = {k: np.zeros((h, w)) for k in "RGB"}
    for dy, dx, ch in _LAYOUT:
        masks[ch][dy::2, dx::2] = 1.0
    return masks


def _conv3x3_same(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    padded = np.pad(plane, 1, mode="constant")
    out = np.zeros_like(plane)
    for dy in range(3):
        for dx in range(3):
            out += kernel[dy, dx] * padded[dy:dy + plane.shape[0], dx:dx + plane.shape[1]]
    return out


def bilinear_demosaic(raw: np.ndarray) -> np.ndarray:
    """Interpolate an RGGB mosaic into a full (3, H, W) linear image.

    Normalized convolution (value kernel divided by mask kernel) keeps
    borders exact instead of dimming them.
    """
    if raw.ndim != 2:
        raise ValueError(f"demosaic expects (H, W), got {raw.shape}")
    h, w = raw.shape
    masks = channel_masks(h, w)
    k_rb = np.array([[0.25, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 0.25]])
    k_g = np.array([[0.0, 0.25, 0.0], [0.25, 1.0, 0.25], [0.0, 0.25, 0.0]])
    out = np.empty((3, h, w), dtype=np.float64)
    for i, (ch, kernel) in enumerate((("R", k_rb), ("G", k_g), ("B", k_rb))):
        mask = masks[ch]
        num = _conv3x3_same(raw * mask, kernel)
        den = _conv3x3_same(mask, kernel)
        out[i] = num / den
    return out


# ---------------------------------------------------------------------------
# clean-image synthesis and pair generation
# ---------------------------------------------------------------------------


def synth_clean_image(seed: int, size: int = 64, ellipses: int = 6) -> np.ndarray:
    """Procedural linear test scene: color gradients plus soft ellipses.

    Values stay within [0.06, 0.55], keeping the display transform away
    from both its steep toe and its clip point; the ellipse edges
    provide texture for alignment-sensitive tests.  Edge sharpness is
    scaled with the render size so the transition width measured in
    pixels stays the same at every resolution.
    """
    rng = rng_from(seed, "clean-image")
    h = w = int(size)
    ys, xs = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    img = np.empty((3, h, w))
    for c in range(3):
        ang = rng.uniform(0, 2 * np.pi)
        img[c] = 0.5 + 0.5 * (np.cos(ang) * (xs - 0.5) + np.sin(ang) * (ys - 0.5))
    edge_scale = size / 64.0
    for _ in range(int(ellipses)):
        cx, cy = rng.uniform(0.1, 0.9, size=2)
        ax_, ay_ = rng.uniform(0.08, 0.3, size=2)
        color = rng.uniform(0.0, 1.0, size=3)
        sharp = rng.uniform(10.0, 28.0) * edge_scale
        d = ((xs - cx) / ax_) ** 2 + ((ys - cy) / ay_) ** 2
        # logistic edge profile in overflow-free tanh form
        blend = 0.5 * (1.0 - np.tanh(0.5 * sharp * (d - 1.0)))
        img = img * (1 - blend) + color[:, None, None] * blend
    return 0.06 + 0.49 * np.clip(img, 0.0, 1.0)


def display_transform(linear_rgb: np.ndarray, params: SyntheticISPParams,
                      warp: bool = True) -> np.ndarray:
    """White balance, color matrix, gamma, optional warp, clamp to [0, 1]."""
    out = apply_white_balance(linear_rgb, params.wb_gains)
    out = apply_ccm(out, params.ccm)
    out = gamma_compress(out, params.gamma)
    if warp:
        dx, dy, theta = params.misalign
        out = warp_image(out, dx, dy, theta)
    return np.clip(out, 0.0, 1.0)


def synth_pair(clean_rgb: np.ndarray, params: SyntheticISPParams, seed: int) -> PairedSample:
    """Deterministically derive one (raw, target) pair from a clean image."""
    params.validate()
    _check_rgb(clean_rgb, "synth_pair")
    if clean_rgb.min() < -1e-9 or clean_rgb.max() > 1 + 1e-9:
        raise ValueError("clean_rgb must lie in [0, 1]")
    clean = np.clip(np.asarray(clean_rgb, dtype=np.float64), 0.0, 1.0)

    raw = mosaic_rggb(clean)
    if params.noise_sigma > 0:
        rng = rng_from(seed, "raw-noise")
        raw = raw + rng.normal(0.0, params.noise_sigma, size=raw.shape)
    raw = np.clip(raw, 0.0, 1.0)

    target = display_transform(clean, params, warp=True)
    return PairedSample(
        raw=raw[None].astype(np.float32),
        target_rgb=target.astype(np.float32),
        meta=params,
    )


def _check_rgb(rgb: np.ndarray, op: str) -> None:
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"{op} expects (3, H, W), got {np.shape(rgb)}")
