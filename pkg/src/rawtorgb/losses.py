"""Loss terms for training under misaligned supervision.

Three terms: a mean-absolute pixel loss, a deep-feature loss that is
tolerant to small spatial misalignment, and a per-pixel color-direction
loss on 2x-downsampled images.  The total is their plain, unweighted
sum over the enabled terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .checkpoint import Container, ContainerError, read_container, write_container
from .tensor import Tensor, rng_from

# VGG-19 convolutional stack through conv5_1; "pool" marks the 2x2 max
# pooling between blocks.  Taps name the ReLU output of a conv layer.
VGG19_PLAN = (
    ("conv1_1", 64), ("conv1_2", 64), "pool",
    ("conv2_1", 128), ("conv2_2", 128), "pool",
    ("conv3_1", 256), ("conv3_2", 256), ("conv3_3", 256), ("conv3_4", 256), "pool",
    ("conv4_1", 512), ("conv4_2", 512), ("conv4_3", 512), ("conv4_4", 512), "pool",
    ("conv5_1", 512),
)

TAP_LAYERS = {"relu4_1": "conv4_1", "relu5_1": "conv5_1"}
# pooling stages crossed before each tap: minimum (and required
# divisor of) input spatial size is 2**k
TAP_POOLINGS = {"relu4_1": 3, "relu5_1": 4}

ARCHITECTURE_TAG = "vgg19-features"


class FeatureExtractor:
    """Truncated VGG-19-style conv stack used as a fixed feature map.

    Weights never receive gradient; inputs are display-range [0, 1] RGB
    images, remapped internally by the stored normalization constants.
    """

    def __init__(self, weights: dict[str, np.ndarray], input_mean, input_std,
                 tap: str = "relu4_1", source: str = "random"):
        if tap not in TAP_LAYERS:
            raise ValueError(f"unknown tap {tap!r}; expected one of {sorted(TAP_LAYERS)}")
        self.tap = tap
        self.input_mean = np.asarray(input_mean, dtype=np.float64)
        self.input_std = np.asarray(input_std, dtype=np.float64)
        self.source = source
        self.layers: list[tuple[str, Tensor, Tensor] | None] = []
        self._build(weights)

    def _build(self, weights):
        needed = TAP_LAYERS[self.tap]
        for item in VGG19_PLAN:
            if item == "pool":
                self.layers.append(None)
            else:
                name, _ = item
                wkey, bkey = f"{name}.weight", f"{name}.bias"
                if wkey not in weights or bkey not in weights:
                    raise ContainerError(f"feature extractor is missing layer {name!r}")
                w = Tensor(weights[wkey], requires_grad=False, name=wkey)
                b = Tensor(weights[bkey], requires_grad=False, name=bkey)
                self.layers.append((name, w, b))
                if name == needed:
                    break
        last = self.layers[-1]
        if last is None or last[0] != needed:
            raise ContainerError(f"weights do not reach tap layer {needed!r}")

    def min_input_size(self) -> int:
        return 2 ** TAP_POOLINGS[self.tap]

    def features(self, x: Tensor) -> Tensor:
        """Activations at the configured tap for a [0, 1] RGB batch."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise T.ShapeError(f"feature extractor expects (N, 3, H, W), got {tuple(x.shape)}")
        m = self.min_input_size()
        h, w = x.shape[2], x.shape[3]
        if h < m or w < m or h % m or w % m:
            raise T.ShapeError(
                f"input {h}x{w} too small for tap {self.tap}: spatial dims must be "
                f"multiples of {m} (minimum {m}x{m})"
            )
        scale = 1.0 / self.input_std
        shift = -self.input_mean / self.input_std
        out = T.channel_affine(x, scale, shift)
        for layer in self.layers:
            if layer is None:
                out = T.maxpool2x2(out)
            else:
                _, wt, bt = layer
                out = T.relu(T.conv2d(out, wt, bt, stride=1, padding=1))
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            if layer is not None:
                name, w, b = layer
                out[f"{name}.weight"] = w.data
                out[f"{name}.bias"] = b.data
        return out

    def weight_snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state_arrays().items()}


def random_feature_extractor(seed: int = 7, width_scale: float = 1.0,
                             tap: str = "relu4_1") -> FeatureExtractor:
    """Seeded random-weight extractor for tests and self-contained runs.

    width_scale shrinks every layer width (minimum 1 channel) so small
    test runs stay fast; the layer plan and taps are unchanged.
    """
    if tap not in TAP_LAYERS:
        raise ValueError(f"unknown tap {tap!r}; expected one of {sorted(TAP_LAYERS)}")
    rng = rng_from(seed, "feature-extractor")
    weights = {}
    in_ch = 3
    needed = TAP_LAYERS[tap]
    for item in VGG19_PLAN:
        if item == "pool":
            continue
        name, full = item
        out_ch = max(1, round(full * width_scale))
        bound = np.sqrt(6.0 / (in_ch * 9))
        weights[f"{name}.weight"] = rng.uniform(-bound, bound, size=(out_ch, in_ch, 3, 3))
        weights[f"{name}.bias"] = np.zeros(out_ch)
        in_ch = out_ch
        if name == needed:
            break
    return FeatureExtractor(weights, input_mean=(0.5, 0.5, 0.5), input_std=(0.5, 0.5, 0.5),
                            tap=tap, source=f"random(seed={seed}, width_scale={width_scale})")


def save_feature_extractor(fx: FeatureExtractor, path) -> None:
    taps = [t for t, layer in TAP_LAYERS.items()
            if any(l is not None and l[0] == layer for l in fx.layers)]
    metadata = {
        "architecture": ARCHITECTURE_TAG,
        "taps": sorted(taps),
        "input_mean": [float(v) for v in fx.input_mean],
        "input_std": [float(v) for v in fx.input_std],
        "source": fx.source,
    }
    write_container(path, fx.state_arrays(), metadata)


def load_feature_extractor(path, tap: str = "relu4_1") -> FeatureExtractor:
    """Load a feature extractor container, verifying digest and tap."""
    container = read_container(path)
    return feature_extractor_from_container(container, tap)


def feature_extractor_from_container(container: Container, tap: str = "relu4_1") -> FeatureExtractor:
    meta = container.metadata
    if meta.get("architecture") != ARCHITECTURE_TAG:
        raise ContainerError(
            f"expected architecture {ARCHITECTURE_TAG!r}, got {meta.get('architecture')!r}"
        )
    if tap not in TAP_LAYERS:
        raise ContainerError(f"unknown tap name {tap!r}")
    if tap not in meta.get("taps", []):
        raise ContainerError(f"container does not provide tap {tap!r} "
                             f"(available: {meta.get('taps')})")
    return FeatureExtractor(container.tensors, meta["input_mean"], meta["input_std"],
                            tap=tap, source=meta.get("source", "container"))


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------


def pixel_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference over all elements."""
    if pred.shape != target.shape:
        raise T.ShapeError(f"pixel_loss shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return T.mean_all(T.absolute(T.sub(pred, target)))


def feature_loss(pred: Tensor, target: Tensor, fx: FeatureExtractor) -> Tensor:
    """Mean absolute difference of tap features; gradient reaches pred only."""
    if pred.shape != target.shape:
        raise T.ShapeError(f"feature_loss shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}")
    fp = fx.features(pred)
    ft = fx.features(target.detach())
    return T.mean_all(T.absolute(T.sub(fp, ft)))


def color_loss(pred: Tensor, target: Tensor, eps: float = 1e-6) -> Tensor:
    """One minus the mean per-pixel cosine between RGB vectors.

    Both images are 2x average-pooled first.  The norm product is
    floored at eps so zero-vector pixels stay defined; away from that
    floor the cosine is scale invariant, and scaling either input by a
    power of two leaves the value bit-identical (numerator and
    denominator scale by exactly the same factor).  Inputs are expected
    in display range (nonnegative after clamping), where the value lies
    in [0, 1].
    """
    if pred.shape != target.shape:
        raise T.ShapeError(f"color_loss shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.ndim != 4 or pred.shape[1] != 3:
        raise T.ShapeError(f"color_loss expects (N, 3, H, W), got {tuple(pred.shape)}")
    p = T.avgpool2x2(pred)
    t = T.avgpool2x2(target)
    dot = T.sum_channels(T.mul(p, t))
    norm_p = T.sqrt(T.sum_channels(T.mul(p, p)))
    norm_t = T.sqrt(T.sum_channels(T.mul(t, t)))
    denom = T.clamp(T.mul(norm_p, norm_t), eps, np.inf)
    cosine = T.div(dot, denom)
    return T.add_scalar(T.mul_scalar(T.mean_all(cosine), -1.0), 1.0)


@dataclass
class LossConfig:
    """Which loss terms a training run optimizes."""

    use_pixel: bool = True
    use_feat: bool = False
    feat_tap: str = "relu4_1"
    use_color: bool = False
    color_epsilon: float = 1e-6

    def validate(self) -> None:
        if not (self.use_pixel or self.use_feat or self.use_color):
            raise ValueError("at least one loss term must be enabled")
        if self.feat_tap not in TAP_LAYERS:
            raise ValueError(f"unknown feature tap {self.feat_tap!r}")

    def to_dict(self) -> dict:
        return {
            "use_pixel": self.use_pixel,
            "use_feat": self.use_feat,
            "feat_tap": self.feat_tap,
            "use_color": self.use_color,
            "color_epsilon": self.color_epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


def total_loss(pred: Tensor, target: Tensor, cfg: LossConfig,
               fx: FeatureExtractor | None = None, stats=None):
    """Unweighted sum of the enabled terms, plus a per-term breakdown.

    pred and target live in normalized target space when stats (a
    NormStats) is given: the pixel term is computed there, while the
    feature and color terms first map back to display space.  Without
    stats the inputs are treated as display-space images directly.
    """
    cfg.validate()
    if cfg.use_feat and fx is None:
        raise ValueError("feature loss enabled but no feature extractor given")

    def to_display(x: Tensor) -> Tensor:
        if stats is None:
            return x
        return T.channel_affine(x, stats.target_std, stats.target_mean)

    terms: dict[str, Tensor] = {}
    if cfg.use_pixel:
        terms["pixel"] = pixel_loss(pred, target)
    if cfg.use_feat:
        terms["feat"] = feature_loss(to_display(pred), to_display(target), fx)
    if cfg.use_color:
        terms["color"] = color_loss(
            T.clamp(to_display(pred), 0.0, 1.0),
            T.clamp(to_display(target), 0.0, 1.0),
            eps=cfg.color_epsilon,
        )

    total = None
    for term in terms.values():
        total = term if total is None else T.add(total, term)
    breakdown = {name: float(term.data) for name, term in terms.items()}
    breakdown["total"] = float(total.data)
    return total, breakdown
