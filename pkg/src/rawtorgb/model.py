"""Two-stage attention U-Net for raw-to-RGB mapping.

Stage 1 maps the raw mosaic to an RGB image; stage 2 refines that RGB.
Each stage is a U-Net whose expanding path uses channel attention, with
a long skip connection from the first contracting block to the last
expanding block.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor, rng_from


@dataclass
class ModelConfig:
    """Architecture hyperparameters for one U-Net stage."""

    depth: int = 4
    base_channels: int = 32
    ca_reduction: int = 8
    in_channels: int = 1
    out_channels: int = 3
    prelu_init: float = 0.2
    long_skip: bool = True
    # packed-mosaic mode: the network runs at half resolution and the
    # final RGB is upsampled 2x back to sensor resolution
    upsample_output: bool = False

    def validate(self) -> None:
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.ca_reduction < 1:
            raise ValueError(f"ca_reduction must be >= 1, got {self.ca_reduction}")
        for level in range(self.depth):
            ch = self.base_channels * (2 ** level)
            if ch % self.ca_reduction:
                raise ValueError(
                    f"ca_reduction={self.ca_reduction} does not divide the "
                    f"expanding-path channel count {ch} at level {level}"
                )

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "base_channels": self.base_channels,
            "ca_reduction": self.ca_reduction,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "prelu_init": self.prelu_init,
            "long_skip": self.long_skip,
            "upsample_output": self.upsample_output,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


def tiny_config(**overrides) -> ModelConfig:
    """Small preset for tests: depth 2, 8 base channels."""
    cfg = ModelConfig(depth=2, base_channels=8, ca_reduction=8)
    cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _conv_init(rng, out_ch, in_ch, k=3):
    bound = np.sqrt(6.0 / (in_ch * k * k))
    return rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k))


def _fc_init(rng, out_ch, in_ch):
    bound = np.sqrt(6.0 / in_ch)
    return rng.uniform(-bound, bound, size=(out_ch, in_ch))


class ConvsBlock:
    """Three (3x3 conv, PReLU) stages; the first conv changes channels."""

    def __init__(self, name: str, in_ch: int, out_ch: int, rng, prelu_init: float):
        self.name = name
        self.out_channels = out_ch
        self._params: list[Tensor] = []
        self.convs = []
        for i in range(3):
            cin = in_ch if i == 0 else out_ch
            w = self._add(f"conv{i}.weight", _conv_init(rng, out_ch, cin))
            b = self._add(f"conv{i}.bias", np.zeros(out_ch))
            s = self._add(f"conv{i}.slope", np.full(1, prelu_init))
            self.convs.append((w, b, s))

    def _add(self, suffix: str, data) -> Tensor:
        p = Tensor(data, requires_grad=True, name=f"{self.name}.{suffix}")
        self._params.append(p)
        return p

    def parameters(self) -> list[Tensor]:
        return list(self._params)

    def forward(self, x: Tensor) -> Tensor:
        for w, b, s in self.convs:
            x = T.prelu(T.conv2d(x, w, b, stride=1, padding=1), s)
        return x


class ChannelAttention:
    """Squeeze-and-excitation gate: GAP -> FC -> ReLU -> FC -> sigmoid."""

    def __init__(self, name: str, channels: int, reduction: int, rng):
        self.name = name
        hidden = channels // reduction
        self._params: list[Tensor] = []
        self.fc1_w = self._add("fc1.weight", _fc_init(rng, hidden, channels))
        self.fc1_b = self._add("fc1.bias", np.zeros(hidden))
        self.fc2_w = self._add("fc2.weight", _fc_init(rng, channels, hidden))
        self.fc2_b = self._add("fc2.bias", np.zeros(channels))

    def _add(self, suffix: str, data) -> Tensor:
        p = Tensor(data, requires_grad=True, name=f"{self.name}.{suffix}")
        self._params.append(p)
        return p

    def parameters(self) -> list[Tensor]:
        return list(self._params)

    def forward(self, x: Tensor) -> Tensor:
        """Per-channel weights in (0, 1), shape (N, C, 1, 1)."""
        g = T.global_avg_pool(x)
        g = T.relu(T.fully_connected(g, self.fc1_w, self.fc1_b))
        return T.sigmoid(T.fully_connected(g, self.fc2_w, self.fc2_b))


class CAConvsBlock:
    """ConvsBlock whose output is rescaled by learned channel weights."""

    def __init__(self, name: str, in_ch: int, out_ch: int, reduction: int,
                 rng, prelu_init: float):
        self.name = name
        self.convs = ConvsBlock(f"{name}.convs", in_ch, out_ch, rng, prelu_init)
        self.attention = ChannelAttention(f"{name}.attn", out_ch, reduction, rng)

    def parameters(self) -> list[Tensor]:
        return self.convs.parameters() + self.attention.parameters()

    def attention_parameters(self) -> list[Tensor]:
        return self.attention.parameters()

    def forward(self, x: Tensor, attention_override: float | None = None) -> Tensor:
        y = self.convs.forward(x)
        if attention_override is not None:
            return T.mul_scalar(y, attention_override)
        return T.mul(y, self.attention.forward(y))


class AttentionUNet:
    """One U-Net stage: contracting path, attention expanding path, long skip."""

    def __init__(self, config: ModelConfig, seed: int = 0, name: str = "unet"):
        config.validate()
        self.config = config
        self.name = name
        rng = rng_from(seed, f"init/{name}")

        base, depth = config.base_channels, config.depth
        self.down_blocks = []
        ch_in = config.in_channels
        for level in range(depth):
            ch_out = base * (2 ** level)
            self.down_blocks.append(
                ConvsBlock(f"{name}.down{level}", ch_in, ch_out, rng, config.prelu_init))
            ch_in = ch_out
        self.bottleneck = ConvsBlock(f"{name}.bottleneck", ch_in, base * (2 ** depth),
                                     rng, config.prelu_init)
        self.up_blocks = []
        for level in reversed(range(depth)):
            skip_ch = base * (2 ** level)
            below_ch = base * (2 ** (level + 1))
            self.up_blocks.append(
                CAConvsBlock(f"{name}.up{level}", below_ch + skip_ch, skip_ch,
                             config.ca_reduction, rng, config.prelu_init))
        self.final_w = Tensor(_conv_init(rng, config.out_channels, base),
                              requires_grad=True, name=f"{name}.final.weight")
        self.final_b = Tensor(np.zeros(config.out_channels),
                              requires_grad=True, name=f"{name}.final.bias")

    def parameters(self) -> list[Tensor]:
        out = []
        for blk in self.down_blocks:
            out += blk.parameters()
        out += self.bottleneck.parameters()
        for blk in self.up_blocks:
            out += blk.parameters()
        out += [self.final_w, self.final_b]
        return out

    def attention_parameters(self) -> list[Tensor]:
        out = []
        for blk in self.up_blocks:
            out += blk.attention_parameters()
        return out

    def forward(self, x: Tensor, attention_override: float | None = None,
                long_skip: bool | None = None) -> Tensor:
        """Map (N, in_channels, H, W) to (N, out_channels, H, W).

        attention_override replaces every attention gate by a constant
        (ablation hook); long_skip overrides the config flag when given.
        """
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"{self.name}: expected (N, {self.config.in_channels}, H, W), "
                f"got {tuple(x.shape)}")
        divisor = 2 ** self.config.depth
        if x.shape[2] % divisor or x.shape[3] % divisor:
            raise ShapeError(
                f"{self.name}: spatial dims {x.shape[2]}x{x.shape[3]} must be "
                f"divisible by {divisor} (depth {self.config.depth})")
        use_long_skip = self.config.long_skip if long_skip is None else long_skip

        skips = []
        h = x
        for blk in self.down_blocks:
            h = blk.forward(h)
            skips.append(h)
            h = T.maxpool2x2(h)
        h = self.bottleneck.forward(h)
        for blk, skip in zip(self.up_blocks, reversed(skips)):
            h = T.bilinear_upsample2x(h)
            h = T.concat_channels(h, skip)
            h = blk.forward(h, attention_override=attention_override)
        if use_long_skip:
            h = T.add(h, skips[0])
        out = T.conv2d(h, self.final_w, self.final_b, stride=1, padding=1)
        if self.config.upsample_output:
            out = T.bilinear_upsample2x(out)
        return out


class TwoStageModel:
    """Stage-1 U-Net on the raw mosaic, stage-2 U-Net refining its RGB."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        stage2_cfg = replace(config, in_channels=config.out_channels,
                             upsample_output=False)
        self.stage1 = AttentionUNet(config, seed=seed, name="stage1")
        self.stage2 = AttentionUNet(stage2_cfg, seed=seed + 1, name="stage2")

    def parameters(self) -> list[Tensor]:
        return self.stage1.parameters() + self.stage2.parameters()

    def named_parameters(self) -> dict[str, Tensor]:
        named = {}
        for p in self.parameters():
            if p.name in named:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            named[p.name] = p
        return named

    def stage_parameters(self, stage: int) -> list[Tensor]:
        if stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {stage}")
        return (self.stage1 if stage == 1 else self.stage2).parameters()

    def set_stage_trainable(self, stage: int, trainable: bool) -> None:
        """Freeze or unfreeze one stage; frozen tensors never get grads."""
        for p in self.stage_parameters(stage):
            p.requires_grad = trainable
            if not trainable:
                p.grad = None

    def forward(self, x: Tensor, stage: str = "both"):
        """Return (rgb1, rgb2); rgb2 is None when stage == "1"."""
        if stage not in ("1", "both"):
            raise ValueError(f"stage must be '1' or 'both', got {stage!r}")
        rgb1 = self.stage1.forward(x)
        if stage == "1":
            return rgb1, None
        return rgb1, self.stage2.forward(rgb1)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def attention_parameter_count(self) -> int:
        attn = self.stage1.attention_parameters() + self.stage2.attention_parameters()
        return int(sum(p.size for p in attn))

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        named = self.named_parameters()
        missing = sorted(set(named) - set(arrays))
        extra = sorted(set(arrays) - set(named))
        if missing or extra:
            raise ValueError(f"state mismatch: missing={missing[:4]} extra={extra[:4]}")
        for name, p in named.items():
            arr = np.asarray(arrays[name])
            if arr.shape != p.data.shape:
                raise ShapeError(
                    f"{name}: shape {arr.shape} does not match {p.data.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)
