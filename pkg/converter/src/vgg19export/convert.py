"""Turn a pretrained VGG-19 into feature-weight and fixture containers.

Only the convolutional stack through conv5_1 is kept, because the two
supported tap points (relu4_1, relu5_1) never need anything deeper.
Alongside the weights we emit a fixture container holding a
deterministic probe image and its activations at both taps, computed
with torch.  A consumer can replay the probe through its own forward
pass and compare against the stored activations to prove the conversion
round-trips.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container

# Conv layers in order, with output widths; "pool" marks the 2x2 max
# pooling between blocks.  This mirrors the torchvision VGG-19 feature
# stack truncated after conv5_1.
LAYER_PLAN = (
    ("conv1_1", 64), ("conv1_2", 64), "pool",
    ("conv2_1", 128), ("conv2_2", 128), "pool",
    ("conv3_1", 256), ("conv3_2", 256), ("conv3_3", 256), ("conv3_4", 256), "pool",
    ("conv4_1", 512), ("conv4_2", 512), ("conv4_3", 512), ("conv4_4", 512), "pool",
    ("conv5_1", 512),
)

# Tap name -> the conv layer whose ReLU output is recorded.
TAPS = {"relu4_1": "conv4_1", "relu5_1": "conv5_1"}

# Normalization the network was trained with (ImageNet channel stats).
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

ARCHITECTURE = "vgg19-features"

WEIGHTS_FILENAME = "vgg19-features.ckpt"
FIXTURE_FILENAME = "vgg19-fixture.ckpt"
MANIFEST_FILENAME = "manifest.txt"


class ConversionError(RuntimeError):
    """Source weights could not be mapped onto the layer plan."""


def torchvision_index_map() -> dict[str, int]:
    """Layer name -> module index in torchvision's vgg19().features.

    The feature stack interleaves Conv2d and ReLU modules, with one
    MaxPool2d between blocks, so each conv advances the index by two
    and each pool by one.
    """
    indices = {}
    idx = 0
    for item in LAYER_PLAN:
        if item == "pool":
            idx += 1
        else:
            name, _ = item
            indices[name] = idx
            idx += 2
    return indices


def _to_numpy(value) -> np.ndarray:
    if hasattr(value, "detach"):
        value = value.detach().cpu().numpy()
    return np.asarray(value)


def extract_feature_weights(state_dict: dict) -> dict[str, np.ndarray]:
    """Pull the conv weights out of a torchvision VGG-19 state dict.

    Returns float32 arrays keyed "conv1_1.weight", "conv1_1.bias" and
    so on.  Raises ConversionError listing every layer that is missing
    from the state dict or whose shape disagrees with the plan, so a
    wrong or truncated source fails loudly instead of producing a
    container that only breaks downstream.
    """
    indices = torchvision_index_map()
    weights: dict[str, np.ndarray] = {}
    problems: list[str] = []
    in_ch = 3
    for item in LAYER_PLAN:
        if item == "pool":
            continue
        name, out_ch = item
        idx = indices[name]
        wkey, bkey = f"features.{idx}.weight", f"features.{idx}.bias"
        if wkey not in state_dict or bkey not in state_dict:
            problems.append(f"{name}: state dict has no {wkey} / {bkey}")
            in_ch = out_ch
            continue
        w = _to_numpy(state_dict[wkey])
        b = _to_numpy(state_dict[bkey])
        expected = (out_ch, in_ch, 3, 3)
        if tuple(w.shape) != expected or tuple(b.shape) != (out_ch,):
            problems.append(f"{name}: weight {tuple(w.shape)} / bias {tuple(b.shape)}, "
                            f"expected {expected} / ({out_ch},)")
        else:
            weights[f"{name}.weight"] = np.ascontiguousarray(w, dtype=np.float32)
            weights[f"{name}.bias"] = np.ascontiguousarray(b, dtype=np.float32)
        in_ch = out_ch
    if problems:
        raise ConversionError("cannot map source weights onto the VGG-19 feature plan:\n  "
                              + "\n  ".join(problems))
    return weights


def fixture_image(size: int = 64, seed: int = 20) -> np.ndarray:
    """Deterministic probe image, shape (1, 3, size, size) in [0, 1].

    Smooth channel gradients keep low frequencies populated, seeded
    uniform noise keeps every conv kernel busy; together they light up
    all tap channels without depending on any external image file.
    """
    if size < 16 or size % 16:
        raise ValueError(f"fixture size must be a positive multiple of 16, got {size}")
    rng = np.random.default_rng(seed)
    ramp = np.linspace(0.0, 1.0, size)
    x = np.tile(ramp, (size, 1))
    y = x.T
    base = np.stack([x, y, 0.5 * (x + y)])
    img = 0.75 * base + 0.25 * rng.uniform(0.0, 1.0, size=(3, size, size))
    return np.clip(img, 0.0, 1.0).astype(np.float32)[None]


def tap_activations(weights: dict[str, np.ndarray], image: np.ndarray) -> dict[str, np.ndarray]:
    """Run the probe through the conv stack, recording each tap output.

    Uses torch for the forward pass so the stored activations come from
    the same kernels that produced the pretrained weights, normalizing
    with the ImageNet channel stats first.
    """
    import torch
    import torch.nn.functional as F

    with torch.no_grad():
        x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
        mean = torch.tensor(IMAGENET_MEAN, dtype=torch.float32).view(1, 3, 1, 1)
        std = torch.tensor(IMAGENET_STD, dtype=torch.float32).view(1, 3, 1, 1)
        x = (x - mean) / std
        wanted = {layer: tap for tap, layer in TAPS.items()}
        recorded: dict[str, np.ndarray] = {}
        for item in LAYER_PLAN:
            if item == "pool":
                x = F.max_pool2d(x, 2)
                continue
            name, _ = item
            w = torch.from_numpy(weights[f"{name}.weight"])
            b = torch.from_numpy(weights[f"{name}.bias"])
            x = F.relu(F.conv2d(x, w, b, padding=1))
            if name in wanted:
                recorded[wanted[name]] = x.numpy().copy()
    return recorded


def _load_source(weights_path: str | None) -> tuple[dict, str]:
    """Return (state_dict, source description)."""
    import torch

    if weights_path is None:
        import torchvision
        from torchvision.models import VGG19_Weights

        enum = VGG19_Weights.IMAGENET1K_V1
        state = enum.get_state_dict(progress=False)
        source = f"torchvision {torchvision.__version__} vgg19 IMAGENET1K_V1"
        return state, source

    with open(weights_path, "rb") as f:
        file_digest = hashlib.sha256(f.read()).hexdigest()
    state = torch.load(weights_path, map_location="cpu", weights_only=True)
    if isinstance(state, dict) and "state_dict" in state and isinstance(state["state_dict"], dict):
        state = state["state_dict"]
    source = f"local vgg19 state dict {os.path.basename(weights_path)} (sha256 {file_digest})"
    return state, source


@dataclass
class ConversionResult:
    weights_path: str
    fixture_path: str
    manifest_path: str
    source: str
    weights_digest: str
    fixture_digest: str
    tensor_names: list[str] = field(default_factory=list)
    tap_shapes: dict[str, tuple] = field(default_factory=dict)


def convert(out_dir: str, weights_path: str | None = None,
            image_size: int = 64, image_seed: int = 20) -> ConversionResult:
    """Produce vgg19-features.ckpt, vgg19-fixture.ckpt and manifest.txt.

    Reruns over the same source are byte-identical: the container
    encoding is canonical and the fixture image is seeded.  Both files
    are re-read after writing, which exercises the digest check.
    """
    state, source = _load_source(weights_path)
    weights = extract_feature_weights(state)

    metadata = {
        "architecture": ARCHITECTURE,
        "taps": sorted(TAPS),
        "input_mean": list(IMAGENET_MEAN),
        "input_std": list(IMAGENET_STD),
        "source": source,
    }
    weights_file = os.path.join(out_dir, WEIGHTS_FILENAME)
    write_container(weights_file, weights, metadata)
    weights_back = read_container(weights_file)

    image = fixture_image(image_size, image_seed)
    acts = tap_activations(weights, image)
    for tap, arr in acts.items():
        if not np.all(np.isfinite(arr)):
            raise ConversionError(f"tap {tap} produced non-finite activations")

    fixture_tensors = {"image": image}
    fixture_tensors.update({tap: acts[tap] for tap in sorted(acts)})
    fixture_meta = {
        "kind": "feature-fixture",
        "architecture": ARCHITECTURE,
        "source": source,
        "weights_digest": weights_back.digest,
        "input_mean": list(IMAGENET_MEAN),
        "input_std": list(IMAGENET_STD),
        "image_seed": image_seed,
    }
    fixture_file = os.path.join(out_dir, FIXTURE_FILENAME)
    write_container(fixture_file, fixture_tensors, fixture_meta)
    fixture_back = read_container(fixture_file)

    import torch

    manifest_file = os.path.join(out_dir, MANIFEST_FILENAME)
    lines = [
        "kind = vgg19-export-manifest",
        f"source = {source}",
        f"torch = {torch.__version__}",
        f"architecture = {ARCHITECTURE}",
    ]
    for tap in sorted(TAPS):
        lines.append(f"tap {tap} = {TAPS[tap]} output, shape "
                     f"{'x'.join(str(d) for d in acts[tap].shape)}")
    lines += [
        f"input_mean = {', '.join(str(v) for v in IMAGENET_MEAN)}",
        f"input_std = {', '.join(str(v) for v in IMAGENET_STD)}",
        f"weights_file = {WEIGHTS_FILENAME}",
        f"weights_digest = {weights_back.digest}",
        f"weights_tensors = {len(weights)}",
        f"fixture_file = {FIXTURE_FILENAME}",
        f"fixture_digest = {fixture_back.digest}",
        f"fixture_image = {image_size}x{image_size}, seed {image_seed}",
    ]
    with open(manifest_file, "w") as f:
        f.write("\n".join(lines) + "\n")

    return ConversionResult(
        weights_path=weights_file,
        fixture_path=fixture_file,
        manifest_path=manifest_file,
        source=source,
        weights_digest=weights_back.digest,
        fixture_digest=fixture_back.digest,
        tensor_names=list(weights),
        tap_shapes={tap: tuple(acts[tap].shape) for tap in sorted(acts)},
    )
