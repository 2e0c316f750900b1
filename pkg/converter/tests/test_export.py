"""Offline tests for the VGG-19 export pipeline.

A synthetic state dict with the exact torchvision layout stands in for
the pretrained download, so everything here runs without network
access.  Weight values are random but the shapes, key names and module
indices are the real ones.
"""

import numpy as np
import pytest
import torch

from vgg19export import (
    ARCHITECTURE,
    IMAGENET_MEAN,
    IMAGENET_STD,
    LAYER_PLAN,
    TAPS,
    ContainerError,
    ConversionError,
    convert,
    extract_feature_weights,
    fixture_image,
    read_container,
    tap_activations,
    torchvision_index_map,
    write_container,
)
from vgg19export.cli import main
from vgg19export.convert import _load_source

# Module indices of the conv layers inside torchvision's
# vgg19().features, taken from the released model layout.
TORCHVISION_INDICES = {
    "conv1_1": 0, "conv1_2": 2,
    "conv2_1": 5, "conv2_2": 7,
    "conv3_1": 10, "conv3_2": 12, "conv3_3": 14, "conv3_4": 16,
    "conv4_1": 19, "conv4_2": 21, "conv4_3": 23, "conv4_4": 25,
    "conv5_1": 28,
}

EXPECTED_TENSOR_NAMES = [
    f"{name}.{part}"
    for item in LAYER_PLAN if item != "pool"
    for name in [item[0]]
    for part in ("weight", "bias")
]


def synthetic_state_dict(seed: int = 0) -> dict:
    """Random weights in the exact torchvision VGG-19 key layout.

    Scaled by 1/sqrt(fan_in) so activations stay O(1) through the
    stack.  Includes the keys a real checkpoint carries beyond conv5_1
    (later convs, classifier) to prove they are ignored.
    """
    gen = torch.Generator().manual_seed(seed)
    state = {}
    in_ch = 3
    for item in LAYER_PLAN:
        if item == "pool":
            continue
        name, out_ch = item
        idx = TORCHVISION_INDICES[name]
        fan_in = in_ch * 9
        state[f"features.{idx}.weight"] = torch.randn(
            (out_ch, in_ch, 3, 3), generator=gen) * fan_in ** -0.5
        state[f"features.{idx}.bias"] = torch.randn((out_ch,), generator=gen) * 0.01
        in_ch = out_ch
    # Deeper feature convs and the classifier exist in the real file
    # but play no part in the export (kept tiny here).
    state["features.30.weight"] = torch.zeros((2, 2, 3, 3))
    state["features.30.bias"] = torch.zeros((2,))
    state["classifier.0.weight"] = torch.zeros((4, 4))
    state["classifier.0.bias"] = torch.zeros((4,))
    return state


@pytest.fixture(scope="module")
def state_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "vgg19-synthetic.pth"
    torch.save(synthetic_state_dict(), path)
    return path


@pytest.fixture(scope="module")
def exported(tmp_path_factory, state_path):
    out = tmp_path_factory.mktemp("export")
    result = convert(str(out), weights_path=str(state_path), image_size=32)
    return out, result


class TestIndexMap:
    def test_matches_released_layout(self):
        assert torchvision_index_map() == TORCHVISION_INDICES

    def test_rederived_from_torchvision_config(self):
        try:
            from torchvision.models.vgg import cfgs
        except ImportError:
            pytest.skip("torchvision layer config table not importable")
        indices = {}
        idx = 0
        conv_no = 0
        block = 1
        for entry in cfgs["E"]:
            if entry == "M":
                idx += 1
                block += 1
                conv_no = 0
            else:
                conv_no += 1
                indices[f"conv{block}_{conv_no}"] = idx
                idx += 2
        derived = {k: v for k, v in indices.items() if k in TORCHVISION_INDICES}
        assert derived == TORCHVISION_INDICES


class TestExtract:
    def test_full_state_dict(self):
        weights = extract_feature_weights(synthetic_state_dict())
        assert list(weights) == EXPECTED_TENSOR_NAMES
        assert weights["conv1_1.weight"].shape == (64, 3, 3, 3)
        assert weights["conv1_1.bias"].shape == (64,)
        assert weights["conv5_1.weight"].shape == (512, 512, 3, 3)
        assert all(arr.dtype == np.float32 for arr in weights.values())

    def test_values_survive_extraction(self):
        state = synthetic_state_dict()
        weights = extract_feature_weights(state)
        expected = state["features.19.weight"].numpy()
        np.testing.assert_array_equal(weights["conv4_1.weight"], expected)

    def test_missing_layer_lists_names(self):
        state = synthetic_state_dict()
        del state["features.19.weight"]
        del state["features.19.bias"]
        with pytest.raises(ConversionError) as err:
            extract_feature_weights(state)
        assert "conv4_1" in str(err.value)
        assert "features.19.weight" in str(err.value)

    def test_shape_mismatch_reports_layer(self):
        state = synthetic_state_dict()
        state["features.0.weight"] = torch.zeros((64, 3, 5, 5))
        with pytest.raises(ConversionError) as err:
            extract_feature_weights(state)
        assert "conv1_1" in str(err.value)
        assert "(64, 3, 3, 3)" in str(err.value)

    def test_multiple_problems_all_listed(self):
        state = synthetic_state_dict()
        del state["features.0.weight"]
        del state["features.28.weight"]
        with pytest.raises(ConversionError) as err:
            extract_feature_weights(state)
        assert "conv1_1" in str(err.value)
        assert "conv5_1" in str(err.value)


class TestLoadSource:
    def test_plain_state_dict_file(self, state_path):
        state, source = _load_source(str(state_path))
        assert "features.0.weight" in state
        assert "vgg19-synthetic.pth" in source
        assert "sha256" in source

    def test_wrapped_state_dict_unwraps(self, tmp_path):
        wrapped = {"state_dict": synthetic_state_dict(), "epoch": 3}
        path = tmp_path / "wrapped.pth"
        torch.save(wrapped, path)
        state, _ = _load_source(str(path))
        assert "features.0.weight" in state
        assert "epoch" not in state


class TestFixtureImage:
    def test_shape_dtype_range(self):
        img = fixture_image()
        assert img.shape == (1, 3, 64, 64)
        assert img.dtype == np.float32
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_deterministic_per_seed(self):
        np.testing.assert_array_equal(fixture_image(seed=20), fixture_image(seed=20))
        assert np.abs(fixture_image(seed=20) - fixture_image(seed=21)).max() > 0

    def test_not_constant(self):
        img = fixture_image(size=32)
        assert img.std() > 0.05

    @pytest.mark.parametrize("size", [0, 8, 24, -16])
    def test_bad_size_rejected(self, size):
        with pytest.raises(ValueError):
            fixture_image(size=size)


@pytest.fixture(scope="module")
def acts():
    weights = extract_feature_weights(synthetic_state_dict())
    image = fixture_image(size=32, seed=20)
    return weights, image, tap_activations(weights, image)


class TestTapActivations:
    def test_shapes_follow_pooling_depth(self, acts):
        _, _, recorded = acts
        assert set(recorded) == set(TAPS)
        assert recorded["relu4_1"].shape == (1, 512, 4, 4)
        assert recorded["relu5_1"].shape == (1, 512, 2, 2)

    def test_outputs_are_relu_range(self, acts):
        _, _, recorded = acts
        for arr in recorded.values():
            assert np.all(np.isfinite(arr))
            assert arr.min() >= 0.0
            assert arr.max() > 0.0

    def test_matches_module_stack(self, acts):
        """The functional loop must agree with an nn.Sequential replica."""
        weights, image, recorded = acts
        mods = []
        for item in LAYER_PLAN:
            if item == "pool":
                mods.append(torch.nn.MaxPool2d(2))
            else:
                name, _ = item
                w = torch.from_numpy(weights[f"{name}.weight"])
                conv = torch.nn.Conv2d(w.shape[1], w.shape[0], 3, padding=1)
                with torch.no_grad():
                    conv.weight.copy_(w)
                    conv.bias.copy_(torch.from_numpy(weights[f"{name}.bias"]))
                mods.append(conv)
                mods.append(torch.nn.ReLU())
        stack = torch.nn.Sequential(*mods)
        mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
        with torch.no_grad():
            x = (torch.from_numpy(image) - mean) / std
            tap_idx = {TORCHVISION_INDICES[layer] + 1: tap for tap, layer in TAPS.items()}
            for idx, mod in enumerate(stack):
                x = mod(x)
                if idx in tap_idx:
                    ref = x.numpy()
                    got = recorded[tap_idx[idx]]
                    np.testing.assert_allclose(got, ref, atol=1e-5)


class TestConvert:
    def test_writes_all_artifacts(self, exported):
        out, result = exported
        for name in ("vgg19-features.ckpt", "vgg19-fixture.ckpt", "manifest.txt"):
            assert (out / name).exists()
        assert result.tensor_names == EXPECTED_TENSOR_NAMES

    def test_weights_container_contract(self, exported):
        out, _ = exported
        container = read_container(out / "vgg19-features.ckpt")
        assert list(container.tensors) == EXPECTED_TENSOR_NAMES
        assert container.tensor("conv1_1.weight").shape == (64, 3, 3, 3)
        meta = container.metadata
        assert meta["architecture"] == ARCHITECTURE
        assert meta["taps"] == ["relu4_1", "relu5_1"]
        assert meta["input_mean"] == pytest.approx(list(IMAGENET_MEAN))
        assert meta["input_std"] == pytest.approx(list(IMAGENET_STD))
        assert "vgg19-synthetic.pth" in meta["source"]

    def test_fixture_container_contract(self, exported):
        out, result = exported
        container = read_container(out / "vgg19-fixture.ckpt")
        assert list(container.tensors) == ["image", "relu4_1", "relu5_1"]
        np.testing.assert_array_equal(container.tensor("image"), fixture_image(size=32))
        assert container.tensor("relu4_1").shape == (1, 512, 4, 4)
        assert container.tensor("relu5_1").shape == (1, 512, 2, 2)
        assert container.metadata["weights_digest"] == result.weights_digest

    def test_fixture_replays_through_stored_weights(self, exported):
        out, _ = exported
        weights = read_container(out / "vgg19-features.ckpt")
        fixture = read_container(out / "vgg19-fixture.ckpt")
        acts = tap_activations(weights.tensors, fixture.tensor("image"))
        for tap in TAPS:
            np.testing.assert_allclose(acts[tap], fixture.tensor(tap), atol=1e-6)

    def test_manifest_lines(self, exported):
        out, result = exported
        text = (out / "manifest.txt").read_text()
        assert f"weights_digest = {result.weights_digest}" in text
        assert f"fixture_digest = {result.fixture_digest}" in text
        assert "tap relu4_1 = conv4_1" in text
        assert "tap relu5_1 = conv5_1" in text
        assert "source = local vgg19 state dict" in text
        assert "input_mean = 0.485, 0.456, 0.406" in text

    def test_rerun_is_byte_identical(self, exported, state_path):
        out, _ = exported
        before = {name: (out / name).read_bytes()
                  for name in ("vgg19-features.ckpt", "vgg19-fixture.ckpt", "manifest.txt")}
        convert(str(out), weights_path=str(state_path), image_size=32)
        for name, blob in before.items():
            assert (out / name).read_bytes() == blob, f"{name} changed between runs"


class TestContainerFormat:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        tensors = {
            "a.weight": rng.normal(size=(4, 3)).astype(np.float32),
            "a.bias": rng.normal(size=(4,)).astype(np.float64),
        }
        path = tmp_path / "t.ckpt"
        write_container(path, tensors, {"note": "round trip"})
        back = read_container(path)
        assert back.metadata == {"note": "round trip"}
        for name, arr in tensors.items():
            np.testing.assert_array_equal(back.tensor(name), arr)
            assert back.tensor(name).dtype == arr.dtype

    def test_corrupted_payload_rejected(self, tmp_path):
        path = tmp_path / "t.ckpt"
        write_container(path, {"w": np.ones((2, 2), dtype=np.float32)})
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ContainerError, match="digest"):
            read_container(path)

    def test_missing_tensor_accessor(self, tmp_path):
        path = tmp_path / "t.ckpt"
        write_container(path, {"w": np.ones(3, dtype=np.float32)})
        with pytest.raises(ContainerError, match="missing tensor"):
            read_container(path).tensor("nope")

    def test_integer_tensors_rejected(self, tmp_path):
        with pytest.raises(ContainerError, match="dtype"):
            write_container(tmp_path / "t.ckpt", {"w": np.arange(4)})


class TestCli:
    def test_successful_run(self, tmp_path, state_path, capsys):
        out = tmp_path / "artifacts"
        code = main(["--weights", str(state_path), "--out-dir", str(out), "--size", "32"])
        captured = capsys.readouterr()
        assert code == 0
        assert (out / "vgg19-features.ckpt").exists()
        assert "wrote" in captured.out
        assert "relu4_1" in captured.out

    def test_missing_weights_file(self, tmp_path, capsys):
        code = main(["--weights", str(tmp_path / "absent.pth"),
                     "--out-dir", str(tmp_path)])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_bad_fixture_size(self, tmp_path, state_path, capsys):
        code = main(["--weights", str(state_path), "--out-dir", str(tmp_path),
                     "--size", "24"])
        assert code == 2
        assert "multiple of 16" in capsys.readouterr().err
