import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from hifiseg.checkpoint import CheckpointError, load_checkpoint, load_model, save_checkpoint, save_model
from hifiseg.core.tensor import Tensor
from hifiseg.data import (
    SCALES,
    SynthConfig,
    blob_area_bounds,
    load_dataset,
    load_sample,
    multiscale_batch,
    read_mask,
    resize_mask,
    save_dataset,
    save_mask,
    snap_to_multiple,
    synth_generate,
)
from hifiseg.model import HiFiSeg, ModelConfig


def _write_pair(tmp_path, h, w, rng, stem="a"):
    img = (rng.random((h, w, 3)) * 255).astype(np.uint8)
    mask = ((rng.random((h, w)) > 0.5) * 255).astype(np.uint8)
    ip, mp = tmp_path / f"{stem}.png", tmp_path / f"{stem}_m.png"
    Image.fromarray(img).save(ip)
    Image.fromarray(mask).save(mp)
    return ip, mp, mask


class TestLoading:
    def test_clinic_size_resized(self, tmp_path, rng):
        ip, mp, _ = _write_pair(tmp_path, 288, 384, rng)
        s = load_sample(ip, mp, 352)
        assert s.image.shape == (1, 3, 352, 352) and s.mask.shape == (1, 1, 352, 352)
        assert set(np.unique(s.mask)) <= {0, 1}
        assert 0 <= s.image.min() and s.image.max() <= 1

    def test_mask_identity_at_target(self, tmp_path, rng):
        ip, mp, mask = _write_pair(tmp_path, 64, 64, rng)
        s = load_sample(ip, mp, 64)
        np.testing.assert_array_equal(s.mask[0, 0], (mask >= 128).astype(np.uint8))

    def test_size_mismatch(self, tmp_path, rng):
        ip, _, _ = _write_pair(tmp_path, 32, 32, rng)
        _, mp, _ = _write_pair(tmp_path, 32, 40, rng, stem="b")
        with pytest.raises(ValueError):
            load_sample(ip, mp, 32)

    def test_unreadable(self, tmp_path):
        bad = tmp_path / "x.png"
        bad.write_bytes(b"nope")
        with pytest.raises(OSError):
            read_mask(bad)

    @pytest.mark.parametrize("suffix", [".png", ".pgm"])
    def test_mask_round_trip(self, tmp_path, rng, suffix):
        m = (rng.random((13, 17)) > 0.5).astype(np.uint8)
        save_mask(tmp_path / f"m{suffix}", m)
        np.testing.assert_array_equal(read_mask(tmp_path / f"m{suffix}"), m)

    def test_directory_layout(self, tmp_path):
        samples = synth_generate(SynthConfig(canvas=32), 3)
        save_dataset(samples, tmp_path)
        back = load_dataset(tmp_path, 32)
        assert [s.id for s in back] == sorted(s.id for s in samples)
        for a, b in zip(samples, back):
            np.testing.assert_array_equal(a.mask, b.mask)
            np.testing.assert_allclose(a.image, b.image, atol=1 / 255)

    def test_manifest(self, tmp_path, rng):
        ip, mp, _ = _write_pair(tmp_path, 32, 32, rng)
        (tmp_path / "manifest.csv").write_text(f"id,image,mask\nzz,{ip.name},{mp.name}\n")
        assert [s.id for s in load_dataset(tmp_path, 32)] == ["zz"]

    def test_empty_dir(self, tmp_path):
        (tmp_path / "images").mkdir()
        (tmp_path / "masks").mkdir()
        with pytest.raises(ValueError, match="no samples"):
            load_dataset(tmp_path, 32)


class TestMultiscale:
    @pytest.mark.parametrize("size,expect", [(440, 448), (264, 256), (352, 352), (48, 64), (80, 96), (10, 32)])
    def test_snap(self, size, expect):
        assert snap_to_multiple(size) == expect

    @pytest.mark.parametrize("scale", SCALES)
    def test_batch_sizes(self, scale):
        images, masks = multiscale_batch(synth_generate(SynthConfig(), 2), scale)
        assert images.shape[2] % 32 == 0 and images.shape[3] % 32 == 0
        assert images.shape[2:] == masks.shape[2:]
        assert set(np.unique(masks)) <= {0, 1}

    def test_identity_scale(self):
        samples = synth_generate(SynthConfig(), 2)
        images, masks = multiscale_batch(samples, 1.0)
        np.testing.assert_array_equal(images[0], samples[0].image[0])

    def test_invalid_scale(self):
        with pytest.raises(ValueError):
            multiscale_batch(synth_generate(SynthConfig(), 1), 0.5)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.uint8, (1, 1, 7, 9), elements=st.integers(0, 1)), st.integers(1, 40), st.integers(1, 40))
    def test_mask_resize_binary(self, m, h, w):
        out = resize_mask(m, h, w)
        assert out.shape == (1, 1, h, w) and set(np.unique(out)) <= {0, 1}


class TestSynth:
    def test_deterministic(self):
        a = synth_generate(SynthConfig(seed=7), 4)
        b = synth_generate(SynthConfig(seed=7), 4)
        for x, y in zip(a, b):
            assert x.image.tobytes() == y.image.tobytes() and x.mask.tobytes() == y.mask.tobytes()

    def test_prefix_stable(self):
        a = synth_generate(SynthConfig(seed=2), 5)
        b = synth_generate(SynthConfig(seed=2), 2)
        assert a[1].image.tobytes() == b[1].image.tobytes()

    def test_single_blob_area_bounds(self):
        cfg = SynthConfig(canvas=96, n_blobs=(1, 1), seed=3)
        lo, hi = blob_area_bounds(cfg)
        for s in synth_generate(cfg, 30):
            assert lo * 0.9 <= s.mask.sum() <= hi * 1.1
            assert s.mask.dtype == np.uint8 and s.mask.any()

    def test_value_ranges(self):
        for s in synth_generate(SynthConfig(), 5):
            assert s.image.dtype == np.float32 and 0 <= s.image.min() and s.image.max() <= 1
            assert set(np.unique(s.mask)) <= {0, 1}

    def test_rejects(self):
        with pytest.raises(ValueError):
            synth_generate(SynthConfig(), 0)
        with pytest.raises(ValueError):
            SynthConfig(n_blobs=(0, 2))
        with pytest.raises(ValueError):
            SynthConfig(radius=(0.3, 0.45), amplitude=0.2)


class TestCheckpoint:
    def test_raw_round_trip(self, tmp_path, rng):
        tensors = {"a": rng.random((2, 3, 1, 1)).astype(np.float32), "b.c": rng.random((1, 4, 1, 1)).astype(np.float32)}
        save_checkpoint(tmp_path / "x.hifi", tensors, {"k": 1})
        back, cfg = load_checkpoint(tmp_path / "x.hifi")
        assert cfg == {"k": 1} and list(back) == ["a", "b.c"]
        for k in tensors:
            assert back[k].tobytes() == tensors[k].tobytes()

    def test_model_round_trip(self, tmp_path, rng):
        model = HiFiSeg(ModelConfig.toy().variant("w/o SAM"), seed=5)
        save_model(tmp_path / "m.hifi", model, {"step": 3})
        loaded, cfg = load_model(tmp_path / "m.hifi")
        assert cfg["step"] == 3 and loaded.cfg == model.cfg
        x = Tensor(rng.random((1, 3, 32, 32)).astype(np.float32))
        np.testing.assert_array_equal(model(x).p1.data, loaded(x).p1.data)

    def test_corruption(self, tmp_path):
        path = tmp_path / "x.hifi"
        save_checkpoint(path, {"a": np.zeros((2, 2, 1, 1), np.float32)}, {})
        raw = path.read_bytes()
        path.write_bytes(b"XXXX1" + raw[5:])
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)
        path.write_bytes(raw[:-3])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)
        path.write_bytes(raw + b"\0")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_config_mismatch(self, tmp_path):
        model = HiFiSeg(ModelConfig.toy())
        tensors = model.state_dict()
        tensors.pop(next(iter(tensors)))
        save_checkpoint(tmp_path / "m.hifi", tensors, {"model": model.cfg.to_dict()})
        with pytest.raises(CheckpointError):
            load_model(tmp_path / "m.hifi")
