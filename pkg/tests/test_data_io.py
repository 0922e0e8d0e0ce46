import struct

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from gpgmnet import colorimetry as cm
from gpgmnet import data_io as D
from gpgmnet.colorimetry import Chroma, Frame, Gamut, Transfer
from gpgmnet.errors import DataError, ShapeError
from gpgmnet.model import ModelConfig, init_params

RNG = np.random.default_rng


def random_frame(rng, w, h, bits=10, chroma=Chroma.YUV444):
    peak = (1 << bits) - 1
    shapes = D.plane_shapes(w, h, chroma)
    planes = [rng.integers(0, peak + 1, s) / peak for s in shapes]
    return Frame(planes, Gamut.BT2020, Transfer.PQ, bits, chroma)


class TestYuvFiles:
    def test_roundtrip_10bit(self, tmp_path):
        f = random_frame(RNG(0), 12, 10)
        D.write_yuv(f, tmp_path / "a.yuv")
        back = D.read_yuv(tmp_path / "a.yuv")
        for p, q in zip(f.planes, back.planes):
            assert np.array_equal(cm.quantize(p, 10), cm.quantize(q, 10))
        assert (back.gamut, back.transfer, back.bit_depth) == (Gamut.BT2020, Transfer.PQ, 10)

    def test_8bit_endpoint(self, tmp_path):
        f = Frame([np.ones((2, 2))] * 3, Gamut.BT709, Transfer.GAMMA_SDR, 8)
        D.write_yuv(f, tmp_path / "w.yuv")
        assert np.all(D.read_yuv(tmp_path / "w.yuv").planes[0] == 1.0)

    def test_420_payload_size(self, tmp_path):
        f = random_frame(RNG(1), 16, 16, chroma=Chroma.YUV420)
        D.write_yuv(f, tmp_path / "c.yuv")
        size = (tmp_path / "c.yuv").stat().st_size
        assert size - struct.calcsize("<4sIIIBBBBI") == 2 * (256 + 64 + 64)

    def test_multi_frame(self, tmp_path):
        frames = [random_frame(RNG(i), 6, 4) for i in range(3)]
        D.write_yuv(frames, tmp_path / "m.yuv")
        back = D.read_yuv_frames(tmp_path / "m.yuv")
        assert len(back) == 3
        assert np.array_equal(D.read_samples(tmp_path / "m.yuv", 2)[1], cm.quantize(frames[2].planes[1], 10))
        with pytest.raises(DataError):
            D.read_yuv(tmp_path / "m.yuv", 3)

    def test_bad_magic(self, tmp_path):
        D.write_yuv(random_frame(RNG(0), 4, 4), tmp_path / "a.yuv")
        data = bytearray((tmp_path / "a.yuv").read_bytes())
        data[:4] = b"XXXX"
        (tmp_path / "a.yuv").write_bytes(bytes(data))
        with pytest.raises(DataError):
            D.read_yuv(tmp_path / "a.yuv")

    def test_dimension_overflow(self, tmp_path):
        hdr = struct.pack("<4sIIIBBBBI", b"GPYV", 1, 1 << 20, 4, 10, 0, 1, 1, 1)
        (tmp_path / "big.yuv").write_bytes(hdr)
        with pytest.raises(DataError):
            D.read_yuv(tmp_path / "big.yuv")

    def test_fuzzed_truncation(self, tmp_path):
        D.write_yuv(random_frame(RNG(2), 6, 6, chroma=Chroma.YUV420), tmp_path / "a.yuv")
        data = (tmp_path / "a.yuv").read_bytes()
        for cut in RNG(0).choice(len(data), 40, replace=False):
            (tmp_path / "t.yuv").write_bytes(data[:cut])
            with pytest.raises(DataError):
                D.read_yuv(tmp_path / "t.yuv")


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(blob=st.binary(max_size=80))
def test_random_bytes_never_crash(tmp_path, blob):
    path = tmp_path / "fuzz.bin"
    path.write_bytes(blob)
    for reader in (D.read_yuv, D.load_weights):
        try:
            reader(path)
        except DataError:
            pass


class TestChroma:
    def test_constant(self):
        f = Frame([np.full((8, 8), 0.3), np.full((8, 8), 0.6), np.full((8, 8), 0.2)])
        down = D.chroma_444_to_420(f)
        assert down.planes[1].shape == (4, 4) and np.allclose(down.planes[1], 0.6)
        up = D.chroma_420_to_444(down)
        assert up.planes[2].shape == (8, 8) and np.allclose(up.planes[2], 0.2)

    def test_smooth_roundtrip(self):
        yy, xx = np.mgrid[0:32, 0:32] / 32.0
        c = 0.5 + 0.2 * np.sin(2 * np.pi * xx) * np.cos(np.pi * yy)
        f = Frame([c, c, 1 - c])
        back = D.chroma_420_to_444(D.chroma_444_to_420(f))
        assert np.sqrt(np.mean((back.planes[1] - c) ** 2)) < 1e-2

    def test_odd_dimensions(self):
        with pytest.raises(ShapeError):
            D.chroma_444_to_420(Frame([np.zeros((5, 4))] * 3))


class TestWeights:
    def test_roundtrip(self, tmp_path):
        cfg = ModelConfig(scale=2, n_jmrm=1, channels=8)
        P = init_params(cfg, 3)
        D.save_weights(P, tmp_path / "w.bin")
        back = D.load_weights(tmp_path / "w.bin", cfg)
        assert list(back) == list(P) and all(np.array_equal(back[k], P[k]) for k in P)

    def test_truncated_names_tensor(self, tmp_path):
        cfg = ModelConfig(scale=2, n_jmrm=1, channels=8)
        D.save_weights(init_params(cfg, 0), tmp_path / "w.bin")
        data = (tmp_path / "w.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(data[:-4])
        with pytest.raises(D.WeightsError, match="cl.bias"):
            D.load_weights(tmp_path / "t.bin")

    def test_fuzzed_truncation(self, tmp_path):
        cfg = ModelConfig(scale=2, n_jmrm=1, channels=4, cccb_width=4, sscb_width=4, spcb_width=4)
        D.save_weights(init_params(cfg, 0), tmp_path / "w.bin")
        data = (tmp_path / "w.bin").read_bytes()
        for cut in RNG(1).choice(len(data), 50, replace=False):
            (tmp_path / "t.bin").write_bytes(data[:cut])
            with pytest.raises(D.WeightsError):
                D.load_weights(tmp_path / "t.bin")

    def test_scale_mismatch_lists_upsampler(self, tmp_path):
        D.save_weights(init_params(ModelConfig(scale=2), 0), tmp_path / "x2.bin")
        with pytest.raises(D.WeightsError) as err:
            D.load_weights(tmp_path / "x2.bin", ModelConfig(scale=4))
        assert err.value.missing and all(name.startswith("up.") for name in err.value.missing)

    def test_bad_version(self, tmp_path):
        (tmp_path / "v.bin").write_bytes(b"GPGM" + struct.pack("<II", 9, 0))
        with pytest.raises(D.WeightsError):
            D.load_weights(tmp_path / "v.bin")


class TestSynthesis:
    def test_scene(self):
        a, b = D.synth_scene(5, 64, 48), D.synth_scene(5, 64, 48)
        px = a.pixels
        assert np.array_equal(px, b.pixels) and px.shape == (1, 3, 48, 64)
        assert px.min() >= 0 and px.max() <= 1
        lum = cm.rgb_to_yuv(px, Gamut.BT2020)[:, 0]   # linear luma
        assert np.mean(lum > 100 * D.NITS) >= 0.01

    def test_degrade(self):
        lr, hr = D.degrade(D.synth_scene(0, 160, 160), 4)
        assert (lr.width, lr.height, hr.width, hr.height) == (40, 40, 160, 160)
        assert (lr.bit_depth, lr.gamut, hr.bit_depth, hr.gamut) == (8, Gamut.BT709, 10, Gamut.BT2020)
        lr2, hr2 = D.degrade(D.synth_scene(0, 160, 160), 4)
        assert np.array_equal(lr.pixels, lr2.pixels) and np.array_equal(hr.pixels, hr2.pixels)

    def test_degrade_crops_to_multiple(self):
        lr, hr = D.degrade(D.synth_scene(0, 50, 43), 4)
        assert (hr.width, hr.height) == (4 * lr.width, 4 * lr.height)

    def test_sample_patches(self):
        pair = D.degrade(D.synth_scene(1, 200, 180), 4)
        lr, hr = D.sample_patches(pair, 40, 5, RNG(3))
        assert lr.shape == (5, 3, 40, 40) and hr.shape == (5, 3, 160, 160)
        lr2, hr2 = D.sample_patches(pair, 40, 5, RNG(3))
        assert np.array_equal(lr, lr2) and np.array_equal(hr, hr2)
        full_lr, full_hr = pair[0].pixels[0].astype(np.float32), pair[1].pixels[0].astype(np.float32)
        for k in range(5):
            hits = [(y, x) for y in range(full_lr.shape[1] - 39) for x in range(full_lr.shape[2] - 39)
                    if np.array_equal(full_lr[:, y:y + 40, x:x + 40], lr[k])]
            assert any(np.array_equal(full_hr[:, 4 * y:4 * y + 160, 4 * x:4 * x + 160], hr[k]) for y, x in hits)

    def test_patch_too_large(self):
        pair = D.degrade(D.synth_scene(1, 80, 80), 4)
        with pytest.raises(ShapeError):
            D.sample_patches(pair, 40, 1, RNG(0))

    def test_color_bar(self):
        a, b = D.color_bar(96, 56), D.color_bar(96, 56)
        assert np.array_equal(a.pixels, b.pixels)
        assert len(a.meta["bars"]) >= 6
        for _, r0, r1 in a.meta["bars"]:
            y = a.planes[0][(r0 + r1) // 2]
            assert np.all(np.diff(y) >= 0)


class TestManifest:
    def test_generate_and_regenerate(self, tmp_path):
        m1 = D.generate_dataset(tmp_path / "a", 2, 48, 48, 2, 7)
        m2 = D.generate_dataset(tmp_path / "b", 2, 48, 48, 2, 7)
        man = D.read_manifest(m1)
        assert man.scale == 2 and len(man.entries) == 2
        for lr, hr, _ in man.entries:
            assert (tmp_path / "a" / lr).read_bytes() == (tmp_path / "b" / lr).read_bytes()
            assert (tmp_path / "a" / hr).read_bytes() == (tmp_path / "b" / hr).read_bytes()
        pairs = man.load_pairs()
        assert pairs[0][1].width == 2 * pairs[0][0].width
        # regeneration from the recorded seed reproduces the stored frames
        lr, hr = D.degrade(D.synth_scene(man.entries[1][2], 48, 48), 2)
        assert np.array_equal(cm.quantize(lr.pixels, 8), cm.quantize(pairs[1][0].pixels, 8))
        assert m2.exists()

    def test_bad_manifest(self, tmp_path):
        with pytest.raises(DataError):
            D.read_manifest(tmp_path / "missing.txt")
        (tmp_path / "m.txt").write_text("a.yuv\tb.yuv\n")
        with pytest.raises(DataError):
            D.read_manifest(tmp_path / "m.txt")
