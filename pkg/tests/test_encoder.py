"""Encoder forward pass, cosine distance, checkpoint format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapwatch import encoder as enc
from gapwatch.errors import CheckpointMismatch, ContractViolation


def random_frame(rng):
    return rng.random((enc.INPUT_SIZE, enc.INPUT_SIZE))


class TestEncode:
    def test_deterministic(self):
        rng = np.random.default_rng(0)
        params = enc.EncoderParams.init(3)
        frame = random_frame(rng)
        f1 = enc.encode(params, frame)
        f2 = enc.encode(params, frame)
        assert np.array_equal(f1, f2)
        assert f1.shape == (enc.EMBED_DIM,)

    def test_zero_weights_zero_embedding(self):
        params = enc.EncoderParams.zeros()
        frame = random_frame(np.random.default_rng(1))
        assert np.all(enc.encode(params, frame) == 0.0)

    def test_parameter_budget(self):
        params = enc.EncoderParams.init(0)
        assert params.n_params < 1_000_000
        assert params.n_params == 755_296

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        params = enc.EncoderParams.init(5)
        frames = rng.random((4, 64, 64))
        batch = enc.encode_batch(params, frames)
        for i in range(4):
            assert np.allclose(batch[i], enc.encode(params, frames[i]), atol=1e-12)

    def test_wrong_size_rejected(self):
        params = enc.EncoderParams.init(0)
        with pytest.raises(ContractViolation):
            enc.encode(params, np.zeros((32, 32)))

    def test_uint8_frames_accepted(self):
        rng = np.random.default_rng(3)
        params = enc.EncoderParams.init(7)
        u8 = (rng.random((2, 64, 64)) * 255).astype(np.uint8)
        out = enc.encode_batch(params, u8)
        ref = enc.encode_batch(params, u8.astype(np.float64) / 255.0)
        assert np.allclose(out, ref, atol=1e-12)

    def test_jacobian_matches_finite_differences(self):
        # probe d(v . emb)/d theta at random coordinates, eps=1e-5
        rng = np.random.default_rng(11)
        params = enc.EncoderParams.init(13)
        frame = random_frame(rng)
        probe = rng.standard_normal(enc.EMBED_DIM)

        emb, cache = enc.forward(params, frame[None])
        grads = enc.backward(params, cache, probe[None])
        flat_grad = np.concatenate([grads[k].ravel() for k in params.arrays])

        vec = params.pack()
        eps = 1e-5
        idxs = rng.choice(len(vec), size=60, replace=False)
        for i in idxs:
            for sign, store in ((+1, "hi"), (-1, "lo")):
                v = vec.copy()
                v[i] += sign * eps
                p = enc.EncoderParams.unpack(v)
                out, _ = enc.forward(p, frame[None])
                if sign > 0:
                    hi = float(out[0] @ probe)
                else:
                    lo = float(out[0] @ probe)
            fd = (hi - lo) / (2 * eps)
            an = flat_grad[i]
            denom = max(abs(fd), abs(an))
            if denom > 1e-8:
                assert abs(fd - an) / denom < 1e-4


class TestCosineDistance:
    def test_self_distance_zero(self):
        f = np.arange(1.0, 10.0)
        assert enc.cosine_distance(f, f) == pytest.approx(0.0, abs=1e-12)

    def test_antipodal_distance_two(self):
        f = np.arange(1.0, 10.0)
        assert enc.cosine_distance(f, -f) == pytest.approx(2.0, abs=1e-12)

    def test_orthogonal_distance_one(self):
        e1 = np.zeros(5)
        e2 = np.zeros(5)
        e1[0] = 1.0
        e2[1] = 1.0
        assert enc.cosine_distance(e1, e2) == pytest.approx(1.0, abs=1e-12)

    def test_zero_norm_raises(self):
        with pytest.raises(ValueError):
            enc.cosine_distance(np.zeros(4), np.ones(4))

    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 100.0), st.floats(0.01, 100.0))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_bounded_scale_invariant(self, seed, s1, s2):
        rng = np.random.default_rng(seed)
        f1 = rng.standard_normal(16)
        f2 = rng.standard_normal(16)
        d12 = enc.cosine_distance(f1, f2)
        assert 0.0 <= d12 <= 2.0 + 1e-12
        assert d12 == pytest.approx(enc.cosine_distance(f2, f1), abs=1e-12)
        assert d12 == pytest.approx(enc.cosine_distance(s1 * f1, s2 * f2), abs=1e-9)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = enc.EncoderParams.init(21)
        path = tmp_path / "enc.ckpt"
        enc.save_checkpoint(path, params, meta={"seed": 21, "step": 5})
        loaded, header = enc.load_checkpoint(path)
        assert header["seed"] == 21 and header["step"] == 5
        assert header["architecture"] == enc.ARCHITECTURE
        for name, arr in params.arrays.items():
            assert np.array_equal(loaded.arrays[name], arr.astype("<f4").astype(np.float64))

    def test_save_is_deterministic(self, tmp_path):
        params = enc.EncoderParams.init(22)
        enc.save_checkpoint(tmp_path / "a.ckpt", params, meta={"seed": 22})
        enc.save_checkpoint(tmp_path / "b.ckpt", params, meta={"seed": 22})
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_architecture_mismatch_rejected(self, tmp_path):
        params = enc.EncoderParams.init(23)
        path = tmp_path / "enc.ckpt"
        enc.save_checkpoint(path, params)
        data = path.read_bytes()
        tampered = data.replace(enc.ARCHITECTURE.encode(), b"other-network-x1")
        (tmp_path / "bad.ckpt").write_bytes(tampered)
        with pytest.raises(CheckpointMismatch):
            enc.load_checkpoint(tmp_path / "bad.ckpt")

    def test_truncated_payload_rejected(self, tmp_path):
        params = enc.EncoderParams.init(24)
        path = tmp_path / "enc.ckpt"
        enc.save_checkpoint(path, params)
        data = path.read_bytes()
        (tmp_path / "cut.ckpt").write_bytes(data[: len(data) - 100])
        with pytest.raises(CheckpointMismatch):
            enc.load_checkpoint(tmp_path / "cut.ckpt")

    def test_non_finite_rejected(self, tmp_path):
        params = enc.EncoderParams.init(25)
        params.arrays["h1_w"][0, 0] = np.nan
        with pytest.raises(CheckpointMismatch):
            enc.save_checkpoint(tmp_path / "nan.ckpt", params)
