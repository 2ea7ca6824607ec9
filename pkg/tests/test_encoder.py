import json
from pathlib import Path

import numpy as np
import pytest

import cascadv.autodiff as ad
from cascadv.autodiff import Rng, Tape, Tensor
from cascadv.encoder import (VOCAB_SIZE, ConfigError, DualEncoder, ImageSeq,
                             encode_frame, encode_frame_t, encode_sequence,
                             encode_text, fnv1a64, load_weights, make_victim,
                             save_weights, tokenize)

GOLDEN = Path(__file__).parent / "golden"


def reference_fnv1a64(data: bytes) -> int:
    # independent reimplementation of the reference algorithm
    h = 14695981039346656037
    for b in data:
        h = ((h ^ b) * 1099511628211) % 2**64
    return h


class TestTokenizer:
    def test_empty_text_reserved_bucket(self):
        assert tokenize("") == [0]
        assert tokenize("  ... !!") == [0]

    def test_case_folding(self):
        ids = tokenize("Safe safe SAFE")
        assert len(ids) == 3 and len(set(ids)) == 1

    def test_against_reference_hash(self):
        ids = tokenize("a safe driving scenario")
        expected = [reference_fnv1a64(w.encode()) % VOCAB_SIZE
                    for w in ["a", "safe", "driving", "scenario"]]
        assert ids == expected

    def test_splits_on_nonalnum_runs(self):
        assert tokenize("stop--sign, now!") == tokenize("stop sign now")

    def test_fnv_known_vector(self):
        # standard FNV-1a test vector: "a" -> 0xaf63dc4c8601ec8c
        assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C


class TestEncoders:
    def setup_method(self):
        self.enc = DualEncoder.create(42)

    def test_text_embedding_unit_norm(self):
        for text in ["stop", "a safe driving scenario", "x y z w"]:
            e = encode_text(self.enc, text)
            assert abs(np.linalg.norm(e) - 1.0) < 1e-12

    def test_token_order_invariance(self):
        a = encode_text(self.enc, "red light ahead")
        b = encode_text(self.enc, "ahead light red")
        assert np.allclose(a, b, atol=1e-15)

    def test_text_golden(self):
        golden = json.loads((GOLDEN / "encode_text_seed42_stop.json").read_text())
        e = encode_text(DualEncoder.create(golden["seed"]), golden["text"])
        assert np.allclose(e, golden["embedding"], atol=1e-12)

    def test_frame_embedding_unit_norm_and_deterministic(self):
        frame = Rng(5).uniform((32, 32, 3))
        e1 = encode_frame(self.enc, frame)
        e2 = encode_frame(self.enc, frame)
        assert abs(np.linalg.norm(e1) - 1.0) < 1e-12
        assert e1.tobytes() == e2.tobytes()

    def test_frame_dims_must_divide_patch(self):
        with pytest.raises(Exception, match="encode_frame"):
            encode_frame(self.enc, np.zeros((30, 32, 3)))

    def test_pixel_gradient_matches_fd(self):
        frame = Rng(6).uniform((16, 16, 3), 0.1, 0.9)
        probe = np.arange(self.enc.d, dtype=float)[None] / self.enc.d

        def scalar(f):
            return float((encode_frame(self.enc, f) * probe[0]).sum())

        tape = Tape()
        leaf = tape.leaf(Tensor(frame))
        root = ad.sum(ad.mul(encode_frame_t(self.enc, leaf), Tensor(probe)))
        g = ad.backward(tape, root)[leaf.node].data
        rng = np.random.default_rng(0)
        for _ in range(25):
            idx = tuple(rng.integers(0, s) for s in frame.shape)
            fp, fm = frame.copy(), frame.copy()
            fp[idx] += 1e-5
            fm[idx] -= 1e-5
            fd = (scalar(fp) - scalar(fm)) / 2e-5
            assert abs(g[idx] - fd) / max(abs(fd), 1e-9) < 1e-5

    def test_sequence_of_one_equals_frame(self):
        frame = Rng(7).uniform((16, 16, 3))
        seq = encode_sequence(self.enc, ImageSeq(frame[None]))
        assert np.allclose(seq, encode_frame(self.enc, frame), atol=1e-12)

    def test_sequence_identical_frames(self):
        frame = Rng(8).uniform((16, 16, 3))
        seq = encode_sequence(self.enc, ImageSeq(np.stack([frame, frame, frame])))
        assert np.allclose(seq, encode_frame(self.enc, frame), atol=1e-12)

    def test_sequence_matches_mean_then_normalize_oracle(self):
        frames = Rng(9).uniform((2, 16, 16, 3))
        seq = encode_sequence(self.enc, ImageSeq(frames))
        mean = (encode_frame(self.enc, frames[0]) + encode_frame(self.enc, frames[1])) / 2
        assert np.allclose(seq, mean / np.linalg.norm(mean), atol=1e-12)

    def test_equal_seeds_bit_identical(self):
        a, b = DualEncoder.create(1234), DualEncoder.create(1234)
        for k, arr in a.weight_arrays().items():
            assert arr.tobytes() == b.weight_arrays()[k].tobytes()


class TestImageSeq:
    def test_rejects_out_of_range(self):
        with pytest.raises(Exception):
            ImageSeq(np.full((1, 8, 8, 3), 1.5))

    def test_rejects_bad_shape(self):
        with pytest.raises(Exception):
            ImageSeq(np.zeros((8, 8, 3)))


class TestVictim:
    def test_seed_clash_rejected(self):
        with pytest.raises(ConfigError):
            make_victim(seed=42, surrogate_seed=42)

    def test_weights_differ_from_surrogate(self):
        surrogate = DualEncoder.create(42)
        victim_same_dims = make_victim(7, d_h=64, d=32)
        frame = Rng(1).uniform((16, 16, 3))
        assert not np.allclose(victim_same_dims.embed_frame(frame),
                               encode_frame(surrogate, frame))

    def test_no_gradient_surface(self):
        victim = make_victim(7)
        assert not hasattr(victim, "w1")
        e = victim.embed_frame(Rng(2).uniform((16, 16, 3)))
        assert isinstance(e, np.ndarray)

    def test_match_rows_are_probabilities(self):
        victim = make_victim(7)
        frames = Rng(3).uniform((2, 16, 16, 3))
        p = victim.match(frames, ["a safe scene", "an unsafe scene"])
        assert p.shape == (2, 2)
        assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-12

    def test_transfer_baseline_pinned(self):
        base = json.loads((GOLDEN / "transfer_baseline.json").read_text())
        enc = DualEncoder.create(base["surrogate_seed"])
        victim = make_victim(base["victim_seed"], d_h=base["victim_dims"][0],
                             d=base["victim_dims"][1])
        frame = Rng(base["frame_rng_seed"]).uniform((64, 64, 3))
        cos = float(encode_frame(enc, frame) @ victim.embed_frame(frame))
        assert -1.0 < cos < 1.0
        assert cos == pytest.approx(base["cross_model_cos"], abs=1e-12)


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        enc = DualEncoder.create(99, d_h=16, d=8)
        path = tmp_path / "weights.bin"
        save_weights(enc, path)
        loaded = load_weights(path)
        assert loaded.seed == 99 and loaded.d_h == 16 and loaded.d == 8
        for k, arr in enc.weight_arrays().items():
            assert arr.tobytes() == loaded.weight_arrays()[k].tobytes()
        frame = Rng(4).uniform((16, 16, 3))
        assert encode_frame(enc, frame).tobytes() == encode_frame(loaded, frame).tobytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ConfigError, match="magic"):
            load_weights(path)

    def test_truncated_rejected(self, tmp_path):
        enc = DualEncoder.create(1, d_h=8, d=4)
        path = tmp_path / "w.bin"
        save_weights(enc, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ConfigError):
            load_weights(path)
