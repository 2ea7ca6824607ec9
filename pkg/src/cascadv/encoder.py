"""Seeded dual encoder: a patch-MLP image branch and a hashed bag-of-buckets
text branch projecting into one shared, unit-norm embedding space.

The same constructor also produces the held-out evaluation encoder (different
seed, typically different width) behind a forward-only wrapper, so attack code
can never touch its gradients.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import DomainError, Rng, ShapeMismatch, Tensor

__all__ = [
    "VOCAB_SIZE", "DEFAULT_SURROGATE_SEED", "DEFAULT_VICTIM_SEED",
    "ImageSeq", "DualEncoder", "HeldOutEncoder", "ConfigError",
    "fnv1a64", "tokenize", "encode_text", "encode_frame", "encode_sequence",
    "encode_text_t", "encode_frame_t", "encode_sequence_t",
    "make_victim", "save_weights", "load_weights",
]

VOCAB_SIZE = 4096
DEFAULT_SURROGATE_SEED = 42
DEFAULT_VICTIM_SEED = 7

_WEIGHTS_MAGIC = b"DENC"
_WEIGHTS_VERSION = 1


class ConfigError(ValueError):
    """Invalid encoder/attack configuration."""


# ---------------------------------------------------------------------------
# image sequences


@dataclass(frozen=True)
class ImageSeq:
    """n frames of HxWx3 pixels in [0, 1]."""

    frames: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float64)
        if arr.ndim != 4 or arr.shape[0] < 1 or arr.shape[3] != 3:
            raise ShapeMismatch("ImageSeq", arr.shape)
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise DomainError("ImageSeq: pixels must be finite and in [0, 1]")
        object.__setattr__(self, "frames", arr)

    @property
    def n(self) -> int:
        return self.frames.shape[0]

    @property
    def hw(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


# ---------------------------------------------------------------------------
# tokenizer

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[int]:
    """Lowercase, split on non-alphanumeric runs, hash each token into one of
    VOCAB_SIZE buckets. Empty text maps to the reserved bucket 0.
    """
    words = [w for w in _TOKEN_SPLIT.split(text.lower()) if w]
    if not words:
        return [0]
    return [fnv1a64(w.encode("utf-8")) % VOCAB_SIZE for w in words]


# ---------------------------------------------------------------------------
# encoder


@dataclass(eq=False)
class DualEncoder:
    """Image and text encoders sharing a d-dimensional unit-norm output space.

    Image branch: non-overlapping pixel patches -> linear+tanh -> mean over
    patches -> linear -> L2-normalize. Text branch: mean-pooled bucket
    embeddings -> tanh -> linear -> L2-normalize. Weights are drawn
    deterministically from the seed, so equal seeds give bit-identical
    encoders.
    """

    seed: int
    patch_size: int = 8
    d_h: int = 64
    d: int = 32
    vocab: int = VOCAB_SIZE
    w1: np.ndarray = field(repr=False, default=None)
    b1: np.ndarray = field(repr=False, default=None)
    w2: np.ndarray = field(repr=False, default=None)
    b2: np.ndarray = field(repr=False, default=None)
    emb: np.ndarray = field(repr=False, default=None)
    w3: np.ndarray = field(repr=False, default=None)
    b3: np.ndarray = field(repr=False, default=None)

    @classmethod
    def create(cls, seed: int, patch_size: int = 8, d_h: int = 64, d: int = 32,
               vocab: int = VOCAB_SIZE) -> "DualEncoder":
        if patch_size < 1 or d_h < 1 or d < 1 or vocab < 1:
            raise ConfigError("DualEncoder.create: dimensions must be positive")
        rng = Rng(seed)
        pin = 3 * patch_size * patch_size
        w1 = rng.normal((pin, d_h), scale=1.0 / np.sqrt(pin))
        w2 = rng.normal((d_h, d), scale=1.0 / np.sqrt(d_h))
        emb = rng.normal((vocab, d_h), scale=1.0)
        w3 = rng.normal((d_h, d), scale=1.0 / np.sqrt(d_h))
        zeros = np.zeros
        return cls(seed=seed, patch_size=patch_size, d_h=d_h, d=d, vocab=vocab,
                   w1=w1, b1=zeros((1, d_h)), w2=w2, b2=zeros((1, d)),
                   emb=emb, w3=w3, b3=zeros((1, d)))

    def __post_init__(self):
        self._const = {}

    def _c(self, name: str) -> Tensor:
        # constant (untracked) tensors, cached across graph builds
        t = self._const.get(name)
        if t is None:
            t = Tensor._wrap(getattr(self, name))
            self._const[name] = t
        return t

    def weight_arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in ("w1", "b1", "w2", "b2", "emb", "w3", "b3")}


@lru_cache(maxsize=16)
def _patch_index(h: int, w: int, p: int) -> np.ndarray:
    """Flat pixel indices regrouping an (H, W, 3) frame into rows of flattened
    non-overlapping p x p patches, row-major within each patch."""
    rows = []
    for pi in range(h // p):
        for pj in range(w // p):
            idx = [((pi * p + dh) * w + (pj * p + dw)) * 3 + c
                   for dh in range(p) for dw in range(p) for c in range(3)]
            rows.append(idx)
    return np.asarray(rows, dtype=np.intp).reshape(-1)


def _normalize_t(v: Tensor) -> Tensor:
    return ad.div(v, ad.l2_norm(v))


def encode_frame_t(enc: DualEncoder, frame: Tensor) -> Tensor:
    """Differentiable single-frame embedding, shape (1, d)."""
    if frame.data.ndim != 3 or frame.shape[2] != 3:
        raise ShapeMismatch("encode_frame", frame.shape)
    h, w = frame.shape[0], frame.shape[1]
    p = enc.patch_size
    if h % p or w % p:
        raise ShapeMismatch("encode_frame", frame.shape, f"patch={p}")
    flat = ad.reshape(frame, (h * w * 3, 1))
    patches = ad.reshape(ad.gather_rows(flat, _patch_index(h, w, p)),
                         ((h // p) * (w // p), 3 * p * p))
    hidden = ad.tanh(ad.add(ad.matmul(patches, enc._c("w1")), enc._c("b1")))
    pooled = ad.mean(hidden, axis=0)
    z = ad.add(ad.matmul(pooled, enc._c("w2")), enc._c("b2"))
    return _normalize_t(z)


def encode_text_t(enc: DualEncoder, ids: list[int]) -> Tensor:
    """Differentiable text embedding from token bucket ids, shape (1, d)."""
    if not ids:
        raise DomainError("encode_text: empty token sequence")
    rows = ad.gather_rows(enc._c("emb"), np.asarray(ids, dtype=np.intp))
    pooled = ad.tanh(ad.mean(rows, axis=0))
    z = ad.add(ad.matmul(pooled, enc._c("w3")), enc._c("b3"))
    return _normalize_t(z)


def encode_sequence_t(enc: DualEncoder, frames: list[Tensor]) -> Tensor:
    """Renormalized mean of per-frame embeddings, shape (1, d)."""
    embs = [encode_frame_t(enc, f) for f in frames]
    acc = embs[0]
    for e in embs[1:]:
        acc = ad.add(acc, e)
    return _normalize_t(ad.mul(acc, 1.0 / len(embs)))


def encode_frame(enc: DualEncoder, frame: np.ndarray) -> np.ndarray:
    return encode_frame_t(enc, Tensor(frame)).data[0]


def encode_text(enc: DualEncoder, text_or_ids) -> np.ndarray:
    ids = tokenize(text_or_ids) if isinstance(text_or_ids, str) else list(text_or_ids)
    return encode_text_t(enc, ids).data[0]


def encode_sequence(enc: DualEncoder, x: ImageSeq) -> np.ndarray:
    frames = [Tensor(x.frames[i]) for i in range(x.n)]
    return encode_sequence_t(enc, frames).data[0]


# ---------------------------------------------------------------------------
# held-out victim


class HeldOutEncoder:
    """Forward-only wrapper around an independently seeded encoder.

    Exposes numpy embeddings and matching probabilities only; there is no tape
    anywhere in this path, so nothing downstream can differentiate through it.
    """

    def __init__(self, enc: DualEncoder):
        self.__enc = enc
        self.seed = enc.seed

    def embed_frame(self, frame: np.ndarray) -> np.ndarray:
        return encode_frame(self.__enc, frame)

    def embed_text(self, text: str) -> np.ndarray:
        return encode_text(self.__enc, text)

    def embed_sequence(self, x: ImageSeq) -> np.ndarray:
        return encode_sequence(self.__enc, x)

    def match(self, frames: np.ndarray, descriptors: list[str]) -> np.ndarray:
        """Per-frame softmax over cosine similarities to each descriptor."""
        text = np.stack([self.embed_text(d) for d in descriptors])  # (|D|, d)
        rows = np.stack([self.embed_frame(f) for f in np.asarray(frames, dtype=np.float64)])
        cos = rows @ text.T
        cos = cos / (np.linalg.norm(rows, axis=1, keepdims=True)
                     * np.linalg.norm(text, axis=1))
        shifted = cos - cos.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)


def make_victim(seed: int = DEFAULT_VICTIM_SEED, d_h: int = 48, d: int = 24,
                patch_size: int = 8,
                surrogate_seed: int = DEFAULT_SURROGATE_SEED) -> HeldOutEncoder:
    """Build the held-out evaluation encoder; must not share the surrogate seed."""
    if seed == surrogate_seed:
        raise ConfigError(
            f"make_victim: victim seed {seed} equals the surrogate seed; "
            "the held-out encoder must be independently initialized")
    return HeldOutEncoder(DualEncoder.create(seed, patch_size=patch_size, d_h=d_h, d=d))


# ---------------------------------------------------------------------------
# weight serialization (versioned little-endian blob)


def save_weights(enc: DualEncoder, path) -> None:
    header = struct.pack("<4sIIIIIQ", _WEIGHTS_MAGIC, _WEIGHTS_VERSION,
                         enc.patch_size, enc.d_h, enc.d, enc.vocab, enc.seed)
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in enc.weight_arrays().values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_weights(path) -> DualEncoder:
    with open(path, "rb") as fh:
        blob = fh.read()
    head = struct.calcsize("<4sIIIIIQ")
    magic, version, patch_size, d_h, d, vocab, seed = struct.unpack("<4sIIIIIQ", blob[:head])
    if magic != _WEIGHTS_MAGIC:
        raise ConfigError(f"load_weights: bad magic {magic!r} in {path}")
    if version != _WEIGHTS_VERSION:
        raise ConfigError(f"load_weights: unsupported version {version} in {path}")
    shapes = {
        "w1": (3 * patch_size * patch_size, d_h), "b1": (1, d_h),
        "w2": (d_h, d), "b2": (1, d),
        "emb": (vocab, d_h), "w3": (d_h, d), "b3": (1, d),
    }
    expected = head + 8 * int(np.sum([np.prod(s) for s in shapes.values()]))
    if len(blob) != expected:
        raise ConfigError(f"load_weights: expected {expected} bytes, got {len(blob)} in {path}")
    arrays = {}
    offset = head
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count,
                                     offset=offset).astype(np.float64).reshape(shape)
        offset += count * 8
    return DualEncoder(seed=seed, patch_size=patch_size, d_h=d_h, d=d, vocab=vocab, **arrays)
