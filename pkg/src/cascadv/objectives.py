"""The three attack objectives and their weighted combination.

* chain alignment: one minus the cosine between the perturbed sequence
  embedding and a deceptive chain's text embedding, averaged over chains;
* matching inversion: per frame, a row softmax over image/descriptor cosines
  is pushed toward the class the clean image matched least, via signed log
  terms selected by a one-hot mask and averaged over every cell;
* semantic discrepancy: the cosine between clean and perturbed sequence
  embeddings (minimizing it drives the two apart).

The mask is built once from the clean pass and held fixed while the
perturbation is optimized. All three terms and the weighted total are
differentiable with respect to the perturbation through the tape.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import autodiff as ad
from .autodiff import DomainError, ShapeMismatch, Tape, Tensor
from .deception import DeceptiveChain
from .encoder import (DualEncoder, ImageSeq, encode_frame_t, encode_sequence_t,
                      encode_text, tokenize)

__all__ = [
    "DescriptorSet", "MatchResult", "Mask", "LossWeights", "LossBreakdown",
    "DEFAULT_WEIGHTS", "default_descriptors", "load_descriptor_groups",
    "select_descriptor_groups", "cosine_sim", "matching_head", "build_mask",
    "loss_low", "loss_high", "loss_disc", "total_loss", "LossEvaluator",
]


@dataclass(frozen=True)
class DescriptorSet:
    """Ordered, pairwise-distinct scene descriptors matched against frames."""

    descriptors: tuple[str, ...]
    group_id: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "descriptors", tuple(self.descriptors))
        if len(self.descriptors) < 2:
            raise ValueError("DescriptorSet: need at least two descriptors")
        if len(set(self.descriptors)) != len(self.descriptors):
            raise ValueError("DescriptorSet: descriptors must be pairwise distinct")

    def __len__(self):
        return len(self.descriptors)


def load_descriptor_groups(path=None) -> list[DescriptorSet]:
    """Ordered descriptor groups from the bundled asset or a user JSON file."""
    if path is None:
        text = resources.files("cascadv.data").joinpath("descriptors.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    raw = json.loads(text)
    return [DescriptorSet(tuple(g["descriptors"]), g["group_id"]) for g in raw["groups"]]


def default_descriptors() -> DescriptorSet:
    return load_descriptor_groups()[0]


def select_descriptor_groups(names) -> list[DescriptorSet]:
    by_id = {g.group_id: g for g in load_descriptor_groups()}
    missing = [n for n in names if n not in by_id]
    if missing:
        raise ValueError(f"unknown descriptor groups: {missing}; have {sorted(by_id)}")
    return [by_id[n] for n in names]


@dataclass(frozen=True)
class MatchResult:
    """Per-frame matching probabilities, one row per frame."""

    p: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.p, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeMismatch("MatchResult", arr.shape)
        if not np.allclose(arr.sum(axis=1), 1.0, atol=1e-12) or \
                arr.min() <= 0.0 or arr.max() >= 1.0:
            raise DomainError("MatchResult: rows must sum to 1 with entries in (0, 1)")
        object.__setattr__(self, "p", arr)


@dataclass(frozen=True)
class Mask:
    """One-hot rows marking the clean image's least-probable descriptor."""

    m: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.m, dtype=np.float64)
        if arr.ndim != 2 or not np.all((arr == 0.0) | (arr == 1.0)) or \
                not np.all(arr.sum(axis=1) == 1.0):
            raise DomainError("Mask: rows must be one-hot")
        object.__setattr__(self, "m", arr)

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.m).tobytes()).hexdigest()


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.75
    beta: float = 0.05
    gamma: float = 0.75

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("LossWeights: weights must be non-negative")
        if self.alpha == self.beta == self.gamma == 0:
            raise ValueError("LossWeights: at least one weight must be positive")


DEFAULT_WEIGHTS = LossWeights()


@dataclass(frozen=True)
class LossBreakdown:
    l_low: float
    l_high: float
    l_disc: float
    l_total: float

    def as_dict(self) -> dict[str, float]:
        return {"l_low": self.l_low, "l_high": self.l_high,
                "l_disc": self.l_disc, "l_total": self.l_total}


# ---------------------------------------------------------------------------
# scalar building blocks


def _cosine_t(a: Tensor, b: Tensor) -> Tensor:
    denom = ad.mul(ad.l2_norm(a), ad.l2_norm(b))
    if denom.data[0] == 0.0:
        raise DomainError("cosine_sim: zero vector")
    return ad.div(ad.sum(ad.mul(a, b)), denom)


def cosine_sim(a, b) -> float:
    """Cosine similarity of two nonzero vectors, in [-1, 1]."""
    ta = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=np.float64))
    tb = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=np.float64))
    if ta.shape != tb.shape:
        raise ShapeMismatch("cosine_sim", ta.shape, tb.shape)
    return _cosine_t(ta, tb).item()


def _descriptor_matrix(enc: DualEncoder, d: DescriptorSet) -> np.ndarray:
    """(d, |D|) matrix of unit-norm descriptor embeddings, columns in order."""
    return np.stack([encode_text(enc, t) for t in d.descriptors], axis=1)


def _match_row_t(frame_emb: Tensor, dmat: np.ndarray) -> Tensor:
    """Softmax over cosines between one frame embedding and each descriptor."""
    dots = ad.matmul(frame_emb, Tensor._wrap(dmat))  # descriptor columns are unit norm
    cos = ad.div(dots, ad.l2_norm(frame_emb))
    return ad.softmax_rows(cos)


def matching_head(enc: DualEncoder, x: ImageSeq, d: DescriptorSet) -> MatchResult:
    """Cross-modal matching probabilities for every frame against ``d``."""
    dmat = _descriptor_matrix(enc, d)
    rows = [_match_row_t(encode_frame_t(enc, Tensor(x.frames[i])), dmat).data[0]
            for i in range(x.n)]
    return MatchResult(np.stack(rows))


def build_mask(p_clean: MatchResult) -> Mask:
    """One-hot rows at the clean argmin; ties break to the lowest column."""
    n, k = p_clean.p.shape
    m = np.zeros((n, k))
    m[np.arange(n), np.argmin(p_clean.p, axis=1)] = 1.0
    return Mask(m)


def _loss_high_t(p_rows: list[Tensor], mask: Mask) -> Tensor:
    """Mean over all cells of the mask-selected signed log probabilities."""
    n, k = mask.m.shape
    if len(p_rows) != n or any(r.shape != (1, k) for r in p_rows):
        raise ShapeMismatch("loss_high", (len(p_rows),) + p_rows[0].shape, mask.m.shape)
    acc = None
    for i, row in enumerate(p_rows):
        signs = Tensor._wrap(1.0 - 2.0 * mask.m[i:i + 1])  # -1 on the masked cell
        cell_sum = ad.sum(ad.mul(ad.log(row), signs))
        acc = cell_sum if acc is None else ad.add(acc, cell_sum)
    return ad.mul(acc, 1.0 / (n * k))


def loss_high(p_adv: MatchResult, mask: Mask) -> float:
    """Matching-inversion loss; negative values mean the flip is winning."""
    rows = [Tensor(p_adv.p[i:i + 1]) for i in range(p_adv.p.shape[0])]
    return _loss_high_t(rows, mask).item()


def _chain_embeddings(enc: DualEncoder, chains: list[DeceptiveChain]) -> list[np.ndarray]:
    if not chains:
        raise ValueError("loss_low: need at least one deceptive chain")
    return [encode_text(enc, tokenize(c.combined))[None, :] for c in chains]


def _loss_low_t(seq_emb: Tensor, chain_embs: list[np.ndarray]) -> Tensor:
    acc = None
    for emb in chain_embs:
        term = ad.add(ad.neg(_cosine_t(seq_emb, Tensor._wrap(emb))), 1.0)
        acc = term if acc is None else ad.add(acc, term)
    return ad.mul(acc, 1.0 / len(chain_embs))


def _perturbed_frames(x: ImageSeq, delta: np.ndarray, tape: Tape | None):
    """Per-frame (clean + delta) tensors; one tape leaf per frame if tracing."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != x.frames.shape:
        raise ShapeMismatch("perturbation", delta.shape, x.frames.shape)
    leaves, frames = [], []
    for i in range(x.n):
        d = Tensor(delta[i])
        if tape is not None:
            d = tape.leaf(d)
        leaves.append(d)
        frames.append(ad.add(Tensor(x.frames[i]), d))
    return leaves, frames


def loss_low(enc: DualEncoder, x: ImageSeq, delta: np.ndarray,
             chains: list[DeceptiveChain]) -> float:
    """Chain-alignment loss: mean over chains of 1 - cos(seq, chain); in [0, 2]."""
    _, frames = _perturbed_frames(x, delta, None)
    seq = encode_sequence_t(enc, frames)
    return _loss_low_t(seq, _chain_embeddings(enc, chains)).item()


def loss_disc(enc: DualEncoder, x: ImageSeq, delta: np.ndarray) -> float:
    """Cosine between clean and perturbed sequence embeddings; in [-1, 1]."""
    _, frames = _perturbed_frames(x, delta, None)
    clean = [Tensor(x.frames[i]) for i in range(x.n)]
    return _cosine_t(encode_sequence_t(enc, frames),
                     encode_sequence_t(enc, clean)).item()


def _as_group_lists(d, masks):
    groups = list(d) if isinstance(d, (list, tuple)) else [d]
    mlist = list(masks) if isinstance(masks, (list, tuple)) else [masks]
    if len(groups) != len(mlist):
        raise ValueError("total_loss: need one mask per descriptor group")
    return groups, mlist


def total_loss(enc: DualEncoder, x: ImageSeq, delta: np.ndarray,
               chains: list[DeceptiveChain], d, masks,
               weights: LossWeights = DEFAULT_WEIGHTS) -> LossBreakdown:
    """Weighted objective; accepts one descriptor group or several (averaged)."""
    groups, mlist = _as_group_lists(d, masks)
    ev = LossEvaluator(enc, x, chains, groups, weights, masks=mlist)
    return ev.breakdown(delta)


# ---------------------------------------------------------------------------
# evaluator used by the optimizer loop


class LossEvaluator:
    """Precomputes everything fixed across iterations (clean embeddings, chain
    and descriptor embeddings, masks from the clean pass) and evaluates the
    weighted loss, with or without gradients, at a given perturbation."""

    def __init__(self, enc: DualEncoder, x: ImageSeq, chains: list[DeceptiveChain],
                 groups, weights: LossWeights = DEFAULT_WEIGHTS, masks=None):
        if isinstance(groups, DescriptorSet):
            groups = [groups]
        self.enc = enc
        self.x = x
        self.weights = weights
        self.chain_embs = _chain_embeddings(enc, chains)
        self.dmats = [_descriptor_matrix(enc, g) for g in groups]
        clean = [Tensor(x.frames[i]) for i in range(x.n)]
        self.clean_seq = encode_sequence_t(enc, clean).data
        if masks is None:
            self.clean_match = [
                MatchResult(np.stack([
                    _match_row_t(encode_frame_t(enc, c), dmat).data[0] for c in clean]))
                for dmat in self.dmats]
            self.masks = [build_mask(p) for p in self.clean_match]
        else:
            masks = list(masks) if isinstance(masks, (list, tuple)) else [masks]
            self.masks = masks
            self.clean_match = None

    def _graph(self, delta: np.ndarray, tape: Tape | None):
        leaves, frames = _perturbed_frames(self.x, delta, tape)
        frame_embs = [encode_frame_t(self.enc, f) for f in frames]
        acc = frame_embs[0]
        for e in frame_embs[1:]:
            acc = ad.add(acc, e)
        scaled = ad.mul(acc, 1.0 / len(frame_embs))
        seq = ad.div(scaled, ad.l2_norm(scaled))
        l_low = _loss_low_t(seq, self.chain_embs)
        h_acc = None
        for dmat, mask in zip(self.dmats, self.masks):
            rows = [_match_row_t(e, dmat) for e in frame_embs]
            term = _loss_high_t(rows, mask)
            h_acc = term if h_acc is None else ad.add(h_acc, term)
        l_high = ad.mul(h_acc, 1.0 / len(self.dmats))
        l_disc = _cosine_t(seq, Tensor._wrap(self.clean_seq))
        l_total = ad.add(ad.add(ad.mul(l_low, self.weights.alpha),
                                ad.mul(l_high, self.weights.beta)),
                         ad.mul(l_disc, self.weights.gamma))
        breakdown = LossBreakdown(l_low.item(), l_high.item(),
                                  l_disc.item(), l_total.item())
        return leaves, l_total, breakdown

    def breakdown(self, delta: np.ndarray) -> LossBreakdown:
        _, _, bd = self._graph(delta, None)
        return bd

    def breakdown_and_grad(self, delta: np.ndarray) -> tuple[LossBreakdown, np.ndarray]:
        tape = Tape()
        leaves, root, bd = self._graph(delta, tape)
        grads = ad.backward(tape, root)
        grad = np.stack([grads[leaf.node].data for leaf in leaves])
        return bd, grad

    def adv_match(self, delta: np.ndarray, group: int = 0) -> MatchResult:
        """Matching probabilities of the perturbed frames for one group."""
        _, frames = _perturbed_frames(self.x, delta, None)
        rows = [_match_row_t(encode_frame_t(self.enc, f), self.dmats[group]).data[0]
                for f in frames]
        return MatchResult(np.stack(rows))
