"""Transfer evaluation: replay a generated manifest against the held-out
encoder, optionally behind an input-transformation defense, and aggregate how
often the safety-descriptor decision flips relative to the clean frames.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..encoder import HeldOutEncoder
from ..forge import ImageIOError, ManifestEntry, load_image, read_manifest
from ..objectives import DescriptorSet
from .defenses import DefenseSpec, apply_defense

log = logging.getLogger(__name__)

__all__ = ["EvalSummary", "eval_transfer", "frame_decisions"]


@dataclass
class EvalSummary:
    """Flip rate and margin drop on the held-out encoder, overall (levels >= 1)
    and per severity level."""

    corpus_size: int
    n_frames: int
    flip_rate: float
    mean_margin_drop: float
    per_severity: dict[str, dict[str, float]]
    defense: str = "none"
    incomplete: bool = False
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "corpus_size": self.corpus_size, "n_frames": self.n_frames,
            "flip_rate": self.flip_rate, "mean_margin_drop": self.mean_margin_drop,
            "per_severity": self.per_severity, "defense": self.defense,
            "incomplete": self.incomplete, "errors": self.errors,
        }


def frame_decisions(victim: HeldOutEncoder, frames: np.ndarray,
                    d: DescriptorSet, defense: DefenseSpec) -> np.ndarray:
    """Victim matching probabilities per (defended) frame, shape (n, |D|)."""
    defended = np.stack([apply_defense(f, defense) for f in frames])
    return victim.match(defended, list(d.descriptors))


def _margin(p: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """p[argmax_clean] minus the best other column, per row."""
    best = p[np.arange(p.shape[0]), idx]
    rest = p.copy()
    rest[np.arange(p.shape[0]), idx] = -np.inf
    return best - rest.max(axis=1)


def eval_transfer(victim: HeldOutEncoder, manifest, d: DescriptorSet,
                  defense: DefenseSpec = DefenseSpec(),
                  base_dir=None) -> EvalSummary:
    """Score every adversarial manifest entry against the held-out encoder.

    ``manifest`` is a path to a JSON-lines file (whose directory anchors the
    image paths) or an iterable of entries with ``base_dir`` given explicitly.
    Missing files are recorded per entry and flagged, never fatal.
    """
    if isinstance(manifest, (str, Path)):
        base_dir = Path(manifest).parent if base_dir is None else Path(base_dir)
        entries = read_manifest(manifest)
    else:
        entries = list(manifest)
        if base_dir is None:
            raise ValueError("eval_transfer: base_dir required with in-memory entries")
        base_dir = Path(base_dir)

    clean_by_record: dict[str, ManifestEntry] = {
        e.record_id: e for e in entries if e.level == 0}
    adv_entries = [e for e in entries if e.level > 0]
    for e in adv_entries:
        if e.surrogate_seed == victim.seed:
            raise ValueError(
                "eval_transfer: victim seed equals the surrogate seed in the manifest; "
                "transfer scores require a held-out encoder")

    errors: list[str] = []
    flips = 0
    frames_total = 0
    margin_drops: list[float] = []
    by_level: dict[int, list[tuple[int, int, float]]] = {}

    clean_cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def clean_decisions(record_id: str):
        if record_id not in clean_cache:
            entry = clean_by_record.get(record_id)
            if entry is None:
                raise ImageIOError(f"record {record_id}: no level-0 entry in manifest")
            frames = np.stack([load_image(base_dir / p) for p in entry.image_paths])
            p = frame_decisions(victim, frames, d, defense)
            clean_cache[record_id] = (p, np.argmax(p, axis=1))
        return clean_cache[record_id]

    for e in adv_entries:
        try:
            p_clean, idx_clean = clean_decisions(e.record_id)
            adv_frames = np.stack([load_image(base_dir / p) for p in e.image_paths])
            p_adv = frame_decisions(victim, adv_frames, d, defense)
        except ImageIOError as exc:
            errors.append(str(exc))
            continue
        flipped = (np.argmax(p_adv, axis=1) != idx_clean)
        drop = _margin(p_clean, idx_clean) - _margin(p_adv, idx_clean)
        flips += int(flipped.sum())
        frames_total += flipped.size
        margin_drops.extend(drop.tolist())
        by_level.setdefault(e.level, []).append(
            (int(flipped.sum()), flipped.size, float(drop.sum())))

    per_severity = {}
    for level in sorted(by_level):
        f = sum(v[0] for v in by_level[level])
        n = sum(v[1] for v in by_level[level])
        dsum = sum(v[2] for v in by_level[level])
        per_severity[str(level)] = {
            "flip_rate": f / n if n else 0.0,
            "mean_margin_drop": dsum / n if n else 0.0,
            "frames": n,
        }

    return EvalSummary(
        corpus_size=len(adv_entries),
        n_frames=frames_total,
        flip_rate=flips / frames_total if frames_total else 0.0,
        mean_margin_drop=float(np.mean(margin_drops)) if margin_drops else 0.0,
        per_severity=per_severity,
        defense=defense.tag,
        incomplete=bool(errors),
        errors=errors,
    )
