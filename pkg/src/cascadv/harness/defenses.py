"""Input-transformation defenses: bit-depth reduction (feature squeezing) and
per-channel median smoothing. Both are pure per-frame transforms applied
before the evaluation encoder sees an image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from ..autodiff import DomainError

__all__ = ["DefenseSpec", "bit_depth_reduce", "median_smooth", "apply_defense"]


def bit_depth_reduce(frame: np.ndarray, bits: int) -> np.ndarray:
    """Quantize to 2^bits levels; rounding is half-up so outputs are identical
    across platforms. Idempotent."""
    if not 1 <= int(bits) <= 7:
        raise DomainError(f"bit_depth_reduce: bits must be in [1, 7], got {bits}")
    levels = float(2 ** int(bits) - 1)
    return np.floor(np.asarray(frame, dtype=np.float64) * levels + 0.5) / levels


def median_smooth(frame: np.ndarray, window: int) -> np.ndarray:
    """Replace each pixel with its window median, per channel, edges replicated."""
    window = int(window)
    if window < 3 or window % 2 == 0:
        raise DomainError(f"median_smooth: window must be odd and >= 3, got {window}")
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 2:
        return median_filter(arr, size=(window, window), mode="nearest")
    return median_filter(arr, size=(window, window, 1), mode="nearest")


@dataclass(frozen=True)
class DefenseSpec:
    """kind: "none" | "bit_red" (bits in 1..7) | "median" (odd window >= 3)."""

    kind: str = "none"
    bits: int = 3
    window: int = 3

    def __post_init__(self):
        if self.kind not in ("none", "bit_red", "median"):
            raise ValueError(f"DefenseSpec: unknown kind {self.kind!r}")
        if self.kind == "bit_red" and not 1 <= self.bits <= 7:
            raise ValueError(f"DefenseSpec: bits must be in [1, 7], got {self.bits}")
        if self.kind == "median" and (self.window < 3 or self.window % 2 == 0):
            raise ValueError(f"DefenseSpec: window must be odd >= 3, got {self.window}")

    @property
    def tag(self) -> str:
        if self.kind == "bit_red":
            return f"bit_red({self.bits})"
        if self.kind == "median":
            return f"median({self.window})"
        return "none"

    @classmethod
    def from_dict(cls, d: dict | None) -> "DefenseSpec":
        if not d:
            return cls()
        return cls(kind=d.get("kind", "none"), bits=d.get("bits", 3),
                   window=d.get("window", 3))


def apply_defense(frame: np.ndarray, spec: DefenseSpec) -> np.ndarray:
    if spec.kind == "bit_red":
        return bit_depth_reduce(frame, spec.bits)
    if spec.kind == "median":
        return median_smooth(frame, spec.window)
    return frame
