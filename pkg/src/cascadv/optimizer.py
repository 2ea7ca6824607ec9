"""Momentum-PGD refinement of the perturbation under either an L-infinity
budget (with pixel-validity clamping) or a spatially confined patch with no
magnitude bound.

Update rule: accumulate the L1-normalized gradient into a momentum buffer,
step against its sign (the objective is minimized), then project back into
the feasible set after every step.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import DomainError, Rng, ShapeMismatch
from .encoder import DEFAULT_SURROGATE_SEED, DualEncoder, ImageSeq
from .objectives import DEFAULT_WEIGHTS, LossBreakdown, LossEvaluator, LossWeights

log = logging.getLogger(__name__)

__all__ = [
    "LInfBall", "PatchRegion", "Perturbation", "AttackConfig", "AttackReport",
    "project", "momentum_step", "run_attack", "place_patch", "uniform_noise",
]


@dataclass(frozen=True)
class LInfBall:
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"LInfBall: epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class PatchRegion:
    """Per-frame square regions (top, left, height, width); no magnitude bound
    inside, identically zero outside."""

    regions: tuple[tuple[int, int, int, int], ...]


@dataclass(frozen=True)
class Perturbation:
    delta: np.ndarray
    mode: LInfBall | PatchRegion

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.delta).tobytes()).hexdigest()


def _patch_mask(shape: tuple, mode: PatchRegion) -> np.ndarray:
    if len(mode.regions) != shape[0]:
        raise ShapeMismatch("patch regions", (len(mode.regions),), shape)
    mask = np.zeros(shape)
    for i, (top, left, rh, rw) in enumerate(mode.regions):
        if top < 0 or left < 0 or top + rh > shape[1] or left + rw > shape[2]:
            raise DomainError(f"patch region {mode.regions[i]} exceeds frame {shape[1:3]}")
        mask[i, top:top + rh, left:left + rw, :] = 1.0
    return mask


def project(delta: np.ndarray, x: ImageSeq, mode: LInfBall | PatchRegion) -> np.ndarray:
    """Project onto the feasible set; idempotent bit-for-bit.

    L-infinity mode clamps each component to [-eps, eps] and then pulls x+delta
    back into [0, 1]. Patch mode zeroes everything outside the region and
    applies only the validity clamp inside.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != x.frames.shape:
        raise ShapeMismatch("project", delta.shape, x.frames.shape)
    adv = x.frames + delta
    if isinstance(mode, LInfBall):
        if np.abs(delta).max() <= mode.epsilon and adv.min() >= 0.0 and adv.max() <= 1.0:
            return delta  # already feasible: unchanged bit-for-bit
        d = np.clip(delta, -mode.epsilon, mode.epsilon)
        d = np.clip(x.frames + d, 0.0, 1.0) - x.frames
        # second pass reaches the floating-point fixed point of the clamp chain
        d = np.clip(d, -mode.epsilon, mode.epsilon)
        return np.clip(x.frames + d, 0.0, 1.0) - x.frames
    if isinstance(mode, PatchRegion):
        mask = _patch_mask(delta.shape, mode)
        if (delta * (1.0 - mask) == 0.0).all() and adv.min() >= 0.0 and adv.max() <= 1.0:
            return delta
        d = (np.clip(adv, 0.0, 1.0) - x.frames) * mask
        return (np.clip(x.frames + d, 0.0, 1.0) - x.frames) * mask
    raise TypeError(f"project: unsupported mode {type(mode).__name__}")


def momentum_step(m: np.ndarray, g: np.ndarray, mu: float, eta: float,
                  delta: np.ndarray, x: ImageSeq,
                  mode: LInfBall | PatchRegion) -> tuple[np.ndarray, np.ndarray]:
    """One accumulate-and-sign descent step followed by projection.

    A zero gradient skips the step (logged) rather than failing the run.
    """
    if g.shape != delta.shape or m.shape != delta.shape:
        raise ShapeMismatch("momentum_step", m.shape, g.shape, delta.shape)
    l1 = np.abs(g).sum()
    if l1 == 0.0:
        log.warning("momentum_step: zero gradient, step skipped")
        return m, delta
    m_next = mu * m + g / l1
    d_next = project(delta - eta * np.sign(m_next), x, mode)
    return m_next, d_next


def place_patch(x: ImageSeq, frac: float, rng: Rng,
                semantics: str = "side") -> tuple[int, int, int, int]:
    """Pick a square patch region, uniformly positioned among valid offsets.

    ``side`` semantics: side = round(frac * min(H, W)). ``area`` semantics:
    the square covers a frac fraction of the frame's pixels.
    """
    h, w = x.hw
    if not 0.0 < frac <= 1.0:
        raise DomainError(f"place_patch: frac must be in (0, 1], got {frac}")
    if semantics == "side":
        side = int(round(frac * min(h, w)))
    elif semantics == "area":
        side = int(round(np.sqrt(frac * h * w)))
    else:
        raise ValueError(f"place_patch: unknown semantics {semantics!r}")
    side = max(side, 1)
    if side > min(h, w):
        raise DomainError(f"place_patch: side {side} exceeds frame {h}x{w}")
    top = rng.randint(h - side + 1)
    left = rng.randint(w - side + 1)
    return top, left, side, side


def uniform_noise(rng: Rng, x: ImageSeq, epsilon: float) -> np.ndarray:
    """I.i.d. uniform noise at the same budget; the unoptimized baseline."""
    delta = rng.uniform(x.frames.shape, -epsilon, epsilon)
    return project(delta, x, LInfBall(epsilon))


# ---------------------------------------------------------------------------
# configuration and reporting


@dataclass(frozen=True)
class AttackConfig:
    """Knobs for one attack run; defaults follow the reference operating point
    (weights 0.75/0.05/0.75, budget 0.1, 160 iterations)."""

    weights: LossWeights = DEFAULT_WEIGHTS
    epsilon: float = 0.1
    iterations: int = 160
    momentum: float = 1.0
    eta: float | None = None
    seed: int = 0
    surrogate_seed: int = DEFAULT_SURROGATE_SEED
    mode: str = "linf"
    patch_frac: float = 0.12
    patch_semantics: str = "area"
    chain_errors: tuple[str, ...] = ("red-light",)
    n_chains: int = 1
    n_stages: int = 3
    descriptor_groups: tuple[str, ...] = ("safety",)

    def __post_init__(self):
        if self.mode not in ("linf", "patch"):
            raise ValueError(f"AttackConfig: unknown mode {self.mode!r}")
        if self.mode == "linf" and not self.epsilon > 0:
            raise ValueError("AttackConfig: epsilon must be positive")
        if self.iterations < 1:
            raise ValueError("AttackConfig: iterations must be >= 1")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("AttackConfig: eta must be positive")
        if self.momentum < 0:
            raise ValueError("AttackConfig: momentum must be non-negative")

    def step_size(self) -> float:
        """Default step: 2.5 * eps / N; patch mode treats the full pixel range
        as the budget."""
        if self.eta is not None:
            return self.eta
        budget = self.epsilon if self.mode == "linf" else 1.0
        return 2.5 * budget / self.iterations

    def canonical(self) -> dict:
        return {
            "weights": [self.weights.alpha, self.weights.beta, self.weights.gamma],
            "epsilon": self.epsilon, "iterations": self.iterations,
            "momentum": self.momentum, "eta": self.step_size(),
            "seed": self.seed, "surrogate_seed": self.surrogate_seed,
            "mode": self.mode, "patch_frac": self.patch_frac,
            "patch_semantics": self.patch_semantics,
            "chain_errors": list(self.chain_errors), "n_chains": self.n_chains,
            "n_stages": self.n_stages,
            "descriptor_groups": list(self.descriptor_groups),
            "rng": Rng.ALGORITHM,
        }

    def digest(self) -> str:
        canon = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def with_level(self, value: float) -> "AttackConfig":
        """Derive the per-severity config: epsilon for linf, side frac for patch."""
        if self.mode == "linf":
            return replace(self, epsilon=value)
        return replace(self, patch_frac=value, patch_semantics="side")


@dataclass
class AttackReport:
    """Everything needed to audit one run; serializable, timestamps excluded
    from the digest."""

    loss_trace: list[LossBreakdown]
    delta_checksum: str
    mask_checksum: str
    clean_match: list[list[float]]
    adv_match: list[list[float]]
    frame_flips: list[bool]
    skipped_steps: int
    config_digest: str
    rng_algorithm: str
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "loss_trace": [b.as_dict() for b in self.loss_trace],
            "delta_checksum": self.delta_checksum,
            "mask_checksum": self.mask_checksum,
            "clean_match": self.clean_match,
            "adv_match": self.adv_match,
            "frame_flips": self.frame_flips,
            "skipped_steps": self.skipped_steps,
            "config_digest": self.config_digest,
            "rng_algorithm": self.rng_algorithm,
            "wall_time_s": self.wall_time_s,
        }

    def digest(self) -> str:
        body = self.to_dict()
        body.pop("wall_time_s")
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# the attack loop


def _init_delta(cfg: AttackConfig, x: ImageSeq,
                mode: LInfBall | PatchRegion, rng: Rng) -> np.ndarray:
    if isinstance(mode, LInfBall):
        return np.zeros_like(x.frames)
    mask = _patch_mask(x.frames.shape, mode)
    start = rng.uniform(x.frames.shape)  # uniform pixel values inside the patch
    return project((start - x.frames) * mask, x, mode)


def run_attack(surrogate: DualEncoder, x: ImageSeq, cfg: AttackConfig,
               chains, descriptors) -> tuple[Perturbation, AttackReport]:
    """Optimize a perturbation of ``x`` against the surrogate encoder.

    The matching mask is built from the clean pass once and stays frozen; the
    whole run is deterministic given ``cfg.seed``.
    """
    t0 = time.perf_counter()
    rng = Rng(cfg.seed)
    if cfg.mode == "linf":
        mode: LInfBall | PatchRegion = LInfBall(cfg.epsilon)
    else:
        region = place_patch(x, cfg.patch_frac, rng.split(1), cfg.patch_semantics)
        mode = PatchRegion(tuple(region for _ in range(x.n)))

    groups = list(descriptors) if isinstance(descriptors, (list, tuple)) else [descriptors]
    evaluator = LossEvaluator(surrogate, x, chains, groups, cfg.weights)
    mask_checksum = evaluator.masks[0].checksum()

    delta = _init_delta(cfg, x, mode, rng.split(2))
    m = np.zeros_like(delta)
    eta = cfg.step_size()
    trace: list[LossBreakdown] = []
    skipped = 0

    for it in range(cfg.iterations):
        bd, grad = evaluator.breakdown_and_grad(delta)
        if not np.isfinite(bd.l_total):
            raise RuntimeError(
                f"run_attack: non-finite loss at iteration {it}: {bd.as_dict()}")
        trace.append(bd)
        if np.abs(grad).sum() == 0.0:
            skipped += 1
        m, delta = momentum_step(m, grad, cfg.momentum, eta, delta, x, mode)

    if evaluator.masks[0].checksum() != mask_checksum:
        raise RuntimeError("run_attack: matching mask changed during optimization")

    clean_p = evaluator.clean_match[0].p
    adv_p = evaluator.adv_match(delta, group=0).p
    flips = (np.argmax(clean_p, axis=1) != np.argmax(adv_p, axis=1)).tolist()
    pert = Perturbation(delta, mode)
    report = AttackReport(
        loss_trace=trace,
        delta_checksum=pert.checksum(),
        mask_checksum=mask_checksum,
        clean_match=clean_p.tolist(),
        adv_match=adv_p.tolist(),
        frame_flips=flips,
        skipped_steps=skipped,
        config_digest=cfg.digest(),
        rng_algorithm=Rng.ALGORITHM,
        wall_time_s=time.perf_counter() - t0,
    )
    return pert, report
