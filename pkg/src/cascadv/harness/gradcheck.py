"""Finite-difference verification of the attack gradient.

The check is the independent route: it only ever calls the forward loss, so it
stays valid no matter what the reverse pass does. Coordinates whose two-sided
difference sits below the noise floor of f64 differencing are skipped rather
than scored (their relative error is not measurable at h = 1e-5).
"""

from __future__ import annotations

from dataclasses import dataclass


from ..autodiff import Rng
from ..deception import build_chain, load_template_bank
from ..encoder import DualEncoder, ImageSeq
from ..objectives import LossEvaluator, default_descriptors
from ..optimizer import LInfBall, project

__all__ = ["GradCheckResult", "gradient_check"]

FD_NOISE_FLOOR = 1e-9


@dataclass
class GradCheckResult:
    max_rel_err: float
    coords_checked: int
    instances: int
    h: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < 1e-5


def gradient_check(seed: int, instances: int = 5, coords_per_instance: int = 40,
                   h: float = 1e-5, frame_size: int = 32, n_frames: int = 2,
                   epsilon: float = 0.1) -> GradCheckResult:
    """Compare the reverse-mode attack gradient with central differences on
    randomly sampled perturbation coordinates across seeded toy instances."""
    rng = Rng(seed)
    bank = load_template_bank()
    categories = bank.categories()
    d = default_descriptors()
    max_rel = 0.0
    checked = 0
    for inst in range(instances):
        sub = rng.split(inst)
        enc = DualEncoder.create(sub.next_u64())
        x = ImageSeq(sub.uniform((n_frames, frame_size, frame_size, 3), 0.02, 0.98))
        chains = [build_chain(bank, "toy scene", categories[inst % len(categories)])]
        ev = LossEvaluator(enc, x, chains, [d])
        delta = project(sub.uniform(x.frames.shape, -epsilon, epsilon), x,
                        LInfBall(epsilon))
        _, grad = ev.breakdown_and_grad(delta)
        flat_grad = grad.reshape(-1)
        total = flat_grad.size
        for _ in range(coords_per_instance):
            c = sub.randint(total)
            dp, dm = delta.reshape(-1).copy(), delta.reshape(-1).copy()
            dp[c] += h
            dm[c] -= h
            fd = (ev.breakdown(dp.reshape(delta.shape)).l_total
                  - ev.breakdown(dm.reshape(delta.shape)).l_total) / (2 * h)
            denom = max(abs(flat_grad[c]), abs(fd))
            if denom < FD_NOISE_FLOOR:
                continue
            max_rel = max(max_rel, abs(flat_grad[c] - fd) / denom)
            checked += 1
    return GradCheckResult(max_rel_err=max_rel, coords_checked=checked,
                           instances=instances, h=h)
