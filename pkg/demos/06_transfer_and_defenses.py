"""Transfer evaluation against the held-out encoder, with defenses.

Attacks are optimized purely against the seed-42 surrogate; scoring happens on
the seed-7 held-out encoder that the optimizer never touched. The summary
reports how often the victim's safety decision flips per frame and how much
its decision margin drops, per severity level, optionally behind an
input-transformation defense.

Uses a reduced corpus/iteration count; the committed acceptance pins were
measured at the full 32-scene, 160-iteration operating point.
"""

import tempfile
from pathlib import Path

from cascadv import (AttackConfig, DefenseSpec, Rng, SeverityPlan,
                     default_descriptors, eval_transfer, generate_dataset,
                     make_victim, synth_corpus)

root = Path(tempfile.mkdtemp(prefix="cascadv_demo_"))
records = synth_corpus(Rng(0), 8, 64, 64, 2, out_dir=root / "corpus")
cfg = AttackConfig(iterations=160, seed=0)
manifest, _ = generate_dataset(records, SeverityPlan.scene(), cfg,
                               root / "corpus", root / "ds")
victim = make_victim(seed=7)
d = default_descriptors()

print(f"{'defense':12s} {'flip rate':>10s} {'margin drop':>12s}   per-level flips")
for spec in (DefenseSpec(), DefenseSpec("bit_red", bits=3),
             DefenseSpec("median", window=3)):
    s = eval_transfer(victim, manifest, d, spec)
    levels = "  ".join(f"L{k}:{v['flip_rate']:.2f}"
                       for k, v in sorted(s.per_severity.items()))
    print(f"{s.defense:12s} {s.flip_rate:10.4f} {s.mean_margin_drop:12.5f}   {levels}")

print("""
Reading the table: bit-depth reduction cancels sub-half-step perturbations
exactly on this palette-aligned corpus, so levels 1-3 drop to zero. Median
smoothing conserves the saturated per-pixel noise and jitters shape contours,
which raises the flip rate instead of lowering it - rank filters have nothing
to remove from a dense two-valued perturbation at this scale.""")
