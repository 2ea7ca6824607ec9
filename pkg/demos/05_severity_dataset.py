"""Severity-leveled adversarial dataset generation.

Every clean record spawns four attacked copies: epsilon tiers 0.02/0.04/0.06/
0.08 in scene mode, patch sides of 10/15/20/25% of the frame side in object
mode. The manifest is JSON-lines, level 0 references the clean frames, and
regenerating with the same seed reproduces identical bytes.

A small corpus and a reduced iteration count keep this demo quick; drop the
overrides for a full-strength dataset.
"""

import json
import tempfile
from pathlib import Path

from cascadv import (AttackConfig, Rng, SeverityPlan, generate_dataset,
                     read_manifest, synth_corpus)

root = Path(tempfile.mkdtemp(prefix="cascadv_demo_"))

# -- scene mode ---------------------------------------------------------------
scenes = synth_corpus(Rng(0), 4, 64, 64, 2, out_dir=root / "scenes")
cfg = AttackConfig(iterations=40, seed=0)
manifest, skipped = generate_dataset(scenes, SeverityPlan.scene(), cfg,
                                     root / "scenes", root / "scene_ds")
entries = read_manifest(manifest)
print(f"scene dataset: {len(scenes)} records -> {len(entries)} manifest entries "
      f"({sum(e.level > 0 for e in entries)} adversarial), skipped={skipped}")
print("severity levels:", sorted({e.severity for e in entries if e.level}))

sample = next(e for e in entries if e.level == 2)
print("\nsample manifest entry (level 2):")
print(json.dumps(json.loads(sample.to_json()), indent=2, sort_keys=True))

# -- object mode: sign images with adversarial patches ------------------------
signs = synth_corpus(Rng(1), 4, 64, 64, 1, out_dir=root / "signs", kind="object")
obj_cfg = AttackConfig(iterations=40, seed=1, n_chains=5,
                       chain_errors=("red-light", "stop-sign", "pedestrian",
                                     "lane-drift", "tailgate"),
                       descriptor_groups=("safety", "hazard", "order",
                                          "risk", "urgency"))
obj_manifest, _ = generate_dataset(signs, SeverityPlan.object(), obj_cfg,
                                   root / "signs", root / "object_ds")
for e in read_manifest(obj_manifest):
    if e.level:
        print(f"  {e.record_id} level {e.level}: side {e.patch_region[2]}px "
              f"at {e.patch_region[:2]}  q-linf {e.quantized_linf:.3f}")
print(f"\ndatasets written under {root}")
