"""The seeded dual encoder and safety matching.

A patch-MLP image branch and a hashed bag-of-buckets text branch share one
unit-norm embedding space, so frames and descriptor sentences can be compared
by cosine similarity. The matching head turns those cosines into per-frame
probabilities, and the mask marks each frame's least-likely descriptor - the
class the attack will later push toward.
"""

import numpy as np

from cascadv import (DualEncoder, ImageSeq, Rng, build_mask, default_descriptors,
                     encode_frame, encode_text, make_victim, matching_head,
                     save_weights, load_weights, tokenize)

enc = DualEncoder.create(seed=42)
print(f"surrogate encoder: patch={enc.patch_size}, d_h={enc.d_h}, d={enc.d}")

# -- text branch -------------------------------------------------------------
for text in ["A safe driving scenario", "An unsafe driving scenario",
             "the traffic light ahead shows green"]:
    ids = tokenize(text)
    emb = encode_text(enc, text)
    print(f"{text!r}: {len(ids)} tokens, |e| = {np.linalg.norm(emb):.12f}")

# -- image branch and matching ----------------------------------------------
frames = Rng(0).uniform((2, 64, 64, 3), 0.2, 0.8)
x = ImageSeq(frames)
d = default_descriptors()
match = matching_head(enc, x, d)
mask = build_mask(match)
print("\nclean matching rows (per frame):")
for i in range(x.n):
    tag = d.descriptors[int(np.argmin(match.p[i]))]
    print(f"  frame {i}: {np.round(match.p[i], 4).tolist()}  -> attack target {tag!r}")
print("mask:\n", mask.m)

# -- the held-out evaluation encoder ----------------------------------------
# Different seed and width; only numpy forward passes are exposed, so there is
# no way to differentiate through it.
victim = make_victim(seed=7)
p = victim.match(frames, list(d.descriptors))
print("\nvictim matching rows:", np.round(p, 4).tolist())

# -- weights round-trip through the versioned blob ---------------------------
save_weights(enc, "/tmp/cascadv_demo_weights.bin")
again = load_weights("/tmp/cascadv_demo_weights.bin")
same = encode_frame(enc, frames[0]) @ encode_frame(again, frames[0])
print(f"\nserialized + reloaded encoder agreement: cos = {same:.12f}")
