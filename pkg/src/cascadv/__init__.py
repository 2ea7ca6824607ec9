"""Black-box cascading adversarial attacks on dual-encoder scene matchers.

The toolkit optimizes image perturbations against a differentiable surrogate
encoder using three objectives (deceptive-chain alignment, safety-matching
inversion, semantic discrepancy) under momentum PGD, and measures how the
results transfer to an independently seeded, held-out encoder.
"""

from .autodiff import DomainError, Rng, ShapeMismatch, Tape, Tensor, backward, gaussian_init
from .deception import (CONNECTOR, DeceptiveChain, GeneratorEndpoint,
                        ReversalTemplate, Stage, build_chain, generate_cause,
                        load_template_bank, query_aggregate)
from .encoder import (DualEncoder, HeldOutEncoder, ImageSeq, encode_frame,
                      encode_sequence, encode_text, load_weights, make_victim,
                      save_weights, tokenize)
from .forge import (ManifestEntry, SceneRecord, SeverityPlan, generate_dataset,
                    load_corpus, load_image, read_manifest, save_adversarial,
                    synth_corpus)
from .harness.defenses import DefenseSpec, apply_defense, bit_depth_reduce, median_smooth
from .harness.evaluate import EvalSummary, eval_transfer
from .harness.gradcheck import gradient_check
from .objectives import (DEFAULT_WEIGHTS, DescriptorSet, LossBreakdown,
                         LossEvaluator, LossWeights, Mask, MatchResult,
                         build_mask, cosine_sim, default_descriptors,
                         load_descriptor_groups, loss_disc, loss_high,
                         loss_low, matching_head, select_descriptor_groups,
                         total_loss)
from .optimizer import (AttackConfig, AttackReport, LInfBall, PatchRegion,
                        Perturbation, momentum_step, place_patch, project,
                        run_attack, uniform_noise)

__version__ = "0.1.0"
