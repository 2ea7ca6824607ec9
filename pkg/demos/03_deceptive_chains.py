"""Deceptive reasoning chains, generated backward.

Each chain starts from a wrong plan ("accelerate through the intersection"),
invents the prediction that would justify it, then the perception that would
justify the prediction, and joins the parts front-to-back into one sentence.
The bundled template bank is fully deterministic; an external text-generation
endpoint can replace it, with automatic flagged fallback to the bank.
"""

from cascadv import (CONNECTOR, GeneratorEndpoint, Stage, build_chain,
                     generate_cause, load_template_bank, query_aggregate)

bank = load_template_bank()
print(f"template bank {bank.id!r} v{bank.version}, categories: {bank.categories()}")

# -- one backward step at a time ---------------------------------------------
plan_error = bank.plan_text("red-light")
pred_cause, _ = generate_cause(bank, "city junction", plan_error, Stage.plan())
perc_cause, _ = generate_cause(bank, "city junction", pred_cause, Stage.prediction())
print("\nbackward generation:")
print(f"  plan error:        {plan_error}")
print(f"  prediction cause:  {pred_cause}")
print(f"  perception cause:  {perc_cause}")

# -- assembled chains ---------------------------------------------------------
chain = build_chain(bank, "city junction", "red-light")
print(f"\ncombined (joined by {CONNECTOR!r}):\n  {chain.combined}")
assert chain.combined == CONNECTOR.join(chain.parts)

print("\nall catalog chains:")
for category in bank.categories():
    print(f"  [{category}] {build_chain(bank, 'scene', category).combined}")

# -- aggregated queries (dataset generation uses k=5) -------------------------
chains = query_aggregate(bank, "scene", bank.categories()[:5], k=5)
print(f"\nquery_aggregate -> {len(chains)} chains, "
      f"{len({c.combined for c in chains})} distinct, "
      f"fallbacks: {sum(c.fallback for c in chains)}")

# -- endpoint mode (shape only; not called here) ------------------------------
endpoint = GeneratorEndpoint(base_url="http://localhost:9api/generate",
                             auth_env="CASCADV_GENERATOR_TOKEN",
                             timeout_ms=5000, max_retries=2, template=bank)
print(f"\nendpoint mode posts {{'prompt': ...}} to {endpoint.base_url}; "
      "failures fall back to the bank and set chain.fallback")
