"""Command-line front end.

Subcommands: attack, gen-dataset, eval, grad-check, synth-corpus. Every
subcommand accepts --config <json>, --seed and --out; the config schema is
documented in the README. Exit codes: 0 success, 1 runtime failure, 2 usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..autodiff import Rng
from ..deception import load_template_bank, query_aggregate
from ..encoder import DualEncoder, ImageSeq, make_victim
from ..forge import (SeverityPlan, generate_dataset, load_corpus, load_image,
                     save_adversarial, synth_corpus)
from ..objectives import LossWeights, select_descriptor_groups
from ..optimizer import AttackConfig, run_attack
from .defenses import DefenseSpec
from .evaluate import eval_transfer
from .gradcheck import gradient_check

__all__ = ["main", "entrypoint"]


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _attack_config(cfg: dict, seed_override: int | None) -> AttackConfig:
    weights = cfg.get("weights", {})
    kwargs = dict(
        weights=LossWeights(alpha=weights.get("alpha", 0.75),
                            beta=weights.get("beta", 0.05),
                            gamma=weights.get("gamma", 0.75)),
        epsilon=cfg.get("epsilon", 0.1),
        iterations=cfg.get("iterations", 160),
        momentum=cfg.get("momentum", 1.0),
        eta=cfg.get("eta"),
        seed=cfg.get("seed", 0),
        surrogate_seed=cfg.get("surrogate_seed", 42),
        mode=cfg.get("mode", "linf"),
        patch_frac=cfg.get("patch_frac", 0.12),
        patch_semantics=cfg.get("patch_semantics", "area"),
        chain_errors=tuple(cfg.get("chain_errors", ["red-light"])),
        n_chains=cfg.get("n_chains", 1),
        n_stages=cfg.get("n_stages", 3),
        descriptor_groups=tuple(cfg.get("descriptor_groups", ["safety"])),
    )
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return AttackConfig(**kwargs)


def _load_attack_images(cfg: dict, seed: int) -> ImageSeq:
    if cfg.get("images"):
        return ImageSeq(np.stack([load_image(p) for p in cfg["images"]]))
    if cfg.get("corpus"):
        records = load_corpus(cfg["corpus"])
        wanted = cfg.get("record_id", records[0].id)
        match = [r for r in records if r.id == wanted]
        if not match:
            raise ValueError(f"record {wanted!r} not found in {cfg['corpus']}")
        return match[0].load(cfg["corpus"])
    synth = cfg.get("synth", {})
    from ..forge import _draw_scene_frames

    frames = _draw_scene_frames(Rng(seed), synth.get("height", 64),
                                synth.get("width", 64), synth.get("frames", 2))
    return ImageSeq(frames)


def _cmd_attack(args) -> int:
    cfg_raw = _load_config(args.config)
    cfg = _attack_config(cfg_raw, args.seed)
    surrogate = DualEncoder.create(cfg.surrogate_seed)
    x = _load_attack_images(cfg_raw, cfg.seed)
    bank = load_template_bank()
    chains = query_aggregate(bank, cfg_raw.get("scene_hint", "driving scene"),
                             list(cfg.chain_errors), cfg.n_chains, cfg.n_stages)
    groups = select_descriptor_groups(cfg.descriptor_groups)
    pert, report = run_attack(surrogate, x, cfg, chains, groups)

    out = Path(args.out or "attack_out")
    out.mkdir(parents=True, exist_ok=True)
    for j in range(x.n):
        save_adversarial(x.frames[j], pert.delta[j], out / f"adv_frame{j}.png")
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    print(f"delta checksum: {report.delta_checksum}")
    print(f"final loss: {report.loss_trace[-1].l_total:.6f}  "
          f"frame flips (surrogate): {sum(report.frame_flips)}/{x.n}")
    print(f"report: {out / 'report.json'}")
    return 0


def _cmd_gen_dataset(args) -> int:
    cfg_raw = _load_config(args.config)
    if "corpus" not in cfg_raw:
        raise ValueError("gen-dataset config needs a 'corpus' directory")
    mode = cfg_raw.get("dataset_mode", "scene")
    # dataset generation queries five chains and matches five descriptor
    # groups unless the config narrows them
    cfg_raw.setdefault("n_chains", 5)
    cfg_raw.setdefault("chain_errors",
                       ["red-light", "stop-sign", "pedestrian", "lane-drift", "tailgate"])
    cfg_raw.setdefault("descriptor_groups",
                       ["safety", "hazard", "order", "risk", "urgency"])
    cfg = _attack_config(cfg_raw, args.seed)
    if "levels" in cfg_raw:
        plan = SeverityPlan(mode, tuple(cfg_raw["levels"]))
    else:
        plan = SeverityPlan.scene() if mode == "scene" else SeverityPlan.object()
    records = load_corpus(cfg_raw["corpus"])
    out = Path(args.out or "dataset_out")
    manifest, skipped = generate_dataset(records, plan, cfg, cfg_raw["corpus"], out)
    print(f"manifest: {manifest}  records: {len(records)}  skipped: {skipped}")
    return 1 if skipped else 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    if "manifest" not in cfg:
        raise ValueError("eval config needs a 'manifest' path")
    victim = make_victim(seed=cfg.get("victim_seed", 7),
                         d_h=cfg.get("victim_d_h", 48), d=cfg.get("victim_d", 24),
                         surrogate_seed=cfg.get("surrogate_seed", 42))
    group = select_descriptor_groups([cfg.get("descriptor_group", "safety")])[0]
    defense = DefenseSpec.from_dict(cfg.get("defense"))
    summary = eval_transfer(victim, cfg["manifest"], group, defense)
    text = json.dumps(summary.to_dict(), indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _cmd_grad_check(args) -> int:
    cfg = _load_config(args.config)
    result = gradient_check(seed=args.seed if args.seed is not None else cfg.get("seed", 0),
                            instances=cfg.get("instances", 5),
                            coords_per_instance=cfg.get("coords_per_instance", 40),
                            h=cfg.get("h", 1e-5))
    print(f"max rel err: {result.max_rel_err:.3e} "
          f"({result.coords_checked} coords, {result.instances} instances, h={result.h})")
    return 0 if result.passed else 1


def _cmd_synth_corpus(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = Path(args.out or "corpus_out")
    records = synth_corpus(Rng(seed), cfg.get("count", 32),
                           cfg.get("height", 64), cfg.get("width", 64),
                           cfg.get("frames", 2), out_dir=out,
                           kind=cfg.get("kind", "scene"))
    print(f"corpus: {out}  records: {len(records)}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascadv",
        description="Cascading adversarial attacks on dual-encoder scene matchers.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, doc in [
        ("attack", _cmd_attack, "run one configured attack and write report + images"),
        ("gen-dataset", _cmd_gen_dataset, "generate a severity-leveled adversarial dataset"),
        ("eval", _cmd_eval, "evaluate a manifest against the held-out encoder"),
        ("grad-check", _cmd_grad_check, "verify attack gradients against finite differences"),
        ("synth-corpus", _cmd_synth_corpus, "emit the seeded synthetic corpus"),
    ]:
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", help="JSON config file (see README for the schema)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", help="output directory")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
