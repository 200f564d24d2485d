"""Command-line orchestration: train -> select -> evaluate -> report.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import ayss, sim
from .config import ConfigError, ExperimentConfig, parse_config
from .dqn import greedy_policy_from_net, load_policy
from .training import TrainingDiverged, select_spcp, train_pov

log = logging.getLogger("povbench")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _load(args) -> ExperimentConfig:
    path = Path(args.config)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    # flag overrides become part of the config before hashing
    if getattr(args, "steps", None) is not None:
        raw.setdefault("train", {})["total_env_steps"] = int(args.steps)
    if getattr(args, "n_samples", None) is not None:
        raw.setdefault("ayss", {})["n_samples"] = int(args.n_samples)
    if getattr(args, "n_episodes", None) is not None:
        raw.setdefault("ayss", {})["n_episodes"] = int(args.n_episodes)
    if getattr(args, "out", None) is not None:
        raw["output_dir"] = args.out
    return parse_config(raw, base_dir=path.parent)


def cmd_train(args) -> int:
    cfg = _load(args)
    pairs = [(v, s) for v in cfg.vuts for s in cfg.seeds]
    if args.vut is not None:
        if args.vut not in cfg.vuts:
            raise ConfigError(f"--vut {args.vut!r} not listed in config vuts")
        pairs = [(v, s) for v, s in pairs if v == args.vut]
    if args.seed is not None:
        if args.seed not in cfg.seeds:
            raise ConfigError(f"--seed {args.seed} not listed in config seeds")
        pairs = [(v, s) for v, s in pairs if s == args.seed]

    for vut_name, seed in pairs:
        run_dir = cfg.run_dir(vut_name, seed)
        run_dir.mkdir(parents=True, exist_ok=True)
        meta = {"config_hash": cfg.config_hash, "seed": seed}
        snapshot = dict(cfg.resolved)
        snapshot["config_hash"] = cfg.config_hash
        (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2,
                                                        default=str))
        run = cfg.train_run(vut_name, seed)
        log.info("training %s seed %d for %d steps -> %s",
                 vut_name, seed, run.total_env_steps, run_dir)
        train_pov(run, sim_cfg=cfg.sim_cfg, reward_cfg=cfg.reward_cfg,
                  hp=cfg.dqn_hp, out_dir=run_dir, meta=meta)
        print(f"trained {vut_name} seed {seed}: {run_dir}")
    return EXIT_OK


def _read_training_csv(path: Path) -> list[dict]:
    rows = []
    for line in path.read_text().splitlines():
        if line.startswith("#") or line.startswith("step_index") or not line:
            continue
        step, score, crash = line.split(",")
        rows.append({"step_index": int(step), "score": float(score),
                     "crash_rate": float(crash)})
    return rows


def cmd_select(args) -> int:
    cfg = _load(args)
    entries = []
    missing = []
    for vut_name in cfg.vuts:
        for seed in cfg.seeds:
            run_dir = cfg.run_dir(vut_name, seed)
            csv_path = run_dir / "training.csv"
            if not csv_path.exists():
                missing.append(str(run_dir))
                continue
            rows = _read_training_csv(csv_path)
            if not rows:
                missing.append(str(run_dir))
                continue
            best = min(rows, key=lambda r: (-r["score"], r["step_index"]))
            ckpt = run_dir / f"ckpt_{best['step_index']:09d}.qnet"
            entries.append({
                "vut": vut_name, "seed": seed,
                "step_index": best["step_index"],
                "eval_mean_episode_reward": best["score"],
                "crash_rate": best["crash_rate"],
                "checkpoint": str(ckpt),
            })
            (run_dir / "spcp.json").write_text(json.dumps(entries[-1], indent=2))
    if missing:
        print("missing or empty training runs:", file=sys.stderr)
        for m in missing:
            print(f"  {m}", file=sys.stderr)
        return EXIT_VALIDATION
    manifest = {"config_hash": cfg.config_hash, "case": cfg.case,
                "entries": entries}
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = cfg.output_dir / "spcp_manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    print(f"wrote {manifest_path} ({len(entries)} SPCPs)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    manifest_path = cfg.output_dir / "spcp_manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"manifest not found: {manifest_path}; "
                          "run 'povbench select' first")
    manifest = json.loads(manifest_path.read_text())
    report_dir = cfg.output_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": cfg.config_hash, "case": cfg.case}

    records_by_group: dict[str, list] = {}
    outcomes = []
    for entry in manifest["entries"]:
        ckpt_path = Path(entry["checkpoint"])
        try:
            net, _case = load_policy(ckpt_path)
        except (OSError, ValueError) as exc:
            print(f"unreadable checkpoint {ckpt_path}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        vut_name, seed = entry["vut"], entry["seed"]
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA755]))
        records = ayss.sample_ayss(net, cfg.n_samples, cfg.ayss_filter, rng,
                                   sim_cfg=cfg.sim_cfg)
        records_by_group.setdefault(vut_name, []).extend(records)
        ayss.write_records_csv(report_dir / f"records_{vut_name}_seed{seed}.csv",
                               records, cfg.case, meta={**meta, "seed": seed})
        outcome_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0C0]))
        outcomes.append(ayss.safety_outcome_study(
            greedy_policy_from_net(net), vut_name, cfg.n_episodes, outcome_rng,
            cfg.case, seed=seed, sim_cfg=cfg.sim_cfg,
            reward_cfg=cfg.reward_cfg))

    curve = ayss.build_curve(records_by_group, bin_width=cfg.bin_width)
    ayss.write_curve_csv(report_dir / "curve.csv", curve, meta=meta)
    ayss.write_outcomes_csv(report_dir / "outcomes.csv", outcomes, meta=meta)

    groups = sorted(records_by_group)
    lines = [f"case: {cfg.case}", f"config_hash: {cfg.config_hash}",
             f"groups: {groups}"]
    if len(groups) == 2:
        verdict = ayss.compare_vuts(curve, groups[0], groups[1],
                                    outcomes=outcomes, majority=cfg.majority)
        lines += [
            f"common headway bins: {verdict.common_bins}",
            f"{groups[0]} more aggressive in {verdict.frac_a_more_aggressive:.0%} of bins",
            f"{groups[1]} more aggressive in {verdict.frac_b_more_aggressive:.0%} of bins",
            f"overall safety outcomes comparable: {verdict.outcomes_comparable}",
            f"verdict: {verdict.verdict}",
        ]
        (report_dir / "verdict.json").write_text(json.dumps({
            "config_hash": cfg.config_hash,
            "verdict": verdict.verdict,
            "common_bins": verdict.common_bins,
            "frac_a_more_aggressive": verdict.frac_a_more_aggressive,
            "frac_b_more_aggressive": verdict.frac_b_more_aggressive,
            "outcomes_comparable": verdict.outcomes_comparable,
            "mean_reward_by_group": verdict.mean_reward_by_group,
        }, indent=2))
    else:
        lines.append("comparison skipped: need exactly two VUT groups, "
                     f"got {len(groups)}")
    summary = "\n".join(lines) + "\n"
    (report_dir / "verdict.txt").write_text(summary)
    print(summary, end="")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _load(args)
    verdict_path = cfg.output_dir / "report" / "verdict.txt"
    outcomes_path = cfg.output_dir / "report" / "outcomes.csv"
    if not verdict_path.exists():
        raise ConfigError(f"no report at {verdict_path}; run 'povbench "
                          "evaluate' first")
    print(verdict_path.read_text(), end="")
    if outcomes_path.exists():
        print("\nsafety outcomes:")
        print(outcomes_path.read_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="povbench",
        description="Characterize black-box driving policies by training "
                    "adversarial-yet-safe opponents against them.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="experiment YAML")
        p.add_argument("--out", help="override output directory")

    p_train = sub.add_parser("train", help="train POV policies")
    add_common(p_train)
    p_train.add_argument("--vut", help="train only this VUT policy")
    p_train.add_argument("--seed", type=int, help="train only this seed")
    p_train.add_argument("--steps", type=int, help="override total env steps")

    p_select = sub.add_parser("select", help="pick the SPCP per (VUT, seed)")
    add_common(p_select)

    p_eval = sub.add_parser("evaluate", help="generate AYSSs and compare VUTs")
    add_common(p_eval)
    p_eval.add_argument("--n-samples", type=int, dest="n_samples",
                        help="observation-space samples per SPCP")
    p_eval.add_argument("--n-episodes", type=int, dest="n_episodes",
                        help="episodes per safety-outcome row")

    p_report = sub.add_parser("report", help="print the persisted verdict")
    add_common(p_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    handlers = {"train": cmd_train, "select": cmd_select,
                "evaluate": cmd_evaluate, "report": cmd_report}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
