"""``trajreward`` command line.

Subcommands: validate, score, curate, grpo-step, coord-sim.  Settings are
layered defaults < ``--config`` file < flags.  Exit codes: 0 success,
1 contract violation, 2 input error, 3 external scorer failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from dataclasses import asdict, fields
from pathlib import Path

from . import coordinator, curation, grpo, overthinking, rewards, structural, trajectory
from .errors import InputError, ScorerError, TrajRewardError, TrajectoryError, Unclassifiable
from .io import ContainerRecord, dumps_line, read_container, read_jsonl, read_kv, read_lines, write_atomic, write_jsonl
from .scorer import ExternalScorer

log = logging.getLogger("trajreward")

EXIT_OK, EXIT_CONTRACT, EXIT_INPUT, EXIT_SCORER = 0, 1, 2, 3


def default_config() -> dict:
    """Every numeric default, grouped by owning module."""
    return {
        "trajectory": {
            "max_steps": trajectory.DEFAULT_MAX_STEPS,
            "max_consecutive_errors": trajectory.DEFAULT_MAX_CONSECUTIVE_ERRORS,
            "min_steps_before_stop": trajectory.DEFAULT_MIN_STEPS_BEFORE_STOP,
            "error_signatures": list(trajectory.DEFAULT_ERROR_SIGNATURES),
        },
        "structural": {
            "tag_bonuses": dict(structural.DEFAULT_TAG_BONUSES),
            "compound_bonus": structural.DEFAULT_COMPOUND_BONUS,
            "compounds": ["".join(c) for c in structural.DEFAULT_COMPOUNDS],
            "normalizer": structural.DEFAULT_TABLE.normalizer,
        },
        "overthinking": {
            "ngram_order": overthinking.NGRAM_ORDER,
            "similarity_floor": overthinking.SIMILARITY_FLOOR,
            "filler_density": overthinking.FILLER_DENSITY,
            "weights": list(overthinking.DEFAULT_WEIGHTS),
            "threshold": overthinking.DEFAULT_THRESHOLD,
            "low_pool_fraction": overthinking.DEFAULT_LOW_POOL_FRACTION,
            "filler_lexicon": list(overthinking.DEFAULT_FILLER_LEXICON),
        },
        "curation": {
            "stratification_mix": {k.value: v for k, v in curation.STRATIFICATION_MIX.fractions.items()},
            "sft_mix": {k.value: v for k, v in curation.SFT_MIX.fractions.items()},
            "correction_markers": list(curation.DEFAULT_CORRECTION_MARKERS),
        },
        "rewards": {
            "hrm_weights": asdict(rewards.HrmWeights()),
            "penalty_beta": rewards.DEFAULT_PENALTY_BETA,
            "lambda_floor": 0.0,
            "horizon": 4096,
        },
        "grpo": asdict(grpo.GrpoConfig()),
        "coordinator": asdict(coordinator.SimConfig()),
        "seed": 0,
    }


def _load_config(path: str | None) -> dict:
    return read_kv(path) if path else {}


def _pick(args, cfg: dict, name: str, default):
    """flag > config file > default."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


# ---------------------------------------------------------------------------


def _parse_records(path: str, signatures) -> tuple[list[tuple[ContainerRecord, trajectory.Trajectory]], list[dict]]:
    parsed, malformed = [], []
    for rec in read_container(path):
        try:
            parsed.append((rec, rec.parse(signatures=signatures)))
        except TrajectoryError as exc:
            malformed.append({"line": rec.line, "problem_id": rec.problem_id, "error": str(exc)})
    return parsed, malformed


def cmd_validate(args, cfg) -> int:
    signatures = read_lines(args.error_lexicon) if args.error_lexicon else trajectory.DEFAULT_ERROR_SIGNATURES
    parsed, malformed = _parse_records(args.corpus, signatures)
    roundtrip_failures = []
    for rec, t in parsed:
        if trajectory.serialize_trajectory(t) != rec.raw_text:
            roundtrip_failures.append({"line": rec.line, "problem_id": rec.problem_id})
    _, strat = curation.stratify([t for _, t in parsed])
    report = {
        "records": len(parsed) + len(malformed),
        "parsed": len(parsed),
        "malformed": malformed,
        "roundtrip_failures": roundtrip_failures,
        "categories": strat.counts,
        "unclassifiable": strat.unclassifiable,
    }
    _emit(args.output, json.dumps(report, indent=2) + "\n")
    for m in malformed:
        log.error("line %d (%s): %s", m["line"], m["problem_id"], m["error"])
    return EXIT_CONTRACT if malformed or roundtrip_failures else EXIT_OK


def _token_count(rec: ContainerRecord, t: trajectory.Trajectory) -> int:
    n = rec.metadata.get("completion_tokens")
    return int(n) if n else max(1, len(t.text.split()))


def cmd_score(args, cfg) -> int:
    total = int(_pick(args, cfg, "total_steps", 1000))
    step = int(_pick(args, cfg, "step", 0))
    horizon = int(_pick(args, cfg, "horizon", 4096))
    floor = float(_pick(args, cfg, "lambda_floor", 0.0))
    table = structural.TagBonusTable.from_file(args.tag_table) if args.tag_table else structural.DEFAULT_TABLE
    mode = args.scorer or cfg.get("scorer", "rule")
    scorer = rewards.rule_based_hrm if mode == "rule" else ExternalScorer(
        mode, timeout=float(_pick(args, cfg, "timeout", 10.0)), retries=int(_pick(args, cfg, "retries", 2))
    )
    parsed, malformed = _parse_records(args.corpus, trajectory.DEFAULT_ERROR_SIGNATURES)
    rows, scorer_failures = [], 0
    for rec, t in parsed:
        try:
            b = rewards.combined_reward(
                rec.raw_text, t, step, total, scorer, horizon, _token_count(rec, t),
                table=table, lambda_floor=floor,
            )
            rows.append({"problem_id": rec.problem_id, "line": rec.line, **b.to_json()})
        except ScorerError as exc:
            scorer_failures += 1
            rows.append({"problem_id": rec.problem_id, "line": rec.line, "error": str(exc)})
        except TrajRewardError as exc:
            rows.append({"problem_id": rec.problem_id, "line": rec.line, "error": str(exc)})
    for m in malformed:
        rows.append({"problem_id": m["problem_id"], "line": m["line"], "error": m["error"]})
    _emit_rows(args.output, rows)
    if scorer_failures:
        return EXIT_SCORER
    return EXIT_CONTRACT if malformed else EXIT_OK


def cmd_curate(args, cfg) -> int:
    seed = int(_pick(args, cfg, "seed", 0))
    parsed, malformed = _parse_records(args.corpus, trajectory.DEFAULT_ERROR_SIGNATURES)
    if malformed:
        for m in malformed:
            log.error("line %d: %s", m["line"], m["error"])
        return EXIT_CONTRACT
    meta = {id(t): rec.metadata for rec, t in parsed}
    trajs = [t for _, t in parsed]
    pool = [(t, overthinking.overthinking_score(t).composite) for t in trajs]

    curate_size = int(_pick(args, cfg, "curate_size", 0)) or len(pool)
    plan = overthinking.CurationPlan(
        sample_size=curate_size,
        seed=seed,
        low_pool_fraction=float(_pick(args, cfg, "low_pool_fraction", overthinking.DEFAULT_LOW_POOL_FRACTION)),
    )
    curated, curation_rows = overthinking.curate_with_report(pool, plan)

    mix_name = args.mix or cfg.get("mix", "stratification")
    pools: dict = defaultdict(list)
    for t in curated:
        try:
            cat = curation.categorize(t)
        except Unclassifiable:
            continue
        key = cat if mix_name == "stratification" else curation.sft_source(t, cat)
        if key is not None:
            pools[key].append(t)
    base = curation.STRATIFICATION_MIX if mix_name == "stratification" else curation.SFT_MIX
    spec = curation.MixSpec(base.fractions, seed)
    n = int(_pick(args, cfg, "n", 0)) or sum(len(v) for v in pools.values())
    dataset = curation.sample_mix(pools, spec, n)

    out = Path(args.output)
    write_jsonl(out, [ContainerRecord(t.problem_id, t.mode, t.text, meta.get(id(t), {})).to_json() for t in dataset])
    _, strat = curation.stratify(dataset)
    write_jsonl(out.with_suffix(".stratification.jsonl"), strat.rows())
    write_jsonl(out.with_suffix(".curation.jsonl"), [asdict(r) for r in curation_rows])
    log.info("wrote %d trajectories to %s", len(dataset), out)
    return EXIT_OK


def cmd_grpo_step(args, cfg) -> int:
    known = {f.name for f in fields(grpo.GrpoConfig)}
    params = {k: v for k, v in cfg.items() if k in known}
    for name in known:
        v = getattr(args, name, None)
        if v is not None:
            params[name] = v
    config = grpo.GrpoConfig(**params)
    groups: dict[str, list[grpo.GroupSample]] = defaultdict(list)
    for i, row in enumerate(read_jsonl(args.samples), start=1):
        try:
            groups[str(row.get("group_id", 0))].append(grpo.GroupSample.from_json(row))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{args.samples}: sample {i}: {exc}") from exc
    rows = []
    for gid, samples in groups.items():
        loss, diag = grpo.grpo_group_loss(samples, config)
        rows.append({"group_id": gid, "loss": loss, **diag.to_json()})
    _emit_rows(args.output, rows)
    return EXIT_OK


def cmd_coord_sim(args, cfg) -> int:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(coordinator.SimConfig)}
    if args.config:
        sim = coordinator.SimConfig.from_file(args.config, **overrides)
    else:
        sim = coordinator.SimConfig(**{k: v for k, v in overrides.items() if v is not None})
    trace = coordinator.run_simulation(sim)
    _emit_rows(args.output, [e.to_json() for e in trace])
    problems = coordinator.audit_trace(trace, sim.ranks)
    for p in problems:
        log.error("audit: %s", p)
    print(json.dumps({"events": len(trace), "violations": len(problems)}), file=sys.stderr)
    return EXIT_CONTRACT if problems else EXIT_OK


# ---------------------------------------------------------------------------


def _emit(path: str | None, text: str) -> None:
    if path and path != "-":
        write_atomic(path, text)
    else:
        sys.stdout.write(text)


def _emit_rows(path: str | None, rows) -> None:
    _emit(path, "".join(dumps_line(r) for r in rows))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajreward", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--show-config", action="store_true", help="print all defaults as JSON and exit")
    sub = p.add_subparsers(dest="command")

    def common(sp, output_required=False):
        sp.add_argument("--config", help="key = value settings file")
        sp.add_argument("-o", "--output", required=output_required, help="output path (default stdout)")

    v = sub.add_parser("validate", help="parse a corpus, check round-trips, count categories")
    v.add_argument("corpus")
    v.add_argument("--error-lexicon", help="error signatures, one per line")
    common(v)

    s = sub.add_parser("score", help="emit a reward breakdown per record")
    s.add_argument("corpus")
    s.add_argument("--step", type=int)
    s.add_argument("--total-steps", type=int)
    s.add_argument("--horizon", type=int)
    s.add_argument("--lambda-floor", type=float)
    s.add_argument("--scorer", help="'rule' or an http:// / tcp:// endpoint")
    s.add_argument("--timeout", type=float)
    s.add_argument("--retries", type=int)
    s.add_argument("--tag-table", help="tag bonus overrides file")
    common(s)

    c = sub.add_parser("curate", help="overthinking curation then mix sampling")
    c.add_argument("corpus")
    c.add_argument("--mix", choices=["stratification", "sft"])
    c.add_argument("-n", type=int, help="dataset size (default: all curated)")
    c.add_argument("--curate-size", type=int, help="overthinking sample size (default: whole pool)")
    c.add_argument("--low-pool-fraction", type=float)
    c.add_argument("--seed", type=int)
    common(c, output_required=True)

    g = sub.add_parser("grpo-step", help="GRPO loss and diagnostics per group of recorded samples")
    g.add_argument("samples")
    for f in fields(grpo.GrpoConfig):
        g.add_argument("--" + f.name.replace("_", "-"), type=type(f.default), dest=f.name)
    common(g)

    cs = sub.add_parser("coord-sim", help="run the generation-coordination simulator")
    for f in fields(coordinator.SimConfig):
        if f.name == "fail_rounds":
            cs.add_argument("--fail-rounds", type=lambda x: coordinator._int_tuple(x), dest="fail_rounds")
        else:
            cs.add_argument("--" + f.name.replace("_", "-"), type=type(f.default), dest=f.name)
    common(cs)
    return p


COMMANDS = {
    "validate": cmd_validate,
    "score": cmd_score,
    "curate": cmd_curate,
    "grpo-step": cmd_grpo_step,
    "coord-sim": cmd_coord_sim,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.show_config:
        print(json.dumps(default_config(), indent=2))
        return EXIT_OK
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_INPUT
    try:
        cfg = _load_config(getattr(args, "config", None)) if args.command != "coord-sim" else {}
        return COMMANDS[args.command](args, cfg)
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except TrajRewardError as exc:
        log.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
