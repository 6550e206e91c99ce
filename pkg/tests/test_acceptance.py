"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line; the lines are printed in the pytest
terminal summary and when this file is run directly.
"""

import itertools
import math
import random
import time

import numpy as np
import pytest
from scipy import stats

import oracles
from trajreward.coordinator import SimConfig, audit_trace, run_simulation
from trajreward.curation import MixSpec, apportion, sample_mix
from trajreward.errors import InvalidTrajectory, MalformedTag
from trajreward.grpo import GroupSample, clamped_ratio, group_advantages, grpo_group_loss
from trajreward.io import read_container
from trajreward.overthinking import (
    CurationPlan,
    curate_with_report,
    filler_score,
    novelty_deficit_score,
    overthinking_score,
    repetition_score,
    segment_reasoning,
)
from trajreward.rewards import lambda_schedule, rule_based_hrm
from trajreward.structural import presence_bonus, step_position_score
from trajreward.synth import fuzz_segment, fuzz_trajectory, verbose_trajectory
from trajreward.trajectory import Outcome, StepRecord, Trajectory, make_trajectory, serialize_trajectory

RESULTS: list[str] = []

# published per-tag constants
TAG_TABLE = {"<thought>": 0.8, "<action>": 0.6, "<action_input>": 0.4, "</step>": 0.2, "<stop_analysis>": 0.6}


def record(num, name, ok, detail):
    RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {name} ({detail})")
    assert ok, detail


def _filler_text(rng, n):
    alphabet = "abc xyz <>/\n\té"
    return "".join(rng.choice(alphabet) for _ in range(n)).replace("<step>", "")


def test_c1_structural_fidelity():
    rng = random.Random(1)
    t0 = time.perf_counter()
    worst, absent_bad, presence_bad = 0.0, 0, 0
    for i in range(500):
        pre, post = _filler_text(rng, rng.randint(0, 80)), _filler_text(rng, rng.randint(0, 80))
        if i % 5 == 0:
            text = pre + post or "x"
            absent_bad += step_position_score(text) != 0.0
            absent_bad += presence_bonus(text) != 0.0
            continue
        text = pre + "<step>" + post
        offset, length = len(pre.encode()), len(text.encode())
        worst = max(worst, abs(step_position_score(text) - (1 - offset / length)))
        tags = [t for t in TAG_TABLE if rng.random() < 0.5]
        tagged = " ".join([pre, *tags, post])
        presence_bad += presence_bonus(tagged) != math.fsum(TAG_TABLE[t] for t in tags)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and absent_bad == 0 and presence_bad == 0 and elapsed < 1.0
    record(1, "structural reward fidelity", ok,
           f"max err {worst:.1e}, absent mismatches {absent_bad}, presence mismatches {presence_bad}, {elapsed:.2f}s")


def test_c2_schedule_exactness():
    worst, monotone = 0.0, True
    for total in (2, 10, 1000):
        for step, (tag, hrm) in ((0, (1, 0)), (total // 2, (0.5, 0.5)), (total, (0, 1))):
            lp = lambda_schedule(step, total)
            worst = max(worst, abs(lp.lambda_tag - tag), abs(lp.lambda_hrm - hrm))
        sweep = [lambda_schedule(s, total).lambda_tag for s in range(total + 1)]
        monotone &= all(a >= b for a, b in zip(sweep, sweep[1:]))
    record(2, "lambda schedule exactness", worst <= 1e-12 and monotone, f"max err {worst:.1e}, monotone {monotone}")


def _expected_signs(outcomes):
    steps = [{Outcome.OK: 1, Outcome.ERROR: -1, Outcome.NO_EXECUTION: 0}[o] for o in outcomes]
    # ending in an error is negative; error-free and corrected runs are positive
    return steps, -1 if outcomes[-1] is Outcome.ERROR else 1


def _sign(x):
    return (x > 0) - (x < 0)


def test_c3_hrm_sign_law():
    t0 = time.perf_counter()
    cases = bad = 0
    for n in range(1, 7):
        for combo in itertools.product(list(Outcome), repeat=n):
            v = rule_based_hrm(make_trajectory(combo))
            steps, traj = _expected_signs(combo)
            cases += 1
            partial = Outcome.ERROR in combo and combo[-1] is not Outcome.ERROR
            ok = [_sign(x) for x in v.step_rewards] == steps and _sign(v.trajectory_reward) == traj
            ok &= (0 < v.trajectory_reward < 1) if partial else abs(v.trajectory_reward) == 1
            bad += not ok
    elapsed = time.perf_counter() - t0
    record(3, "HRM sign law", bad == 0 and elapsed < 1.0, f"{cases} cases, {bad} mismatches, {elapsed:.2f}s")


def test_c4_parser_roundtrip(golden_path):
    total = failures = 0
    modes = set()
    for rec in read_container(golden_path):
        total += 1
        modes.add(rec.mode)
        try:
            failures += serialize_trajectory(rec.parse()) != rec.raw_text
        except (MalformedTag, InvalidTrajectory):
            failures += 1
    record(4, "parser round-trip", total == 1000 and failures == 0 and len(modes) == 2,
           f"{total} records, {failures} failures, modes {sorted(m.value for m in modes)}")


def test_c5_grpo_oracle():
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    worst_rel, ratio_ok, adv_worst = 0.0, True, 0.0
    for _ in range(200):
        g = int(rng.integers(2, 9))
        spec = []
        for _ in range(g):
            n = int(rng.integers(1, 17))
            pol, old, ref = (-rng.exponential(1.5, n) for _ in range(3))
            if rng.random() < 0.2:
                old = old - 6.0  # force clamp hits
            spec.append((pol.tolist(), old.tolist(), ref.tolist(), float(rng.normal())))
        samples = [GroupSample(list(range(len(p))), p, o, r, w) for p, o, r, w in spec]
        loss, _ = grpo_group_loss(samples)
        ref_loss = oracles.straight_line_grpo(spec)
        worst_rel = max(worst_rel, abs(loss - ref_loss) / max(abs(ref_loss), 1e-300))
        for p, o, _, _ in spec:
            r = clamped_ratio(np.array(p), np.array(o))
            ratio_ok &= bool(np.all((r >= math.exp(-4)) & (r <= math.exp(4))))
        adv_worst = max(adv_worst, abs(float(np.mean(group_advantages([s[3] for s in spec])))))
    elapsed = time.perf_counter() - t0
    ok = worst_rel <= 1e-9 and ratio_ok and adv_worst < 1e-9 and elapsed < 5.0
    record(5, "GRPO kernel oracle equivalence", ok,
           f"max rel err {worst_rel:.1e}, ratios bounded {ratio_ok}, |mean adv| {adv_worst:.1e}, {elapsed:.2f}s")


def test_c6_curation_quotas():
    specs = {"stratification": [0.40, 0.35, 0.15, 0.10], "sft": [0.60, 0.20, 0.20]}
    bad = []
    for name, fracs in specs.items():
        keys = [f"{name}{i}" for i in range(len(fracs))]
        spec = MixSpec(dict(zip(keys, fracs)), seed=6)
        for n in (3, 100, 144000):
            want = oracles.largest_remainder(fracs, n)
            if list(apportion(spec.fractions, n).values()) != want:
                bad.append(f"{name} n={n} quotas")
            pools = {k: [(k, i) for i in range(q + 5)] for k, q in zip(keys, want)}
            drawn = sample_mix(pools, spec, n)
            got = [sum(1 for k, _ in drawn if k == key) for key in keys]
            if got != want:
                bad.append(f"{name} n={n} sample {got} != {want}")
    rnd = random.Random(6)
    for n in (10, 11, 37, 100, 333, 1000):
        size = n + rnd.randint(n, 3 * n)
        pool = [(Trajectory(steps=(StepRecord(1, f"t {i}"),), problem_id=f"p{i}"), rnd.random()) for i in range(size)]
        out, rows = curate_with_report(pool, CurationPlan(sample_size=n, seed=n))
        low = {r.problem_id for r in rows if r.pool == "low"}
        if sum(t.problem_id in low for t in out) != math.ceil(0.9 * n):
            bad.append(f"90/10 n={n}")
    record(6, "curation quotas", not bad, "all exact" if not bad else "; ".join(bad))


def test_c7_overthinking_bounds():
    rng = random.Random(7)
    out_of_range = 0
    for i in range(10_000):
        t = fuzz_trajectory(rng, i)
        segs = segment_reasoning(t)
        vals = (repetition_score(segs), filler_score(segs), novelty_deficit_score(segs), overthinking_score(t).composite)
        out_of_range += not all(0.0 <= v <= 1.0 for v in vals)
    worst = 0.0
    for _ in range(100):
        segs = [fuzz_segment(rng) for _ in range(rng.randint(1, 8))]
        if rng.random() < 0.5 and len(segs) > 1:
            segs[-1] = segs[0]  # guarantee some overlap
        worst = max(worst, abs(repetition_score(segs) - oracles.brute_repetition(segs)))
    record(7, "overthinking boundedness and oracle", out_of_range == 0 and worst <= 1e-9,
           f"10000 fuzzed, {out_of_range} out of range, oracle max err {worst:.1e}")


def test_c8_coordinator_properties():
    rng = random.Random(8)
    t0 = time.perf_counter()
    violations = nondeterministic = 0
    for i in range(1000):
        cfg = SimConfig(
            ranks=rng.randint(1, 8), rounds=rng.randint(0, 20), batch_size=rng.randint(0, 6),
            skip_rate=rng.random(), swap_every=rng.randint(0, 4), swap_mode=rng.choice(["boundary", "mid_round"]),
            swap_policy=rng.choice(["defer", "drain"]),
            fail_rounds=tuple(r for r in range(20) if rng.random() < 0.05), seed=i,
        )
        trace = run_simulation(cfg)
        violations += bool(audit_trace(trace, cfg.ranks))
        if i % 10 == 0:
            nondeterministic += trace != run_simulation(cfg)
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and nondeterministic == 0 and elapsed < 30.0
    record(8, "coordinator protocol properties", ok,
           f"1000 sims, {violations} with violations, {nondeterministic} nondeterministic, {elapsed:.1f}s")


def _length(t):
    return sum(len(s.thought.split()) for s in t.steps)


def test_c9_filter_direction():
    diffs, corrs = [], []
    for seed in range(50):
        rng = random.Random(seed)
        pool_t = [verbose_trajectory(rng, rng.random(), i) for i in range(400)]
        scores = [overthinking_score(t).composite for t in pool_t]
        lengths = np.array([_length(t) for t in pool_t], dtype=float)
        corrs.append(float(np.corrcoef(scores, lengths)[0, 1]))
        curated = curate_with_report(list(zip(pool_t, scores)), CurationPlan(sample_size=100, seed=seed))[0]
        uniform = random.Random(10_000 + seed).sample(pool_t, 100)
        diffs.append(np.mean([_length(t) for t in uniform]) - np.mean([_length(t) for t in curated]))
    p = stats.ttest_1samp(diffs, 0.0, alternative="greater").pvalue
    ok = min(corrs) >= 0.5 and p < 0.01
    record(9, "filtering direction", ok,
           f"min corr {min(corrs):.2f}, mean length cut {np.mean(diffs):.1f} words, one-sided p {p:.1e}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
