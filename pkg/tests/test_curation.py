import pytest
from hypothesis import given, strategies as st

import oracles
from trajreward.curation import (
    SFT_MIX,
    STRATIFICATION_MIX,
    MixSpec,
    SftSource,
    TrajectoryCategory as C,
    apportion,
    build_preference_pairs,
    categorize,
    sample_mix,
    sft_source,
    stratify,
)
from trajreward.errors import PoolShortfall, Unclassifiable
from trajreward.io import read_container
from trajreward.trajectory import Mode, Outcome, StepRecord, Trajectory, make_trajectory


def test_success():
    assert categorize(make_trajectory(["ok", "ok", "ok"], answer="a")) is C.SUCCESS


def test_error_correction():
    t = make_trajectory(["ok", "error", "ok", "ok", "ok"], answer="a")
    assert categorize(t) is C.ERROR_CORRECTION


def test_persistent_failure():
    assert categorize(make_trajectory(["ok", "error", "error", "error"])) is C.PERSISTENT_FAILURE


def test_self_correction():
    thoughts = ["compute mean", "I made a mistake: the mean should be weighted", "done"]
    t = make_trajectory(["ok", "ok", "ok"], answer="a", thoughts=thoughts)
    assert categorize(t) is C.SELF_CORRECTION


def test_marker_after_error_is_error_correction():
    thoughts = ["compute", "correcting the key name", "done"]
    t = make_trajectory(["error", "ok", "ok"], thoughts=thoughts)
    assert categorize(t) is C.ERROR_CORRECTION


def test_reflection_success():
    t = Trajectory(mode=Mode.REFLECTION, thoughts=("x",), answer="4")
    assert categorize(t) is C.SUCCESS
    assert sft_source(t, C.SUCCESS) is SftSource.EXTERNAL_REASONING


def test_unclassifiable():
    with pytest.raises(Unclassifiable):
        categorize(make_trajectory(["ok", "no_execution"]))


@given(st.lists(st.sampled_from(list(Outcome)), min_size=1, max_size=6), st.booleans())
def test_partition(outcomes, has_answer):
    t = make_trajectory(outcomes, answer="a" if has_answer else None)
    try:
        cats = [categorize(t)]
    except Unclassifiable:
        return
    assert len(cats) == 1 and cats[0] in set(C)


def test_golden_counts_match_manifest(golden_path, golden_manifest):
    trajs = [r.parse() for r in read_container(golden_path)]
    _, report = stratify(trajs)
    assert report.counts == golden_manifest["categories"]
    assert report.unclassifiable == 0


# -- apportionment and mix sampling -------------------------------------------


STRAT = [0.40, 0.35, 0.15, 0.10]
SFT = [0.60, 0.20, 0.20]


@pytest.mark.parametrize(
    "fracs, n, expected",
    [
        (STRAT, 100, [40, 35, 15, 10]),
        (STRAT, 144000, [57600, 50400, 21600, 14400]),
        (SFT, 3, [2, 1, 0]),
        (SFT, 100, [60, 20, 20]),
    ],
)
def test_apportion_examples(fracs, n, expected):
    assert oracles.largest_remainder(fracs, n) == expected
    got = apportion(dict(zip("abcd", fracs)), n)
    assert list(got.values()) == expected


@given(st.integers(1, 10**6), st.sampled_from([STRAT, SFT, [0.5, 0.5], [1 / 3, 1 / 3, 1 / 3]]))
def test_quotas_sum_to_n(n, fracs):
    q = apportion(dict(zip("abcd", fracs)), n)
    assert sum(q.values()) == n
    for k, f in zip("abcd", fracs):
        assert abs(q[k] - f * n) < 1


def test_mix_spec_validation():
    with pytest.raises(ValueError):
        MixSpec({"a": 0.5, "b": 0.6})
    with pytest.raises(ValueError):
        MixSpec({"a": -0.5, "b": 1.5})


def pools_for(spec, sizes):
    return {k: [f"{getattr(k, 'value', k)}-{i}" for i in range(n)] for k, n in zip(spec.fractions, sizes)}


def test_sample_mix_exact_pools():
    pools = pools_for(STRATIFICATION_MIX, [40, 35, 15, 10])
    out = sample_mix(pools, STRATIFICATION_MIX, 100)
    assert sorted(out) == sorted(x for v in pools.values() for x in v)


def test_sample_mix_deterministic_and_seeded():
    pools = pools_for(SFT_MIX, [100, 100, 100])
    a = sample_mix(pools, MixSpec(SFT_MIX.fractions, seed=3), 50)
    b = sample_mix(pools, MixSpec(SFT_MIX.fractions, seed=3), 50)
    c = sample_mix(pools, MixSpec(SFT_MIX.fractions, seed=4), 50)
    assert a == b and a != c
    assert sum(x.startswith("error_free") for x in a) == 30


def test_shortfall_names_category():
    pools = pools_for(STRATIFICATION_MIX, [40, 35, 14, 10])
    with pytest.raises(PoolShortfall) as exc:
        sample_mix(pools, STRATIFICATION_MIX, 100)
    assert exc.value.category == "self_correction"
    assert (exc.value.needed, exc.value.available) == (15, 14)


# -- preference pairs -----------------------------------------------------------


def test_one_success_one_failure():
    pool = [make_trajectory(["ok"], answer="a", problem_id="x"), make_trajectory(["error"], problem_id="x")]
    pairs = build_preference_pairs(pool)
    assert len(pairs) == 1 and pairs[0].problem_id == "x"


def test_only_successes():
    pool = [make_trajectory(["ok"], answer="a", problem_id="x")] * 2
    assert build_preference_pairs(pool) == []


def test_selection_rule():
    f2 = make_trajectory(["error", "ok", "error"], problem_id="x")
    f4 = make_trajectory(["error", "error", "error", "error"], problem_id="x")
    s3 = make_trajectory(["ok"] * 3, answer="a", problem_id="x")
    s5 = make_trajectory(["ok"] * 5, answer="a", problem_id="x")
    (pair,) = build_preference_pairs([f2, s5, f4, s3])
    assert pair.rejected is f4 and pair.preferred is s3


@given(st.lists(st.tuples(st.sampled_from("abc"), st.lists(st.sampled_from(list(Outcome)), min_size=1, max_size=5),
                          st.booleans()), max_size=20))
def test_pairs_valid(spec):
    pool = [make_trajectory(o, problem_id=p, answer="a" if ans else None) for p, o, ans in spec]
    for pair in build_preference_pairs(pool):
        assert pair.rejected.problem_id == pair.preferred.problem_id == pair.problem_id
        assert categorize(pair.rejected) is C.PERSISTENT_FAILURE and pair.rejected.ends_in_error
        assert categorize(pair.preferred) is not C.PERSISTENT_FAILURE
        assert not pair.preferred.ends_in_error
