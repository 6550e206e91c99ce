"""Does overthinking curation shorten the kept traces?

Builds pools where verbosity drives both length and redundancy, curates
with the 90/10 rule and compares mean reasoning length against a uniform
sample of the same size.

    python3 scripts/filter_direction.py --seeds 50 --pool 400 -n 100
"""

import argparse
import random
import statistics

import numpy as np
from scipy import stats

from trajreward.overthinking import CurationPlan, curate_by_overthinking, overthinking_score
from trajreward.synth import verbose_trajectory


def length(t):
    return sum(len(s.thought.split()) for s in t.steps)


def one_seed(seed, pool_size, n, low_fraction):
    rng = random.Random(seed)
    pool = [verbose_trajectory(rng, rng.random(), i) for i in range(pool_size)]
    scores = [overthinking_score(t).composite for t in pool]
    lengths = [length(t) for t in pool]
    plan = CurationPlan(sample_size=n, seed=seed, low_pool_fraction=low_fraction)
    curated = curate_by_overthinking(list(zip(pool, scores)), plan)
    uniform = random.Random(10_000 + seed).sample(pool, n)
    return (
        float(np.corrcoef(scores, lengths)[0, 1]),
        statistics.fmean(length(t) for t in curated),
        statistics.fmean(length(t) for t in uniform),
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--pool", type=int, default=400)
    ap.add_argument("-n", type=int, default=100)
    ap.add_argument("--low-fraction", type=float, default=0.9)
    args = ap.parse_args()

    rows = [one_seed(s, args.pool, args.n, args.low_fraction) for s in range(args.seeds)]
    corr, cur, uni = map(np.array, zip(*rows))
    res = stats.ttest_rel(uni, cur, alternative="greater")
    print(f"score/length correlation: min {corr.min():.3f}  mean {corr.mean():.3f}")
    print(f"mean length  uniform {uni.mean():.2f}  curated {cur.mean():.2f}  "
          f"reduction {100 * (1 - cur.mean() / uni.mean()):.1f}%")
    print(f"paired one-sided t = {res.statistic:.2f}, p = {res.pvalue:.2e}")


if __name__ == "__main__":
    main()
