"""Regenerate the golden trajectory corpus and its category manifest.

    python scripts/make_golden_corpus.py [--n 1000] [--seed 20240814] [--out tests/data]

The manifest records the category each record was *built* to have, so
``trajreward validate`` counts can be checked against construction rather
than against the classifier itself.
"""

import argparse
import collections
import json
from pathlib import Path

from trajreward.io import ContainerRecord, write_atomic, write_jsonl
from trajreward.synth import golden_corpus


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20240814)
    ap.add_argument("--out", default="tests/data")
    args = ap.parse_args()

    out = Path(args.out)
    recs = golden_corpus(args.n, args.seed)
    write_jsonl(
        out / "golden.jsonl",
        [ContainerRecord(r.problem_id, r.mode, r.raw_text, {"intended": r.category}).to_json() for r in recs],
    )
    counts = collections.Counter(r.category for r in recs)
    manifest = {
        "records": len(recs),
        "seed": args.seed,
        "categories": {c: counts.get(c, 0) for c in
                       ["success", "error_correction", "self_correction", "persistent_failure"]},
        "modes": dict(collections.Counter(r.mode.value for r in recs)),
    }
    write_atomic(out / "golden_manifest.json", json.dumps(manifest, indent=2) + "\n")
    print(json.dumps(manifest))


if __name__ == "__main__":
    main()
