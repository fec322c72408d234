#!/usr/bin/env python3
"""Verdict-log fixture and its brute-force resolution.

    python3 scripts/review_oracle.py [out_dir]

Writes candidates.json (pair ids), verdicts.jsonl and expected.json.
Resolution rule: for each pair take every annotator's last verdict in log
order; the pair is accepted when more than half of those accept, so a tie
rejects. The exported answerability label uses the same vote over
question_image_answerable, with a tie giving 0.
"""

import json
import random
import sys
from pathlib import Path

SEED = 88
PAIRS = [f"pair{n:02d}" for n in range(40)]
ANNOTATORS = ["ana", "ben", "chen", "dara"]


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/review")
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)
    log = []
    ts = 1_700_000_000_000
    # The last eight pairs never receive a verdict.
    for _ in range(140):
        pair = rng.choice(PAIRS[:32])
        criteria = {
            "question_image_answerable": rng.random() < 0.8,
            "distractors_adequate": rng.random() < 0.85,
            "image_quality_ok": rng.random() < 0.9,
        }
        ts += rng.randint(1, 5000)
        log.append({
            "pair_id": pair,
            "annotator": rng.choice(ANNOTATORS),
            "criteria": criteria,
            "accept": all(criteria.values()),
            "timestamp_ms": ts,
        })

    resolved, labels = {}, {}
    for pair in PAIRS:
        latest = {}
        for position, v in enumerate(log):
            if v["pair_id"] == pair:
                latest[v["annotator"]] = position
        if not latest:
            continue
        votes = [log[p] for p in latest.values()]
        resolved[pair] = sum(v["accept"] for v in votes) * 2 > len(votes)
        answerable = sum(v["criteria"]["question_image_answerable"] for v in votes)
        labels[pair] = 1 if answerable * 2 > len(votes) else 0

    accepted = sorted(p for p, ok in resolved.items() if ok)
    expected = {
        "resolved": resolved,
        "labels": [{"pair_id": p, "label": labels[p]} for p in sorted(labels)],
        "accepted": accepted,
        "unresolved": [p for p in PAIRS if p not in resolved],
        "progress": {
            "total": len(PAIRS),
            "resolved": len(resolved),
            "accepted": len(accepted),
            "retention_rate": len(accepted) / len(resolved),
        },
    }
    (out / "candidates.json").write_text(json.dumps(PAIRS) + "\n")
    with open(out / "verdicts.jsonl", "w") as f:
        for v in log:
            f.write(json.dumps(v, sort_keys=True) + "\n")
    (out / "expected.json").write_text(json.dumps(expected, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
