#!/usr/bin/env python3
"""Freeze Ratcliff-Obershelp reference values from Python's difflib.

    python3 scripts/difflib_oracle.py [out_file]

SequenceMatcher runs with autojunk=False so every character takes part in
matching. Each line holds a, b, the matched character total and the ratio
2*M/(len(a)+len(b)), with 1.0 when both strings are empty.
"""

import json
import random
import sys
from difflib import SequenceMatcher
from pathlib import Path

SEED = 1931
PHRASES = [
    "axial view of the chest", "chest x-ray", "computed tomography", "magnetic resonance imaging",
    "left lower lobe", "right lung", "the liver", "liver", "ultrasound", "contrast-enhanced ct",
    "coronal view", "sagittal view", "fracture of the femur", "normal finding", "b", "a: liver",
]


def matched(a, b):
    return sum(block.size for block in SequenceMatcher(None, a, b, autojunk=False).get_matching_blocks())


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/similarity/difflib.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)
    cases = [("", ""), ("", "abc"), ("abcd", "bcde"), ("dcdb", "acbd"), ("acbd", "dcdb")]
    for _ in range(1500):
        alphabet = rng.choice(["ab", "abcd", "abcdefgh ", "aab"])
        cases.append(tuple(
            "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 24))) for _ in range(2)
        ))
    for a in PHRASES:
        for b in PHRASES:
            cases.append((a, b))
    with open(out, "w") as f:
        for a, b in cases:
            m = matched(a, b)
            total = len(a) + len(b)
            ratio = 1.0 if total == 0 else 2.0 * m / total
            f.write(json.dumps({"a": a, "b": b, "matched": m, "ratio": ratio}, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
