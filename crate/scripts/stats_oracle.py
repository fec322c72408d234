#!/usr/bin/env python3
"""Stats fixture and an independent recount.

    python3 scripts/stats_oracle.py [out_dir]

Writes pairs.jsonl ({record_id, question, options, answer}) and
expected.json with the leading-word prefix tree (depth 4), question and
answer word-count histograms in percent, answer-letter balance, image count
and pairs per image.

Tokens for the prefix tree are whitespace-split words, lower-cased, with
leading and trailing non-alphanumerics stripped; empty results are skipped.
A word counts toward length when it holds at least one alphanumeric.
Children are ordered by count descending, then token.
"""

import json
import random
import sys
from collections import Counter
from pathlib import Path

SEED = 4242
COUNT = 1000
DEPTH = 4
OPENERS = [
    "What is", "What type of", "Which", "Where is the", "How many", "What does the",
    "what IS", "Is there", "- What", "Describe the", "What", "Which of the following",
]
REST = [
    "shown in the image?", "lesion visible?", "imaging modality was used?", "arrow indicate?",
    "organ is enlarged?", "abnormality in the left lung?", "", "(x-ray) finding ?",
]
OPTIONS = [
    "Liver", "Spleen", "Left kidney", "Computed tomography", "Magnetic resonance imaging",
    "A round mass in the upper lobe", "Normal", "Fracture of the distal radius", "Edema", "-",
]


def tokens(text):
    out = []
    for word in text.split():
        start, end = 0, len(word)
        while start < end and not word[start].isalnum():
            start += 1
        while end > start and not word[end - 1].isalnum():
            end -= 1
        if start < end:
            out.append(word[start:end].lower())
    return out


def word_count(text):
    return sum(1 for w in text.split() if any(c.isalnum() for c in w))


def prefix_tree(questions):
    # Count every prefix of length 1..DEPTH and every exact stopping point.
    counts, terminals = Counter(), Counter()
    for q in questions:
        toks = tokens(q)[:DEPTH]
        for k in range(len(toks) + 1):
            counts[tuple(toks[:k])] += 1
        terminals[tuple(toks)] += 1

    def node(prefix):
        kids = [p for p in counts if len(p) == len(prefix) + 1 and p[: len(prefix)] == prefix]
        kids.sort(key=lambda p: (-counts[p], p[-1]))
        return {
            "token": prefix[-1] if prefix else "",
            "count": counts[prefix],
            "terminal": terminals[prefix],
            "children": [node(k) for k in kids],
        }

    return {"depth": DEPTH, "root": node(())}


def histogram(lengths):
    c = Counter(lengths)
    return {str(k): 100.0 * v / len(lengths) for k, v in sorted(c.items())}


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/stats")
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)
    pairs = []
    for n in range(COUNT):
        question = f"{rng.choice(OPENERS)} {rng.choice(REST)}".strip()
        options = rng.sample([o for o in OPTIONS if o != "-"], 4)
        if rng.random() < 0.05:
            options[rng.randrange(4)] = "A - B"
        pairs.append({
            "record_id": f"img{rng.randrange(260):03d}",
            "question": question,
            "options": options,
            "answer": rng.choices("ABCD", weights=[24, 31, 29, 16])[0],
        })
    answers = [p["options"]["ABCD".index(p["answer"])] for p in pairs]
    letters = Counter(p["answer"] for p in pairs)
    images = {p["record_id"] for p in pairs}
    expected = {
        "prefix_tree": prefix_tree([p["question"] for p in pairs]),
        "question_length_histogram": histogram([word_count(p["question"]) for p in pairs]),
        "answer_length_histogram": histogram([word_count(a) for a in answers]),
        "option_balance": {k: letters[k] / len(pairs) for k in "ABCD"},
        "image_count": len(images),
        "pairs_per_image": len(pairs) / len(images),
    }
    with open(out / "pairs.jsonl", "w") as f:
        for p in pairs:
            f.write(json.dumps(p, sort_keys=True) + "\n")
    (out / "expected.json").write_text(json.dumps(expected, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
