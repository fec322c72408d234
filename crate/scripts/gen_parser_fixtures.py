#!/usr/bin/env python3
"""Write the parser fixture corpus and its expected parses.

Each generation is assembled from known blocks, so the expected pairs and
issue kinds follow from how the text was built, not from running the parser.

    python3 scripts/gen_parser_fixtures.py [out_dir]

Writes generations.jsonl and expected.jsonl (default
crates/core/tests/fixtures/parser).
"""

import json
import random
import sys
from pathlib import Path

SEED = 20230517
COUNT = 200

SUBJECTS = [
    "liver", "spleen", "left kidney", "aortic arch", "right lung", "femoral head",
    "thyroid nodule", "pancreatic duct", "bladder wall", "cardiac silhouette",
]
QUESTIONS = [
    "What is shown in the {} image?",
    "Which structure is highlighted near the {}?",
    "What type of imaging was used to visualize the {}?",
    "Where is the abnormality relative to the {}?",
    "What finding is visible in the {} region?",
]
OPTIONS = [
    "Liver", "Spleen", "Kidney", "Pancreas", "Left lung", "Right lung", "Heart",
    "Aorta", "Femur", "Brain", "Thyroid", "Bladder", "Computed tomography",
    "Magnetic resonance", "Ultrasound", "Radiograph", "Histology", "Axial view",
    "Coronal view", "Sagittal view", "Normal finding", "Fracture", "Edema",
]
LETTERS = "ABCD"
REFUSALS = [
    "I'm sorry, but the caption does not contain enough information to ask more questions.",
    "As an AI language model, I cannot generate more questions from this caption.",
    "Sorry, I am unable to create further questions.",
]


def make_block(rng, index):
    question = rng.choice(QUESTIONS).format(rng.choice(SUBJECTS))
    options = rng.sample(OPTIONS, 4)
    answer = rng.choice(LETTERS)
    return {"question_index": index, "question": question, "options": options, "answer": answer}


def render(block, style):
    i, q, (a, b, c, d), ans = block["question_index"], block["question"], block["options"], block["answer"]
    if style == "compact":
        return f"i:{i} question:{q} choice: A:{a} B:{b} C:{c} D:{d} answer:{ans}"
    if style == "multiline":
        return (
            f"I:{i}\nQuestion: {q}\nChoice:\nA: {a}\nB: {b}\nC: {c}\nD: {d}\n"
            f"Answer: The correct option is {ans}"
        )
    if style == "quoted":
        return f"i:`{i}' question:`{q}' choice: `A:{a} B:{b} C:{c} D:{d}' answer: {ans}"
    if style == "spaced":
        return f"i : {i}\n\nquestion :  {q}\nchoices :\n  A : {a}\n  B : {b}\n  C : {c}\n  D : {d}\nanswer : ({ans})"
    raise ValueError(style)


STYLES = ["compact", "multiline", "quoted", "spaced"]


def wellformed(rng):
    n = rng.randint(1, 5)
    blocks = [make_block(rng, k + 1) for k in range(n)]
    style = rng.choice(STYLES)
    text = "\n".join(render(b, style) for b in blocks) + "\n"
    return text, blocks, []


def truncated(rng):
    k = rng.randint(0, 4)
    blocks = [make_block(rng, j + 1) for j in range(k)]
    last = make_block(rng, k + 1)
    full = render(last, "compact")
    cut = rng.choice(["question", "before_answer", "no_d", "bad_letter", "empty_option"])
    a, b, c, d = last["options"]
    q = last["question"]
    if cut == "question":
        tail, kind = f"i:{k + 1} question:{q[: rng.randint(3, len(q) - 1)]}", "missing_field"
    elif cut == "before_answer":
        tail, kind = full[: full.index(" answer:")], "missing_field"
    elif cut == "no_d":
        tail, kind = f"i:{k + 1} question:{q} choice: A:{a} B:{b} C:{c} answer:{last['answer']}", "missing_option"
    elif cut == "bad_letter":
        tail, kind = f"i:{k + 1} question:{q} choice: A:{a} B:{b} C:{c} D:{d} answer: not sure", "bad_answer_letter"
    else:
        tail, kind = f"i:{k + 1} question:{q} choice: A:{a} B: C:{c} D:{d} answer:{last['answer']}", "missing_option"
    text = "\n".join([render(b, "compact") for b in blocks] + [tail])
    return text, blocks, [kind]


def duplicate(rng):
    kind = rng.choice(["repeat_index", "excess", "same_options"])
    n = rng.randint(2, 4 if kind == "repeat_index" else 5)
    blocks = [make_block(rng, k + 1) for k in range(n)]
    rendered = [render(b, "compact") for b in blocks]
    if kind == "repeat_index":
        # The model repeats an earlier block verbatim, index included.
        rendered.insert(rng.randint(1, n), rendered[rng.randrange(n)])
        issues = ["duplicate_block"]
    elif kind == "excess":
        extra = [make_block(rng, n + j + 1) for j in range(6 - n + rng.randint(0, 1))]
        rendered += [render(b, "compact") for b in extra]
        issues = ["excess_block"] * (len(rendered) - 5)
        blocks = (blocks + extra)[:5]
    else:
        target = rng.randrange(n)
        opts = blocks[target]["options"]
        i, j = rng.sample(range(4), 2)
        opts[j] = opts[i].upper() if rng.random() < 0.5 else opts[i]
        rendered[target] = render(blocks[target], "compact")
        issues = ["duplicate_options"]
    return "\n".join(rendered) + "\n", blocks, issues


def refusal(rng):
    k = rng.randint(0, 4)
    blocks = [make_block(rng, j + 1) for j in range(k)]
    text = "\n".join([render(b, "compact") for b in blocks] + [rng.choice(REFUSALS)]) + "\n"
    return text, blocks, ["refusal_text"]


def empty(rng):
    return rng.choice(["", "   \n", "Here are some questions about the image."]), [], ["no_blocks"]


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/parser")
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)
    makers = [wellformed] * 3 + [truncated] * 2 + [duplicate] * 2 + [refusal] * 2 + [empty]
    generations, expected = [], []
    for n in range(COUNT):
        record_id = f"gen{n:03d}"
        maker = makers[n % len(makers)]
        text, pairs, issues = maker(rng)
        generations.append({
            "record_id": record_id,
            "backend_id": "fixture",
            "response_text": text,
            "request_fingerprint": "",
            "retries": 0,
            "failure": None,
        })
        expected.append({
            "record_id": record_id,
            "category": maker.__name__,
            "pairs": pairs,
            "issue_kinds": sorted(issues),
        })
    with open(out / "generations.jsonl", "w") as f:
        for g in generations:
            f.write(json.dumps(g, sort_keys=True) + "\n")
    with open(out / "expected.jsonl", "w") as f:
        for e in expected:
            f.write(json.dumps(e, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
