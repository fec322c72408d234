#!/usr/bin/env python3
"""Standalone reimplementation of the classifier's hashed features.

    python3 scripts/feature_hash.py buckets [out_file]
    python3 scripts/feature_hash.py score MODEL PAIRS [out_file]

`buckets` writes the feature strings, bucket indices, signs and normalised
vectors for a few fixed sentences. `score` reads a model file and QA pairs
(JSON Lines) and writes each pair's keep probability and the kept ids.

Features: tokens are whitespace-split words, lower-cased, with leading and
trailing non-alphanumerics stripped. `q:` unigrams then bigrams of the
question, then `o:` unigrams and bigrams of each option. Each string is
hashed with 64-bit FNV-1a; the low `bits` bits give the bucket, the top
bit the sign. Signed counts are summed per bucket, zeros dropped, and the
vector scaled to unit length.
"""

import base64
import json
import math
import struct
import sys
from pathlib import Path

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1

SENTENCES = [
    {"question": "What imaging modality was used to acquire this image?",
     "options": ["Computed tomography", "Magnetic resonance", "Ultrasound", "Radiograph"]},
    {"question": "Which organ shows the (enlarged) X-ray opacity?",
     "options": ["Liver", "Spleen", "Left kidney", "Heart"]},
    {"question": "How many lesions were reported in the 2 patients?",
     "options": ["One", "Two", "Three", "Four"]},
]


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def bucket(feature: str, bits: int):
    h = fnv1a64(feature.encode("utf-8"))
    return h & ((1 << bits) - 1), (-1.0 if h >> 63 else 1.0)


def tokens(text: str):
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


def feature_strings(question, options, include_options=True):
    out = []

    def ngrams(prefix, text):
        toks = tokens(text)
        out.extend(f"{prefix}:{t}" for t in toks)
        out.extend(f"{prefix}:{a} {b}" for a, b in zip(toks, toks[1:]))

    ngrams("q", question)
    if include_options:
        for opt in options:
            ngrams("o", opt)
    return out


def featurize(question, options, bits, include_options=True):
    acc = {}
    for f in feature_strings(question, options, include_options):
        index, sign = bucket(f, bits)
        acc[index] = acc.get(index, 0.0) + sign
    entries = sorted((i, v) for i, v in acc.items() if v != 0.0)
    total = 0.0
    for _, v in entries:
        total += v * v
    norm = math.sqrt(total)
    if norm > 0.0:
        entries = [(i, v / norm) for i, v in entries]
    return entries


def sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def cmd_buckets(out):
    rows = []
    for s in SENTENCES:
        strings = feature_strings(s["question"], s["options"])
        rows.append({
            "question": s["question"],
            "options": s["options"],
            "features": [[f, *bucket(f, 18)] for f in strings],
            "vector": featurize(s["question"], s["options"], 18),
        })
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")


def cmd_score(model_path, pairs_path, out):
    model = json.loads(Path(model_path).read_text())
    raw = base64.b64decode(model["weights_f64le_base64"])
    weights = struct.unpack(f"<{len(raw) // 8}d", raw)
    bits = model["featurizer"]["bits"]
    include = model["featurizer"]["include_options"]
    scores, kept = {}, []
    for line in Path(pairs_path).read_text().splitlines():
        pair = json.loads(line)
        x = featurize(pair["question"], [o["text"] for o in pair["options"]], bits, include)
        z = 0.0
        for i, v in x:
            z += weights[i] * v
        p = sigmoid(z + model["bias"])
        scores[pair["pair_id"]] = p
        if p >= model["threshold"]:
            kept.append(pair["pair_id"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"kept": kept, "scores": scores}, indent=1, sort_keys=True) + "\n")


def main():
    if len(sys.argv) >= 2 and sys.argv[1] == "buckets":
        cmd_buckets(Path(sys.argv[2] if len(sys.argv) > 2 else "crates/core/tests/fixtures/featurize/buckets.json"))
    elif len(sys.argv) >= 4 and sys.argv[1] == "score":
        cmd_score(sys.argv[2], sys.argv[3], Path(sys.argv[4] if len(sys.argv) > 4 else "kept.json"))
    else:
        sys.exit(__doc__)


if __name__ == "__main__":
    main()
