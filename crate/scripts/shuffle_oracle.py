#!/usr/bin/env python3
"""Replay the text filter's option shuffles without the Rust code.

Reimplements the pieces the shuffle depends on: length-prefixed SHA-256 seed
derivation, the PCG32 expansion used by `seed_from_u64`, the ChaCha8 block
function, and rand 0.8's widening-multiply range sampling.

    python3 scripts/shuffle_oracle.py [out]

Writes a JSON object with the fixture pair, its id, the five permutations
for run seed 7 and, for each possible gold letter, the verdict of an
answerer that always replies A.
"""

import hashlib
import json
import struct
import sys
from pathlib import Path

MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF

RECORD_ID = "rec-fixture"
QUESTION = "Which organ is shown in this axial slice?"
OPTIONS = ["Liver", "Spleen", "Left kidney", "Pancreas"]
RUN_SEED = 7
TRIALS = 5


def hash_parts(parts):
    h = hashlib.sha256()
    for p in parts:
        h.update(struct.pack("<Q", len(p)))
        h.update(p)
    return h.digest()


def pair_id(record_id, question, options):
    parts = [b"qa-pair", record_id.encode(), question.encode()] + [o.encode() for o in options]
    return hash_parts(parts)[:16].hex()


def trial_seed(run_seed, pid, trial):
    d = hash_parts([b"textfilter-trial", struct.pack("<Q", run_seed), pid.encode(), bytes([trial])])
    return struct.unpack("<Q", d[:8])[0]


def pcg32_seed(state):
    out = b""
    for _ in range(8):
        state = (state * 6364136223846793005 + 11634580027462260723) & MASK64
        xorshifted = (((state >> 18) ^ state) >> 27) & MASK32
        rot = state >> 59
        x = ((xorshifted >> rot) | (xorshifted << ((32 - rot) & 31))) & MASK32
        out += struct.pack("<I", x)
    return out


def rotl(v, n):
    return ((v << n) | (v >> (32 - n))) & MASK32


def quarter(s, a, b, c, d):
    s[a] = (s[a] + s[b]) & MASK32; s[d] = rotl(s[d] ^ s[a], 16)
    s[c] = (s[c] + s[d]) & MASK32; s[b] = rotl(s[b] ^ s[c], 12)
    s[a] = (s[a] + s[b]) & MASK32; s[d] = rotl(s[d] ^ s[a], 8)
    s[c] = (s[c] + s[d]) & MASK32; s[b] = rotl(s[b] ^ s[c], 7)


def chacha8_block(key_words, counter):
    init = [0x61707865, 0x3320646E, 0x79622D32, 0x6B206574] + key_words + [
        counter & MASK32, counter >> 32, 0, 0]
    s = list(init)
    for _ in range(4):
        quarter(s, 0, 4, 8, 12); quarter(s, 1, 5, 9, 13)
        quarter(s, 2, 6, 10, 14); quarter(s, 3, 7, 11, 15)
        quarter(s, 0, 5, 10, 15); quarter(s, 1, 6, 11, 12)
        quarter(s, 2, 7, 8, 13); quarter(s, 3, 4, 9, 14)
    return [(x + y) & MASK32 for x, y in zip(s, init)]


class ChaCha8:
    def __init__(self, seed_u64):
        self.key = list(struct.unpack("<8I", pcg32_seed(seed_u64)))
        self.counter = 0
        self.words = []

    def next_u32(self):
        if not self.words:
            self.words = chacha8_block(self.key, self.counter)
            self.counter += 1
        return self.words.pop(0)

    def next_u64(self):
        lo = self.next_u32()
        return (self.next_u32() << 32) | lo


def gen_range_inclusive(rng, low, high):
    """rand 0.8 `sample_single_inclusive` for usize on a 64-bit target."""
    rng_range = high - low + 1
    lz = 64 - rng_range.bit_length()
    zone = ((rng_range << lz) - 1) & MASK64
    while True:
        v = rng.next_u64()
        m = v * rng_range
        hi, lo = m >> 64, m & MASK64
        if lo <= zone:
            return low + hi


def shuffle(pid, run_seed, trial):
    rng = ChaCha8(trial_seed(run_seed, pid, trial))
    order = [0, 1, 2, 3]
    for i in (3, 2, 1):
        j = gen_range_inclusive(rng, 0, i)
        order[i], order[j] = order[j], order[i]
    perm = [0] * 4
    for pos, orig in enumerate(order):
        perm[orig] = pos
    return perm


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/textfilter/seed7.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    pid = pair_id(RECORD_ID, QUESTION, OPTIONS)
    perms = [shuffle(pid, RUN_SEED, t) for t in range(TRIALS)]
    # Replying A is correct when the gold option was shuffled to position 0.
    by_gold = {}
    for gold, letter in enumerate("ABCD"):
        n_correct = sum(1 for p in perms if p[gold] == 0)
        by_gold[letter] = {"n_correct": n_correct, "dismissed": n_correct >= 3}
    doc = {
        "record_id": RECORD_ID,
        "question": QUESTION,
        "options": OPTIONS,
        "run_seed": RUN_SEED,
        "pair_id": pid,
        "permutations": perms,
        "constant_a": by_gold,
    }
    out.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
