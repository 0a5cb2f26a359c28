"""Regenerates loopback_fixture.jsonl from an independent FNV-1a 64 implementation."""
import json
import random

OFFSET = 0xCBF29CE484222325
PRIME = 0x100000001B3
MASK = (1 << 64) - 1


def fnv(h, data):
    for b in data:
        h ^= b
        h = (h * PRIME) & MASK
    return h


def score(seed, src, tgt):
    h = fnv(OFFSET, seed.to_bytes(8, "little"))
    h = fnv(h, src.encode("utf-8"))
    h = fnv(h, b"\x1f")
    h = fnv(h, tgt.encode("utf-8"))
    return (h >> 11) / float(1 << 53)


WORDS = ["the", "cat", "sat", "köttur", "sat", "á", "mottunni", "Þórður", "ætlar", "heim",
         "\"quoted\"", "„tilvitnun“", "tab\there", "😀", "#wmt24", "@anna", "3.14", "", "ð", "x"]

rng = random.Random(20240917)
rows = []
for i in range(1000):
    seed = 0 if i < 800 else rng.choice([1, 7, 42, 2**63 + 5, 2**64 - 1])
    src = " ".join(rng.choice(WORDS) for _ in range(rng.randint(0, 8)))
    tgt = " ".join(rng.choice(WORDS) for _ in range(rng.randint(0, 8)))
    rows.append({"seed": seed, "src": src, "tgt": tgt, "score": score(seed, src, tgt)})

with open("loopback_fixture.jsonl", "w", encoding="utf-8") as f:
    for r in rows:
        f.write(json.dumps(r, ensure_ascii=False) + "\n")
