#!/usr/bin/env python3
"""Standalone reference for the tokenizer and signed feature-hashing embedder.

Run once to regenerate tests/golden/hashing.json. Shares no code with the
Rust implementation.
"""
import json
import math
import os

VOCAB = 32768
DIM = 384
SIGN_SALT = 0x9E3779B9
M32 = 0xFFFFFFFF


def fnv1a32(data: bytes) -> int:
    h = 0x811C9DC5
    for b in data:
        h ^= b
        h = (h * 0x01000193) & M32
    return h


def fmix32(h: int) -> int:
    h ^= h >> 16
    h = (h * 0x85EBCA6B) & M32
    h ^= h >> 13
    h = (h * 0xC2B2AE35) & M32
    h ^= h >> 16
    return h


def split(text: str):
    out, cur = [], ""
    for ch in text.lower():
        if ch.isalnum():
            cur += ch
            continue
        if cur:
            out.append(cur)
            cur = ""
        if not ch.isspace():
            out.append(ch)
    if cur:
        out.append(cur)
    return out


def tokenize(text: str):
    return [fnv1a32(w.encode("utf-8")) % VOCAB for w in split(text)]


def embed(ids, dim=DIM):
    acc = [0.0] * dim
    for t in ids:
        bucket = fmix32(t) % dim
        sign = -1.0 if fmix32(t ^ SIGN_SALT) & 1 else 1.0
        acc[bucket] += sign
    norm = math.sqrt(sum(x * x for x in acc))
    if norm == 0.0:
        acc = [0.0] * dim
        for t in ids:
            acc[fmix32(t) % dim] += 1.0
        norm = math.sqrt(sum(x * x for x in acc))
    return [x / norm for x in acc]


def blend(a, b, alpha):
    v = [alpha * x + (1.0 - alpha) * y for x, y in zip(a, b)]
    norm = math.sqrt(sum(x * x for x in v))
    return [x / norm for x in v]


def sparse(v):
    return [[i, x] for i, x in enumerate(v) if x != 0.0]


SENTENCE = "The quick brown fox jumps over the lazy sleeping dog"
CHUNK_TEXT = ("alpha beta gamma delta epsilon zeta eta theta iota kappa "
              "lambda mu nu xi omicron pi rho sigma tau upsilon")
QUERY = "summarize the chapter"
INSTRUCTION = ("Read the following chapter of the novel carefully and then "
               "write a concise summary of the main events, characters, and "
               "the turning point of the plot.")
GENERATED = [(i * 7919 + 13) % VOCAB for i in range(80)]


def main():
    chunk_ids = tokenize(CHUNK_TEXT)
    assert len(chunk_ids) == 20
    tail = INSTRUCTION[-100:]
    a = embed(tokenize(tail))
    b = embed(GENERATED[-50:])
    golden = {
        "vocab_size": VOCAB,
        "dim": DIM,
        "sentence": SENTENCE,
        "sentence_ids": tokenize(SENTENCE),
        "chunk_text": CHUNK_TEXT,
        "chunk_ids": chunk_ids,
        "chunk_embedding": sparse(embed(chunk_ids)),
        "query": QUERY,
        "query_embedding": sparse(embed(tokenize(QUERY))),
        "instruction": INSTRUCTION,
        "generated": GENERATED,
        "blend_alpha": 0.5,
        "blended_query": sparse(blend(a, b, 0.5)),
    }
    here = os.path.dirname(os.path.abspath(__file__))
    path = os.path.join(here, "..", "golden", "hashing.json")
    with open(path, "w") as fh:
        json.dump(golden, fh, indent=1)
        fh.write("\n")


if __name__ == "__main__":
    main()
