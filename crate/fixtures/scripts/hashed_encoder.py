#!/usr/bin/env python3
"""Stand-in text encoder used to produce the checked-in TRGE fixtures.

Each lowercase word and word bigram is hashed to a fixed Gaussian vector;
a description's embedding is the mean over its tokens (mean pooling).  It
has no learned semantics, but descriptions that share wording land close
together, which is enough for the relational graphs to carry structure.

The transformer-based exporter writes the same file layout, so fixtures
can be regenerated with it once model weights are available.

Usage:
    hashed_encoder.py DESCRIPTIONS.json OUT.trge [--dim 768] [--center]
"""

import argparse
import hashlib
import json
import re
import struct
from pathlib import Path

import numpy as np

ENCODER_ID = "hashed-bigram-v1"


def tokens(text):
    words = re.findall(r"[a-z]+", text.lower())
    return words + [a + " " + b for a, b in zip(words, words[1:])]


def token_vector(tok, dim):
    seed = int.from_bytes(hashlib.sha256(tok.encode()).digest()[:8], "little")
    return np.random.default_rng(seed).standard_normal(dim)


def encode(text, dim):
    toks = tokens(text)
    if not toks:
        raise ValueError(f"empty description: {text!r}")
    return np.mean([token_vector(t, dim) for t in toks], axis=0)


def write_trge(path, labels, matrix):
    rows, cols = matrix.shape
    with open(path, "wb") as f:
        f.write(b"TRGE")
        f.write(struct.pack("<HHII", 1, 0, rows, cols))
        f.write(matrix.astype("<f4").tobytes())
    sidecar = path.with_suffix(".labels.json")
    sidecar.write_text(
        json.dumps({"labels": labels, "source": ENCODER_ID, "pooling": "mean"}, indent=1) + "\n"
    )


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("descriptions", type=Path)
    ap.add_argument("out", type=Path)
    ap.add_argument("--dim", type=int, default=768)
    ap.add_argument(
        "--center",
        action="store_true",
        help="subtract the mean row (removes the shared component of short label sets)",
    )
    args = ap.parse_args()

    items = json.loads(args.descriptions.read_text())
    labels = [it["label"] for it in items]
    if len(set(labels)) != len(labels):
        raise SystemExit("duplicate labels")
    m = np.stack([encode(it["description"], args.dim) for it in items])
    if args.center:
        m -= m.mean(axis=0, keepdims=True)
    write_trge(args.out, labels, m)
    print(f"{args.out}: {m.shape[0]} x {m.shape[1]}")


if __name__ == "__main__":
    main()
