#!/usr/bin/env python3
"""Build a JSB-style piano-roll dataset from the Bach chorales bundled with music21.

Each chorale is sampled on a quarter-note grid: a frame holds every pitch that
sounds at that beat. Pitches are stored as 0-based piano-key indices
(MIDI pitch - 21). Output is the canonical JSON dataset format read by
`tensor_rnn::data::load_dataset`.

Usage: python3 tools/make_jsb_dataset.py data/jsb_chorales.json
"""

import json
import math
import random
import sys

from music21 import corpus

LOWEST_MIDI = 21
KEYS = 88
# Same proportions as the widely used 229/76/77 split.
SPLIT_FRACTIONS = (229 / 382, 76 / 382)


def chorale_frames(path):
    score = corpus.parse(path)
    end = score.highestTime
    frames = [set() for _ in range(int(math.floor(end)))]
    if not frames:
        return None
    for part in score.parts:
        for n in part.flatten().notes:
            start = float(n.offset)
            stop = start + float(n.duration.quarterLength)
            pitches = [p.midi for p in n.pitches]
            first = int(math.ceil(start - 1e-9))
            for t in range(first, len(frames)):
                if t >= stop - 1e-9:
                    break
                for midi in pitches:
                    key = midi - LOWEST_MIDI
                    if not 0 <= key < KEYS:
                        raise ValueError(f"{path}: pitch {midi} outside piano range")
                    frames[t].add(key)
    # Trim silent frames at both ends; keep interior rests.
    while frames and not frames[0]:
        frames.pop(0)
    while frames and not frames[-1]:
        frames.pop()
    return [sorted(f) for f in frames] if frames else None


def main():
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    out = sys.argv[1]
    paths = sorted(corpus.getComposer("bach"), key=lambda p: p.name)
    seen = set()
    pieces = []
    for path in paths:
        frames = chorale_frames(path)
        if frames is None or len(frames) < 2:
            continue
        key = json.dumps(frames)
        if key in seen:
            continue
        seen.add(key)
        pieces.append(frames)

    random.Random(2012).shuffle(pieces)
    n_train = round(len(pieces) * SPLIT_FRACTIONS[0])
    n_valid = round(len(pieces) * SPLIT_FRACTIONS[1])
    splits = {
        "train": pieces[:n_train],
        "valid": pieces[n_train:n_train + n_valid],
        "test": pieces[n_train + n_valid:],
    }
    doc = {"name": "jsb_chorales", "splits": splits}
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")
    for name, seqs in splits.items():
        steps = sum(len(s) for s in seqs)
        print(f"{name}: {len(seqs)} sequences, {steps} timesteps")


if __name__ == "__main__":
    main()
