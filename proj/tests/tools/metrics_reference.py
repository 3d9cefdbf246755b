#!/usr/bin/env python3
# Copyright 2026 The TaskBot Framework Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Brute-force reference for EM, token F1 and ROUGE-1.

Writes tests/data/metrics_golden.jsonl. Overlap is counted by greedy
pairing with removal instead of multiset intersection.
"""

import json
import random
import re
import string
import sys
from pathlib import Path


def normalize(s):
    s = s.lower()
    s = "".join(ch for ch in s if ch not in set(string.punctuation))
    s = re.sub(r"\b(a|an|the)\b", " ", s)
    return s.split()


def overlap(pred, gold):
    remaining = list(gold)
    common = 0
    for tok in pred:
        for i, g in enumerate(remaining):
            if g == tok:
                del remaining[i]
                common += 1
                break
    return common


def f_measure(pred, gold):
    if not pred or not gold:
        return float(pred == gold)
    common = overlap(pred, gold)
    if common == 0:
        return 0.0
    p = common / len(pred)
    r = common / len(gold)
    return 2 * p * r / (p + r)


def exact_match(pred, gold):
    return float(normalize(pred) == normalize(gold))


def token_f1(pred, gold):
    return f_measure(normalize(pred), normalize(gold))


def rouge1(pred, gold):
    return f_measure(pred.lower().split(), gold.lower().split())


FIXED = [
    ("cook until golden", "cook until golden"),
    ("5 minutes", "cook until golden"),
    ("cook the garlic until golden", "cook until golden"),
    ("cook garlic until golden", "cook until golden"),
    ("", ""),
    ("", "cook"),
    ("cook", ""),
    ("The", "a an"),
    ("!!!", ""),
    ("Cook, until GOLDEN.", "cook until golden"),
    ("the the the", "the"),
    ("salt salt pepper", "salt pepper pepper"),
    ("café au lait", "Café au lait"),
    ("soak arame in cold water", "soak the arame in cold water until tender"),
    ("theatre", "the atre"),
]

VOCAB = ["the", "a", "an", "The", "A", "cook", "Cook", "until", "golden", "garlic", "onions", "5", "minutes",
         "salt,", "pepper.", "oil", "olive", "(optional)", "step-2", "don't", "café", "stir!", "well;", "and", "or"]


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "data" / "metrics_golden.jsonl"
    rng = random.Random(1729)
    cases = list(FIXED)
    while len(cases) < 50:
        pred = " ".join(rng.choice(VOCAB) for _ in range(rng.randint(0, 8)))
        gold = " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 8)))
        cases.append((pred, gold))
    with out.open("w", encoding="utf-8") as f:
        for pred, gold in cases:
            row = {"pred": pred, "gold": gold, "em": exact_match(pred, gold), "f1": token_f1(pred, gold),
                   "rouge1": rouge1(pred, gold)}
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
