"""Writes text_metrics.json: expected BLEU, METEOR and ROUGE-L for each pair.

Each score is evaluated straight from its formula, independently of the Rust
code. Requires nltk (Snowball English stemmer only).
"""

import json
import math
import re
from collections import Counter
from pathlib import Path

from nltk.stem.snowball import SnowballStemmer

EPS = 1e-9
ALPHA, GAMMA, BETA = 0.9, 0.5, 3.0
STEM = SnowballStemmer("english")

GOLD_SINGLE = """MATCH (target:Molecule {name: "CCO"})<-[:PRODUCES]-(r:Reaction)
OPTIONAL MATCH (reactant:Molecule)-[:REACTS_IN]->(r)
OPTIONAL MATCH (r)-[:PRODUCES]->(product:Molecule)
RETURN r.id, collect(DISTINCT reactant.name) AS reactants, collect(DISTINCT product.name) AS products"""
GOLD_MULTI = """MATCH p = (start:Molecule)-[:REACTS_IN|PRODUCES*..4]-(target:Molecule {name: "CCN"})
WHERE size(relationships(p)) = 4
WITH [x IN nodes(p) WHERE 'Reaction' IN labels(x)] AS reaction_nodes
RETURN DISTINCT reaction_nodes"""

PAIRS = [
    ("a b c d", "a b c e"),
    ("a c", "a b c"),
    ("a", "a"),
    ("x y z", "p q r"),
    ("c b a", "a b c"),
    ("the the the the", "the cat"),
    ("a b c d e f g", "a b c"),
    ("RETURN reactants", "RETURN reactant"),
    ("Running solvents quickly", "running solvent quick"),
    ("MATCH (m:Molecule) RETURN m", "MATCH (m:Molecule) RETURN m"),
    (GOLD_SINGLE.replace("<-[:PRODUCES]-", "-[:PRODUCES]->", 1), GOLD_SINGLE),
    (GOLD_SINGLE.replace("collect(DISTINCT reactant.name)", "collect(reactant.name)"), GOLD_SINGLE),
    ("MATCH (target:Molecule {name: \"CCO\"})<-[:PRODUCES]-(r:Reaction) RETURN r.id", GOLD_SINGLE),
    (GOLD_MULTI.replace("]-(target", "]->(target"), GOLD_MULTI),
    (GOLD_MULTI.replace("*..4", "*4").replace("= 4", "= 8"), GOLD_MULTI),
    ("MATCH p = (target:Molecule {name: \"CCN\"})-[*]->(s) RETURN p", GOLD_MULTI),
    ("RETURN DISTINCT reaction_nodes", GOLD_MULTI),
    ("MATCH (r:Reaction {id: 'R1'}) RETURN r", "MATCH (r:Reaction {id: 'R2'}) RETURN r.id AS reaction"),
    ("products names product name", "product names products"),
    ("a b a b a b", "b a b a"),
]

PUNCT = re.escape("()[]{},.:=<>-|")


def tokenize(text):
    return re.findall(rf"[{PUNCT}]|[^\s{PUNCT}]+", text)


def ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(c, r):
    if not c:
        return 0.0
    order = min(4, len(c))
    precisions = []
    for n in range(1, order + 1):
        cand, ref = ngrams(c, n), ngrams(r, n)
        clipped = sum(min(k, ref[g]) for g, k in cand.items())
        total = sum(cand.values())
        precisions.append((clipped if clipped else EPS) / max(total, 1))
    geo = math.prod(precisions) ** (1.0 / order)
    bp = 1.0 if len(c) > len(r) else math.exp(1.0 - len(r) / len(c))
    return min(1.0, max(0.0, bp * geo))


def align(c, r):
    used_c, used_r, pairs = set(), set(), []
    for same in (lambda a, b: a == b, lambda a, b: STEM.stem(a.lower()) == STEM.stem(b.lower())):
        for i, tok in enumerate(c):
            if i in used_c:
                continue
            for j, ref in enumerate(r):
                if j not in used_r and same(tok, ref):
                    used_c.add(i)
                    used_r.add(j)
                    pairs.append((i, j))
                    break
    return sorted(pairs)


def meteor(c, r):
    pairs = align(c, r)
    m = len(pairs)
    if m == 0:
        return 0.0
    chunks = 1 + sum(
        1 for (a, b), (x, y) in zip(pairs, pairs[1:]) if (x, y) != (a + 1, b + 1)
    )
    p, rec = m / len(c), m / len(r)
    fmean = p * rec / (ALPHA * p + (1 - ALPHA) * rec)
    return fmean * (1 - GAMMA * (chunks / m) ** BETA)


def lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) - 1, -1, -1):
        for j in range(len(b) - 1, -1, -1):
            table[i][j] = table[i + 1][j + 1] + 1 if a[i] == b[j] else max(table[i + 1][j], table[i][j + 1])
    return table[0][0]


def rouge_l(c, r):
    l = lcs(c, r)
    if l == 0:
        return 0.0
    p, rec = l / len(c), l / len(r)
    return 2 * p * rec / (p + rec)


def main():
    rows = []
    for cand, ref in PAIRS:
        c, r = tokenize(cand), tokenize(ref)
        rows.append(
            {
                "candidate": cand,
                "reference": ref,
                "tokens": [len(c), len(r)],
                "bleu": bleu(c, r),
                "meteor": meteor(c, r),
                "rouge_l": rouge_l(c, r),
            }
        )
    out = Path(__file__).with_name("text_metrics.json")
    out.write_text(json.dumps(rows, indent=1) + "\n")


if __name__ == "__main__":
    main()
