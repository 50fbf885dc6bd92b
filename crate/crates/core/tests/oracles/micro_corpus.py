"""Spreadsheet-style oracle for the 4-sample micro-corpus quality terms.

Evaluates the overlap (C3), field-overlap/label NMI (C4) and label-PMI (C6)
terms straight from their definitions, with no shared code with the Rust
implementation. The printed values are frozen into tests/dqi_fixtures.rs.
"""
import math
import re

SAMPLES = [
    ("s1", "A man walks a dog.", "The man does not walk.", "contradiction"),
    ("s2", "Two kids play soccer.", "The kids are not playing.", "contradiction"),
    ("s3", "A woman reads a book.", "A woman is reading.", "entailment"),
    ("s4", "The cat sleeps on a mat.", "A pet rests.", "entailment"),
]
LABELS = ["entailment", "contradiction"]


def tok(text):
    return [t for t in re.split(r"[^0-9a-zA-Z]+", text.lower()) if t]


def jac(a, b):
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def entropy(counts):
    n = sum(counts)
    return -sum(c / n * math.log(c / n) for c in counts if c > 0)


def nmi(xs, ys):
    n = len(xs)
    hx = entropy([xs.count(v) for v in set(xs)])
    hy = entropy([ys.count(v) for v in set(ys)])
    pairs = list(zip(xs, ys))
    hxy = entropy([pairs.count(p) for p in set(pairs)])
    m = min(hx, hy)
    if m == 0:
        return 0.0
    return max(0.0, min(1.0, (hx + hy - hxy) / m))


def c3(samples):
    sets = [set(tok(p)) | set(tok(h)) for _, p, h, _ in samples]
    out = []
    for i, s in enumerate(sets):
        best = max(jac(s, o) for j, o in enumerate(sets) if j != i)
        out.append(1 - best)
    return sum(out) / len(out)


def c4(samples, bins=10):
    xs = []
    for _, p, h, _ in samples:
        v = jac(tok(p), tok(h))
        xs.append(min(int(math.floor(v * bins)), bins - 1))
    ys = [l for *_, l in samples]
    return 1 - nmi(xs, ys)


def pmi(samples, feat, label, alpha):
    n = len(samples)
    L = len(LABELS)
    n_fl = sum(1 for _, p, h, l in samples if l == label and feat in set(tok(p)) | set(tok(h)))
    n_f = sum(1 for _, p, h, l in samples if feat in set(tok(p)) | set(tok(h)))
    n_l = sum(1 for *_, l in samples if l == label)
    total = n + 2 * L * alpha
    p_fl = (n_fl + alpha) / total
    p_f = (n_f + L * alpha) / total
    p_l = (n_l + 2 * alpha) / total
    return math.log2(p_fl / (p_f * p_l))


def c6(samples, alpha):
    terms = []
    for _, p, h, l in samples:
        feats = sorted(set(tok(p)) | set(tok(h)))
        mean = sum(pmi(samples, f, l, alpha) for f in feats) / len(feats) if feats else 0.0
        terms.append(1 / (1 + max(0.0, mean)))
    return sum(terms) / len(terms)


if __name__ == "__main__":
    print("c3", repr(c3(SAMPLES)))
    print("c4", repr(c4(SAMPLES)))
    print("c6_alpha1", repr(c6(SAMPLES, 1.0)))
    print("c6_alpha0", repr(c6(SAMPLES, 0.0)))
    print("pmi_not_contra_a0", repr(pmi(SAMPLES, "not", "contradiction", 0.0)))
    print("pmi_not_contra_a1", repr(pmi(SAMPLES, "not", "contradiction", 1.0)))
    for _, p, h, _ in SAMPLES:
        print(" overlap", jac(tok(p), tok(h)))
