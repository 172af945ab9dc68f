"""Slow, explicit reference implementations used to check the fast metric code."""
import itertools
import math


def grams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def count(items, x):
    return sum(1 for y in items if y == x)


def bleu(c, refs, n):
    if not c:
        return 0.0
    logs = []
    for k in range(1, n + 1):
        cg = grams(c, k)
        if not cg:
            return 0.0
        clipped = 0
        for g in set(cg):
            clipped += min(count(cg, g), max(count(grams(r, k), g) for r in refs))
        if clipped == 0:
            return 0.0
        logs.append(math.log(clipped / len(cg)))
    best = sorted(refs, key=lambda r: (abs(len(r) - len(c)), len(r)))[0]
    bp = 1.0 if len(c) > len(best) else math.exp(1 - len(best) / len(c))
    return bp * math.exp(sum(logs) / n)


def f1(overlap, a, b):
    if overlap == 0:
        return 0.0
    p, r = overlap / a, overlap / b
    return 2 * p * r / (p + r)


def rouge_n(c, r, n):
    cg, rg = grams(c, n), grams(r, n)
    overlap = sum(min(count(cg, g), count(rg, g)) for g in set(cg))
    return f1(overlap, len(cg), len(rg))


def lcs(a, b):
    # every subsequence of the shorter sequence, longest first
    short, other = (a, b) if len(a) <= len(b) else (b, a)
    for k in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), k):
            sub = [short[i] for i in idx]
            it = iter(other)
            if all(tok in it for tok in sub):
                return k
    return 0


def rouge_l(c, r):
    return f1(lcs(c, r), len(c), len(r))


def alignments(c, r):
    """Every injective exact-match alignment, as sorted (cand index, ref index) tuples."""
    def rec(i, used):
        if i == len(c):
            yield ()
            return
        for rest in rec(i + 1, used):
            yield rest
        for j, w in enumerate(r):
            if w == c[i] and j not in used:
                for rest in rec(i + 1, used | {j}):
                    yield ((i, j),) + rest
    return rec(0, frozenset())


def meteor(c, r):
    best = (0, 0)
    for a in alignments(c, r):
        m = len(a)
        if m == 0:
            continue
        chunks = 1 + sum(1 for (i0, j0), (i1, j1) in zip(a, a[1:]) if not (i1 == i0 + 1 and j1 == j0 + 1))
        if m > best[0] or (m == best[0] and chunks < best[1]):
            best = (m, chunks)
    m, chunks = best
    if m == 0:
        return 0.0
    p, rec = m / len(c), m / len(r)
    fmean = 10 * p * rec / (rec + 9 * p)
    return fmean * (1 - 0.5 * (chunks / m) ** 3)


def cider(cands, refs_list):
    n_docs = len(cands)
    out = [0.0] * n_docs
    for n in range(1, 5):
        def vector(tokens):
            v = {}
            for g in set(grams(tokens, n)):
                df = sum(1 for refs in refs_list if any(g in grams(r, n) for r in refs))
                v[g] = count(grams(tokens, n), g) * math.log(n_docs / max(df, 1))
            return v

        for i, (c, refs) in enumerate(zip(cands, refs_list)):
            vc = vector(c)
            ref_vecs = [vector(r) for r in refs]
            keys = set(vc) | {g for v in ref_vecs for g in v}
            mean = {g: sum(v.get(g, 0.0) for v in ref_vecs) / len(refs) for g in keys}
            dot = sum(vc.get(g, 0.0) * mean[g] for g in keys)
            nc = math.sqrt(sum(x * x for x in vc.values()))
            nr = math.sqrt(sum(x * x for x in mean.values()))
            if nc > 0 and nr > 0:
                out[i] += max(0.0, dot / (nc * nr)) / 4
    return [10 * s for s in out]


def all_scores(c, refs):
    out = {f"bleu{n}": bleu(c, refs, n) for n in range(1, 5)}
    out["rouge1"] = max(rouge_n(c, r, 1) for r in refs)
    out["rouge2"] = max(rouge_n(c, r, 2) for r in refs)
    out["rougeL"] = max(rouge_l(c, r) for r in refs)
    out["meteor"] = max(meteor(c, r) for r in refs)
    return out


def random_pairs(rng, n_pairs=100, vocab=("a", "b", "c", "d", "e", "f"), max_len=7):
    pairs = []
    for i in range(n_pairs):
        c = list(rng.choice(vocab, size=int(rng.integers(0, max_len + 1))))
        refs = [list(rng.choice(vocab, size=int(rng.integers(1, max_len + 1))))
                for _ in range(int(rng.integers(1, 3)))]
        pairs.append((f"p{i:03d}", c, refs))
    return pairs
