"""Lexical report metrics (BLEU-1..4, ROUGE-1/2/L, METEOR-exact, CIDEr) and clinical score merging.

Variants, also written into every :class:`MetricReport`'s ``metadata``:

* BLEU is unsmoothed; any zero k-gram precision gives 0.
* METEOR uses exact unigram matches only (no stemming or synonyms).
* CIDEr has no length penalty (not CIDEr-D) and compares the candidate with
  the mean of its reference TF-IDF vectors.
* With several references, ROUGE and METEOR take the best reference; BLEU
  clips against all references jointly.
"""
import csv
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import FormatError, ValidationError

METRIC_KEYS = ("bleu1", "bleu2", "bleu3", "bleu4", "rouge1", "rouge2", "rougeL", "meteor", "cider")
CLINICAL_KEYS = ("green", "ratescore", "radgraph")
_CLINICAL_ALIASES = {"green": "green", "rate": "ratescore", "ratescore": "ratescore",
                     "radgraph": "radgraph", "radgraphxl": "radgraph", "radgraph_xl": "radgraph"}

METADATA = {
    "bleu": "unsmoothed, closest-reference brevity penalty",
    "meteor": "METEOR-exact (alpha=0.9, beta=3, gamma=0.5)",
    "cider": "CIDEr without length penalty, idf=ln(N/max(1,df)), mean reference vector",
    "tokenizer": "lowercase; punctuation split; decimal points kept",
    "avg_nlp": "mean of nine metrics on a 0-100 scale; CIDEr divided by 10",
}

_TOKEN = re.compile(r"\d+(?:\.\d+)+|\w+|[^\w\s]")


def tokenize_eval(text):
    return _TOKEN.findall(text.lower())


def _tokens(x):
    return tokenize_eval(x) if isinstance(x, str) else list(x)


def _refs(refs):
    if isinstance(refs, str):
        return [tokenize_eval(refs)]
    refs = [_tokens(r) for r in refs]
    if not refs:
        raise ValidationError("at least one reference is required")
    return refs


def ngram_counts(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(cand, refs, n=4):
    if not 1 <= n <= 4:
        raise ValidationError(f"BLEU order must be in 1..4, got {n}")
    c = _tokens(cand)
    refs = _refs(refs)
    if not c:
        return 0.0
    log_p = 0.0
    for k in range(1, n + 1):
        counts = ngram_counts(c, k)
        total = sum(counts.values())
        if total == 0:
            return 0.0
        max_ref = Counter()
        for r in refs:
            for g, cnt in ngram_counts(r, k).items():
                max_ref[g] = max(max_ref[g], cnt)
        clipped = sum(min(cnt, max_ref[g]) for g, cnt in counts.items())
        if clipped == 0:
            return 0.0
        log_p += math.log(clipped / total)
    r_len = min((abs(len(r) - len(c)), len(r)) for r in refs)[1]
    bp = 1.0 if len(c) > r_len else math.exp(1.0 - r_len / len(c))
    return bp * math.exp(log_p / n)


def _f1(overlap, n_cand, n_ref):
    if overlap == 0:
        return 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return 2 * p * r / (p + r)


def rouge_n(cand, ref, n=1):
    c, r = ngram_counts(_tokens(cand), n), ngram_counts(_tokens(ref), n)
    overlap = sum(min(cnt, r[g]) for g, cnt in c.items())
    return _f1(overlap, sum(c.values()), sum(r.values()))


def lcs_length(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(cand, ref):
    c, r = _tokens(cand), _tokens(ref)
    return _f1(lcs_length(c, r), len(c), len(r))


class _SearchBudgetExceeded(Exception):
    pass


def _min_chunks_exact(c, r, budget):
    need = Counter(c) & Counter(r)
    ref_pos = {}
    for j, w in enumerate(r):
        ref_pos.setdefault(w, []).append(j)
    remaining_after = []
    seen = Counter()
    for w in reversed(c):
        remaining_after.append(dict(seen))
        seen[w] += 1
    remaining_after.reverse()
    memo = {}

    def used_of(word, used):
        return sum(1 for j in ref_pos[word] if used >> j & 1)

    def solve(i, used, prev):
        if i == len(c):
            return 0
        key = (i, used, prev)
        if key in memo:
            return memo[key]
        if len(memo) >= budget:
            raise _SearchBudgetExceeded
        w = c[i]
        best = math.inf
        if w in need:
            done = used_of(w, used)
            if done + remaining_after[i].get(w, 0) >= need[w]:
                best = solve(i + 1, used, -1)
            if done < need[w]:
                for j in ref_pos[w]:
                    if used >> j & 1:
                        continue
                    cost = 0 if prev >= 0 and j == prev + 1 else 1
                    best = min(best, cost + solve(i + 1, used | 1 << j, j))
        else:
            best = solve(i + 1, used, -1)
        memo[key] = best
        return best

    return sum(need.values()), solve(0, 0, -1)


def _min_chunks_beam(c, r, width=64):
    need = Counter(c) & Counter(r)
    ref_pos = {}
    for j, w in enumerate(r):
        ref_pos.setdefault(w, []).append(j)
    remaining = Counter(c)
    beam = [(0, 0, -1, ())]  # (chunks, used mask, prev ref index, matched-count items)
    for w in c:
        remaining[w] -= 1
        nxt = {}
        for chunks, used, prev, matched in beam:
            done = dict(matched).get(w, 0)
            options = []
            if w not in need or done + remaining[w] >= need[w]:
                options.append((chunks, used, -1, matched))
            if w in need and done < need[w]:
                m2 = tuple(sorted({**dict(matched), w: done + 1}.items()))
                for j in ref_pos[w]:
                    if not used >> j & 1:
                        cost = 0 if prev >= 0 and j == prev + 1 else 1
                        options.append((chunks + cost, used | 1 << j, j, m2))
            for state in options:
                key = state[1:]
                if key not in nxt or state[0] < nxt[key][0]:
                    nxt[key] = state
        beam = sorted(nxt.values(), key=lambda s: (s[0], s[2], s[1]))[:width]
    return sum(need.values()), beam[0][0]


EXACT_MAX_TOKENS = 400


def meteor_alignment(cand, ref, budget=200_000):
    """``(matches, chunks)`` of an exact-match alignment with maximal matches and minimal chunks.

    The search is exact while its memo stays under ``budget`` states and falls
    back to a width-64 beam search otherwise, or straight away for candidates
    longer than ``EXACT_MAX_TOKENS`` (the exact search recurses once per token).
    """
    c, r = _tokens(cand), _tokens(ref)
    if not (Counter(c) & Counter(r)):
        return 0, 0
    if len(c) > EXACT_MAX_TOKENS:
        return _min_chunks_beam(c, r)
    try:
        return _min_chunks_exact(c, r, budget)
    except _SearchBudgetExceeded:
        return _min_chunks_beam(c, r)


def meteor(cand, ref, alpha=0.9, beta=3.0, gamma=0.5):
    c, r = _tokens(cand), _tokens(ref)
    m, chunks = meteor_alignment(c, r)
    if m == 0:
        return 0.0
    p, rec = m / len(c), m / len(r)
    fmean = p * rec / (alpha * p + (1 - alpha) * rec)
    penalty = gamma * (chunks / m) ** beta
    return fmean * (1.0 - penalty)


def cider(pairs, max_n=4):
    """Per-id CIDEr scores (0..10) over a corpus of :class:`EvalPair`."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValidationError("CIDEr needs a corpus of at least 2 pairs for idf")
    n_docs = len(pairs)
    cands = [_tokens(p.candidate) for p in pairs]
    refs = [[_tokens(r) for r in p.references] for p in pairs]
    scores = {p.id: 0.0 for p in pairs}
    for n in range(1, max_n + 1):
        df = Counter()
        for rs in refs:
            df.update({g for r in rs for g in ngram_counts(r, n)})

        def vec(counts):
            return {g: cnt * math.log(n_docs / max(1, df[g])) for g, cnt in counts.items()}

        for p, c, rs in zip(pairs, cands, refs):
            vc = vec(ngram_counts(c, n))
            mean_ref = Counter()
            for r in rs:
                for g, w in vec(ngram_counts(r, n)).items():
                    mean_ref[g] += w / len(rs)
            num = sum(w * mean_ref.get(g, 0.0) for g, w in vc.items())
            norm = math.sqrt(sum(w * w for w in vc.values())) * math.sqrt(sum(w * w for w in mean_ref.values()))
            if norm > 0:
                scores[p.id] += max(0.0, num / norm) / max_n
    return {k: 10.0 * v for k, v in scores.items()}


@dataclass(frozen=True)
class EvalPair:
    id: str
    candidate: str
    references: tuple

    def __post_init__(self):
        refs = (self.references,) if isinstance(self.references, str) else tuple(self.references)
        if not refs:
            raise ValidationError(f"pair {self.id}: at least one reference is required")
        object.__setattr__(self, "references", refs)

    @classmethod
    def from_dict(cls, obj):
        refs = obj.get("references", obj.get("reference"))
        if refs is None or "id" not in obj:
            raise ValidationError(f"eval pair needs id and references: {obj!r}")
        return cls(str(obj["id"]), obj.get("candidate") or "", refs)

    def to_dict(self):
        return {"id": self.id, "candidate": self.candidate, "references": list(self.references)}


@dataclass
class MetricReport:
    per_id: dict
    clinical: dict = field(default_factory=dict)
    missing_clinical: list = field(default_factory=list)
    metadata: dict = field(default_factory=lambda: dict(METADATA))

    def corpus_means(self):
        n = len(self.per_id)
        if n == 0:
            return dict.fromkeys(METRIC_KEYS, 0.0)
        return {k: math.fsum(s[k] for s in self.per_id.values()) / n for k in METRIC_KEYS}

    @property
    def avg_nlp(self):
        return avg_nlp(self.corpus_means())

    def clinical_means(self):
        out = {}
        for key in CLINICAL_KEYS:
            vals = [row[key] for row in self.clinical.values() if row is not None and row.get(key) is not None]
            out[key] = math.fsum(vals) / len(vals) if vals else None
        return out

    def rows(self):
        for i in sorted(self.per_id):
            row = {"id": i, **self.per_id[i], "avg_nlp": avg_nlp(self.per_id[i])}
            clin = self.clinical.get(i)
            for key in CLINICAL_KEYS:
                row[key] = None if clin is None else clin.get(key)
            row["clinical_missing"] = i in self.missing_clinical
            yield row


def score_pair(pair):
    """All metrics except CIDEr (which needs the corpus) for one pair."""
    c = tokenize_eval(pair.candidate)
    refs = [tokenize_eval(r) for r in pair.references]
    out = {f"bleu{n}": bleu(c, refs, n) for n in range(1, 5)}
    out["rouge1"] = max(rouge_n(c, r, 1) for r in refs)
    out["rouge2"] = max(rouge_n(c, r, 2) for r in refs)
    out["rougeL"] = max(rouge_l(c, r) for r in refs)
    out["meteor"] = max(meteor(c, r) for r in refs)
    return out


def evaluate_pairs(pairs):
    pairs = list(pairs)
    ids = [p.id for p in pairs]
    dup = sorted(i for i, n in Counter(ids).items() if n > 1)
    if dup:
        raise ValidationError(f"duplicate pair ids: {dup}")
    per_id = {p.id: score_pair(p) for p in pairs}
    for i, s in cider(pairs).items():
        per_id[i]["cider"] = s
    return MetricReport(per_id)


def avg_nlp(scores):
    """Mean of the nine metrics on a 0-100 scale (CIDEr first divided by 10)."""
    if isinstance(scores, MetricReport):
        scores = scores.corpus_means()
    missing = [k for k in METRIC_KEYS if k not in scores]
    if missing:
        raise ValidationError(f"missing metrics: {missing}")
    scaled = [(scores[k] / 10.0 if k == "cider" else scores[k]) * 100.0 for k in METRIC_KEYS]
    return math.fsum(scaled) / len(scaled)


def read_clinical_scores(path):
    """Read ``{id: {green, ratescore, radgraph}}`` from a CSV or JSON-lines score file."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".csv":
            with open(path, newline="", encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))
        else:
            rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    except (json.JSONDecodeError, csv.Error, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: malformed score file ({exc})") from exc
    out = {}
    for row in rows:
        if not isinstance(row, dict) or "id" not in row:
            raise FormatError(f"{path}: every row needs an id column")
        rid = str(row["id"])
        if rid in out:
            raise FormatError(f"{path}: duplicate id {rid}")
        scores = {}
        for key, value in row.items():
            canon = _CLINICAL_ALIASES.get(str(key).lower())
            if canon is None or value in (None, ""):
                continue
            try:
                scores[canon] = float(value)
            except (TypeError, ValueError):
                raise FormatError(f"{path}: non-numeric {key} for id {rid}: {value!r}") from None
        out[rid] = scores
    return out


def merge_clinical(report, score_file):
    """Attach externally computed clinical scores; ids without a row are flagged, never filled."""
    scores = score_file if isinstance(score_file, dict) else read_clinical_scores(score_file)
    clinical = {i: scores.get(i) for i in report.per_id}
    missing = sorted(i for i, row in clinical.items() if row is None)
    return MetricReport(dict(report.per_id), clinical, missing, dict(report.metadata))
