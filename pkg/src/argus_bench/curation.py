"""Report assembly, rule-based sentence filtering, length filtering and dataset splitting."""
import random
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ValidationError
from .utils import round_half_away

SOURCES = ("BIMCV-R", "CT-RATE", "INSPECT")
SPLITS = ("train", "val", "test")
MIN_TOKENS = 10

BASE_INSTRUCTION = (
    "Please generate a detailed description for the given 3D CT scan, "
    "including both normal and abnormal patterns."
)


@dataclass(frozen=True)
class RawRecord:
    id: str
    source: str
    findings: str = None
    impression: str = None
    report: str = None
    official_test: bool = False
    sample_id: str = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValidationError(f"record {self.id}: unknown source {self.source!r}; valid: {list(SOURCES)}")

    @classmethod
    def from_dict(cls, obj):
        known = {k: obj[k] for k in ("id", "source", "findings", "impression", "report", "official_test", "sample_id")
                 if k in obj}
        if "id" not in known or "source" not in known:
            raise ValidationError(f"record is missing id or source: {obj!r}")
        known["id"] = str(known["id"])
        known["official_test"] = bool(known.get("official_test", False))
        return cls(**known)

    def to_dict(self):
        out = {"id": self.id, "source": self.source, "official_test": self.official_test}
        for key in ("findings", "impression", "report", "sample_id"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


@dataclass(frozen=True)
class CuratedRecord:
    id: str
    source: str
    report: str
    token_count: int
    official_test: bool = False
    removed_sentences: tuple = ()

    def to_dict(self):
        return {
            "id": self.id,
            "source": self.source,
            "report": self.report,
            "token_count": self.token_count,
            "official_test": self.official_test,
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(str(obj["id"]), obj["source"], obj["report"], int(obj["token_count"]),
                   bool(obj.get("official_test", False)))


@dataclass
class DatasetManifest:
    seed: int
    assignments: dict
    counts: dict = field(default_factory=dict)
    rounding: str = "half_away"

    def ids(self, split):
        return sorted(i for i, s in self.assignments.items() if s == split)

    def to_dict(self):
        return {
            "seed": self.seed,
            "rounding": self.rounding,
            "counts": self.counts,
            "splits": {split: self.ids(split) for split in SPLITS},
        }

    @classmethod
    def from_dict(cls, obj):
        assignments = {i: split for split, ids in obj["splits"].items() for i in ids}
        return cls(int(obj["seed"]), assignments, obj.get("counts", {}), obj.get("rounding", "half_away"))


def assemble_report(r):
    if r.source == "CT-RATE" and (r.findings is not None or r.impression is not None):
        return f"{r.findings or ''} {r.impression or ''}".strip()
    if r.report is None:
        raise ValidationError(f"record {r.id}: empty record")
    return r.report


_SENTENCE_END = re.compile(r"(?<=[.;!?])(?:\s+|$)")


def split_sentences(text):
    # A terminator only ends a sentence when whitespace or end-of-text follows,
    # so decimal points such as "3.5" never split.
    return [s.strip() for s in _SENTENCE_END.split(text) if s.strip()]


_NUMBER = re.compile(r"^\d+(?:[.,]\d+)?$")
_WORD = re.compile(r"[A-Za-z0-9]+(?:[.,]\d+)*")
R1_KEYWORDS = frozenset({"fever", "sat", "o2", "saturation", "bpm", "temperature", "pressure", "leukocytes"})
R1_WINDOW = 4
_R2 = re.compile(r"\b\d+(?:[.,]\d+)?\s*(?:mm|cm|millimeters?|centimeters?)\b", re.IGNORECASE)
_MONTHS = ("january|february|march|april|may|june|july|august|september|october|november|december")
_R3 = re.compile(
    r"previous\s+study|prior\s+study|compared\s+to\s+the\s+previous|previous\s+exam"
    rf"|\b(?:{_MONTHS})\s+\d{{4}}\b",
    re.IGNORECASE,
)


def _matches_r1(sentence):
    words = [w.lower() for w in _WORD.findall(sentence)]
    numbers = [i for i, w in enumerate(words) if _NUMBER.match(w)]
    keywords = [i for i, w in enumerate(words) if w in R1_KEYWORDS]
    return any(abs(i - j) <= R1_WINDOW for i in numbers for j in keywords)


def match_rule(sentence):
    """Return the first matching rule id (``R1``, ``R2``, ``R3``) or None."""
    if _matches_r1(sentence):
        return "R1"
    if _R2.search(sentence):
        return "R2"
    if _R3.search(sentence):
        return "R3"
    return None


def filter_sentences(sentences):
    kept, removed = [], []
    for s in sentences:
        rule = match_rule(s)
        if rule is None:
            kept.append(s)
        else:
            removed.append((s, rule))
    return kept, removed


def count_tokens(text):
    return len(text.split())


_CTRATE_RECON = re.compile(r"^(.+_[a-z])_\d+$")


def sample_key(r):
    """Key under which CT-RATE reconstructions of one scan collapse (``train_1_a_2`` -> ``train_1_a``)."""
    if r.sample_id is not None:
        return r.sample_id
    if r.source == "CT-RATE":
        m = _CTRATE_RECON.match(r.id)
        if m:
            return m.group(1)
    return r.id


def _dedup(records):
    """Keep the lowest id of each CT-RATE sample; returns (kept, dropped ids)."""
    chosen = {}
    for r in sorted(records, key=lambda r: r.id):
        key = (r.source, sample_key(r)) if r.source == "CT-RATE" else (r.source, r.id)
        chosen.setdefault(key, r)
    kept_ids = {r.id for r in chosen.values()}
    return [r for r in records if r.id in kept_ids], [r.id for r in records if r.id not in kept_ids]


def curate_with_log(records, min_tokens=MIN_TOKENS):
    """Curate records and return ``(curated, removal_log)``.

    The log holds one dict per removed sentence ``{id, sentence, rule}`` and one
    per dropped record ``{id, sentence: None, rule: "duplicate" | "min-length"}``.
    """
    records = list(records)
    dup = [i for i, c in Counter(r.id for r in records).items() if c > 1]
    if dup:
        raise ValidationError(f"duplicate record ids: {sorted(dup)}")
    records, dropped_dups = _dedup(records)
    log = [{"id": i, "sentence": None, "rule": "duplicate"} for i in dropped_dups]
    curated = []
    for r in records:
        text = assemble_report(r)
        if r.official_test:
            # official test records are kept verbatim, with no sentence or length filter
            curated.append(CuratedRecord(r.id, r.source, text, count_tokens(text), True))
            continue
        kept, removed = filter_sentences(split_sentences(text))
        log.extend({"id": r.id, "sentence": s, "rule": rule} for s, rule in removed)
        report = " ".join(kept)
        n = count_tokens(report)
        if n < min_tokens:
            log.append({"id": r.id, "sentence": None, "rule": "min-length"})
            continue
        curated.append(CuratedRecord(r.id, r.source, report, n, False, tuple(removed)))
    return curated, log


def curate(records, min_tokens=MIN_TOKENS):
    return curate_with_log(records, min_tokens)[0]


def _round(x, rounding):
    if rounding == "half_away":
        return round_half_away(x)
    if rounding == "floor":
        return int(x // 1)
    raise ValidationError(f"unknown rounding {rounding!r}; valid: ['floor', 'half_away']")


def split_dataset(records, seed, val_fraction=0.1, test_fraction=0.2, rounding="half_away"):
    """Assign every record to train/val/test.

    Official-test records go to test. Each source's remaining records are sorted
    by id, shuffled with a seeded Fisher-Yates pass, and cut into
    ``round(val_fraction*N)`` val, ``round(test_fraction*N)`` test and the rest
    train. CT-RATE draws no test split from its non-official pool.
    ``rounding="floor"`` truncates instead of rounding half away from zero.
    """
    assignments = {}
    groups = defaultdict(list)
    for r in records:
        if r.id in assignments:
            raise ValidationError(f"duplicate record id {r.id}")
        if r.official_test:
            assignments[r.id] = "test"
        else:
            groups[r.source].append(r.id)
            assignments[r.id] = None
    for source in sorted(groups):
        ids = sorted(groups[source])
        random.Random(f"{seed}/{source}").shuffle(ids)
        n = len(ids)
        n_val = _round(val_fraction * n, rounding)
        n_test = 0 if source == "CT-RATE" else _round(test_fraction * n, rounding)
        for i, rid in enumerate(ids):
            assignments[rid] = "val" if i < n_val else "test" if i < n_val + n_test else "train"
    counts = defaultdict(lambda: dict.fromkeys(SPLITS, 0))
    source_of = {r.id: r.source for r in records}
    for rid, split in assignments.items():
        counts[source_of[rid]][split] += 1
    return DatasetManifest(seed, assignments, {k: counts[k] for k in sorted(counts)}, rounding)


def build_instruction(pool=None, index=0):
    pool = [BASE_INSTRUCTION] if pool is None else list(pool)
    if not pool:
        raise ValidationError("instruction pool is empty")
    return pool[index % len(pool)]


class ReportCurator(BaseEstimator, TransformerMixin):
    """Sklearn-style wrapper around :func:`curate_with_log`.

    ``fit`` records the removal log in ``removal_log_``; ``transform`` returns
    the curated records.
    """

    def __init__(self, min_tokens=MIN_TOKENS):
        self.min_tokens = min_tokens

    def fit(self, X, y=None):
        self.curated_, self.removal_log_ = curate_with_log(X, self.min_tokens)
        self.n_records_in_ = len(list(X))
        return self

    def transform(self, X):
        return curate(X, self.min_tokens)

    def fit_transform(self, X, y=None):
        X = list(X)
        return self.fit(X).curated_


class DatasetSplitter(BaseEstimator):
    """Seeded train/val/test assignment; the result lives in ``manifest_``."""

    def __init__(self, seed=0, val_fraction=0.1, test_fraction=0.2, rounding="half_away"):
        self.seed = seed
        self.val_fraction = val_fraction
        self.test_fraction = test_fraction
        self.rounding = rounding

    def fit(self, X, y=None):
        self.manifest_ = split_dataset(list(X), self.seed, self.val_fraction, self.test_fraction, self.rounding)
        return self

    def predict(self, X):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "manifest_")
        return [self.manifest_.assignments[r.id] for r in X]
