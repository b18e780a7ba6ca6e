"""Evaluation metrics for predicted protoforms.

Five scores per prediction set: phoneme edit distance (PED), PED
normalized by gold length (NPED), exact-match accuracy, feature error
rate over articulatory feature vectors (FER), and a B-cubed F score over
pooled alignment sites (BCFS), plus a breakdown of error types.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .corpus import TONE_CHARS, Word


class MetricsError(Exception):
    pass


GAP = "\x00-"  # reserved gap label for alignment sites; never a surface token


def edit_distance(a: Word, b: Word) -> int:
    """Levenshtein distance over tokens with unit costs."""
    m, n = len(a), len(b)
    prev = list(range(n + 1))
    for i in range(1, m + 1):
        cur = [i] + [0] * n
        ai = a[i - 1]
        for j in range(1, n + 1):
            cur[j] = min(
                prev[j - 1] + (ai != b[j - 1]),
                prev[j] + 1,
                cur[j - 1] + 1,
            )
        prev = cur
    return prev[n]


def nw_align(a: Word, b: Word, sub_cost, gap_cost: float = 1.0):
    """Minimal-cost global alignment of `a` against `b`.

    Returns a list of (a_token | None, b_token | None) columns.  Ties are
    broken deterministically: diagonal first (match/substitution), then
    consuming from `a` (deletion), then from `b` (insertion).
    """
    m, n = len(a), len(b)
    D = [[0.0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        D[i][0] = D[i - 1][0] + gap_cost
    for j in range(1, n + 1):
        D[0][j] = D[0][j - 1] + gap_cost
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            D[i][j] = min(
                D[i - 1][j - 1] + sub_cost(a[i - 1], b[j - 1]),
                D[i - 1][j] + gap_cost,
                D[i][j - 1] + gap_cost,
            )
    cols = []
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0 and D[i][j] == D[i - 1][j - 1] + sub_cost(a[i - 1], b[j - 1]):
            cols.append((a[i - 1], b[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and D[i][j] == D[i - 1][j] + gap_cost:
            cols.append((a[i - 1], None))
            i -= 1
        else:
            cols.append((None, b[j - 1]))
            j -= 1
    cols.reverse()
    return cols


@dataclass(frozen=True)
class ErrorBreakdown:
    substitutions: int
    insertions: int
    deletions: int
    substitution_pairs: tuple  # ((pred_token, gold_token), count) by falling count

    @property
    def total(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def error_breakdown(preds, golds) -> ErrorBreakdown:
    """Tally edit operations transforming each prediction into its gold.

    One optimal alignment per pair; ties prefer substitution over deletion
    over insertion, so the tally is deterministic.
    """
    if not preds or len(preds) != len(golds):
        raise MetricsError("error_breakdown needs nonempty lists of equal length")
    subs = ins = dels = 0
    pair_counts: dict = {}
    for pred, gold in zip(preds, golds):
        for pa, ga in nw_align(pred, gold, lambda x, y: 0 if x == y else 1):
            if pa is None:
                ins += 1
            elif ga is None:
                dels += 1
            elif pa != ga:
                subs += 1
                pair_counts[(pa, ga)] = pair_counts.get((pa, ga), 0) + 1
    ranked = tuple(sorted(pair_counts.items(), key=lambda kv: (-kv[1], kv[0])))
    return ErrorBreakdown(subs, ins, dels, ranked)


class FeatureTable:
    """Articulatory feature vectors (+1/-1/0) for phoneme tokens.

    Tokens absent from the table inherit their base segment's vector with
    per-diacritic overrides; tone-contour tokens map to a reserved
    all-zero vector.  Any other unknown token fails loudly.
    """

    def __init__(self, features, base, mods):
        self.features = list(features)
        self.F = len(self.features)
        self._base = base
        self._mods = mods
        self._cache: dict = {}
        self._findex = {f: i for i, f in enumerate(self.features)}

    @classmethod
    def from_csv(cls, text: str) -> "FeatureTable":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        header = lines[0].split(",")
        if header[0] != "token":
            raise MetricsError("feature CSV header must start with 'token'")
        features = header[1:]
        values = {"+": 1, "-": -1, "0": 0}
        base: dict = {}
        mods: dict = {}
        for ln in lines[1:]:
            cells = ln.split(",")
            if len(cells) != len(header):
                raise MetricsError(f"feature CSV row has {len(cells)} cells: {ln!r}")
            name = cells[0]
            if name.startswith("mod:"):
                mods[unicodedata.normalize("NFD", name[4:])] = {
                    feat: values[c] for feat, c in zip(features, cells[1:]) if c != ""
                }
            else:
                try:
                    vec = np.array([values[c] for c in cells[1:]], dtype=np.int8)
                except KeyError:
                    raise MetricsError(f"feature CSV row for {name!r} has an empty or bad cell")
                base[unicodedata.normalize("NFD", name)] = vec
        return cls(features, base, mods)

    @classmethod
    def bundled(cls) -> "FeatureTable":
        text = resources.files("protoform.data").joinpath("features.csv").read_text("utf-8")
        return cls.from_csv(text)

    def lookup(self, token: str) -> np.ndarray:
        if token in self._cache:
            return self._cache[token]
        vec = self._resolve(unicodedata.normalize("NFD", token))
        self._cache[token] = vec
        return vec

    def _resolve(self, token: str) -> np.ndarray:
        if token in self._base:
            return self._base[token]
        if all(ch in TONE_CHARS for ch in token):
            return np.zeros(self.F, dtype=np.int8)
        stem_chars, mod_chars = [], []
        for ch in token:
            cat = unicodedata.category(ch)
            if cat.startswith("M") or cat in ("Lm", "Sk"):
                if ch not in ("͡", "͜"):  # tie bars carry no features
                    mod_chars.append(ch)
            else:
                stem_chars.append(ch)
        stem = "".join(stem_chars)
        if stem not in self._base:
            raise MetricsError(f"token {token!r} not covered by the feature table")
        vec = self._base[stem].copy()
        for ch in mod_chars:
            if ch not in self._mods:
                raise MetricsError(f"token {token!r}: no feature override for {ch!r} (U+{ord(ch):04X})")
            for feat, val in self._mods[ch].items():
                vec[self._findex[feat]] = val
        return vec


def feature_error_rate(pred: Word, gold: Word, ft: FeatureTable) -> float:
    """Weighted edit distance where substituting two phonemes costs the
    fraction of differing features; indels cost 1; normalized by gold length."""

    def sub(x, y):
        if x == y:
            return 0.0
        return float(np.count_nonzero(ft.lookup(x) != ft.lookup(y))) / ft.F

    m, n = len(pred), len(gold)
    prev = [float(j) for j in range(n + 1)]
    for i in range(1, m + 1):
        cur = [float(i)] + [0.0] * n
        for j in range(1, n + 1):
            cur[j] = min(prev[j - 1] + sub(pred[i - 1], gold[j - 1]),
                         prev[j] + 1.0, cur[j - 1] + 1.0)
        prev = cur
    if n == 0:
        raise MetricsError("feature_error_rate: empty gold word")
    return prev[n] / n


def _occurrence_structure(word: Word):
    """Tokens replaced by their first-occurrence index within the word."""
    seen: dict = {}
    return [seen.setdefault(t, len(seen)) for t in word]


def bcubed_f(preds, golds) -> float:
    """B-cubed F over alignment sites pooled across the whole test set.

    Each pair is aligned by unit-cost Needleman-Wunsch; match equality is
    evaluated on the words' first-occurrence structure rather than raw
    symbols, which makes the score exactly invariant under any consistent
    relabeling of predicted symbols.  Each aligned column contributes one
    item labeled (gold symbol, pred symbol), gaps included under a
    reserved symbol.
    """
    if not preds or len(preds) != len(golds):
        raise MetricsError("bcubed_f needs nonempty lists of equal length")
    joint: dict = {}
    pred_tot: dict = {}
    gold_tot: dict = {}
    n_items = 0
    for pred, gold in zip(preds, golds):
        cp = _occurrence_structure(pred)
        cg = _occurrence_structure(gold)
        cols = nw_align(tuple(range(len(pred))), tuple(range(len(gold))),
                        lambda i, j: 0 if cp[i] == cg[j] else 1)
        for pi, gi in cols:
            p = GAP if pi is None else pred[pi]
            g = GAP if gi is None else gold[gi]
            joint[(g, p)] = joint.get((g, p), 0) + 1
            pred_tot[p] = pred_tot.get(p, 0) + 1
            gold_tot[g] = gold_tot.get(g, 0) + 1
            n_items += 1
    precision = sum(c * c / pred_tot[p] for (g, p), c in joint.items()) / n_items
    recall = sum(c * c / gold_tot[g] for (g, p), c in joint.items()) / n_items
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class MetricsReport:
    ped: float
    nped: float
    accuracy: float          # percent of exact matches
    fer: float | None        # None for orthographic data (no feature table)
    bcfs: float
    breakdown: ErrorBreakdown
    n: int


def evaluate(preds, golds, ft: FeatureTable | None = None) -> MetricsReport:
    """Score a prediction set against its gold protoforms."""
    if not preds or len(preds) != len(golds):
        raise MetricsError("evaluate needs nonempty lists of equal length")
    dists = [edit_distance(p, g) for p, g in zip(preds, golds)]
    ped = sum(dists) / len(dists)
    nped = sum(d / len(g) for d, g in zip(dists, golds)) / len(dists)
    accuracy = 100.0 * sum(d == 0 for d in dists) / len(dists)
    fer = None
    if ft is not None:
        fer = sum(feature_error_rate(p, g, ft) for p, g in zip(preds, golds)) / len(preds)
    return MetricsReport(
        ped=ped,
        nped=nped,
        accuracy=accuracy,
        fer=fer,
        bcfs=bcubed_f(preds, golds),
        breakdown=error_breakdown(preds, golds),
        n=len(preds),
    )
