"""Non-neural reference reconstructors.

Four baselines: random daughter, majority constituent (monosyllabic data
only), and two correspondence-site classifiers trained on progressively
aligned cognate sets -- a pattern-memorizing classifier with Hamming
back-off ("CorPaR-style") and a one-vs-rest linear hinge-loss classifier
trained by SGD ("SVM-style"; deliberately not a kernel QP solver).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CognateSet, Dataset, Word, token_class
from .engine.rng import DetRng, mix64, stable_hash
from .metrics import GAP, nw_align


class BaselineError(Exception):
    pass


class UnsupportedOperation(BaselineError):
    pass


def random_daughter(cs: CognateSet, seed: int) -> Word:
    """A uniformly chosen attested daughter form, verbatim.

    The choice is a pure function of (seed, set id), so rerunning an
    evaluation never reshuffles assignments.
    """
    if not cs.daughters:
        raise BaselineError(f"cognate set {cs.set_id!r} has no daughters")
    names = sorted(cs.daughters)
    rng = DetRng(mix64(seed, stable_hash(cs.set_id)))
    return cs.daughters[names[rng.randint(len(names))]]


@dataclass(frozen=True)
class SyllableParse:
    onset: Word
    nucleus: Word
    coda: Word
    tone: str | None

    def constituents(self):
        tone = (self.tone,) if self.tone is not None else ()
        return (self.onset, self.nucleus, self.coda, tone)

    def word(self) -> Word:
        return self.onset + self.nucleus + self.coda + ((self.tone,) if self.tone else ())


def parse_syllable(word: Word) -> SyllableParse | None:
    """Onset + nucleus + coda + optional trailing tone; None if the word is
    not a single syllable (internal tones, several vowel runs, no vowel)."""
    toks = list(word)
    tone = None
    if toks and token_class(toks[-1]) == "tone":
        tone = toks[-1]
        toks = toks[:-1]
    classes = [token_class(t) for t in toks]
    if "tone" in classes or "vowel" not in classes:
        return None
    first_v = classes.index("vowel")
    last_v = len(classes) - 1 - classes[::-1].index("vowel")
    if any(c != "vowel" for c in classes[first_v:last_v + 1]):
        return None  # polysyllabic
    return SyllableParse(
        onset=tuple(toks[:first_v]),
        nucleus=tuple(toks[first_v:last_v + 1]),
        coda=tuple(toks[last_v + 1:]),
        tone=tone,
    )


def supports_majority_constituent(ds: Dataset) -> bool:
    """True when at least half of the attested forms are monosyllabic."""
    forms = [w for cs in ds.sets for w in cs.daughters.values()]
    forms += [cs.proto for cs in ds.sets]
    if not forms:
        return False
    parseable = sum(parse_syllable(w) is not None for w in forms)
    return parseable * 2 >= len(forms)


def majority_constituent(train: Dataset, cs: CognateSet) -> Word:
    """Most frequent onset/nucleus/coda/tone string across the set's
    daughters, concatenated; ties break to the lexicographically smallest."""
    if not supports_majority_constituent(train):
        raise UnsupportedOperation(
            f"majority-constituent baseline needs monosyllabic data; "
            f"{train.proto_name!r} dataset is not"
        )
    parses = [p for p in (parse_syllable(w) for w in cs.daughters.values()) if p is not None]
    if not parses:
        raise BaselineError(f"no parseable daughters in set {cs.set_id!r}")
    out: list[str] = []
    for k in range(4):
        counts: dict = {}
        tokens_of: dict = {}
        for p in parses:
            part = p.constituents()[k]
            key = "".join(part)
            counts[key] = counts.get(key, 0) + 1
            tokens_of.setdefault(key, part)
        best = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        out.extend(tokens_of[best])
    if not out:
        raise BaselineError(f"majority constituents are all empty in set {cs.set_id!r}")
    return tuple(out)


# ---------------------------------------------------------------------------
# progressive multiple alignment


def _class_cost(a: str, b: str) -> float:
    if a == b:
        return 0.0
    ca, cb = token_class(a), token_class(b)
    if ca == cb and ca in ("vowel", "consonant"):
        return 0.5
    return 1.0


@dataclass
class AlignedSet:
    """One cognate set's alignment matrix: rows in daughter-name keys plus
    an optional proto row; every row has the same number of columns."""
    set_id: str
    rows: dict                    # language name -> list of symbols (GAP for gaps)
    proto_row: list | None = None

    @property
    def n_cols(self) -> int:
        for row in self.rows.values():
            return len(row)
        return 0


@dataclass
class AlignedSiteMatrix:
    sets: list
    languages: list               # LanguageId order from the source dataset
    proto_name: str


def _consensus(columns_rows: list) -> list:
    """Per column: most frequent non-gap symbol, ties to smallest."""
    n = len(columns_rows[0])
    cons = []
    for j in range(n):
        counts: dict = {}
        for row in columns_rows:
            s = row[j]
            if s != GAP:
                counts[s] = counts.get(s, 0) + 1
        cons.append(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0])
    return cons


def _progressive(ordered_words: list) -> list:
    """Align words (given as token tuples) one at a time against the running
    consensus; gaps propagate into earlier rows.  Returns the row list in
    input order."""
    rows = [list(ordered_words[0])]
    for word in ordered_words[1:]:
        cons = _consensus(rows)
        pairs = nw_align(tuple(cons), tuple(word), _class_cost)
        new_row: list = []
        col = 0
        for c_sym, w_tok in pairs:
            if c_sym is None:
                for row in rows:
                    row.insert(col, GAP)
                new_row.append(w_tok)
                col += 1
            elif w_tok is None:
                new_row.append(GAP)
                col += 1
            else:
                new_row.append(w_tok)
                col += 1
        rows.append(new_row)
    return rows


def align_daughters(cs: CognateSet, lang_index: dict) -> AlignedSet:
    """Progressive alignment of the set's attested daughters, longest first."""
    present = sorted(cs.daughters, key=lambda n: (-len(cs.daughters[n]), lang_index[n]))
    rows = _progressive([cs.daughters[n] for n in present])
    return AlignedSet(cs.set_id, dict(zip(present, rows)))


def align_cognates(ds: Dataset) -> AlignedSiteMatrix:
    """Alignments for every cognate set, each with its proto row aligned
    last so daughter-vs-daughter decisions never see the protoform."""
    if not ds.sets:
        raise BaselineError("cannot align an empty dataset")
    lang_index = {l.name: l.index for l in ds.languages}
    out = []
    for cs in ds.sets:
        aset = align_daughters(cs, lang_index)
        daughter_rows = list(aset.rows.values())
        cons = _consensus(daughter_rows)
        pairs = nw_align(tuple(cons), cs.proto, _class_cost)
        proto_row: list = []
        col = 0
        for c_sym, p_tok in pairs:
            if c_sym is None:
                for row in daughter_rows:
                    row.insert(col, GAP)
                proto_row.append(p_tok)
            elif p_tok is None:
                proto_row.append(GAP)
            else:
                proto_row.append(p_tok)
            col += 1
        aset.proto_row = proto_row
        out.append(aset)
    return AlignedSiteMatrix(out, list(ds.languages), ds.proto_name)


# ---------------------------------------------------------------------------
# correspondence-site classifiers


@dataclass(frozen=True)
class ContextConfig:
    """Which context feature families accompany the symbol one-hots."""
    use_pos: bool = True   # relative-position bucket
    use_str: bool = True   # prosodic class of the column majority
    use_ini: bool = True   # word-initial / word-final flags


def _pos_bucket(col: int, n: int) -> str:
    if col == 0:
        return "first"
    if col == n - 1:
        return "last"
    f = col / (n - 1)
    if f < 1 / 3:
        return "early"
    if f < 2 / 3:
        return "mid"
    return "late"


def column_features(aset: AlignedSet, col: int, cfg: ContextConfig) -> frozenset:
    atoms = [("sym", name, row[col]) for name, row in aset.rows.items()]
    n = aset.n_cols
    if cfg.use_pos:
        atoms.append(("pos", _pos_bucket(col, n)))
    if cfg.use_str:
        counts: dict = {}
        for _, row in aset.rows.items():
            if row[col] != GAP:
                counts[token_class(row[col])] = counts.get(token_class(row[col]), 0) + 1
        cls = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0] if counts else "gap"
        atoms.append(("str", cls))
    if cfg.use_ini:
        if col == 0:
            atoms.append(("ini", "initial"))
        if col == n - 1:
            atoms.append(("ini", "final"))
    return frozenset(atoms)


class PatternClassifier:
    """Memorizes training columns; unseen columns back off to the nearest
    stored column by Hamming distance over active features."""

    kind = "pattern"

    def __init__(self, cfg: ContextConfig, lang_index: dict):
        self.cfg = cfg
        self.lang_index = lang_index
        self.patterns: dict = {}   # frozenset(atom) -> {label: count}

    def fit(self, columns):
        for atoms, label in columns:
            self.patterns.setdefault(atoms, {})
            self.patterns[atoms][label] = self.patterns[atoms].get(label, 0) + 1

    @staticmethod
    def _majority(counts: dict) -> str:
        return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]

    def predict(self, atoms: frozenset) -> str:
        hit = self.patterns.get(atoms)
        if hit is not None:
            return self._majority(hit)
        best_d, merged = None, {}
        for key, counts in self.patterns.items():
            d = len(key ^ atoms)
            if best_d is None or d < best_d:
                best_d, merged = d, dict(counts)
            elif d == best_d:
                for label, c in counts.items():
                    merged[label] = merged.get(label, 0) + c
        return self._majority(merged)

    def dump(self) -> str:
        lines = [f"pattern-classifier features={self.cfg}"]
        for key in sorted(self.patterns, key=sorted):
            counts = self.patterns[key]
            feats = " ".join(":".join(map(str, a)) for a in sorted(key))
            label = max(counts.items(), key=lambda kv: kv[1])[0]
            lines.append(f"{label}\t{feats}")
        return "\n".join(lines) + "\n"


class LinearClassifier:
    """One-vs-rest linear classifiers under hinge loss, trained by SGD
    (50 epochs, lr 0.1 decaying as 1/epoch, L2 1e-4 applied per epoch,
    seeded shuffles)."""

    kind = "linear"
    EPOCHS = 50
    LR = 0.1
    L2 = 1e-4

    def __init__(self, cfg: ContextConfig, lang_index: dict, seed: int = 0):
        self.cfg = cfg
        self.lang_index = lang_index
        self.seed = seed
        self.feature_index: dict = {}
        self.classes: list = []
        self.W: np.ndarray | None = None
        self.b: np.ndarray | None = None

    def _vectorize(self, atoms: frozenset) -> list:
        return sorted(self.feature_index[a] for a in atoms if a in self.feature_index)

    def fit(self, columns):
        atoms_all = sorted({a for atoms, _ in columns for a in atoms})
        self.feature_index = {a: i for i, a in enumerate(atoms_all)}
        self.classes = sorted({label for _, label in columns})
        class_index = {c: i for i, c in enumerate(self.classes)}
        data = [(self._vectorize(atoms), class_index[label]) for atoms, label in columns]
        n_cls, n_feat = len(self.classes), len(atoms_all)
        self.W = np.zeros((n_cls, n_feat))
        self.b = np.zeros(n_cls)
        rng = DetRng(mix64(0x11EA2, self.seed))
        y = np.full(n_cls, -1.0)
        for epoch in range(self.EPOCHS):
            lr = self.LR / (1 + epoch)
            rng.shuffle(data)
            for idx, ci in data:
                y[:] = -1.0
                y[ci] = 1.0
                scores = self.W[:, idx].sum(axis=1) + self.b
                viol = (y * scores) < 1.0
                if viol.any():
                    step = lr * y * viol
                    self.W[np.ix_(viol, idx)] += step[viol, None]
                    self.b += step
            self.W *= 1.0 - lr * self.L2 * len(data)

    def predict(self, atoms: frozenset) -> str:
        idx = self._vectorize(atoms)
        scores = (self.W[:, idx].sum(axis=1) if idx else np.zeros(len(self.classes))) + self.b
        return self.classes[int(np.argmax(scores))]

    def training_accuracy(self, columns) -> float:
        hits = sum(self.predict(atoms) == label for atoms, label in columns)
        return hits / len(columns)

    def dump(self) -> str:
        lines = [f"linear-classifier features={self.cfg} classes={len(self.classes)}"]
        inv = {i: a for a, i in self.feature_index.items()}
        for ci, cls in enumerate(self.classes):
            top = np.argsort(-self.W[ci])[:10]
            feats = " ".join(f"{':'.join(map(str, inv[j]))}={self.W[ci, j]:+.3f}" for j in top)
            lines.append(f"{cls}\tb={self.b[ci]:+.3f}\t{feats}")
        return "\n".join(lines) + "\n"


def training_columns(sites: AlignedSiteMatrix, cfg: ContextConfig) -> list:
    cols = []
    for aset in sites.sets:
        if aset.proto_row is None:
            raise BaselineError(f"aligned set {aset.set_id!r} lacks a proto row")
        for j in range(aset.n_cols):
            cols.append((column_features(aset, j, cfg), aset.proto_row[j]))
    return cols


def train_site_classifier(sites: AlignedSiteMatrix, kind: str,
                          feats: ContextConfig = ContextConfig(), seed: int = 0):
    """Fit a correspondence-site classifier on aligned training columns."""
    if not sites.sets:
        raise BaselineError("no aligned sites to train on")
    lang_index = {l.name: l.index for l in sites.languages}
    columns = training_columns(sites, feats)
    if kind == "pattern":
        clf = PatternClassifier(feats, lang_index)
    elif kind == "linear":
        clf = LinearClassifier(feats, lang_index, seed)
    else:
        raise BaselineError(f"unknown classifier kind {kind!r}")
    clf.fit(columns)
    return clf


def reconstruct_with_classifier(clf, cs: CognateSet) -> Word:
    """Align the set's daughters, predict a proto symbol per column, drop
    the gaps.  An all-gap prediction yields an empty word."""
    aset = align_daughters(cs, clf.lang_index)
    out = []
    for j in range(aset.n_cols):
        label = clf.predict(column_features(aset, j, clf.cfg))
        if label != GAP:
            out.append(label)
    return tuple(out)
