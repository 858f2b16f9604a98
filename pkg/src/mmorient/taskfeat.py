"""Per-sample task-specific features: emotion-lexicon counts, sentiment
one-hot, and the toxicity vector, concatenated in that fixed order.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .errors import DataError

EMOTION_CATEGORIES = (
    "fear", "anger", "anticipation", "trust", "surprise",
    "positive", "negative", "sadness", "disgust", "joy",
)
_CATEGORY_INDEX = {name: i for i, name in enumerate(EMOTION_CATEGORIES)}

SENTIMENT_WIDTH = 5


class EmotionLexicon:
    """Lowercased word -> subset of the ten emotion categories."""

    def __init__(self, entries):
        self._entries = {}
        for word, cats in entries.items():
            cats = frozenset(cats)
            for cat in cats:
                if cat not in _CATEGORY_INDEX:
                    raise DataError(f"unknown emotion category {cat!r} for word {word!r}")
            self._entries[word.lower()] = cats

    def categories(self, word):
        return self._entries.get(word, frozenset())

    def words(self):
        return self._entries.keys()

    def __len__(self):
        return len(self._entries)


def parse_lexicon(text, source="<string>"):
    """Parse ``word<TAB>cat1,cat2`` lines; ``#`` comments and blanks allowed."""
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise DataError(f"{source}:{lineno}: expected 'word<TAB>cat1,cat2,...'")
        word, cats = parts
        names = [c.strip() for c in cats.split(",") if c.strip()]
        if not names:
            raise DataError(f"{source}:{lineno}: no categories listed")
        for name in names:
            if name not in _CATEGORY_INDEX:
                raise DataError(f"{source}:{lineno}: unknown emotion category {name!r}")
        entries[word.lower()] = frozenset(names)
    return EmotionLexicon(entries)


def load_lexicon(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_lexicon(fh.read(), source=str(path))


def load_default_lexicon():
    """The 50-word toy lexicon shipped with the package."""
    text = resources.files("mmorient.data").joinpath("toy_lexicon.txt").read_text("utf-8")
    return parse_lexicon(text, source="toy_lexicon.txt")


def emotion_features(cleaned_text, lexicon):
    """Count token occurrences per category; a word in k categories bumps k entries.

    Tokens are whitespace splits of already-cleaned text.
    """
    counts = np.zeros(len(EMOTION_CATEGORIES), dtype=np.float64)
    for token in cleaned_text.split():
        for cat in lexicon.categories(token):
            counts[_CATEGORY_INDEX[cat]] += 1.0
    return counts


def encode_sentiment(code):
    """One-hot over the five sentiment levels (0 very negative .. 4 very positive)."""
    code = int(code)
    if not 0 <= code < SENTIMENT_WIDTH:
        raise DataError(f"sentiment code {code} outside [0, {SENTIMENT_WIDTH - 1}]")
    out = np.zeros(SENTIMENT_WIDTH, dtype=np.float64)
    out[code] = 1.0
    return out


def assemble_task_features(emotion, sentiment, toxicity):
    """Concatenate emotion || sentiment || toxicity in fixed order."""
    emotion = np.asarray(emotion, dtype=np.float64)
    sentiment = np.asarray(sentiment, dtype=np.float64)
    toxicity = np.asarray(toxicity, dtype=np.float64)
    if emotion.shape != (len(EMOTION_CATEGORIES),):
        raise DataError(f"emotion block must have length {len(EMOTION_CATEGORIES)}, got {emotion.shape}")
    if sentiment.shape != (SENTIMENT_WIDTH,):
        raise DataError(f"sentiment block must have length {SENTIMENT_WIDTH}, got {sentiment.shape}")
    if toxicity.ndim != 1:
        raise DataError(f"toxicity block must be 1-D, got shape {toxicity.shape}")
    return np.concatenate([emotion, sentiment, toxicity])


def task_feature_width(toxicity_width):
    return len(EMOTION_CATEGORIES) + SENTIMENT_WIDTH + toxicity_width


def task_feature_matrix(bundle, lexicon=None):
    """N x (10 + 5 + toxicity_width) feature matrix for a whole bundle."""
    lexicon = lexicon if lexicon is not None else load_default_lexicon()
    rows = []
    for i, rec in enumerate(bundle.records):
        rows.append(assemble_task_features(
            emotion_features(rec.cleaned_text, lexicon),
            encode_sentiment(int(bundle.sentiment_codes[i])),
            bundle.toxicity[i],
        ))
    return np.stack(rows, axis=0)
