import math
from typing import Dict, List, Optional, Sequence

from pydantic import BaseModel, model_validator

from baselines import AdjIndex, QvmmTree
from errors import ContractViolation

CONTEXT_SIMILARITY_SLOTS = 10
BASE_FEATURES = (
    ["follows_count", "anchor_frequency", "anchor_levenshtein", "candidate_chars", "candidate_words",
     "candidate_frequency"]
    + [f"ngram_similarity_{i}" for i in range(1, CONTEXT_SIMILARITY_SLOTS + 1)]
    + ["mean_context_levenshtein", "qvmm_log_prob"]
)
HRED_FEATURE = "hred_log_prob"


class FeatureVector(BaseModel):
    names: List[str]
    values: List[float]
    raw_counts: Dict[str, int] = {}

    @model_validator(mode="after")
    def _check(self) -> "FeatureVector":
        if len(self.names) != len(self.values):
            raise ValueError(f"{len(self.names)} feature names for {len(self.values)} values")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("Feature values must be finite")
        return self

    def __getitem__(self, name: str) -> float:
        return self.values[self.names.index(name)]


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, char_a in enumerate(a, start=1):
        current = [i]
        for j, char_b in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (char_a != char_b)))
        previous = current
    return previous[-1]


def char_trigrams(text: str) -> set:
    padded = f"^{text}$"
    return {padded[i:i + 3] for i in range(len(padded) - 2)}


def char_ngram_similarity(a: str, b: str) -> float:
    if not a and not b:
        return 0.0
    grams_a, grams_b = char_trigrams(a), char_trigrams(b)
    union = grams_a | grams_b
    if not union:
        return 0.0
    return len(grams_a & grams_b) / len(union)


def extract_features(context: Sequence[str], candidate: str, adj: AdjIndex, qvmm: QvmmTree,
                     hred_score: Optional[float] = None, adj_key: Optional[str] = None) -> FeatureVector:
    """Pairwise, suggestion and contextual features of one candidate.

    Frequency features are log(1+count); the raw counts are kept in `raw_counts`.
    `adj_key` replaces the anchor for the count features when candidates were
    extracted for a shortened anchor.
    """
    if not context:
        raise ContractViolation("Feature extraction needs a non-empty context")
    anchor = context[-1]
    key = adj_key if adj_key is not None else anchor

    raw_counts = {
        "follows_count": adj.follows(key, candidate),
        "anchor_frequency": adj.frequency(key),
        "candidate_frequency": adj.frequency(candidate),
    }
    recent = list(reversed(context))[:CONTEXT_SIMILARITY_SLOTS]
    similarities = [char_ngram_similarity(candidate, query) for query in recent]
    similarities += [0.0] * (CONTEXT_SIMILARITY_SLOTS - len(similarities))

    values = [
        math.log1p(raw_counts["follows_count"]),
        math.log1p(raw_counts["anchor_frequency"]),
        float(levenshtein(anchor, candidate)),
        float(len(candidate)),
        float(len(candidate.split())),
        math.log1p(raw_counts["candidate_frequency"]),
        *similarities,
        sum(levenshtein(candidate, query) for query in context) / len(context),
        qvmm.log_prob(context, candidate),
    ]
    names = list(BASE_FEATURES)
    if hred_score is not None:
        names.append(HRED_FEATURE)
        values.append(float(hred_score))
    return FeatureVector(names=names, values=values, raw_counts=raw_counts)
