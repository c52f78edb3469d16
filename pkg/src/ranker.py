"""Pairwise logistic ranker over (relevant, non-relevant) feature differences.

Stands in for a tree-ensemble learning-to-rank model: scores are a linear form
of standardized features, fitted by gradient ascent on the mean pairwise
log-likelihood with a small L2 penalty.
"""
import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from errors import ContractViolation
from numerics import Prng, sigmoid

logger = logging.getLogger(__name__)


class RankingList(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    candidates: List[str]
    features: np.ndarray
    relevant: int


class RankerConfig(BaseModel):
    learning_rate: float = Field(default=0.1, gt=0)
    iterations: int = Field(default=300, ge=1)
    l2: float = Field(default=1e-4, ge=0)
    eval_every: int = Field(default=25, ge=1)


class RankerModel(BaseModel):
    feature_names: List[str]
    weights: List[float]
    bias: float = 0.0
    mean: List[float]
    scale: List[float]
    metadata: Dict[str, Any] = {}

    def scores(self, features: np.ndarray) -> np.ndarray:
        standardized = (features - np.asarray(self.mean)) / np.asarray(self.scale)
        return standardized @ np.asarray(self.weights) + self.bias


def _check_lists(lists: Sequence[RankingList]) -> None:
    for item in lists:
        if not 0 <= item.relevant < len(item.candidates):
            raise ContractViolation(f"Relevant index {item.relevant} outside {len(item.candidates)} candidates")
        if item.features.shape[0] != len(item.candidates):
            raise ContractViolation("Feature rows do not match the candidate count")


def _pair_differences(lists: Sequence[RankingList], mean: np.ndarray, scale: np.ndarray) -> np.ndarray:
    rows = []
    for item in lists:
        standardized = (item.features - mean) / scale
        others = np.delete(standardized, item.relevant, axis=0)
        rows.append(standardized[item.relevant] - others)
    return np.vstack(rows)


def rank_candidates(model: RankerModel, lists: Sequence[RankingList]) -> List[List[int]]:
    """Candidate indices best first; equal scores fall back to candidate text order."""
    permutations = []
    for item in lists:
        scores = model.scores(item.features)
        permutations.append(sorted(range(len(item.candidates)),
                                   key=lambda i: (-scores[i], item.candidates[i])))
    return permutations


def _mrr(model: RankerModel, lists: Sequence[RankingList]) -> float:
    ranks = [permutation.index(item.relevant) + 1
             for permutation, item in zip(rank_candidates(model, lists), lists)]
    return float(np.mean([1.0 / rank for rank in ranks]))


def train_ranker(lists: Sequence[RankingList], feature_names: Sequence[str], prng: Prng,
                 config: Optional[RankerConfig] = None,
                 validation: Optional[Sequence[RankingList]] = None) -> RankerModel:
    config = config or RankerConfig()
    if not lists:
        raise ContractViolation("Cannot train a ranker without instances")
    _check_lists(lists)

    stacked = np.vstack([item.features for item in lists])
    mean = stacked.mean(axis=0)
    scale = stacked.std(axis=0)
    scale[scale == 0] = 1.0
    pairs = _pair_differences(lists, mean, scale)
    n_features = pairs.shape[1]

    def model_for(weights: np.ndarray, **metadata) -> RankerModel:
        return RankerModel(feature_names=list(feature_names), weights=[float(w) for w in weights],
                           mean=mean.tolist(), scale=scale.tolist(), metadata=metadata)

    if np.max(np.abs(pairs)) < 1e-12:
        logger.warning("All candidate features are identical; ranker falls back to zero weights")
        return model_for(np.zeros(n_features), iterations=0, degenerate=True)

    weights = prng.normal(n_features, scale=0.01)
    best = model_for(weights, iteration=0)
    best_mrr = _mrr(best, validation) if validation else None

    for iteration in range(1, config.iterations + 1):
        margin = sigmoid(-(pairs @ weights))
        gradient = pairs.T @ margin / len(pairs) - config.l2 * weights
        weights = weights + config.learning_rate * gradient

        if validation and iteration % config.eval_every == 0:
            candidate = model_for(weights, iteration=iteration)
            score = _mrr(candidate, validation)
            if score > best_mrr:
                best, best_mrr = candidate, score

    if not validation:
        best = model_for(weights, iteration=config.iterations)
    best.metadata.update({'pairs': int(len(pairs)), 'validation_mrr': best_mrr,
                          'iterations': config.iterations})
    logger.info("Ranker trained on %d pairs, kept iteration %s (validation MRR %s)",
                len(pairs), best.metadata['iteration'], best_mrr)
    return best
