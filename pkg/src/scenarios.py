"""Next-query, robust and long-tail test scenarios over ADJ candidate lists."""
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, model_validator

from baselines import AdjIndex, adj_candidates
from corpus import TextSession
from errors import DataError
from numerics import Prng

logger = logging.getLogger(__name__)

N_CANDIDATES = 20
NOISY_TOP_N = 100
FIELD_SEPARATOR = "|||"


class ScenarioInstance(BaseModel):
    context: List[str]
    target: str
    candidates: List[str]
    relevant: int
    adj_key: Optional[str] = None

    @model_validator(mode="after")
    def _check(self) -> "ScenarioInstance":
        if not self.context:
            raise ValueError("Instance context must hold at least one query")
        if len(self.candidates) != N_CANDIDATES:
            raise ValueError(f"Instance has {len(self.candidates)} candidates, expected {N_CANDIDATES}")
        if self.candidates.count(self.target) != 1 or self.candidates[self.relevant] != self.target:
            raise ValueError("Target must appear exactly once, at the relevant index")
        if self.adj_key is None:
            self.adj_key = self.context[-1]
        return self

    @property
    def anchor(self) -> str:
        return self.context[-1]

    @property
    def session_length(self) -> int:
        return len(self.context) + 1


def _instance(context: Sequence[str], target: str, index: AdjIndex, key: str) -> Optional[ScenarioInstance]:
    candidates = [query for query, _ in adj_candidates(index, key, N_CANDIDATES)]
    if len(candidates) < N_CANDIDATES or target not in candidates:
        return None
    return ScenarioInstance(context=list(context), target=target, candidates=candidates,
                            relevant=candidates.index(target), adj_key=key)


def _queries(session) -> List[str]:
    return list(session.queries)


def build_next_query_scenario(sessions: Iterable[TextSession], adj: AdjIndex) -> List[ScenarioInstance]:
    instances = []
    seen = 0
    for session in sessions:
        queries = _queries(session)
        if len(queries) < 2:
            continue
        seen += 1
        instance = _instance(queries[:-1], queries[-1], adj, queries[-2])
        if instance is not None:
            instances.append(instance)
    logger.info("Next-query scenario: %d instances from %d sessions", len(instances), seen)
    return instances


def noisy_queries(adj: AdjIndex, top_n: int = NOISY_TOP_N) -> List[tuple]:
    return adj.top_queries(top_n)


def build_robust_scenario(instances: Sequence[ScenarioInstance], adj: AdjIndex, prng: Prng,
                          top_n: int = NOISY_TOP_N) -> List[ScenarioInstance]:
    noisy = noisy_queries(adj, top_n)
    if not noisy:
        raise DataError("No background queries to sample noise from")
    counts = np.array([count for _, count in noisy], dtype=float)
    probabilities = counts / counts.sum()

    corrupted = []
    for instance in instances:
        query = noisy[int(prng.choice(len(noisy), p=probabilities))][0]
        # len(context) + 1 slots, the last one after the anchor
        position = int(prng.integers(0, len(instance.context) + 1))
        context = instance.context[:position] + [query] + instance.context[position:]
        corrupted.append(instance.model_copy(update={'context': context, 'adj_key': context[-1]}))
    return corrupted


def anchor_prefix(anchor: str, adj: AdjIndex) -> Optional[str]:
    words = anchor.split()
    for cut in range(len(words) - 1, 0, -1):
        prefix = " ".join(words[:cut])
        if prefix in adj:
            return prefix
    return None


def build_longtail_scenario(sessions: Iterable[TextSession], adj: AdjIndex) -> List[ScenarioInstance]:
    instances = []
    longtail = 0
    for session in sessions:
        queries = _queries(session)
        if len(queries) < 2 or queries[-2] in adj:
            continue
        longtail += 1
        prefix = anchor_prefix(queries[-2], adj)
        if prefix is None:
            continue
        instance = _instance(queries[:-1], queries[-1], adj, prefix)
        if instance is not None:
            instances.append(instance)
    logger.info("Long-tail scenario: %d instances from %d sessions with unseen anchors", len(instances), longtail)
    return instances


def write_instances(path: Union[str, Path], instances: Iterable[ScenarioInstance]) -> None:
    """One line per instance: context, target, adjacency key and candidates, tab-separated,
    with the three groups after the context each opened by FIELD_SEPARATOR."""
    with open(path, 'w', encoding='utf-8') as f:
        for instance in instances:
            fields = (instance.context + [FIELD_SEPARATOR, instance.target, FIELD_SEPARATOR, instance.adj_key,
                                          FIELD_SEPARATOR] + instance.candidates)
            f.write("\t".join(fields) + "\n")


def read_instances(path: Union[str, Path]) -> List[ScenarioInstance]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Instance file not found: {path}")
    instances = []
    with open(path, 'r', encoding='utf-8') as f:
        for number, line in enumerate(f, start=1):
            fields = line.rstrip('\n').split('\t')
            separators = [i for i, field in enumerate(fields) if field == FIELD_SEPARATOR]
            if len(separators) != 3 or separators[1] != separators[0] + 2 or separators[2] != separators[1] + 2:
                raise DataError(f"{path}:{number}: malformed instance, expected context ||| target ||| key "
                                f"||| candidates")
            first, second, third = separators
            target, candidates = fields[first + 1], fields[third + 1:]
            try:
                instances.append(ScenarioInstance(context=fields[:first], target=target, candidates=candidates,
                                                  relevant=candidates.index(target), adj_key=fields[second + 1]))
            except ValueError as e:
                raise DataError(f"{path}:{number}: malformed instance ({e})")
    return instances
