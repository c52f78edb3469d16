"""Synthetic query logs for sanity checks and the context-sensitivity experiment."""
import logging
from typing import List, Sequence

import numpy as np

from corpus import RawLogRecord
from numerics import Prng

logger = logging.getLogger(__name__)

SESSION_SPACING_SECONDS = 3600
QUERY_SPACING_SECONDS = 60

TOPICS = (
    "boston", "chicago", "denver", "houston", "miami", "seattle", "atlanta", "dallas",
    "phoenix", "portland", "austin", "detroit", "memphis", "orlando", "tampa", "raleigh",
    "omaha", "tulsa", "reno", "boise", "fresno", "tucson", "buffalo", "richmond",
)
ANCHORS = ("cheap flights", "hotel deals")
NAVIGATIONAL = ("google", "facebook", "youtube", "yahoo", "weather")
MARKOV_WORDS = ("red", "blue", "green", "shoes", "shirt", "jacket", "sale", "store", "online", "cheap")


def _records(user_id: str, start: int, queries: Sequence[str]) -> List[RawLogRecord]:
    return [RawLogRecord(user_id=user_id, query_text=query, timestamp=start + i * QUERY_SPACING_SECONDS)
            for i, query in enumerate(queries)]


def time_cutoffs(n_sessions: int, fractions: Sequence[float] = (0.5, 0.2, 0.15)) -> List[int]:
    """Cutoffs splitting sessions generated here into background/training/validation/test by share."""
    bounds = np.cumsum(fractions)
    return [int(round(b * n_sessions)) * SESSION_SPACING_SECONDS for b in bounds]


def markov_log(prng: Prng, n_sessions: int = 200, n_queries: int = 30, max_length: int = 5) -> List[RawLogRecord]:
    queries = []
    for i in range(n_queries):
        first = MARKOV_WORDS[i % len(MARKOV_WORDS)]
        second = MARKOV_WORDS[(i * 7 + 3) % len(MARKOV_WORDS)]
        queries.append(f"{first} {second}" if first != second else first)
    transitions = prng.uniform(0.0, 1.0, (n_queries, n_queries)) ** 4
    transitions /= transitions.sum(axis=1, keepdims=True)

    records = []
    for n in range(n_sessions):
        length = int(prng.integers(2, max_length + 1))
        state = int(prng.integers(0, n_queries))
        session = [queries[state]]
        for _ in range(length - 1):
            state = int(prng.choice(n_queries, p=transitions[state]))
            session.append(queries[state])
        records.extend(_records(f"user{n:06d}", n * SESSION_SPACING_SECONDS, session))
    return records


def context_dependent_log(prng: Prng, n_sessions: int = 2000, n_topics: int = len(TOPICS),
                          navigational_rate: float = 0.3, noise_rate: float = 0.2,
                          topic_skew: float = 0.5) -> List[RawLogRecord]:
    """Sessions "<t> guide" -> anchor -> "<t> tickets" with a distractor anchor.

    The last query depends only on the first one, so a model that ignores the
    context beyond the anchor cannot tell the `n_topics` successors of an anchor
    apart beyond their overall popularity (topic k is drawn with weight
    1 / (k + 1) ** topic_skew). A `navigational_rate` share of the sessions are
    short navigational sessions, which puts those queries among the most frequent
    in the log; a `noise_rate` share of the topic sessions gets one navigational
    query inserted before the last query.
    """
    topics = TOPICS[:n_topics]
    weights = 1.0 / np.arange(1, len(topics) + 1) ** topic_skew
    weights /= weights.sum()

    records = []
    for n in range(n_sessions):
        start = n * SESSION_SPACING_SECONDS
        user_id = f"user{n:06d}"
        if prng.random() < navigational_rate:
            first = NAVIGATIONAL[int(prng.integers(0, len(NAVIGATIONAL)))]
            second = NAVIGATIONAL[int(prng.integers(0, len(NAVIGATIONAL)))]
            records.extend(_records(user_id, start, [first, second]))
            continue
        topic = topics[int(prng.choice(len(topics), p=weights))]
        anchor = ANCHORS[int(prng.integers(0, len(ANCHORS)))]
        queries = [f"{topic} guide", anchor]
        if prng.random() < noise_rate:
            position = int(prng.integers(0, len(queries) + 1))
            queries.insert(position, NAVIGATIONAL[int(prng.integers(0, len(NAVIGATIONAL)))])
        records.extend(_records(user_id, start, queries + [f"{topic} tickets"]))
    logger.info("Generated %d synthetic sessions over %d topics", n_sessions, len(topics))
    return records
