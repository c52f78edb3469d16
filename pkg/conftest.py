import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from corpus import RawLogRecord, Session, TextSession  # noqa: E402
from model import Hyper, random_params  # noqa: E402
from numerics import Prng  # noqa: E402


def random_session(prng: Prng, V: int, n_queries: int = 3, max_words: int = 3) -> Session:
    """Session of random content-word ids (2..V-1), one to max_words words per query."""
    queries = []
    for _ in range(n_queries):
        length = int(prng.integers(1, max_words + 1))
        queries.append([int(t) for t in prng.integers(2, V, size=length)])
    return Session(queries=queries, start_time=0, end_time=0)


def text_session(*queries: str, start: int = 0) -> TextSession:
    return TextSession(queries=list(queries), start_time=start, end_time=start)


@pytest.fixture
def toy_hyper():
    return Hyper(V=20, d_h=8, d_s=12, d_e=6)


@pytest.fixture
def toy_params(toy_hyper):
    return random_params(toy_hyper, Prng(7))


@pytest.fixture
def toy_session(toy_hyper):
    return random_session(Prng(11), toy_hyper.V)


@pytest.fixture
def toy_records():
    # user a: two sessions split by a 31-minute gap; user b: one session
    return [
        RawLogRecord(user_id="a", query_text="Cheap Flights", timestamp=100),
        RawLogRecord(user_id="a", query_text="cheap flights boston", timestamp=160),
        RawLogRecord(user_id="b", query_text="weather", timestamp=120),
        RawLogRecord(user_id="b", query_text="weather boston", timestamp=200),
        RawLogRecord(user_id="a", query_text="boston hotels", timestamp=160 + 1860),
        RawLogRecord(user_id="a", query_text="boston hotels downtown", timestamp=160 + 1900),
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(42)
