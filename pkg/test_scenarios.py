from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare

from baselines import build_adj
from conftest import text_session
from errors import DataError
from numerics import Prng
from scenarios import (N_CANDIDATES, ScenarioInstance, anchor_prefix, build_longtail_scenario,
                       build_next_query_scenario, build_robust_scenario, noisy_queries, read_instances,
                       write_instances)

SUCCESSORS = [f"successor {i:02d}" for i in range(25)]


def _background():
    """'airlines' is followed by 25 successors; successor k occurs 25 - k times."""
    sessions = []
    for k, successor in enumerate(SUCCESSORS):
        sessions += [["airlines", successor]] * (25 - k)
    sessions += [["hotels", "hotels boston"]] * 3
    return sessions


@pytest.fixture
def adj():
    return build_adj(_background())


def _instance(context, target_index=2):
    candidates = SUCCESSORS[:N_CANDIDATES]
    return ScenarioInstance(context=context, target=candidates[target_index], candidates=candidates,
                            relevant=target_index)


class TestScenarioInstance:

    def test_requires_exactly_twenty_candidates(self):
        with pytest.raises(ValueError, match="candidates"):
            ScenarioInstance(context=["a"], target="x", candidates=["x"], relevant=0)

    def test_target_must_sit_at_relevant_index(self):
        with pytest.raises(ValueError, match="relevant"):
            ScenarioInstance(context=["a"], target=SUCCESSORS[0], candidates=SUCCESSORS[:20], relevant=3)

    def test_anchor_and_session_length(self):
        instance = _instance(["google", "airlines"])
        assert instance.anchor == "airlines"
        assert instance.adj_key == "airlines"
        assert instance.session_length == 3


class TestNextQuery:

    def test_emits_instance_with_target_slot(self, adj):
        sessions = [text_session("google", "airlines", SUCCESSORS[2])]
        (instance,) = build_next_query_scenario(sessions, adj)
        assert instance.context == ["google", "airlines"]
        assert instance.relevant == 2
        assert instance.candidates == SUCCESSORS[:20]

    def test_anchor_with_too_few_successors_is_skipped(self, adj):
        assert build_next_query_scenario([text_session("hotels", "hotels boston")], adj) == []

    def test_target_outside_top_twenty_is_skipped(self, adj):
        assert build_next_query_scenario([text_session("airlines", SUCCESSORS[22])], adj) == []

    def test_single_query_sessions_ignored(self, adj):
        assert build_next_query_scenario([text_session("airlines")], adj) == []


class TestRobust:

    def test_worked_example_shape(self, adj):
        corrupted = build_robust_scenario([_instance(["airlines", "united airlines"])], adj, Prng(0))
        (instance,) = corrupted
        assert len(instance.context) == 3
        assert instance.candidates == SUCCESSORS[:20]
        assert instance.target == SUCCESSORS[2]
        remaining = list(instance.context)
        for query in ["airlines", "united airlines"]:
            remaining.remove(query)
        assert remaining[0] in dict(noisy_queries(adj))

    def test_adj_key_follows_new_anchor(self, adj):
        corrupted = build_robust_scenario([_instance(["airlines"])] * 50, adj, Prng(1))
        assert all(i.adj_key == i.context[-1] for i in corrupted)

    def test_same_seed_same_corruption(self, adj):
        instances = [_instance(["a", "b", "c"])] * 20
        first = build_robust_scenario(instances, adj, Prng(5))
        second = build_robust_scenario(instances, adj, Prng(5))
        assert [i.context for i in first] == [i.context for i in second]

    def test_sampler_statistics(self, adj):
        context = ["q1", "q2", "q3"]
        corrupted = build_robust_scenario([_instance(context)] * 10000, adj, Prng(2024))

        noise, positions = [], []
        for instance in corrupted:
            # q1..q3 never occur in the background, so the inserted query is the one outside `context`
            (position,) = [i for i, query in enumerate(instance.context) if query not in context]
            noise.append(instance.context[position])
            positions.append(position)

        top = noisy_queries(adj)
        target = np.array([count for _, count in top], dtype=float)
        target /= target.sum()
        observed = Counter(noise)
        empirical = np.array([observed[query] / len(noise) for query, _ in top])
        assert 0.5 * np.abs(empirical - target).sum() < 0.05
        assert sum(observed.values()) == sum(observed[q] for q, _ in top)

        position_counts = np.bincount(positions, minlength=len(context) + 1)
        assert chisquare(position_counts).pvalue > 0.01

    def test_empty_background_rejected(self, adj):
        adj.frequencies.clear()
        with pytest.raises(DataError):
            build_robust_scenario([_instance(["a"])], adj, Prng(0))


class TestLongTail:

    def test_prefix_drops_terms_from_the_right(self, adj):
        assert anchor_prefix("airlines cheap tickets", adj) == "airlines"
        assert anchor_prefix("hotels boston downtown", adj) == "hotels boston"
        assert anchor_prefix("zzz airlines", adj) is None

    def test_unseen_anchor_keyed_on_prefix(self, adj):
        sessions = [text_session("google", "airlines cheap", SUCCESSORS[4])]
        (instance,) = build_longtail_scenario(sessions, adj)
        assert instance.anchor == "airlines cheap"
        assert instance.adj_key == "airlines"
        assert instance.relevant == 4

    def test_seen_anchor_excluded(self, adj):
        assert build_longtail_scenario([text_session("x", "airlines", SUCCESSORS[0])], adj) == []

    def test_no_matching_prefix_skipped(self, adj):
        assert build_longtail_scenario([text_session("x", "qqq rrr", SUCCESSORS[0])], adj) == []


def test_instance_file_round_trip(tmp_path):
    instances = [_instance(["google", "airlines"], 2), _instance(["airlines"], 7)]
    write_instances(tmp_path / "next.instances", instances)
    loaded = read_instances(tmp_path / "next.instances")
    assert [(i.context, i.target, i.candidates, i.relevant, i.adj_key) for i in loaded] == \
        [(i.context, i.target, i.candidates, i.relevant, i.adj_key) for i in instances]


def test_instance_file_keeps_shortened_adjacency_key(tmp_path, adj):
    (instance,) = build_longtail_scenario([text_session("google", "airlines cheap", SUCCESSORS[4])], adj)
    write_instances(tmp_path / "longtail.instances", [instance])
    (loaded,) = read_instances(tmp_path / "longtail.instances")
    assert loaded.anchor == "airlines cheap"
    assert loaded.adj_key == "airlines"


def test_malformed_instance_file(tmp_path):
    path = tmp_path / "bad.instances"
    path.write_text("a\tb\tc\n", encoding="utf-8")
    with pytest.raises(DataError, match="bad.instances:1"):
        read_instances(path)
