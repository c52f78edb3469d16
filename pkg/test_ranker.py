import numpy as np
import pytest

from errors import ContractViolation
from numerics import Prng
from ranker import RankerConfig, RankingList, rank_candidates, train_ranker


def _lists(seed, n_lists=30, n_candidates=8, noise=0.3):
    """Feature 0 is informative (relevant gets +1), feature 1 is pure noise."""
    prng = Prng(seed)
    lists = []
    for _ in range(n_lists):
        relevant = int(prng.integers(0, n_candidates))
        features = prng.normal((n_candidates, 2), scale=noise)
        features[relevant, 0] += 1.0
        lists.append(RankingList(candidates=[f"q{i}" for i in range(n_candidates)], features=features,
                                 relevant=relevant))
    return lists


class TestTrainRanker:

    def test_learns_informative_feature(self):
        model = train_ranker(_lists(0), ["signal", "noise"], Prng(1), RankerConfig(iterations=200))
        assert model.weights[0] > 0
        assert abs(model.weights[0]) > abs(model.weights[1])
        ranks = [p.index(item.relevant) + 1 for p, item in zip(rank_candidates(model, _lists(9)), _lists(9))]
        assert np.mean([1.0 / r for r in ranks]) > 0.8

    def test_validation_selects_best_iterate(self):
        model = train_ranker(_lists(0), ["signal", "noise"], Prng(1), RankerConfig(iterations=100, eval_every=10),
                             validation=_lists(5, n_lists=10))
        assert model.metadata["iteration"] % 10 == 0
        assert model.metadata["validation_mrr"] is not None

    def test_standardization_is_fitted_on_training(self):
        lists = _lists(2)
        model = train_ranker(lists, ["signal", "noise"], Prng(1))
        stacked = np.vstack([item.features for item in lists])
        np.testing.assert_allclose(model.mean, stacked.mean(axis=0))
        np.testing.assert_allclose(model.scale, stacked.std(axis=0))

    def test_identical_features_fall_back_to_zero_weights(self, caplog):
        lists = [RankingList(candidates=["a", "b", "c"], features=np.ones((3, 2)), relevant=1)]
        model = train_ranker(lists, ["x", "y"], Prng(0))
        assert model.weights == [0.0, 0.0]
        assert model.metadata["degenerate"] is True
        assert "identical" in caplog.text

    def test_same_seed_same_model(self):
        a = train_ranker(_lists(3), ["signal", "noise"], Prng(4), RankerConfig(iterations=50))
        b = train_ranker(_lists(3), ["signal", "noise"], Prng(4), RankerConfig(iterations=50))
        assert a.weights == b.weights

    def test_requires_lists(self):
        with pytest.raises(ContractViolation):
            train_ranker([], ["x"], Prng(0))

    def test_relevant_index_checked(self):
        bad = [RankingList(candidates=["a"], features=np.ones((1, 1)), relevant=3)]
        with pytest.raises(ContractViolation):
            train_ranker(bad, ["x"], Prng(0))


def test_ties_fall_back_to_candidate_text():
    lists = [RankingList(candidates=["c", "a", "b"], features=np.ones((3, 1)), relevant=0)]
    model = train_ranker(lists, ["x"], Prng(0))
    assert rank_candidates(model, lists) == [[1, 2, 0]]
