import itertools

import numpy as np
import pytest

from corpus import EOQ_ID, UNK_ID, Vocabulary
from decoding import (BeamConfig, SuggestionService, SuggestRequest, beam_search, rescore, rescore_candidates,
                      suggest)
from errors import ContractViolation
from model import (Hyper, _gru_forward, decoder_init, encode_session, next_word_log_distribution, query_log_prob,
                   random_params, zero_params)
from numerics import Prng

SMALL = Hyper(V=5, d_h=4, d_s=5, d_e=3)


def _empty_query_log_prob(params, context):
    d_0 = decoder_init(params, encode_session(params, context)[-1])
    return float(next_word_log_distribution(params, d_0, None)[EOQ_ID])


def _brute_force(params, context, max_length):
    """Every query of content words (ids 2..V-1) up to max_length, best first."""
    scored = [((EOQ_ID,), _empty_query_log_prob(params, context))]
    for length in range(1, max_length + 1):
        for words in itertools.product(range(2, params.hyper.V), repeat=length):
            scored.append((words + (EOQ_ID,), rescore(params, context, list(words))))
    return sorted(scored, key=lambda item: (-item[1], len(item[0]), list(item[0])))


def _greedy(params, context, max_length):
    d = decoder_init(params, encode_session(params, context)[-1])
    tokens, total, w_prev = [], 0.0, None
    while True:
        log_probs = next_word_log_distribution(params, d, w_prev)
        log_probs[UNK_ID] = -np.inf
        if len(tokens) >= max_length:
            token = EOQ_ID
        else:
            token = int(np.argmax(log_probs))
        total += float(log_probs[token])
        tokens.append(token)
        if token == EOQ_ID:
            return tokens, total
        d = _gru_forward(params.gru_dec, d, token).h
        w_prev = token


@pytest.fixture
def vocab():
    return Vocabulary(["cheap", "flights", "boston"])


class TestBeamSearch:

    def test_saturated_beam_matches_brute_force_over_seeds(self):
        config = BeamConfig(width=200, max_length=4)
        for seed in range(100):
            prng = Prng(seed)
            params = random_params(SMALL, prng.fork(0))
            context = [[int(t) for t in prng.integers(2, SMALL.V, size=2)]]
            expected = _brute_force(params, context, config.max_length)
            found = beam_search(params, context, config)
            assert len(found) == len(expected) == 121
            assert found[0].tokens == list(expected[0][0]), f"seed {seed}"
            assert found[0].log_prob == expected[0][1]
            assert [h.tokens for h in found[:10]] == [list(t) for t, _ in expected[:10]]

    def test_width_one_is_at_least_greedy(self):
        for seed in range(10):
            params = random_params(SMALL, Prng(seed))
            context = [[2, 3], [4]]
            (best,) = beam_search(params, context, BeamConfig(width=1, max_length=4))
            _, total = _greedy(params, context, 4)
            assert best.log_prob >= total

    def test_doubling_width_never_lowers_best_score(self):
        hyper = Hyper(V=8, d_h=4, d_s=5, d_e=3)
        for seed in range(100):
            prng = Prng(seed)
            params = random_params(hyper, prng.fork(0))
            for name, array in params.named_arrays():
                params.set(name, 3.0 * array)
            context = [[int(t) for t in prng.integers(2, hyper.V, size=2)]]
            for k in (1, 2, 3):
                narrow = beam_search(params, context, BeamConfig(width=k, max_length=4))[0].log_prob
                wide = beam_search(params, context, BeamConfig(width=2 * k, max_length=4))[0].log_prob
                assert wide >= narrow, f"seed {seed} k {k}"

    def test_hypotheses_are_complete_and_bounded(self, toy_params):
        config = BeamConfig(width=7, max_length=3)
        found = beam_search(toy_params, [[4, 5]], config)
        assert 1 <= len(found) <= 7
        for hyp in found:
            assert hyp.complete and hyp.tokens[-1] == EOQ_ID
            assert len(hyp.tokens) <= config.max_length + 1
            assert UNK_ID not in hyp.tokens
        scores = [h.log_prob for h in found]
        assert scores == sorted(scores, reverse=True)

    def test_beam_score_equals_rescore(self, toy_params):
        context = [[3, 4], [5]]
        for hyp in beam_search(toy_params, context, BeamConfig(width=5, max_length=4)):
            if hyp.words:
                assert rescore(toy_params, context, hyp.words) == hyp.log_prob

    def test_empty_context_rejected(self, toy_params):
        with pytest.raises(ContractViolation):
            beam_search(toy_params, [], BeamConfig())

    def test_length_normalization_reorders_by_mean(self, toy_params):
        found = beam_search(toy_params, [[2]], BeamConfig(width=10, max_length=3, length_normalize=True))
        normalized = [h.log_prob / len(h.tokens) for h in found]
        assert normalized == sorted(normalized, reverse=True)


class TestRescore:

    def test_empty_context_uses_zero_state(self, toy_params):
        assert rescore(toy_params, [], [3, 4]) == query_log_prob(toy_params, np.zeros(12), [3, 4])

    def test_zero_model_scores_every_candidate_uniformly(self):
        params = zero_params(SMALL)
        scores = rescore_candidates(params, [[2, 3], [4]], [[2], [3, 4], [4, 4, 2]])
        np.testing.assert_allclose(scores, [2 * np.log(0.2), 3 * np.log(0.2), 4 * np.log(0.2)], atol=1e-12)

    def test_empty_candidate_rejected(self, toy_params):
        with pytest.raises(ContractViolation):
            rescore(toy_params, [[2]], [])

    def test_many_candidates_share_one_context(self, toy_params):
        context = [[2, 3], [7]]
        candidates = [[4], [5, 6], [8, 9, 10]]
        assert rescore_candidates(toy_params, context, candidates) == \
            [rescore(toy_params, context, c) for c in candidates]


class TestSuggest:

    def test_suggestions_are_distinct_non_empty_text(self, vocab):
        params = random_params(SMALL, Prng(3))
        suggestions = suggest(params, [[2, 3]], 5, vocab, BeamConfig(max_length=3))
        assert 1 <= len(suggestions) <= 5
        texts = [text for text, _ in suggestions]
        assert len(set(texts)) == len(texts)
        assert all(text and set(text.split()) <= {"cheap", "flights", "boston"} for text in texts)
        scores = [score for _, score in suggestions]
        assert scores == sorted(scores, reverse=True)


class TestSuggestionService:

    def test_vocabulary_size_must_match(self, toy_params, vocab):
        with pytest.raises(ContractViolation, match="V=20"):
            SuggestionService(toy_params, vocab, BeamConfig())

    def test_process_request(self, vocab):
        service = SuggestionService(random_params(SMALL, Prng(3)), vocab, BeamConfig(max_length=3))
        response = service.process_request(SuggestRequest(context=["Cheap Flights!", "boston"], k=3))
        assert response.context == ["Cheap Flights!", "boston"]
        assert 1 <= len(response.suggestions) <= 3

    def test_context_empty_after_normalization(self, vocab):
        service = SuggestionService(random_params(SMALL, Prng(3)), vocab, BeamConfig())
        with pytest.raises(ContractViolation, match="empty"):
            service.process_request(SuggestRequest(context=["???"]))

    def test_rescore_matches_token_level_rescore(self, vocab):
        params = random_params(SMALL, Prng(4))
        service = SuggestionService(params, vocab, BeamConfig())
        (scored,) = service.rescore(["cheap"], ["Boston flights"])
        assert scored.text == "Boston flights"
        assert scored.score == rescore(params, [[2]], [4, 3])
