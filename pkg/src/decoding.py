import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from corpus import EOQ_ID, UNK_ID, Vocabulary, normalize_query
from errors import ContractViolation
from model import (ModelParams, _gru_forward, decoder_init, encode_session, next_word_log_distribution,
                   query_log_prob)
from numerics import DTYPE

logger = logging.getLogger(__name__)

Context = Sequence[Sequence[int]]


class BeamConfig(BaseModel):
    width: int = Field(default=50, ge=1)
    max_length: int = Field(default=12, ge=1)
    forbid_unknown: bool = True
    length_normalize: bool = False


class Hypothesis(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    tokens: List[int]
    log_prob: float
    state: np.ndarray
    complete: bool = False
    completed_at: int = -1

    @property
    def words(self) -> List[int]:
        return [token for token in self.tokens if token != EOQ_ID]

    def ranking_score(self, length_normalize: bool) -> float:
        if not length_normalize:
            return self.log_prob
        return self.log_prob / len(self.tokens)


def _check_context(context: Context) -> None:
    if not context:
        raise ContractViolation("Context must contain at least one query")
    if any(len(query) == 0 for query in context):
        raise ContractViolation("Context contains an empty query")


def _context_state(params: ModelParams, context: Context) -> np.ndarray:
    if not context:
        return np.zeros(params.gru_ses.hidden_dim, dtype=DTYPE)
    return encode_session(params, context)[-1]


def _best_tokens(log_probs: np.ndarray, k: int) -> List[int]:
    order = np.argsort(-log_probs, kind="stable")
    return [int(token) for token in order[:k] if np.isfinite(log_probs[token])]


def _kth_score(completed: List[Hypothesis], k: int) -> float:
    scores = sorted((h.log_prob for h in completed), reverse=True)
    return scores[k - 1] if len(scores) >= k else -np.inf


def beam_search(params: ModelParams, context: Context, cfg: BeamConfig) -> List[Hypothesis]:
    """Keeps the `width` best unfinished prefixes per step.

    Every end-of-query expansion goes to the completed pool without taking a beam
    slot. Search stops once no live prefix scores above the width-th completion
    (extending a prefix never raises its log-probability) or all prefixes hit
    max_length.
    """
    _check_context(context)
    start = decoder_init(params, _context_state(params, context))
    live = [Hypothesis(tokens=[], log_prob=0.0, state=start)]
    completed: List[Hypothesis] = []
    step = 0

    while live:
        candidates: List[Tuple[float, List[int], Hypothesis]] = []
        for hyp in live:
            log_probs = next_word_log_distribution(params, hyp.state, hyp.tokens[-1] if hyp.tokens else None)
            if cfg.forbid_unknown:
                log_probs[UNK_ID] = -np.inf
            eoq_score = hyp.log_prob + float(log_probs[EOQ_ID])
            completed.append(Hypothesis(tokens=hyp.tokens + [EOQ_ID], log_prob=eoq_score, state=hyp.state,
                                        complete=True, completed_at=step))
            if len(hyp.tokens) >= cfg.max_length:
                continue
            log_probs[EOQ_ID] = -np.inf
            for token in _best_tokens(log_probs, cfg.width):
                candidates.append((hyp.log_prob + float(log_probs[token]), hyp.tokens + [token], hyp))

        candidates.sort(key=lambda c: (-c[0], c[1]))
        live = [Hypothesis(tokens=tokens, log_prob=score,
                           state=_gru_forward(params.gru_dec, parent.state, tokens[-1]).h)
                for score, tokens, parent in candidates[:cfg.width]]
        step += 1
        if not cfg.length_normalize and live and live[0].log_prob <= _kth_score(completed, cfg.width):
            break

    completed.sort(key=lambda h: (-h.ranking_score(cfg.length_normalize), h.completed_at, h.tokens))
    return completed[:cfg.width]


def rescore(params: ModelParams, context: Context, candidate: Sequence[int]) -> float:
    """log P(candidate | context); an empty context scores from the zero session state."""
    if len(candidate) == 0:
        raise ContractViolation("Cannot rescore an empty candidate")
    return query_log_prob(params, _context_state(params, context), candidate)


def rescore_candidates(params: ModelParams, context: Context, candidates: Sequence[Sequence[int]]) -> List[float]:
    s_prev = _context_state(params, context)
    return [query_log_prob(params, s_prev, candidate) for candidate in candidates]


def suggest(params: ModelParams, context: Context, k: int, vocab: Vocabulary,
            cfg: Optional[BeamConfig] = None) -> List[Tuple[str, float]]:
    cfg = (cfg or BeamConfig()).model_copy(update={"width": k})
    suggestions = []
    seen = set()
    for hyp in beam_search(params, context, cfg):
        if not hyp.words:
            continue
        text = vocab.decode_query(hyp.words)
        if text in seen:
            continue
        seen.add(text)
        suggestions.append((text, hyp.log_prob))
    return suggestions[:k]


class Suggestion(BaseModel):
    text: str
    score: float


class SuggestRequest(BaseModel):
    context: List[str]
    k: int = Field(default=5, ge=1)


class SuggestResponse(BaseModel):
    context: List[str]
    suggestions: List[Suggestion]


class SuggestionService:

    def __init__(self, params: ModelParams, vocab: Vocabulary, beam_config: BeamConfig):
        if len(vocab) != params.hyper.V:
            raise ContractViolation(f"Vocabulary has {len(vocab)} entries but the model was trained with "
                                    f"V={params.hyper.V}")
        self.params = params
        self.vocab = vocab
        self.beam_config = beam_config

    def encode_context(self, context: Sequence[str]) -> List[List[int]]:
        encoded = [self.vocab.encode_query(normalize_query(query)) for query in context]
        return [tokens for tokens in encoded if tokens]

    def process_request(self, request: SuggestRequest) -> SuggestResponse:
        context = self.encode_context(request.context)
        if not context:
            raise ContractViolation("Context is empty after normalization")

        ranked = suggest(self.params, context, request.k, self.vocab, self.beam_config)
        return SuggestResponse(
            context=request.context,
            suggestions=[Suggestion(text=text, score=score) for text, score in ranked],
        )

    def rescore(self, context: Sequence[str], candidates: Sequence[str]) -> List[Suggestion]:
        encoded_context = self.encode_context(context)
        scored = []
        for candidate in candidates:
            tokens = self.vocab.encode_query(normalize_query(candidate))
            if not tokens:
                raise ContractViolation(f"Candidate '{candidate}' is empty after normalization")
            scored.append(Suggestion(text=candidate, score=rescore(self.params, encoded_context, tokens)))
        return scored
