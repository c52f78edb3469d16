"""Hierarchical recurrent encoder-decoder over query sessions."""
from typing import Any, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from corpus import EOQ_ID, Session, Vocabulary
from errors import ContractViolation
from numerics import (DTYPE, ORTHOGONAL_RECURRENT, UNIFORM_SCALED, Prng, init_params, log_softmax,
                      sigmoid, softmax_stable)

GRU_FIELDS = ("I", "I_r", "I_u", "H", "H_r", "H_u")
GRU_NAMES = ("gru_enc", "gru_ses", "gru_dec")
OUTPUT_FIELDS = ("D_0", "b_0", "H_o", "E_o", "b_o", "O")
PARAM_NAMES = tuple(f"{gru}.{field}" for gru in GRU_NAMES for field in GRU_FIELDS) + OUTPUT_FIELDS

TokenInput = Union[int, np.ndarray]
Queries = Sequence[Sequence[int]]


class Hyper(BaseModel):
    V: int = Field(ge=1)
    d_h: int = Field(ge=1)
    d_s: int = Field(ge=1)
    d_e: int = Field(ge=1)


class GruParams(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    I: np.ndarray
    I_r: np.ndarray
    I_u: np.ndarray
    H: np.ndarray
    H_r: np.ndarray
    H_u: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.I.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.H.shape[0]

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "GruParams":
        inputs = {name: np.zeros((hidden_dim, input_dim), dtype=DTYPE) for name in GRU_FIELDS[:3]}
        recurrent = {name: np.zeros((hidden_dim, hidden_dim), dtype=DTYPE) for name in GRU_FIELDS[3:]}
        return cls(**inputs, **recurrent)


class ModelParams(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    gru_enc: GruParams
    gru_ses: GruParams
    gru_dec: GruParams
    D_0: np.ndarray
    b_0: np.ndarray
    H_o: np.ndarray
    E_o: np.ndarray
    b_o: np.ndarray
    O: np.ndarray

    @classmethod
    def zeros(cls, hyper: Hyper):
        return cls(
            gru_enc=GruParams.zeros(hyper.V, hyper.d_h),
            gru_ses=GruParams.zeros(hyper.d_h, hyper.d_s),
            gru_dec=GruParams.zeros(hyper.V, hyper.d_h),
            D_0=np.zeros((hyper.d_h, hyper.d_s), dtype=DTYPE),
            b_0=np.zeros(hyper.d_h, dtype=DTYPE),
            H_o=np.zeros((hyper.d_e, hyper.d_h), dtype=DTYPE),
            E_o=np.zeros((hyper.d_e, hyper.V), dtype=DTYPE),
            b_o=np.zeros(hyper.d_e, dtype=DTYPE),
            O=np.zeros((hyper.V, hyper.d_e), dtype=DTYPE),
        )

    @property
    def hyper(self) -> Hyper:
        return Hyper(V=self.O.shape[0], d_h=self.H_o.shape[1], d_s=self.D_0.shape[1], d_e=self.O.shape[1])

    def get(self, name: str) -> np.ndarray:
        if "." in name:
            gru, field = name.split(".")
            return getattr(getattr(self, gru), field)
        return getattr(self, name)

    def set(self, name: str, value: np.ndarray) -> None:
        if "." in name:
            gru, field = name.split(".")
            setattr(getattr(self, gru), field, value)
        else:
            setattr(self, name, value)

    def named_arrays(self) -> List[Tuple[str, np.ndarray]]:
        return [(name, self.get(name)) for name in PARAM_NAMES]

    def copy(self):
        return self.model_copy(deep=True)

    def check_shapes(self) -> None:
        expected = ModelParams.zeros(self.hyper)
        for name, array in self.named_arrays():
            if array.shape != expected.get(name).shape:
                raise ContractViolation(f"Parameter {name} has shape {array.shape}, "
                                        f"expected {expected.get(name).shape}")
            if not np.all(np.isfinite(array)):
                raise ContractViolation(f"Parameter {name} has non-finite entries")


class Gradients(ModelParams):
    pass


def random_params(hyper: Hyper, prng: Prng) -> ModelParams:
    params = ModelParams.zeros(hyper)
    for name, array in params.named_arrays():
        if array.ndim == 1:
            continue
        field = name.split(".")[-1]
        scheme = ORTHOGONAL_RECURRENT if field in GRU_FIELDS[3:] else UNIFORM_SCALED
        params.set(name, init_params(array.shape[0], array.shape[1], scheme, prng))
    return params


def zero_params(hyper: Hyper) -> ModelParams:
    return ModelParams.zeros(hyper)


class StepCache(NamedTuple):
    h_prev: np.ndarray
    x: TokenInput
    r: np.ndarray
    u: np.ndarray
    h_bar: np.ndarray
    h: np.ndarray


class ForwardTrace(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    encoder_steps: List[List[Any]]
    query_vectors: List[np.ndarray]
    session_steps: List[Any]
    session_states: List[np.ndarray]
    decoder_inits: List[np.ndarray]
    decoder_steps: List[List[Any]]
    omegas: List[List[np.ndarray]]
    step_log_probs: List[List[np.ndarray]]
    token_log_probs: List[List[float]]
    targets: List[List[int]]
    log_likelihood: float

    def encoder_states(self, m: int) -> List[np.ndarray]:
        return [step.h for step in self.encoder_steps[m]]

    def decoder_states(self, m: int) -> List[np.ndarray]:
        return [self.decoder_inits[m]] + [step.h for step in self.decoder_steps[m]]

    def gate_activations(self) -> List[np.ndarray]:
        steps = [step for query in self.encoder_steps for step in query]
        steps += list(self.session_steps)
        steps += [step for query in self.decoder_steps for step in query]
        return [gate for step in steps for gate in (step.r, step.u)]


def _input_column(matrix: np.ndarray, x: TokenInput) -> np.ndarray:
    if isinstance(x, (int, np.integer)):
        return matrix[:, x]
    return matrix @ x


def _gru_forward(p: GruParams, h_prev: np.ndarray, x: TokenInput) -> StepCache:
    r = sigmoid(_input_column(p.I_r, x) + p.H_r @ h_prev)
    u = sigmoid(_input_column(p.I_u, x) + p.H_u @ h_prev)
    h_bar = np.tanh(_input_column(p.I, x) + p.H @ (r * h_prev))
    h = (1.0 - u) * h_prev + u * h_bar
    return StepCache(h_prev, x, r, u, h_bar, h)


def gru_step(p: GruParams, h_prev: np.ndarray, x: TokenInput) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if h_prev.shape != (p.hidden_dim,):
        raise ContractViolation(f"h_prev has shape {h_prev.shape}, GRU hidden size is {p.hidden_dim}")
    if isinstance(x, (int, np.integer)):
        if not 0 <= x < p.input_dim:
            raise ContractViolation(f"Token index {x} outside input size {p.input_dim}")
    elif x.shape != (p.input_dim,):
        raise ContractViolation(f"x has shape {x.shape}, GRU input size is {p.input_dim}")
    step = _gru_forward(p, h_prev, x)
    return step.h, step.r, step.u


def _encode_steps(p_enc: GruParams, tokens: Sequence[int]) -> List[StepCache]:
    if len(tokens) == 0:
        raise ContractViolation("Cannot encode an empty query")
    h = np.zeros(p_enc.hidden_dim, dtype=DTYPE)
    steps = []
    for token in list(tokens) + [EOQ_ID]:
        step = _gru_forward(p_enc, h, int(token))
        steps.append(step)
        h = step.h
    return steps


def encode_query(p_enc: GruParams, tokens: Sequence[int]) -> np.ndarray:
    return _encode_steps(p_enc, tokens)[-1].h


def _queries(session: Union[Session, Queries]) -> Queries:
    return session.queries if isinstance(session, Session) else session


def encode_session(params: ModelParams, session: Union[Session, Queries]) -> List[np.ndarray]:
    s = np.zeros(params.gru_ses.hidden_dim, dtype=DTYPE)
    states = []
    for tokens in _queries(session):
        s = _gru_forward(params.gru_ses, s, encode_query(params.gru_enc, tokens)).h
        states.append(s)
    return states


def decoder_init(params: ModelParams, s_prev: np.ndarray) -> np.ndarray:
    return np.tanh(params.D_0 @ s_prev + params.b_0)


def _output_logits(params: ModelParams, d_prev: np.ndarray, w_prev: Optional[int]) -> Tuple[np.ndarray, np.ndarray]:
    omega = params.H_o @ d_prev + params.b_o
    if w_prev is not None:
        omega = omega + params.E_o[:, w_prev]
    return omega, params.O @ omega


def next_word_distribution(params: ModelParams, d_prev: np.ndarray, w_prev: Optional[int]) -> np.ndarray:
    """P(w | d_prev, w_prev); `None` is the null previous word of the first step."""
    return softmax_stable(_output_logits(params, d_prev, w_prev)[1])


def next_word_log_distribution(params: ModelParams, d_prev: np.ndarray, w_prev: Optional[int]) -> np.ndarray:
    return log_softmax(_output_logits(params, d_prev, w_prev)[1])


class _DecodedQuery(NamedTuple):
    log_prob: float
    d_0: np.ndarray
    steps: List[StepCache]
    omegas: List[np.ndarray]
    step_log_probs: List[np.ndarray]
    token_log_probs: List[float]
    targets: List[int]


def _decode_query(params: ModelParams, s_prev: np.ndarray, tokens: Sequence[int]) -> _DecodedQuery:
    if len(tokens) == 0:
        raise ContractViolation("Cannot score an empty query")
    targets = [int(t) for t in tokens] + [EOQ_ID]
    d_0 = decoder_init(params, s_prev)
    d = d_0
    w_prev: Optional[int] = None
    total = 0.0
    steps, omegas, step_log_probs, token_log_probs = [], [], [], []
    for n, target in enumerate(targets):
        omega, logits = _output_logits(params, d, w_prev)
        log_probs = log_softmax(logits)
        token_log_probs.append(float(log_probs[target]))
        total += float(log_probs[target])
        omegas.append(omega)
        step_log_probs.append(log_probs)
        # Nothing reads the state after the end-of-query token.
        if n < len(targets) - 1:
            step = _gru_forward(params.gru_dec, d, target)
            steps.append(step)
            d = step.h
        w_prev = target
    return _DecodedQuery(total, d_0, steps, omegas, step_log_probs, token_log_probs, targets)


def query_log_prob(params: ModelParams, s_prev: np.ndarray, tokens: Sequence[int]) -> float:
    return _decode_query(params, s_prev, tokens).log_prob


def session_log_likelihood(params: ModelParams, session: Union[Session, Queries]) -> float:
    return forward_trace(params, session).log_likelihood


def forward_trace(params: ModelParams, session: Union[Session, Queries]) -> ForwardTrace:
    queries = _queries(session)
    if len(queries) == 0:
        raise ContractViolation("Session has no queries")

    encoder_steps = [_encode_steps(params.gru_enc, tokens) for tokens in queries]
    query_vectors = [steps[-1].h for steps in encoder_steps]

    s = np.zeros(params.gru_ses.hidden_dim, dtype=DTYPE)
    session_steps, session_states = [], []
    for q in query_vectors:
        step = _gru_forward(params.gru_ses, s, q)
        session_steps.append(step)
        session_states.append(step.h)
        s = step.h

    # Q_1 is scored from the empty context s_0 = 0.
    contexts = [np.zeros(params.gru_ses.hidden_dim, dtype=DTYPE)] + session_states[:-1]
    decoded = [_decode_query(params, s_prev, tokens) for s_prev, tokens in zip(contexts, queries)]

    total = 0.0
    for query in decoded:
        total += query.log_prob

    return ForwardTrace(
        encoder_steps=encoder_steps,
        query_vectors=query_vectors,
        session_steps=session_steps,
        session_states=session_states,
        decoder_inits=[query.d_0 for query in decoded],
        decoder_steps=[query.steps for query in decoded],
        omegas=[query.omegas for query in decoded],
        step_log_probs=[query.step_log_probs for query in decoded],
        token_log_probs=[query.token_log_probs for query in decoded],
        targets=[query.targets for query in decoded],
        log_likelihood=total,
    )


def update_gate_trace(params: ModelParams, session: Union[Session, Queries]) -> List[np.ndarray]:
    s = np.zeros(params.gru_ses.hidden_dim, dtype=DTYPE)
    gates = []
    for tokens in _queries(session):
        step = _gru_forward(params.gru_ses, s, encode_query(params.gru_enc, tokens))
        gates.append(np.abs(step.u))
        s = step.h
    return gates


def export_embeddings(params: ModelParams, vocab: Vocabulary,
                      queries: Optional[Iterable[str]] = None) -> Tuple[List[Tuple[str, np.ndarray]],
                                                                         List[Tuple[str, np.ndarray]]]:
    if len(vocab) != params.hyper.V:
        raise ContractViolation(f"Vocabulary has {len(vocab)} entries, model expects {params.hyper.V}")
    word_rows = [(word, params.O[index]) for index, word in enumerate(vocab.id_to_word)]
    query_rows = []
    for text in queries or []:
        tokens = vocab.encode_query(text)
        if tokens:
            query_rows.append((text, encode_query(params.gru_enc, tokens)))
    return word_rows, query_rows
