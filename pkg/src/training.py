import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from corpus import DatasetSplits, Session, training_sessions
from errors import DataError, DivergenceError, NonFiniteGradientError
from model import (GruParams, Gradients, Hyper, ModelParams, StepCache, forward_trace, random_params,
                   session_log_likelihood)
from numerics import DTYPE, ORTHOGONAL_RECURRENT, UNIFORM_SCALED, Prng

logger = logging.getLogger(__name__)

Objective = Callable[[ModelParams, Session], float]


class TrainConfig(BaseModel):
    learning_rate: float = Field(default=2e-3, gt=0)
    rmsprop_decay: float = Field(default=0.95, gt=0, lt=1)
    epsilon: float = Field(default=1e-6, gt=0)
    clip_threshold: float = Field(default=1.0, gt=0)
    batch_size: int = Field(default=16, ge=1)
    patience: int = Field(default=5, ge=1)
    max_epochs: int = Field(default=20, ge=1)
    seed: int = 1234


class OptimizerState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    accumulators: Gradients
    step: int = 0

    @classmethod
    def fresh(cls, hyper: Hyper) -> "OptimizerState":
        return cls(accumulators=Gradients.zeros(hyper), step=0)


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    version: int = 1
    hyper: Hyper
    vocab_digest: str
    params: ModelParams
    optimizer: Optional[OptimizerState] = None
    config: TrainConfig
    history: List[float] = []
    best_epoch: int = 0
    initial_validation_ll: Optional[float] = None
    init_schemes: Dict[str, str] = {
        "input_output": UNIFORM_SCALED,
        "recurrent": ORTHOGONAL_RECURRENT,
    }
    settings: Dict[str, str] = {}


def _gru_backward(p: GruParams, step: StepCache, gh: np.ndarray,
                  grads: GruParams) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Backprop one GRU step; returns (grad wrt h_prev, grad wrt dense x or None)."""
    g_hbar = gh * step.u
    g_u = gh * (step.h_bar - step.h_prev)
    g_a_h = g_hbar * (1.0 - step.h_bar ** 2)
    g_a_u = g_u * step.u * (1.0 - step.u)
    g_rh = p.H.T @ g_a_h
    g_a_r = g_rh * step.h_prev * step.r * (1.0 - step.r)

    gh_prev = gh * (1.0 - step.u) + g_rh * step.r + p.H_r.T @ g_a_r + p.H_u.T @ g_a_u

    grads.H += np.outer(g_a_h, step.r * step.h_prev)
    grads.H_r += np.outer(g_a_r, step.h_prev)
    grads.H_u += np.outer(g_a_u, step.h_prev)

    if isinstance(step.x, (int, np.integer)):
        grads.I[:, step.x] += g_a_h
        grads.I_r[:, step.x] += g_a_r
        grads.I_u[:, step.x] += g_a_u
        return gh_prev, None

    grads.I += np.outer(g_a_h, step.x)
    grads.I_r += np.outer(g_a_r, step.x)
    grads.I_u += np.outer(g_a_u, step.x)
    g_x = p.I.T @ g_a_h + p.I_r.T @ g_a_r + p.I_u.T @ g_a_u
    return gh_prev, g_x


def _decoder_backward(params: ModelParams, trace, m: int, grads: Gradients) -> np.ndarray:
    targets = trace.targets[m]
    steps = trace.decoder_steps[m]
    states = trace.decoder_states(m)
    g_d = np.zeros(params.gru_dec.hidden_dim, dtype=DTYPE)

    for n in reversed(range(len(targets))):
        g_z = -np.exp(trace.step_log_probs[m][n])
        g_z[targets[n]] += 1.0
        omega = trace.omegas[m][n]

        grads.O += np.outer(g_z, omega)
        g_omega = params.O.T @ g_z
        grads.H_o += np.outer(g_omega, states[n])
        grads.b_o += g_omega
        if n > 0:
            grads.E_o[:, targets[n - 1]] += g_omega

        g_d = g_d + params.H_o.T @ g_omega
        if n > 0:
            g_d, _ = _gru_backward(params.gru_dec, steps[n - 1], g_d, grads.gru_dec)

    return g_d


def session_gradients(params: ModelParams, session: Session) -> Tuple[Gradients, float]:
    """Exact gradient of session_log_likelihood for one session."""
    trace = forward_trace(params, session)
    grads = Gradients.zeros(params.hyper)
    n_queries = len(trace.query_vectors)
    d_s = params.gru_ses.hidden_dim

    # g_states[m] is the gradient wrt s_{m+1}
    g_states = [np.zeros(d_s, dtype=DTYPE) for _ in range(n_queries)]
    for m in range(n_queries):
        g_d0 = _decoder_backward(params, trace, m, grads)
        g_a0 = g_d0 * (1.0 - trace.decoder_inits[m] ** 2)
        grads.b_0 += g_a0
        if m > 0:
            grads.D_0 += np.outer(g_a0, trace.session_states[m - 1])
            g_states[m - 1] += params.D_0.T @ g_a0

    g_next = np.zeros(d_s, dtype=DTYPE)
    for m in reversed(range(n_queries)):
        g_s = g_states[m] + g_next
        g_next, g_q = _gru_backward(params.gru_ses, trace.session_steps[m], g_s, grads.gru_ses)
        g_h = g_q
        for step in reversed(trace.encoder_steps[m]):
            g_h, _ = _gru_backward(params.gru_enc, step, g_h, grads.gru_enc)

    return grads, trace.log_likelihood


def backward_bptt(params: ModelParams, batch: Sequence[Session]) -> Tuple[Gradients, float]:
    if not batch:
        raise DataError("Cannot compute gradients of an empty batch")

    # Per-session gradients are reduced in batch order so results are bit-reproducible.
    total = Gradients.zeros(params.hyper)
    log_likelihood = 0.0
    for session in batch:
        grads, value = session_gradients(params, session)
        for name, array in total.named_arrays():
            array += grads.get(name)
        log_likelihood += value

    for name, array in total.named_arrays():
        array /= len(batch)
        if not np.all(np.isfinite(array)):
            raise NonFiniteGradientError(name)
    return total, log_likelihood / len(batch)


def finite_diff_oracle(params: ModelParams, session: Session, h: float = 1e-4,
                       objective: Objective = session_log_likelihood) -> Gradients:
    shifted = params.copy()
    grads = Gradients.zeros(params.hyper)
    for name, array in shifted.named_arrays():
        target = grads.get(name)
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + h
            plus = objective(shifted, session)
            array[index] = original - h
            minus = objective(shifted, session)
            array[index] = original
            target[index] = (plus - minus) / (2.0 * h)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def global_norm(g: ModelParams) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(array))) for _, array in g.named_arrays())))


def clip_gradient_norm(g: Gradients, c: float) -> Gradients:
    clipped = g.copy()
    norm = global_norm(g)
    if norm > c:
        scale = c / norm
        for _, array in clipped.named_arrays():
            array *= scale
    return clipped


def scale_gradients(g: Gradients, factor: float) -> Gradients:
    scaled = g.copy()
    for _, array in scaled.named_arrays():
        array *= factor
    return scaled


def rmsprop_step(params: ModelParams, g: Gradients, state: OptimizerState,
                 config: TrainConfig) -> Tuple[ModelParams, OptimizerState]:
    rho = config.rmsprop_decay
    updated = params.copy()
    accumulators = state.accumulators.copy()
    for name, theta in updated.named_arrays():
        grad = g.get(name)
        acc = accumulators.get(name)
        acc *= rho
        acc += (1.0 - rho) * np.square(grad)
        theta -= config.learning_rate * grad / (np.sqrt(acc) + config.epsilon)
    return updated, OptimizerState(accumulators=accumulators, step=state.step + 1)


def make_batches(sessions: Sequence[Session], batch_size: int, prng: Prng,
                 bucket_window: int = 8) -> List[List[Session]]:
    order = [sessions[i] for i in prng.permutation(len(sessions))]
    window = batch_size * bucket_window
    batches = []
    for start in range(0, len(order), window):
        # Sessions of similar length share a batch.
        chunk = sorted(order[start:start + window], key=lambda s: s.token_count())
        batches.extend(chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size))
    return [batches[i] for i in prng.permutation(len(batches))]


def evaluate_log_likelihood(params: ModelParams, sessions: Sequence[Session]) -> float:
    total = 0.0
    for session in sessions:
        total += session_log_likelihood(params, session)
    return total / len(sessions)


class EarlyStopping:

    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = -np.inf
        self.best_epoch = -1
        self.bad_epochs = 0

    def update(self, epoch: int, score: float) -> bool:
        if score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def fit(splits: DatasetSplits, hyper: Hyper, config: TrainConfig, vocab_digest: str = "",
        fit_on: str = "background", settings: Optional[Dict[str, str]] = None) -> Checkpoint:
    train = training_sessions(getattr(splits, fit_on))
    valid = training_sessions(splits.validation)
    if not train:
        raise DataError(f"No '{fit_on}' sessions with at least 2 queries to train on")
    if not valid:
        raise DataError("No validation sessions with at least 2 queries")

    prng = Prng(config.seed)
    params = random_params(hyper, prng.fork(0))
    shuffle_prng = prng.fork(1)
    state = OptimizerState.fresh(hyper)

    def snapshot(best: ModelParams, history: List[float], best_epoch: int, initial: float) -> Checkpoint:
        return Checkpoint(hyper=hyper, vocab_digest=vocab_digest, params=best, optimizer=state,
                          config=config, history=list(history), best_epoch=best_epoch,
                          initial_validation_ll=initial, settings=settings or {})

    initial_ll = evaluate_log_likelihood(params, valid)
    logger.info("Epoch 0: validation log-likelihood %.6f", initial_ll)
    stopper = EarlyStopping(config.patience)
    stopper.update(0, initial_ll)
    best_params = params.copy()
    history: List[float] = []

    for epoch in range(1, config.max_epochs + 1):
        train_ll = 0.0
        batches = make_batches(train, config.batch_size, shuffle_prng)
        for batch in batches:
            try:
                grads, batch_ll = backward_bptt(params, batch)
            except NonFiniteGradientError as e:
                raise DivergenceError(f"Training diverged in epoch {epoch}: {e}",
                                      snapshot(best_params, history, stopper.best_epoch, initial_ll))
            if not np.isfinite(batch_ll):
                raise DivergenceError(f"Training loss became non-finite in epoch {epoch}",
                                      snapshot(best_params, history, stopper.best_epoch, initial_ll))
            # Ascent on the log-likelihood is descent on its negation.
            loss_grads = clip_gradient_norm(scale_gradients(grads, -1.0), config.clip_threshold)
            params, state = rmsprop_step(params, loss_grads, state, config)
            train_ll += batch_ll * len(batch)

        valid_ll = evaluate_log_likelihood(params, valid)
        history.append(valid_ll)
        if stopper.update(epoch, valid_ll):
            best_params = params.copy()
        logger.info("Epoch %d: train log-likelihood %.6f, validation %.6f (best %.6f at epoch %d)",
                    epoch, train_ll / len(train), valid_ll, stopper.best_score, stopper.best_epoch)
        if stopper.should_stop:
            logger.info("Validation did not improve for %d epochs, stopping", config.patience)
            break

    return snapshot(best_params, history, stopper.best_epoch, initial_ll)
