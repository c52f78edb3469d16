"""Float64 kernels and the seeded PCG64 generator."""
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from errors import ContractViolation

DTYPE = np.float64
UNIFORM_SCALED = "uniform-scaled"
ORTHOGONAL_RECURRENT = "orthogonal-recurrent"
INIT_SCHEMES = (UNIFORM_SCALED, ORTHOGONAL_RECURRENT)

_SEED_MASK = (1 << 64) - 1


class Prng:
    """Single-owner generator. Use `fork` to hand randomness to another task."""

    algorithm = "PCG64"

    def __init__(self, seed: int):
        self.seed = int(seed) & _SEED_MASK
        self._generator = np.random.Generator(np.random.PCG64(self.seed))

    def fork(self, tag: int) -> "Prng":
        sequence = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32, int(tag)])
        return Prng(_join_words(sequence.generate_state(2, dtype=np.uint32)))

    def uniform(self, low: float, high: float, size: Union[int, Tuple[int, ...]]) -> np.ndarray:
        return self._generator.uniform(low, high, size=size)

    def normal(self, size: Union[int, Tuple[int, ...]], scale: float = 1.0) -> np.ndarray:
        return self._generator.normal(0.0, scale, size=size)

    def integers(self, low: int, high: int, size: Optional[int] = None):
        return self._generator.integers(low, high, size=size)

    def random(self) -> float:
        return float(self._generator.random())

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, n: int, p: Optional[Sequence[float]] = None, size: Optional[int] = None):
        return self._generator.choice(n, p=p, size=size)


def _join_words(words: np.ndarray) -> int:
    return (int(words[1]) << 32) | int(words[0])


def affine(W: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ContractViolation(f"affine expects matrix, vector, vector; got W{W.shape}, x{x.shape}, b{b.shape}")
    if W.shape[1] != x.shape[0]:
        raise ContractViolation(f"affine: W has {W.shape[1]} columns but x has dim {x.shape[0]}")
    if W.shape[0] != b.shape[0]:
        raise ContractViolation(f"affine: W has {W.shape[0]} rows but b has dim {b.shape[0]}")
    return W @ x + b


def sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(z, dtype=DTYPE)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    ez = np.exp(z[~positive])
    out[~positive] = ez / (1.0 + ez)
    return out


def softmax_stable(z: np.ndarray) -> np.ndarray:
    shifted = np.exp(z - np.max(z))
    return shifted / np.sum(shifted)


def log_softmax(z: np.ndarray) -> np.ndarray:
    """Log-space twin of `softmax_stable`; never takes the log of a probability."""
    shifted = z - np.max(z)
    return shifted - np.log(np.sum(np.exp(shifted)))


def l2_norm(x: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(x))))


def init_params(rows: int, cols: int, scheme: str, prng: Prng) -> np.ndarray:
    if scheme == UNIFORM_SCALED:
        bound = np.sqrt(6.0 / (rows + cols))
        return prng.uniform(-bound, bound, (rows, cols))
    if scheme == ORTHOGONAL_RECURRENT:
        if rows != cols:
            raise ContractViolation(f"orthogonal-recurrent init needs a square matrix, got {rows}x{cols}")
        q, r = np.linalg.qr(prng.normal((rows, cols)))
        # Sign fix makes the factorization unique.
        signs = np.where(np.diag(r) < 0, -1.0, 1.0)
        return q * signs
    raise ContractViolation(f"Unknown init scheme '{scheme}', expected one of {INIT_SCHEMES}")
