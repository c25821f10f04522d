"""The 2^N-state receptor chain, kept as a brute-force reference for small N."""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import entr

from src.channel.params import ReceptorParams, alpha, alpha_array
from src.distribution.input_dist import DiscreteDist
from src.utils.errors import DomainError

MAX_FULL_RECEPTORS = 10
_LN2 = np.log(2.0)


@dataclass(frozen=True)
class FullState:
    # True means bound (B), False unbound (U); index j is receptor j
    bits: Tuple[bool, ...]

    def __post_init__(self):
        if len(self.bits) < 1:
            raise DomainError("a full state needs at least one receptor")
        object.__setattr__(self, "bits", tuple(bool(b) for b in self.bits))

    @property
    def n_receptors(self) -> int:
        return len(self.bits)

    @property
    def bound_count(self) -> int:
        return sum(self.bits)

    def encode(self) -> int:
        return sum(1 << j for j, bound in enumerate(self.bits) if bound)

    @classmethod
    def decode(cls, code: int, n_receptors: int) -> "FullState":
        if not 0 <= code < (1 << n_receptors):
            raise DomainError(f"code {code} outside [0, 2^{n_receptors})")
        return cls(tuple(bool((code >> j) & 1) for j in range(n_receptors)))

    @classmethod
    def from_string(cls, text: str) -> "FullState":
        """Parse e.g. 'UB' (receptor 1 unbound, receptor 2 bound)."""
        text = text.upper()
        if not text or set(text) - {"U", "B"}:
            raise DomainError(f"full state must be a string over {{U, B}}, got {text!r}")
        return cls(tuple(c == "B" for c in text))

    def __str__(self) -> str:
        return "".join("B" if b else "U" for b in self.bits)


def transition_counts(y0: FullState, y1: FullState) -> Tuple[int, int, int, int]:
    """(N1, N2, N3, N4) = counts of U->U, U->B, B->U, B->B positions."""
    if y0.n_receptors != y1.n_receptors:
        raise DomainError(f"state sizes differ: {y0.n_receptors} vs {y1.n_receptors}")
    n1 = n2 = n3 = n4 = 0
    for before, after in zip(y0.bits, y1.bits):
        if not before and not after:
            n1 += 1
        elif not before and after:
            n2 += 1
        elif before and not after:
            n3 += 1
        else:
            n4 += 1
    return n1, n2, n3, n4


def full_transition_prob(y0: FullState, y1: FullState, x: float, params: ReceptorParams) -> float:
    if y0.n_receptors != params.n_receptors:
        raise DomainError(f"state has {y0.n_receptors} receptors, params expect {params.n_receptors}")
    a = alpha(x, params)
    n1, n2, n3, n4 = transition_counts(y0, y1)
    beta = params.beta
    return (1 - a) ** n1 * a ** n2 * beta ** n3 * (1 - beta) ** n4


def _state_bits(n_receptors: int) -> np.ndarray:
    codes = np.arange(1 << n_receptors)
    return ((codes[:, None] >> np.arange(n_receptors)[None, :]) & 1).astype(bool)


def _per_atom_kernels(dist: DiscreteDist, params: ReceptorParams) -> np.ndarray:
    n = params.n_receptors
    if n > MAX_FULL_RECEPTORS:
        raise DomainError(f"full-state kernel limited to N <= {MAX_FULL_RECEPTORS}, got {n}")
    bits = _state_bits(n)
    before, after = bits[:, None, :], bits[None, :, :]
    n1 = np.sum(~before & ~after, axis=-1)
    n2 = np.sum(~before & after, axis=-1)
    n3 = np.sum(before & ~after, axis=-1)
    n4 = np.sum(before & after, axis=-1)
    beta = params.beta
    a = alpha_array(dist.atoms, params)[:, None, None]
    return (1 - a) ** n1 * a ** n2 * beta ** n3 * (1 - beta) ** n4


def full_kernel(dist: DiscreteDist, params: ReceptorParams) -> np.ndarray:
    """Input-averaged 2^N x 2^N transition matrix indexed by FullState codes."""
    return np.tensordot(dist.weights, _per_atom_kernels(dist, params), axes=1)


def lump_full_distribution(pi_full: np.ndarray, n_receptors: int) -> np.ndarray:
    counts = _state_bits(n_receptors).sum(axis=1)
    return np.bincount(counts, weights=pi_full, minlength=n_receptors + 1)


@dataclass
class FullStateReport:
    pi: np.ndarray
    h_output_given_past: float
    h_output_given_input_and_past: float

    @property
    def rate(self) -> float:
        return self.h_output_given_past - self.h_output_given_input_and_past


def full_state_entropies(dist: DiscreteDist, params: ReceptorParams) -> FullStateReport:
    """Stationary law and both conditional entropies straight from the 2^N chain."""
    per_atom = _per_atom_kernels(dist, params)
    kernel = np.tensordot(dist.weights, per_atom, axes=1)
    size = kernel.shape[0]

    # pi (T - I) = 0 stacked with sum(pi) = 1
    system = np.vstack([kernel.T - np.eye(size), np.ones((1, size))])
    rhs = np.zeros(size + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)

    row_entropy = entr(kernel).sum(axis=1) / _LN2
    h_past = float(pi @ row_entropy)

    row_entropy_given_x = entr(per_atom).sum(axis=2) / _LN2
    h_input = float(pi @ (dist.weights @ row_entropy_given_x))
    return FullStateReport(pi=pi, h_output_given_past=h_past, h_output_given_input_and_past=h_input)
