"""Analytic computations on the N-receptor ligand binding channel.

All quantities are computed on the bound-count (lumped) chain, which has N+1
states instead of 2^N. Receptors are exchangeable, so the full-state row
entropy depends on a state only through its bound count b, and every full state
with count b carries pi_count(b) / C(N, b) of the stationary mass.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Optional
import logging

import numpy as np
from scipy.special import comb, entr

from src.channel.full_state import FullState, full_transition_prob
from src.channel.params import ReceptorParams, alpha, alpha_array
from src.distribution.input_dist import DiscreteDist, binary_entropy, binary_entropy_array
from src.utils.errors import DegenerateInputError, DomainError

logger = logging.getLogger(__name__)

__all__ = [
    "ReceptorParams", "FullState", "LumpedKernel", "StationaryDist", "RateEvaluator",
    "alpha", "full_transition_prob", "lumped_kernel", "stationary_distribution",
    "stationary_by_power_iteration", "entropy_output_given_past",
    "entropy_output_given_input_and_past", "iid_rate", "mixed_expectations",
    "finite_horizon_rate", "rate_evaluator",
]

ROW_SUM_TOL = 1e-12
STATIONARY_RESIDUAL_TOL = 1e-10
_LN2 = np.log(2.0)


def _solve_stationary(kernels: np.ndarray) -> np.ndarray:
    """Solve pi T = pi, sum(pi) = 1 for a stack of kernels.

    The last balance equation is redundant and is replaced by the normalization;
    np.linalg.solve is LU with partial pivoting.
    """
    size = kernels.shape[-1]
    system = np.swapaxes(kernels, -1, -2) - np.eye(size)
    system[:, -1, :] = 1.0
    rhs = np.zeros((kernels.shape[0], size, 1))
    rhs[:, -1, 0] = 1.0
    pi = np.linalg.solve(system, rhs)[..., 0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class LumpedKernel:
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DomainError(f"kernel must be square, got shape {matrix.shape}")
        if np.any(matrix < 0) or np.any(matrix > 1 + ROW_SUM_TOL):
            raise DomainError("kernel entries must lie in [0, 1]")
        row_error = np.max(np.abs(matrix.sum(axis=1) - 1.0))
        if row_error > ROW_SUM_TOL:
            raise DomainError(f"kernel rows must sum to 1 (max error {row_error:.3e})")
        matrix.flags.writeable = False
        object.__setattr__(self, "matrix", matrix)

    @property
    def n_receptors(self) -> int:
        return self.matrix.shape[0] - 1


@dataclass(frozen=True, eq=False)
class StationaryDist:
    pi_count: np.ndarray
    residual: float

    @property
    def bound_probability(self) -> float:
        """Stationary probability that a single receptor is bound."""
        n = self.pi_count.size - 1
        return float(self.pi_count @ np.arange(n + 1)) / n


class RateEvaluator:
    """Vectorized stationary i.i.d. rate for stacks of equally sized distributions.

    A one-epoch transition from bound count b is described by its type
    (b, n2, n3): n2 of the N-b unbound receptors bind and n3 of the b bound ones
    unbind. Every full-state successor of a given type has the same probability
    q = E[(1-a)^(N-b-n2) a^n2] beta^n3 (1-beta)^(b-n3), and there are
    C(N-b, n2) C(b, n3) of them.
    """

    def __init__(self, params: ReceptorParams):
        self.params = params
        n = params.n_receptors
        b, n2, n3 = np.array(
            [(b, n2, n3) for b in range(n + 1) for n2 in range(n - b + 1) for n3 in range(b + 1)]
        ).T
        self.b = b
        self.n2 = n2
        self.n3 = n3
        self.stay_unbound = n - b - n2
        self.b_next = b - n3 + n2
        self.multiplicity = comb(n - b, n2, exact=False) * comb(b, n3, exact=False)
        self.log_multiplicity = np.log2(self.multiplicity)
        beta = params.beta
        self.beta_factor = beta ** n3 * (1 - beta) ** (b - n3)
        self.h2_beta = binary_entropy(beta)

        # Types grouped by kernel cell and by origin count, summed with reduceat so
        # every row of a batch is reduced in the same order whatever the batch size
        cell = b * (n + 1) + self.b_next
        self._cell_order = np.argsort(cell, kind="stable")
        self._cell_starts = np.searchsorted(cell[self._cell_order], np.arange((n + 1) ** 2))
        self._origin_starts = np.searchsorted(b, np.arange(n + 1))

    @property
    def n_receptors(self) -> int:
        return self.params.n_receptors

    def alphas_and_weights(self, atoms: np.ndarray, weights: np.ndarray):
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        weights = np.atleast_2d(np.asarray(weights, dtype=float))
        if atoms.shape != weights.shape:
            raise DomainError(f"atoms {atoms.shape} and weights {weights.shape} differ in shape")
        return alpha_array(atoms, self.params), weights

    def type_probabilities(self, alphas: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """(batch, types) array of per-successor probabilities q."""
        a = alphas[..., None]
        powers = (1.0 - a) ** self.stay_unbound * a ** self.n2
        expected = (weights[..., None] * powers).sum(axis=1)
        return expected * self.beta_factor

    def kernels(self, type_probs: np.ndarray) -> np.ndarray:
        n = self.n_receptors
        weighted = (type_probs * self.multiplicity)[:, self._cell_order]
        flat = np.add.reduceat(weighted, self._cell_starts, axis=1)
        return flat.reshape(-1, n + 1, n + 1)

    def row_entropies(self, type_probs: np.ndarray) -> np.ndarray:
        """H(Y1 | Y0 = y) for a full state y with bound count b, as a (batch, N+1) array."""
        contributions = entr(type_probs) * self.multiplicity / _LN2
        return np.add.reduceat(contributions, self._origin_starts, axis=1)

    def evaluate(self, atoms: np.ndarray, weights: np.ndarray) -> Dict[str, np.ndarray]:
        """Stationary law, both conditional entropies and the rate for every row of the batch.

        Rows whose kernel absorbs into the all-unbound state get pi = e_0 and rate 0.
        """
        alphas, weights = self.alphas_and_weights(atoms, weights)
        q = self.type_probabilities(alphas, weights)
        kernels = self.kernels(q)
        pi = _solve_stationary(kernels)

        h_past = np.sum(pi * self.row_entropies(q), axis=1)
        n = self.n_receptors
        bound = np.sum(pi * (np.arange(n + 1) / n), axis=1)
        mean_h2_alpha = np.sum(weights * binary_entropy_array(alphas), axis=1)
        h_input = n * (bound * self.h2_beta + (1.0 - bound) * mean_h2_alpha)
        return {
            "pi": pi,
            "kernel": kernels,
            "h_output_given_past": h_past,
            "h_output_given_input_and_past": h_input,
            "rate": h_past - h_input,
        }

    def rates(self, atoms: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return self.evaluate(atoms, weights)["rate"]

    def rate(self, dist: DiscreteDist) -> float:
        if dist.is_point_mass:
            return 0.0
        return float(self.rates(dist.atoms[None, :], dist.weights[None, :])[0])


@lru_cache(maxsize=64)
def rate_evaluator(params: ReceptorParams) -> RateEvaluator:
    return RateEvaluator(params)


def mixed_expectations(dist: DiscreteDist, params: ReceptorParams) -> np.ndarray:
    """Table E[(1 - alpha)^k alpha^j] for 0 <= k, j <= N.

    Expanding (1 - alpha)^k makes every entry with k + j <= N a fixed linear
    combination of the moments m_0..m_N, which is why the kernel depends on
    the input only through its moment vector.
    """
    n = params.n_receptors
    a = alpha_array(dist.atoms, params)
    k = np.arange(n + 1)
    powers = (1.0 - a)[:, None, None] ** k[None, :, None] * a[:, None, None] ** k[None, None, :]
    return np.tensordot(dist.weights, powers, axes=1)


def _check_not_degenerate(dist: DiscreteDist, params: ReceptorParams) -> None:
    if float(dist.weights @ alpha_array(dist.atoms, params)) == 0.0:
        raise DegenerateInputError()


def lumped_kernel(dist: DiscreteDist, params: ReceptorParams) -> LumpedKernel:
    evaluator = rate_evaluator(params)
    alphas, weights = evaluator.alphas_and_weights(dist.atoms, dist.weights)
    matrix = evaluator.kernels(evaluator.type_probabilities(alphas, weights))[0]
    # Rows are sums of nonnegative terms; rescale away rounding in the last bits
    return LumpedKernel(matrix / matrix.sum(axis=1, keepdims=True))


def stationary_distribution(kernel: LumpedKernel) -> StationaryDist:
    matrix = kernel.matrix
    # All-unbound absorbs exactly when row 0 is e0, i.e. E[alpha(X)] == 0
    if not np.any(matrix[0, 1:]):
        raise DegenerateInputError()
    pi = _solve_stationary(matrix[None, :, :])[0]
    residual = float(np.max(np.abs(pi @ matrix - pi)))
    if residual > STATIONARY_RESIDUAL_TOL:
        logger.warning(f"stationary residual {residual:.3e} above {STATIONARY_RESIDUAL_TOL}")
    return StationaryDist(pi_count=pi, residual=residual)


def stationary_by_power_iteration(
    kernel: LumpedKernel,
    tol: float = 1e-14,
    max_iter: int = 100_000,
    initial: Optional[np.ndarray] = None
) -> StationaryDist:
    matrix = kernel.matrix
    size = matrix.shape[0]
    pi = np.full(size, 1.0 / size) if initial is None else np.asarray(initial, dtype=float)
    residual = np.inf
    for _ in range(max_iter):
        nxt = pi @ matrix
        residual = float(np.max(np.abs(nxt - pi)))
        pi = nxt
        if residual < tol:
            break
    return StationaryDist(pi_count=pi / pi.sum(), residual=residual)


def _row_entropies(dist: DiscreteDist, params: ReceptorParams) -> np.ndarray:
    evaluator = rate_evaluator(params)
    alphas, weights = evaluator.alphas_and_weights(dist.atoms, dist.weights)
    return evaluator.row_entropies(evaluator.type_probabilities(alphas, weights))[0]


def entropy_output_given_past(dist: DiscreteDist, params: ReceptorParams) -> float:
    """H(Y1 | Y0) in bits per epoch under the stationary output law."""
    _check_not_degenerate(dist, params)
    pi = stationary_distribution(lumped_kernel(dist, params)).pi_count
    return float(pi @ _row_entropies(dist, params))


def _h_given_input(dist: DiscreteDist, params: ReceptorParams, bound_probability: float) -> float:
    mean_h2_alpha = float(dist.weights @ binary_entropy_array(alpha_array(dist.atoms, params)))
    n = params.n_receptors
    return n * (bound_probability * binary_entropy(params.beta) + (1.0 - bound_probability) * mean_h2_alpha)


def entropy_output_given_input_and_past(dist: DiscreteDist, params: ReceptorParams) -> float:
    """H(Y1 | X1, Y0) = N [p_B H2(beta) + p_U E H2(alpha(X))] with p_B the single-receptor bound probability."""
    _check_not_degenerate(dist, params)
    stationary = stationary_distribution(lumped_kernel(dist, params))
    return _h_given_input(dist, params, stationary.bound_probability)


def iid_rate(dist: DiscreteDist, params: ReceptorParams) -> float:
    """Stationary i.i.d. information rate H(Y1|Y0) - H(Y1|Y0,X1) in bits per epoch."""
    if dist.is_point_mass:
        return 0.0
    dist.check_support(params.m_max)
    _check_not_degenerate(dist, params)
    return rate_evaluator(params).rate(dist)


def finite_horizon_rate(
    dist: DiscreteDist,
    params: ReceptorParams,
    n_epochs: int,
    initial_counts: Optional[np.ndarray] = None
) -> float:
    """(1/n) I(X^n; Y^n) when Y0 starts from the given bound-count law instead of pi.

    Y0 is independent of the input, so I(Y0; X^n) = 0 and the rate is the
    average of the per-epoch conditional entropy gaps along the transient.
    Defaults to the all-unbound start.
    """
    if n_epochs < 1:
        raise DomainError(f"n_epochs must be >= 1, got {n_epochs}")
    n = params.n_receptors
    if initial_counts is None:
        counts = np.zeros(n + 1)
        counts[0] = 1.0
    else:
        counts = np.asarray(initial_counts, dtype=float)
        if counts.shape != (n + 1,) or np.any(counts < 0) or abs(counts.sum() - 1.0) > 1e-12:
            raise DomainError(f"initial_counts must be a distribution over 0..{n}")

    matrix = lumped_kernel(dist, params).matrix
    rows = _row_entropies(dist, params)
    total = 0.0
    for _ in range(n_epochs):
        bound = float(counts @ np.arange(n + 1)) / n
        total += float(counts @ rows) - _h_given_input(dist, params, bound)
        counts = counts @ matrix
    return total / n_epochs
