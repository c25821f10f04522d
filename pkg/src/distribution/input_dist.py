"""Finite input distributions on [0, M] and the Caratheodory support reduction."""
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Union
import logging

import numpy as np
from scipy.linalg import null_space
from scipy.special import entr

from src.channel.params import ReceptorParams, alpha_array
from src.utils.errors import DomainError, NumericalRankError

logger = logging.getLogger(__name__)

Functional = Callable[[np.ndarray], np.ndarray]

WEIGHT_SUM_TOL = 1e-12
# Atoms whose weight falls below this during a pivot are deleted
ATOM_DELETE_THRESHOLD = 1e-14
NULL_RESIDUAL_TOL = 1e-10
_LN2 = np.log(2.0)


@dataclass(frozen=True, eq=False)
class DiscreteDist:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float).reshape(-1)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if atoms.size == 0:
            raise DomainError("distribution needs at least one atom")
        if atoms.shape != weights.shape:
            raise DomainError(f"{atoms.size} atoms but {weights.size} weights")
        if np.any(np.diff(atoms) <= 0):
            raise DomainError(f"atoms must be distinct and ascending: {atoms}")
        if np.any(atoms < 0):
            raise DomainError(f"atoms must be nonnegative: {atoms}")
        if np.any(weights <= 0):
            raise DomainError(f"weights must be positive: {weights}")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise DomainError(f"weights sum to {weights.sum()!r}, not 1")
        atoms.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiscreteDist):
            return NotImplemented
        return np.array_equal(self.atoms, other.atoms) and np.array_equal(self.weights, other.weights)

    def __repr__(self) -> str:
        pairs = ", ".join(f"{x!r}: {p!r}" for x, p in zip(self.atoms, self.weights))
        return f"DiscreteDist({{{pairs}}})"

    @property
    def size(self) -> int:
        return int(self.atoms.size)

    @property
    def is_point_mass(self) -> bool:
        return self.size == 1

    @classmethod
    def point_mass(cls, x: float) -> "DiscreteDist":
        return cls(np.array([x]), np.array([1.0]))

    @classmethod
    def canonical(
        cls,
        atoms: Sequence[float],
        weights: Sequence[float],
        merge_radius: float = 0.0,
        m_max: Optional[float] = None
    ) -> "DiscreteDist":
        """Sort, merge atoms closer than merge_radius, drop empty atoms and renormalize.

        Merged atoms sit at the weighted mean of their cluster.
        """
        atoms = np.asarray(atoms, dtype=float).reshape(-1)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        keep = weights > 0
        atoms, weights = atoms[keep], weights[keep]
        if atoms.size == 0:
            raise DomainError("all weights are zero")
        order = np.argsort(atoms, kind="stable")
        atoms, weights = atoms[order], weights[order]

        merged_atoms: List[float] = []
        merged_weights: List[float] = []

        def close_cluster(xs, ws):
            # A lone atom keeps its exact position
            merged_atoms.append(float(xs[0]) if len(xs) == 1 else float(np.dot(xs, ws) / np.sum(ws)))
            merged_weights.append(float(np.sum(ws)))

        cluster_x, cluster_w = [atoms[0]], [weights[0]]
        for x, w in zip(atoms[1:], weights[1:]):
            if x - cluster_x[-1] <= merge_radius:
                cluster_x.append(x)
                cluster_w.append(w)
                continue
            close_cluster(cluster_x, cluster_w)
            cluster_x, cluster_w = [x], [w]
        close_cluster(cluster_x, cluster_w)

        new_atoms = np.asarray(merged_atoms)
        if m_max is not None:
            new_atoms = np.clip(new_atoms, 0.0, m_max)
        new_weights = np.asarray(merged_weights)
        return cls(new_atoms, new_weights / new_weights.sum())

    @classmethod
    def from_records(cls, records: Sequence[Dict[str, float]]) -> "DiscreteDist":
        """Build from a JSON-style list of {x, p} pairs (any order)."""
        atoms = [float(r["x"]) for r in records]
        weights = [float(r["p"]) for r in records]
        if len(set(atoms)) != len(atoms):
            raise DomainError(f"duplicate atoms in {atoms}")
        order = np.argsort(atoms, kind="stable")
        return cls(np.asarray(atoms)[order], np.asarray(weights)[order])

    def to_records(self) -> List[Dict[str, float]]:
        return [{"x": float(x), "p": float(p)} for x, p in zip(self.atoms, self.weights)]

    def check_support(self, m_max: float) -> None:
        if self.atoms[-1] > m_max * (1 + 1e-12):
            raise DomainError(f"atom {self.atoms[-1]} exceeds M={m_max}")


@dataclass(frozen=True, eq=False)
class MomentVector:
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if np.any(values < 0) or np.any(values > 1):
            raise DomainError(f"moments of alpha must lie in [0, 1]: {values}")
        # alpha < 1 makes the moments nonincreasing; allow rounding noise
        if np.any(np.diff(values) > 1e-15):
            raise DomainError(f"moments must be nonincreasing: {values}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.size)

    def __getitem__(self, i: int) -> float:
        """1-based access: m[1] is E[alpha(X)]."""
        if i < 1 or i > len(self):
            raise IndexError(f"moment index {i} outside 1..{len(self)}")
        return float(self.values[i - 1])


def binary_entropy_array(p: Union[np.ndarray, float]) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p > 1) or np.any(np.isnan(p)):
        raise DomainError(f"probability outside [0, 1]: {p}")
    # entr uses the 0 log 0 = 0 convention
    return (entr(p) + entr(1.0 - p)) / _LN2


def binary_entropy(p: float) -> float:
    return float(binary_entropy_array(p))


def moments(dist: DiscreteDist, params: ReceptorParams, order: Optional[int] = None) -> MomentVector:
    order = params.n_receptors if order is None else order
    if order < 1:
        raise DomainError(f"moment order must be >= 1, got {order}")
    a = alpha_array(dist.atoms, params)
    powers = a[None, :] ** np.arange(1, order + 1)[:, None]
    return MomentVector(np.clip(powers @ dist.weights, 0.0, 1.0))


def expectations(dist: DiscreteDist, funcs: Sequence[Functional]) -> np.ndarray:
    return np.array([np.dot(dist.weights, np.asarray(f(dist.atoms), dtype=float)) for f in funcs])


def rate_functionals(params: ReceptorParams, include_entropy: bool = True) -> Dict[str, Functional]:
    """The functionals the stationary i.i.d. rate depends on: alpha^1..alpha^N and H2(alpha)."""
    funcs: Dict[str, Functional] = {}
    for i in range(1, params.n_receptors + 1):
        funcs[f"alpha^{i}"] = lambda x, i=i: alpha_array(x, params) ** i
    if include_entropy:
        funcs["H2(alpha)"] = lambda x: binary_entropy_array(alpha_array(x, params))
    return funcs


def raw_moment_functionals(order: int) -> Dict[str, Functional]:
    return {f"x^{i}": (lambda x, i=i: np.asarray(x, dtype=float) ** i) for i in range(1, order + 1)}


def _null_vector(matrix: np.ndarray) -> np.ndarray:
    basis = null_space(matrix)
    if basis.shape[1] == 0:
        raise NumericalRankError(f"no null vector for a {matrix.shape} moment matrix")
    v = basis[:, 0]
    scale = max(1.0, float(np.max(np.abs(matrix))))
    residual = float(np.max(np.abs(matrix @ v))) / scale
    if residual > NULL_RESIDUAL_TOL:
        raise NumericalRankError(f"null vector residual {residual:.3e} exceeds {NULL_RESIDUAL_TOL}")
    # Sign convention: first non-negligible entry positive
    lead = np.flatnonzero(np.abs(v) > 1e-12 * np.max(np.abs(v)))[0]
    return v if v[lead] > 0 else -v


def reduce_support(dist: DiscreteDist, funcs: Sequence[Functional]) -> DiscreteDist:
    """Shrink the support to at most len(funcs) + 1 atoms, preserving every E[f_i].

    Iterative Caratheodory pivot: move weight along a null vector of the
    (K+1) x n matrix of function values (plus a row of ones) until an atom empties.
    The result lives on a subset of the input atoms.
    """
    k = len(funcs)
    if dist.size <= k + 1:
        return dist

    atoms = dist.atoms.copy()
    p = dist.weights.copy()
    values = np.vstack([np.asarray(f(atoms), dtype=float) for f in funcs] + [np.ones_like(atoms)])

    while atoms.size > k + 1:
        v = _null_vector(values)
        negative = v < 0
        if not np.any(negative):
            v = -v
            negative = v < 0
        ratios = np.full_like(p, np.inf)
        ratios[negative] = -p[negative] / v[negative]
        pivot = int(np.argmin(ratios))
        t_star = ratios[pivot]
        p = p + t_star * v
        p[pivot] = 0.0
        # Every weight that vanished together is dropped
        keep = p >= ATOM_DELETE_THRESHOLD
        atoms, p, values = atoms[keep], p[keep], values[:, keep]
        logger.debug(f"Caratheodory pivot: t*={t_star:.3e}, {atoms.size} atoms left")

    return DiscreteDist(atoms, p / p.sum())
