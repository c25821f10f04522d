"""First-order optimality certificate for a finite-support input distribution.

At a capacity-achieving input with atoms a_i = alpha(x_i), there are multipliers
lambda_0..lambda_N such that f(a) = H2(a) + sum_j lambda_j a^j vanishes at every
atom and f'(a) vanishes at every atom that is not on a boundary of
[alpha(0), alpha(M)]. f' has at most N+1 roots in [0, 1], and that root count
is what bounds the support size.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple
import logging

import numpy as np
from scipy.optimize import brentq

from src.channel.params import ReceptorParams, alpha_array
from src.channel.receptor_channel import rate_evaluator
from src.distribution.input_dist import DiscreteDist, binary_entropy_array
from src.utils.errors import DomainError

logger = logging.getLogger(__name__)

SCAN_POINTS = 100_000
TANGENT_TOL = 1e-12
_EDGE = 1e-12


class CertificateStatus(str, Enum):
    VALID = "VALID"
    INVALID = "INVALID"
    UNDERDETERMINED = "UNDERDETERMINED"


@dataclass
class KKTCertificate:
    lambdas: np.ndarray
    stationarity_residual: float
    derivative_residual: float
    root_count: int
    support_size: int
    status: CertificateStatus
    n_equations: int
    roots: np.ndarray = field(default_factory=lambda: np.zeros(0))
    boundary_atoms: int = 0
    max_marginal_gain: Optional[float] = None

    @property
    def valid(self) -> bool:
        return self.status == CertificateStatus.VALID

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lambdas": [float(v) for v in self.lambdas],
            "residuals": {
                "stationarity": self.stationarity_residual,
                "derivative": self.derivative_residual,
            },
            "root_count": self.root_count,
            "roots": [float(r) for r in self.roots],
            "support_size": self.support_size,
            "boundary_atoms": self.boundary_atoms,
            "n_equations": self.n_equations,
            "max_marginal_gain": self.max_marginal_gain,
            "status": self.status.value,
            "valid": self.valid,
        }


def effective_support(
    dist: DiscreteDist,
    m_max: float,
    merge_eps: float = 1e-4,
    weight_floor: float = 1e-6
) -> DiscreteDist:
    """Merge atoms within merge_eps * M of each other, then prune weights below weight_floor."""
    merged = DiscreteDist.canonical(dist.atoms, dist.weights, merge_radius=merge_eps * m_max, m_max=m_max)
    keep = merged.weights >= weight_floor
    if not np.any(keep):
        keep = merged.weights == merged.weights.max()
    return DiscreteDist(merged.atoms[keep], merged.weights[keep] / merged.weights[keep].sum())


def binary_entropy_derivative(a: np.ndarray) -> np.ndarray:
    """d/da H2(a) = log2((1 - a) / a) on (0, 1)."""
    a = np.asarray(a, dtype=float)
    return np.log2(1.0 - a) - np.log2(a)


def _polynomial(lambdas: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.polynomial.polynomial.polyval(a, lambdas)


def _polynomial_derivative(lambdas: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.polynomial.polynomial.polyval(a, np.polynomial.polynomial.polyder(lambdas))


def count_derivative_roots(lambdas: np.ndarray, lower: float, upper: float, n_points: int = SCAN_POINTS) -> np.ndarray:
    """Roots of f'(a) = H2'(a) + p'(a) on [lower, upper].

    Sign changes on a uniform grid are refined by bisection (Brent); grid
    points where f' has a local extremum with |f'| < TANGENT_TOL count as
    tangential roots.
    """
    lower = max(lower, _EDGE)
    upper = min(upper, 1.0 - _EDGE)
    if upper <= lower:
        return np.zeros(0)

    def f_prime(a):
        return binary_entropy_derivative(a) + _polynomial_derivative(lambdas, a)

    grid = np.linspace(lower, upper, n_points)
    values = f_prime(grid)
    signs = np.sign(values)
    roots: List[float] = list(grid[signs == 0])

    crossing = np.flatnonzero(signs[:-1] * signs[1:] < 0)
    for i in crossing:
        roots.append(brentq(f_prime, grid[i], grid[i + 1], xtol=1e-15))

    slope = np.diff(values)
    extremum = np.flatnonzero(slope[:-1] * slope[1:] < 0) + 1
    for i in extremum:
        touching = abs(values[i]) < TANGENT_TOL
        crossed = signs[i - 1] * signs[i + 1] < 0 or signs[i] == 0
        if touching and not crossed:
            roots.append(grid[i])

    return np.sort(np.asarray(roots, dtype=float))


def marginal_gain_scan(
    dist: DiscreteDist,
    params: ReceptorParams,
    n_points: int = 201,
    eps: float = 1e-6
) -> Tuple[np.ndarray, np.ndarray]:
    """Directional derivative of the rate toward a point mass at each grid concentration.

    At a capacity-achieving input every gain is <= 0 up to O(eps), and gains
    vanish on the support.
    """
    evaluator = rate_evaluator(params)
    grid = np.linspace(0.0, params.m_max, n_points)
    base = evaluator.rates(dist.atoms[None, :], dist.weights[None, :])[0]
    atoms = np.hstack([np.tile(dist.atoms, (n_points, 1)), grid[:, None]])
    weights = np.hstack([np.tile((1.0 - eps) * dist.weights, (n_points, 1)), np.full((n_points, 1), eps)])
    gains = (evaluator.rates(atoms, weights) - base) / eps
    return grid, gains


def kkt_certificate(
    dist: DiscreteDist,
    params: ReceptorParams,
    merge_eps: float = 1e-4,
    weight_floor: float = 1e-6,
    kkt_tol: float = 1e-4,
    scan_points: int = SCAN_POINTS,
    marginal_points: int = 201
) -> KKTCertificate:
    n = params.n_receptors
    m_max = params.m_max
    effective = effective_support(dist, m_max, merge_eps, weight_floor)
    if effective.size < 2:
        raise DomainError(f"certificate needs at least 2 atoms, effective support has {effective.size}")

    a = alpha_array(effective.atoms, params)
    on_boundary = (effective.atoms <= merge_eps * m_max) | (effective.atoms >= m_max * (1.0 - merge_eps))
    interior = ~on_boundary

    powers = np.arange(n + 1)
    value_rows = a[:, None] ** powers[None, :]
    value_rhs = -binary_entropy_array(a)
    a_in = a[interior]
    derivative_rows = powers[None, :] * a_in[:, None] ** np.maximum(powers - 1, 0)[None, :]
    derivative_rhs = -binary_entropy_derivative(a_in)

    system = np.vstack([value_rows, derivative_rows])
    rhs = np.concatenate([value_rhs, derivative_rhs])
    lambdas, *_ = np.linalg.lstsq(system, rhs, rcond=None)

    stationarity = float(np.max(np.abs(binary_entropy_array(a) + _polynomial(lambdas, a))))
    if a_in.size:
        derivative = float(np.max(np.abs(binary_entropy_derivative(a_in) + _polynomial_derivative(lambdas, a_in))))
    else:
        derivative = 0.0

    lower = float(alpha_array(0.0, params))
    upper = float(alpha_array(m_max, params))
    roots = count_derivative_roots(lambdas, lower, upper, scan_points)

    max_gain = None
    if marginal_points > 0:
        _, gains = marginal_gain_scan(effective, params, marginal_points)
        max_gain = float(np.max(gains))

    n_equations = system.shape[0]
    if max_gain is not None and max_gain > kkt_tol:
        # Some concentration outside the support still raises the rate
        status = CertificateStatus.INVALID
    elif n_equations < n + 1:
        status = CertificateStatus.UNDERDETERMINED
    elif stationarity <= kkt_tol and derivative <= kkt_tol and roots.size <= n + 1:
        status = CertificateStatus.VALID
    else:
        status = CertificateStatus.INVALID

    logger.info(
        f"KKT certificate: K={effective.size}, equations={n_equations}, "
        f"residuals=({stationarity:.2e}, {derivative:.2e}), roots={roots.size}, "
        f"max gain={max_gain}, status={status.value}"
    )
    return KKTCertificate(
        lambdas=lambdas,
        stationarity_residual=stationarity,
        derivative_residual=derivative,
        root_count=int(roots.size),
        support_size=effective.size,
        status=status,
        n_equations=n_equations,
        roots=roots,
        boundary_atoms=int(on_boundary.sum()),
        max_marginal_gain=max_gain,
    )
