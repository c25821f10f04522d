"""Maximize the stationary i.i.d. rate over finite-support input distributions.

The search space is (atoms in [0, M]^K, weights in the simplex) for every
K = 2..k_max. Each start runs projected coordinate ascent: a simplex-projected
finite-difference gradient step on the weights, then a bounded scalar line
search on each atom. Starts are seeded by their index, so the result is
reproducible whatever the thread count.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import comb

from src.channel.params import ReceptorParams
from src.channel.receptor_channel import RateEvaluator, rate_evaluator
from src.distribution.input_dist import DiscreteDist
from src.optimization.kkt import KKTCertificate, effective_support, kkt_certificate, marginal_gain_scan
from src.utils.errors import ConvergenceError, DomainError

logger = logging.getLogger(__name__)

FD_STEP = 1e-7
# Rate loss tolerated when pruning a start's result down to its effective support
PRUNE_RATE_SLACK = 1e-9
MIN_STEP = 1e-12
GRID_CHUNK = 20_000
RESEED_WEIGHT = 0.05
MIN_RESEED_WEIGHT = 1e-8

STATUS_CONVERGED = "converged"
STATUS_STALLED = "stalled"
STATUS_MAX_ITERS = "max_iters"
STATUS_FAILED = "failed"


@dataclass(frozen=True)
class OptimizerConfig:
    k_max: Optional[int] = None
    n_starts: int = 8
    seed: int = 0
    max_iters: int = 200
    tol: float = 1e-10
    merge_eps: float = 1e-4
    weight_floor: float = 1e-6
    threads: int = 1
    kkt_tol: float = 1e-4

    def __post_init__(self):
        if self.k_max is not None and self.k_max < 2:
            raise DomainError(f"k_max must be >= 2, got {self.k_max}")
        if self.n_starts < 1:
            raise DomainError(f"n_starts must be >= 1, got {self.n_starts}")
        if self.max_iters < 0:
            raise DomainError(f"max_iters must be >= 0, got {self.max_iters}")
        if not self.tol > 0:
            raise DomainError(f"tol must be positive, got {self.tol}")
        if not 0 <= self.merge_eps < 1:
            raise DomainError(f"merge_eps must lie in [0, 1), got {self.merge_eps}")
        if not 0 <= self.weight_floor < 1:
            raise DomainError(f"weight_floor must lie in [0, 1), got {self.weight_floor}")
        if self.threads < 1:
            raise DomainError(f"threads must be >= 1, got {self.threads}")

    def resolved_k_max(self, n_receptors: int) -> int:
        """Support-size cap; defaults to N + 2."""
        return self.k_max if self.k_max is not None else n_receptors + 2

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class StartRecord:
    k: int
    start_index: int
    seed: Optional[int]
    rate_bits: Optional[float]
    iterations: int
    status: str
    atoms: List[float] = field(default_factory=list)
    weights: List[float] = field(default_factory=list)
    warm: bool = False
    message: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class CapacityResult:
    dist: DiscreteDist
    rate_bits: float
    certificate: Optional[KKTCertificate]
    starts_log: List[StartRecord]
    params: ReceptorParams
    config: OptimizerConfig
    converged: bool

    @property
    def support_size(self) -> int:
        if self.certificate is not None:
            return self.certificate.support_size
        return self.dist.size

    def to_dict(self) -> Dict[str, Any]:
        n = self.params.n_receptors
        return {
            "params": self.params.to_dict(),
            "config": self.config.to_dict(),
            "dist": self.dist.to_records(),
            "rate_bits": self.rate_bits,
            "converged": self.converged,
            "support_bound": {"floor": support_bound(n), "raw": support_bound_raw(n)},
            "certificate": self.certificate.to_dict() if self.certificate is not None else None,
            "starts_log": [record.to_dict() for record in self.starts_log],
        }


def support_bound(n_receptors: int) -> int:
    """Largest support an optimal i.i.d. input needs: floor((N + 4) / 2)."""
    if n_receptors < 1:
        raise DomainError(f"n_receptors must be >= 1, got {n_receptors}")
    return (n_receptors + 4) // 2


def support_bound_raw(n_receptors: int) -> float:
    if n_receptors < 1:
        raise DomainError(f"n_receptors must be >= 1, got {n_receptors}")
    return (n_receptors + 4) / 2


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum(w) = 1}."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    cumulative = np.cumsum(u) - 1.0
    ranks = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - cumulative / ranks > 0)[-1]
    theta = cumulative[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


class _LocalSearch:
    """Projected coordinate ascent from one starting point."""

    def __init__(self, evaluator: RateEvaluator, config: OptimizerConfig):
        self.evaluator = evaluator
        self.config = config
        self.m_max = evaluator.params.m_max

    def rate(self, atoms: np.ndarray, weights: np.ndarray) -> float:
        return float(self.evaluator.rates(atoms[None, :], weights[None, :])[0])

    def weight_gradient(self, atoms: np.ndarray, weights: np.ndarray, base: float) -> np.ndarray:
        """Gradient of R(w / sum(w)), which lies in the simplex tangent space at sum(w) = 1.

        Central differences, one-sided where a weight is too small to step down.
        """
        k = weights.size
        h = FD_STEP
        central = weights > h
        steps = np.eye(k) * h
        forward = weights[None, :] + steps
        backward = np.where(central[:, None], weights[None, :] - steps, weights[None, :])
        rows = np.vstack([forward, backward])
        rows = rows / rows.sum(axis=1, keepdims=True)
        values = self.evaluator.rates(np.tile(atoms, (2 * k, 1)), rows)
        up, down = values[:k], values[k:]
        return np.where(central, (up - down) / (2 * h), (up - base) / h)

    def weight_step(self, atoms, weights, rate, step):
        gradient = self.weight_gradient(atoms, weights, rate)
        if not np.all(np.isfinite(gradient)):
            raise FloatingPointError("non-finite weight gradient")
        if np.max(np.abs(gradient)) < 1e-14:
            return weights, rate, step
        while step >= MIN_STEP:
            candidate = project_simplex(weights + step * gradient)
            candidate_rate = self.rate(atoms, candidate)
            if candidate_rate > rate:
                return candidate, candidate_rate, step * 2.0
            step *= 0.5
        return weights, rate, max(step, MIN_STEP) * 2.0

    def atom_step(self, atoms, weights, rate):
        atoms = atoms.copy()
        xatol = max(1e-9 * self.m_max, 1e-15)
        for i in range(atoms.size):
            def objective(x, i=i):
                trial = atoms.copy()
                trial[i] = x
                return -self.rate(trial, weights)

            found = minimize_scalar(objective, bounds=(0.0, self.m_max), method="bounded", options={"xatol": xatol})
            # Bounded Brent never evaluates the endpoints themselves
            candidates = [(float(-found.fun), float(found.x)), (-objective(0.0), 0.0), (-objective(self.m_max), self.m_max)]
            best_rate, best_x = max(candidates, key=lambda c: (c[0], -c[1]))
            if best_rate > rate:
                atoms[i] = best_x
                rate = best_rate
        return atoms, rate

    def best_new_atom(self, atoms: np.ndarray, weights: np.ndarray) -> Tuple[float, float]:
        """Concentration with the largest marginal gain, and that gain."""
        dist = DiscreteDist.canonical(atoms, weights, m_max=self.m_max)
        grid, gains = marginal_gain_scan(dist, self.evaluator.params)
        best = int(np.argmax(gains))
        return float(grid[best]), float(gains[best])

    def free_slot(self, atoms: np.ndarray, weights: np.ndarray) -> Tuple[Optional[int], np.ndarray]:
        """An atom that adds nothing to the mixture: empty, or coincident with an earlier atom.

        A coincident atom hands its mass to its partner.
        """
        empty = np.flatnonzero(weights <= self.config.weight_floor)
        if empty.size:
            return int(empty[0]), weights
        radius = self.config.merge_eps * self.m_max
        for i, j in combinations(range(atoms.size), 2):
            if abs(atoms[i] - atoms[j]) <= radius:
                weights = weights.copy()
                weights[i] += weights[j]
                weights[j] = 0.0
                return j, weights
        return None, weights

    def reseed(self, atoms, weights, rate, x_new):
        """Move a free atom to x_new with the largest small weight that raises the rate."""
        slot, weights = self.free_slot(atoms, weights)
        if slot is None:
            return None
        atoms = atoms.copy()
        atoms[slot] = x_new
        base = weights.copy()
        base[slot] = 0.0
        base /= base.sum()
        t = RESEED_WEIGHT
        while t >= MIN_RESEED_WEIGHT:
            candidate = (1.0 - t) * base
            candidate[slot] = t
            candidate_rate = self.rate(atoms, candidate)
            if candidate_rate > rate:
                return atoms, candidate, candidate_rate
            t *= 0.5
        return None

    def run(self, atoms: np.ndarray, weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float, int, str]:
        """Ascend until a sweep gains at most tol and no concentration has a marginal gain above kkt_tol.

        A stall with a positive marginal gain re-seeds a free atom at the best
        new concentration. Without a free atom the start ends as stalled.
        """
        rate = self.rate(atoms, weights)
        if not np.isfinite(rate):
            raise FloatingPointError("non-finite rate at the starting point")
        step = 1.0
        for iteration in range(1, self.config.max_iters + 1):
            previous = rate
            weights, rate, step = self.weight_step(atoms, weights, rate, step)
            atoms, rate = self.atom_step(atoms, weights, rate)
            if not np.isfinite(rate):
                raise FloatingPointError(f"non-finite rate at iteration {iteration}")
            if rate - previous > self.config.tol:
                continue
            x_new, gain = self.best_new_atom(atoms, weights)
            if gain <= self.config.kkt_tol:
                return atoms, weights, rate, iteration, STATUS_CONVERGED
            reseeded = self.reseed(atoms, weights, rate, x_new)
            if reseeded is None:
                logger.debug(f"Stalled at rate {rate:.10f} with marginal gain {gain:.2e} at x={x_new:.4g}")
                return atoms, weights, rate, iteration, STATUS_STALLED
            atoms, weights, rate = reseeded
            step = 1.0
        return atoms, weights, rate, self.config.max_iters, STATUS_MAX_ITERS


@dataclass(frozen=True)
class _StartSpec:
    k: int
    start_index: int
    seed: Optional[int]
    initial: Optional[DiscreteDist] = None


def _initial_point(spec: _StartSpec, m_max: float) -> Tuple[np.ndarray, np.ndarray]:
    if spec.initial is not None:
        return spec.initial.atoms.copy(), spec.initial.weights.copy()
    rng = np.random.default_rng(spec.seed)
    atoms = np.sort(rng.uniform(0.0, m_max, spec.k))
    weights = rng.dirichlet(np.ones(spec.k))
    return atoms, weights


def _finalize(
    atoms: np.ndarray,
    weights: np.ndarray,
    evaluator: RateEvaluator,
    config: OptimizerConfig
) -> Tuple[DiscreteDist, float]:
    m_max = evaluator.params.m_max
    dist = DiscreteDist.canonical(atoms, weights, merge_radius=1e-12 * m_max, m_max=m_max)
    rate = evaluator.rate(dist)
    pruned = effective_support(dist, m_max, config.merge_eps, config.weight_floor)
    if pruned.size < dist.size:
        pruned_rate = evaluator.rate(pruned)
        if pruned_rate >= rate - PRUNE_RATE_SLACK:
            dist, rate = pruned, pruned_rate
    return _eliminate_atoms(dist, rate, evaluator)


def _eliminate_atoms(dist: DiscreteDist, rate: float, evaluator: RateEvaluator) -> Tuple[DiscreteDist, float]:
    """Greedily drop atoms whose removal costs at most PRUNE_RATE_SLACK."""
    removed = True
    while removed and dist.size > 2:
        removed = False
        for i in range(dist.size):
            keep = np.arange(dist.size) != i
            candidate = DiscreteDist(dist.atoms[keep], dist.weights[keep] / dist.weights[keep].sum())
            candidate_rate = evaluator.rate(candidate)
            if candidate_rate >= rate - PRUNE_RATE_SLACK:
                dist, rate = candidate, candidate_rate
                removed = True
                break
    return dist, rate


def _run_start(spec: _StartSpec, evaluator: RateEvaluator, config: OptimizerConfig) -> Tuple[StartRecord, Optional[DiscreteDist]]:
    record = StartRecord(
        k=spec.k, start_index=spec.start_index, seed=spec.seed,
        rate_bits=None, iterations=0, status=STATUS_FAILED, warm=spec.initial is not None,
    )
    try:
        atoms, weights = _initial_point(spec, evaluator.params.m_max)
        atoms, weights, _, iterations, status = _LocalSearch(evaluator, config).run(atoms, weights)
        dist, rate = _finalize(atoms, weights, evaluator, config)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as e:
        record.message = str(e)
        logger.warning(f"Start {spec.start_index} (K={spec.k}) failed: {e}")
        return record, None

    record.rate_bits = rate
    record.iterations = iterations
    record.status = status
    record.atoms = [float(x) for x in dist.atoms]
    record.weights = [float(p) for p in dist.weights]
    logger.debug(f"Start {spec.start_index} (K={spec.k}): rate={rate:.10f} after {iterations} sweeps, {status}")
    return record, dist


def _start_specs(params: ReceptorParams, config: OptimizerConfig, initial_dists: Sequence[DiscreteDist]) -> List[_StartSpec]:
    specs = [
        _StartSpec(k=dist.size, start_index=-(j + 1), seed=None, initial=dist)
        for j, dist in enumerate(initial_dists)
    ]
    k_max = config.resolved_k_max(params.n_receptors)
    index = 0
    for k in range(2, k_max + 1):
        for _ in range(config.n_starts):
            specs.append(_StartSpec(k=k, start_index=index, seed=config.seed + index))
            index += 1
    return specs


def optimize_iid(
    params: ReceptorParams,
    config: Optional[OptimizerConfig] = None,
    initial_dists: Sequence[DiscreteDist] = ()
) -> CapacityResult:
    """Best i.i.d. input found by multistart local search, with its KKT certificate.

    n_starts random starts are run for every support size K = 2..k_max. Optional
    warm starts are searched as well. Starts whose search raised are excluded;
    a winner that hit max_iters is returned with converged=False and a warning.
    """
    config = config or OptimizerConfig()
    for dist in initial_dists:
        dist.check_support(params.m_max)
    evaluator = rate_evaluator(params)
    specs = _start_specs(params, config, initial_dists)
    logger.info(
        f"Optimizing N={params.n_receptors}, beta={params.beta}, M={params.m_max}: "
        f"{len(specs)} starts on {config.threads} thread(s)"
    )

    def run(spec):
        return _run_start(spec, evaluator, config)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(run, specs))
    else:
        outcomes = [run(spec) for spec in specs]

    records = [record for record, _ in outcomes]
    finished = [(record, dist) for record, dist in outcomes if dist is not None]
    if not finished:
        raise ConvergenceError(
            f"all {len(specs)} optimizer starts failed",
            diagnostics=[record.to_dict() for record in records],
        )

    # Deterministic reduction: highest rate, then lexicographically smallest atoms
    best_record, best_dist = min(finished, key=lambda pair: (-pair[0].rate_bits, tuple(pair[0].atoms)))
    converged = best_record.status == STATUS_CONVERGED
    if not converged:
        logger.warning(
            f"Best start {best_record.start_index} ended {best_record.status} "
            f"(max_iters={config.max_iters}); rate {best_record.rate_bits:.10f} is not a converged point"
        )

    certificate = None
    if best_dist.size >= 2:
        certificate = kkt_certificate(
            best_dist, params,
            merge_eps=config.merge_eps, weight_floor=config.weight_floor, kkt_tol=config.kkt_tol,
        )
    else:
        logger.warning("Best distribution is a point mass; no certificate computed")

    logger.info(f"Best rate {best_record.rate_bits:.10f} bits/epoch on {best_dist.size} atoms")
    return CapacityResult(
        dist=best_dist,
        rate_bits=best_record.rate_bits,
        certificate=certificate,
        starts_log=records,
        params=params,
        config=config,
        converged=converged,
    )


@dataclass
class RateTable:
    """Rates of every k-atom lattice distribution, one row per (atoms, weights)."""
    params: ReceptorParams
    atoms: np.ndarray
    weights: np.ndarray
    rates: np.ndarray

    def __len__(self) -> int:
        return int(self.rates.size)

    def dist(self, row: int) -> DiscreteDist:
        return DiscreteDist(self.atoms[row], self.weights[row])

    def rows(self) -> Iterator[Tuple[DiscreteDist, float]]:
        for row in range(len(self)):
            yield self.dist(row), float(self.rates[row])

    def best(self) -> Tuple[DiscreteDist, float]:
        row = int(np.argmax(self.rates))
        return self.dist(row), float(self.rates[row])


def _compositions(total: int, parts: int) -> np.ndarray:
    """All ways to write total as an ordered sum of `parts` positive integers."""
    if parts == 1:
        return np.array([[total]])
    cuts = np.array(list(combinations(range(1, total), parts - 1)), dtype=int)
    bounds = np.hstack([np.zeros((cuts.shape[0], 1), dtype=int), cuts, np.full((cuts.shape[0], 1), total)])
    return np.diff(bounds, axis=1)


def grid_rate_curve(
    params: ReceptorParams,
    grid_size: int,
    k: int,
    weight_steps: Optional[int] = None,
    max_rows: int = 2_000_000
) -> RateTable:
    """Exhaustive rate table over k distinct atoms from linspace(0, M, grid_size)
    and weights that are positive multiples of 1 / weight_steps."""
    if grid_size < 2:
        raise DomainError(f"grid_size must be >= 2, got {grid_size}")
    if not 1 <= k <= grid_size:
        raise DomainError(f"k must lie in [1, grid_size], got {k}")
    weight_steps = grid_size - 1 if weight_steps is None else weight_steps
    if weight_steps < k:
        raise DomainError(f"weight_steps={weight_steps} cannot give {k} positive weights")

    n_rows = int(comb(grid_size, k, exact=True) * comb(weight_steps - 1, k - 1, exact=True))
    if n_rows > max_rows:
        raise DomainError(
            f"lattice has {n_rows} distributions, above the cap of {max_rows}; "
            f"use a smaller grid_size or weight_steps"
        )

    grid = np.linspace(0.0, params.m_max, grid_size)
    atom_sets = grid[np.array(list(combinations(range(grid_size), k)), dtype=int)]
    weight_sets = _compositions(weight_steps, k) / weight_steps
    atoms = np.repeat(atom_sets, weight_sets.shape[0], axis=0)
    weights = np.tile(weight_sets, (atom_sets.shape[0], 1))

    if k == 1:
        rates = np.zeros(n_rows)
    else:
        evaluator = rate_evaluator(params)
        rates = np.concatenate([
            evaluator.rates(atoms[i:i + GRID_CHUNK], weights[i:i + GRID_CHUNK])
            for i in range(0, n_rows, GRID_CHUNK)
        ])
    logger.info(f"Evaluated {n_rows} lattice distributions with k={k}, grid_size={grid_size}")
    return RateTable(params=params, atoms=atoms, weights=weights, rates=rates)
