"""Monte Carlo simulation of the receptor channel and empirical rate estimators.

Estimates are computed on bound-count transitions: an epoch starting from
count b is binned by its type (b, n2, n3), n2 receptors binding and n3
unbinding. Given the type every full-state successor is equally likely, so
the lumped plug-in entropy equals the full-state plug-in entropy.
"""
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple
import logging

import numpy as np

from src.channel.full_state import FullState
from src.channel.params import ReceptorParams, alpha_array
from src.channel.receptor_channel import lumped_kernel, rate_evaluator, stationary_distribution
from src.distribution.input_dist import DiscreteDist, binary_entropy, binary_entropy_array
from src.utils.errors import DomainError

logger = logging.getLogger(__name__)

Y0_ALL_UNBOUND = "all-unbound"
Y0_STATIONARY = "stationary-sample"
Y0_MODES = (Y0_ALL_UNBOUND, Y0_STATIONARY)

DEFAULT_BURN_IN = 0.1
DEFAULT_BOOTSTRAP = 32
MIN_BIN_COUNT = 30
_LN2 = np.log(2.0)

# spawn_key stream indices under a trajectory seed
_STREAM_DYNAMICS = 0
_STREAM_BOOTSTRAP = 1


def _generator(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream,)))


@dataclass(frozen=True, eq=False)
class Trajectory:
    inputs: np.ndarray
    states: np.ndarray
    seed: int
    y0_mode: str = Y0_ALL_UNBOUND

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float).reshape(-1)
        states = np.asarray(self.states, dtype=bool)
        if states.ndim != 2 or states.shape[0] != inputs.size + 1:
            raise DomainError(f"{inputs.size} inputs need {inputs.size + 1} states, got shape {states.shape}")
        inputs.flags.writeable = False
        states.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "states", states)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.seed == other.seed
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.states, other.states)
        )

    @property
    def t_steps(self) -> int:
        return int(self.inputs.size)

    @property
    def n_receptors(self) -> int:
        return int(self.states.shape[1])

    @property
    def bound_counts(self) -> np.ndarray:
        return self.states.sum(axis=1)

    def outputs(self) -> Iterator[FullState]:
        for row in self.states:
            yield FullState(tuple(row))

    def csv_rows(self) -> Iterator[Tuple[Any, ...]]:
        """Rows (t, x, count_bound); t = 0 is the initial state and has no input."""
        counts = self.bound_counts
        yield 0, "", int(counts[0])
        for t in range(1, self.t_steps + 1):
            yield t, float(self.inputs[t - 1]), int(counts[t])


def _initial_state(
    dist: DiscreteDist,
    params: ReceptorParams,
    y0_mode: str,
    rng: np.random.Generator
) -> np.ndarray:
    n = params.n_receptors
    state = np.zeros(n, dtype=bool)
    if y0_mode == Y0_ALL_UNBOUND:
        return state
    if float(dist.weights @ alpha_array(dist.atoms, params)) == 0.0:
        # All-unbound is the only stationary state
        return state
    pi = stationary_distribution(lumped_kernel(dist, params)).pi_count
    count = rng.choice(n + 1, p=pi)
    state[rng.permutation(n)[:count]] = True
    return state


def _propagate(initial: np.ndarray, stay_bound: np.ndarray, become_bound: np.ndarray) -> np.ndarray:
    """Run every receptor's two-state chain over all epochs at once.

    Epoch t maps state s to stay_bound[t] if s is bound, else become_bound[t].
    When the two agree the epoch resets the state to that value; when only
    become_bound holds it flips the state; otherwise it keeps it. The state
    after epoch t is the last reset value XOR the parity of flips since.
    """
    t_steps, n = stay_bound.shape
    resets = stay_bound == become_bound
    flips = become_bound & ~stay_bound

    index = np.where(resets, np.arange(t_steps)[:, None], -1)
    last_reset = np.maximum.accumulate(index, axis=0)
    flip_count = np.cumsum(flips, axis=0)

    has_reset = last_reset >= 0
    safe = np.maximum(last_reset, 0)
    columns = np.arange(n)[None, :]
    base = np.where(has_reset, become_bound[safe, columns], initial[None, :])
    flips_before = np.where(has_reset, flip_count[safe, columns], 0)
    parity = (flip_count - flips_before) % 2 == 1

    states = np.empty((t_steps + 1, n), dtype=bool)
    states[0] = initial
    states[1:] = base ^ parity
    return states


def simulate_trajectory(
    dist: DiscreteDist,
    params: ReceptorParams,
    t_steps: int,
    seed: int = 0,
    y0_mode: str = Y0_ALL_UNBOUND
) -> Trajectory:
    """Draw x_1..x_T i.i.d. from dist and evolve N independent receptors.

    A bound receptor unbinds with probability beta; an unbound one binds with
    probability alpha(x_t).
    """
    if t_steps < 1:
        raise DomainError(f"t_steps must be >= 1, got {t_steps}")
    if y0_mode not in Y0_MODES:
        raise DomainError(f"y0_mode must be one of {Y0_MODES}, got {y0_mode!r}")
    dist.check_support(params.m_max)

    rng = _generator(seed, _STREAM_DYNAMICS)
    initial = _initial_state(dist, params, y0_mode, rng)
    inputs = dist.atoms[rng.choice(dist.size, size=t_steps, p=dist.weights)]
    alphas = alpha_array(inputs, params)
    u = rng.random((t_steps, params.n_receptors))
    stay_bound = u >= params.beta
    become_bound = u < alphas[:, None]

    states = _propagate(initial, stay_bound, become_bound)
    logger.debug(f"Simulated {t_steps} epochs of {params.n_receptors} receptors (seed={seed}, y0={y0_mode})")
    return Trajectory(inputs=inputs, states=states, seed=seed, y0_mode=y0_mode)


def _burn_in_start(traj: Trajectory, burn_in: float) -> int:
    if not 0.0 <= burn_in < 1.0:
        raise DomainError(f"burn_in must lie in [0, 1), got {burn_in}")
    return int(burn_in * traj.t_steps)


def empirical_stationary(traj: Trajectory, burn_in: float = DEFAULT_BURN_IN, min_samples: int = 1000) -> np.ndarray:
    """Normalized histogram of bound counts after discarding the burn-in prefix."""
    counts = traj.bound_counts[_burn_in_start(traj, burn_in):]
    if traj.t_steps < min_samples:
        logger.warning(f"Only {traj.t_steps} epochs; the histogram may be far from stationary")
    return np.bincount(counts, minlength=traj.n_receptors + 1) / counts.size


def empirical_kernel(traj: Trajectory, burn_in: float = DEFAULT_BURN_IN) -> np.ndarray:
    """Bound-count transition frequencies; rows never visited stay zero."""
    n = traj.n_receptors
    counts = traj.bound_counts
    start = _burn_in_start(traj, burn_in)
    pairs = counts[start:-1] * (n + 1) + counts[start + 1:]
    table = np.bincount(pairs, minlength=(n + 1) ** 2).reshape(n + 1, n + 1).astype(float)
    visits = table.sum(axis=1, keepdims=True)
    return np.divide(table, visits, out=np.zeros_like(table), where=visits > 0)


@dataclass
class EstimatorReport:
    rate_bits: float
    std_error: float
    h_output_given_past: float
    h_output_given_input_and_past: float
    bound_probability: float
    n_samples: int
    n_boot: int
    block_length: int
    undersampled: bool = False
    sparse_counts: List[int] = field(default_factory=list)
    analytic_rate: Optional[float] = None

    def interval(self, k_sigma: float = 3.0) -> Tuple[float, float]:
        return self.rate_bits - k_sigma * self.std_error, self.rate_bits + k_sigma * self.std_error

    def contains(self, value: float, k_sigma: float = 3.0) -> bool:
        low, high = self.interval(k_sigma)
        return low <= value <= high

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["interval_3sigma"] = list(self.interval(3.0))
        if self.analytic_rate is not None:
            payload["analytic_within_3sigma"] = self.contains(self.analytic_rate)
        return payload


def _transition_types(traj: Trajectory, params: ReceptorParams, start: int) -> np.ndarray:
    """Index into the rate evaluator's type table for each epoch t >= start."""
    evaluator = rate_evaluator(params)
    n = params.n_receptors
    lookup = np.full((n + 1, n + 1, n + 1), -1, dtype=int)
    lookup[evaluator.b, evaluator.n2, evaluator.n3] = np.arange(evaluator.b.size)

    before, after = traj.states[start:-1], traj.states[start + 1:]
    b = before.sum(axis=1)
    n2 = (~before & after).sum(axis=1)
    n3 = (before & ~after).sum(axis=1)
    return lookup[b, n2, n3]


class _PluginStatistic:
    """Rate estimate from a multiset of transition types."""

    def __init__(self, params: ReceptorParams, dist: DiscreteDist):
        evaluator = rate_evaluator(params)
        self.n = params.n_receptors
        self.origin = evaluator.b
        self.log_multiplicity = evaluator.log_multiplicity
        self.n_types = evaluator.b.size
        self.h2_beta = binary_entropy(params.beta)
        self.mean_h2_alpha = float(dist.weights @ binary_entropy_array(alpha_array(dist.atoms, params)))

    def __call__(self, types: np.ndarray) -> Tuple[float, float, float, float]:
        counts = np.bincount(types, minlength=self.n_types).astype(float)
        per_origin = np.bincount(self.origin, weights=counts, minlength=self.n + 1)
        total = counts.sum()
        used = counts > 0
        conditional = counts[used] / per_origin[self.origin[used]]
        h_past = float(np.sum(counts[used] * (self.log_multiplicity[used] - np.log2(conditional))) / total)
        bound = float(per_origin @ np.arange(self.n + 1)) / (total * self.n)
        h_input = self.n * (bound * self.h2_beta + (1.0 - bound) * self.mean_h2_alpha)
        return h_past - h_input, h_past, h_input, bound


def _block_resample(n: int, block: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of one moving-block bootstrap resample of a length-n series."""
    n_blocks = -(-n // block)
    starts = rng.integers(0, n - block + 1, size=n_blocks)
    return (starts[:, None] + np.arange(block)[None, :]).ravel()[:n]


def empirical_rate(
    traj: Trajectory,
    params: ReceptorParams,
    dist: DiscreteDist,
    n_boot: int = DEFAULT_BOOTSTRAP,
    burn_in: float = DEFAULT_BURN_IN,
    min_bin_count: int = MIN_BIN_COUNT,
    block_length: Optional[int] = None
) -> EstimatorReport:
    """Plug-in H(Y1|Y0) minus N [p(B) H2(beta) + p(U) E H2(alpha(X))] with a block-bootstrap error.

    dist is the law the trajectory's inputs were drawn from.
    """
    if traj.n_receptors != params.n_receptors:
        raise DomainError(f"trajectory has {traj.n_receptors} receptors, params expect {params.n_receptors}")
    if n_boot < 2:
        raise DomainError(f"n_boot must be >= 2, got {n_boot}")

    types = _transition_types(traj, params, _burn_in_start(traj, burn_in))
    n_samples = int(types.size)
    if n_samples < 2:
        raise DomainError("too few epochs after burn-in")
    statistic = _PluginStatistic(params, dist)
    rate, h_past, h_input, bound = statistic(types)

    block = block_length or max(1, int(np.sqrt(n_samples)))
    block = min(block, n_samples)
    rng = _generator(traj.seed, _STREAM_BOOTSTRAP)
    replicates = np.array([statistic(types[_block_resample(n_samples, block, rng)])[0] for _ in range(n_boot)])
    std_error = float(np.std(replicates, ddof=1))

    per_origin = np.bincount(statistic.origin[types], minlength=params.n_receptors + 1)
    sparse = [int(b) for b in np.flatnonzero((per_origin > 0) & (per_origin < min_bin_count))]
    undersampled = bool(sparse)
    if undersampled:
        occupied = int(np.count_nonzero(np.bincount(types, minlength=statistic.n_types)))
        std_error += (occupied - 1) / (2 * n_samples * _LN2)
        logger.warning(f"Bound counts {sparse} have fewer than {min_bin_count} samples; error bars widened")

    logger.info(f"Empirical rate {rate:.6f} +/- {std_error:.6f} bits/epoch from {n_samples} epochs")
    return EstimatorReport(
        rate_bits=rate,
        std_error=std_error,
        h_output_given_past=h_past,
        h_output_given_input_and_past=h_input,
        bound_probability=bound,
        n_samples=n_samples,
        n_boot=n_boot,
        block_length=block,
        undersampled=undersampled,
        sparse_counts=sparse,
    )
