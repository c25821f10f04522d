"""Diffusion front end: emission schedule -> receiver concentration -> receptor occupancy.

The transmitter emits at a constant rate F_n during epoch n. Sampled at
t = m * delta, the receiver concentration is sum_n F_n h_{m-n}, where h_n is
the Green's function integrated over one epoch. h_0 = 0 because the kernel
vanishes for non-positive time, so c(m delta) depends on F_0..F_{m-1} only.
"""
from dataclasses import dataclass
from typing import Optional, Sequence
import logging

import numpy as np
from scipy.integrate import quad
from scipy.linalg import solve_triangular, toeplitz
from scipy.special import erfc, exp1

from src.utils.errors import DomainError, IllPosedError, NumericalRankError

logger = logging.getLogger(__name__)

QUAD_EPSREL = 1e-10
QUAD_LIMIT = 200
# h_1 below this fraction of max|h| makes the triangular solve meaningless
INVERSION_RTOL = 1e-14
SUPPORTED_CLOSED_FORMS = (1.0, 1.5)


@dataclass(frozen=True)
class DiffusionConfig:
    d_coeff: float
    r_dist: float
    delta: float
    kernel_exponent: float = 1.0

    def __post_init__(self):
        if self.d_coeff <= 0:
            raise DomainError(f"diffusion coefficient must be positive, got {self.d_coeff}")
        if self.r_dist < 0:
            raise DomainError(f"distance must be nonnegative, got {self.r_dist}")
        if self.delta <= 0:
            raise DomainError(f"sampling period must be positive, got {self.delta}")
        if self.kernel_exponent <= 0:
            raise DomainError(f"kernel exponent must be positive, got {self.kernel_exponent}")

    def kernel(self, t: float) -> float:
        """Green's function exp(-r^2 / 4Dt) / (4 pi D t)^e, zero for t <= 0."""
        if t <= 0:
            return 0.0
        return float(np.exp(-self.r_dist ** 2 / (4 * self.d_coeff * t)) / (4 * np.pi * self.d_coeff * t) ** self.kernel_exponent)


@dataclass(frozen=True, eq=False)
class EmissionSchedule:
    rates: np.ndarray

    def __post_init__(self):
        rates = np.array(self.rates, dtype=float).reshape(-1)
        if np.any(rates < 0) or np.any(~np.isfinite(rates)):
            raise DomainError("emission rates must be finite and nonnegative")
        rates.flags.writeable = False
        object.__setattr__(self, "rates", rates)

    def __len__(self) -> int:
        return int(self.rates.size)

    @classmethod
    def impulse(cls, length: int) -> "EmissionSchedule":
        rates = np.zeros(length)
        rates[0] = 1.0
        return cls(rates)


@dataclass
class InversionResult:
    rates: np.ndarray
    physically_consistent: bool
    negative_count: int = 0

    def schedule(self) -> EmissionSchedule:
        """The recovered schedule; fails if any recovered rate is negative."""
        return EmissionSchedule(self.rates)


def impulse_coeffs(config: DiffusionConfig, n_max: int) -> np.ndarray:
    """h_0..h_{n_max}, h_n the integral of the kernel over ((n - 1) delta, n delta]."""
    if n_max < 0:
        raise DomainError(f"n_max must be >= 0, got {n_max}")
    if config.r_dist == 0 and config.kernel_exponent >= 1:
        raise IllPosedError(
            f"kernel 1/(4 pi D t)^{config.kernel_exponent} is not integrable at t = 0 when r = 0"
        )

    h = np.zeros(n_max + 1)
    for n in range(1, n_max + 1):
        value, _ = quad(
            config.kernel, (n - 1) * config.delta, n * config.delta,
            epsabs=0.0, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT,
        )
        if not value > 0:
            raise NumericalRankError(f"h_{n} = {value!r} is not positive")
        h[n] = value
    logger.debug(f"Computed {n_max} impulse coefficients, h_1={h[1] if n_max else 0.0:.6e}")
    return h


def closed_form_coeffs(config: DiffusionConfig, n_max: int) -> np.ndarray:
    """Closed-form h_0..h_{n_max} for kernel exponents 1 and 3/2.

    With a = r^2 / 4D, the exponent-1 kernel integrates to
    (E1(a / n delta) - E1(a / (n-1) delta)) / (4 pi D) and the exponent-3/2 kernel
    to (4 pi D)^{-3/2} sqrt(pi / a) (erfc(sqrt(a / n delta)) - erfc(sqrt(a / (n-1) delta))).
    """
    if config.kernel_exponent not in SUPPORTED_CLOSED_FORMS:
        raise DomainError(f"no closed form for kernel exponent {config.kernel_exponent}")
    if config.r_dist == 0:
        raise IllPosedError("closed forms need r > 0")
    if n_max < 0:
        raise DomainError(f"n_max must be >= 0, got {n_max}")

    a = config.r_dist ** 2 / (4 * config.d_coeff)
    n = np.arange(1, n_max + 1, dtype=float)
    upper = a / (n * config.delta)
    # The n = 1 interval starts at t = 0, where both antiderivatives vanish
    lower = a / (np.maximum(n - 1, 1) * config.delta)
    first = n == 1

    h = np.zeros(n_max + 1)
    if config.kernel_exponent == 1.0:
        h[1:] = (exp1(upper) - np.where(first, 0.0, exp1(lower))) / (4 * np.pi * config.d_coeff)
    else:
        prefactor = (4 * np.pi * config.d_coeff) ** -1.5 * np.sqrt(np.pi / a)
        h[1:] = prefactor * (erfc(np.sqrt(upper)) - np.where(first, 0.0, erfc(np.sqrt(lower))))
    return h


def _as_rates(schedule) -> np.ndarray:
    # Plain arrays may be signed, e.g. an inversion of noisy data fed back in
    if isinstance(schedule, EmissionSchedule):
        return schedule.rates
    rates = np.asarray(schedule, dtype=float).reshape(-1)
    if not np.all(np.isfinite(rates)):
        raise DomainError("emission rates must be finite")
    return rates


def concentration_sequence(schedule, h: np.ndarray) -> np.ndarray:
    """c(m delta) = sum_{n <= m} F_n h_{m-n} for m = 0..len(schedule) - 1."""
    rates = _as_rates(schedule)
    h = np.asarray(h, dtype=float)
    if h.size < rates.size:
        raise DomainError(f"need at least {rates.size} coefficients, got {h.size}")
    return np.convolve(rates, h[:rates.size])[:rates.size]


def observed_concentrations(schedule, h: np.ndarray) -> np.ndarray:
    """c(delta)..c(m delta) for a schedule F_0..F_{m-1}; the samples that determine it."""
    rates = _as_rates(schedule)
    return concentration_sequence(np.append(rates, 0.0), h)[1:]


def invert_concentration(c: Sequence[float], h: np.ndarray) -> InversionResult:
    """Recover F_0..F_{m-1} from c(delta)..c(m delta) by forward substitution.

    The system is lower triangular Toeplitz with h_1 on the diagonal.
    """
    c = np.asarray(c, dtype=float).reshape(-1)
    h = np.asarray(h, dtype=float)
    m = c.size
    if h.size < m + 1:
        raise DomainError(f"need coefficients h_0..h_{m}, got {h.size}")
    if not h[1] > INVERSION_RTOL * np.max(np.abs(h[:m + 1])):
        raise IllPosedError(f"h_1 = {h[1]!r} is too small to invert the convolution")

    matrix = toeplitz(h[1:m + 1], np.zeros(m))
    rates = solve_triangular(matrix, c, lower=True)
    negative = int(np.sum(rates < 0))
    if negative:
        logger.warning(f"Inverted schedule has {negative} negative emission rates; concentration data is not physical")
    return InversionResult(rates=rates, physically_consistent=negative == 0, negative_count=negative)


def epoch_transition_probs(c: float, k_plus: float, k_minus: float, delta: float):
    """(P(U -> B), P(B -> U)) over one epoch of constant concentration c."""
    if c < 0 or k_plus <= 0 or k_minus <= 0 or delta <= 0:
        raise DomainError("need c >= 0 and positive k_plus, k_minus, delta")
    rho = k_plus * c + k_minus
    p_inf = k_plus * c / rho
    settle = -np.expm1(-rho * delta)
    return p_inf * settle, (1.0 - p_inf) * settle


def master_equation_solve(
    c_per_epoch: Sequence[float],
    k_plus: float,
    k_minus: float,
    p0: float,
    n_epochs: Optional[int] = None,
    delta: float = 1.0
) -> np.ndarray:
    """Bound probability at epoch boundaries for dp/dt = k+ c(t)(1 - p) - k- p.

    c is constant within each epoch, so every epoch is propagated exactly:
    p(t0 + s) = p_inf + (p(t0) - p_inf) exp(-rho s), rho = k+ c + k-.
    Returns p(0), p(delta), ..., p(n_epochs delta).
    """
    c = np.asarray(c_per_epoch, dtype=float).reshape(-1)
    n_epochs = c.size if n_epochs is None else n_epochs
    if not 0.0 <= p0 <= 1.0:
        raise DomainError(f"p0 must lie in [0, 1], got {p0}")
    if np.any(c < 0):
        raise DomainError("concentrations must be nonnegative")
    if k_plus <= 0 or k_minus <= 0 or delta <= 0:
        raise DomainError("k_plus, k_minus and delta must be positive")
    if n_epochs > c.size:
        raise DomainError(f"{n_epochs} epochs requested but only {c.size} concentrations given")

    p = np.empty(n_epochs + 1)
    p[0] = p0
    for n in range(n_epochs):
        rho = k_plus * c[n] + k_minus
        p_inf = k_plus * c[n] / rho
        p[n + 1] = p_inf + (p[n] - p_inf) * np.exp(-rho * delta)
    return np.clip(p, 0.0, 1.0)
