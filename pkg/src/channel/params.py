from dataclasses import dataclass
from typing import Union

import numpy as np

from src.utils.errors import DomainError

# Relative slack on the upper end of [0, M] for values produced by float arithmetic
_SUPPORT_SLACK = 1e-12


@dataclass(frozen=True)
class ReceptorParams:
    k_plus: float
    k_minus: float
    beta: float
    n_receptors: int
    m_max: float

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise DomainError(f"beta must lie in (0, 1), got {self.beta}")
        if self.k_plus <= 0 or self.k_minus <= 0:
            raise DomainError(f"rate constants must be positive, got k_plus={self.k_plus}, k_minus={self.k_minus}")
        if int(self.n_receptors) != self.n_receptors or self.n_receptors < 1:
            raise DomainError(f"n_receptors must be a positive integer, got {self.n_receptors}")
        if self.m_max <= 0:
            raise DomainError(f"m_max must be positive, got {self.m_max}")
        object.__setattr__(self, "n_receptors", int(self.n_receptors))

    @classmethod
    def from_alpha_max(
        cls,
        alpha_max: float,
        beta: float,
        n_receptors: int,
        k_plus: float = 1.0,
        k_minus: float = 1.0
    ) -> "ReceptorParams":
        """Pick M so that alpha(M) equals alpha_max."""
        if not 0.0 < alpha_max < 1.0:
            raise DomainError(f"alpha_max must lie in (0, 1), got {alpha_max}")
        m_max = k_minus * alpha_max / (k_plus * (1.0 - alpha_max))
        return cls(k_plus=k_plus, k_minus=k_minus, beta=beta, n_receptors=n_receptors, m_max=m_max)

    @property
    def alpha_max(self) -> float:
        return alpha(self.m_max, self)

    def to_dict(self) -> dict:
        return {
            "k_plus": self.k_plus,
            "k_minus": self.k_minus,
            "beta": self.beta,
            "n_receptors": self.n_receptors,
            "m_max": self.m_max,
        }


def alpha_array(x: Union[np.ndarray, float], params: ReceptorParams) -> np.ndarray:
    """Per-epoch binding probability k+ x / (k- + k+ x), elementwise."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > params.m_max * (1 + _SUPPORT_SLACK)) or np.any(np.isnan(x)):
        raise DomainError(f"concentration outside [0, {params.m_max}]: {x}")
    x = np.minimum(x, params.m_max)
    return params.k_plus * x / (params.k_minus + params.k_plus * x)


def alpha(x: float, params: ReceptorParams) -> float:
    return float(alpha_array(x, params))
