"""Models of the JSON each command writes; their schemas are published next to the run-config schemas."""
from pydantic import Field
from typing import Dict, List, Literal, Optional, Type, Union

from src.cli.models import DiffusionModel, StrictModel


class AtomRecord(StrictModel):
    x: float = Field(ge=0, description="Concentration")
    p: float = Field(ge=0, le=1, description="Probability")


class ParamsRecord(StrictModel):
    k_plus: float = Field(gt=0)
    k_minus: float = Field(gt=0)
    beta: float = Field(gt=0, lt=1)
    n_receptors: int = Field(ge=1)
    m_max: float = Field(gt=0)


class OptimizerConfigRecord(StrictModel):
    k_max: Optional[int] = None
    n_starts: int
    seed: int
    max_iters: int
    tol: float
    merge_eps: float
    weight_floor: float
    threads: int
    kkt_tol: float


class SupportBoundRecord(StrictModel):
    floor: int
    raw: float


class ResidualsRecord(StrictModel):
    stationarity: float
    derivative: float


class CertificateRecord(StrictModel):
    lambdas: List[float]
    residuals: ResidualsRecord
    root_count: int = Field(ge=0)
    roots: List[float]
    support_size: int = Field(ge=2)
    boundary_atoms: int = Field(ge=0)
    n_equations: int
    max_marginal_gain: Optional[float] = None
    status: Literal["VALID", "INVALID", "UNDERDETERMINED"]
    valid: bool


class StartLogRecord(StrictModel):
    k: int
    start_index: int
    seed: Optional[int] = None
    rate_bits: Optional[float] = Field(default=None, description="Null for a failed start")
    iterations: int
    status: Literal["converged", "stalled", "max_iters", "failed"]
    atoms: List[float]
    weights: List[float]
    warm: bool
    message: str


class CapacityReport(StrictModel):
    params: ParamsRecord
    config: OptimizerConfigRecord
    dist: List[AtomRecord] = Field(min_length=1)
    rate_bits: float = Field(description="bits/epoch")
    converged: bool
    support_bound: SupportBoundRecord
    certificate: Optional[CertificateRecord] = None
    starts_log: List[StartLogRecord]


class SweepReport(StrictModel):
    columns: List[str]
    rows: List[List[Union[int, float, str, bool, None]]]


class EstimateRecord(StrictModel):
    rate_bits: float
    std_error: float = Field(ge=0)
    h_output_given_past: float
    h_output_given_input_and_past: float
    bound_probability: float = Field(ge=0, le=1)
    n_samples: int
    n_boot: int
    block_length: int
    undersampled: bool
    sparse_counts: List[int]
    analytic_rate: Optional[float] = None
    interval_3sigma: List[float] = Field(min_length=2, max_length=2)
    analytic_within_3sigma: Optional[bool] = None


class EstimateReport(StrictModel):
    params: ParamsRecord
    dist: List[AtomRecord] = Field(min_length=1)
    t_steps: int = Field(ge=1)
    seed: int
    y0_mode: Literal["all-unbound", "stationary-sample"]
    burn_in: float
    empirical_stationary: List[float]
    estimate: EstimateRecord


class DiffusionReport(StrictModel):
    diffusion: DiffusionModel
    n_max: int = Field(ge=1)
    schedule_length: int
    closed_form_max_rel_error: Optional[float] = None
    round_trip_max_rel_error: Optional[float] = None
    physically_consistent: Optional[bool] = None
    occupancy_final: Optional[float] = None
    files: List[str]


class ReducedReport(StrictModel):
    function_set: Literal["moments", "moments+entropy", "raw-moments"]
    functionals: List[str]
    params: ParamsRecord
    input: List[AtomRecord] = Field(min_length=1)
    reduced: List[AtomRecord] = Field(min_length=1)


OUTPUT_MODELS: Dict[str, Type[StrictModel]] = {
    "capacity": CapacityReport,
    "sweep": SweepReport,
    "simulate": EstimateReport,
    "diffusion": DiffusionReport,
    "reduce": ReducedReport,
}
