from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Dict, List, Literal, Optional, Type

from src.channel.params import ReceptorParams
from src.diffusion.diffusion import DiffusionConfig
from src.distribution.input_dist import DiscreteDist
from src.optimization.capacity_opt import OptimizerConfig

U64_MAX = 2 ** 64 - 1


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ReceptorParamsModel(StrictModel):
    k_plus: float = Field(default=1.0, gt=0, description="Binding rate constant, 1/(concentration * time)")
    k_minus: float = Field(default=1.0, gt=0, description="Unbinding rate constant, 1/time")
    beta: float = Field(gt=0, lt=1, description="Per-epoch unbinding probability")
    n_receptors: int = Field(ge=1)
    m_max: Optional[float] = Field(default=None, gt=0, description="Maximum concentration M")
    alpha_max: Optional[float] = Field(default=None, gt=0, lt=1, description="Alternative to m_max: alpha(M)")

    @model_validator(mode="after")
    def check_upper_limit(self) -> "ReceptorParamsModel":
        if (self.m_max is None) == (self.alpha_max is None):
            raise ValueError("give exactly one of m_max and alpha_max")
        return self

    def to_domain(self) -> ReceptorParams:
        if self.alpha_max is not None:
            return ReceptorParams.from_alpha_max(
                self.alpha_max, self.beta, self.n_receptors, k_plus=self.k_plus, k_minus=self.k_minus
            )
        return ReceptorParams(
            k_plus=self.k_plus, k_minus=self.k_minus, beta=self.beta,
            n_receptors=self.n_receptors, m_max=self.m_max,
        )


class OptimizerModel(StrictModel):
    k_max: Optional[int] = Field(default=None, ge=2, description="Support-size cap, defaults to N + 2")
    n_starts: int = Field(default=8, ge=1)
    max_iters: int = Field(default=200, ge=0)
    tol: float = Field(default=1e-10, gt=0)
    merge_eps: float = Field(default=1e-4, ge=0, lt=1)
    weight_floor: float = Field(default=1e-6, ge=0, lt=1)
    kkt_tol: float = Field(default=1e-4, gt=0)

    def to_domain(self, seed: int, threads: int) -> OptimizerConfig:
        return OptimizerConfig(seed=seed, threads=threads, **self.model_dump())


class DistributionAtom(StrictModel):
    x: float = Field(ge=0, description="Concentration")
    p: float = Field(gt=0, le=1, description="Probability")


def to_dist(atoms: List[DistributionAtom]) -> DiscreteDist:
    return DiscreteDist.from_records([atom.model_dump() for atom in atoms])


class RunConfig(StrictModel):
    schema_version: Literal[1] = 1
    seed: Optional[int] = Field(default=None, ge=0, le=U64_MAX)
    threads: Optional[int] = Field(default=None, ge=1)
    format: Literal["json", "csv"] = "json"


class CapacityRunConfig(RunConfig):
    receptor: ReceptorParamsModel
    optimizer: OptimizerModel = Field(default_factory=OptimizerModel)
    warm_starts: List[List[DistributionAtom]] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_warm_starts(self) -> "CapacityRunConfig":
        params = self.receptor.to_domain()
        for atoms in self.warm_starts:
            to_dist(atoms).check_support(params.m_max)
        return self


class SweepRunConfig(RunConfig):
    format: Literal["json", "csv"] = "csv"
    k_plus: float = Field(default=1.0, gt=0)
    k_minus: float = Field(default=1.0, gt=0)
    beta: List[float] = Field(min_length=1)
    n_receptors: List[int] = Field(min_length=1)
    alpha_max: Optional[List[float]] = Field(default=None, min_length=1)
    m_max: Optional[List[float]] = Field(default=None, min_length=1)
    optimizer: OptimizerModel = Field(default_factory=OptimizerModel)

    @model_validator(mode="after")
    def check_ranges(self) -> "SweepRunConfig":
        if (self.alpha_max is None) == (self.m_max is None):
            raise ValueError("give exactly one of alpha_max and m_max")
        if any(not 0 < b < 1 for b in self.beta):
            raise ValueError("every beta must lie in (0, 1)")
        if any(n < 1 for n in self.n_receptors):
            raise ValueError("every n_receptors must be >= 1")
        if self.alpha_max is not None and any(not 0 < a < 1 for a in self.alpha_max):
            raise ValueError("every alpha_max must lie in (0, 1)")
        if self.m_max is not None and any(m <= 0 for m in self.m_max):
            raise ValueError("every m_max must be positive")
        return self

    def grid(self) -> List[ReceptorParams]:
        """Parameter points in row order: N outermost, then beta, then alpha(M) or M."""
        points = []
        for n in self.n_receptors:
            for beta in self.beta:
                if self.alpha_max is not None:
                    for level in self.alpha_max:
                        points.append(ReceptorParams.from_alpha_max(level, beta, n, self.k_plus, self.k_minus))
                else:
                    for m_max in self.m_max:
                        points.append(ReceptorParams(self.k_plus, self.k_minus, beta, n, m_max))
        return points


class SimulateRunConfig(RunConfig):
    receptor: ReceptorParamsModel
    dist: List[DistributionAtom] = Field(min_length=1)
    t_steps: int = Field(ge=1)
    y0_mode: Literal["all-unbound", "stationary-sample"] = "all-unbound"
    n_boot: Optional[int] = Field(default=None, ge=2)
    burn_in: Optional[float] = Field(default=None, ge=0, lt=1)
    min_bin_count: int = Field(default=30, ge=1)

    @model_validator(mode="after")
    def check_dist(self) -> "SimulateRunConfig":
        to_dist(self.dist).check_support(self.receptor.to_domain().m_max)
        return self


class DiffusionModel(StrictModel):
    d_coeff: float = Field(gt=0, description="Diffusion coefficient, length^2/time")
    r_dist: float = Field(ge=0, description="Transmitter-receiver distance")
    delta: float = Field(gt=0, description="Sampling period")
    kernel_exponent: float = Field(default=1.0, gt=0, description="1 for 1/(4 pi D t), 1.5 for the 3-D kernel")

    def to_domain(self) -> DiffusionConfig:
        return DiffusionConfig(**self.model_dump())


class OccupancyModel(StrictModel):
    k_plus: float = Field(default=1.0, gt=0)
    k_minus: float = Field(default=1.0, gt=0)
    p0: float = Field(default=0.0, ge=0, le=1)


class DiffusionRunConfig(RunConfig):
    diffusion: DiffusionModel
    n_max: int = Field(ge=1)
    schedule_csv: Optional[str] = None
    schedule: Optional[List[float]] = None
    impulse: bool = False
    invert: bool = False
    occupancy: Optional[OccupancyModel] = None

    @model_validator(mode="after")
    def check_source(self) -> "DiffusionRunConfig":
        sources = [self.schedule_csv is not None, self.schedule is not None, self.impulse]
        if sum(sources) != 1:
            raise ValueError("give exactly one of schedule_csv, schedule and impulse")
        if self.schedule is not None and any(f < 0 for f in self.schedule):
            raise ValueError("emission rates must be nonnegative")
        return self


class ReduceRunConfig(RunConfig):
    receptor: ReceptorParamsModel
    dist: List[DistributionAtom] = Field(min_length=1)
    function_set: Literal["moments", "moments+entropy", "raw-moments"] = "moments+entropy"

    @model_validator(mode="after")
    def check_dist(self) -> "ReduceRunConfig":
        to_dist(self.dist).check_support(self.receptor.to_domain().m_max)
        return self


RUN_CONFIG_MODELS: Dict[str, Type[RunConfig]] = {
    "capacity": CapacityRunConfig,
    "sweep": SweepRunConfig,
    "simulate": SimulateRunConfig,
    "diffusion": DiffusionRunConfig,
    "reduce": ReduceRunConfig,
}
