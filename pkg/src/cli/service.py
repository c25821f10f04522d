from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence
import json
import logging

import numpy as np
from pydantic import ValidationError
from tqdm import tqdm

from src.channel.receptor_channel import iid_rate
from src.cli.config import settings
from src.cli.models import (
    RUN_CONFIG_MODELS, CapacityRunConfig, DiffusionRunConfig, ReduceRunConfig,
    SimulateRunConfig, SweepRunConfig, to_dist
)
from src.cli.reports import OUTPUT_MODELS
from src.diffusion.diffusion import (
    EmissionSchedule, SUPPORTED_CLOSED_FORMS, closed_form_coeffs, concentration_sequence,
    impulse_coeffs, invert_concentration, master_equation_solve
)
from src.distribution.input_dist import (
    DiscreteDist, expectations, raw_moment_functionals, rate_functionals, reduce_support
)
from src.optimization.capacity_opt import CapacityResult, optimize_iid, support_bound, support_bound_raw
from src.simulation.simulate import empirical_rate, empirical_stationary, simulate_trajectory
from src.utils.io import read_series_csv, write_csv, write_json

logger = logging.getLogger(__name__)

CAPACITY_COLUMNS = [
    "n_receptors", "beta", "alpha_max", "m_max", "k_plus", "k_minus",
    "rate_bits", "support_size", "support_bound", "certificate_status", "root_count", "converged",
]
ESTIMATE_COLUMNS = [
    "analytic_rate", "rate_bits", "std_error", "interval_low", "interval_high",
    "bound_probability", "n_samples", "undersampled",
]


def write_report(path: Path, payload: Dict[str, Any], command: str) -> Path:
    """Write a command's JSON result and check it against the command's output model."""
    path = write_json(path, payload)
    try:
        OUTPUT_MODELS[command].model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise RuntimeError(f"{path.name} does not match the {command} output schema: {e}") from e
    return path


def _format_support(dist: DiscreteDist) -> str:
    return "{" + ", ".join(f"{x:.6g}" for x in dist.atoms) + "}"


def capacity_row(result: CapacityResult) -> List[Any]:
    params = result.params
    certificate = result.certificate
    return [
        params.n_receptors, params.beta, params.alpha_max, params.m_max, params.k_plus, params.k_minus,
        result.rate_bits, result.support_size, support_bound(params.n_receptors),
        certificate.status.value if certificate else "NONE",
        certificate.root_count if certificate else "",
        result.converged,
    ]


class ReceptorCapacityService:
    """Runs each batch command and writes its artifacts into one output directory."""

    def __init__(self, threads: Optional[int] = None, seed: Optional[int] = None, show_progress: Optional[bool] = None):
        self.threads = threads if threads is not None else settings.threads
        self.seed = seed if seed is not None else settings.seed
        self.show_progress = settings.show_progress if show_progress is None else show_progress

    def _seed(self, config_seed: Optional[int], override: Optional[int]) -> int:
        # Settings < config file < command-line flag
        if override is not None:
            return override
        if config_seed is not None:
            return config_seed
        return self.seed

    def _threads(self, config_threads: Optional[int], override: Optional[int]) -> int:
        if override is not None:
            return override
        if config_threads is not None:
            return config_threads
        return self.threads

    def capacity(
        self,
        config: CapacityRunConfig,
        out_dir: Path,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        fmt: Optional[str] = None
    ) -> Dict[str, Any]:
        params = config.receptor.to_domain()
        optimizer = config.optimizer.to_domain(self._seed(config.seed, seed), self._threads(config.threads, threads))
        warm = [to_dist(atoms) for atoms in config.warm_starts]
        result = optimize_iid(params, optimizer, initial_dists=warm)

        out_dir = Path(out_dir)
        files = [write_report(out_dir / "capacity.json", result.to_dict(), "capacity")]
        if (fmt or config.format) == "csv":
            files.append(write_csv(out_dir / "capacity.csv", CAPACITY_COLUMNS, [capacity_row(result)]))

        certificate = result.certificate
        summary = (
            f"N={params.n_receptors} rate={result.rate_bits:.6f} bits/epoch "
            f"support={_format_support(result.dist)} size={result.support_size} "
            f"bound={support_bound(params.n_receptors)} (raw {support_bound_raw(params.n_receptors):g}) "
            f"certificate={certificate.status.value if certificate else 'NONE'}"
            + (f" roots={certificate.root_count}" if certificate else "")
        )
        return {"summary": summary, "files": [str(f) for f in files], "result": result}

    def sweep(
        self,
        config: SweepRunConfig,
        out_dir: Path,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        fmt: Optional[str] = None
    ) -> Dict[str, Any]:
        optimizer = config.optimizer.to_domain(self._seed(config.seed, seed), self._threads(config.threads, threads))
        grid = config.grid()
        rows = []
        for params in tqdm(grid, desc="sweep", disable=not self.show_progress):
            rows.append(capacity_row(optimize_iid(params, optimizer)))

        out_dir = Path(out_dir)
        if (fmt or config.format) == "json":
            path = write_report(out_dir / "sweep.json", {"columns": CAPACITY_COLUMNS, "rows": rows}, "sweep")
        else:
            path = write_csv(out_dir / "sweep.csv", CAPACITY_COLUMNS, rows)
        best = max(row[CAPACITY_COLUMNS.index("rate_bits")] for row in rows)
        summary = f"sweep: {len(rows)} points, best rate {best:.6f} bits/epoch"
        return {"summary": summary, "files": [str(path)], "rows": rows}

    def simulate(
        self,
        config: SimulateRunConfig,
        out_dir: Path,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        fmt: Optional[str] = None
    ) -> Dict[str, Any]:
        params = config.receptor.to_domain()
        dist = to_dist(config.dist)
        run_seed = self._seed(config.seed, seed)
        burn_in = config.burn_in if config.burn_in is not None else settings.burn_in_fraction
        n_boot = config.n_boot if config.n_boot is not None else settings.bootstrap_blocks

        trajectory = simulate_trajectory(dist, params, config.t_steps, seed=run_seed, y0_mode=config.y0_mode)
        report = empirical_rate(
            trajectory, params, dist, n_boot=n_boot, burn_in=burn_in, min_bin_count=config.min_bin_count
        )
        report.analytic_rate = iid_rate(dist, params)

        out_dir = Path(out_dir)
        files = [write_csv(out_dir / "trajectory.csv", ["t", "x", "count_bound"], trajectory.csv_rows())]
        payload = {
            "params": params.to_dict(),
            "dist": dist.to_records(),
            "t_steps": config.t_steps,
            "seed": run_seed,
            "y0_mode": config.y0_mode,
            "burn_in": burn_in,
            "empirical_stationary": empirical_stationary(trajectory, burn_in).tolist(),
            "estimate": report.to_dict(),
        }
        files.append(write_report(out_dir / "estimate.json", payload, "simulate"))

        low, high = report.interval(3.0)
        if (fmt or config.format) == "csv":
            row = [
                report.analytic_rate, report.rate_bits, report.std_error, low, high,
                report.bound_probability, report.n_samples, report.undersampled,
            ]
            files.append(write_csv(out_dir / "estimate.csv", ESTIMATE_COLUMNS, [row]))
        verdict = "inside" if report.contains(report.analytic_rate) else "outside"
        summary = (
            f"analytic {report.analytic_rate:.6f} vs empirical {report.rate_bits:.6f} "
            f"+/- {report.std_error:.6f} bits/epoch (3 sigma [{low:.6f}, {high:.6f}]: {verdict})"
        )
        return {"summary": summary, "files": [str(f) for f in files], "report": report}

    def _schedule(self, config: DiffusionRunConfig) -> EmissionSchedule:
        if config.impulse:
            return EmissionSchedule.impulse(config.n_max)
        if config.schedule is not None:
            return EmissionSchedule(config.schedule)
        return EmissionSchedule(read_series_csv(Path(config.schedule_csv)))

    def diffusion(
        self,
        config: DiffusionRunConfig,
        out_dir: Path,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        fmt: Optional[str] = None
    ) -> Dict[str, Any]:
        diffusion_config = config.diffusion.to_domain()
        schedule = self._schedule(config)
        n_max = max(config.n_max, len(schedule))
        if n_max > config.n_max:
            logger.info(f"Schedule has {len(schedule)} epochs; computing coefficients up to n={n_max}")
        delta = diffusion_config.delta

        h = impulse_coeffs(diffusion_config, n_max)
        has_closed_form = diffusion_config.kernel_exponent in SUPPORTED_CLOSED_FORMS
        out_dir = Path(out_dir)
        report: Dict[str, Any] = {
            "diffusion": config.diffusion.model_dump(),
            "n_max": n_max,
            "schedule_length": len(schedule),
        }

        if has_closed_form:
            closed = closed_form_coeffs(diffusion_config, n_max)
            relative = np.abs(h[1:] - closed[1:]) / np.abs(closed[1:])
            report["closed_form_max_rel_error"] = float(relative.max())
            rows = [(n, h[n], closed[n], relative[n - 1] if n else 0.0) for n in range(n_max + 1)]
            header = ["n", "h", "closed_form", "rel_error"]
        else:
            rows = [(n, h[n]) for n in range(n_max + 1)]
            header = ["n", "h"]
        files = [write_csv(out_dir / "coefficients.csv", header, rows)]

        # c(m delta) for m = 0..len(schedule)
        trace = concentration_sequence(np.append(schedule.rates, 0.0), h)
        files.append(write_csv(out_dir / "concentration.csv", ["t", "value"], ((m * delta, c) for m, c in enumerate(trace))))

        if config.invert:
            inversion = invert_concentration(trace[1:], h)
            scale = max(float(np.max(np.abs(schedule.rates))), np.finfo(float).tiny)
            report["round_trip_max_rel_error"] = float(np.max(np.abs(inversion.rates - schedule.rates)) / scale)
            report["physically_consistent"] = inversion.physically_consistent
            files.append(write_csv(
                out_dir / "inverted.csv", ["t", "value"], ((n * delta, f) for n, f in enumerate(inversion.rates))
            ))

        if config.occupancy is not None:
            occupancy = config.occupancy
            p = master_equation_solve(
                trace[:-1], occupancy.k_plus, occupancy.k_minus, occupancy.p0, delta=delta
            )
            report["occupancy_final"] = float(p[-1])
            files.append(write_csv(out_dir / "occupancy.csv", ["t", "value"], ((n * delta, v) for n, v in enumerate(p))))

        if (fmt or config.format) == "csv":
            scalars = [(f"diffusion.{k}", v) for k, v in report["diffusion"].items()]
            scalars += [(k, v) for k, v in report.items() if k != "diffusion"]
            files.append(write_csv(out_dir / "diffusion_report.csv", ["key", "value"], scalars))

        report["files"] = [Path(f).name for f in files]
        files.append(write_report(out_dir / "diffusion_report.json", report, "diffusion"))

        summary = f"h_1={h[1]:.6e}"
        if "closed_form_max_rel_error" in report:
            summary += f" closed-form max rel error {report['closed_form_max_rel_error']:.2e}"
        if "round_trip_max_rel_error" in report:
            summary += f" round-trip max rel error {report['round_trip_max_rel_error']:.2e}"
        return {"summary": summary, "files": [str(f) for f in files], "report": report}

    def reduce(
        self,
        config: ReduceRunConfig,
        out_dir: Path,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        fmt: Optional[str] = None
    ) -> Dict[str, Any]:
        params = config.receptor.to_domain()
        dist = to_dist(config.dist)
        if config.function_set == "raw-moments":
            funcs = raw_moment_functionals(params.n_receptors)
        else:
            funcs = rate_functionals(params, include_entropy=config.function_set == "moments+entropy")

        reduced = reduce_support(dist, list(funcs.values()))
        before = expectations(dist, list(funcs.values()))
        after = expectations(reduced, list(funcs.values()))
        deltas = np.abs(after - before)

        out_dir = Path(out_dir)
        files = [
            write_report(out_dir / "reduced.json", {
                "function_set": config.function_set,
                "functionals": list(funcs),
                "params": params.to_dict(),
                "input": dist.to_records(),
                "reduced": reduced.to_records(),
            }, "reduce"),
            write_csv(
                out_dir / "expectations.csv", ["function", "before", "after", "delta"],
                zip(funcs, before, after, deltas),
            ),
        ]
        if (fmt or config.format) == "csv":
            files.append(write_csv(out_dir / "reduced.csv", ["x", "p"], zip(reduced.atoms, reduced.weights)))
        summary = f"reduced {dist.size} -> {reduced.size} atoms, max |delta| = {float(deltas.max()):.2e}"
        return {"summary": summary, "files": [str(f) for f in files], "reduced": reduced}

    def schema(self, out_dir: Path, names: Sequence[str] = ()) -> Dict[str, Any]:
        """Write `<command>.schema.json` for the run config and `<command>.output.schema.json` for its JSON result."""
        unknown = sorted(set(names) - set(RUN_CONFIG_MODELS))
        if unknown:
            raise ValueError(f"unknown commands {unknown}; choose from {list(RUN_CONFIG_MODELS)}")
        out_dir = Path(out_dir)
        files = []
        for name, model in RUN_CONFIG_MODELS.items():
            if names and name not in names:
                continue
            files.append(write_json(out_dir / f"{name}.schema.json", model.model_json_schema()))
            files.append(write_json(out_dir / f"{name}.output.schema.json", OUTPUT_MODELS[name].model_json_schema()))
        return {"summary": f"wrote {len(files)} schemas to {out_dir}", "files": [str(f) for f in files]}


def load_run_config(command: str, path: Path):
    """Parse and validate a run-config JSON file for the given command."""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    return RUN_CONFIG_MODELS[command].model_validate(data)
