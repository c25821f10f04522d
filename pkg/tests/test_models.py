import pytest
from pydantic import ValidationError

from src.cli.models import (
    RUN_CONFIG_MODELS, CapacityRunConfig, DiffusionRunConfig, OptimizerModel, ReceptorParamsModel,
    ReduceRunConfig, SimulateRunConfig, SweepRunConfig, to_dist
)


class TestReceptorParamsModel:
    def test_valid_with_m_max(self):
        """Test receptor parameters given an explicit M"""
        model = ReceptorParamsModel(beta=0.5, n_receptors=2, m_max=10.0)
        params = model.to_domain()

        assert params.k_plus == 1.0
        assert params.k_minus == 1.0
        assert params.m_max == 10.0
        assert params.n_receptors == 2

    def test_valid_with_alpha_max(self):
        """Test that alpha(M) is converted to M"""
        params = ReceptorParamsModel(beta=0.5, n_receptors=1, alpha_max=0.5).to_domain()
        assert params.m_max == pytest.approx(1.0)

    def test_exactly_one_upper_limit(self):
        with pytest.raises(ValidationError):
            ReceptorParamsModel(beta=0.5, n_receptors=1)
        with pytest.raises(ValidationError):
            ReceptorParamsModel(beta=0.5, n_receptors=1, m_max=1.0, alpha_max=0.5)

    def test_field_ranges(self):
        """Test that out-of-range fields are rejected"""
        with pytest.raises(ValidationError):
            ReceptorParamsModel(beta=1.0, n_receptors=1, m_max=1.0)
        with pytest.raises(ValidationError):
            ReceptorParamsModel(beta=0.5, n_receptors=0, m_max=1.0)
        with pytest.raises(ValidationError):
            ReceptorParamsModel(beta=0.5, n_receptors=1, m_max=1.0, k_plus=-1.0)

    def test_unknown_fields_rejected(self):
        with pytest.raises(ValidationError):
            ReceptorParamsModel(beta=0.5, n_receptors=1, m_max=1.0, temperature=300)


class TestOptimizerModel:
    def test_defaults(self):
        config = OptimizerModel().to_domain(seed=3, threads=2)
        assert config.seed == 3
        assert config.threads == 2
        assert config.n_starts == 8
        assert config.k_max is None

    def test_k_max_lower_bound(self):
        with pytest.raises(ValidationError):
            OptimizerModel(k_max=1)


class TestCapacityRunConfig:
    def test_minimal(self):
        config = CapacityRunConfig.model_validate({"receptor": {"beta": 0.5, "n_receptors": 1, "m_max": 10.0}})
        assert config.schema_version == 1
        assert config.seed is None
        assert config.format == "json"

    def test_schema_version(self):
        with pytest.raises(ValidationError):
            CapacityRunConfig.model_validate(
                {"schema_version": 2, "receptor": {"beta": 0.5, "n_receptors": 1, "m_max": 10.0}}
            )

    def test_seed_range(self):
        receptor = {"beta": 0.5, "n_receptors": 1, "m_max": 10.0}
        assert CapacityRunConfig(receptor=receptor, seed=2 ** 64 - 1).seed == 2 ** 64 - 1
        with pytest.raises(ValidationError):
            CapacityRunConfig(receptor=receptor, seed=2 ** 64)
        with pytest.raises(ValidationError):
            CapacityRunConfig(receptor=receptor, seed=-1)

    def test_warm_start_outside_range(self):
        with pytest.raises(ValidationError):
            CapacityRunConfig.model_validate({
                "receptor": {"beta": 0.5, "n_receptors": 1, "m_max": 10.0},
                "warm_starts": [[{"x": 0.0, "p": 0.5}, {"x": 20.0, "p": 0.5}]],
            })


class TestSweepRunConfig:
    def test_grid_order(self):
        """Test that rows run N outermost, then beta, then alpha(M)"""
        config = SweepRunConfig(beta=[0.2, 0.4], n_receptors=[1, 2], alpha_max=[0.5, 0.9, 0.99])
        grid = config.grid()

        assert len(grid) == 12
        assert [p.n_receptors for p in grid[:6]] == [1] * 6
        assert [p.beta for p in grid[:3]] == [0.2] * 3
        assert [round(p.alpha_max, 12) for p in grid[:3]] == [0.5, 0.9, 0.99]
        assert config.format == "csv"

    def test_m_max_grid(self):
        grid = SweepRunConfig(beta=[0.5], n_receptors=[1], m_max=[1.0, 5.0]).grid()
        assert [p.m_max for p in grid] == [1.0, 5.0]

    def test_invalid_ranges(self):
        with pytest.raises(ValidationError):
            SweepRunConfig(beta=[0.5], n_receptors=[1])
        with pytest.raises(ValidationError):
            SweepRunConfig(beta=[1.5], n_receptors=[1], m_max=[1.0])
        with pytest.raises(ValidationError):
            SweepRunConfig(beta=[0.5], n_receptors=[0], m_max=[1.0])
        with pytest.raises(ValidationError):
            SweepRunConfig(beta=[0.5], n_receptors=[1], alpha_max=[1.0])
        with pytest.raises(ValidationError):
            SweepRunConfig(beta=[], n_receptors=[1], m_max=[1.0])


class TestDistributionConfigs:
    def test_simulate_dist(self):
        config = SimulateRunConfig.model_validate({
            "receptor": {"beta": 0.5, "n_receptors": 1, "m_max": 10.0},
            "dist": [{"x": 1.0, "p": 0.5}, {"x": 0.0, "p": 0.5}],
            "t_steps": 100,
        })
        dist = to_dist(config.dist)
        assert dist.atoms.tolist() == [0.0, 1.0]
        assert config.y0_mode == "all-unbound"

    def test_simulate_rejects_bad_mode(self):
        with pytest.raises(ValidationError):
            SimulateRunConfig.model_validate({
                "receptor": {"beta": 0.5, "n_receptors": 1, "m_max": 10.0},
                "dist": [{"x": 1.0, "p": 1.0}],
                "t_steps": 100,
                "y0_mode": "random",
            })

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            ReduceRunConfig.model_validate({
                "receptor": {"beta": 0.5, "n_receptors": 1, "m_max": 10.0},
                "dist": [{"x": 1.0, "p": 0.5}, {"x": 2.0, "p": 0.2}],
            })

    def test_reduce_function_set(self):
        config = ReduceRunConfig.model_validate({
            "receptor": {"beta": 0.5, "n_receptors": 1, "m_max": 10.0},
            "dist": [{"x": 1.0, "p": 1.0}],
            "function_set": "raw-moments",
        })
        assert config.function_set == "raw-moments"


class TestDiffusionRunConfig:
    def test_exactly_one_source(self):
        diffusion = {"d_coeff": 1.0, "r_dist": 1.0, "delta": 1.0}
        assert DiffusionRunConfig(diffusion=diffusion, n_max=8, impulse=True).impulse
        with pytest.raises(ValidationError):
            DiffusionRunConfig(diffusion=diffusion, n_max=8)
        with pytest.raises(ValidationError):
            DiffusionRunConfig(diffusion=diffusion, n_max=8, impulse=True, schedule=[1.0])

    def test_negative_schedule(self):
        with pytest.raises(ValidationError):
            DiffusionRunConfig(diffusion={"d_coeff": 1.0, "r_dist": 1.0, "delta": 1.0}, n_max=8, schedule=[-1.0])

    def test_zero_distance_allowed_in_config(self):
        config = DiffusionRunConfig(diffusion={"d_coeff": 1.0, "r_dist": 0.0, "delta": 1.0}, n_max=4, impulse=True)
        assert config.diffusion.to_domain().r_dist == 0.0


def test_every_command_has_a_schema():
    for name, model in RUN_CONFIG_MODELS.items():
        schema = model.model_json_schema()
        assert schema["type"] == "object", name
        assert "schema_version" in schema["properties"]
