import numpy as np
import pytest

from src.channel.params import ReceptorParams
from src.channel.receptor_channel import iid_rate, lumped_kernel, stationary_distribution
from src.distribution.input_dist import DiscreteDist
from src.simulation.simulate import (
    Y0_STATIONARY, EstimatorReport, Trajectory, empirical_kernel, empirical_rate, empirical_stationary,
    simulate_trajectory
)
from src.utils.errors import DomainError
from tests.strategies import random_dist


@pytest.fixture
def params():
    """N=1, k+ = k- = 1, M = 10, beta = 0.5."""
    return ReceptorParams(k_plus=1.0, k_minus=1.0, beta=0.5, n_receptors=1, m_max=10.0)


@pytest.fixture
def two_atom_dist():
    """{0: 1/2, 1: 1/2}: E[alpha] = 1/4, rate about 0.207519 bits."""
    return DiscreteDist([0.0, 1.0], [0.5, 0.5])


class TestSimulateTrajectory:
    def test_zero_concentration_absorbs(self, params):
        traj = simulate_trajectory(DiscreteDist.point_mass(0.0), params, 500, seed=1)
        assert not traj.states.any()
        assert np.all(traj.inputs == 0.0)

    def test_saturated_receptors_toggle(self):
        """Test that alpha -> 1 and beta -> 1 flip every receptor each epoch"""
        params = ReceptorParams.from_alpha_max(1.0 - 1e-12, beta=1.0 - 1e-12, n_receptors=2)
        traj = simulate_trajectory(DiscreteDist.point_mass(params.m_max), params, 100, seed=3)
        expected = np.arange(101) % 2 == 1
        np.testing.assert_array_equal(traj.states, np.repeat(expected[:, None], 2, axis=1))

    def test_bound_fraction(self):
        """Test N=1, alpha = beta = 1/2: each epoch is a fair coin for the receptor"""
        params = ReceptorParams(k_plus=1.0, k_minus=1.0, beta=0.5, n_receptors=1, m_max=10.0)
        t_steps = 1_000_000
        traj = simulate_trajectory(DiscreteDist.point_mass(1.0), params, t_steps, seed=11)
        fraction = traj.states[1:, 0].mean()
        assert abs(fraction - 0.5) <= 4 * 0.5 / np.sqrt(t_steps)

    def test_deterministic(self, params, two_atom_dist):
        first = simulate_trajectory(two_atom_dist, params, 1000, seed=42)
        second = simulate_trajectory(two_atom_dist, params, 1000, seed=42)
        other = simulate_trajectory(two_atom_dist, params, 1000, seed=43)
        assert first == second
        assert first != other

    def test_receptors_follow_their_inputs(self):
        """Test the per-epoch transition law for a small multi-receptor run"""
        params = ReceptorParams(k_plus=1.0, k_minus=1.0, beta=0.3, n_receptors=3, m_max=10.0)
        traj = simulate_trajectory(DiscreteDist([0.0, 10.0], [0.5, 0.5]), params, 2000, seed=0)
        before, after = traj.states[:-1], traj.states[1:]
        silent = traj.inputs == 0.0
        # No ligand means no binding
        assert not np.any(~before[silent] & after[silent])

    def test_stationary_start(self, two_atom_dist):
        params = ReceptorParams(k_plus=1.0, k_minus=1.0, beta=0.5, n_receptors=4, m_max=10.0)
        starts = np.array([
            simulate_trajectory(two_atom_dist, params, 1, seed=s, y0_mode=Y0_STATIONARY).states[0].sum()
            for s in range(400)
        ])
        pi = stationary_distribution(lumped_kernel(two_atom_dist, params)).pi_count
        assert starts.mean() == pytest.approx(float(pi @ np.arange(5)), abs=0.25)

    def test_stationary_start_of_degenerate_input(self, params):
        traj = simulate_trajectory(DiscreteDist.point_mass(0.0), params, 10, y0_mode=Y0_STATIONARY)
        assert not traj.states.any()

    def test_invalid_arguments(self, params, two_atom_dist):
        with pytest.raises(DomainError):
            simulate_trajectory(two_atom_dist, params, 0)
        with pytest.raises(DomainError):
            simulate_trajectory(two_atom_dist, params, 10, y0_mode="random")
        with pytest.raises(DomainError):
            simulate_trajectory(DiscreteDist.point_mass(20.0), params, 10)

    def test_csv_rows(self, params, two_atom_dist):
        traj = simulate_trajectory(two_atom_dist, params, 5, seed=2)
        rows = list(traj.csv_rows())
        assert len(rows) == 6
        assert rows[0] == (0, "", 0)
        assert [row[0] for row in rows] == list(range(6))
        assert len(list(traj.outputs())) == 6

    def test_trajectory_shape_check(self):
        with pytest.raises(DomainError):
            Trajectory(inputs=np.zeros(3), states=np.zeros((3, 2), dtype=bool), seed=0)


class TestEmpiricalStationary:
    def test_absorbed_trajectory(self, params):
        traj = simulate_trajectory(DiscreteDist.point_mass(0.0), params, 2000)
        np.testing.assert_array_equal(empirical_stationary(traj), [1.0, 0.0])

    def test_matches_balance_equation(self, params, two_atom_dist):
        """Test N=1, E[alpha] = 1/4, beta = 1/2 against pi(B) = 1/3"""
        traj = simulate_trajectory(two_atom_dist, params, 1_000_000, seed=5)
        histogram = empirical_stationary(traj)
        assert histogram.sum() == pytest.approx(1.0)
        # Two-state chain with eigenvalue 1 - 1/4 - 1/2; variance of the mean inflates by (1 + l) / (1 - l)
        eigenvalue = 0.25
        n = 900_000
        sigma = np.sqrt((2.0 / 9.0) / n * (1 + eigenvalue) / (1 - eigenvalue))
        assert abs(histogram[1] - 1.0 / 3.0) <= 4 * sigma

    def test_invalid_burn_in(self, params, two_atom_dist):
        traj = simulate_trajectory(two_atom_dist, params, 2000)
        with pytest.raises(DomainError):
            empirical_stationary(traj, burn_in=1.0)


@pytest.mark.slow
def test_empirical_kernel_converges():
    rng = np.random.default_rng(31)
    t_steps = 1_000_000
    for n in (1, 2, 3):
        params = ReceptorParams(k_plus=1.0, k_minus=1.0, beta=float(rng.uniform(0.2, 0.8)), n_receptors=n, m_max=10.0)
        dist = random_dist(rng, 3, params.m_max, low=0.1)
        traj = simulate_trajectory(dist, params, t_steps, seed=n)
        observed = empirical_kernel(traj)
        expected = lumped_kernel(dist, params).matrix
        visits = np.bincount(traj.bound_counts[t_steps // 10:-1], minlength=n + 1)
        for b in range(n + 1):
            assert np.max(np.abs(observed[b] - expected[b])) <= 3.0 / np.sqrt(visits[b])
        assert np.max(np.abs(observed - expected)) <= max(5.0 / np.sqrt(t_steps), 3.0 / np.sqrt(visits.min()))


class TestEmpiricalRate:
    def test_point_mass_rate_is_zero(self):
        params = ReceptorParams(k_plus=1.0, k_minus=1.0, beta=0.5, n_receptors=1, m_max=10.0)
        traj = simulate_trajectory(DiscreteDist.point_mass(3.0 / 7.0), params, 200_000, seed=8)
        report = empirical_rate(traj, params, DiscreteDist.point_mass(3.0 / 7.0))
        assert report.contains(0.0, k_sigma=4.0)
        assert not report.undersampled

    def test_two_atom_rate(self, params, two_atom_dist):
        traj = simulate_trajectory(two_atom_dist, params, 200_000, seed=9)
        report = empirical_rate(traj, params, two_atom_dist)
        assert report.contains(iid_rate(two_atom_dist, params), k_sigma=4.0)
        assert report.bound_probability == pytest.approx(1.0 / 3.0, abs=0.01)
        assert report.block_length == int(np.sqrt(report.n_samples))
        assert report.n_boot == 32

    def test_bootstrap_is_reproducible(self, params, two_atom_dist):
        traj = simulate_trajectory(two_atom_dist, params, 20_000, seed=9)
        first = empirical_rate(traj, params, two_atom_dist)
        second = empirical_rate(traj, params, two_atom_dist)
        assert first.to_dict() == second.to_dict()

    def test_undersampled_counts_widen_error(self):
        params = ReceptorParams(k_plus=1.0, k_minus=1.0, beta=0.5, n_receptors=3, m_max=10.0)
        dist = DiscreteDist.point_mass(1.0 / 9.0)
        traj = simulate_trajectory(dist, params, 200, seed=4)
        report = empirical_rate(traj, params, dist)
        assert report.undersampled
        assert report.sparse_counts

    def test_report_serializes(self, params, two_atom_dist):
        traj = simulate_trajectory(two_atom_dist, params, 5000, seed=1)
        report = empirical_rate(traj, params, two_atom_dist)
        report.analytic_rate = iid_rate(two_atom_dist, params)
        payload = report.to_dict()
        assert isinstance(report, EstimatorReport)
        assert payload["interval_3sigma"][0] < payload["rate_bits"] < payload["interval_3sigma"][1]
        assert "analytic_within_3sigma" in payload

    def test_invalid_arguments(self, params, two_atom_dist):
        traj = simulate_trajectory(two_atom_dist, params, 100)
        other = ReceptorParams(k_plus=1.0, k_minus=1.0, beta=0.5, n_receptors=2, m_max=10.0)
        with pytest.raises(DomainError):
            empirical_rate(traj, other, two_atom_dist)
        with pytest.raises(DomainError):
            empirical_rate(traj, params, two_atom_dist, n_boot=1)

    @pytest.mark.slow
    def test_interval_coverage(self, params, two_atom_dist):
        """Test that the analytic rate falls in the 3-sigma band in at least 95 of 100 runs"""
        target = iid_rate(two_atom_dist, params)
        hits = 0
        for s in range(100):
            traj = simulate_trajectory(two_atom_dist, params, 1_000_000, seed=s)
            hits += empirical_rate(traj, params, two_atom_dist).contains(target)
        assert hits >= 95

    @pytest.mark.slow
    def test_error_shrinks_with_length(self, params, two_atom_dist):
        """Test that doubling T shrinks the bootstrap error by about sqrt(2)"""
        def mean_error(t_steps):
            return np.mean([
                empirical_rate(simulate_trajectory(two_atom_dist, params, t_steps, seed=s), params, two_atom_dist).std_error
                for s in range(16)
            ])

        ratio = mean_error(100_000) / mean_error(200_000)
        assert ratio == pytest.approx(np.sqrt(2.0), rel=0.25)
