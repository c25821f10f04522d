from unittest.mock import patch

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings

from src.channel.params import ReceptorParams, alpha, alpha_array
from src.channel.receptor_channel import iid_rate
from src.distribution.input_dist import (
    DiscreteDist, MomentVector, binary_entropy, binary_entropy_array, expectations, moments,
    rate_functionals, raw_moment_functionals, reduce_support
)
from src.utils.errors import DomainError, NumericalRankError
from tests.strategies import channel_cases, random_dist


@pytest.fixture
def params():
    return ReceptorParams(k_plus=1.0, k_minus=1.0, beta=0.5, n_receptors=2, m_max=10.0)


class TestBinaryEntropy:
    def test_maximum(self):
        assert binary_entropy(0.5) == pytest.approx(1.0)

    def test_endpoints(self):
        """Test the 0 log 0 = 0 convention"""
        assert binary_entropy(0.0) == 0.0
        assert binary_entropy(1.0) == 0.0

    def test_quarter(self):
        assert binary_entropy(0.25) == pytest.approx(0.811278, abs=1e-6)

    def test_vectorized(self):
        np.testing.assert_allclose(binary_entropy_array([0.0, 0.5, 0.75]), [0.0, 1.0, binary_entropy(0.25)])

    def test_outside_unit_interval(self):
        with pytest.raises(DomainError):
            binary_entropy(1.5)
        with pytest.raises(DomainError):
            binary_entropy(-0.01)


class TestDiscreteDist:
    def test_validation(self):
        """Test that malformed distributions are rejected"""
        with pytest.raises(DomainError):
            DiscreteDist([1.0, 0.5], [0.5, 0.5])
        with pytest.raises(DomainError):
            DiscreteDist([0.5, 0.5], [0.5, 0.5])
        with pytest.raises(DomainError):
            DiscreteDist([0.0, 1.0], [0.7, 0.7])
        with pytest.raises(DomainError):
            DiscreteDist([0.0, 1.0], [1.0, 0.0])
        with pytest.raises(DomainError):
            DiscreteDist([-1.0, 1.0], [0.5, 0.5])
        with pytest.raises(DomainError):
            DiscreteDist([], [])

    def test_immutable_arrays(self):
        dist = DiscreteDist([0.0, 1.0], [0.5, 0.5])
        with pytest.raises(ValueError):
            dist.weights[0] = 0.9

    def test_canonical_merges_and_sorts(self):
        dist = DiscreteDist.canonical([3.0, 1.0, 1.0 + 1e-9, 0.0], [0.25, 0.25, 0.25, 0.0], merge_radius=1e-6)
        assert dist.size == 2
        assert dist.atoms[0] == pytest.approx(1.0 + 5e-10)
        np.testing.assert_allclose(dist.weights, [2.0 / 3.0, 1.0 / 3.0])
        assert dist.atoms[1] == 3.0

    def test_canonical_keeps_lone_atoms_exact(self):
        dist = DiscreteDist.canonical([0.1, 7.3], [0.3, 0.9])
        assert dist.atoms.tolist() == [0.1, 7.3]

    def test_records_round_trip(self):
        dist = DiscreteDist.from_records([{"x": 10.0, "p": 0.25}, {"x": 0.0, "p": 0.75}])
        assert dist.atoms.tolist() == [0.0, 10.0]
        assert DiscreteDist.from_records(dist.to_records()) == dist

    def test_duplicate_records(self):
        with pytest.raises(DomainError):
            DiscreteDist.from_records([{"x": 1.0, "p": 0.5}, {"x": 1.0, "p": 0.5}])

    def test_check_support(self):
        with pytest.raises(DomainError):
            DiscreteDist([0.0, 11.0], [0.5, 0.5]).check_support(10.0)


class TestMomentVector:
    def test_one_based_access(self):
        m = MomentVector([0.25, 0.125])
        assert m[1] == 0.25
        assert m[2] == 0.125
        assert len(m) == 2
        with pytest.raises(IndexError):
            m[0]

    def test_must_be_nonincreasing(self):
        with pytest.raises(DomainError):
            MomentVector([0.1, 0.2])
        with pytest.raises(DomainError):
            MomentVector([1.2, 0.1])


class TestMoments:
    def test_point_mass(self, params):
        a = alpha(3.0, params)
        np.testing.assert_allclose(moments(DiscreteDist.point_mass(3.0), params).values, [a, a ** 2])

    def test_two_atoms(self, params):
        """Test {0: 1/2, x1: 1/2} with alpha(x1) = 1/2 gives (0.25, 0.125)"""
        m = moments(DiscreteDist([0.0, 1.0], [0.5, 0.5]), params)
        np.testing.assert_allclose(m.values, [0.25, 0.125])

    def test_invalid_order(self, params):
        with pytest.raises(DomainError):
            moments(DiscreteDist.point_mass(1.0), params, order=0)

    @pytest.mark.slow
    def test_matches_monte_carlo(self):
        params = ReceptorParams(k_plus=1.0, k_minus=1.0, beta=0.5, n_receptors=3, m_max=10.0)
        rng = np.random.default_rng(7)
        dist = random_dist(rng, 5, params.m_max)
        n_samples = 10_000_000
        draws = alpha_array(rng.choice(dist.atoms, size=n_samples, p=dist.weights), params)
        exact = moments(dist, params).values
        for i in range(3):
            powers = draws ** (i + 1)
            stderr = powers.std() / np.sqrt(n_samples)
            assert abs(powers.mean() - exact[i]) <= 4 * stderr


class TestReduceSupport:
    def test_small_support_unchanged(self):
        dist = DiscreteDist([0.0, 1.0], [0.4, 0.6])
        assert reduce_support(dist, [lambda x: x]) is dist

    def test_single_pivot(self):
        """Test {0, 1/2, 1} each 1/3 with the mean preserved collapses to {0: 1/2, 1: 1/2}"""
        dist = DiscreteDist([0.0, 0.5, 1.0], [1 / 3, 1 / 3, 1 / 3])
        reduced = reduce_support(dist, list(raw_moment_functionals(1).values()))
        assert reduced.atoms.tolist() == [0.0, 1.0]
        np.testing.assert_allclose(reduced.weights, [0.5, 0.5], atol=1e-12)

    def test_twelve_atoms_four_functionals(self):
        params = ReceptorParams(k_plus=1.0, k_minus=1.0, beta=0.5, n_receptors=3, m_max=10.0)
        funcs = list(rate_functionals(params).values())
        assert len(funcs) == 4
        dist = random_dist(np.random.default_rng(21), 12, params.m_max)
        reduced = reduce_support(dist, funcs)
        assert reduced.size <= 5
        assert set(reduced.atoms.tolist()) <= set(dist.atoms.tolist())
        np.testing.assert_allclose(expectations(reduced, funcs), expectations(dist, funcs), atol=1e-9)

    def test_randomized_support_and_expectations(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n_atoms = int(rng.integers(2, 51))
            order = int(rng.integers(1, 9))
            funcs = list(raw_moment_functionals(order).values())
            dist = random_dist(rng, n_atoms, 1.0)
            reduced = reduce_support(dist, funcs)
            assert reduced.size <= order + 1
            assert set(reduced.atoms.tolist()) <= set(dist.atoms.tolist())
            np.testing.assert_allclose(expectations(reduced, funcs), expectations(dist, funcs), atol=1e-9)

    @settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.filter_too_much])
    @given(channel_cases(max_atoms=8, min_mean_alpha=1e-2))
    def test_rate_preserved(self, case):
        """Test that N+2 atoms already reach every achievable rate"""
        params, dist = case
        reduced = reduce_support(dist, list(rate_functionals(params).values()))
        assert reduced.size <= params.n_receptors + 2
        assert iid_rate(reduced, params) == pytest.approx(iid_rate(dist, params), abs=1e-8)

    def test_null_space_failure(self):
        dist = DiscreteDist([0.0, 0.5, 1.0], [1 / 3, 1 / 3, 1 / 3])
        with patch("src.distribution.input_dist.null_space", return_value=np.zeros((3, 0))):
            with pytest.raises(NumericalRankError):
                reduce_support(dist, [lambda x: x])
