"""Tests for frequency and space filter construction."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from pds_sampler.filters import (
    SPACE_FILTER_FLOOR,
    DegenerateStatisticsError,
    ParametricFilterSpec,
    StatisticalFilterSpec,
    build_parametric_r,
    build_space_a,
    build_statistical_r,
    filter_summary,
    load_samples,
    uniform_a,
)
from pds_sampler.grid import Field, GridShape, write_grid
from pds_sampler.spectral import is_hermitian_symmetric, uncenter
from pds_sampler.targets import GrfTarget


class TestParametricFilter:
    """Test the circular-mask frequency filter."""

    def test_mnist_setting(self):
        """Test r=0.2H, lambda=1.6 on 1x28x28: 1 at the centre, 1.6 at the corner."""
        r = build_parametric_r(GridShape(1, 28, 28), ParametricFilterSpec(r=5.6, lam=1.6))
        assert r.data[0, 14, 14] == 1.0
        assert r.data[0, 0, 0] == 1.6
        assert set(np.unique(r.data)) == {1.0, 1.6}

    def test_radius_boundary(self):
        """Test that bins with d² <= 2r² are inside the circle."""
        r = build_parametric_r(GridShape(1, 8, 8), ParametricFilterSpec(r=1.0, lam=3.0))
        # d² = 2 at (+1, +1) from the centre, d² = 4 at (+2, 0)
        assert r.data[0, 5, 5] == 1.0
        assert r.data[0, 6, 4] == 3.0

    def test_huge_radius_is_all_ones(self):
        """Test that a radius covering every bin gives the identity filter."""
        r = build_parametric_r(GridShape(2, 6, 6), ParametricFilterSpec(r=100.0, lam=5.0))
        assert_array_equal(r.data, 1.0)

    def test_same_mask_every_channel(self):
        """Test broadcasting over channels."""
        r = build_parametric_r(GridShape(3, 10, 10), ParametricFilterSpec(r=2.0, lam=2.0))
        assert_array_equal(r.data[0], r.data[2])

    def test_symmetric_under_negation(self):
        """Test that odd and even grids give admissible filters."""
        for h, w in ((7, 7), (8, 6), (5, 8)):
            r = build_parametric_r(GridShape(1, h, w), ParametricFilterSpec(r=1.5, lam=2.0))
            assert is_hermitian_symmetric(uncenter(r.data))

    @pytest.mark.parametrize("r, lam", [(0.0, 1.6), (-1.0, 1.6), (2.0, 0.0)])
    def test_invalid_parameters(self, r, lam):
        """Test that non-positive parameters are rejected."""
        with pytest.raises(ValueError):
            ParametricFilterSpec(r=r, lam=lam)


class TestStatisticalFilter:
    """Test the frequency filter built from sample statistics."""

    def test_max_is_exactly_one(self, rng):
        """Test the normalization for several alpha values."""
        target = GrfTarget.power_law(GridShape(1, 8, 8), condition_number=100.0)
        samples = list(target.sample(rng, size=50))
        for alpha in (1.0, 5.0, 20.0):
            r = build_statistical_r(samples, StatisticalFilterSpec(alpha))
            assert r.data.max() == 1.0
            assert r.data.min() >= (alpha - 1.0) / alpha

    def test_alpha_one_keeps_log_spectrum(self, rng):
        """Test that alpha=1 returns log(power + 1)/max."""
        samples = [Field(rng.standard_normal((1, 4, 4))) for _ in range(5)]
        spectra = np.fft.fft2(np.stack([s.data for s in samples]), axes=(-2, -1))
        expected = np.log(np.mean(np.abs(spectra) ** 2, axis=0) + 1.0)
        expected = np.fft.fftshift(expected / expected.max(), axes=(-2, -1))
        r = build_statistical_r(samples, StatisticalFilterSpec(1.0))
        assert_allclose(r.data, expected, rtol=1e-12)

    def test_admissible_for_preconditioning(self, rng):
        """Test that statistics of real samples are symmetric under negation."""
        samples = [Field(rng.standard_normal((1, 6, 6))) for _ in range(10)]
        r = build_statistical_r(samples, StatisticalFilterSpec(5.0))
        assert is_hermitian_symmetric(uncenter(r.data))

    def test_sample_order_does_not_matter(self, rng):
        """Test that permuting the samples leaves R unchanged."""
        samples = [Field(rng.standard_normal((1, 6, 6))) for _ in range(12)]
        shuffled = [samples[i] for i in rng.permutation(len(samples))]
        forward = build_statistical_r(samples, StatisticalFilterSpec(5.0))
        permuted = build_statistical_r(shuffled, StatisticalFilterSpec(5.0))
        assert_allclose(permuted.data, forward.data, rtol=1e-12)
        assert permuted.data.max() == forward.data.max() == 1.0

    def test_all_zero_samples(self):
        """Test that degenerate statistics are reported."""
        samples = [Field.zeros(GridShape(1, 4, 4))] * 3
        with pytest.raises(DegenerateStatisticsError):
            build_statistical_r(samples, StatisticalFilterSpec(5.0))

    def test_alpha_below_one(self):
        """Test that alpha < 1 is rejected."""
        with pytest.raises(ValueError):
            StatisticalFilterSpec(0.5)

    def test_empty_and_mismatched_samples(self):
        """Test that empty and mixed-shape sample sets are rejected."""
        with pytest.raises(ValueError):
            build_statistical_r([], StatisticalFilterSpec(5.0))
        with pytest.raises(ValueError):
            build_statistical_r(
                [Field.ones(GridShape(1, 4, 4)), Field.ones(GridShape(1, 4, 5))],
                StatisticalFilterSpec(5.0),
            )


class TestSpaceFilter:
    """Test the space filter."""

    def test_constant_samples_give_ones(self):
        """Test that constant samples produce the all-ones filter."""
        samples = [Field.full(GridShape(1, 4, 4), 3.0)] * 4
        assert_array_equal(build_space_a(samples).data, 1.0)

    def test_range(self, rng):
        """Test max exactly 1 and the 1e-6 floor."""
        data = rng.uniform(0.0, 1.0, size=(6, 1, 5, 5))
        data[:, 0, 0, 0] = 0.0
        a = build_space_a([Field(d) for d in data])
        assert a.data.max() == 1.0
        assert a.data.min() >= SPACE_FILTER_FLOOR
        assert a.data[0, 0, 0] == SPACE_FILTER_FLOOR

    def test_negative_samples_rejected(self):
        """Test that negative pixel values are rejected."""
        with pytest.raises(ValueError, match="non-negative"):
            build_space_a([Field.full(GridShape(1, 2, 2), -1.0)])

    def test_all_zero_samples(self):
        """Test that all-zero samples are degenerate."""
        with pytest.raises(DegenerateStatisticsError):
            build_space_a([Field.zeros(GridShape(1, 2, 2))])

    def test_uniform(self):
        """Test the no-op space filter."""
        assert_array_equal(uniform_a(GridShape(2, 3, 3)).data, 1.0)


class TestSampleLoading:
    """Test reading sample directories."""

    def test_sorted_and_subset(self, tmp_path):
        """Test name order and a seeded subset that stays in name order."""
        for i in range(5):
            write_grid(tmp_path / f"s{i}.pdsgrid", Field.full(GridShape(1, 2, 2), float(i)))
        all_samples = load_samples(tmp_path)
        assert [s.data[0, 0, 0] for s in all_samples] == [0.0, 1.0, 2.0, 3.0, 4.0]
        subset = [s.data[0, 0, 0] for s in load_samples(tmp_path, count=3, seed=1)]
        assert len(subset) == 3
        assert subset == sorted(subset)
        assert subset == [s.data[0, 0, 0] for s in load_samples(tmp_path, count=3, seed=1)]

    def test_missing_directory(self, tmp_path):
        """Test that an empty or missing directory is an error."""
        with pytest.raises(FileNotFoundError):
            load_samples(tmp_path)
        with pytest.raises(FileNotFoundError):
            load_samples(tmp_path / "nope")

    def test_summary(self):
        """Test the min/max/shape summary."""
        summary = filter_summary(build_parametric_r(GridShape(1, 28, 28), ParametricFilterSpec(5.6, 1.6)))
        assert summary == {"shape": "1x28x28", "min": 1.0, "max": 1.6}
