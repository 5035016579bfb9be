import numpy as np
import pytest
from scipy import stats

from exceptions import InfeasibleRegion
from feasible_sampler import (FeasibleRegion, SamplerConfig, acceptance_rate,
                              concentration_inequality, linear_inequality, pointwise,
                              sample_feasible, sample_partial, zero_completion)


def test_budget_completion_accepts_interior_draw():
    region = FeasibleRegion.simplex(3)
    w = region.complete(np.array([[0.3, 0.5]]))
    np.testing.assert_allclose(w, [[0.3, 0.5, 0.2]])
    assert region.is_feasible(w)[0]


def test_budget_completion_rejects_box_violation():
    region = FeasibleRegion.simplex(3)
    w = region.complete(np.array([[0.7, 0.6]]))
    assert w[0, 2] == pytest.approx(-0.3)
    assert not region.is_feasible(w)[0]


def test_boundary_points_are_rejected():
    region = FeasibleRegion.simplex(2)
    assert not region.is_feasible(np.array([[1.0, 0.0]]))[0]


def test_region_requires_strict_bounds():
    with pytest.raises(ValueError):
        FeasibleRegion(np.array([0.0, 1.0]), np.array([1.0, 1.0]))


def test_samples_satisfy_every_constraint():
    region = FeasibleRegion.simplex(4, inequalities=[concentration_inequality(0.5)])
    samples = sample_feasible(region, 500, seed=3)
    assert samples.shape == (500, 4)
    for w in samples:
        region.check_weights(w)
    assert np.all(np.sum(samples ** 2, axis=1) <= 0.5)


def test_check_weights_flags_broken_completion():
    region = FeasibleRegion.simplex(3)
    with pytest.raises(ValueError):
        region.check_weights(np.array([0.3, 0.3, 0.3]))


def test_two_asset_mean_is_one_half():
    samples = sample_feasible(FeasibleRegion.simplex(2), 10000, seed=0)
    assert abs(samples[:, 0].mean() - 0.5) < 0.02


def test_same_seed_same_samples():
    region = FeasibleRegion.simplex(3)
    np.testing.assert_array_equal(sample_feasible(region, 300, seed=11),
                                  sample_feasible(region, 300, seed=11))
    assert not np.array_equal(sample_feasible(region, 300, seed=11),
                              sample_feasible(region, 300, seed=12))


def test_smaller_draw_is_prefix_of_larger():
    region = FeasibleRegion.simplex(3)
    small = sample_feasible(region, 100, seed=5)
    large = sample_feasible(region, 5000, seed=5)
    np.testing.assert_array_equal(small, large[:100])


def test_call_index_gives_independent_stream():
    region = FeasibleRegion.simplex(3)
    first = sample_feasible(region, 50, seed=5, call_index=0)
    second = sample_feasible(region, 50, seed=5, call_index=1)
    assert not np.array_equal(first, second)


def test_single_asset_region_is_the_closed_point():
    samples = sample_feasible(FeasibleRegion.simplex(1), 3, seed=0)
    np.testing.assert_array_equal(samples, np.ones((3, 1)))


def test_empty_region_raises():
    region = FeasibleRegion.simplex(3, inequalities=[linear_inequality([0.0, 0.0, 0.0], -1.0)])
    config = SamplerConfig(batch_size=1024, floor_check_after=4096)
    with pytest.raises(InfeasibleRegion) as info:
        sample_feasible(region, 10, seed=0, config=config)
    assert info.value.acceptance_rate == 0.0
    assert info.value.proposals >= 4096


def test_partial_sampling_stops_at_budget():
    region = FeasibleRegion.simplex(3, inequalities=[linear_inequality([0.0, 0.0, 0.0], -1.0)])
    samples = sample_partial(region, 10, seed=0, max_proposals=2048,
                             config=SamplerConfig(batch_size=1024))
    assert samples.shape == (0, 3)


def test_sub_box_restricts_free_coordinates():
    region = FeasibleRegion.simplex(3)
    lo, hi = np.array([0.1, 0.2]), np.array([0.2, 0.3])
    samples = sample_feasible(region, 200, seed=1, box=(lo, hi))
    assert np.all((samples[:, :2] >= lo) & (samples[:, :2] <= hi))


def test_disjoint_sub_box_raises():
    region = FeasibleRegion.simplex(2)
    with pytest.raises(InfeasibleRegion):
        sample_feasible(region, 5, seed=0, box=(np.array([1.5]), np.array([2.0])))


def test_acceptance_rate_of_unconstrained_pair():
    assert acceptance_rate(FeasibleRegion.simplex(2), 10000, seed=0) == 1.0


def test_acceptance_rate_of_half_interval():
    region = FeasibleRegion.simplex(2, inequalities=[linear_inequality([1.0, 0.0], -0.5)])
    assert abs(acceptance_rate(region, 10000, seed=0) - 0.5) < 0.02


def test_unit_ball_contains_simplex():
    region = FeasibleRegion.simplex(3, inequalities=[concentration_inequality(1.0)])
    rate = acceptance_rate(region, 10000, seed=0)
    assert 0.0 < rate <= 1.0
    assert rate == pytest.approx(0.5, abs=0.03)  # 三資產單純形：一半的提案 w^3 < 0


def test_pointwise_adapter_matches_vectorised_predicate():
    scalar = pointwise(lambda w: 1.0 - float(np.sum(w ** 2)))
    vectorised = concentration_inequality(1.0)
    points = sample_feasible(FeasibleRegion.simplex(3), 50, seed=2)
    np.testing.assert_allclose(scalar(points), vectorised(points))


def test_zero_completion_pins_last_coordinate():
    region = FeasibleRegion(np.array([0.0, -1.0]), np.array([1.0, 1.0]), completion=zero_completion)
    samples = sample_feasible(region, 100, seed=0)
    assert np.all(samples[:, 1] == 0.0)


def test_denseness_around_fixed_target():
    target = np.array([0.3, 0.7])
    samples = sample_feasible(FeasibleRegion.simplex(2), 50000, seed=4)
    distances = np.linalg.norm(samples - target, axis=1)
    running = np.minimum.accumulate(distances)
    assert np.all(np.diff(running) <= 0)
    assert running[-1] < 0.01


@pytest.mark.slow
def test_two_asset_uniformity_goodness_of_fit():
    samples = sample_feasible(FeasibleRegion.simplex(2), 100000, seed=9)
    counts, _ = np.histogram(samples[:, 0], bins=10, range=(0.0, 1.0))
    assert stats.chisquare(counts).pvalue > 0.001
