import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from nvfret.errors import DomainError, PreconditionError
from nvfret.model import (
    DepthDistribution,
    ModelParams,
    depth_density,
    depth_solving_lifetime,
    fret_efficiency,
    nonradiative_rate,
    quenched_intensity,
    quenched_lifetime,
)

radii = st.floats(min_value=0.5, max_value=50.0)
depths = st.floats(min_value=0.1, max_value=200.0)
exponents = st.sampled_from([4, 6])


def test_defaults_match_reference_sample():
    p = ModelParams()
    assert (p.foerster_radius_nm, p.bulk_lifetime_ns, p.distance_exponent) == (13.0, 12.0, 4)
    assert (p.depth_mean_nm, p.depth_sigma_nm) == (6.5, 2.7)


@pytest.mark.parametrize("n", [4, 6])
def test_half_efficiency_at_foerster_radius(n):
    p = ModelParams(distance_exponent=n)
    assert fret_efficiency(13.0, p) == 0.5
    assert quenched_lifetime(13.0, p) == 6.0
    assert quenched_intensity(13.0, p) == 0.5


def test_hand_evaluated_values():
    p = ModelParams()
    # z = 2R, n = 4: (R/z)^n = 1/16
    assert fret_efficiency(26.0, p) == pytest.approx(1 / 17, rel=1e-15)
    assert quenched_lifetime(26.0, p) == pytest.approx(12 * 16 / 17, rel=1e-15)
    assert nonradiative_rate(26.0, p) == pytest.approx(1 / 12 / 16, rel=1e-15)
    # z = R/2, n = 6: (R/z)^n = 64
    p6 = ModelParams(distance_exponent=6)
    assert fret_efficiency(6.5, p6) == pytest.approx(64 / 65, rel=1e-15)
    assert quenched_lifetime(6.5, p6) == pytest.approx(12 / 65, rel=1e-15)


def test_zero_radius_is_unquenched():
    p = ModelParams(foerster_radius_nm=0.0)
    z = np.array([1.0, 5.0, 50.0])
    np.testing.assert_array_equal(quenched_lifetime(z, p), 12.0)
    np.testing.assert_array_equal(fret_efficiency(z, p), 0.0)


def test_efficiency_saturates_without_overflow():
    p = ModelParams(distance_exponent=6)
    e = fret_efficiency(np.array([1e-30, 1e-3]), p)
    assert np.all(e <= 1.0) and e[0] == 1.0


def test_scalar_in_scalar_out():
    assert isinstance(quenched_lifetime(10.0, ModelParams()), float)
    assert quenched_lifetime(np.array([10.0]), ModelParams()).shape == (1,)


@pytest.mark.parametrize("z", [0.0, -1.0, np.nan])
def test_nonpositive_depth_is_domain_error(z):
    with pytest.raises(DomainError):
        quenched_lifetime(z, ModelParams())
    with pytest.raises(DomainError):
        fret_efficiency(np.array([5.0, z]), ModelParams())


@pytest.mark.parametrize(
    "kwargs",
    [dict(distance_exponent=5), dict(bulk_lifetime_ns=0.0), dict(foerster_radius_nm=-1.0),
     dict(depth_sigma_nm=0.0), dict(unquenched_intensity=0.0)],
)
def test_invalid_params_rejected(kwargs):
    with pytest.raises(PreconditionError):
        ModelParams(**kwargs)


def test_depth_solving_lifetime_closed_form():
    # oracle: z = R / (tau_b / tau - 1)^(1/n)
    z = depth_solving_lifetime(5.2, ModelParams())
    assert z == pytest.approx(12.156735287115117, rel=1e-12)
    assert quenched_lifetime(z, ModelParams()) == pytest.approx(5.2, rel=1e-12)


def test_depth_solving_lifetime_domain():
    with pytest.raises(DomainError):
        depth_solving_lifetime(12.0, ModelParams())
    with pytest.raises(DomainError):
        depth_solving_lifetime(5.0, ModelParams(foerster_radius_nm=0.0))


def test_depth_density_normalized_over_window():
    d = DepthDistribution(6.5, 2.7)
    assert (d.z_min_nm, d.z_max_nm) == (0.5, 6.5 + 4 * 2.7)
    total, _ = quad(lambda z: depth_density(z, d), d.z_min_nm, d.z_max_nm, epsabs=0, epsrel=1e-12)
    assert total == pytest.approx(1.0, abs=1e-9)
    assert depth_density(0.4, d) == 0.0 and depth_density(d.z_max_nm + 0.1, d) == 0.0


def test_depth_nodes_integrate_density():
    d = DepthDistribution(6.5, 2.7)
    z, w = d.nodes(129)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all((z > d.z_min_nm) & (z < d.z_max_nm))


def test_depth_window_validation():
    with pytest.raises(PreconditionError):
        DepthDistribution(6.5, 2.7, z_min_nm=7.0)
    with pytest.raises(PreconditionError):
        DepthDistribution(6.5, -1.0)


@given(z=depths, r=radii, n=exponents)
def test_efficiency_and_lifetime_are_consistent(z, r, n):
    p = ModelParams(foerster_radius_nm=r, distance_exponent=n)
    e = fret_efficiency(z, p)
    tau = quenched_lifetime(z, p)
    assert 0.0 <= e <= 1.0
    assert 0.0 < tau <= p.bulk_lifetime_ns
    # E = 1 - tau / tau_b and I / I0 = tau / tau_b
    assert e == pytest.approx(1.0 - tau / p.bulk_lifetime_ns, abs=1e-12)
    assert quenched_intensity(z, p) == pytest.approx(tau / p.bulk_lifetime_ns, rel=1e-12)


@given(z1=depths, z2=depths, r=radii, n=exponents)
def test_lifetime_monotone_in_depth(z1, z2, r, n):
    p = ModelParams(foerster_radius_nm=r, distance_exponent=n)
    lo, hi = sorted((z1, z2))
    assert quenched_lifetime(lo, p) <= quenched_lifetime(hi, p)


@settings(max_examples=50)
@given(tau=st.floats(min_value=0.05, max_value=11.9), r=radii, n=exponents)
def test_depth_solving_lifetime_inverts(tau, r, n):
    p = ModelParams(foerster_radius_nm=r, distance_exponent=n)
    z = depth_solving_lifetime(tau, p)
    assert quenched_lifetime(z, p) == pytest.approx(tau, rel=1e-10)
