import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvfret.errors import DataFormatError, NumericalError, PreconditionError, RangeError
from nvfret.fitting import GateSpec
from nvfret.grid import IrfSpec, TimeGrid
from nvfret.inversion import (
    RadiusCurve,
    invert_radius,
    read_curve_csv,
    tau_eff_curve,
    tau_eff_point,
    write_curve_csv,
)
from nvfret.model import ModelParams


@pytest.fixture(scope="module")
def curve():
    return tau_eff_curve(5.0, 30.0, 26)


def test_curve_is_strictly_decreasing_and_bounded(curve):
    assert np.all(np.diff(curve.tau_eff_ns) < 0)
    assert curve.tau_eff_ns[0] > 0 and curve.tau_eff_ns[-1] < 12.0


def test_grid_points_invert_to_themselves(curve):
    for r, tau in zip(curve.r_nm, curve.tau_eff_ns):
        assert invert_radius(tau, 0.0, curve).r_nm == pytest.approx(r, rel=1e-10)


def test_off_grid_radii_round_trip_within_one_percent(curve):
    p = ModelParams()
    d = p.depth_distribution()
    for r in (6.3, 11.1, 17.7, 24.4, 29.2):
        tau = tau_eff_point(r, p, d, GateSpec(), TimeGrid(), IrfSpec())
        assert invert_radius(tau, 0.0, curve).r_nm == pytest.approx(r, rel=0.01)


def test_uncertainty_scales_with_slope(curve):
    est = invert_radius(6.0, 0.1, curve)
    assert est.slope_nm_per_ns < 0
    assert est.sigma_nm == pytest.approx(0.1 * abs(est.slope_nm_per_ns))
    with pytest.raises(PreconditionError):
        invert_radius(6.0, -0.1, curve)


def test_out_of_range_reports_interval(curve):
    lo, hi = curve.tau_range
    with pytest.raises(RangeError) as info:
        invert_radius(hi + 1.0, 0.0, curve)
    assert info.value.interval == pytest.approx((lo, hi))
    with pytest.raises(RangeError):
        invert_radius(lo - 0.01, 0.0, curve)


def test_radius_below_calibrated_range_is_refused():
    with pytest.raises(RangeError):
        tau_eff_curve(4.0, 30.0, 5)
    with pytest.raises(PreconditionError):
        tau_eff_curve(10.0, 8.0, 5)
    with pytest.raises(PreconditionError):
        tau_eff_curve(5.0, 30.0, 1)


def test_non_monotone_curve_names_the_indices():
    with pytest.raises(NumericalError, match=r"\(1, 2\)"):
        RadiusCurve([5, 10, 15, 20], [9.0, 7.0, 7.5, 6.0])


def test_csv_round_trip(tmp_path, curve):
    path = tmp_path / "curve.csv"
    write_curve_csv(curve, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "r_nm,tau_eff_ns"
    back = read_curve_csv(path)
    np.testing.assert_allclose(back.r_nm, curve.r_nm, rtol=5e-6)
    np.testing.assert_allclose(back.tau_eff_ns, curve.tau_eff_ns, rtol=5e-6)
    assert invert_radius(5.2, 0, back).r_nm == pytest.approx(invert_radius(5.2, 0, curve).r_nm, rel=1e-4)


def test_csv_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("R,tau\n1,2\n")
    with pytest.raises(DataFormatError):
        read_curve_csv(bad)
    bad.write_text("r_nm,tau_eff_ns\n5,abc\n10,3\n")
    with pytest.raises(DataFormatError):
        read_curve_csv(bad)
    bad.write_text("r_nm,tau_eff_ns\n5,3\n10,4\n")
    with pytest.raises(DataFormatError):
        read_curve_csv(bad)
    with pytest.raises(DataFormatError):
        read_curve_csv(tmp_path / "missing.csv")


@settings(max_examples=50, deadline=None)
@given(tau=st.floats(min_value=0.0, max_value=1.0))
def test_inverse_is_monotone_property(curve, tau):
    lo, hi = curve.tau_range
    t1 = lo + tau * (hi - lo)
    t2 = min(t1 + 0.01, hi)
    assert invert_radius(t2, 0, curve).r_nm <= invert_radius(t1, 0, curve).r_nm
