import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvfret.errors import DataFormatError, DomainError, NumericalError, PreconditionError
from nvfret.fitting import ExpComponent, GateSpec, exp_gauss_model
from nvfret.flim import (
    LOW_SIGNAL,
    OFF_FLAKE,
    ON_FLAKE,
    edge_profile,
    empirical_min_photons,
    fit_flim_cube,
    fit_pixel,
    mixing_shape,
    photon_budget,
    photon_ladder,
)
from nvfret.grid import FlimCube, IrfSpec, TimeGrid
from nvfret.simulate import FlimScene, simulate_flim_cube

GRID = TimeGrid(64.0, 1024)


def _pixel(comps, photons, seed):
    t = GRID.times_ns()
    m = sum(exp_gauss_model(t, ExpComponent(a, tau), IrfSpec()) for a, tau in comps)
    return np.random.default_rng(seed).poisson(m / m.sum() * photons)


def test_on_flake_pixel(irf):
    cls, tau_slow, _, tau_fast, *_ = fit_pixel(_pixel([(10.0, 0.41), (1.0, 4.0)], 1e4, 1),
                                               GRID, GateSpec(), irf, 100)
    assert cls == ON_FLAKE
    assert tau_fast < tau_slow < 6.0
    assert tau_fast == pytest.approx(0.41, rel=0.2)


def test_off_flake_pixel(irf):
    cls, tau_slow, sigma, tau_fast, tau_fast_sigma, *_ = fit_pixel(
        _pixel([(1.0, 12.0)], 1e4, 2), GRID, GateSpec(), irf, 100)
    assert cls == OFF_FLAKE
    assert tau_slow == pytest.approx(12.0, rel=0.05)
    assert np.isnan(tau_fast) and np.isnan(tau_fast_sigma)


def test_low_signal_pixel_has_no_lifetimes(irf):
    counts = _pixel([(1.0, 12.0)], 50, 3)
    assert counts.sum() < 100
    out = fit_pixel(counts, GRID, GateSpec(), irf, 100)
    assert out[0] == LOW_SIGNAL
    assert np.all(np.isnan(out[1:]))


def _strip(width=24, height=5, psf=620.0, photons=1e4, seed=0, on_right=True):
    x0, x1 = (width / 2, width) if on_right else (0, width / 2)
    scene = FlimScene(width_px=width, height_px=height, psf_fwhm_nm=psf, photons_per_pixel=photons,
                      polygons=[[(x0, 0), (x1, 0), (x1, height), (x0, height)]])
    from nvfret.model import ModelParams

    p = ModelParams()
    cube = simulate_flim_cube(scene, p, p.depth_distribution(), IrfSpec(), GRID, seed=seed)
    return scene, cube


def test_map_is_independent_of_worker_count():
    _, cube = _strip(width=6, height=3, psf=0.0)
    a = fit_flim_cube(cube, workers=1)
    b = fit_flim_cube(cube, workers=2)
    for name in ("cls", "tau_slow", "tau_slow_sigma", "tau_fast", "goodness", "counts"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_map_invariants():
    _, cube = _strip(width=8, height=3, psf=0.0)
    m = fit_flim_cube(cube)
    both = np.isfinite(m.tau_fast)
    assert both.any()
    assert np.all(m.tau_fast[both] < m.tau_slow[both])
    assert np.all(m.cls[both] == ON_FLAKE)
    assert np.all(m.cls[:, :4] == OFF_FLAKE) and np.all(m.cls[:, 4:] == ON_FLAKE)


def test_fit_flim_cube_preconditions():
    _, cube = _strip(width=2, height=1, psf=0.0)
    with pytest.raises(PreconditionError):
        fit_flim_cube(cube, min_counts=50)
    cube.counts = cube.counts[..., :10]
    with pytest.raises(DataFormatError):
        fit_flim_cube(cube)
    with pytest.raises(DataFormatError):
        FlimCube(2, 2, GRID, np.zeros(7, dtype=np.uint32))


def test_sharp_edge_resolves_below_one_pixel():
    _, cube = _strip(psf=0.0, seed=4)
    m = fit_flim_cube(cube)
    e = edge_profile(m, (0.5, 2.5), (23.5, 2.5), halfwidth_px=2)
    assert e.psf_fwhm_nm <= m.pixel_size_nm
    # the edge sits 11.5 pixels along the line from the first pixel centre
    assert e.edge_position_nm == pytest.approx(1150.0, abs=50.0)
    assert e.plateau_start_ns == pytest.approx(12.0, rel=0.05)
    assert e.plateau_end_ns < 6.0


@pytest.mark.parametrize("on_right", [True, False])
def test_blurred_edge_fwhm(on_right):
    _, cube = _strip(width=32, height=7, seed=5, on_right=on_right)
    m = fit_flim_cube(cube)
    e = edge_profile(m, (0.5, 3.5), (31.5, 3.5), halfwidth_px=3)
    assert e.psf_fwhm_nm == pytest.approx(620.0, rel=0.1)
    assert e.psf_fwhm_sigma > 0
    assert np.all(np.isfinite(e.fit_ns))
    lo, hi = (12.0, 4.0) if on_right else (4.0, 12.0)
    assert e.plateau_start_ns == pytest.approx(lo, abs=1.5)
    assert e.plateau_end_ns == pytest.approx(hi, abs=1.5)


def test_edge_without_fit_context_falls_back_to_plain_step():
    _, cube = _strip(psf=0.0, seed=6)
    m = fit_flim_cube(cube)
    m.grid = m.irf = None
    e = edge_profile(m, (0.5, 2.5), (23.5, 2.5), halfwidth_px=2)
    assert e.psf_fwhm_nm <= m.pixel_size_nm


def test_edge_profile_errors():
    _, cube = _strip(psf=0.0, seed=7)
    m = fit_flim_cube(cube)
    with pytest.raises(PreconditionError, match="does not cross"):
        edge_profile(m, (0.5, 2.5), (10.5, 2.5))
    with pytest.raises(PreconditionError, match="8 samples"):
        edge_profile(m, (6.5, 2.5), (23.5, 2.5))
    with pytest.raises(PreconditionError):
        edge_profile(m, (0.5, 2.5), (0.7, 2.5))


def test_mixing_shape_is_monotone_and_pinned(irf):
    u = mixing_shape([(1.0, 12.0)], [(1.0, 4.0), (10.0, 0.41)], GRID, irf, GateSpec(), n=11)
    g = np.linspace(0, 1, 101)
    assert u(0.0) == pytest.approx(0.0, abs=1e-12)
    assert u(1.0) == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(u(g)) > 0)
    # the slow lifetime follows the longer-lived side: mostly off-like at g = 0.5
    assert u(0.5) < 0.5


def test_photon_budget():
    assert photon_budget(70_000, 1000) == pytest.approx(1000 / 70_000)
    assert photon_budget(1e6, 1000) == pytest.approx(1e-3)
    with pytest.raises(DomainError):
        photon_budget(0, 1000)
    with pytest.raises(DomainError):
        photon_budget(1e5, 0)


def test_photon_ladder():
    assert photon_ladder(1000) == [10, 20, 50, 100, 200, 500, 1000]
    assert photon_ladder(1e7)[-1] == 10_000_000


def test_empirical_min_photons_matches_counting_limit():
    # shot-noise limit: rel. std = F / sqrt(N) with F ~ 1 for a window much longer
    # than tau, so 10 % needs about 100 photons
    n10 = empirical_min_photons(12.0, 0.10, seed=1, trials=200)
    assert n10 in (100, 200)


def test_empirical_min_photons_scaling():
    grid = TimeGrid(64.0, 1024)
    n10 = empirical_min_photons(12.0, 0.10, seed=2, grid=grid, trials=100)
    n1 = empirical_min_photons(12.0, 0.01, seed=2, grid=grid, trials=100)
    assert 50 <= n1 / n10 <= 200


def test_empirical_min_photons_loose_target_and_errors():
    grid = TimeGrid(64.0, 1024)
    # rungs below 100 photons fail the fit's count precondition
    assert empirical_min_photons(12.0, 0.5, seed=3, grid=grid, trials=50) == 100
    with pytest.raises(PreconditionError):
        empirical_min_photons(12.0, 1.5)
    with pytest.raises(NumericalError):
        empirical_min_photons(12.0, 0.01, seed=3, grid=grid, trials=20, max_photons=1000)


@settings(max_examples=30, deadline=None)
@given(rate=st.floats(min_value=1.0, max_value=1e9), n=st.integers(min_value=1, max_value=10**7))
def test_photon_budget_property(rate, n):
    assert photon_budget(rate, n) * rate == pytest.approx(n)
