"""Forward simulation: ensemble decays, IRF blur, photon histograms, FLIM scenes."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from matplotlib.path import Path
from scipy.ndimage import gaussian_filter
from scipy.special import log_ndtr, ndtr

from nvfret.errors import NumericalError, PreconditionError
from nvfret.grid import FWHM_PER_SIGMA, DecayCurve, FlimCube, IrfSpec, TcspcHistogram, TimeGrid
from nvfret.model import DepthDistribution, ModelParams, quenched_intensity, quenched_lifetime

QUADRATURE_NODES = 129
QUADRATURE_RTOL = 1e-6
# Segments further than this many IRF sigmas from an output sample are skipped.
_CONV_REACH = 12.0


@dataclass(frozen=True)
class SignalComposition:
    """Peak weights of donor and acceptor decays plus a flat background per bin."""

    donor_weight: float = 1.0
    acceptor_weight: float = 0.0
    background_rate: float = 0.0
    acceptor_lifetime_ns: float = 0.41

    def __post_init__(self):
        if min(self.donor_weight, self.acceptor_weight, self.background_rate) < 0:
            raise PreconditionError("signal weights and background must be >= 0")
        if not self.acceptor_lifetime_ns > 0:
            raise PreconditionError("acceptor_lifetime_ns must be > 0")


@dataclass(frozen=True)
class FlimScene:
    """Synthetic scan area. Polygon vertices are (x, y) in pixel units;
    pixel (row, col) covers ``[col, col + 1) x [row, row + 1)``."""

    width_px: int = 32
    height_px: int = 32
    pixel_size_nm: float = 100.0
    polygons: tuple = ()
    on_flake: SignalComposition = field(
        default_factory=lambda: SignalComposition(donor_weight=1.0, acceptor_weight=4.0)
    )
    off_flake: SignalComposition = field(default_factory=SignalComposition)
    psf_fwhm_nm: float = 620.0
    photons_per_pixel: float = 1e4

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise PreconditionError("scene must contain at least one pixel")
        if not self.pixel_size_nm > 0:
            raise PreconditionError("pixel_size_nm must be > 0")
        if not self.photons_per_pixel > 0:
            raise PreconditionError("photons_per_pixel must be > 0")
        if not self.psf_fwhm_nm >= 0:
            raise PreconditionError("psf_fwhm_nm must be >= 0")
        polys = tuple(tuple((float(x), float(y)) for x, y in poly) for poly in self.polygons)
        for poly in polys:
            if len(poly) < 3:
                raise PreconditionError("flake polygons need at least 3 vertices")
            xy = np.array(poly)
            if (xy[:, 0].min() < 0 or xy[:, 1].min() < 0
                    or xy[:, 0].max() > self.width_px or xy[:, 1].max() > self.height_px):
                raise PreconditionError("flake polygon extends outside the image")
        object.__setattr__(self, "polygons", polys)


def ensemble_decay(p: ModelParams, d: DepthDistribution, grid: TimeGrid,
                   n_nodes: int = QUADRATURE_NODES) -> DecayCurve:
    """Depth-averaged donor decay ``S(t) = int D(z) I(z) exp(-t / tau(z)) dz``.

    Normalized so that ``S(0) = 1``; zero before the excitation origin.
    Raises NumericalError if doubling the quadrature order changes the
    curve by more than ``QUADRATURE_RTOL``.
    """
    t = grid.times_ns()

    def evaluate(n):
        z, w = d.nodes(n)
        amp = w * quenched_intensity(z, p)
        rate = 1.0 / quenched_lifetime(z, p)
        tp = np.clip(t, 0.0, None)
        s = np.exp(-np.outer(tp, rate)) @ amp
        return np.where(t >= 0, s / amp.sum(), 0.0)

    s = evaluate(n_nodes)
    check = evaluate(2 * n_nodes - 1)
    change = np.max(np.abs(s - check))
    if not change <= QUADRATURE_RTOL:
        raise NumericalError(
            f"depth quadrature did not converge: change {change:.2e} on doubling nodes"
        )
    return DecayCurve(grid, s, causal=True)


def exponential_curve(grid: TimeGrid, lifetime_ns: float, amplitude: float = 1.0) -> DecayCurve:
    if not lifetime_ns > 0:
        raise PreconditionError("lifetime must be > 0")
    t = grid.times_ns()
    v = np.where(t >= 0, amplitude * np.exp(-np.clip(t, 0, None) / lifetime_ns), 0.0)
    return DecayCurve(grid, v, causal=True)


def _log_dphi(a, b):
    """log(Phi(b) - Phi(a)) for a <= b, accurate in both tails."""
    neg = a > 0
    hi = np.where(neg, -a, b)
    lo = np.where(neg, -b, a)
    lhi = log_ndtr(hi)
    llo = log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return lhi + np.log(-np.expm1(llo - lhi))


def _segments(curve: DecayCurve):
    """Piecewise model of the sampled curve: exponential between positive
    neighbours, linear otherwise. Returns arrays (s0, s1, c0, k, slope, is_exp)."""
    t = curve.times_ns()
    f = curve.values
    w = curve.grid.bin_width_ns
    if curve.causal:
        keep = t > 0
        t, f = t[keep], f[keep]
        if t.size < 2:
            raise PreconditionError("causal curve needs at least two samples after the origin")
        lead_f = f[0] * (f[0] / f[1]) ** (t[0] / (t[1] - t[0])) if f[0] > 0 and f[1] > 0 else f[0]
        knots = np.concatenate([[0.0], t, [t[-1] + 0.5 * w]])
        vals = np.concatenate([[lead_f], f, [f[-1]]])
    else:
        knots = np.concatenate([[t[0] - 0.5 * w], t, [t[-1] + 0.5 * w]])
        vals = np.concatenate([[f[0]], f, [f[-1]]])
    if curve.causal and f[-1] > 0 and f[-2] > 0:
        vals[-1] = f[-1] * np.sqrt(f[-1] / f[-2])
    s0, s1 = knots[:-1], knots[1:]
    c0, c1 = vals[:-1], vals[1:]
    is_exp = (c0 > 0) & (c1 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(is_exp, np.log(np.where(is_exp, c0, 1.0) / np.where(is_exp, c1, 1.0)) / (s1 - s0), 0.0)
    slope = (c1 - c0) / (s1 - s0)
    return s0, s1, c0, k, slope, is_exp


def _segment_conv(u, s0, s1, c0, k, slope, is_exp, sigma):
    """Integral of one segment against a unit-area Gaussian centred at ``u``."""
    b0 = (s0 - u + k * sigma**2) / sigma
    b1 = (s1 - u + k * sigma**2) / sigma
    expo = -k * (u - s0) + 0.5 * (k * sigma) ** 2 + _log_dphi(b0, b1)
    with np.errstate(over="ignore", under="ignore"):
        e_part = c0 * np.exp(expo)
    v0 = (s0 - u) / sigma
    v1 = (s1 - u) / sigma
    dphi = ndtr(v1) - ndtr(v0)
    pdf = lambda v: np.exp(-0.5 * v * v) / np.sqrt(2 * np.pi)  # noqa: E731
    l_part = (c0 + slope * (u - s0)) * dphi + slope * sigma * (pdf(v0) - pdf(v1))
    return np.where(is_exp, e_part, l_part)


def irf_convolve(curve: DecayCurve, irf: IrfSpec) -> DecayCurve:
    """Convolve with a unit-area Gaussian IRF.

    The samples are joined by exponential pieces (linear where a sample is
    zero) and each piece is convolved in closed form, so pure exponentials
    are reproduced to rounding error. Requires ``bin_width <= fwhm / 4``
    unless the IRF is narrower than one bin.
    """
    grid = curve.grid
    if grid.bin_width_ps > irf.fwhm_ps / 4 and irf.fwhm_ps >= grid.bin_width_ps:
        raise PreconditionError(
            f"bin width {grid.bin_width_ps} ps too coarse for IRF fwhm {irf.fwhm_ps} ps "
            "(need bin <= fwhm/4)"
        )
    sigma = irf.sigma_ns
    u = grid.times_ns() - irf.center_ns
    s0, s1, c0, k, slope, is_exp = _segments(curve)
    n_seg = s0.size
    out = np.zeros_like(u)
    # segment index whose span contains (or is nearest to) each output time
    home = np.clip(np.searchsorted(s1, u), 0, n_seg - 1)
    reach = int(np.ceil(_CONV_REACH * sigma / grid.bin_width_ns)) + 1
    for off in range(-reach, reach + 1):
        j = home + off
        ok = (j >= 0) & (j < n_seg)
        if not ok.any():
            continue
        jj = j[ok]
        out[ok] += _segment_conv(u[ok], s0[jj], s1[jj], c0[jj], k[jj], slope[jj], is_exp[jj], sigma)
    # samples far before the first knot only see the leading segments
    early = u < s0[0] - (reach - 1) * grid.bin_width_ns
    if early.any():
        lead = np.arange(min(n_seg, 2 * reach))
        ue = u[early][:, None]
        out[early] = _segment_conv(
            ue, s0[lead], s1[lead], c0[lead], k[lead], slope[lead], is_exp[lead], sigma
        ).sum(axis=1)
    return DecayCurve(grid, np.clip(out, 0.0, None), causal=False)


def compose_signal(donor: DecayCurve, comp: SignalComposition, irf: IrfSpec) -> DecayCurve:
    """IRF-blurred donor + acceptor mono-exponential + flat background."""
    grid = donor.grid
    total = np.zeros(grid.n_bins)
    if comp.donor_weight > 0:
        total += comp.donor_weight * irf_convolve(donor, irf).values
    if comp.acceptor_weight > 0:
        acc = exponential_curve(grid, comp.acceptor_lifetime_ns)
        total += comp.acceptor_weight * irf_convolve(acc, irf).values
    total += comp.background_rate
    return DecayCurve(grid, total, causal=False)


def sample_histogram(model: DecayCurve, total_photons: float, seed) -> TcspcHistogram:
    """Poisson counts per bin with expected total ``total_photons``.

    ``seed`` may be an int or a ``numpy.random.SeedSequence``.
    """
    if not total_photons > 0:
        raise PreconditionError("total_photons must be > 0")
    s = model.values.sum()
    if not s > 0:
        raise PreconditionError("model curve is identically zero")
    rng = np.random.default_rng(seed)
    lam = model.values * (total_photons / s)
    return TcspcHistogram(model.grid, rng.poisson(lam))


def sample_fixed_total(model: DecayCurve, n_photons: int, seed) -> TcspcHistogram:
    """Exactly ``n_photons`` arrivals distributed over bins by the model."""
    if not n_photons > 0:
        raise PreconditionError("n_photons must be > 0")
    p = model.values / model.values.sum()
    rng = np.random.default_rng(seed)
    return TcspcHistogram(model.grid, rng.multinomial(int(n_photons), p))


def pixel_seed(seed: int, row: int, col: int) -> np.random.SeedSequence:
    """Per-pixel stream, independent of scheduling."""
    return np.random.SeedSequence([int(seed), int(row), int(col)])


SUPERSAMPLE = 9


def coverage_map(scene: FlimScene) -> np.ndarray:
    """Flake coverage per pixel in [0, 1], blurred by the scene PSF.

    The flake mask is rasterized on a ``SUPERSAMPLE``-times finer grid.
    With zero blur the value is the covered area fraction of each pixel;
    otherwise it is the PSF-weighted coverage at the pixel centre.
    """
    s = SUPERSAMPLE
    h, w = scene.height_px, scene.width_px
    if not scene.polygons:
        return np.zeros((h, w))
    xs = (np.arange(w * s) + 0.5) / s
    ys = (np.arange(h * s) + 0.5) / s
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    mask = np.zeros(pts.shape[0], dtype=bool)
    for poly in scene.polygons:
        mask |= Path(np.asarray(poly)).contains_points(pts)
    mask = mask.reshape(h * s, w * s).astype(float)
    if scene.psf_fwhm_nm == 0:
        return mask.reshape(h, s, w, s).mean(axis=(1, 3))
    sigma_sub = scene.psf_fwhm_nm / FWHM_PER_SIGMA / scene.pixel_size_nm * s
    blurred = gaussian_filter(mask, sigma_sub, mode="nearest", truncate=6.0)
    return np.clip(blurred[s // 2::s, s // 2::s], 0.0, 1.0)


def scene_models(scene: FlimScene, p: ModelParams, d: DepthDistribution,
                 irf: IrfSpec, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """(off-flake, on-flake) blurred model curves, each normalized to unit sum
    so that coverage interpolates photon fractions."""
    bulk = exponential_curve(grid, p.bulk_lifetime_ns)
    quenched = ensemble_decay(p, d, grid)
    off = compose_signal(bulk, scene.off_flake, irf).values
    on = compose_signal(quenched, scene.on_flake, irf).values
    if not (off.sum() > 0 and on.sum() > 0):
        raise PreconditionError("on- and off-flake compositions must both emit light")
    return off / off.sum(), on / on.sum()


def _simulate_rows(args):
    rows, coverage, off, on, photons, seed, n_bins = args
    out = np.empty((len(rows), coverage.shape[1], n_bins), dtype=np.uint32)
    for i, r in enumerate(rows):
        for c in range(coverage.shape[1]):
            f = coverage[r, c]
            model = (1.0 - f) * off + f * on
            lam = model * photons
            rng = np.random.default_rng(pixel_seed(seed, r, c))
            out[i, c] = rng.poisson(lam)
    return out


def simulate_flim_cube(scene: FlimScene, p: ModelParams, d: DepthDistribution, irf: IrfSpec,
                       grid: TimeGrid, seed: int, workers: int = 1) -> FlimCube:
    """Render a synthetic FLIM cube.

    A pixel with blurred flake coverage ``f`` takes a fraction ``f`` of its
    ``photons_per_pixel`` expected counts from the on-flake signal (quenched
    ensemble plus acceptor) and the rest from the off-flake signal (bulk
    donor). Counts are Poisson-sampled from a stream derived from
    ``(seed, row, col)``.
    """
    coverage = coverage_map(scene)
    off, on = scene_models(scene, p, d, irf, grid)
    rows = list(range(scene.height_px))
    chunks = [rows[i::max(1, workers)] for i in range(max(1, workers))]
    chunks = [c for c in chunks if c]
    jobs = [(c, coverage, off, on, scene.photons_per_pixel, seed, grid.n_bins) for c in chunks]
    counts = np.empty((scene.height_px, scene.width_px, grid.n_bins), dtype=np.uint32)
    if workers <= 1:
        results = map(_simulate_rows, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_simulate_rows, jobs)
    for c, block in zip(chunks, results):
        counts[c] = block
    if workers > 1:
        pool.shutdown()
    meta = {"seed": int(seed), "photons_per_pixel": float(scene.photons_per_pixel)}
    return FlimCube(scene.width_px, scene.height_px, grid, counts, scene.pixel_size_nm, meta)
