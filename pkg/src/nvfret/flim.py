"""Lifetime imaging: per-pixel fits, edge profiles, photon budgets."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import least_squares
from scipy.special import ndtr

from nvfret.errors import DataFormatError, DomainError, NumericalError, PreconditionError
from nvfret.fitting import FitModelSpec, GateSpec, _gate_range, fit_curve, fit_decay, peak_index
from nvfret.grid import FWHM_PER_SIGMA, DecayCurve, FlimCube, IrfSpec, TcspcHistogram, TimeGrid
from nvfret.simulate import exponential_curve, irf_convolve, sample_fixed_total

LOW_SIGNAL, OFF_FLAKE, ON_FLAKE = 0, 1, 2
CLASS_NAMES = {LOW_SIGNAL: "low-signal", OFF_FLAKE: "off-flake", ON_FLAKE: "on-flake"}
SIGNIFICANCE = 2.0
# two fitted lifetimes closer than this ratio are treated as one decay split
# in two; single-exponential pixels produce such splits a few percent of the
# time, while acceptor/donor pairs on the flake sit near a ratio of 8
MIN_LIFETIME_RATIO = 5.0
# resolvable two-component pixels converge in well under this many steps;
# the cap bounds the cost of degenerate fits on single-exponential pixels
BI_MAX_ITER = 100
# fit windows start this long before the histogram peak
_LEAD_NS = 2.0

_FIELDS = ("tau_slow", "tau_slow_sigma", "tau_fast", "tau_fast_sigma",
           "amp_slow", "amp_fast", "goodness")


@dataclass
class LifetimeMap:
    """Per-pixel fit results; absent components are NaN."""

    cls: np.ndarray
    tau_slow: np.ndarray
    tau_slow_sigma: np.ndarray
    tau_fast: np.ndarray
    tau_fast_sigma: np.ndarray
    amp_slow: np.ndarray
    amp_fast: np.ndarray
    counts: np.ndarray
    goodness: np.ndarray
    pixel_size_nm: float = 100.0
    # fit context, needed by the mixing-aware edge model
    grid: TimeGrid | None = None
    irf: IrfSpec | None = None
    gate: GateSpec | None = None

    @property
    def shape(self):
        return self.cls.shape


@dataclass(frozen=True)
class EdgeProfileResult:
    edge_position_nm: float
    edge_position_sigma: float
    psf_fwhm_nm: float
    psf_fwhm_sigma: float
    plateau_start_ns: float
    plateau_end_ns: float
    residual_norm: float
    positions_nm: np.ndarray
    tau_ns: np.ndarray
    fit_ns: np.ndarray  # fitted profile at ``positions_nm``


def _fit_window(counts, grid: TimeGrid, gate: GateSpec):
    """Bins from shortly before the peak to the gate's tail cut."""
    t = grid.times_ns()
    ip = peak_index(counts, t)
    start = int(np.searchsorted(t, t[ip] - _LEAD_NS))
    try:
        _, stop = _gate_range(counts, t, gate, smooth=True)
    except PreconditionError:
        stop = counts.size
    if stop - start < 16:
        start, stop = 0, counts.size
    return start, stop


def fit_pixel(counts, grid: TimeGrid, gate: GateSpec, irf: IrfSpec, min_counts: int):
    """Classify and fit one pixel; returns (class, field values)."""
    total = int(counts.sum())
    empty = (LOW_SIGNAL,) + (np.nan,) * len(_FIELDS)
    if total < min_counts:
        return empty
    start, stop = _fit_window(counts, grid, gate)
    h = TcspcHistogram(grid.sub(start, stop), counts[start:stop])
    try:
        bi = fit_decay(h, FitModelSpec(2, irf=irf, max_iter=BI_MAX_ITER))
        fast, slow = bi.components
        # a spurious extra term can also run off to long lifetimes, so the
        # slow amplitude has to be significant as well
        significant = all(c.amplitude > 0 and c.amplitude > SIGNIFICANCE * c.amplitude_sigma
                          for c in (fast, slow))
        resolved = slow.lifetime_ns >= MIN_LIFETIME_RATIO * fast.lifetime_ns
        if significant and resolved and bi.converged:
            return (ON_FLAKE, slow.lifetime_ns, slow.lifetime_sigma, fast.lifetime_ns,
                    fast.lifetime_sigma, slow.amplitude, fast.amplitude, bi.goodness)
        mono = fit_decay(h, FitModelSpec(1, irf=irf))
    except PreconditionError:
        return empty
    c = mono.components[0]
    return (OFF_FLAKE, c.lifetime_ns, c.lifetime_sigma, np.nan, np.nan,
            c.amplitude, np.nan, mono.goodness)


def _fit_rows(args):
    counts, rows, grid, gate, irf, min_counts = args
    return [[fit_pixel(counts[i, c].astype(np.int64), grid, gate, irf, min_counts)
             for c in range(counts.shape[1])] for i in range(len(rows))]


def fit_flim_cube(cube: FlimCube, gate: GateSpec = GateSpec(), irf: IrfSpec = IrfSpec(),
                  min_counts: int = 100, workers: int = 1) -> LifetimeMap:
    """Fit every pixel of ``cube``.

    Pixels below ``min_counts`` are low-signal. Others get a two-component
    fit; if the fast amplitude is below two standard errors (or the two
    lifetimes are within a factor ``MIN_LIFETIME_RATIO``) the pixel is
    refitted with one component and classed off-flake, otherwise on-flake.
    The gate's tail rule trims the fit window. Row blocks are fitted
    independently, so results do not depend on ``workers``.
    """
    if min_counts < 100:
        raise PreconditionError("min_counts must be >= 100")
    if cube.counts.shape != (cube.height_px, cube.width_px, cube.grid.n_bins):
        raise DataFormatError("cube counts do not match its header")
    h, w = cube.height_px, cube.width_px
    n_jobs = max(1, int(workers))
    blocks = [list(range(h))[i::n_jobs] for i in range(n_jobs)]
    blocks = [b for b in blocks if b]
    jobs = [(cube.counts[b], b, cube.grid, gate, irf, min_counts) for b in blocks]
    if n_jobs == 1:
        results = list(map(_fit_rows, jobs))
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_fit_rows, jobs))
    table = np.full((h, w, 1 + len(_FIELDS)), np.nan)
    for rows, block in zip(blocks, results):
        table[rows] = np.array(block, dtype=float)
    return LifetimeMap(
        cls=table[..., 0].astype(np.int8),
        **{name: table[..., i + 1] for i, name in enumerate(_FIELDS)},
        counts=cube.totals(),
        pixel_size_nm=cube.pixel_size_nm,
        grid=cube.grid,
        irf=irf,
        gate=gate,
    )


def _erf_step(s, lo, hi, center, sigma):
    return lo + (hi - lo) * ndtr((s - center) / sigma)


def _sample_line(m: LifetimeMap, start, end, halfwidth_px):
    """Transversely averaged tau_slow, majority class and contributing pixels
    at unit steps along the line."""
    p0 = np.asarray(start, dtype=float)
    p1 = np.asarray(end, dtype=float)
    length = float(np.hypot(*(p1 - p0)))
    if length < 1:
        raise PreconditionError("line must be at least one pixel long")
    direction = (p1 - p0) / length
    normal = np.array([-direction[1], direction[0]])
    steps = np.arange(int(np.floor(length)) + 1)
    h, w = m.shape
    taus, classes, pixels = [], [], []
    for k in steps:
        vals, cls, px = [], [], []
        for j in range(-halfwidth_px, halfwidth_px + 1):
            x, y = p0 + k * direction + j * normal
            col, row = int(np.floor(x)), int(np.floor(y))
            if 0 <= row < h and 0 <= col < w:
                cls.append(int(m.cls[row, col]))
                if m.cls[row, col] != LOW_SIGNAL and np.isfinite(m.tau_slow[row, col]):
                    vals.append(m.tau_slow[row, col])
                    px.append((row, col))
        taus.append(np.mean(vals) if vals else np.nan)
        signal = [c for c in cls if c != LOW_SIGNAL]
        classes.append(max(set(signal), key=signal.count) if signal else LOW_SIGNAL)
        pixels.append(px)
    return steps.astype(float), np.array(taus), np.array(classes), pixels


def mixing_shape(off_decay, on_decay, grid: TimeGrid, irf: IrfSpec, gate: GateSpec,
                 counts: float = 1e4, n: int = 41) -> PchipInterpolator:
    """Normalized tau_slow of pixels mixing two decays.

    ``off_decay`` and ``on_decay`` are sequences of (amplitude, lifetime)
    pairs. Returns ``u(g)`` with ``u(0) = 0`` and ``u(1) = 1``, where ``g`` is
    the on-flake photon fraction and ``u`` the fraction of the way the fitted
    slow lifetime has moved from its off-flake to its on-flake value. The
    slow lifetime of a mixture is dominated by the longer-lived side, so
    ``u`` is far from linear.
    """
    def render(decay):
        v = sum(irf_convolve(exponential_curve(grid, tau, a), irf).values for a, tau in decay)
        return v / v.sum()

    off, on = render(off_decay), render(on_decay)
    fractions = np.linspace(0.0, 1.0, n)
    taus = []
    for g in fractions:
        v = ((1.0 - g) * off + g * on) * counts
        start, stop = _fit_window(v, grid, gate)
        fit = fit_curve(DecayCurve(grid.sub(start, stop), v[start:stop]), FitModelSpec(2, irf=irf))
        taus.append(fit.components[1].lifetime_ns)
    taus = np.array(taus)
    u = (taus - taus[0]) / (taus[-1] - taus[0])
    if np.any(np.diff(u) <= 0):
        raise NumericalError("mixed-pixel slow lifetime is not monotone in the on-flake fraction")
    return PchipInterpolator(fractions, u)


def _plateau_decay(m: LifetimeMap, pixels, two_component: bool):
    rows, cols = np.array(pixels).T
    decay = [(np.nanmean(m.amp_slow[rows, cols]), np.nanmean(m.tau_slow[rows, cols]))]
    if two_component:
        decay.append((np.nanmean(m.amp_fast[rows, cols]), np.nanmean(m.tau_fast[rows, cols])))
    if not np.all(np.isfinite(decay)):
        raise PreconditionError("plateau pixels lack the amplitudes needed for the mixing model")
    return decay


def edge_profile(m: LifetimeMap, start, end, halfwidth_px: int = 1) -> EdgeProfileResult:
    """Fit an error-function step to tau_slow along the line ``start -> end``.

    ``start`` and ``end`` are (x, y) = (col, row) points in pixel units
    (pixel centres sit at half-integers). Returns the edge position along
    the line and the FWHM of the Gaussian blur, both in nm.

    A pixel part-way across the edge is a photon mixture of both sides, and
    its fitted slow lifetime is not linear in the mixing fraction. When the
    map carries its fit context (grid, IRF, gate) the step is therefore
    passed through the mixing curve computed by :func:`mixing_shape` from
    the plateau fits on either side; otherwise a plain error-function step
    is fitted.
    """
    s, tau, cls, pixels = _sample_line(m, start, end, halfwidth_px)
    n_off = int(np.sum(cls == OFF_FLAKE))
    n_on = int(np.sum(cls == ON_FLAKE))
    if n_off == 0 or n_on == 0:
        raise PreconditionError("line does not cross between off-flake and on-flake pixels")
    if n_off < 8 or n_on < 8:
        raise PreconditionError(
            f"need >= 8 samples on each side of the edge, got {n_off} off / {n_on} on"
        )
    ok = np.isfinite(tau)
    s, tau, cls = s[ok], tau[ok], cls[ok]
    pixels = [px for px, keep in zip(pixels, ok) if keep]
    # sample k sits k pixels along the line from ``start``
    lo0 = float(np.median(tau[:4]))
    hi0 = float(np.median(tau[-4:]))
    switch = np.nonzero(np.diff(cls.astype(int)) != 0)[0]
    c0 = float(s[switch[len(switch) // 2]] + 0.5) if switch.size else float(np.median(s))
    bounds = ([-np.inf, -np.inf, s[0], 1e-3], [np.inf, np.inf, s[-1], s[-1] - s[0]])
    res = least_squares(lambda q: _erf_step(s, *q) - tau, np.array([lo0, hi0, c0, 2.0]),
                        bounds=bounds)
    if not res.success:
        raise NumericalError(f"edge fit failed: {res.message}")

    if m.grid is not None and m.irf is not None:
        center, sigma = res.x[2], abs(res.x[3])
        on_first = np.sum(cls[: cls.size // 2] == ON_FLAKE) > np.sum(cls[cls.size // 2:] == ON_FLAKE)
        far = np.abs(s - center) > 3.0 * sigma + 1.0
        before, after = far & (s < center), far & (s > center)
        if before.sum() < 2 or after.sum() < 2:
            before, after = s <= s[3], s >= s[-4]
        side_on, side_off = (before, after) if on_first else (after, before)
        on_px = [px for k in np.nonzero(side_on)[0] for px in pixels[k]]
        off_px = [px for k in np.nonzero(side_off)[0] for px in pixels[k]]
        shape = mixing_shape(_plateau_decay(m, off_px, False), _plateau_decay(m, on_px, True),
                             m.grid, m.irf, m.gate or GateSpec(),
                             counts=float(np.median(m.counts[m.cls != LOW_SIGNAL])))
        sign = -1.0 if on_first else 1.0

        def step(q):
            off_tau, on_tau, c, sg = q
            return off_tau + (on_tau - off_tau) * shape(ndtr(sign * (s - c) / sg))

        x0 = [res.x[1], res.x[0]] if on_first else [res.x[0], res.x[1]]
        res = least_squares(lambda q: step(q) - tau, np.array(x0 + [center, sigma]),
                            bounds=bounds)
        if not res.success:
            raise NumericalError(f"edge fit failed: {res.message}")
        off_tau, on_tau = res.x[:2]
        lo, hi = (on_tau, off_tau) if on_first else (off_tau, on_tau)
    else:
        lo, hi = res.x[:2]
    dof = max(s.size - 4, 1)
    resid_var = float(res.fun @ res.fun) / dof
    try:
        cov = np.linalg.inv(res.jac.T @ res.jac) * resid_var
        sd = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        sd = np.full(4, np.nan)
    center, sigma = res.x[2], res.x[3]
    px = m.pixel_size_nm
    return EdgeProfileResult(
        edge_position_nm=float(center * px),
        edge_position_sigma=float(sd[2] * px),
        psf_fwhm_nm=float(abs(sigma) * FWHM_PER_SIGMA * px),
        psf_fwhm_sigma=float(sd[3] * FWHM_PER_SIGMA * px),
        plateau_start_ns=float(lo),
        plateau_end_ns=float(hi),
        residual_norm=float(np.sqrt(res.fun @ res.fun)),
        positions_nm=s * px,
        tau_ns=tau,
        fit_ns=tau + res.fun,
    )


def photon_budget(count_rate_cps: float, min_photons: int = 1000) -> float:
    """Per-pixel dwell time in seconds needed to collect ``min_photons``."""
    if not count_rate_cps > 0:
        raise DomainError("count rate must be > 0")
    if not min_photons > 0:
        raise DomainError("min_photons must be > 0")
    return min_photons / count_rate_cps


def photon_ladder(max_photons: float = 1e7):
    """10, 20, 50, 100, 200, ... up to ``max_photons``."""
    out, decade = [], 10
    while decade <= max_photons:
        for m in (1, 2, 5):
            if m * decade <= max_photons:
                out.append(m * decade)
        decade *= 10
    return out


def empirical_min_photons(tau_true_ns: float = 12.0, target_rel_error: float = 0.1, seed: int = 0,
                          irf: IrfSpec = IrfSpec(), grid: TimeGrid | None = None,
                          trials: int = 200, max_photons: float = 1e7) -> int:
    """Smallest rung of the 1-2-5 photon ladder at which the relative
    standard deviation of fitted lifetimes over ``trials`` histograms is at
    most ``target_rel_error``.

    Each trial holds exactly N photons of a mono-exponential decay blurred
    by ``irf``; the fit frees amplitude and lifetime (t0 and background
    known). Rungs where the fit precondition rejects the data are skipped.
    """
    if not 0 < target_rel_error < 1:
        raise PreconditionError("target_rel_error must be in (0, 1)")
    grid = grid or TimeGrid()
    model = irf_convolve(exponential_curve(grid, tau_true_ns), irf)
    spec = FitModelSpec(1, irf=irf, t0_ns=0.0, frozen={"t0", "background"})
    root = np.random.SeedSequence(seed)
    for n in photon_ladder(max_photons):
        streams = root.spawn(trials)
        taus = []
        try:
            for ss in streams:
                h = sample_fixed_total(model, n, ss)
                taus.append(fit_decay(h, spec).components[0].lifetime_ns)
        except PreconditionError:
            continue
        taus = np.array(taus)
        if np.std(taus, ddof=1) / tau_true_ns <= target_rel_error:
            return n
    raise NumericalError(
        f"target relative error {target_rel_error} not reached within {max_photons:g} photons"
    )
