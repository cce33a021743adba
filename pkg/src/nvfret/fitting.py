"""Lifetime fitting of TCSPC histograms.

Models are sums of one or two exponentials, optionally convolved with a
Gaussian IRF in closed form, plus a flat background. The minimizer is a
Levenberg-Marquardt iteration on one of three objectives:

``poisson-mle``
    Poisson deviance; the default for photon counts.
``weighted-least-squares``
    chi-square with Neyman weights ``1 / max(y, 1)``.
``relative-least-squares``
    Gamma-variance quasi-likelihood (residuals relative to the model). Its
    noise-free limit is a fit in log space; used for effective lifetimes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.special import erfc, erfcx

from nvfret.errors import GatingError, PreconditionError
from nvfret.grid import DecayCurve, IrfSpec, TcspcHistogram

OBJECTIVES = ("poisson-mle", "weighted-least-squares", "relative-least-squares")
LOG_TAU_MIN = np.log(1e-3)  # 1 ps
LOG_TAU_MAX = np.log(1e3)  # 1 us
_M_FLOOR = 1e-10
_SQRT2 = np.sqrt(2.0)
_SQRT2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class ExpComponent:
    amplitude: float
    lifetime_ns: float

    def __post_init__(self):
        if not self.lifetime_ns > 0:
            raise PreconditionError("lifetime_ns must be > 0")
        if self.amplitude < 0:
            raise PreconditionError("amplitude must be >= 0")


@dataclass(frozen=True)
class FitModelSpec:
    """What to fit.

    ``components`` are initial guesses; pass ``None`` to derive them from
    the data. ``irf=None`` fits plain exponentials (no convolution, no
    Heaviside step), suitable for gated tails. ``frozen`` names parameters
    held fixed: ``"t0"``, ``"background"``, ``"amplitude0"``, ``"lifetime1"``...
    """

    n_components: int = 1
    components: tuple | None = None
    irf: IrfSpec | None = field(default_factory=IrfSpec)
    background: float = 0.0
    t0_ns: float | None = None
    frozen: frozenset = frozenset()
    objective: str = "poisson-mle"
    max_iter: int = 500

    def __post_init__(self):
        if self.n_components not in (1, 2):
            raise PreconditionError("only 1 or 2 exponential components are supported")
        if self.components is not None and len(self.components) != self.n_components:
            raise PreconditionError("number of initial components does not match n_components")
        if self.objective not in OBJECTIVES:
            raise PreconditionError(f"objective must be one of {OBJECTIVES}")
        if self.background < 0:
            raise PreconditionError("background must be >= 0")
        object.__setattr__(self, "frozen", frozenset(self.frozen))


@dataclass(frozen=True)
class FittedComponent:
    amplitude: float
    amplitude_sigma: float
    lifetime_ns: float
    lifetime_sigma: float


@dataclass(frozen=True)
class FitResult:
    components: tuple
    background: float
    background_sigma: float
    t0_ns: float
    t0_sigma: float
    objective: str
    objective_value: float
    goodness: float  # reduced chi2 (WLS) or deviance / dof otherwise
    dof: int
    n_iter: int
    converged: bool
    covariance: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def lifetimes(self) -> tuple:
        return tuple(c.lifetime_ns for c in self.components)


@dataclass(frozen=True)
class GateSpec:
    """Head cut after the histogram peak and relative tail threshold."""

    head_cut_ns: float = 3.0
    tail_threshold_fraction: float = 0.01

    def __post_init__(self):
        if self.head_cut_ns < 0:
            raise PreconditionError("head_cut_ns must be >= 0")
        if not 0 < self.tail_threshold_fraction < 1:
            raise PreconditionError("tail_threshold_fraction must be in (0, 1)")


@dataclass(frozen=True)
class EffectiveLifetime:
    tau_ns: float
    sigma_ns: float
    fit: FitResult


# --------------------------------------------------------------------------
# model


def _shape(u, tau, sigma):
    """Unit-peak exponential convolved with a unit-area Gaussian, and the
    Gaussian itself, at time offsets ``u``."""
    x = sigma / (_SQRT2 * tau) - u / (_SQRT2 * sigma)
    gauss = np.exp(-0.5 * (u / sigma) ** 2)
    xp = np.where(x > 0, x, 0.0)
    xn = np.where(x > 0, 0.0, x)
    with np.errstate(over="ignore", under="ignore"):
        g = np.where(
            x > 0,
            0.5 * erfcx(xp) * gauss,
            0.5 * np.exp(0.5 * (sigma / tau) ** 2 - u / tau) * erfc(xn),
        )
    return g, gauss / (sigma * _SQRT2PI)


def exp_gauss_model(t, c: ExpComponent, irf: IrfSpec | None, t0: float = 0.0):
    """Exponential with peak amplitude ``c.amplitude`` starting at ``t0``,
    convolved with the Gaussian ``irf`` (centre offset included).

    With ``irf=None`` returns the bare exponential without the step.
    """
    t = np.asarray(t, dtype=float)
    if irf is None:
        return c.amplitude * np.exp(-(t - t0) / c.lifetime_ns)
    g, _ = _shape(t - t0 - irf.center_ns, c.lifetime_ns, irf.sigma_ns)
    return c.amplitude * g


def exp_gauss_jacobian(t, c: ExpComponent, irf: IrfSpec, t0: float = 0.0):
    """Partial derivatives of :func:`exp_gauss_model` with respect to
    (amplitude, lifetime, t0); shape ``(len(t), 3)``."""
    t = np.asarray(t, dtype=float)
    a, tau, sigma = c.amplitude, c.lifetime_ns, irf.sigma_ns
    u = t - t0 - irf.center_ns
    g, gauss = _shape(u, tau, sigma)
    d_a = g
    d_tau = a * (u * g - sigma**2 * g / tau + sigma**2 * gauss) / tau**2
    d_t0 = -a * (gauss - g / tau)
    return np.stack([d_a, d_tau, d_t0], axis=-1)


class _Model:
    """Parameter vector layout: [a_k, log tau_k]*n, t0, background."""

    def __init__(self, t, n, irf):
        self.t, self.n, self.irf = t, n, irf
        self.size = 2 * n + 2

    def names(self):
        out = []
        for k in range(self.n):
            out += [f"amplitude{k}", f"lifetime{k}"]
        return out + ["t0", "background"]

    def evaluate(self, theta, jac=True):
        t, n = self.t, self.n
        t0, bg = theta[2 * n], theta[2 * n + 1]
        m = np.full(t.shape, bg)
        J = np.zeros((t.size, self.size)) if jac else None
        for k in range(n):
            a, tau = theta[2 * k], np.exp(theta[2 * k + 1])
            if self.irf is None:
                g = np.exp(-(t - t0) / tau)
                m += a * g
                if jac:
                    J[:, 2 * k] = g
                    J[:, 2 * k + 1] = a * g * (t - t0) / tau
                    J[:, 2 * n] += a * g / tau
            else:
                u = t - t0 - self.irf.center_ns
                sigma = self.irf.sigma_ns
                g, gauss = _shape(u, tau, sigma)
                m += a * g
                if jac:
                    J[:, 2 * k] = g
                    # d/d(log tau) = tau * d/d tau
                    J[:, 2 * k + 1] = a * (u * g - sigma**2 * g / tau + sigma**2 * gauss) / tau
                    J[:, 2 * n] += -a * (gauss - g / tau)
        if jac:
            J[:, 2 * n + 1] = 1.0
        return m, J


def _objective(y, m, J, kind):
    """Objective value, gradient and Gauss-Newton (Fisher) curvature."""
    mm = np.maximum(m, _M_FLOOR)
    if kind == "poisson-mle":
        with np.errstate(divide="ignore", invalid="ignore"):
            ylog = np.where(y > 0, y * np.log(y / mm), 0.0)
        f = 2.0 * np.sum(mm - y + ylog)
        if J is None:
            return f, None, None
        r = 1.0 - y / mm
        w = 1.0 / mm
    elif kind == "weighted-least-squares":
        wy = 1.0 / np.maximum(y, 1.0)
        f = float(np.sum(wy * (y - m) ** 2))
        if J is None:
            return f, None, None
        r = -wy * (y - m)
        w = wy
    else:
        f = 2.0 * np.sum(y / mm + np.log(mm))
        if J is None:
            return f, None, None
        r = (mm - y) / mm**2
        w = 1.0 / mm**2
    grad = 2.0 * J.T @ r
    hess = 2.0 * (J * w[:, None]).T @ J
    return f, grad, hess


def _project(theta, n):
    theta = theta.copy()
    for k in range(n):
        theta[2 * k] = max(theta[2 * k], 0.0)
        theta[2 * k + 1] = min(max(theta[2 * k + 1], LOG_TAU_MIN), LOG_TAU_MAX)
    theta[2 * n + 1] = max(theta[2 * n + 1], 0.0)
    return theta


def _at_bound(theta, n):
    out = np.zeros(theta.size, dtype=bool)
    for k in range(n):
        out[2 * k] = theta[2 * k] <= 0.0
        out[2 * k + 1] = theta[2 * k + 1] <= LOG_TAU_MIN or theta[2 * k + 1] >= LOG_TAU_MAX
    out[2 * n + 1] = theta[2 * n + 1] <= 0.0
    return out


def _outward(theta, n):
    """Sign of the direction that leaves the feasible set at an active bound."""
    out = np.zeros(theta.size)
    for k in range(n):
        out[2 * k] = -1.0
        out[2 * k + 1] = -1.0 if theta[2 * k + 1] <= LOG_TAU_MIN else 1.0
    out[2 * n + 1] = -1.0
    return out


def _levenberg_marquardt(model, y, theta, free, kind, max_iter):
    theta = _project(theta, model.n)
    m, J = model.evaluate(theta)
    f, g, H = _objective(y, m, J, kind)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # parameters pinned at a bound that descent would push further out are
        # held for this step; projecting them back each time stalls the others
        held = _at_bound(theta, model.n) & (-g * _outward(theta, model.n) > 0)
        step_free = free & ~held
        if not step_free.any():
            converged = True
            break
        gf = g[step_free]
        Hf = H[np.ix_(step_free, step_free)]
        diag = np.diag(Hf).copy()
        diag[diag <= 0] = 1.0
        improved = False
        while lam < 1e16:
            A = Hf + lam * np.diag(diag)
            try:
                step = np.linalg.solve(A, -gf)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = theta.copy()
            trial[step_free] += step
            trial = _project(trial, model.n)
            m_t, _ = model.evaluate(trial, jac=False)
            f_t, _, _ = _objective(y, m_t, None, kind)
            if np.isfinite(f_t) and f_t <= f:
                improved = True
                break
            lam *= 10.0
        if not improved:
            # no descent direction left: at a (constrained) minimum
            converged = True
            break
        d_f = f - f_t
        theta = trial
        m, J = model.evaluate(theta)
        f, g, H = _objective(y, m, J, kind)
        lam = max(lam / 10.0, 1e-12)
        # convergence judged on the undamped Gauss-Newton step, not the damped
        # one: tiny damped steps are not evidence of a minimum
        # solved on the parameters not held at a bound, since a pinned
        # parameter's coupling would otherwise leak into the others
        held = _at_bound(theta, model.n) & (-g * _outward(theta, model.n) > 0)
        active = free & ~held
        if not active.any():
            converged = True
            break
        gf = g[active]
        try:
            gn = np.linalg.lstsq(H[np.ix_(active, active)], -gf, rcond=None)[0]
        except np.linalg.LinAlgError:
            gn = np.full(gf.shape, np.inf)
        scale = np.abs(theta[active]) + 1e-3
        decrement = -0.5 * float(gf @ gn)
        if np.all(np.abs(gn) <= 1e-8 * scale) or (0 <= decrement <= 1e-10 * max(abs(f), 1.0)
                                                  and d_f <= 1e-10 * max(abs(f), 1.0)):
            converged = True
            break
    return theta, f, m, J, it, converged


# --------------------------------------------------------------------------
# initial guesses


def peak_index(values, t, smooth=True) -> int:
    """Index of the decay peak.

    For noisy counts the raw maximum of a slow decay can sit anywhere on
    its flat top; instead take the half-maximum crossing of the smoothed
    rising edge and the smoothed maximum within 1 ns after it.
    """
    values = np.asarray(values, dtype=float)
    if not smooth:
        return int(np.argmax(values))
    sm = uniform_filter1d(values, 5, mode="nearest")
    edge = int(np.argmax(sm >= 0.5 * sm.max()))
    dt = t[1] - t[0]
    stop = min(values.size, edge + max(2, int(np.ceil(1.0 / dt))) + 1)
    return edge + int(np.argmax(sm[edge:stop]))


def rise_time(values, t) -> float:
    """Half-maximum crossing of the smoothed rising edge."""
    sm = uniform_filter1d(np.asarray(values, dtype=float), 5, mode="nearest")
    i = int(np.argmax(sm >= 0.5 * sm.max()))
    if i == 0:
        return float(t[0])
    frac = (0.5 * sm.max() - sm[i - 1]) / (sm[i] - sm[i - 1])
    return float(t[i - 1] + frac * (t[i] - t[i - 1]))


def _loglin(t, y):
    """(log amplitude at t[0], lifetime) from a weighted log-linear fit."""
    ok = y > 0
    if ok.sum() < 2:
        return None
    tt, yy = t[ok], y[ok]
    slope, icpt = np.polyfit(tt - tt[0], np.log(yy), 1, w=np.sqrt(yy))
    if not slope < 0:
        return None
    return icpt, -1.0 / slope


def initial_guess(t, y, n_components, irf):
    """Deterministic starting point: t0 at the rising edge, lifetimes from
    log-linear fits on early and late sub-ranges, amplitudes from the peak."""
    ip = peak_index(y, t)
    t_peak = t[ip]
    peak = max(float(y[ip]), 1.0)
    sigma = irf.sigma_ns if irf is not None else 0.0
    t0 = rise_time(y, t) if irf is not None else t[0]
    tail = y[ip:]
    floor = max(0.02 * peak, 3.0) if peak > 150 else 0.02 * peak
    above = np.nonzero(tail >= floor)[0]
    end = ip + (int(above[-1]) + 1 if above.size else tail.size)
    span = t[end - 1] - t_peak
    bg = float(np.median(y[: max(ip - int(np.ceil(5 * sigma / max(t[1] - t[0], 1e-12))), 0)]))\
        if irf is not None and ip > 10 else 0.0
    bg = 0.0 if not np.isfinite(bg) else bg
    late_start = t_peak + max(2 * sigma, (0.5 if n_components == 1 else 0.4) * span)
    late = (t >= late_start) & (np.arange(t.size) < end)
    if late.sum() < 3:
        late = (t >= t_peak) & (np.arange(t.size) < end)
    fit = _loglin(t[late], y[late] - bg)
    tau_slow = fit[1] if fit is not None else max(span / 3, 0.1)
    tau_slow = float(np.clip(tau_slow, 2e-3, 5e2))
    amp_slow = np.exp(fit[0]) * np.exp((t[late][0] - t_peak) / tau_slow) if fit else peak
    if n_components == 1:
        return np.array([max(peak - bg, 1.0), np.log(tau_slow), t0, bg])
    amp_slow = float(min(amp_slow, peak))
    early = (t >= t_peak + sigma) & (t <= t_peak + sigma + max(0.2 * tau_slow, 4 * (t[1] - t[0])))
    resid = y[early] - bg - amp_slow * np.exp(-(t[early] - t_peak) / tau_slow)
    fit_f = _loglin(t[early], resid)
    tau_fast = fit_f[1] if fit_f is not None else 0.1 * tau_slow
    tau_fast = float(np.clip(tau_fast, 2e-3, 0.5 * tau_slow))
    amp_fast = max(peak - bg - amp_slow, 0.05 * peak)
    return np.array([amp_fast, np.log(tau_fast), amp_slow, np.log(tau_slow), t0, bg])


# --------------------------------------------------------------------------
# fitting


def _scaled_pinv(info):
    """Pseudo-inverse after symmetric diagonal scaling; the raw matrix can
    span many decades (e.g. a background pinned by empty pre-rise bins)."""
    d = np.sqrt(np.clip(np.diag(info), 1e-300, None))
    return np.linalg.pinv(info / np.outer(d, d)) / np.outer(d, d)


def _check_counts(y):
    if np.count_nonzero(y) < 10:
        raise PreconditionError("need at least 10 bins with non-zero counts")
    if y.sum() < 100:
        raise PreconditionError("need at least 100 counts in total")


def _fit_arrays(t, y, spec: FitModelSpec, noise_free=False) -> FitResult:
    n = spec.n_components
    model = _Model(t, n, spec.irf)
    theta = initial_guess(t, y, n, spec.irf)
    if spec.components is not None:
        for k, c in enumerate(spec.components):
            theta[2 * k] = c.amplitude
            theta[2 * k + 1] = np.log(c.lifetime_ns)
    if spec.t0_ns is not None:
        theta[2 * n] = spec.t0_ns
    if spec.irf is None:
        frozen = set(spec.frozen) | {"t0"}
        theta[2 * n] = spec.t0_ns if spec.t0_ns is not None else t[0]
    else:
        frozen = set(spec.frozen)
    if "background" in frozen or spec.background:
        theta[2 * n + 1] = spec.background
    names = model.names()
    unknown = frozen - set(names)
    if unknown:
        raise PreconditionError(f"unknown frozen parameters {sorted(unknown)}")
    free = np.array([nm not in frozen for nm in names])

    theta, f, m, J, n_iter, converged = _levenberg_marquardt(
        model, y, theta, free, spec.objective, spec.max_iter
    )

    cov = np.zeros((model.size, model.size))
    if not noise_free:
        mm = np.maximum(m, _M_FLOOR)
        Jf = J[:, free]
        if spec.objective == "poisson-mle":
            info = (Jf / mm[:, None]).T @ Jf
            inner = None
        elif spec.objective == "weighted-least-squares":
            info = (Jf / np.maximum(y, 1.0)[:, None]).T @ Jf
            inner = None
        else:
            info = (Jf / mm[:, None] ** 2).T @ Jf
            inner = (Jf / mm[:, None] ** 3).T @ Jf
        cf = _scaled_pinv(info)
        if inner is not None:
            cf = cf @ inner @ cf
        cov[np.ix_(free, free)] = cf
    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    comps = []
    for k in range(n):
        tau = float(np.exp(theta[2 * k + 1]))
        comps.append(FittedComponent(float(theta[2 * k]), float(sd[2 * k]), tau, tau * float(sd[2 * k + 1])))
    order = np.argsort([c.lifetime_ns for c in comps], kind="stable")
    comps = tuple(comps[i] for i in order)

    dof = max(int(y.size - free.sum()), 1)
    if spec.objective == "weighted-least-squares":
        goodness = f / dof
    else:
        dev, _, _ = _objective(y, m, None, "poisson-mle")
        goodness = dev / dof
    return FitResult(
        components=comps,
        background=float(theta[2 * n + 1]),
        background_sigma=float(sd[2 * n + 1]),
        t0_ns=float(theta[2 * n]),
        t0_sigma=float(sd[2 * n]),
        objective=spec.objective,
        objective_value=float(f),
        goodness=float(goodness),
        dof=dof,
        n_iter=n_iter,
        converged=bool(converged),
        covariance=cov,
    )


def fit_decay(h: TcspcHistogram, spec: FitModelSpec = FitModelSpec()) -> FitResult:
    """Fit a 1- or 2-component decay to a photon histogram.

    Two-component results are sorted by ascending lifetime. Non-convergence
    is reported through ``converged=False``.
    """
    y = h.counts.astype(float)
    _check_counts(y)
    if spec.objective == "relative-least-squares" and np.any(y == 0):
        # each empty bin rewards driving the model to zero there
        raise PreconditionError("relative-least-squares needs non-zero counts in every bin; "
                                "gate the histogram first")
    return _fit_arrays(h.times_ns(), y, spec)


def fit_curve(curve: DecayCurve, spec: FitModelSpec) -> FitResult:
    """Fit a noise-free model curve; uncertainties are reported as zero."""
    y = curve.values.astype(float)
    if np.count_nonzero(y) < 10:
        raise PreconditionError("need at least 10 non-zero samples")
    # Poisson/WLS objectives depend on scale; pin it so results are reproducible
    y = y * (1e6 / y.sum())
    return _fit_arrays(curve.times_ns(), y, spec, noise_free=True)


# --------------------------------------------------------------------------
# gating and effective lifetime


def _gate_range(values, t, g: GateSpec, smooth=False):
    ip = peak_index(values, t, smooth)
    start_t = t[ip] + g.head_cut_ns
    idx = np.nonzero(t >= start_t - 1e-9)[0]
    if idx.size == 0:
        raise GatingError("head cut removes every bin")
    start = int(idx[0])
    threshold = g.tail_threshold_fraction * values[start]
    if not threshold > 0:
        raise GatingError("no signal at the start of the gated range")
    tail = np.asarray(values[start:], dtype=float)
    if smooth:
        # average enough bins that the threshold level holds ~400 counts, so
        # isolated Poisson excursions cannot extend the range
        width = int(min(max(1, np.ceil(400.0 / threshold)), tail.size)) | 1
        tail = uniform_filter1d(tail, width, mode="nearest")
    keep = np.nonzero(tail >= threshold)[0]
    if keep.size == 0:
        raise GatingError("no bins above the tail threshold")
    stop = start + int(keep[-1]) + 1
    if stop - start < 2:
        raise GatingError("fewer than two bins survive gating")
    return start, stop


def gate_histogram(h: TcspcHistogram, g: GateSpec = GateSpec()) -> TcspcHistogram:
    """Keep bins from ``peak + head_cut`` to the last bin whose count is at
    least ``tail_threshold_fraction`` of the count at the start of that range.

    The tail test runs on a moving average of the counts (width chosen so
    the threshold level spans ~400 photons); noise-free curves are not smoothed.
    """
    if h.counts.max(initial=0) < 10:
        raise PreconditionError("histogram has no identifiable peak (max count < 10)")
    start, stop = _gate_range(h.counts, h.times_ns(), g, smooth=True)
    return TcspcHistogram(h.grid.sub(start, stop), h.counts[start:stop])


def gate_curve(curve: DecayCurve, g: GateSpec = GateSpec()) -> DecayCurve:
    if not curve.values.max(initial=0) > 0:
        raise GatingError("curve is identically zero")
    start, stop = _gate_range(curve.values, curve.times_ns(), g)
    return DecayCurve(curve.grid.sub(start, stop), curve.values[start:stop])


def _tau_eff_spec(irf, objective):
    if irf is None:
        return FitModelSpec(1, irf=None, objective=objective, frozen={"background"})
    return FitModelSpec(1, irf=irf, objective=objective, frozen={"background"})


def effective_lifetime(h: TcspcHistogram, g: GateSpec = GateSpec(), irf: IrfSpec | None = None,
                       objective: str = "relative-least-squares") -> EffectiveLifetime:
    """Mono-exponential lifetime of the gated histogram.

    By default a plain exponential (no IRF) is fitted with residuals
    relative to the model, so the whole gated range weighs in evenly as on
    a semilog plot. Pass ``irf`` to convolve the model.
    """
    gated = gate_histogram(h, g)
    y = gated.counts.astype(float)
    _check_counts(y)
    res = _fit_arrays(gated.times_ns(), y, _tau_eff_spec(irf, objective))
    c = res.components[0]
    return EffectiveLifetime(c.lifetime_ns, c.lifetime_sigma, res)


def curve_effective_lifetime(curve: DecayCurve, g: GateSpec = GateSpec(), irf: IrfSpec | None = None,
                             objective: str = "relative-least-squares") -> float:
    """Noise-free counterpart of :func:`effective_lifetime`."""
    gated = gate_curve(curve, g)
    return fit_curve(gated, _tau_eff_spec(irf, objective)).components[0].lifetime_ns
