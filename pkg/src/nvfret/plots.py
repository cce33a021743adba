"""SVG figures. Conveniences only; nothing reads them back."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from nvfret.fitting import ExpComponent, FitResult, exp_gauss_model  # noqa: E402
from nvfret.flim import LOW_SIGNAL, EdgeProfileResult, LifetimeMap  # noqa: E402
from nvfret.grid import IrfSpec, TcspcHistogram  # noqa: E402
from nvfret.inversion import RadiusCurve, RadiusEstimate  # noqa: E402

# fixed ids and no timestamp, so reruns give the same file
plt.rcParams["svg.hashsalt"] = "nvfret"


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def fitted_curve(fit: FitResult, t, irf: IrfSpec | None):
    y = np.full_like(np.asarray(t, dtype=float), fit.background)
    for c in fit.components:
        y = y + exp_gauss_model(t, ExpComponent(c.amplitude, c.lifetime_ns), irf, fit.t0_ns)
    return y


def plot_decay(h: TcspcHistogram, path, fit: FitResult | None = None,
               fit_times=None, irf: IrfSpec | None = None):
    """Semilog photon histogram with an optional fitted model on ``fit_times``."""
    t = h.times_ns()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(t, np.maximum(h.counts, 0.5), ".", ms=2, color="0.4", label="counts")
    if fit is not None:
        tf = t if fit_times is None else fit_times
        label = ", ".join(f"{c.lifetime_ns:.3g} ns" for c in fit.components)
        ax.semilogy(tf, fitted_curve(fit, tf, irf), "r-", lw=1.2, label=f"fit ({label})")
    ax.set_xlabel("time (ns)")
    ax.set_ylabel("counts per bin")
    ax.set_ylim(bottom=0.5)
    ax.legend()
    _save(fig, path)


def plot_radius_curve(curve: RadiusCurve, path, estimate: RadiusEstimate | None = None,
                      tau_ns: float | None = None):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(curve.r_nm, curve.tau_eff_ns, "k.-")
    if estimate is not None and tau_ns is not None:
        ax.errorbar([estimate.r_nm], [tau_ns], xerr=[estimate.sigma_nm], fmt="ro")
    ax.set_xlabel("Foerster radius R (nm)")
    ax.set_ylabel("effective lifetime (ns)")
    _save(fig, path)


def plot_lifetime_map(m: LifetimeMap, path):
    fig, ax = plt.subplots(figsize=(5, 4.5))
    tau = np.where(m.cls == LOW_SIGNAL, np.nan, m.tau_slow)
    px_um = m.pixel_size_nm * 1e-3
    h, w = m.shape
    im = ax.imshow(tau, origin="upper", extent=(0, w * px_um, h * px_um, 0), cmap="viridis")
    fig.colorbar(im, ax=ax, label="slow lifetime (ns)")
    ax.set_xlabel("x (um)")
    ax.set_ylabel("y (um)")
    _save(fig, path)


def plot_edge(e: EdgeProfileResult, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(e.positions_nm * 1e-3, e.tau_ns, "ko", ms=3)
    ax.plot(e.positions_nm * 1e-3, e.fit_ns, "r-", lw=1.2)
    ax.axvline(e.edge_position_nm * 1e-3, color="r", lw=0.8)
    ax.set_title(f"FWHM {e.psf_fwhm_nm:.0f} +/- {e.psf_fwhm_sigma:.0f} nm")
    ax.set_xlabel("position along line (um)")
    ax.set_ylabel("slow lifetime (ns)")
    _save(fig, path)
