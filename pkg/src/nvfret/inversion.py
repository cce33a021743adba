"""Calibration curve tau_eff(R) and its inversion to a Foerster radius."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from nvfret.errors import DataFormatError, NumericalError, PreconditionError, RangeError
from nvfret.fitting import GateSpec, curve_effective_lifetime
from nvfret.grid import IrfSpec, TimeGrid
from nvfret.model import DepthDistribution, ModelParams
from nvfret.simulate import ensemble_decay, irf_convolve

# Below this radius the ensemble decay is strongly multi-exponential and a
# single effective lifetime is not a meaningful observable.
MIN_CALIBRATED_RADIUS_NM = 5.0


@dataclass
class RadiusCurve:
    r_nm: np.ndarray
    tau_eff_ns: np.ndarray
    params: ModelParams | None = None
    depth: DepthDistribution | None = None
    gate: GateSpec | None = None
    grid: TimeGrid | None = None
    irf: IrfSpec | None = None
    _interp: PchipInterpolator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.r_nm = np.asarray(self.r_nm, dtype=float)
        self.tau_eff_ns = np.asarray(self.tau_eff_ns, dtype=float)
        if self.r_nm.shape != self.tau_eff_ns.shape or self.r_nm.size < 2:
            raise PreconditionError("radius curve needs >= 2 matching (R, tau) pairs")
        if np.any(np.diff(self.r_nm) <= 0):
            raise PreconditionError("R grid must be strictly increasing")
        bad = np.nonzero(np.diff(self.tau_eff_ns) >= 0)[0]
        if bad.size:
            raise NumericalError(
                f"tau_eff is not strictly decreasing between grid indices "
                f"{[(int(i), int(i) + 1) for i in bad]}"
            )

    @property
    def tau_range(self) -> tuple[float, float]:
        return float(self.tau_eff_ns.min()), float(self.tau_eff_ns.max())

    def inverse(self) -> PchipInterpolator:
        """Monotone cubic R(tau_eff) on ascending tau."""
        if self._interp is None:
            self._interp = PchipInterpolator(self.tau_eff_ns[::-1], self.r_nm[::-1])
        return self._interp


@dataclass(frozen=True)
class RadiusEstimate:
    r_nm: float
    sigma_nm: float
    slope_nm_per_ns: float  # dR / d tau_eff at the estimate


def tau_eff_point(radius_nm: float, params: ModelParams, depth: DepthDistribution,
                  gate: GateSpec, grid: TimeGrid, irf: IrfSpec | None) -> float:
    """Effective lifetime of the noise-free ensemble decay at one radius."""
    curve = ensemble_decay(params.with_radius(radius_nm), depth, grid)
    if irf is not None:
        curve = irf_convolve(curve, irf)
    return curve_effective_lifetime(curve, gate)


def tau_eff_curve(r_min_nm: float = 5.0, r_max_nm: float = 30.0, n_points: int = 26,
                  params: ModelParams | None = None, depth: DepthDistribution | None = None,
                  gate: GateSpec | None = None, grid: TimeGrid | None = None,
                  irf: IrfSpec | None = IrfSpec()) -> RadiusCurve:
    """Sample tau_eff on a uniform R grid (simulate, optionally blur with the
    IRF, gate, fit a single exponential).

    Raises NumericalError naming the offending indices if the sampled curve
    is not strictly decreasing.
    """
    if not 0 < r_min_nm < r_max_nm:
        raise PreconditionError("need 0 < r_min < r_max")
    if r_min_nm < MIN_CALIBRATED_RADIUS_NM:
        raise RangeError(
            f"r_min {r_min_nm} nm is below the calibrated range "
            f"(>= {MIN_CALIBRATED_RADIUS_NM} nm)",
            (MIN_CALIBRATED_RADIUS_NM, np.inf),
        )
    if n_points < 2:
        raise PreconditionError("n_points must be >= 2")
    params = params or ModelParams()
    depth = depth or params.depth_distribution()
    gate = gate or GateSpec()
    grid = grid or TimeGrid()
    radii = np.linspace(r_min_nm, r_max_nm, n_points)
    taus = np.array([tau_eff_point(r, params, depth, gate, grid, irf) for r in radii])
    return RadiusCurve(radii, taus, params, depth, gate, grid, irf)


def invert_radius(tau_eff_ns: float, sigma_ns: float, curve: RadiusCurve) -> RadiusEstimate:
    """Radius whose calibrated tau_eff equals the measurement.

    The uncertainty is ``|dR/dtau| * sigma``. Values outside the curve's
    tau range raise RangeError carrying the admissible interval.
    """
    lo, hi = curve.tau_range
    if not lo <= tau_eff_ns <= hi:
        raise RangeError(
            f"tau_eff {tau_eff_ns:g} ns outside calibrated interval [{lo:.6g}, {hi:.6g}] ns",
            (lo, hi),
        )
    if sigma_ns < 0:
        raise PreconditionError("sigma must be >= 0")
    f = curve.inverse()
    r = float(f(tau_eff_ns))
    slope = float(f.derivative()(tau_eff_ns))
    return RadiusEstimate(r, abs(slope) * sigma_ns, slope)


def write_curve_csv(curve: RadiusCurve, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("r_nm,tau_eff_ns\n")
        for r, t in zip(curve.r_nm, curve.tau_eff_ns):
            fh.write(f"{r:.6g},{t:.6g}\n")


def read_curve_csv(path) -> RadiusCurve:
    try:
        fh = open(path)
    except OSError as exc:
        raise DataFormatError(f"cannot read curve {path}: {exc.strerror}") from None
    with fh:
        header = fh.readline().strip()
        if header != "r_nm,tau_eff_ns":
            raise DataFormatError(f"{path}: expected header 'r_nm,tau_eff_ns', got {header!r}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                r, t = (float(v) for v in line.split(","))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: malformed row {line.strip()!r}") from None
            rows.append((r, t))
    if len(rows) < 2:
        raise DataFormatError(f"{path}: need at least two rows")
    arr = np.array(rows)
    try:
        return RadiusCurve(arr[:, 0], arr[:, 1])
    except (PreconditionError, NumericalError) as exc:
        raise DataFormatError(f"{path}: {exc}") from None
