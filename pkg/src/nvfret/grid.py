"""Shared containers: time grid, decay curves, TCSPC histograms, FLIM cubes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from nvfret.errors import DataFormatError, PreconditionError

FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform TCSPC binning.

    Bin ``i`` spans ``[i * bin_width_ps, (i + 1) * bin_width_ps)`` on the
    detector axis; ``origin_ps`` is where the excitation pulse sits on that
    axis. Model times are bin centres relative to the origin, in ns.
    """

    bin_width_ps: float = 32.0
    n_bins: int = 4096
    origin_ps: float = 128 * 32.0
    repetition_period_ps: float | None = None

    def __post_init__(self):
        if not self.bin_width_ps > 0:
            raise PreconditionError("bin_width_ps must be > 0")
        if int(self.n_bins) != self.n_bins or self.n_bins < 2:
            raise PreconditionError("n_bins must be an integer >= 2")
        object.__setattr__(self, "n_bins", int(self.n_bins))
        if self.repetition_period_ps is not None and self.span_ps > self.repetition_period_ps:
            raise PreconditionError(
                f"grid span {self.span_ps} ps exceeds repetition period "
                f"{self.repetition_period_ps} ps"
            )

    @property
    def span_ps(self) -> float:
        return self.bin_width_ps * self.n_bins

    @property
    def bin_width_ns(self) -> float:
        return self.bin_width_ps * 1e-3

    def starts_ps(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_width_ps

    def times_ns(self) -> np.ndarray:
        """Bin centres relative to the excitation origin."""
        return ((np.arange(self.n_bins) + 0.5) * self.bin_width_ps - self.origin_ps) * 1e-3

    def sub(self, start: int, stop: int) -> "TimeGrid":
        """Grid of bins ``start:stop`` with times preserved."""
        if not 0 <= start < stop <= self.n_bins or stop - start < 2:
            raise PreconditionError(f"invalid sub-range [{start}, {stop})")
        return TimeGrid(self.bin_width_ps, stop - start, self.origin_ps - start * self.bin_width_ps)


@dataclass(frozen=True)
class IrfSpec:
    """Gaussian instrument response; ``center_ps`` is relative to the origin."""

    fwhm_ps: float = 326.0
    center_ps: float = 0.0

    def __post_init__(self):
        if not self.fwhm_ps > 0:
            raise PreconditionError("IRF fwhm_ps must be > 0")

    @property
    def sigma_ns(self) -> float:
        return self.fwhm_ps * 1e-3 / FWHM_PER_SIGMA

    @property
    def center_ns(self) -> float:
        return self.center_ps * 1e-3


@dataclass
class DecayCurve:
    """Deterministic intensity sampled at the bin centres of ``grid``.

    ``causal`` marks curves that are identically zero before the origin and
    jump there (un-convolved decays); convolution uses it to place the edge.
    """

    grid: TimeGrid
    values: np.ndarray
    causal: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_bins,):
            raise PreconditionError(
                f"curve has {self.values.shape} values for {self.grid.n_bins} bins"
            )
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise PreconditionError("decay curve values must be finite and >= 0")

    def times_ns(self) -> np.ndarray:
        return self.grid.times_ns()

    def area(self) -> float:
        """Midpoint-rule integral in (value x ns)."""
        return float(self.values.sum() * self.grid.bin_width_ns)


@dataclass
class TcspcHistogram:
    grid: TimeGrid
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.shape != (self.grid.n_bins,):
            raise DataFormatError(
                f"histogram has {counts.shape} counts for {self.grid.n_bins} bins"
            )
        if counts.dtype.kind == "f":
            if not np.all(np.isfinite(counts)) or np.any(counts != np.round(counts)):
                raise DataFormatError("histogram counts must be integers")
        elif counts.dtype.kind not in "iu":
            raise DataFormatError("histogram counts must be integers")
        if np.any(counts < 0):
            raise DataFormatError("histogram counts must be >= 0")
        self.counts = counts.astype(np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def times_ns(self) -> np.ndarray:
        return self.grid.times_ns()


@dataclass
class FlimCube:
    """Per-pixel TCSPC histograms, ``counts[row, col, bin]``."""

    width_px: int
    height_px: int
    grid: TimeGrid
    counts: np.ndarray
    pixel_size_nm: float = 100.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = (self.height_px, self.width_px, self.grid.n_bins)
        counts = np.asarray(self.counts)
        if counts.size != int(np.prod(expected)):
            raise DataFormatError(
                f"cube payload has {counts.size} values, header implies {expected}"
            )
        counts = counts.reshape(expected)
        if counts.dtype.kind not in "iu" or np.any(counts < 0):
            raise DataFormatError("cube counts must be non-negative integers")
        self.counts = counts.astype(np.uint32)
        if not self.pixel_size_nm > 0:
            raise DataFormatError("pixel_size_nm must be > 0")

    def pixel(self, row: int, col: int) -> TcspcHistogram:
        return TcspcHistogram(self.grid, self.counts[row, col].astype(np.int64))

    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=2, dtype=np.int64)
