"""Quenching model for a point donor at depth z below a 2D acceptor sheet.

The acceptor opens a non-radiative channel with rate
``gamma_rad * (R / z)**n``; lifetime, transfer efficiency and emitted
intensity all follow from the ratio ``x = (R / z)**n``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from nvfret.errors import DomainError, PreconditionError

ALLOWED_EXPONENTS = (4, 6)


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the donor/acceptor pair.

    ``distance_exponent`` is 4 for a donor coupled to an extended 2D sheet
    and 6 for a point-to-point dipole pair.
    """

    foerster_radius_nm: float = 13.0
    bulk_lifetime_ns: float = 12.0
    distance_exponent: int = 4
    depth_mean_nm: float = 6.5
    depth_sigma_nm: float = 2.7
    unquenched_intensity: float = 1.0

    def __post_init__(self):
        if not self.foerster_radius_nm >= 0:
            raise PreconditionError("foerster_radius_nm must be >= 0")
        if not self.bulk_lifetime_ns > 0:
            raise PreconditionError("bulk_lifetime_ns must be > 0")
        if self.distance_exponent not in ALLOWED_EXPONENTS:
            raise PreconditionError(
                f"distance_exponent must be one of {ALLOWED_EXPONENTS}, "
                f"got {self.distance_exponent!r}"
            )
        if not self.depth_mean_nm > 0:
            raise PreconditionError("depth_mean_nm must be > 0")
        if not self.depth_sigma_nm > 0:
            raise PreconditionError("depth_sigma_nm must be > 0")
        if not self.unquenched_intensity > 0:
            raise PreconditionError("unquenched_intensity must be > 0")

    @property
    def radiative_rate(self) -> float:
        """gamma_rad in 1/ns."""
        return 1.0 / self.bulk_lifetime_ns

    def with_radius(self, radius_nm: float) -> "ModelParams":
        return replace(self, foerster_radius_nm=radius_nm)

    def depth_distribution(self) -> "DepthDistribution":
        return DepthDistribution(self.depth_mean_nm, self.depth_sigma_nm)


@dataclass(frozen=True)
class DepthDistribution:
    """Gaussian depth profile truncated to ``[z_min_nm, z_max_nm]``.

    The default window is ``[max(0.5, mean - 4 sigma), mean + 4 sigma]``.
    """

    mean_nm: float = 6.5
    sigma_nm: float = 2.7
    z_min_nm: float | None = None
    z_max_nm: float | None = None

    def __post_init__(self):
        if not self.sigma_nm > 0:
            raise PreconditionError("sigma_nm must be > 0")
        if self.z_min_nm is None:
            object.__setattr__(self, "z_min_nm", max(0.5, self.mean_nm - 4 * self.sigma_nm))
        if self.z_max_nm is None:
            object.__setattr__(self, "z_max_nm", self.mean_nm + 4 * self.sigma_nm)
        if not 0 < self.z_min_nm < self.mean_nm < self.z_max_nm:
            raise PreconditionError(
                "depth window must satisfy 0 < z_min < mean < z_max, got "
                f"z_min={self.z_min_nm}, mean={self.mean_nm}, z_max={self.z_max_nm}"
            )

    @property
    def _norm(self) -> float:
        a = (self.z_min_nm - self.mean_nm) / self.sigma_nm
        b = (self.z_max_nm - self.mean_nm) / self.sigma_nm
        return float(ndtr(b) - ndtr(a))

    def nodes(self, n_nodes: int = 129) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes over the window and weights including D(z)."""
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        half = 0.5 * (self.z_max_nm - self.z_min_nm)
        z = half * x + 0.5 * (self.z_max_nm + self.z_min_nm)
        return z, w * half * depth_density(z, self)


def _check_depth(z):
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise DomainError("depth z must be > 0 (donor cannot sit on or above the surface)")
    return z


def _ratio(z, p: ModelParams):
    """(R / z)**n."""
    return (p.foerster_radius_nm / z) ** p.distance_exponent


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def nonradiative_rate(z, p: ModelParams):
    """FRET transfer rate in 1/ns at depth ``z`` (nm)."""
    z = _check_depth(z)
    return _out(p.radiative_rate * _ratio(z, p))


def quenched_lifetime(z, p: ModelParams):
    """Donor lifetime in ns at depth ``z``: ``tau_bulk / (1 + (R/z)**n)``."""
    z = _check_depth(z)
    return _out(p.bulk_lifetime_ns / (1.0 + _ratio(z, p)))


def fret_efficiency(z, p: ModelParams):
    """Fraction of donor excitations transferred to the acceptor."""
    z = _check_depth(z)
    x = _ratio(z, p)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        e = np.where(x <= 1.0, x / (1.0 + x), 1.0 / (1.0 + 1.0 / x))
    return _out(e)


def quenched_intensity(z, p: ModelParams):
    """Relative PL intensity ``I0 * gamma_rad / (gamma_rad + gamma_nr)``."""
    z = _check_depth(z)
    return _out(p.unquenched_intensity / (1.0 + _ratio(z, p)))


def depth_solving_lifetime(tau_ns: float, p: ModelParams) -> float:
    """Depth at which a single donor has lifetime ``tau_ns`` (closed form)."""
    if not 0 < tau_ns < p.bulk_lifetime_ns:
        raise DomainError(f"tau must lie in (0, {p.bulk_lifetime_ns}) ns")
    if p.foerster_radius_nm == 0:
        raise DomainError("no finite depth solves the lifetime when R = 0")
    x = p.bulk_lifetime_ns / tau_ns - 1.0
    return p.foerster_radius_nm / x ** (1.0 / p.distance_exponent)


def depth_density(z, d: DepthDistribution):
    """Truncated-Gaussian density in 1/nm; zero outside the window."""
    z = np.asarray(z, dtype=float)
    u = (z - d.mean_nm) / d.sigma_nm
    pdf = np.exp(-0.5 * u * u) / (d.sigma_nm * np.sqrt(2 * np.pi) * d._norm)
    inside = (z >= d.z_min_nm) & (z <= d.z_max_nm)
    return _out(np.where(inside, pdf, 0.0))
