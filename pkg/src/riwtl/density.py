"""One-dimensional residual densities: Gaussian-kernel KDE, zero-mean Gaussian, uniform."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate, stats

INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
SIGMA_FLOOR = 1e-8
SIMPSON_PANELS = 2048
DEFAULT_BANDWIDTHS = (0.1, 0.2, 0.3)


@dataclass(frozen=True)
class DensityModel:
    """A density on the real line.

    ``kind`` is one of ``kde`` (``points``, ``bandwidth``), ``gaussian``
    (``sigma``, mean zero), ``uniform`` (on ``[-T, T]``) or ``student_t``
    (``df``, used only for known error laws in oracle mode). When
    ``symmetrized`` is set the model evaluates ``(f(t) + f(-t)) / 2``.
    """

    kind: str
    points: Optional[NDArray[np.float64]] = None
    bandwidth: float = 0.0
    sigma: float = 1.0
    T: float = 1.0
    df: float = 5.0
    symmetrized: bool = False

    def _raw(self, t: NDArray[np.float64]) -> NDArray[np.float64]:
        if self.kind == "kde":
            u = (t[:, None] - self.points[None, :]) / self.bandwidth
            return np.exp(-0.5 * u * u).sum(axis=1) * (INV_SQRT_2PI / (self.points.size * self.bandwidth))
        if self.kind == "gaussian":
            u = t / self.sigma
            return np.exp(-0.5 * u * u) * (INV_SQRT_2PI / self.sigma)
        if self.kind == "uniform":
            return np.where(np.abs(t) <= self.T, 0.5 / self.T, 0.0)
        if self.kind == "student_t":
            return stats.t.pdf(t, self.df)
        raise ValueError(f"unknown density kind {self.kind!r}")

    def pdf(self, t: ArrayLike) -> NDArray[np.float64]:
        t = np.asarray(t, dtype=np.float64)
        flat = t.reshape(-1)
        if self.symmetrized:
            out = 0.5 * (self._raw(flat) + self._raw(-flat))
        else:
            out = self._raw(flat)
        return out.reshape(t.shape)

    def __call__(self, t: ArrayLike):
        out = self.pdf(t)
        return float(out) if out.ndim == 0 else out

    @property
    def is_symmetric(self) -> bool:
        return self.symmetrized or self.kind in ("gaussian", "uniform", "student_t")


def kde_fit(residuals: ArrayLike, bandwidth: float) -> DensityModel:
    pts = np.array(residuals, dtype=np.float64).reshape(-1)
    if pts.size == 0:
        raise ValueError("cannot fit a kernel density to an empty residual set")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    if not np.all(np.isfinite(pts)):
        raise ValueError("residuals must be finite")
    pts.setflags(write=False)
    return DensityModel("kde", points=pts, bandwidth=float(bandwidth))


def gaussian_fit(residuals: ArrayLike) -> DensityModel:
    """Zero-mean Gaussian with variance equal to the mean squared residual."""
    r = np.asarray(residuals, dtype=np.float64).reshape(-1)
    if r.size < 2:
        raise ValueError("need at least two residuals")
    sigma = max(float(np.sqrt(np.mean(r * r))), SIGMA_FLOOR)
    return DensityModel("gaussian", sigma=sigma)


def uniform(T: float) -> DensityModel:
    if not T > 0:
        raise ValueError("uniform half-width must be positive")
    return DensityModel("uniform", T=float(T))


def gaussian(sigma: float = 1.0) -> DensityModel:
    return DensityModel("gaussian", sigma=float(sigma))


def student_t(df: float) -> DensityModel:
    return DensityModel("student_t", df=float(df))


def symmetrize(d: DensityModel) -> DensityModel:
    if d.symmetrized:
        return d
    return DensityModel(d.kind, d.points, d.bandwidth, d.sigma, d.T, d.df, symmetrized=True)


def silverman_bandwidth(residuals: ArrayLike) -> float:
    r = np.asarray(residuals, dtype=np.float64)
    iqr = np.subtract(*np.percentile(r, [75, 25]))
    spread = min(np.std(r, ddof=1), iqr / 1.349) if iqr > 0 else np.std(r, ddof=1)
    return float(0.9 * spread * r.size ** (-0.2))


def simpson(f, lo: float, hi: float, panels: int = SIMPSON_PANELS) -> float:
    """Composite Simpson rule on nodes placed symmetrically about the midpoint."""
    panels += panels % 2
    t = 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.arange(-panels // 2, panels // 2 + 1) / (panels // 2)
    return float(integrate.simpson(f(t), x=t))


def truncated_first_moment(d: DensityModel, A: float, panels: int = SIMPSON_PANELS) -> float:
    """Integral of t * f(t) over [-A, A]."""
    if not A > 0:
        raise ValueError("A must be positive")
    return simpson(lambda t: t * d.pdf(t), -A, A, panels)
