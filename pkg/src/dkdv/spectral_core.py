"""Periodic pseudospectral discretization of the real line.

Grids, unitary Fourier transforms, the linear symbol of the dissipative KdV
operator, its semigroup, the dealiased quadratic nonlinearity and Sobolev
norms.  Fourier coefficients are always stored in ascending frequency order
(``k = -n/2 ... n/2-1``).

Transform convention: ``u_hat(xi_k) = dx / sqrt(2 pi) * sum_j u(x_j) exp(-i xi_k x_j)``
with ``x_j = j * dx``.  With this scaling the quadrature
``sum_k dxi * |u_hat(xi_k)|^2`` equals ``sum_j dx * |u(x_j)|^2`` exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "Grid1D",
    "ModelParams",
    "Field",
    "SpectralField",
    "make_grid",
    "transform",
    "linear_symbol",
    "apply_semigroup",
    "nonlinearity",
    "nonlinear_term_hat",
    "sobolev_norm",
    "bracket",
    "dealias_mask",
    "phi_functions",
    "is_power_of_two",
]


def is_power_of_two(n) -> bool:
    return isinstance(n, (int, np.integer)) and n > 0 and (int(n) & (int(n) - 1)) == 0


def bracket(z):
    """Japanese bracket ``<z> = (1 + |z|^2)^(1/2)``, elementwise."""
    return np.sqrt(1.0 + np.abs(z) ** 2)


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic lattice on ``[0, domain_length)``."""

    n_points: int
    domain_length: float

    def __post_init__(self):
        if not is_power_of_two(self.n_points) or self.n_points < 8:
            raise ValueError(f"n_points must be a power of two >= 8, got {self.n_points!r}")
        if not (math.isfinite(self.domain_length) and self.domain_length > 0):
            raise ValueError(f"domain_length must be positive, got {self.domain_length!r}")

    @property
    def spacing(self) -> float:
        return self.domain_length / self.n_points

    @property
    def dxi(self) -> float:
        """Frequency lattice spacing ``2 pi / L``."""
        return 2.0 * math.pi / self.domain_length

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Integer mode indices ``-n/2 ... n/2-1``."""
        n = self.n_points
        return np.arange(-n // 2, n // 2)

    @cached_property
    def frequencies(self) -> np.ndarray:
        return self.dxi * self.wavenumbers

    @cached_property
    def x(self) -> np.ndarray:
        return self.spacing * np.arange(self.n_points)


@dataclass(frozen=True)
class ModelParams:
    """Exponents of the model and of the function spaces.

    ``alpha`` is the dissipation order, ``s`` the Sobolev index, ``b`` the
    modulation index, ``delta`` the small gain in the bilinear estimate and
    ``nu_probe`` the exponent probed for the ``T^nu`` factor.
    """

    alpha: float = 1.0
    s: float = -0.9
    b: float = 0.5
    delta: float = 0.01
    nu_probe: float = 0.1

    def __post_init__(self):
        for name in ("alpha", "s", "b", "delta", "nu_probe"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ValueError(f"{name} must be a finite real, got {v!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 < self.delta < 0.5:
            raise ValueError(f"delta must lie in (0, 1/2), got {self.delta}")
        if self.nu_probe <= 0:
            raise ValueError(f"nu_probe must be positive, got {self.nu_probe}")


@dataclass
class Field:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if np.iscomplexobj(v):
            raise ValueError("Field values must be real")
        v = v.astype(float)
        if v.shape != (self.grid.n_points,):
            raise ValueError(f"expected {self.grid.n_points} samples, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("Field values must be finite")
        self.values = v


@dataclass
class SpectralField:
    grid: Grid1D
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (self.grid.n_points,):
            raise ValueError(f"expected {self.grid.n_points} coefficients, got shape {c.shape}")
        self.coeffs = c


def make_grid(n_points: int, domain_length: float) -> Grid1D:
    return Grid1D(int(n_points) if isinstance(n_points, (int, np.integer)) else n_points,
                  float(domain_length))


def _forward(values: np.ndarray, dx: float) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft(values)) * (dx / math.sqrt(2.0 * math.pi))


def _inverse(coeffs: np.ndarray, dx: float) -> np.ndarray:
    return np.fft.ifft(np.fft.ifftshift(coeffs)) * (math.sqrt(2.0 * math.pi) / dx)


def transform(field, direction: str = "forward"):
    """Forward (``Field -> SpectralField``) or inverse transform.

    The inverse refuses coefficient sets that do not describe real data.
    """
    if direction == "forward":
        if not isinstance(field, Field):
            raise TypeError("forward transform expects a Field")
        return SpectralField(field.grid, _forward(field.values, field.grid.spacing))
    if direction == "inverse":
        if not isinstance(field, SpectralField):
            raise TypeError("inverse transform expects a SpectralField")
        v = _inverse(field.coeffs, field.grid.spacing)
        scale = max(np.max(np.abs(v)), 1e-300)
        if np.max(np.abs(v.imag)) > 1e-8 * scale:
            raise ValueError("coefficients are not conjugate symmetric; data is not real")
        return Field(field.grid, v.real)
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def linear_symbol(xi, alpha: float):
    """``Lambda(xi) = i xi^3 - |xi|^(2 alpha)``; free flow is ``exp(t Lambda)``."""
    xi = np.asarray(xi, dtype=float)
    out = 1j * xi**3 - np.abs(xi) ** (2.0 * alpha)
    return out if np.ndim(out) else complex(out)


def semigroup_multiplier(xi, t: float, alpha: float):
    """Fourier multiplier of ``W_alpha(t)``, dissipative in both time directions."""
    xi = np.asarray(xi, dtype=float)
    return np.exp(-np.abs(xi) ** (2.0 * alpha) * abs(t) + 1j * xi**3 * t)


def apply_semigroup(phi: SpectralField, t: float, alpha: float) -> SpectralField:
    return SpectralField(phi.grid, phi.coeffs * semigroup_multiplier(phi.grid.frequencies, t, alpha))


def dealias_mask(grid: Grid1D) -> np.ndarray:
    """Boolean mask of the modes kept by the 2/3 rule (``|k| <= n/3``)."""
    return np.abs(grid.wavenumbers) <= grid.n_points / 3.0


def nonlinear_term_hat(u_hat: np.ndarray, grid: Grid1D, mask: np.ndarray | None = None) -> np.ndarray:
    """Coefficients of ``-1/2 d/dx (u^2)`` with 2/3-rule truncation of input and product."""
    if mask is None:
        mask = dealias_mask(grid)
    dx = grid.spacing
    u = _inverse(np.where(mask, u_hat, 0.0), dx).real
    sq_hat = _forward(u * u, dx)
    return np.where(mask, -0.5j * grid.frequencies * sq_hat, 0.0)


def nonlinearity(u: Field) -> Field:
    """Pseudospectral ``-1/2 (u^2)_x``, which is ``-u u_x`` for smooth band-limited ``u``."""
    g = u.grid
    out = _inverse(nonlinear_term_hat(_forward(u.values, g.spacing), g), g.spacing)
    return Field(g, out.real)


def sobolev_norm(phi: SpectralField, s: float) -> float:
    g = phi.grid
    w = bracket(g.frequencies) ** (2.0 * s)
    return float(math.sqrt(g.dxi * np.sum(w * np.abs(phi.coeffs) ** 2)))


def phi_functions(z, n_contour: int = 32, radius: float = 1.0):
    """``phi_1, phi_2, phi_3`` of the exponential integrators, via contour means.

    Each function is averaged over ``n_contour`` points of a circle of the given
    radius centred at every ``z``; this avoids the cancellation in
    ``(e^z - 1)/z`` near ``z = 0``.
    """
    z = np.asarray(z, dtype=complex)
    theta = 2.0 * math.pi * (np.arange(n_contour) + 0.5) / n_contour
    w = z[..., None] + radius * np.exp(1j * theta)
    ew = np.exp(w)
    phi1 = ((ew - 1.0) / w).mean(axis=-1)
    phi2 = ((ew - 1.0 - w) / w**2).mean(axis=-1)
    phi3 = ((ew - 1.0 - w - 0.5 * w**2) / w**3).mean(axis=-1)
    return phi1, phi2, phi3
