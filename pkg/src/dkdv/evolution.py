"""Time integration and the Duhamel fixed-point solver.

Two independent routes to the solution of
``u_t + u_xxx + |D|^(2 alpha) u + u u_x = 0``:

* :func:`solve_ivp` advances Fourier coefficients with a fourth-order
  exponential time-differencing Runge-Kutta scheme (ETDRK4);
* :func:`picard_solve` iterates the truncated integral map
  :func:`duhamel_map` on a space-time lattice and records how fast the
  iterates contract in the ``Z`` norm.
"""

from __future__ import annotations

import csv
import math
import struct
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .bourgain import (
    PHYSICAL,
    SpaceTimeField,
    SpaceTimeGrid,
    bump_psi,
    spacetime_transform,
    xbs_norm,
)
from .spectral_core import (
    Field,
    Grid1D,
    ModelParams,
    SpectralField,
    _forward,
    _inverse,
    dealias_mask,
    is_power_of_two,
    linear_symbol,
    make_grid,
    nonlinear_term_hat,
    phi_functions,
    sobolev_norm,
)

__all__ = [
    "NumericalError",
    "StabilityError",
    "BlowUpError",
    "ConvergenceError",
    "QuadratureWarning",
    "Trajectory",
    "PicardConfig",
    "etdrk4_step",
    "solve_ivp",
    "default_dt",
    "picard_lattice",
    "duhamel_map",
    "picard_solve",
    "z_norm",
    "decay_diagnostic",
    "is_nonincreasing",
    "energy_rate",
    "read_snapshots",
    "lattice_snapshots",
    "transform_field",
]

STABILITY_RTOL = 1e-9
PICARD_TOL = 1e-8
QUAD_TOL = 1e-6


class NumericalError(RuntimeError):
    """Base class of failures of a numerical procedure (as opposed to bad input)."""


class StabilityError(NumericalError):
    pass


class BlowUpError(NumericalError):
    def __init__(self, time: float):
        super().__init__(f"non-finite values at t = {time:.6g}")
        self.time = time


class ConvergenceError(NumericalError):
    def __init__(self, message: str, ratios: list[float], increments: list[float]):
        super().__init__(message)
        self.ratios = ratios
        self.increments = increments


class QuadratureWarning(UserWarning):
    pass


# -- trajectories ------------------------------------------------------------------

@dataclass
class Trajectory:
    times: list[float]
    states: list[SpectralField]
    params: ModelParams

    def __post_init__(self):
        if len(self.times) != len(self.states) or not self.times:
            raise ValueError("times and states must be non-empty and of equal length")
        if self.times[0] != 0.0:
            raise ValueError("trajectories start at t = 0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")
        g = self.states[0].grid
        if any(st.grid != g for st in self.states):
            raise ValueError("all states must live on one grid")

    @property
    def grid(self) -> Grid1D:
        return self.states[0].grid

    def l2_norms(self) -> list[float]:
        return [sobolev_norm(u, 0.0) for u in self.states]

    def means(self) -> list[float]:
        g = self.grid
        k0 = g.n_points // 2
        return [float(u.coeffs[k0].real * math.sqrt(2.0 * math.pi) / g.domain_length)
                for u in self.states]

    def physical(self) -> np.ndarray:
        """States as real samples, shape ``(len(times), n_points)``."""
        dx = self.grid.spacing
        return np.array([_inverse(u.coeffs, dx).real for u in self.states])

    def write_csv(self, path, s_probe: float) -> None:
        rows = zip(self.times, self.l2_norms(), decay_diagnostic(self, s_probe), self.means())
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "L2", "Hs", "mean"])
            for r in rows:
                w.writerow([repr(float(v)) for v in r])

    def write_snapshots(self, path) -> None:
        """Binary dump, all little-endian.

        Header: ``int64 n_points, float64 L, float64 alpha, int64 n_records``.
        Each record: ``float64 t`` followed by ``n_points`` float64 samples
        ``u(x_j)``, ``x_j = j L / n_points``.
        """
        g = self.grid
        u = self.physical()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<qddq", g.n_points, g.domain_length, self.params.alpha, len(self.times)))
            for t, row in zip(self.times, u):
                fh.write(struct.pack("<d", t))
                fh.write(np.asarray(row, dtype="<f8").tobytes())


def read_snapshots(path):
    """Inverse of :meth:`Trajectory.write_snapshots`: ``(n_points, L, alpha, times, samples)``."""
    data = Path(path).read_bytes()
    n, length, alpha, m = struct.unpack_from("<qddq", data, 0)
    rec = np.frombuffer(data, dtype="<f8", offset=struct.calcsize("<qddq")).reshape(m, n + 1)
    return n, length, alpha, rec[:, 0].copy(), rec[:, 1:].copy()


# -- ETDRK4 -----------------------------------------------------------------------

@lru_cache(maxsize=32)
def _etd_coefficients(dt: float, n_points: int, domain_length: float, alpha: float):
    g = make_grid(n_points, domain_length)
    z = dt * linear_symbol(g.frequencies, alpha)
    e = np.exp(z)
    e2 = np.exp(0.5 * z)
    q = 0.5 * dt * phi_functions(0.5 * z)[0]
    p1, p2, p3 = phi_functions(z)
    f1 = dt * (p1 - 3.0 * p2 + 4.0 * p3)
    f2 = dt * (2.0 * p2 - 4.0 * p3)
    f3 = dt * (4.0 * p3 - p2)
    return e, e2, q, f1, f2, f3


def etdrk4_step(u: SpectralField, dt: float, params: ModelParams, *, coupling: float = 1.0) -> SpectralField:
    """One ETDRK4 step of ``u_hat' = Lambda u_hat + coupling * N(u_hat)``.

    ``coupling = 0`` gives the exact linear flow.  Raises
    :class:`StabilityError` when the step increases the L2 norm by more than
    ``1e-9`` relative.
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive, got {dt!r}")
    g = u.grid
    e, e2, q, f1, f2, f3 = _etd_coefficients(float(dt), g.n_points, g.domain_length, params.alpha)
    v = u.coeffs
    if coupling == 0.0:
        out = e * v
    else:
        mask = dealias_mask(g)

        def nl(w):
            return coupling * nonlinear_term_hat(w, g, mask)

        nv = nl(v)
        a = e2 * v + q * nv
        na = nl(a)
        b = e2 * v + q * na
        nb = nl(b)
        c = e2 * a + q * (2.0 * nb - nv)
        nc = nl(c)
        out = e * v + f1 * nv + f2 * (na + nb) + f3 * nc
        out[g.n_points // 2] = v[g.n_points // 2]  # the mean is an exact invariant
    before = float(np.sum(np.abs(v) ** 2))
    after = float(np.sum(np.abs(out) ** 2))
    if not math.isfinite(after):
        raise BlowUpError(dt)
    if math.sqrt(after) > math.sqrt(before) * (1.0 + STABILITY_RTOL) + 1e-300:
        raise StabilityError(
            f"L2 norm grew from {math.sqrt(before):.17g} to {math.sqrt(after):.17g} in one step")
    return SpectralField(g, out)


def default_dt(u0: Field, cap: float = 1e-2) -> float:
    """Step size with ``dt * max|u| * max|xi| <= 1/2``, at most ``cap``."""
    umax = float(np.max(np.abs(u0.values)))
    ximax = float(np.max(np.abs(u0.grid.frequencies)))
    if umax == 0.0:
        return cap
    return min(cap, 0.5 / (umax * ximax))


def solve_ivp(u0: Field, T: float, dt: float | None, params: ModelParams, record_every: int = 1,
              *, coupling: float = 1.0) -> Trajectory:
    """Integrate from ``u0`` to time ``T``; ``dt`` is shrunk so that it divides ``T``.

    States are recorded every ``record_every`` steps and at ``T``.
    """
    if not (T > 0 and math.isfinite(T)):
        raise ValueError(f"T must be positive, got {T!r}")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    if dt is None:
        dt = default_dt(u0)
    n_steps = max(1, math.ceil(T / dt - 1e-9))
    h = T / n_steps
    u = transform_field(u0)
    times, states = [0.0], [u]
    for k in range(1, n_steps + 1):
        try:
            u = etdrk4_step(u, h, params, coupling=coupling)
        except BlowUpError:
            raise BlowUpError(k * h) from None
        if k % record_every == 0 or k == n_steps:
            times.append(k * h if k < n_steps else float(T))
            states.append(u)
    return Trajectory(times, states, params)


def transform_field(u0: Field) -> SpectralField:
    return SpectralField(u0.grid, _forward(u0.values, u0.grid.spacing))


def energy_rate(u: SpectralField, alpha: float) -> float:
    """``-2 || |D|^alpha u ||_{L2}^2``, the exact value of ``d/dt ||u||^2``."""
    g = u.grid
    return -2.0 * g.dxi * float(np.sum(np.abs(g.frequencies) ** (2 * alpha) * np.abs(u.coeffs) ** 2))


def decay_diagnostic(traj: Trajectory, s_probe: float) -> list[float]:
    """``||u(t_i)||_{H^s_probe}`` along the trajectory."""
    return [sobolev_norm(u, s_probe) for u in traj.states]


def is_nonincreasing(values, rtol: float = 1e-9) -> bool:
    v = list(values)
    return all(b <= a * (1.0 + rtol) + 1e-300 for a, b in zip(v, v[1:]))


# -- Picard iteration ------------------------------------------------------------------

@dataclass(frozen=True)
class PicardConfig:
    """Window ``T``, Simpson nodes ``n_quad`` on ``[0, 2T]`` and the ``Z``-norm indices.

    ``s_c_plus`` and ``gamma`` left as ``None`` are filled in by
    :func:`picard_solve` (``s_alpha + 0.05`` and the data ratio respectively).
    """

    T: float
    n_quad: int = 257
    max_iters: int = 50
    s_c_plus: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"T must be positive, got {self.T!r}")
        if self.n_quad < 3 or not is_power_of_two(self.n_quad - 1):
            raise ValueError(f"n_quad - 1 must be a power of two >= 2, got {self.n_quad!r}")
        if self.max_iters < 2:
            raise ValueError("max_iters must be >= 2")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma!r}")


def picard_lattice(cfg: PicardConfig, grid_x: Grid1D) -> SpaceTimeGrid:
    """Space-time lattice whose time step equals the Simpson step ``2T / (n_quad - 1)``.

    ``T_box = 2T * 2^m`` is the smallest such value that is ``>= 2`` and
    exceeds ``2T``, so that ``t = 0`` and ``t = 2T`` are lattice points of
    ``[-T_box, T_box)`` and ``n_time`` is a power of two.
    """
    h = 2.0 * cfg.T / (cfg.n_quad - 1)
    t_box = 2.0 * cfg.T
    while t_box < 2.0 or t_box <= 2.0 * cfg.T:
        t_box *= 2.0
    n_time = int(round(2.0 * t_box / h))
    return SpaceTimeGrid(grid_x, n_time, t_box)


def _simpson_weights(k: int) -> np.ndarray:
    """Weights (in units of the step) of a closed rule on ``k`` intervals."""
    w = np.zeros(k + 1)
    if k == 0:
        return w
    if k == 1:
        w[:] = 0.5
        return w
    m = k if k % 2 == 0 else k - 3
    if m > 0:
        w[0:m + 1:2] += 2.0 / 3.0
        w[1:m:2] += 4.0 / 3.0
        w[0] -= 1.0 / 3.0
        w[m] -= 1.0 / 3.0
    if m < k:
        w[m:m + 4] += np.array([3.0, 9.0, 9.0, 3.0]) / 8.0
    return w


def _duhamel_integral(g_hat: np.ndarray, lam: np.ndarray, h: float) -> np.ndarray:
    """``I_k = int_0^{k h} e^{Lambda (k h - t')} g(t') dt'`` by Simpson, ``k = 0..K``."""
    n = g_hat.shape[0]
    powers = np.exp(np.outer(h * np.arange(n), lam))
    out = np.zeros_like(g_hat)
    for k in range(1, n):
        w = _simpson_weights(k)
        out[k] = h * np.einsum("j,jx,jx->x", w, powers[k::-1], g_hat[:k + 1])
    return out


def _duhamel_on(u_vals: np.ndarray, u0_hat: np.ndarray, st: SpaceTimeGrid, T: float, stride: int,
                params: ModelParams, coupling: float) -> np.ndarray:
    """``F(u)`` in the [t, xi] layout at lattice rows ``0, stride, 2 stride, ...``."""
    gx = st.grid_x
    t_all = st.times
    rows = np.arange(0, st.n_time, stride)
    t = t_all[rows]
    xi = gx.frequencies
    lam = linear_symbol(xi, params.alpha)
    out = np.exp(-np.abs(xi[None, :]) ** (2 * params.alpha) * np.abs(t[:, None])
                 + 1j * xi[None, :] ** 3 * t[:, None]) * u0_hat[None, :]
    if coupling != 0.0:
        dt = st.dt * stride
        i0 = int(round(st.t_box / st.dt))
        k_end = int(round(2.0 * T / st.dt))
        nodes = np.arange(i0, i0 + k_end + 1, stride)
        cut = bump_psi(t_all[nodes], T) ** 2
        mask = dealias_mask(gx)
        u_hat = np.fft.fftshift(np.fft.fft(u_vals[nodes].real, axis=1), axes=1) * (
            gx.spacing / math.sqrt(2.0 * math.pi))
        g_hat = coupling * cut[:, None] * np.array([nonlinear_term_hat(r, gx, mask) for r in u_hat])
        integ = _duhamel_integral(g_hat, lam, dt)
        duh = np.zeros_like(out)
        j0 = i0 // stride
        nk = integ.shape[0]
        duh[j0:j0 + nk] = integ
        after = t > 2.0 * T + 1e-12 * T
        if after.any():
            tail = np.exp(np.outer(t[after] - 2.0 * T, lam))
            duh[after] = tail * integ[-1][None, :]
        out = out + duh
    return bump_psi(t)[:, None] * out


def _txi_to_field(a: np.ndarray, st: SpaceTimeGrid) -> SpaceTimeField:
    dx = st.grid_x.spacing
    vals = np.fft.ifft(np.fft.ifftshift(a, axes=1), axis=1) * (math.sqrt(2.0 * math.pi) / dx)
    return SpaceTimeField(st, vals.real.astype(complex), PHYSICAL)


def duhamel_map(u: SpaceTimeField, u0: Field, cfg: PicardConfig, params: ModelParams, *,
                coupling: float = 1.0, check_resolution: bool = True) -> SpaceTimeField:
    """``F(u) = psi(t) [W(t) u0 - chi_{t>=0} / 2 int_0^t W(t - t') d_x(psi_T^2 u^2)(t') dt']``.

    The time integral uses composite Simpson on the lattice nodes of
    ``[0, 2T]``; beyond ``2T`` the integrand vanishes and the integral is
    propagated by the semigroup.  With ``check_resolution`` the map is
    recomputed with every other node and a :class:`QuadratureWarning` is
    issued when the two differ by more than ``1e-6`` in ``X^{1/2,s}``.
    """
    st = picard_lattice(cfg, u0.grid)
    if u.st_grid != st:
        raise ValueError("u must be sampled on picard_lattice(cfg, u0.grid)")
    if u.representation != PHYSICAL:
        raise ValueError("duhamel_map expects a physical-space field")
    u0_hat = _forward(u0.values, u0.grid.spacing)
    full = _duhamel_on(u.values, u0_hat, st, cfg.T, 1, params, coupling)
    if check_resolution and coupling != 0.0 and cfg.n_quad > 3:
        half = _duhamel_on(u.values, u0_hat, st, cfg.T, 2, params, coupling)
        st2 = SpaceTimeGrid(st.grid_x, st.n_time // 2, st.t_box)
        diff = _txi_to_field(full[::2] - half, st2)
        err = xbs_norm(spacetime_transform(diff), 0.5, params.s, params.alpha)
        if err > QUAD_TOL:
            warnings.warn(f"halving n_quad changes F(u) by {err:.3g} in X^(1/2,s)",
                          QuadratureWarning, stacklevel=2)
    return _txi_to_field(full, st)


def z_norm(u: SpaceTimeField, params: ModelParams, s_c_plus: float, gamma: float) -> float:
    """``||u||_{X^{1/2, s_c+}} + gamma ||u||_{X^{1/2, s}}``."""
    uh = spacetime_transform(u) if u.representation == PHYSICAL else u
    a = params.alpha
    return xbs_norm(uh, 0.5, s_c_plus, a) + gamma * xbs_norm(uh, 0.5, params.s, a)


def _resolve_indices(u0: Field, cfg: PicardConfig, params: ModelParams) -> tuple[float, float]:
    from .bilinear_lab import s_alpha

    sc = s_alpha(params.alpha)
    s_plus = sc + 0.05 if cfg.s_c_plus is None else cfg.s_c_plus
    if not s_plus > sc:
        raise ValueError(f"s_c_plus must exceed s_alpha = {sc:.6g}, got {s_plus}")
    if cfg.gamma is not None:
        return s_plus, cfg.gamma
    phi = transform_field(u0)
    lo = sobolev_norm(phi, params.s)
    return s_plus, (sobolev_norm(phi, s_plus) / lo if lo > 0 else 1.0)


def picard_solve(u0: Field, cfg: PicardConfig, params: ModelParams, *, coupling: float = 1.0):
    """Iterate ``u^{k+1} = F(u^k)`` from ``u^0 = 0``.

    Returns ``(u, ratios)`` with ``ratios[k] = ||u^{k+2} - u^{k+1}||_Z / ||u^{k+1} - u^k||_Z``.
    Stops once an increment drops below ``1e-8`` in ``Z``; otherwise raises
    :class:`ConvergenceError` after ``max_iters`` maps.
    """
    s_plus, gamma = _resolve_indices(u0, cfg, params)
    st = picard_lattice(cfg, u0.grid)
    u = SpaceTimeField(st, np.zeros(st.shape), PHYSICAL)
    increments: list[float] = []
    ratios: list[float] = []
    for k in range(cfg.max_iters):
        last_chance = k == cfg.max_iters - 1
        nxt = duhamel_map(u, u0, cfg, params, coupling=coupling, check_resolution=False)
        d = z_norm(SpaceTimeField(st, nxt.values - u.values, PHYSICAL), params, s_plus, gamma)
        if increments:
            ratios.append(d / increments[-1] if increments[-1] > 0 else 0.0)
        increments.append(d)
        u = nxt
        if d < PICARD_TOL:
            if coupling != 0.0:
                duhamel_map(u, u0, cfg, params, coupling=coupling, check_resolution=True)
            return u, ratios
        if not math.isfinite(d) or last_chance:
            break
    raise ConvergenceError(
        f"Picard iteration did not converge in {cfg.max_iters} maps "
        f"(last increment {increments[-1]:.3g})", ratios, increments)


def lattice_snapshots(u: SpaceTimeField, t_min: float, t_max: float):
    """``(times, rows)`` of the lattice samples with ``t_min <= t <= t_max``."""
    t = u.st_grid.times
    sel = (t >= t_min - 1e-12) & (t <= t_max + 1e-12)
    return t[sel], u.values[sel].real
