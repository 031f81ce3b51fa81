"""Discretized space-time Fourier analysis and checks of the linear estimates.

A :class:`SpaceTimeGrid` is the product of a spatial :class:`Grid1D` with a
periodic time lattice on ``[-T_box, T_box)``.  Space-time coefficients use the
unitary convention in both variables, so

    u_hat(tau_m, xi_k) = dt dx / (2 pi) * sum u(t_j, x_l) exp(-i (tau_m t_j + xi_k x_l))

and ``sum dtau dxi |u_hat|^2 == sum dt dx |u|^2``.  Arrays are laid out as
``[time, space]`` (or ``[tau, xi]``), both axes in ascending order.

The lemma checks measure left/right ratios of the linear estimates on random
ensembles.  They certify boundedness under lattice refinement and the sign of
``T`` scaling exponents, never constants.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate

from .spectral_core import (
    Grid1D,
    ModelParams,
    SpectralField,
    bracket,
    is_power_of_two,
    make_grid,
    sobolev_norm,
)

__all__ = [
    "PHYSICAL",
    "SPECTRAL",
    "SpaceTimeGrid",
    "SpaceTimeField",
    "LemmaKind",
    "LemmaVerdict",
    "bump_psi",
    "spacetime_transform",
    "xbs_weight",
    "xbs_norm",
    "xbs_equivalent_norm",
    "time_forward",
    "time_inverse",
    "space_forward",
    "space_inverse",
    "lemma_check",
    "lin_free_ratio",
    "calc_a_ratio",
    "calc_b_ratio",
    "refine",
    "embed_spectrum",
    "l2_norm",
    "calc_a_lhs",
    "calc_b_lhs",
    "default_lemma_grid",
    "T_SCALES",
    "MAX_GROWTH",
]

PHYSICAL = "physical"
SPECTRAL = "spectral"


@dataclass(frozen=True)
class SpaceTimeGrid:
    grid_x: Grid1D
    n_time: int
    t_box: float = 4.0

    def __post_init__(self):
        if not is_power_of_two(self.n_time) or self.n_time < 16:
            raise ValueError(f"n_time must be a power of two >= 16, got {self.n_time!r}")
        if not (math.isfinite(self.t_box) and self.t_box >= 2.0):
            raise ValueError(f"t_box must be >= 2 to contain supp psi, got {self.t_box!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_time, self.grid_x.n_points)

    @property
    def dt(self) -> float:
        return 2.0 * self.t_box / self.n_time

    @property
    def dtau(self) -> float:
        return math.pi / self.t_box

    @cached_property
    def tau_indices(self) -> np.ndarray:
        return np.arange(-self.n_time // 2, self.n_time // 2)

    @cached_property
    def times(self) -> np.ndarray:
        return -self.t_box + self.dt * np.arange(self.n_time)

    @cached_property
    def tau_frequencies(self) -> np.ndarray:
        return self.dtau * self.tau_indices

    @property
    def cell(self) -> float:
        """Quadrature weight ``dtau * dxi`` of one frequency lattice cell."""
        return self.dtau * self.grid_x.dxi


@dataclass
class SpaceTimeField:
    st_grid: SpaceTimeGrid
    values: np.ndarray = field(repr=False)
    representation: str = PHYSICAL

    def __post_init__(self):
        if self.representation not in (PHYSICAL, SPECTRAL):
            raise ValueError(f"unknown representation {self.representation!r}")
        v = np.asarray(self.values, dtype=complex)
        if v.shape != self.st_grid.shape:
            raise ValueError(f"expected shape {self.st_grid.shape}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("SpaceTimeField entries must be finite")
        self.values = v


def bump_psi(t, scale: float = 1.0):
    """Smooth cutoff: 1 on ``[-1, 1]``, 0 outside ``(-2, 2)``; ``psi_T(t) = psi(t / T)``."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    a = np.abs(np.asarray(t, dtype=float)) / scale
    out = np.zeros_like(a)
    out[a <= 1.0] = 1.0
    mid = (a > 1.0) & (a < 2.0)
    r = a[mid] - 1.0
    out[mid] = np.exp(1.0 - 1.0 / (1.0 - r * r))
    return out if out.ndim else float(out)


# -- partial transforms on [time, space] arrays --------------------------------

def _tau_phase(st: SpaceTimeGrid) -> np.ndarray:
    # exp(i tau_m T_box) = (-1)^m accounts for the time origin at -T_box
    return np.where(st.tau_indices % 2 == 0, 1.0, -1.0)[:, None]


def time_forward(a: np.ndarray, st: SpaceTimeGrid) -> np.ndarray:
    out = np.fft.fftshift(np.fft.fft(a, axis=0), axes=0)
    return out * _tau_phase(st) * (st.dt / math.sqrt(2.0 * math.pi))


def time_inverse(a: np.ndarray, st: SpaceTimeGrid) -> np.ndarray:
    out = np.fft.ifft(np.fft.ifftshift(a * _tau_phase(st), axes=0), axis=0)
    return out * (math.sqrt(2.0 * math.pi) / st.dt)


def space_forward(a: np.ndarray, st: SpaceTimeGrid) -> np.ndarray:
    dx = st.grid_x.spacing
    return np.fft.fftshift(np.fft.fft(a, axis=1), axes=1) * (dx / math.sqrt(2.0 * math.pi))


def space_inverse(a: np.ndarray, st: SpaceTimeGrid) -> np.ndarray:
    dx = st.grid_x.spacing
    return np.fft.ifft(np.fft.ifftshift(a, axes=1), axis=1) * (math.sqrt(2.0 * math.pi) / dx)


def spacetime_transform(u: SpaceTimeField, direction: str = "forward") -> SpaceTimeField:
    st = u.st_grid
    if direction == "forward":
        if u.representation != PHYSICAL:
            raise ValueError("forward transform expects a physical-space field")
        return SpaceTimeField(st, time_forward(space_forward(u.values, st), st), SPECTRAL)
    if direction == "inverse":
        if u.representation != SPECTRAL:
            raise ValueError("inverse transform expects a spectral field")
        return SpaceTimeField(st, space_inverse(time_inverse(u.values, st), st), PHYSICAL)
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def _modulation(st: SpaceTimeGrid) -> np.ndarray:
    xi = st.grid_x.frequencies
    return st.tau_frequencies[:, None] - xi[None, :] ** 3


def xbs_weight(st: SpaceTimeGrid, b: float, s: float, alpha: float) -> np.ndarray:
    """``<i(tau - xi^3) + |xi|^(2 alpha)>^b <xi>^s`` on the lattice."""
    xi = st.grid_x.frequencies
    sigma = _modulation(st)
    disp = np.abs(xi) ** (4.0 * alpha)
    return (1.0 + sigma**2 + disp[None, :]) ** (0.5 * b) * bracket(xi)[None, :] ** s


def _weighted_l2(coeffs: np.ndarray, weight, cell: float) -> float:
    return float(math.sqrt(cell * np.sum((weight * np.abs(coeffs)) ** 2)))


def xbs_norm(u_hat: SpaceTimeField, b: float, s: float, alpha: float) -> float:
    if u_hat.representation != SPECTRAL:
        raise ValueError("xbs_norm expects a field in frequency representation")
    st = u_hat.st_grid
    return _weighted_l2(u_hat.values, xbs_weight(st, b, s, alpha), st.cell)


def xbs_equivalent_norm(u_hat: SpaceTimeField, b: float, s: float, alpha: float) -> float:
    """``||U(-t) u||_{H^{b,s}} + ||u||_{L^2_t H^{s + 2 alpha b}}``, the equivalent form."""
    st = u_hat.st_grid
    xi = st.grid_x.frequencies
    w1 = bracket(_modulation(st)) ** b * bracket(xi)[None, :] ** s
    w2 = np.broadcast_to(bracket(xi)[None, :] ** (s + 2.0 * alpha * b), st.shape)
    return _weighted_l2(u_hat.values, w1, st.cell) + _weighted_l2(u_hat.values, w2, st.cell)


def l2_norm(u_hat: np.ndarray, st: SpaceTimeGrid) -> float:
    return _weighted_l2(u_hat, 1.0, st.cell)


# -- lattice refinement ---------------------------------------------------------

def refine(st: SpaceTimeGrid, factor: int = 2) -> SpaceTimeGrid:
    """Lattice with ``factor`` times more points in each axis on the same boxes."""
    gx = make_grid(st.grid_x.n_points * factor, st.grid_x.domain_length)
    return SpaceTimeGrid(gx, st.n_time * factor, st.t_box)


def embed_spectrum(coeffs: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Zero-pad ascending-ordered coefficients into a larger centred array."""
    out = np.zeros(shape, dtype=complex)
    idx = tuple(slice((n - m) // 2, (n - m) // 2 + m) for n, m in zip(shape, coeffs.shape))
    out[idx] = coeffs
    return out


# -- lemma checks ------------------------------------------------------------------

class LemmaKind(str, enum.Enum):
    LIN_FREE = "LIN_FREE"
    LIN_DUHAMEL = "LIN_DUHAMEL"
    SMOOTHING = "SMOOTHING"
    L4_STRICHARTZ = "L4_STRICHARTZ"
    L2_CONTRACT = "L2_CONTRACT"
    CALC_A = "CALC_A"
    CALC_B = "CALC_B"


@dataclass
class LemmaVerdict:
    lemma_id: LemmaKind
    trials: int
    worst_ratio: float
    t_scaling_slope: float | None
    passed: bool
    refined_worst_ratio: float = float("nan")
    growth: float = float("nan")

    @property
    def pass_(self) -> bool:
        return self.passed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lemma_id"] = self.lemma_id.value
        d["pass"] = d.pop("passed")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "LemmaVerdict":
        return cls(
            lemma_id=LemmaKind(d["lemma_id"]),
            trials=int(d["trials"]),
            worst_ratio=float(d["worst_ratio"]),
            t_scaling_slope=None if d.get("t_scaling_slope") is None else float(d["t_scaling_slope"]),
            passed=bool(d["pass"]),
            refined_worst_ratio=float(d.get("refined_worst_ratio", float("nan"))),
            growth=float(d.get("growth", float("nan"))),
        )


MAX_GROWTH = 0.10
T_SCALES = (1.0, 0.5, 0.25, 0.125)


def default_lemma_grid() -> SpaceTimeGrid:
    return SpaceTimeGrid(make_grid(64, 16.0 * math.pi), 1024, 4.0)


def _trial_rng(seed: int, kind: LemmaKind, trial: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), list(LemmaKind).index(kind), int(trial)])


def _core_shape(st: SpaceTimeGrid) -> tuple[int, int]:
    return (st.n_time // 2, st.grid_x.n_points // 2)


def _ensemble_core(st: SpaceTimeGrid, rng: np.random.Generator) -> np.ndarray:
    """Random coefficients on the central half-band of ``st``.

    Complex Gaussian entries shaped by ``<xi>^-1 <tau - xi^3>^-3/4``.
    """
    nt, nx = _core_shape(st)
    core = SpaceTimeGrid(make_grid(nx, st.grid_x.domain_length), nt, st.t_box)
    env = bracket(core.grid_x.frequencies)[None, :] ** -1.0 * bracket(_modulation(core)) ** -0.75
    z = rng.standard_normal((nt, nx)) + 1j * rng.standard_normal((nt, nx))
    return env * z / math.sqrt(2.0)


def _profile_core(st: SpaceTimeGrid, rng: np.random.Generator) -> np.ndarray:
    """Random spatial profile on the central half-band, shaped by ``<xi>^-1``."""
    nx = st.grid_x.n_points // 2
    xi = make_grid(nx, st.grid_x.domain_length).frequencies
    z = rng.standard_normal(nx) + 1j * rng.standard_normal(nx)
    return (bracket(xi) ** -1.0 * z / math.sqrt(2.0))[None, :]


def _localized(core: np.ndarray, st: SpaceTimeGrid, scale: float) -> np.ndarray:
    """Embed ``core`` into ``st``, return ``psi_scale(t) * g`` in the [t, xi] representation."""
    g_txi = time_inverse(embed_spectrum(core, st.shape), st)
    return bump_psi(st.times, scale)[:, None] * g_txi


def _exact_duhamel(v_hat: np.ndarray, st: SpaceTimeGrid, alpha: float) -> np.ndarray:
    """``int_0^t W(t - t') v(t') dt'`` for ``t >= 0`` on the lattice, [t, xi] layout.

    Exact for the trigonometric interpolant of ``v`` in time:
    each mode ``exp(i tau t')`` integrates to
    ``(exp(i tau t) - exp(Lambda t)) / (i tau - Lambda)``.
    Rows with ``t < 0`` are zero.
    """
    xi = st.grid_x.frequencies
    lam = 1j * xi**3 - np.abs(xi) ** (2.0 * alpha)
    denom = 1j * st.tau_frequencies[:, None] - lam[None, :]
    resonant = np.abs(denom) < 1e-14
    inv = np.where(resonant, 0.0, 1.0 / np.where(resonant, 1.0, denom))
    q = v_hat * inv
    a = time_inverse(q, st)
    b = (st.dtau / math.sqrt(2.0 * math.pi)) * q.sum(axis=0)
    t = st.times[:, None]
    y = a - np.exp(lam[None, :] * np.maximum(t, 0.0)) * b[None, :]
    if resonant.any():
        res_val = (st.dtau / math.sqrt(2.0 * math.pi)) * (v_hat * resonant).sum(axis=0)
        y = y + t * np.exp(lam[None, :] * np.maximum(t, 0.0)) * res_val[None, :]
    return np.where(t >= 0.0, y, 0.0)


def lin_free_ratio(phi: SpectralField, st: SpaceTimeGrid, params: ModelParams) -> float:
    """``||psi(t) W(t) phi||_{X^{1/2,s}} / ||phi||_{H^s}`` on the lattice ``st``."""
    if phi.grid != st.grid_x:
        phi_c = embed_spectrum(phi.coeffs, (st.grid_x.n_points,))
    else:
        phi_c = phi.coeffs
    xi = st.grid_x.frequencies
    t = st.times[:, None]
    u_txi = bump_psi(st.times)[:, None] * np.exp(-np.abs(xi) ** (2 * params.alpha) * np.abs(t)
                                                 + 1j * xi**3 * t) * phi_c[None, :]
    u_hat = time_forward(u_txi, st)
    lhs = _weighted_l2(u_hat, xbs_weight(st, 0.5, params.s, params.alpha), st.cell)
    rhs = sobolev_norm(SpectralField(st.grid_x, phi_c), params.s)
    return lhs / rhs


def _ratio_lin_free(core, st, params, **_):
    phi = embed_spectrum(core[0], (st.grid_x.n_points,))
    return [lin_free_ratio(SpectralField(st.grid_x, phi), st, params)]


def _ratio_lin_duhamel(core, st, params, **_):
    a, s, d = params.alpha, params.s, params.delta
    v_txi = _localized(core, st, 1.0)
    v_hat = time_forward(v_txi, st)
    y = _exact_duhamel(v_hat, st, a)
    w_txi = bump_psi(st.times)[:, None] * y
    lhs = _weighted_l2(time_forward(w_txi, st), xbs_weight(st, 0.5, s, a), st.cell)
    rhs = _weighted_l2(v_hat, xbs_weight(st, -0.5 + d, s, a), st.cell)
    return [lhs / rhs]


def _ratio_smoothing(core, st, params, **_):
    a, s, d = params.alpha, params.s, params.delta
    v_hat = time_forward(_localized(core, st, 1.0), st)
    y = _exact_duhamel(v_hat, st, a)
    w = bracket(st.grid_x.frequencies) ** (2.0 * (s + 2.0 * a * d))
    sup = math.sqrt(st.grid_x.dxi * float(np.max(np.sum(w[None, :] * np.abs(y) ** 2, axis=1))))
    rhs = _weighted_l2(v_hat, xbs_weight(st, -0.5 + d, s, a), st.cell)
    return [sup / rhs]


SIGMA_BAND = 8.0


def _modulated_core(st: SpaceTimeGrid, rng: np.random.Generator) -> np.ndarray:
    """Random coefficients ``c[m, xi]`` for modulations ``sigma_m`` in ``[-8, 8]``.

    Shaped by ``<xi>^-1 <sigma>^-3/4``, half-band in space.  Used by the
    ``T^nu`` estimates through :func:`_scaled_profile`.
    """
    nx = st.grid_x.n_points // 2
    sig = _sigma_nodes()
    xi = make_grid(nx, st.grid_x.domain_length).frequencies
    env = bracket(xi)[None, :] ** -1.0 * bracket(sig)[:, None] ** -0.75
    z = rng.standard_normal((sig.size, nx)) + 1j * rng.standard_normal((sig.size, nx))
    return env * z / math.sqrt(2.0)


def _sigma_nodes() -> np.ndarray:
    return np.arange(-SIGMA_BAND, SIGMA_BAND + 0.5)


def _scaled_profile(core: np.ndarray, st: SpaceTimeGrid, T: float) -> np.ndarray:
    """``psi_{T/2}(t) sum_m c[m, xi] exp(i xi^3 t + i sigma_m t / T)``, [t, xi] layout.

    The modulation profile is stretched to the support ``[-T, T]``, so the
    family is self-similar in ``T`` and the same continuous function is
    sampled on every lattice.
    """
    xi = st.grid_x.frequencies
    c = embed_spectrum(core, (core.shape[0], st.grid_x.n_points))
    t = st.times
    h = np.exp(1j * np.outer(t / T, _sigma_nodes())) @ c
    return bump_psi(t, 0.5 * T)[:, None] * np.exp(1j * np.outer(t, xi**3)) * h


def _ratio_l2_contract(core, st, params, theta, t_values, **_):
    out = []
    damp = bracket(_modulation(st)) ** -theta
    for T in t_values:
        f_hat = time_forward(_scaled_profile(core, st, T), st)
        out.append(l2_norm(damp * f_hat, st) / l2_norm(f_hat, st))
    return out


def _ratio_l4_strichartz(core, st, params, theta, rho, t_values, **_):
    out = []
    mult = bracket(st.grid_x.frequencies)[None, :] ** theta * bracket(_modulation(st)) ** -rho
    for T in t_values:
        f_hat = time_forward(_scaled_profile(core, st, T), st)
        g = space_inverse(time_inverse(mult * f_hat, st), st)
        l4 = (st.dt * st.grid_x.spacing * np.sum(np.abs(g) ** 4)) ** 0.25
        out.append(float(l4) / l2_norm(f_hat, st))
    return out


# -- calculus inequalities -------------------------------------------------------

_TAIL_LOG_SPAN = 60.0


def _tail_integral(f, r: float, sign: float, power: float, epsrel: float, limit: int) -> float:
    """``int_r^inf f(sign * x) dx`` for ``f`` decaying like ``|x|^-power``, ``power > 1``.

    ``x = r exp(y)`` on ``y in [0, 60]``; beyond that ``f`` is replaced by its
    leading power, whose integral is closed form.
    """
    val, _ = integrate.quad(lambda y: f(sign * r * math.exp(y)) * r * math.exp(y),
                            0.0, _TAIL_LOG_SPAN, epsabs=0.0, epsrel=epsrel, limit=limit)
    x_far = r * math.exp(_TAIL_LOG_SPAN)
    return val + x_far ** (1.0 - power) / (power - 1.0)


def calc_a_lhs(a: float, beta: float, b: float, bp: float, *, epsrel: float = 1e-9,
               limit: int = 400) -> float:
    """``int_R dx / (<x - a>^(2b) <x - beta>^(2b'))``, tails included."""
    def f(x):
        return (1.0 + (x - a) ** 2) ** (-b) * (1.0 + (x - beta) ** 2) ** (-bp)

    r = max(1e3, 2.0 * max(abs(a), abs(beta)))
    pts = sorted({a, beta})
    core, _ = integrate.quad(f, -r, r, points=pts, epsabs=0.0, epsrel=epsrel, limit=limit)
    p = 2.0 * (b + bp)
    return (core + _tail_integral(f, r, 1.0, p, epsrel, limit)
            + _tail_integral(f, r, -1.0, p, epsrel, limit))


def calc_a_ratio(a: float, beta: float, b: float, bp: float, **kw) -> float:
    return calc_a_lhs(a, beta, b, bp, **kw) * bracket(a - beta) ** (2 * b + 2 * bp - 1)


def calc_b_lhs(a: float, beta: float, b: float, bp: float, *, epsrel: float = 1e-9,
               limit: int = 400) -> float:
    """``int_{|x| <= |beta|} dx / (<x>^(2b + 2b' - 1) sqrt|a - x|)``."""
    p = 2 * b + 2 * bp - 1
    R = abs(beta)
    if R == 0.0:
        return 0.0

    def f(x):
        return (1.0 + x * x) ** (-0.5 * p)

    kw = dict(epsabs=0.0, epsrel=epsrel, limit=limit)
    if a > R or a < -R:
        val, _ = integrate.quad(lambda x: f(x) / math.sqrt(abs(a - x)), -R, R, **kw)
        return val
    total = 0.0
    if a > -R:
        val, _ = integrate.quad(f, -R, a, weight="alg", wvar=(0.0, -0.5), **kw)
        total += val
    if a < R:
        val, _ = integrate.quad(f, a, R, weight="alg", wvar=(-0.5, 0.0), **kw)
        total += val
    return total


def calc_b_ratio(a: float, beta: float, b: float, bp: float, **kw) -> float:
    rhs = bracket(beta) ** (2 * (1 - b - bp)) / bracket(a) ** 0.5
    return calc_b_lhs(a, beta, b, bp, **kw) / rhs


def _check_b_pair(b, bp):
    if not (0.25 < b < 0.5 and 0.25 < bp < 0.5):
        raise ValueError(f"b, b' must lie in (1/4, 1/2), got {b}, {bp}")


def _calc_draw(rng: np.random.Generator, b_pair):
    mags = 10.0 ** rng.uniform(-2.0, 3.0, size=2)
    signs = rng.choice([-1.0, 1.0], size=2)
    a, beta = mags * signs
    if b_pair is None:
        b, bp = rng.uniform(0.25, 0.5, size=2)
        b, bp = float(np.clip(b, 0.2501, 0.4999)), float(np.clip(bp, 0.2501, 0.4999))
    else:
        b, bp = b_pair
    return float(a), float(beta), b, bp


# -- driver ---------------------------------------------------------------------------

_SPACE_TIME_RATIOS = {
    LemmaKind.LIN_FREE: _ratio_lin_free,
    LemmaKind.LIN_DUHAMEL: _ratio_lin_duhamel,
    LemmaKind.SMOOTHING: _ratio_smoothing,
    LemmaKind.L2_CONTRACT: _ratio_l2_contract,
    LemmaKind.L4_STRICHARTZ: _ratio_l4_strichartz,
}
_SCALED = (LemmaKind.L2_CONTRACT, LemmaKind.L4_STRICHARTZ)


def _fit_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x)), np.asarray(y), 1)[0])


def lemma_check(kind, trials: int, params: ModelParams, rng_seed: int, *,
                st_grid: SpaceTimeGrid | None = None, theta: float | None = None,
                rho: float | None = None, b_pair: tuple[float, float] | None = None,
                t_values=T_SCALES) -> LemmaVerdict:
    """Measure the worst left/right ratio of one linear estimate over random trials.

    Every trial is evaluated on ``st_grid`` and on its refinement (twice the
    points per axis, same boxes) using the same underlying random function.
    The verdict passes when both worst ratios are finite, the refined one grows
    by less than 10%, and, for the ``T^nu`` estimates, the fitted slope of
    ``log ratio`` against ``log T`` is positive.
    """
    kind = LemmaKind(kind)
    if trials < 10:
        raise ValueError("lemma_check needs at least 10 trials")
    if kind is LemmaKind.L4_STRICHARTZ:
        theta = 0.125 if theta is None else theta
        rho = 0.4 if rho is None else rho
        if not 0.0 <= theta <= 0.125:
            raise ValueError(f"L4_STRICHARTZ needs 0 <= theta <= 1/8, got {theta}")
        if not rho > 0.375:
            raise ValueError(f"L4_STRICHARTZ needs rho > 3/8, got {rho}")
    elif kind is LemmaKind.L2_CONTRACT:
        theta = 0.125 if theta is None else theta
        if not theta > 0.0:
            raise ValueError(f"L2_CONTRACT needs theta > 0, got {theta}")
    if b_pair is not None:
        _check_b_pair(*b_pair)

    slope = None
    if kind in (LemmaKind.CALC_A, LemmaKind.CALC_B):
        fn = calc_a_ratio if kind is LemmaKind.CALC_A else calc_b_ratio
        base, fine = [], []
        for i in range(trials):
            a, beta, b, bp = _calc_draw(_trial_rng(rng_seed, kind, i), b_pair)
            base.append(fn(a, beta, b, bp, epsrel=1e-7, limit=200))
            fine.append(fn(a, beta, b, bp, epsrel=1e-10, limit=800))
    else:
        st = st_grid or default_lemma_grid()
        st2 = refine(st)
        ratio_fn = _SPACE_TIME_RATIOS[kind]
        kw = dict(theta=theta, rho=rho, t_values=tuple(t_values))
        base, fine, logs = [], [], []
        for i in range(trials):
            rng = _trial_rng(rng_seed, kind, i)
            if kind is LemmaKind.LIN_FREE:
                core = _profile_core(st, rng)
            elif kind in _SCALED:
                core = _modulated_core(st, rng)
            else:
                core = _ensemble_core(st, rng)
            r1 = ratio_fn(core, st, params, **kw)
            r2 = ratio_fn(core, st2, params, **kw)
            base.extend(r1)
            fine.extend(r2)
            if kind in _SCALED:
                logs.append(np.log(r2))
        if kind in _SCALED:
            slope = _fit_slope(t_values, np.mean(logs, axis=0))

    worst, worst_fine = float(np.max(base)), float(np.max(fine))
    finite = math.isfinite(worst) and math.isfinite(worst_fine)
    growth = worst_fine / worst - 1.0 if finite and worst > 0 else float("inf")
    passed = finite and growth < MAX_GROWTH and (slope is None or slope > 0.0)
    return LemmaVerdict(kind, trials, worst, slope, bool(passed), worst_fine, float(growth))
