"""Trilinear forms, dyadic block bounds and sharpness sweeps.

Frequencies are pairs ``zeta = (tau, xi)``.  A triple ``(zeta_1, zeta_2,
zeta_3)`` lives on the plane ``zeta_1 + zeta_2 + zeta_3 = 0`` and each
component has modulation ``sigma_j = tau_j - xi_j^3``.

Block lower bounds are computed on characteristic-function profiles stored
as *slabs*: for every lattice frequency ``xi_k`` a profile holds at most two
closed ranges of ``tau`` indices.  Lattice sums of products of three slabs
reduce to counting integer points ``(i2, i3)`` in a box with ``i2 + i3`` in
a range, which is done in closed form.  This keeps blocks with very thin
slabs and very large ``tau`` ranges cheap and exact.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal

from .bourgain import (
    PHYSICAL,
    SPECTRAL,
    SpaceTimeField,
    SpaceTimeGrid,
    refine,
    spacetime_transform,
    embed_spectrum,
    xbs_norm,
    xbs_weight,
)
from .spectral_core import ModelParams, bracket, make_grid

__all__ = [
    "s_alpha",
    "modulations",
    "resonance",
    "kernel_K",
    "bilinear_ratio",
    "dual_bilinear_ratio",
    "DyadicBlock",
    "HypothesisError",
    "UnderResolvedLattice",
    "SlabProfile",
    "ExtremizerTriple",
    "extremizer_triple",
    "block_lattice",
    "trilinear_form",
    "trilinear_integral",
    "dyadic_block_bound",
    "block_lower_bound",
    "sweep_block",
    "sweep_ratio",
    "predicted_slope",
    "SweepReport",
    "sharpness_sweep",
    "write_block_table",
]

DIVERGENCE_THRESHOLD = 0.05
MAX_SWEEP_N1 = 2.0**8
DENSE_LIMIT = 1 << 22


def s_alpha(alpha: float) -> float:
    """Critical Sobolev index: ``-3/4`` for ``alpha <= 1/2``, else ``-3/(5 - 2 alpha)``."""
    if not (isinstance(alpha, (int, float)) and 0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must lie in (0, 1], got {alpha!r}")
    return -0.75 if alpha <= 0.5 else -3.0 / (5.0 - 2.0 * alpha)


def modulations(tau, tau1, xi, xi1):
    """``(sigma, sigma1, sigma2)`` for ``(tau, xi)``, ``(tau1, xi1)`` and their difference."""
    tau, tau1, xi, xi1 = (np.asarray(a, dtype=float) for a in (tau, tau1, xi, xi1))
    sig = tau - xi**3
    sig1 = tau1 - xi1**3
    sig2 = (tau - tau1) - (xi - xi1) ** 3
    if sig.ndim == 0:
        return float(sig), float(sig1), float(sig2)
    return sig, sig1, sig2


def resonance(xi, xi1):
    """``3 xi xi1 (xi - xi1)``, the value of ``sigma1 + sigma2 - sigma``."""
    return 3.0 * np.asarray(xi) * np.asarray(xi1) * (np.asarray(xi) - np.asarray(xi1))


def _disp_bracket(sig, xi, alpha):
    # < i sigma + |xi|^(2 alpha) >
    return np.sqrt(1.0 + sig**2 + np.abs(xi) ** (4.0 * alpha))


def kernel_K(tau, tau1, xi, xi1, params: ModelParams, b_out: float | None = None,
             b_in: float = 0.5):
    """Weight of the trilinear form equivalent to the bilinear estimate.

    ``|xi| <xi>^s <i sigma + |xi|^2a>^-b_out`` times, for ``eta = xi1`` and
    ``eta = xi - xi1``, ``<eta>^-s <i sigma_eta + |eta|^2a>^-b_in``;
    ``b_out`` defaults to ``1/2 - delta``.
    """
    if b_out is None:
        b_out = 0.5 - params.delta
    a, s = params.alpha, params.s
    xi = np.asarray(xi, dtype=float)
    xi1 = np.asarray(xi1, dtype=float)
    sig, sig1, sig2 = modulations(tau, tau1, xi, xi1)
    xi2 = xi - xi1
    out = (np.abs(xi) * bracket(xi) ** s * _disp_bracket(sig, xi, a) ** -b_out
           * bracket(xi1) ** -s * _disp_bracket(sig1, xi1, a) ** -b_in
           * bracket(xi2) ** -s * _disp_bracket(sig2, xi2, a) ** -b_in)
    return float(out) if np.ndim(out) == 0 else out


# -- bilinear ratio ------------------------------------------------------------------

def _spectral(u: SpaceTimeField) -> SpaceTimeField:
    return spacetime_transform(u) if u.representation == PHYSICAL else u


def bilinear_ratio(u: SpaceTimeField, v: SpaceTimeField, params: ModelParams) -> float:
    """``||d_x(uv)||_{X^{-1/2+delta,s}} / (||u||_{X^{1/2,s}} ||v||_{X^{1/2,s}})``.

    ``u`` and ``v`` are trigonometric polynomials on the lattice; their
    product is formed on the lattice refined twice in each axis, which
    represents it without aliasing.
    """
    if u.st_grid != v.st_grid:
        raise ValueError("u and v must share a lattice")
    st = u.st_grid
    a, s, d = params.alpha, params.s, params.delta
    uh, vh = _spectral(u), _spectral(v)
    nu, nv = xbs_norm(uh, 0.5, s, a), xbs_norm(vh, 0.5, s, a)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("zero denominator: u and v must be nonzero")
    fine = refine(st)
    up = spacetime_transform(SpaceTimeField(fine, embed_spectrum(uh.values, fine.shape), SPECTRAL),
                             "inverse")
    vp = spacetime_transform(SpaceTimeField(fine, embed_spectrum(vh.values, fine.shape), SPECTRAL),
                             "inverse")
    prod = spacetime_transform(SpaceTimeField(fine, up.values * vp.values, PHYSICAL))
    dx_prod = SpaceTimeField(fine, 1j * fine.grid_x.frequencies[None, :] * prod.values, SPECTRAL)
    return xbs_norm(dx_prod, -0.5 + d, s, a) / (nu * nv)


def dual_bilinear_ratio(u: SpaceTimeField, v: SpaceTimeField, params: ModelParams) -> float:
    """The same ratio through the kernel: ``||G||_{L2} / (2 pi ||f|| ||g||)``.

    ``G(zeta) = sum_{zeta1} K(zeta, zeta1) f(zeta1) g(zeta - zeta1)`` is the
    supremum over unit ``h`` of the kernel-weighted trilinear form; ``f`` and
    ``g`` are ``u`` and ``v`` carrying their ``X^{1/2,s}`` weights.  Brute
    force, meant for small lattices.
    """
    st = u.st_grid
    a, s = params.alpha, params.s
    w = xbs_weight(st, 0.5, s, a)
    f = w * _spectral(u).values
    g = w * _spectral(v).values
    fine = refine(st)
    nt, nx = st.shape
    G = np.zeros(fine.shape, dtype=complex)
    tau, xi = st.tau_frequencies, st.grid_x.frequencies
    for i in range(nt):
        for j in range(nx):
            if f[i, j] == 0:
                continue
            # zeta1 + zeta2 lands at index (i + i2, j + j2) of the refined lattice
            rows = i + np.arange(nt)
            cols = j + np.arange(nx)
            T = tau[i] + tau[:, None]
            X = xi[j] + xi[None, :]
            K = kernel_K(T, tau[i], X, xi[j], params)
            G[np.ix_(rows, cols)] += K * f[i, j] * g
    G *= st.cell
    nf = math.sqrt(st.cell * np.sum(np.abs(f) ** 2))
    ng = math.sqrt(st.cell * np.sum(np.abs(g) ** 2))
    nG = math.sqrt(fine.cell * np.sum(np.abs(G) ** 2))
    return nG / (2.0 * math.pi * nf * ng)


# -- dyadic blocks -------------------------------------------------------------------

def _is_dyadic(x) -> bool:
    if not (isinstance(x, (int, float)) and x > 0 and math.isfinite(x)):
        return False
    m, _ = math.frexp(x)
    return m == 0.5


@dataclass(frozen=True)
class DyadicBlock:
    n1: float
    n2: float
    n3: float
    l1: float
    l2: float
    l3: float

    def __post_init__(self):
        for name in ("n1", "n2", "n3", "l1", "l2", "l3"):
            if not _is_dyadic(getattr(self, name)):
                raise ValueError(f"{name} must be a power of two, got {getattr(self, name)!r}")

    @property
    def ns(self) -> tuple[float, float, float]:
        return (self.n1, self.n2, self.n3)

    @property
    def ls(self) -> tuple[float, float, float]:
        return (self.l1, self.l2, self.l3)

    @property
    def n_sorted(self) -> tuple[float, float, float]:
        """``(N_max, N_med, N_min)``."""
        return tuple(sorted(self.ns, reverse=True))

    @property
    def l_sorted(self) -> tuple[float, float, float]:
        return tuple(sorted(self.ls, reverse=True))

    @property
    def resonance(self) -> float:
        return self.n1 * self.n2 * self.n3


class HypothesisError(ValueError):
    """A dyadic block violates the hypotheses of the requested estimate."""


class UnderResolvedLattice(ValueError):
    def __init__(self, message: str, required_t_box: float, required_n_time: int,
                 required_n_points: int | None = None):
        super().__init__(f"{message}; needs t_box >= {required_t_box:.6g} "
                         f"and n_time >= {required_n_time}")
        self.required_t_box = required_t_box
        self.required_n_time = required_n_time
        self.required_n_points = required_n_points


def _sim(a, b) -> bool:
    return b / 2.0 <= a <= 2.0 * b


def _lesssim(a, b) -> bool:
    return a <= 4.0 * b


def _ll(a, b) -> bool:
    return a <= b / 4.0


def _require(cond: bool, what: str):
    if not cond:
        raise HypothesisError(f"hypothesis violated: {what}")


def _plus_minus_index(block: DyadicBlock) -> int | None:
    n, l, r = block.ns, block.ls, block.resonance
    for i in range(3):
        others = [j for j in range(3) if j != i]
        j, k = others
        if (_sim(n[j], n[k]) and _ll(n[i], n[j]) and _ll(n[i], n[k]) and _sim(l[i], r)
                and _lesssim(l[j], l[i]) and _lesssim(l[k], l[i])):
            return i
    return None


def dyadic_block_bound(block: DyadicBlock, case: str) -> float:
    """Closed-form bound of the block multiplier norm.

    ``case`` is ``"plus_plus"``, ``"plus_minus"`` or ``"other"``.  Hypotheses are
    checked with ``A ~ B`` meaning ``B/2 <= A <= 2B``, ``A <~ B`` meaning
    ``A <= 4B`` and ``A << B`` meaning ``A <= B/4``.
    """
    nmax, nmed, nmin = block.n_sorted
    lmax, lmed, lmin = block.l_sorted
    r = block.resonance
    _require(_sim(nmax, nmed), "N_max ~ N_med")
    _require(_sim(lmax, max(r, lmed)), "L_max ~ max(N1 N2 N3, L_med)")
    if case == "plus_plus":
        _require(_sim(nmax, nmin), "N_max ~ N_min")
        _require(_sim(lmax, r), "L_max ~ N1 N2 N3")
        return math.sqrt(lmin) * nmax**-0.25 * lmed**0.25
    if case == "plus_minus":
        _require(_plus_minus_index(block) is not None,
                 "N_i << N_j ~ N_k with L_i ~ N1 N2 N3 >~ L_j, L_k for some ordering")
        return math.sqrt(lmin) / nmax * math.sqrt(min(r, nmax / nmin * lmed))
    if case == "other":
        return math.sqrt(lmin) / nmax * math.sqrt(min(r, lmed))
    raise ValueError(f"case must be plus_plus, plus_minus or other, got {case!r}")


# -- slab profiles -----------------------------------------------------------------------

def _ceil_index(x: np.ndarray, h: float) -> np.ndarray:
    q = x / h
    return np.ceil(q - 1e-9 * np.maximum(1.0, np.abs(q))).astype(np.int64)


def _floor_index(x: np.ndarray, h: float) -> np.ndarray:
    q = x / h
    return np.floor(q + 1e-9 * np.maximum(1.0, np.abs(q))).astype(np.int64)


@dataclass
class SlabProfile:
    """Characteristic function of a union of closed ``tau`` ranges per frequency.

    ``k[r]`` is a lattice frequency index (``xi = k dxi``); ``iv[r, j]`` is an
    inclusive range ``[lo, hi]`` of ``tau`` indices (``tau = m dtau``), empty
    when ``lo > hi``.  Ranges in one row are disjoint.
    """

    st_grid: SpaceTimeGrid
    k: np.ndarray
    iv: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.int64)
        self.iv = np.asarray(self.iv, dtype=np.int64).reshape(len(self.k), -1, 2)

    @classmethod
    def from_array(cls, st_grid: SpaceTimeGrid, arr: np.ndarray) -> "SlabProfile":
        """Run-length encoding of a dense 0/1 array in the ``[tau, xi]`` layout."""
        arr = np.asarray(arr)
        nt, nx = st_grid.shape
        if arr.shape != (nt, nx):
            raise ValueError(f"expected shape {(nt, nx)}, got {arr.shape}")
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("profile entries must be 0 or 1")
        runs = []
        for j in range(nx):
            col = np.concatenate([[0], arr[:, j].astype(np.int8), [0]])
            edges = np.flatnonzero(np.diff(col))
            runs.append(np.stack([edges[::2], edges[1::2] - 1], axis=-1) - nt // 2)
        width = max(1, max(len(r) for r in runs))
        iv = np.tile(np.array([0, -1], dtype=np.int64), (nx, width, 1))
        for j, r in enumerate(runs):
            iv[j, :len(r)] = r
        return cls(st_grid, np.arange(nx) - nx // 2, iv)

    def counts(self) -> np.ndarray:
        return np.maximum(self.iv[..., 1] - self.iv[..., 0] + 1, 0).sum(axis=1)

    def count(self) -> int:
        return int(self.counts().sum())

    def l2_norm(self) -> float:
        return math.sqrt(self.count() * self.st_grid.cell)

    def is_empty(self) -> bool:
        return self.count() == 0

    def xi(self) -> np.ndarray:
        return self.k * self.st_grid.grid_x.dxi

    def shell(self, n: float, l: float) -> "SlabProfile":
        """Restriction to ``n/2 <= |xi| <= 2n`` and ``l/2 <= |sigma| <= 2l``."""
        st = self.st_grid
        xi = self.xi()
        keep = (np.abs(xi) >= 0.5 * n * (1 - 1e-12)) & (np.abs(xi) <= 2.0 * n * (1 + 1e-12))
        k, iv, xi = self.k[keep], self.iv[keep], xi[keep]
        c = xi**3
        pieces = []
        for lo_s, hi_s in ((0.5 * l, 2.0 * l), (-2.0 * l, -0.5 * l)):
            a = _ceil_index(c + lo_s, st.dtau)
            b = _floor_index(c + hi_s, st.dtau)
            for j in range(iv.shape[1]):
                pieces.append(np.stack([np.maximum(iv[:, j, 0], a), np.minimum(iv[:, j, 1], b)], axis=-1))
        return SlabProfile(st, k, np.stack(pieces, axis=1))

    def index_bounds(self) -> tuple[int, int, int, int]:
        """``(k_min, k_max, m_min, m_max)`` over the nonempty part."""
        nonempty = self.iv[..., 1] >= self.iv[..., 0]
        rows = nonempty.any(axis=1)
        if not rows.any():
            return (0, -1, 0, -1)
        lo = self.iv[..., 0][nonempty]
        hi = self.iv[..., 1][nonempty]
        return int(self.k[rows].min()), int(self.k[rows].max()), int(lo.min()), int(hi.max())

    def fits(self) -> bool:
        st = self.st_grid
        k0, k1, m0, m1 = self.index_bounds()
        if k1 < k0:
            return True
        nx, nt = st.grid_x.n_points, st.n_time
        return -nx // 2 <= k0 and k1 < nx // 2 and -nt // 2 <= m0 and m1 < nt // 2

    def to_array(self) -> np.ndarray:
        """Dense 0/1 array in the ``[tau, xi]`` layout of the lattice."""
        st = self.st_grid
        nt, nx = st.shape
        if nt * nx > DENSE_LIMIT:
            raise MemoryError(f"lattice {st.shape} too large for a dense profile")
        if not self.fits():
            raise ValueError("profile support exceeds the lattice window")
        out = np.zeros((nt, nx))
        for r, k in enumerate(self.k):
            for lo, hi in self.iv[r]:
                if lo <= hi:
                    out[lo + nt // 2: hi + nt // 2 + 1, k + nx // 2] = 1.0
        return out

    def to_field(self) -> SpaceTimeField:
        return SpaceTimeField(self.st_grid, self.to_array(), SPECTRAL)


@dataclass
class ExtremizerTriple:
    """The three test profiles of a (+-) block, in slab form (see :class:`SlabProfile`)."""

    f1_hat: SlabProfile
    f2_hat: SlabProfile
    f3_hat: SlabProfile
    block: DyadicBlock

    @property
    def profiles(self) -> tuple[SlabProfile, SlabProfile, SlabProfile]:
        return (self.f1_hat, self.f2_hat, self.f3_hat)

    def dense(self) -> tuple[SpaceTimeField, SpaceTimeField, SpaceTimeField]:
        return tuple(p.to_field() for p in self.profiles)


def _frequency_rows(st: SpaceTimeGrid, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    dxi = st.grid_x.dxi
    k = np.arange(_ceil_index(np.array(lo), dxi), _floor_index(np.array(hi), dxi) + 1)
    return k, k * dxi


def _block_t_box(lmin: float) -> float:
    return max(4.0, 16.0 * math.pi / lmin)


def _required_n_time(tau_max: float, t_box: float) -> int:
    need = 2.0 * (tau_max * t_box / math.pi + 2.0)
    return 1 << max(4, math.ceil(math.log2(need)))


def extremizer_triple(block: DyadicBlock, st_grid: SpaceTimeGrid) -> ExtremizerTriple:
    """Characteristic functions of the three slabs that saturate the (+-) bound.

    With ``N1`` the small frequency:

    * ``f1``: ``N1/2 <= |xi| <= N1`` and ``|tau - 3 N2^2 xi| <= N1^2 N2``;
    * ``f2``: ``|xi - N2| <= N1`` and ``|tau - xi^3| <= L2``;
    * ``f3``: ``|xi + N2| <= N1`` and ``|tau - xi^3| <= L3``.
    """
    n1, n2, n3 = block.ns
    l1, l2, l3 = block.ls
    _require(_sim(n2, n3), "N2 ~ N3")
    _require(_lesssim(n1, n2), "N1 <~ N2")
    _require(_sim(l1, block.resonance), "L1 ~ N1 N2 N3")
    _require(_lesssim(l2, l1) and _lesssim(l3, l1), "L1 >~ L2, L3")
    st = st_grid
    lmin = min(l2, l3)
    tau_max = max(3 * n2**2 * n1 + n1**2 * n2, (n2 + n1) ** 3 + max(l2, l3))
    t_need = max(st.t_box, _block_t_box(lmin))
    if not st.dtau < lmin:
        raise UnderResolvedLattice(f"tau spacing {st.dtau:.3g} does not resolve L = {lmin:.3g}",
                                   t_need, _required_n_time(tau_max, t_need))
    if st.grid_x.dxi > n1 / 4.0:
        raise UnderResolvedLattice(f"xi spacing {st.grid_x.dxi:.3g} does not resolve N1 = {n1:.3g}",
                                   st.t_box, _required_n_time(tau_max, st.t_box))
    dtau = st.dtau
    parts = []
    for sign in (1.0, -1.0):
        k, xi = _frequency_rows(st, *sorted((sign * n1 / 2.0, sign * n1)))
        c = 3.0 * n2**2 * xi
        w = n1**2 * n2
        parts.append((k, np.stack([_ceil_index(c - w, dtau), _floor_index(c + w, dtau)], axis=-1)))
    k1 = np.concatenate([p[0] for p in parts])
    iv1 = np.concatenate([p[1] for p in parts])
    order = np.argsort(k1)
    f1 = SlabProfile(st, k1[order], iv1[order])

    def slab(center, half_width):
        k, xi = _frequency_rows(st, center - n1, center + n1)
        c = xi**3
        return SlabProfile(st, k, np.stack([_ceil_index(c - half_width, dtau),
                                            _floor_index(c + half_width, dtau)], axis=-1))

    f2 = slab(n2, l2)
    f3 = slab(-n2, l3)
    for name, p in (("f1", f1), ("f2", f2), ("f3", f3)):
        if p.is_empty():
            raise UnderResolvedLattice(f"{name} has empty support", t_need,
                                       _required_n_time(tau_max, t_need))
        if not p.fits():
            nt_req = _required_n_time(tau_max, st.t_box)
            raise UnderResolvedLattice(f"{name} exceeds the lattice window", st.t_box, nt_req)
    return ExtremizerTriple(f1, f2, f3, block)


def block_lattice(block: DyadicBlock, refinement: int = 1) -> SpaceTimeGrid:
    """Lattice fine enough for :func:`block_lower_bound` on ``block``.

    ``dxi`` is the largest power of two below
    ``min(N_min / 64, L_min / (64 N_max N_min))`` and ``dtau <= L_min / 16``;
    ``refinement`` divides both spacings further.  Sizes cover all supports;
    frequency arrays are never materialized by the slab code.
    """
    nmax, _, nmin = block.n_sorted
    lmin = block.l_sorted[2]
    target = min(nmin / 64.0, lmin / (64.0 * nmax * nmin)) / refinement
    dxi = 2.0 ** math.floor(math.log2(target))
    t_box = _block_t_box(lmin) * refinement
    xi_max = 2.0 * nmax + nmin
    n_points = 1 << max(3, math.ceil(math.log2(2.0 * (xi_max / dxi + 2.0))))
    tau_max = (xi_max + nmin) ** 3 + 2.0 * max(block.ls) + 3.0 * nmax**2 * nmin
    return SpaceTimeGrid(make_grid(n_points, 2.0 * math.pi / dxi), _required_n_time(tau_max, t_box),
                         t_box)


# -- trilinear sums -------------------------------------------------------------------

def trilinear_form(f1: np.ndarray, f2: np.ndarray, f3: np.ndarray, cell: float,
                   weight=None) -> float:
    """``sum_{zeta1 + zeta2 + zeta3 = 0} m f1(zeta1) f2(zeta2) f3(zeta3) cell^2``.

    Arrays share one lattice in the ``[tau, xi]`` layout with index ``i``
    standing for lattice coordinate ``i - n/2``.  ``weight`` is ``None`` (the
    constant 1) or a callable ``weight(zeta1_idx, zeta2_idx)`` returning
    ``m`` on index arrays.
    """
    nt, nx = f1.shape
    if weight is None:
        conv = signal.convolve(f1, f2, mode="full", method="direct" if nt * nx <= 4096 else "auto")
        # zeta3 at index (i, j) pairs with zeta1 + zeta2 = -zeta3, full-conv index (3n/2 - i)
        ri = 3 * nt // 2 - np.arange(nt)
        rj = 3 * nx // 2 - np.arange(nx)
        ok_i = (ri >= 0) & (ri < 2 * nt - 1)
        ok_j = (rj >= 0) & (rj < 2 * nx - 1)
        c = np.zeros((nt, nx), dtype=conv.dtype)
        c[np.ix_(ok_i, ok_j)] = conv[np.ix_(ri[ok_i], rj[ok_j])]
        return float(np.real(np.sum(f3 * c)) * cell**2)
    total = 0.0
    ti = np.arange(nt)[:, None]
    xj = np.arange(nx)[None, :]
    for a in range(nt):
        for b in range(nx):
            if f1[a, b] == 0:
                continue
            # zeta3 index: -(zeta1 + zeta2) -> i3 = 3n/2 - a - i2 (per axis)
            i3 = 3 * (nt // 2) - a - ti
            j3 = 3 * (nx // 2) - b - xj
            ok = (i3 >= 0) & (i3 < nt) & (j3 >= 0) & (j3 < nx)
            vals = np.where(ok, f3[np.clip(i3, 0, nt - 1), np.clip(j3, 0, nx - 1)], 0.0)
            m = weight((a, b), (ti, xj))
            total += float(np.real(np.sum(m * f1[a, b] * f2 * vals)))
    return total * cell**2


def _tri_count(a2, b2, a3, b3, c, d):
    """Number of integer pairs in ``[a2,b2] x [a3,b3]`` with sum in ``[c, d]`` (elementwise)."""
    m = b2 - a2 + 1
    n = b3 - a3 + 1

    def S(y):
        y = np.maximum(y, -1)
        return (y + 1) * (y + 2) // 2

    def G(y):
        return S(y) - S(y - m) - S(y - n) + S(y - m - n)

    lo = c - a2 - a3
    hi = d - a2 - a3
    val = G(hi) - G(lo - 1)
    return np.where((m > 0) & (n > 0) & (d >= c), val, 0)


def _slab_sum(f1: SlabProfile, f2: SlabProfile, f3: SlabProfile, chunk: int = 256) -> float:
    st = f1.st_grid
    if f1.k.size == 0 or f2.k.size == 0 or f3.k.size == 0:
        return 0.0
    kmin, kmax = int(f1.k.min()), int(f1.k.max())
    lookup = np.full(kmax - kmin + 1, -1, dtype=np.int64)
    lookup[f1.k - kmin] = np.arange(f1.k.size)
    total = 0
    i3 = f3.iv
    for start in range(0, f2.k.size, chunk):
        k2 = f2.k[start:start + chunk]
        i2 = f2.iv[start:start + chunk]
        k1 = -k2[:, None] - f3.k[None, :]
        inside = (k1 >= kmin) & (k1 <= kmax)
        row = np.where(inside, lookup[np.clip(k1 - kmin, 0, kmax - kmin)], -1)
        p2, p3 = np.nonzero(row >= 0)
        if p2.size == 0:
            continue
        i1 = f1.iv[row[p2, p3]]                         # (P, J1, 2)
        A2 = i2[p2][:, None, :, None, :]                # (P, 1, J2, 1, 2)
        A3 = i3[p3][:, None, None, :, :]                # (P, 1, 1, J3, 2)
        A1 = i1[:, :, None, None, :]                    # (P, J1, 1, 1, 2)
        cnt = _tri_count(A2[..., 0], A2[..., 1], A3[..., 0], A3[..., 1], -A1[..., 1], -A1[..., 0])
        total += int(cnt.sum())
    return float(total) * st.cell**2


def trilinear_integral(triple: ExtremizerTriple, multiplier: str = "block",
                       params: ModelParams | None = None) -> float:
    """Lattice value of ``int_{Gamma_3} m f1(zeta1) f2(zeta2) f3(zeta3)``.

    ``multiplier``:

    * ``"none"``: ``m = 1``;
    * ``"block"``: ``m`` is the characteristic function of the block
      ``|xi_j| ~ N_j``, ``|sigma_j| ~ L_j`` (factor-2 shells), evaluated
      exactly by slab counting;
    * ``"kernel"``: ``m = K(tau, tau1, xi, xi1)`` with ``(tau, xi) = zeta1 + zeta2``
      and ``(tau1, xi1) = zeta1``; needs ``params`` and a small lattice.
    """
    f1, f2, f3 = triple.profiles
    if multiplier == "none":
        return _slab_sum(f1, f2, f3)
    if multiplier == "block":
        b = triple.block
        return _slab_sum(f1.shell(b.n1, b.l1), f2.shell(b.n2, b.l2), f3.shell(b.n3, b.l3))
    if multiplier == "kernel":
        if params is None:
            raise ValueError("kernel-weighted form needs params")
        st = f1.st_grid
        arrays = [p.to_array() for p in triple.profiles]
        return trilinear_form(*arrays, st.cell, weight=_kernel_weight(st, params))
    raise ValueError(f"unknown multiplier {multiplier!r}")


def _kernel_weight(st: SpaceTimeGrid, params: ModelParams):
    tau = st.tau_frequencies
    xi = st.grid_x.frequencies
    nt, nx = st.shape

    def weight(z1, z2):
        a, b = z1
        ti, xj = z2
        t1, x1 = tau[a], xi[b]
        t2 = (ti - nt // 2) * st.dtau
        x2 = (xj - nx // 2) * st.grid_x.dxi
        return kernel_K(t1 + t2, t1, x1 + x2, x1, params)

    return weight


def block_lower_bound(block: DyadicBlock, st_grid: SpaceTimeGrid | None = None,
                      params: ModelParams | None = None) -> float:
    """Block-restricted trilinear form on the normalized extremizers.

    Each extremizer is cut to its block shell and divided by its L2 norm, so
    the value is a lower bound for the multiplier norm of the block.
    ``params`` is accepted for interface symmetry; the block multiplier does
    not depend on it.
    """
    st = st_grid or block_lattice(block)
    tri = extremizer_triple(block, st)
    shells = [p.shell(n, l) for p, n, l in zip(tri.profiles, block.ns, block.ls)]
    norms = [p.l2_norm() for p in shells]
    if min(norms) == 0.0:
        raise UnderResolvedLattice("block shell misses an extremizer", st.t_box, st.n_time)
    return _slab_sum(*shells) / (norms[0] * norms[1] * norms[2])


# -- sharpness sweeps -----------------------------------------------------------------

def _nearest_dyadic(x: float) -> float:
    lo = 2.0 ** math.floor(math.log2(x))
    hi = 2.0 * lo
    return lo if x - lo <= hi - x else hi


def sweep_block(n1: float, alpha: float) -> tuple[DyadicBlock, tuple[float, ...]]:
    """Critical-region configuration for large frequency ``n1``.

    Returns the block in extremizer labels (small frequency first) and the
    tuple ``(N1, N2, N3, L1, L2, L3)`` with ``N3`` small and ``N1 = N2``.
    """
    if alpha <= 0.5:
        N3 = 1.0
        L1 = L2 = _nearest_dyadic(N3**2 * n1)
    else:
        N3 = _nearest_dyadic(n1 ** (alpha - 0.5))
        L1 = L2 = _nearest_dyadic(n1 ** (2.0 * alpha))
    L3 = N3 * n1**2
    blk = DyadicBlock(N3, n1, n1, L3, L1, L2)
    return blk, (n1, n1, N3, L1, L2, L3)


def sweep_ratio(labels, measured: float, s: float, alpha: float, delta: float = 0.0) -> float:
    """Weighted supremand with ``measured`` in place of the block multiplier norm."""
    N1, N2, N3, L1, L2, L3 = labels
    num = N3 ** (1.0 + s) * N1 ** (-2.0 * s) * measured
    den = (max(L3, N3 ** (2 * alpha)) ** (0.5 - delta) * max(L1, N1 ** (2 * alpha)) ** 0.5
           * max(L2, N2 ** (2 * alpha)) ** 0.5)
    return num / den


def predicted_slope(s: float, alpha: float) -> float:
    if alpha <= 0.5:
        return -2.0 * s - 1.5
    return -2.0 * s - 1.25 - alpha / 2.0 + (alpha - 0.5) * (s + 0.5)


def _fit(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass
class SweepReport:
    s: float
    alpha: float
    n1_values: list[float]
    ratios: list[float]
    fitted_slope: float
    predicted_slope: float
    verdict: str
    lower_bounds: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.n1_values) != len(self.ratios):
            raise ValueError("n1_values and ratios must have equal length")
        if self.verdict not in ("bounded", "divergent"):
            raise ValueError(f"verdict must be bounded or divergent, got {self.verdict!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepReport":
        return cls(**d)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["N1", "ratio", "log2N1", "logratio"])
            for n, r in zip(self.n1_values, self.ratios):
                w.writerow([repr(float(n)), repr(float(r)), repr(math.log2(n)), repr(math.log(r))])


def _sweep_point(args):
    n1, alpha = args
    blk, labels = sweep_block(n1, alpha)
    return labels, block_lower_bound(blk)


def _resolvable(n1: float, alpha: float) -> bool:
    if n1 > MAX_SWEEP_N1:
        return False
    blk, _ = sweep_block(n1, alpha)
    return _plus_minus_index(blk) == 0


def sharpness_sweep(s: float, alpha: float, n1_list, params: ModelParams | None = None,
                    jobs: int = 1) -> SweepReport:
    """Measure the growth in ``N1`` of the weighted block ratio at regularity ``s``.

    ``params`` only supplies defaults; the ratio uses ``delta = 0``.  Points
    that exceed the desk-scale cap ``N1 <= 2^8`` or leave the (+-) regime are
    dropped; fewer than three remaining points is an error.
    """
    n1s = [float(n) for n in n1_list]
    if any(not _is_dyadic(n) for n in n1s):
        raise ValueError("n1_list must contain powers of two")
    if any(b <= a for a, b in zip(n1s, n1s[1:])):
        raise ValueError("n1_list must be increasing")
    s_alpha(alpha)
    pts = [n for n in n1s if _resolvable(n, alpha)]
    if len(pts) < 3:
        raise ValueError(f"only {len(pts)} resolvable N1 values; need at least 3")
    tasks = [(n, alpha) for n in pts]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    ratios = [sweep_ratio(lab, b, s, alpha) for lab, b in results]
    slope = _fit(pts, ratios)
    verdict = "divergent" if slope > DIVERGENCE_THRESHOLD else "bounded"
    return SweepReport(float(s), float(alpha), pts, ratios, slope, predicted_slope(s, alpha),
                       verdict, [b for _, b in results])


def write_block_table(rows, path) -> None:
    """CSV of ``(block, bound, measured)`` rows with columns N1..L3, bound, measured, ratio."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N1", "N2", "N3", "L1", "L2", "L3", "bound", "measured", "ratio"])
        for blk, bound, measured in rows:
            w.writerow([repr(float(v)) for v in (*blk.ns, *blk.ls, bound, measured, measured / bound)])
