"""Acceptance suite: one test per criterion, summarized as PASS/FAIL lines.

Run under pytest (the summary appears in the terminal report) or directly with
``python3 tests/test_acceptance.py``.
"""

import math
import sys
import warnings

import numpy as np
import pytest

from dkdv.bilinear_lab import (
    DyadicBlock,
    ExtremizerTriple,
    SlabProfile,
    block_lower_bound,
    dyadic_block_bound,
    modulations,
    predicted_slope,
    resonance,
    s_alpha,
    sharpness_sweep,
    trilinear_form,
    trilinear_integral,
)
from dkdv.bourgain import LemmaKind, SpaceTimeGrid, lemma_check
from dkdv.cli import default_block_family
from dkdv.evolution import (
    PicardConfig,
    energy_rate,
    is_nonincreasing,
    lattice_snapshots,
    picard_solve,
    solve_ivp,
    transform_field,
)
from dkdv.spectral_core import Field, ModelParams, make_grid, sobolev_norm

N1_LIST = [16, 32, 64, 128, 256]


def crit(number, title):
    return pytest.mark.criterion(number, title)


def _brute(f1, f2, f3, cell):
    nt, nx = f1.shape
    total = 0.0
    for a in range(nt):
        for b in range(nx):
            for c in range(nt):
                for d in range(nx):
                    e = 3 * (nt // 2) - a - c
                    f = 3 * (nx // 2) - b - d
                    if 0 <= e < nt and 0 <= f < nx:
                        total += f1[a, b] * f2[c, d] * f3[e, f]
    return total * cell**2


@crit(1, "critical index formula is exact")
def test_criterion_01_critical_index():
    for a in (0.1, 0.3, 0.5):
        assert s_alpha(a) == -0.75
    for a in (0.6, 0.75, 1.0):
        assert s_alpha(a) == -3.0 / (5.0 - 2.0 * a)
    assert s_alpha(1.0) == -1.0


@crit(2, "sharpness sweep, alpha <= 1/2 branch")
def test_criterion_02_sweep_low_alpha():
    div = sharpness_sweep(-0.9, 0.25, N1_LIST)
    bnd = sharpness_sweep(-0.7, 0.25, N1_LIST)
    print(f"alpha=1/4 s=-0.9 slope={div.fitted_slope:.4f}; s=-0.7 slope={bnd.fitted_slope:.4f}")
    assert div.n1_values == [float(n) for n in N1_LIST]
    assert abs(div.fitted_slope - 0.3) <= 0.15 and div.verdict == "divergent"
    assert bnd.fitted_slope <= 0.05 and bnd.verdict == "bounded"


@crit(3, "sharpness sweep, alpha > 1/2 branch")
def test_criterion_03_sweep_high_alpha():
    div = sharpness_sweep(-1.1, 1.0, N1_LIST)
    bnd = sharpness_sweep(-0.9, 1.0, N1_LIST)
    print(f"alpha=1 s=-1.1 slope={div.fitted_slope:.4f} (pred {div.predicted_slope:.3f}); "
          f"s=-0.9 slope={bnd.fitted_slope:.4f} (pred {bnd.predicted_slope:.3f})")
    assert div.verdict == "divergent" and bnd.verdict == "bounded"
    for rep in (div, bnd):
        assert np.sign(rep.fitted_slope) == np.sign(predicted_slope(rep.s, 1.0))


@crit(4, "block bound sharpness is uniform across scales")
def test_criterion_04_block_sharpness():
    blocks = default_block_family()
    nmax = sorted({b.n_sorted[0] for b in blocks})
    assert len(blocks) >= 10 and nmax[0] == 4 and nmax[-1] == 128
    ratios = [block_lower_bound(b) / dyadic_block_bound(b, "plus_minus") for b in blocks]
    print(f"{len(blocks)} blocks, ratio range [{min(ratios):.4f}, {max(ratios):.4f}], "
          f"C/c = {max(ratios) / min(ratios):.4f}")
    assert min(ratios) > 0 and max(ratios) / min(ratios) <= 10


@crit(5, "trilinear integral equals brute-force constrained sum")
def test_criterion_05_trilinear_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    # n_time >= 16 is required by the lattice type, so profiles live in a central
    # window of at most 8 points per axis and vanish elsewhere
    for wt, wx in ((4, 4), (8, 4), (8, 8)):
        st = SpaceTimeGrid(make_grid(16, 2 * math.pi), 16, 2.0)
        win = np.zeros(st.shape)
        win[8 - wt // 2:8 + wt // 2, 8 - wx // 2:8 + wx // 2] = 1.0
        triples = [[win] * 3] + [[rng.integers(0, 2, st.shape) * win for _ in range(3)]
                                 for _ in range(4)]
        for fs in triples:
            tri = ExtremizerTriple(*(SlabProfile.from_array(st, f) for f in fs),
                                   DyadicBlock(1, 1, 1, 1, 1, 1))
            ref = _brute(*fs, st.cell)
            for got in (trilinear_integral(tri, "none"), trilinear_form(*fs, st.cell)):
                worst = max(worst, abs(got - ref) / max(abs(ref), 1e-300))
    print(f"worst relative error {worst:.3e}")
    assert worst <= 1e-12


def _random_data(grid, rng):
    xi = grid.frequencies
    kmax = rng.integers(4, 12)
    c = np.where(np.abs(grid.wavenumbers) <= kmax,
                 rng.standard_normal(xi.size) + 1j * rng.standard_normal(xi.size), 0)
    u = np.fft.ifft(np.fft.ifftshift(c)).real
    u = rng.uniform(0.2, 2.0) * u / np.abs(u).max() + rng.uniform(-0.5, 0.5)
    return Field(grid, u)


@crit(6, "solver dissipation, mean conservation and energy rate")
def test_criterion_06_dissipation():
    rng = np.random.default_rng(6)
    g = make_grid(128, 16 * math.pi)
    worst_rate, worst_mean = 0.0, 0.0
    for run in range(20):
        alpha = (0.25, 0.5, 1.0)[run % 3]
        p = ModelParams(alpha=alpha)
        u0 = _random_data(g, rng)
        tr = solve_ivp(u0, 0.1, 1e-3, p)
        l2 = tr.l2_norms()
        assert is_nonincreasing(l2, rtol=1e-9), f"run {run}"
        m = tr.means()
        worst_mean = max(worst_mean, max(abs(v - m[0]) for v in m))
        for i in range(len(l2) - 1):
            h = tr.times[i + 1] - tr.times[i]
            discrete = (l2[i + 1] ** 2 - l2[i] ** 2) / h
            exact = 0.5 * (energy_rate(tr.states[i], alpha) + energy_rate(tr.states[i + 1], alpha))
            worst_rate = max(worst_rate, abs(discrete / exact - 1.0))
    print(f"worst mean drift {worst_mean:.2e}, worst energy-rate mismatch {worst_rate:.2e}")
    assert worst_mean <= 1e-12
    assert worst_rate <= 0.01


@crit(7, "ETD-RK4 convergence order >= 3.5")
def test_criterion_07_order():
    g = make_grid(256, 32 * math.pi)
    u0 = Field(g, 6.0 * np.exp(-(((g.x - 16 * math.pi) / 2.0) ** 2)))
    p = ModelParams(alpha=1.0)
    last = 10**9

    def final(dt):
        return solve_ivp(u0, 0.5, dt, p, record_every=last).states[-1].coeffs

    ref = final(2.5e-4)
    errs = [math.sqrt(g.dxi * np.sum(np.abs(final(dt) - ref) ** 2)) for dt in (4e-3, 2e-3, 1e-3)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    print(f"errors {errs}, observed orders {orders}")
    assert min(orders) >= 3.5


@crit(8, "Picard fixed point agrees with direct solver; contraction")
def test_criterion_08_picard():
    g = make_grid(128, 32 * math.pi)
    u0 = Field(g, 0.05 * np.exp(-(((g.x - 16 * math.pi) / 2.0) ** 2)))
    assert sobolev_norm(transform_field(u0), -0.5) <= 0.1
    p = ModelParams(alpha=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        u, ratios = picard_solve(u0, PicardConfig(T=0.5), p)
    ts, rows = lattice_snapshots(u, 0.0, 0.25)
    tr = solve_ivp(u0, float(ts[-1]), float(ts[1] - ts[0]), p)
    assert np.allclose(tr.times, ts, atol=1e-12)
    diff = max(math.sqrt(g.spacing * np.sum((a - b) ** 2)) for a, b in zip(rows, tr.physical()))
    tail = ratios[2:]
    print(f"max L2 difference {diff:.3e}; contraction ratios {np.round(ratios, 5).tolist()}")
    assert diff <= 1e-4
    assert all(r < 1 for r in ratios)
    assert len(tail) >= 2 and max(tail) - min(tail) <= 0.25 * max(tail)


@crit(9, "all seven lemma checks pass")
def test_criterion_09_lemmas():
    verdicts = []
    for params in (ModelParams(), ModelParams(alpha=0.5, s=-0.7)):
        for kind in LemmaKind:
            kw = {"theta": 0.125, "rho": 0.4} if kind is LemmaKind.L4_STRICHARTZ else {}
            if kind is LemmaKind.L2_CONTRACT:
                kw = {"theta": 0.125}
            v = lemma_check(kind, 10, params, 7, **kw)
            verdicts.append(v)
            print(f"alpha={params.alpha} {kind.value}: worst={v.worst_ratio:.4g} growth={v.growth:.3g} "
                  f"slope={v.t_scaling_slope} pass={v.passed}")
    assert all(v.passed for v in verdicts)
    assert all(v.growth < 0.10 for v in verdicts)
    assert all(v.t_scaling_slope > 0 for v in verdicts
               if v.lemma_id in (LemmaKind.L2_CONTRACT, LemmaKind.L4_STRICHARTZ))


@crit(10, "resonance identity and smoothing inequality on 10^6 quadruples")
def test_criterion_10_resonance():
    rng = np.random.default_rng(10)
    n = 10**6
    xi, xi1 = rng.uniform(-20, 20, n), rng.uniform(-20, 20, n)
    tau, tau1 = rng.uniform(-1e4, 1e4, n), rng.uniform(-1e4, 1e4, n)
    s, s1, s2 = modulations(tau, tau1, xi, xi1)
    res = resonance(xi, xi1)
    scale = np.maximum.reduce([np.abs(s), np.abs(s1), np.abs(s2), np.abs(res), np.ones(n)])
    eps = np.finfo(float).eps
    assert np.all(np.abs(s1 + s2 - s - res) <= 16 * eps * scale)
    biggest = np.maximum.reduce([np.abs(s), np.abs(s1), np.abs(s2)])
    assert np.all(biggest >= np.abs(xi * xi1 * (xi - xi1)) - 16 * eps * scale)
    # integer quadruples: the identity holds with no rounding at all
    ix, ix1 = rng.integers(-2**15, 2**15, n), rng.integers(-2**15, 2**15, n)
    it, it1 = rng.integers(-2**48, 2**48, n), rng.integers(-2**48, 2**48, n)
    s, s1, s2 = modulations(it, it1, ix, ix1)
    assert np.array_equal(s1 + s2 - s, resonance(ix.astype(float), ix1.astype(float)))
    assert np.all(np.maximum.reduce([np.abs(s), np.abs(s1), np.abs(s2)])
                  >= np.abs(ix.astype(float) * ix1 * (ix - ix1)))


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_criterion_")]
    failures = 0
    for fn in tests:
        mark = next(m for m in fn.pytestmark if m.name == "criterion")
        number, title = mark.args
        try:
            fn()
            ok = True
        except AssertionError:
            ok = False
        failures += not ok
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")
    sys.exit(1 if failures else 0)
