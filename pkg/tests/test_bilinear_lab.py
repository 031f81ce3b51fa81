import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dkdv.bilinear_lab import (
    DyadicBlock,
    ExtremizerTriple,
    HypothesisError,
    SlabProfile,
    SweepReport,
    UnderResolvedLattice,
    bilinear_ratio,
    block_lattice,
    block_lower_bound,
    dual_bilinear_ratio,
    dyadic_block_bound,
    extremizer_triple,
    kernel_K,
    modulations,
    predicted_slope,
    resonance,
    s_alpha,
    sharpness_sweep,
    trilinear_form,
    trilinear_integral,
    write_block_table,
)
from dkdv.bourgain import SPECTRAL, SpaceTimeField, SpaceTimeGrid, bump_psi, refine
from dkdv.spectral_core import ModelParams, make_grid


def brute_trilinear(f1, f2, f3, cell, weight=None):
    """Direct sum over all index tuples with zeta1 + zeta2 + zeta3 = 0 (coordinates i - n/2)."""
    nt, nx = f1.shape
    total = 0.0
    for a, b, c, d in itertools.product(range(nt), range(nx), range(nt), range(nx)):
        e = -((a - nt // 2) + (c - nt // 2)) + nt // 2
        f = -((b - nx // 2) + (d - nx // 2)) + nx // 2
        if 0 <= e < nt and 0 <= f < nx:
            m = 1.0 if weight is None else weight((a, b), (np.array(c), np.array(d)))
            total += float(m) * f1[a, b] * f2[c, d] * f3[e, f]
    return total * cell**2


class TestCriticalIndex:
    @pytest.mark.parametrize("a", [0.1, 0.3, 0.5])
    def test_low(self, a):
        assert s_alpha(a) == -0.75

    @pytest.mark.parametrize("a", [0.6, 0.75, 1.0])
    def test_high(self, a):
        assert s_alpha(a) == -3.0 / (5.0 - 2.0 * a)

    def test_kdv_burgers(self):
        assert s_alpha(1.0) == -1.0
        assert s_alpha(0.5) == -3.0 / 4.0

    @pytest.mark.parametrize("a", [0.0, -0.1, 1.01, float("nan")])
    def test_invalid(self, a):
        with pytest.raises(ValueError):
            s_alpha(a)


class TestResonance:
    def test_characteristic(self):
        xi = 1.7
        assert modulations(xi**3, xi**3, xi, xi) == (0.0, 0.0, 0.0)

    def test_value(self):
        s, s1, s2 = modulations(0.3, -2.0, 2.0, 1.0)
        assert s1 + s2 - s == pytest.approx(6.0, abs=1e-12)
        assert resonance(2.0, 1.0) == 6.0

    @settings(max_examples=200)
    @given(st.integers(-2**48, 2**48), st.integers(-2**48, 2**48), st.integers(-2**15, 2**15),
           st.integers(-2**15, 2**15))
    def test_identity_exact_on_integers(self, tau, tau1, xi, xi1):
        # every intermediate stays below 2^53, so float arithmetic is exact
        s, s1, s2 = modulations(tau, tau1, xi, xi1)
        assert s1 + s2 - s == resonance(xi, xi1)


class TestKernel:
    def test_zero_frequency(self):
        assert kernel_K(0.3, 1.0, 0.0, 0.5, ModelParams()) == 0.0

    def test_scalar_substitution(self):
        p = ModelParams(alpha=1.0, s=0.0, delta=0.01)
        xi, xi1 = 1.0, 0.5
        got = kernel_K(xi**3, xi1**3, xi, xi1, p, b_out=0.5)
        s2 = (xi**3 - xi1**3) - (xi - xi1) ** 3
        want = (1.0 / math.sqrt(math.sqrt(1 + 0 + 1))
                / math.sqrt(math.sqrt(1 + 0 + xi1**4))
                / math.sqrt(math.sqrt(1 + s2**2 + (xi - xi1) ** 4)))
        assert s2 == pytest.approx(0.75)
        assert got == pytest.approx(want, rel=1e-14)

    @settings(max_examples=50)
    @given(tau=st.floats(-50, 50), tau1=st.floats(-50, 50), xi=st.floats(-5, 5),
           xi1=st.floats(-5, 5), s=st.floats(-1, 0))
    def test_exponent_zero_reduction(self, tau, tau1, xi, xi1, s):
        p = ModelParams(alpha=0.5, s=s)
        br = lambda z: math.sqrt(1 + z * z)
        want = abs(xi) * br(xi) ** s * br(xi1) ** -s * br(xi - xi1) ** -s
        assert kernel_K(tau, tau1, xi, xi1, p, b_out=0.0, b_in=0.0) == pytest.approx(want, rel=1e-12,
                                                                                    abs=1e-300)


def localized_mode(stg, k=1):
    t = stg.times[:, None]
    x = stg.grid_x.x[None, :]
    vals = bump_psi(t, 0.5) * np.cos(k * stg.grid_x.dxi * x)
    return SpaceTimeField(stg, vals)


class TestBilinearRatio:
    def test_zero_rejected(self):
        stg = SpaceTimeGrid(make_grid(16, 2 * math.pi), 32, 4.0)
        z = SpaceTimeField(stg, np.zeros(stg.shape))
        with pytest.raises(ValueError):
            bilinear_ratio(z, localized_mode(stg), ModelParams())

    def test_resolution_stable(self):
        p = ModelParams(alpha=0.5, s=-0.7)
        coarse = SpaceTimeGrid(make_grid(16, 2 * math.pi), 64, 4.0)
        fine = refine(coarse)
        r1 = bilinear_ratio(localized_mode(coarse), localized_mode(coarse), p)
        r2 = bilinear_ratio(localized_mode(fine), localized_mode(fine), p)
        assert math.isfinite(r1) and abs(r2 / r1 - 1) < 0.05

    @settings(max_examples=10, deadline=None)
    @given(lam=st.floats(1e-3, 1e3), mu=st.floats(-1e3, -1e-3))
    def test_homogeneous(self, lam, mu):
        p = ModelParams()
        stg = SpaceTimeGrid(make_grid(16, 2 * math.pi), 32, 4.0)
        u, v = localized_mode(stg, 1), localized_mode(stg, 2)
        base = bilinear_ratio(u, v, p)
        scaled = bilinear_ratio(SpaceTimeField(stg, lam * u.values), SpaceTimeField(stg, mu * v.values), p)
        assert scaled == pytest.approx(base, rel=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_duality(self, seed):
        rng = np.random.default_rng(seed)
        stg = SpaceTimeGrid(make_grid(16, 4 * math.pi), 16, 2.0)
        p = ModelParams(alpha=0.5, s=-0.7)

        def field():
            c = np.zeros(stg.shape, complex)
            c[6:10, 6:10] = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
            return SpaceTimeField(stg, c, SPECTRAL)

        u, v = field(), field()
        assert dual_bilinear_ratio(u, v, p) == pytest.approx(bilinear_ratio(u, v, p), rel=0.02)


class TestTrilinear:
    @pytest.mark.parametrize("nt,nx", [(4, 4), (8, 8), (8, 4)])
    def test_all_ones(self, nt, nx):
        f = np.ones((nt, nx))
        assert trilinear_form(f, f, f, 0.3) == pytest.approx(brute_trilinear(f, f, f, 0.3), rel=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_random_binary(self, seed):
        rng = np.random.default_rng(seed)
        fs = [rng.integers(0, 2, (8, 8)).astype(float) for _ in range(3)]
        assert trilinear_form(*fs, 0.7) == pytest.approx(brute_trilinear(*fs, 0.7), rel=1e-12)

    def test_kernel_weighted(self):
        stg = SpaceTimeGrid(make_grid(8, 2 * math.pi), 16, 2.0)
        rng = np.random.default_rng(9)
        fs = [rng.random(stg.shape) for _ in range(3)]
        from dkdv.bilinear_lab import _kernel_weight
        w = _kernel_weight(stg, ModelParams(alpha=0.5, s=-0.7))
        assert trilinear_form(*fs, stg.cell, w) == pytest.approx(brute_trilinear(*fs, stg.cell, w),
                                                                 rel=1e-12)

    def test_zero_profile(self):
        f = np.ones((8, 8))
        assert trilinear_form(np.zeros((8, 8)), f, f, 1.0) == 0.0

    def test_slab_sum_matches_dense(self):
        b = DyadicBlock(2, 4, 4, 32, 8, 8)
        stg = SpaceTimeGrid(make_grid(256, 2 * math.pi / 0.25), 1024, 4.0)
        tri = extremizer_triple(b, stg)
        dense = [p.to_array() for p in tri.profiles]
        assert trilinear_integral(tri, "none") == pytest.approx(trilinear_form(*dense, stg.cell), rel=1e-12)
        shells = [p.shell(n, l).to_array() for p, n, l in zip(tri.profiles, b.ns, b.ls)]
        assert trilinear_integral(tri, "block") == pytest.approx(trilinear_form(*shells, stg.cell),
                                                                 rel=1e-12)

    def test_slab_sum_on_tiny_lattices(self):
        # slab profiles written densely on 8x8 lattices agree with the brute force oracle
        stg = SpaceTimeGrid(make_grid(8, 2 * math.pi), 16, 2.0)
        rng = np.random.default_rng(4)
        profiles = []
        for _ in range(3):
            k = np.arange(-4, 4)
            lo = rng.integers(-8, 4, k.size)
            hi = lo + rng.integers(-1, 6, k.size)
            profiles.append(SlabProfile(stg, k, np.stack([lo, np.minimum(hi, 7)], axis=-1)))
        tri = ExtremizerTriple(*profiles, DyadicBlock(1, 1, 1, 1, 1, 1))
        dense = [p.to_array() for p in profiles]
        ref = brute_trilinear(*dense, stg.cell)
        assert trilinear_integral(tri, "none") == pytest.approx(ref, rel=1e-12, abs=1e-300)


class TestBlocks:
    def test_non_dyadic(self):
        with pytest.raises(ValueError):
            DyadicBlock(3, 4, 4, 16, 2, 1)

    def test_bound_examples(self):
        assert dyadic_block_bound(DyadicBlock(1, 4, 4, 16, 2, 1), "plus_minus") == pytest.approx(
            math.sqrt(8) / 4, rel=1e-15)
        assert dyadic_block_bound(DyadicBlock(4, 4, 4, 64, 64, 1), "plus_plus") == pytest.approx(2.0)
        assert dyadic_block_bound(DyadicBlock(2, 4, 4, 32, 1, 1), "other") == pytest.approx(0.25)

    def test_hypothesis_named(self):
        with pytest.raises(HypothesisError, match="N_max ~ N_med"):
            dyadic_block_bound(DyadicBlock(1, 2, 16, 32, 1, 1), "other")
        with pytest.raises(ValueError):
            dyadic_block_bound(DyadicBlock(1, 4, 4, 16, 2, 1), "sideways")

    def test_extremizer_support(self):
        b = DyadicBlock(1, 4, 4, 16, 1, 1)
        stg = SpaceTimeGrid(make_grid(512, 2 * math.pi / (1 / 16)), 2048, 16.0)
        tri = extremizer_triple(b, stg)
        f2 = tri.f2_hat
        xi = f2.k * stg.grid_x.dxi
        assert np.all(np.abs(xi - 4) <= 1 + 1e-12)
        for x, (lo, hi) in zip(xi, f2.iv[:, 0]):
            assert lo * stg.dtau >= x**3 - 1 - 1e-9 and hi * stg.dtau <= x**3 + 1 + 1e-9
        measure = f2.count() * stg.cell
        assert 0.5 <= measure / (2 * 1 * 2 * 1) <= 2.0

    def test_under_resolved(self):
        b = DyadicBlock(1, 4, 4, 16, 1, 1)
        stg = SpaceTimeGrid(make_grid(64, 2 * math.pi / (1 / 16)), 64, 2.0)
        with pytest.raises(UnderResolvedLattice) as err:
            extremizer_triple(b, stg)
        assert err.value.required_n_time >= 64

    def test_lower_bound_resolution_stable(self):
        b = DyadicBlock(1, 8, 8, 64, 8, 8)
        v1 = block_lower_bound(b)
        v2 = block_lower_bound(b, block_lattice(b, refinement=2))
        assert abs(v2 / v1 - 1) < 0.10

    def test_ratio_uniform(self, tmp_path):
        from dkdv.cli import default_block_family
        rows = []
        for b in default_block_family():
            rows.append((b, dyadic_block_bound(b, "plus_minus"), block_lower_bound(b)))
        ratios = [m / bd for _, bd, m in rows]
        assert len(rows) >= 10
        assert min(ratios) > 0 and max(ratios) <= 1.0
        assert max(ratios) / min(ratios) <= 10
        write_block_table(rows, tmp_path / "b.csv")
        lines = (tmp_path / "b.csv").read_text().splitlines()
        assert lines[0] == "N1,N2,N3,L1,L2,L3,bound,measured,ratio"
        assert len(lines) == len(rows) + 1


class TestSweep:
    def test_predicted_examples(self):
        assert predicted_slope(-0.9, 0.25) == pytest.approx(0.3)
        assert predicted_slope(-0.7, 0.25) == pytest.approx(-0.1)
        assert predicted_slope(-1.0, 1.0) == pytest.approx(0.0, abs=1e-15)

    def test_low_alpha(self):
        div = sharpness_sweep(-0.9, 0.25, [16, 32, 64, 128, 256])
        bnd = sharpness_sweep(-0.7, 0.25, [16, 32, 64, 128, 256])
        assert div.verdict == "divergent" and abs(div.fitted_slope - 0.3) <= 0.15
        assert bnd.verdict == "bounded" and bnd.fitted_slope <= 0.05

    def test_boundary_case(self):
        rep = sharpness_sweep(-1.0, 1.0, [16, 32, 64, 128, 256])
        assert rep.verdict == "bounded" and rep.fitted_slope <= 0.05

    @pytest.mark.parametrize("alpha", [0.25, 0.75, 1.0])
    def test_monotone_in_s(self, alpha):
        sa = s_alpha(alpha)
        lo = sharpness_sweep(sa - 0.15, alpha, [16, 32, 64, 128, 256])
        hi = sharpness_sweep(sa + 0.15, alpha, [16, 32, 64, 128, 256])
        assert lo.fitted_slope >= hi.fitted_slope
        assert lo.verdict == "divergent" and hi.verdict == "bounded"

    def test_rejections(self):
        with pytest.raises(ValueError):
            sharpness_sweep(-0.9, 0.25, [16, 32])
        with pytest.raises(ValueError):
            sharpness_sweep(-0.9, 0.25, [16, 24, 64])
        with pytest.raises(ValueError):
            sharpness_sweep(-0.9, 0.25, [64, 32, 16])

    def test_report_serialization(self, tmp_path):
        rep = sharpness_sweep(-0.9, 0.25, [16, 32, 64])
        again = SweepReport.from_dict(json.loads(rep.to_json()))
        assert again == rep
        rep.write_csv(tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "N1,ratio,log2N1,logratio"
        assert len(lines) == 4
