import math
from fractions import Fraction as F

import numpy as np
import pytest

from oscillax.errors import ConventionMismatch, ValidationError
from oscillax.evolve import Window
from oscillax.ladder import LadderVariant, ladder_potentials
from oscillax.model import dist, essential_class, geometric_tilt, validate_model
from oscillax.switching import (
    SwitchingKernel,
    WeightSpec,
    banded_power_sequences,
    build_Q,
    default_weight,
    doob_transform,
    limit_operator_E,
    limit_operator_E_ell,
    power_iterate,
    power_sequences,
    q_history_matrices,
    renewal_sequence,
    switching_kernel,
    switching_time_marginals,
    tilted_kernels,
)


class TestBuildQ:
    def test_origin_row_closed_form(self, fix_zz):
        sk = switching_kernel(fix_zz, Window(-48, 48))
        w = sk.window
        assert sk.Q[w.index(0), w.index(1)] == pytest.approx(0.5)
        assert sk.Q[w.index(0), w.index(-1)] == pytest.approx(0.5)
        assert sk.Q[w.index(0), w.index(0)] == 0.0

    def test_mass_accounting_exact(self, fix_zz):
        w = Window(-48, 48)
        hist = build_Q(fix_zz, 50, w, rows=essential_class(fix_zz), exact=True)
        for x, t in hist.items():
            total = sum(t.data["arrivals"][n].sum() for n in range(51))
            assert total + t.data["survival"][50] == 1, x

    def test_row_matches_ladder_formula(self, fix_zz):
        # Q(-1, y) = mu_strict_asc(y + 1): the single-term overshoot identity
        sk = switching_kernel(fix_zz, Window(-256, 256))
        w = sk.window
        pot = ladder_potentials(fix_zz.left)
        hs = pot.heights_exact[LadderVariant.STRICT_ASC]
        assert sk.Q[w.index(-1), w.index(0)] == pytest.approx(hs[1], abs=2e-4)
        assert sk.Q[w.index(-1), w.index(1)] == pytest.approx(hs[2], abs=2e-4)

    def test_origin_row_geometric_history(self):
        m = validate_model(dist({-1: F(1, 2), 0: F(1, 4), 2: F(1, 4)}),
                           dist({-1: F(1, 4), 0: F(1, 2), 1: F(1, 4)}),
                           dist({-2: F(1, 4), 0: F(1, 4), 1: F(1, 2)}))
        hist = build_Q(m, 6, Window(-16, 16), rows=[0], exact=True)
        t = hist[0]
        bl, _ = t.data["band"]
        for n in range(1, 7):
            assert t.data["arrivals"][n][1 - bl] == F(1, 2) ** (n - 1) * F(1, 4)


class TestRenewalSequence:
    def test_small_expansions(self, fix_zz):
        w = Window(-10, 10)
        Qn = q_history_matrices(fix_zz, 4, w, exact=True)
        T = renewal_sequence(Qn)
        assert (T[1] == Qn[1]).all()
        assert (T[2] == Qn[2] + Qn[1] @ Qn[1]).all()

    def test_recursion_equals_direct_power_sum(self, fix_zz):
        w = Window(-10, 10)
        N = 12
        Qn = q_history_matrices(fix_zz, N, w, exact=True)
        T = renewal_sequence(Qn)
        width = Qn.shape[1]
        total = Qn.copy()
        cur = Qn.copy()
        for _ in range(2, N + 1):
            new = np.full_like(cur, F(0))
            for n in range(2, N + 1):
                acc = np.full((width, width), F(0), dtype=object)
                for j in range(1, n):
                    acc = acc + cur[j] @ Qn[n - j]
                new[n] = acc
            cur = new
            total = total + cur
        for n in range(1, N + 1):
            assert (T[n] == total[n]).all()

    def test_dp_matches_recursion(self, fix_zz):
        w = Window(-12, 12)
        Qn = q_history_matrices(fix_zz, 40, w)
        T = renewal_sequence(Qn)
        Tdp = switching_time_marginals(fix_zz, 0, 40, w)
        err = max(np.max(np.abs(T[n][w.index(0)] - Tdp[n])) for n in range(1, 41))
        assert err <= 1e-14


class TestPowerSequences:
    def test_fft_matches_direct(self, fix_zz):
        w = Window(-8, 8)
        Qn = q_history_matrices(fix_zz, 32, w)
        seqs = power_sequences(Qn, ells=[2, 3], pad_factor=8)
        direct2 = np.zeros_like(Qn)
        for n in range(2, 33):
            for j in range(1, n):
                direct2[n] += Qn[j] @ Qn[n - j]
        assert np.max(np.abs(seqs[2][: 33] - direct2)) <= 1e-10

    def test_banded_matches_dense(self, fix_zz):
        w = Window(-8, 8)
        Qn = q_history_matrices(fix_zz, 32, w)
        dense = power_sequences(Qn, ells=[2], pad_factor=8)[2]
        banded = banded_power_sequences(fix_zz, 32, w, ells=[2], pad_factor=8)
        bl, bh = banded["band"]
        cols = slice(w.index(bl), w.index(bh) + 1)
        assert np.max(np.abs(banded[2][: 33] - dense[: 33, :, cols])) <= 1e-9


class TestSpectra:
    def test_pn_markovian_unit_radius(self, fix_pn):
        sd = power_iterate(switching_kernel(fix_pn, Window(-48, 48)))
        assert sd.markovian
        assert sd.rho_psi == pytest.approx(1.0, abs=1e-9)
        support = [int(x) for x in sd.window.positions() if sd.nu[sd.window.index(int(x))] > 1e-12]
        assert support == essential_class(fix_pn) == [-1, 0, 1]

    def test_zp_submarkovian(self, fix_zp):
        sd = power_iterate(switching_kernel(fix_zp, Window(-128, 128)))
        assert not sd.markovian
        assert sd.rho_psi < 1.0 - 1e-3
        assert np.all(sd.H > 0)
        assert sd.residual <= 1e-8

    def test_rank_one_projector(self, fix_zz):
        w = Window(-16, 16)
        nu = np.zeros(w.width)
        nu[w.index(-1)] = nu[w.index(0)] = nu[w.index(1)] = 1 / 3
        Q = np.outer(np.ones(w.width), nu)
        sk = SwitchingKernel(w, Q, 1.0 - Q.sum(axis=1), (-1, 1), fix_zz)
        sd = power_iterate(sk)
        assert sd.rho_psi == pytest.approx(1.0, abs=1e-12)
        h = sd.H / sd.H[w.index(0)]
        assert np.max(np.abs(h - 1.0)) <= 1e-9

    def test_weight_robustness(self, fix_zp):
        sk = switching_kernel(fix_zp, Window(-128, 128))
        s1 = power_iterate(sk, WeightSpec("polynomial", 0.5))
        s2 = power_iterate(sk, WeightSpec("polynomial", 0.8))
        assert abs(s1.rho_psi - s2.rho_psi) <= 1e-8

    def test_weight_validation(self):
        with pytest.raises(ValidationError):
            WeightSpec("polynomial", -1.0).values(Window(-8, 8))


class TestDoob:
    def test_identity_transform(self, fix_zz):
        sk = switching_kernel(fix_zz, Window(-24, 24))
        out = doob_transform(sk.Q, np.ones(sk.window.width), 1.0)
        assert np.array_equal(out, sk.Q)

    def test_power_structure(self, fix_zp):
        # (HQ)^(l) equals the conjugation of Q^(l) by (rho, H), l = 2, 3
        sk = switching_kernel(fix_zp, Window(-32, 32))
        sd = power_iterate(sk)
        HQ = doob_transform(sk.Q, sd.H, sd.rho_psi)
        for ell in (2, 3):
            lhs = np.linalg.matrix_power(HQ, ell)
            rhs = np.linalg.matrix_power(sk.Q, ell) * (
                sd.H[None, :] / sd.H[:, None]) / sd.rho_psi ** ell
            assert np.max(np.abs(lhs - rhs)) <= 1e-12

    def test_markovization(self, fix_zp):
        # row sums of the transformed aggregate approach 1 (up to truncation)
        sk = switching_kernel(fix_zp, Window(-64, 64))
        sd = power_iterate(sk)
        HQ = doob_transform(sk.Q, sd.H, sd.rho_psi)
        rows = HQ.sum(axis=1)
        mid = slice(sk.window.index(-8), sk.window.index(8) + 1)
        assert np.max(np.abs(rows[mid] - 1.0)) <= 5e-3

    def test_horizon_doubling_shrinks_defect(self, fix_zp):
        # sum_{n<=N} HQ_n row sums approach 1 as the horizon doubles
        w = Window(-96, 96)
        sk = switching_kernel(fix_zp, w)
        sd = power_iterate(sk)
        defects = []
        for N in (64, 128, 256):
            hist = build_Q(fix_zp, N, w, rows=[-1, 0, 1])
            worst = 0.0
            for x, t in hist.items():
                bl, bh = t.data["band"]
                total = 0.0
                for n in range(1, N + 1):
                    row = t.data["arrivals"][n].astype(float)
                    ys = np.arange(bl, bh + 1)
                    inside = (ys >= w.lo) & (ys <= w.hi)
                    Hy = np.array([sd.H[w.index(int(y))] for y in ys[inside]])
                    total += float(row[inside] @ Hy) / (sd.rho_psi * sd.H[w.index(x)])
                worst = max(worst, abs(1.0 - total))
            defects.append(worst)
        assert defects[2] < defects[1] < defects[0]


class TestTiltedKernels:
    def test_requires_two_media(self, fix_zz):
        with pytest.raises(ConventionMismatch):
            tilted_kernels(fix_zz, -0.1, -0.1, 8, Window(-16, 16))

    def test_change_of_measure_identity_exact(self, fix_pp):
        # Q_n(x,y) = L(t)^n e^{t(x-y)} Q_n^t(x,y) with e^t = 1/2, checked
        # exactly through the rational geometric tilt
        ratio = F(1, 2)
        w = Window(-16, 16)
        lt = geometric_tilt(fix_pp.left, ratio)
        rt = geometric_tilt(fix_pp.right, ratio)
        tilted = validate_model(lt, lt, rt, two_media=True)
        hist = build_Q(fix_pp, 10, w, rows=[0, -2, 1], exact=True)
        hist_t = build_Q(tilted, 10, w, rows=[0, -2, 1], exact=True)
        Lval = sum(p * ratio ** int(v) for v, p in zip(fix_pp.left.values, fix_pp.left.fracs))
        Lpval = sum(p * ratio ** int(v) for v, p in zip(fix_pp.right.values, fix_pp.right.fracs))
        for x in (0, -2, 1):
            t, tt = hist[x], hist_t[x]
            bl, bh = t.data["band"]
            Ln = Lval if x <= 0 else Lpval
            acc = F(1)
            for n in range(1, 11):
                acc = acc * Ln
                for y in range(bl, bh + 1):
                    lhs = t.data["arrivals"][n][y - bl]
                    rhs = acc * ratio ** (x - y) * tt.data["arrivals"][n][y - bl]
                    assert lhs == rhs, (x, n, y)

    def test_b2_damped_side_row_sums(self, fix_pp):
        from oscillax.evolve import Side, first_passage_kernel
        from oscillax.model import Convention
        from oscillax.regimes import classify, select_tilt

        plan = select_tilt(fix_pp, classify(fix_pp))
        w = Window(-24, 24)
        tk = tilted_kernels(fix_pp, plan.t_left, plan.t_right, 64, w)
        # B2: r = L(lambda')/rho' in closed form
        assert tk.r == pytest.approx(0.8509373209614202 / 0.905031433644464, abs=1e-12)
        assert tk.damped_side == "left"
        agg = tk.Qn.sum(axis=0)
        # undamped (right) side: exact mass accounting against its own survival
        fp = first_passage_kernel(tk.tilted_model.right, Side.FROM_POSITIVE,
                                  Convention.TWO_MEDIA, 4, 64, w)
        undamped = agg[w.index(4), :].sum()
        assert undamped + fp.data["survival"][64] == pytest.approx(1.0, abs=1e-12)
        # damped (left) side: strictly below the same accounting level
        fp_l = first_passage_kernel(tk.tilted_model.left, Side.FROM_NEGATIVE,
                                    Convention.TWO_MEDIA, -4, 64, w)
        damped = agg[w.index(-4), :].sum()
        assert damped < (1.0 - float(fp_l.data["survival"][64])) - 0.05

    def test_crossing_case_no_damping(self, subcase_models):
        from oscillax.regimes import classify, select_tilt

        m = subcase_models["B3"]
        plan = select_tilt(m, classify(m))
        tk = tilted_kernels(m, plan.t_left, plan.t_right, 16, Window(-16, 16))
        assert tk.r == pytest.approx(1.0, abs=1e-12)
        assert tk.damped_side is None


class TestLimitOperator:
    def test_pz_left_rows_vanish(self, fix_pz):
        w = Window(-24, 24)
        E = limit_operator_E(fix_pz, w)
        assert not E[: w.index(0) + 1, :].any()
        assert E[w.index(1):, :].any()

    def test_e1_is_e(self, fix_zz):
        w = Window(-24, 24)
        E = limit_operator_E(fix_zz, w)
        sk = switching_kernel(fix_zz, w)
        assert np.array_equal(limit_operator_E_ell(E, sk.Q, 1), E)

    def test_zz_pointwise_limit(self, fix_zz):
        # n^{3/2} Q_n(-1, 0) approaches E(-1, 0) (tested loosely here; the
        # acceptance suite pins the 5% version at n = 4096)
        w = Window(-512, 16)
        from oscillax.evolve import Side, first_passage_kernel
        from oscillax.model import Convention

        t = first_passage_kernel(fix_zz.left, Side.FROM_NEGATIVE,
                                 Convention.THREE_MEDIA, -1, 1024, w)
        bl, _ = t.data["band"]
        val = 1024 ** 1.5 * t.data["arrivals"][1024][0 - bl]
        E = limit_operator_E(fix_zz, Window(-24, 24))
        target = E[Window(-24, 24).index(-1), Window(-24, 24).index(0)]
        assert val == pytest.approx(target, rel=0.1)
