import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oscillax.errors import (
    DegenerateInterval,
    IdenticalTransforms,
    NotAperiodic,
    O3Violated,
    O4Violated,
    SupportOneSided,
    ValidationError,
)
from oscillax.fixtures import MU_A, MU_A_MIRROR, MU_B, MU_BP, UNIF_PM1
from oscillax.model import (
    DriftCase,
    argmin_laplace,
    cross_point,
    dist,
    dump_model,
    geometric_tilt,
    is_strongly_aperiodic,
    laplace,
    laplace_deriv,
    load_model,
    mirror_dist,
    mirror_model,
    tilt,
    validate_model,
)

MU_B_DIST = dist(MU_B)
MU_BP_DIST = dist(MU_BP)

# closed forms: dL/dt = 0 for {-1:1/4, 0:1/4, 2:1/2} gives e^{3t} = 1/4
LAM_B = -math.log(4.0) / 3.0
RHO_B = 1.5 * 4.0 ** (-2.0 / 3.0) + 0.25
LAM_BP = -math.log(3.0) / 3.0
RHO_BP = 3.0 ** (2.0 / 3.0) / 8.0 + 0.125 + 0.75 * 3.0 ** (-1.0 / 3.0)


class TestLatticeDist:
    def test_basic_stats(self):
        d = dist(MU_A)
        assert d.mean == 0.0
        assert d.variance == pytest.approx(1.5, abs=1e-15)
        assert (d.min_support, d.max_support) == (-1, 2)
        assert d.exact

    def test_probability_sum_enforced(self):
        with pytest.raises(ValidationError):
            dist({-1: F(1, 2), 1: F(1, 3)})

    def test_float_atoms_lose_exactness(self):
        d = dist({-1: 0.5, 1: 0.5})
        assert not d.exact

    def test_mirror(self):
        d = mirror_dist(dist(MU_A))
        assert d.as_pairs() == dist(MU_A_MIRROR).as_pairs()


class TestValidation:
    def test_fix_zz_case(self):
        m = validate_model(dist(MU_A), dist(UNIF_PM1), dist(MU_A_MIRROR))
        assert m.drift_case is DriftCase.ZZ
        assert (m.D, m.Dprime) == (2, -2)

    def test_one_sided_left(self):
        with pytest.raises(SupportOneSided):
            validate_model(dist({1: 1}), dist(UNIF_PM1), dist(MU_A_MIRROR))

    def test_periodic_left(self):
        with pytest.raises(NotAperiodic):
            validate_model(dist({-1: F(1, 2), 2: F(1, 2)}), dist(UNIF_PM1),
                           dist(MU_A_MIRROR))

    def test_o3(self):
        # aperiodic laws with D = 1, D' = -1: product -1 violates the
        # two-sided-overshoot hypothesis
        toy_left = dist({-2: F(1, 5), -1: F(1, 5), 1: F(3, 5)})
        toy_right = mirror_dist(toy_left)
        with pytest.raises(O3Violated):
            validate_model(toy_left, dist(UNIF_PM1), toy_right)
        # the test-only escape hatch admits it
        m = validate_model(toy_left, dist(UNIF_PM1), toy_right,
                           _allow_o3_violation=True)
        assert m.drift_case is DriftCase.ZZ

    def test_o4(self):
        with pytest.raises(O4Violated):
            validate_model(dist(MU_A), dist({1: F(1, 2), 2: F(1, 2)}),
                           dist(MU_A_MIRROR))

    def test_two_media_forces_origin(self):
        m = validate_model(dist(MU_B), dist(UNIF_PM1), dist(MU_BP), two_media=True)
        assert m.origin.as_pairs() == m.left.as_pairs()

    def test_aperiodicity_predicate(self):
        assert is_strongly_aperiodic(dist(MU_A))
        assert not is_strongly_aperiodic(dist({-1: F(1, 2), 2: F(1, 2)}))


class TestLaplace:
    def test_normalization(self):
        for d in (dist(MU_A), dist(MU_B), dist(MU_BP)):
            assert laplace(d, 0.0) == pytest.approx(1.0, abs=1e-15)
            assert laplace_deriv(d, 0.0) == pytest.approx(d.mean, abs=1e-15)

    def test_closed_form_value(self):
        # L(mu_B, -ln4/3) = (3/2) 4^{-2/3} + 1/4
        assert laplace(MU_B_DIST, LAM_B) == pytest.approx(RHO_B, abs=1e-14)

    def test_overflow_guard(self):
        with pytest.raises(OverflowError):
            laplace(dist(MU_A), 500.0)

    def test_argmin_centered(self):
        lam, rho = argmin_laplace(dist(MU_A))
        assert lam == 0.0 and rho == 1.0

    def test_argmin_closed_form(self):
        lam, rho = argmin_laplace(MU_B_DIST)
        assert lam == pytest.approx(LAM_B, abs=1e-12)
        assert rho == pytest.approx(RHO_B, abs=1e-14)
        lam, rho = argmin_laplace(MU_BP_DIST)
        assert lam == pytest.approx(LAM_BP, abs=1e-12)
        assert rho == pytest.approx(RHO_BP, abs=1e-14)

    def test_argmin_one_sided(self):
        with pytest.raises(SupportOneSided):
            argmin_laplace(dist({1: 1}))

    def test_derivative_vanishes_at_argmin(self):
        lam, _ = argmin_laplace(MU_B_DIST)
        assert abs(laplace_deriv(MU_B_DIST, lam)) <= 1e-12

    def test_global_minimum_property(self):
        lam, rho = argmin_laplace(MU_B_DIST)
        rng = np.random.default_rng(7)
        for t in rng.uniform(lam - 2.0, lam + 2.0, size=1000):
            assert laplace(MU_B_DIST, float(t)) >= rho - 1e-14

    def test_strict_convexity_on_grid(self):
        for d in (dist(MU_A), MU_B_DIST, MU_BP_DIST):
            ts = np.linspace(-1.5, 1.5, 41)
            vals = np.array([laplace(d, t) for t in ts])
            second = np.diff(vals, 2)
            assert np.all(second > 0)


class TestTilt:
    def test_identity_tilt(self):
        d = dist(MU_A)
        assert tilt(d, 0.0) is d

    def test_tilt_at_argmin_centered(self):
        lam, _ = argmin_laplace(MU_B_DIST)
        assert abs(tilt(MU_B_DIST, lam).mean) <= 1e-12

    def test_recentered_argmin_is_zero(self):
        lam, _ = argmin_laplace(MU_B_DIST)
        lam2, rho2 = argmin_laplace(tilt(MU_B_DIST, lam))
        assert abs(lam2) <= 1e-10

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
    def test_tilt_group_property(self, s, t):
        d = dist(MU_A)
        a = tilt(tilt(d, s), t)
        b = tilt(d, s + t)
        assert a.values == b.values
        assert np.max(np.abs(a.probs - b.probs)) <= 1e-14

    def test_geometric_tilt_exact(self):
        d = geometric_tilt(dist(MU_A), F(1, 2))
        assert d.exact
        assert sum(d.fracs) == 1
        # matches the float tilt at t = log(1/2)
        ref = tilt(dist(MU_A), math.log(0.5))
        assert np.max(np.abs(d.probs - ref.probs)) <= 1e-15


class TestCrossPoint:
    def test_identical(self):
        with pytest.raises(IdenticalTransforms):
            cross_point(MU_B_DIST, MU_B_DIST)

    def test_degenerate_interval(self):
        # same argmin ratio p/(2r), different masses
        other = dist({-1: F(1, 8), 0: F(5, 8), 2: F(1, 4)})
        with pytest.raises(DegenerateInterval):
            cross_point(MU_B_DIST, other)

    def test_no_crossing_for_b2_pair(self):
        # L - L' < 0 at both argmins (evaluated in closed form): no crossing
        assert laplace(MU_B_DIST, LAM_B) - laplace(MU_BP_DIST, LAM_B) < 0
        assert laplace(MU_B_DIST, LAM_BP) - laplace(MU_BP_DIST, LAM_BP) < 0
        assert cross_point(MU_B_DIST, MU_BP_DIST) is None

    def test_b4_pair_crossing(self):
        left = dist({-1: F(1, 100), 0: F(67, 100), 2: F(32, 100)})
        right = dist({-2: F(13, 250), 0: F(29, 250), 1: F(208, 250)})
        lam_star, rho_star = cross_point(left, right)
        assert abs(laplace(left, lam_star) - laplace(right, lam_star)) <= 1e-12
        _, rho = argmin_laplace(left)
        _, rhop = argmin_laplace(right)
        assert rho_star > max(rho, rhop)


class TestModelFiles:
    def test_round_trip(self, tmp_path, fix_zz):
        from oscillax.model import save_model

        path = tmp_path / "m.json"
        save_model(fix_zz, path)
        m2 = load_model(path)
        assert m2.left.as_pairs() == fix_zz.left.as_pairs()
        assert m2.drift_case is fix_zz.drift_case

    def test_rational_strings(self):
        m = load_model({"left": [[-1, "1/2"], [0, "1/4"], [2, "1/4"]],
                        "origin": [[-1, "1/2"], [1, "1/2"]],
                        "right": [[-2, "1/4"], [0, "1/4"], [1, "1/2"]]})
        assert m.exact

    def test_malformed(self):
        with pytest.raises(ValidationError):
            load_model({"left": [[-1, "1/2"]]})

    def test_mirror_model_involution(self, fix_pz):
        m = mirror_model(mirror_model(fix_pz))
        assert m.left.as_pairs() == fix_pz.left.as_pairs()
        assert m.right.as_pairs() == fix_pz.right.as_pairs()
