"""Shipped reference models and the transient-subcase fixture search.

The FIX-* models cover the five drift regimes exercised by the verification
suites; SUBCASE_FIXTURES pins one two-media (P,P) model per transform-geometry
subcase.  The equality subcases (A1, B1, B3, B6, C1 inside C) are built so the
tied quantities are exactly representable: argmins whose exponentials are
rational make every compared value rational, which the exact-comparison layer
then settles without guessing.
"""

from __future__ import annotations

from fractions import Fraction as F

from .model import OscillatingModel, dist, validate_model

UNIF_PM1 = {-1: F(1, 2), 1: F(1, 2)}
MU_A = {-1: F(1, 2), 0: F(1, 4), 2: F(1, 4)}      # centered, sigma^2 = 3/2
MU_A_MIRROR = {-2: F(1, 4), 0: F(1, 4), 1: F(1, 2)}
MU_B = {-1: F(1, 4), 0: F(1, 4), 2: F(1, 2)}      # mean +3/4
MU_B_MIRROR = {-2: F(1, 2), 0: F(1, 4), 1: F(1, 4)}
MU_BP = {-2: F(1, 8), 0: F(1, 8), 1: F(3, 4)}     # mean +1/2


def _model(left, right, origin=UNIF_PM1, two_media=False) -> OscillatingModel:
    return validate_model(dist(left), dist(origin), dist(right), two_media=two_media)


def fix_pn() -> OscillatingModel:
    """Positive recurrent: drift toward the interface from both sides."""
    return _model(MU_B, MU_B_MIRROR)


def fix_zz() -> OscillatingModel:
    """Doubly centered null-recurrent model (mirror-symmetric)."""
    return _model(MU_A, MU_A_MIRROR)


def fix_pz() -> OscillatingModel:
    """Left medium pushes right, right medium centered: null recurrent."""
    return _model(MU_B, MU_A_MIRROR)


def fix_zp() -> OscillatingModel:
    """Left centered, right pushes away: transient with unit spectral radius."""
    return _model(MU_A, MU_BP)


def fix_pp() -> OscillatingModel:
    """Two-media doubly-positive model; lands in the dominated subcase B2."""
    return _model(MU_B, MU_BP, two_media=True)


FIXTURES = {
    "FIX-PN": fix_pn,
    "FIX-ZZ": fix_zz,
    "FIX-PZ": fix_pz,
    "FIX-ZP": fix_zp,
    "FIX-PP": fix_pp,
}


def _pp(left, right) -> OscillatingModel:
    return validate_model(dist(left), dist(left), dist(right), two_media=True)


# One two-media (P,P) fixture per subcase of the transform-geometry table.
# Comments give the pinned exact quantities behind each equality branch.
SUBCASE_FIXTURES = {
    # identical laws: L == L' termwise
    "A1": lambda: _pp(MU_B, MU_B),
    # same argmin (p/r ratio matched), different minima
    "A2": lambda: _pp(MU_B, {-1: F(1, 8), 0: F(5, 8), 2: F(1, 4)}),
    # e^lambda = 1/4, e^lambda' = 1/2; rho = rho' = 73/100
    "B1": lambda: _pp({-1: F(1, 100), 0: F(67, 100), 2: F(32, 100)},
                      {-2: F(27, 500), 0: F(41, 500), 1: F(432, 500)}),
    "B2": fix_pp,
    # e^lambda' = 1/2: L(lambda') = 18/25 = rho' exactly, rho < rho'
    "B3": lambda: _pp({-1: F(1, 50), 0: F(29, 50), 2: F(2, 5)},
                      {-2: F(7, 125), 0: F(6, 125), 1: F(112, 125)}),
    # rho = 73/100 < rho' = 74/100 < L(lambda') = 77/100: crossing regime
    "B4": lambda: _pp({-1: F(1, 100), 0: F(67, 100), 2: F(32, 100)},
                      {-2: F(13, 250), 0: F(29, 250), 1: F(208, 250)}),
    # rho' < rho and L'(lambda) < rho: right side dominated
    "B5": lambda: _pp(MU_B, {-1: F(3, 10), 0: F(3, 25), 2: F(29, 50)}),
    # e^lambda = 1/2: L'(lambda) = 7/8 = rho exactly, rho > rho'
    "B6": lambda: _pp({-1: F(1, 16), 0: F(11, 16), 2: F(1, 4)},
                      {-2: F(1, 20), 0: F(2, 5), 1: F(11, 20)}),
    # rho' = 145/200 < rho = 146/200 < L'(lambda) = 233/200: crossing regime
    "B7": lambda: _pp({-1: F(1, 100), 0: F(67, 100), 2: F(32, 100)},
                      {-2: F(11, 200), 0: F(13, 200), 1: F(176, 200)}),
    # lambda = ln(3/4) > lambda' = ln(1/2), rho = rho' = 19/20
    "C": lambda: _pp({-1: F(27, 100), 0: F(41, 100), 2: F(32, 100)},
                     {-2: F(1, 100), 0: F(83, 100), 1: F(16, 100)}),
}


def search_subcase_fixtures(grid_denominator: int = 12, max_per_case: int = 1) -> dict:
    """Grid-search three-atom two-media families for (P,P) subcase witnesses.

    Scans rational mass grids on supports {-1,0,2} and {-2,0,1} (either side),
    screening each admissible pair with cheap float transform geometry and
    confirming hits -- including near-tie candidates -- through the exact
    classifier.  Returns {subcase: [(model, prediction), ...]}.

    A denominator-12 grid reaches every subcase except B1 and B3, whose
    defining equalities couple the two laws; those come from the parametric
    constructions behind SUBCASE_FIXTURES (see ``subcase_witnesses``).
    """
    from .errors import OscillaxError
    from .model import argmin_laplace, dist, laplace
    from .regimes import classify

    q = grid_denominator
    lefts, rights = [], []
    for i in range(1, q):
        for j in range(1, q - i):
            k = q - i - j
            if k < 1:
                continue
            if -i + 2 * k > 0:
                lefts.append({-1: F(i, q), 0: F(j, q), 2: F(k, q)})
            if -2 * i + k > 0:
                rights.append({-2: F(i, q), 0: F(j, q), 1: F(k, q)})
    rights = rights + lefts  # same-support right laws have mean > 0 already

    def profile(atoms):
        d = dist(atoms)
        lam, rho = argmin_laplace(d)
        return atoms, d, lam, rho

    P_left = [profile(a) for a in lefts]
    P_right = [profile(a) for a in rights]
    tie = 1e-10
    found: dict[str, list] = {}

    def screen(ld, lam, rho, rd, lamp, rhop):
        if abs(lam - lamp) <= tie:
            return "A1" if abs(rho - rhop) <= tie else "A2"
        if lam < lamp:
            if abs(rho - rhop) <= tie:
                return "B1"
            if rho < rhop:
                v = laplace(ld, lamp)
                return "B2" if v < rhop - tie else ("B3" if v <= rhop + tie else "B4")
            v = laplace(rd, lam)
            return "B5" if v < rho - tie else ("B6" if v <= rho + tie else "B7")
        return "C"

    wanted = {"A1", "A2", "B1", "B2", "B3", "B4", "B5", "B6", "B7", "C"}
    for la, ld, lam, rho in P_left:
        for ra, rd, lamp, rhop in P_right:
            if ld.max_support * rd.min_support > -2:
                continue
            sub = screen(ld, lam, rho, rd, lamp, rhop)
            if len(found.get(sub, [])) >= max_per_case:
                continue
            try:
                m = _pp(la, ra)
                pred = classify(m)   # exact confirmation (ties go to sympy)
            except OscillaxError:
                continue
            bucket = found.setdefault(pred.subcase, [])
            if len(bucket) < max_per_case:
                bucket.append((m, pred))
        if all(len(found.get(s, [])) >= max_per_case for s in wanted - {"B1", "B3"}):
            break
    return found


def subcase_witnesses(grid_denominator: int = 12) -> dict:
    """One model per subcase label, from the two arms of the fixture oracle.

    The pinned constructions are preferred as fit targets: they were chosen
    with well-separated rates (a coarse grid happily produces a B4 whose
    crossing value sits 2e-4 above rho', which classifies cleanly but needs
    horizons far past 4096 to show its geometric regime).  The grid arm still
    runs and completes any label missing a construction.
    """
    from .regimes import classify

    out = {}
    for sub, hits in search_subcase_fixtures(grid_denominator).items():
        out[sub] = hits[0][0]
    for name, fn in SUBCASE_FIXTURES.items():
        m = fn()
        assert classify(m).subcase == name
        out[name] = m
    return out
