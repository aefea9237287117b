"""Shared fixtures and the brute-force path-enumeration oracle.

The enumerator below is the independent oracle for every small-n DP value:
it walks the full tree of length-n paths with exact rational probabilities
and knows nothing about windows, convolutions, or kernels.
"""

from fractions import Fraction

import pytest

from oscillax.fixtures import FIXTURES, SUBCASE_FIXTURES


def enumerate_marginal(model, x, n):
    """{position: exact probability} of X_n started at x, by full path expansion."""
    cur = {x: Fraction(1)}
    for _ in range(n):
        new = {}
        for pos, mass in cur.items():
            law = model.law_at(pos)
            for v, p in zip(law.values, law.fracs):
                new[pos + v] = new.get(pos + v, Fraction(0)) + mass * p
        cur = new
    return cur


def enumerate_first_passage(dist, x, n_max, absorb_ge=None, absorb_le=None):
    """{(n, y): P[first entry into the absorbing set at n lands at y]} exactly."""
    cur = {x: Fraction(1)}
    out = {}
    for n in range(1, n_max + 1):
        new = {}
        for pos, mass in cur.items():
            for v, p in zip(dist.values, dist.fracs):
                dest = pos + v
                absorbed = ((absorb_ge is not None and dest >= absorb_ge)
                            or (absorb_le is not None and dest <= absorb_le))
                if absorbed:
                    out[(n, dest)] = out.get((n, dest), Fraction(0)) + mass * p
                else:
                    new[dest] = new.get(dest, Fraction(0)) + mass * p
        cur = new
    return out, cur


@pytest.fixture(scope="session")
def fix_zz():
    return FIXTURES["FIX-ZZ"]()


@pytest.fixture(scope="session")
def fix_pn():
    return FIXTURES["FIX-PN"]()


@pytest.fixture(scope="session")
def fix_pz():
    return FIXTURES["FIX-PZ"]()


@pytest.fixture(scope="session")
def fix_zp():
    return FIXTURES["FIX-ZP"]()


@pytest.fixture(scope="session")
def fix_pp():
    return FIXTURES["FIX-PP"]()


@pytest.fixture(scope="session")
def subcase_models():
    return {name: fn() for name, fn in SUBCASE_FIXTURES.items()}
