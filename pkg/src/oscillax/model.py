"""Lattice jump distributions, model validation, and Laplace-transform analysis.

A model is a triple of finitely supported integer jump laws (left, origin,
right) driving a walk whose increment law depends on the sign of the current
position.  All quantities that feed the asymptotic classification -- argmin of
the Laplace transform, its minimum value, the crossing point of two transforms,
exponential tilting -- live here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateInterval,
    IdenticalTransforms,
    NotAperiodic,
    O3Violated,
    O4Violated,
    SupportOneSided,
    ValidationError,
)

PROB_SUM_TOL = 1e-14
ZERO_DRIFT_TOL = 1e-12
BISECT_TOL = 1e-12
TIE_TOL = 1e-10
MAX_BISECT_ITER = 200
EXP_OVERFLOW = 700.0


class Convention(Enum):
    THREE_MEDIA = "three_media"
    TWO_MEDIA = "two_media"


class DriftCase(Enum):
    PN = "(P,N)"
    ZZ = "(Z,Z)"
    PZ = "(P,Z)"
    ZP = "(Z,P)"
    NP = "(N,P)"
    PP = "(P,P)"
    ZN = "(Z,N)"
    NZ = "(N,Z)"
    NN = "(N,N)"


@dataclass(frozen=True)
class LatticeDist:
    """Finitely supported probability law on the integers.

    ``fracs`` holds exact rational probabilities when the law was built from
    exact inputs; it backs the exact-arithmetic mode of the DP engines.
    """

    values: tuple[int, ...]
    probs: np.ndarray
    fracs: Optional[tuple[Fraction, ...]] = None
    mean: float = field(init=False)
    variance: float = field(init=False)
    min_support: int = field(init=False)
    max_support: int = field(init=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if len(vals) == 0:
            raise ValidationError("distribution has no atoms")
        if np.any(np.diff(vals) <= 0):
            raise ValidationError("atom values must be strictly increasing")
        if np.any(probs <= 0):
            raise ValidationError("every atom probability must be > 0")
        if abs(probs.sum() - 1.0) > PROB_SUM_TOL:
            raise ValidationError(f"probabilities sum to {probs.sum()!r}, not 1")
        m = float(probs @ vals)
        var = float(probs @ vals**2) - m * m
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "variance", max(var, 0.0))
        object.__setattr__(self, "min_support", int(self.values[0]))
        object.__setattr__(self, "max_support", int(self.values[-1]))

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)

    @property
    def exact(self) -> bool:
        return self.fracs is not None

    def pmf(self, v: int) -> float:
        try:
            return float(self.probs[self.values.index(v)])
        except ValueError:
            return 0.0

    def pmf_frac(self, v: int) -> Fraction:
        if self.fracs is None:
            raise ValidationError("distribution carries no exact probabilities")
        try:
            return self.fracs[self.values.index(v)]
        except ValueError:
            return Fraction(0)

    def tail_ge(self, w: int) -> float:
        """mu[w, +inf)."""
        return float(sum(p for v, p in zip(self.values, self.probs) if v >= w))

    def tail_le(self, w: int) -> float:
        """mu(-inf, w]."""
        return float(sum(p for v, p in zip(self.values, self.probs) if v <= w))

    def dense_kernel(self, exact: bool = False):
        """(offset of index 0, contiguous pmf array over [min,max] support)."""
        lo, hi = self.min_support, self.max_support
        if exact:
            k = np.array([Fraction(0)] * (hi - lo + 1), dtype=object)
            for v, p in zip(self.values, self.fracs):
                k[v - lo] = p
        else:
            k = np.zeros(hi - lo + 1)
            for v, p in zip(self.values, self.probs):
                k[v - lo] = p
        return lo, k

    def as_pairs(self):
        if self.fracs is not None:
            return [(v, p) for v, p in zip(self.values, self.fracs)]
        return [(v, float(p)) for v, p in zip(self.values, self.probs)]


def dist(atoms: Iterable) -> LatticeDist:
    """Build a LatticeDist from (value, prob) pairs or a {value: prob} map.

    Probabilities given as int/Fraction/str are kept exactly; any float makes
    the law float-only.
    """
    if isinstance(atoms, dict):
        atoms = atoms.items()
    pairs = sorted((int(v), p) for v, p in atoms)
    values = tuple(v for v, _ in pairs)
    raw = [p for _, p in pairs]
    exact = all(isinstance(p, (int, Fraction, str)) for p in raw)
    if exact:
        fracs = tuple(Fraction(p) for p in raw)
        total = sum(fracs)
        if total != 1:
            raise ValidationError(f"exact probabilities sum to {total}, not 1")
        probs = np.array([float(f) for f in fracs])
        return LatticeDist(values, probs, fracs)
    probs = np.array([float(p) for p in raw])
    return LatticeDist(values, probs, None)


def mirror_dist(d: LatticeDist) -> LatticeDist:
    """Reflect the law through the origin: atoms (v, p) -> (-v, p)."""
    pairs = list(zip(d.values, d.fracs if d.exact else d.probs))
    return dist([(-v, p) for v, p in pairs])


# ---------------------------------------------------------------------------
# Laplace transform analysis
# ---------------------------------------------------------------------------

def laplace(d: LatticeDist, t: float) -> float:
    """L(t) = sum_i p_i e^{t v_i}; exact finite sum, entire in t."""
    vals = np.asarray(d.values, dtype=float)
    if np.max(np.abs(t * vals)) > EXP_OVERFLOW:
        raise OverflowError(f"|t*v| exceeds {EXP_OVERFLOW} for t={t}")
    return float(d.probs @ np.exp(t * vals))


def laplace_deriv(d: LatticeDist, t: float) -> float:
    """dL/dt = sum_i p_i v_i e^{t v_i}."""
    vals = np.asarray(d.values, dtype=float)
    if np.max(np.abs(t * vals)) > EXP_OVERFLOW:
        raise OverflowError(f"|t*v| exceeds {EXP_OVERFLOW} for t={t}")
    return float(d.probs @ (vals * np.exp(t * vals)))


def _require_two_sided(d: LatticeDist):
    if d.min_support >= 0 or d.max_support <= 0:
        raise SupportOneSided(
            f"support [{d.min_support}, {d.max_support}] lies on one side of 0"
        )


def argmin_laplace(d: LatticeDist) -> tuple[float, float]:
    """Locate (lambda, rho) with rho = min L = L(lambda).

    Bisection on dL/dt over a bracketing interval grown geometrically from
    [-1, 1]; two-sided support guarantees an interior minimum.
    """
    _require_two_sided(d)
    a, b = -1.0, 1.0
    while laplace_deriv(d, a) > 0:
        a *= 2.0
    while laplace_deriv(d, b) < 0:
        b *= 2.0
    for _ in range(MAX_BISECT_ITER):
        mid = 0.5 * (a + b)
        if laplace_deriv(d, mid) < 0:
            a = mid
        else:
            b = mid
        if b - a < 1e-16 * max(1.0, abs(a)):
            break
    lam = 0.5 * (a + b)
    if abs(d.mean) <= ZERO_DRIFT_TOL:
        lam = 0.0  # centered laws have their minimum exactly at the origin
    return lam, laplace(d, lam)


@dataclass(frozen=True)
class LaplaceProfile:
    """Argmin data for one or two transforms; crossing present when it exists."""

    lam: float
    rho: float
    crossing: Optional[tuple[float, float]] = None


def laplace_profile(d: LatticeDist, other: Optional[LatticeDist] = None) -> LaplaceProfile:
    """Argmin data for d; with ``other`` given, also the crossing of the two
    transforms between their argmins (None stays None when they do not cross)."""
    lam, rho = argmin_laplace(d)
    crossing = None
    if other is not None:
        crossing = cross_point(d, other)
    return LaplaceProfile(lam, rho, crossing)


def tilt(d: LatticeDist, t: float) -> LatticeDist:
    """Exponential change of measure: atom (v, p) -> (v, p e^{tv} / L(t))."""
    if t == 0.0:
        return d
    norm = laplace(d, t)
    probs = [p * math.exp(t * v) / norm for v, p in zip(d.values, d.probs)]
    total = sum(probs)
    return LatticeDist(d.values, np.array(probs) / total, None)


def geometric_tilt(d: LatticeDist, ratio: Fraction) -> LatticeDist:
    """Tilt by t = log(ratio) with exact rational weights p_i * ratio**v_i.

    Keeps the law exact when ``d`` is exact, which is what makes the tilting
    identities assertable to zero residual.
    """
    ratio = Fraction(ratio)
    if ratio <= 0:
        raise ValidationError("tilt ratio must be positive")
    if not d.exact:
        return tilt(d, math.log(float(ratio)))
    weights = [p * ratio**v for v, p in zip(d.values, d.fracs)]
    total = sum(weights)
    return dist([(v, w / total) for v, w in zip(d.values, weights)])


def cross_point(left: LatticeDist, right: LatticeDist) -> Optional[tuple[float, float]]:
    """Solve L(t) = L'(t) between the two argmins.

    Returns (lambda_star, rho_star), or None when the difference keeps a
    strict sign on the whole interval (no crossing).
    """
    lam, _ = argmin_laplace(left)
    lamp, _ = argmin_laplace(right)
    a, b = min(lam, lamp), max(lam, lamp)
    grid = np.linspace(a - 1.0, b + 1.0, 17)
    if all(abs(laplace(left, t) - laplace(right, t)) < 1e-13 for t in grid):
        raise IdenticalTransforms("the two Laplace transforms coincide")
    if b - a <= TIE_TOL:
        raise DegenerateInterval(f"argmins coincide: {lam} vs {lamp}")

    def g(t):
        return laplace(left, t) - laplace(right, t)

    ga, gb = g(a), g(b)
    if ga * gb > 0:
        return None
    for _ in range(MAX_BISECT_ITER):
        mid = 0.5 * (a + b)
        if ga * g(mid) <= 0:
            b = mid
        else:
            a, ga = mid, g(mid)
        if b - a < 1e-16 * max(1.0, abs(a)):
            break
    lam_star = 0.5 * (a + b)
    return lam_star, laplace(left, lam_star)


# ---------------------------------------------------------------------------
# Model assembly and hypotheses
# ---------------------------------------------------------------------------

def is_strongly_aperiodic(d: LatticeDist) -> bool:
    """gcd of pairwise support differences equals 1 (needs >= 2 atoms)."""
    if len(d.values) < 2:
        return False
    g = 0
    for v in d.values[1:]:
        g = math.gcd(g, v - d.values[0])
    return g == 1


def _drift_letter(mean: float) -> str:
    if mean > ZERO_DRIFT_TOL:
        return "P"
    if mean < -ZERO_DRIFT_TOL:
        return "N"
    return "Z"


@dataclass(frozen=True)
class OscillatingModel:
    """Validated jump-law triple plus the derived classification inputs."""

    left: LatticeDist
    origin: LatticeDist
    right: LatticeDist
    convention: Convention
    D: int
    Dprime: int
    D0_plus: Optional[int]
    D0_minus: Optional[int]
    drift_case: DriftCase

    @property
    def exact(self) -> bool:
        return self.left.exact and self.origin.exact and self.right.exact

    @property
    def two_media(self) -> bool:
        return self.convention is Convention.TWO_MEDIA

    @property
    def max_jump(self) -> int:
        dists = (self.left, self.origin, self.right)
        return max(max(abs(d.min_support), abs(d.max_support)) for d in dists)

    def law_at(self, x: int) -> LatticeDist:
        """Jump law used from position x."""
        if self.two_media:
            return self.left if x <= 0 else self.right
        if x <= -1:
            return self.left
        if x == 0:
            return self.origin
        return self.right


def validate_model(
    left: LatticeDist,
    origin: LatticeDist,
    right: LatticeDist,
    two_media: bool = False,
    _allow_o3_violation: bool = False,
) -> OscillatingModel:
    """Check the structural hypotheses and assemble a model.

    Raises NotAperiodic / SupportOneSided / O3Violated / O4Violated.  The
    two-media convention forces origin := left (the origin then belongs to the
    left medium).  ``_allow_o3_violation`` exists only for closed-form test
    oracles and is rejected by the CLI.
    """
    if two_media:
        origin = left
    _require_two_sided(left)
    _require_two_sided(right)
    if not is_strongly_aperiodic(left):
        raise NotAperiodic("left law is not strongly aperiodic")
    if not is_strongly_aperiodic(right):
        raise NotAperiodic("right law is not strongly aperiodic")
    d = left.max_support
    dprime = right.min_support
    if d < 1:
        raise SupportOneSided("left law has no atom on the positive half-line")
    if dprime > -1:
        raise SupportOneSided("right law has no atom on the negative half-line")
    if d * dprime > -2 and not _allow_o3_violation:
        raise O3Violated(d, dprime)
    if not (origin.min_support < 0 < origin.max_support):
        raise O4Violated("origin law must charge both strict half-lines")
    d0_plus = max((v for v in origin.values if v >= 1), default=None)
    d0_minus = min((v for v in origin.values if v <= -1), default=None)
    case = DriftCase(f"({_drift_letter(left.mean)},{_drift_letter(right.mean)})")
    return OscillatingModel(
        left=left,
        origin=origin,
        right=right,
        convention=Convention.TWO_MEDIA if two_media else Convention.THREE_MEDIA,
        D=d,
        Dprime=dprime,
        D0_plus=d0_plus,
        D0_minus=d0_minus,
        drift_case=case,
    )


def mirror_model(model: OscillatingModel) -> OscillatingModel:
    """Reflect through the origin: negate all atoms and swap the two media."""
    return validate_model(
        mirror_dist(model.right),
        mirror_dist(model.origin),
        mirror_dist(model.left),
        two_media=model.two_media,
    )


def essential_class(model: OscillatingModel) -> list[int]:
    """Arrival sites of the switching subprocess: its unique essential class."""
    if model.two_media:
        return list(range(model.Dprime + 1, model.D + 1))
    sites = set(range(model.Dprime + 1, model.D))
    sites.update(model.origin.values)
    return sorted(sites)


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def _pairs_from_json(entries) -> LatticeDist:
    return dist([(int(v), p) for v, p in entries])


def _pairs_to_json(d: LatticeDist):
    out = []
    for v, p in d.as_pairs():
        out.append([v, str(p) if isinstance(p, Fraction) else p])
    return out


def load_model(source) -> OscillatingModel:
    """Load a model from a JSON file path, JSON string, or dict."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text() if Path(str(source)).exists() else str(source)
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"not a model file or JSON document: {source}") from exc
    else:
        payload = source
    try:
        left = _pairs_from_json(payload["left"])
        right = _pairs_from_json(payload["right"])
        two_media = bool(payload.get("two_media", False))
        origin = left if two_media else _pairs_from_json(payload["origin"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed model file: {exc}") from exc
    return validate_model(left, origin, right, two_media=two_media)


def dump_model(model: OscillatingModel) -> dict:
    payload = {
        "left": _pairs_to_json(model.left),
        "origin": _pairs_to_json(model.origin),
        "right": _pairs_to_json(model.right),
    }
    if model.two_media:
        payload["two_media"] = True
    return payload


def save_model(model: OscillatingModel, path) -> None:
    Path(path).write_text(json.dumps(dump_model(model), indent=1) + "\n")
