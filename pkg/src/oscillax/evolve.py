"""Exact dynamic programming for the oscillating walk on a truncated window.

Everything here evolves probability vectors indexed by an integer window
[lo, hi].  Mass that steps outside the window is accumulated as *leak*, which
is a rigorous bound on the truncation error of every reported probability.
A rational mode (Fraction-valued vectors) backs the exact-identity tests; a
rescaled mode keeps transient sequences representable far past the underflow
point of raw doubles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import ConventionMismatch, ValidationError, WindowTooSmall
from .model import Convention, LatticeDist, OscillatingModel

DEFAULT_LEAK_BUDGET = 1e-10


@dataclass(frozen=True)
class Window:
    lo: int
    hi: int

    def __post_init__(self):
        if not (self.lo < 0 < self.hi):
            raise ValidationError(f"window [{self.lo}, {self.hi}] must straddle 0")

    @property
    def width(self) -> int:
        return self.hi - self.lo + 1

    def index(self, pos: int) -> int:
        if not self.lo <= pos <= self.hi:
            raise ValidationError(f"position {pos} outside window [{self.lo}, {self.hi}]")
        return pos - self.lo

    def positions(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    def check_margin(self, model: OscillatingModel):
        if self.width < 3 * model.max_jump:
            raise WindowTooSmall(
                f"window width {self.width} below 3x max jump {model.max_jump}"
            )


def default_window(model: OscillatingModel, horizon: int) -> Window:
    """Diffusive sizing: hi = -lo = max(64, 8 ceil(sqrt(N)) * max jump)."""
    half = max(64, 8 * math.ceil(math.sqrt(max(horizon, 1))) * model.max_jump)
    return Window(-half, half)


class TableKind(Enum):
    MARGINAL = "marginal"
    FIRST_PASSAGE = "first_passage"
    SURVIVAL = "survival"
    EXCURSION = "excursion"
    RENEWAL_OP = "renewal_op"


@dataclass
class KernelTable:
    """Indexed family of per-step vectors/matrices plus tracked leak."""

    kind: TableKind
    window: Window
    horizon: int
    data: dict
    leak: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def cumulative_leak(self) -> np.ndarray:
        return self.leak


def _zeros(width: int, exact: bool):
    if exact:
        return np.array([Fraction(0)] * width, dtype=object)
    return np.zeros(width)


def _zero(exact: bool):
    return Fraction(0) if exact else 0.0


def _convolve_segment(seg, seg_base, kernel, k_lo):
    """Convolve a position-indexed segment with a jump kernel.

    Returns (result array, base position of result[0]).
    """
    return np.convolve(seg, kernel), seg_base + k_lo


def _scatter(target, window: Window, arr, base):
    """Add arr (positions base..base+len-1) into target over the window;
    returns (mass lost below lo, mass lost above hi)."""
    lo_i = window.lo - base
    hi_i = window.hi - base
    s = max(0, lo_i)
    e = min(len(arr) - 1, hi_i)
    below = arr[:s].sum() if s > 0 else _zero(isinstance(arr[0], Fraction))
    above = arr[e + 1:].sum() if e + 1 < len(arr) else _zero(isinstance(arr[0], Fraction))
    if e >= s:
        target[base + s - window.lo: base + e - window.lo + 1] += arr[s:e + 1]
    return below, above


def step(state, model: OscillatingModel, window: Window):
    """One step of the oscillating walk; returns (new_state, leaked).

    leaked is a pair (below_lo, above_hi); conservation
    sum(new) + sum(leaked) == sum(state) holds exactly in rational mode.
    """
    exact = isinstance(state[0], Fraction)
    width = window.width
    idx0 = window.index(0)
    new = _zeros(width, exact)
    lk_lo = _zero(exact)
    lk_hi = _zero(exact)
    cut = idx0 + 1 if model.two_media else idx0  # left medium covers x <= cut-1+lo

    left = state[:cut]
    if np.any(left != 0):
        k_lo, kern = model.left.dense_kernel(exact)
        arr, base = _convolve_segment(left, window.lo, kern, k_lo)
        b, a = _scatter(new, window, arr, base)
        lk_lo += b
        lk_hi += a
    if not model.two_media:
        z = state[idx0]
        if z != 0:
            k_lo, kern = model.origin.dense_kernel(exact)
            b, a = _scatter(new, window, z * kern, k_lo)
            lk_lo += b
            lk_hi += a
    right = state[idx0 + 1:]  # positions 1..hi under either convention
    if np.any(right != 0):
        k_lo, kern = model.right.dense_kernel(exact)
        arr, base = _convolve_segment(right, 1, kern, k_lo)
        b, a = _scatter(new, window, arr, base)
        lk_lo += b
        lk_hi += a
    return new, (lk_lo, lk_hi)


def transition_matrix(model: OscillatingModel, window: Window) -> np.ndarray:
    """Dense one-step transition matrix of the walk restricted to the window."""
    width = window.width
    P = np.zeros((width, width))
    for x in range(window.lo, window.hi + 1):
        law = model.law_at(x)
        for v, p in zip(law.values, law.probs):
            y = x + v
            if window.lo <= y <= window.hi:
                P[x - window.lo, y - window.lo] = p
    return P


def marginal_sequence(
    model: OscillatingModel,
    x: int,
    y: int,
    horizon: int,
    window: Optional[Window] = None,
    leak_budget: Optional[float] = DEFAULT_LEAK_BUDGET,
    exact: bool = False,
    rescaled: bool = False,
) -> KernelTable:
    """P_x[X_n = y] for n = 0..horizon with a certified leak bound.

    ``rescaled`` renormalizes the state each step and accumulates the total
    mass on a log scale, so geometrically small transient sequences stay
    representable; log values are reported in data['log_values'].
    """
    if exact and rescaled:
        raise ValidationError("rescaled mode is float-only")
    window = window or default_window(model, horizon)
    window.check_margin(model)
    ix, iy = window.index(x), window.index(y)
    state = _zeros(window.width, exact)
    state[ix] = Fraction(1) if exact else 1.0
    values = _zeros(horizon + 1, exact)
    values[0] = state[iy]
    log_values = np.full(horizon + 1, -np.inf)
    if x == y:
        log_values[0] = 0.0
    leak = _zeros(horizon + 1, exact)
    leak_lo = _zeros(horizon + 1, exact)
    leak_hi = _zeros(horizon + 1, exact)
    log_scale = 0.0
    for n in range(1, horizon + 1):
        state, (lo_n, hi_n) = step(state, model, window)
        scale_leak = math.exp(log_scale) if rescaled else 1.0
        leak_lo[n] = leak_lo[n - 1] + lo_n * scale_leak
        leak_hi[n] = leak_hi[n - 1] + hi_n * scale_leak
        leak[n] = leak_lo[n] + leak_hi[n]
        if rescaled:
            s = float(state.sum())
            if s <= 0.0:
                values[n:] = 0.0
                break
            state = state / s
            log_scale += math.log(s)
            v = float(state[iy])
            log_values[n] = math.log(v) + log_scale if v > 0 else -np.inf
            values[n] = math.exp(log_values[n]) if log_values[n] > -700 else 0.0
        else:
            values[n] = state[iy]
        if leak_budget is not None and float(leak[n]) > leak_budget:
            raise WindowTooSmall(
                f"cumulative leak {float(leak[n]):.3e} exceeds budget {leak_budget:.3e} at n={n}"
            )
    data = {
        "values": values,
        "final_state": state,
        "leak_below": leak_lo,
        "leak_above": leak_hi,
    }
    if rescaled:
        data["log_values"] = log_values
        data["log_scale"] = log_scale
    return KernelTable(
        kind=TableKind.MARGINAL,
        window=window,
        horizon=horizon,
        data=data,
        leak=leak,
        meta={"x": x, "y": y, "exact": exact, "rescaled": rescaled},
    )


class Side(Enum):
    FROM_NEGATIVE = "from_negative"
    FROM_POSITIVE = "from_positive"


def passage_regions(side: Side, convention: Convention, dist: LatticeDist):
    """(survival region max or min, arrival band) for a first-passage problem.

    FROM_NEGATIVE under the three-media convention kills the walk on reaching
    >= 0; under the two-media convention on reaching >= 1.  FROM_POSITIVE
    kills on reaching <= 0 under both conventions.
    """
    if side is Side.FROM_NEGATIVE:
        surv_hi = -1 if convention is Convention.THREE_MEDIA else 0
        band = (surv_hi + 1, surv_hi + dist.max_support)
        return surv_hi, band
    surv_lo = 1
    band = (surv_lo + dist.min_support, 0)
    return surv_lo, band


def first_passage_kernel(
    dist: LatticeDist,
    side: Side,
    convention: Convention,
    x: int,
    horizon: int,
    window: Window,
    exact: bool = False,
) -> KernelTable:
    """First-passage kernel rows Q_n(x, .) plus the survival sequence.

    data['arrivals'] has shape (horizon+1, band width) over the arrival band;
    data['survival'][n] = mass still strictly inside the medium after n steps
    (window leak counted as surviving, so survival + sum(arrivals) == 1
    exactly in rational mode).
    """
    bound, (band_lo, band_hi) = passage_regions(side, convention, dist)
    if side is Side.FROM_NEGATIVE:
        if x > bound:
            raise ConventionMismatch(f"start {x} not in survival region (<= {bound})")
        seg_lo, seg_hi = window.lo, bound
    else:
        if x < bound:
            raise ConventionMismatch(f"start {x} not in survival region (>= {bound})")
        seg_lo, seg_hi = bound, window.hi
    width = seg_hi - seg_lo + 1
    state = _zeros(width, exact)
    state[x - seg_lo] = Fraction(1) if exact else 1.0
    band_w = band_hi - band_lo + 1
    arrivals = np.empty((horizon + 1, band_w), dtype=object if exact else float)
    arrivals[:] = Fraction(0) if exact else 0.0
    survival = _zeros(horizon + 1, exact)
    survival[0] = Fraction(1) if exact else 1.0
    leak = _zeros(horizon + 1, exact)
    k_lo, kern = dist.dense_kernel(exact)
    for n in range(1, horizon + 1):
        if not np.any(state != 0):
            survival[n:] = survival[n - 1]
            leak[n:] = leak[n - 1]
            break
        arr, base = _convolve_segment(state, seg_lo, kern, k_lo)
        new = _zeros(width, exact)
        lost = _zero(exact)
        absorbed = _zeros(band_w, exact)
        for i, m in enumerate(arr):
            if m == 0:
                continue
            pos = base + i
            if seg_lo <= pos <= seg_hi:
                new[pos - seg_lo] += m
            elif band_lo <= pos <= band_hi:
                absorbed[pos - band_lo] += m
            else:
                lost += m  # outside the window on the survival side
        arrivals[n] = absorbed
        state = new
        leak[n] = leak[n - 1] + lost
        survival[n] = state.sum() + leak[n]
    return KernelTable(
        kind=TableKind.FIRST_PASSAGE,
        window=window,
        horizon=horizon,
        data={
            "arrivals": arrivals,
            "band": (band_lo, band_hi),
            "survival": survival,
            "final_state": state,
            "segment": (seg_lo, seg_hi),
        },
        leak=leak,
        meta={"x": x, "side": side, "convention": convention, "exact": exact},
    )


def excursion_functions(
    model: OscillatingModel,
    y: int,
    horizon: int,
    window: Window,
    exact: bool = False,
) -> KernelTable:
    """Final-excursion functions V_{n,y}(x) for all x in the window.

    V_{0,y} is the indicator of {y}; for n >= 1, V_{n,y}(x) is the probability
    that the walk started at x stays strictly inside y's medium for n steps and
    sits at y at time n (and 0 for x outside that medium).
    """
    window.check_margin(model)
    width = window.width
    V = np.empty((horizon + 1, width), dtype=object if exact else float)
    V[:] = Fraction(0) if exact else 0.0
    one = Fraction(1) if exact else 1.0
    V[0, window.index(y)] = one
    three = not model.two_media
    if three and y == 0:
        p00 = model.origin.pmf_frac(0) if exact else model.origin.pmf(0)
        acc = one
        for n in range(1, horizon + 1):
            acc = acc * p00
            V[n, window.index(0)] = acc
        return KernelTable(TableKind.EXCURSION, window, horizon,
                           {"V": V}, _zeros(horizon + 1, exact),
                           meta={"y": y, "exact": exact})
    if y <= (-1 if three else 0):
        law = model.left
        seg_lo, seg_hi = window.lo, -1 if three else 0
    elif y >= 1:
        law = model.right
        seg_lo, seg_hi = 1, window.hi
    else:
        raise ValidationError("unreachable")
    k_lo, kern = law.dense_kernel(exact)
    kern_rev = kern[::-1]
    k_hi = law.max_support
    cur = _zeros(seg_hi - seg_lo + 1, exact)
    cur[y - seg_lo] = one
    leak = _zeros(horizon + 1, exact)
    for n in range(1, horizon + 1):
        # adjoint action: w(x) = sum_off law(off) * cur(x + off)
        arr = np.convolve(cur, kern_rev)
        base = seg_lo - k_hi
        new = _zeros(seg_hi - seg_lo + 1, exact)
        lost = _zero(exact)
        for i, m in enumerate(arr):
            if m == 0:
                continue
            pos = base + i
            if seg_lo <= pos <= seg_hi:
                new[pos - seg_lo] += m
            else:
                lost += m  # starting points outside the window
        cur = new
        leak[n] = leak[n - 1] + lost
        V[n, window.index(seg_lo): window.index(seg_hi) + 1] = cur
    return KernelTable(TableKind.EXCURSION, window, horizon, {"V": V}, leak,
                       meta={"y": y, "exact": exact})
