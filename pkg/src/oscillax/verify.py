"""Monte Carlo, asymptotic fitting, and the exact-identity/convergence suites.

The fitting conventions: the geometric rate comes from ratio medians over
dyadic blocks refined by Aitken extrapolation (the ratio of consecutive terms
carries a -beta/n bias that halves per block, which Aitken removes); the
polynomial exponent from least squares against -log n after peeling the rate;
the constant from the plateau of the rectified sequence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import LeakDominated, SequenceTooNoisy, ValidationError
from .evolve import (
    Side,
    Window,
    first_passage_kernel,
    marginal_sequence,
    excursion_functions,
)
from .ladder import LadderVariant, fluctuation_constants, ladder_potentials
from .model import (
    Convention,
    DriftCase,
    LatticeDist,
    OscillatingModel,
    geometric_tilt,
    laplace,
)

# ---------------------------------------------------------------------------
# Rate/exponent/constant fitting
# ---------------------------------------------------------------------------

@dataclass
class AsymptoticFit:
    rho_hat: float
    beta_hat: float
    C_hat: float
    fit_window: tuple[int, int]
    residual_rms: float
    plateau_series: list
    usable_points: int

    def matches(self, rate: float, exponent: float,
                rate_tol: float = 1e-3, exp_tol: float = 0.15) -> bool:
        return abs(self.rho_hat - rate) <= rate_tol and abs(self.beta_hat - exponent) <= exp_tol


def fit_rate_exponent(
    values: Optional[np.ndarray] = None,
    leaks: Optional[np.ndarray] = None,
    fit_window: Optional[tuple[int, int]] = None,
    log_values: Optional[np.ndarray] = None,
    noise_tol: float = 0.1,
) -> AsymptoticFit:
    """Estimate (rho, beta, C) from a_n ~ C rho^n n^{-beta}.

    Accepts the sequence either linearly or as log values (index = n).  Points
    where the reported leak exceeds 1% of the value are discarded; at least 64
    usable points are required inside the fit window.
    """
    if log_values is None:
        if values is None:
            raise ValidationError("need values or log_values")
        values = np.asarray(values, dtype=float)
        with np.errstate(divide="ignore"):
            log_values = np.where(values > 0, np.log(np.maximum(values, 1e-320)), -np.inf)
    log_values = np.asarray(log_values, dtype=float)
    N = len(log_values) - 1
    n_lo, n_hi = fit_window or (max(1, N // 8), N)
    if n_hi > N:
        raise ValidationError(f"fit window {n_hi} beyond horizon {N}")
    ns = np.arange(n_lo, n_hi + 1)
    usable = np.isfinite(log_values[ns])
    if leaks is not None:
        leaks = np.asarray(leaks, dtype=float)
        # compare on the log scale: the values may sit far below double range
        with np.errstate(divide="ignore"):
            log_leaks = np.where(leaks[ns] > 0, np.log(np.maximum(leaks[ns], 1e-320)),
                                 -np.inf)
        usable &= log_leaks <= math.log(0.01) + log_values[ns]
    ns = ns[usable]
    if len(ns) < 64:
        raise LeakDominated(f"only {len(ns)} usable points in [{n_lo}, {n_hi}]")

    # rho: dyadic-block ratio medians + Aitken
    ratios_n = ns[:-1][np.diff(ns) == 1]
    r = np.exp(log_values[ratios_n + 1] - log_values[ratios_n])
    blocks = []
    b_hi = n_hi
    for _ in range(3):
        b_lo = b_hi // 2
        sel = (ratios_n >= b_lo) & (ratios_n < b_hi)
        if sel.sum() >= 8:
            blocks.append(float(np.median(r[sel])))
        b_hi = b_lo
    blocks = blocks[::-1]
    if len(blocks) >= 3:
        m1, m2, m3 = blocks[-3:]
        d1, d2 = m2 - m1, m3 - m2
        rho_hat = m3 - d2 * d2 / (d2 - d1) if d2 != d1 else m3
    elif blocks:
        rho_hat = blocks[-1]
    else:
        raise SequenceTooNoisy("not enough consecutive points for ratio blocks")
    rho_hat = float(min(rho_hat, 1.0))

    # beta: least squares of (log a_n - n log rho) on -log n
    y = log_values[ns] - ns * math.log(rho_hat)
    A = np.vstack([-np.log(ns), np.ones(len(ns))]).T
    (beta_hat, logC), res, *_ = np.linalg.lstsq(A, y, rcond=None)
    fitted = A @ np.array([beta_hat, logC])
    residual_rms = float(np.sqrt(np.mean((y - fitted) ** 2)))
    if residual_rms > noise_tol:
        raise SequenceTooNoisy(f"residual rms {residual_rms:.3g} exceeds {noise_tol}")

    # C: plateau mean of the rectified values over the top half of the window
    top = ns >= n_hi // 2
    C_hat = float(np.mean(np.exp(log_values[ns[top]]
                                 - ns[top] * math.log(rho_hat)
                                 + beta_hat * np.log(ns[top]))))
    plateau = []
    n = n_lo
    while n <= n_hi:
        if np.isfinite(log_values[n]):
            plateau.append((int(n), float(math.exp(
                log_values[n] - n * math.log(rho_hat) + beta_hat * math.log(n)))))
        n *= 2
    return AsymptoticFit(
        rho_hat=rho_hat,
        beta_hat=float(beta_hat),
        C_hat=C_hat,
        fit_window=(int(n_lo), int(n_hi)),
        residual_rms=residual_rms,
        plateau_series=plateau,
        usable_points=int(len(ns)),
    )


def effective_leak(table, model: OscillatingModel, rate: float = 1.0) -> np.ndarray:
    """Returnable-mass estimate of the window-truncation error per step.

    The raw cumulative leak is a certified but crude bound: for a transient
    model the drifting bulk exits the window yet can only re-enter against its
    own drift, at exponential cost e^{-|tilt| * margin}.  Each leaked packet is
    therefore discounted by the re-entry factor of its side and then by the
    best possible in-window decay ``rate`` per remaining step:

        eff_n = rate * eff_{n-1} + flux_n^below * d_left + flux_n^above * d_right.

    A centered side gets no discount (d = 1), so for recurrent models this
    reduces to the raw bound.
    """
    from .model import ZERO_DRIFT_TOL, argmin_laplace

    window = table.window
    lo_cum = np.asarray(table.data["leak_below"], dtype=float)
    hi_cum = np.asarray(table.data["leak_above"], dtype=float)
    d_left = d_right = 1.0
    if model.left.mean < -ZERO_DRIFT_TOL:   # escapes to -inf, must climb back
        lam, _ = argmin_laplace(model.left)
        d_left = math.exp(-abs(lam) * abs(window.lo))
    if model.right.mean > ZERO_DRIFT_TOL:   # escapes to +inf
        lamp, _ = argmin_laplace(model.right)
        d_right = math.exp(-abs(lamp) * window.hi)
    if model.left.mean > ZERO_DRIFT_TOL:
        # left medium pushes toward the interface: mass below lo fights the drift
        lam, _ = argmin_laplace(model.left)
        d_left = math.exp(-abs(lam) * abs(window.lo))
    if model.right.mean < -ZERO_DRIFT_TOL:
        lamp, _ = argmin_laplace(model.right)
        d_right = math.exp(-abs(lamp) * window.hi)
    # log-space recursion: the discounted bound keeps decaying geometrically
    # long after its linear representation would underflow
    log_rate = math.log(rate) if rate > 0 else -math.inf
    log_eff = np.full(len(lo_cum), -np.inf)
    ld, rd = (math.log(d_left) if d_left > 0 else -math.inf,
              math.log(d_right) if d_right > 0 else -math.inf)
    for n in range(1, len(log_eff)):
        flux_lo = lo_cum[n] - lo_cum[n - 1]
        flux_hi = hi_cum[n] - hi_cum[n - 1]
        new = np.logaddexp(math.log(flux_lo) + ld if flux_lo > 0 else -np.inf,
                           math.log(flux_hi) + rd if flux_hi > 0 else -np.inf)
        log_eff[n] = np.logaddexp(log_rate + log_eff[n - 1], new)
    with np.errstate(over="ignore"):
        return np.where(log_eff > -700, np.exp(np.minimum(log_eff, 700)), 0.0)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@dataclass
class SimResult:
    counts: dict                 # n -> {y: hits}
    paths: int
    seed: int
    n_steps: int
    c1_histogram: dict           # first switch time -> paths (None key: no switch)
    switch_counts: dict          # total switches by n_steps -> paths

    def marginal(self, n: int) -> dict:
        return {y: h / self.paths for y, h in self.counts[n].items()}

    def to_json(self) -> str:
        def enc(d):
            return {str(k): v for k, v in sorted(d.items(), key=lambda kv: (kv[0] is None, kv[0]))}
        payload = {
            "paths": self.paths,
            "seed": self.seed,
            "n_steps": self.n_steps,
            "counts": {str(n): enc(c) for n, c in sorted(self.counts.items())},
            "c1_histogram": enc(self.c1_histogram),
            "switch_counts": enc(self.switch_counts),
        }
        return json.dumps(payload, sort_keys=True)


def _class_of(positions: np.ndarray, two_media: bool) -> np.ndarray:
    """Medium index per position: 0 left, 1 origin, 2 right."""
    if two_media:
        return np.where(positions <= 0, 0, 2)
    return np.where(positions <= -1, 0, np.where(positions == 0, 1, 2))


def simulate(
    model: OscillatingModel,
    x: int,
    n_steps: int,
    n_paths: int,
    seed: int,
    record: Optional[Sequence[int]] = None,
    chunk: int = 1 << 15,
) -> SimResult:
    """Sample the walk with counter-based (Philox) streams, one per chunk.

    Marginals are recorded at the dyadic times plus n_steps; switching
    statistics track the first medium change and the total number of changes.
    Identical (seed, n_paths, n_steps) give byte-identical results.
    """
    if record is None:
        record = sorted({2 ** k for k in range(0, int(math.log2(max(n_steps, 1))) + 1)
                         if 2 ** k <= n_steps} | {n_steps})
    record = sorted(set(record))
    laws = {}
    for idx, d in ((0, model.left), (1, model.origin), (2, model.right)):
        laws[idx] = (np.asarray(d.values), np.cumsum(d.probs))
    counts = {n: {} for n in record}
    c1_hist = {}
    switch_hist = {}
    n_chunks = (n_paths + chunk - 1) // chunk
    for ci in range(n_chunks):
        m = min(chunk, n_paths - ci * chunk)
        rng = np.random.Generator(np.random.Philox(key=seed).jumped(ci))
        pos = np.full(m, x, dtype=np.int64)
        cls = _class_of(pos, model.two_media)
        first_switch = np.zeros(m, dtype=np.int64)  # 0 = not yet
        n_switch = np.zeros(m, dtype=np.int64)
        for n in range(1, n_steps + 1):
            u = rng.random(m)
            inc = np.zeros(m, dtype=np.int64)
            for idx in (0, 1, 2):
                mask = cls == idx
                if mask.any():
                    vals, cum = laws[idx]
                    inc[mask] = vals[np.searchsorted(cum, u[mask], side="right").clip(0, len(vals) - 1)]
            pos = pos + inc
            new_cls = _class_of(pos, model.two_media)
            changed = new_cls != cls
            n_switch += changed
            newly = changed & (first_switch == 0)
            first_switch[newly] = n
            cls = new_cls
            if n in counts:
                ys, hs = np.unique(pos, return_counts=True)
                for yy, hh in zip(ys, hs):
                    counts[n][int(yy)] = counts[n].get(int(yy), 0) + int(hh)
        for t, c in zip(*np.unique(first_switch, return_counts=True)):
            key = None if t == 0 else int(t)
            c1_hist[key] = c1_hist.get(key, 0) + int(c)
        for k, c in zip(*np.unique(n_switch, return_counts=True)):
            switch_hist[int(k)] = switch_hist.get(int(k), 0) + int(c)
    return SimResult(counts=counts, paths=n_paths, seed=seed, n_steps=n_steps,
                     c1_histogram=c1_hist, switch_counts=switch_hist)


# ---------------------------------------------------------------------------
# Exact identities
# ---------------------------------------------------------------------------

def _survival_landing(dist: LatticeDist, threshold_hi: bool, n_max: int, z_range,
                      exact: bool = True) -> dict:
    """P[S_1..S_n strictly beyond the threshold, S_n = z] from S_0 = 0.

    threshold_hi=True keeps S_k >= 1 (kill on <= 0); False keeps S_k <= -1.
    """
    half = n_max * max(abs(dist.min_support), abs(dist.max_support)) + 2
    lo, hi = (1, half) if threshold_hi else (-half, -1)
    width = hi - lo + 1
    zero = Fraction(0) if exact else 0.0
    state = np.full(width, zero, dtype=object if exact else float)
    k_lo, kern = dist.dense_kernel(exact)
    out = {}
    for v, p in zip(dist.values, dist.fracs if exact else dist.probs):
        if lo <= int(v) <= hi:
            state[int(v) - lo] += p
    for n in range(1, n_max + 1):
        out[n] = {z: state[z - lo] for z in z_range if lo <= z <= hi}
        arr = np.convolve(state, kern)
        base = lo + k_lo
        new = np.full(width, zero, dtype=object if exact else float)
        for i, mval in enumerate(arr):
            posn = base + i
            if lo <= posn <= hi and mval != 0:
                new[posn - lo] += mval
        state = new
    return out


def identity_suite(model: OscillatingModel, horizon: int = 40,
                   window: Optional[Window] = None,
                   tilt_ratio: Fraction = Fraction(1, 2),
                   exact: bool = True,
                   pairs: Optional[Sequence[tuple[int, int]]] = None) -> dict:
    """Exact structural identities: trajectory decomposition, tilting, duality.

    In exact mode every residual must be identically zero; in float mode the
    suite reports the max absolute residuals (<= 1e-12 at these sizes).
    """
    from .switching import build_Q

    window = window or Window(-64, 64)
    exact = exact and model.exact
    zero = Fraction(0) if exact else 0.0
    one = Fraction(1) if exact else 1.0
    report = {"exact": exact}

    # --- (i) trajectory decomposition ---------------------------------------
    pairs = list(pairs or [(0, 0), (-1, 1), (2, -2)])
    band_lo = model.Dprime + 1 if model.two_media else min(model.Dprime + 1,
                                                           model.origin.min_support)
    band_hi = model.D if model.two_media else max(model.D - 1, model.origin.max_support)
    band = list(range(band_lo, band_hi + 1))
    max_resid = zero
    for x, y in pairs:
        rows = sorted(set(band) | {x})
        hist = build_Q(model, horizon, window, rows=rows, exact=exact)

        def q_row(k, xx):
            t = hist[xx]
            bl, bh = t.data["band"]
            row = np.full(len(band), zero, dtype=object if exact else float)
            for j, yy in enumerate(band):
                if bl <= yy <= bh:
                    row[j] = t.data["arrivals"][k][yy - bl]
            return row

        # row vectors of sum_l Q^(l) over the arrival band, by the renewal
        # recursion written with the kernel factor on the right
        rows_T = [None] * (horizon + 1)
        for n in range(1, horizon + 1):
            acc = q_row(n, x)
            for k in range(1, n):
                prev = rows_T[n - k]
                for j, zz in enumerate(band):
                    if prev[j] != 0:
                        acc = acc + prev[j] * q_row(k, zz)
            rows_T[n] = acc
        ex = excursion_functions(model, y, horizon, window, exact=exact)
        V = ex.data["V"]
        marg = marginal_sequence(model, x, y, horizon, window,
                                 leak_budget=None, exact=exact)
        vals = marg.data["values"]
        for n in range(0, horizon + 1):
            total = V[n][window.index(x)]  # l = 0 term
            for k in range(1, n + 1):
                rowk = rows_T[k]
                for j, zz in enumerate(band):
                    if rowk[j] != 0:
                        total = total + rowk[j] * V[n - k][window.index(zz)]
            resid = abs(total - vals[n])
            if resid > max_resid:
                max_resid = resid
    report["trajectory_decomposition_residual"] = float(max_resid) if not exact else (
        0.0 if max_resid == 0 else float(max_resid))
    report["trajectory_decomposition_exact_zero"] = bool(max_resid == 0)

    # --- (ii) tilting identity ----------------------------------------------
    # Q_n(x, y) = L(t)^n e^{t(x-y)} Q_n^t(x, y) with e^t = tilt_ratio
    max_resid = zero
    left_t = geometric_tilt(model.left, tilt_ratio)
    if exact:
        Lval = sum(p * tilt_ratio ** int(v) for v, p in zip(model.left.values, model.left.fracs))
    else:
        Lval = laplace(model.left, math.log(float(tilt_ratio)))
    x0 = -1 if not model.two_media else 0
    fp = first_passage_kernel(model.left, Side.FROM_NEGATIVE, model.convention,
                              x0, 20, window, exact=exact)
    fp_t = first_passage_kernel(left_t, Side.FROM_NEGATIVE, model.convention,
                                x0, 20, window, exact=exact)
    bl, bh = fp.data["band"]
    ratio = Fraction(tilt_ratio) if exact else float(tilt_ratio)
    Ln = one
    for n in range(1, 21):
        Ln = Ln * Lval
        for y in range(bl, bh + 1):
            factor = ratio ** (x0 - y) if exact else ratio ** (x0 - y)
            lhs = fp.data["arrivals"][n][y - bl]
            rhs = Ln * factor * fp_t.data["arrivals"][n][y - bl]
            resid = abs(lhs - rhs)
            if resid > max_resid:
                max_resid = resid
    report["tilting_residual"] = float(max_resid)
    report["tilting_exact_zero"] = bool(max_resid == 0)

    # --- (iii) per-step duality ----------------------------------------------
    # P[tau_- > n, S_n = z] (stay >= 1) equals the probability that n is a
    # strict ascending ladder epoch with height z, i.e. the first crossing of
    # level z lands exactly at z at time n.
    n_max = min(horizon, 24)
    zs = range(1, 2 * model.left.max_support + 1)
    lhs_tab = _survival_landing(model.left, True, n_max, zs, exact=exact)
    max_resid = zero
    for z in zs:
        fp = first_passage_kernel(model.left, Side.FROM_NEGATIVE,
                                  Convention.THREE_MEDIA, -z, n_max,
                                  Window(-n_max * model.max_jump - z - 2,
                                         model.max_jump + 2),
                                  exact=exact)
        bl, bh = fp.data["band"]
        for n in range(1, n_max + 1):
            rhs = fp.data["arrivals"][n][0 - bl]   # landing exactly on the level
            resid = abs(lhs_tab[n].get(z, zero) - rhs)
            if resid > max_resid:
                max_resid = resid
    report["duality_residual"] = float(max_resid)
    report["duality_exact_zero"] = bool(max_resid == 0)
    report["all_exact_zero"] = bool(
        report["trajectory_decomposition_exact_zero"]
        and report["tilting_exact_zero"] and report["duality_exact_zero"]
    ) if exact else None
    return report


# ---------------------------------------------------------------------------
# Convergence checks
# ---------------------------------------------------------------------------

def scalar_renewal(qn: np.ndarray, horizon: int) -> np.ndarray:
    """Scalar renewal recursion t_n = sum_k q_k t_{n-k}, t_0 = 1."""
    t = np.zeros(horizon + 1)
    t[0] = 1.0
    for n in range(1, horizon + 1):
        k = np.arange(1, n + 1)
        t[n] = np.dot(qn[k], t[n - k])
    return t


def convergence_suite(model: OscillatingModel, horizon: int = 4096,
                      window: Optional[Window] = None) -> dict:
    """Operator-renewal convergence diagnostics for a recurrent-switch model.

    Checks the sqrt(n)-rescaled switching-time marginals against the predicted
    plateau level and the renewal-tail sum against its ladder-constant limit;
    includes two synthetic scalar sanity checks of the machinery itself.
    """
    from .switching import power_iterate, switching_kernel, switching_time_marginals

    report = {}
    window = window or Window(-512, 512)

    # synthetic: geometric epoch law has t_n -> q (elementary renewal theorem)
    q = 0.3
    ns = np.arange(0, 513)
    qn = np.zeros(513)
    qn[1:] = q * (1 - q) ** (ns[1:] - 1)
    t = scalar_renewal(qn, 512)
    report["scalar_geometric_renewal_error"] = float(abs(t[512] - q))

    # synthetic: n^{3/2}-convolution limit  P(g) + P(G)
    a, b = 0.7, 1.3
    p_n = np.zeros(513)
    g_n = np.zeros(513)
    p_n[1:] = a * ns[1:] ** -1.5
    g_n[1:] = b * ns[1:] ** -1.5
    p_n[0], g_n[0] = 0.2, 0.1
    conv = np.convolve(p_n, g_n)[:513]
    predicted = p_n.sum() * b + a * g_n.sum()
    report["scalar_tail_convolution_error"] = float(
        abs(512 ** 1.5 * conv[512] - predicted) / predicted)

    case = model.drift_case
    if case not in (DriftCase.ZZ, DriftCase.PZ, DriftCase.PN):
        return report

    spectral = power_iterate(switching_kernel(model, window))
    nu = spectral.nu
    # renewal-tail level: pi * (tail sum limit) is the plateau normalizer
    parts = {}
    tail_level = 0.0
    if abs(model.left.mean) <= 1e-12:
        c_left = fluctuation_constants(model.left)
        pot = ladder_potentials(model.left)
        theta = 0 if model.two_media else -1
        nu_v = sum(float(nu[i]) * pot.V(LadderVariant.STRICT_ASC, theta + 1 - int(x))
                   for i, x in enumerate(window.positions()) if x <= theta)
        tail_level += 2 * c_left.c_direct * nu_v
        parts["left"] = 2 * c_left.c_direct * nu_v
    if abs(model.right.mean) <= 1e-12:
        # the right-walk constant is the left-form constant of the mirrored law
        from .model import mirror_dist
        fcp = fluctuation_constants(mirror_dist(model.right))
        potp = ladder_potentials(model.right)
        nu_v = sum(float(nu[i]) * potp.V(LadderVariant.STRICT_DESC, int(x))
                   for i, x in enumerate(window.positions()) if x >= 1)
        tail_level += 2 * fcp.c_direct * nu_v
        parts["right"] = 2 * fcp.c_direct * nu_v
    report["renewal_tail_parts"] = parts

    if case in (DriftCase.ZZ, DriftCase.PZ):
        bold_c = math.pi * tail_level
        report["bold_c"] = bold_c
        T = switching_time_marginals(model, 0, horizon, window)
        series = []
        n = 64
        while n <= horizon:
            val = math.sqrt(n) * T[n][window.index(0)] * bold_c / float(nu[window.index(0)])
            series.append((n, float(val)))
            n *= 2
        report["sqrt_n_Tn_plateau"] = series
        report["sqrt_n_Tn_final"] = series[-1][1]

        # tail of r_n: sqrt(n) * sum_{j>n} r_j  ->  tail_level
        from .switching import build_Q
        rows = [int(x) for x in window.positions()
                if nu[window.index(int(x))] > 1e-10 and abs(int(x)) <= 4 * model.max_jump]
        hist = build_Q(model, horizon, window, rows=rows)
        tail_series = []
        n = 64
        while n <= horizon:
            s = sum(float(nu[window.index(xx)]) * float(hist[xx].data["survival"][n])
                    for xx in rows)
            tail_series.append((n, math.sqrt(n) * s / tail_level))
            n *= 2
        report["rn_tail_plateau"] = tail_series
        report["rn_tail_final"] = tail_series[-1][1]
    return report
