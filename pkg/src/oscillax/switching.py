"""The switching subprocess: kernels Q_n, renewal operators T_n, spectra.

The embedded chain observed at medium-change times has kernel
Q(x,y) = P_x[first switch lands at y].  Its per-step decomposition {Q_n},
the renewal-operator sequence T_n, the dominant eigenpair on a weighted sup
norm, Doob transforms and exponentially tilted variants are all built here on
a finite window.

Aggregate kernels are obtained from banded resolvent solves (exact within the
window, no time truncation); per-step histories come from the DP in
:mod:`oscillax.evolve` and carry explicit survival/leak accounting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.fft
from scipy.linalg import solve_banded

from .errors import ConventionMismatch, NoConvergence, ValidationError
from .evolve import (
    KernelTable,
    Side,
    TableKind,
    Window,
    first_passage_kernel,
    passage_regions,
)
from .ladder import SQRT_2PI, LadderPotentials, LadderVariant, ladder_potentials
from .model import Convention, LatticeDist, OscillatingModel, essential_class, tilt


# ---------------------------------------------------------------------------
# Weighted norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightSpec:
    """Weight function for the weighted-sup functional norm.

    polynomial:   psi(x) = 1 + |x|^(1+delta)
    exponential:  psi(x) = exp(rate_neg |x|) for x <= 0, exp(rate_pos x) else
    """

    kind: str = "polynomial"
    delta: float = 0.5
    rate_neg: float = 0.0
    rate_pos: float = 0.0

    def values(self, window: Window) -> np.ndarray:
        xs = window.positions().astype(float)
        if self.kind == "polynomial":
            psi = 1.0 + np.abs(xs) ** (1.0 + self.delta)
        elif self.kind == "exponential":
            psi = np.where(xs <= 0, np.exp(self.rate_neg * np.abs(xs)),
                           np.exp(self.rate_pos * xs))
        else:
            raise ValidationError(f"unknown weight kind {self.kind!r}")
        if not np.all(psi >= 1.0):
            raise ValidationError("weight must be >= 1 everywhere")
        # must dominate 1 + |x| at the window ends (compact inclusion heuristic)
        for edge in (0, -1):
            if psi[edge] <= 1.0 + abs(xs[edge]):
                raise ValidationError("weight fails to dominate 1 + |x| at the edge")
        return psi


def default_weight(model: OscillatingModel, delta: float = None) -> WeightSpec:
    """Polynomial weight for recurrent-type regimes, exponential for (N,P)/(P,P)."""
    from .model import argmin_laplace  # local import to keep module load light

    case = model.drift_case.value
    if case in ("(N,P)", "(P,P)", "(N,N)"):
        d = 0.1 if delta is None else delta
        lam, _ = argmin_laplace(model.left)
        lamp, _ = argmin_laplace(model.right)
        return WeightSpec("exponential", d, rate_neg=abs(lamp) + d, rate_pos=abs(lam) + d)
    return WeightSpec("polynomial", 0.5 if delta is None else delta)


# ---------------------------------------------------------------------------
# Aggregate kernel by resolvent solves
# ---------------------------------------------------------------------------

def passage_resolvent(
    dist: LatticeDist,
    side: Side,
    convention: Convention,
    window: Window,
    z: float = 1.0,
) -> tuple[tuple[int, int], tuple[int, int], np.ndarray]:
    """G_z(x, y) = sum_{n>=1} z^n Q_n(x, y) for every start x in the medium.

    Solves (I - z A) G = z B where A is the walk restricted to the surviving
    segment and B the one-step arrival matrix; exact in n, window-truncated
    in space.  Returns ((seg_lo, seg_hi), (band_lo, band_hi), G).
    """
    bound, (band_lo, band_hi) = passage_regions(side, convention, dist)
    if side is Side.FROM_NEGATIVE:
        seg_lo, seg_hi = window.lo, bound
    else:
        seg_lo, seg_hi = bound, window.hi
    size = seg_hi - seg_lo + 1
    maxj = max(abs(dist.min_support), abs(dist.max_support))
    ab = np.zeros((2 * maxj + 1, size))
    ab[maxj, :] = 1.0
    B = np.zeros((size, band_hi - band_lo + 1))
    for v, p in zip(dist.values, dist.probs):
        v, p = int(v), float(p)
        # A[x, x+v] = p  ->  M[i, j] = -z p at i - j = -v
        row = maxj - v
        if v >= 0:
            ab[row, v:] -= z * p
        else:
            ab[row, : size + v] -= z * p
        # direct arrivals x -> x+v into the band
        xs = np.arange(seg_lo, seg_hi + 1)
        dest = xs + v
        inside = (dest >= band_lo) & (dest <= band_hi)
        B[inside, dest[inside] - band_lo] += z * p
    G = solve_banded((maxj, maxj), ab, B)
    return (seg_lo, seg_hi), (band_lo, band_hi), G


@dataclass
class SwitchingKernel:
    """Aggregate switching kernel on a window."""

    window: Window
    Q: np.ndarray           # (width, width)
    defect: np.ndarray      # 1 - row sums (escape probability + window truncation)
    band: tuple[int, int]   # columns that can be hit
    model: OscillatingModel

    @property
    def markovian(self) -> bool:
        from .model import ZERO_DRIFT_TOL
        return (self.model.left.mean >= -ZERO_DRIFT_TOL
                and self.model.right.mean <= ZERO_DRIFT_TOL)


def switching_kernel(model: OscillatingModel, window: Window,
                     refine: bool = True) -> SwitchingKernel:
    """Assemble the aggregate kernel Q(x, y) for every x in the window.

    ``refine`` Richardson-extrapolates the O(1/window) spatial-truncation error
    of the resolvent rows using a half-window second solve (rows outside the
    half window keep the plain solve); tiny negative artifacts are clipped.
    """
    window.check_margin(model)
    width = window.width
    Q = np.zeros((width, width))

    def side_rows(dist, side):
        (sl, sh), (bl, bh), G = passage_resolvent(dist, side, model.convention, window)
        if refine:
            half = Window(window.lo // 2, max(window.hi // 2, 3 * model.max_jump))
            (hl, hh), _, Gh = passage_resolvent(dist, side, model.convention, half)
            if side is Side.FROM_NEGATIVE:
                # rows hl..hh sit at the tail end of the full segment
                off = hl - sl
                G[off: off + (hh - hl + 1)] = np.clip(
                    2.0 * G[off: off + (hh - hl + 1)] - Gh, 0.0, None)
            else:
                G[hl - sl: hh - sl + 1] = np.clip(
                    2.0 * G[hl - sl: hh - sl + 1] - Gh, 0.0, None)
        return (sl, sh), (bl, bh), G

    (sl, sh), (bl, bh), G = side_rows(model.left, Side.FROM_NEGATIVE)
    Q[window.index(sl): window.index(sh) + 1,
      window.index(bl): window.index(bh) + 1] = G
    band_lo, band_hi = bl, bh
    (sl, sh), (bl, bh), G = side_rows(model.right, Side.FROM_POSITIVE)
    Q[window.index(sl): window.index(sh) + 1,
      window.index(bl): window.index(bh) + 1] = G
    band_lo, band_hi = min(band_lo, bl), max(band_hi, bh)
    if not model.two_media:
        p0 = model.origin.pmf(0)
        i0 = window.index(0)
        for v, p in zip(model.origin.values, model.origin.probs):
            if v != 0:
                Q[i0, window.index(int(v))] = float(p) / (1.0 - p0)
        band_lo = min(band_lo, model.origin.min_support)
        band_hi = max(band_hi, model.origin.max_support)
    defect = 1.0 - Q.sum(axis=1)
    return SwitchingKernel(window, Q, defect, (band_lo, band_hi), model)


# ---------------------------------------------------------------------------
# Per-step history and renewal operators
# ---------------------------------------------------------------------------

def build_Q(
    model: OscillatingModel,
    horizon: int,
    window: Window,
    rows: Optional[Sequence[int]] = None,
    exact: bool = False,
) -> dict:
    """Per-step switching kernels Q_n(x, .) for selected rows.

    Returns {x: KernelTable(FIRST_PASSAGE)}; for the origin row under the
    three-media convention the closed form Q_n(0, y) = mu0(0)^(n-1) mu0(y)
    is tabulated instead of a DP.  Mass accounting
    survival_n + sum_{k<=n} arrivals_k = 1 holds exactly per row.
    """
    window.check_margin(model)
    if rows is None:
        rows = essential_class(model)
    out = {}
    for x in rows:
        if not model.two_media and x == 0:
            p0 = model.origin.pmf_frac(0) if exact else model.origin.pmf(0)
            vals = model.origin.values
            band = (model.origin.min_support, model.origin.max_support)
            bw = band[1] - band[0] + 1
            arrivals = np.empty((horizon + 1, bw), dtype=object if exact else float)
            from fractions import Fraction
            arrivals[:] = Fraction(0) if exact else 0.0
            survival = np.empty(horizon + 1, dtype=object if exact else float)
            survival[0] = Fraction(1) if exact else 1.0
            acc = Fraction(1) if exact else 1.0
            for n in range(1, horizon + 1):
                for v in vals:
                    if v != 0:
                        p = model.origin.pmf_frac(int(v)) if exact else model.origin.pmf(int(v))
                        arrivals[n, int(v) - band[0]] = acc * p
                acc = acc * p0
                survival[n] = acc
            out[x] = KernelTable(
                TableKind.FIRST_PASSAGE, window, horizon,
                {"arrivals": arrivals, "band": band, "survival": survival},
                leak=np.zeros(horizon + 1),
                meta={"x": 0, "closed_form": True, "exact": exact},
            )
        elif x <= (0 if model.two_media else -1):
            out[x] = first_passage_kernel(model.left, Side.FROM_NEGATIVE,
                                          model.convention, x, horizon, window, exact)
        else:
            out[x] = first_passage_kernel(model.right, Side.FROM_POSITIVE,
                                          model.convention, x, horizon, window, exact)
    return out


def q_history_matrices(model: OscillatingModel, horizon: int, window: Window,
                       exact: bool = False) -> np.ndarray:
    """Dense (horizon+1, W, W) array of Q_n on a small window (tests/diagnostics)."""
    width = window.width
    if width > 256:
        raise ValidationError("full Q_n history is meant for small windows")
    from fractions import Fraction
    Qn = np.zeros((horizon + 1, width, width)) if not exact else \
        np.full((horizon + 1, width, width), Fraction(0), dtype=object)
    hist = build_Q(model, horizon, window, rows=range(window.lo, window.hi + 1),
                   exact=exact)
    for x, table in hist.items():
        bl, bh = table.data["band"]
        arr = table.data["arrivals"]
        for n in range(1, horizon + 1):
            Qn[n, window.index(x), window.index(max(bl, window.lo)):
               window.index(min(bh, window.hi)) + 1] = \
                arr[n, max(bl, window.lo) - bl: (min(bh, window.hi)) - bl + 1]
    return Qn


def renewal_sequence(Qn: np.ndarray, horizon: Optional[int] = None) -> np.ndarray:
    """T_n by the renewal convolution recursion T_n = sum_k Q_k T_{n-k}, T_0 = I.

    ``Qn`` is the (N+1, W, W) per-step stack (Qn[0] ignored).  Quadratic in the
    horizon; intended for exactness tests and small diagnostics, the production
    path for long sequences is :func:`switching_time_marginals`.
    """
    N = horizon if horizon is not None else Qn.shape[0] - 1
    width = Qn.shape[1]
    T = np.zeros_like(Qn[: N + 1])
    eye = np.eye(width)
    if Qn.dtype == object:
        from fractions import Fraction
        eye = np.full((width, width), Fraction(0), dtype=object)
        for i in range(width):
            eye[i, i] = Fraction(1)
    T[0] = eye
    for n in range(1, N + 1):
        acc = Qn[n].copy()
        for k in range(1, n):
            acc = acc + Qn[k] @ T[n - k]
        T[n] = acc
    return T


def power_sequences(Qn: np.ndarray, ells: Sequence[int], pad_factor: int = 4) -> dict:
    """Q_n^{(ell)} for each requested ell via FFT over the time axis.

    Treats {Q_n} as a matrix-valued polynomial and takes pointwise matrix
    powers at the FFT frequencies; pad_factor controls aliasing from the
    circular convolution (tails decay like n^{-3/2}, so 4N is ample for
    percent-level diagnostics).
    """
    N = Qn.shape[0] - 1
    M = pad_factor * N
    fhat = scipy.fft.rfft(Qn, n=M, axis=0, workers=-1)
    out = {}
    power = fhat.copy()
    max_ell = max(ells)
    for ell in range(1, max_ell + 1):
        if ell > 1:
            power = np.matmul(power, fhat)
        if ell in ells:
            seq = scipy.fft.irfft(power, n=M, axis=0, workers=-1)[: N + 1]
            out[ell] = seq
    return out


def banded_power_sequences(model: OscillatingModel, horizon: int, window: Window,
                           ells: Sequence[int], pad_factor: int = 4,
                           rows: Optional[Sequence[int]] = None) -> dict:
    """Q_n^{(ell)} exploiting the narrow arrival band of the switching kernel.

    Q_n has nonzero columns only on the arrival band B, so
    Q^{(ell)}(z) = R(z) C(z)^{ell-1} with R the (W x B) full kernel stack and
    C its band-restricted square; FFT over the time axis makes the whole family
    O(pad * N * W * B^2).  Returns {ell: (N+1, W, B) array} plus band info under
    key 'band'.  ``rows`` restricts the R stack (the output rows); the band
    rows themselves are always computed.
    """
    band_lo = model.Dprime + 1 if model.two_media else min(model.Dprime + 1,
                                                           model.origin.min_support)
    band_hi = model.D if model.two_media else max(model.D - 1,
                                                  model.origin.max_support)
    band = list(range(band_lo, band_hi + 1))
    if rows is None:
        rows = sorted(set(range(window.lo, window.hi + 1)))
    else:
        rows = sorted(set(rows) | set(band))
    hist = build_Q(model, horizon, window, rows=rows)
    B = len(band)
    row_index = {x: i for i, x in enumerate(rows)}
    R = np.zeros((horizon + 1, len(rows), B))
    for x, table in hist.items():
        bl, bh = table.data["band"]
        arr = table.data["arrivals"]
        for j, y in enumerate(band):
            if bl <= y <= bh:
                R[:, row_index[x], j] = arr[:, y - bl].astype(float)
    C = np.stack([R[:, row_index[y], :] for y in band], axis=1)
    M = pad_factor * horizon
    Rhat = scipy.fft.rfft(R, n=M, axis=0, workers=-1)
    Chat = scipy.fft.rfft(C, n=M, axis=0, workers=-1)
    out = {"band": (band_lo, band_hi), "rows": row_index}
    cpow = None
    for ell in range(1, max(ells) + 1):
        if ell == 1:
            prod = Rhat
        else:
            cpow = Chat if cpow is None else np.matmul(cpow, Chat)
            prod = np.matmul(Rhat, cpow)
        if ell in ells:
            out[ell] = scipy.fft.irfft(prod, n=M, axis=0, workers=-1)[: horizon + 1]
    return out


def weighted_norm(mat_cols: np.ndarray, psi: np.ndarray, psi_cols: np.ndarray) -> float:
    """Operator norm on the weighted-sup space: max_x sum_y |M(x,y)| psi(y) / psi(x)."""
    return float(np.max((np.abs(mat_cols) @ psi_cols) / psi))


def switching_time_marginals(model: OscillatingModel, x: int, horizon: int,
                             window: Window) -> np.ndarray:
    """T_n(x, .) for n = 0..horizon by direct DP on the full walk.

    A step is a switching time exactly when the walk changes medium, so
    T_n(x, z) is the probability that the step into time n crosses media and
    lands at z.  One full-walk DP serves every n; this is the long-horizon
    route the renewal recursion is checked against.
    """
    window.check_margin(model)
    width = window.width
    idx0 = window.index(0)
    state = np.zeros(width)
    state[window.index(x)] = 1.0
    T = np.zeros((horizon + 1, width))
    T[0, window.index(x)] = 1.0  # T_0 = identity row
    k_left = model.left.dense_kernel()
    k_right = model.right.dense_kernel()
    k_orig = model.origin.dense_kernel()
    cut = idx0 + 1 if model.two_media else idx0
    for n in range(1, horizon + 1):
        new = np.zeros(width)
        cross = np.zeros(width)
        left = state[:cut]
        if left.any():
            arr = np.convolve(left, k_left[1])
            base = window.lo + k_left[0]
            s = max(0, window.lo - base)
            e = min(len(arr) - 1, window.hi - base)
            new[base + s - window.lo: base + e - window.lo + 1] += arr[s:e + 1]
            # arrivals that left the left medium
            first_out = (1 if model.two_media else 0) - base
            if first_out <= e:
                cross[base + max(s, first_out) - window.lo: base + e - window.lo + 1] += \
                    arr[max(s, first_out): e + 1]
        if not model.two_media:
            z = state[idx0]
            if z > 0:
                for v, p in zip(model.origin.values, model.origin.probs):
                    pos = int(v)
                    if window.lo <= pos <= window.hi:
                        new[pos - window.lo] += z * p
                        if pos != 0:
                            cross[pos - window.lo] += z * p
        right = state[idx0 + 1:]
        if right.any():
            arr = np.convolve(right, k_right[1])
            base = 1 + k_right[0]
            s = max(0, window.lo - base)
            e = min(len(arr) - 1, window.hi - base)
            new[base + s - window.lo: base + e - window.lo + 1] += arr[s:e + 1]
            last_out = 0 - base  # arrivals at <= 0 switched media
            if last_out >= s:
                cross[base + s - window.lo: base + min(e, last_out) - window.lo + 1] += \
                    arr[s: min(e, last_out) + 1]
        T[n] = cross
        state = new
    return T


# ---------------------------------------------------------------------------
# Spectral analysis
# ---------------------------------------------------------------------------

@dataclass
class SpectralData:
    rho_psi: float
    H: np.ndarray
    nu: Optional[np.ndarray]
    residual: float
    defect: np.ndarray
    window: Window
    markovian: bool
    iterations: int
    weight: WeightSpec

    def report(self) -> dict:
        return {
            "rho_psi": self.rho_psi,
            "residual": self.residual,
            "defect_max": float(np.max(self.defect)),
            "markovian": self.markovian,
            "H": self.H.tolist(),
            "nu": self.nu.tolist() if self.nu is not None else None,
        }


def power_iterate(
    kernel: SwitchingKernel,
    weight: Optional[WeightSpec] = None,
    tol: float = 1e-12,
    max_iter: int = 100_000,
    want_left: bool = True,
) -> SpectralData:
    """Dominant eigenpair of Q in the weighted sup norm by power iteration.

    H is normalized so sup H/psi = 1; the left eigenvector is renormalized to
    a probability vector when the kernel is markovian.  Raises NoConvergence
    (with a spectral-gap estimate) if the Rayleigh quotient has not settled to
    ``tol`` within ``max_iter`` iterations.
    """
    window = kernel.window
    weight = weight or default_weight(kernel.model)
    psi = weight.values(window)
    M = kernel.Q * (psi[None, :] / psi[:, None])
    if window.width > 1024:
        from scipy.sparse import csr_matrix
        M = csr_matrix(M)

    # lazy (damped) iteration: (M + I)/2 shares eigenvectors with M, maps the
    # spectrum to (z+1)/2, and keeps the Perron root dominant even when the
    # chain is periodic (e.g. unit-overshoot models)
    def damped(vec, left=False):
        prod = vec @ M if left else M @ vec
        return 0.5 * (prod + vec)

    h = np.ones(window.width)
    lam_prev = np.inf
    lam = 0.0
    iterations = 0
    for iterations in range(1, max_iter + 1):
        h_new = damped(h)
        lam = float(np.max(h_new))
        if lam <= 0:
            raise NoConvergence("iterate collapsed to zero")
        h_new /= lam
        if abs(lam - lam_prev) <= 0.5 * tol * max(lam, 1e-30):
            h = h_new
            break
        lam_prev = lam
        h = h_new
    else:
        gap = abs(lam - lam_prev) / max(lam, 1e-30)
        raise NoConvergence(
            f"power iteration did not settle in {max_iter} iterations", gap_estimate=gap
        )
    rho = 2.0 * lam - 1.0
    residual = float(np.max(np.abs(M @ h - rho * h)))
    lam = rho
    nu = None
    if want_left:
        u = np.ones(window.width)
        for it in range(max_iter):
            u_new = damped(u, left=True)
            s = float(np.max(u_new))
            if s <= 0:
                raise NoConvergence("left iterate collapsed to zero")
            u_new /= s
            if np.max(np.abs(u_new - u)) <= tol:
                u = u_new
                break
            u = u_new
        else:
            raise NoConvergence(f"left iteration did not settle in {max_iter} iterations")
        nu = u / psi
        nu = np.clip(nu, 0.0, None)
        nu /= nu.sum()
    return SpectralData(
        rho_psi=lam,
        H=h * psi,
        nu=nu,
        residual=residual,
        defect=kernel.defect,
        window=window,
        markovian=kernel.markovian,
        iterations=iterations,
        weight=weight,
    )


def doob_transform(Qn: np.ndarray, H: np.ndarray, rho_psi: float) -> np.ndarray:
    """Conjugate kernels by a positive eigenfunction: (1/rho) H^{-1} Q_n (H .).

    Accepts a single (W, W) matrix or an (N+1, W, W) stack; the n-summed
    transform of the aggregate kernel is markovian when (rho_psi, H) is the
    dominant eigenpair.
    """
    ratio = H[None, :] / H[:, None] / rho_psi
    if Qn.ndim == 2:
        return Qn * ratio
    return Qn * ratio[None, :, :]


# ---------------------------------------------------------------------------
# Tilted kernels (two-media transient machinery)
# ---------------------------------------------------------------------------

@dataclass
class TiltedKernels:
    """Per-step kernels of the per-side tilted walk with the geometric factor
    split off: Q_n(x,y) = R^n e^{t_ref (x-y)} Qtilde_n(x,y)."""

    Qn: np.ndarray           # (N+1, W, W)
    window: Window
    rate: float              # R = max of the two transform values
    r: float                 # min/max ratio, 1.0 when the transforms agree
    t_left: float
    t_right: float
    t_ref: float             # reference tilt (the side whose transform equals R)
    damped_side: Optional[str]   # 'left' | 'right' | None
    tilted_model: OscillatingModel


def tilted_kernels(
    model: OscillatingModel,
    t_left: float,
    t_right: float,
    horizon: int,
    window: Window,
) -> TiltedKernels:
    """Build the damped tilted kernel stack for a two-media model.

    Each side is tilted by its own parameter; the side with the smaller
    transform value picks up the geometric factor r^n and the cross factor
    e^{(t_other - t_ref)(x-y)} so that the original kernels factor exactly as
    R^n e^{t_ref(x-y)} Qtilde_n.  With t_left = t_right this reduces to the
    single-tilt construction.
    """
    from .model import laplace, validate_model

    if not model.two_media:
        raise ConventionMismatch("tilted kernels are defined for two-media models")
    La = laplace(model.left, t_left)
    Lb = laplace(model.right, t_right)
    R = max(La, Lb)
    if abs(La - Lb) <= 1e-12 * R:
        # balanced transforms (crossing or tangency branch): no damping at all
        r, t_ref, damped = 1.0, t_left, None
    elif La > Lb:
        r, t_ref, damped = Lb / La, t_left, "right"
    else:
        r, t_ref, damped = La / Lb, t_right, "left"
    left_t = tilt(model.left, t_left)
    right_t = tilt(model.right, t_right)
    tilted_model = validate_model(left_t, left_t, right_t, two_media=True)
    width = window.width
    Qn = np.zeros((horizon + 1, width, width))
    hist_left = build_Q(tilted_model, horizon, window,
                        rows=range(window.lo, 0 + 1))
    hist_right = build_Q(tilted_model, horizon, window,
                         rows=range(1, window.hi + 1))
    ns = np.arange(horizon + 1, dtype=float)
    damp = r ** ns
    for x, table in {**hist_left, **hist_right}.items():
        bl, bh = table.data["band"]
        arr = table.data["arrivals"]
        side = "left" if x <= 0 else "right"
        t_side = t_left if side == "left" else t_right
        for n in range(1, horizon + 1):
            row = arr[n]
            ys = np.arange(bl, bh + 1, dtype=float)
            factor = np.exp((t_side - t_ref) * (x - ys))
            if side == damped:
                factor = factor * damp[n]
            lo_c = max(bl, window.lo)
            hi_c = min(bh, window.hi)
            Qn[n, window.index(x), window.index(lo_c): window.index(hi_c) + 1] = (
                row[lo_c - bl: hi_c - bl + 1] * factor[lo_c - bl: hi_c - bl + 1]
            )
    return TiltedKernels(
        Qn=Qn, window=window, rate=R, r=r, t_left=t_left, t_right=t_right,
        t_ref=t_ref, damped_side=damped, tilted_model=tilted_model,
    )


# ---------------------------------------------------------------------------
# Limit operator of n^{3/2} Q_n
# ---------------------------------------------------------------------------

def limit_operator_E(
    model: OscillatingModel,
    window: Window,
    potentials_left: Optional[LadderPotentials] = None,
    potentials_right: Optional[LadderPotentials] = None,
) -> np.ndarray:
    """Pointwise limit E(x,y) of n^{3/2} Q_n(x,y) on the window.

    Blocks whose driving law is drifted vanish (their kernels decay
    geometrically, killing the polynomial term); a centered block contributes
    (1/(sigma sqrt(2pi))) V_strict_toward(dist from boundary)
    * sum_w V_weak_away(w) mu(w + overshoot).
    """
    from .model import ZERO_DRIFT_TOL

    width = window.width
    E = np.zeros((width, width))
    theta_left = 1 if model.two_media else 0   # first position outside the left medium
    if abs(model.left.mean) <= ZERO_DRIFT_TOL:
        pot = potentials_left or ladder_potentials(model.left)
        sigma = model.left.sigma
        pmf = {int(v): float(p) for v, p in zip(model.left.values, model.left.probs)}
        for x in range(window.lo, theta_left):
            vsp = pot.V(LadderVariant.STRICT_ASC, theta_left - x)
            for y in range(theta_left, theta_left + model.left.max_support):
                if y > window.hi:
                    break
                s = sum(pot.V(LadderVariant.WEAK_DESC, w) * pmf.get(w + y - theta_left, 0.0)
                        for w in range(1, model.left.max_support + 1))
                E[window.index(x), window.index(y)] = vsp * s / (sigma * SQRT_2PI)
    if abs(model.right.mean) <= ZERO_DRIFT_TOL:
        pot = potentials_right or ladder_potentials(model.right)
        sigma = model.right.sigma
        pmf = {int(v): float(p) for v, p in zip(model.right.values, model.right.probs)}
        for x in range(1, window.hi + 1):
            vsm = pot.V(LadderVariant.STRICT_DESC, x)
            for y in range(model.right.min_support + 1, 1):
                if y < window.lo:
                    continue
                s = sum(pot.V(LadderVariant.WEAK_ASC, w) * pmf.get(y - w, 0.0)
                        for w in range(1, -model.right.min_support + 1))
                E[window.index(x), window.index(y)] = vsm * s / (sigma * SQRT_2PI)
    return E


def limit_operator_E_ell(E: np.ndarray, Q: np.ndarray, ell: int) -> np.ndarray:
    """E_ell = sum_{i=0}^{ell-1} Q^(i) E Q^(ell-1-i) with Q^(0) = I."""
    width = E.shape[0]
    powers = [np.eye(width)]
    for _ in range(ell - 1):
        powers.append(powers[-1] @ Q)
    out = np.zeros_like(E)
    for i in range(ell):
        out += powers[i] @ E @ powers[ell - 1 - i]
    return out
