"""Nonparametric error covariance and correlation estimation.

The covariance at lag t is a kernel-weighted ratio over all ordered pairs
(i, j), including i = j; the diagonal mass is what anchors the estimate
at lag 0.  For t < b the smoothing window is truncated at lag 0, so the
symmetric kernel is replaced by the boundary kernel with q = t/b (q is
clamped to a tiny positive value at t = 0; the formula is continuous in
q and the lag-0 estimate is dominated by the i = j mass regardless).

The smoothing bandwidth b is picked by variance calibration: the largest
candidate keeping the kernel-based variance estimate within delta_n of
the RSS-based one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyWindowError, SingularFitError
from .kernels import BoundaryKernel
from .locfit import Dataset, FitResult, fit_all, pairwise_distances, rss

__all__ = [
    "DELTA_N_DEFAULT",
    "CovarianceEstimate",
    "CalibrationTrace",
    "CorrelationCurve",
    "estimate_covariance",
    "sigma2_rss",
    "default_b_candidates",
    "calibrate_b",
    "covariance_curve",
    "estimate_correlation",
]

DELTA_N_DEFAULT = 2e-4
DEFAULT_N_STAR = 200
DEFAULT_B_CANDIDATES = 25
_PILOT_POINTS = 256
_PILOT_FLOOR = 0.02  # pilot truncation when |C| falls below this fraction of C(0)
_SANITY_FACTOR = 1.5


class _PairSums:
    """Sorted condensed distances with aligned residual products.

    Lets every lag evaluation touch only the pairs inside its window,
    which keeps curve evaluation linear in the window size.
    """

    def __init__(self, residuals: np.ndarray, distances: np.ndarray):
        residuals = np.asarray(residuals, dtype=float)
        distances = np.asarray(distances, dtype=float)
        n = residuals.shape[0]
        if distances.shape[0] != n * (n - 1) // 2:
            raise ValueError("distances must be the condensed n(n-1)/2 vector")
        iu, ju = np.triu_indices(n, k=1)
        products = residuals[iu] * residuals[ju]
        order = np.argsort(distances, kind="stable")
        self.n = n
        self.dist = distances[order]
        self.prod = products[order]
        self.diag = float(residuals @ residuals)

    def estimate(self, t: float, b: float) -> float:
        """Weighted ratio at lag t; boundary kernel for t < b."""
        if b <= 0.0:
            raise ValueError(f"bandwidth b must be positive, got {b}")
        if t < 0.0:
            raise ValueError(f"lag t must be nonnegative, got {t}")
        kernel = BoundaryKernel(q=t / b)  # q >= 1 collapses to Epanechnikov
        lo = np.searchsorted(self.dist, t - b, side="right")
        hi = np.searchsorted(self.dist, t + b, side="right")
        u = (t - self.dist[lo:hi]) / b
        w = kernel.value(u)
        num = 2.0 * float(w @ self.prod[lo:hi])
        den = 2.0 * float(w.sum())
        # Diagonal pairs sit at distance 0 with argument t/b; the kernel's
        # own support check zeroes them once t >= b.
        w_diag = float(kernel.value(np.asarray(t / b)))
        num += w_diag * self.diag
        den += w_diag * self.n
        mass = 2.0 * float(np.abs(w).sum()) + abs(w_diag) * self.n
        if mass == 0.0 or abs(den) < 1e-10 * mass:
            raise EmptyWindowError(t, b)
        return num / den


def estimate_covariance(residuals, distances, t: float, b: float) -> float:
    """One-shot covariance estimate at lag t from residuals (or true errors)."""
    return _PairSums(residuals, distances).estimate(float(t), float(b))


@dataclass(frozen=True)
class CovarianceEstimate:
    t_grid: np.ndarray
    c_hat: np.ndarray
    b: float
    sigma2_hat: float
    sigma2_tilde: float
    truncation_t: float
    dropped: np.ndarray = field(default_factory=lambda: np.empty(0))
    bound_flag: bool = False

    def interpolate(self, t):
        """Piecewise-linear curve; identically 0 at and beyond truncation."""
        t = np.asarray(t, dtype=float)
        out = np.interp(t, self.t_grid, self.c_hat)
        beyond = (t >= self.truncation_t) & (t > 0.0)
        out = np.where(beyond, 0.0, out)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CalibrationTrace:
    b_candidates: np.ndarray
    sigma2_tilde: np.ndarray
    discrepancy: np.ndarray
    chosen_b: float
    delta_n: float
    fallback: bool  # argmin fallback fired because no candidate qualified


@dataclass(frozen=True)
class CorrelationCurve:
    t_grid: np.ndarray
    rho: np.ndarray
    mode: str
    truncation_t: float
    clamped: bool

    def interpolate(self, t):
        t = np.asarray(t, dtype=float)
        out = np.interp(t, self.t_grid, self.rho)
        beyond = (t >= self.truncation_t) & (t > 0.0)
        out = np.where(beyond, 0.0, out)
        return float(out) if out.ndim == 0 else out


def sigma2_rss(data: Dataset, h_t: float, ko) -> float:
    """RSS-based variance estimate at the dedicated (larger) bandwidth h_t."""
    if h_t <= 0.0:
        raise ValueError(f"h_t must be positive, got {h_t}")
    fit = fit_all(data, h_t, ko)
    if fit.singular_count:
        raise SingularFitError(
            f"variance fit singular at {fit.singular_count} point(s) for h_t={h_t:.6g}"
        )
    return rss(fit)


def default_b_candidates(data: Dataset, size: int = DEFAULT_B_CANDIDATES) -> np.ndarray:
    """Log-spaced candidates from the minimum positive pair distance (visibly
    undersmoothing) up to half the median pair distance."""
    d = pairwise_distances(data)
    positive = d[d > 0.0]
    if positive.size == 0:
        raise ValueError("all design points coincide; no b candidates")
    lo = float(positive.min())
    hi = float(np.median(d)) / 2.0
    if hi <= lo:
        hi = 2.0 * lo
    return np.geomspace(lo, hi, size)


def _residuals_from(fit_or_residuals) -> np.ndarray:
    if isinstance(fit_or_residuals, FitResult):
        if fit_or_residuals.singular_count:
            raise SingularFitError("residual fit contains singular points")
        return fit_or_residuals.residuals
    return np.asarray(fit_or_residuals, dtype=float)


def calibrate_b(
    data: Dataset,
    fit_or_residuals,
    sigma2_hat: float,
    b_candidates=None,
    delta_n: float = DELTA_N_DEFAULT,
) -> CalibrationTrace:
    """Variance calibration: largest b with |sigma2_hat - C_hat(0; b)| <= delta_n.

    If no candidate qualifies, falls back to the discrepancy argmin with a
    warning (recorded on the trace).
    """
    if delta_n < 0.0:
        raise ValueError("delta_n must be nonnegative")
    if b_candidates is None:
        b_candidates = default_b_candidates(data)
    b_arr = np.asarray(b_candidates, dtype=float)
    if b_arr.ndim != 1 or b_arr.size == 0:
        raise ValueError("b candidate set must be a nonempty 1-d array")
    if np.any(b_arr <= 0.0) or (b_arr.size > 1 and np.any(np.diff(b_arr) <= 0.0)):
        raise ValueError("b candidates must be positive and strictly increasing")

    residuals = _residuals_from(fit_or_residuals)
    pairs = _PairSums(residuals, pairwise_distances(data))
    bs = [float(b) for b in b_arr]
    tildes = [pairs.estimate(0.0, b) for b in bs]

    # The coarse grid often straddles the narrow band where the two
    # variance estimates align; bisect the rightmost sign change of
    # (sigma2_tilde - sigma2_hat) and keep the refined candidates.
    if not any(abs(sigma2_hat - t) <= delta_n for t in tildes):
        signs = np.sign(np.asarray(tildes) - sigma2_hat)
        bracket = None
        for i in range(len(bs) - 1, 0, -1):
            if signs[i - 1] != 0.0 and signs[i] != 0.0 and signs[i - 1] != signs[i]:
                bracket = (bs[i - 1], tildes[i - 1], bs[i], tildes[i])
                break
        if bracket is not None:
            b_lo, t_lo, b_hi, t_hi = bracket
            for _ in range(64):
                if b_hi / b_lo < 1.0 + 1e-12:
                    break
                mid = float(np.sqrt(b_lo * b_hi))
                t_mid = pairs.estimate(0.0, mid)
                bs.append(mid)
                tildes.append(t_mid)
                if abs(sigma2_hat - t_mid) <= delta_n:
                    break
                if np.sign(t_mid - sigma2_hat) == np.sign(t_lo - sigma2_hat):
                    b_lo, t_lo = mid, t_mid
                else:
                    b_hi, t_hi = mid, t_mid

    order = np.argsort(bs)
    b_all = np.asarray(bs)[order]
    tilde = np.asarray(tildes)[order]
    disc = np.abs(sigma2_hat - tilde)
    qualifying = np.flatnonzero(disc <= delta_n)
    if qualifying.size:
        chosen = int(qualifying[-1])
        fallback = False
    else:
        chosen = int(np.argmin(disc))
        fallback = True
        warnings.warn(
            f"no candidate b met |sigma2_hat - sigma2_tilde| <= {delta_n:.3g}; "
            f"falling back to argmin b={b_all[chosen]:.6g} "
            f"(discrepancy {disc[chosen]:.3g})",
            stacklevel=2,
        )
    return CalibrationTrace(
        b_candidates=b_all,
        sigma2_tilde=tilde,
        discrepancy=disc,
        chosen_b=float(b_all[chosen]),
        delta_n=float(delta_n),
        fallback=fallback,
    )


def _pilot_truncation(pairs: _PairSums, b: float, sigma2_tilde: float) -> float:
    """Smallest lag where a pilot curve changes sign or decays below the floor."""
    d_max = float(pairs.dist[-1]) if pairs.dist.size else 0.0
    upper = d_max / 2.0
    if upper <= 0.0:
        return 0.0
    ts = np.linspace(upper / _PILOT_POINTS, upper, _PILOT_POINTS)
    floor = _PILOT_FLOOR * abs(sigma2_tilde)
    for t in ts:
        try:
            val = pairs.estimate(float(t), b)
        except EmptyWindowError:
            continue
        if val <= 0.0 or abs(val) < floor:
            return float(t)
    return upper


def covariance_curve(
    data: Dataset,
    fit_or_residuals,
    b: float,
    n_star: int = DEFAULT_N_STAR,
    truncation_t: float | None = None,
    sigma2_hat: float = np.nan,
) -> CovarianceEstimate:
    """Covariance estimates on a lag grid {0} + n_star points up to truncation.

    Grid points whose window holds no pairs are dropped from interpolation
    with a warning; the stored value at the truncation lag is 0 so the
    served curve decays continuously into the truncated region.
    """
    if n_star < 2:
        raise ValueError(f"n_star must be >= 2, got {n_star}")
    if b <= 0.0:
        raise ValueError(f"bandwidth b must be positive, got {b}")
    residuals = _residuals_from(fit_or_residuals)
    pairs = _PairSums(residuals, pairwise_distances(data))
    tilde = pairs.estimate(0.0, float(b))

    if truncation_t is None:
        truncation_t = _pilot_truncation(pairs, float(b), tilde)
    truncation_t = float(truncation_t)
    if truncation_t < 0.0:
        raise ValueError("truncation_t must be nonnegative")

    if truncation_t == 0.0:
        return CovarianceEstimate(
            t_grid=np.array([0.0]),
            c_hat=np.array([tilde]),
            b=float(b),
            sigma2_hat=float(sigma2_hat),
            sigma2_tilde=tilde,
            truncation_t=0.0,
        )

    ts = np.concatenate([[0.0], np.linspace(truncation_t / n_star, truncation_t, n_star)])
    values = np.empty(ts.shape)
    values[0] = tilde
    keep = np.ones(ts.shape, dtype=bool)
    dropped = []
    for idx in range(1, ts.size):
        try:
            values[idx] = pairs.estimate(float(ts[idx]), float(b))
        except EmptyWindowError:
            keep[idx] = False
            dropped.append(ts[idx])
    if dropped:
        warnings.warn(
            f"{len(dropped)} lag grid point(s) had empty windows and were "
            "dropped from interpolation",
            stacklevel=2,
        )
    ts = ts[keep]
    values = values[keep]
    values[-1] = 0.0  # truncation clamp: the curve is 0 from here on
    bound_flag = bool(np.any(np.abs(values) > _SANITY_FACTOR * abs(tilde)))
    if bound_flag:
        warnings.warn(
            "covariance estimate exceeds 1.5 x C(0) somewhere on the grid",
            stacklevel=2,
        )
    return CovarianceEstimate(
        t_grid=ts,
        c_hat=values,
        b=float(b),
        sigma2_hat=float(sigma2_hat),
        sigma2_tilde=tilde,
        truncation_t=truncation_t,
        dropped=np.asarray(dropped),
        bound_flag=bound_flag,
    )


def estimate_correlation(cov: CovarianceEstimate, mode: str = "by_chat0") -> CorrelationCurve:
    """Correlation curve rho_hat = C_hat / C_hat(0) or C_hat / sigma2_hat.

    Values are clamped to [-1, 1]; the curve records whether clamping
    occurred.  In by_chat0 mode rho_hat(0) = 1 exactly.
    """
    if mode not in ("by_chat0", "by_sigma2_hat"):
        raise ValueError(f"unknown mode {mode!r}")
    denom = cov.sigma2_tilde if mode == "by_chat0" else cov.sigma2_hat
    if not np.isfinite(denom) or denom <= 0.0:
        raise ValueError(f"nonpositive denominator {denom!r} for mode {mode}")
    rho = cov.c_hat / denom
    if mode == "by_chat0" and cov.t_grid[0] == 0.0:
        rho[0] = 1.0
    clamped = bool(np.any(rho > 1.0) or np.any(rho < -1.0))
    rho = np.clip(rho, -1.0, 1.0)
    return CorrelationCurve(
        t_grid=cov.t_grid,
        rho=rho,
        mode=mode,
        truncation_t=cov.truncation_t,
        clamped=clamped,
    )
