"""Bandwidth selection: RSS minimization with the annulus kernel, factor
conversion to the Epanechnikov kernel, the elbow diagnostic for the inner
radius, a GCV baseline, and the closed-form oracle bandwidth for known
correlation models.

The candidate grid is data-driven (the theory leaves its endpoints as
unspecified constants): it spans the smallest bandwidth at which nearly
all points have enough positive-weight neighbors up to the bandwidth at
which the kernel's reach covers the point cloud.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import CorrsmoothError, NoElbowError, NoFeasibleBandwidthError
from .kernels import (
    DEFAULT_C2_OFFSET,
    MIN_AMISE,
    ProductEpanechnikovKernel,
    RadialAnnulusKernel,
    build_annulus_kernel,
    kernel_moments,
)
from .locfit import Dataset, _fit_all_ws, _Workspace, fit_all, hat_matrix, rss

__all__ = [
    "BandwidthSelection",
    "ElbowDiagnostic",
    "default_grid",
    "select_h_z",
    "factor_convert",
    "factor_ratio",
    "elbow_scan",
    "gcv_select",
    "gcv_score",
    "oracle_bandwidth",
    "variance_fit_bandwidth",
]

DEFAULT_GRID_SIZE = 30
_SCAN_CANDIDATES = 256
_NEIGHBOR_COVERAGE = 0.99


@dataclass
class BandwidthSelection:
    h_z: float
    grid: np.ndarray
    rss_trace: np.ndarray  # +inf marks infeasible candidates
    h_o: float | None = None
    factor_ratio: float | None = None


@dataclass
class ElbowDiagnostic:
    c1_list: np.ndarray
    cbar_list: np.ndarray  # NaN marks per-c1 failures
    h_z_list: np.ndarray
    feasible: np.ndarray
    chosen_c1: float
    chosen_index: int
    kernels: list = field(default_factory=list)


def _neighbor_counts(dist: np.ndarray, lo: float, hi: float, h: float) -> np.ndarray:
    if lo > 0.0:
        mask = (dist > lo * h) & (dist < hi * h)
    else:
        mask = (dist > 0.0) & (dist < hi * h)
    return mask.sum(axis=1)


def default_grid(
    data: Dataset,
    kernel,
    size: int = DEFAULT_GRID_SIZE,
    min_neighbors: int | None = None,
    coverage: float = _NEIGHBOR_COVERAGE,
) -> np.ndarray:
    """Log-spaced candidate bandwidths over the data-driven feasible range.

    The lower end is the smallest h at which >= coverage of the points
    have at least 2(D+1) neighbors with positive kernel weight; the upper
    end is where the kernel reach spans half the cloud diameter.
    """
    if isinstance(kernel, RadialAnnulusKernel):
        lo, hi = kernel.c1, kernel.c2
        ws = _Workspace(data, kernel)
        dist = ws.dist
    elif isinstance(kernel, ProductEpanechnikovKernel):
        lo, hi = 0.0, 1.0
        ws = _Workspace(data, kernel)
        dist = np.abs(ws.disp).max(axis=-1)  # Chebyshev: all coords inside support
    else:
        raise TypeError(f"unsupported kernel {type(kernel).__name__}")

    if min_neighbors is None:
        min_neighbors = 2 * (data.dim + 1)
    positive = dist[dist > 0.0]
    if positive.size == 0:
        raise NoFeasibleBandwidthError("all design points coincide")
    diam = float(dist.max())
    h_max = diam / (2.0 * lo) if lo > 0.0 else diam
    h_lo_scan = float(positive.min()) / hi
    if h_lo_scan >= h_max:
        raise NoFeasibleBandwidthError(
            f"degenerate bandwidth range [{h_lo_scan:.3g}, {h_max:.3g}]"
        )
    candidates = np.geomspace(h_lo_scan, h_max, _SCAN_CANDIDATES)
    n = data.n
    h_min = None
    for h in candidates:
        counts = _neighbor_counts(dist, lo, hi, h)
        if (counts >= min_neighbors).mean() >= coverage:
            h_min = float(h)
            break
    if h_min is None or h_min >= h_max:
        raise NoFeasibleBandwidthError(
            f"no bandwidth gives {min_neighbors} positive-weight neighbors to "
            f"{coverage:.0%} of the {n} points; the design may be too sparse"
        )
    return np.geomspace(h_min, h_max, size)


def _validate_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("bandwidth grid must be a nonempty 1-d array")
    if np.any(grid <= 0.0):
        raise ValueError("bandwidth grid must be positive")
    if grid.size > 1 and np.any(np.diff(grid) <= 0.0):
        raise ValueError("bandwidth grid must be strictly increasing")
    return grid


def select_h_z(data: Dataset, kz: RadialAnnulusKernel, grid) -> BandwidthSelection:
    """Pick the grid bandwidth minimizing in-sample RSS under the annulus kernel.

    Infeasible candidates (any singular local fit) carry an +inf sentinel;
    ties break toward the smaller bandwidth.
    """
    grid = _validate_grid(grid)
    ws = _Workspace(data, kz)
    trace = np.full(grid.shape, np.inf)
    for idx, h in enumerate(grid):
        fit = _fit_all_ws(ws, h)
        if fit.singular_count == 0:
            trace[idx] = rss(fit)
    if not np.any(np.isfinite(trace)):
        raise NoFeasibleBandwidthError(
            "every candidate bandwidth produced singular fits; "
            "raise the upper grid bound"
        )
    best = int(np.argmin(trace))
    if best in (0, grid.size - 1):
        warnings.warn(
            f"selected bandwidth {grid[best]:.6g} sits on the grid boundary; "
            "consider widening the grid",
            stacklevel=2,
        )
    return BandwidthSelection(h_z=float(grid[best]), grid=grid, rss_trace=trace)


def factor_ratio(kz, ko, dim: int | None = None) -> float:
    """Moment-ratio constant converting the RSS-optimal bandwidth of one
    kernel into the MISE-optimal bandwidth of another."""
    if dim is None:
        dim = kz.dim
    mz = kernel_moments(kz, dim)
    mo = kernel_moments(ko, dim)
    ratio = (mo.muK2 * mz.mu2**2) / (mo.mu2**2 * mz.muK2)
    return float(ratio ** (1.0 / (dim + 4)))


def factor_convert(sel: BandwidthSelection, kz, ko, dim: int | None = None) -> float:
    """Convert sel.h_z to the target-kernel bandwidth; records it on sel."""
    ratio = factor_ratio(kz, ko, dim)
    sel.factor_ratio = ratio
    sel.h_o = sel.h_z * ratio
    return sel.h_o


def elbow_scan(
    data: Dataset,
    c1_list,
    dim: int | None = None,
    objective: str = MIN_AMISE,
    c2_offset: float = DEFAULT_C2_OFFSET,
    stability_tol: float = 0.10,
    grid_size: int = DEFAULT_GRID_SIZE,
) -> ElbowDiagnostic:
    """Scan inner radii and pick the first c1 where the ratio C-bar settles.

    Per candidate: build the annulus kernel (c2 = c1 + offset), select its
    RSS bandwidth, and record C-bar = (mu(K^2)/mu2^2)^(1/(D+4)) / h.  The
    chosen c1 is the first with two consecutive relative changes below
    stability_tol.  Failed candidates become gaps, not fatal errors.
    """
    c1_arr = np.asarray(list(c1_list), dtype=float)
    if c1_arr.size < 3:
        raise ValueError("need >= 3 candidates for stability detection")
    if np.any(np.diff(c1_arr) <= 0.0):
        raise ValueError("c1 candidates must be strictly increasing")
    if dim is None:
        dim = data.dim

    cbar = np.full(c1_arr.shape, np.nan)
    h_zs = np.full(c1_arr.shape, np.nan)
    kernels: list = [None] * c1_arr.size
    for idx, c1 in enumerate(c1_arr):
        try:
            kz = build_annulus_kernel(c1, c1 + c2_offset, dim, objective)
            grid = default_grid(data, kz, size=grid_size)
            sel = select_h_z(data, kz, grid)
        except (ValueError, CorrsmoothError):
            continue
        m = kernel_moments(kz, dim)
        h_zs[idx] = sel.h_z
        cbar[idx] = (m.muK2 / m.mu2**2) ** (1.0 / (dim + 4)) / sel.h_z
        kernels[idx] = kz

    feasible = np.isfinite(cbar)
    if not feasible.any():
        raise NoElbowError("every c1 candidate failed; no elbow trace available")
    live = np.flatnonzero(feasible)
    if live.size < 3:
        raise NoElbowError(
            f"only {live.size} feasible c1 candidate(s); need >= 3 for stability"
        )
    vals = cbar[live]
    rel = np.abs(np.diff(vals)) / np.abs(vals[:-1])
    chosen = None
    for j in range(1, rel.size):
        if rel[j - 1] < stability_tol and rel[j] < stability_tol:
            chosen = int(live[j])
            break
    if chosen is None:
        raise NoElbowError(
            f"no elbow found: C-bar never stabilized below {stability_tol:.0%} "
            "for two consecutive steps"
        )
    return ElbowDiagnostic(
        c1_list=c1_arr,
        cbar_list=cbar,
        h_z_list=h_zs,
        feasible=feasible,
        chosen_c1=float(c1_arr[chosen]),
        chosen_index=chosen,
        kernels=kernels,
    )


def gcv_score(data: Dataset, ko, h: float) -> float:
    """GCV criterion RSS/(1 - tr(H)/n)^2 at one bandwidth; +inf if infeasible.

    The smoother trace uses only the n diagonal hat coefficients.
    """
    fit = fit_all(data, h, ko)
    if fit.singular_count:
        return np.inf
    c, singular = hat_matrix(data, h, ko)
    if singular.any():
        return np.inf
    denom = 1.0 - float(np.trace(c)) / data.n
    if denom <= 0.0:
        return np.inf
    return rss(fit) / denom**2


def gcv_select(data: Dataset, ko, grid) -> float:
    """Generalized cross-validation baseline: minimize the GCV score on a grid.

    This selector ignores error correlation by design and serves as the
    naive reference the annulus pipeline is compared against.
    """
    grid = _validate_grid(grid)
    scores = np.array([gcv_score(data, ko, float(h)) for h in grid])
    if not np.any(np.isfinite(scores)):
        raise NoFeasibleBandwidthError(
            "every candidate bandwidth was infeasible for GCV; "
            "raise the upper grid bound"
        )
    return float(grid[int(np.argmin(scores))])


def variance_fit_bandwidth(h_o: float, n: int, dim: int) -> float:
    """Bandwidth for the RSS variance estimator: h_o * n^(-1/(D+8)) / n^(-1/(D+4))."""
    return float(h_o) * n ** (1.0 / (dim + 4) - 1.0 / (dim + 8))


def _radial_correlation_integral(family: str, c: float, dim: int) -> float:
    """C_rho = lim n^alpha * int rho_n(||u||) du, via the scaled radial profile."""
    from .kernels import sphere_surface
    from .simulate import FAMILY_PROFILES  # local import avoids a cycle

    profile = FAMILY_PROFILES[family]
    s = sphere_surface(dim)
    if family == "inverse_quadratic" and dim >= 2:
        raise CorrsmoothError(
            "inverse-quadratic correlation is not integrable over R^D for D >= 2; "
            "no finite C_rho exists"
        )
    upper = c if family == "spherical" else np.inf
    val, _ = integrate.quad(
        lambda r: profile(np.asarray(r), c) * r ** (dim - 1), 0.0, upper
    )
    return s * float(val)


def _laplacian_integral(mu, dim: int, grid_per_axis: int, eps: float = 1e-4) -> float:
    """int_{[0,1]^D} sum_d d2 mu / dx_d^2 dx by midpoint rule + central differences."""
    axes = [np.linspace(0.5 / grid_per_axis, 1.0 - 0.5 / grid_per_axis, grid_per_axis)] * dim
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    total = np.zeros(mesh.shape[0])
    base = 2.0 * mu(mesh)
    for d in range(dim):
        plus = mesh.copy()
        plus[:, d] += eps
        minus = mesh.copy()
        minus[:, d] -= eps
        total += (mu(plus) - base + mu(minus)) / eps**2
    return float(total.mean())


def oracle_bandwidth(
    model,
    mu,
    ko,
    n: int,
    f: str = "uniform",
    domain_volume: float = 1.0,
    grid_per_axis: int | None = None,
) -> float:
    """Closed-form bandwidth minimizing the leading MISE term for a known model.

    Valid for alpha in (0, 1]; the alpha = 1 branch adds the domain volume
    to the correlation integral.  mu must be the known regression function
    (callable on (m, D) arrays); only the uniform design density is supported.
    """
    if f != "uniform":
        raise ValueError("only the uniform design density is supported")
    alpha = model.alpha
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if model.sigma2 <= 0.0:
        raise ValueError("degenerate noise: sigma2 must be positive for the oracle")
    dim = model.dim
    if grid_per_axis is None:
        grid_per_axis = 201 if dim <= 2 else 61
    c_rho = _radial_correlation_integral(model.family, model.c, dim)
    delta_f = _laplacian_integral(mu, dim, grid_per_axis)
    if delta_f == 0.0:
        raise CorrsmoothError("curvature integral is zero; oracle bandwidth diverges")
    mo = kernel_moments(ko, dim)
    noise = model.sigma2 * (c_rho + domain_volume) if alpha == 1.0 else model.sigma2 * c_rho
    const = (4.0 * noise / delta_f**2) * (mo.muK2 / mo.mu2**2)
    return float(const ** (1.0 / (dim + 4)) * n ** (-alpha / (dim + 4)))
