"""Multivariate local linear regression with pluggable distance metrics.

The smoother solves the (D+1) x (D+1) weighted normal equations at each
target point.  Kernel weights enter un-normalized: the estimator is
invariant to any positive rescaling of the weights, so the 1/h factor is
dropped to avoid overflow at tiny bandwidths.

Singularity is decided by partial-pivoted elimination on the normal
matrix: a fit is singular when some pivot falls below 1e-12 relative to
the largest entry of that system.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import SingularFitError
from .kernels import ProductEpanechnikovKernel, RadialAnnulusKernel, kernel_to_text

__all__ = [
    "EARTH_RADIUS_KM",
    "Dataset",
    "FitResult",
    "fit_at",
    "fit_all",
    "fit_points",
    "hat_coefficients",
    "hat_matrix",
    "rss",
    "pairwise_distances",
    "load_csv",
]

EARTH_RADIUS_KM = 6371.0088
_PIVOT_RTOL = 1e-12
_METRICS = ("euclidean", "haversine")


@dataclass(frozen=True)
class Dataset:
    """Design points (n x D), responses (n,), and a distance metric.

    Haversine datasets interpret the two columns as (latitude, longitude)
    in degrees; all distances and bandwidths are then in kilometers.
    """

    points: np.ndarray
    responses: np.ndarray
    metric: str = "euclidean"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        y = np.asarray(self.responses, dtype=float)
        if pts.ndim != 2:
            raise ValueError("points must be a 2-d array (n x D)")
        if y.ndim != 1 or y.shape[0] != pts.shape[0]:
            raise ValueError("responses must be a 1-d array aligned with points")
        metric = str(self.metric).lower()
        if metric not in _METRICS:
            raise ValueError(f"metric must be one of {_METRICS}, got {self.metric!r}")
        n, d = pts.shape
        if n < d + 2:
            raise ValueError(f"need at least D+2 = {d + 2} points, got {n}")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(y)):
            raise ValueError("points and responses must be finite")
        if metric == "haversine" and d != 2:
            raise ValueError("haversine metric requires D=2 (latitude, longitude)")
        pts = pts.copy()
        y = y.copy()
        pts.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "metric", metric)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class FitResult:
    fitted: np.ndarray
    residuals: np.ndarray
    h: float
    kernel: object
    singular_count: int

    @property
    def kernel_id(self) -> str:
        return kernel_to_text(self.kernel)


def _haversine(lat1, lon1, lat2, lon2):
    """Great-circle distance in km between degree coordinates."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlam = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dphi / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def _metric_distances(data: Dataset, targets: np.ndarray) -> np.ndarray:
    """(m, n) matrix of metric distances from each target to each design point."""
    pts = data.points
    if data.metric == "euclidean":
        diff = targets[:, None, :] - pts[None, :, :]
        return np.sqrt((diff * diff).sum(axis=-1))
    return _haversine(
        targets[:, None, 0], targets[:, None, 1], pts[None, :, 0], pts[None, :, 1]
    )


def _component_displacements(data: Dataset, targets: np.ndarray) -> np.ndarray:
    """(m, n, D) displacements feeding product-kernel weights.

    Euclidean: raw coordinate differences.  Haversine: north/east
    great-circle components in km (local equirectangular scaling), so
    product-kernel bandwidths stay in the same km units as radial ones.
    """
    pts = data.points
    diff = pts[None, :, :] - targets[:, None, :]
    if data.metric == "euclidean":
        return diff
    lat_mid = np.radians((pts[None, :, 0] + targets[:, None, 0]) / 2.0)
    north = EARTH_RADIUS_KM * np.radians(diff[:, :, 0])
    east = EARTH_RADIUS_KM * np.cos(lat_mid) * np.radians(diff[:, :, 1])
    return np.stack([north, east], axis=-1)


class _Workspace:
    """Per-dataset precomputation shared across bandwidths of one kernel kind."""

    def __init__(self, data: Dataset, kernel, targets: np.ndarray | None = None):
        self.data = data
        self.kernel = kernel
        self.targets = data.points if targets is None else np.asarray(targets, dtype=float)
        x = data.points
        self.xxt = np.einsum("jk,jl->jkl", x, x)
        self.xy = x * data.responses[:, None]
        if isinstance(kernel, RadialAnnulusKernel):
            self.dist = _metric_distances(data, self.targets)
            self.disp = None
        elif isinstance(kernel, ProductEpanechnikovKernel):
            if kernel.dim != data.dim:
                raise ValueError("kernel dimension does not match dataset")
            self.disp = _component_displacements(data, self.targets)
            self.dist = None
        else:
            raise TypeError(f"unsupported fitting kernel {type(kernel).__name__}")

    def weights(self, h: float) -> np.ndarray:
        if h <= 0:
            raise ValueError(f"bandwidth must be positive, got {h}")
        if self.dist is not None:
            return self.kernel.profile(self.dist / h)
        return self.kernel.value(self.disp / h)


def _solve_batched(a: np.ndarray, b: np.ndarray):
    """Gaussian elimination with partial pivoting over a batch of small systems.

    Returns (solutions, singular_mask); singular systems yield NaN rows.
    """
    a = a.copy()
    b = b.copy()
    m, k, _ = a.shape
    scale = np.abs(a).reshape(m, -1).max(axis=1)
    singular = scale <= 0.0
    aug = np.concatenate([a, b[:, :, None]], axis=2)
    rows = np.arange(m)
    for j in range(k):
        piv = np.abs(aug[:, j:, j]).argmax(axis=1) + j
        swap_from = aug[rows, j].copy()
        aug[rows, j] = aug[rows, piv]
        aug[rows, piv] = swap_from
        pivots = aug[:, j, j]
        singular |= np.abs(pivots) < _PIVOT_RTOL * scale
        safe = np.where(np.abs(pivots) > 0.0, pivots, 1.0)
        if j + 1 < k:
            factors = aug[:, j + 1 :, j] / safe[:, None]
            aug[:, j + 1 :, j:] -= factors[:, :, None] * aug[:, j : j + 1, j:]
    x = np.zeros((m, k))
    for j in range(k - 1, -1, -1):
        pivots = aug[:, j, j]
        safe = np.where(np.abs(pivots) > 0.0, pivots, 1.0)
        acc = aug[:, j, k]
        if j + 1 < k:
            acc = acc - np.einsum("ml,ml->m", aug[:, j, j + 1 : k], x[:, j + 1 :])
        x[:, j] = acc / safe
    x[singular] = np.nan
    return x, singular


def _normal_systems(ws: _Workspace, weights: np.ndarray):
    """Assemble the weighted normal equations for every target at once."""
    data = ws.data
    x = data.points
    y = data.responses
    xt = ws.targets
    m, d = xt.shape[0], data.dim

    s0 = weights.sum(axis=1)
    p = weights @ x
    s2 = np.einsum("ij,jkl->ikl", weights, ws.xxt)
    t0 = weights @ y
    t1 = weights @ ws.xy

    a = np.empty((m, d + 1, d + 1))
    a[:, 0, 0] = s0
    a0k = p - s0[:, None] * xt
    a[:, 0, 1:] = a0k
    a[:, 1:, 0] = a0k
    a[:, 1:, 1:] = (
        s2
        - xt[:, :, None] * p[:, None, :]
        - p[:, :, None] * xt[:, None, :]
        + s0[:, None, None] * xt[:, :, None] * xt[:, None, :]
    )
    rhs = np.empty((m, d + 1))
    rhs[:, 0] = t0
    rhs[:, 1:] = t1 - xt * t0[:, None]
    return a, rhs


def _fit_targets(ws: _Workspace, h: float):
    weights = ws.weights(h)
    a, rhs = _normal_systems(ws, weights)
    beta, singular = _solve_batched(a, rhs)
    return beta[:, 0], singular


def fit_at(data: Dataset, x, h: float, kernel) -> float:
    """Local linear estimate at a single point; raises on a singular system."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (data.dim,):
        raise ValueError(f"x must be a {data.dim}-vector")
    ws = _Workspace(data, kernel, targets=x[None, :])
    est, singular = _fit_targets(ws, h)
    if singular[0]:
        raise SingularFitError(f"singular local fit at x={x.tolist()}", x=x)
    return float(est[0])


def fit_points(data: Dataset, targets, h: float, kernel):
    """Estimates at arbitrary points; singular targets come back as NaN."""
    targets = np.asarray(targets, dtype=float)
    ws = _Workspace(data, kernel, targets=targets)
    return _fit_targets(ws, h)


def fit_all(data: Dataset, h: float, kernel) -> FitResult:
    """In-sample fit at every design point, recording singular points."""
    ws = _Workspace(data, kernel)
    return _fit_all_ws(ws, h)


def _fit_all_ws(ws: _Workspace, h: float) -> FitResult:
    est, singular = _fit_targets(ws, h)
    residuals = ws.data.responses - est
    return FitResult(
        fitted=est,
        residuals=residuals,
        h=float(h),
        kernel=ws.kernel,
        singular_count=int(singular.sum()),
    )


def hat_coefficients(data: Dataset, i: int, h: float, kernel) -> np.ndarray:
    """Smoother weights c_{i.} with mu_hat(X_i) = sum_s c_{is} Y_s."""
    if not 0 <= i < data.n:
        raise ValueError(f"index {i} out of range")
    xt = data.points[i]
    ws = _Workspace(data, kernel, targets=xt[None, :])
    weights = ws.weights(h)
    a, _ = _normal_systems(ws, weights)
    e1 = np.zeros((1, data.dim + 1))
    e1[0, 0] = 1.0
    z, singular = _solve_batched(a, e1)
    if singular[0]:
        raise SingularFitError(f"singular local fit at design point {i}", x=xt)
    z = z[0]
    return weights[0] * (z[0] + (data.points - xt) @ z[1:])


def hat_matrix(data: Dataset, h: float, kernel):
    """All smoother rows at once: (n, n) matrix C with fitted = C @ Y.

    Returns (C, singular_mask); singular rows are NaN.
    """
    ws = _Workspace(data, kernel)
    weights = ws.weights(h)
    a, _ = _normal_systems(ws, weights)
    n, d = data.n, data.dim
    e1 = np.zeros((n, d + 1))
    e1[:, 0] = 1.0
    z, singular = _solve_batched(a, e1)
    x = data.points
    lin = z[:, 1:] @ x.T - np.einsum("ik,ik->i", z[:, 1:], x)[:, None]
    c = weights * (z[:, 0][:, None] + lin)
    return c, singular


def rss(fit: FitResult) -> float:
    """Mean squared in-sample residual, (1/n) sum residual_i^2."""
    if fit.singular_count:
        raise SingularFitError(
            f"fit contains {fit.singular_count} singular point(s); RSS undefined"
        )
    r = fit.residuals
    return float(r @ r / r.shape[0])


def pairwise_distances(data: Dataset) -> np.ndarray:
    """Condensed n(n-1)/2 vector of metric distances, pdist ordering."""
    if data.metric == "euclidean":
        return pdist(data.points)
    iu, ju = np.triu_indices(data.n, k=1)
    pts = data.points
    return _haversine(pts[iu, 0], pts[iu, 1], pts[ju, 0], pts[ju, 1])


def distance_matrix(data: Dataset) -> np.ndarray:
    """Symmetric (n, n) metric distance matrix with zero diagonal."""
    return squareform(pairwise_distances(data))


def load_csv(path, metric: str = "euclidean") -> Dataset:
    """Read a dataset from CSV with header columns x1..xD then y."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [c.strip() for c in header]
        if "y" not in header:
            raise ValueError(f"{path}: column y not found")
        y_idx = header.index("y")
        coord_idx = []
        for d in range(1, len(header) + 1):
            name = f"x{d}"
            if name not in header:
                break
            coord_idx.append(header.index(name))
        if not coord_idx:
            raise ValueError(f"{path}: no coordinate columns x1..xD found")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append(
                    [float(row[i]) for i in coord_idx] + [float(row[y_idx])]
                )
            except (ValueError, IndexError):
                raise ValueError(f"{path}: malformed row at line {lineno}") from None
    arr = np.asarray(rows, dtype=float)
    if arr.size == 0:
        raise ValueError(f"{path}: no data rows")
    return Dataset(points=arr[:, :-1], responses=arr[:, -1], metric=metric)
