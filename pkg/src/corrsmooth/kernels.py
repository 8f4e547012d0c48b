"""Kernel functions for local linear smoothing and covariance estimation.

Conventions:
  - Radial kernels are evaluated on r = ||u||; product kernels on the
    componentwise vector u.  Values are exactly 0 outside the stated
    support (hard cutoff, no smoothing of the boundary).
  - Moment functionals: mu2(K) = int u_1^2 K du and mu(K^2) = int K^2 du,
    both over R^D.  For radial kernels these reduce to 1-D integrals in r
    via the surface area of the unit sphere, which keeps them exact for
    polynomial profiles.

The annulus kernel is a cubic polynomial in r supported on [c1, c2] and
identically zero elsewhere, normalized to integrate to 1 over R^D.  Its
coefficients are chosen by minimizing one of three documented objectives
subject to positivity on the open annulus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import KernelConstructionError

__all__ = [
    "MIN_VARIANCE",
    "MIN_AMISE",
    "MIN_PRODUCT",
    "RadialAnnulusKernel",
    "ProductEpanechnikovKernel",
    "CovarianceKernel1D",
    "BoundaryKernel",
    "KernelMoments",
    "build_annulus_kernel",
    "kernel_moments",
    "eval_kernel",
    "kernel_to_text",
    "kernel_from_text",
    "sphere_surface",
]

MIN_VARIANCE = "min_variance"
MIN_AMISE = "min_amise"
MIN_PRODUCT = "min_product"
_OBJECTIVES = (MIN_VARIANCE, MIN_AMISE, MIN_PRODUCT)

# Positivity is enforced on a fixed interior grid; a cubic has at most two
# interior roots, so 512 points over-resolve any sign change.
_POSITIVITY_GRID = 512
_POSITIVITY_EPS = 1e-12

DEFAULT_C2_OFFSET = 0.5


def sphere_surface(dim: int) -> float:
    """Surface area of the unit sphere in R^dim (2, 2*pi, 4*pi, ...)."""
    if dim < 1:
        raise ValueError("dim must be a positive integer")
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


def _radial_mass(c1: float, c2: float, power: int) -> float:
    """int_{c1}^{c2} r^power dr."""
    return (c2 ** (power + 1) - c1 ** (power + 1)) / (power + 1)


@dataclass(frozen=True)
class RadialAnnulusKernel:
    """Cubic-in-radius kernel supported on the annulus c1 <= ||u|| <= c2."""

    c1: float
    c2: float
    coeffs: tuple  # (A, B, C, D): A r^3 + B r^2 + C r + D
    dim: int

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        a, b, c, d = self.coeffs
        inside = (r >= self.c1) & (r <= self.c2)
        val = ((a * r + b) * r + c) * r + d
        return np.where(inside, val, 0.0)

    @property
    def support(self):
        return (self.c1, self.c2)


@dataclass(frozen=True)
class ProductEpanechnikovKernel:
    """K(u) = prod_d (3/4)(1 - u_d^2) on |u_d| <= 1 per coordinate."""

    dim: int

    def value(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.dim:
            raise ValueError(f"expected trailing axis of length {self.dim}")
        per = 0.75 * np.maximum(0.0, 1.0 - u * u)
        per = np.where(np.abs(u) <= 1.0, per, 0.0)
        return per.prod(axis=-1)


@dataclass(frozen=True)
class CovarianceKernel1D:
    """Epanechnikov kernel on (-1, 1) used to smooth the covariance lag."""

    def value(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(np.abs(u) <= 1.0, 0.75 * np.maximum(0.0, 1.0 - u * u), 0.0)


@dataclass(frozen=True)
class BoundaryKernel:
    """Asymmetric kernel on [-1, q] restoring zeroth/first moments near lag 0.

    q is the ratio t/b clamped to (0, 1]; at q = 1 the formula reduces to
    the Epanechnikov kernel.
    """

    q: float

    def __post_init__(self):
        q = float(self.q)
        q = min(q, 1.0)
        if q <= 0.0:
            q = np.finfo(float).eps
        object.__setattr__(self, "q", q)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        q = self.q
        core = (12.0 * (t + 1.0) / (1.0 + q) ** 4) * (
            t * (1.0 - 2.0 * q) + (3.0 * q * q - 2.0 * q + 1.0) / 2.0
        )
        inside = (t >= -1.0) & (t <= q)
        return np.where(inside, core, 0.0)


@dataclass(frozen=True)
class KernelMoments:
    mu2: float
    muK2: float


def _annulus_vectors(c1, c2, dim):
    """Normalization vector w, mu2 vector v, and Gram matrix Q for the
    coefficient basis (r^3, r^2, r, 1) under the R^dim measure."""
    degs = (3, 2, 1, 0)
    s = sphere_surface(dim)
    w = np.array([s * _radial_mass(c1, c2, dim - 1 + d) for d in degs])
    v = np.array([s / dim * _radial_mass(c1, c2, dim + 1 + d) for d in degs])
    q = np.array(
        [[s * _radial_mass(c1, c2, dim - 1 + di + dj) for dj in degs] for di in degs]
    )
    return w, v, q


def _annulus_objective(theta, v, q, objective, dim):
    quad = float(theta @ q @ theta)
    if objective == MIN_VARIANCE:
        return quad
    mu2 = float(v @ theta)
    if mu2 <= 0.0:
        return np.inf
    if objective == MIN_AMISE:
        return quad * quad * mu2**dim
    return quad * mu2


def build_annulus_kernel(
    c1: float, c2: float, dim: int, objective: str = MIN_AMISE
) -> RadialAnnulusKernel:
    """Construct a normalized, positive annulus kernel by penalized simplex search.

    The normalization constraint eliminates the constant coefficient; the
    remaining three are optimized with Nelder-Mead starting from the
    closed-form Lagrange solution of the variance objective (which is the
    constant profile and always feasible).  Positivity is enforced by an
    L1 penalty on a 512-point interior grid, followed by a blend toward
    the constant profile if the optimum grazes zero.
    """
    c1 = float(c1)
    c2 = float(c2)
    if c1 <= 0.0:
        raise ValueError(f"c1 must be positive, got {c1}")
    if c2 <= c1:
        raise ValueError(f"c2 must exceed c1, got (c1={c1}, c2={c2})")
    if int(dim) != dim or dim < 1:
        raise ValueError(f"dim must be a positive integer, got {dim}")
    dim = int(dim)
    if objective not in _OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}; expected one of {_OBJECTIVES}")

    w, v, q = _annulus_vectors(c1, c2, dim)
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(q))):
        raise KernelConstructionError(
            f"annulus masses overflow for (c1={c1}, c2={c2}, dim={dim})"
        )

    # Constant profile: the exact Lagrange minimizer of mu(K^2) under the
    # normalization constraint; strictly positive, so always feasible.
    theta_const = np.zeros(4)
    theta_const[3] = 1.0 / w[3]
    try:
        sol = np.linalg.solve(q, w)
        theta_start = sol / float(w @ sol)
    except np.linalg.LinAlgError:
        theta_start = theta_const

    grid = np.linspace(c1, c2, _POSITIVITY_GRID + 2)[1:-1]
    gmat = np.vander(grid, 4)  # columns r^3, r^2, r, 1

    def assemble(x):
        theta = np.empty(4)
        theta[:3] = x
        theta[3] = (1.0 - x @ w[:3]) / w[3]
        return theta

    f0 = _annulus_objective(theta_const, v, q, objective, dim)
    pen_weight = 1e6 * max(f0, 1e-12)

    def penalized(x):
        theta = assemble(x)
        base = _annulus_objective(theta, v, q, objective, dim)
        if not np.isfinite(base):
            return base
        viol = np.maximum(0.0, _POSITIVITY_EPS - gmat @ theta)
        return base + pen_weight * viol.sum()

    x0 = theta_start[:3]
    if not np.isfinite(penalized(x0)):
        x0 = theta_const[:3]
    res = optimize.minimize(
        penalized,
        x0,
        method="Nelder-Mead",
        options={"xatol": 1e-11, "fatol": 1e-14, "maxiter": 20000, "maxfev": 20000},
    )
    theta = assemble(res.x)
    if _annulus_objective(theta, v, q, objective, dim) > _annulus_objective(
        theta_const, v, q, objective, dim
    ):
        # Penalized search wandered; the constant profile dominates it.
        theta = theta_const

    # Restore strict positivity by blending toward the constant profile;
    # normalization is linear, so blends stay normalized.
    vals = gmat @ theta
    target = 10.0 * _POSITIVITY_EPS
    if vals.min() <= _POSITIVITY_EPS:
        pc = gmat @ theta_const
        gain = pc - vals
        need = (target - vals) / np.where(gain > 0.0, gain, np.inf)
        lam = float(np.clip(need.max(), 0.0, 1.0))
        theta = (1.0 - lam) * theta + lam * theta_const
        vals = gmat @ theta
        if vals.min() <= _POSITIVITY_EPS:
            raise KernelConstructionError(
                f"no positive normalized cubic found on annulus (c1={c1}, c2={c2}); "
                f"min grid value {vals.min():.3e}, normalization residual "
                f"{abs(w @ theta - 1.0):.3e}"
            )

    norm_residual = abs(float(w @ theta) - 1.0)
    if norm_residual > 1e-8:
        raise KernelConstructionError(
            f"normalization failed for (c1={c1}, c2={c2}): residual {norm_residual:.3e}"
        )
    return RadialAnnulusKernel(c1=c1, c2=c2, coeffs=tuple(float(t) for t in theta), dim=dim)


def kernel_moments(kernel, dim: int | None = None) -> KernelMoments:
    """mu2 and mu(K^2), exact for polynomial profiles, quadrature otherwise."""
    if isinstance(kernel, RadialAnnulusKernel):
        d = kernel.dim if dim is None else int(dim)
        w, v, q = _annulus_vectors(kernel.c1, kernel.c2, d)
        theta = np.asarray(kernel.coeffs, dtype=float)
        return KernelMoments(mu2=float(v @ theta), muK2=float(theta @ q @ theta))
    if isinstance(kernel, ProductEpanechnikovKernel):
        d = kernel.dim if dim is None else int(dim)
        # per-coordinate: int u^2 (3/4)(1-u^2) du = 1/5, int K^2 = 3/5
        return KernelMoments(mu2=0.2, muK2=0.6**d)
    if isinstance(kernel, CovarianceKernel1D):
        if dim not in (None, 1):
            raise ValueError("covariance kernel is one-dimensional")
        return KernelMoments(mu2=0.2, muK2=0.6)
    if isinstance(kernel, BoundaryKernel):
        from scipy import integrate

        mu2, _ = integrate.quad(lambda t: t * t * float(kernel.value(t)), -1.0, kernel.q)
        muk2, _ = integrate.quad(lambda t: float(kernel.value(t)) ** 2, -1.0, kernel.q)
        return KernelMoments(mu2=float(mu2), muK2=float(muk2))
    raise TypeError(
        f"moments require a bounded-support kernel, got {type(kernel).__name__}"
    )


def eval_kernel(kernel, u):
    """Evaluate a kernel at a D-vector, a batch of vectors, or a scalar lag."""
    if isinstance(kernel, RadialAnnulusKernel):
        u = np.asarray(u, dtype=float)
        if u.ndim == 0:
            return float(kernel.profile(abs(u)))
        if u.ndim == 1 and u.shape[0] == kernel.dim:
            return float(kernel.profile(np.linalg.norm(u)))
        if u.ndim >= 2 and u.shape[-1] == kernel.dim:
            return kernel.profile(np.linalg.norm(u, axis=-1))
        return kernel.profile(np.abs(u))  # array of radii
    if isinstance(kernel, ProductEpanechnikovKernel):
        u = np.asarray(u, dtype=float)
        if u.ndim == 0:
            if kernel.dim != 1:
                raise ValueError("scalar input requires dim=1 product kernel")
            u = u.reshape(1)
        if u.ndim == 1 and u.shape[0] == kernel.dim:
            return float(kernel.value(u))
        return kernel.value(u)
    if isinstance(kernel, (CovarianceKernel1D, BoundaryKernel)):
        u = np.asarray(u, dtype=float)
        out = kernel.value(u)
        return float(out) if out.ndim == 0 else out
    raise TypeError(f"cannot evaluate {type(kernel).__name__}")


def kernel_to_text(kernel) -> str:
    """One-line plain-text record for reproducing a kernel across runs."""
    if isinstance(kernel, RadialAnnulusKernel):
        parts = ["annulus", repr(kernel.c1), repr(kernel.c2), str(kernel.dim)]
        parts += [repr(c) for c in kernel.coeffs]
        return " ".join(parts)
    if isinstance(kernel, ProductEpanechnikovKernel):
        return f"product_epanechnikov {kernel.dim}"
    if isinstance(kernel, CovarianceKernel1D):
        return "covariance_1d"
    if isinstance(kernel, BoundaryKernel):
        return f"boundary {kernel.q!r}"
    raise TypeError(f"cannot serialize {type(kernel).__name__}")


def kernel_from_text(text: str):
    parts = text.split()
    if not parts:
        raise ValueError("empty kernel record")
    kind = parts[0]
    if kind == "annulus":
        if len(parts) != 8:
            raise ValueError(f"annulus record needs 7 fields, got {len(parts) - 1}")
        c1, c2 = float(parts[1]), float(parts[2])
        dim = int(parts[3])
        coeffs = tuple(float(p) for p in parts[4:8])
        return RadialAnnulusKernel(c1=c1, c2=c2, coeffs=coeffs, dim=dim)
    if kind == "product_epanechnikov":
        return ProductEpanechnikovKernel(dim=int(parts[1]))
    if kind == "covariance_1d":
        return CovarianceKernel1D()
    if kind == "boundary":
        return BoundaryKernel(q=float(parts[1]))
    raise ValueError(f"unknown kernel kind {kind!r}")
