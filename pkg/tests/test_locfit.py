import numpy as np
import pytest
from numpy.testing import assert_allclose

from corrsmooth.errors import SingularFitError
from corrsmooth.kernels import ProductEpanechnikovKernel, RadialAnnulusKernel, build_annulus_kernel
from corrsmooth.locfit import (
    EARTH_RADIUS_KM,
    Dataset,
    fit_all,
    fit_at,
    hat_coefficients,
    hat_matrix,
    load_csv,
    pairwise_distances,
    rss,
)

from conftest import make_affine_dataset


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_affine_reproduction(dim):
    data = make_affine_dataset(n=200, dim=dim, seed=dim)
    ko = ProductEpanechnikovKernel(dim)
    fit = fit_all(data, 0.4, ko)
    assert fit.singular_count == 0
    assert np.abs(fit.fitted - data.responses).max() < 1e-10
    x = np.full(dim, 0.37)
    truth = 1.0 + x @ np.arange(1, dim + 1, dtype=float)
    assert abs(fit_at(data, x, 0.4, ko) - truth) < 1e-10


def test_constant_responses_reproduced():
    rng = np.random.default_rng(5)
    data = Dataset(points=rng.random((80, 2)), responses=np.full(80, 5.0))
    est = fit_at(data, [0.4, 0.6], 0.3, ProductEpanechnikovKernel(2))
    assert abs(est - 5.0) < 1e-12


def test_collinear_points_raise_singular():
    t = np.linspace(0.0, 1.0, 5)
    pts = np.column_stack([t, 2.0 * t])  # rank-deficient design in D=2
    data = Dataset(points=pts, responses=t)
    with pytest.raises(SingularFitError):
        fit_at(data, [0.5, 1.0], 1.0, ProductEpanechnikovKernel(2))


def test_annulus_with_tiny_h_marks_every_point_singular():
    data = make_affine_dataset(n=60, dim=2, seed=1)
    kz = build_annulus_kernel(1.0, 1.5, 2)
    fit = fit_all(data, 1e-6, kz)
    assert fit.singular_count == data.n
    with pytest.raises(SingularFitError):
        rss(fit)


def test_fitted_plus_residuals_equals_responses():
    data = make_affine_dataset(n=100, dim=2, seed=2)
    fit = fit_all(data, 0.5, ProductEpanechnikovKernel(2))
    assert_allclose(fit.fitted + fit.residuals, data.responses, rtol=0, atol=0)


def test_hat_coefficient_identities():
    rng = np.random.default_rng(9)
    data = Dataset(points=rng.random((80, 2)), responses=rng.normal(size=80))
    kz = build_annulus_kernel(1.0, 1.5, 2)
    i = 7
    c = hat_coefficients(data, i, 0.35, kz)
    assert c[i] == 0.0  # annulus kernel vanishes at the origin
    assert abs(c.sum() - 1.0) < 1e-10  # constant preservation
    assert np.abs(c @ (data.points - data.points[i])).max() < 1e-10
    fitted = fit_at(data, data.points[i], 0.35, kz)
    assert abs(c @ data.responses - fitted) < 1e-12


def test_hat_matrix_matches_per_row_and_explicit_algebra():
    rng = np.random.default_rng(11)
    data = Dataset(points=rng.random((40, 2)), responses=rng.normal(size=40))
    ko = ProductEpanechnikovKernel(2)
    h = 0.5
    c, singular = hat_matrix(data, h, ko)
    assert not singular.any()
    for i in (0, 13, 39):
        assert_allclose(c[i], hat_coefficients(data, i, h, ko), atol=1e-12)
    # independent dense-algebra check of one row
    i = 13
    x = data.points
    u = (x - x[i]) / h
    w = np.prod(np.where(np.abs(u) <= 1, 0.75 * (1 - u * u), 0.0), axis=1)
    xmat = np.column_stack([np.ones(data.n), x - x[i]])
    a = xmat.T @ (w[:, None] * xmat)
    row = np.linalg.solve(a, np.eye(3)[:, 0]) @ (xmat.T * w)
    assert_allclose(c[i], row, atol=1e-10)


def test_smoother_linearity_in_responses():
    rng = np.random.default_rng(21)
    pts = rng.random((90, 2))
    y1 = rng.normal(size=90)
    y2 = rng.normal(size=90)
    a = 1.7
    ko = ProductEpanechnikovKernel(2)
    f1 = fit_all(Dataset(points=pts, responses=y1), 0.4, ko).fitted
    f2 = fit_all(Dataset(points=pts, responses=y2), 0.4, ko).fitted
    f12 = fit_all(Dataset(points=pts, responses=a * y1 + y2), 0.4, ko).fitted
    assert np.abs(f12 - (a * f1 + f2)).max() < 1e-10


def test_weight_scale_invariance():
    # multiplying every kernel weight by a positive constant leaves the fit alone
    rng = np.random.default_rng(31)
    data = Dataset(points=rng.random((70, 2)), responses=rng.normal(size=70))
    kz = build_annulus_kernel(1.0, 1.5, 2)
    scaled = RadialAnnulusKernel(
        c1=kz.c1, c2=kz.c2, coeffs=tuple(4.0 * c for c in kz.coeffs), dim=kz.dim
    )
    f1 = fit_all(data, 0.4, kz)
    f2 = fit_all(data, 0.4, scaled)
    assert f1.singular_count == f2.singular_count == 0
    assert np.abs(f1.fitted - f2.fitted).max() < 1e-12


def test_rss_values():
    data = make_affine_dataset(n=50, dim=2, seed=3)
    fit = fit_all(data, 0.5, ProductEpanechnikovKernel(2))
    assert rss(fit) < 1e-20  # zero residuals on affine data
    from corrsmooth.locfit import FitResult

    toy = FitResult(
        fitted=np.array([0.0, 0.0]),
        residuals=np.array([1.0, -1.0]),
        h=1.0,
        kernel=ProductEpanechnikovKernel(1),
        singular_count=0,
    )
    assert rss(toy) == 1.0


def test_pairwise_distances_euclidean():
    pts = np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 0.0], [1.0, 1.0]])
    data = Dataset(points=pts, responses=np.zeros(4))
    d = pairwise_distances(data)
    assert d[0] == pytest.approx(5.0)
    assert d[1] == 0.0  # identical points


def test_pairwise_distances_haversine_one_degree():
    pts = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 5.0], [20.0, -3.0]])
    data = Dataset(points=pts, responses=np.zeros(4), metric="haversine")
    d = pairwise_distances(data)
    # one degree of longitude at the equator: arc = R * pi/180
    assert abs(d[0] - 111.195) < 0.01
    assert abs(d[0] - EARTH_RADIUS_KM * np.pi / 180.0) < 1e-6


def test_haversine_requires_two_columns():
    with pytest.raises(ValueError, match="haversine"):
        Dataset(points=np.random.default_rng(0).random((10, 3)),
                responses=np.zeros(10), metric="haversine")


def test_dataset_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="D\\+2"):
        Dataset(points=rng.random((3, 2)), responses=np.zeros(3))
    bad = rng.random((10, 2))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        Dataset(points=bad, responses=np.zeros(10))
    with pytest.raises(ValueError, match="metric"):
        Dataset(points=rng.random((10, 2)), responses=np.zeros(10), metric="cosine")


def test_dataset_arrays_are_read_only():
    data = make_affine_dataset(n=20, dim=2)
    with pytest.raises(ValueError):
        data.points[0, 0] = 1.0


def test_load_csv_round_trip(tmp_path):
    data = make_affine_dataset(n=30, dim=2, seed=8)
    path = tmp_path / "d.csv"
    rows = ["x1,x2,y"]
    for p, y in zip(data.points, data.responses):
        rows.append(f"{float(p[0])!r},{float(p[1])!r},{float(y)!r}")
    path.write_text("\n".join(rows))
    back = load_csv(path)
    assert_allclose(back.points, data.points)
    assert_allclose(back.responses, data.responses)


def test_load_csv_missing_y(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x1,x2,z\n0,0,1\n")
    with pytest.raises(ValueError, match="column y not found"):
        load_csv(path)


def test_load_csv_malformed_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x1,y\n0.1,ok\n")
    with pytest.raises(ValueError, match="line 2"):
        load_csv(path)
