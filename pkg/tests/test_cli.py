import csv

import numpy as np
import pytest

from corrsmooth.cli import main

from conftest import make_affine_dataset, make_geo_dataset


def write_dataset_csv(path, data):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"x{d + 1}" for d in range(data.dim)] + ["y"])
        for p, y in zip(data.points, data.responses):
            writer.writerow([repr(float(v)) for v in p] + [repr(float(y))])


def read_csv(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = list(reader)
    return header, rows


@pytest.fixture()
def affine_csv(tmp_path):
    data = make_affine_dataset(n=150, dim=2, seed=20)
    path = tmp_path / "affine.csv"
    write_dataset_csv(path, data)
    return path


def test_fit_affine_surface_is_exact(tmp_path, affine_csv):
    out = tmp_path / "fit"
    code = main([
        "fit", "--input", str(affine_csv), "--c1", "1.0",
        "--output-dir", str(out),
    ])
    assert code == 0
    header, rows = read_csv(out / "surface.csv")
    assert header == ["x1", "x2", "mu_hat"]
    worst = 0.0
    for row in rows:
        if row[2] == "":
            continue
        x1, x2, mu = (float(v) for v in row)
        worst = max(worst, abs(mu - (1.0 + 1.0 * x1 + 2.0 * x2)))
    assert worst < 1e-8
    report = dict(
        line.split("=", 1) for line in (out / "report.txt").read_text().splitlines()
    )
    assert report["singular_count"] == "0"
    assert (out / "config_echo.txt").exists()
    assert (out / "rss_trace.csv").exists()
    assert (out / "fitted.csv").exists()


def test_fit_haversine_geo_fixture(tmp_path):
    # synthetic 1064-point lat/lon stand-in for the county mortality surface
    data, _, _ = make_geo_dataset(n=1064, seed=314)
    path = tmp_path / "geo.csv"
    write_dataset_csv(path, data)
    out = tmp_path / "fit"
    code = main([
        "fit", "--input", str(path), "--metric", "haversine", "--c1", "1.25",
        "--grid-size", "12", "--surface-grid", "8", "--output-dir", str(out),
    ])
    assert code == 0
    report = dict(
        line.split("=", 1) for line in (out / "report.txt").read_text().splitlines()
    )
    assert report["singular_count"] == "0"
    assert report["metric"] == "haversine"


def test_fit_missing_y_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x1,x2,z\n0.1,0.2,0.3\n")
    code = main(["fit", "--input", str(path), "--output-dir", str(tmp_path / "o")])
    assert code != 0


def test_fit_missing_input_flag(tmp_path):
    assert main(["fit", "--output-dir", str(tmp_path / "o")]) == 1


def test_elbow_csv_row_count_and_determinism(tmp_path):
    # default candidate list 0:6:0.25 gives 25 rows
    data, _, _ = make_geo_dataset(n=220, seed=5, range_km=150.0)
    path = tmp_path / "geo.csv"
    write_dataset_csv(path, data)
    out1 = tmp_path / "elbow1"
    code = main([
        "elbow", "--input", str(path), "--metric", "haversine",
        "--grid-size", "8", "--output-dir", str(out1),
    ])
    assert code == 0
    header, rows = read_csv(out1 / "elbow.csv")
    assert header == ["c1", "cbar", "h_z", "feasible"]
    assert len(rows) == 25
    out2 = tmp_path / "elbow2"
    assert main([
        "elbow", "--input", str(path), "--metric", "haversine",
        "--grid-size", "8", "--output-dir", str(out2),
    ]) == 0
    assert (out1 / "elbow.csv").read_bytes() == (out2 / "elbow.csv").read_bytes()


def test_elbow_single_candidate_rejected(tmp_path, affine_csv):
    code = main([
        "elbow", "--input", str(affine_csv), "--c1-list", "1.0",
        "--output-dir", str(tmp_path / "e"),
    ])
    assert code == 1


def test_covariance_on_seeded_fixture(tmp_path):
    from corrsmooth.simulate import CorrelationModel, SimScenario, generate

    model = CorrelationModel("spherical", c=3.0, alpha=1.0, dim=2, sigma2=0.1)
    sim = generate(SimScenario("mu2d", 400, model, seed=2718), 0)
    path = tmp_path / "sp.csv"
    write_dataset_csv(path, sim.dataset)
    out = tmp_path / "cov"
    code = main([
        "covariance", "--input", str(path), "--c1", "2.0",
        "--grid-size", "15", "--n-star", "80", "--output-dir", str(out),
    ])
    assert code == 0
    report = dict(
        line.split("=", 1) for line in (out / "report.txt").read_text().splitlines()
    )
    assert report["calibration_fallback"] == "0"
    gap = abs(float(report["sigma2_hat"]) - float(report["sigma2_tilde"]))
    assert gap <= float(report["delta_n"])
    header, rows = read_csv(out / "covariance.csv")
    assert header == ["t", "c_hat", "rho_hat", "flag"]
    rho = np.array([float(r[2]) for r in rows])
    assert rho.min() >= -1.0 and rho.max() <= 1.0  # clamping contract
    cal_header, cal_rows = read_csv(out / "calibration.csv")
    assert cal_header == ["b", "sigma2_tilde", "discrepancy", "chosen"]
    assert sum(int(r[3]) for r in cal_rows) == 1


def test_covariance_delta_zero_flags_fallback(tmp_path):
    from corrsmooth.simulate import CorrelationModel, SimScenario, generate

    model = CorrelationModel("spherical", c=2.0, alpha=1.0, dim=2, sigma2=0.1)
    sim = generate(SimScenario("mu2d", 250, model, seed=161), 0)
    path = tmp_path / "sp.csv"
    write_dataset_csv(path, sim.dataset)
    out = tmp_path / "cov"
    with pytest.warns(UserWarning, match="falling back"):
        code = main([
            "covariance", "--input", str(path), "--c1", "1.0", "--delta-n", "0.0",
            "--grid-size", "12", "--n-star", "40", "--output-dir", str(out),
        ])
    assert code == 0
    report = dict(
        line.split("=", 1) for line in (out / "report.txt").read_text().splitlines()
    )
    assert report["calibration_fallback"] == "1"


def test_covariance_reuses_fit_dir(tmp_path, affine_csv):
    fit_out = tmp_path / "fit"
    assert main([
        "fit", "--input", str(affine_csv), "--c1", "1.0", "--output-dir", str(fit_out),
    ]) == 0
    cov_out = tmp_path / "cov"
    code = main([
        "covariance", "--input", str(affine_csv), "--fit-dir", str(fit_out),
        "--n-star", "20", "--output-dir", str(cov_out),
    ])
    assert code == 0
    report = dict(
        line.split("=", 1)
        for line in (cov_out / "report.txt").read_text().splitlines()
    )
    fit_report = dict(
        line.split("=", 1)
        for line in (fit_out / "report.txt").read_text().splitlines()
    )
    assert report["h_o"] == fit_report["h_o"]


def test_simulate_small_scenario_file(tmp_path):
    scen = tmp_path / "scenes.txt"
    scen.write_text(
        "family=spherical c=2.0 alpha=1.0 D=2 n=150 sigma2=0.1 seed=11 trials=1 "
        "methods=za(1,1.5);gcv\n"
    )
    out = tmp_path / "sim"
    code = main([
        "simulate", "--scenarios", str(scen), "--n-star", "40",
        "--output-dir", str(out),
    ])
    assert code == 0
    header, rows = read_csv(out / "table_mse_prac.csv")
    assert header == ["model", "c", "method", "mean", "sd"]
    methods = [r[2] for r in rows]
    assert methods == ["minEpan", "Raw", "ZA(1,1.5)", "GCV"]
    sds = {r[2]: r[4] for r in rows}
    assert sds["ZA(1,1.5)"] == "0.0"  # single trial
    assert (out / "table_mse_sigma2.csv").exists()
    assert (out / "table_sse_cor.csv").exists()
    assert (out / "failures.csv").exists()


def test_simulate_unknown_family_names_line(tmp_path, capsys):
    scen = tmp_path / "scenes.txt"
    scen.write_text(
        "family=spherical c=2.0 D=2 n=150 seed=1 trials=1 methods=gcv\n"
        "family=matern c=2.0 D=2 n=150 seed=1 trials=1 methods=gcv\n"
    )
    code = main(["simulate", "--scenarios", str(scen), "--output-dir", str(tmp_path / "o")])
    assert code == 1
    err = capsys.readouterr().err
    assert ":2:" in err  # names the offending line


def test_bundled_scenario_file_structure():
    from corrsmooth.cli import _bundled_scenarios, _parse_scenario_file

    scenarios, methods = _parse_scenario_file(_bundled_scenarios())
    assert len(scenarios) == 12  # SP, EXP, INVQ x 4 c-values each
    families = {s.model.family for s in scenarios}
    assert families == {"spherical", "exponential", "inverse_quadratic"}
    assert all(len(m) == 4 for m in methods)


def test_config_echo_round_trip(tmp_path, affine_csv):
    out1 = tmp_path / "run1"
    assert main([
        "fit", "--input", str(affine_csv), "--c1", "1.25",
        "--grid-size", "10", "--output-dir", str(out1),
    ]) == 0
    # re-run purely from the echoed config, redirected to a new directory
    out2 = tmp_path / "run2"
    assert main([
        "fit", "--config", str(out1 / "config_echo.txt"),
        "--output-dir", str(out2),
    ]) == 0
    for name in ("surface.csv", "rss_trace.csv", "fitted.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_bench_runs(tmp_path):
    out = tmp_path / "bench"
    assert main(["bench", "--n", "150", "--output-dir", str(out)]) == 0
    assert "status=ok" in (out / "bench.txt").read_text()
