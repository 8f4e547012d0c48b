"""Command-line surface: fit / elbow / covariance / simulate / bench.

Every command reads an optional key=value config file (flags win), echoes
the resolved configuration into the output directory, and writes CSV
artifacts plus a key=value run report.  Artifacts carry no timestamps, so
identical config + seed reproduces byte-identical outputs.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O failure.
The thread count for the simulation harness can be overridden with the
CORRSMOOTH_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from .bandwidth import (
    default_grid,
    elbow_scan,
    factor_convert,
    gcv_select,
    select_h_z,
    variance_fit_bandwidth,
)
from .covariance import (
    DELTA_N_DEFAULT,
    calibrate_b,
    covariance_curve,
    default_b_candidates,
    estimate_correlation,
    sigma2_rss,
)
from .errors import CorrsmoothError
from .kernels import (
    DEFAULT_C2_OFFSET,
    MIN_AMISE,
    MIN_PRODUCT,
    MIN_VARIANCE,
    ProductEpanechnikovKernel,
    build_annulus_kernel,
    kernel_to_text,
)
from .locfit import Dataset, fit_all, fit_points, load_csv, rss
from .simulate import (
    CorrelationModel,
    SimScenario,
    ZETA_DEFAULT,
    generate,
    parse_method,
    run_table,
)

__all__ = ["main"]

_OBJECTIVES = (MIN_VARIANCE, MIN_AMISE, MIN_PRODUCT)


class UsageError(Exception):
    """Bad arguments, config, or input schema; maps to exit code 1."""


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if np.isnan(value):
            return ""
        return repr(value)
    if isinstance(value, np.integer):
        return str(int(value))
    if value is None:
        return ""
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_report(path: Path, items) -> None:
    with path.open("w", encoding="utf-8") as f:
        for key, value in items:
            f.write(f"{key}={_fmt(value)}\n")


def _load_config_file(path: str) -> dict:
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise UsageError(f"cannot read config file {path}: {err}") from err
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(raw: str, default):
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _resolve(args, defaults: dict) -> dict:
    """Command defaults, overridden by the config file, overridden by flags."""
    cfg = dict(defaults)
    if args.config:
        for key, raw in _load_config_file(args.config).items():
            if key not in cfg:
                raise UsageError(f"unknown config key {key!r}")
            try:
                cfg[key] = _coerce(raw, defaults[key])
            except ValueError as err:
                raise UsageError(f"bad config value for {key}: {err}") from err
    for key in cfg:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            cfg[key] = flag_value
    return cfg


def _echo_config(outdir: Path, cfg: dict) -> None:
    _write_report(outdir / "config_echo.txt", sorted(cfg.items()))


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_float_list(text: str, what: str) -> np.ndarray:
    """Accept 'a,b,c' or 'start:stop:step' range syntax."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(p) for p in text.split(":"))
            return np.arange(start, stop + step / 2.0, step)
        return np.asarray([float(p) for p in text.split(",") if p.strip()])
    except ValueError as err:
        raise UsageError(f"cannot parse {what} {text!r}: {err}") from err


def _grid_from_cfg(cfg, data, kernel):
    if cfg["grid"]:
        return _parse_float_list(cfg["grid"], "bandwidth grid")
    return default_grid(data, kernel, size=cfg["grid_size"])


def _load_dataset(cfg) -> Dataset:
    try:
        return load_csv(cfg["input"], metric=cfg["metric"])
    except FileNotFoundError as err:
        raise UsageError(f"input file not found: {cfg['input']}") from err
    except ValueError as err:
        raise UsageError(str(err)) from err


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit(cfg: dict) -> int:
    if not cfg["input"]:
        raise UsageError("fit requires --input CSV")
    data = _load_dataset(cfg)
    outdir = _outdir(cfg)
    _echo_config(outdir, cfg)
    kz = build_annulus_kernel(
        cfg["c1"], cfg["c1"] + cfg["c2_offset"], data.dim, cfg["objective"]
    )
    ko = ProductEpanechnikovKernel(data.dim)
    grid = _grid_from_cfg(cfg, data, kz)
    sel = select_h_z(data, kz, grid)
    h_o = factor_convert(sel, kz, ko)
    fit = fit_all(data, h_o, ko)

    _write_csv(
        outdir / "rss_trace.csv",
        ["h", "rss", "feasible"],
        [
            (h, r if np.isfinite(r) else np.nan, int(np.isfinite(r)))
            for h, r in zip(sel.grid, sel.rss_trace)
        ],
    )
    coord_names = [f"x{d + 1}" for d in range(data.dim)]
    _write_csv(
        outdir / "fitted.csv",
        coord_names + ["y", "fitted", "residual"],
        np.column_stack(
            [data.points, data.responses, fit.fitted, fit.residuals]
        ).tolist(),
    )
    m = cfg["surface_grid"]
    axes = [
        np.linspace(data.points[:, d].min(), data.points[:, d].max(), m)
        for d in range(data.dim)
    ]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, data.dim)
    surface, singular = fit_points(data, mesh, h_o, ko)
    _write_csv(
        outdir / "surface.csv",
        coord_names + ["mu_hat"],
        np.column_stack([mesh, surface]).tolist(),
    )
    report = [
        ("command", "fit"),
        ("n", data.n),
        ("dim", data.dim),
        ("metric", data.metric),
        ("c1", kz.c1),
        ("c2", kz.c2),
        ("objective", cfg["objective"]),
        ("kernel", kernel_to_text(kz)),
        ("h_z", sel.h_z),
        ("factor_ratio", sel.factor_ratio),
        ("h_o", h_o),
        ("rss_min", float(np.nanmin(np.where(np.isfinite(sel.rss_trace), sel.rss_trace, np.nan)))),
        ("rss_at_h_o", rss(fit) if fit.singular_count == 0 else np.nan),
        ("singular_count", fit.singular_count),
        ("surface_singular_count", int(singular.sum())),
    ]
    _write_report(outdir / "report.txt", report)
    print(f"h_z={sel.h_z!r} h_o={h_o!r} singular_count={fit.singular_count}")
    return 0


def cmd_elbow(cfg: dict) -> int:
    if not cfg["input"]:
        raise UsageError("elbow requires --input CSV")
    data = _load_dataset(cfg)
    c1_list = _parse_float_list(cfg["c1_list"], "c1 list")
    if c1_list.size < 3:
        raise UsageError("need >= 3 candidates for stability detection")
    outdir = _outdir(cfg)
    _echo_config(outdir, cfg)
    diag = elbow_scan(
        data,
        c1_list,
        objective=cfg["objective"],
        c2_offset=cfg["c2_offset"],
        stability_tol=cfg["stability_tol"],
        grid_size=cfg["grid_size"],
    )
    _write_csv(
        outdir / "elbow.csv",
        ["c1", "cbar", "h_z", "feasible"],
        [
            (c1, cb, hz, int(ok))
            for c1, cb, hz, ok in zip(
                diag.c1_list, diag.cbar_list, diag.h_z_list, diag.feasible
            )
        ],
    )
    _write_report(
        outdir / "report.txt",
        [
            ("command", "elbow"),
            ("chosen_c1", diag.chosen_c1),
            ("chosen_index", diag.chosen_index),
            ("n_candidates", int(diag.c1_list.size)),
            ("n_feasible", int(diag.feasible.sum())),
        ],
    )
    print(f"chosen_c1={diag.chosen_c1!r}")
    return 0


def cmd_covariance(cfg: dict) -> int:
    if not cfg["input"]:
        raise UsageError("covariance requires --input CSV")
    data = _load_dataset(cfg)
    outdir = _outdir(cfg)
    _echo_config(outdir, cfg)
    ko = ProductEpanechnikovKernel(data.dim)

    if cfg["fit_dir"]:
        report_path = Path(cfg["fit_dir"]) / "report.txt"
        try:
            entries = dict(
                line.split("=", 1)
                for line in report_path.read_text(encoding="utf-8").splitlines()
                if "=" in line
            )
            h_o = float(entries["h_o"])
        except (OSError, KeyError, ValueError) as err:
            raise UsageError(f"cannot recover h_o from {report_path}: {err}") from err
    else:
        kz = build_annulus_kernel(
            cfg["c1"], cfg["c1"] + cfg["c2_offset"], data.dim, cfg["objective"]
        )
        sel = select_h_z(data, kz, _grid_from_cfg(cfg, data, kz))
        h_o = factor_convert(sel, kz, ko)

    fit = fit_all(data, h_o, ko)
    h_t = variance_fit_bandwidth(h_o, data.n, data.dim)
    sigma2_hat = sigma2_rss(data, h_t, ko)
    b_candidates = (
        _parse_float_list(cfg["b_candidates"], "b candidates")
        if cfg["b_candidates"]
        else default_b_candidates(data, size=cfg["b_count"])
    )
    cal = calibrate_b(data, fit, sigma2_hat, b_candidates, delta_n=cfg["delta_n"])
    truncation = cfg["truncation_t"] if cfg["truncation_t"] >= 0.0 else None
    curve = covariance_curve(
        data, fit, cal.chosen_b, n_star=cfg["n_star"],
        truncation_t=truncation, sigma2_hat=sigma2_hat,
    )
    rho = estimate_correlation(curve, cfg["rho_mode"])

    chosen_idx = int(np.argmin(np.abs(cal.b_candidates - cal.chosen_b)))
    _write_csv(
        outdir / "calibration.csv",
        ["b", "sigma2_tilde", "discrepancy", "chosen"],
        [
            (b, t, d, int(i == chosen_idx))
            for i, (b, t, d) in enumerate(
                zip(cal.b_candidates, cal.sigma2_tilde, cal.discrepancy)
            )
        ],
    )
    _write_csv(
        outdir / "covariance.csv",
        ["t", "c_hat", "rho_hat", "flag"],
        [
            (t, c, r, int(abs(c) > 1.5 * abs(curve.sigma2_tilde)))
            for t, c, r in zip(curve.t_grid, curve.c_hat, rho.rho)
        ],
    )
    _write_report(
        outdir / "report.txt",
        [
            ("command", "covariance"),
            ("h_o", h_o),
            ("h_t", h_t),
            ("sigma2_hat", sigma2_hat),
            ("sigma2_tilde", curve.sigma2_tilde),
            ("chosen_b", cal.chosen_b),
            ("delta_n", cal.delta_n),
            ("calibration_fallback", int(cal.fallback)),
            ("truncation_t", curve.truncation_t),
            ("rho_mode", cfg["rho_mode"]),
            ("rho_clamped", int(rho.clamped)),
            ("dropped_grid_points", int(curve.dropped.size)),
            ("distance_unit", "km" if data.metric == "haversine" else "coordinate"),
        ],
    )
    print(
        f"b={cal.chosen_b!r} sigma2_hat={sigma2_hat!r} "
        f"sigma2_tilde={curve.sigma2_tilde!r} fallback={int(cal.fallback)}"
    )
    return 0


def _parse_scenario_file(path: str):
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise UsageError(f"cannot read scenario file {path}: {err}") from err
    scenarios = []
    methods_per_scenario = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = {}
        for token in line.split():
            if "=" not in token:
                raise UsageError(f"{path}:{lineno}: expected key=value tokens")
            key, value = token.split("=", 1)
            fields[key] = value
        try:
            model = CorrelationModel(
                family=fields["family"],
                c=float(fields["c"]),
                alpha=float(fields.get("alpha", "1.0")),
                dim=int(fields["D"]),
                sigma2=float(fields.get("sigma2", "0.1")),
            )
            scn = SimScenario(
                mu_id="mu2d" if model.dim == 2 else "mu3d",
                n=int(fields["n"]),
                model=model,
                seed=int(fields["seed"]),
                n_trials=int(fields.get("trials", "1")),
            )
            methods = [parse_method(m) for m in fields["methods"].split(";") if m]
        except (KeyError, ValueError) as err:
            raise UsageError(f"{path}:{lineno}: {err}") from err
        scenarios.append(scn)
        methods_per_scenario.append(methods)
    if not scenarios:
        raise UsageError(f"{path}: no scenarios found")
    return scenarios, methods_per_scenario


def _bundled_scenarios() -> str:
    return str(resources.files("corrsmooth").joinpath("data/table1_scenarios.txt"))


def cmd_simulate(cfg: dict) -> int:
    path = cfg["scenarios"] or _bundled_scenarios()
    scenarios, methods_per = _parse_scenario_file(path)
    outdir = _outdir(cfg)
    _echo_config(outdir, cfg)
    threads = int(os.environ.get("CORRSMOOTH_THREADS", cfg["threads"]))
    rows = []

    def progress(scn, trial):
        print(
            f"{scn.model.family} c={scn.model.c:g}: trial {trial + 1}/{scn.n_trials}",
            flush=True,
        )

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for scn, methods in zip(scenarios, methods_per):
            rows.extend(
                run_table(
                    [scn],
                    methods,
                    n_trials=cfg["trials"] if cfg["trials"] > 0 else None,
                    objective=cfg["objective"],
                    n_star=cfg["n_star"],
                    delta_n=cfg["delta_n"],
                    zeta=cfg["zeta"],
                    threads=threads,
                    progress=progress,
                )
            )
    tables = {
        "table_mse_prac.csv": ("mse_prac_mean", "mse_prac_sd"),
        "table_mse_sigma2.csv": ("mse_sigma2_mean", "mse_sigma2_sd"),
        "table_sse_cor.csv": ("sse_cor_mean", "sse_cor_sd"),
    }
    for filename, (mean_key, sd_key) in tables.items():
        _write_csv(
            outdir / filename,
            ["model", "c", "method", "mean", "sd"],
            [
                (r.family, r.c, r.method, getattr(r, mean_key), getattr(r, sd_key))
                for r in rows
            ],
        )
    _write_csv(
        outdir / "failures.csv",
        ["model", "c", "method", "failures", "n_trials"],
        [(r.family, r.c, r.method, r.failures, r.n_trials) for r in rows],
    )
    _write_report(
        outdir / "report.txt",
        [
            ("command", "simulate"),
            ("scenario_file", Path(path).name),
            ("n_scenarios", len(scenarios)),
            ("rows", len(rows)),
            ("total_failures", sum(r.failures for r in rows)),
        ],
    )
    print(f"wrote {len(rows)} result rows to {outdir}")
    return 0


def cmd_bench(cfg: dict) -> int:
    """End-to-end smoke benchmark on a small synthetic scenario."""
    import time

    outdir = _outdir(cfg)
    _echo_config(outdir, cfg)
    model = CorrelationModel("spherical", c=2.0, alpha=1.0, dim=2, sigma2=0.1)
    scn = SimScenario("mu2d", cfg["n"], model, seed=cfg["seed"], n_trials=1)
    sim = generate(scn, 0)
    data = sim.dataset
    ko = ProductEpanechnikovKernel(2)
    timings = []
    t0 = time.perf_counter()
    kz = build_annulus_kernel(1.0, 1.5, 2, MIN_PRODUCT)
    timings.append(("build_kernel_s", time.perf_counter() - t0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t0 = time.perf_counter()
        sel = select_h_z(data, kz, default_grid(data, kz))
        h_o = factor_convert(sel, kz, ko)
        timings.append(("select_s", time.perf_counter() - t0))
        t0 = time.perf_counter()
        fit = fit_all(data, h_o, ko)
        timings.append(("fit_s", time.perf_counter() - t0))
        t0 = time.perf_counter()
        sigma2_hat = sigma2_rss(data, variance_fit_bandwidth(h_o, data.n, 2), ko)
        cal = calibrate_b(data, fit, sigma2_hat)
        covariance_curve(data, fit, cal.chosen_b, sigma2_hat=sigma2_hat)
        timings.append(("covariance_s", time.perf_counter() - t0))
    _write_report(
        outdir / "bench.txt",
        [("command", "bench"), ("n", data.n), ("h_o", h_o), ("status", "ok")],
    )
    for name, seconds in timings:
        print(f"{name}={seconds:.3f}")
    return 0


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse errors through the usage exit code
        raise UsageError(message)


def _add_common(sub, defaults):
    sub.add_argument("--config", default=None, help="key=value config file; flags win")
    sub.add_argument("--output-dir", dest="output_dir", default=None)


_FIT_DEFAULTS = dict(
    input="", metric="euclidean", c1=1.0, c2_offset=DEFAULT_C2_OFFSET,
    objective=MIN_AMISE, grid="", grid_size=30, surface_grid=25,
    output_dir="corrsmooth_out/fit",
)
_ELBOW_DEFAULTS = dict(
    input="", metric="euclidean", c1_list="0.0:6.0:0.25", c2_offset=DEFAULT_C2_OFFSET,
    objective=MIN_AMISE, stability_tol=0.10, grid_size=30,
    output_dir="corrsmooth_out/elbow",
)
_COV_DEFAULTS = dict(
    input="", metric="euclidean", fit_dir="", c1=1.0, c2_offset=DEFAULT_C2_OFFSET,
    objective=MIN_AMISE, grid="", grid_size=30, b_candidates="", b_count=25,
    delta_n=DELTA_N_DEFAULT, n_star=200, truncation_t=-1.0, rho_mode="by_chat0",
    output_dir="corrsmooth_out/covariance",
)
_SIM_DEFAULTS = dict(
    scenarios="", trials=0, objective=MIN_PRODUCT, n_star=200,
    delta_n=DELTA_N_DEFAULT, zeta=ZETA_DEFAULT, threads=1,
    output_dir="corrsmooth_out/simulate",
)
_BENCH_DEFAULTS = dict(n=300, seed=0, output_dir="corrsmooth_out/bench")


def _build_parser() -> _Parser:
    parser = _Parser(prog="corrsmooth", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p_fit = subs.add_parser("fit", help="select bandwidth and fit the surface")
    _add_common(p_fit, _FIT_DEFAULTS)
    p_fit.add_argument("--input", default=None)
    p_fit.add_argument("--metric", choices=("euclidean", "haversine"), default=None)
    p_fit.add_argument("--c1", type=float, default=None)
    p_fit.add_argument("--c2-offset", dest="c2_offset", type=float, default=None)
    p_fit.add_argument("--objective", choices=_OBJECTIVES, default=None)
    p_fit.add_argument("--grid", default=None, help="explicit grid 'a,b,c' or 'lo:hi:step'")
    p_fit.add_argument("--grid-size", dest="grid_size", type=int, default=None)
    p_fit.add_argument("--surface-grid", dest="surface_grid", type=int, default=None)
    p_fit.set_defaults(func=cmd_fit, defaults=_FIT_DEFAULTS)

    p_elbow = subs.add_parser("elbow", help="scan c1 candidates for the elbow")
    _add_common(p_elbow, _ELBOW_DEFAULTS)
    p_elbow.add_argument("--input", default=None)
    p_elbow.add_argument("--metric", choices=("euclidean", "haversine"), default=None)
    p_elbow.add_argument("--c1-list", dest="c1_list", default=None)
    p_elbow.add_argument("--c2-offset", dest="c2_offset", type=float, default=None)
    p_elbow.add_argument("--objective", choices=_OBJECTIVES, default=None)
    p_elbow.add_argument("--stability-tol", dest="stability_tol", type=float, default=None)
    p_elbow.add_argument("--grid-size", dest="grid_size", type=int, default=None)
    p_elbow.set_defaults(func=cmd_elbow, defaults=_ELBOW_DEFAULTS)

    p_cov = subs.add_parser("covariance", help="estimate the error covariance curve")
    _add_common(p_cov, _COV_DEFAULTS)
    p_cov.add_argument("--input", default=None)
    p_cov.add_argument("--metric", choices=("euclidean", "haversine"), default=None)
    p_cov.add_argument("--fit-dir", dest="fit_dir", default=None,
                       help="reuse h_o from a previous fit run's report")
    p_cov.add_argument("--c1", type=float, default=None)
    p_cov.add_argument("--c2-offset", dest="c2_offset", type=float, default=None)
    p_cov.add_argument("--objective", choices=_OBJECTIVES, default=None)
    p_cov.add_argument("--grid", default=None)
    p_cov.add_argument("--grid-size", dest="grid_size", type=int, default=None)
    p_cov.add_argument("--b-candidates", dest="b_candidates", default=None)
    p_cov.add_argument("--b-count", dest="b_count", type=int, default=None)
    p_cov.add_argument("--delta-n", dest="delta_n", type=float, default=None)
    p_cov.add_argument("--n-star", dest="n_star", type=int, default=None)
    p_cov.add_argument("--truncation-t", dest="truncation_t", type=float, default=None,
                       help="fixed truncation lag; negative means pilot rule")
    p_cov.add_argument("--rho-mode", dest="rho_mode",
                       choices=("by_chat0", "by_sigma2_hat"), default=None)
    p_cov.set_defaults(func=cmd_covariance, defaults=_COV_DEFAULTS)

    p_sim = subs.add_parser("simulate", help="run the seeded simulation tables")
    _add_common(p_sim, _SIM_DEFAULTS)
    p_sim.add_argument("--scenarios", default=None, help="scenario file; bundled if omitted")
    p_sim.add_argument("--trials", type=int, default=None, help="override per-scenario trials")
    p_sim.add_argument("--objective", choices=_OBJECTIVES, default=None)
    p_sim.add_argument("--n-star", dest="n_star", type=int, default=None)
    p_sim.add_argument("--delta-n", dest="delta_n", type=float, default=None)
    p_sim.add_argument("--zeta", type=float, default=None)
    p_sim.add_argument("--threads", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate, defaults=_SIM_DEFAULTS)

    p_bench = subs.add_parser("bench", help="time the pipeline on a synthetic run")
    _add_common(p_bench, _BENCH_DEFAULTS)
    p_bench.add_argument("--n", type=int, default=None)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.set_defaults(func=cmd_bench, defaults=_BENCH_DEFAULTS)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args, args.defaults)
        return args.func(cfg)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (CorrsmoothError, ValueError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"i/o failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
