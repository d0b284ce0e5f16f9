"""Manifest-driven command line: ``report``, ``solve`` and ``verify``.

Exit codes: 0 on success, 2 for an invalid manifest or a violated
hypothesis, 3 for a numerical failure (or a failing identity suite).
Set ``SIGMA2GEOM_THREADS`` to cap the BLAS/OpenMP thread pools.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import expr
from .conformal import T_MAX, pinching_margin
from .curvature import (
    CATALOG,
    CurvatureError,
    catalog,
    curvature_of,
    generalized_eigenvalues,
    q_curvature,
    schouten_t,
    sigma_spectrum,
)
from .grid import ChartKind, GridError, MetricField, SymTensorField, integrate, make_grid
from .solver import (
    ConeBreachError,
    ContinuationFailure,
    HypothesisError,
    continuation,
    setup_problem,
)
from .verify import SUITES, SuiteContext, run_suites

log = logging.getLogger(__name__)

THREADS_ENV = "SIGMA2GEOM_THREADS"
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
COMPONENT_KEYS = ("g11", "g22", "g33", "g12", "g13", "g23")
CSV_COLUMNS = ("t", "residual_sup", "cone_margin_min", "sup_u", "inf_u", "sup_grad_u", "harnack_gap")
TOP_LEVEL = {"chart", "metric", "conformal_factor", "solver", "functional", "suites", "seed", "report_t"}


class ManifestError(ValueError):
    """Invalid manifest; ``field`` is a dotted path and ``line`` its line in the file, if known."""

    def __init__(self, field_path: str, message: str, line: int | None = None):
        where = f"{field_path}" + (f" (line {line})" if line else "")
        super().__init__(f"{where}: {message}")
        self.field = field_path
        self.line = line


@dataclass
class Manifest:
    g: MetricField
    bundle: object
    catalog_name: str | None
    conformal_factor: str | None = None
    solver: dict = field(default_factory=dict)
    functional: dict = field(default_factory=dict)
    suites: list = field(default_factory=lambda: ["all"])
    seed: int = 0
    report_t: list = field(default_factory=lambda: [0.0, T_MAX, 1.0])


# -- manifest parsing -----------------------------------------------------------------


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return None


class _Reader:
    def __init__(self, text: str):
        self.text = text

    def fail(self, path: str, message: str):
        raise ManifestError(path, message, _line_of(self.text, path.split(".")[-1].split("[")[0]))

    def number(self, value, path: str) -> float:
        try:
            return expr.evaluate_constant(value)
        except (expr.ExprSyntaxError, ArithmeticError, TypeError) as exc:
            self.fail(path, f"expected a number or constant expression ({exc})")

    def integer(self, value, path: str) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, "expected an integer")
        return value

    def expression(self, value, path: str) -> str:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return repr(float(value))
        if not isinstance(value, str):
            self.fail(path, "expected an expression string")
        try:
            expr.parse(value)
        except expr.ExprSyntaxError as exc:
            self.fail(path, str(exc))
        return value


def _build_grid(reader: _Reader, chart: dict):
    if not isinstance(chart, dict):
        reader.fail("chart", "expected an object with kind and dims")
    unknown = set(chart) - {"kind", "dims", "ranges"}
    if unknown:
        reader.fail(f"chart.{sorted(unknown)[0]}", "unknown field")
    if "kind" not in chart or "dims" not in chart:
        reader.fail("chart", "kind and dims are required")
    try:
        return make_grid(chart["kind"], chart["dims"], chart.get("ranges"))
    except (GridError, ValueError, TypeError) as exc:
        reader.fail("chart", str(exc))


def _build_metric(reader: _Reader, data: dict):
    metric = data.get("metric")
    if not isinstance(metric, dict):
        reader.fail("metric", "required object with either 'catalog' or 'components'")
    has_catalog = "catalog" in metric
    has_components = "components" in metric
    if has_catalog == has_components:
        reader.fail("metric", "exactly one metric source is allowed: 'catalog' or 'components'")
    unknown = set(metric) - {"catalog", "params", "components"}
    if unknown:
        reader.fail(f"metric.{sorted(unknown)[0]}", "unknown field")

    grid = _build_grid(reader, data["chart"]) if "chart" in data else None
    if has_catalog:
        name = metric["catalog"]
        if name not in CATALOG:
            reader.fail("metric.catalog", f"unknown catalog metric {name!r}; choose from {sorted(CATALOG)}")
        params = metric.get("params", {})
        if not isinstance(params, dict):
            reader.fail("metric.params", "expected an object")
        params = {k: (v if isinstance(v, str) and k == "w" else reader.number(v, f"metric.params.{k}"))
                  for k, v in params.items()}
        try:
            g, bundle = catalog(name, params, grid)
        except (GridError, ValueError, expr.ExprSyntaxError, ArithmeticError) as exc:
            reader.fail("metric", str(exc))
        return g, bundle, name

    if "params" in metric:
        reader.fail("metric.params", "params only apply to catalog metrics")
    if grid is None:
        reader.fail("chart", "a chart is required for component metrics")
    comps = metric["components"]
    if isinstance(comps, list):
        if len(comps) != 6:
            reader.fail("metric.components", "expected six expressions ordered g11 g22 g33 g12 g13 g23")
        comps = dict(zip(COMPONENT_KEYS, comps))
    if not isinstance(comps, dict):
        reader.fail("metric.components", "expected an object keyed g11..g23 or a list of six")
    unknown = set(comps) - set(COMPONENT_KEYS)
    if unknown:
        reader.fail(f"metric.components.{sorted(unknown)[0]}", "unknown component")
    for key in ("g11", "g22", "g33"):
        if key not in comps:
            reader.fail(f"metric.components.{key}", "diagonal components are required")
    values = []
    for key in COMPONENT_KEYS:
        src = reader.expression(comps.get(key, "0"), f"metric.components.{key}")
        try:
            values.append(expr.evaluate(src, grid).values)
        except (expr.ExprSyntaxError, expr.ExprDomainError) as exc:
            reader.fail(f"metric.components.{key}", str(exc))
    try:
        g = MetricField(SymTensorField.from_components(grid, values))
    except GridError as exc:
        reader.fail("metric.components", str(exc))
    return g, None, None


def parse_manifest(text: str) -> Manifest:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError("<json>", exc.msg, exc.lineno) from None
    if not isinstance(data, dict):
        raise ManifestError("<root>", "manifest must be a JSON object", 1)
    reader = _Reader(text)
    unknown = set(data) - TOP_LEVEL
    if unknown:
        reader.fail(sorted(unknown)[0], "unknown top-level field")

    g, bundle, name = _build_metric(reader, data)
    manifest = Manifest(g=g, bundle=bundle, catalog_name=name)

    if "conformal_factor" in data:
        src = reader.expression(data["conformal_factor"], "conformal_factor")
        try:
            expr.evaluate(src, g.grid)
        except (expr.ExprSyntaxError, expr.ExprDomainError) as exc:
            reader.fail("conformal_factor", str(exc))
        manifest.conformal_factor = src

    solver = data.get("solver", {})
    if not isinstance(solver, dict):
        reader.fail("solver", "expected an object")
    allowed = {"delta", "delta_margin", "path_floor", "t0", "steps", "tol_abs", "min_step_fraction", "max_newton"}
    unknown = set(solver) - allowed
    if unknown:
        reader.fail(f"solver.{sorted(unknown)[0]}", "unknown field")
    parsed = {}
    for key, value in solver.items():
        if key in ("steps", "max_newton"):
            parsed[key] = reader.integer(value, f"solver.{key}")
            if parsed[key] < 1:
                reader.fail(f"solver.{key}", "must be positive")
        elif value is not None:
            parsed[key] = reader.number(value, f"solver.{key}")
    if parsed.get("t0", T_MAX) > T_MAX + 1e-15:
        reader.fail("solver.t0", "t0 must not exceed 2/3")
    manifest.solver = parsed

    functional = data.get("functional", {})
    if not isinstance(functional, dict):
        reader.fail("functional", "expected an object")
    unknown = set(functional) - {"t", "grad_cap", "candidates"}
    if unknown:
        reader.fail(f"functional.{sorted(unknown)[0]}", "unknown field")
    fparsed = {
        "t": reader.number(functional.get("t", T_MAX), "functional.t"),
        "grad_cap": reader.number(functional.get("grad_cap", 1.0), "functional.grad_cap"),
        "candidates": [],
    }
    if fparsed["t"] > T_MAX + 1e-15:
        reader.fail("functional.t", "t must not exceed 2/3")
    for k, src in enumerate(functional.get("candidates", [])):
        src = reader.expression(src, f"functional.candidates[{k}]")
        try:
            expr.evaluate(src, g.grid)
        except (expr.ExprSyntaxError, expr.ExprDomainError) as exc:
            reader.fail("functional.candidates", str(exc))
        fparsed["candidates"].append(src)
    manifest.functional = fparsed

    suites = data.get("suites", ["all"])
    if isinstance(suites, str):
        suites = [suites]
    if not isinstance(suites, list) or not all(isinstance(s, str) for s in suites):
        reader.fail("suites", "expected a list of suite names")
    bad = [s for s in suites if s != "all" and s not in SUITES]
    if bad:
        reader.fail("suites", f"unknown suite {bad[0]!r}; choose from {sorted(SUITES)} or 'all'")
    manifest.suites = suites

    if "seed" in data:
        manifest.seed = reader.integer(data["seed"], "seed")
    if "report_t" in data:
        if not isinstance(data["report_t"], list) or not data["report_t"]:
            reader.fail("report_t", "expected a non-empty list")
        manifest.report_t = [reader.number(v, f"report_t[{k}]") for k, v in enumerate(data["report_t"])]
    return manifest


def load_manifest(path: str) -> Manifest:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ManifestError("<file>", str(exc)) from None
    return parse_manifest(text)


# -- commands ---------------------------------------------------------------------------


def _range(arr) -> dict:
    arr = np.asarray(arr)
    return {"min": float(np.min(arr)), "max": float(np.max(arr))}


def _bundle(manifest: Manifest):
    if manifest.bundle is None:
        manifest.bundle = curvature_of(manifest.g)
    return manifest.bundle


def build_report(manifest: Manifest) -> dict:
    g = manifest.g
    b = _bundle(manifest)
    ric_eig = generalized_eigenvalues(b.ricci.values, g.values)
    sigma = {}
    for t in manifest.report_t:
        spec = sigma_spectrum(schouten_t(b, g, t), g)
        sigma[repr(float(t))] = {
            "sigma1": _range(spec.sigma1),
            "sigma2": _range(spec.sigma2),
            "cone_coverage": spec.coverage,
        }
    fn = manifest.functional
    pinch = pinching_margin(g, fn["t"], fn["candidates"], fn["grad_cap"], b)
    return {
        "chart": {"kind": g.grid.kind.value, "dims": list(g.grid.dims), "h": g.grid.h},
        "metric": manifest.catalog_name or "components",
        "volume": integrate(np.ones(g.grid.shape), g),
        "scalar_curvature": _range(b.scalar.values),
        "ricci_eigenvalues": [_range(ric_eig[..., k]) for k in range(3)],
        "sigma": sigma,
        "q_curvature": _range(q_curvature(b, g).values),
        "pinching": pinch.to_dict(),
    }


def _solve_kwargs(manifest: Manifest, t0=None, steps=None):
    opts = dict(manifest.solver)
    setup_kw = {
        "t0": t0 if t0 is not None else opts.get("t0", T_MAX),
        "delta": opts.get("delta"),
        "delta_margin": opts.get("delta_margin", 0.1),
        "path_floor": opts.get("path_floor", 1.0),
    }
    cont_kw = {"steps": steps if steps is not None else opts.get("steps", 64)}
    for key in ("tol_abs", "min_step_fraction", "max_newton"):
        if key in opts:
            cont_kw[key] = opts[key]
    return setup_kw, cont_kw


def run_solve(manifest: Manifest, t0=None, steps=None):
    setup_kw, cont_kw = _solve_kwargs(manifest, t0, steps)
    if setup_kw["t0"] > T_MAX + 1e-15:
        raise ManifestError("--t0", "t0 must not exceed 2/3")
    setup = setup_problem(manifest.g, _bundle(manifest), **setup_kw)
    return continuation(setup, **cont_kw)


def write_csv(path: str, report) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for state in report.path:
            row = state.row()
            writer.writerow([repr(float(row[c])) for c in CSV_COLUMNS])


def run_verify(manifest: Manifest, suites=None, seed=None):
    seed = manifest.seed if seed is None else seed
    u_fields = None
    if manifest.conformal_factor is not None:
        u_fields = [expr.evaluate(manifest.conformal_factor, manifest.g.grid)]
    ctx = SuiteContext.build(manifest.g, _bundle(manifest), seed=seed, u_fields=u_fields)
    return run_suites(suites or manifest.suites, ctx)


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sigma2geom", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    rep = sub.add_parser("report", help="curvature and functional report")
    rep.add_argument("manifest")
    rep.add_argument("-o", "--out", help="JSON output path (default: stdout)")

    sol = sub.add_parser("solve", help="run the continuation path")
    sol.add_argument("manifest")
    sol.add_argument("--t0", type=str, default=None, help="endpoint, a number or expression such as 2/3")
    sol.add_argument("--steps", type=int, default=None)
    sol.add_argument("-o", "--out", help="JSON output path (default: stdout)")
    sol.add_argument("--csv", help="per-step CSV output path")

    ver = sub.add_parser("verify", help="run identity suites")
    ver.add_argument("manifest")
    ver.add_argument("--suite", default=None, help="suite name or 'all' (default: manifest suites)")
    ver.add_argument("--seed", type=int, default=None)
    ver.add_argument("-o", "--out", help="JSON output path (default: stdout)")
    return p


def _threads() -> int | None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ManifestError(THREADS_ENV, f"expected a positive integer, got {raw!r}") from None
    if n < 1:
        raise ManifestError(THREADS_ENV, f"expected a positive integer, got {raw!r}")
    return n


def _dispatch(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.command == "report":
        _emit(build_report(manifest), args.out)
        return EXIT_OK
    if args.command == "solve":
        t0 = None
        if args.t0 is not None:
            try:
                t0 = expr.evaluate_constant(args.t0)
            except (expr.ExprSyntaxError, ArithmeticError) as exc:
                raise ManifestError("--t0", str(exc)) from None
        if args.steps is not None and args.steps < 1:
            raise ManifestError("--steps", "must be positive")
        report = run_solve(manifest, t0, args.steps)
        _emit(report.to_dict(), args.out)
        if args.csv:
            write_csv(args.csv, report)
        if not report.success:
            print(f"continuation failed; last good t = {report.last_good_t!r}", file=sys.stderr)
            return EXIT_NUMERICAL
        return EXIT_OK
    suite = args.suite
    if suite is not None and suite != "all" and suite not in SUITES:
        raise ManifestError("--suite", f"unknown suite {suite!r}; choose from {sorted(SUITES)} or 'all'")
    reports = run_verify(manifest, [suite] if suite else None, args.seed)
    passed = all(r.passed for r in reports)
    _emit({"pass": passed, "reports": [r.to_dict() for r in reports]}, args.out)
    return EXIT_OK if passed else EXIT_NUMERICAL


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _threads()
        with threadpool_limits(limits=threads):
            return _dispatch(args)
    except (ManifestError, HypothesisError, GridError, expr.ExprSyntaxError, expr.ExprDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ContinuationFailure, ConeBreachError, CurvatureError, OverflowError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
