"""Command-line front end: ``lsir fit | predict | curve | test-knots | simulate``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
import warnings
from dataclasses import dataclass

import numpy as np

from . import __version__
from .errors import DataError, NumericalError
from .fit import FitConfig
from .inference import SandwichParts, confidence_intervals, wald_beta_test
from .knot_test import TestConfig, test_knots
from .model import Dataset, Theta, predict, r_squared, regression_function
from .penalties import PenaltyKind
from .simbench import ERRORS, SimCase, run_replications, tau_grid_sim
from .smoothing import KernelKind
from .tuning import select_lambda

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DATA = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- serialisation

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    v = float(x)
    if not math.isfinite(v):
        return "null"
    return format(v, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return _json_str(obj)
    if isinstance(obj, (bool, np.bool_, int, float, np.integer, np.floating)):
        return _fmt(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json_str(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_fmt(v) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _json_str(s: str) -> str:
    import json

    return json.dumps(s)


def _write(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
        return
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------- data ingestion

def _split(cols: str | None) -> list[str]:
    if not cols:
        return []
    return [c.strip() for c in cols.split(",") if c.strip()]


def read_columns(path: str, names: list[str]) -> dict[str, np.ndarray]:
    """Read named numeric columns from a headed CSV; any missing or non-numeric cell is a data error."""
    try:
        with open(path, newline="", encoding="utf-8-sig") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in names if c not in header]
    if missing:
        raise DataError(f"column(s) not found in {path}: {', '.join(missing)}")
    pos = {c: header.index(c) for c in names}
    out = {c: np.empty(len(rows) - 1) for c in names}
    for i, row in enumerate(rows[1:], start=1):
        for c in names:
            j = pos[c]
            cell = row[j].strip() if j < len(row) else ""
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"row {i}: column {c!r} has a missing or non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"row {i}: column {c!r} is not finite")
            out[c][i - 1] = v
    return out


@dataclass
class Columns:
    y: str | None
    x: list
    z: list
    negate: list


def _columns(args, need_y: bool = True) -> Columns:
    x = _split(args.x)
    if not x:
        raise UsageError("--x needs at least one column")
    if need_y and not args.y:
        raise UsageError("--y is required")
    negate = _split(getattr(args, "negate", None))
    unknown = [c for c in negate if c not in x + _split(args.z)]
    if unknown:
        raise UsageError(f"--negate names columns that are not covariates: {', '.join(unknown)}")
    return Columns(args.y, x, _split(args.z), negate)


def load_matrix(path: str, cols: Columns, with_y: bool = True):
    names = ([cols.y] if with_y else []) + cols.x + cols.z
    data = read_columns(path, list(dict.fromkeys(names)))
    for c in cols.negate:
        data[c] = -data[c]
    y = data[cols.y] if with_y else None
    x = np.column_stack([data[c] for c in cols.x])
    z = np.column_stack([data[c] for c in cols.z]) if cols.z else None
    return y, x, z


# ---------------------------------------------------------------- standardisation

@dataclass
class Scaling:
    x_mean: np.ndarray
    x_sd: np.ndarray
    z_mean: np.ndarray
    z_sd: np.ndarray

    @classmethod
    def identity(cls, d1: int, d2: int) -> "Scaling":
        return cls(np.zeros(d1), np.ones(d1), np.zeros(d2), np.ones(d2))

    @classmethod
    def fit(cls, x, z) -> "Scaling":
        z = np.zeros((x.shape[0], 0)) if z is None else z

        def sd(a):
            s = a.std(axis=0)
            if np.any(s == 0):
                raise DataError("a covariate is constant and cannot be standardised")
            return s

        return cls(x.mean(axis=0), sd(x), z.mean(axis=0), sd(z) if z.shape[1] else np.ones(0))

    def apply(self, x, z):
        xs = (x - self.x_mean) / self.x_sd
        zs = None if z is None else (z - self.z_mean) / self.z_sd
        return xs, zs

    def to_raw(self, vec: np.ndarray, m: int) -> np.ndarray:
        """Map a parameter vector fitted on standardised covariates to raw covariate units."""
        th = Theta.from_vector(vec, m, self.x_mean.size, self.z_mean.size)
        s1, m1 = self.x_sd[0], self.x_mean[0]
        beta_raw = th.beta_rest * s1 / self.x_sd[1:]
        shift = m1 + beta_raw @ self.x_mean[1:]
        gamma = th.gamma / self.z_sd if self.z_sd.size else th.gamma
        gamma0 = th.gamma0 - th.alpha0 * shift / s1 - (gamma @ self.z_mean if gamma.size else 0.0)
        raw = Theta(th.alpha0 / s1, th.alpha / s1, s1 * th.tau + shift, beta_raw, gamma0, gamma)
        return raw.to_vector()

    def jacobian(self, vec: np.ndarray, m: int) -> np.ndarray:
        k = vec.size
        jac = np.empty((k, k))
        for j in range(k):
            h = 1e-6 * max(1.0, abs(vec[j]))
            e = np.zeros(k)
            e[j] = h
            jac[:, j] = (self.to_raw(vec + e, m) - self.to_raw(vec - e, m)) / (2 * h)
        return jac


# ---------------------------------------------------------------- configuration

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel", default="uniform", choices=[k.value for k in KernelKind])
    p.add_argument("--penalty", default="scad", choices=["scad", "mcp"])
    p.add_argument("--t", type=float, default=None, help="penalty shape constant (default 3.7 SCAD, 3 MCP)")
    p.add_argument("--nu", type=float, default=0.6, help="bandwidth exponent")
    p.add_argument("--m-cap", type=int, default=5, help="maximum number of knots")
    p.add_argument("--cn", default="loglogn", choices=["1", "loglogn"], help="BIC complexity weight")
    p.add_argument("--out", default=None, help="output file (default stdout)")


def _add_data(p: argparse.ArgumentParser, need_y: bool = True) -> None:
    p.add_argument("--data", required=True, help="CSV file with a header row")
    if need_y:
        p.add_argument("--y", required=True, help="response column")
    p.add_argument("--x", required=True, help="index covariates, comma separated; the first is anchored")
    p.add_argument("--z", default=None, help="linear covariates, comma separated")
    p.add_argument("--negate", default=None, help="covariate columns to multiply by -1 before fitting")
    p.add_argument("--standardize", action="store_true", help="z-score X and Z; estimates are reported in raw units")


def fit_config(args) -> FitConfig:
    grid = None
    if getattr(args, "lambda_grid", None):
        try:
            grid = tuple(float(v) for v in _split(args.lambda_grid))
        except ValueError:
            raise UsageError("--lambda-grid must be a comma-separated list of numbers") from None
    try:
        return FitConfig(
            kernel=args.kernel,
            penalty=PenaltyKind.from_name(args.penalty, args.t),
            nu=args.nu,
            m_cap=args.m_cap,
            cn=args.cn,
            lambda_grid=grid,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def parse_tau_grid(text: str | None):
    if not text:
        return None
    parts = text.split(":")
    try:
        lo, hi, k = float(parts[0]), float(parts[1]), int(parts[2])
    except (IndexError, ValueError):
        raise UsageError("--tau-grid must look like lo:hi:k") from None
    if len(parts) != 3 or k < 1 or not hi >= lo:
        raise UsageError("--tau-grid must look like lo:hi:k with hi >= lo and k >= 1")
    return tuple(np.linspace(lo, hi, k))


# ---------------------------------------------------------------- commands

def _diagnostics(diag: dict) -> dict:
    keep = ("outer_iterations", "converged", "delta", "knot_collision", "merged_knots", "flagged_knots",
            "covariance_error", "lambda_path", "failed_lambdas")
    return {k: diag[k] for k in keep if k in diag}


def cmd_fit(args) -> int:
    cols = _columns(args)
    cfg = fit_config(args)
    y, x, z = load_matrix(args.data, cols)
    scaling = Scaling.fit(x, z) if args.standardize else Scaling.identity(x.shape[1], 0 if z is None else z.shape[1])
    xs, zs = scaling.apply(x, z)
    data = Dataset(y, xs, zs)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = select_lambda(data, cfg)
    m = res.m_hat
    vec = scaling.to_raw(res.theta.to_vector(), m)
    cov = None
    if res.cov is not None:
        jac = scaling.jacobian(res.theta.to_vector(), m)
        cov = jac @ res.cov @ jac.T
    raw = Dataset(y, x, z)
    theta = Theta.from_vector(vec, m, raw.d1, raw.d2)
    names = theta.names()
    if cov is not None:
        parts = SandwichParts(res.sigma2, np.empty((0, 0)), np.empty((0, 0)), cov)
        se = parts.se
        ci = confidence_intervals(parts, theta)
    else:
        parts = None
        se = np.full(len(names), np.nan)
        ci = np.full((len(names), 2), np.nan)
    knots = [{"tau": theta.tau[j], "ci_lo": ci[m + j, 0], "ci_hi": ci[m + j, 1]} for j in range(m)]
    wald = None
    if parts is not None and raw.d1 > 1:
        stat, p = wald_beta_test(parts, theta)
        wald = {"statistic": stat, "p_value": p, "df": raw.d1 - 1}
    w = raw.x[:, 0] + raw.x[:, 1:] @ theta.beta_rest
    doc = {
        "version": __version__,
        "command": "fit",
        "columns": {"y": cols.y, "x": cols.x, "z": cols.z, "negate": cols.negate},
        "standardize": bool(args.standardize),
        "config": cfg.as_dict(),
        "n": raw.n,
        "m_hat": m,
        "lambda": res.lam,
        "estimates": dict(zip(names, vec)),
        "standard_errors": dict(zip(names, se)),
        "conf_intervals": {nm: [ci[j, 0], ci[j, 1]] for j, nm in enumerate(names)},
        "knots": knots,
        "segment_slopes": theta.segment_slopes,
        "wald_beta": wald,
        "r2": r_squared(raw, theta),
        "sigma2": res.sigma2,
        "bic": res.bic,
        "index_range": [float(w.min()), float(w.max())],
        "warnings": [str(c.message) for c in caught],
        "diagnostics": _diagnostics(res.diagnostics),
    }
    _write(dumps(doc) + "\n", args.out)
    return EXIT_OK


def _load_doc(path: str) -> dict:
    import json

    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not a JSON document: {exc}") from exc
    for key in ("estimates", "m_hat", "columns"):
        if key not in doc:
            raise DataError(f"{path} is not a fit document (missing {key!r})")
    return doc


def _doc_theta(doc: dict) -> Theta:
    est = doc["estimates"]
    m = int(doc["m_hat"])
    d1 = len(doc["columns"]["x"])
    d2 = len(doc["columns"]["z"])
    names = Theta.from_vector(np.zeros(1 + d1 + d2 + 2 * m), m, d1, d2).names()
    try:
        vec = np.array([float(est[nm]) for nm in names])
    except KeyError as exc:
        raise DataError(f"fit document lacks estimate {exc}") from exc
    return Theta.from_vector(vec, m, d1, d2)


def cmd_predict(args) -> int:
    doc = _load_doc(args.model)
    c = doc["columns"]
    cols = Columns(None, c["x"], c["z"], c.get("negate", []))
    _, x, z = load_matrix(args.data, cols, with_y=False)
    theta = _doc_theta(doc)
    data = Dataset(np.zeros(x.shape[0]), x, z)
    yhat = predict(data, theta)
    buf = io.StringIO()
    buf.write("yhat\n")
    for v in yhat:
        buf.write(format(float(v), ".17g") + "\n")
    _write(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_curve(args) -> int:
    doc = _load_doc(args.model)
    theta = _doc_theta(doc)
    lo, hi = doc.get("index_range", [None, None])
    if args.range:
        try:
            lo, hi = (float(v) for v in args.range.split(":"))
        except ValueError:
            raise UsageError("--range must look like lo:hi") from None
    if lo is None or hi is None or not hi > lo:
        raise DataError("the document has no usable index range; pass --range lo:hi")
    grid = np.linspace(lo, hi, args.points)
    if theta.n_knots:
        grid = np.unique(np.concatenate([grid, theta.tau[(theta.tau > lo) & (theta.tau < hi)]]))
    phi = regression_function(grid, theta)
    buf = io.StringIO()
    buf.write("kind\tw\tphi\tci_lo\tci_hi\n")
    for w, p in zip(grid, phi):
        buf.write(f"curve\t{w:.17g}\t{p:.17g}\t\t\n")
    for k in doc.get("knots", []):
        t = float(k["tau"])
        p = float(regression_function(t, theta))
        lo_ci = "" if k.get("ci_lo") is None else format(float(k["ci_lo"]), ".17g")
        hi_ci = "" if k.get("ci_hi") is None else format(float(k["ci_hi"]), ".17g")
        buf.write(f"knot\t{t:.17g}\t{p:.17g}\t{lo_ci}\t{hi_ci}\n")
    _write(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_test(args) -> int:
    cols = _columns(args)
    y, x, z = load_matrix(args.data, cols)
    if args.standardize:
        x, z = Scaling.fit(x, z).apply(x, z)
    data = Dataset(y, x, z)
    try:
        tc = TestConfig(tau_grid=parse_tau_grid(args.tau_grid), n_boot=args.boot, level=args.level,
                        kernel=args.kernel, nu=args.nu, m_cap=args.m_cap, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = test_knots(data, tc)
    doc = {
        "version": __version__,
        "command": "test-knots",
        "columns": {"y": cols.y, "x": cols.x, "z": cols.z, "negate": cols.negate},
        "standardize": bool(args.standardize),
        "config": {"n_boot": tc.n_boot, "level": tc.level, "kernel": tc.kernel.value, "nu": tc.nu,
                   "m_cap": tc.m_cap, "seed": tc.seed, "delta": tc.smooth_spec(data.n).delta,
                   "tau_grid": args.tau_grid or "5%-95% index quantiles, 100 points"},
        "t_stat": res.t_stat,
        "crit": res.crit,
        "p_value": res.p_value,
        "reject": res.reject,
        "argmax_tau": res.argmax_tau,
        "curve": {"tau": res.tau_grid, "stat": res.curve},
        "dropped_tau": res.dropped,
        "warnings": [str(c.message) for c in caught],
    }
    _write(dumps(doc) + "\n", args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = fit_config(args)
    try:
        sim = SimCase(args.case, args.n, args.error, args.alpha_tilde)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    test_cfg = None
    if sim.case_id in (4, 5):
        grid = parse_tau_grid(args.tau_grid) or tuple(tau_grid_sim())
        test_cfg = TestConfig(tau_grid=grid, n_boot=args.boot, level=args.level,
                              kernel=cfg.kernel, nu=cfg.nu, m_cap=cfg.m_cap)
    metrics = run_replications(sim, cfg, n_reps=args.reps, seed=args.seed, test_cfg=test_cfg,
                               oracle=not args.no_oracle)
    doc = {"version": __version__, "command": "simulate", "config": cfg.as_dict(),
           "table": metrics.as_dict(scale=100.0)}
    if test_cfg is not None:
        doc["test_config"] = {"n_boot": test_cfg.n_boot, "level": test_cfg.level,
                              "tau_grid": [test_cfg.tau_grid[0], test_cfg.tau_grid[-1], len(test_cfg.tau_grid)]}
    _write(dumps(doc) + "\n", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lsir", description="Linear spline index regression with unknown knots.")
    parser.add_argument("--version", action="version", version=f"lsir {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit the model, tune lambda by BIC, report estimates and inference")
    _add_data(p)
    _add_common(p)
    p.add_argument("--lambda-grid", default=None, help="comma-separated lambda values (default: automatic)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict from a fit document")
    p.add_argument("--model", required=True, help="JSON document written by 'lsir fit'")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("curve", help="tabulate the fitted index curve and knots")
    p.add_argument("--model", required=True)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--range", default=None, help="lo:hi index range (default: the fitted data range)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("test-knots", help="supremum score test for the existence of knots")
    _add_data(p)
    _add_common(p)
    p.add_argument("--boot", type=int, default=1000)
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--tau-grid", default=None, help="lo:hi:k evaluation grid")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("simulate", help="Monte Carlo table for one simulation design")
    _add_common(p)
    p.add_argument("--case", type=int, required=True, choices=[1, 2, 3, 4, 5])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--error", default="normal", choices=[e for e in ERRORS if e != "none"])
    p.add_argument("--alpha-tilde", type=float, default=0.0)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--boot", type=int, default=1000)
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--tau-grid", default=None)
    p.add_argument("--no-oracle", action="store_true")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"lsir: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"lsir: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"lsir: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
