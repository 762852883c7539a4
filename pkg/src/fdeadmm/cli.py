"""Command-line front end: solve, sweep, validate, diagnose, bench."""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import report
from .admm import AdmmConfig, SolverFailure, solve
from .problem import ParameterError, ProblemSpec, scaling

log = logging.getLogger("fdeadmm")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MAX_OUTER = 2
EXIT_VALIDATION = 3

OUT_ENV = "FDEADMM_OUT"
DEFAULT_OUT = "fdeadmm-out"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    alpha: float = 0.7
    beta1: float = 1.3
    beta2: float = 1.3
    gamma: float = 1e-4
    n: int = 8
    y_lo: float = -math.inf
    y_hi: float = math.inf
    u_lo: float = -math.inf
    u_hi: float = math.inf
    delta: float = 0.4
    rho: float = 1.618
    tol: float = 1e-4
    max_outer: int = 3000
    max_inner: int = 300
    out: str = ""
    format: str = "csv"
    delta_sweep: list = field(default_factory=list)
    n_sweep: list = field(default_factory=list)
    alpha_sweep: list = field(default_factory=list)
    beta_sweep: list = field(default_factory=list)
    seed: int = 0
    dump: bool = False
    workers: int = 1
    cap: int = 4
    symbol_terms: int = 1000
    symbol_points: int = 17

    def problem(self, **over) -> ProblemSpec:
        keys = ("alpha", "beta1", "beta2", "gamma", "n", "y_lo", "y_hi", "u_lo", "u_hi")
        kw = {k: getattr(self, k) for k in keys}
        kw.update(over)
        return ProblemSpec(**kw)

    def admm(self, **over) -> AdmmConfig:
        kw = dict(delta=self.delta, rho=self.rho, tol_primal=self.tol,
                  max_outer=self.max_outer, max_inner=self.max_inner)
        kw.update(over)
        return AdmmConfig(**kw)

    def out_dir(self) -> Path:
        d = Path(self.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
        d.mkdir(parents=True, exist_ok=True)
        return d


_LIST_KEYS = {"delta_sweep": float, "n_sweep": int, "alpha_sweep": float, "beta_sweep": float}
VALID_KEYS = tuple(f.name for f in dataclasses.fields(RunConfig))


def _to_bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def _to_int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ValueError(s)
    return int(v)


def _convert(key: str, raw):
    if key not in VALID_KEYS:
        raise ConfigError(f"unknown key {key!r}; valid keys: {', '.join(VALID_KEYS)}")
    if not isinstance(raw, str):
        return raw
    try:
        if key in _LIST_KEYS:
            conv = _to_int if _LIST_KEYS[key] is int else float
            return [conv(x) for x in raw.split(",") if x.strip()]
        default = getattr(RunConfig, key, None)
        if key in ("out", "format"):
            return raw.strip()
        if isinstance(default, bool):
            return _to_bool(raw)
        if isinstance(default, int):
            return _to_int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = _convert(key, raw)
    return values


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then command-line overrides."""
    values = read_config_file(path) if path else {}
    for key, raw in (overrides or {}).items():
        values[key] = _convert(key, raw)
    cfg = RunConfig(**values)
    if cfg.format not in ("csv", "plain"):
        raise ConfigError(f"format must be 'csv' or 'plain', got {cfg.format!r}")
    return cfg


# --- commands ----------------------------------------------------------------


def _table_name(cfg, stem):
    return f"{stem}.csv" if cfg.format == "csv" else f"{stem}.txt"


def _emit(cfg: RunConfig, stem: str, rows, columns) -> Path:
    path = cfg.out_dir() / _table_name(cfg, stem)
    text = report.write_table(path, rows, columns, cfg.format)
    sys.stdout.write(text)
    return path


ITER_COLUMNS = ("outer", "r_eq", "r_y", "r_u", "dual_inf", "inner_iters", "inner_tol", "z_feasible")


def cmd_solve(cfg: RunConfig) -> int:
    spec, acfg = cfg.problem(), cfg.admm()
    res = solve(spec, acfg)
    out = cfg.out_dir()
    _emit(cfg, "solve", [report.solve_row(spec, acfg, res)], report.SOLVE_COLUMNS)
    report.write_table(out / _table_name(cfg, "iterations"), res.history, ITER_COLUMNS, cfg.format)
    if cfg.dump:
        (out / "manifest.txt").unlink(missing_ok=True)
        for name in ("y", "u", "z_y", "z_u", "p", "w_y", "w_u"):
            report.write_dump(out, name, spec.n, getattr(res, name))
    if not res.converged:
        log.warning("iteration cap %d reached", acfg.max_outer)
        return EXIT_MAX_OUTER
    return EXIT_OK


def _sweep_point(args):
    spec, acfg = args
    try:
        res = solve(spec, acfg)
        return report.solve_row(spec, acfg, res)
    except (SolverFailure, ParameterError) as exc:
        row = {c: "" for c in report.SOLVE_COLUMNS}
        row.update(n=spec.n, N=spec.n ** 3, alpha=spec.alpha, beta1=spec.beta1, beta2=spec.beta2,
                   gamma=spec.gamma, delta=acfg.delta, rho=acfg.rho,
                   status="failed: " + str(exc).replace(",", ";"))
        return row


def sweep_points(cfg: RunConfig) -> list:
    if not any((cfg.n_sweep, cfg.alpha_sweep, cfg.beta_sweep, cfg.delta_sweep)):
        raise ConfigError("sweep needs at least one of " + ", ".join(_LIST_KEYS))
    points = []
    for n, a, b, d in itertools.product(cfg.n_sweep or [cfg.n], cfg.alpha_sweep or [cfg.alpha],
                                        cfg.beta_sweep or [cfg.beta1], cfg.delta_sweep or [cfg.delta]):
        beta = {} if not cfg.beta_sweep else {"beta1": b, "beta2": b}
        points.append((cfg.problem(n=n, alpha=a, **beta), cfg.admm(delta=d)))
    return points


def cmd_sweep(cfg: RunConfig) -> int:
    points = sweep_points(cfg)
    if cfg.workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            rows = list(ex.map(_sweep_point, points))  # map keeps sweep order
    else:
        rows = [_sweep_point(p) for p in points]
    _emit(cfg, "sweep", rows, report.SOLVE_COLUMNS)
    status = [r["status"] for r in rows]
    if all(s.startswith("failed") for s in status):
        return EXIT_USAGE
    return EXIT_OK if all(s == "converged" for s in status) else EXIT_MAX_OUTER


def cmd_validate(cfg: RunConfig, perturb: float = 0.0) -> int:
    from .validate import run_checks

    results = run_checks(cfg.cap, cfg.seed, perturb)
    rows = [{"check": r.name, "max_error": r.max_error, "threshold": r.threshold,
             "passed": "PASS" if r.passed else "FAIL"} for r in results]
    _emit(cfg, "validate", rows, ("check", "max_error", "threshold", "passed"))
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


def cmd_diagnose(cfg: RunConfig) -> int:
    from .admm import setup
    from .circulant import clustering_report, coefficient_abs_sum, symbol_eval, wiener_bound

    spec, acfg = cfg.problem(), cfg.admm()
    out = cfg.out_dir()
    sc = scaling(spec)
    m = cfg.symbol_points
    s = np.linspace(-np.pi, np.pi, m)
    theta = np.stack(np.meshgrid(s, s, s, indexing="ij"), axis=-1).reshape(-1, 3)
    val = symbol_eval(theta, sc, spec.alpha, spec.beta1, spec.beta2, cfg.symbol_terms)
    rows = [{"theta1": t[0], "theta2": t[1], "theta3": t[2], "value_re": v.real, "value_im": v.imag}
            for t, v in zip(theta, val)]
    report.write_table(out / "symbol.csv", rows, ("theta1", "theta2", "theta3", "value_re", "value_im"))

    prob = setup(spec, acfg)
    lam = prob.pc.lam_B.ravel()
    rows = [{"eig_index": i, "value_re": v.real, "value_im": v.imag} for i, v in enumerate(lam)]
    report.write_table(out / "lam_B.csv", rows, ("eig_index", "value_re", "value_im"))

    K = 10_000
    total = coefficient_abs_sum(sc, spec.alpha, spec.beta1, spec.beta2, K)
    bound = wiener_bound(sc, spec.alpha, spec.beta1, spec.beta2)
    lines = [f"wiener K={K} truncated_sum={total!r} bound={bound!r} holds={total <= bound}"]
    try:
        rep = clustering_report(prob.op, prob.pc)
    except ParameterError as exc:
        lines.append(f"clustering skipped: {exc}")
    else:
        rows = [{"eig_index": i, "value_re": v, "value_im": 0.0} for i, v in enumerate(rep["eigs"])]
        report.write_table(out / "clustering.csv", rows, ("eig_index", "value_re", "value_im"))
        lines.append(f"clustering eig range [{rep['min']!r}, {rep['max']!r}] "
                     f"within_0.1={rep['frac_within_0.1']!r} within_0.3={rep['frac_within_0.3']!r}")
    text = "\n".join(lines) + "\n"
    (out / "diagnose.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    from .bench import peak_memory, time_kernels

    rows = []
    for n in cfg.n_sweep or [16, 32, 64]:
        row = time_kernels(n, seed=cfg.seed)
        row["peak_bytes"] = peak_memory(n, seed=cfg.seed)
        rows.append(row)
    _emit(cfg, "bench", rows, report.BENCH_COLUMNS)
    return EXIT_OK


# --- argument parsing --------------------------------------------------------

_FLAGS = {
    "n": int, "alpha": str, "beta1": str, "beta2": str, "gamma": str, "delta": str, "rho": str,
    "ylo": str, "yhi": str, "ulo": str, "uhi": str, "tol": str, "max_outer": str,
    "workers": str, "seed": str, "cap": str, "format": str,
}
_FLAG_KEYS = {"ylo": "y_lo", "yhi": "y_hi", "ulo": "u_lo", "uhi": "u_hi"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="file of 'key = value' lines")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    for name in _FLAGS:
        common.add_argument("--" + name.replace("_", "-"), dest=name, default=None, type=str,
                            metavar="VALUE")
    common.add_argument("--dump", action="store_true", default=None, help="write binary solution dumps")
    common.add_argument("-v", "--verbose", action="store_true", help="log every ADMM iteration")
    common.add_argument("overrides", nargs="*", metavar="key=value", help="extra config overrides")

    parser = argparse.ArgumentParser(prog="fdeadmm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="run one ADMM solve")
    sub.add_parser("sweep", parents=[common], help="run a parameter sweep")
    p = sub.add_parser("validate", parents=[common], help="structured vs dense checks")
    p.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    sub.add_parser("diagnose", parents=[common], help="symbol, eigenvalue and clustering diagnostics")
    sub.add_parser("bench", parents=[common], help="kernel timing and memory")
    return parser


def _collect_overrides(args) -> dict:
    over = {}
    for name in _FLAGS:
        val = getattr(args, name)
        if val is not None:
            over[_FLAG_KEYS.get(name, name)] = val
    if args.out is not None:
        over["out"] = args.out
    if args.dump:
        over["dump"] = True
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        over[key.strip()] = raw.strip()
    return over


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config, _collect_overrides(args))
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "validate":
            return cmd_validate(cfg, args.perturb)
        if args.command == "diagnose":
            return cmd_diagnose(cfg)
        return cmd_bench(cfg)
    except (ConfigError, ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
