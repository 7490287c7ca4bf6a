"""Command-line experiment runner.

Every pipeline is a subcommand. Settings come from an INI-style config
file (``--config``) and/or flags; flags win. Each run writes
``summary.json`` (inputs, derived quantities and verdicts) plus CSV tables
to ``--out``. Repeated runs with the same settings produce identical files:
no timestamps are written and ``wall_ms`` is 0 unless ``--timing`` is set.

Exit codes: 0 all verdicts pass, 1 some verdict fails, 2 bad configuration,
3 incommensurate grids, 4 solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import io
from .cell import (
    CellSolverError,
    CoefficientField,
    ProbabilityModel,
    homogenize,
    load_field,
    monte_carlo_ahom,
    save_field,
)
from .elliptic import REPORT_COLUMNS as ELLIPTIC_COLUMNS
from .elliptic import EllipticProblem, convergence_report
from .evol import SolverFailure, WeightedTimeGrid
from .maxwell import REPORT_COLUMNS as MAXWELL_COLUMNS
from .maxwell import (
    MaxwellProblem,
    limit_checks,
    maxwell_corrector_report,
    memory_formula_residual,
    solve_maxwell_homogenized,
)
from .mesh import GridSpec, TorusGrid, edge_layout, flux_layout, node_layout
from .unfold import IncommensurateError, UnfoldConfig, check_unfolding_axioms, commutation_sweep
from .wave import REPORT_COLUMNS as WAVE_COLUMNS
from .wave import WaveProblem, wave_corrector_report

SCHEMA_VERSION = 1
SUBCOMMANDS = ("cell", "mc", "elliptic", "wave", "maxwell", "axioms")
EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_INCOMMENSURATE, EXIT_SOLVER = 0, 1, 2, 3, 4

PRESETS = {
    "cell": "layered-1d",
    "mc": "checkerboard",
    "elliptic": "oscillating-1d",
    "wave": "layered-1d",
    "maxwell": "layered-tm",
    "axioms": "default",
}
PRESET_CHOICES = ("layered-1d", "layered-2d", "checkerboard", "identity", "oscillating-1d",
                  "oscillating-x", "layered-tm", "default")

# subcommand-specific defaults; anything not listed falls back to ExperimentConfig
DEFAULTS = {
    "cell": {"n_y": 256},
    "mc": {"L": 32, "samples": 64, "n_y": 0},
    "elliptic": {"eps": "1/8,1/16,1/32", "n_x": 1024, "n_y": 32},
    "wave": {"eps": "1/8,1/16,1/32", "n_x": 512, "n_y": 16, "T": 2.0, "n_t": 100},
    "maxwell": {"eps": "1/4,1/8,1/16", "n_x": 128, "n_y": 8, "T": 2.0, "n_t": 40},
    "axioms": {"n_y": 8},
}


class ConfigError(ValueError):
    """Unparseable or invalid settings (exit code 2)."""


@dataclass
class ExperimentConfig:
    """Settings of one run. ``eps`` holds the reciprocal scales ``m = 1/eps``."""

    subcommand: str
    preset: str = ""
    field_path: str = ""
    alpha: float = 1.0
    beta: float = 4.0
    L: int = 32
    samples: int = 64
    seed: int | None = None
    eps: tuple = ()
    n_x: int = 0
    n_y: int = 0
    nu: float = 1.0
    nu0: float = 0.0
    T: float = 2.0
    n_t: int = 100
    threads: int = 1
    out: str = "out"
    timing: bool = False

    def echo(self) -> dict:
        d = asdict(self)
        d["eps"] = [f"1/{m}" for m in self.eps]
        d.pop("threads")  # thread count never changes results
        d.pop("out")
        return d


def parse_eps(text) -> tuple[int, ...]:
    """``"1/8, 1/16"`` or ``"0.125,0.0625"`` -> ``(8, 16)``."""
    if isinstance(text, (tuple, list)):
        return tuple(int(m) for m in text)
    out = []
    for tok in str(text).replace(";", ",").split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            e = Fraction(tok).limit_denominator(1 << 20)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"cannot parse eps value {tok!r}") from exc
        if e <= 0 or e.numerator != 1:
            raise ConfigError(f"eps must be of the form 1/m with integer m, got {tok}")
        out.append(e.denominator)
    return tuple(out)


def _read_ini(path) -> dict:
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    flat = dict(cp.defaults())
    for sec in cp.sections():
        flat.update({k: v for k, v in cp.items(sec)})
    return flat


def _coerce(name: str, value):
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    kind = str(types[name])
    try:
        if name == "eps":
            return parse_eps(value)
        if name == "seed":
            return None if value in (None, "", "none") else int(value)
        if "bool" in kind:
            return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes", "on")
        if "int" in kind:
            return int(value)
        if "float" in kind:
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc


def build_config(subcommand: str, file_values: dict | None = None, flag_values: dict | None = None,
                 env=None) -> ExperimentConfig:
    """Merge defaults, config-file values and flags (in increasing priority)."""
    env = os.environ if env is None else env
    known = {f.name for f in fields(ExperimentConfig)} - {"subcommand"}
    merged: dict = {"preset": PRESETS[subcommand]}
    merged.update(DEFAULTS[subcommand])
    for src in (file_values or {}, flag_values or {}):
        for k, v in src.items():
            k = k.replace("-", "_")
            if k not in known:
                raise ConfigError(f"unknown setting {k!r}")
            if v is not None:
                merged[k] = v
    if "threads" not in merged:
        merged["threads"] = env.get("HOMOG_THREADS") or os.cpu_count() or 1
    cfg = ExperimentConfig(subcommand, **{k: _coerce(k, v) for k, v in merged.items()})
    if cfg.preset not in PRESET_CHOICES:
        raise ConfigError(f"unknown preset {cfg.preset!r}")
    return cfg


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """Every violated precondition, without running a solver. Empty when valid."""
    diag = []
    sub = cfg.subcommand
    if cfg.threads < 1:
        diag.append("threads must be at least 1")
    if not (cfg.alpha > 0 and cfg.beta > 0):
        diag.append(f"coefficients must be coercive: alpha = {cfg.alpha}, beta = {cfg.beta}")
    if sub == "mc":
        if cfg.seed is None:
            diag.append("mc draws random samples and needs a seed")
        if cfg.samples < 2:
            diag.append("mc needs at least two samples")
        if cfg.L < 1:
            diag.append("L must be positive")
    if sub in ("elliptic", "wave", "maxwell"):
        if not cfg.eps:
            diag.append("eps list is empty")
        for m in cfg.eps:
            msg = UnfoldConfig(cfg.n_x, m).check(cfg.n_y)
            if msg:
                diag.append(msg)
    if sub in ("wave", "maxwell"):
        if not cfg.nu > cfg.nu0:
            diag.append(f"ν must exceed ν₀ (got ν = {cfg.nu}, ν₀ = {cfg.nu0})")
        if cfg.n_t < 2 or cfg.T <= 0:
            diag.append("time grid needs T > 0 and n_t >= 2")
        elif cfg.nu * cfg.T / cfg.n_t >= 0.5:
            diag.append(f"dt*nu = {cfg.nu * cfg.T / cfg.n_t:.3g} must stay below 1/2")
    if sub in ("cell", "elliptic", "wave", "maxwell", "axioms") and cfg.n_y < 2 and not cfg.field_path:
        diag.append("n_y must be at least 2")
    if cfg.field_path and not Path(cfg.field_path).is_file():
        diag.append(f"coefficient file {cfg.field_path} does not exist")
    return diag


def _is_incommensurate(msg: str) -> bool:
    return "not divisible" in msg


# -- runners: each returns (results, verdicts, tables) with tables = {name: (columns, rows)}


def _cell_field(cfg: ExperimentConfig) -> tuple[CoefficientField, float | None]:
    """Coefficient for the preset and its closed-form tensor diagonal when one exists."""
    a, b = cfg.alpha, cfg.beta
    if cfg.field_path:
        return load_field(cfg.field_path), None
    if cfg.preset == "layered-1d":
        return CoefficientField.layered(TorusGrid(1, cfg.n_y), a, b), 2 * a * b / (a + b)
    if cfg.preset == "layered-2d":
        return CoefficientField.layered(TorusGrid(2, cfg.n_y), a, b), None
    if cfg.preset == "checkerboard":
        return CoefficientField.checkerboard(TorusGrid(2, cfg.n_y), a, b), float(np.sqrt(a * b))
    if cfg.preset == "identity":
        return CoefficientField.constant(TorusGrid(2, cfg.n_y), np.eye(2)), 1.0
    if cfg.preset == "oscillating-1d":
        return CoefficientField.from_function(TorusGrid(1, cfg.n_y), lambda y: 2 + np.sin(2 * np.pi * y[:, 0])), None
    raise ConfigError(f"preset {cfg.preset!r} is not a cell coefficient")


def run_cell(cfg: ExperimentConfig):
    a, oracle = _cell_field(cfg)
    tensor, corr = homogenize(a)
    M = np.real_if_close(tensor.matrix)
    vals = np.real(a.values[:, range(a.n), range(a.n)])
    harm = 1 / np.mean(1 / vals, axis=0)
    arith = np.mean(vals, axis=0)
    diag = np.real(np.diag(M))
    out = Path(cfg.out)
    save_field(out / "coefficient.field", a)
    results = {
        "a_hom": M,
        "lambda": a.lam,
        "Lambda": a.Lam,
        "iterations": [c.iterations for c in corr],
        "corrector_residuals": [c.residual for c in corr],
        "max_corrector": float(max(np.abs(c.gradient).max() for c in corr)),
    }
    verdicts = {"bounds": bool(np.all(diag >= harm - 1e-8) and np.all(diag <= arith + 1e-8))}
    if oracle is not None:
        results["oracle"] = oracle
        tol = 1e-8 if cfg.preset in ("layered-1d", "identity") else 0.02 * oracle
        verdicts["oracle"] = bool(np.all(np.abs(diag - oracle) <= tol))
    rows = [{"i": i, "j": j, "value": float(np.real(M[i, j]))} for i in range(a.n) for j in range(a.n)]
    return results, verdicts, {"cell": (["i", "j", "value"], rows)}


def run_mc(cfg: ExperimentConfig):
    if cfg.preset != "checkerboard":
        raise ConfigError("mc supports the checkerboard preset")
    model = ProbabilityModel("checkerboard", cfg.L, cfg.alpha, cfg.beta, seed=cfg.seed)
    t = monte_carlo_ahom(model, cfg.samples, workers=cfg.threads)
    oracle = float(np.sqrt(cfg.alpha * cfg.beta))
    mean = np.real(np.diag(t.matrix))
    half = np.diag(t.ci_halfwidth)
    results = {"a_hom": np.real(t.matrix), "ci_halfwidth": t.ci_halfwidth, "oracle": oracle}
    verdicts = {"ci_contains_oracle": bool(np.all(np.abs(mean - oracle) <= half))}
    rows = [{"sample": s, "a11": float(np.real(m[0, 0])), "a12": float(np.real(m[0, 1])),
             "a22": float(np.real(m[1, 1]))} for s, m in enumerate(t.samples)]
    return results, verdicts, {"mc": (["sample", "a11", "a12", "a22"], rows)}


def _monotone_halving(values) -> bool:
    v = list(values)
    return all(b < a for a, b in zip(v, v[1:])) and v[-1] <= 0.5 * v[0]


def run_elliptic(cfg: ExperimentConfig):
    if cfg.preset == "oscillating-x":
        t = TorusGrid(1, cfg.n_y)
        a = CoefficientField.from_product(t, GridSpec(1, cfg.n_x),
                                          lambda x, y: (2 + np.sin(2 * np.pi * y[..., 0])) * (1 + x[..., 0] ** 2 / 2))
    else:
        a, _ = _cell_field(cfg)
    p = EllipticProblem(a, lambda x: np.ones(len(x)), UnfoldConfig(cfg.n_x, cfg.eps[0]))
    rows, extra = convergence_report(p, cfg.eps, threads=cfg.threads, timing=cfg.timing)
    e0 = [r["e0"] for r in rows]
    verdicts = {
        "e0_monotone_halving": _monotone_halving(e0),
        "limit_residual": bool(extra["limit_residual"] <= 1e-8),
        "energy_bound": all(d["grad_norm"] <= d["energy_bound"] for d in extra["details"]),
    }
    return {"rows": rows, **extra}, verdicts, {"elliptic": (ELLIPTIC_COLUMNS, rows)}


def _profile(t):
    return np.where(t < 1, np.sin(np.pi * t) ** 2, 0.0)


def run_wave(cfg: ExperimentConfig):
    if cfg.preset != "layered-1d":
        raise ConfigError("wave supports the layered-1d preset")
    t = TorusGrid(1, cfg.n_y)
    A = CoefficientField.layered(t, cfg.alpha, cfg.beta)

    def f(tt, x):
        return 10 * _profile(tt) * np.sin(np.pi * x[..., 0])

    p = WaveProblem(A, 1.0, 0.0, f, UnfoldConfig(cfg.n_x, cfg.eps[0]), WeightedTimeGrid(cfg.T, cfg.n_t, cfg.nu))
    rows, extra = wave_corrector_report(p, cfg.eps, timing=cfg.timing)
    verdicts = {k: _monotone_halving(r[k] for r in rows) for k in ("err_w", "err_dtw", "err_grad_corr")}
    verdicts["bound"] = all(d["bound_ok"] for d in extra["details"])
    verdicts["causal"] = all(d["causal"] for d in extra["details"])
    verdicts["limit_relation"] = bool(max(extra["limit_checks"].values()) <= 1e-8)
    return {"rows": rows, **extra}, verdicts, {"wave": (WAVE_COLUMNS, rows)}


def run_maxwell(cfg: ExperimentConfig):
    if cfg.preset != "layered-tm":
        raise ConfigError("maxwell supports the layered-tm preset")
    t = TorusGrid(1, cfg.n_y, ((1, 0),))
    eta = CoefficientField.layered(t, cfg.alpha, cfg.beta, n=3)
    mu = CoefficientField.constant(t, np.eye(3))

    def f(tt, x, c):
        return 10 * _profile(tt) * np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]) * np.where(c == 0, 1.0, 0.5)

    p = MaxwellProblem(eta, None, mu, f, None, UnfoldConfig(cfg.n_x, cfg.eps[0]),
                       WeightedTimeGrid(cfg.T, cfg.n_t, cfg.nu))
    lim = solve_maxwell_homogenized(p)
    rows, extra = maxwell_corrector_report(p, cfg.eps, lim, timing=cfg.timing)
    checks = limit_checks(p, lim)
    memory = memory_formula_residual(p, lim)
    verdicts = {
        "combined_monotone_halving": _monotone_halving(d["combined"] for d in extra["details"]),
        "bound": all(d["bound_ok"] for d in extra["details"]),
        "causal": all(d["causal"] for d in extra["details"]),
        "limit_residuals": bool(max(lim.residuals.values()) <= 1e-8),
        "chi2_conservation": bool(checks["chi2_conservation"] <= 1e-8),
        "ker_curl": bool(checks["ker_curl"] <= 1e-8),
    }
    return {"rows": rows, **extra, "limit_checks": checks, "memory_formula": memory}, verdicts, \
        {"maxwell": (MAXWELL_COLUMNS, rows)}


def run_axioms(cfg: ExperimentConfig):
    rng = np.random.default_rng(0 if cfg.seed is None else cfg.seed)
    rows = []
    n_y = cfg.n_y
    for dim, sizes in ((1, (32, 64, 128, 256)), (2, (16, 32, 64))):
        t = TorusGrid(dim, n_y)
        for n_x in sizes:
            for m in (1, 2):
                if n_x % (m * n_y):
                    continue
                op = UnfoldConfig(n_x, m).operator(t)
                lays = [node_layout(op.grid), flux_layout(op.grid)] + ([edge_layout(op.grid)] if dim > 1 else [])
                for lay in lays:
                    u = rng.standard_normal((lay.size, t.size))
                    r = check_unfolding_axioms(op, u, lay)
                    rows.append({"dim": dim, "layout": lay.name, "n_x": n_x, "n_y": n_y, "m": m,
                                 **{k: float(r[k]) for k in ("unitarity", "inverse", "projection_commutation",
                                                             "fixed_point")}})
    sweep = commutation_sweep(1, [8, 16, 32, 64])
    ratios = [sweep[i]["grad"] / sweep[i + 1]["grad"] for i in range(len(sweep) - 1)]
    worst = max(max(r[k] for k in ("unitarity", "inverse", "projection_commutation", "fixed_point")) for r in rows)
    verdicts = {
        "axioms_exact": bool(worst <= 1e-13),
        "commutation_first_order": all(1.7 <= q <= 2.3 for q in ratios),
        "commutation_shifted_exact": all(s["grad_shifted"] <= 1e-13 for s in sweep),
    }
    cols = ["dim", "layout", "n_x", "n_y", "m", "unitarity", "inverse", "projection_commutation", "fixed_point"]
    srows = [{"h": s["h"], "grad": s["grad"], "grad_shifted": s["grad_shifted"],
              "ratio": (ratios[i - 1] if i else 0.0)} for i, s in enumerate(sweep)]
    return {"worst_axiom_residual": worst, "commutation_ratios": ratios}, verdicts, {
        "axioms": (cols, rows), "commutation": (["h", "grad", "grad_shifted", "ratio"], srows)}


RUNNERS = {"cell": run_cell, "mc": run_mc, "elliptic": run_elliptic, "wave": run_wave,
           "maxwell": run_maxwell, "axioms": run_axioms}


def run(cfg: ExperimentConfig) -> int:
    """Validate, run and write artifacts; returns the exit code."""
    diag = validate_config(cfg)
    if diag:
        for d in diag:
            print(f"config: {d}", file=sys.stderr)
        return EXIT_INCOMMENSURATE if any(_is_incommensurate(d) for d in diag) else EXIT_CONFIG
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        results, verdicts, tables = RUNNERS[cfg.subcommand](cfg)
    except IncommensurateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMMENSURATE
    except (CellSolverError, SolverFailure, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, NotImplementedError, ValueError) as exc:
        print(f"config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for name, (cols, rows) in tables.items():
        io.write_csv(out / f"{name}.csv", cols, rows)
    passed = all(verdicts.values())
    io.write_json(out / "summary.json", {
        "schema_version": SCHEMA_VERSION,
        "subcommand": cfg.subcommand,
        "config": cfg.echo(),
        "results": results,
        "verdicts": verdicts,
        "passed": passed,
    })
    for k, v in verdicts.items():
        print(f"{cfg.subcommand}: {k}: {'pass' if v else 'FAIL'}")
    return EXIT_OK if passed else EXIT_VERDICT


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with key = value settings")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--preset", choices=PRESET_CHOICES)
    common.add_argument("--field", dest="field_path", help="coefficient field file")
    common.add_argument("--alpha", type=float)
    common.add_argument("--beta", type=float)
    common.add_argument("--L", type=int)
    common.add_argument("--samples", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--eps", help="comma list of scales, e.g. 1/8,1/16")
    common.add_argument("--n-x", dest="n_x", type=int)
    common.add_argument("--n-y", dest="n_y", type=int)
    common.add_argument("--nu", type=float)
    common.add_argument("--nu0", type=float)
    common.add_argument("--T", type=float)
    common.add_argument("--n-t", dest="n_t", type=int)
    common.add_argument("--threads", type=int, help="worker threads (default: $HOMOG_THREADS or all cores)")
    common.add_argument("--timing", action="store_true", default=None, help="record wall times")
    p = argparse.ArgumentParser(prog="twoscale", description="Two-scale homogenization experiments")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def main(argv=None) -> int:
    args = vars(_parser().parse_args(argv))
    sub = args.pop("subcommand")
    path = args.pop("config")
    try:
        file_values = _read_ini(path) if path else {}
        cfg = build_config(sub, file_values, args)
    except ConfigError as exc:
        print(f"config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
