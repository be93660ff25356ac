"""Command line driver: scenario configuration, runs and reproducible outputs.

Usage::

    hmflow SUBCOMMAND [--config PATH] [--out DIR] [--gamma G[,G...]]

Subcommands: simulate, mu-solve, verify-ansatz, constants, constraints,
check-integrals.  Exit status 0 on success, 1 for configuration or I/O
errors and 2 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import mpmath
import numpy as np
import scipy

from . import __version__

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2

COMMANDS = ("simulate", "mu-solve", "verify-ansatz", "constants", "constraints", "check-integrals")


class ConfigError(ValueError):
    pass


def _floats(s: str) -> tuple:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (parser, default); None default means required
SCHEMA: Dict[str, tuple] = {
    "gamma": (_floats, None),
    "t0": (float, 100.0),
    "T": (float, 1e5),
    "N": (int, 2000),
    "R_max": (float, 0.0),
    "resolve": (float, 16.0),
    "outer": (str, "dirichlet"),
    "data": (str, "aligned"),
    "scheme": (str, "bdf2-newton"),
    "dt0": (float, 0.0),
    "growth": (float, 1.05),
    "newton_tol": (float, 1e-11),
    "max_newton": (int, 20),
    "record_every": (int, 1),
    "window_decades": (float, 2.0),
    "mu_t_lo": (float, 1e2),
    "mu_t_hi": (float, 1e8),
    "mu_per_decade": (int, 40),
    "mu_relax": (float, 0.5),
    "mu_tol": (float, 1e-10),
    "slab_times": (_floats, (1e3, 1e4, 1e5)),
    "slab_points": (int, 200),
    "precision": (int, 40),
    "with_v1": (_bool, False),
    "reading": (str, "per-regime"),
    "grid_points": (int, 20),
    "p0": (_floats, (0.75,)),
    "integral_times": (_floats, (1e6, 1e8, 1e10, 1e12)),
}

CHOICES = {
    "outer": ("dirichlet", "neumann"),
    "data": ("aligned", "blend"),
    "scheme": ("bdf2-newton", "linearly-implicit"),
    "reading": ("per-regime", "uniform"),
}


@dataclass
class ScenarioConfig:
    values: Dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def parse(cls, text: str, overrides: Optional[Dict[str, str]] = None) -> "ScenarioConfig":
        """Parse flat ``key = value`` lines; ``#`` starts a comment."""
        raw: Dict[str, str] = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in SCHEMA:
                raise ConfigError(f"line {n}: unknown key {k!r}")
            if k in raw:
                raise ConfigError(f"line {n}: duplicate key {k!r}")
            raw[k] = v
        raw.update(overrides or {})
        vals: Dict[str, Any] = {}
        for k, (conv, default) in SCHEMA.items():
            if k in raw:
                try:
                    vals[k] = conv(raw[k])
                except ValueError as exc:
                    raise ConfigError(f"bad value for {k}: {exc}") from None
            elif default is None:
                raise ConfigError(f"missing required key {k!r}")
            else:
                vals[k] = default
        cfg = cls(vals)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        v = self.values
        if not v["gamma"]:
            raise ConfigError("gamma list is empty")
        if any(not (g > 1) or not math.isfinite(g) for g in v["gamma"]):
            raise ConfigError("every gamma must exceed 1")
        if not v["T"] > v["t0"] > 0:
            raise ConfigError("need T > t0 > 0")
        if v["N"] < 2 or v["R_max"] < 0 or v["resolve"] <= 0:
            raise ConfigError("mesh parameters out of range")
        if not 1.0 <= v["growth"] <= 1.1:
            raise ConfigError("growth must lie in [1, 1.1]")
        for k, allowed in CHOICES.items():
            if v[k] not in allowed:
                raise ConfigError(f"{k} must be one of {allowed}")
        if not v["mu_t_hi"] > v["mu_t_lo"] > 1:
            raise ConfigError("need mu_t_hi > mu_t_lo > 1")
        if v["slab_points"] < 2 or v["precision"] < 20:
            raise ConfigError("slab_points >= 2 and precision >= 20 required")
        if any(t <= 1 for t in v["slab_times"]):
            raise ConfigError("slab times must exceed 1")
        if any(not 0 < p < 1 for p in v["p0"]):
            raise ConfigError("p0 must lie in (0, 1)")

    def echo(self) -> Dict[str, Any]:
        return {k: (list(x) if isinstance(x, tuple) else x) for k, x in self.values.items()}


# ---------------------------------------------------------------------------
# output helpers

def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def csv_text(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Fixed-order CSV with 17 significant digits; no rows gives the header only."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    return buf.getvalue()


def dat_text(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Whitespace-separated table with a ``#`` header for gnuplot."""
    lines = ["# " + " ".join(columns)]
    lines += [" ".join(fmt(x) for x in row) for row in rows]
    return "\n".join(lines) + "\n"


class Outputs:
    """Collects files for one invocation and writes them at the end."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.files: Dict[str, str] = {}

    def table(self, stem: str, columns, rows, dat: bool = False):
        self.files[stem + ".csv"] = csv_text(columns, rows)
        if dat:
            self.files[stem + ".dat"] = dat_text(columns, rows)

    def text(self, name: str, body: str):
        self.files[name] = body

    def write(self) -> List[str]:
        os.makedirs(self.out_dir, exist_ok=True)
        for name, body in sorted(self.files.items()):
            with open(os.path.join(self.out_dir, name), "w", encoding="utf-8", newline="") as fh:
                fh.write(body)
        return sorted(self.files)


def _manifest(command: str, cfg: ScenarioConfig, status: str, files: List[str]) -> str:
    data = {
        "command": command,
        "status": status,
        "config": cfg.echo(),
        "files": files,
        "versions": {
            "hmflow": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "mpmath": mpmath.__version__,
        },
    }
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _tag(g: float) -> str:
    return f"g{g:g}".replace(".", "p")


# ---------------------------------------------------------------------------
# subcommands

THEOREM_TABLE = (
    "| regime | gamma | sup_r v_r | mu(t) |\n"
    "|---|---|---|---|\n"
    "| sub | 1 < gamma < 2 | t^{(gamma-2)/2} ln t | t^{(2-gamma)/2} / ln t |\n"
    "| critical | gamma = 2 | 1 | constant |\n"
    "| super | gamma > 2 | ln t | 1 / ln t |\n"
)


def cmd_constants(cfg: ScenarioConfig, out: Outputs) -> str:
    from .heat4d import GammaContext
    rows = []
    for g in cfg["gamma"]:
        ctx = GammaContext(g)
        rows.append([g, ctx.C_gamma, ctx.regime, ctx.v_gamma_form])
    out.table("constants", ["gamma", "C_gamma", "regime", "v_gamma_form"], rows)
    return "ok"


def cmd_check_integrals(cfg: ScenarioConfig, out: Outputs) -> str:
    from .mu_dynamics import check_log_integral
    rows = []
    for p0 in cfg["p0"]:
        for t in cfg["integral_times"]:
            val = check_log_integral(p0, t)
            target = 2.0 * p0 - 1.0
            band = 5.0 / math.log(t)
            rows.append([p0, t, val, target, abs(val - target), band, int(abs(val - target) <= band)])
    out.table("integrals", ["p0", "t", "value", "target", "deviation", "band", "within_band"], rows)
    return "ok"


def cmd_constraints(cfg: ScenarioConfig, out: Outputs) -> str:
    from dataclasses import fields as dc_fields
    from .constraints import ParameterTuple, feasible_parameters, verify_tuple
    names = [f.name for f in dc_fields(ParameterTuple)]
    rows = []
    slack_rows = []
    for g in cfg["gamma"]:
        res = feasible_parameters(g, cfg["reading"], cfg["grid_points"])
        verified = bool(res.witness is not None and all(verify_tuple(g, res.witness, cfg["reading"]).values()))
        vals = [getattr(res.witness, n) if res.witness else "" for n in names]
        rows.append([g, res.reading, int(res.feasible), int(verified), res.min_slack, res.tightest] + vals)
        for name in sorted(res.slacks):
            slack_rows.append([g, name, res.slacks[name]])
    out.table("constraints", ["gamma", "reading", "feasible", "verified", "min_slack", "tightest"] + names, rows)
    out.table("constraint_slacks", ["gamma", "constraint", "slack"], slack_rows)
    return "ok"


def cmd_mu_solve(cfg: ScenarioConfig, out: Outputs) -> str:
    from .heat4d import GammaContext
    from .mu_dynamics import eval_nonlocal_residual, log_grid, mu0_trajectory, solve_mu
    status = "ok"
    for g in cfg["gamma"]:
        ctx = GammaContext(g)
        lo, hi = cfg["mu_t_lo"], cfg["mu_t_hi"]
        res = solve_mu(ctx, horizon=(lo, hi), per_decade=cfg["mu_per_decade"],
                       relax=cfg["mu_relax"], tol=cfg["mu_tol"])
        base = mu0_trajectory(ctx, lo / 4, hi)
        rows = []
        for t in log_grid(lo, hi, 4):
            r0 = eval_nonlocal_residual(ctx, base, t)
            r1 = eval_nonlocal_residual(ctx, res.mu, t)
            rows.append([t, float(base.mu(t)), float(res.mu.mu(t)), float(res.mu1.mu(t)),
                         float(res.mu1.mu_dot(t)), r0, r1])
        cols = ["t", "mu0", "mu", "mu1", "mu1_dot", "residual_mu0", "residual_mu"]
        out.table(f"mu_{_tag(g)}", cols, rows, dat=True)
        if not res.converged:
            status = "not-converged"
    return status


def cmd_verify_ansatz(cfg: ScenarioConfig, out: Outputs) -> str:
    from .ansatz import AnsatzBundle, apply_error_operator, eval_first_error_terms, make_vstar, mu0_mp
    from .heat4d import GammaContext
    from .mu_dynamics import mu0_trajectory
    times = cfg["slab_times"]
    n = cfg["slab_points"]
    for g in cfg["gamma"]:
        ctx = GammaContext(g)
        traj = mu0_trajectory(ctx, 0.5 * min(times), 10 * max(times))
        v = make_vstar(traj, mu0_mp(ctx))
        bundle = AnsatzBundle(ctx, traj) if cfg["with_v1"] else None
        rows = []
        for t in times:
            sq = math.sqrt(t)
            r = np.geomspace(1e-3 * sq, 8.0 * sq, n)
            E, err = apply_error_operator(v, r, np.full(n, t), precision=cfg["precision"])
            G = eval_first_error_terms(traj, r, t)
            Ev1 = bundle.error_v1(r, t) if bundle is not None else np.full(n, np.nan)
            for i in range(n):
                rows.append([r[i], t, E[i], err[i], G.E1[i], G.E21[i], G.E22[i], G.trig_remainder[i],
                             G.total[i], Ev1[i]])
        cols = ["r", "t", "E_vstar", "E_vstar_err", "E1", "E21", "E22", "trig_remainder",
                "E_grouped", "E_v1"]
        out.table(f"ansatz_{_tag(g)}", cols, rows, dat=True)
    return "ok"


def cmd_simulate(cfg: ScenarioConfig, out: Outputs) -> str:
    from .pde import RunResult, StepperConfig, default_mesh, run
    from .heat4d import GammaContext
    from .mu_dynamics import mu0_leading
    from .rates import trichotomy_verdict
    status = "ok"
    summary = ["# Long-time behaviour versus the predicted trichotomy", "", THEOREM_TABLE]
    vrows = []
    for g in cfg["gamma"]:
        ctx = GammaContext(g)
        grid, _ = default_mesh(g, cfg["t0"], cfg["T"], cfg["N"], cfg["R_max"] or None, cfg["resolve"])
        mu_init = float(mu0_leading(ctx, cfg["t0"])[0])
        dt0 = cfg["dt0"] or 1e-3 * min(mu_init, 1.0) ** 2
        sc = StepperConfig(scheme=cfg["scheme"], dt0=dt0, growth=cfg["growth"],
                           newton_tol=cfg["newton_tol"], max_newton=cfg["max_newton"])
        res = run(g, cfg["t0"], cfg["T"], grid=grid, cfg=sc, outer=cfg["outer"], data=cfg["data"],
                  record_every=cfg["record_every"])
        cols = list(RunResult.SERIES_COLUMNS)
        rows = list(zip(*(res.series[c] for c in cols)))
        mu0 = mu0_leading(ctx, np.asarray(res.series["t"]))[0]
        rows = [list(row) + [m] for row, m in zip(rows, mu0)]
        out.table(f"simulate_{_tag(g)}", cols + ["mu0"], rows, dat=True)
        summary.append(f"## gamma = {g:g}\n")
        summary.append(f"run status: {res.status}; regrids {res.regrids}; rejected steps {res.rejections}\n")
        try:
            ver = trichotomy_verdict(ctx, res.series["t"], res.series["grad_norm"], cfg["window_decades"])
        except (ValueError, np.linalg.LinAlgError) as exc:
            summary.append(f"no verdict: {exc}\n")
            vrows.append([g, ctx.regime, res.status, "none", "", "", "", ""])
        else:
            summary.append(ver.table())
            m = ver.model
            vrows.append([g, ctx.regime, res.status, ver.label, ver.expected, m.beta, m.sigma, m.residual])
        if res.status == "step-failure":
            status = "step-failure"
    out.table("verdicts", ["gamma", "regime", "status", "label", "expected", "beta", "sigma", "residual"], vrows)
    out.text("summary.md", "\n".join(summary) + "\n")
    return status


HANDLERS: Dict[str, Callable[[ScenarioConfig, Outputs], str]] = {
    "simulate": cmd_simulate,
    "mu-solve": cmd_mu_solve,
    "verify-ansatz": cmd_verify_ansatz,
    "constants": cmd_constants,
    "constraints": cmd_constraints,
    "check-integrals": cmd_check_integrals,
}

NUMERIC_FAILURES = (ArithmeticError, RuntimeError, np.linalg.LinAlgError)


def run_scenario(command: str, cfg: ScenarioConfig, out_dir: str) -> int:
    """Run one subcommand and write its artifacts; returns the exit status."""
    out = Outputs(out_dir)
    start = time.perf_counter()
    try:
        status = HANDLERS[command](cfg, out)
    except NUMERIC_FAILURES as exc:
        log.error("numerical failure: %s", exc)
        status = f"numerical-failure: {exc}"
    files = sorted(set(out.files) | {"manifest.json"})
    out.text("manifest.json", _manifest(command, cfg, status, files))
    # wall time lives apart from the byte-reproducible artifacts
    out.text("timing.json", json.dumps({"wall_time_s": round(time.perf_counter() - start, 3)}) + "\n")
    try:
        out.write()
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if status.startswith("numerical-failure") or status == "step-failure":
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hmflow", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--gamma", help="override the gamma list, comma separated")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = ""
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        overrides = {"gamma": args.gamma} if args.gamma else {}
        cfg = ScenarioConfig.parse(text, overrides)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_scenario(args.command, cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
