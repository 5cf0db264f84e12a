"""Command-line front end.

Subcommands ``qp``, ``approx``, ``oracle`` and ``converge`` read one JSON
problem configuration and write a CSV table (``qp`` prints a JSON report).
Every CSV ends with a ``# config_sha256=... seed=...`` comment line; wall time
goes to stderr so reruns produce byte-identical files.

With ``weights`` the measures refer to the original scale of ``Z``; with an
explicit ``c`` they refer to the standardised vector with correlation
``corr`` (``E(c, u)``, ``S(c, u)``, ``M(c, u)`` and ``P(X > c u)``).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .approx import (
    CENTERED,
    VANISHING,
    CovSpec,
    mcte,
    mes_multivariate,
    mme_bivariate,
    mme_multivariate,
    standardize_query,
)
from .config import Level, ProblemConfig, load
from .errors import ConfigError, GaussRiskError, RegimeMismatch
from .oracle import (
    IS,
    PLAIN,
    RngStream,
    estimate_conditional_mes,
    estimate_conditional_mme,
    estimate_mcte,
    estimate_survival,
)
from .qp import savage_condition, solve_pi
from .tail import mvn_tail_asymptotic, std_quantile

MEASURES = ("mme", "mes", "mcte", "survival")
MES = "MES"
TAIL = "Tail"

APPROX_HEADER = ("level_kind", "level", "value", "log_value", "regime", "asymptotic_type",
                 "se_if_stochastic")
ORACLE_HEADER = ("level_kind", "level", "mean", "se", "n", "method", "accepted_fraction")
CONVERGE_HEADER = ("level_kind", "level", "approx_value", "regime", "oracle_mean", "oracle_se",
                   "ratio")


@dataclass(frozen=True)
class Row:
    value: float
    regime: str
    asymptotic_type: str
    se: float = 0.0


def fmt(x) -> str:
    """17 significant digits for floats, so every value round-trips."""
    if isinstance(x, (bool, str)):
        return str(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _log(x: float) -> float:
    return math.log(x) if x > 0 else math.nan


def level_u(level: Level) -> float:
    return float(std_quantile(level.value)) if level.kind == "p" else level.value


def _query(cfg: ProblemConfig, measure: str) -> tuple[np.ndarray, float]:
    """Threshold vector and mean-excess shift on the correlation scale."""
    if cfg.c is not None:
        return np.asarray(cfg.c, dtype=float), cfg.shift
    if measure == "mme":
        return standardize_query(cfg.spec, cfg.weight_vector)
    return np.ones(cfg.d), 0.0


def _rescale(cfg: ProblemConfig, x: float, se: float, *, location: bool) -> tuple[float, float]:
    """Map a correlation-scale value and its SE back to the scale of ``Z_1``."""
    if cfg.c is not None:
        return x, se
    s1 = float(cfg.spec.sd[0])
    return s1 * x + (float(cfg.spec.mu[0]) if location else 0.0), s1 * se


def _bivariate_spec(cfg: ProblemConfig) -> CovSpec:
    # A_p = a VaR_2(p) is the VaR of a Z_2, so rescale the second margin
    a = float(cfg.weight_vector[0])
    if a <= 0:
        raise ConfigError("field 'weights' must be positive for the bivariate mean excess")
    s = cfg.spec
    return CovSpec([s.mu[0], a * s.mu[1]], [s.sd[0], a * s.sd[1]], s.corr)


def _check_forced(cfg: ProblemConfig, regime: str) -> None:
    if cfg.force_regime is not None and cfg.force_regime != regime:
        raise RegimeMismatch(f"regime is {regime}, config forces {cfg.force_regime}")


def approx_row(cfg: ProblemConfig, measure: str, level: Level) -> Row:
    u = level_u(level)
    sigma = cfg.spec.corr
    l_tol = cfg.tolerances["l_tol"]
    c, shift = _query(cfg, measure)

    if measure == "mme" and cfg.c is None and cfg.d == 2:
        r = mme_bivariate(_bivariate_spec(cfg), u=u, tol=cfg.tolerances["regime_tol"],
                          force_regime=cfg.force_regime)
        return Row(r.value, r.regime, r.asymptotic_type, r.se)
    if measure == "mme":
        r = mme_multivariate(sigma, c, shift, u, l_tol=l_tol, seed=cfg.seed)
        _check_forced(cfg, r.regime)
        value, se = _rescale(cfg, r.value, r.se, location=False)
        return Row(value, r.regime, r.asymptotic_type, se)
    if measure == "mes":
        _check_forced(cfg, MES)
        lim = mes_multivariate(sigma, c[1:], l_tol=l_tol, seed=cfg.seed)
        value, se = _rescale(cfg, lim.c1 * u + lim.mean_y, lim.se, location=True)
        return Row(value, MES, CENTERED, se)
    if measure == "mcte":
        r = mcte(sigma, c, u, l_tol=l_tol, seed=cfg.seed)
        _check_forced(cfg, r.regime)
        value, se = _rescale(cfg, r.value, r.se, location=True)
        return Row(value, r.regime, r.asymptotic_type, se)
    if measure == "survival":
        _check_forced(cfg, TAIL)
        t = mvn_tail_asymptotic(sigma, c, u, l_tol=l_tol, seed=cfg.seed)
        se = t.value * t.orthant_se / t.orthant if t.orthant_se else 0.0
        return Row(t.value, TAIL, VANISHING, se)
    raise ConfigError(f"unknown measure {measure!r}")


def oracle_estimate(cfg: ProblemConfig, measure: str, level: Level, index: int):
    """Monte-Carlo estimate for one grid point; grid point ``k`` uses stream ``k``."""
    u = level_u(level)
    sigma = cfg.spec.corr
    c, shift = _query(cfg, measure)
    stream = RngStream(cfg.seed, index)
    if measure == "mme":
        est = estimate_conditional_mme(sigma, c, shift, u, cfg.n, stream, cfg.method)
        location = False
    elif measure == "mes":
        est = estimate_conditional_mes(sigma, c[1:], u, cfg.n, stream, cfg.method)
        location = True
    elif measure == "mcte":
        est = estimate_mcte(sigma, c, u, cfg.n, stream, cfg.method)
        location = True
    elif measure == "survival":
        return estimate_survival(sigma, c, u, cfg.n, stream, cfg.method)
    else:
        raise ConfigError(f"unknown measure {measure!r}")
    mean, se = _rescale(cfg, est.mean, est.stderr, location=location)
    return type(est)(mean, se, est.n, est.seed, est.method, est.accepted_fraction, est.stream)


# --------------------------------------------------------------------------
# tables


def approx_table(cfg: ProblemConfig, measure: str) -> list[tuple]:
    rows = []
    for level in cfg.levels:
        r = approx_row(cfg, measure, level)
        rows.append((level.kind, level.value, r.value, _log(r.value), r.regime,
                     r.asymptotic_type, r.se))
    return rows


def oracle_table(cfg: ProblemConfig, measure: str) -> list[tuple]:
    rows = []
    for k, level in enumerate(cfg.levels):
        e = oracle_estimate(cfg, measure, level, k)
        rows.append((level.kind, level.value, e.mean, e.stderr, e.n, e.method,
                     e.accepted_fraction))
    return rows


def converge_table(cfg: ProblemConfig, measure: str) -> list[tuple]:
    rows = []
    for k, level in enumerate(cfg.levels):
        r = approx_row(cfg, measure, level)
        e = oracle_estimate(cfg, measure, level, k)
        finite = math.isfinite(r.value) and math.isfinite(e.mean) and e.mean != 0
        ratio = r.value / e.mean if finite else math.nan
        rows.append((level.kind, level.value, r.value, r.regime, e.mean, e.stderr, ratio))
    return rows


def render_csv(header, rows, cfg: ProblemConfig) -> str:
    lines = [",".join(header)]
    lines += [",".join(fmt(x) for x in row) for row in rows]
    lines.append(f"# config_sha256={cfg.sha256()} seed={cfg.seed} gaussrisk={__version__} "
                 f"numpy={np.__version__}")
    return "\n".join(lines) + "\n"


def qp_report(cfg: ProblemConfig) -> dict:
    c, _ = _query(cfg, "mme")
    sol = solve_pi(cfg.spec.corr, c, l_tol=cfg.tolerances["l_tol"])
    out = {"c": [float(x) for x in c]}
    out.update(sol.as_dict())
    out["savage"] = savage_condition(cfg.spec.corr, c)
    return out


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaussrisk",
        description="Tail asymptotics and Monte-Carlo checks for Gaussian risk measures.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="JSON problem file")
    common.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--n", type=int, help="override the Monte-Carlo sample size")
    common.add_argument("--method", choices=(PLAIN, IS), help="Monte-Carlo sampling scheme")
    common.add_argument("--force-regime", metavar="NAME", help="evaluate a named regime")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("qp", parents=[common], help="solve the orthant quadratic program")
    for name, text in (("approx", "asymptotic approximation per grid point"),
                       ("oracle", "Monte-Carlo estimate per grid point"),
                       ("converge", "ratio of approximation to Monte-Carlo estimate")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("measure", choices=MEASURES)
    return parser


def _load(args) -> ProblemConfig:
    cfg = load(args.config)
    overrides = {"seed": args.seed, "n": args.n, "method": args.method,
                 "force_regime": args.force_regime}
    if any(v is not None for v in overrides.values()):
        cfg = cfg.with_overrides(**overrides)
    return cfg


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def run(args) -> None:
    cfg = _load(args)
    if args.command == "qp":
        _emit(json.dumps(qp_report(cfg), indent=2) + "\n", args.out)
        return
    table, header = {
        "approx": (approx_table, APPROX_HEADER),
        "oracle": (oracle_table, ORACLE_HEADER),
        "converge": (converge_table, CONVERGE_HEADER),
    }[args.command]
    _emit(render_csv(header, table(cfg, args.measure), cfg), args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        run(args)
    except GaussRiskError as exc:
        print(f"gaussrisk: error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(f"gaussrisk: {args.command} done in {time.perf_counter() - start:.2f}s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
