"""Command-line entry point.

Subcommands: rates, moments, asymptotics, simulate, verify. Every subcommand
accepts ``--config path.json``; explicit flags override the file. Exit codes
are 0 on success, 1 when a verify criterion fails and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import asymptotics as asy
from .checks import CHECKS, FAIL, CheckSettings, run_checks
from .measure import CoalescentMeasure, beta_measure, expansion_constants, measure_from_config
from .moments import solve_moments
from .rates import RateTable
from .simulator import FUNCTIONALS, default_workers, run_experiment
from .specfun import DomainError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    measure: dict = field(default_factory=lambda: {"kind": "beta", "alpha": 1.5})
    n_max: int = 2**13
    orders: int = 2
    replicates: int = 100_000
    n: int = 100
    seed: int = 20240601
    workers: int | None = None
    out: str | None = None
    raw: str | None = None
    row: int | None = None
    only: list | None = None
    tolerances: dict = field(default_factory=dict)

    _RANGES = {
        "n_max": (2, 2**20),
        "orders": (1, 12),
        "replicates": (1, 10**8),
        "n": (2, 10**6),
        "seed": (0, 2**64 - 1),
        "workers": (1, 1024),
    }
    _TOLERANCES = ("ks_threshold", "perf_seconds", "perf_sim_rate")

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: expected a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names - {"alpha"})
        if unknown:
            raise ConfigError(f"config.{unknown[0]}: unknown key")
        data = dict(data)
        cfg = cls()
        if "alpha" in data:
            if "measure" in data:
                raise ConfigError("config.alpha: give either alpha or measure, not both")
            data["measure"] = {"kind": "beta", "alpha": data.pop("alpha")}
        for k, v in data.items():
            setattr(cfg, k, v)
        cfg.validate()
        return cfg

    def validate(self):
        for name, (lo, hi) in self._RANGES.items():
            v = getattr(self, name)
            if v is None and name == "workers":
                continue
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"config.{name}: expected an integer, got {v!r}")
            if not lo <= v <= hi:
                raise ConfigError(f"config.{name}: {v} outside [{lo}, {hi}]")
        if not isinstance(self.measure, dict):
            raise ConfigError("config.measure: expected an object")
        if not isinstance(self.tolerances, dict):
            raise ConfigError("config.tolerances: expected an object")
        for k, v in self.tolerances.items():
            if k not in self._TOLERANCES:
                raise ConfigError(f"config.tolerances.{k}: unknown key")
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"config.tolerances.{k}: expected a positive number")
        if self.only is not None:
            bad = [c for c in self.only if c not in CHECKS]
            if bad:
                raise ConfigError(f"config.only: unknown criteria {bad}")

    def build_measure(self) -> CoalescentMeasure:
        try:
            return measure_from_config(self.measure)
        except DomainError as exc:
            msg = str(exc)
            raise ConfigError(msg if msg.startswith("measure") else f"measure: {msg}") from None

    @property
    def alpha(self) -> float:
        return float(self.measure.get("alpha", math.nan))


def _num(x):
    """Full round-trip decimal for floats; integers stay integers."""
    if isinstance(x, (np.integer, int)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def _write_csv(path: str | None, header: list[str], rows) -> None:
    buf = io.StringIO() if path is None else open(path, "w", newline="")
    try:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else _num(v) for v in r])
        if path is None:
            sys.stdout.write(buf.getvalue())
    finally:
        if path is not None:
            buf.close()


def _write_json(path: str | None, obj) -> None:
    text = json.dumps(obj, indent=2, allow_nan=False)
    if path is None:
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def cmd_rates(cfg: RunConfig) -> int:
    m = cfg.build_measure()
    if cfg.row is not None:
        if cfg.row < 2:
            raise ConfigError(f"config.row: need N >= 2, got {cfg.row}")
        table = RateTable(m, cfg.row)
        p = table.row(cfg.row)
        _write_csv(cfg.out, ["k", "p_nk"], ((k, p[k - 1]) for k in range(1, cfg.row)))
        return EXIT_OK
    table = RateTable(m, cfg.n_max)
    rows = ((n, table.g[n], table.mean_decrement[n], table.entropy[n]) for n in range(2, cfg.n_max + 1))
    _write_csv(cfg.out, ["n", "g_n", "E_X1", "row_entropy"], rows)
    return EXIT_OK


def cmd_moments(cfg: RunConfig) -> int:
    m = cfg.build_measure()
    a = m.alpha
    mt = solve_moments(RateTable(m, cfg.n_max), orders=max(cfg.orders, 2), pair=True)
    ns = mt.ns
    var, cov, mse = mt.variance(ns), mt.covariance(ns), np.atleast_1d(mt.mse(ns))
    nf = ns.astype(float)
    header = ["n", "ET1"] + [f"ET1_{k}" for k in range(2, cfg.orders + 1)]
    header += ["ET1T2", "var", "cov", "mse", "rescaled_ET1", "rescaled_cov", "rescaled_mse"]

    def rows():
        for i, n in enumerate(ns):
            yield (
                [n, mt.mT[1, n]]
                + [mt.mT[k, n] for k in range(2, cfg.orders + 1)]
                + [mt.mTT[n], var[i], cov[i], mse[i], nf[i] ** (a - 1.0) * mt.mT[1, n],
                   nf[i] ** (3.0 * (a - 1.0)) * cov[i], nf[i] ** (3.0 * a - 5.0) * mse[i]]
            )

    _write_csv(cfg.out, header, rows())
    return EXIT_OK


def asymptotics_report(m: CoalescentMeasure) -> dict:
    law = asy.limit_law(m)
    ec = expansion_constants(m)
    out = {
        "measure": {"kind": m.kind, "alpha": m.alpha, "zeta": m.zeta, "C0": m.C0, "C1": m.C1, "case": m.case_id.value},
        "limit_law": {"c": law.c, "kappa": law.kappa},
        "E_T": asy.limit_mean(m),
        "Var_T": _finite(asy.limit_variance(law)),
        "A": asy.A_integral(m),
        "B": asy.B_integral(m),
        "Delta": asy.delta_alpha(m),
        "C2": None if ec is None else ec.C2,
        "C2_l": None if ec is None else {str(k): v for k, v in ec.C2_l.items()},
    }
    if m.kind == "beta":
        bc = asy.beta_constants(m.alpha)
        out["beta_closed_forms"] = {
            "A_quoted": bc.A, "A_exact": bc.A_exact, "B": bc.B,
            "C2": bc.C2, "C2_1": bc.C2_1, "C2_2": bc.C2_2,
            "Delta_quoted": bc.delta_quoted, "Delta": bc.delta,
        }
    preds = {}
    for tid in asy.THEOREM_IDS:
        try:
            p = asy.theorem_prediction(m, tid)
        except DomainError as exc:
            preds[tid] = {"applicable": False, "reason": str(exc)}
            continue
        preds[tid] = {"applicable": True} | {
            k: (_finite(v) if isinstance(v, float) else v) for k, v in dataclasses.asdict(p).items()
        }
    out["predictions"] = preds
    return out


def cmd_asymptotics(cfg: RunConfig) -> int:
    _write_json(cfg.out, asymptotics_report(cfg.build_measure()))
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    m = cfg.build_measure()
    workers = cfg.workers if cfg.workers is not None else default_workers()
    summ = run_experiment(m, cfg.n, cfg.replicates, cfg.seed, workers, keep_raw=cfg.raw is not None)
    rows = ((k, summ.stats[k].mean, summ.stats[k].variance, summ.stats[k].se) for k in FUNCTIONALS)
    _write_csv(cfg.out, ["functional", "mean", "variance", "se"], rows)
    if cfg.raw is not None:
        r = summ.raw
        _write_csv(
            cfg.raw,
            ["replicate", "L_ext", "L_total", "tau", "T_random_external"],
            ((i, r["L_ext"][i], r["L_total"][i], r["tau"][i], r["T_random_external"][i]) for i in range(cfg.replicates)),
        )
    return EXIT_OK


def settings_from(cfg: RunConfig) -> CheckSettings:
    m = cfg.build_measure()
    if m.kind != "beta":
        raise ConfigError("measure.kind: verify runs on the Beta(2-alpha, alpha) family")
    workers = cfg.workers if cfg.workers is not None else default_workers()
    return CheckSettings(
        alpha=m.alpha, n_max=cfg.n_max, seed=cfg.seed, workers=workers,
        mc_replicates=cfg.replicates, ks_replicates=cfg.replicates, **cfg.tolerances,
    )


def cmd_verify(cfg: RunConfig) -> int:
    settings = settings_from(cfg)
    results = run_checks(settings, cfg.only)
    counts = {s: sum(r.status == s for r in results) for s in ("pass", "fail", "refused")}
    report = {
        "settings": dataclasses.asdict(settings),
        "criteria": [r.to_dict() for r in results],
        "summary": counts,
    }
    _write_json(cfg.out, report)
    for r in results:
        print(r.line(), file=sys.stderr)
    return EXIT_FAIL if any(r.status == FAIL for r in results) else EXIT_OK


COMMANDS = {
    "rates": cmd_rates,
    "moments": cmd_moments,
    "asymptotics": cmd_asymptotics,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lambdacoal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig fields")
    common.add_argument("--alpha", type=float, help="Beta(2-alpha, alpha) measure")
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--workers", type=int)

    p = sub.add_parser("rates", parents=[common], help="total rates and jump-row diagnostics")
    p.add_argument("--nmax", dest="n_max", type=int)
    p.add_argument("--row", type=int, help="dump the jump row p_{N,k}")

    p = sub.add_parser("moments", parents=[common], help="exact external-branch moments")
    p.add_argument("--nmax", dest="n_max", type=int)
    p.add_argument("--orders", type=int)

    sub.add_parser("asymptotics", parents=[common], help="limit constants and predictions (JSON)")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo summary")
    p.add_argument("--n", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--raw", help="per-replicate CSV path")

    p = sub.add_parser("verify", parents=[common], help="run the acceptance checklist (JSON report)")
    p.add_argument("--nmax", dest="n_max", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--only", help="comma-separated criterion ids, e.g. AC1,AC3")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(data, dict):
            raise ConfigError("config: expected a JSON object")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config") and v is not None}
    if "only" in flags:
        flags["only"] = [s.strip() for s in flags["only"].split(",") if s.strip()]
    if "alpha" in flags:
        if "measure" in data:
            data["measure"] = dict(data["measure"], alpha=flags.pop("alpha"))
        else:
            data.pop("alpha", None)
    data.update(flags)
    return RunConfig.from_mapping(data)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, DomainError) as exc:
        print(f"lambdacoal {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
