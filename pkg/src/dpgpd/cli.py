"""Command-line workflow: simulate, fit, quantile, predict, summary, fetch.

Every command takes ``--seed``, ``--config`` and ``--out``. Failures print a
single ``error: ...`` line to stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from dpgpd import __version__
from dpgpd import io as dio
from dpgpd.distributions import GammaParams, TailParams
from dpgpd.model import FitConfig, chain_summary, credible_interval, fit, predictive_density_grid, quantile_posterior
from dpgpd.simulate import BulkMixtureSpec, SpliceSpec, sample_spliced, scenario_sec3

SUMMARY_PARAMS = ("u", "sigma", "xi", "n_star", "a_lambda", "a_gamma", "log_post")


def _json(path) -> dict:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(d, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return d


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


# --- commands ---------------------------------------------------------------------


def cmd_simulate(args) -> None:
    """Config keys (all optional): n, weights, shapes, rates, u, sigma, xi."""
    spec = scenario_sec3()
    n = args.n
    if args.config:
        d = _json(args.config)
        n = int(d.get("n", n))
        if any(k in d for k in ("weights", "shapes", "rates")):
            comps = tuple(GammaParams(a, b) for a, b in zip(d["shapes"], d["rates"]))
            bulk = BulkMixtureSpec(tuple(d["weights"]), comps)
        else:
            bulk = spec.bulk
        t = spec.tail
        spec = SpliceSpec(bulk, TailParams(d.get("u", t.u), d.get("sigma", t.sigma), d.get("xi", t.xi)))
    x = sample_spliced(n, spec, np.random.default_rng(args.seed))
    if args.out is None:
        sys.stdout.write("value\n" + "".join(repr(float(v)) + "\n" for v in x))
    else:
        dio.write_csv(args.out, x)


def cmd_fit(args) -> None:
    cfg = dio.load_config(args.config) if args.config else FitConfig()
    d = cfg.to_dict()
    if args.seed is not None:
        d["seed"] = args.seed
    if args.iterations is not None:
        d["iterations"] = args.iterations
    if args.burn_in is not None:
        d["burn_in"] = args.burn_in
    if args.full:
        d["keep_memberships"] = True
    cfg = FitConfig.from_dict(d)
    data = dio.read_csv(args.data)
    t0 = time.perf_counter()
    chain = fit(data.values, cfg)
    wall_ms = int(round(1000 * (time.perf_counter() - t0)))
    manifest = dio.RunManifest(
        config=cfg.to_dict(),
        seed=cfg.seed,
        data_sha256=chain.data_digest,
        acceptance_rates=chain.acceptance_rates,
        wall_ms=wall_ms,
        version=__version__,
        extra={"data": str(data.source), "n": len(data), "priors": {"m_u": chain.priors.m_u, "var_u": chain.priors.var_u}, "tuning": chain.tuning},
    )
    out = dio.save_run(args.out or "run", chain, manifest)
    print(f"{len(chain)} samples written to {out}", file=sys.stderr)


def cmd_quantile(args) -> None:
    chain, _ = dio.load_run(args.run)
    ps = args.p
    if args.config:
        ps = _json(args.config).get("p", ps)
    draws = {p: quantile_posterior(p, chain) for p in ps}
    lines = ["p,mean,sd,lo,median,hi"]
    for p, q in draws.items():
        lo, hi = credible_interval(q, args.level)
        lines.append(f"{p!r},{q.mean()!r},{q.std()!r},{lo!r},{float(np.median(q))!r},{hi!r}")
    sys.stdout.write("\n".join(lines) + "\n")
    if args.out:
        header = "iter," + ",".join(f"q{p!r}" for p in ps)
        rows = [header]
        for k, s in enumerate(chain.samples):
            rows.append(f"{s.iteration}," + ",".join(repr(float(draws[p][k])) for p in ps))
        Path(args.out).write_text("\n".join(rows) + "\n", encoding="utf-8")


def cmd_predict(args) -> None:
    chain, _ = dio.load_run(args.run)
    lo, hi, n = args.grid
    level = args.level
    if args.config:
        d = _json(args.config)
        lo, hi, n = d.get("lo", lo), d.get("hi", hi), int(d.get("n", n))
        level = d.get("level", level)
    if lo is None or hi is None:
        u_hi = float(np.max(chain.values("u")))
        lo = lo if lo is not None else 1e-3 * u_hi
        hi = hi if hi is not None else 3.0 * u_hi
    grid = predictive_density_grid(chain, np.linspace(lo, hi, int(n)), level)
    if args.out is None:
        sys.stdout.write(",".join(dio.GRID_COLUMNS) + "\n")
        for row in zip(grid.x, grid.mean, grid.lo, grid.hi):
            sys.stdout.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        dio.write_grid_csv(args.out, grid)


def cmd_summary(args) -> None:
    chain, manifest = dio.load_run(args.run)
    params = SUMMARY_PARAMS
    if args.config:
        params = tuple(_json(args.config).get("params", params))
    lines = ["param,mean,sd,q2.5,q50,q97.5"]
    for name in params:
        s = chain_summary(chain, name)
        lines.append(name + "," + ",".join(f"{s[k]:.6g}" for k in ("mean", "sd", "q2.5", "q50", "q97.5")))
    rates = ", ".join(f"{k}={v:.3f}" for k, v in manifest.acceptance_rates.items())
    lines.append(f"# {len(chain)} samples; acceptance {rates}")
    _emit("\n".join(lines) + "\n", args.out)


def cmd_fetch(args) -> None:
    site, start, end, param = args.site, args.start, args.end, args.parameter
    if args.config:
        d = _json(args.config)
        site = d.get("site", site)
        start, end = d.get("start", start), d.get("end", end)
        param = d.get("parameter", param)
    if not (site and start and end):
        raise ValueError("fetch needs --site, --start and --end")
    out = Path(args.out or f"nwis_{site}.csv")
    cache_dir = args.cache_dir or os.environ.get(dio.CACHE_ENV) or out.parent
    data = dio.fetch_usgs(site, start, end, param, cache_dir=cache_dir)
    dio.write_csv(out, data.values, header="discharge_cfs")
    print(f"{len(data)} values written to {out}", file=sys.stderr)


# --- parser -----------------------------------------------------------------------


def _grid(text: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("grid must be lo:hi:n")
    return float(parts[0]), float(parts[1]), int(parts[2])


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        sys.exit(2)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--out", default=None, help="output path")

    parser = _Parser(prog="dpgpd", description="DP gamma mixture bulk with a generalized Pareto tail")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="draw a synthetic sample")
    p.add_argument("--n", type=int, default=200)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="run the sampler on a CSV")
    p.add_argument("data")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--full", action="store_true", help="keep per-observation memberships")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("quantile", parents=[common], help="posterior of high quantiles")
    p.add_argument("run")
    p.add_argument("--p", type=float, nargs="+", default=[0.95, 0.999])
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_quantile)

    p = sub.add_parser("predict", parents=[common], help="posterior density on a grid")
    p.add_argument("run")
    p.add_argument("--grid", type=_grid, default=(None, None, 200))
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("summary", parents=[common], help="per-parameter posterior table")
    p.add_argument("run")
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("fetch", parents=[common], help="download USGS NWIS instantaneous values")
    p.add_argument("--site", default=None)
    p.add_argument("--start", default=None, help="YYYY-MM-DD")
    p.add_argument("--end", default=None, help="YYYY-MM-DD")
    p.add_argument("--parameter", default=dio.DISCHARGE_CODE)
    p.add_argument("--cache-dir", default=None)
    p.set_defaults(func=cmd_fetch)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate" and args.seed is None:
        args.seed = 0
    try:
        args.func(args)
    except Exception as exc:  # one-line diagnostics for every failure
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
