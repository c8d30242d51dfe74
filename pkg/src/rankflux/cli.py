"""Command-line front end: ``rankflux <subcommand> --config <path> [--out DIR] [--threads N] [--seed S]``.

Artifacts go to ``<out>/<config-hash>/<subcommand>/`` and carry a provenance
header (tool version, config hash, seed).  The hydrodynamic-limit grid is
cached under ``<out>/cache`` (or ``cache.dir``) by a content hash of its
inputs; entries are written once and never modified.  Whether a cache entry
was computed or reused is recorded in ``<out>/<config-hash>/<subcommand>.runlog.json``,
outside the artifact directory, so artifacts stay byte-identical across runs.

Exit status: 0 success, 2 invalid configuration or usage, 3 numerical failure.
"""

import argparse
import hashlib
import os
import sys
import time

import numpy as np

from . import __version__, coefficients, experiments, initial, io, pme, rng
from .config import load_config
from .errors import CFLViolation, ConfigurationError, RankfluxError
from .kernel import check_gaussian_bounds, kernel_forward
from .particles import simulate_coupled
from .testfunctions import bump
from .wasserstein import uniform_rate_experiment

SUBCOMMANDS = ("solve-pme", "kernel", "simulate", "chaos", "clt", "identity", "wasserstein-rate", "all")
THREADS_ENV = "RANKFLUX_THREADS"
# with an automatic dt the step count is a multiple of this, so every multiple of T/100 is a grid time
STEP_MULTIPLE = 100


class Context:
    """Resolved configuration, output locations and the shared grid cache."""

    def __init__(self, cfg, out, threads):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.root = os.path.join(out, cfg.hash)
        self.cache_dir = cfg["cache"]["dir"] or os.path.join(out, "cache")
        self.log = {}
        c = cfg["coefficients"]
        self.coeffs = coefficients.CoefficientPair(coefficients.parse_coefficient(c["b"]),
                                                   coefficients.parse_coefficient(c["sigma"]))
        self.anti = coefficients.antiderivatives(self.coeffs)
        params = {k: v for k, v in cfg["initial_law"].items() if k != "name"}
        self.law = initial.make_law(cfg["initial_law"]["name"], **params)
        g = cfg["grid"]
        self.dx, self.T = float(g["dx"]), float(g["T"])
        self.domain = tuple(g["domain"]) if g["domain"] else pme.default_domain(
            self.law, self.coeffs, self.T, dx=self.dx)
        self.dt = g["dt"]
        dt_max = pme.cfl_bound(self.anti, self.dx)
        if self.dt is not None and self.dt > dt_max * (1 + 1e-12):
            raise CFLViolation(self.dt, dt_max)
        self._grid = None

    def prov(self, sub, **extra):
        return io.provenance(self.cfg.hash, self.cfg.seed, subcommand=sub, **extra)

    def subdir(self, sub):
        path = os.path.join(self.root, sub)
        os.makedirs(path, exist_ok=True)
        return path

    def grid_key(self):
        parts = [self.coeffs.fingerprint(), self.law.fingerprint(), repr(self.domain), repr(self.dx),
                 repr(self.dt), repr(self.T), repr(STEP_MULTIPLE), __version__]
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:20]

    def grid(self, sub):
        """The solved grid, loaded from the cache when an entry exists."""
        name = f"grid-{self.grid_key()}.bin"
        path = os.path.join(self.cache_dir, name)
        if self._grid is None:
            if self.cfg["cache"]["enabled"] and os.path.exists(path):
                self._grid = pme.SolutionGrid.load(path)
                status = "reused"
            else:
                self._grid = pme.solve_pme(self.law, self.anti, self.domain, self.T, self.dx, self.dt,
                                           step_multiple=STEP_MULTIPLE)
                status = "computed"
                if self.cfg["cache"]["enabled"] and not os.path.exists(path):
                    self._grid.save(path)
        else:
            status = "reused"
        self.log.setdefault(sub, {})[name] = status
        return self._grid

    def write_runlog(self, sub, seconds):
        entry = {"subcommand": sub, "cache": self.log.get(sub, {}), "threads": self.threads,
                 "wall_seconds": round(seconds, 3)}
        os.makedirs(self.root, exist_ok=True)
        io.write_json(os.path.join(self.root, f"{sub}.runlog.json"), entry)


def _gamma(g):
    return bump(g["center"], g["half_width"], g["amplitude"], g["rate"])


def run_solve_pme(ctx):
    sub = "solve-pme"
    R = ctx.grid(sub)
    d = ctx.subdir(sub)
    stride = ctx.cfg["grid"]["csv_time_stride"] or max(1, (R.t.size - 1) // 100)
    R.to_csv(os.path.join(d, "grid.csv"), ctx.prov(sub, time_stride=stride), time_stride=stride)
    R.save(os.path.join(d, "grid.bin"))
    io.write_json(os.path.join(d, "summary.json"), {
        "provenance": ctx.prov(sub), "domain": list(ctx.domain), "dx": R.dx, "dt": R.dt,
        "steps": R.t.size - 1, "cfl_bound": pme.cfl_bound(ctx.anti, R.dx), "T": R.T,
        "max_gradient": R.max_gradient, "second_moment_final": R.moment(R.t.size - 1, 2)})


def run_kernel(ctx):
    sub = "kernel"
    R = ctx.grid(sub)
    kc = ctx.cfg["kernel"]
    times = kc["times"] or [R.T]
    d = ctx.subdir(sub)
    rows, bounds = [], []
    for y in kc["y"]:
        sl = kernel_forward(R, ctx.coeffs, kc["s"], y, kc["mollifier_width"])
        for t in times:
            try:
                row = sl.row(t)
            except RankfluxError:
                raise ConfigurationError(f"kernel.times: {t} is not a grid time after the source lag "
                                         f"{sl.lag:.4g}; grid step is {R.dt:.6g}") from None
            rows.extend((kc["s"], y, t, x, p) for x, p in zip(sl.x_grid, row))
        c_lo, c_up, ok = check_gaussian_bounds(sl, R.T, kc["bounds_window"])
        bounds.append({"y": y, "C_lower": c_lo, "C_upper": c_up, "pass": ok, "lag": sl.lag,
                       "mollifier_width": sl.mollifier_width, "max_leaked": float(np.max(sl.leaked)),
                       "reliable_lag": sl.reliable_lag()})
    io.write_csv(os.path.join(d, "kernel.csv"), ["s", "y", "t", "x", "p"], rows, ctx.prov(sub))
    io.write_json(os.path.join(d, "bounds.json"), {"provenance": ctx.prov(sub), "sources": bounds})


def run_simulate(ctx):
    sub = "simulate"
    sc = ctx.cfg["simulate"]
    R = ctx.grid(sub)
    seed_record = {"master": ctx.cfg.seed, "label": "simulate", "index": 0}
    paths = simulate_coupled(ctx.law, ctx.coeffs, R, sc["n"], sc["T"], sc["dt"],
                             rng.stream(ctx.cfg.seed, "simulate", 0), observe_every=sc["observe_every"],
                             seed_record=seed_record)
    d = ctx.subdir(sub)
    rows = ((t, i, x, xb) for t, X, Xb in zip(paths.times, paths.interacting, paths.surrogate)
            for i, (x, xb) in enumerate(zip(X, Xb)))
    io.write_csv(os.path.join(d, "paths.csv"), ["t", "i", "X", "Xbar"], rows, ctx.prov(sub))
    io.write_json(os.path.join(d, "summary.json"), {
        "provenance": ctx.prov(sub), "n": sc["n"], "dt": sc["dt"], "T": sc["T"],
        "increments_seed": paths.increments_seed, "increments_checksum": paths.increments_checksum,
        "consumed_checksums": paths.consumed_checksums,
        "max_coupling_gap": float(np.max(np.abs(paths.interacting - paths.surrogate)))})


def _write_report(ctx, sub, stem, report):
    d = ctx.subdir(sub)
    payload = report.to_dict()
    payload["provenance"] = ctx.prov(sub)
    io.write_json(os.path.join(d, f"{stem}.json"), payload)
    report.to_csv(os.path.join(d, f"{stem}.csv"), ctx.prov(sub))


def run_chaos(ctx):
    sub = "chaos"
    cc = ctx.cfg["chaos"]
    R = ctx.grid(sub)
    rep = experiments.chaos_rate(ctx.law, ctx.coeffs, R, cc["p"], cc["n_list"], cc["T"], cc["dt"],
                                 cc["replications"], ctx.cfg.seed, ctx.cfg.hash, ctx.threads,
                                 bootstrap=cc["bootstrap"])
    _write_report(ctx, sub, "chaos", rep)


def run_clt(ctx):
    sub = "clt"
    cc = ctx.cfg["clt"]
    R = ctx.grid(sub)
    specs = [experiments.ObservableSpec(_gamma(o["gamma"]), o["kind"], o["t"], o["label"])
             for o in cc["observables"]]
    rep, values = experiments.clt_experiment(ctx.law, ctx.coeffs, R, specs, cc["n"], cc["replications"],
                                             ctx.cfg.seed, cc["dt"], ctx.cfg.hash, ctx.threads,
                                             window=(R.x[0], R.x[-1]))
    _write_report(ctx, sub, "clt", rep)
    labels = [s.label for s in specs]
    rows = ((r, *v) for r, v in enumerate(values))
    io.write_csv(os.path.join(ctx.subdir(sub), "values.csv"), ["replication", *labels], rows, ctx.prov(sub))


def run_identity(ctx):
    sub = "identity"
    ic = ctx.cfg["identity"]
    R = ctx.grid(sub)
    rep = experiments.prelimit_refinement(ctx.law, ctx.coeffs, ctx.anti, R, _gamma(ic["gamma"]), ic["t"],
                                          ic["n"], ic["dts"], ic["replications"], ctx.cfg.seed,
                                          ctx.cfg.hash, ctx.threads)
    _write_report(ctx, sub, "identity", rep)


def run_wasserstein(ctx):
    sub = "wasserstein-rate"
    wc = ctx.cfg["wasserstein"]
    table = uniform_rate_experiment(wc["p"], wc["n_list"], wc["replications"],
                                    rng.stream(ctx.cfg.seed, "wasserstein-rate", 0))
    d = ctx.subdir(sub)
    table.to_csv(os.path.join(d, "rate.csv"), ctx.prov(sub))
    io.write_json(os.path.join(d, "rate.json"), {
        "provenance": ctx.prov(sub), "n": table.n, "p": table.p, "estimate": table.estimate,
        "stderr": table.stderr, "slope": table.slope, "replications": table.replications})


RUNNERS = {
    "solve-pme": run_solve_pme,
    "kernel": run_kernel,
    "simulate": run_simulate,
    "chaos": run_chaos,
    "clt": run_clt,
    "identity": run_identity,
    "wasserstein-rate": run_wasserstein,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rankflux", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rankflux {__version__}")
    subs = parser.add_subparsers(dest="subcommand", metavar="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = subs.add_parser(name, help=f"run {name}" if name != "all" else "run every subcommand")
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", default="out", help="output root (default: out)")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (overrides ${THREADS_ENV} and the config)")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    return parser


def _threads(arg, cfg):
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"${THREADS_ENV} must be an integer, got {env!r}") from None
    return cfg["threads"]


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed)
        threads = _threads(args.threads, cfg)
        if threads < 1:
            raise ConfigurationError("--threads must be at least 1")
        ctx = Context(cfg, args.out, threads)
        names = [s for s in SUBCOMMANDS if s != "all"] if args.subcommand == "all" else [args.subcommand]
        for name in names:
            start = time.perf_counter()
            RUNNERS[name](ctx)
            ctx.write_runlog(name, time.perf_counter() - start)
            print(f"{name}: {os.path.join(ctx.root, name)}", file=sys.stderr)
    except CFLViolation as exc:
        print(f"rankflux: {exc}", file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        print(f"rankflux: configuration error: {exc}", file=sys.stderr)
        return 2
    except RankfluxError as exc:
        print(f"rankflux: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
