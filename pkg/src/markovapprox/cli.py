"""Command-line interface: ``markovapprox {approx,inverse,estimate,sweep,sample}``."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .covmodels import (CovMatrix, build_cov_matrix, build_design_matrix, format_float,
                        read_matrix_csv, write_matrix_csv)
from .errors import ConfigError, NumericalError
from .estimate import FullInverse, MarkovApprox, estimate, parse_weight
from .markov import (banded_inverse, dma_extend, factorize, is_markov, write_banded_csv,
                     write_factor_csv)
from .simulate import (convergence_profile, format_stacked, monte_carlo_validate, run_sweep,
                       sweep_csv_text, write_curves)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class _Ctx:
    def __init__(self, args, cfg: RunConfig):
        self.args, self.cfg = args, cfg
        self.digest = cfg.digest()
        self.out = args.out or cfg.output.dir
        self.files = []

    @property
    def header(self):
        return [f"config_sha256={self.digest}"]

    def path(self, name):
        os.makedirs(self.out, exist_ok=True)
        p = os.path.join(self.out, name)
        self.files.append(name)
        return p

    def write_text(self, name, text):
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)

    def say(self, msg):
        if not self.args.quiet:
            print(msg)

    def manifest(self, command):
        doc = {"command": command, "config_sha256": self.digest, "version": __version__,
               "files": sorted(self.files), "config": self.cfg.model_dump(mode="json")}
        self.write_text("manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _covariance(cfg: RunConfig):
    """Input covariance: a matrix file if given, else the kernel on the grid."""
    if cfg.matrix is not None:
        return CovMatrix(read_matrix_csv(cfg.matrix), jitter=cfg.jitter)
    kernel = cfg.build_kernel()
    return build_cov_matrix(kernel, cfg.build_grid(), jitter=cfg.jitter, variance=cfg.variance)


def _band_diagnostics(K, Km, m):
    a, b = np.asarray(K), np.asarray(Km)
    i, j = np.indices(a.shape)
    inband = np.abs(i - j) <= m
    d_in = float(np.max(np.abs(a - b)[inband]))
    d_out = float(np.max(np.abs(a - b)[~inband])) if (~inband).any() else 0.0
    return d_in, d_out


def cmd_approx(ctx: _Ctx):
    K = _covariance(ctx.cfg)
    m = ctx.cfg.resolve_m(K.n)
    Km = dma_extend(K, m)
    factor = factorize(K, m)
    write_matrix_csv(ctx.path("adjoint.csv"), Km, ctx.header)
    write_factor_csv(ctx.path("factor.csv"), factor, ctx.header)
    d_in, d_out = _band_diagnostics(K, Km, m)
    chk = is_markov(Km, m, 1e-8)
    ctx.say(f"n={K.n} m={m} max_inband_residual={format_float(d_in)} "
            f"max_outband_change={format_float(d_out)} "
            f"markov_violation={format_float(chk.violation)} markov_ok={str(chk.ok).lower()}")


def cmd_inverse(ctx: _Ctx):
    K = _covariance(ctx.cfg)
    m = ctx.cfg.resolve_m(K.n)
    factor = factorize(K, m)
    C = banded_inverse(factor)
    write_banded_csv(ctx.path("inverse.csv"), C, ctx.header)
    write_factor_csv(ctx.path("factor.csv"), factor, ctx.header)
    Km = dma_extend(K, m)
    resid = float(np.max(np.abs(C @ Km.values - np.eye(K.n))))
    ctx.say(f"n={K.n} m={m} roundtrip_residual={format_float(resid)}")


def _read_vector(path):
    vals = []
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            ln = ln.strip()
            if ln and not ln.startswith("#"):
                vals += [float(v) for v in ln.split(",") if v.strip()]
    return np.array(vals)


def _weight(cfg: RunConfig, n: int):
    if cfg.weight is not None:
        return parse_weight(cfg.weight, n)
    if cfg.m is not None:
        return MarkovApprox(cfg.resolve_m(n))
    return FullInverse()


def cmd_estimate(ctx: _Ctx):
    cfg = ctx.cfg
    grid = cfg.build_grid()
    K = _covariance(cfg)
    F = build_design_matrix(cfg.build_basis(), grid)
    if K.n != grid.n:
        raise ConfigError(f"covariance order {K.n} does not match grid size {grid.n}")
    if cfg.measurements is None:
        raise ConfigError("estimate needs a 'measurements' file")
    Z = _read_vector(cfg.measurements)
    if Z.shape != (grid.n,):
        raise ConfigError(f"measurement file has {Z.size} values, grid has {grid.n}")
    w = _weight(cfg, grid.n)
    res = estimate(F, w, K, Z)
    lines = [f"# {h}" for h in ctx.header] + [f"# weight={res.weight}",
                                               "index,coefficient,std_error"]
    se = np.sqrt(np.diag(res.dispersion))
    lines += [f"{i},{format_float(b)},{format_float(s)}"
              for i, (b, s) in enumerate(zip(res.coefficients, se))]
    lines.append(f"# det={format_float(res.det)} trace={format_float(res.trace)}")
    ctx.write_text("estimate.csv", "\n".join(lines) + "\n")
    write_matrix_csv(ctx.path("dispersion.csv"), res.dispersion,
                     ctx.header + [f"weight={res.weight}"])
    ctx.say(f"weight={res.weight} coefficients="
            + " ".join(format_float(b) for b in res.coefficients))


def cmd_sweep(ctx: _Ctx):
    sc = ctx.cfg.sweep_config()
    result = run_sweep(sc, jobs=ctx.args.jobs)
    ctx.write_text("sweep.csv", sweep_csv_text(result))
    curves = write_curves(os.path.join(ctx.out, "curves"), result)
    ctx.files += [os.path.join("curves", os.path.basename(p)) for p in curves]
    table = format_stacked(result)
    ctx.write_text("table.txt", table)
    prof = convergence_profile(result)
    lines = [f"# {h}" for h in ctx.header] + [f"# tolerance={format_float(sc.tolerance)}",
                                               "cell,kernel,params,model,m_converged"]
    for cell, m in prof.per_cell:
        r = result.cell_records(cell)[0]
        lines.append(f"{cell},{r.kernel},{r.params},{r.model},{'' if m is None else m}")
    lines.append("# histogram " + " ".join(f"{k}:{v}" for k, v in prof.histogram.items()))
    ctx.write_text("convergence.csv", "\n".join(lines) + "\n")
    for rep in result.monte_carlo:
        ctx.write_text(f"monte_carlo_{rep.cell:03d}.csv",
                       f"# {ctx.header[0]}\n" + rep.to_text())
    failed = sum(not r.ok for r in result.records)
    ctx.say(table.rstrip())
    ctx.say(f"cells={len(sc.cells)} records={len(result.records)} failed={failed}")


def cmd_sample(ctx: _Ctx):
    cfg = ctx.cfg
    mc = cfg.monte_carlo_config()
    grid = cfg.build_grid()
    weights = [parse_weight(w, grid.n) for w in mc.weights]
    if cfg.m is not None:
        extra = MarkovApprox(cfg.resolve_m(grid.n))
        if extra not in weights:
            weights.append(extra)
    rep = monte_carlo_validate(cfg.build_kernel(), cfg.build_basis(), grid, weights,
                               samples=mc.samples, seed=mc.seed, beta=mc.beta,
                               jitter=cfg.jitter, variance=cfg.variance)
    text = f"# {ctx.header[0]}\n" + rep.to_text()
    ctx.write_text("sample.csv", text)
    ctx.say(text.rstrip())


COMMANDS = {"approx": cmd_approx, "inverse": cmd_inverse, "estimate": cmd_estimate,
            "sweep": cmd_sweep, "sample": cmd_sample}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="markovapprox",
                                     description="Banded Markov approximation of covariance "
                                                 "matrices and GLS trend estimation.")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--m", help="connectivity, an integer or 'n-1'")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. grid.n=32")
    common.add_argument("--dry-run", action="store_true", help="validate the config and stop")
    common.add_argument("--quiet", action="store_true", help="suppress standard output")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"approx": "adjoint matrix and predictor factor",
             "inverse": "banded inverse of the adjoint matrix",
             "estimate": "GLS coefficients and dispersion for a measurement vector",
             "sweep": "dispersion over connectivity for kernel/model cells",
             "sample": "Monte Carlo check of analytic dispersion"}
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _overrides(args) -> list:
    sets = list(args.set)
    if args.m is not None:
        sets.append(f"m={args.m}")
    if args.seed is not None:
        sets.append(f"seed={args.seed}")
    return sets


def _error(kind, code, message):
    line = json.dumps({"error": kind, "exit_code": code, "message": str(message)})
    print(line, file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        return _error("ConfigError", EXIT_CONFIG, "--jobs must be >= 1")
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.seed is not None and cfg.monte_carlo is not None:
            cfg = cfg.model_copy(update={
                "monte_carlo": cfg.monte_carlo.model_copy(update={"seed": args.seed})})
        ctx = _Ctx(args, cfg)
        if args.dry_run:
            _validate_for(args.command, cfg)
            ctx.say(f"config ok command={args.command} config_sha256={ctx.digest}")
            return EXIT_OK
        COMMANDS[args.command](ctx)
        ctx.manifest(args.command)
    except NumericalError as exc:
        return _error(type(exc).__name__, EXIT_NUMERICAL, exc)
    except (ValueError, OSError) as exc:
        return _error(type(exc).__name__, EXIT_CONFIG, exc)
    return EXIT_OK


def _validate_for(command: str, cfg: RunConfig) -> None:
    """Build every object a command needs without running it."""
    grid = cfg.build_grid()
    if command in ("approx", "inverse"):
        if cfg.matrix is None:
            cfg.build_kernel()
        cfg.resolve_m(grid.n)
    elif command == "estimate":
        if cfg.matrix is None:
            cfg.build_kernel()
        cfg.build_basis()
        if cfg.measurements is None:
            raise ConfigError("estimate needs a 'measurements' file")
        _weight(cfg, grid.n)
    elif command == "sweep":
        cfg.sweep_config()
    elif command == "sample":
        cfg.build_kernel()
        cfg.build_basis()
        for w in cfg.monte_carlo_config().weights:
            parse_weight(w, grid.n)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
