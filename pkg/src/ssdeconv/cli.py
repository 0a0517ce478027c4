"""Command-line entry point.

Every subcommand reads an optional YAML config, applies flag overrides and
writes CSV artifacts into the output directory. Each CSV starts with
``#``-prefixed metadata rows (tool version, command, config hash, master
seed and the full config as JSON) so that outputs are self-describing.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error. Failures
print a JSON object to stderr and, when possible, leave ``error.json`` in
the output directory.
"""

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, default_config, parse_config
from .error_models import ErrorModel

log = logging.getLogger("ssdeconv")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SUBCOMMANDS = ("simulate", "estimate-dke", "fit-dpmm", "rates", "kernel-check", "concentration")


class UsageError(Exception):
    pass


# output ---------------------------------------------------------------------


class Artifacts:
    """Atomic writer confined to one output directory."""

    def __init__(self, root, cfg, command):
        self.root = Path(root).resolve()
        self.cfg = cfg
        self.command = command
        self.written = []

    def _target(self, name):
        path = (self.root / name).resolve()
        if self.root != path and self.root not in path.parents:
            raise UsageError(f"refusing to write outside {self.root}: {name}")
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def header(self):
        return [f"# tool: ssdeconv {__version__}", f"# command: {self.command}",
                f"# config_hash: {self.cfg.config_hash()}", f"# seed: {self.cfg.seed}",
                f"# config: {self.cfg.canonical_json()}"]

    def write_text(self, name, text):
        path = self._target(name)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.written.append(str(path))
        return path

    def write_csv(self, name, columns, rows):
        buf = io.StringIO()
        buf.write("\n".join(self.header()) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        return self.write_text(name, buf.getvalue())

    def write_json(self, name, payload):
        return self.write_text(name, json.dumps(_json_clean(payload), indent=2, sort_keys=True,
                                                default=_json_default, allow_nan=False) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _json_clean(obj):
    """Replace non-finite floats by ``None`` so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not np.isfinite(obj):
        return None
    return obj


def read_sample(path):
    """One-column CSV; ``#`` comments and a non-numeric header row are skipped."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"input file not found: {path}")
    vals = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cell = line.split(",")[0].strip()
            try:
                vals.append(float(cell))
            except ValueError:
                if vals:
                    raise UsageError(f"non-numeric value {cell!r} in {path}") from None
    if not vals:
        raise UsageError(f"no observations in {path}")
    return np.asarray(vals)


# model construction ---------------------------------------------------------


def build_error(cfg):
    e = cfg.error
    if e.kind == "none" or e.sigma == 0:
        return ErrorModel.none()
    return ErrorModel.gaussian(e.sigma) if e.kind == "gaussian" else ErrorModel.cauchy(e.sigma)


def build_kernel(cfg):
    from .kernels import make_flat_top_kernel

    return make_flat_top_kernel(**cfg.kernel.model_dump())


def build_truth(cfg):
    from .truths import make_truth

    return make_truth(cfg.truth.model_dump())


def resolve_h(cfg, n, error):
    from .dke import accelerated_sigma, bandwidth

    if cfg.bandwidth.h is not None:
        return cfg.bandwidth.h
    sched = cfg.bandwidth.schedule()
    if sched.regime != "accelerated" and error.is_null:
        return accelerated_sigma(max(n, 3), sched.eta, sched.t_exponent)
    return bandwidth(sched, n, error)


# subcommands ----------------------------------------------------------------


def cmd_simulate(cfg, out, args):
    truth = build_truth(cfg)
    error = build_error(cfg)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.simulate.n
    X = truth.sample(n, rng)
    W = X + error.sample(n, rng)
    out.write_csv("W.csv", ["w"], ([w] for w in W))
    out.write_csv("X.csv", ["x"], ([x] for x in X))


def cmd_estimate_dke(cfg, out, args):
    from .dke import GridSpec, dke_fit

    if not args.input:
        raise UsageError("estimate-dke needs --input")
    W = read_sample(args.input)
    error = build_error(cfg)
    kernel = build_kernel(cfg)
    h = resolve_h(cfg, W.size, error)
    grid = GridSpec.around(W, h, error, cfg.grid.n_points, pad=cfg.grid.pad, kernel=kernel)
    est = dke_fit(W, kernel, error, h, grid)
    out.write_csv("dke.csv", ["x", "fhat"], zip(est.x, est.values))
    out.write_json("dke_meta.json", dict(h=h, n=int(W.size), kernel=est.kernel_id,
                                         error=est.error_id, mass=est.mass, **est.meta))


def cmd_fit_dpmm(cfg, out, args):
    from .dpmm import ChainConfig, DpmmPrior, default_grid, run_chain

    if not args.input:
        raise UsageError("fit-dpmm needs --input")
    W = read_sample(args.input)
    error = build_error(cfg)
    prior = DpmmPrior.from_data(W, **cfg.prior.overrides())
    ch = cfg.chain
    chain = ChainConfig(iters=ch.iters, burnin=ch.burnin, thin=ch.thin, seed=cfg.seed,
                        level=ch.level, grid=default_grid(W, ch.grid_points))
    summ = run_chain(W, error, prior, chain)
    out.write_csv("dpmm_summary.csv", ["x", "mean", "lower", "upper"],
                  zip(summ.x, summ.mean, summ.lower, summ.upper))
    cols = ["draw", "h"] + [f"f{j}" for j in range(summ.x.size)]
    out.write_csv("dpmm_draws.csv", cols,
                  ([j, summ.h_draws[j], *summ.draws[j]] for j in range(summ.draws.shape[0])))
    out.write_json("dpmm_diagnostics.json",
                   dict(summ.diagnostics, mass=summ.mass, prior=dataclasses.asdict(prior)))


def cmd_rates(cfg, out, args):
    from .rates import RateConfig, run_rate_experiment

    rc = cfg.rates
    err = cfg.error
    rate_cfg = RateConfig(
        truth=cfg.truth.model_dump(),
        error=dict(kind="gaussian" if err.kind == "none" else err.kind,
                   sigma=0.0 if err.kind == "none" else err.sigma),
        n_grid=tuple(rc.n_grid), reps=rc.reps, methods=tuple(rc.methods),
        p_list=tuple(rc.p_list), bandwidth=cfg.bandwidth.schedule(), seed=cfg.seed,
        kernel=cfg.kernel.model_dump(), eval_points=rc.eval_points,
        chain=dict(iters=cfg.chain.iters, burnin=cfg.chain.burnin, thin=cfg.chain.thin),
        prior=cfg.prior.overrides(), threads=cfg.threads)
    rep = run_rate_experiment(rate_cfg)
    out.write_csv("report.csv", ["n", "rep", "method", "p", "error", "seed"],
                  ([r["n"], r["rep"], r["method"], r["p"], r["error"], r["seed"]]
                   for r in rep.rows))
    out.write_csv("fits.csv", ["method", "model", "slope", "ci_lo", "ci_hi", "p", "n_levels"],
                  ([f.method, f.model, f.slope, f.ci_lo, f.ci_hi, f.p, f.n_levels]
                   for f in rep.fits))
    if rep.failures:
        out.write_csv("failures.csv", ["n", "rep", "method", "reason"],
                      ([f["n"], f["rep"], f["method"], f["reason"]] for f in rep.failures))
    for method in rate_cfg.methods:
        for p in rate_cfg.p_list:
            med = rep.median_errors(method, p)
            out.write_csv(f"plotdata/median_error_{method}_p{p:g}.csv", ["n", "median_error"],
                          sorted(med.items()))


def cmd_kernel_check(cfg, out, args):
    from .kernels import QuadratureError, kernel_moment, kernel_moment_shifted

    kernel = build_kernel(cfg)
    rows = []
    for r in range(cfg.kernel_check.r_max + 1):
        try:
            rows.append([r, kernel_moment(kernel, r), kernel_moment_shifted(kernel, r), "ok"])
        except QuadratureError as exc:
            rows.append([r, exc.estimate, float("nan"), f"not-converged: {exc}"])
    out.write_csv("moments.csv", ["r", "moment", "shifted_grid_check", "status"], rows)
    z = np.linspace(-20, 20, 801)
    t = np.linspace(-1.2, 1.2, 481)
    out.write_csv("plotdata/kernel_K.csv", ["z", "K"], zip(z, kernel.K(z)))
    out.write_csv("plotdata/kernel_phi.csv", ["t", "phi"], zip(t, kernel.phi(t)))


def cmd_concentration(cfg, out, args):
    from . import concentration as conc
    from .dke import xi_supersmooth

    cc = cfg.concentration
    error = build_error(cfg)
    kernel = build_kernel(cfg)
    mode = args.mode or cc.mode
    if mode == "lemma1":
        tab = conc.check_lemma1_norm(kernel, error, np.asarray(cc.h_grid), cc.p)
        out.write_csv("lemma1.csv", ["h", "norm", "bound", "ratio", "p"],
                      ([r["h"], r["norm"], r["bound"], r["ratio"], r["p"]] for r in tab.rows()))
        out.write_json("lemma1_fit.json", dict(slope=tab.slope, ci=list(tab.ci), p=cc.p,
                                               trend_ok=tab.trend_ok,
                                               failures=tab.failures))
        return
    truth = build_truth(cfg)
    h = cc.h if cc.h is not None else resolve_h(cfg, cc.n, error)
    if mode == "deviation":
        fit = conc.mc_deviation(truth, kernel, error, h, cc.n, cc.reps, cc.p, cfg.seed,
                                cfg.threads)
        name = "deviation"
    elif mode == "dkw":
        fit = conc.dkw_supnorm_check(truth, error, cc.n, cc.reps, cfg.seed, cfg.threads)
        name = "dkw"
    else:
        xi = xi_supersmooth(cc.n, cfg.bandwidth.eta, error.beta)
        rate = conc.plugin_rejection_rate(truth, kernel, error, cc.n, h, cc.M1, xi,
                                          cc.reps, cc.p, cfg.seed, cfg.threads)
        out.write_csv("plugin.csv", ["n", "h", "xi_n", "M1", "p", "rejection_rate"],
                      [[cc.n, h, xi, cc.M1, cc.p, rate]])
        return
    out.write_csv(f"{name}.csv", ["threshold", "exceedance"],
                  zip(fit.thresholds, fit.probs))
    out.write_json(f"{name}_summary.json", dict(log_c=fit.coef[0], decay=fit.coef[1],
                                                model=fit.model, seed=fit.seed, **fit.extra))


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate-dke": cmd_estimate_dke,
    "fit-dpmm": cmd_fit_dpmm,
    "rates": cmd_rates,
    "kernel-check": cmd_kernel_check,
    "concentration": cmd_concentration,
}


# argument handling ----------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML experiment config")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides out_dir)")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed")
    common.add_argument("--threads", type=int, metavar="N",
                        help="worker threads (fallback: $DECONV_THREADS)")
    common.add_argument("--n", type=int, help="sample size override")
    common.add_argument("--sigma", type=float, help="error scale override")
    common.add_argument("--h", type=float, help="explicit bandwidth")
    common.add_argument("--p", type=float, help="norm order override")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ssdeconv", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"ssdeconv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    helps = {
        "simulate": "draw X from the truth and write W = X + U",
        "estimate-dke": "deconvoluting kernel estimate from a sample CSV",
        "fit-dpmm": "DPMM posterior for the error-free density",
        "rates": "convergence-rate experiment over an n-grid",
        "kernel-check": "kernel moments and transforms",
        "concentration": "concentration diagnostics",
    }
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common], help=helps[name])
        if name in ("estimate-dke", "fit-dpmm"):
            sp.add_argument("--input", metavar="CSV", help="one-column sample file")
        if name == "concentration":
            sp.add_argument("--mode", choices=("lemma1", "deviation", "dkw", "plugin-test"))
    return parser


def apply_overrides(cfg, args):
    upd = {}
    if args.seed is not None:
        upd["seed"] = args.seed
    if args.out is not None:
        upd["out_dir"] = args.out
    threads = args.threads
    if threads is None and os.environ.get("DECONV_THREADS"):
        threads = int(os.environ["DECONV_THREADS"])
    if threads is not None:
        upd["threads"] = threads
    if args.sigma is not None:
        upd["error"] = dict(sigma=args.sigma)
    if args.h is not None:
        upd["bandwidth"] = dict(h=args.h)
        upd["concentration"] = dict(h=args.h)
    if args.n is not None:
        upd["simulate"] = dict(n=args.n)
        upd.setdefault("concentration", {})["n"] = args.n
    if args.p is not None:
        upd.setdefault("concentration", {})["p"] = args.p
        upd["rates"] = dict(p_list=[args.p])
    return cfg.with_updates(**upd) if upd else cfg


def _fail(code, kind, message, command, out_dir=None, details=None):
    payload = dict(error=kind, message=message, command=command, exit_code=code)
    if details:
        payload["details"] = details
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    if out_dir is not None:
        try:
            root = Path(out_dir)
            root.mkdir(parents=True, exist_ok=True)
            (root / "error.json").write_text(text + "\n", encoding="utf-8")
        except OSError:
            pass
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.command
    try:
        cfg = parse_config(args.config) if args.config else default_config()
        cfg = apply_overrides(cfg, args)
    except ConfigError as exc:
        return _fail(EXIT_USAGE, "ConfigError", str(exc), command, details=exc.errors)
    except ValueError as exc:
        return _fail(EXIT_USAGE, "UsageError", str(exc), command)
    out = Artifacts(cfg.out_dir, cfg, command)
    try:
        COMMANDS[command](cfg, out, args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "UsageError", str(exc), command, cfg.out_dir)
    except Exception as exc:
        log.debug("failure", exc_info=True)
        return _fail(EXIT_RUNTIME, type(exc).__name__, str(exc), command, cfg.out_dir)
    for path in out.written:
        log.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
