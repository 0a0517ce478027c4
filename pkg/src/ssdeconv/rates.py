"""Convergence-rate experiments.

A rate experiment crosses a geometric grid of sample sizes with replicate
datasets. Each cell simulates ``W = X + U`` once and fits every requested
estimator to the same data; the ``L_p`` errors against the known truth are
then regressed on ``log log n`` (supersmooth model) or ``log n``
(polynomial model).

Seeds: cell ``(i, r)`` (``i`` the index in ``n_grid``) draws its data from
``cell_seed(master, i, r)`` and its DPMM chain from
``cell_seed(master, i, r, 1)``.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .dke import (BandwidthSchedule, GridSpec, accelerated_sigma, bandwidth, dke_fit, kde,
                  lp_distance)
from .dpmm import ChainConfig, DpmmPrior, run_chain
from .error_models import ErrorModel
from .kernels import kn_tail_width, make_flat_top_kernel
from .parallel import cell_seed, ordered_map
from .truths import make_truth

log = logging.getLogger(__name__)

METHODS = ("DKE", "DPMM-mean", "KDE", "naive-KDE")
MODELS = ("supersmooth", "polynomial")

__all__ = ["RateConfig", "RateReport", "RateFit", "run_rate_experiment", "fit_log_rate",
           "accelerated_sigma", "METHODS", "MODELS", "eval_grid"]


@dataclass(frozen=True)
class RateConfig:
    """Experiment definition.

    ``error`` is ``{"kind": ..., "sigma": ...}``. With
    ``bandwidth.regime == "accelerated"`` the error scale follows
    ``sigma_n`` and ``error["sigma"]`` is ignored.

    Methods: ``DKE``; ``DPMM-mean`` (posterior mean of the mixture
    model); ``KDE`` (ordinary KDE with the same kernel and bandwidth, which
    ignores the error); ``naive-KDE`` (``scipy.stats.gaussian_kde`` of ``W``
    with Scott's rule).
    """

    truth: dict
    error: dict
    n_grid: tuple
    reps: int = 20
    methods: tuple = ("DKE",)
    p_list: tuple = (2.0,)
    bandwidth: BandwidthSchedule = BandwidthSchedule()
    seed: int = 0
    kernel: dict = field(default_factory=lambda: dict(flat_radius=0.5, taper="polynomial",
                                                      taper_degree=12))
    eval_points: int = 1024
    chain: dict = field(default_factory=lambda: dict(iters=2000, burnin=1000, thin=2))
    prior: dict = field(default_factory=dict)
    threads: Optional[int] = None

    def __post_init__(self):
        grid = np.asarray(self.n_grid, dtype=float)
        if grid.size < 4:
            raise ValueError("n_grid needs at least four levels")
        ratios = grid[1:] / grid[:-1]
        if np.any(ratios <= 1) or not np.allclose(ratios, ratios[0], rtol=1e-9):
            raise ValueError("n_grid must be geometric and increasing")
        if self.reps < 10:
            raise ValueError("reps must be at least 10")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"unknown methods {bad}; expected a subset of {METHODS}")
        if any(float(p) < 1 for p in self.p_list):
            raise ValueError("p must be at least 1")
        kind = self.error.get("kind", "gaussian")
        if kind not in ("gaussian", "cauchy"):
            raise ValueError(f"rate experiments support gaussian or cauchy errors, not {kind!r}")
        sigma = float(self.error.get("sigma", 0.0))
        if not (math.isfinite(sigma) and sigma >= 0):
            raise ValueError("error sigma must be finite and nonnegative")


@dataclass
class RateFit:
    method: str
    model: str
    p: float
    slope: float
    ci_lo: float
    ci_hi: float
    n_levels: int


@dataclass
class RateReport:
    rows: list
    fits: list
    failures: list
    config: dict

    def errors_by_n(self, method, p=2.0):
        out = {}
        for r in self.rows:
            if r["method"] == method and r["p"] == float(p) and np.isfinite(r["error"]):
                out.setdefault(r["n"], []).append(r["error"])
        return {n: np.asarray(v) for n, v in sorted(out.items())}

    def median_errors(self, method, p=2.0):
        return {n: float(np.median(v)) for n, v in self.errors_by_n(method, p).items()}


def fit_log_rate(errors_by_n, model="supersmooth", n_boot=2000, level=0.95, seed=0):
    """Least-squares rate slope with a replicate-bootstrap percentile CI.

    ``errors_by_n`` maps each ``n`` to an array of replicate errors. The
    response is the per-``n`` mean of ``log error``; the regressor is
    ``log log n`` for ``supersmooth`` and ``log n`` for ``polynomial``.
    Bootstrap resamples replicates within each ``n``.

    Returns
    -------
    dict with ``slope``, ``ci`` and ``n_levels``.
    """
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}")
    ns = sorted(errors_by_n)
    if len(ns) < 4:
        raise ValueError("need at least four n-levels")
    logs = []
    for n in ns:
        e = np.atleast_1d(np.asarray(errors_by_n[n], dtype=float))
        if e.size == 0 or np.any(~np.isfinite(e)) or np.any(e <= 0):
            raise ValueError("errors must be positive and finite")
        logs.append(np.log(e))
    ln = np.log(np.asarray(ns, dtype=float))
    x = np.log(ln) if model == "supersmooth" else ln
    xc = x - x.mean()
    denom = float(xc @ xc)

    def slope(ys):
        return float(xc @ (ys - ys.mean()) / denom)

    s = slope(np.array([l.mean() for l in logs]))
    rng = np.random.default_rng(seed)
    boot = np.empty(n_boot)
    for b in range(n_boot):
        ys = np.array([l[rng.integers(0, l.size, l.size)].mean() for l in logs])
        boot[b] = slope(ys)
    lo, hi = np.quantile(boot, [(1 - level) / 2, (1 + level) / 2])
    return dict(slope=s, ci=(float(lo), float(hi)), n_levels=len(ns))


def eval_grid(truth, n_points):
    lo, hi = truth.support(0.9999)
    return np.linspace(lo, hi, n_points)


def _aligned_grid(x_eval, W, pad):
    """Fit grid on the lattice of ``x_eval`` covering the sample plus ``pad``."""
    dx = x_eval[1] - x_eval[0]
    left = math.ceil(max(x_eval[0] - W.min() + pad, 0.0) / dx)
    right = math.ceil(max(W.max() - x_eval[-1] + pad, 0.0) / dx)
    n = x_eval.size + left + right
    return GridSpec(x_eval[0] - left * dx, x_eval[-1] + right * dx, n), left


def _dke_on(x_eval, W, kernel, error, h):
    pad = max(5 * h, 4 * error.sigma, kn_tail_width(kernel, error, h) * h)
    grid, left = _aligned_grid(x_eval, W, pad)
    est = dke_fit(W, kernel, error, h, grid)
    return est.values[left:left + x_eval.size]


def _error_at(cfg, n):
    kind = cfg.error.get("kind", "gaussian")
    if cfg.bandwidth.regime == "accelerated":
        sigma = accelerated_sigma(n, cfg.bandwidth.eta, cfg.bandwidth.t_exponent)
    else:
        sigma = float(cfg.error.get("sigma", 0.0))
    return ErrorModel.gaussian(sigma) if kind == "gaussian" else ErrorModel.cauchy(sigma)


def _bandwidth_at(cfg, n, error):
    if cfg.bandwidth.regime == "accelerated" or not error.is_null:
        return bandwidth(cfg.bandwidth, n, error)
    # no error: the supersmooth schedule is undefined, fall back to the
    # accelerated-style power law so the identity comparison with KDE runs
    return accelerated_sigma(n, cfg.bandwidth.eta, cfg.bandwidth.t_exponent)


def _run_cell(cfg, truth, kernel, x_eval, f0, i, r):
    n = int(cfg.n_grid[i])
    seed = cell_seed(cfg.seed, i, r)
    rng = np.random.default_rng(seed)
    error = _error_at(cfg, n)
    X = truth.sample(n, rng)
    W = X + error.sample(n, rng)
    rows, failures = [], []
    for method in cfg.methods:
        try:
            if method == "DKE":
                fit = _dke_on(x_eval, W, kernel, error, _bandwidth_at(cfg, n, error))
            elif method == "KDE":
                fit = kde(W, kernel, _bandwidth_at(cfg, n, error), x_eval)
            elif method == "naive-KDE":
                fit = stats.gaussian_kde(W)(x_eval)
            else:
                prior = DpmmPrior.from_data(W, **cfg.prior)
                chain = ChainConfig(seed=cell_seed(cfg.seed, i, r, 1),
                                    grid=GridSpec(x_eval[0], x_eval[-1], x_eval.size),
                                    **cfg.chain)
                fit = run_chain(W, error, prior, chain).mean
            errs = [lp_distance(fit, f0, p, x_eval) for p in cfg.p_list]
        except Exception as exc:  # quarantined; the run continues
            log.warning("cell n=%d rep=%d method=%s failed: %s", n, r, method, exc)
            failures.append(dict(n=n, rep=r, method=method, reason=f"{type(exc).__name__}: {exc}"))
            errs = [math.nan] * len(cfg.p_list)
        for p, e in zip(cfg.p_list, errs):
            rows.append(dict(n=n, rep=r, method=method, p=float(p), error=float(e), seed=seed))
    return rows, failures


def run_rate_experiment(cfg):
    """Run every ``(n, replicate)`` cell and fit rate slopes.

    Rows are ordered by ``(n, rep, method, p)`` regardless of scheduling.
    Slopes are fitted under both models for every method and ``p``; a fit is
    skipped (and listed in ``failures``) when fewer than four ``n``-levels
    have usable errors.
    """
    truth = make_truth(cfg.truth)
    kernel = make_flat_top_kernel(**cfg.kernel)
    x_eval = eval_grid(truth, cfg.eval_points)
    f0 = truth.pdf(x_eval)
    cells = [(i, r) for i in range(len(cfg.n_grid)) for r in range(cfg.reps)]
    results = ordered_map(lambda c: _run_cell(cfg, truth, kernel, x_eval, f0, *c), cells,
                          cfg.threads)
    rows = [row for res in results for row in res[0]]
    failures = [f for res in results for f in res[1]]
    order = {m: j for j, m in enumerate(cfg.methods)}
    rows.sort(key=lambda d: (d["n"], d["rep"], order[d["method"]], d["p"]))

    report = RateReport(rows, [], failures, config_echo(cfg))
    for method in cfg.methods:
        for p in cfg.p_list:
            by_n = {n: v for n, v in report.errors_by_n(method, p).items()
                    if v.size and np.all(v > 0)}
            for model in MODELS:
                try:
                    f = fit_log_rate(by_n, model, seed=cfg.seed)
                except ValueError as exc:
                    failures.append(dict(n=-1, rep=-1, method=method,
                                         reason=f"fit {model}: {exc}"))
                    continue
                report.fits.append(RateFit(method, model, float(p), f["slope"], f["ci"][0],
                                           f["ci"][1], f["n_levels"]))
    return report


def config_echo(cfg):
    out = asdict(cfg)
    out["n_grid"] = [int(n) for n in cfg.n_grid]
    return out
