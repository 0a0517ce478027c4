"""Experiment configuration.

Configs are YAML files validated by pydantic. Unknown keys are rejected and
every schema violation is reported at once. Everything has a default, so an
empty file is a valid config.
"""

import hashlib
import json
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .dke import BandwidthSchedule, t_lower_bound


class ConfigError(ValueError):
    """Invalid or unreadable config; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


RESULT_NEUTRAL = ("out_dir", "threads")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GaussMixtureTruth(_Strict):
    kind: Literal["gauss_mixture"] = "gauss_mixture"
    weights: List[float] = [0.5, 0.5]
    means: List[float] = [-1.0, 1.0]
    sds: List[float] = [0.5, 0.5]

    @model_validator(mode="after")
    def _check(self):
        if not (len(self.weights) == len(self.means) == len(self.sds) >= 1):
            raise ValueError("weights, means and sds must have the same nonzero length")
        if any(w <= 0 for w in self.weights) or abs(sum(self.weights) - 1) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to one")
        if any(s <= 0 for s in self.sds):
            raise ValueError("component sds must be positive")
        return self


class HeavyTailTruth(_Strict):
    kind: Literal["heavy_tail"]
    c2: float = Field(3.0, gt=1)
    loc: float = 0.0
    scale: float = Field(1.0, gt=0)


class KinkBumpTruth(_Strict):
    kind: Literal["kink_bump"]
    scale: float = Field(1.0, gt=0)


Truth = Annotated[Union[GaussMixtureTruth, HeavyTailTruth, KinkBumpTruth],
                  Field(discriminator="kind")]


class ErrorConfig(_Strict):
    kind: Literal["gaussian", "cauchy", "none"] = "gaussian"
    sigma: float = Field(0.25, ge=0, allow_inf_nan=False)


class KernelConfig(_Strict):
    flat_radius: float = Field(0.5, gt=0, lt=1)
    taper: Literal["polynomial", "smooth_exp"] = "polynomial"
    taper_degree: int = Field(12, ge=2)


class BandwidthConfig(_Strict):
    regime: Literal["supersmooth_lp", "supersmooth_sup", "accelerated"] = "supersmooth_lp"
    gamma: float = Field(0.25, gt=0, lt=1)
    eta: float = Field(2.0, gt=0)
    t_exponent: float = 1.25
    c3: Optional[float] = Field(2.0, gt=0)
    h: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _t_bound(self):
        if self.regime == "accelerated" and self.c3 is not None:
            bound = t_lower_bound(self.eta, self.c3)
            if not self.t_exponent > bound:
                raise ValueError(f"t_exponent={self.t_exponent:g} must exceed "
                                 f"(2+1/eta+1/c3)/(2+1/eta) = {bound:.6g}")
        return self

    def schedule(self):
        return BandwidthSchedule(self.regime, self.gamma, self.eta, self.t_exponent)


class GridConfig(_Strict):
    n_points: int = Field(4096, ge=16)
    pad: Optional[float] = Field(None, gt=0)


class PriorConfig(_Strict):
    alpha: float = Field(1.0, gt=0)
    mu0: float = 0.0
    sigma0sq: Optional[float] = Field(None, gt=0)
    a: float = Field(1.0, gt=0)
    b: float = Field(1.0, gt=0)
    k_trunc: Optional[int] = Field(None, ge=1)
    h_prior: Literal["invgamma", "exponential"] = "invgamma"
    lam: float = Field(1.0, gt=0)

    def overrides(self):
        """Keyword overrides for ``DpmmPrior.from_data``."""
        return self.model_dump(exclude_none=True)


class ChainSettings(_Strict):
    iters: int = Field(2000, ge=1)
    burnin: int = Field(1000, ge=0)
    thin: int = Field(2, ge=1)
    level: float = Field(0.9, gt=0, lt=1)
    grid_points: int = Field(512, ge=16)

    @model_validator(mode="after")
    def _kept(self):
        if not self.iters > self.burnin:
            raise ValueError("chain.iters must exceed chain.burnin")
        if len(range(self.burnin, self.iters, self.thin)) < 1:
            raise ValueError("chain settings keep zero draws")
        return self


class SimulateConfig(_Strict):
    n: int = Field(500, ge=1)


class RatesConfig(_Strict):
    n_grid: List[int] = [512, 2048, 8192, 32768]
    reps: int = Field(20, ge=10)
    methods: List[Literal["DKE", "DPMM-mean", "KDE", "naive-KDE"]] = ["DKE"]
    p_list: List[float] = [2.0]
    eval_points: int = Field(1024, ge=16)

    @model_validator(mode="after")
    def _grid(self):
        g = self.n_grid
        if len(g) < 4:
            raise ValueError("rates.n_grid needs at least four levels")
        ratios = [b / a for a, b in zip(g[:-1], g[1:])]
        if any(r <= 1 for r in ratios) or any(abs(r / ratios[0] - 1) > 1e-9 for r in ratios):
            raise ValueError("rates.n_grid must be geometric and increasing")
        if any(p < 1 for p in self.p_list):
            raise ValueError("rates.p_list entries must be at least 1")
        return self


class ConcentrationConfig(_Strict):
    mode: Literal["lemma1", "deviation", "dkw", "plugin-test"] = "lemma1"
    h_grid: List[float] = [0.8, 0.7, 0.6, 0.5, 0.4, 0.3]
    p: float = Field(2.0, ge=2)
    n: int = Field(500, ge=2)
    reps: int = Field(200, ge=1)
    h: Optional[float] = Field(None, gt=0)
    M1: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _decreasing(self):
        if any(b >= a for a, b in zip(self.h_grid[:-1], self.h_grid[1:])):
            raise ValueError("concentration.h_grid must be strictly decreasing")
        return self


class KernelCheckConfig(_Strict):
    r_max: int = Field(6, ge=0)


class ExperimentConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2 ** 64)
    out_dir: str = "out"
    threads: Optional[int] = Field(None, ge=1)
    truth: Truth = GaussMixtureTruth()
    error: ErrorConfig = ErrorConfig()
    kernel: KernelConfig = KernelConfig()
    bandwidth: BandwidthConfig = BandwidthConfig()
    grid: GridConfig = GridConfig()
    prior: PriorConfig = PriorConfig()
    chain: ChainSettings = ChainSettings()
    simulate: SimulateConfig = SimulateConfig()
    rates: RatesConfig = RatesConfig()
    concentration: ConcentrationConfig = ConcentrationConfig()
    kernel_check: KernelCheckConfig = KernelCheckConfig()

    def to_dict(self):
        return self.model_dump(mode="python")

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def canonical_json(self):
        """Compact JSON of every setting that can change results.

        ``out_dir`` and ``threads`` are left out: outputs are identical for
        any output location and thread count.
        """
        data = self.to_dict()
        for key in RESULT_NEUTRAL:
            data.pop(key)
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def with_updates(self, **sections):
        """Copy with nested updates, revalidated; ``sections`` map section names
        (or top-level keys) to values or dicts of field overrides."""
        data = self.to_dict()
        for key, val in sections.items():
            if isinstance(val, dict):
                data[key] = {**data[key], **val}
            else:
                data[key] = val
        return validate_config(data)


def _format_errors(exc):
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        out.append(f"{loc}: {err['msg']}")
    return out


def validate_config(data):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(["<root>: config must be a mapping"])
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def parse_config(path):
    """Read and validate a YAML config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError([f"YAML syntax error: {exc}"]) from None
    return validate_config(data)


def default_config():
    return ExperimentConfig()
