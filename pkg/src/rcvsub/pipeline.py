"""End-to-end refitted cross-validation with subsampling.

Each of the two passes selects covariates on one half (SCAD on a uniform
pilot draw) and estimates all ``p`` coefficients on the other half from a
single score-weighted subsample.  The two passes are then averaged.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .dataset import FoldSplit, split_halves, view
from .errors import ConfigError, InputError, RcvError, SizeError
from .estimator import SweepResult, default_rho, partial_regression_sweep
from .models import ModelSpec, as_model
from .sampler import SamplerConfig, child_rng, child_seed, uniform_without_replacement
from .scad import ActiveSet, ScadConfig, fit_scad


@dataclass(frozen=True)
class RcvConfig:
    model: ModelSpec = field(default_factory=lambda: ModelSpec("linear"))
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    scad: ScadConfig = field(default_factory=ScadConfig)
    level: float = 0.95
    seed: int = 0
    rho: float | None = None        # None: plug-in min(1, 2r/n)
    threads: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "model", as_model(self.model))
        if not 0.0 < self.level < 1.0:
            raise ConfigError("confidence level must lie in (0, 1)")
        if self.rho is not None and not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must lie in [0, 1]")


@dataclass(frozen=True)
class CoefEstimate:
    j: int
    name: str
    beta1: float
    beta2: float
    beta_hat: float
    sigma1: float
    sigma2: float
    sigma_hat: float
    ci_lo: float
    ci_hi: float
    selected_fold1: bool
    selected_fold2: bool
    status: str = "ok"


@dataclass
class RcvResult:
    coefs: list[CoefEstimate]
    active1: np.ndarray | None      # selected on fold 1 (used to estimate on fold 2)
    active2: np.ndarray | None
    degraded: bool = False
    timings: dict = field(default_factory=dict)
    passes: dict = field(default_factory=dict, repr=False)

    def _col(self, name):
        return np.array([getattr(c, name) for c in self.coefs], dtype=float)

    @property
    def beta(self):
        return self._col("beta_hat")

    @property
    def sigma(self):
        return self._col("sigma_hat")

    @property
    def beta1(self):
        return self._col("beta1")

    @property
    def beta2(self):
        return self._col("beta2")

    @property
    def sigma1(self):
        return self._col("sigma1")

    @property
    def sigma2(self):
        return self._col("sigma2")

    @property
    def ci(self):
        return np.column_stack([self._col("ci_lo"), self._col("ci_hi")])


def z_value(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise InputError("level must lie in (0, 1)")
    if level == 0.95:
        return 1.96
    return float(norm.ppf(0.5 + level / 2.0))


def confidence_interval(beta_hat: float, sigma_hat: float, level: float = 0.95):
    if not sigma_hat > 0:
        raise InputError(f"standard error must be positive, got {sigma_hat}")
    z = z_value(level)
    return beta_hat - z * sigma_hat, beta_hat + z * sigma_hat


def combine(beta1, beta2, sigma1, sigma2):
    """Average of the two folds' estimates and the matching standard error."""
    beta = (np.asarray(beta1, float) + np.asarray(beta2, float)) / 2.0
    sigma = np.sqrt((np.asarray(sigma1, float) ** 2 + np.asarray(sigma2, float) ** 2) / 4.0)
    return beta, sigma


def select_on(data, rows: np.ndarray, config: RcvConfig, seed) -> ActiveSet:
    """SCAD selection on a uniform pilot draw from ``rows``."""
    r01 = config.sampler.select_size(len(rows))
    if r01 > len(rows):
        raise SizeError(f"selection pilot needs {r01} rows, fold has {len(rows)}", stage="select")
    pick = uniform_without_replacement(len(rows), r01, child_rng(seed, "select"))
    return fit_scad(view(data, np.sort(rows[pick])), config.model, config.scad)


def fold_pass(data, select_rows, est_rows, config: RcvConfig, seed):
    """Select on ``select_rows`` and estimate every coefficient on ``est_rows``."""
    active = select_on(data, select_rows, config, seed)
    rho = config.rho if config.rho is not None else default_rho(config.sampler.r, data.n)
    sweep = partial_regression_sweep(view(data, est_rows), active.indices, config.model,
                                     config.sampler, seed, "estimate", rho=rho,
                                     n_total=data.n, threads=config.threads)
    return active, sweep


def _check_sizes(data, config):
    s = config.sampler
    need = 2 * (s.r + (s.r01 if s.r01 is not None else s.r) + 1)
    if data.n < need:
        raise SizeError(f"n = {data.n} is too small: need at least 2*(r + r01 + 1) = {need}",
                        stage="setup")


def rcv_from_split(data, split: FoldSplit, config: RcvConfig, seeds) -> RcvResult:
    """Run both passes on a given split; ``seeds[k]`` drives the pass that
    estimates on fold ``k + 1``."""
    passes, errors, timings = {}, {}, {}
    for k, (sel_rows, est_rows) in ((1, (split.fold2, split.fold1)),
                                    (2, (split.fold1, split.fold2))):
        t0 = time.perf_counter()
        try:
            passes[k] = fold_pass(data, sel_rows, est_rows, config, seeds[k - 1])
        except RcvError as exc:
            if exc.stage not in ("scad", "select"):
                raise
            errors[k] = exc
        timings[f"pass{k}"] = time.perf_counter() - t0
    if not passes:
        raise errors[2]
    degraded = len(passes) == 1

    p = data.p
    nan = np.full(p, np.nan)
    nostat = ["failed"] * p

    def unpack(k):
        if k not in passes:
            return nan, nan, np.zeros(p, bool), nostat, None
        act, sw = passes[k]
        return sw.beta, sw.sigma, sw.selected, sw.status, act.indices

    b1, s1, sel_on1, st1, act_for1 = unpack(1)
    b2, s2, sel_on2, st2, act_for2 = unpack(2)
    beta, sigma = combine(b1, b2, s1, s2)
    names = data.column_names
    coefs = []
    for j in range(p):
        ok1 = st1[j] in ("ok", "rho0") and np.isfinite(b1[j])
        ok2 = st2[j] in ("ok", "rho0") and np.isfinite(b2[j])
        flags = [f"fold{k}:{s}" for k, s in ((1, st1[j]), (2, st2[j])) if s not in ("ok", "failed")]
        bj, sj = beta[j], sigma[j]
        if ok1 != ok2:
            # one fold only: report it as is and say so
            bj, sj = (b1[j], s1[j]) if ok1 else (b2[j], s2[j])
            flags.append("degraded" if degraded else "single-fold")
        if ok1 or ok2:
            lo, hi = confidence_interval(bj, sj, config.level) if sj > 0 else (np.nan, np.nan)
        else:
            bj = sj = lo = hi = np.nan
            flags.append("failed")
        # the pass estimating on fold 2 used the set selected on fold 1, and vice versa
        coefs.append(CoefEstimate(j, names[j], float(b1[j]), float(b2[j]), float(bj), float(s1[j]),
                                  float(s2[j]), float(sj), float(lo), float(hi),
                                  bool(sel_on2[j]), bool(sel_on1[j]),
                                  ";".join(flags) if flags else "ok"))
    return RcvResult(coefs,
                     active1=None if act_for2 is None else np.asarray(act_for2),
                     active2=None if act_for1 is None else np.asarray(act_for1),
                     degraded=degraded, timings=timings,
                     passes={**passes, "errors": errors})


def rcv_estimate(data, config: RcvConfig) -> RcvResult:
    """Random split, both passes, averaging."""
    _check_sizes(data, config)
    t0 = time.perf_counter()
    split = split_halves(data, child_rng(config.seed, "split"))
    seeds = (child_seed(config.seed, "fold", 1), child_seed(config.seed, "fold", 2))
    res = rcv_from_split(data, split, config, seeds)
    res.timings["total"] = time.perf_counter() - t0
    return res
