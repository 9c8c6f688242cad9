"""Synthetic designs, replication driver and Monte Carlo metrics.

Covariates: case 1 has i.i.d. Uniform(-1, 1) entries; case 2 draws each row
from an equal mixture of N(-1, U) and N(1, U) with ``U[j, k] = 0.5**|j-k|``.
Cox event times follow the hazard ``0.5 t exp(x'beta)``, censored by an
independent Uniform(0, c0) time with ``c0`` tuned to a target censoring rate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .dataset import Dataset
from .errors import CalibrationError, ConfigError, NumericalError, RcvError
from .models import as_model
from .pipeline import RcvConfig, rcv_estimate, z_value
from .sampler import child_rng, child_seed
from .scad import ScadConfig

_SIGNALS = {
    "linear": (1.0, 0.8, 0.75, -0.5, 0.75),
    "logistic": (0.75, 1.25, 1.5, 0.85, 1.2),
    "cox": (1.0, 1.5, 0.85, 0.75, 2.0),
}

GEN_CHUNK = 50_000


def default_beta(family: str, p: int) -> np.ndarray:
    beta = np.zeros(p)
    sig = _SIGNALS[as_model(family).family]
    k = min(p, len(sig))
    beta[:k] = sig[:k]
    return beta


@dataclass(frozen=True)
class SimDesign:
    family: str = "linear"
    case: int = 1
    n: int = 100_000
    p: int = 100
    reps: int = 300
    beta_true: tuple | None = None
    censor_rate: float = 0.3
    c0: float | None = None
    seed: int = 0
    fix_x: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", as_model(self.family).family)
        if self.case not in (1, 2):
            raise ConfigError("case must be 1 or 2")
        if self.n < 2 or self.p < 1 or self.reps < 1:
            raise ConfigError("need n >= 2, p >= 1 and reps >= 1")
        if self.beta_true is None:
            object.__setattr__(self, "beta_true", tuple(default_beta(self.family, self.p)))
        if len(self.beta_true) != self.p:
            raise ConfigError("beta_true must have length p")

    @property
    def beta(self) -> np.ndarray:
        return np.asarray(self.beta_true, dtype=float)


def upsilon(p: int) -> np.ndarray:
    idx = np.arange(p)
    return 0.5 ** np.abs(idx[:, None] - idx[None, :])


def gen_covariates(design: SimDesign, n_rows: int, rng: np.random.Generator) -> np.ndarray:
    """``n_rows x p`` covariates in column-major order, filled in row blocks."""
    p = design.p
    X = np.empty((n_rows, p), order="F")
    chol = None
    if design.case == 2:
        try:
            chol = np.linalg.cholesky(upsilon(p))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("Cholesky factorisation of the covariance failed") from exc
    for s in range(0, n_rows, GEN_CHUNK):
        m = min(GEN_CHUNK, n_rows - s)
        if chol is None:
            X[s:s + m] = rng.uniform(-1.0, 1.0, size=(m, p))
        else:
            centre = np.where(rng.random(m) < 0.5, -1.0, 1.0)
            X[s:s + m] = rng.standard_normal((m, p)) @ chol.T + centre[:, None]
    return X


def event_times(eta: np.ndarray, u: np.ndarray) -> np.ndarray:
    # cumulative baseline hazard 0.25 t^2, inverted
    return 2.0 * np.sqrt(-np.log(u) * np.exp(-eta))


def gen_response(design: SimDesign, X: np.ndarray, rng: np.random.Generator,
                 c0: float | None = None) -> dict:
    eta = X @ design.beta
    n = X.shape[0]
    if design.family == "linear":
        return {"y": eta + rng.standard_normal(n)}
    if design.family == "logistic":
        return {"y": (rng.random(n) < expit(eta)).astype(float)}
    c0 = design.c0 if c0 is None else c0
    if c0 is None:
        raise ConfigError("cox responses need a calibrated censoring bound c0")
    t = event_times(eta, rng.random(n))
    c = rng.uniform(0.0, c0, size=n)
    return {"time": np.minimum(t, c), "status": (t <= c).astype(float)}


def calibrate_censoring(design: SimDesign, rng: np.random.Generator, *,
                        draws: int = 100_000, tol: float = 0.005,
                        max_iter: int = 200) -> float:
    """Bisection for ``c0`` on a fixed Monte Carlo sample (common random numbers
    keep the estimated rate monotone in ``c0``)."""
    target = design.censor_rate
    if not 0.0 < target < 1.0:
        raise CalibrationError(f"censoring rate {target} is not reachable with a finite c0")
    X = gen_covariates(design, draws, rng)
    t = event_times(X @ design.beta, rng.random(draws))
    v = rng.random(draws)
    del X

    def rate(c0):
        return float(np.mean(t > c0 * v))

    lo, hi = 0.0, float(np.median(t))
    for _ in range(200):
        if rate(hi) < target - tol:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise CalibrationError("could not bracket the censoring bound")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        cr = rate(mid)
        if abs(cr - target) <= tol:
            return mid
        if cr > target:
            lo = mid
        else:
            hi = mid
    raise CalibrationError("bisection for the censoring bound did not converge")


def generate(design: SimDesign, rng: np.random.Generator, c0: float | None = None,
             n: int | None = None, X: np.ndarray | None = None) -> Dataset:
    n = design.n if n is None else n
    if X is None:
        X = gen_covariates(design, n, rng)
    resp = gen_response(design, X, rng, c0)
    return Dataset(X, design.family, **resp)


# -- replications -----------------------------------------------------------

@dataclass
class SimMetrics:
    method: str
    r: int
    bias: np.ndarray
    ssd: np.ndarray
    ese: np.ndarray
    cp: np.ndarray
    ase: float
    n_success: int
    n_failed: int
    runtimes: np.ndarray
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def mean_runtime(self) -> float:
        return float(np.mean(self.runtimes)) if self.runtimes.size else float("nan")


def metrics_from_raw(method: str, r: int, beta_true, est: np.ndarray, se: np.ndarray,
                     level: float = 0.95, runtimes=None, n_failed: int = 0,
                     raw: dict | None = None) -> SimMetrics:
    """Bias, SSD, ESE, CP per coefficient and the ASE from ``(reps, p)`` arrays."""
    est = np.asarray(est, float)
    se = np.asarray(se, float)
    beta_true = np.asarray(beta_true, float)
    z = z_value(level)
    finite = np.isfinite(est) & np.isfinite(se)
    with np.errstate(invalid="ignore"):
        e = np.where(finite, est, np.nan)
        s = np.where(finite, se, np.nan)
        bias = np.nanmean(e, axis=0) - beta_true
        ssd = np.nanstd(e, axis=0, ddof=1)
        ese = np.nanmean(s, axis=0)
        hit = np.abs(e - beta_true) <= z * s
        cp = np.nansum(np.where(finite, hit, 0), axis=0) / np.maximum(finite.sum(axis=0), 1)
        ase = float(np.nanmean(np.nanmean(s, axis=1)))
    return SimMetrics(method, r, bias, ssd, ese, cp, ase, int(est.shape[0]), n_failed,
                      np.asarray(runtimes if runtimes is not None else [], float), raw or {})


def run_replications(design: SimDesign, config: RcvConfig, methods=("osp", "unif"), *,
                     r_values=None, progress=None) -> dict:
    """Run ``design.reps`` replications; every method (and every ``r``) sees the
    same datasets and the same per-replication seeds.

    Returns ``{(method, r): SimMetrics}`` plus ``"c0"`` and ``"censoring"``
    entries for Cox designs.
    """
    if design.family != config.model.family:
        raise ConfigError("design and estimator families differ")
    r_values = tuple(r_values) if r_values is not None else (config.sampler.r,)
    c0 = design.c0
    if design.family == "cox" and c0 is None:
        c0 = calibrate_censoring(design, child_rng(design.seed, "calibrate"))
    keys = [(m, r) for m in methods for r in r_values]
    store = {k: {"beta": [], "sigma": [], "beta1": [], "beta2": [], "sigma1": [],
                 "sigma2": [], "time": [], "failed": 0} for k in keys}
    cens = []
    fixed_x = None
    if design.fix_x:
        fixed_x = gen_covariates(design, design.n, child_rng(design.seed, "fixed-x"))
    for rep in range(design.reps):
        data = generate(design, child_rng(design.seed, "rep", rep, "data"), c0, X=fixed_x)
        if data.family == "cox":
            cens.append(1.0 - data.status.mean())
        rep_seed = child_seed(design.seed, "rep", rep, "fit")
        for (m, r) in keys:
            cfg = replace(config, seed=rep_seed,
                          sampler=replace(config.sampler, kind=m, r=r))
            st = store[(m, r)]
            t0 = time.perf_counter()
            try:
                res = rcv_estimate(data, cfg)
            except RcvError:
                st["failed"] += 1
                continue
            st["time"].append(time.perf_counter() - t0)
            for name in ("beta", "sigma", "beta1", "beta2", "sigma1", "sigma2"):
                st[name].append(getattr(res, name))
        if progress is not None:
            progress(rep)
    out = {}
    for (m, r), st in store.items():
        arr = {k: np.array(v, float).reshape(-1, design.p) for k, v in st.items()
               if k not in ("time", "failed")}
        out[(m, r)] = metrics_from_raw(m, r, design.beta, arr["beta"], arr["sigma"],
                                       config.level, st["time"], st["failed"], arr)
    if design.family == "cox":
        out["c0"] = c0
        out["censoring"] = float(np.mean(cens))
    return out


def metrics_rows(design: SimDesign, results: dict) -> list[dict]:
    """One row per (method, r, coefficient) for CSV output."""
    rows = []
    for key, m in results.items():
        if not isinstance(key, tuple):
            continue
        for j in range(design.p):
            rows.append({"model": design.family, "case": design.case, "method": m.method,
                         "r": m.r, "j": j + 1, "bias": m.bias[j], "ssd": m.ssd[j],
                         "ese": m.ese[j], "cp": m.cp[j]})
    return rows


# -- benchmark --------------------------------------------------------------

def run_bench(design: SimDesign, config: RcvConfig, *, reps: int = 10,
              include_full: bool = True, include_full_scad: bool = False,
              methods=("unif", "osp"), full_scad: ScadConfig | None = None) -> dict:
    """Wall time of the estimation call (data generation excluded) and the
    mean squared deviation of the first coefficient, per method.

    The full-data SCAD comparator uses ``full_scad`` (default: the selection
    settings with a cross-validated lambda).

    Subsampling methods are skipped when ``n`` is too small for them.
    """
    from .estimator import fit_full
    from .scad import fit_full_scad

    if full_scad is None:
        full_scad = replace(config.scad, selector="cv")

    s = config.sampler
    can_sub = design.n >= 2 * (s.r + (s.r01 if s.r01 is not None else s.r) + 1)
    names = [m for m in methods if can_sub]
    if include_full:
        names.append("full")
    if include_full_scad:
        names.append("full-scad")
    times = {m: [] for m in names}
    dev = {m: [] for m in names}
    c0 = design.c0
    if design.family == "cox" and c0 is None:
        c0 = calibrate_censoring(design, child_rng(design.seed, "calibrate"))
    b1 = design.beta[0]
    for rep in range(reps):
        data = generate(design, child_rng(design.seed, "bench", rep, "data"), c0)
        seed = child_seed(design.seed, "bench", rep, "fit")
        for m in names:
            t0 = time.perf_counter()
            if m == "full":
                est = fit_full(data, config.model).beta[int(config.model.intercept)]
            elif m == "full-scad":
                est = fit_full_scad(data, config.model, full_scad)[0]
            else:
                cfg = replace(config, seed=seed, sampler=replace(s, kind=m))
                est = rcv_estimate(data, cfg).beta[0]
            times[m].append(time.perf_counter() - t0)
            dev[m].append((est - b1) ** 2)
        del data
    return {m: {"mean_time": float(np.mean(times[m])), "msd_beta1": float(np.mean(dev[m])),
                "times": np.array(times[m]), "reps": reps} for m in names}
