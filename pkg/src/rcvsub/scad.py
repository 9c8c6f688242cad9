"""SCAD-penalised M-estimation for variable selection.

Minimises ``(1/r) sum_i m(Z_i, beta) + sum_j P_lambda(|beta_j|)`` along a
decreasing lambda grid with warm starts; lambda is picked by an extended
BIC computed from the unpenalised refit on each candidate support.  Each
coordinate update minimises the SCAD-penalised second-order model of the
criterion exactly (closed form for the linear family); for logistic and
Cox the step is halved until the true penalised objective does not
increase, so the objective is monotone over sweeps for every family.
Covariates are standardised internally and coefficients are reported on
the original scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .errors import ConfigError, ConvergenceError, DegenerateRiskSetError, SizeError
from .models import ModelSpec, as_model, cox_order, criterion_batch, design

_FAMILY_CODE = {"linear": 0, "logistic": 1, "cox": 2}


def scad_penalty(t, lam: float, a: float = 3.7):
    """SCAD penalty ``P_lambda(|t|)``; vectorised over ``t``."""
    _check_scad(lam, a)
    t = np.abs(np.asarray(t, dtype=np.float64))
    mid = (2 * a * lam * t - t ** 2 - lam ** 2) / (2 * (a - 1))
    out = np.where(t <= lam, lam * t, np.where(t <= a * lam, mid, lam ** 2 * (a + 1) / 2))
    return out if out.ndim else float(out)


def scad_derivative(t, lam: float, a: float = 3.7):
    """``P'_lambda(|t|)`` for ``t >= 0`` (the one-sided derivative at 0)."""
    _check_scad(lam, a)
    t = np.abs(np.asarray(t, dtype=np.float64))
    out = lam * np.where(t <= lam, 1.0, np.maximum(a * lam - t, 0.0) / ((a - 1) * lam))
    return out if out.ndim else float(out)


def _check_scad(lam, a):
    if a <= 2:
        raise ConfigError(f"SCAD shape parameter must exceed 2, got {a}")
    if lam <= 0:
        raise ConfigError("lambda must be positive")


@dataclass(frozen=True)
class ScadConfig:
    a: float = 3.7
    lambda_grid: tuple[float, ...] | None = None
    n_lambda: int = 50
    lambda_min_ratio: float = 0.01
    selector: str = "ebic"
    ebic_gamma: float = 1.0
    max_iter: int = 1000
    tol: float = 1e-7
    stop_margin: float = 10.0
    cv_folds: int = 5
    cv_seed: int = 0
    cv_patience: int = 5

    def __post_init__(self):
        if self.a <= 2:
            raise ConfigError(f"SCAD shape parameter must exceed 2, got {self.a}")
        if self.selector not in ("bic", "ebic", "cv"):
            raise ConfigError(f"selector must be 'bic', 'ebic' or 'cv', got {self.selector!r}")
        if self.cv_folds < 2 or self.cv_patience < 1:
            raise ConfigError("cv_folds must be >= 2 and cv_patience >= 1")
        if self.ebic_gamma < 0 or self.stop_margin <= 0:
            raise ConfigError("ebic_gamma must be >= 0 and stop_margin > 0")
        if self.lambda_grid is not None:
            g = np.asarray(self.lambda_grid, dtype=float)
            if g.ndim != 1 or g.size == 0 or (g <= 0).any() or (np.diff(g) >= 0).any():
                raise ConfigError("lambda_grid must be strictly decreasing and positive")
        if self.n_lambda < 1 or not 0 < self.lambda_min_ratio < 1:
            raise ConfigError("invalid automatic lambda grid settings")


@dataclass(frozen=True)
class ActiveSet:
    indices: np.ndarray
    lambda_chosen: float
    coefficients: np.ndarray
    intercept: float = 0.0
    path: dict = field(default_factory=dict, repr=False, compare=False)


# -- numba kernels ----------------------------------------------------------

@njit(cache=True)
def _pen(b, lam, a):
    t = abs(b)
    if t <= lam:
        return lam * t
    if t <= a * lam:
        return (2.0 * a * lam * t - t * t - lam * lam) / (2.0 * (a - 1.0))
    return lam * lam * (a + 1.0) / 2.0


@njit(cache=True)
def _scad_1d(z, h, lam, a):
    # argmin_b  h/2 (b - z)^2 + P_lam(|b|)
    if lam <= 0.0:
        return z
    s = abs(z)
    best = 0.0
    bestv = 0.5 * h * s * s
    c = min(max(s - lam / h, 0.0), lam)
    v = 0.5 * h * (c - s) ** 2 + _pen(c, lam, a)
    if v < bestv:
        best, bestv = c, v
    curv = h - 1.0 / (a - 1.0)
    if curv > 0.0:
        c = (h * s - a * lam / (a - 1.0)) / curv
        c = min(max(c, lam), a * lam)
        v = 0.5 * h * (c - s) ** 2 + _pen(c, lam, a)
        if v < bestv:
            best, bestv = c, v
    else:
        for c in (lam, a * lam):
            v = 0.5 * h * (c - s) ** 2 + _pen(c, lam, a)
            if v < bestv:
                best, bestv = c, v
    c = max(s, a * lam)
    v = 0.5 * h * (c - s) ** 2 + _pen(c, lam, a)
    if v < bestv:
        best, bestv = c, v
    return best if z >= 0 else -best


@njit(cache=True)
def _loss(fam, eta, y, st, gend, aux):
    # also fills the per-row quantities every coordinate update needs:
    # mu for logistic, exp(eta - max eta) for Cox
    r = eta.shape[0]
    tot = 0.0
    if fam == 0:
        for i in range(r):
            d = y[i] - eta[i]
            tot += d * d
    elif fam == 1:
        for i in range(r):
            e = eta[i]
            ex = np.exp(-abs(e))
            tot += max(e, 0.0) - y[i] * e + np.log1p(ex)
            aux[i] = 1.0 / (1.0 + ex) if e >= 0 else ex / (1.0 + ex)
    else:
        m = -np.inf
        for i in range(r):
            if eta[i] > m:
                m = eta[i]
        s0 = 0.0
        i = 0
        while i < r:
            e = gend[i]
            for t in range(i, e + 1):
                ev = np.exp(eta[t] - m)
                aux[t] = ev
                s0 += ev
            ls = np.log(s0) + m
            for t in range(i, e + 1):
                if st[t] > 0:
                    tot -= eta[t] - ls
            i = e + 1
    return tot / r


@njit(cache=True)
def _coord_derivs(fam, xj, eta, aux, y, st, gend, hlin):
    r = eta.shape[0]
    g = 0.0
    h = 0.0
    if fam == 0:
        for i in range(r):
            g -= xj[i] * (y[i] - eta[i])
        return 2.0 * g / r, hlin
    if fam == 1:
        for i in range(r):
            mu = aux[i]
            g += xj[i] * (mu - y[i])
            h += xj[i] * xj[i] * mu * (1.0 - mu)
        return g / r, h / r
    s0 = 0.0
    s1 = 0.0
    s2 = 0.0
    i = 0
    while i < r:
        e = gend[i]
        for t in range(i, e + 1):
            ev = aux[t]
            s0 += ev
            s1 += ev * xj[t]
            s2 += ev * xj[t] * xj[t]
        xb = s1 / s0
        vb = s2 / s0 - xb * xb
        for t in range(i, e + 1):
            if st[t] > 0:
                g -= xj[t] - xb
                h += vb
        i = e + 1
    return g / r, h / r


@njit(cache=True)
def _sweep(fam, X, y, st, gend, hlin, pf, lam, a, beta, eta, aux, work, loss, only_active,
           tol):
    r, p = X.shape
    maxd = 0.0
    for j in range(p):
        if only_active and beta[j] == 0.0 and pf[j] > 0.0:
            continue
        if pf[j] == np.inf:
            continue
        xj = X[:, j]
        g, h = _coord_derivs(fam, xj, eta, aux, y, st, gend, hlin[j])
        if h <= 1e-12:
            h = 1e-12
        b0 = beta[j]
        lj = lam * pf[j]
        b1 = _scad_1d(b0 - g / h, h, lj, a)
        step = b1 - b0
        if step == 0.0:
            continue
        p0 = _pen(b0, lj, a) if lj > 0 else 0.0
        if fam == 0:
            for i in range(r):
                eta[i] += step * xj[i]
            loss = _loss(fam, eta, y, st, gend, aux)
            beta[j] = b1
        else:
            accepted = False
            for _ in range(31):
                b1 = b0 + step
                trial, aux_t = work[0], work[1]
                for i in range(r):
                    trial[i] = eta[i] + step * xj[i]
                lt = _loss(fam, trial, y, st, gend, aux_t)
                p1 = _pen(b1, lj, a) if lj > 0 else 0.0
                if lt + p1 <= loss + p0:
                    eta[:] = trial
                    aux[:] = aux_t
                    loss = lt
                    beta[j] = b1
                    accepted = True
                    break
                step *= 0.5
                # below tol a step cannot hold up convergence; halving further
                # only fights rounding in the loss
                if abs(step) < tol:
                    break
            if not accepted:
                step = 0.0
        if abs(step) > maxd:
            maxd = abs(step)
    return maxd, loss


@njit(cache=True)
def _objective(loss, beta, pf, lam, a):
    tot = loss
    for j in range(beta.shape[0]):
        if pf[j] > 0.0 and pf[j] != np.inf and beta[j] != 0.0:
            tot += _pen(beta[j], lam * pf[j], a)
    return tot


@njit(cache=True)
def _solve(fam, X, y, st, gend, hlin, pf, lam, a, beta, tol, max_sweeps, trace):
    r = X.shape[0]
    eta = X @ beta
    aux = np.empty(r)
    work = np.empty((2, r))     # trial eta and its per-row cache
    loss = _loss(fam, eta, y, st, gend, aux)
    trace[0] = _objective(loss, beta, pf, lam, a)
    n = 0
    converged = False
    while n < max_sweeps:
        maxd, loss = _sweep(fam, X, y, st, gend, hlin, pf, lam, a, beta, eta, aux, work,
                            loss, False, tol)
        n += 1
        trace[n] = _objective(loss, beta, pf, lam, a)
        if maxd < tol:
            converged = True
            break
        while n < max_sweeps:
            maxd, loss = _sweep(fam, X, y, st, gend, hlin, pf, lam, a, beta, eta, aux,
                                work, loss, True, tol)
            n += 1
            trace[n] = _objective(loss, beta, pf, lam, a)
            if maxd < tol:
                break
    return n, converged, loss


# -- python layer -----------------------------------------------------------

@dataclass
class _Problem:
    fam: int
    X: np.ndarray          # standardised, rows sorted for cox, intercept column first if any
    y: np.ndarray
    st: np.ndarray
    gend: np.ndarray
    hlin: np.ndarray
    pf: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    offset: int            # 1 when column 0 is the intercept
    time: np.ndarray | None = None


def _prepare(x: np.ndarray, resp, model: ModelSpec) -> _Problem:
    x = np.asarray(x, dtype=np.float64)
    r, p = x.shape
    fam = _FAMILY_CODE[model.family]
    if model.family == "cox":
        time, status = resp
        order, _, gend = cox_order(time)
        x = x[order]
        st = np.asarray(status, dtype=np.float64)[order]
        if not (st > 0).any():
            raise DegenerateRiskSetError("SCAD pilot sample has no events", stage="scad")
        y = np.zeros(r)
        tsorted = np.asarray(time, dtype=np.float64)[order]
    else:
        tsorted = None
        y = np.asarray(resp, dtype=np.float64)
        st = np.zeros(r)
        gend = np.arange(r, dtype=np.int64)
    center = x.mean(axis=0) if model.intercept else np.zeros(p)
    scale = x.std(axis=0)
    const = scale <= 1e-12 * np.maximum(1.0, np.abs(x).max(axis=0))
    scale = np.where(const, 1.0, scale)
    xs = (x - center) / scale
    pf = np.where(const, np.inf, 1.0)
    if model.intercept:
        xs = np.column_stack([np.ones(r), xs])
        pf = np.r_[0.0, pf]
    xs = np.asfortranarray(xs)
    hlin = 2.0 * (xs ** 2).mean(axis=0)
    return _Problem(fam, xs, y, st, np.ascontiguousarray(gend, dtype=np.int64), hlin,
                    pf, center, scale, int(model.intercept), tsorted)


def _resp_cd(prob: _Problem, model):
    # response in the (possibly re-ordered) row order of prob.X, for criterion_batch
    if model.family == "cox":
        return (prob.time, prob.st)
    return prob.y


def solve_scad(prob: _Problem, lam: float, a: float, beta0=None, tol=1e-7,
               max_sweeps=1000):
    """Solve one lambda; returns ``(beta, sweeps, converged, loss, trace)``."""
    beta = np.zeros(prob.X.shape[1]) if beta0 is None else np.array(beta0, dtype=np.float64)
    trace = np.full(max_sweeps + 1, np.nan)
    n, conv, loss = _solve(prob.fam, prob.X, prob.y, prob.st, prob.gend, prob.hlin,
                           prob.pf, float(lam), float(a), beta, float(tol),
                           int(max_sweeps), trace)
    return beta, int(n), bool(conv), float(loss), trace[: n + 1]


def _refit_deviance(prob: _Problem, model: ModelSpec, support: np.ndarray) -> float:
    """Deviance-type fit measure of the unpenalised model on ``support``."""
    from .estimator import newton_batch
    r = prob.X.shape[0]
    cols = np.r_[np.arange(prob.offset), prob.offset + support].astype(np.intp)
    X = prob.X[:, cols]
    if model.family == "linear":
        if cols.size:
            coef = np.linalg.lstsq(X, prob.y, rcond=None)[0]
            rss = float(((prob.y - X @ coef) ** 2).sum())
        else:
            rss = float((prob.y ** 2).sum())
        return r * np.log(max(rss / r, 1e-300))
    if cols.size == 0:
        v, _, _ = criterion_batch(model.family, X[None], _resp_cd(prob, model), np.ones(r),
                                  np.zeros((1, 0)), hessian=False)
        return 2.0 * r * float(v[0])
    res = newton_batch(model.family, np.ascontiguousarray(X)[None], _resp_cd(prob, model),
                       np.ones(r), max_iter=50)
    # a separated refit still gives a valid (small) loss at its last iterate
    return 2.0 * r * float(res.values[0])


def _selection_criterion(config: ScadConfig, dev: float, r: int, p: int, k: int) -> float:
    # "ebic" charges every selected covariate log(r) + 2*gamma*log(p)
    per = np.log(r)
    if config.selector == "ebic" and p > 1:
        per += 2.0 * config.ebic_gamma * np.log(p)
    return dev + k * per


def _lambda_grid(prob: _Problem, model: ModelSpec, config: ScadConfig):
    """Decreasing lambda grid and the unpenalised null fit it starts from."""
    r = prob.X.shape[0]
    # unpenalised null fit (intercept only, or zero)
    null, _, _, _, _ = solve_scad(prob, 1e300, config.a, tol=config.tol,
                                  max_sweeps=config.max_iter)
    if config.lambda_grid is not None:
        return np.asarray(config.lambda_grid, dtype=float), null
    _, g, _ = criterion_batch(model.family, prob.X[None], _resp_cd(prob, model),
                              np.ones(r), null[None], hessian=False)
    pen_cols = np.isfinite(prob.pf) & (prob.pf > 0)
    # padded so rounding never lets a coordinate enter exactly at lambda_max
    lam_max = float(np.abs(g[0][pen_cols]).max()) * (1 + 1e-9) if pen_cols.any() else 0.0
    if lam_max <= 0:
        return np.array([1.0]), null
    return lam_max * np.logspace(0, np.log10(config.lambda_min_ratio), config.n_lambda), null


def _path_steps(prob: _Problem, config: ScadConfig, grid, beta0):
    # warm-started solutions along the grid
    beta = beta0.copy()
    for lam in grid:
        beta, n, conv, loss, trace = solve_scad(prob, lam, config.a, beta, config.tol,
                                                config.max_iter)
        yield float(lam), beta.copy(), n, conv, loss, trace


def scad_path(x: np.ndarray, resp, model: ModelSpec | str, config: ScadConfig = ScadConfig(),
              dfmax: int | None = None):
    """Fit the lambda path; returns the prepared problem and per-lambda
    results (standardised coefficients, selection criterion, convergence,
    objective traces).  With ``selector="cv"`` the criterion is left as NaN."""
    model = as_model(model)
    x = np.asarray(x, dtype=np.float64)
    r, p = x.shape
    if r < 1:
        raise SizeError("SCAD needs a non-empty sample", stage="scad")
    prob = _prepare(x, resp, model)
    grid, null = _lambda_grid(prob, model, config)
    dfmax = max(1, r // 2) if dfmax is None else dfmax
    npen = int((np.isfinite(prob.pf) & (prob.pf > 0)).sum())
    out = {"lambdas": [], "betas": [], "bic": [], "converged": [], "loss": [],
           "monotone": [], "sweeps": []}
    cache: dict[bytes, float] = {}
    best = np.inf
    for lam, beta, n, conv, loss, trace in _path_steps(prob, config, grid, null):
        support = np.flatnonzero(beta[prob.offset:])
        k = support.size
        key = support.tobytes()
        if config.selector == "cv":
            crit = np.nan
        else:
            if key not in cache:
                cache[key] = _refit_deviance(prob, model, support) if k <= dfmax else np.inf
            crit = _selection_criterion(config, cache[key], r, npen, k)
        out["lambdas"].append(lam)
        out["betas"].append(beta)
        out["bic"].append(crit)
        out["converged"].append(conv)
        out["loss"].append(loss)
        out["sweeps"].append(n)
        out["monotone"].append(monotone_trace(trace))
        if conv:
            best = min(best, crit)
        # larger models only add penalty once the fit has stopped improving
        if k > dfmax or crit > best + config.stop_margin * np.log(r):
            break
    return prob, out


def monotone_trace(trace) -> bool:
    trace = np.asarray(trace)
    return bool(np.all(np.diff(trace) <= 1e-12 * max(1.0, abs(trace[0]))))


def _original_scale(prob: _Problem, b: np.ndarray):
    coef = b[prob.offset:] / prob.scale
    intercept = float(b[0] - prob.center @ coef) if prob.offset else 0.0
    return coef, intercept


def _cv_errors(x, resp, model: ModelSpec, config: ScadConfig, grid) -> np.ndarray:
    """K-fold cross-validated deviance along ``grid`` (``inf`` where not reached).

    The held-out contribution of fold k is ``n L(beta_-k) - n_train L_train(beta_-k)``
    with ``L`` the mean criterion; for linear and logistic this is the
    held-out loss, for Cox the cross-validated partial likelihood.  The fold
    paths advance together and stop once the error has stayed above its
    running minimum for ``cv_patience`` lambdas, or a fold fails to converge
    or saturates.
    """
    n = x.shape[0]
    folds = np.random.default_rng(config.cv_seed).permutation(n) % config.cv_folds
    Xfull = design(model, x)

    def resp_rows(rows):
        if model.family == "cox":
            return (np.asarray(resp[0])[rows], np.asarray(resp[1])[rows])
        return np.asarray(resp)[rows]

    def total_loss(X, rr, coef, intercept):
        beta = np.r_[intercept, coef] if model.intercept else coef
        v, _, _ = criterion_batch(model.family, X[None], rr, np.ones(X.shape[0]), beta[None],
                                  hessian=False)
        return X.shape[0] * float(v[0])

    parts = []
    for k in range(config.cv_folds):
        train = np.flatnonzero(folds != k)
        rr = resp_rows(train)
        prob = _prepare(x[train], rr, model)
        _, null = _lambda_grid(prob, model, replace(config, lambda_grid=tuple(grid)))
        parts.append((train, rr, prob, _path_steps(prob, config, grid, null)))
    err = np.full(len(grid), np.inf)
    best, worse = np.inf, 0
    for i in range(len(grid)):
        tot, saturated = 0.0, False
        for train, rr, prob, steps in parts:
            _, b, _, conv, _, _ = next(steps)
            saturated |= np.count_nonzero(b[prob.offset:]) > max(1, train.size // 2)
            if not conv:
                tot = np.inf
            if np.isfinite(tot):
                coef, b0 = _original_scale(prob, b)
                tot += total_loss(Xfull, resp, coef, b0) - total_loss(Xfull[train], rr, coef, b0)
        err[i] = tot
        # a flat stretch (same support past a*lambda) is not a worsening
        if tot < best:
            best, worse = tot, 0
        elif tot > best + 1e-10 * abs(best):
            worse += 1
        if saturated or worse >= config.cv_patience or (not np.isfinite(tot) and np.isfinite(best)):
            break
    return err


def fit_scad(sample, model: ModelSpec | str, config: ScadConfig = ScadConfig(),
             cap: int | None = None) -> ActiveSet:
    """Select variables on ``sample`` (a dataset or view over all covariates).

    The converged lambda with the smallest selection criterion wins (the
    smallest such lambda on ties).  With ``selector="cv"`` the lambda with the
    smallest K-fold cross-validated deviance is used instead.  When
    more than ``cap`` (default ``r // 4``) covariates are selected only the
    ``cap`` largest standardised coefficients are kept.
    """
    model = as_model(model)
    x = np.asarray(sample.x, dtype=np.float64)
    r, p = x.shape
    if config.selector == "cv":
        prob0 = _prepare(x, sample.response, model)
        grid, _ = _lambda_grid(prob0, model, config)
        err = _cv_errors(x, sample.response, model, config, grid)
        if not np.isfinite(err).any():
            raise ConvergenceError("cross-validation failed for every lambda", stage="scad")
        stop = int(np.argmin(err))
        prob, path = scad_path(x, sample.response, model,
                               replace(config, lambda_grid=tuple(grid[:stop + 1])), dfmax=p)
        path["cv"] = err
        conv = np.asarray(path["converged"])
        if not conv.any():
            raise ConvergenceError("SCAD did not converge for any lambda", stage="scad")
        crit = np.where(conv, err[:conv.size], np.inf)
        best = int(np.argmin(crit)) if np.isfinite(crit).any() else int(np.flatnonzero(conv)[-1])
    else:
        prob, path = scad_path(x, sample.response, model, config)
        conv = np.asarray(path["converged"])
        if not conv.any():
            raise ConvergenceError(
                "SCAD did not converge for any lambda", stage="scad",
                diagnostics={"lambdas": path["lambdas"], "sweeps": path["sweeps"],
                             "last_beta": path["betas"][-1]})
        bic = np.where(conv, path["bic"], np.inf)
        # lambdas sharing a support tie exactly (the criterion uses the refit);
        # the smallest of them shrinks the retained coefficients least
        best = bic.size - 1 - int(np.argmin(bic[::-1]))
    bstd = path["betas"][best].copy()
    cap = max(1, r // 4) if cap is None else cap
    nz = np.flatnonzero(bstd[prob.offset:])
    if nz.size > cap:
        keep = nz[np.argsort(-np.abs(bstd[prob.offset:][nz]), kind="stable")[:cap]]
        drop = np.setdiff1d(nz, keep)
        bstd[prob.offset + drop] = 0.0
    coef, intercept = _original_scale(prob, bstd)
    return ActiveSet(np.flatnonzero(coef).astype(np.intp), float(path["lambdas"][best]),
                     coef, intercept, path)


FULL_SCAD_CONFIG = ScadConfig(selector="cv")


def fit_full_scad(data, model: ModelSpec | str,
                  config: ScadConfig = FULL_SCAD_CONFIG) -> np.ndarray:
    """SCAD fit over the whole dataset; returns the coefficient vector.

    This is the estimation benchmark, so lambda is cross-validated by default
    rather than chosen for support recovery.
    """
    return fit_scad(data, model, config, cap=data.p).coefficients
