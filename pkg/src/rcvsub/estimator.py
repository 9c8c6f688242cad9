"""Weighted M-estimation, sandwich variances and the partial-regression sweep.

The Newton solver works on batches of designs that share rows, which is
what the sweep needs: for every coefficient ``j`` a small model on the
columns ``active + {j}`` is refitted on one shared subsample.  Designs are
processed in fixed-size chunks so results never depend on the number of
worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .dataset import augmented_columns, view
from .errors import (ConvergenceError, InputError, RankError, SeparationError,
                     ShapeError, SizeError, VarianceError)
from .models import (CoxReference, ModelSpec, _check_weights, as_model,
                     criterion_batch, design, logistic_loss, row_scores_batch)
from .sampler import (SamplerConfig, Subsample, child_rng, compute_probabilities,
                      sample_with_replacement, uniform_without_replacement)

# per-member solver status
OK, MAXITER, SEPARATION, RANK, STALLED = 0, 1, 2, 3, 4
STATUS_NAMES = {OK: "ok", MAXITER: "maxiter", SEPARATION: "separation",
                RANK: "rank", STALLED: "stalled"}

SWEEP_CHUNK = 64
# a logistic fit whose mean loss falls below this (relative to the mean
# weight) classifies every row perfectly: the gradient has vanished only
# because the coefficients are running off to infinity
SEP_LOSS = 1e-6


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``RCV_THREADS``, else the machine's core count."""
    if threads is None:
        env = os.environ.get("RCV_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


@dataclass
class NewtonBatch:
    betas: np.ndarray
    values: np.ndarray
    grad_norms: np.ndarray
    hessians: np.ndarray
    iterations: np.ndarray
    status: np.ndarray
    ridge: np.ndarray


def _tol(values, tol):
    return tol * np.maximum(1.0, np.abs(values))


def newton_batch(family: str, Xb: np.ndarray, resp, w: np.ndarray, beta0=None, *,
                 tol: float = 1e-10, max_iter: int = 100, max_halving: int = 30,
                 sep_bound: float = 1e3) -> NewtonBatch:
    """Damped Newton on ``B`` weighted criteria at once.

    Converged when ``max|grad| <= tol * max(1, |value|)``.  A numerically
    singular Hessian gets a ridge of ``1e-8 * trace / d``; if it is still
    singular the member stops with status ``RANK``.
    """
    B, r, d = Xb.shape
    beta = np.zeros((B, d)) if beta0 is None else np.array(beta0, dtype=np.float64).reshape(B, d)
    status = np.full(B, -1)
    iters = np.zeros(B, dtype=np.int64)
    ridge = np.zeros(B, dtype=bool)
    v, g, H = criterion_batch(family, Xb, resp, w, beta)
    for it in range(max_iter + 1):
        run = status < 0
        gn = np.abs(g).max(axis=1) if d else np.zeros(B)
        conv = run & (gn <= _tol(v, tol))
        status[conv] = OK
        run = status < 0
        if not run.any():
            break
        if it == max_iter:
            status[run] = MAXITER
            break
        act = np.flatnonzero(run)
        Ha = H[act].copy()
        eig = np.linalg.eigvalsh(Ha)
        sing = eig[:, 0] <= 1e-12 * np.maximum(np.abs(eig[:, -1]), 1e-300)
        if sing.any():
            tr = np.trace(Ha[sing], axis1=1, axis2=2)
            Ha[sing] += (1e-8 * np.maximum(tr, 0.0) / d)[:, None, None] * np.eye(d)
            ridge[act[sing]] = True
            eig2 = np.linalg.eigvalsh(Ha[sing])
            still = eig2[:, 0] <= 1e-14 * np.maximum(np.abs(eig2[:, -1]), 1e-300)
            if still.any():
                bad = act[np.flatnonzero(sing)[still]]
                status[bad] = RANK
                keep = status[act] < 0
                act, Ha = act[keep], Ha[keep]
                if act.size == 0:
                    continue
        step = np.linalg.solve(Ha, g[act][:, :, None])[:, :, 0]
        t = np.ones(act.size)
        pending = np.arange(act.size)
        new_beta = beta[act].copy()
        for _ in range(max_halving + 1):
            idx = act[pending]
            trial = beta[idx] - t[pending, None] * step[pending]
            vt, _, _ = criterion_batch(family, Xb[idx], resp, w, trial, hessian=False)
            ok = np.isfinite(vt) & (vt <= v[idx] + 1e-13 * np.abs(v[idx]))
            new_beta[pending[ok]] = trial[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
            t[pending] *= 0.5
        moved = np.ones(act.size, dtype=bool)
        if pending.size:
            # no descent along the Newton direction: at the floating-point floor
            # if the gradient is already tiny, otherwise give up
            stuck = act[pending]
            near = gn[stuck] <= _tol(v[stuck], 1e3 * tol)
            status[stuck[near]] = OK
            status[stuck[~near]] = STALLED
            moved[pending] = False
        act, new_beta = act[moved], new_beta[moved]
        if act.size == 0:
            continue
        beta[act] = new_beta
        iters[act] += 1
        sep = np.abs(new_beta).max(axis=1) > sep_bound
        status[act[sep]] = SEPARATION
        act = act[~sep]
        if act.size:
            va, ga, Hh = criterion_batch(family, Xb[act], resp, w, beta[act])
            v[act], g[act], H[act] = va, ga, Hh
    if family == "logistic":
        status[(status == OK) & (v <= SEP_LOSS * float(np.mean(w)))] = SEPARATION
    gn = np.abs(g).max(axis=1) if d else np.zeros(B)
    return NewtonBatch(beta, v, gn, H, iters, status, ridge)


# -- single fits ------------------------------------------------------------

@dataclass
class FitResult:
    beta: np.ndarray
    sigma: np.ndarray | None
    iterations: int
    gradient_norm: float
    value: float = np.nan
    hessian: np.ndarray | None = field(default=None, repr=False)
    ridge: bool = False


def _raise_status(code, what, diag=None):
    if code == SEPARATION:
        raise SeparationError(f"{what}: coefficients diverge (separation)", stage="estimate")
    if code == RANK:
        raise RankError(f"{what}: Hessian is singular", stage="estimate")
    if code != OK:
        raise ConvergenceError(f"{what}: Newton did not converge ({STATUS_NAMES[code]})",
                               stage="estimate", diagnostics=diag)


def _fit_arrays(model: ModelSpec, x, resp, w, init=None, what="fit") -> FitResult:
    X = design(model, x)
    r, d = X.shape
    if d > r:
        raise SizeError(f"{what}: {d} parameters but only {r} rows", stage="estimate")
    if init is not None:
        init = np.asarray(init, dtype=np.float64)
        if init.shape != (d,):
            raise ShapeError(f"initial value has {init.size} entries, expected {d}")
        init = init[None]
    res = newton_batch(model.family, X[None], resp, w, init)
    _raise_status(int(res.status[0]), what,
                  {"beta": res.betas[0], "grad_norm": float(res.grad_norms[0])})
    return FitResult(res.betas[0], None, int(res.iterations[0]), float(res.grad_norms[0]),
                     float(res.values[0]), res.hessians[0], bool(res.ridge[0]))


def weighted_fit(sample, model: ModelSpec | str, weights, init=None) -> FitResult:
    """Minimise ``(1/r) sum w_i m(Z_i, beta)`` over the rows of ``sample``."""
    model = as_model(model)
    w = _check_weights(weights)
    if w.shape[0] != sample.n:
        raise ShapeError("one weight per row required")
    return _fit_arrays(model, sample.x, sample.response, w, init, "weighted fit")


def pilot_fit(fold, model: ModelSpec | str, r02: int, rng: np.random.Generator):
    """Unweighted fit on a uniform without-replacement subsample of ``fold``.

    Returns ``(beta, rows)`` where ``rows`` index ``fold``.
    """
    model = as_model(model)
    d = fold.p + int(model.intercept)
    rows = uniform_without_replacement(fold.n, min(int(r02), fold.n), rng)
    if d == 0:
        return np.zeros(0), rows
    sub = view(fold, rows)
    res = _fit_arrays(model, sub.x, sub.response, np.ones(sub.n), what="pilot fit")
    return res.beta, rows


def fit_full(data, model: ModelSpec | str, *, chunk_rows: int | None = None,
             tol: float = 1e-8, max_iter: int = 100) -> FitResult:
    """Unweighted full-data M-estimator with the classical covariance.

    Linear and logistic criteria are accumulated over row blocks so the
    design is never copied whole.
    """
    model = as_model(model)
    x = data.x
    n, p = x.shape
    d = p + int(model.intercept)
    if n <= d:
        raise SizeError(f"full fit needs n > d (n={n}, d={d})", stage="full")
    if model.family == "cox":
        res = _fit_arrays(model, x, data.response, np.ones(n), what="full fit")
        if res.ridge:
            raise RankError("full-data Hessian is singular", stage="full")
        res.sigma = np.linalg.inv(res.hessian) / n
        return res
    y = data.y
    chunk = chunk_rows or max(1000, (1 << 22) // max(d, 1))

    def blocks():
        for s in range(0, n, chunk):
            yield design(model, x[s:s + chunk]), y[s:s + chunk]

    def pieces(beta, hess=True):
        val, grad, H = 0.0, np.zeros(d), np.zeros((d, d))
        for Xc, yc in blocks():
            eta = Xc @ beta
            if model.family == "linear":
                res = yc - eta
                val += res @ res
                grad -= 2.0 * (Xc.T @ res)
                if hess:
                    H += 2.0 * (Xc.T @ Xc)
            else:
                mu = expit(eta)
                val += logistic_loss(eta, yc).sum()
                grad += Xc.T @ (mu - yc)
                if hess:
                    H += (Xc * (mu * (1 - mu))[:, None]).T @ Xc
        return val / n, grad / n, H / n

    beta = np.zeros(d)
    v, g, H = pieces(beta)
    it = 0
    while True:
        if np.abs(g).max() <= tol * max(1.0, abs(v)):
            break
        if it >= max_iter:
            raise ConvergenceError("full fit did not converge", stage="full",
                                   diagnostics={"beta": beta, "grad_norm": float(np.abs(g).max())})
        eig = np.linalg.eigvalsh(H)
        if eig[0] <= 1e-12 * max(abs(eig[-1]), 1e-300):
            raise RankError("full-data Hessian is singular (collinear design?)", stage="full")
        step = np.linalg.solve(H, g)
        t = 1.0
        for _ in range(31):
            trial = beta - t * step
            vt = pieces(trial, hess=False)[0]
            if np.isfinite(vt) and vt <= v + 1e-13 * abs(v):
                break
            t *= 0.5
        else:
            if np.abs(g).max() <= 1e3 * tol * max(1.0, abs(v)):
                break
            raise ConvergenceError("full fit: no descent along the Newton direction",
                                   stage="full")
        beta = trial
        it += 1
        if np.abs(beta).max() > 1e3:
            raise SeparationError("full fit diverges (separation)", stage="full")
        v, g, H = pieces(beta)
    if model.family == "logistic" and v <= SEP_LOSS:
        raise SeparationError("full fit: the classes are perfectly separated", stage="full")
    if model.family == "linear":
        rss = v * n
        sigma = 2.0 * rss / (n - d) / n * np.linalg.inv(H)
    else:
        sigma = np.linalg.inv(H) / n
    return FitResult(beta, sigma, it, float(np.abs(g).max()), float(v), H)


# -- sandwich variance ------------------------------------------------------

def sandwich_batch(scores: np.ndarray, hessians: np.ndarray, w: np.ndarray, n2: int,
                   rho: float):
    """``Gamma^-1 Psi Gamma^-1`` for a batch.

    ``hessians`` are Hessians of ``(1/r) sum w_i m_i``, so
    ``Gamma = hessians / n2``; ``scores`` are the per-row gradients ``(B, r, d)``.
    Returns ``(sigma, first, second)`` where ``Psi = first - rho * second``.
    """
    B, r, d = scores.shape
    gamma = hessians / n2
    ws = scores * w[None, :, None]
    first = np.matmul(np.swapaxes(ws, 1, 2), ws) / (n2 ** 2 * r ** 2)
    second = np.matmul(np.swapaxes(ws, 1, 2), scores) / (n2 * r ** 2)
    ginv = np.linalg.inv(gamma)
    psi = first - rho * second
    sigma = ginv @ psi @ ginv
    sigma = 0.5 * (sigma + np.swapaxes(sigma, 1, 2))
    return sigma, ginv @ first @ ginv, ginv @ second @ ginv


def sandwich_variance(sample, model: ModelSpec | str, beta_hat, n2: int, rho: float,
                      weights=None, check: bool = False) -> np.ndarray:
    """Sandwich covariance of a weighted estimator with the overlap correction
    ``rho``.  ``weights`` default to ``1 / probs`` of a :class:`Subsample`-like
    ``sample`` carrying a ``weights`` attribute."""
    model = as_model(model)
    if weights is None:
        weights = sample.weights
    w = _check_weights(weights)
    X = design(model, sample.x)
    beta = np.atleast_1d(np.asarray(beta_hat, dtype=np.float64))
    if beta.shape != (X.shape[1],):
        raise ShapeError("beta_hat does not match the design")
    if not 0.0 <= rho <= 1.0:
        raise InputError("rho must lie in [0, 1]")
    resp = sample.response
    _, _, H = criterion_batch(model.family, X[None], resp, w, beta[None])
    S = row_scores_batch(model.family, X[None], resp, w, beta[None])
    sigma = sandwich_batch(S, H, w, int(n2), float(rho))[0][0]
    if check and (np.diag(sigma) <= 0).any():
        raise VarianceError("non-positive variance estimate", stage="variance")
    return sigma


def default_rho(r: int, n: int) -> float:
    return min(1.0, 2.0 * r / n)


# -- partial-regression sweep ----------------------------------------------

@dataclass
class SweepResult:
    beta: np.ndarray          # (p,)
    sigma2: np.ndarray        # (p,)
    selected: np.ndarray      # (p,) bool
    status: list              # per j: "ok", "rho0" or an error tag
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    subsample: Subsample | None = field(default=None, repr=False)

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.sigma2)


def refit_column_sets(active, p: int) -> list[list[int]]:
    """Column set of the refit that produces coefficient ``j``, for every ``j``."""
    return [augmented_columns(active, j) for j in range(p)]


def _sweep_chunk(model, Xsub, resp, w, colsets, n2, rho):
    off = int(model.intercept)
    Xb = np.stack([design(model, Xsub[:, c]) for c in colsets])
    res = newton_batch(model.family, Xb, resp, w)
    B, _, d = Xb.shape
    sig = np.full((B, d, d), np.nan)
    fallback = np.zeros(B, dtype=bool)
    good = res.status == OK
    if good.any():
        gi = np.flatnonzero(good)
        S = row_scores_batch(model.family, Xb[gi], resp, w, res.betas[gi])
        s, first, _ = sandwich_batch(S, res.hessians[gi], w, n2, rho)
        neg = (np.diagonal(s, axis1=1, axis2=2) <= 0).any(axis=1)
        s[neg] = 0.5 * (first[neg] + np.swapaxes(first[neg], 1, 2))
        sig[gi] = s
        fallback[gi[neg]] = True
    return res, sig, fallback, off


def sweep_subsample(fold, active, model: ModelSpec | str, subsample: Subsample, *,
                    n2: int | None = None, rho: float = 0.0,
                    threads: int | None = None) -> SweepResult:
    """Refit every ``active + {j}`` model on one drawn ``subsample`` of ``fold``."""
    model = as_model(model)
    p = fold.p
    active = np.asarray(sorted(int(a) for a in active), dtype=np.intp)
    n2 = fold.n if n2 is None else int(n2)
    sub = view(fold, subsample.row_indices)
    Xsub = np.ascontiguousarray(sub.x)
    resp = sub.response
    w = subsample.weights
    if active.size + 1 + int(model.intercept) > sub.n:
        raise SizeError("refit dimension exceeds the subsample size", stage="sweep")
    sel = np.zeros(p, dtype=bool)
    sel[active] = True
    beta = np.full(p, np.nan)
    sig2 = np.full(p, np.nan)
    status = ["ok"] * p

    # selected coefficients share the single fit on the active columns
    tasks = []
    if active.size:
        tasks.append((list(active), None))
    others = [j for j in range(p) if not sel[j]]
    for s in range(0, len(others), SWEEP_CHUNK):
        tasks.append((None, others[s:s + SWEEP_CHUNK]))

    def run(task):
        shared, js = task
        colsets = [list(active)] if shared is not None else [augmented_columns(active, j) for j in js]
        return _sweep_chunk(model, Xsub, resp, w, colsets, n2, rho)

    nthreads = resolve_threads(threads)
    if nthreads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(nthreads) as ex:
            results = list(ex.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    for (shared, js), (res, sig, fb, off) in zip(tasks, results):
        if shared is not None:
            code = int(res.status[0])
            for k, j in enumerate(active):
                if code != OK:
                    status[j] = STATUS_NAMES[code]
                    continue
                beta[j] = res.betas[0, off + k]
                sig2[j] = sig[0, off + k, off + k]
                if fb[0]:
                    status[j] = "rho0"
            continue
        last = off + active.size
        for b, j in enumerate(js):
            code = int(res.status[b])
            if code != OK:
                status[j] = STATUS_NAMES[code]
                continue
            beta[j] = res.betas[b, last]
            sig2[j] = sig[b, last, last]
            if fb[b]:
                status[j] = "rho0"
    for j in range(p):
        if status[j] in ("ok", "rho0") and not sig2[j] > 0:
            status[j] = "variance"
            sig2[j] = np.nan
    return SweepResult(beta, sig2, sel, status, active, subsample)


def draw_subsample(fold, active, model: ModelSpec | str, sampler: SamplerConfig,
                   seed, *tags) -> tuple[Subsample, np.ndarray]:
    """Pilot fit plus probability computation and the with-replacement draw.

    Returns the subsample (rows index ``fold``) and the pilot estimate.
    """
    model = as_model(model)
    active = np.asarray(sorted(int(a) for a in active), dtype=np.intp)
    delta = sampler.effective_delta
    fold_a = view(fold, cols=active)
    pilot = np.zeros(active.size + int(model.intercept))
    if delta < 1.0:
        pilot, prow = pilot_fit(fold_a, model, sampler.pilot_fit_size,
                                child_rng(seed, *tags, "pilot"))
        reference = None
        if model.family == "cox" and pilot.size:
            ps = view(fold_a, prow)
            reference = CoxReference.from_sample(design(model, ps.x), ps.time, ps.status, pilot)
        if pilot.size:
            probs = compute_probabilities(fold_a, model, pilot, delta, reference)
        else:
            probs = np.full(fold.n, 1.0 / fold.n)
    else:
        probs = np.full(fold.n, 1.0 / fold.n)
    sub = sample_with_replacement(probs, sampler.r, child_rng(seed, *tags, "draw"))
    return sub, pilot


def partial_regression_sweep(fold, active, model: ModelSpec | str, sampler: SamplerConfig,
                             seed, *tags, rho: float | None = None, n_total: int | None = None,
                             threads: int | None = None) -> SweepResult:
    """One fold's estimation pass: pilot, probabilities, one shared draw and
    the refits for all ``p`` coefficients."""
    sub, _ = draw_subsample(fold, active, model, sampler, seed, *tags)
    if rho is None:
        rho = default_rho(sampler.r, n_total if n_total is not None else 2 * fold.n)
    return sweep_subsample(fold, active, model, sub, n2=fold.n, rho=rho, threads=threads)
