"""Criterion functions for the linear, logistic and Cox families.

Every solver in the package goes through the *batched* kernels here:
``criterion_batch`` evaluates value, gradient and Hessian of the weighted
criterion ``(1/r) sum_i w_i m(Z_i, beta)`` for ``B`` designs sharing the
same rows, and ``row_scores_batch`` returns the per-row gradient
contributions used by the sandwich variance.  Conventions follow
minimisation: the gradient points uphill.

The Cox criterion is the weighted negative log partial likelihood with
Breslow ties, risk sets formed within the rows that are passed in::

    l(beta) = -(1/r) sum_i w_i d_i [x_i'beta - log sum_{t_j >= t_i} w_j exp(x_j'beta)]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import expit

from .errors import (ConfigError, DegenerateRiskSetError, InputError,
                     ShapeError, WeightError)

FAMILIES = ("linear", "logistic", "cox")


@dataclass(frozen=True)
class ModelSpec:
    family: str
    intercept: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "cox" and self.intercept:
            raise ConfigError("an intercept is not identifiable in the Cox model")


def as_model(model) -> ModelSpec:
    if isinstance(model, ModelSpec):
        return model
    return ModelSpec(str(model))


@dataclass(frozen=True)
class WeightedCriterion:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray


def design(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Prepend the unpenalised column of ones when the model has an intercept."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if model.intercept:
        return np.column_stack([np.ones(x.shape[0]), x])
    return x


def softplus(t):
    t = np.asarray(t, dtype=np.float64)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def logistic_loss(eta, y):
    """``log(1 + e^eta) - y*eta`` without overflow or cancellation."""
    eta = np.asarray(eta, dtype=np.float64)
    return np.maximum(eta, 0.0) - y * eta + np.log1p(np.exp(-np.abs(eta)))


# -- Cox risk-set machinery -------------------------------------------------

def cox_order(time: np.ndarray):
    """Descending-time order plus first/last index of each row's tie group
    (indices refer to the sorted order)."""
    order = np.argsort(-np.asarray(time), kind="stable")
    neg = -np.asarray(time)[order]
    gstart = np.searchsorted(neg, neg, side="left").astype(np.int64)
    gend = (np.searchsorted(neg, neg, side="right") - 1).astype(np.int64)
    return order, gstart, gend


@njit(cache=True)
def _cox_risk_sums(eta, X, w, dw, gstart, gend):
    # Rows sorted by decreasing time.  For each row i (risk set R_i = {t_j >= t_i}):
    #   L_i    = log sum_{R_i} w_j exp(eta_j)
    #   xbar_i = weighted mean of x over R_i
    #   G_i    = sum_{k: t_k <= t_i} dw_k exp(L_i - L_k)
    #   Gx_i   = sum_{k: t_k <= t_i} dw_k xbar_k exp(L_i - L_k)
    B, r, k = X.shape
    L = np.empty((B, r))
    xbar = np.empty((B, r, k))
    G = np.empty((B, r))
    Gx = np.empty((B, r, k))
    s1 = np.empty(k)
    gx = np.empty(k)
    for b in range(B):
        m = -np.inf
        s0 = 0.0
        s1[:] = 0.0
        i = 0
        while i < r:
            e = gend[i]
            for t in range(i, e + 1):
                v = eta[b, t] + np.log(w[t])
                if v > m:
                    if m > -np.inf:
                        sc = np.exp(m - v)
                        s0 *= sc
                        for c in range(k):
                            s1[c] *= sc
                    m = v
                ev = np.exp(v - m)
                s0 += ev
                for c in range(k):
                    s1[c] += ev * X[b, t, c]
            lg = np.log(s0) + m
            for t in range(i, e + 1):
                L[b, t] = lg
                for c in range(k):
                    xbar[b, t, c] = s1[c] / s0
            i = e + 1
        g = 0.0
        gx[:] = 0.0
        lprev = 0.0
        started = False
        i = r - 1
        while i >= 0:
            st = gstart[i]
            lg = L[b, i]
            if started:
                f = np.exp(lg - lprev)
                g *= f
                for c in range(k):
                    gx[c] *= f
            for t in range(st, i + 1):
                g += dw[t]
                for c in range(k):
                    gx[c] += dw[t] * xbar[b, t, c]
            for t in range(st, i + 1):
                G[b, t] = g
                for c in range(k):
                    Gx[b, t, c] = gx[c]
            lprev = lg
            started = True
            i = st - 1
    return L, xbar, G, Gx


def _cox_pieces(Xb, time, status, w, betas):
    order, gstart, gend = cox_order(time)
    Xs = np.ascontiguousarray(Xb[:, order, :])
    ws = np.ascontiguousarray(w[order], dtype=np.float64)
    ds = np.ascontiguousarray(status[order], dtype=np.float64)
    dw = ws * ds
    eta = np.einsum("brd,bd->br", Xs, betas)
    L, xbar, G, Gx = _cox_risk_sums(eta, Xs, ws, dw, gstart, gend)
    return order, Xs, ws, ds, dw, eta, L, xbar, G, Gx


# -- batched kernels --------------------------------------------------------

def _check_weights(w):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or not np.isfinite(w).all() or (w <= 0).any():
        raise WeightError("weights must be finite and strictly positive")
    return w


def criterion_batch(family: str, Xb: np.ndarray, resp, w: np.ndarray,
                    betas: np.ndarray, hessian: bool = True):
    """Value ``(B,)``, gradient ``(B, d)`` and Hessian ``(B, d, d)`` of the
    weighted criterion for designs ``Xb`` of shape ``(B, r, d)``."""
    B, r, d = Xb.shape
    if family == "linear":
        eta = np.einsum("brd,bd->br", Xb, betas)
        res = resp[None, :] - eta
        wres = w[None, :] * res
        value = (wres * res).sum(axis=1) / r
        grad = -2.0 / r * np.einsum("br,brd->bd", wres, Xb)
        hess = None
        if hessian:
            hess = 2.0 / r * np.matmul(np.swapaxes(Xb * w[None, :, None], 1, 2), Xb)
        return value, grad, hess
    if family == "logistic":
        eta = np.einsum("brd,bd->br", Xb, betas)
        value = (w[None, :] * logistic_loss(eta, resp[None, :])).sum(axis=1) / r
        mu = expit(eta)
        grad = np.einsum("br,brd->bd", w[None, :] * (mu - resp[None, :]), Xb) / r
        hess = None
        if hessian:
            v = w[None, :] * mu * (1.0 - mu)
            hess = np.matmul(np.swapaxes(Xb * v[:, :, None], 1, 2), Xb) / r
        return value, grad, hess
    if family == "cox":
        time, status = resp
        if not (np.asarray(status) > 0).any():
            raise DegenerateRiskSetError("cox criterion needs at least one event")
        _, Xs, ws, _, dw, eta, L, xbar, G, _ = _cox_pieces(Xb, time, status, w, betas)
        value = -(dw[None, :] * (eta - L)).sum(axis=1) / r
        grad = -np.einsum("r,brd->bd", dw, Xs - xbar) / r
        hess = None
        if hessian:
            u = np.exp(eta - L) * G * ws[None, :]
            hess = (np.matmul(np.swapaxes(Xs * u[:, :, None], 1, 2), Xs)
                    - np.matmul(np.swapaxes(xbar * dw[None, :, None], 1, 2), xbar)) / r
            hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
        return value, grad, hess
    raise ConfigError(f"unknown family {family!r}")


def row_scores_batch(family: str, Xb: np.ndarray, resp, w: np.ndarray,
                     betas: np.ndarray) -> np.ndarray:
    """Per-row gradient contributions ``(B, r, d)``; the weighted criterion's
    gradient equals ``(1/r) sum_i w_i * scores[:, i]``.

    For Cox these are the score residuals of the weighted risk sets.
    """
    if family == "linear":
        res = resp[None, :] - np.einsum("brd,bd->br", Xb, betas)
        return -2.0 * res[:, :, None] * Xb
    if family == "logistic":
        mu = expit(np.einsum("brd,bd->br", Xb, betas))
        return (mu - resp[None, :])[:, :, None] * Xb
    if family == "cox":
        time, status = resp
        order, Xs, _, ds, _, eta, L, xbar, G, Gx = _cox_pieces(Xb, time, status, w, betas)
        f = np.exp(eta - L)[:, :, None]
        s = ds[None, :, None] * (Xs - xbar) - f * G[:, :, None] * Xs + f * Gx
        out = np.empty_like(s)
        out[:, order, :] = -s
        return out
    raise ConfigError(f"unknown family {family!r}")


# -- single-problem API -----------------------------------------------------

def _xy(sample):
    return np.asarray(sample.x, dtype=np.float64), sample.response


def row_loss(model: ModelSpec | str, x, y, beta) -> float:
    """``m(Z, beta)`` for one observation (linear and logistic only; the Cox
    partial likelihood does not decompose over rows)."""
    model = as_model(model)
    if model.family == "cox":
        raise InputError("the Cox criterion is not row-decomposable; use weighted_aggregate")
    x = design(model, np.atleast_1d(np.asarray(x, dtype=np.float64))[None, :])[0]
    beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
    if x.shape != beta.shape:
        raise ShapeError(f"row has {x.size} entries but beta has {beta.size}")
    eta = float(x @ beta)
    if model.family == "linear":
        return (float(y) - eta) ** 2
    return float(logistic_loss(eta, float(y)))


def weighted_aggregate(model: ModelSpec | str, sample, weights, beta) -> WeightedCriterion:
    """Weighted criterion ``(1/r) sum w_i m(Z_i, beta)`` over the rows of
    ``sample`` (a dataset or view) with exact derivatives."""
    model = as_model(model)
    x, resp = _xy(sample)
    X = design(model, x)
    beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
    if beta.shape != (X.shape[1],):
        raise ShapeError(f"beta has {beta.size} entries, design has {X.shape[1]} columns")
    w = _check_weights(weights)
    if w.shape[0] != X.shape[0]:
        raise ShapeError("one weight per row required")
    v, g, h = criterion_batch(model.family, X[None], resp, w, beta[None])
    return WeightedCriterion(float(v[0]), g[0], h[0])


def row_scores(model: ModelSpec | str, sample, weights, beta) -> np.ndarray:
    """Per-row criterion gradients ``(r, d)`` at ``beta``."""
    model = as_model(model)
    x, resp = _xy(sample)
    X = design(model, x)
    w = _check_weights(weights) if weights is not None else np.ones(X.shape[0])
    beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
    return row_scores_batch(model.family, X[None], resp, w, beta[None])[0]


@dataclass(frozen=True)
class CoxReference:
    """Risk-set summaries of a reference (pilot) sample, used to score rows
    that are not part of it."""

    times: np.ndarray   # ascending unique times
    log_s0: np.ndarray
    xbar: np.ndarray
    g: np.ndarray
    gx: np.ndarray

    @classmethod
    def from_sample(cls, X: np.ndarray, time, status, beta) -> "CoxReference":
        X = np.asarray(X, dtype=np.float64)
        status = np.asarray(status, dtype=np.float64)
        if not (status > 0).any():
            raise DegenerateRiskSetError("pilot sample contains no events")
        beta = np.asarray(beta, dtype=np.float64)
        w = np.ones(X.shape[0])
        order, Xs, _, _, _, _, L, xbar, G, Gx = _cox_pieces(X[None], time, status, w, beta[None])
        ts = np.asarray(time)[order]
        # one entry per tie group, ascending in time
        last = np.r_[ts[1:] != ts[:-1], True]
        pick = np.nonzero(last)[0][::-1]
        return cls(ts[pick], L[0, pick], xbar[0, pick], G[0, pick], Gx[0, pick])

    def scores(self, X: np.ndarray, time, status, beta) -> np.ndarray:
        """Score residuals of arbitrary rows against the reference risk sets."""
        X = np.asarray(X, dtype=np.float64)
        time = np.asarray(time, dtype=np.float64)
        eta = X @ np.asarray(beta, dtype=np.float64)
        ng = len(self.times)
        i_risk = np.minimum(np.searchsorted(self.times, time, side="left"), ng - 1)
        i_cum = np.searchsorted(self.times, time, side="right") - 1
        has = i_cum >= 0
        i_cum = np.maximum(i_cum, 0)
        f = np.where(has, np.exp(np.minimum(eta - self.log_s0[i_cum], 700.0)), 0.0)
        s = (np.asarray(status, dtype=np.float64)[:, None] * (X - self.xbar[i_risk])
             - (f * self.g[i_cum])[:, None] * X + f[:, None] * self.gx[i_cum])
        return -s


def score_norms(model: ModelSpec | str, x, resp, beta, reference=None) -> np.ndarray:
    """Euclidean norm of each row's criterion gradient at ``beta``.

    Linear rows use ``|y - x'beta| * ||x||`` (the constant 2 is dropped; it
    cancels once the norms are normalised into probabilities).  Cox rows are
    scored against ``reference`` risk sets, by default their own.
    """
    model = as_model(model)
    X = design(model, x)
    beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
    if beta.shape != (X.shape[1],):
        raise ShapeError(f"beta has {beta.size} entries, design has {X.shape[1]} columns")
    if model.family == "linear":
        return np.abs(resp - X @ beta) * np.linalg.norm(X, axis=1)
    if model.family == "logistic":
        return np.abs(resp - expit(X @ beta)) * np.linalg.norm(X, axis=1)
    time, status = resp
    if reference is None:
        reference = CoxReference.from_sample(X, time, status, beta)
    return np.linalg.norm(reference.scores(X, time, status, beta), axis=1)


@njit(cache=True)
def _glm_norms_rows(logistic, X, rows, cols, y, beta, intercept):
    # columns outer so each pass streams down one column of the base matrix
    m = rows.shape[0]
    eta = np.full(m, beta[0] if intercept else 0.0)
    sq = np.full(m, 1.0 if intercept else 0.0)
    off = 1 if intercept else 0
    for k in range(cols.shape[0]):
        c = cols[k]
        b = beta[off + k]
        for i in range(m):
            v = X[rows[i], c]
            eta[i] += b * v
            sq[i] += v * v
    out = np.empty(m)
    for i in range(m):
        e = eta[i]
        if logistic:
            e = 1.0 / (1.0 + np.exp(-e)) if e >= 0 else np.exp(e) / (1.0 + np.exp(e))
        out[i] = abs(y[rows[i]] - e) * np.sqrt(sq[i])
    return out


def view_score_norms(model: ModelSpec | str, fold, beta) -> np.ndarray:
    """:func:`score_norms` for a linear or logistic dataset view, computed
    straight from the base arrays without materialising the view."""
    model = as_model(model)
    if model.family == "cox":
        raise InputError("view_score_norms covers linear and logistic models only")
    beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
    if beta.shape != (fold.p + int(model.intercept),):
        raise ShapeError(f"beta has {beta.size} entries, design has "
                         f"{fold.p + int(model.intercept)} columns")
    return _glm_norms_rows(model.family == "logistic", fold.base.x, fold.rows, fold.cols,
                           fold.base.y, beta, model.intercept)


def row_gradient_norm(model: ModelSpec | str, x, y, beta, reference=None) -> float:
    """Single-row version of :func:`score_norms`; for Cox ``y`` is
    ``(time, status)`` and ``reference`` a :class:`CoxReference`."""
    model = as_model(model)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))[None, :]
    if model.family == "cox":
        if reference is None:
            raise InputError("cox row scores need a reference sample")
        t, s = y
        resp = (np.array([t], float), np.array([s], float))
    else:
        resp = np.array([y], dtype=np.float64)
    return float(score_norms(model, x, resp, beta, reference)[0])
