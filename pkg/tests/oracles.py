"""Independent reference computations used by the unit and acceptance tests."""

import numpy as np
from scipy.optimize import minimize_scalar

from rcvsub.models import ModelSpec
from rcvsub.scad import _prepare, solve_scad


def scad_threshold(z, lam, a):
    """argmin_b (b - z)^2 + P_lam(|b|), the univariate problem of an
    orthonormal least-squares design (unit mean square column)."""
    s = abs(z)
    if s <= 1.5 * lam:
        b = max(0.0, s - lam / 2)
    elif s <= a * lam:
        b = (2 * (a - 1) * s - a * lam) / (2 * a - 3)
    else:
        b = s
    return np.sign(z) * b


def scad_brute(z, lam, a):
    # branch-wise bounded minimisation, no knowledge of the closed form
    def f(b):
        t = abs(b)
        if t <= lam:
            pen = lam * t
        elif t <= a * lam:
            pen = (2 * a * lam * t - t * t - lam * lam) / (2 * (a - 1))
        else:
            pen = lam ** 2 * (a + 1) / 2
        return (b - z) ** 2 + pen
    s = np.sign(z) if z else 1.0
    cands = [0.0]
    for lo, hi in ((0, lam), (lam, a * lam), (a * lam, max(a * lam, abs(z)) + 1)):
        res = minimize_scalar(lambda u: f(s * u), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-13})
        cands.append(s * res.x)
    return min(cands, key=f)


def orthonormal_instance(z, r=40, seed=0):
    """x = +-1 (mean 0, mean square 1) and y with mean(x*y) = z exactly."""
    x = np.tile([1.0, -1.0], r // 2)
    e = np.random.default_rng(seed).normal(size=r)
    e -= x * (x @ e) / r
    return x[:, None], z * x + e


def univariate_scad(z, lam, a, r=40):
    x, y = orthonormal_instance(z, r)
    prob = _prepare(x, y, ModelSpec("linear"))
    beta, _, conv, _, trace = solve_scad(prob, lam, a, tol=1e-13, max_sweeps=200)
    return float(beta[0] / prob.scale[0]), conv, trace


def monotone(trace):
    return bool(np.all(np.diff(trace) <= 1e-12 * max(1.0, abs(trace[0]))))
