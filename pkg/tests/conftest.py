import numpy as np
import pytest

from rcvsub.dataset import Dataset

# acceptance results, printed once at the end of the session
CRITERIA: dict[int, tuple[bool, str]] = {}


def record(num: int, ok: bool, detail: str):
    CRITERIA[num] = (bool(ok), detail)
    print(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        ok, detail = CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


def make_data(family, n, p, rng, beta=None, c_hi=3.0):
    X = rng.uniform(-1, 1, (n, p))
    beta = np.zeros(p) if beta is None else np.asarray(beta, float)
    eta = X @ beta
    if family == "linear":
        return Dataset(X, family, y=eta + rng.normal(size=n))
    if family == "logistic":
        return Dataset(X, family, y=(rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float))
    t = 2 * np.sqrt(-np.log(rng.random(n)) * np.exp(-eta))
    c = rng.uniform(0, c_hi, n)
    return Dataset(X, family, time=np.minimum(t, c), status=(t <= c).astype(float))


@pytest.fixture
def data_factory():
    return make_data
