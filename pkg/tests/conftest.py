import numpy as np
import pytest

from nlmeimh import IndividualRecord, PopulationParams, PK1_ORAL, CONSTANT
from nlmeimh.datagen import DEFAULT_TIMES, warfarin_theta

DOSE = 105.0


@pytest.fixture
def theta_pk():
    return warfarin_theta()


@pytest.fixture
def times():
    return np.array(DEFAULT_TIMES)


def noisy_pk_record(theta, seed=0, rid="s"):
    rng = np.random.default_rng(seed)
    t = np.array(DEFAULT_TIMES)
    phi = theta.prior_mean + theta.omega_chol @ rng.standard_normal(theta.dim)
    f = PK1_ORAL.predict(t, np.exp(phi), DOSE)
    return IndividualRecord(rid, t, f + np.sqrt(theta.sigma2) * rng.standard_normal(t.size), DOSE)


@pytest.fixture
def pk_record(theta_pk):
    return noisy_pk_record(theta_pk, seed=3)


def conjugate_setup(n=10, sigma2=0.5, omega2=0.25, m=0.3, seed=0):
    """Constant model f = psi with Gaussian prior: posterior is Gaussian in closed form."""
    rng = np.random.default_rng(seed)
    y = m + 0.4 + np.sqrt(sigma2) * rng.standard_normal(n)
    record = IndividualRecord("c", np.arange(n, dtype=float), y, 1.0)
    theta = PopulationParams([m], [[omega2]], sigma2)
    prec = n / sigma2 + 1.0 / omega2
    mean = (y.sum() / sigma2 + m / omega2) / prec
    return record, theta, CONSTANT, mean, 1.0 / prec


@pytest.fixture
def conjugate():
    return conjugate_setup()


def nelder_mead_oracle(record, theta, model, n_starts=6, seed=0):
    """Best Nelder-Mead optimum of the log joint over several starts (derivative-free)."""
    from scipy.optimize import minimize
    from nlmeimh import log_joint

    rng = np.random.default_rng(seed)
    best = None
    for s in range(n_starts):
        x0 = theta.prior_mean + (0 if s == 0 else theta.omega_chol @ rng.standard_normal(theta.dim))
        res = minimize(lambda p: -log_joint(record, p, theta, model), x0, method="Nelder-Mead",
                       options=dict(xatol=1e-10, fatol=1e-14, maxiter=40000, maxfev=80000))
        if best is None or res.fun < best.fun:
            best = res
    return best.x


def thinned(x):
    """Thin a 1-D chain by its integrated autocorrelation time (n / ESS).

    KS tests assume independent draws; thinning keeps their nominal level.
    """
    import math
    from nlmeimh import ess

    n_eff = ess(x, burn_in=0)[0]
    return x[::max(1, math.ceil(x.size / n_eff))]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
