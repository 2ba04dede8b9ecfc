"""Hierarchical model: Gaussian prior on latent coordinates plus Gaussian residuals.

All sampling happens in the latent ("phi") coordinates, where the prior on the
individual parameters is exactly ``N(m(psi_pop), omega)``. A coordinate tagged
``"log"`` has ``psi = exp(phi)``; an ``"identity"`` coordinate has
``psi = phi``. Densities are densities over phi; no lognormal Jacobian enters
the prior.
"""

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DomainError, EvaluationError, FactorizationError
from .structural import jacobian

LOG2PI = math.log(2.0 * math.pi)
TRANSFORMS = ("identity", "log")


def cholesky_lower(a):
    """Lower Cholesky factor of ``a``.

    Raises
    ------
    FactorizationError
        Naming the first pivot that is not strictly positive.
    """
    a = np.asarray(a, dtype=float)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            raise FactorizationError(j)
        L[j, j] = math.sqrt(d)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    # numpy refused but the scalar recursion went through (e.g. NaN elsewhere)
    raise FactorizationError(n - 1)


@dataclass(frozen=True, eq=False)
class PopulationParams:
    """Population parameters theta = (psi_pop, omega, sigma2) and transforms.

    Parameters
    ----------
    psi_pop : array_like, shape (p,)
        Typical individual parameter values (natural scale).
    omega : array_like, shape (p, p)
        Random-effect covariance in latent coordinates.
    sigma2 : float
        Residual variance.
    transform : sequence of str
        ``"identity"`` or ``"log"`` per coordinate.
    """

    psi_pop: np.ndarray
    omega: np.ndarray
    sigma2: float
    transform: tuple = field(default=None)

    def __post_init__(self):
        psi_pop = np.array(self.psi_pop, dtype=float).reshape(-1)
        p = psi_pop.size
        omega = np.array(self.omega, dtype=float)
        if omega.ndim == 1:
            omega = np.diag(omega)
        if omega.shape != (p, p):
            raise ValueError(f"omega must be {p}x{p}, got {omega.shape}")
        if not np.allclose(omega, omega.T, rtol=1e-12, atol=0.0):
            raise ValueError("omega must be symmetric")
        omega = 0.5 * (omega + omega.T)
        transform = self.transform
        if transform is None:
            transform = ("identity",) * p
        elif isinstance(transform, str):
            transform = (transform,) * p
        transform = tuple(transform)
        if len(transform) != p or any(t not in TRANSFORMS for t in transform):
            raise ValueError(f"transform must be {p} tags from {TRANSFORMS}")
        is_log = np.array([t == "log" for t in transform])
        if np.any(psi_pop[is_log] <= 0):
            raise ValueError("psi_pop must be positive on log-transformed coordinates")
        sigma2 = float(self.sigma2)
        # sigma2 == 0 is tolerated for noiseless simulation; densities need > 0
        if not sigma2 >= 0.0:
            raise ValueError("sigma2 must be nonnegative")
        psi_pop.setflags(write=False)
        omega.setflags(write=False)
        object.__setattr__(self, "psi_pop", psi_pop)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "sigma2", sigma2)
        object.__setattr__(self, "transform", transform)

    @classmethod
    def from_sd(cls, psi_pop, omega_sd, sigma2, transform=None):
        """Diagonal omega from per-coordinate standard deviations."""
        sd = np.asarray(omega_sd, dtype=float)
        return cls(psi_pop, np.diag(sd ** 2), sigma2, transform)

    @property
    def dim(self):
        return self.psi_pop.size

    @cached_property
    def is_log(self):
        return np.array([t == "log" for t in self.transform])

    @cached_property
    def prior_mean(self):
        """m(psi_pop): the prior mean in latent coordinates."""
        return to_latent(self.psi_pop, self)

    @cached_property
    def omega_chol(self):
        return cholesky_lower(self.omega)

    @cached_property
    def omega_inv(self):
        Linv = np.linalg.inv(self.omega_chol)
        inv = Linv.T @ Linv
        return 0.5 * (inv + inv.T)

    @cached_property
    def omega_logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.omega_chol))))


@dataclass(frozen=True, eq=False)
class IndividualRecord:
    """Observation times, measurements and dose for one subject."""

    id: str
    times: np.ndarray
    observations: np.ndarray
    dose: float = 1.0

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        y = np.array(self.observations, dtype=float).reshape(-1)
        if t.size < 1 or t.size != y.size:
            raise ValueError("times and observations must have equal length >= 1")
        if np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise ValueError(f"record {self.id}: times must be nonnegative and strictly increasing")
        if not np.all(np.isfinite(y)):
            raise ValueError(f"record {self.id}: observations must be finite")
        if not float(self.dose) > 0:
            raise ValueError(f"record {self.id}: dose must be positive")
        t.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "observations", y)
        object.__setattr__(self, "dose", float(self.dose))

    @property
    def n_obs(self):
        return self.times.size

    def with_observations(self, observations):
        return IndividualRecord(self.id, self.times, observations, self.dose)


def to_latent(psi, theta):
    psi = np.asarray(psi, dtype=float)
    return np.where(theta.is_log, np.log(np.where(theta.is_log, psi, 1.0)), psi)


def to_natural(phi, theta):
    """psi = m^{-1}(phi), coordinate-wise."""
    phi = np.asarray(phi, dtype=float)
    with np.errstate(over="ignore"):
        return np.where(theta.is_log, np.exp(phi), phi)


def dpsi_dphi(phi, theta):
    """Diagonal of d psi / d phi (psi for log coordinates, 1 otherwise)."""
    return np.where(theta.is_log, to_natural(phi, theta), 1.0)


def _check_latent(phi, theta):
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (theta.dim,):
        raise ValueError(f"latent point must have shape ({theta.dim},), got {phi.shape}")
    if not np.all(np.isfinite(phi)):
        raise ValueError(f"latent point has non-finite entries: {phi.tolist()}")
    return phi


def log_prior(phi, theta):
    """log N(phi; m(psi_pop), omega)."""
    phi = _check_latent(phi, theta)
    z = solve_triangular(theta.omega_chol, phi - theta.prior_mean, lower=True)
    return -0.5 * (theta.dim * LOG2PI + theta.omega_logdet + float(z @ z))


def _predict(record, psi, model):
    model.check_domain(psi)
    f = np.asarray(model.predict(record.times, psi, record.dose), dtype=float)
    bad = np.flatnonzero(~np.isfinite(f))
    if bad.size:
        raise EvaluationError(int(bad[0]))
    return f


def log_likelihood(record, phi, theta, model):
    """Gaussian log-likelihood of the record's observations at ``phi``.

    Raises
    ------
    DomainError
        ``m^{-1}(phi)`` is outside the structural model's domain.
    EvaluationError
        The structural model produced a non-finite prediction.
    """
    phi = _check_latent(phi, theta)
    if not theta.sigma2 > 0:
        raise ValueError("sigma2 must be positive to evaluate a likelihood")
    f = _predict(record, to_natural(phi, theta), model)
    r = record.observations - f
    n = record.n_obs
    return -0.5 * n * math.log(2.0 * math.pi * theta.sigma2) - float(r @ r) / (2.0 * theta.sigma2)


def log_joint(record, phi, theta, model):
    """log p(y_i | phi) + log p(phi); -inf when psi leaves the model domain."""
    phi = _check_latent(phi, theta)
    try:
        return log_likelihood(record, phi, theta, model) + log_prior(phi, theta)
    except DomainError:
        return -math.inf


def latent_jacobian(record, phi, theta, model):
    """Predictions and Jacobian of f_i with respect to phi (chain rule applied)."""
    res = jacobian(model, record.times, to_natural(phi, theta), record.dose)
    return res.values, res.jac * dpsi_dphi(phi, theta)


def grad_log_likelihood(record, phi, theta, model):
    f, J = latent_jacobian(record, phi, theta, model)
    return J.T @ (record.observations - f) / theta.sigma2


def grad_log_joint(record, phi, theta, model):
    """J^T (y - f) / sigma2 - omega^{-1} (phi - m), J taken in phi coordinates."""
    phi = _check_latent(phi, theta)
    return (grad_log_likelihood(record, phi, theta, model)
            - theta.omega_inv @ (phi - theta.prior_mean))


class Posterior:
    """The conditional target p(phi | y_i) up to a constant, for one individual.

    Bundles a record, population parameters and structural model, and exposes
    the fast evaluation paths used inside MCMC loops.
    """

    def __init__(self, record, theta, model):
        if model.n_params != theta.dim:
            raise ValueError(
                f"model {model.name} has {model.n_params} parameters, theta has {theta.dim}")
        self.record = record
        self.theta = theta
        self.model = model
        self._m = theta.prior_mean
        self._oinv = theta.omega_inv
        self._const = -0.5 * (theta.dim * LOG2PI + theta.omega_logdet)
        if theta.sigma2 > 0:
            self._const -= 0.5 * record.n_obs * math.log(2.0 * math.pi * theta.sigma2)
        self._half_inv_s2 = 0.5 / theta.sigma2 if theta.sigma2 > 0 else math.nan

    @property
    def dim(self):
        return self.theta.dim

    @cached_property
    def prior(self):
        """The population distribution as a GaussianProposal."""
        from .proposal import prior_proposal

        return prior_proposal(self.theta)

    def logpdf(self, phi):
        """log_joint without re-validation; -inf outside the domain."""
        psi = to_natural(phi, self.theta)
        if not self.model.in_domain(psi):
            return -math.inf
        r = self.record.observations - self.model.predict(self.record.times, psi, self.record.dose)
        rss = float(r @ r)
        if not math.isfinite(rss):
            raise EvaluationError(int(np.flatnonzero(~np.isfinite(r))[0]))
        d = phi - self._m
        return self._const - self._half_inv_s2 * rss - 0.5 * float(d @ self._oinv @ d)

    def log_likelihood(self, phi):
        return log_likelihood(self.record, phi, self.theta, self.model)

    def grad(self, phi):
        """Gradient of log_joint in phi; None outside the domain."""
        psi = to_natural(phi, self.theta)
        if not self.model.in_domain(psi):
            return None
        return grad_log_joint(self.record, phi, self.theta, self.model)
