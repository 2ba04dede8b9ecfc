"""Gaussian approximations of p(phi | y_i) centred at the MAP.

Two constructions share the mean ``phi_hat`` and differ in the curvature:

* linearized: ``(J^T J / sigma2 + omega^{-1})^{-1}``, J the Jacobian of f_i
  in latent coordinates (expected information);
* laplace: ``(-H + omega^{-1})^{-1}``, H the numerical Hessian of the
  log-likelihood (observed information), eigenvalues of -H floored at 0.
"""

from dataclasses import dataclass, field
from typing import NamedTuple
import math

import numpy as np

from .errors import FactorizationError, NotConvergedError, ProposalError
from .model import LOG2PI, _check_latent, cholesky_lower, latent_jacobian, to_natural

EPS = np.finfo(float).eps
_FD_SCALE = EPS ** (1.0 / 3.0)

JITTER_START = 1e-10
JITTER_STOP = 1e-4
KINDS = ("laplace", "linearized", "prior")


def factorize_with_jitter(a):
    """Cholesky of ``a`` with a bounded diagonal jitter ladder.

    Tries ``a`` itself, then ``a + c * trace(a)/p * I`` for
    ``c = 1e-10, 1e-9, ..., 1e-4``.

    Returns
    -------
    (L, jitter) : the lower factor and the absolute jitter added (0.0 if none).

    Raises
    ------
    ProposalError
        With the condition number of ``a`` when every rung fails.
    """
    a = np.asarray(a, dtype=float)
    p = a.shape[0]
    try:
        return cholesky_lower(a), 0.0
    except FactorizationError:
        pass
    scale = abs(float(np.trace(a))) / p or 1.0
    c = JITTER_START
    while c <= JITTER_STOP * (1 + 1e-9):
        jitter = c * scale
        try:
            return cholesky_lower(a + jitter * np.eye(p)), jitter
        except FactorizationError:
            c *= 10.0
    cond = np.linalg.cond(a)
    raise ProposalError(f"covariance not positive definite after max jitter (condition number {cond:.3e})")


@dataclass(frozen=True, eq=False)
class GaussianProposal:
    """Multivariate normal proposal with cached factorization.

    Build with :meth:`from_cov` or :meth:`from_precision`; the constructor
    assumes ``chol @ chol.T == cov``.
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray
    logdet: float
    kind: str
    jitter: float = 0.0
    _chol_inv: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_cov(cls, mean, cov, kind, jitter=0.0):
        mean = np.array(mean, dtype=float).reshape(-1)
        cov = np.array(cov, dtype=float)
        cov = 0.5 * (cov + cov.T)
        L, extra = factorize_with_jitter(cov)
        if extra:
            cov = cov + extra * np.eye(cov.shape[0])
        return cls._build(mean, cov, L, kind, jitter + extra)

    @classmethod
    def from_precision(cls, mean, precision, kind):
        """Invert ``precision`` through its Cholesky factor."""
        P = np.array(precision, dtype=float)
        P = 0.5 * (P + P.T)
        Lp, jitter = factorize_with_jitter(P)
        Lp_inv = np.linalg.inv(Lp)
        cov = Lp_inv.T @ Lp_inv
        return cls.from_cov(mean, cov, kind, jitter)

    @classmethod
    def _build(cls, mean, cov, L, kind, jitter):
        if kind not in KINDS:
            raise ValueError(f"unknown proposal kind {kind!r}")
        diag = np.diag(L)
        if np.all(diag > 0):
            logdet = 2.0 * float(np.sum(np.log(diag)))
            chol_inv = np.linalg.inv(L)
        else:
            logdet = -math.inf
            chol_inv = None
        for arr in (mean, cov, L):
            arr.setflags(write=False)
        return cls(mean, cov, L, logdet, kind, float(jitter), chol_inv)

    @classmethod
    def degenerate(cls, mean, kind="linearized"):
        """Point mass at ``mean`` (the zero-covariance limit)."""
        mean = np.array(mean, dtype=float).reshape(-1)
        z = np.zeros((mean.size, mean.size))
        return cls._build(mean, z, z.copy(), kind, 0.0)

    @property
    def dim(self):
        return self.mean.size

    def to_dict(self):
        return {
            "kind": self.kind,
            "mean": [float(x) for x in self.mean],
            "cov": [[float(x) for x in row] for row in self.cov],
            "logdet": float(self.logdet),
            "jitter": float(self.jitter),
        }


def proposal_sample(prop, rng):
    """One draw ``mean + chol @ z`` with ``z ~ N(0, I)``."""
    return prop.mean + prop.chol @ rng.standard_normal(prop.dim)


def proposal_logpdf(prop, phi):
    """Exact Gaussian log-density at ``phi``."""
    if prop._chol_inv is None:
        raise ValueError("log-density of a degenerate proposal is undefined")
    z = prop._chol_inv @ (np.asarray(phi, dtype=float) - prop.mean)
    return -0.5 * (prop.dim * LOG2PI + prop.logdet + float(z @ z))


def prior_proposal(theta):
    """The population distribution N(m(psi_pop), omega) as a proposal."""
    return GaussianProposal._build(
        theta.prior_mean.copy(), theta.omega.copy(), theta.omega_chol.copy(), "prior", 0.0)


def _require_converged(map_result, allow_unconverged):
    if not map_result.converged and not allow_unconverged:
        raise NotConvergedError(
            f"MAP not converged (grad_norm={map_result.grad_norm:.3e} > gtol={map_result.gtol:.1e}); "
            "pass allow_unconverged=True to override")


def expected_information(record, theta, model, phi):
    """J^T J / sigma2 with J the latent-coordinate Jacobian at ``phi``."""
    _, J = latent_jacobian(record, phi, theta, model)
    return J.T @ J / theta.sigma2


def observed_information(record, theta, model, phi, observations=None):
    """Numerical observed information -d^2 log p(y | phi) / d phi^2.

    Central differences of the analytic log-likelihood gradient with steps
    ``eps**(1/3) * max(1, |phi_l|)``, then symmetrized. ``observations`` may be
    a single vector or an ``(n_sims, n_obs)`` batch sharing the same times; the
    gradient is affine in y so one stencil serves the whole batch.
    """
    phi = _check_latent(phi, theta)
    y = record.observations if observations is None else np.asarray(observations, dtype=float)
    batched = y.ndim == 2
    Y = y if batched else y[None, :]
    p = phi.size
    out = np.empty((Y.shape[0], p, p))
    for l in range(p):
        h = _FD_SCALE * max(1.0, abs(phi[l]))
        up = phi.copy()
        dn = phi.copy()
        up[l] += h
        dn[l] -= h
        h2 = up[l] - dn[l]
        f_up, J_up = latent_jacobian(record, up, theta, model)
        f_dn, J_dn = latent_jacobian(record, dn, theta, model)
        # grad(y) = J^T (y - f) / sigma2
        g_up = (Y - f_up) @ J_up
        g_dn = (Y - f_dn) @ J_dn
        out[:, :, l] = -(g_up - g_dn) / (h2 * theta.sigma2)
    out = 0.5 * (out + np.transpose(out, (0, 2, 1)))
    return out if batched else out[0]


def linearized_proposal(record, theta, model, map_result, allow_unconverged=False):
    """Gaussian from linearizing f_i around the MAP (expected information)."""
    _require_converged(map_result, allow_unconverged)
    phi_hat = map_result.phi_hat
    precision = expected_information(record, theta, model, phi_hat) + theta.omega_inv
    return GaussianProposal.from_precision(phi_hat, precision, "linearized")


def laplace_proposal(record, theta, model, map_result, allow_unconverged=False):
    """Gaussian from the Laplace expansion at the MAP (observed information).

    Negative eigenvalues of the observed information are clipped to zero
    before adding omega^{-1}.
    """
    _require_converged(map_result, allow_unconverged)
    phi_hat = map_result.phi_hat
    info = observed_information(record, theta, model, phi_hat)
    w, V = np.linalg.eigh(info)
    if np.any(w < 0):
        info = (V * np.clip(w, 0.0, None)) @ V.T
    precision = info + theta.omega_inv
    return GaussianProposal.from_precision(phi_hat, precision, "laplace")


class InfoGap(NamedTuple):
    """Relative Frobenius gap between averaged observed and expected information."""

    gap: float
    stderr: float
    n_sims: int


def expected_info_gap(record, theta, model, map_result, n_sims, seed):
    """Monte-Carlo check that E[observed information] equals J^T J / sigma2.

    Simulates ``n_sims`` datasets ``y ~ N(f(phi_hat), sigma2 I)``, averages
    their observed information at ``phi_hat``, and reports the relative
    Frobenius distance to the expected information together with the
    batch-estimated standard error of that distance (its root-mean-square
    value under the null).
    """
    if n_sims < 1:
        raise ValueError("n_sims must be >= 1")
    phi_hat = map_result.phi_hat
    rng = np.random.default_rng(seed)
    f = np.asarray(model.predict(record.times, to_natural(phi_hat, theta), record.dose), dtype=float)
    Y = f + math.sqrt(theta.sigma2) * rng.standard_normal((n_sims, f.size))
    obs = observed_information(record, theta, model, phi_hat, Y)
    expected = expected_information(record, theta, model, phi_hat)
    scale = float(np.linalg.norm(expected))
    dev = obs - expected
    gap = float(np.linalg.norm(dev.mean(axis=0))) / scale
    if n_sims > 1:
        var = dev.var(axis=0, ddof=1)
        stderr = math.sqrt(float(var.sum()) / n_sims) / scale
    else:
        stderr = math.nan
    return InfoGap(gap, stderr, n_sims)
