"""Per-individual MAP estimation in latent coordinates.

Quasi-Newton (BFGS) ascent on ``log_joint`` with a backtracking line search
enforcing sufficient increase.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .model import _check_latent, grad_log_joint, log_joint

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class MapOptions:
    gtol: float = 1e-6
    max_iter: int = 200
    initial_step: float = 1.0
    backtrack: float = 0.5
    c1: float = 1e-4
    max_backtracks: int = 60

    def __post_init__(self):
        if not self.gtol > 0:
            raise ValueError("gtol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class MapResult:
    """MAP point in latent coordinates with its convergence certificate.

    ``trace`` holds the objective after each accepted step, starting with the
    objective at the initial point.
    """

    phi_hat: np.ndarray
    objective: float
    grad_norm: float
    iterations: int
    converged: bool
    gtol: float
    trace: tuple = field(default=(), repr=False)

    @property
    def initial_objective(self):
        return self.trace[0] if self.trace else math.nan

    def to_dict(self):
        return {
            "phi_hat": [float(x) for x in self.phi_hat],
            "objective": float(self.objective),
            "grad_norm": float(self.grad_norm),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "gtol": float(self.gtol),
        }


def find_map(record, theta, model, init=None, opts=None):
    """Maximize ``log_joint`` over phi for one individual.

    Parameters
    ----------
    record : IndividualRecord
    theta : PopulationParams
    model : StructuralModel
    init : array_like, optional
        Starting latent point; defaults to the prior mode ``m(psi_pop)``.
    opts : MapOptions, optional

    Returns
    -------
    MapResult
        ``converged`` is False when ``max_iter`` is exhausted or the line
        search stalls before ``||grad||_inf <= gtol``.

    Raises
    ------
    ValueError
        If the objective is not finite at ``init``.
    """
    opts = opts or MapOptions()
    x = theta.prior_mean.copy() if init is None else _check_latent(init, theta).copy()
    fx = log_joint(record, x, theta, model)
    if not math.isfinite(fx):
        raise ValueError(f"log_joint is not finite at the initial point {x.tolist()}")
    g = grad_log_joint(record, x, theta, model)
    p = x.size
    H = np.eye(p)
    scaled = False
    trace = [fx]
    it = 0
    while it < opts.max_iter and np.max(np.abs(g)) > opts.gtol:
        it += 1
        d = H @ g
        slope = float(g @ d)
        if slope <= 0:
            # lost ascent direction; restart from steepest ascent
            H = np.eye(p)
            scaled = False
            d = g.copy()
            slope = float(g @ g)
        alpha = opts.initial_step
        if not scaled:
            alpha = min(alpha, 1.0 / max(1.0, float(np.max(np.abs(d)))))
        # allowance for rounding in the objective near the optimum
        slack = 8.0 * EPS * max(1.0, abs(fx))
        for _ in range(opts.max_backtracks):
            xn = x + alpha * d
            fn = log_joint(record, xn, theta, model)
            if fn >= fx + opts.c1 * alpha * slope - slack and math.isfinite(fn):
                break
            alpha *= opts.backtrack
        else:
            break
        gn = grad_log_joint(record, xn, theta, model)
        s = xn - x
        yv = g - gn  # gradient change of the minimized function -log_joint
        sy = float(s @ yv)
        if sy > EPS * float(s @ s) * max(1.0, float(yv @ yv)) ** 0.5:
            if not scaled:
                H = np.eye(p) * (sy / float(yv @ yv))
                scaled = True
            rho = 1.0 / sy
            V = np.eye(p) - rho * np.outer(s, yv)
            H = V @ H @ V.T + rho * np.outer(s, s)
        x, fx, g = xn, fn, gn
        trace.append(fx)
    grad_norm = float(np.max(np.abs(g)))
    return MapResult(
        phi_hat=x,
        objective=fx,
        grad_norm=grad_norm,
        iterations=it,
        converged=grad_norm <= opts.gtol,
        gtol=opts.gtol,
        trace=tuple(trace),
    )


def find_map_multistart(record, theta, model, n_starts=5, seed=0, opts=None):
    """Best of ``find_map`` runs from the prior mode and prior draws.

    Offered for posteriors suspected to be multimodal; no global guarantee.
    """
    rng = np.random.default_rng(seed)
    starts = [theta.prior_mean.copy()]
    L = theta.omega_chol
    for _ in range(n_starts - 1):
        starts.append(theta.prior_mean + L @ rng.standard_normal(theta.dim))
    best = None
    for s in starts:
        try:
            res = find_map(record, theta, model, s, opts)
        except ValueError:
            continue
        if best is None or (res.converged, res.objective) > (best.converged, best.objective):
            best = res
    if best is None:
        raise ValueError("no start point had a finite objective")
    return best
