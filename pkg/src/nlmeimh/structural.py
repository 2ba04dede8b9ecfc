"""Structural models f(t, psi) and their Jacobians.

A structural model maps observation times and a vector of individual
parameters ``psi`` to noiseless predictions. Built-in models carry analytic
Jacobians; user models fall back to central differences.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, JacobianError

EPS = np.finfo(float).eps
_FD_SCALE = EPS ** (1.0 / 3.0)

# |ka - k| <= DEGENERACY_REL * max(ka, k) switches to the confluent form
DEGENERACY_REL = 1e-8


@dataclass(frozen=True)
class StructuralModel:
    """A deterministic prediction function with optional analytic derivatives.

    Parameters
    ----------
    name : str
        Registry key.
    param_names : tuple of str
        One label per coordinate of ``psi``.
    predict : callable
        ``predict(times, psi, dose) -> ndarray`` of shape ``(n,)``.
    domain : tuple of (float, float)
        Open interval of admissible values for each coordinate.
    analytic_jacobian : callable, optional
        ``analytic_jacobian(times, psi, dose) -> (values, jac)`` with ``jac``
        of shape ``(n, p)``.
    """

    name: str
    param_names: tuple
    predict: Callable
    domain: tuple = ()
    analytic_jacobian: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "param_names", tuple(self.param_names))
        if not self.domain:
            dom = tuple((-np.inf, np.inf) for _ in self.param_names)
            object.__setattr__(self, "domain", dom)
        if len(self.domain) != len(self.param_names):
            raise ValueError("domain must have one interval per parameter")

    @property
    def n_params(self):
        return len(self.param_names)

    def in_domain(self, psi):
        psi = np.asarray(psi, dtype=float)
        if psi.shape != (self.n_params,) or not np.all(np.isfinite(psi)):
            return False
        return all(lo < x < hi for x, (lo, hi) in zip(psi, self.domain))

    def check_domain(self, psi):
        if not self.in_domain(psi):
            raise DomainError(
                f"{self.name}: psi={np.asarray(psi).tolist()} outside domain {self.domain}"
            )


@dataclass(frozen=True)
class JacobianResult:
    """Predictions ``values`` (n,) and Jacobian ``jac`` (n, p) at one psi."""

    values: np.ndarray
    jac: np.ndarray
    method: str


def pk1_oral(times, ka, V, k, D):
    """One-compartment model with first-order absorption and elimination.

    Returns ``D*ka / (V*(ka - k)) * (exp(-k t) - exp(-ka t))``. When ka and k
    coincide to within a relative 1e-8 the confluent limit
    ``D*a*t*exp(-a t) / V`` with ``a = (ka + k)/2`` is used instead.
    """
    if not (ka > 0 and V > 0 and k > 0 and D > 0):
        raise DomainError(f"pk1_oral needs positive ka, V, k, D; got {(ka, V, k, D)}")
    t = np.asarray(times, dtype=float)
    diff = ka - k
    if abs(diff) <= DEGENERACY_REL * max(ka, k):
        a = 0.5 * (ka + k)
        return D * a * t * np.exp(-a * t) / V
    # exp(-k t) - exp(-ka t) = -exp(-k t) * expm1(-(ka - k) t), free of cancellation
    return -(D * ka / (V * diff)) * np.exp(-k * t) * np.expm1(-diff * t)


def _pk1_values_and_jacobian(times, psi, dose):
    ka, V, k = (float(x) for x in psi)
    c = pk1_oral(times, ka, V, k, dose)
    t = np.asarray(times, dtype=float)
    jac = np.empty((t.size, 3))
    diff = ka - k
    # c = (D ka / V) g(ka, k), g the divided difference of h(x) = -exp(-x t)
    if abs(diff) <= DEGENERACY_REL * max(ka, k):
        a = 0.5 * (ka + k)
        e = np.exp(-a * t)
        g = t * e
        g_ka = g_k = -0.5 * t * t * e
    else:
        g = -np.exp(-k * t) * np.expm1(-diff * t) / diff
        g_ka = (t * np.exp(-ka * t) - g) / diff
        g_k = (g - t * np.exp(-k * t)) / diff
    jac[:, 0] = dose / V * (g + ka * g_ka)
    jac[:, 1] = -c / V
    jac[:, 2] = dose * ka / V * g_k
    return c, jac


def _pk1_predict(times, psi, dose):
    return pk1_oral(times, float(psi[0]), float(psi[1]), float(psi[2]), dose)


PK1_ORAL = StructuralModel(
    name="pk1_oral",
    param_names=("ka", "V", "k"),
    predict=_pk1_predict,
    domain=((0.0, np.inf),) * 3,
    analytic_jacobian=_pk1_values_and_jacobian,
)


def polynomial_model(degree, name=None):
    """Model linear in psi: ``f(t, psi) = sum_l psi[l] * t**l``.

    ``degree=0`` gives the constant model ``f = psi``; ``degree=1`` gives
    ``psi[0] + psi[1]*t``.
    """
    p = degree + 1

    def design(times):
        t = np.asarray(times, dtype=float)
        return np.vander(t, p, increasing=True)

    def predict(times, psi, dose):
        return design(times) @ np.asarray(psi, dtype=float)

    def values_and_jacobian(times, psi, dose):
        X = design(times)
        return X @ np.asarray(psi, dtype=float), X

    names = tuple(f"b{l}" for l in range(p))
    return StructuralModel(
        name=name or f"poly{degree}",
        param_names=names,
        predict=predict,
        analytic_jacobian=values_and_jacobian,
    )


CONSTANT = polynomial_model(0, name="constant")
LINEAR = polynomial_model(1, name="linear")

_REGISTRY = {}


def register_model(model, overwrite=False):
    """Make ``model`` available to the CLI under ``model.name``."""
    if model.name in _REGISTRY and not overwrite:
        raise KeyError(f"model {model.name!r} already registered")
    _REGISTRY[model.name] = model
    return model


def get_model(name):
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(
            f"unknown structural model {name!r}; registered: {sorted(_REGISTRY)}"
        ) from None


def registered_models():
    return sorted(_REGISTRY)


for _m in (PK1_ORAL, CONSTANT, LINEAR):
    register_model(_m)


def finite_difference_jacobian(model, times, psi, dose):
    """Central-difference Jacobian with steps ``eps**(1/3) * max(1, |psi_l|)``."""
    psi = np.asarray(psi, dtype=float)
    values = np.asarray(model.predict(times, psi, dose), dtype=float)
    jac = np.empty((values.size, psi.size))
    for l in range(psi.size):
        h = _FD_SCALE * max(1.0, abs(psi[l]))
        up = psi.copy()
        dn = psi.copy()
        up[l] += h
        dn[l] -= h
        # keep the stencil inside the domain by shrinking toward the boundary
        lo, hi = model.domain[l]
        while not (lo < dn[l] and up[l] < hi):
            h *= 0.5
            up[l] = psi[l] + h
            dn[l] = psi[l] - h
            if h < EPS * max(1.0, abs(psi[l])):
                raise JacobianError((0, l), f"no admissible step for coordinate {l}")
        fu = np.asarray(model.predict(times, up, dose), dtype=float)
        fd = np.asarray(model.predict(times, dn, dose), dtype=float)
        jac[:, l] = (fu - fd) / (up[l] - dn[l])
    return values, jac


def jacobian(model, times, psi, dose):
    """Predictions and Jacobian d f(t_j, psi) / d psi_l at ``psi``.

    Uses the model's analytic derivatives when available, central differences
    otherwise.

    Raises
    ------
    DomainError
        If ``psi`` is outside the model domain.
    JacobianError
        If any derivative is non-finite.
    """
    model.check_domain(psi)
    if model.analytic_jacobian is not None:
        values, jac = model.analytic_jacobian(times, psi, dose)
        method = "analytic"
    else:
        values, jac = finite_difference_jacobian(model, times, psi, dose)
        method = "central-difference"
    jac = np.asarray(jac, dtype=float)
    bad = np.argwhere(~np.isfinite(jac))
    if bad.size:
        raise JacobianError(tuple(int(i) for i in bad[0]))
    return JacobianResult(values=np.asarray(values, dtype=float), jac=jac, method=method)
