"""Convergence summaries: running quantiles, acceptance, replicate spread, ESS."""

from bisect import insort
from dataclasses import dataclass
import csv
import math

import numpy as np

DEFAULT_ORDERS = (0.1, 0.5, 0.9)
DEFAULT_BURN_IN_FRACTION = 0.2


def type1_index(n, q):
    """0-based order-statistic index of the inverted-CDF quantile of order q."""
    return min(max(math.ceil(n * q) - 1, 0), n - 1)


@dataclass(frozen=True, eq=False)
class QuantileTrace:
    """Running quantiles; ``values[k, j, l]`` is order j of coordinate l.

    Row k covers ``states[burn_in : burn_in + k + 1]``; ``iterations[k]`` is
    the chain iteration of the last included state.
    """

    orders: tuple
    iterations: np.ndarray
    values: np.ndarray
    param_names: tuple = ()

    def final(self):
        return self.values[-1]

    def to_csv(self, fh):
        """Tidy rows: iteration, coordinate, order, value."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "coordinate", "order", "value"])
        names = self.param_names or tuple(str(l) for l in range(self.values.shape[2]))
        for k, it in enumerate(self.iterations):
            for l, name in enumerate(names):
                for j, q in enumerate(self.orders):
                    w.writerow([int(it), name, repr(float(q)), repr(float(self.values[k, j, l]))])


def _as_states(chain):
    if hasattr(chain, "states"):
        return np.asarray(chain.states, dtype=float)
    arr = np.asarray(chain, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


def running_quantiles(chain, orders=DEFAULT_ORDERS, burn_in=0, natural=False):
    """Empirical quantiles of ``states[burn_in..k]`` for every k.

    Quantiles use the inverted-CDF (type 1) rule, i.e. an order statistic, so
    they commute with the monotone latent-to-natural map. ``natural=True``
    reports them in natural coordinates.
    """
    X = _as_states(chain)
    n = X.shape[0]
    if not 0 <= burn_in < n:
        raise ValueError(f"burn_in must be in [0, {n}), got {burn_in}")
    orders = tuple(float(q) for q in orders)
    if any(not 0 < q < 1 for q in orders):
        raise ValueError("orders must lie in (0, 1)")
    tail = X[burn_in:]
    m, p = tail.shape
    out = np.empty((m, len(orders), p))
    for l in range(p):
        seen = []
        col = tail[:, l].tolist()
        for k, v in enumerate(col):
            insort(seen, v)
            size = k + 1
            for j, q in enumerate(orders):
                out[k, j, l] = seen[type1_index(size, q)]
    if natural and hasattr(chain, "transform"):
        is_log = np.array([t == "log" for t in chain.transform])
        out = np.where(is_log, np.exp(out), out)
    names = tuple(getattr(chain, "param_names", ()))
    return QuantileTrace(orders, np.arange(burn_in, n), out, names)


def acceptance_rate(chain):
    """Accepted moves over proposed moves after the initial state.

    For single-move kernels this is the fraction of accepted flags; for
    component-wise RWM every coordinate update counts as one move.
    """
    if hasattr(chain, "accepted"):
        flags = np.asarray(chain.accepted)
        counts = np.asarray(getattr(chain, "n_accepted", flags.astype(int)))
        per = int(getattr(chain, "moves_per_iter", 1))
    else:
        flags = np.asarray(chain, dtype=bool)
        counts = flags.astype(int)
        per = 1
    if flags.size < 2:
        raise ValueError("acceptance rate needs a chain of length >= 2")
    return float(counts[1:].sum()) / (per * (flags.size - 1))


@dataclass(frozen=True, eq=False)
class ReplicateSummary:
    """Per-threshold replicate states against reference quartiles.

    ``samples[t]`` has shape (n_runs, p): each run's state at iteration
    ``thresholds[t]``. Reference statistics are per coordinate.
    """

    thresholds: tuple
    samples: np.ndarray
    reference: dict
    param_names: tuple = ()

    def replicate_medians(self):
        return np.median(self.samples, axis=1)

    def inside_reference_iqr(self):
        med = self.replicate_medians()
        q25 = np.asarray(self.reference["q25"])
        q75 = np.asarray(self.reference["q75"])
        return (med >= q25) & (med <= q75)

    def to_dict(self):
        med = self.replicate_medians()
        return {
            "param_names": list(self.param_names),
            "thresholds": [int(t) for t in self.thresholds],
            "reference": {k: [float(x) for x in v] for k, v in self.reference.items()},
            "replicates": [
                {
                    "iteration": int(t),
                    "median": [float(x) for x in med[i]],
                    "q25": [float(x) for x in np.quantile(self.samples[i], 0.25, axis=0, method="inverted_cdf")],
                    "q75": [float(x) for x in np.quantile(self.samples[i], 0.75, axis=0, method="inverted_cdf")],
                    "min": [float(x) for x in self.samples[i].min(axis=0)],
                    "max": [float(x) for x in self.samples[i].max(axis=0)],
                    "states": [[float(x) for x in row] for row in self.samples[i]],
                }
                for i, t in enumerate(self.thresholds)
            ],
        }


def _reference_stats(X):
    return {
        "median": np.quantile(X, 0.5, axis=0, method="inverted_cdf"),
        "q25": np.quantile(X, 0.25, axis=0, method="inverted_cdf"),
        "q75": np.quantile(X, 0.75, axis=0, method="inverted_cdf"),
        "min": X.min(axis=0),
        "max": X.max(axis=0),
    }


def replicate_summary(chains, thresholds, reference, reference_burn_in=None, natural=False):
    """Collect replicate states at ``thresholds`` and reference quartiles.

    Parameters
    ----------
    chains : list of Chain or arrays
        All of the same length, at least ``max(thresholds) + 1`` states.
    thresholds : list of int
        Iterations at which each run's state is collected.
    reference : Chain or array
        Long chain standing in for the ground truth.
    reference_burn_in : int, optional
        Defaults to 20% of the reference length.
    natural : bool
        Summarize natural-scale values instead of latent ones.
    """
    arrays = [_natural(c) if natural else _as_states(c) for c in chains]
    lengths = {a.shape[0] for a in arrays}
    if len(lengths) != 1:
        raise ValueError(f"replicate chains have different lengths: {sorted(lengths)}")
    length = lengths.pop()
    thresholds = tuple(int(t) for t in thresholds)
    if any(t < 0 or t >= length for t in thresholds):
        raise ValueError(f"thresholds must lie in [0, {length - 1}]")
    samples = np.stack([np.stack([a[t] for a in arrays]) for t in thresholds])
    R = _natural(reference) if natural else _as_states(reference)
    if reference_burn_in is None:
        reference_burn_in = int(DEFAULT_BURN_IN_FRACTION * R.shape[0])
    stats = _reference_stats(R[reference_burn_in:])
    names = tuple(getattr(chains[0], "param_names", ()))
    return ReplicateSummary(thresholds, samples, stats, names)


def _natural(chain):
    if hasattr(chain, "psi"):
        return np.asarray(chain.psi)
    return _as_states(chain)


def _autocorr(x):
    """Sample autocorrelation at all lags via FFT."""
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def ess(chain, burn_in=None):
    """Effective sample size per coordinate (Geyer initial positive sequence).

    Sums of consecutive autocorrelation pairs are accumulated while positive,
    and the sequence is made monotone. A zero-variance coordinate gets ESS
    equal to its length by convention. Results are clipped to ``[1, n]``.
    """
    X = _as_states(chain)
    if burn_in is None:
        burn_in = int(DEFAULT_BURN_IN_FRACTION * X.shape[0])
    X = X[burn_in:]
    n = X.shape[0]
    if n < 10:
        raise ValueError("ESS needs at least 10 post-burn-in states")
    out = np.empty(X.shape[1])
    for l in range(X.shape[1]):
        x = X[:, l]
        if np.ptp(x) == 0.0:
            out[l] = n
            continue
        rho = _autocorr(x)
        pairs = rho[0:n - 1:2] + rho[1:n:2]
        total = 0.0
        prev = math.inf
        for gamma in pairs:
            if gamma <= 0:
                break
            gamma = min(gamma, prev)
            total += gamma
            prev = gamma
        tau = -1.0 + 2.0 * total
        out[l] = min(max(n / tau, 1.0), float(n)) if tau > 0 else float(n)
    return out
