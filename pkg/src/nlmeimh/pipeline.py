"""Experiment building blocks shared by the CLI and the acceptance suite."""

from dataclasses import dataclass
import math

import numpy as np

from .diagnostics import acceptance_rate, ess, replicate_summary, running_quantiles
from .mapsolve import MapOptions, find_map
from .model import Posterior
from .proposal import laplace_proposal, linearized_proposal
from .samplers import KERNELS, derive_seed, make_kernel, run_chain, run_replicates, tune_mala

OPTIMAL_MALA_ACCEPTANCE = 0.57
REFERENCE_STREAM = 1_000_000
TUNING_STREAM = 2_000_000


def build_proposal(record, theta, model, map_result, kind="linearized", allow_unconverged=False):
    builder = {"linearized": linearized_proposal, "laplace": laplace_proposal}[kind]
    return builder(record, theta, model, map_result, allow_unconverged=allow_unconverged)


@dataclass
class Individual:
    """Everything needed to sample one subject: target, MAP and proposal."""

    target: Posterior
    map_result: object
    proposal: object

    @property
    def record(self):
        return self.target.record


def prepare(record, theta, model, proposal_kind="linearized", map_opts=None,
            allow_unconverged=False):
    map_result = find_map(record, theta, model, opts=map_opts or MapOptions())
    prop = build_proposal(record, theta, model, map_result, proposal_kind, allow_unconverged)
    return Individual(Posterior(record, theta, model), map_result, prop)


def select_mala_gamma(target, ladder, n_iter, seed, goal=OPTIMAL_MALA_ACCEPTANCE):
    """Ladder value whose acceptance rate is closest to ``goal``.

    Returns ``(gamma, table)`` with ``table`` the ``(gamma, rate)`` pairs.
    """
    table = tune_mala(target, ladder, n_iter=n_iter, seed=seed)
    gamma = min(table, key=lambda gr: (abs(gr[1] - goal), gr[0]))[0]
    return gamma, table


def kernels_for(individual, kinds, mala_gamma=None):
    theta = individual.target.theta
    out = {}
    for kind in kinds:
        if kind not in KERNELS:
            raise ValueError(f"unknown kernel {kind!r}; choose from {KERNELS}")
        if kind == "nlme-imh":
            out[kind] = make_kernel(kind, theta, proposal=individual.proposal)
        elif kind == "mala":
            out[kind] = make_kernel(kind, theta, step=mala_gamma)
        else:
            out[kind] = make_kernel(kind, theta)
    return out


def reference_chain(individual, kind="nlme-imh", n_iter=100_000, seed=0, mala_gamma=None):
    kernel = kernels_for(individual, [kind], mala_gamma)[kind]
    return run_chain(None, kernel, individual.target, n_iter, derive_seed(seed, REFERENCE_STREAM))


def compare(individual, kinds, n_runs, n_iter, seed, reference, reference_burn_in,
            thresholds=None, burn_in=0, mala_gamma=None, workers=1):
    """Replicate runs for each kernel, summarized against a reference chain.

    Returns a dict keyed by kernel kind with the replicate chains, a
    ReplicateSummary (natural scale), the running-quantile trace of run 0 and
    mean acceptance rate.
    """
    thresholds = tuple(thresholds or (n_iter,))
    kernels = kernels_for(individual, kinds, mala_gamma)
    results = {}
    for idx, kind in enumerate(kinds):
        chains = run_replicates(kernels[kind], individual.target, n_runs, n_iter,
                                derive_seed(seed, idx), workers=workers)
        summary = replicate_summary(chains, thresholds, reference, reference_burn_in, natural=True)
        trace = running_quantiles(chains[0], burn_in=burn_in, natural=True)
        results[kind] = {
            "kernel": kernels[kind],
            "chains": chains,
            "summary": summary,
            "trace": trace,
            "acceptance": float(np.mean([acceptance_rate(c) for c in chains])),
        }
    return results


def reference_quantiles(reference, burn_in, orders=(0.1, 0.5, 0.9)):
    """Natural-scale type-1 quantiles of a reference chain, shape (orders, p)."""
    X = reference.psi[burn_in:]
    return np.quantile(X, orders, axis=0, method="inverted_cdf")


def max_relative_quantile_deviation(trace_final, ref_q):
    """Per coordinate, max over orders of |q - q_ref| / |q_ref|."""
    return np.max(np.abs(trace_final - ref_q) / np.abs(ref_q), axis=0)


def chain_summary(chain, burn_in):
    return {
        "kernel": chain.kernel.kind,
        "seed": chain.seed,
        "n_iter": chain.n_iter,
        "acceptance_rate": acceptance_rate(chain),
        "ess": [float(x) for x in ess(chain, burn_in)] if len(chain) - burn_in >= 10 else None,
        "grad_failures": int(chain.grad_failures),
        "param_names": list(chain.param_names),
        "psi_quantiles": {
            str(q): [float(x) for x in np.quantile(chain.psi[burn_in:], q, axis=0, method="inverted_cdf")]
            for q in (0.1, 0.25, 0.5, 0.75, 0.9)
        },
    }


def finite_or_none(x):
    return float(x) if math.isfinite(x) else None
