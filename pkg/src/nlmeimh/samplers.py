"""Metropolis-Hastings kernels and the chain runner.

Every kernel targets ``Posterior.logpdf`` in latent coordinates. Supported
kinds:

``prior-imh``          independent proposals from N(m(psi_pop), omega)
``rwm-componentwise``  one Gaussian random-walk move per coordinate, in order
``rwm-blockwise``      joint move ``step * chol(omega) @ z``
``mala``               Langevin proposal N(phi + gamma * grad, 2 gamma I)
``nlme-imh``           independent proposals from a MAP-centred Gaussian
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional
import csv
import math

import numpy as np

from .model import to_natural
from .proposal import GaussianProposal, proposal_logpdf, proposal_sample

KERNELS = ("prior-imh", "rwm-componentwise", "rwm-blockwise", "mala", "nlme-imh")

COMPONENTWISE_SCALE = 0.4
BLOCKWISE_SCALE = 2.4
MALA_DEFAULT_GAMMA = 1e-2


@dataclass(frozen=True, eq=False)
class KernelConfig:
    """Kernel kind plus its step (RWM scale or MALA gamma) and proposal."""

    kind: str
    step: Optional[np.ndarray] = None
    proposal: Optional[GaussianProposal] = None

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}; choose from {KERNELS}")
        if (self.kind == "nlme-imh") != (self.proposal is not None):
            raise ValueError("nlme-imh requires a proposal and the other kernels take none")
        if self.kind in ("rwm-componentwise", "rwm-blockwise", "mala"):
            if self.step is None:
                raise ValueError(f"{self.kind} requires a step")
            step = np.array(self.step, dtype=float)
            if np.any(~(step > 0)):
                raise ValueError("step must be positive")
            if self.kind == "mala" and step.ndim != 0:
                raise ValueError("MALA step (gamma) must be a scalar")
            object.__setattr__(self, "step", step)
        elif self.step is not None:
            raise ValueError(f"{self.kind} takes no step")

    def describe(self):
        out = {"kind": self.kind}
        if self.step is not None:
            out["step"] = self.step.tolist()
        if self.proposal is not None:
            out["proposal"] = self.proposal.to_dict()
        return out


def make_kernel(kind, theta, step=None, proposal=None):
    """KernelConfig with default steps filled in from ``theta``.

    Defaults: component-wise RWM uses ``0.4 * sqrt(omega_ll)`` per coordinate,
    block-wise RWM scales ``chol(omega)`` by ``2.4 / sqrt(p)``, MALA uses
    ``gamma = 1e-2``.
    """
    if step is None:
        if kind == "rwm-componentwise":
            step = COMPONENTWISE_SCALE * np.sqrt(np.diag(theta.omega))
        elif kind == "rwm-blockwise":
            step = BLOCKWISE_SCALE / math.sqrt(theta.dim)
        elif kind == "mala":
            step = MALA_DEFAULT_GAMMA
    return KernelConfig(kind, step, proposal)


@dataclass
class ChainState:
    phi: np.ndarray
    logpost: float
    grad: Optional[np.ndarray] = None


class MalaProposal(NamedTuple):
    """MALA candidate with forward log q(c|x) and backward log q(x|c)."""

    phi: np.ndarray
    logpost: float
    grad: Optional[np.ndarray]
    log_q_forward: float
    log_q_backward: float


def mala_log_q(to, frm, grad_frm, gamma):
    """log N(to; frm + gamma * grad_frm, 2 gamma I)."""
    d = to - frm - gamma * grad_frm
    p = d.size
    return -0.5 * p * math.log(4.0 * math.pi * gamma) - float(d @ d) / (4.0 * gamma)


def mala_candidate(state, gamma, target, rng):
    """Draw a MALA candidate from the current state.

    The drift ascends the log-density. The backward density needs the
    gradient at the candidate; it is ``-inf`` when the candidate lies outside
    the domain or the gradient there is not finite.
    """
    x = state.phi
    gx = state.grad if state.grad is not None else target.grad(x)
    c = x + gamma * gx + math.sqrt(2.0 * gamma) * rng.standard_normal(x.size)
    fwd = mala_log_q(c, x, gx, gamma)
    lc = target.logpdf(c)
    gc = None
    bwd = -math.inf
    if lc > -math.inf:
        gc = target.grad(c)
        if gc is not None and np.all(np.isfinite(gc)):
            bwd = mala_log_q(x, c, gc, gamma)
        else:
            gc = None
    return MalaProposal(c, lc, gc, fwd, bwd)


def _uniform_open(rng):
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return u


def _accept(log_alpha, rng):
    if log_alpha == -math.inf or math.isnan(log_alpha):
        return False
    return math.log(_uniform_open(rng)) < log_alpha


class StepInfo(NamedTuple):
    accepted: bool
    n_accepted: int
    log_alpha: float
    grad_failure: bool = False


def mh_step(state, kernel, target, rng):
    """Apply one full kernel transition.

    Returns
    -------
    (ChainState, StepInfo)
        The new state (the same object when rejected) and acceptance details.
        For component-wise RWM one call is a full sweep over coordinates.
    """
    kind = kernel.kind
    x = state.phi
    if kind in ("prior-imh", "nlme-imh"):
        prop = kernel.proposal if kind == "nlme-imh" else target.prior
        c = proposal_sample(prop, rng)
        lc = target.logpdf(c)
        if lc == -math.inf:
            return state, StepInfo(False, 0, -math.inf)
        # independent kernel: alpha = w(c) / w(x), w = target / proposal
        log_alpha = (lc - proposal_logpdf(prop, c)) - (state.logpost - proposal_logpdf(prop, x))
        if _accept(log_alpha, rng):
            return ChainState(c, lc), StepInfo(True, 1, log_alpha)
        return state, StepInfo(False, 0, log_alpha)

    if kind == "rwm-blockwise":
        c = x + kernel.step * (target.theta.omega_chol @ rng.standard_normal(x.size))
        lc = target.logpdf(c)
        log_alpha = lc - state.logpost
        if _accept(log_alpha, rng):
            return ChainState(c, lc), StepInfo(True, 1, log_alpha)
        return state, StepInfo(False, 0, log_alpha)

    if kind == "rwm-componentwise":
        steps = np.broadcast_to(kernel.step, x.shape)
        cur = state
        n_acc = 0
        log_alpha = 0.0
        for l in range(x.size):
            c = cur.phi.copy()
            c[l] += steps[l] * rng.standard_normal()
            lc = target.logpdf(c)
            log_alpha = lc - cur.logpost
            if _accept(log_alpha, rng):
                cur = ChainState(c, lc)
                n_acc += 1
        return cur, StepInfo(n_acc > 0, n_acc, log_alpha)

    if kind == "mala":
        gamma = float(kernel.step)
        if state.grad is None:
            state = ChainState(state.phi, state.logpost, target.grad(state.phi))
        if state.grad is None or not np.all(np.isfinite(state.grad)):
            return state, StepInfo(False, 0, -math.inf, True)
        cand = mala_candidate(state, gamma, target, rng)
        grad_failure = cand.logpost > -math.inf and cand.grad is None
        log_alpha = (cand.logpost - state.logpost) + (cand.log_q_backward - cand.log_q_forward)
        if _accept(log_alpha, rng):
            return ChainState(cand.phi, cand.logpost, cand.grad), StepInfo(True, 1, log_alpha)
        return state, StepInfo(False, 0, log_alpha, grad_failure)

    raise ValueError(f"unknown kernel {kind!r}")


@dataclass(eq=False)
class Chain:
    """Sampled latent states with acceptance bookkeeping.

    ``states[0]`` is the initial point and ``accepted[0]`` is False.
    ``n_accepted[k]`` counts accepted moves within iteration k (at most
    ``moves_per_iter``, which is p for component-wise RWM and 1 otherwise).
    """

    states: np.ndarray
    accepted: np.ndarray
    logpost: np.ndarray
    seed: int
    kernel: KernelConfig
    n_accepted: np.ndarray = None
    moves_per_iter: int = 1
    grad_failures: int = 0
    param_names: tuple = field(default=())
    transform: tuple = field(default=())

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        self.accepted = np.asarray(self.accepted, dtype=bool)
        self.logpost = np.asarray(self.logpost, dtype=float)
        if self.n_accepted is None:
            self.n_accepted = self.accepted.astype(int)
        if not self.param_names:
            self.param_names = tuple(f"x{l}" for l in range(self.states.shape[1]))
        if not self.transform:
            self.transform = ("identity",) * self.states.shape[1]

    def __len__(self):
        return self.states.shape[0]

    @property
    def n_iter(self):
        return len(self) - 1

    @property
    def psi(self):
        """States mapped to natural coordinates."""
        is_log = np.array([t == "log" for t in self.transform])
        with np.errstate(over="ignore"):
            return np.where(is_log, np.exp(self.states), self.states)

    def to_csv(self, fh):
        """Write one row per iteration: iteration, phi_*, psi_*, logpost, accepted."""
        w = csv.writer(fh, lineterminator="\n")
        names = list(self.param_names)
        w.writerow(["iteration"] + [f"phi_{n}" for n in names] + [f"psi_{n}" for n in names]
                   + ["logpost", "accepted"])
        psi = self.psi
        for k in range(len(self)):
            w.writerow([k] + [_fmt(v) for v in self.states[k]] + [_fmt(v) for v in psi[k]]
                       + [_fmt(self.logpost[k]), int(self.accepted[k])])


def _fmt(x):
    return repr(float(x))


def default_init(kernel, target):
    """MAP (proposal mean) for nlme-imh, the prior mode for every other kernel."""
    if kernel.kind == "nlme-imh":
        return kernel.proposal.mean.copy()
    return target.theta.prior_mean.copy()


def run_chain(init, kernel, target, n_iter, seed):
    """Run ``n_iter`` transitions from ``init`` (None selects the default init).

    Returns
    -------
    Chain
        ``n_iter + 1`` states; bit-identical for identical arguments.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    x0 = default_init(kernel, target) if init is None else np.array(init, dtype=float)
    l0 = target.logpdf(x0)
    if not l0 > -math.inf:
        raise ValueError(f"initial point {x0.tolist()} has zero target density")
    rng = np.random.default_rng(seed)
    p = x0.size
    states = np.empty((n_iter + 1, p))
    logpost = np.empty(n_iter + 1)
    accepted = np.zeros(n_iter + 1, dtype=bool)
    n_acc = np.zeros(n_iter + 1, dtype=int)
    state = ChainState(x0, l0)
    states[0] = x0
    logpost[0] = l0
    grad_failures = 0
    for k in range(1, n_iter + 1):
        state, info = mh_step(state, kernel, target, rng)
        states[k] = state.phi
        logpost[k] = state.logpost
        accepted[k] = info.accepted
        n_acc[k] = info.n_accepted
        grad_failures += info.grad_failure
    return Chain(
        states=states,
        accepted=accepted,
        logpost=logpost,
        seed=int(seed),
        kernel=kernel,
        n_accepted=n_acc,
        moves_per_iter=p if kernel.kind == "rwm-componentwise" else 1,
        grad_failures=grad_failures,
        param_names=target.model.param_names,
        transform=target.theta.transform,
    )


def derive_seed(master_seed, index):
    """Independent per-chain seed from (master seed, chain index)."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _run_indexed(args):
    index, init, kernel, target, n_iter, master_seed = args
    return run_chain(init, kernel, target, n_iter, derive_seed(master_seed, index))


def run_replicates(kernel, target, n_runs, n_iter, master_seed, init=None, workers=1):
    """``n_runs`` independent chains, ordered by run index.

    With ``workers > 1`` chains run in a process pool; results are identical
    to the sequential run because every chain owns its derived seed.
    """
    jobs = [(i, init, kernel, target, n_iter, master_seed) for i in range(n_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_run_indexed, jobs))
    return [_run_indexed(j) for j in jobs]


def tune_mala(target, gammas, n_iter=2000, seed=0, init=None):
    """Acceptance rate of MALA for each gamma in ``gammas``.

    Returns a list of ``(gamma, acceptance_rate)`` pairs in input order.
    """
    out = []
    for i, gamma in enumerate(gammas):
        kernel = KernelConfig("mala", float(gamma))
        chain = run_chain(init, kernel, target, n_iter, derive_seed(seed, i))
        out.append((float(gamma), float(chain.n_accepted[1:].sum()) / n_iter))
    return out
