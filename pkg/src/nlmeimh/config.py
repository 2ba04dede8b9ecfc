"""INI configuration for the command-line pipeline.

Sections and keys (all optional; defaults reproduce the warfarin setup)::

    [theta]     model, psi_pop, omega (rows separated by ';') or omega_sd,
                sigma2, transform
    [simulate]  n_individuals, times, dose_per_kg, weight
    [map]       gtol, max_iter, allow_unconverged
    [kernel]    kernels, proposal, mala_gamma ('auto' or a number),
                mala_ladder_min, mala_ladder_max, mala_ladder_per_decade,
                mala_tune_iters
    [run]       seed, iters, runs, burn_in, individual, thresholds,
                reference_iters, reference_burn_in, reference_kernel,
                n_sims, workers
"""

from dataclasses import dataclass, field, fields, replace
import configparser
import io

import numpy as np

from .datagen import DEFAULT_TIMES, DEFAULT_WEIGHT, DOSE_PER_KG
from .model import PopulationParams
from .samplers import KERNELS

DEFAULT_SEED = 12345
COMPARE_KERNELS = ("rwm-componentwise", "rwm-blockwise", "mala", "nlme-imh")


@dataclass(frozen=True)
class RunConfig:
    model: str = "pk1_oral"
    psi_pop: tuple = (1.0, 8.0, 0.01)
    omega: tuple = ((0.25, 0.0, 0.0), (0.0, 0.04, 0.0), (0.0, 0.0, 0.09))
    sigma2: float = 0.5
    transform: tuple = ("log", "log", "log")

    n_individuals: int = 32
    times: tuple = DEFAULT_TIMES
    dose_per_kg: float = DOSE_PER_KG
    weight: float = DEFAULT_WEIGHT

    gtol: float = 1e-6
    max_iter: int = 200
    allow_unconverged: bool = False

    kernels: tuple = COMPARE_KERNELS
    proposal: str = "linearized"
    mala_gamma: str = "auto"
    mala_ladder_min: float = 1e-4
    mala_ladder_max: float = 1e-1
    mala_ladder_per_decade: int = 16
    mala_tune_iters: int = 2000

    seed: int = DEFAULT_SEED
    iters: int = 500
    runs: int = 100
    burn_in: int = 0
    individual: str = "1"
    thresholds: tuple = ()
    reference_iters: int = 100000
    reference_burn_in: int = 10000
    reference_kernel: str = "nlme-imh"
    n_sims: int = 10000
    workers: int = 1

    def __post_init__(self):
        for k in self.kernels:
            if k not in KERNELS:
                raise ValueError(f"unknown kernel {k!r}; choose from {KERNELS}")
        if self.reference_kernel not in KERNELS:
            raise ValueError(f"unknown reference kernel {self.reference_kernel!r}")
        if self.proposal not in ("linearized", "laplace"):
            raise ValueError("proposal must be 'linearized' or 'laplace'")
        if self.mala_gamma != "auto":
            float(self.mala_gamma)

    def theta(self):
        return PopulationParams(self.psi_pop, np.array(self.omega), self.sigma2, self.transform)

    def mala_ladder(self):
        lo, hi = np.log10(self.mala_ladder_min), np.log10(self.mala_ladder_max)
        n = int(round((hi - lo) * self.mala_ladder_per_decade)) + 1
        return tuple(float(g) for g in np.logspace(lo, hi, n))

    def effective_thresholds(self):
        return self.thresholds or (self.iters,)


_SECTIONS = {
    "theta": ("model", "psi_pop", "omega", "sigma2", "transform"),
    "simulate": ("n_individuals", "times", "dose_per_kg", "weight"),
    "map": ("gtol", "max_iter", "allow_unconverged"),
    "kernel": ("kernels", "proposal", "mala_gamma", "mala_ladder_min", "mala_ladder_max",
               "mala_ladder_per_decade", "mala_tune_iters"),
    "run": ("seed", "iters", "runs", "burn_in", "individual", "thresholds", "reference_iters",
            "reference_burn_in", "reference_kernel", "n_sims", "workers"),
}
_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}
_FLOAT_TUPLES = {"psi_pop", "times", "thresholds"}


def _parse(key, raw):
    raw = raw.strip()
    if key == "omega":
        rows = [r for r in raw.split(";") if r.strip()]
        return tuple(tuple(float(x) for x in r.split(",")) for r in rows)
    if key == "thresholds":
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if key in _FLOAT_TUPLES:
        return tuple(float(x) for x in raw.split(",") if x.strip())
    typ = _TYPES[key]
    if typ is tuple:
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    if typ is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    return typ(raw)


def _format(key, value):
    if key == "omega":
        return "; ".join(", ".join(repr(float(x)) for x in row) for row in value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(x)) if isinstance(x, float) else str(x) for x in value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def load_config(path=None, text=None):
    """Read a RunConfig from an INI file (or string); missing keys take defaults.

    Inline comments start with ``#`` (``;`` separates omega rows).
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    elif text is not None:
        parser.read_string(text)
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key == "omega_sd":
                sd = [float(x) for x in raw.split(",")]
                values["omega"] = tuple(tuple((s * s if i == j else 0.0) for j in range(len(sd)))
                                        for i, s in enumerate(sd))
                continue
            if key not in _SECTIONS[section]:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            values[key] = _parse(key, raw)
    return RunConfig(**values)


def dump_config(cfg):
    """Serialize every field, so the output reloads to an equal RunConfig."""
    parser = configparser.ConfigParser(interpolation=None)
    for section, keys in _SECTIONS.items():
        parser[section] = {k: _format(k, getattr(cfg, k)) for k in keys}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def with_overrides(cfg, **overrides):
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
