"""Synthetic warfarin-style datasets and the dataset CSV format."""

from dataclasses import dataclass, field
import csv

import numpy as np

from .errors import DataFormatError
from .model import IndividualRecord, PopulationParams, to_natural
from .structural import PK1_ORAL

DEFAULT_TIMES = (0.5, 1.0, 2.0, 4.0, 8.0, 12.0, 24.0, 36.0, 48.0, 72.0, 96.0, 120.0)
DEFAULT_WEIGHT = 70.0
DOSE_PER_KG = 1.5
DATA_COLUMNS = ("id", "time", "observation", "dose")


def warfarin_theta():
    """Population parameters of the warfarin example (log-normal ka, V, k)."""
    return PopulationParams.from_sd(
        psi_pop=[1.0, 8.0, 0.01],
        omega_sd=[0.5, 0.2, 0.3],
        sigma2=0.5,
        transform=("log", "log", "log"),
    )


@dataclass(frozen=True, eq=False)
class SimConfig:
    n_individuals: int = 32
    times: tuple = DEFAULT_TIMES
    theta: PopulationParams = field(default_factory=warfarin_theta)
    dose_per_kg: float = DOSE_PER_KG
    weights: object = DEFAULT_WEIGHT
    seed: int = 20190101
    model: object = PK1_ORAL

    def __post_init__(self):
        if self.n_individuals < 1:
            raise ValueError("n_individuals must be >= 1")
        t = tuple(float(x) for x in self.times)
        if not t or any(b <= a for a, b in zip(t, t[1:])) or t[0] < 0:
            raise ValueError("time grid must be nonempty, nonnegative and increasing")
        object.__setattr__(self, "times", t)
        if not self.dose_per_kg > 0:
            raise ValueError("dose_per_kg must be positive")
        w = np.broadcast_to(np.asarray(self.weights, dtype=float), (self.n_individuals,))
        if np.any(w <= 0):
            raise ValueError("weights must be positive")

    def doses(self):
        w = np.broadcast_to(np.asarray(self.weights, dtype=float), (self.n_individuals,))
        return self.dose_per_kg * w


def _sqrt_psd(a):
    # Omega may be singular (even zero) in degenerate simulations
    w, V = np.linalg.eigh(a)
    return V * np.sqrt(np.clip(w, 0.0, None))


def simulate(config):
    """Simulate individuals from the population model.

    Returns
    -------
    (records, latents)
        ``records`` is a list of IndividualRecord; ``latents`` is an
        ``(n_individuals, p)`` array of the true latent coordinates.
    """
    theta = config.theta
    rng = np.random.default_rng(config.seed)
    root = _sqrt_psd(theta.omega)
    times = np.asarray(config.times)
    sd = np.sqrt(theta.sigma2)
    records = []
    latents = np.empty((config.n_individuals, theta.dim))
    for i, dose in enumerate(config.doses()):
        phi = theta.prior_mean + root @ rng.standard_normal(theta.dim)
        f = config.model.predict(times, to_natural(phi, theta), float(dose))
        y = f + sd * rng.standard_normal(times.size)
        latents[i] = phi
        records.append(IndividualRecord(str(i + 1), times, y, float(dose)))
    return records, latents


def write_dataset(records, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(DATA_COLUMNS)
    for r in records:
        for t, y in zip(r.times, r.observations):
            w.writerow([r.id, repr(float(t)), repr(float(y)), repr(float(r.dose))])


def write_truth(ids, latents, param_names, fh, theta=None):
    """Rows of id, coordinate, true latent value and (if theta given) natural value."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["id", "coordinate", "phi", "psi"])
    for rid, phi in zip(ids, latents):
        psi = to_natural(phi, theta) if theta is not None else phi
        for name, a, b in zip(param_names, phi, psi):
            w.writerow([rid, name, repr(float(a)), repr(float(b))])


def read_dataset(fh):
    """Parse the ``id,time,observation,dose`` CSV into records, in file order.

    Raises
    ------
    DataFormatError
        On a bad header or malformed row, naming the 1-based line number.
    """
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise DataFormatError(1, "empty file") from None
    if tuple(h.strip() for h in header) != DATA_COLUMNS:
        raise DataFormatError(1, f"expected header {','.join(DATA_COLUMNS)}, got {','.join(header)}")
    rows = {}
    order = []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise DataFormatError(line, f"expected 4 fields, got {len(row)}")
        rid = row[0].strip()
        try:
            t, y, d = (float(c) for c in row[1:])
        except ValueError as e:
            raise DataFormatError(line, str(e)) from None
        if not np.isfinite([t, y, d]).all():
            raise DataFormatError(line, "non-finite value")
        if rid not in rows:
            rows[rid] = ([], [], d, line)
            order.append(rid)
        times, obs, dose, first = rows[rid]
        if d != dose:
            raise DataFormatError(line, f"dose for id {rid} differs from line {first}")
        if times and t <= times[-1]:
            raise DataFormatError(line, f"times for id {rid} must be strictly increasing")
        if t < 0 or d <= 0:
            raise DataFormatError(line, "time must be >= 0 and dose > 0")
        times.append(t)
        obs.append(y)
    if not order:
        raise DataFormatError(2, "no data rows")
    return [IndividualRecord(rid, rows[rid][0], rows[rid][1], rows[rid][2]) for rid in order]
