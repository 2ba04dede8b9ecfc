import io

import numpy as np
import pytest

from nlmeimh import DataFormatError, PK1_ORAL, PopulationParams
from nlmeimh.datagen import (
    DEFAULT_TIMES, SimConfig, read_dataset, simulate, warfarin_theta, write_dataset, write_truth,
)


def test_degenerate_population_reproduces_model_curve():
    theta = PopulationParams([1.0, 8.0, 0.01], np.zeros((3, 3)), 0.0, "log")
    records, latents = simulate(SimConfig(n_individuals=3, theta=theta, seed=1))
    expected = PK1_ORAL.predict(np.array(DEFAULT_TIMES), np.array([1.0, 8.0, 0.01]), 105.0)
    for r in records:
        assert r.dose == pytest.approx(105.0)
        assert np.allclose(r.observations, expected, rtol=1e-14, atol=0)
    assert np.allclose(latents, np.log([1.0, 8.0, 0.01]))


def test_latent_moments_over_many_individuals():
    theta = warfarin_theta()
    _, latents = simulate(SimConfig(n_individuals=10_000, theta=theta, seed=5))
    assert abs(latents[:, 0].mean() - 0.0) < 4 * 0.5 / 100
    assert np.allclose(latents.mean(axis=0), theta.prior_mean, atol=4 * np.sqrt(np.diag(theta.omega)) / 100)
    cov = np.cov(latents, rowvar=False)
    assert np.allclose(np.diag(cov), np.diag(theta.omega), rtol=0.05)


def test_noise_variance():
    theta = PopulationParams([1.0, 8.0, 0.01], np.zeros((3, 3)), 0.5, "log")
    records, _ = simulate(SimConfig(n_individuals=500, theta=theta, seed=2))
    f = PK1_ORAL.predict(np.array(DEFAULT_TIMES), np.array([1.0, 8.0, 0.01]), 105.0)
    resid = np.concatenate([r.observations - f for r in records])
    assert resid.var() == pytest.approx(0.5, rel=0.05)


def test_seed_reproducibility():
    a, la = simulate(SimConfig(seed=7))
    b, lb = simulate(SimConfig(seed=7))
    c, _ = simulate(SimConfig(seed=8))
    assert np.array_equal(la, lb)
    assert all(np.array_equal(x.observations, y.observations) for x, y in zip(a, b))
    assert not np.array_equal(a[0].observations, c[0].observations)


def test_default_design():
    records, _ = simulate(SimConfig())
    assert len(records) == 32
    assert [r.id for r in records] == [str(i) for i in range(1, 33)]
    assert all(r.times.size == 12 and r.dose == 105.0 for r in records)


def test_per_individual_weights():
    records, _ = simulate(SimConfig(n_individuals=3, weights=[50.0, 60.0, 80.0]))
    assert [r.dose for r in records] == [75.0, 90.0, 120.0]


def test_csv_round_trip_is_exact():
    records, _ = simulate(SimConfig(n_individuals=4, seed=3))
    buf = io.StringIO()
    write_dataset(records, buf)
    back = read_dataset(io.StringIO(buf.getvalue()))
    assert [r.id for r in back] == [r.id for r in records]
    for a, b in zip(records, back):
        assert np.array_equal(a.times, b.times) and np.array_equal(a.observations, b.observations)
        assert a.dose == b.dose
    again = io.StringIO()
    write_dataset(back, again)
    assert again.getvalue() == buf.getvalue()


def test_truth_file():
    theta = warfarin_theta()
    records, latents = simulate(SimConfig(n_individuals=2, seed=3))
    buf = io.StringIO()
    write_truth([r.id for r in records], latents, PK1_ORAL.param_names, buf, theta)
    rows = buf.getvalue().splitlines()
    assert rows[0] == "id,coordinate,phi,psi" and len(rows) == 7
    rid, name, phi, psi = rows[1].split(",")
    assert (rid, name) == ("1", "ka") and float(psi) == pytest.approx(np.exp(float(phi)), rel=1e-15)


@pytest.mark.parametrize("text, line", [
    ("id,time,observation,dose\n1,0.5,1.0,105\n1,abc,2.0,105\n", 3),
    ("id,time,observation,dose\n1,0.5,1.0,105\n1,1.0,2.0\n", 3),
    ("id,time,observation,dose\n1,0.5,1.0,105\n1,1.0,2.0,105\n1,0.7,2.0,105\n", 4),
    ("id,time,observation,dose\n1,0.5,1.0,105\n1,1.0,2.0,99\n", 3),
    ("id,time,observation,dose\n1,0.5,nan,105\n", 2),
    ("id,time,obs,dose\n1,0.5,1.0,105\n", 1),
    ("", 1),
])
def test_malformed_rows_name_their_line(text, line):
    with pytest.raises(DataFormatError) as info:
        read_dataset(io.StringIO(text))
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_invalid_configs():
    with pytest.raises(ValueError):
        SimConfig(n_individuals=0)
    with pytest.raises(ValueError):
        SimConfig(times=(1.0, 1.0))
    with pytest.raises(ValueError):
        SimConfig(weights=-1.0)
