import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from nelsontunnel.config import PROFILES, SimulationConfig
from nelsontunnel.errors import ConfigurationError


def test_defaults_reproduce_reference_setup():
    c = SimulationConfig()
    assert (c.x_min, c.x_max, c.x_mean, c.p_mean, c.m, c.hbar) == (-1000, 1000, -500, 1, 1, 1)
    assert c.v0 / c.e0 == 2.0 and c.kappa == pytest.approx(1.0)
    assert SimulationConfig.for_profile("paper").n_paths == 100_000
    assert SimulationConfig.for_profile("paper").dx == 0.05
    assert SimulationConfig.for_profile("desk").n_paths == 10_000
    assert set(PROFILES) == {"desk", "paper"}


@pytest.mark.parametrize("bad", [
    dict(dx=0.0), dict(n_paths=0), dict(fit_method="chi"), dict(epsilon=0.0),
    dict(barrier_sampling="area"), dict(time_estimator="last"), dict(bins=-1),
    dict(d=5000.0), dict(delta_x=-1.0), dict(x_min=10.0, x_max=-10.0),
])
def test_validation(bad):
    with pytest.raises(ConfigurationError):
        SimulationConfig(**bad)


def test_unknown_profile():
    with pytest.raises(ConfigurationError):
        SimulationConfig.for_profile("huge")


_floats = st.floats(0.01, 5.0, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(d=_floats, dx=st.floats(0.01, 0.5), seed=st.integers(0, 2 ** 63 - 1), noise=st.booleans(),
       split=st.booleans(), method=st.sampled_from(["least_squares", "mle"]),
       dt=st.floats(1e-4, 0.1), out=st.text("abc/_-", max_size=12))
def test_text_round_trip(d, dx, seed, noise, split, method, dt, out):
    c = SimulationConfig(d=d, dx=dx, master_seed=seed, noise=noise, splitting=split,
                         fit_method=method, dt=dt, output_dir=out)
    back = SimulationConfig.from_text(c.to_text())
    assert back == c
    for f in dataclasses.fields(c):
        assert type(getattr(back, f.name)) is type(getattr(c, f.name))


def test_file_round_trip(tmp_path):
    c = SimulationConfig(d=2.5, n_paths=123)
    p = tmp_path / "c.cfg"
    c.save(p)
    text = p.read_text()
    assert text.startswith("# ") and "1/k0" in text
    assert SimulationConfig.load(p) == c


def test_bad_files(tmp_path):
    with pytest.raises(ConfigurationError):
        SimulationConfig.load(tmp_path / "missing.cfg")
    with pytest.raises(ConfigurationError):
        SimulationConfig.from_text("[simulation]\nwidth = 3\n")
    with pytest.raises(ConfigurationError):
        SimulationConfig.from_text("[other]\nd = 3\n")
    with pytest.raises(ConfigurationError):
        SimulationConfig.from_text("[simulation]\nn_paths = many\n")
