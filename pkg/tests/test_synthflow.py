import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from romda.errors import ContractError
from romda.synthflow import (
    FlowConfig, SnapshotSet, build_corpus, energy_bound, integrate_radius, interleave,
    kinetic_energy, load_corpus, radius_closed_form, simulate, split_even_odd,
)


def test_subcritical_radius_decays():
    cfg = FlowConfig(xi=50.0, n_snapshots=400)
    r = integrate_radius(cfg)
    assert r[-1] < cfg.r0
    assert np.all(np.diff(r) < 0)


@pytest.mark.parametrize("xi", [110.0, 120.0, 140.0])
def test_terminal_radius_reaches_limit_cycle(xi):
    cfg = FlowConfig(xi=xi)
    assert abs(integrate_radius(cfg)[-1] - np.sqrt(cfg.growth)) < 1e-3


@pytest.mark.parametrize("xi", [80.0, 90.0, 120.0, 140.0])
def test_rk4_matches_logistic_closed_form(xi):
    cfg = FlowConfig(xi=xi, dt=0.05)
    t = np.arange(cfg.n_snapshots) * cfg.dt
    np.testing.assert_allclose(integrate_radius(cfg), radius_closed_form(t, cfg.growth, cfg.r0),
                               rtol=0, atol=1e-6)


def test_supercritical_transient_strictly_increasing():
    cfg = FlowConfig(xi=100.0)
    assert cfg.r0 < np.sqrt(cfg.growth)
    assert np.all(np.diff(integrate_radius(cfg)) > 0)


def test_simulate_is_deterministic_and_shaped():
    cfg = FlowConfig(xi=120.0, n_snapshots=50)
    a, b = simulate(cfg), simulate(cfg)
    assert a.states.shape == (50, 2 * 32 * 24)
    assert a.states.tobytes() == b.states.tobytes()


def test_config_validation():
    with pytest.raises(ContractError):
        FlowConfig(dt=0.0)
    with pytest.raises(ContractError):
        FlowConfig(n_snapshots=1)
    with pytest.raises(ContractError):
        FlowConfig(nx=1, ny=3)


def test_kinetic_energy_trivial():
    s = SnapshotSet(1.0, [0.0], [[3.0, 4.0]])
    assert kinetic_energy(s).values[0] == 25.0
    z = SnapshotSet(1.0, [0.0, 1.0], np.zeros((2, 6)))
    np.testing.assert_array_equal(kinetic_energy(z).values, [0.0, 0.0])


def test_kinetic_energy_matches_pointwise_loop():
    rng = np.random.default_rng(0)
    states = rng.normal(size=(3, 10))
    expected = np.zeros(3)
    for t in range(3):
        for i in range(5):
            expected[t] += states[t, i] ** 2 + states[t, 5 + i] ** 2
    got = kinetic_energy(SnapshotSet(1.0, [0, 1, 2], states)).values
    np.testing.assert_allclose(got, expected, rtol=1e-12)


@pytest.mark.parametrize("xi", [80.0, 140.0])
def test_energy_bounded(xi):
    cfg = FlowConfig(xi=xi)
    assert kinetic_energy(simulate(cfg)).values.max() <= energy_bound(cfg)


def test_split_even_odd_small_cases():
    s = SnapshotSet(1.0, np.arange(4.0), np.arange(8.0).reshape(4, 2))
    train, test = split_even_odd(s)
    np.testing.assert_array_equal(train.states, s.states[[0, 2]])
    np.testing.assert_array_equal(test.states, s.states[[1, 3]])
    five = SnapshotSet(1.0, np.arange(5.0), np.zeros((5, 2)))
    tr, te = split_even_odd(five)
    assert (len(tr), len(te)) == (3, 2)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 40))
def test_split_partitions_and_interleave_round_trips(n):
    rng = np.random.default_rng(n)
    s = SnapshotSet(2.0, np.arange(n) * 0.1, rng.normal(size=(n, 4)))
    train, test = split_even_odd(s)
    assert len(train) + len(test) == n
    back = interleave(train, test)
    assert back.states.tobytes() == s.states.tobytes()
    assert back.times.tobytes() == s.times.tobytes()


def test_build_corpus_train_and_eval_layout(tmp_path):
    template = FlowConfig(n_snapshots=40)
    corpus = build_corpus([90, 120], list(range(80, 150, 10)), template, tmp_path)
    assert len(corpus.train) == 2 and len(corpus.eval) == 7
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert len(doc["entries"]) == 9
    assert set(doc["entries"][0]) == {"xi", "path", "dims", "dt", "split"}
    # 7 distinct xi values, shared files for xi in both lists
    assert len(list(tmp_path.glob("*.rmx"))) == 7
    loaded = load_corpus(tmp_path)
    np.testing.assert_array_equal(loaded.eval_at(140.0).states, corpus.eval_at(140.0).states)


def test_build_corpus_single_xi(tmp_path):
    build_corpus([100.0], [], FlowConfig(n_snapshots=10), tmp_path)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert [e["xi"] for e in doc["entries"]] == [100.0]
    assert len(list(tmp_path.glob("*.rmx"))) == 1


def test_build_corpus_reports_path_on_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        build_corpus([100.0], [], FlowConfig(n_snapshots=10), blocker / "sub")


def test_energy_oscillation_amplitude_monotone_in_xi():
    amps = []
    for xi in range(80, 150, 10):
        e = kinetic_energy(simulate(FlowConfig(xi=float(xi)))).values
        amps.append(np.ptp(e[len(e) // 2:]))
    assert np.all(np.diff(amps) > 0)
