import itertools

import numpy as np
import pytest
import scipy.linalg

from romda.errors import ConditionError, ContractError
from romda.sensing import (
    PodBasis, SensorLayout, load_basis, numerical_rank, observe, pivoted_qr, place_sensors,
    pod_basis, reconstruct, save_basis,
)
from romda.synthflow import FlowConfig, simulate


@pytest.fixture(scope="module")
def flow_snapshots():
    cfg = FlowConfig(xi=120.0, n_snapshots=400)
    return simulate(cfg).states


def test_rank_one_pod_captures_all_energy():
    row = np.random.default_rng(0).normal(size=8)
    X = np.outer(np.arange(1.0, 6.0), row)
    b = pod_basis(X, 1)
    np.testing.assert_allclose(b.expand(b.coefficients(X)), X, atol=1e-12)
    assert b.singular_values[0] ** 2 == pytest.approx(np.sum(X ** 2), rel=1e-12)


def test_full_rank_pod_is_exact():
    X = np.random.default_rng(1).normal(size=(10, 6))
    b = pod_basis(X, 6)
    np.testing.assert_allclose(b.expand(b.coefficients(X)), X, atol=1e-10)


def test_truncation_error_is_eckart_young():
    X = np.random.default_rng(2).normal(size=(12, 9))
    s = np.linalg.svd(X, compute_uv=False)
    for r in range(1, 9):
        b = pod_basis(X, r)
        err = np.linalg.norm(X - b.expand(b.coefficients(X)))
        assert abs(err - np.sqrt(np.sum(s[r:] ** 2))) < 1e-10


def test_pod_rank_bounds():
    with pytest.raises(ContractError):
        pod_basis(np.ones((3, 5)), 4)


def test_pod_mean_toggle():
    X = np.random.default_rng(3).normal(size=(7, 5)) + 10
    b = pod_basis(X, 5, subtract_mean=True)
    np.testing.assert_allclose(b.mean, X.mean(axis=0))
    np.testing.assert_allclose(b.expand(b.coefficients(X)), X, atol=1e-10)


def test_identity_rows_pick_the_nonzero_rows():
    psi = np.zeros((7, 3))
    psi[[5, 1, 3], [0, 1, 2]] = [3.0, 2.0, 1.0]
    layout = place_sensors(PodBasis(psi, np.ones(3)), 3)
    assert layout.indices.tolist() == [5, 1, 3]


def test_pivoted_qr_agrees_with_lapack_on_generic_input():
    A = np.random.default_rng(4).normal(size=(4, 30))
    piv, R = pivoted_qr(A)
    _, R_ref, piv_ref = scipy.linalg.qr(A, pivoting=True, mode="economic")
    assert piv.tolist() == piv_ref[:4].tolist()
    np.testing.assert_allclose(np.abs(np.diag(R)), np.abs(np.diag(R_ref)), rtol=1e-12)


def test_pivot_norms_non_increasing_and_volume_matches_det():
    rng = np.random.default_rng(5)
    for _ in range(20):
        psi = rng.normal(size=(40, 5))
        piv, R = pivoted_qr(psi.T)
        d = np.abs(np.diag(R))
        assert np.all(np.diff(d) <= 1e-12)
        for k in range(1, 6):
            sub = psi.T[:, piv[:k]]
            gram_vol = np.sqrt(np.linalg.det(sub.T @ sub))
            assert gram_vol == pytest.approx(np.prod(d[:k]), rel=1e-9)
        assert abs(np.linalg.det(psi[piv])) == pytest.approx(np.prod(d), rel=1e-9)


def _abs_det(psi, idx):
    return abs(np.linalg.det(psi[list(idx)]))


def test_greedy_determinant_vs_exhaustive():
    rng = np.random.default_rng(6)
    for m, r in [(6, 2), (8, 3), (12, 3), (10, 2)]:
        for _ in range(25):
            psi = rng.normal(size=(m, r))
            greedy = _abs_det(psi, place_sensors(PodBasis(psi, np.ones(r)), r).indices)
            best = max(_abs_det(psi, c) for c in itertools.combinations(range(m), r))
            assert greedy >= 0.5 * best


def test_greedy_determinant_beats_random_median():
    rng = np.random.default_rng(7)
    for _ in range(5):
        psi = rng.normal(size=(100, 4))
        greedy = _abs_det(psi, place_sensors(PodBasis(psi, np.ones(4)), 4).indices)
        rand = [_abs_det(psi, rng.choice(100, 4, replace=False)) for _ in range(200)]
        assert greedy >= np.median(rand)


def test_extra_sensors_increase_information_determinant(flow_snapshots):
    basis = pod_basis(flow_snapshots, numerical_rank(flow_snapshots))
    r = basis.rank
    layout = place_sensors(basis, 16)
    assert layout.n_obs == 16 and len(set(layout.indices)) == 16
    dets = []
    for k in range(r, 17):
        A = basis.modes[layout.indices[:k]]
        dets.append(np.linalg.det(A.T @ A))
    assert np.all(np.diff(dets) >= 0)


def test_row_permutation_invariance(flow_snapshots):
    X = flow_snapshots[::4]
    perm = np.random.default_rng(8).permutation(X.shape[0])
    a = place_sensors(pod_basis(X, 4), 10).indices
    b = place_sensors(pod_basis(X[perm], 4), 10).indices
    assert a.tolist() == b.tolist()
    np.testing.assert_allclose(pod_basis(X, 4).modes, pod_basis(X[perm], 4).modes, atol=1e-9)


def test_place_sensors_errors():
    with pytest.raises(ContractError):
        place_sensors(PodBasis(np.ones((3, 1)), np.ones(1)), 4)


def test_observe_cases():
    X = np.random.default_rng(9).normal(size=(5, 6))
    np.testing.assert_array_equal(observe(X, SensorLayout(range(6), 6)), X)
    np.testing.assert_array_equal(observe(X, SensorLayout([4], 6))[:, 0], X[:, 4])
    layout = SensorLayout([5, 0, 2], 6)
    np.testing.assert_allclose(observe(X, layout), X @ layout.matrix().T, rtol=0, atol=0)
    with pytest.raises(ContractError):
        SensorLayout([6], 6)
    with pytest.raises(ContractError):
        SensorLayout([1, 1], 6)


def test_reconstruct_exact_in_span():
    rng = np.random.default_rng(10)
    psi = rng.normal(size=(20, 3))
    basis = PodBasis(psi, np.ones(3))
    layout = place_sensors(basis, 3)
    x = psi @ rng.normal(size=3)
    np.testing.assert_allclose(reconstruct(observe(x, layout), layout, basis), x, atol=1e-8)
    np.testing.assert_array_equal(reconstruct(np.zeros(3), layout, basis), np.zeros(20))


def test_reconstruct_flags_rank_deficiency():
    psi = np.zeros((5, 2))
    psi[0, 0] = psi[1, 1] = 1.0
    with pytest.raises(ConditionError) as info:
        reconstruct(np.zeros(2), SensorLayout([2, 3], 5), PodBasis(psi, np.ones(2)))
    assert info.value.condition == np.inf


def test_reconstruct_projection_idempotent():
    rng = np.random.default_rng(11)
    basis = PodBasis(rng.normal(size=(30, 4)), np.ones(4))
    layout = place_sensors(basis, 9)
    x1 = reconstruct(rng.normal(size=9), layout, basis)
    x2 = reconstruct(observe(x1, layout), layout, basis)
    np.testing.assert_allclose(x1, x2, atol=1e-10)


def test_qr_reconstruction_beats_random_median(flow_snapshots):
    rng = np.random.default_rng(12)
    r = numerical_rank(flow_snapshots)
    basis = pod_basis(flow_snapshots, r)
    noise = 1e-3 * rng.normal(size=(flow_snapshots.shape[0], r))

    def err(layout):
        y = observe(flow_snapshots, layout) + noise
        try:
            rec = reconstruct(y, layout, basis)
        except ConditionError:
            return np.inf
        return np.linalg.norm(rec - flow_snapshots)

    qr_err = err(place_sensors(basis, r))
    m = flow_snapshots.shape[1]
    rand = [err(SensorLayout(rng.choice(m, r, replace=False), m)) for _ in range(200)]
    assert qr_err <= np.median(rand)


def test_basis_persistence(tmp_path):
    b = pod_basis(np.random.default_rng(13).normal(size=(6, 5)), 3)
    save_basis(b, tmp_path)
    back = load_basis(tmp_path)
    np.testing.assert_array_equal(back.modes, b.modes)
    np.testing.assert_array_equal(back.singular_values, b.singular_values)
    layout = SensorLayout([3, 1], 5)
    layout.save(tmp_path / "layout.json")
    assert SensorLayout.load(tmp_path / "layout.json").indices.tolist() == [3, 1]
