import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from romkit.errors import ShapeError, ValidationError
from romkit.model import (RomModel, Trajectory, block_matrix, continuous_stability,
                          discrete_stability, initial_velocity, kinetic_energy_rate,
                          propagate_euler, propagate_exact, reconstruct_shape, train)
from romkit.pod import PodBasis
from romkit.snapshots import ParamCouple, read_rom_record, write_rom_record
from romkit.synth import generate_linear, make_linear_oracle


def _model(A, beta0, d=6, seed=0):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    K = A.shape[0]
    Q = np.linalg.qr(np.random.default_rng(seed).standard_normal((d, K)))[0]
    return RomModel(PodBasis(Q, np.empty(0), 1e-6), A, 1e-9, np.atleast_1d(beta0), 0.04,
                    np.arange(d, dtype=float), 2.0, ParamCouple(0.2, 0.8))


def test_block_matrix():
    AA = block_matrix([[2.0]])
    np.testing.assert_array_equal(AA, [[0, 1], [0, 2]])


def test_euler_single_step():
    traj = propagate_euler(_model([[-1.0]], [1.0]), 0.1, 1)
    assert traj.betas[0, 1] == pytest.approx(0.9)
    assert traj.alphas[0, 1] == pytest.approx(0.1)
    np.testing.assert_allclose(traj.times, [0.0, 0.1])


def test_exact_scalar_decay():
    a, b0 = 0.7, 1.3
    m = _model([[-a]], [b0])
    t = np.array([0.0, 0.5, 2.0, 7.0])
    traj = propagate_exact(m, t)
    np.testing.assert_allclose(traj.betas[0], b0 * np.exp(-a * t), rtol=1e-12)
    np.testing.assert_allclose(traj.alphas[0], b0 * (1 - np.exp(-a * t)) / a, rtol=1e-12,
                               atol=1e-15)


def test_exact_zero_matrix_is_drift():
    m = _model(np.zeros((2, 2)), [1.0, -2.0])
    traj = propagate_exact(m, [1.0, 3.0])
    np.testing.assert_allclose(traj.alphas, [[1.0, 3.0], [-2.0, -6.0]], atol=1e-14)
    np.testing.assert_allclose(traj.betas, [[1.0, 1.0], [-2.0, -2.0]])


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31))
def test_exact_matches_ode_solver(k, seed):
    r = np.random.default_rng(seed)
    A = r.standard_normal((k, k)) - 1.5 * np.eye(k)
    b0 = r.standard_normal(k)
    m = _model(A, b0, d=3 * k + 3, seed=seed)
    t = np.linspace(0.1, 3.0, 7)
    ode = solve_ivp(lambda _, w: block_matrix(A) @ w, (0, 3.0), np.r_[np.zeros(k), b0],
                    t_eval=t, rtol=1e-12, atol=1e-13, method="DOP853")
    traj = propagate_exact(m, t)
    np.testing.assert_allclose(np.vstack([traj.alphas, traj.betas]), ode.y, atol=1e-9)


def test_exact_grid_independent_of_sampling():
    r = np.random.default_rng(1)
    m = _model(r.standard_normal((3, 3)) - 2 * np.eye(3), r.standard_normal(3), d=9)
    fine = propagate_exact(m, np.linspace(0.01, 2.0, 200))
    coarse = propagate_exact(m, [2.0])
    np.testing.assert_allclose(fine.alphas[:, -1], coarse.alphas[:, 0], rtol=1e-11)


def test_euler_converges_first_order():
    r = np.random.default_rng(2)
    m = _model(r.standard_normal((3, 3)) - 2 * np.eye(3), r.standard_normal(3), d=9)
    T = 1.0
    ref = propagate_exact(m, [T])
    errs = []
    for steps in (100, 200, 400):
        e = propagate_euler(m, T / steps, steps)
        errs.append(np.linalg.norm(e.alphas[:, -1] - ref.alphas[:, 0]))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    np.testing.assert_allclose(orders, 1.0, atol=0.1)


def test_propagation_validation():
    m = _model([[-1.0]], [1.0])
    for bad in ([], [1.0, 0.5], [-1.0]):
        with pytest.raises(ValidationError):
            propagate_exact(m, bad)
    with pytest.raises(ValidationError):
        propagate_euler(m, 0.0, 3)
    with pytest.raises(ValidationError):
        propagate_euler(m, 0.1, -1)
    with pytest.raises(ValidationError):
        Trajectory(np.array([0.0, 0.0]), np.zeros((1, 2)), np.zeros((1, 2)))


def test_discrete_stability_examples():
    m = _model([[-1.0]], [1.0])
    d = discrete_stability(m, 2.5)
    assert d.spectral_radius == pytest.approx(1.5) and not d.stable
    assert discrete_stability(m, 0.1).stable
    assert discrete_stability(m, 2.0).stable  # |1 - 2| = 1 sits on the boundary


def test_continuous_stability_and_energy():
    A = np.array([[-1.0, 5.0], [0.0, -1.0]])  # stable but not dissipative
    m = _model(A, [1.0, 1.0])
    c = continuous_stability(m)
    assert c.stable and c.max_real == pytest.approx(-1.0)
    assert not c.dissipative and not c.steady_consistent
    beta = np.array([0.3, -2.0])
    assert kinetic_energy_rate(m, beta) == pytest.approx(beta @ A @ beta)
    with pytest.raises(ShapeError):
        kinetic_energy_rate(m, np.ones(3))
    z = continuous_stability(_model(np.diag([0.0, -1.0]), [1.0, 1.0]))
    assert z.steady_consistent and z.dissipative


def test_initial_velocity_backstep():
    A = np.diag([-1.0, -2.0])
    b1 = np.array([0.9, 0.8])
    np.testing.assert_allclose(initial_velocity(A, b1, 0.1), [1.0, 1.0])
    np.testing.assert_array_equal(initial_velocity(A, b1, 0.1, "first"), b1)
    with pytest.raises(ValidationError):
        initial_velocity(A, b1, 0.1, "guess")
    # singular I + dt A falls back to the first snapshot
    np.testing.assert_array_equal(initial_velocity(A, b1, 1.0), b1)


def test_model_validation():
    with pytest.raises(ShapeError):
        _model(np.zeros((2, 3)), [1.0, 1.0])
    m = _model([[-1.0]], [1.0])
    with pytest.raises(ValidationError):
        RomModel(m.basis, m.a_mu, 0.0, m.beta0, 0.04, m.initial_positions, 1.0, m.theta,
                 np.ones(1))
    with pytest.raises(ShapeError):
        reconstruct_shape(m, np.ones(2))
    np.testing.assert_allclose(reconstruct_shape(m, [2.0]),
                               m.initial_positions + 2.0 * m.modes[:, 0])


def test_record_round_trip(tmp_path):
    m = _model([[-1.0, 0.2], [0.0, -0.5]], [1.0, 0.5])
    write_rom_record(m.to_record({"source": "unit"}), tmp_path / "m.romrec")
    back = RomModel.from_record(read_rom_record(tmp_path / "m.romrec"))
    t = [0.3, 1.0]
    a, b = propagate_exact(m, t), propagate_exact(back, t)
    np.testing.assert_array_equal(a.alphas, b.alphas)
    assert back.metadata["source"] == "unit"


def test_train_recovers_linear_oracle(linear_small):
    res = train(linear_small, eps=1e-12, max_rank=20, mu=0.0)
    m = res.model
    assert m.rank == 6 and res.velocity_ric < 1e-20
    assert m.metadata["initial_velocity"] == "backstep"


def test_trained_model_error_is_first_order_in_dt():
    # the identified generator is the forward-difference one, so the ROM
    # trajectory error against the exact flow shrinks linearly with dt
    errs = []
    for dt, N in ((0.04, 100), (0.02, 200), (0.01, 400)):
        s = generate_linear(make_linear_oracle(k=4, d=30, n_snapshots=N, dt=dt, seed=8))
        m = train(s, eps=1e-14, mu=0.0).model
        traj = propagate_exact(m, s.times)
        errs.append(np.linalg.norm(m.displacements(traj) - s.displacements)
                    / np.linalg.norm(s.displacements))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    np.testing.assert_allclose(orders, 1.0, atol=0.15)


def test_train_with_lcurve(linear_small):
    res = train(linear_small, eps=1e-12, lcurve=(1e-12, 1e-5))
    assert res.lcurve is not None and res.lcurve.mus.size == 29
    assert res.model.mu == res.lcurve.selected_mu
    with pytest.raises(ValidationError):
        train(linear_small, mu=None)


def test_continuous_backstep_consistency():
    # for a scalar decay the backstep velocity is exact up to O(dt^2)
    dt = 0.01
    a = 1.0
    A_fd = (math.exp(-a * dt) - 1) / dt
    b0 = initial_velocity([[A_fd]], [math.exp(-a * dt)], dt)
    assert b0[0] == pytest.approx(1.0, abs=1e-12)
