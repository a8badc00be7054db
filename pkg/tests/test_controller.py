from __future__ import annotations

import numpy as np
import pytest

from fracnuss.controller import (
    AdaptiveState,
    ControllerGains,
    advance,
    coordinate_change,
    evaluate_controller,
    final_control,
    h_function,
    mu_rate,
    psi_square_sum,
    regressor_grids,
    step1_control,
    stepj_control,
    theta_rate,
)
from fracnuss.errors import ContractViolation, DomainError
from fracnuss.fuzzy import basis
from fracnuss.nussbaum import QUAD_SIN, nussbaum
from fracnuss.plant import scenario_example_a


def test_from_cbar_keeps_c_above_quarter():
    for cbar in (0.5, 1.0, 3.0, 10.0):
        g = ControllerGains.from_cbar([cbar, cbar])
        assert all(c > 0.25 for c in g.c)
        assert g.eta_gain(0) == pytest.approx(cbar)
        assert g.eta_gain(1) == pytest.approx(cbar)


def test_gain_validation():
    with pytest.raises(DomainError):
        ControllerGains(c=(0.25,), k=(1.0,), l=(1.0,), b=1.0)
    with pytest.raises(DomainError):
        ControllerGains(c=(1.0,), k=(0.0,), l=(1.0,), b=1.0)
    with pytest.raises(DomainError):
        ControllerGains(c=(1.0,), k=(1.0,), l=(1.0,), b=1.0, Lambda=(np.array([[1.0, 0], [0, -1.0]]),))
    with pytest.raises(ContractViolation):
        ControllerGains(c=(1.0, 1.0), k=(1.0,), l=(1.0,), b=1.0)


def test_coordinate_change():
    np.testing.assert_allclose(coordinate_change([1.0, 2.0, 3.0], 0.5, [1.5, 2.0]), [0.5, 0.5, 1.0])
    with pytest.raises(ContractViolation):
        coordinate_change([1.0, 2.0], 0.0, [])


def test_h_function():
    assert h_function(0.0, 0.1, 5.0) == 0.0
    assert h_function(1.0, 1.0, 2.0) == pytest.approx(2.0)
    # bounded in z1: largest at z1 = sqrt(varpi)
    z = np.linspace(-5, 5, 1001)
    vals = np.array([h_function(v, 0.25, 1.0) for v in z])
    assert np.max(np.abs(vals)) <= 1.0 / np.sqrt(0.25) + 1e-12
    with pytest.raises(DomainError):
        h_function(0.1, 0.0, 1.0)


def test_step_laws_by_hand():
    tau, eta, ddot = step1_control(0.2, 0.3, 0.5, 0.4, 1.0, 2.0, QUAD_SIN, 1.0)
    assert eta == pytest.approx(2.0 * 0.2 + 0.3 + 0.5 * 0.4 - 1.0)
    assert tau == pytest.approx(nussbaum(QUAD_SIN, 1.0) * eta)
    assert ddot == pytest.approx(0.2 * eta)
    tau, eta, ddot = stepj_control(-0.5, 0.1, 3.0, QUAD_SIN, 3.0)
    assert (tau, eta, ddot) == pytest.approx((-9.0 * -1.4, -1.4, 0.7))
    assert final_control(-0.5, 0.1, 3.0, QUAD_SIN, 3.0) == pytest.approx((12.6, -1.4, 0.7))


def test_adaptive_rates():
    phi = np.array([0.25, 0.75])
    np.testing.assert_allclose(theta_rate(2.0, phi, 0.5, 0.1, [1.0, 0.0]), [0.15, 0.75])
    np.testing.assert_allclose(theta_rate(np.diag([1.0, 2.0]), phi, 1.0, 0.0, [0, 0]), [0.25, 1.5])
    with pytest.raises(ContractViolation):
        theta_rate(1.0, phi, 1.0, 0.1, [0.0])
    assert mu_rate(2.0, 0.5, 0.3, 0.1, 1.0) == pytest.approx(0.2)


def test_regressor_sizes():
    full = regressor_grids(3, "full")
    compact = regressor_grids(3, "compact")
    assert [g.input_dim for g in full] == [1, 4, 5]
    assert [g.input_dim for g in compact] == [1, 3, 4]
    with pytest.raises(DomainError):
        regressor_grids(2, "wide")


def test_psi_square_sum_uses_column():
    sc = scenario_example_a()
    # output 1 is bounded by psi = identity in subsystems 2, 3 and 4
    assert psi_square_sum(sc.subsystems, 0, 0.5) == pytest.approx(3 * 0.25)


def test_evaluate_is_pure_and_consistent():
    gains = ControllerGains.from_cbar([3.0, 1.0])
    state = AdaptiveState.initial(2, 0.8, 1e-3, delta0=[1.0, 1.5])
    before = state.params.copy()
    x = np.array([0.3, -0.1])
    out = evaluate_controller(state, x, 0.1, 0.5, 0.2, gains, QUAD_SIN)
    np.testing.assert_array_equal(state.params, before)
    z1 = 0.2
    h = h_function(z1, gains.varpi, 0.2)
    eta1 = gains.eta_gain(0) * z1 - 0.5  # zero weights and zero mu_hat
    assert out.eta[0] == pytest.approx(eta1)
    assert out.tau[0] == pytest.approx(nussbaum(QUAD_SIN, 1.0) * eta1)
    assert out.z[1] == pytest.approx(x[1] - out.tau[0])
    assert out.u == out.tau[-1]
    assert out.h == pytest.approx(h)
    assert out.mu_rate == pytest.approx(gains.gamma1 * z1 * h)
    phi1 = basis(state.grids[0], [0.3])
    np.testing.assert_allclose(out.theta_rates[0], phi1 * z1)


def test_advance_moves_delta_and_weights():
    gains = ControllerGains.from_cbar([3.0, 1.0])
    state = AdaptiveState.initial(2, 0.8, 1e-3)
    out = evaluate_controller(state, [0.5, 0.0], 0.0, 0.0, 0.0, gains)
    advance(state, out, 1e-3)
    np.testing.assert_allclose(state.delta, 1e-3 * out.delta_dot)
    assert len(state.buffer) == 2
    assert np.any(state.params != 0)
    assert state.theta(0).theta.shape == (5,)


def test_controller_dimension_mismatch():
    gains = ControllerGains.from_cbar([3.0])
    state = AdaptiveState.initial(2, 0.8, 1e-3)
    with pytest.raises(ContractViolation):
        evaluate_controller(state, [0.0, 0.0], 0.0, 0.0, 0.0, gains)
