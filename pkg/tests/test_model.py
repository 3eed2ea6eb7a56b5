import json

import numpy as np
import pytest

from conftest import small_instance
from fomvi.errors import StructuralError
from fomvi.model import (RobustMdpInstance, apply_K, apply_K_transpose, bilinear_value, dumps_instance,
                         load_instance, payoff_all, policy_value, return_value, save_instance)
from fomvi.uncertainty import Kind


def dense_K(v, discount, A):
    """Explicit (A*S) x A matrix with K[a*S + s', a] = discount * v[s']."""
    S = len(v)
    K = np.zeros((A * S, A))
    for a in range(A):
        K[a * S:(a + 1) * S, a] = discount * v
    return K


class TestValidation:
    def test_valid_instance(self):
        inst = small_instance()
        assert (inst.num_states, inst.num_actions) == (3, 2)
        assert inst.value_bound == pytest.approx(inst.max_cost / 0.2)
        assert inst.uncertainty_kind is Kind.ELLIPSOIDAL

    def test_arrays_are_read_only(self):
        inst = small_instance()
        with pytest.raises(ValueError):
            inst.costs[0, 0] = 1.0

    @pytest.mark.parametrize("discount", [1.0, -0.1, 1.5])
    def test_bad_discount(self, discount):
        with pytest.raises(ValueError):
            small_instance(discount=discount)

    def test_zero_discount_allowed(self):
        assert small_instance(discount=0.0).discount == 0.0

    def test_row_sum_tolerance(self):
        inst = small_instance()
        P = inst.nominal_kernel.copy()
        P[0, 0, 0] += 1e-11
        with pytest.raises(ValueError, match="probability"):
            RobustMdpInstance(inst.costs, P, 0.8, inst.initial_distribution)
        P[0, 0, 0] -= 1e-11 - 1e-13
        RobustMdpInstance(inst.costs, P, 0.8, inst.initial_distribution)

    def test_negative_cost(self):
        with pytest.raises(ValueError):
            small_instance(costs=[[-1.0, 0.0], [0, 0], [0, 0]])

    def test_shape_errors(self):
        inst = small_instance()
        with pytest.raises(StructuralError):
            RobustMdpInstance(inst.costs, inst.nominal_kernel[:, :, :2], 0.8, inst.initial_distribution)
        with pytest.raises(StructuralError):
            RobustMdpInstance(inst.costs, inst.nominal_kernel, 0.8, np.ones(2) / 2)

    def test_negative_radius(self):
        with pytest.raises(ValueError):
            small_instance(radius=-0.1)

    def test_with_radius(self):
        inst = small_instance()
        assert inst.with_radius(0.0).radius == 0.0
        assert inst.radius == 0.1


class TestOperators:
    def test_K_against_dense_matrix(self, rng):
        S, A = 4, 3
        v = rng.normal(size=S)
        x = rng.dirichlet(np.ones(A))
        y = rng.dirichlet(np.ones(S), size=A)
        K = dense_K(v, 0.8, A)
        np.testing.assert_allclose(apply_K(v, x, 0.8).ravel(), K @ x, atol=1e-14)
        np.testing.assert_allclose(apply_K_transpose(v, y, 0.8), K.T @ y.ravel(), atol=1e-14)

    def test_adjoint_identity(self, rng):
        for _ in range(20):
            S, A = rng.integers(1, 6), rng.integers(1, 6)
            v = rng.normal(size=S)
            x = rng.normal(size=A)
            y = rng.normal(size=(A, S))
            lhs = np.sum(y * apply_K(v, x, 0.7))
            rhs = x @ apply_K_transpose(v, y, 0.7)
            assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)

    def test_transpose_shape_mismatch(self):
        with pytest.raises(StructuralError):
            apply_K_transpose(np.zeros(3), np.zeros((2, 4)), 0.8)

    def test_bilinear_value_formula(self):
        inst = small_instance()
        x = np.array([0.25, 0.75])
        y = inst.nominal_kernel[1]
        v = np.array([1.0, 2.0, 3.0])
        expected = sum(x[a] * (inst.costs[1, a] + 0.8 * y[a] @ v) for a in range(2))
        assert bilinear_value(inst, 1, x, y, v) == pytest.approx(expected, rel=1e-14)
        all_states = payoff_all(inst.costs, 0.8, np.tile(x, (3, 1)), inst.nominal_kernel, v)
        assert all_states[1] == pytest.approx(expected, rel=1e-14)

    def test_bilinear_value_checks(self):
        inst = small_instance()
        with pytest.raises(StructuralError):
            bilinear_value(inst, 5, np.ones(2) / 2, inst.nominal_kernel[0], np.zeros(3))
        with pytest.raises(StructuralError):
            bilinear_value(inst, 0, np.ones(3) / 3, inst.nominal_kernel[0], np.zeros(3))

    def test_policy_value_matches_iteration(self, rng):
        inst = small_instance(S=5, A=3, seed=4)
        x = rng.dirichlet(np.ones(3), size=5)
        v = np.zeros(5)
        for _ in range(2000):
            v = payoff_all(inst.costs, 0.8, x, inst.nominal_kernel, v)
        np.testing.assert_allclose(policy_value(inst, x, inst.nominal_kernel), v, atol=1e-9)

    def test_return_value(self):
        inst = small_instance()
        assert return_value(inst, [3.0, 6.0, 9.0]) == pytest.approx(6.0)


class TestSerialization:
    def test_round_trip_exact(self, tmp_path, garnet5):
        path = tmp_path / "inst.json"
        save_instance(garnet5, path)
        back = load_instance(path)
        assert np.array_equal(back.costs, garnet5.costs)
        assert np.array_equal(back.nominal_kernel, garnet5.nominal_kernel)
        assert back.discount == garnet5.discount and back.radius == garnet5.radius
        assert back.uncertainty_kind is garnet5.uncertainty_kind
        assert dumps_instance(back) == path.read_text()

    def test_json_fields(self, garnet5):
        data = json.loads(dumps_instance(garnet5))
        for key in ("num_states", "num_actions", "discount", "costs", "nominal_kernel", "initial_distribution",
                    "uncertainty"):
            assert key in data
        assert data["uncertainty"] == {"kind": "ellipsoidal", "radius": garnet5.radius}

    def test_missing_field(self, garnet5):
        data = garnet5.to_dict()
        del data["costs"]
        with pytest.raises(StructuralError, match="costs"):
            RobustMdpInstance.from_dict(data)

    def test_declared_size_mismatch(self, garnet5):
        data = garnet5.to_dict()
        data["num_states"] = 4
        with pytest.raises(StructuralError):
            RobustMdpInstance.from_dict(data)
