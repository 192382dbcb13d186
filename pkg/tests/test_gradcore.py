import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lemda import gradcore as gc
from gradcases import NETWORK_CASES, OP_CASES, TOL, worst_error


# -- concrete values ---------------------------------------------------------

def test_matmul_identity_and_dot():
    eye = gc.Tensor([[1, 0], [0, 1]])
    b = gc.Tensor([[3, 4], [5, 6]])
    np.testing.assert_array_equal(gc.matmul(eye, b).data, [[3, 4], [5, 6]])
    np.testing.assert_array_equal(gc.matmul(gc.Tensor([[1, 2]]), gc.Tensor([[3], [4]])).data, [[11]])


def test_matmul_inner_mismatch():
    with pytest.raises(gc.DimensionError):
        gc.matmul(gc.Tensor(np.ones((2, 3))), gc.Tensor(np.ones((2, 3))))


def test_elementwise_values():
    np.testing.assert_array_equal(gc.elementwise("relu", gc.Tensor([-1, 0, 2])).data, [0, 0, 2])
    np.testing.assert_array_equal(gc.elementwise("add", gc.Tensor([1, 2]), gc.Tensor([3, 4])).data, [4, 6])
    with pytest.raises(ValueError):
        gc.elementwise("cube", gc.Tensor([1.0]))


def test_relu_subgradient_at_zero_is_zero():
    x = gc.Parameter([-1.0, 2.0])
    gc.backward(gc.sum_(gc.relu(x)))
    np.testing.assert_array_equal(x.grad, [0, 1])
    z = gc.Parameter([0.0])
    gc.backward(gc.sum_(gc.relu(z)))
    assert z.grad[0] == 0.0


def test_log_domain():
    with pytest.raises(gc.DomainError):
        gc.log(gc.Tensor([1.0, 0.0]))


def test_shape_mismatch_raises():
    with pytest.raises(gc.DimensionError):
        gc.add(gc.Tensor(np.ones(3)), gc.Tensor(np.ones(4)))


def test_softmax_values():
    np.testing.assert_allclose(gc.softmax(gc.Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], atol=1e-15)
    big = gc.softmax(gc.Tensor([[1000.0, 0.0]])).data
    assert np.all(np.isfinite(big))
    np.testing.assert_allclose(big, [[1.0, 0.0]], atol=1e-300)
    rows = gc.softmax(gc.Tensor(np.random.default_rng(0).standard_normal((8, 5)))).data.sum(axis=1)
    assert np.all(np.abs(rows - 1) <= 1e-12)


def test_cross_entropy_values():
    logits = np.eye(3)[[0, 2]] * 1e6
    assert gc.cross_entropy(gc.Tensor(logits), [0, 2]).item() == pytest.approx(0.0, abs=1e-12)
    assert gc.cross_entropy(gc.Tensor(np.zeros((4, 3))), [0, 1, 2, 0]).item() == pytest.approx(math.log(3))
    with pytest.raises(IndexError):
        gc.cross_entropy(gc.Tensor(np.zeros((1, 3))), [3])


def test_kl_values():
    p = np.log([[0.8, 0.2]])
    q = gc.Tensor(np.log([[0.5, 0.5]]))
    direct = sum(a * math.log(a / 0.5) for a in (0.8, 0.2))
    assert gc.kl_divergence(p, q).item() == pytest.approx(direct, abs=1e-12)
    assert direct == pytest.approx(0.1927, abs=1e-4)
    same = gc.Tensor(np.random.default_rng(1).standard_normal((4, 3)))
    assert gc.kl_divergence(same.data, same).item() == pytest.approx(0.0, abs=1e-14)


def test_kl_empty_mask_is_exact_zero_with_zero_grad():
    q = gc.Parameter(np.random.default_rng(2).standard_normal((3, 2)))
    loss = gc.kl_divergence(np.zeros((3, 2)), q, mask=np.zeros(3, dtype=bool))
    assert loss.item() == 0.0
    gc.backward(loss + gc.sum_(q) * 0.0)
    np.testing.assert_array_equal(q.grad, 0.0)


def test_kl_mask_averages_selected_rows():
    rng = np.random.default_rng(3)
    p, q = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    mask = np.array([True, False, True, False])
    full = gc.kl_divergence(p[mask], gc.Tensor(q[mask])).item()
    assert gc.kl_divergence(p, gc.Tensor(q), mask).item() == pytest.approx(full, abs=1e-14)


# -- backward semantics --------------------------------------------------------

def test_backward_sum():
    x = gc.Parameter([1.0, 2.0, 3.0])
    gc.backward(gc.sum_(x))
    np.testing.assert_array_equal(x.grad, [1, 1, 1])


def test_backward_accumulates_across_passes():
    x = gc.Parameter([1.0, -2.0])
    gc.backward(gc.sum_(x * 3.0))
    gc.backward(gc.sum_(gc.square(x)))
    np.testing.assert_allclose(x.grad, 3.0 + 2 * x.data)


def test_backward_populates_intermediates():
    x = gc.Parameter([1.0, 2.0])
    h = x * 2.0
    gc.backward(gc.sum_(gc.square(h)))
    np.testing.assert_allclose(h.grad, 2 * h.data)


def test_backward_requires_scalar():
    with pytest.raises(gc.ContractError):
        gc.backward(gc.Parameter([1.0, 2.0]) * 2.0)


def test_shared_subexpression_gradient():
    # x feeds the loss through two paths; reverse recording order must sum both
    x = gc.Parameter([0.5])
    y = gc.tanh(x)
    loss = gc.sum_(y * y + y)
    gc.backward(loss)
    t = math.tanh(0.5)
    assert x.grad[0] == pytest.approx((2 * t + 1) * (1 - t * t), rel=1e-12)


def test_no_grad_and_frozen():
    x = gc.Parameter([1.0])
    with gc.no_grad():
        y = x * 2.0
    assert not y.requires_grad
    with gc.frozen([x]):
        assert not (x * 2.0).requires_grad
    assert x.requires_grad


# -- optimizers ----------------------------------------------------------------

def test_sgd_update_rule():
    p = gc.Parameter([1.0])
    p.grad = np.array([2.0])
    gc.optimizer_step(gc.SGD([p], lr=0.1))
    assert p.data[0] == pytest.approx(0.8)
    assert p.grad is None


def test_zero_grad_leaves_param():
    for opt_cls in (gc.SGD, gc.Adam):
        p = gc.Parameter([1.5])
        p.grad = np.zeros(1)
        opt_cls([p], lr=0.1).step()
        assert p.data[0] == 1.5


def test_adam_first_step_closed_form():
    p = gc.Parameter([0.0])
    p.grad = np.array([1.0])
    gc.Adam([p], lr=1e-3).step()
    # m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
    assert p.data[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


def test_optimizer_touches_only_its_params():
    a, b = gc.Parameter([1.0]), gc.Parameter([1.0])
    gc.backward(gc.sum_(a * b))
    before = b.data.copy()
    gc.SGD([a], lr=0.5).step()
    np.testing.assert_array_equal(b.data, before)
    assert a.data[0] == 0.5


def test_missing_grad_is_contract_error():
    p = gc.Parameter([1.0], name="lonely")
    with pytest.raises(gc.ContractError, match="lonely"):
        gc.SGD([p], lr=0.1).step()


def test_duplicate_registration_rejected():
    p = gc.Parameter([1.0])
    with pytest.raises(ValueError):
        gc.SGD([p, p], lr=0.1)


# -- sampling ------------------------------------------------------------------

def test_gaussian_zero_variance_limit():
    mu = gc.Tensor([[0.3, -1.2]])
    z = gc.gaussian_sample(mu, gc.Tensor([[-1e6, -1e6]]), np.random.default_rng(0))
    np.testing.assert_allclose(z.data, mu.data, atol=1e-6)


def test_gaussian_determinism_and_moments():
    mu, lv = gc.Tensor(np.zeros((100000, 1))), gc.Tensor(np.zeros((100000, 1)))
    a = gc.gaussian_sample(mu, lv, np.random.default_rng(7)).data
    b = gc.gaussian_sample(mu, lv, np.random.default_rng(7)).data
    np.testing.assert_array_equal(a, b)
    assert abs(a.mean()) < 0.02


def test_gaussian_kl_closed_form():
    assert gc.gaussian_kl(gc.Tensor(np.ones((3, 8))), gc.Tensor(np.zeros((3, 8)))).item() == pytest.approx(4.0, abs=1e-12)
    assert gc.gaussian_kl(gc.Tensor(np.zeros((2, 8))), gc.Tensor(np.zeros((2, 8)))).item() == 0.0


# -- finite differences (a few seeds here; the acceptance suite runs 20) --------

@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients(name):
    for seed in range(3):
        assert worst_error(OP_CASES[name], seed) <= TOL


@pytest.mark.parametrize("name", ["task_network", "mlp_vae"])
def test_network_gradients(name):
    for seed in range(2):
        assert worst_error(NETWORK_CASES[name], seed) <= TOL


def test_mlp_gradient_matches_fd():
    rng = np.random.default_rng(0)
    mlp = gc.MLP([3, 4, 2], rng)
    x = gc.Tensor(rng.standard_normal((5, 3)))
    y = rng.integers(0, 2, 5)
    assert gc.check_gradients(lambda: gc.cross_entropy(mlp(x), y), mlp.parameters()) <= TOL


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    p = gc.softmax(gc.Tensor(x)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-20, 20)),
       arrays(np.float64, (2, 3), elements=st.floats(-20, 20)))
def test_kl_nonnegative(p, q):
    assert gc.kl_divergence(p, gc.Tensor(q)).item() >= -1e-12
