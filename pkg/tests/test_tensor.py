import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hoigraph import tensor as tn
from hoigraph.gradcheck import grad_check
from hoigraph.nn import ParamStore
from hoigraph.optim import Adam
from hoigraph.tensor import ContractError, Tensor, backward, inject_backward_fault

from .oracles import softmax_hp


def param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_softmax_examples():
    np.testing.assert_allclose(tn.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    out = tn.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-300)
    ref = softmax_hp([1, 2, 3])
    np.testing.assert_allclose(ref, [0.09003057, 0.24472847, 0.66524096], atol=5e-9)
    np.testing.assert_allclose(tn.softmax(Tensor([1.0, 2.0, 3.0])).data, ref, atol=1e-15)


def test_softmax_empty_is_domain_error():
    with pytest.raises(ContractError):
        tn.softmax(Tensor(np.zeros(0)))


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_sums_to_one(values):
    out = tn.softmax(Tensor(values)).data
    assert np.all(out >= 0)
    assert abs(out.sum() - 1.0) < 1e-12


def test_backward_identity_scalar():
    x = Tensor(3.0, requires_grad=True)
    backward(x)
    assert x.grad == 1.0


def test_backward_constants_write_nothing():
    a, b = Tensor([1.0, 2.0]), Tensor([3.0, 4.0])
    loss = (a + b).sum()
    backward(loss)
    assert a.grad is None and b.grad is None


def test_backward_rejects_nonscalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_backward_accumulates_without_zeroing():
    x = Tensor([1.0, -2.0], requires_grad=True)
    backward((x * x).sum())
    backward((x * x).sum())
    np.testing.assert_allclose(x.grad, [4.0, -8.0])
    x.zero_grad()
    np.testing.assert_allclose(x.grad, 0.0)


# each case builds a scalar loss from random parameters
PRIMITIVES = {
    "matmul": lambda p: (tn.matmul(p["a"], p["b"]) * p["w"]).sum(),
    "batched_matmul": lambda p: (tn.matmul(p["t"], p["b"]) * p["t2"]).sum(),
    "add_broadcast": lambda p: ((p["a"] + p["bias"]) * p["a"]).sum(),
    "mul": lambda p: (p["a"] * p["a2"] * p["a"]).sum(),
    "concat": lambda p: (tn.concat([p["a"], p["a2"]], axis=1) * p["c"]).sum(),
    "stack": lambda p: (tn.stack([p["a"], p["a2"]], axis=1) * p["s"]).sum(),
    "slice": lambda p: (p["a"][1:, :3] * p["a"][:-1, 1:]).sum(),
    "fancy_index": lambda p: (p["a"][np.array([0, 2, 0]), np.array([1, 1, 2])] * p["v3"]).sum(),
    "tanh": lambda p: (tn.tanh(p["a"]) * p["a2"]).sum(),
    "sigmoid": lambda p: (tn.sigmoid(p["a"]) * p["a2"]).sum(),
    "relu": lambda p: (tn.relu(p["a"]) * p["a2"]).sum(),
    "softmax": lambda p: (tn.softmax(p["a"], axis=-1) * p["a2"]).sum(),
    "softmax_axis0": lambda p: (tn.softmax(p["a"], axis=0) * p["a2"]).sum(),
    "log_softmax": lambda p: (tn.log_softmax(p["a"]) * p["a2"]).sum(),
    "log": lambda p: (tn.log(tn.sigmoid(p["a"]) + 0.5) * p["a2"]).sum(),
    "exp": lambda p: (tn.exp(p["a"] * 0.3) * p["a2"]).sum(),
    "sum_axis": lambda p: (p["a"].sum(axis=1) * p["v3"]).sum(),
    "mean": lambda p: (p["a"].mean(axis=1, keepdims=True) * p["a2"]).mean(),
    "reshape_swap": lambda p: (p["t"].swapaxes(0, 2).reshape(4, 6) * p["r"]).sum(),
    "sub_neg": lambda p: ((p["a"] - p["a2"]) * (1.0 - p["a"])).sum(),
}


def _params(seed):
    rng = np.random.default_rng(seed)
    return ParamStore([
        ("a", param(rng, 3, 4)), ("a2", param(rng, 3, 4)), ("b", param(rng, 4, 2)),
        ("w", param(rng, 3, 2)), ("bias", param(rng, 4)), ("c", param(rng, 3, 8)),
        ("s", param(rng, 3, 2, 4)), ("v3", param(rng, 3)), ("t", param(rng, 2, 3, 4)),
        ("t2", param(rng, 2, 3, 2)), ("r", param(rng, 4, 6)),
    ])


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_primitive_gradients_match_finite_differences(name, seed):
    params = _params(seed)
    report = grad_check(lambda: PRIMITIVES[name](params), params, tolerance=1e-4,
                        max_elements=None)
    assert report.passed, "\n".join(report.lines())


def test_grad_check_quadratic_exact():
    x = Tensor(np.random.default_rng(3).standard_normal(6), requires_grad=True)
    params = ParamStore([("x", x)])
    report = grad_check(lambda: (x * x).sum() * 0.5, params, max_elements=None)
    assert report.max_error < 1e-10
    backward((x * x).sum() * 0.5)
    np.testing.assert_allclose(x.grad, x.data)


def test_grad_check_flags_corrupted_backward():
    params = _params(0)
    with inject_backward_fault("tanh"):
        report = grad_check(lambda: PRIMITIVES["tanh"](params), params, max_elements=None)
    assert not report.passed
    assert report.max_error > 0.1


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_concat_then_slice_is_identity(r, c1, c2, seed):
    rng = np.random.default_rng(seed)
    a, b = Tensor(rng.standard_normal((r, c1))), Tensor(rng.standard_normal((r, c2)))
    cat = tn.concat([a, b], axis=1)
    np.testing.assert_array_equal(cat[:, :c1].data, a.data)
    np.testing.assert_array_equal(cat[:, c1:].data, b.data)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20))
def test_relu_nonnegative(values):
    assert np.all(tn.relu(Tensor(values)).data >= 0)


def test_finite_outputs_on_finite_inputs():
    x = Tensor(np.array([[-800.0, 0.0, 800.0]]))
    for f in (tn.tanh, tn.sigmoid, tn.relu, tn.softmax, tn.log_softmax):
        assert np.all(np.isfinite(f(x).data))


def test_backward_is_deterministic():
    def run():
        params = _params(7)
        loss = sum((PRIMITIVES[n](params) for n in sorted(PRIMITIVES)), Tensor(0.0))
        backward(loss)
        return [p.grad.copy() for p in params.values()]

    for g1, g2 in zip(run(), run()):
        assert g1.tobytes() == g2.tobytes()


def test_matmul_shape_contract():
    with pytest.raises(ContractError):
        tn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_float32_values_stay_float32():
    x = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    y = tn.tanh(tn.matmul(x, x) + 1.0)
    assert y.dtype == np.float32


# Adam ------------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_parameter():
    p = Tensor([1.0, -2.0], requires_grad=True)
    opt = Adam(ParamStore([("p", p)]))
    opt.step(0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert opt.state.step == 1


def test_adam_first_step_hand_computed():
    p = Tensor(1.0, requires_grad=True)
    opt = Adam(ParamStore([("p", p)]))
    p.grad = np.array(1.0)
    opt.step(0.1)
    # m_hat = 1, v_hat = 1 -> p -= 0.1 / (1 + 1e-8)
    assert p.data == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)
    assert p.grad == 1.0  # caller zeroes


def test_adam_steps_increment_and_missing_grad():
    p = Tensor(1.0, requires_grad=True)
    opt = Adam(ParamStore([("p", p)]))
    for i in range(3):
        p.grad = np.array(0.5)
        opt.step(1e-3)
        assert opt.state.step == i + 1
    p.grad = None
    with pytest.raises(ContractError):
        opt.step(1e-3)


def test_adam_matches_reference_formula_over_steps():
    rng = np.random.default_rng(0)
    p = Tensor(rng.standard_normal(5), requires_grad=True)
    ref = p.data.copy()
    m = np.zeros(5)
    v = np.zeros(5)
    opt = Adam(ParamStore([("p", p)]))
    for t in range(1, 6):
        g = rng.standard_normal(5)
        p.grad = g.copy()
        opt.step(0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=1e-13)
