import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from abfrkan import tensor as T
from abfrkan.gradcheck import check_gradients, numerical_grad, rel_error
from abfrkan.tensor import AdamW, CosineWarmRestarts, Module, ShapeError, parameter


# --- matmul ------------------------------------------------------------------

def test_matmul_identity():
    out = T.matmul(np.eye(2), [[3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(out.data, [[3, 4], [5, 6]])


def test_matmul_row_column():
    assert T.matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_gradient_3x3(rng):
    a, b = parameter(rng.normal(size=(3, 3))), parameter(rng.normal(size=(3, 3)))
    w = rng.normal(size=(3, 3))
    assert check_gradients(lambda: T.tsum(T.matmul(a, b) * w), [a, b]) <= 1e-6


def test_matmul_backward_rule(rng):
    a, b = parameter(rng.normal(size=(2, 3))), parameter(rng.normal(size=(3, 4)))
    g = rng.normal(size=(2, 4))
    T.backward(T.tsum(T.matmul(a, b) * g))
    assert np.allclose(a.grad, g @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ g)


def test_batched_matmul_gradients(rng):
    a = parameter(rng.normal(size=(2, 3, 4)))
    b = parameter(rng.normal(size=(4, 5)))
    c = parameter(rng.normal(size=(2, 5, 3)))
    f = lambda: T.tsum(T.square(T.matmul(T.matmul(a, b), c)))
    assert check_gradients(f, [a, b, c]) <= 1e-6


# --- elementwise -------------------------------------------------------------

def test_elementwise_zero_values():
    assert T.tanh(0.0).item() == 0.0
    assert T.silu(0.0).item() == 0.0
    assert T.relu(-1.0).item() == 0.0


def test_tanh_gradient_at_point():
    x = parameter(0.3)
    assert check_gradients(lambda: T.tanh(x), [x]) <= 1e-6


def test_div_by_zero_raises():
    with pytest.raises(ZeroDivisionError):
        T.div(1.0, np.array([1.0, 0.0]))


def test_unsupported_broadcast_rejected():
    with pytest.raises(ShapeError):
        T.add(np.ones((2, 3)), np.ones((2, 1)))


def test_row_broadcast_gradient(rng):
    x = parameter(rng.normal(size=(4, 3)))
    b = parameter(rng.normal(size=(3,)))
    assert check_gradients(lambda: T.tsum(T.square(x + b)), [x, b]) <= 1e-6


def test_elementwise_dispatch_unknown():
    with pytest.raises(ValueError):
        T.elementwise("cosh", 1.0)


UNARY = ["tanh", "exp", "silu", "relu", "square", "gelu", "sigmoid", "softplus", "log", "sqrt"]
BINARY = ["add", "sub", "mul", "div"]


@pytest.mark.parametrize("op", UNARY)
@pytest.mark.parametrize("seed", range(5))
def test_unary_gradients(op, seed):
    r = np.random.default_rng(seed)
    v = r.normal(size=(3, 4))
    if op in ("log", "sqrt"):
        v = np.abs(v) + 0.5
    if op == "relu":
        v = np.where(np.abs(v) < 1e-3, 0.5, v)  # avoid the kink
    x = parameter(v)
    w = r.normal(size=(3, 4))
    assert check_gradients(lambda: T.tsum(T.elementwise(op, x) * w), [x]) <= 1e-4


@pytest.mark.parametrize("op", BINARY)
@pytest.mark.parametrize("seed", range(5))
def test_binary_gradients(op, seed):
    r = np.random.default_rng(seed)
    a = parameter(r.normal(size=(3, 4)))
    b = parameter(r.uniform(0.5, 2.0, size=(4,)))
    w = r.normal(size=(3, 4))
    assert check_gradients(lambda: T.tsum(T.elementwise(op, a, b) * w), [a, b]) <= 1e-4


def test_gelu_is_erf_form():
    x = 0.7
    expect = 0.5 * x * (1 + math.erf(x / math.sqrt(2)))
    assert abs(T.gelu(x).item() - expect) < 1e-15


# --- fused ops ------------------------------------------------------------------

def _ln(x):
    d = np.shape(x)[-1]
    return T.layer_norm(x, np.ones(d), np.zeros(d))


def test_layer_norm_constant_row():
    assert np.allclose(_ln([[5.0, 5.0, 5.0]]).data, 0.0)


def test_layer_norm_symmetric_pair():
    out = _ln([[1.0, -1.0]]).data
    assert np.allclose(out, [[1.0, -1.0]], atol=1e-4)


def test_layer_norm_gradient(rng):
    x = parameter(rng.normal(size=(2, 4)))
    g, b = parameter(rng.normal(size=4)), parameter(rng.normal(size=4))
    w = rng.normal(size=(2, 4))
    assert check_gradients(lambda: T.tsum(T.layer_norm(x, g, b) * w), [x, g, b]) <= 1e-5


def test_softmax_rows():
    assert np.allclose(T.softmax_rows([[0.0, 0.0]]).data, [[0.5, 0.5]])
    big = T.softmax_rows([[1000.0, 0.0]]).data
    assert np.all(np.isfinite(big)) and abs(big[0, 0] - 1.0) < 1e-12


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_softmax_sums_to_one(row):
    assert abs(T.softmax_rows([row]).data.sum() - 1.0) <= 1e-12


def test_softmax_gradient(rng):
    x = parameter(rng.normal(size=(2, 3)))
    w = rng.normal(size=(2, 3))
    assert check_gradients(lambda: T.tsum(T.softmax_rows(x) * w), [x]) <= 1e-5


def test_cross_entropy_uniform():
    assert abs(T.cross_entropy(np.zeros((3, 2)), [0, 1, 0]).item() - math.log(2)) < 1e-15


def test_cross_entropy_saturated():
    assert T.cross_entropy([[30.0, -30.0]], [0]).item() < 1e-20


def test_cross_entropy_label_out_of_range():
    with pytest.raises(IndexError):
        T.cross_entropy(np.zeros((1, 2)), [2])


def test_cross_entropy_gradient_closed_form(rng):
    z = parameter(rng.normal(size=(4, 3)))
    y = np.array([0, 2, 1, 2])
    T.backward(T.cross_entropy(z, y))
    p = np.exp(z.data) / np.exp(z.data).sum(axis=1, keepdims=True)
    p[np.arange(4), y] -= 1
    assert np.allclose(z.grad, p / 4, atol=1e-15)


def test_gather_and_scale_rows_gradients(rng):
    x = parameter(rng.normal(size=(2, 5, 3)))
    s = parameter(rng.normal(size=(2, 3, 1)))
    idx = np.array([[4, 0, 0], [1, 2, 3]])
    w = rng.normal(size=(2, 3, 3))
    assert check_gradients(lambda: T.tsum(T.scale_rows(T.gather_rows(x, idx), s) * w), [x, s]) <= 1e-6


def test_shape_op_gradients(rng):
    x = parameter(rng.normal(size=(2, 3, 4)))
    y = parameter(rng.normal(size=(2, 3, 2)))
    w = rng.normal(size=(4, 3, 2))

    def f():
        z = T.concat([x, y], axis=-1)           # (2, 3, 6)
        z = T.permute(z, (2, 1, 0))             # (6, 3, 2)
        z = T.reshape(z, (4, 3, 3))
        z = T.swap_last(z)
        return T.tsum(T.tmean(z, axis=-1, keepdims=True) * w[:, :, :1])

    assert check_gradients(f, [x, y]) <= 1e-6


# --- backward ---------------------------------------------------------------------

def test_backward_non_scalar_rejected():
    with pytest.raises(ValueError):
        T.backward(parameter(np.ones(3)) * 2.0)


def test_backward_is_linear(rng):
    x = parameter(rng.normal(size=5))
    f1 = lambda: T.tsum(T.tanh(x))
    f2 = lambda: T.tsum(T.square(x))
    T.backward(f1() + f2())
    both = x.grad.copy()
    x.grad = None
    T.backward(f1())
    T.backward(f2())
    assert np.allclose(both, x.grad, atol=1e-15)


def test_unreachable_grads_untouched():
    a, b = parameter(1.0), parameter(2.0)
    b.grad = np.array(7.0)
    T.backward(a * 3.0)
    assert a.grad == 3.0 and b.grad == 7.0


def test_shared_node_visited_once():
    x = parameter(2.0)
    y = x * x
    T.backward(y + y)
    assert x.grad == 8.0


def test_no_grad_builds_no_graph():
    x = parameter(1.0)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


# --- optimizer & schedule ---------------------------------------------------------

def test_adamw_decay_only_step():
    p = parameter(1.0)
    p.grad = np.array(0.0)
    AdamW([p], lr=0.1, weight_decay=0.1).step()
    assert abs(p.item() - 0.99) < 1e-15


def test_adamw_constant_grad_monotone():
    p = parameter(0.0)
    opt = AdamW([p], lr=0.01, weight_decay=0.0)
    prev = p.item()
    for _ in range(20):
        p.grad = np.array(1.0)
        opt.step()
        assert p.item() < prev
        prev = p.item()


def test_adamw_descends_quadratic():
    x = parameter(1.0)
    opt = AdamW([x], lr=0.1, weight_decay=0.0)
    for _ in range(10):
        opt.zero_grad()
        T.backward(T.square(x))
        opt.step()
    assert x.item() ** 2 < 0.5


def test_adamw_step_count_increases():
    p = parameter(np.ones(2))
    opt = AdamW([p])
    for i in range(3):
        p.grad = np.ones(2)
        T.adamw_step([p], opt)
        assert opt.step_count == i + 1


def test_lr_schedule_examples():
    s = CosineWarmRestarts(1e-3, T_0=10, T_mult=2, eta_min=0.0)
    assert s.lr_at(0) == 1e-3
    assert s.lr_at(10) == 1e-3
    assert abs(s.lr_at(5) - 5e-4) < 1e-18
    assert T.lr_at(s, 30) == 1e-3


@given(st.integers(1, 20), st.integers(1, 3), st.floats(0, 1e-4))
def test_lr_within_bounds(T_0, T_mult, eta_min):
    s = CosineWarmRestarts(1e-3, T_0, T_mult, eta_min)
    assert all(eta_min <= s.lr_at(e) <= 1e-3 for e in range(10 * T_0 + 1))


class _Toy(Module):
    def __init__(self, seed):
        r = np.random.default_rng(seed)
        self.w = parameter(r.normal(size=(3, 2)))
        self.b = parameter(np.zeros(2))


def _train(seed, steps):
    m = _Toy(seed)
    opt = AdamW(m.parameters(), lr=0.05)
    x = np.random.default_rng(99).normal(size=(8, 3))
    y = np.arange(8) % 2
    for _ in range(steps):
        opt.zero_grad()
        T.backward(T.cross_entropy(T.matmul(x, m.w) + m.b, y))
        opt.step()
    return m


def test_training_is_bitwise_deterministic():
    a, b = _train(3, 25), _train(3, 25)
    for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert np.array_equal(p.data, q.data)


def test_module_state_roundtrip():
    a, b = _Toy(1), _Toy(2)
    b.load_state_dict(a.state_dict())
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))
    assert a.num_parameters() == 8


# --- checkpoint ---------------------------------------------------------------------

def test_checkpoint_roundtrip_bitwise(tmp_path, rng):
    arrays = {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=(4,)), "s": np.array(np.pi), "ünï": np.zeros((0, 2))}
    T.save_checkpoint(tmp_path / "c.abfk", arrays)
    back = T.load_checkpoint(tmp_path / "c.abfk")
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].shape == arrays[k].shape
        assert back[k].tobytes() == arrays[k].tobytes()


def test_checkpoint_rejects_corruption(tmp_path):
    T.save_checkpoint(tmp_path / "c.abfk", {"w": np.ones(3)})
    raw = (tmp_path / "c.abfk").read_bytes()
    (tmp_path / "bad.abfk").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(T.CheckpointError):
        T.load_checkpoint(tmp_path / "bad.abfk")
    (tmp_path / "short.abfk").write_bytes(raw[:-3])
    with pytest.raises(T.CheckpointError):
        T.load_checkpoint(tmp_path / "short.abfk")


# --- gradcheck helpers --------------------------------------------------------------

def test_numerical_grad_of_cubic():
    x = parameter(np.array([1.0, -2.0]))
    g = numerical_grad(lambda: T.tsum(x * x * x), x)
    assert np.allclose(g, 3 * x.data**2, rtol=1e-9)


def test_rel_error_zero_for_equal():
    assert rel_error(np.ones(3), np.ones(3)) == 0.0
