import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clever.errors import ContractError, NumericError, ShapeError, UnsupportedOp
from clever.tensor import (
    Tape,
    Tensor,
    concat,
    dot,
    finite_diff_check,
    forward,
    no_record,
    primitives,
    softmax,
    sq_norm,
    strict_mode,
)

# point generators for each differentiable primitive: rng -> (inputs, params)


def _pos(rng, shape):
    return rng.uniform(0.2, 2.0, size=shape)


def _away_from_zero(rng, shape):
    x = rng.uniform(0.1, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


GENERATORS = {
    "add": lambda r: ([r.normal(size=(3, 4)), r.normal(size=(4,))], {}),
    "sub": lambda r: ([r.normal(size=(3, 4)), r.normal(size=(3, 1))], {}),
    "mul": lambda r: ([r.normal(size=(2, 3)), r.normal(size=(2, 3))], {}),
    "div": lambda r: ([r.normal(size=(2, 3)), _pos(r, (2, 3))], {}),
    "scale": lambda r: ([r.normal(size=(3, 2))], {"c": float(r.normal())}),
    "matmul": lambda r: ([r.normal(size=(3, 4)), r.normal(size=(4, 2))], {}),
    "transpose": lambda r: ([r.normal(size=(3, 4))], {}),
    "reshape": lambda r: ([r.normal(size=(3, 4))], {"shape": (2, 6)}),
    "relu": lambda r: ([_away_from_zero(r, (3, 4))], {}),
    "abs": lambda r: ([_away_from_zero(r, (3, 4))], {}),
    "exp": lambda r: ([r.normal(size=(3, 3))], {}),
    "log": lambda r: ([_pos(r, (3, 3))], {}),
    "sqrt": lambda r: ([_pos(r, (3, 3))], {}),
    "sum": lambda r: ([r.normal(size=(3, 4))], {"axis": -1}),
    "mean": lambda r: ([r.normal(size=(3, 4))], {"axis": 0}),
    "softmax": lambda r: ([r.normal(size=(2, 5))], {}),
    "sq_norm": lambda r: ([r.normal(size=(3, 4))], {"axis": -1}),
    "dot": lambda r: ([r.normal(size=(3, 4)), r.normal(size=(3, 4))], {}),
    "concat": lambda r: ([r.normal(size=(2, 3)), r.normal(size=(2, 2))], {}),
    "slice": lambda r: ([r.normal(size=(2, 5))], {"start": 1, "stop": 4}),
    "rows": lambda r: ([r.normal(size=(5, 3))], {"start": 1, "stop": 3}),
    "conv2d": lambda r: ([r.normal(size=(1, 5, 5, 2)), r.normal(size=(2, 2, 3, 3))],
                         {"stride": int(r.integers(1, 3))}),
    "gap": lambda r: ([r.normal(size=(2, 3, 3, 2))], {}),
    "grid_sample": lambda r: ([r.normal(size=(4, 4, 2))],
                              {"sy": r.uniform(-0.5, 3.5, size=(3, 3)), "sx": r.uniform(-0.5, 3.5, size=(3, 3))}),
}


def differentiable_primitives():
    from clever.tensor import OPS

    return sorted(k for k, op in OPS.items() if getattr(op, "differentiable", True))


def test_every_differentiable_primitive_has_a_generator():
    assert set(differentiable_primitives()) == set(GENERATORS)


@pytest.mark.parametrize("op", sorted(GENERATORS))
def test_finite_differences_100_points(op):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        inputs, params = GENERATORS[op](rng)
        for res in finite_diff_check(op, inputs, eps=1e-5, seed=seed, **params):
            worst = max(worst, res.max_rel_error)
    assert worst < 1e-4, f"{op}: max relative error {worst:.3g}"


def test_log_reports_clamped_coordinates():
    res = finite_diff_check("log", [np.array([1e-13, 2.0])])[0]
    assert res.clamped == 1 and res.checked == 1
    res = finite_diff_check("log", [np.array([1e-14])])[0]
    assert res.status == "clamped"


def test_argmax_is_not_differentiable():
    with pytest.raises(UnsupportedOp):
        finite_diff_check("argmax", [np.array([[1.0, 2.0]])])


def test_unknown_op():
    with pytest.raises(UnsupportedOp):
        forward("nope", [np.ones(2)])


def test_fd_rejects_bad_eps():
    with pytest.raises(ContractError):
        finite_diff_check("exp", [np.ones(2)], eps=1e-1)


def test_matmul_identity():
    a = np.arange(6.0).reshape(2, 3)
    out = Tensor(a) @ Tensor(np.eye(3))
    np.testing.assert_array_equal(out.data, a)


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_add_broadcast_error():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))


def test_softmax_examples():
    np.testing.assert_allclose(softmax(Tensor(np.zeros(2))).data, [0.5, 0.5])
    big = softmax(Tensor(np.array([1000.0, 0.0]))).data
    assert np.all(np.isfinite(big)) and big[0] == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_softmax_sums_to_one(xs):
    p = softmax(Tensor(np.array(xs))).data
    assert abs(p.sum() - 1.0) < 1e-12 and np.all(p >= 0)


def test_dot_and_gradients():
    assert dot(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = Tensor([3.0, 4.0], requires_grad=True)
    with Tape() as tape:
        out = dot(x, y)
    grads = tape.backward(out)
    np.testing.assert_array_equal(grads[x.node_id].data, [3.0, 4.0])
    np.testing.assert_array_equal(grads[y.node_id].data, [1.0, 2.0])


def test_softmax_cross_entropy_gradient_is_p_minus_t():
    logits = Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)
    target = np.array([0.0, 1.0, 0.0])
    with Tape() as tape:
        loss = -(softmax(logits).log() * Tensor(target)).sum()
    g = tape.backward(loss)[logits.node_id].data
    p = np.exp(logits.data) / np.exp(logits.data).sum()
    np.testing.assert_allclose(g, p - target, atol=1e-12)


def test_constant_input_absent_from_gradient_map():
    w = Tensor(np.ones(3), requires_grad=True)
    c = Tensor(np.arange(3.0))
    with Tape() as tape:
        out = dot(w, c)
    grads = tape.backward(out)
    assert set(grads) == {w.node_id}


def test_unreached_leaf_gets_zero_gradient():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        _ = a * 2.0
        out = b.sum()
    grads = tape.backward(out)
    np.testing.assert_array_equal(grads[a.node_id].data, [0.0, 0.0])


def test_non_scalar_root_rejected():
    a = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        out = a * 2.0
    with pytest.raises(ContractError):
        tape.backward(out)


def test_root_from_another_tape_rejected():
    a = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        out = a.sum()
    with pytest.raises(ContractError):
        Tape().backward(out)


def test_no_record_outside_tape():
    a = Tensor(np.ones(3), requires_grad=True)
    out = (a * 2.0).sum()
    with pytest.raises(ContractError):
        out.backward()
    with Tape() as tape:
        with no_record():
            inner = (a * 2.0).sum()
    assert tape.nodes == [] and inner._tape is None


def test_gradient_accumulates_on_shared_leaf():
    a = Tensor(np.array([2.0]), requires_grad=True)
    with Tape() as tape:
        out = (a * a + a).sum()
    g = tape.backward(out)[a.node_id].data
    np.testing.assert_allclose(g, [5.0])


def test_strict_mode_raises_on_nan():
    with strict_mode():
        with pytest.raises(NumericError):
            Tensor(np.array([np.nan])).exp()
    Tensor(np.array([np.nan])).exp()  # permissive outside strict mode


def test_replay_is_bit_identical():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(1, 6, 6, 2)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    with Tape() as tape:
        h = forward("conv2d", [x, w], stride=2).relu()
        out = softmax(forward("gap", [h])).log().sum()
    replayed = tape.replay()
    for node in tape.nodes:
        assert np.array_equal(replayed[node.out_id], node.out)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 5), st.integers(1, 3))
def test_concat_slice_roundtrip(a, b, rows_):
    rng = np.random.default_rng(a * 10 + b)
    x = Tensor(rng.normal(size=(rows_, a)))
    y = Tensor(rng.normal(size=(rows_, b)))
    z = concat([x, y])
    assert np.array_equal(z[..., :a].data, x.data)
    assert np.array_equal(z[..., a:].data, y.data)


def test_sq_norm_example():
    assert sq_norm(Tensor([1.0, 2.0])).item() == 5.0


def test_primitive_catalog_lists_core_ops():
    names = set(primitives())
    for op in ("add", "matmul", "conv2d", "softmax", "log", "grid_sample", "argmax"):
        assert op in names
