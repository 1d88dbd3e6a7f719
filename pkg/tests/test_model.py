import numpy as np
import pytest

from clever.errors import ConfigError, ShapeError
from clever.model import (
    HE_GAIN,
    ModelConfig,
    ProjectionHead,
    StudentTeacher,
    center_update,
    ema_update,
    encode_and_split,
    joint_feature,
    param_sq_norm,
    project,
    split,
    split_widths,
)
from clever.rng import RngStream
from clever.tensor import Tape, Tensor, check_gradients


def small_cfg(**kw):
    base = dict(encoder="conv", in_channels=3, D=10, K=8, hidden=6)
    base.update(kw)
    return ModelConfig(**base)


def test_split_widths():
    assert split_widths(10, 0.8) == (8, 2)
    assert split_widths(80, 0.8) == (64, 16)
    assert split_widths(10, 1.0) == (10, 0)
    with pytest.raises(ConfigError):
        split_widths(10, 0.05)
    with pytest.raises(ConfigError):
        split_widths(10, 0.0)


def test_defaults():
    cfg = ModelConfig()
    assert cfg.rho == 0.8 and cfg.D == 80 and cfg.K == 256


@pytest.mark.parametrize("encoder,res", [("conv", 16), ("conv", 24), ("mlp", 12)])
def test_encoder_output_shape(encoder, res):
    cfg = small_cfg(encoder=encoder, resolution=res)
    pair = StudentTeacher(cfg, RngStream(0))
    x = np.random.default_rng(0).uniform(size=(3, res, res, 3)).astype(np.float32)
    assert pair.student.encode(x).shape == (3, 10)


@pytest.mark.parametrize("rho", [0.3, 0.8, 1.0])
def test_split_then_join_is_identity(rho):
    cfg = small_cfg(rho=rho)
    pair = StudentTeacher(cfg, RngStream(0))
    x = np.random.default_rng(1).uniform(size=(4, 16, 16, 3)).astype(np.float32)
    z = pair.student.encode(x)
    rep = encode_and_split(pair.student, x)
    assert rep.d_ir + rep.d_ef == 10
    assert np.array_equal(joint_feature(rep).data, z.data)
    if rho == 1.0:
        assert rep.d_ef == 0 and pair.student.head_ef is None


def test_project_width_mismatch_and_zero_head():
    head = ProjectionHead(4, 5, np.random.default_rng(0), np.float64, hidden=3)
    with pytest.raises(ShapeError):
        project(head, Tensor(np.ones((2, 3))))
    for t in head.parameters().values():
        t.data = np.zeros_like(t.data)
    assert np.array_equal(project(head, Tensor(np.ones((2, 4)))).data, np.zeros((2, 5)))


def test_head_gradient_matches_finite_differences():
    head = ProjectionHead(3, 4, np.random.default_rng(2), np.float64, hidden=5)
    names = list(head.parameters())
    z = np.random.default_rng(3).normal(size=(2, 3))
    w = np.random.default_rng(4).normal(size=(2, 4))

    def fn(ts):
        out = _forward_with(head, names, ts, Tensor(z))
        return (out * Tensor(w)).sum()

    point = [p.data.copy() for p in head.parameters().values()]
    for res in check_gradients(fn, point):
        assert res.max_rel_error < 1e-6


def _forward_with(head, names, ts, z):
    p = dict(zip(names, ts))
    h = (z @ p["l0.w"] + p["l0.b"]).relu()
    h = (h @ p["l1.w"] + p["l1.b"]).relu()
    return h @ p["l2.w"] + p["l2.b"]


def test_forward_with_matches_project():
    head = ProjectionHead(3, 4, np.random.default_rng(2), np.float64, hidden=5)
    z = Tensor(np.random.default_rng(3).normal(size=(2, 3)))
    names = list(head.parameters())
    ref = _forward_with(head, names, list(head.parameters().values()), z)
    assert np.array_equal(project(head, z).data, ref.data)


def test_param_sq_norm_examples():
    head = ProjectionHead(1, 1, np.random.default_rng(0), np.float64, hidden=1)
    vals = iter([1.0, 2.0, 0.0, 0.0, 0.0, 0.0])
    for t in head.parameters().values():
        t.data = np.full(t.shape, next(vals))
    assert param_sq_norm(head).item() == 5.0
    for t in head.parameters().values():
        t.data = t.data * 2
    assert param_sq_norm(head).item() == 20.0
    for t in head.parameters().values():
        t.data = np.zeros_like(t.data)
    assert param_sq_norm(head).item() == 0.0


@pytest.mark.parametrize("gain", [1.0, HE_GAIN])
def test_init_bounds_and_zero_bias(gain):
    pair = StudentTeacher(small_cfg(init_gain=gain), RngStream(5))
    for name, t in pair.student.parameters().items():
        if name.endswith(".b"):
            assert not t.data.any()
        else:
            fan_in = t.shape[0] if t.ndim == 2 else t.shape[1] * 9
            bound = gain / np.sqrt(fan_in)
            assert np.abs(t.data).max() <= bound
            # a uniform draw of this size reaches well past half the bound
            assert np.abs(t.data).max() > 0.5 * bound


def test_init_gain_scales_the_draw():
    a = StudentTeacher(small_cfg(init_gain=1.0), RngStream(5)).student.state()
    b = StudentTeacher(small_cfg(init_gain=2.0), RngStream(5)).student.state()
    for k in a:
        np.testing.assert_allclose(b[k], 2.0 * a[k], rtol=1e-6)
    with pytest.raises(ConfigError):
        small_cfg(init_gain=0.0)


def test_normalized_head_outputs_unit_rows():
    head = ProjectionHead(3, 4, np.random.default_rng(2), np.float64, hidden=5, norm=True)
    out = project(head, Tensor(np.random.default_rng(3).normal(size=(6, 3)))).data
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-9)
    raw = ProjectionHead(3, 4, np.random.default_rng(2), np.float64, hidden=5)
    ref = project(raw, Tensor(np.random.default_rng(3).normal(size=(6, 3)))).data
    np.testing.assert_allclose(out, ref / np.linalg.norm(ref, axis=1, keepdims=True), atol=1e-12)


def test_normalized_head_gradient_matches_finite_differences():
    head = ProjectionHead(3, 4, np.random.default_rng(2), np.float64, hidden=5, norm=True)
    names = list(head.parameters())
    z = np.random.default_rng(3).normal(size=(2, 3))
    w = np.random.default_rng(4).normal(size=(2, 4))

    def fn(ts):
        out = _forward_with(head, names, ts, Tensor(z))
        out = out / ((out * out).sum(axis=-1, keepdims=True) + 1e-12).sqrt()
        return (out * Tensor(w)).sum()

    point = [p.data.copy() for p in head.parameters().values()]
    for res in check_gradients(fn, point):
        assert res.max_rel_error < 1e-6
    # and the library path computes the same function
    ts = [Tensor(p) for p in point]
    assert fn(ts).item() == pytest.approx((project(head, Tensor(z)) * Tensor(w)).sum().item(), abs=1e-12)


def test_teacher_starts_equal_and_frozen():
    pair = StudentTeacher(small_cfg(), RngStream(0))
    s, t = pair.student.state(), pair.teacher.state()
    for k in s:
        assert np.array_equal(s[k], t[k]) and s[k] is not t[k]
    assert not any(p.requires_grad for p in pair.teacher.parameters().values())


def test_ema_examples():
    pair = StudentTeacher(small_cfg(), RngStream(0))
    for t in pair.teacher.parameters().values():
        t.data = np.ones_like(t.data)
    for t in pair.student.parameters().values():
        t.data = np.zeros_like(t.data)
    before = {k: v.copy() for k, v in pair.teacher.state().items()}
    ema_update(pair, 1.0)
    assert all(np.array_equal(before[k], v) for k, v in pair.teacher.state().items())
    ema_update(pair, 0.9)
    for v in pair.teacher.state().values():
        np.testing.assert_allclose(v, 0.9, rtol=1e-6)
    ema_update(pair, 0.0)
    for v in pair.teacher.state().values():
        assert not v.any()
    with pytest.raises(ConfigError):
        ema_update(pair, 1.5)


def test_ema_convex_hull_random_sequence():
    pair = StudentTeacher(small_cfg(dtype="float32"), RngStream(0))
    lo = {k: v.copy() for k, v in pair.teacher.state().items()}
    hi = {k: v.copy() for k, v in pair.teacher.state().items()}
    rng = np.random.default_rng(0)
    for _ in range(30):
        for k, t in pair.student.parameters().items():
            t.data = rng.normal(size=t.shape).astype(t.dtype)
            lo[k] = np.minimum(lo[k], t.data)
            hi[k] = np.maximum(hi[k], t.data)
        ema_update(pair, float(rng.uniform()))
        for k, v in pair.teacher.state().items():
            assert np.all(v >= lo[k]) and np.all(v <= hi[k])


def test_center_update():
    pair = StudentTeacher(small_cfg(), RngStream(0))
    center_update(pair, [np.ones((2, 8)), 3 * np.ones((2, 8))], 0.9)
    np.testing.assert_allclose(pair.center, 0.2, rtol=1e-6)


def test_state_roundtrip():
    a = StudentTeacher(small_cfg(), RngStream(0))
    b = StudentTeacher(small_cfg(), RngStream(1))
    b.load_state(a.state())
    for k, v in a.state().items():
        assert np.array_equal(v, b.state()[k])


def test_split_of_tensor():
    z = Tensor(np.arange(20.0).reshape(2, 10))
    rep = split(z, 0.8)
    assert rep.z_ir.shape == (2, 8) and rep.z_ef.shape == (2, 2)
