import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clever.data_io import SynthSpec, synth_shapes, train_test_split
from clever.errors import ConfigError, InputError
from clever.evaluation import (
    DEFAULT_BINS,
    LinearProbe,
    ProbeConfig,
    RobustnessReport,
    chance_band,
    equivariance_diagnostics,
    extract_features,
    linear_probe,
    perturb_images,
    robustness_eval,
    rotation_sensitivity_task,
    rotational_invariance_eval,
    train_probe,
    transform_bins,
)
from clever.model import CleverNet, ModelConfig
from clever.rng import RngStream

FAST = ProbeConfig(epochs=20, batch_size=32)


def net_for(rho=0.8, res=16, seed=0):
    return CleverNet(ModelConfig(resolution=res, D=20, K=8, rho=rho, hidden=8), RngStream(seed))


@pytest.fixture(scope="module")
def data():
    ds = synth_shapes(SynthSpec(samples_per_class=20, resolution=16, seed=5))
    return train_test_split(ds, 0)


# ---------------------------------------------------------------- probe


def test_probe_config_validation():
    for kw in ({"source": "both"}, {"epochs": 0}, {"lr": 0.0}, {"momentum": 1.0}, {"weight_decay": -1.0}):
        with pytest.raises(ConfigError):
            ProbeConfig(**kw)
    assert ProbeConfig() == ProbeConfig("joint", 50, 0.002, 0.9, 0.0, 128, 0)


def test_probe_separates_linearly_separable_data():
    gen = np.random.default_rng(0)
    X = gen.normal(size=(300, 5))
    y = (X[:, 0] + 0.5 * X[:, 3] > 0).astype(int)
    probe = train_probe(X, y, 2, ProbeConfig(epochs=50, lr=0.05, batch_size=32))
    assert probe.accuracy(X, y) > 0.95


def test_probe_handles_constant_features():
    X = np.zeros((20, 3))
    X[:, 0] = np.arange(20)
    y = (np.arange(20) >= 10).astype(int)
    probe = train_probe(X, y, 2, ProbeConfig(epochs=30, lr=0.1, batch_size=8))
    assert np.all(np.isfinite(probe.W)) and probe.accuracy(X, y) >= 0.9


def test_accuracy_of_empty_set_raises():
    probe = LinearProbe(np.zeros((2, 2)), np.zeros(2), np.zeros(2), np.ones(2))
    with pytest.raises(InputError):
        probe.accuracy(np.zeros((0, 2)), np.zeros(0, dtype=int))


def test_feature_widths_per_source(data):
    tr, _ = data
    net = net_for()
    d_ir, d_ef = net.cfg.d_ir, net.cfg.d_ef
    assert (d_ir, d_ef) == (16, 4)
    j = extract_features(net, tr.images[:5], "joint")
    assert j.shape == (5, d_ir + d_ef) and j.dtype == np.float64
    np.testing.assert_array_equal(extract_features(net, tr.images[:5], "ir"), j[:, :d_ir])
    np.testing.assert_array_equal(extract_features(net, tr.images[:5], "ef"), j[:, d_ir:])


def test_ef_source_without_ef_branch_raises(data):
    tr, te = data
    net = net_for(rho=1.0)
    with pytest.raises(ConfigError):
        extract_features(net, tr.images[:2], "ef")
    with pytest.raises(ConfigError):
        linear_probe(net, tr.images, tr.labels, te.images, te.labels, ProbeConfig(source="ef"))


def test_probe_leaves_encoder_bitwise_unchanged(data):
    tr, te = data
    net = net_for()
    before = {k: v.copy() for k, v in net.state().items()}
    linear_probe(net, tr.images, tr.labels, te.images, te.labels, FAST)
    for k, v in net.state().items():
        assert np.array_equal(v, before[k]) and v.dtype == before[k].dtype, k


def test_random_labels_stay_within_chance_band(data):
    tr, te = data
    net = net_for()
    gen = np.random.default_rng(1)
    y_tr = gen.integers(0, 2, len(tr))
    y_te = gen.integers(0, 2, len(te))
    acc, _ = linear_probe(net, tr.images, y_tr, te.images, y_te, FAST)
    lo, hi = chance_band(len(te), 0.5)
    assert lo <= acc <= hi


def test_chance_band_example():
    lo, hi = chance_band(100, 0.5, z=2.0)
    assert (lo, hi) == pytest.approx((0.4, 0.6))


def test_probe_is_deterministic(data):
    tr, te = data
    net = net_for()
    a = linear_probe(net, tr.images, tr.labels, te.images, te.labels, FAST)
    b = linear_probe(net, tr.images, tr.labels, te.images, te.labels, FAST)
    assert a[0] == b[0] and np.array_equal(a[1].W, b[1].W)


# ---------------------------------------------------------------- robustness


def test_orig_column_equals_plain_probe(data):
    tr, te = data
    net = net_for()
    acc, _ = linear_probe(net, tr.images, tr.labels, te.images, te.labels, FAST)
    rep = robustness_eval(net, tr.images, tr.labels, te.images, te.labels, ("Orig", "CJ"), FAST)
    assert rep.rows[0][1]["Orig"] == acc


def test_unknown_suite_raises(data):
    tr, te = data
    with pytest.raises(ConfigError, match="Blur"):
        robustness_eval(net_for(), tr.images, tr.labels, te.images, te.labels, ("Orig", "Blur"), FAST)
    with pytest.raises(ConfigError):
        perturb_images(te.images, "Blur", 0)


def test_perturbation_is_per_sample_deterministic(data):
    _, te = data
    a = perturb_images(te.images, "CJ+Ro", 3)
    b = perturb_images(te.images[:4], "CJ+Ro", 3)
    np.testing.assert_array_equal(a[:4], b)
    assert a.min() >= 0 and a.max() <= 1


def test_report_csv_layout():
    rep = RobustnessReport()
    rep.add("joint", {"Orig": 0.5, "CJ": 0.25, "CJ+Flip": 1.0, "CJ+Ro": 0.0, "CJ+Ro+ET": 0.125})
    lines = rep.to_csv().splitlines()
    assert lines[0] == "model,Orig,CJ,CJ+Flip,CJ+Ro,CJ+Ro+ET"
    assert lines[1] == "joint,0.5,0.25,1.0,0.0,0.125"


# ---------------------------------------------------------------- equivariance diagnostics


def test_default_bins():
    assert DEFAULT_BINS["rotation"] == 8 and DEFAULT_BINS["elastic"] == 2 and DEFAULT_BINS["jitter"] == 4


def test_rotation_bins_cover_their_sector():
    img = np.zeros((16, 16, 3))
    img[2:6, 7:9] = 1.0  # a bar above the centre
    gen = RngStream(0)
    for b in range(8):
        out = transform_bins("rotation", 8, img, b, gen.child(b))
        ys, xs = np.nonzero(out[..., 0] > 0.5)
        # image rows grow downward; counter-clockwise angle of the bar's centroid from "up"
        ang = np.degrees(np.arctan2(-(xs.mean() - 7.5), -(ys.mean() - 7.5)))
        lo = -180 + 45 * b
        assert lo - 8 <= ang <= lo + 45 + 8 or lo - 8 <= ang - 360 <= lo + 45 + 8 or \
            lo - 8 <= ang + 360 <= lo + 45 + 8, (b, ang)


def test_identity_family_has_zero_residual(data):
    _, te = data
    d = equivariance_diagnostics(net_for(), te.images, "identity", 2, cfg=FAST)
    assert d.residual_ir == pytest.approx(0.0, abs=1e-12) and d.residual_ef == pytest.approx(0.0, abs=1e-12)


def test_zero_branch_sits_at_chance(data):
    tr, _ = data
    net = net_for()
    imgs = tr.images[:48]
    d = equivariance_diagnostics(net, imgs, "identity", 4, cfg=FAST, test_fraction=0.5)
    # zero displacement carries no bin information: every prediction is the same class
    assert d.predictability_ir == pytest.approx(0.25, abs=1e-12)
    assert d.chance == 0.25


def test_diagnostics_errors(data):
    _, te = data
    with pytest.raises(ConfigError, match="2 bins"):
        equivariance_diagnostics(net_for(), te.images, "rotation", 1)
    with pytest.raises(ConfigError, match="rho"):
        equivariance_diagnostics(net_for(rho=1.0), te.images, "rotation")
    with pytest.raises(ConfigError):
        equivariance_diagnostics(net_for(), te.images, "shear")


def test_diagnostics_are_deterministic(data):
    _, te = data
    a = equivariance_diagnostics(net_for(), te.images, "jitter", cfg=FAST)
    b = equivariance_diagnostics(net_for(), te.images, "jitter", cfg=FAST)
    assert a == b
    assert 0.0 <= a.predictability_ef <= 1.0 and a.residual_ir >= 0.0


# ---------------------------------------------------------------- rotation tasks


def test_rotation_task_and_invariance_shapes(data):
    tr, te = data
    net = net_for()
    acc = rotation_sensitivity_task(net, tr.images, te.images, FAST)
    assert 0.0 <= acc <= 1.0
    inv = rotational_invariance_eval(net, tr.images, tr.labels, te.images, te.labels, FAST)
    assert list(inv) == ["Orig", "Ro(90)", "Ro(180)"]
    orig, _ = linear_probe(net, tr.images, tr.labels, te.images, te.labels, FAST)
    assert inv["Orig"] == orig


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 6), st.integers(0, 1000))
def test_probe_accuracy_is_a_fraction(n_classes, seed):
    gen = np.random.default_rng(seed)
    X = gen.normal(size=(30, 3))
    y = gen.integers(0, n_classes, 30)
    p = train_probe(X, y, n_classes, ProbeConfig(epochs=2, batch_size=8))
    acc = p.accuracy(X, y)
    assert 0.0 <= acc <= 1.0 and abs(acc * 30 - round(acc * 30)) < 1e-9
