from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plantfit.errors import CheckpointError, EmptyTrainSet, ShapeMismatch
from plantfit.neural import (
    MVCNN,
    AdamConfig,
    AdamState,
    MVCNNConfig,
    PointNet,
    PointNetConfig,
    TrainConfig,
    adam_update,
    compute_gradients,
    extract_embedding,
    forward_mvcnn,
    forward_pointnet,
    load_checkpoint,
    save_checkpoint,
    train_model,
)
from plantfit.neural.layers import softmax

SMALL_PN = PointNetConfig(3, widths=(8, 16), head=(8,), tnet=True, tnet_widths=(4, 8), tnet_head=(4,))
SMALL_MV = MVCNNConfig(3, image_side=8, channels=(2, 3), feature_width=8)


def jitter_params(model, seed, scale=0.1):
    """Random biases (and a non-identity transform) keep ReLUs off their kinks at zero."""
    rng = np.random.default_rng(seed + 100)
    p = OrderedDict(model.params)
    for k, v in p.items():
        if k.endswith(".b") or k == "tnet.out.W":
            p[k] = v + rng.normal(0, scale, v.shape)
    return model.with_params(p)


def small_pointnet(seed=0):
    return jitter_params(PointNet.init(SMALL_PN, seed, np.float64), seed)


# -- straight-line reference forwards ------------------------------------------


def relu(v):
    return [max(0.0, a) for a in v]


def dense(v, W, b):
    return [sum(v[i] * W[i][j] for i in range(len(v))) + b[j] for j in range(len(b))]


def pointnet_reference(points, params, cfg):
    P = {k: v.tolist() for k, v in params.items()}
    pts = [list(map(float, p)) for p in points]
    if cfg.tnet:
        feats = []
        for p in pts:
            h = p
            for i in range(len(cfg.tnet_widths)):
                h = relu(dense(h, P[f"tnet.mlp{i}.W"], P[f"tnet.mlp{i}.b"]))
            feats.append(h)
        g = [max(f[j] for f in feats) for j in range(len(feats[0]))]
        for i in range(len(cfg.tnet_head)):
            g = relu(dense(g, P[f"tnet.head{i}.W"], P[f"tnet.head{i}.b"]))
        t = dense(g, P["tnet.out.W"], P["tnet.out.b"])
        M = [[t[3 * r + c] + (1.0 if r == c else 0.0) for c in range(3)] for r in range(3)]
        pts = [[sum(p[r] * M[r][c] for r in range(3)) for c in range(3)] for p in pts]
    feats = []
    for p in pts:
        h = p
        for i in range(len(cfg.widths)):
            h = relu(dense(h, P[f"mlp{i}.W"], P[f"mlp{i}.b"]))
        feats.append(h)
    emb = [max(f[j] for f in feats) for j in range(len(feats[0]))]
    g = emb
    for i in range(len(cfg.head)):
        g = relu(dense(g, P[f"head{i}.W"], P[f"head{i}.b"]))
    return np.array(dense(g, P["out.W"], P["out.b"])), np.array(emb)


def conv_reference(img, W, b):
    H, Wd, cin = len(img), len(img[0]), len(img[0][0])
    out = [[[0.0] * len(b) for _ in range(Wd)] for _ in range(H)]
    for y in range(H):
        for x in range(Wd):
            for o in range(len(b)):
                s = b[o]
                for c in range(cin):
                    for ky in range(3):
                        for kx in range(3):
                            yy, xx = y + ky - 1, x + kx - 1
                            if 0 <= yy < H and 0 <= xx < Wd:
                                s += img[yy][xx][c] * W[o][c][ky][kx]
                out[y][x][o] = s
    return out


def pool_reference(img):
    H, Wd = len(img) // 2, len(img[0]) // 2
    return [[[max(img[2 * y + dy][2 * x + dx][c] for dy in (0, 1) for dx in (0, 1))
              for c in range(len(img[0][0]))] for x in range(Wd)] for y in range(H)]


def mvcnn_reference(views, params, cfg):
    P = {k: v.tolist() for k, v in params.items()}
    feats = []
    for v in views:
        h = [[[float(px)] for px in row] for row in v]
        for i in range(len(cfg.channels)):
            h = conv_reference(h, P[f"conv{i}.W"], P[f"conv{i}.b"])
            h = [[relu(c) for c in row] for row in h]
            h = pool_reference(h)
        flat = [c for row in h for px in row for c in px]
        feats.append(relu(dense(flat, P["fc.W"], P["fc.b"])))
    emb = [max(f[j] for f in feats) for j in range(len(feats[0]))]
    return np.array(dense(emb, P["out.W"], P["out.b"])), np.array(emb)


def test_pointnet_matches_reference():
    m = small_pointnet(1)
    pts = np.random.default_rng(2).normal(size=(16, 3))
    logits, emb = forward_pointnet(pts, m)
    ref_logits, ref_emb = pointnet_reference(pts, m.params, m.config)
    np.testing.assert_allclose(logits, ref_logits, atol=1e-10, rtol=0)
    np.testing.assert_allclose(emb, ref_emb, atol=1e-10, rtol=0)


def test_default_pointnet_matches_reference():
    m = PointNet.init(PointNetConfig(5), 3, np.float64)
    pts = np.random.default_rng(4).normal(size=(16, 3))
    logits, emb = forward_pointnet(pts, m)
    assert emb.shape == (256,)
    np.testing.assert_allclose(logits, pointnet_reference(pts, m.params, m.config)[0], atol=1e-10, rtol=0)


def test_mvcnn_matches_reference():
    m = MVCNN.init(SMALL_MV, 5, np.float64)
    views = np.random.default_rng(6).uniform(size=(3, 8, 8))
    logits, emb = forward_mvcnn(views, m)
    ref_logits, ref_emb = mvcnn_reference(views, m.params, m.config)
    np.testing.assert_allclose(logits, ref_logits, atol=1e-10, rtol=0)
    np.testing.assert_allclose(emb, ref_emb, atol=1e-10, rtol=0)


# -- invariances -------------------------------------------------------------------


@given(st.integers(0, 10**6))
def test_pointnet_permutation_invariance_exact(seed):
    rng = np.random.default_rng(seed)
    m = PointNet.init(PointNetConfig(4, tnet=bool(seed % 2)), seed % 5)
    pts = rng.normal(size=(64, 3))
    a = forward_pointnet(pts, m)
    b = forward_pointnet(pts[rng.permutation(64)], m)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


@given(st.integers(0, 10**6))
def test_mvcnn_view_order_and_duplicates_exact(seed):
    rng = np.random.default_rng(seed)
    m = MVCNN.init(MVCNNConfig(4, image_side=16), seed % 5)
    views = rng.uniform(size=(5, 16, 16))
    a = forward_mvcnn(views, m)
    b = forward_mvcnn(views[rng.permutation(5)], m)
    c = forward_mvcnn(np.concatenate([views, views[:2]]), m)
    assert a[0].tobytes() == b[0].tobytes() == c[0].tobytes()
    one = forward_mvcnn(views[:1], m)
    many = forward_mvcnn(np.repeat(views[:1], 4, axis=0), m)
    assert one[0].tobytes() == many[0].tobytes()


def test_zero_network_uniform_scores():
    m = PointNet.init(PointNetConfig(6), 0)
    zero = m.with_params(OrderedDict((k, np.zeros_like(v)) for k, v in m.params.items()))
    logits, _ = forward_pointnet(np.ones((5, 3)), zero)
    assert np.all(logits == logits[0])


def test_embedding_pure_and_sized():
    m = PointNet.init(PointNetConfig(3), 0)
    pts = np.random.default_rng(0).normal(size=(30, 3))
    e1 = extract_embedding(m, pts)
    e2 = extract_embedding(m, pts[::-1])
    assert e1.shape == (256,) and np.array_equal(e1, e2)
    mv = MVCNN.init(MVCNNConfig(3, image_side=16, feature_width=32), 0)
    assert extract_embedding(mv, np.zeros((2, 16, 16))).shape == (32,)


def test_shape_mismatch():
    m = PointNet.init(PointNetConfig(3), 0)
    with pytest.raises(ShapeMismatch):
        forward_pointnet(np.zeros((4, 2)), m)
    with pytest.raises(ShapeMismatch):
        forward_mvcnn(np.zeros((2, 9, 9)), MVCNN.init(SMALL_MV, 0))
    with pytest.raises(ShapeMismatch):
        compute_gradients((np.zeros((2, 4, 3)), np.array([0, 7])), m)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=10))
def test_softmax_properties(z):
    p = softmax(np.array([z]))
    assert abs(p.sum() - 1) < 1e-9
    assert np.all(p >= 0) and np.all(p <= 1)


# -- gradients ----------------------------------------------------------------------


def gradient_check(model, x, y, h=1e-5):
    """Worst relative error of analytic vs central-difference gradients over every parameter."""
    _, grads = model.loss_and_grads(x, y)
    worst = 0.0
    for name, value in model.params.items():
        for idx in np.ndindex(value.shape):
            plus = OrderedDict((k, v.copy()) for k, v in model.params.items())
            minus = OrderedDict((k, v.copy()) for k, v in model.params.items())
            plus[name][idx] += h
            minus[name][idx] -= h
            fd = (model.with_params(plus).loss_and_grads(x, y)[0] - model.with_params(minus).loss_and_grads(x, y)[0]) / (2 * h)
            a = grads[name][idx]
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-7)
            worst = max(worst, err)
    return worst


def test_pointnet_gradient_check():
    m = small_pointnet(0)
    assert m.n_params() <= 2000
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 10, 3))
    assert gradient_check(m, x, np.array([0, 1, 2])) < 1e-4


def test_mvcnn_gradient_check():
    m = jitter_params(MVCNN.init(SMALL_MV, 0, np.float64), 0)
    assert m.n_params() <= 2000
    x = np.random.default_rng(2).uniform(size=(2, 3, 8, 8))
    assert gradient_check(m, x, np.array([0, 2])) < 1e-4


def test_saturated_prediction_has_tiny_gradient():
    m = PointNet.init(PointNetConfig(3), 0, np.float64)
    p = OrderedDict(m.params)
    p["out.b"] = np.array([100.0, 0.0, 0.0])
    p["out.W"] = np.zeros_like(p["out.W"])
    _, grads = compute_gradients((np.ones((2, 5, 3)), np.array([0, 0])), m.with_params(p))
    assert np.sqrt(sum((g**2).sum() for g in grads.values())) < 1e-6


def test_duplicated_batch_same_gradient():
    m = small_pointnet(3)
    x = np.random.default_rng(3).normal(size=(4, 12, 3))
    y = np.array([0, 1, 2, 1])
    _, g1 = compute_gradients((x, y), m)
    _, g2 = compute_gradients((np.concatenate([x, x]), np.concatenate([y, y])), m)
    for k in g1:
        np.testing.assert_allclose(g2[k], g1[k], rtol=1e-12, atol=1e-15)


# -- Adam ------------------------------------------------------------------------------


def test_adam_first_step():
    params = OrderedDict(w=np.array([1.0]))
    new, state = adam_update(params, OrderedDict(w=np.array([1.0])), AdamState.zeros_like(params), AdamConfig(0.001))
    assert new["w"][0] == pytest.approx(0.999, abs=1e-8)
    assert state.step == 1 and params["w"][0] == 1.0


def test_adam_zero_gradient_keeps_params():
    params = OrderedDict(w=np.array([0.3, -2.0]))
    state = AdamState.zeros_like(params)
    p = params
    for _ in range(10):
        p, state = adam_update(p, OrderedDict(w=np.zeros(2)), state)
    assert np.array_equal(p["w"], params["w"]) and state.step == 10


def test_adam_minimizes_square():
    p = OrderedDict(w=np.array([1.0]))
    state = AdamState.zeros_like(p)
    for _ in range(1000):
        p, state = adam_update(p, OrderedDict(w=2 * p["w"]), state, AdamConfig(0.01))
    assert abs(p["w"][0]) < 0.05


def test_adam_shape_mismatch():
    p = OrderedDict(w=np.zeros(2))
    with pytest.raises(ShapeMismatch):
        adam_update(p, OrderedDict(w=np.zeros(3)), AdamState.zeros_like(p))
    with pytest.raises(ShapeMismatch):
        adam_update(p, OrderedDict(v=np.zeros(2)), AdamState.zeros_like(p))


# -- training ----------------------------------------------------------------------------


def toy_sets(n, seed):
    """Class 0 clouds sit in the x < 0 half-space, class 1 clouds in x > 0."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.uniform(0.1, 1.0, size=(n, 32, 3)) * [1, 1, 1]
    x[:, :, 1:] = rng.uniform(-1, 1, size=(n, 32, 2))
    x[y == 0, :, 0] *= -1
    return x.astype(np.float32), y


def nearest_centroid_accuracy(xtr, ytr, xva, yva):
    feats = lambda x: x.mean(axis=1)
    cents = np.stack([feats(xtr[ytr == c]).mean(axis=0) for c in (0, 1)])
    d = ((feats(xva)[:, None, :] - cents[None]) ** 2).sum(-1)
    return float((d.argmin(1) == yva).mean())


def test_separable_toy_reaches_full_accuracy():
    xtr, ytr = toy_sets(64, 0)
    xva, yva = toy_sets(32, 1)
    assert nearest_centroid_accuracy(xtr, ytr, xva, yva) == 1.0
    cfg = TrainConfig(kind="pointnet", epochs=30, batch_size=16, learning_rate=1e-3, seed=0)
    _, hist = train_model((xtr, ytr), (xva, yva), cfg, num_classes=2, arch={"widths": (16, 32), "head": (16,)})
    assert len(hist) == 30
    assert hist[-1]["val_accuracy"] == 1.0


def test_zero_epochs_returns_initialization():
    xtr, ytr = toy_sets(8, 0)
    cfg = TrainConfig(kind="pointnet", epochs=0, seed=4)
    model, hist = train_model((xtr, ytr), None, cfg, num_classes=2)
    init = PointNet.init(PointNetConfig(2), 4)
    assert hist == []
    assert all(np.array_equal(model.params[k], init.params[k]) for k in init.params)


def test_training_bitwise_deterministic():
    xtr, ytr = toy_sets(24, 2)
    cfg = TrainConfig(kind="pointnet", epochs=3, batch_size=8, seed=11)
    arch = {"widths": (8, 16), "head": (8,), "tnet": True}
    a, ha = train_model((xtr, ytr), (xtr, ytr), cfg, 2, arch)
    b, hb = train_model((xtr, ytr), (xtr, ytr), cfg, 2, arch)
    assert ha == hb
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)


def test_mvcnn_training_deterministic():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(12, 3, 8, 8)).astype(np.float32)
    y = np.arange(12) % 3
    cfg = TrainConfig(kind="mvcnn", epochs=2, batch_size=4, seed=1, image_side=8)
    arch = {"channels": (2, 3), "feature_width": 8}
    a, _ = train_model((x, y), None, cfg, 3, arch)
    b, _ = train_model((x, y), None, cfg, 3, arch)
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)


def test_history_without_validation():
    xtr, ytr = toy_sets(8, 0)
    _, hist = train_model((xtr, ytr), None, TrainConfig(epochs=2), 2)
    assert [set(r) for r in hist] == [{"epoch", "train_loss"}] * 2


def test_empty_train_set():
    with pytest.raises(EmptyTrainSet):
        train_model((np.zeros((0, 4, 3)), np.zeros(0, int)), None, TrainConfig(), 2)


def test_kind_defaults():
    assert (TrainConfig(kind="mvcnn").batch_size, TrainConfig(kind="mvcnn").learning_rate) == (64, 0.001)
    assert (TrainConfig(kind="pointnet").batch_size, TrainConfig(kind="pointnet").learning_rate) == (32, 0.0001)
    with pytest.raises(ValueError):
        TrainConfig(kind="pointnet", batch_size=0)


# -- checkpoints -------------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    m = PointNet.init(PointNetConfig(4, tnet=True), 3)
    x = np.random.default_rng(0).normal(size=(2, 20, 3)).astype(np.float32)
    _, grads = compute_gradients((x, np.array([0, 3])), m)
    params, state = adam_update(m.params, grads, AdamState.zeros_like(m.params))
    m = m.with_params(params)
    save_checkpoint(m, tmp_path / "a.ckpt", state, note="hello")
    back, st2, note = load_checkpoint(tmp_path / "a.ckpt")
    assert note == "hello" and st2.step == 1
    assert back.config == m.config
    assert all(np.array_equal(back.params[k], m.params[k]) for k in m.params)
    assert all(np.array_equal(st2.m[k], state.m[k]) for k in m.params)
    data = (tmp_path / "a.ckpt").read_bytes()
    assert data[:8] == b"PLFITCK\0"
    save_checkpoint(back, tmp_path / "b.ckpt", st2, note="hello")
    assert (tmp_path / "b.ckpt").read_bytes() == data


def test_checkpoint_mvcnn_and_corruption(tmp_path):
    m = MVCNN.init(MVCNNConfig(3, image_side=16), 0)
    save_checkpoint(m, tmp_path / "m.ckpt")
    back, state, _ = load_checkpoint(tmp_path / "m.ckpt")
    assert isinstance(back, MVCNN) and state is None
    data = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(data[:-4])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "bad.ckpt").write_bytes(b"NOTACKPT" + data[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
