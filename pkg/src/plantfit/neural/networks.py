"""Point-set and multi-view classifiers with hand-written backpropagation.

Both networks reduce a set (points, or rendered views) with an element-wise
max, so their outputs do not depend on the order of the set. The public
single-sample entry points additionally canonicalize the order of the set
before evaluating it; this makes the invariance exact to the last bit rather
than merely up to BLAS rounding.
"""

import hashlib
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeMismatch
from . import layers as L

__all__ = [
    "PointNetConfig",
    "MVCNNConfig",
    "PointNet",
    "MVCNN",
    "build_model",
    "forward_pointnet",
    "forward_mvcnn",
    "extract_embedding",
    "canonical_point_order",
    "canonical_view_set",
]


@dataclass(frozen=True)
class PointNetConfig:
    num_classes: int
    widths: tuple = (64, 128, 256)
    head: tuple = (128,)
    tnet: bool = False
    tnet_widths: tuple = (32, 64)
    tnet_head: tuple = (32,)

    def __post_init__(self):
        for name in ("widths", "head", "tnet_widths", "tnet_head"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))
        if self.num_classes < 1 or not self.widths:
            raise ValueError("need at least one class and one per-point layer")


@dataclass(frozen=True)
class MVCNNConfig:
    num_classes: int
    image_side: int = 64
    channels: tuple = (4, 8)
    feature_width: int = 64

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.num_classes < 1 or len(self.channels) != 2:
            raise ValueError("MVCNN needs at least one class and exactly two conv stages")
        if self.image_side < 4:
            raise ValueError("image_side must be >= 4")

    @property
    def pooled_side(self):
        return (self.image_side // 2) // 2


class _Network:
    kind = ""

    def __init__(self, config, params):
        self.config = config
        self.params = params

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self):
        return type(self)(self.config, OrderedDict((k, v.copy()) for k, v in self.params.items()))

    def with_params(self, params):
        return type(self)(self.config, OrderedDict(params))

    def astype(self, dtype):
        return type(self)(self.config, OrderedDict((k, v.astype(dtype)) for k, v in self.params.items()))

    def config_dict(self):
        return asdict(self.config)

    def loss_and_grads(self, x, labels):
        """Mean softmax cross-entropy over the batch and its parameter gradients."""
        logits, _, cache = self.forward_batch(x)
        labels = np.asarray(labels)
        if labels.shape != (logits.shape[0],):
            raise ShapeMismatch("one label per sample is required")
        if labels.min() < 0 or labels.max() >= logits.shape[1]:
            raise ShapeMismatch("label index out of range")
        loss, dlogits = L.softmax_cross_entropy(logits, labels)
        return loss, self.backward(cache, dlogits.astype(logits.dtype))


class PointNet(_Network):
    """Shared per-point MLP, max pooling over points, MLP classifier head.

    With ``config.tnet`` a small subnetwork predicts a 3x3 matrix (added to
    the identity) that multiplies the input points first.
    """

    kind = "pointnet"

    @classmethod
    def init(cls, config: PointNetConfig, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        p = OrderedDict()

        def dense(name, fan_in, fan_out, zero=False):
            if zero:
                p[name + ".W"] = np.zeros((fan_in, fan_out), dtype=dtype)
            else:
                p[name + ".W"] = L.glorot(rng, (fan_in, fan_out), fan_in, fan_out, dtype)
            p[name + ".b"] = np.zeros(fan_out, dtype=dtype)

        if config.tnet:
            prev = 3
            for i, w in enumerate(config.tnet_widths):
                dense(f"tnet.mlp{i}", prev, w)
                prev = w
            for i, w in enumerate(config.tnet_head):
                dense(f"tnet.head{i}", prev, w)
                prev = w
            # Zero output layer: the transform starts as the identity.
            dense("tnet.out", prev, 9, zero=True)
        prev = 3
        for i, w in enumerate(config.widths):
            dense(f"mlp{i}", prev, w)
            prev = w
        for i, w in enumerate(config.head):
            dense(f"head{i}", prev, w)
            prev = w
        dense("out", prev, config.num_classes)
        return cls(config, p)

    @property
    def embedding_width(self):
        return self.config.widths[-1]

    def forward_batch(self, x):
        """``x`` is ``(B, n, 3)``; returns ``(logits, embedding, cache)``."""
        p, cfg = self.params, self.config
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 3 or x.shape[2] != 3 or x.shape[1] < 1:
            raise ShapeMismatch(f"expected (batch, n>=1, 3) points, got {x.shape}")
        cache = {"x": x}
        h = x
        if cfg.tnet:
            t_caches = []
            for i in range(len(cfg.tnet_widths)):
                z, _ = L.dense_forward(h, p[f"tnet.mlp{i}.W"], p[f"tnet.mlp{i}.b"])
                a, m = L.relu_forward(z)
                t_caches.append((h, m))
                h = a
            g, gcache = L.set_max_forward(h, axis=1)
            th_caches = []
            for i in range(len(cfg.tnet_head)):
                z, _ = L.dense_forward(g, p[f"tnet.head{i}.W"], p[f"tnet.head{i}.b"])
                a, m = L.relu_forward(z)
                th_caches.append((g, m))
                g = a
            t, _ = L.dense_forward(g, p["tnet.out.W"], p["tnet.out.b"])
            M = t.reshape(-1, 3, 3) + np.eye(3, dtype=self.dtype)
            cache["tnet"] = (t_caches, gcache, th_caches, g, M)
            h = x @ M
        mlp = []
        for i in range(len(cfg.widths)):
            z, _ = L.dense_forward(h, p[f"mlp{i}.W"], p[f"mlp{i}.b"])
            a, m = L.relu_forward(z)
            mlp.append((h, m))
            h = a
        emb, pool = L.set_max_forward(h, axis=1)
        head = []
        g = emb
        for i in range(len(cfg.head)):
            z, _ = L.dense_forward(g, p[f"head{i}.W"], p[f"head{i}.b"])
            a, m = L.relu_forward(z)
            head.append((g, m))
            g = a
        logits, _ = L.dense_forward(g, p["out.W"], p["out.b"])
        cache.update(mlp=mlp, pool=pool, head=head, last=g)
        return logits, emb, cache

    def backward(self, cache, dlogits):
        p, cfg = self.params, self.config
        grads = OrderedDict((k, None) for k in p)
        dg, grads["out.W"], grads["out.b"] = L.dense_backward(dlogits, cache["last"], p["out.W"])
        for i in reversed(range(len(cfg.head))):
            g_in, m = cache["head"][i]
            dz = L.relu_backward(dg, m)
            dg, grads[f"head{i}.W"], grads[f"head{i}.b"] = L.dense_backward(dz, g_in, p[f"head{i}.W"])
        dh = L.set_max_backward(dg, cache["pool"])
        for i in reversed(range(len(cfg.widths))):
            h_in, m = cache["mlp"][i]
            dz = L.relu_backward(dh, m)
            dh, grads[f"mlp{i}.W"], grads[f"mlp{i}.b"] = L.dense_backward(dz, h_in, p[f"mlp{i}.W"])
        if cfg.tnet:
            t_caches, gcache, th_caches, g_last, M = cache["tnet"]
            x = cache["x"]
            dM = np.swapaxes(x, 1, 2) @ dh
            dt = dM.reshape(-1, 9)
            dg, grads["tnet.out.W"], grads["tnet.out.b"] = L.dense_backward(dt, g_last, p["tnet.out.W"])
            for i in reversed(range(len(cfg.tnet_head))):
                g_in, m = th_caches[i]
                dz = L.relu_backward(dg, m)
                dg, grads[f"tnet.head{i}.W"], grads[f"tnet.head{i}.b"] = L.dense_backward(dz, g_in, p[f"tnet.head{i}.W"])
            dh = L.set_max_backward(dg, gcache)
            for i in reversed(range(len(cfg.tnet_widths))):
                h_in, m = t_caches[i]
                dz = L.relu_backward(dh, m)
                dh, grads[f"tnet.mlp{i}.W"], grads[f"tnet.mlp{i}.b"] = L.dense_backward(dz, h_in, p[f"tnet.mlp{i}.W"])
        return grads


class MVCNN(_Network):
    """Per-view CNN with shared weights, max view pooling, linear classifier.

    Each view passes through two conv3x3 + ReLU + 2x2 max-pool stages and a
    dense ReLU layer of width ``feature_width``. ReLU is applied after pooling,
    which gives the same values and gradients as before it at a quarter of the cost.
    """

    kind = "mvcnn"

    @classmethod
    def init(cls, config: MVCNNConfig, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        p = OrderedDict()
        cin = 1
        for i, cout in enumerate(config.channels):
            p[f"conv{i}.W"] = L.glorot(rng, (cout, cin, 3, 3), cin * 9, cout * 9, dtype)
            p[f"conv{i}.b"] = np.zeros(cout, dtype=dtype)
            cin = cout
        flat = config.pooled_side**2 * cin
        F = config.feature_width
        p["fc.W"] = L.glorot(rng, (flat, F), flat, F, dtype)
        p["fc.b"] = np.zeros(F, dtype=dtype)
        p["out.W"] = L.glorot(rng, (F, config.num_classes), F, config.num_classes, dtype)
        p["out.b"] = np.zeros(config.num_classes, dtype=dtype)
        return cls(config, p)

    @property
    def embedding_width(self):
        return self.config.feature_width

    def view_features(self, images):
        """Per-view features for ``images`` of shape ``(N, side, side)``."""
        p = self.params
        h = np.asarray(images, dtype=self.dtype)[..., None]
        caches = []
        for i in range(len(self.config.channels)):
            z, ccache = L.conv3x3_forward(h, p[f"conv{i}.W"], p[f"conv{i}.b"])
            pooled, pcache = L.maxpool2_forward(z)
            h, m = L.relu_forward(pooled)
            caches.append((ccache, m, pcache))
        flat_in = h.reshape(h.shape[0], -1)
        z, _ = L.dense_forward(flat_in, p["fc.W"], p["fc.b"])
        feat, m = L.relu_forward(z)
        return feat, (caches, h.shape, flat_in, m)

    def forward_batch(self, x):
        """``x`` is ``(B, k, side, side)``; returns ``(logits, embedding, cache)``."""
        p, cfg = self.params, self.config
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] < 1 or x.shape[2:] != (cfg.image_side, cfg.image_side):
            raise ShapeMismatch(
                f"expected (batch, k>=1, {cfg.image_side}, {cfg.image_side}) views, got {x.shape}"
            )
        B, k = x.shape[:2]
        feat, fcache = self.view_features(x.reshape(B * k, cfg.image_side, cfg.image_side))
        emb, pool = L.set_max_forward(feat.reshape(B, k, -1), axis=1)
        logits, _ = L.dense_forward(emb, p["out.W"], p["out.b"])
        return logits, emb, {"fcache": fcache, "pool": pool, "emb": emb, "Bk": (B, k)}

    def backward(self, cache, dlogits):
        p = self.params
        grads = OrderedDict((k, None) for k in p)
        demb, grads["out.W"], grads["out.b"] = L.dense_backward(dlogits, cache["emb"], p["out.W"])
        B, k = cache["Bk"]
        dfeat = L.set_max_backward(demb, cache["pool"]).reshape(B * k, -1)
        caches, pooled_shape, flat_in, m = cache["fcache"]
        dz = L.relu_backward(dfeat, m)
        dflat, grads["fc.W"], grads["fc.b"] = L.dense_backward(dz, flat_in, p["fc.W"])
        dh = dflat.reshape(pooled_shape)
        for i in reversed(range(len(self.config.channels))):
            ccache, m, pcache = caches[i]
            dz = L.maxpool2_backward(L.relu_backward(dh, m), pcache)
            dh, grads[f"conv{i}.W"], grads[f"conv{i}.b"] = L.conv3x3_backward(
                dz, ccache, p[f"conv{i}.W"], need_dx=i > 0
            )
        return grads


def build_model(kind: str, config_dict: dict, seed: int = 0, dtype=np.float32):
    if kind == PointNet.kind:
        return PointNet.init(PointNetConfig(**config_dict), seed, dtype)
    if kind == MVCNN.kind:
        return MVCNN.init(MVCNNConfig(**config_dict), seed, dtype)
    raise ValueError(f"unknown network kind {kind!r}")


def canonical_point_order(points) -> np.ndarray:
    """Rows sorted lexicographically by (x, y, z)."""
    pts = np.asarray(points)
    return pts[np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))]


def canonical_view_set(views) -> np.ndarray:
    """Distinct views sorted by content digest; max pooling ignores both order and repeats."""
    vs = np.ascontiguousarray(views)
    keyed = {}
    for v in vs:
        keyed.setdefault(hashlib.sha1(v.tobytes()).digest(), v)
    return np.stack([keyed[k] for k in sorted(keyed)])


def forward_pointnet(points, model: PointNet):
    """Logits and 256-wide (by default) pooled embedding for one ``(n, 3)`` cloud."""
    pts = np.asarray(points, dtype=model.dtype)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 1:
        raise ShapeMismatch(f"expected (n>=1, 3) points, got {pts.shape}")
    logits, emb, _ = model.forward_batch(canonical_point_order(pts)[None])
    return logits[0], emb[0]


def forward_mvcnn(views, model: MVCNN):
    """Logits and pooled embedding for one ``(k, side, side)`` view stack."""
    vs = np.asarray(views, dtype=model.dtype)
    side = model.config.image_side
    if vs.ndim != 3 or len(vs) < 1 or vs.shape[1:] != (side, side):
        raise ShapeMismatch(f"expected (k>=1, {side}, {side}) views, got {vs.shape}")
    logits, emb, _ = model.forward_batch(canonical_view_set(vs)[None])
    return logits[0], emb[0]


def extract_embedding(model, sample) -> np.ndarray:
    if isinstance(model, PointNet):
        return forward_pointnet(sample, model)[1]
    return forward_mvcnn(sample, model)[1]
