"""GNN layers, assembled diagnosis models, and the non-graph baselines.

Layers operate on the autodiff Tensor type and keep their Parameters in a
`params` list so the optimizers and checkpoints can reach them.  GCN-style
propagation uses a dense normalized adjacency (desk-scale graphs stay under
the dense cap); GAT additionally has an edge-list path that scales to
~1e5-edge graphs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, Parameter
from . import graph as gr

# Defaults from the hyperparameter table: (epochs, lr, optimizer)
TABLE_DEFAULTS = {
    "gcn": (300, 0.00018, "rmsprop"),
    "gat": (200, 0.00005, "adam"),
    "graphsage": (300, 0.005, "rmsprop"),
    "stgcn": (200, 0.001, "adam"),
    # below are not specified by the reference protocol; chosen here
    "gae": (200, 0.01, "adam"),
    "mlp": (200, 0.001, "adam"),
    "cnn1d": (200, 0.001, "adam"),
    "knn-classifier": (0, 0.0, "adam"),
}

ARCHITECTURES = tuple(TABLE_DEFAULTS)


@dataclass
class ModelSpec:
    """Architecture id plus training hyperparameters and layer widths."""

    architecture: str
    epochs: int
    lr: float
    optimizer: str
    seed: int = 0
    heads: int = 8
    widths: dict = field(default_factory=dict)
    gae_loss: str = "bce"  # "bce" or "mse"

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def default_spec(architecture, seed=0, **overrides):
    architecture = architecture.lower()
    if architecture not in TABLE_DEFAULTS:
        raise ValueError(f"unknown architecture {architecture!r}; known: {ARCHITECTURES}")
    epochs, lr, opt = TABLE_DEFAULTS[architecture]
    spec = ModelSpec(architecture=architecture, epochs=epochs, lr=lr,
                     optimizer=opt, seed=seed)
    for k, v in overrides.items():
        setattr(spec, k, v)
    return spec


def glorot(rng, shape):
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# layers

class GcnLayer:
    """Z = act(S X Theta) with S the symmetric-normalized adjacency."""

    def __init__(self, c_in, c_out, rng, activation="relu", name="gcn"):
        self.theta = Parameter(glorot(rng, (c_in, c_out)), name=f"{name}.theta")
        self.activation = activation
        self.params = [self.theta]

    def __call__(self, x, s):
        z = ad.matmul(ad.matmul(s, x), self.theta)
        return ad.relu(z) if self.activation == "relu" else z


class GatEdgeIndex:
    """Directed (dst, src) edge arrays incl. self-loops, sorted by dst."""

    def __init__(self, g):
        dst, src = [], []
        for v in range(g.n):
            nb = g.neighbors(v)
            dst.extend([v] * (len(nb) + 1))
            src.extend(nb.tolist())
            src.append(v)
        self.dst = np.asarray(dst, dtype=np.intp)
        self.src = np.asarray(src, dtype=np.intp)
        self.seg = ad.SegmentIndex.from_sorted_ids(self.dst)
        self.src_plan = ad.GatherPlan(self.src, g.n)
        self.dst_plan = ad.GatherPlan(self.dst, g.n)


class GatLayer:
    """Multi-head attention over each node's neighborhood incl. itself.

    merge="concat" stacks head outputs, merge="average" averages them
    (the usual choice for a final layer).
    """

    LEAKY_SLOPE = 0.2
    DENSE_LIMIT = 256  # graphs above this use the edge-list path

    def __init__(self, c_in, c_out, heads, rng, merge="concat",
                 activation="relu", name="gat"):
        self.c_in, self.c_out, self.heads = c_in, c_out, heads
        self.merge = merge
        self.activation = activation
        self.w = Parameter(glorot(rng, (c_in, heads * c_out)), name=f"{name}.w")
        self.a_self = Parameter(glorot(rng, (heads, c_out)), name=f"{name}.a_self")
        self.a_nbr = Parameter(glorot(rng, (heads, c_out)), name=f"{name}.a_nbr")
        self.params = [self.w, self.a_self, self.a_nbr]

    def _activate(self, z):
        return ad.relu(z) if self.activation == "relu" else z

    def __call__(self, x, g, edge_index=None):
        n = g.n
        if edge_index is None and n > self.DENSE_LIMIT:
            edge_index = GatEdgeIndex(g)
        xp = ad.reshape(ad.matmul(x, self.w), (n, self.heads, self.c_out))
        s_self = ad.sum_(ad.mul(xp, self.a_self), axis=2)   # (N, H)
        s_nbr = ad.sum_(ad.mul(xp, self.a_nbr), axis=2)     # (N, H)
        if edge_index is None:
            out = self._dense_attend(xp, s_self, s_nbr, g)
        else:
            out = self._edge_attend(xp, s_self, s_nbr, edge_index, n)
        if self.merge == "concat":
            merged = ad.reshape(out, (n, self.heads * self.c_out))
        else:
            merged = ad.mean_(out, axis=1)
        return self._activate(merged)

    def _dense_attend(self, xp, s_self, s_nbr, g):
        mask = g.adjacency().astype(bool) | np.eye(g.n, dtype=bool)
        heads_out = []
        for h in range(self.heads):
            si = ad.reshape(_take_col(s_self, h), (g.n, 1))
            sj = ad.reshape(_take_col(s_nbr, h), (1, g.n))
            scores = ad.leaky_relu(ad.add(si, sj), self.LEAKY_SLOPE)
            alpha = ad.masked_neighbor_softmax(scores, mask)
            xph = _take_head(xp, h)                    # (N, c_out)
            heads_out.append(ad.reshape(ad.matmul(alpha, xph), (g.n, 1, self.c_out)))
        return ad.concat(heads_out, axis=1)            # (N, H, c_out)

    def _edge_attend(self, xp, s_self, s_nbr, ei, n):
        scores = ad.leaky_relu(
            ad.add(ad.take_rows(s_self, ei.dst, ei.dst_plan),
                   ad.take_rows(s_nbr, ei.src, ei.src_plan)),
            self.LEAKY_SLOPE)                          # (E, H)
        shift = np.maximum.reduceat(scores.data, ei.seg.starts, axis=0)
        e = ad.exp(ad.sub(scores, Tensor(np.repeat(shift, ei.seg.lengths, axis=0))))
        denom = ad.repeat_segments(ad.segment_sum(e, ei.seg), ei.seg)
        alpha = ad.div(e, denom)
        msg = ad.mul(ad.reshape(alpha, alpha.shape + (1,)),
                     ad.take_rows(xp, ei.src, ei.src_plan))
        return ad.segment_sum(msg, ei.seg)             # (N, H, c_out)

    def attention_weights(self, x, g):
        """Per-head dense attention matrices (no grad), for export/tests."""
        n = g.n
        xp = ad.reshape(ad.matmul(x, self.w), (n, self.heads, self.c_out))
        s_self = ad.sum_(ad.mul(xp, self.a_self), axis=2)
        s_nbr = ad.sum_(ad.mul(xp, self.a_nbr), axis=2)
        mask = g.adjacency().astype(bool) | np.eye(n, dtype=bool)
        mats = []
        for h in range(self.heads):
            scores = ad.leaky_relu(
                ad.add(ad.reshape(_take_col(s_self, h), (n, 1)),
                       ad.reshape(_take_col(s_nbr, h), (1, n))), self.LEAKY_SLOPE)
            mats.append(ad.masked_neighbor_softmax(scores, mask).data)
        return mats


def _take_col(t, h):
    # column h of an (N, H) tensor as (N,) via constant selector matmul
    sel = np.zeros((t.shape[1], 1))
    sel[h, 0] = 1.0
    return ad.matmul(t, sel)


def _take_head(t, h):
    # head slice (N, c) of an (N, H, c) tensor
    n, heads, c = t.shape
    flat = ad.reshape(t, (n, heads * c))
    sel = np.zeros((heads * c, c))
    sel[h * c:(h + 1) * c] = np.eye(c)
    return ad.matmul(flat, sel)


class SageLayer:
    """out = act(W [self || aggregate(neighbors)]) with mean/gcn/pool aggregators.

    The mean aggregator averages neighbor rows (zero vector when there are
    none); gcn applies the symmetric-normalized mean incl. self; pool takes
    an elementwise max over linearly transformed, ReLU'd neighbor rows.
    """

    def __init__(self, c_in, c_out, rng, aggregator="gcn", activation="relu",
                 name="sage"):
        if aggregator not in ("mean", "gcn", "pool"):
            raise ValueError(f"unknown aggregator {aggregator!r}")
        self.aggregator = aggregator
        self.activation = activation
        self.w = Parameter(glorot(rng, (2 * c_in, c_out)), name=f"{name}.w")
        self.params = [self.w]
        if aggregator == "pool":
            self.w_pool = Parameter(glorot(rng, (c_in, c_in)), name=f"{name}.w_pool")
            self.b_pool = Parameter(np.zeros(c_in), name=f"{name}.b_pool")
            self.params += [self.w_pool, self.b_pool]

    _agg_cache = {}

    def _agg_matrix(self, g):
        key = (self.aggregator, g)
        if key not in SageLayer._agg_cache:
            mat = (gr.mean_aggregation_matrix(g) if self.aggregator == "mean"
                   else gr.normalized_adjacency(g))
            SageLayer._agg_cache[key] = Tensor(mat)
            if len(SageLayer._agg_cache) > 8:
                SageLayer._agg_cache.pop(next(iter(SageLayer._agg_cache)))
        return SageLayer._agg_cache[key]

    def __call__(self, x, g):
        if self.aggregator in ("mean", "gcn"):
            agg = ad.matmul(self._agg_matrix(g), x)
        else:
            agg = self._pool_aggregate(x, g)
        z = ad.matmul(ad.concat([x, agg], axis=1), self.w)
        return ad.relu(z) if self.activation == "relu" else z

    def _pool_aggregate(self, x, g):
        dst, src = [], []
        for v in range(g.n):
            for u in g.neighbors(v):
                dst.append(v)
                src.append(u)
        if not dst:
            return Tensor(np.zeros_like(x.data))
        dst = np.asarray(dst, dtype=np.intp)
        src = np.asarray(src, dtype=np.intp)
        seg = ad.SegmentIndex.from_sorted_ids(dst)
        transformed = ad.relu(ad.add(ad.matmul(x, self.w_pool), self.b_pool))
        gathered = ad.take_rows(transformed, src, ad.GatherPlan(src, g.n))
        pooled = ad.segment_max(gathered, seg)
        present = dst[seg.starts]
        return ad.put_rows(pooled, present, g.n)


class Dense:
    def __init__(self, c_in, c_out, rng, activation="identity", name="dense"):
        self.w = Parameter(glorot(rng, (c_in, c_out)), name=f"{name}.w")
        self.b = Parameter(np.zeros(c_out), name=f"{name}.b")
        self.activation = activation
        self.params = [self.w, self.b]

    def __call__(self, x):
        z = ad.add(ad.matmul(x, self.w), self.b)
        return ad.relu(z) if self.activation == "relu" else z


class Conv1dLayer:
    def __init__(self, k, c_in, c_out, rng, stride=1, activation="relu", name="conv"):
        self.kernel = Parameter(glorot(rng, (k, c_in, c_out)), name=f"{name}.kernel")
        self.bias = Parameter(np.zeros(c_out), name=f"{name}.bias")
        self.stride = stride
        self.activation = activation
        self.params = [self.kernel, self.bias]

    def __call__(self, x):
        z = ad.add(ad.conv1d(x, self.kernel, self.stride), self.bias)
        return ad.relu(z) if self.activation == "relu" else z


# ---------------------------------------------------------------------------
# assembled node-level models

class GcnModel:
    """GC layer, three 1d-conv layers over the GC output, two dense layers."""

    def __init__(self, c_in, n_classes, spec):
        rng = np.random.default_rng(spec.seed)
        w = spec.widths
        gc_width = w.get("gc", 64)
        conv_w = w.get("conv", (16, 32, 32))
        hidden = w.get("hidden", 64)
        self.gc = GcnLayer(c_in, gc_width, rng, name="gc")
        self.convs = []
        prev = 1
        for i, cw in enumerate(conv_w):
            self.convs.append(Conv1dLayer(3, prev, cw, rng, name=f"conv{i}"))
            prev = cw
        length = gc_width - 2 * len(conv_w)
        if length < 1:
            raise ValueError(f"gc width {gc_width} too small for {len(conv_w)} convs")
        self.fc1 = Dense(length * prev, hidden, rng, activation="relu", name="fc1")
        self.fc2 = Dense(hidden, n_classes, rng, name="fc2")
        self.params = (self.gc.params + [p for c in self.convs for p in c.params]
                       + self.fc1.params + self.fc2.params)
        self._s_cache = {}

    def _s(self, g):
        if g not in self._s_cache:
            self._s_cache[g] = Tensor(gr.normalized_adjacency(g))
        return self._s_cache[g]

    def forward(self, x, g):
        z = self.gc(x, self._s(g))                      # (N, gc_width)
        h = ad.reshape(z, (z.shape[0], z.shape[1], 1))  # treat width as a sequence
        for conv in self.convs:
            h = conv(h)
        h = ad.reshape(h, (h.shape[0], h.shape[1] * h.shape[2]))
        return self.fc2(self.fc1(h))


class GatModel:
    """Two multi-head attention layers: concat merge then average merge."""

    def __init__(self, c_in, n_classes, spec):
        rng = np.random.default_rng(spec.seed)
        per_head = spec.widths.get("per_head", 8)
        self.layer1 = GatLayer(c_in, per_head, spec.heads, rng,
                               merge="concat", activation="relu", name="gat1")
        self.layer2 = GatLayer(spec.heads * per_head, n_classes, spec.heads, rng,
                               merge="average", activation="identity", name="gat2")
        self.params = self.layer1.params + self.layer2.params
        self._ei_cache = {}

    def _ei(self, g):
        if g.n <= GatLayer.DENSE_LIMIT:
            return None
        if g not in self._ei_cache:
            self._ei_cache[g] = GatEdgeIndex(g)
        return self._ei_cache[g]

    def forward(self, x, g):
        ei = self._ei(g)
        return self.layer2(self.layer1(x, g, ei), g, ei)


class SageModel:
    """Two sample-and-aggregate layers (gcn aggregator by default)."""

    def __init__(self, c_in, n_classes, spec):
        rng = np.random.default_rng(spec.seed)
        hidden = spec.widths.get("hidden", 64)
        aggregator = spec.widths.get("aggregator", "gcn")
        self.layer1 = SageLayer(c_in, hidden, rng, aggregator=aggregator,
                                activation="relu", name="sage1")
        self.layer2 = SageLayer(hidden, n_classes, rng, aggregator=aggregator,
                                activation="identity", name="sage2")
        self.params = self.layer1.params + self.layer2.params

    def forward(self, x, g):
        return self.layer2(self.layer1(x, g), g)


class GaeModel:
    """GCN encoder + inner-product decoder: A_hat = sigmoid(Z Z^T)."""

    def __init__(self, c_in, spec):
        rng = np.random.default_rng(spec.seed)
        hidden = spec.widths.get("hidden", 32)
        latent = spec.widths.get("latent", 16)
        self.enc1 = GcnLayer(c_in, hidden, rng, activation="relu", name="enc1")
        self.enc2 = GcnLayer(hidden, latent, rng, activation="identity", name="enc2")
        self.params = self.enc1.params + self.enc2.params
        self._s_cache = {}

    def encode(self, x, g):
        if g not in self._s_cache:
            self._s_cache = {g: Tensor(gr.normalized_adjacency(g))}
        s = self._s_cache[g]
        return self.enc2(self.enc1(x, s), s)

    def forward(self, x, g):
        z = self.encode(x, g)
        return ad.sigmoid(ad.matmul(z, ad.transpose(z, (1, 0))))


# ---------------------------------------------------------------------------
# graph-level model

class StgcnModel:
    """Temporal conv block, spatial graph conv over the sensor graph,
    second temporal block, then a dense classifier head.

    Input (B, T, C) with one sensor per graph node; temporal blocks run
    convolution - max pooling - convolution independently per sensor.
    """

    def __init__(self, n_channels, n_classes, spec, sensor_graph):
        rng = np.random.default_rng(spec.seed)
        w = spec.widths
        f1 = w.get("temporal1", 8)
        f2 = w.get("spatial", 8)
        k1, k2 = w.get("kernels", (5, 3))
        self.pool = w.get("pool", 2)
        self.k1, self.k2 = k1, k2
        self.n_channels = n_channels
        self.sensor_graph = sensor_graph
        self.s_norm = Tensor(gr.normalized_adjacency(sensor_graph))
        self.t1a = Conv1dLayer(k1, 1, f1, rng, name="t1a")
        self.t1b = Conv1dLayer(k2, f1, f1, rng, name="t1b")
        self.theta = Parameter(glorot(rng, (f1, f2)), name="spatial.theta")
        self.t2a = Conv1dLayer(k2, f2, f2, rng, name="t2a")
        self.t2b = Conv1dLayer(k2, f2, f2, rng, name="t2b")
        self.head = Dense(n_channels * f2, n_classes, rng, name="head")
        self.params = (self.t1a.params + self.t1b.params + [self.theta]
                       + self.t2a.params + self.t2b.params + self.head.params)

    def _length_after(self, t):
        t = t - self.k1 + 1          # t1a
        t //= self.pool              # pool 1
        t = t - self.k2 + 1          # t1b
        t = t - self.k2 + 1          # t2a
        t //= self.pool              # pool 2
        t = t - self.k2 + 1          # t2b
        return t

    def min_length(self):
        t = self.k1
        while self._length_after(t) < 1:
            t += 1
        return t

    def forward(self, batch):
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        if x.ndim != 3 or x.shape[2] != self.n_channels:
            raise ad.ShapeError(
                f"expected (B, T, {self.n_channels}), got {x.shape}")
        b, t, c = x.shape
        if t < self.min_length():
            raise ad.ShapeError(
                f"signal length {t} below the receptive field; need T >= {self.min_length()}")
        # temporal block 1, per sensor
        h = ad.reshape(ad.transpose(x, (0, 2, 1)), (b * c, t, 1))
        h = self.t1a(h)
        h = ad.maxpool1d(h, self.pool)
        h = self.t1b(h)
        t1 = h.shape[1]
        f1 = h.shape[2]
        # spatial block: mix sensors through the normalized sensor adjacency
        h = ad.reshape(h, (b, c, t1, f1))
        h = ad.transpose(h, (0, 2, 3, 1))               # (B, T1, F1, C)
        h = ad.matmul(h, self.s_norm)
        h = ad.transpose(h, (0, 1, 3, 2))               # (B, T1, C, F1)
        h = ad.relu(ad.matmul(h, self.theta))           # (B, T1, C, F2)
        # temporal block 2, per sensor
        f2 = h.shape[3]
        h = ad.reshape(ad.transpose(h, (0, 2, 1, 3)), (b * c, t1, f2))
        h = self.t2a(h)
        h = ad.maxpool1d(h, self.pool)
        h = self.t2b(h)
        h = ad.mean_(h, axis=1)                         # (B*C, F2)
        h = ad.reshape(h, (b, c * f2))
        return self.head(h)


# ---------------------------------------------------------------------------
# baselines

class MlpModel:
    """Two hidden layers on flattened samples."""

    def __init__(self, c_in, n_classes, spec):
        rng = np.random.default_rng(spec.seed)
        h1 = spec.widths.get("hidden1", 64)
        h2 = spec.widths.get("hidden2", 32)
        self.fc1 = Dense(c_in, h1, rng, activation="relu", name="fc1")
        self.fc2 = Dense(h1, h2, rng, activation="relu", name="fc2")
        self.fc3 = Dense(h2, n_classes, rng, name="fc3")
        self.params = self.fc1.params + self.fc2.params + self.fc3.params

    def forward(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim > 2:
            x = ad.reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))
        return self.fc3(self.fc2(self.fc1(x)))


class Cnn1dModel:
    """conv - pool - conv - dense over the time axis, channels as features."""

    def __init__(self, n_channels, n_classes, spec):
        rng = np.random.default_rng(spec.seed)
        f1 = spec.widths.get("conv1", 16)
        f2 = spec.widths.get("conv2", 16)
        self.conv1 = Conv1dLayer(5, n_channels, f1, rng, name="conv1")
        self.conv2 = Conv1dLayer(3, f1, f2, rng, name="conv2")
        self.head = Dense(f2, n_classes, rng, name="head")
        self.params = self.conv1.params + self.conv2.params + self.head.params

    def forward(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 2:                                 # static features: (B, d) -> (B, d, 1)
            x = ad.reshape(x, (x.shape[0], x.shape[1], 1))
            if self.conv1.kernel.shape[1] != 1:
                raise ad.ShapeError("model built for multichannel input, got static features")
        h = self.conv1(x)
        h = ad.maxpool1d(h, 2)
        h = self.conv2(h)
        h = ad.mean_(h, axis=1)
        return self.head(h)


class KnnClassifier:
    """Majority vote over the K nearest labeled samples (Euclidean)."""

    def __init__(self, k=5):
        self.k = k
        self.x = None
        self.y = None

    def fit(self, x, y):
        self.x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        self.y = np.asarray(y, dtype=np.intp)
        return self

    def predict(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        d2 = ((x[:, None, :] - self.x[None, :, :]) ** 2).sum(axis=2)
        k = min(self.k, len(self.y))
        idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
        votes = self.y[idx]
        out = np.empty(len(x), dtype=np.intp)
        for i, row in enumerate(votes):
            out[i] = np.bincount(row).argmax()
        return out


NODE_LEVEL = {"gcn": GcnModel, "gat": GatModel, "graphsage": SageModel}


def build_node_model(architecture, c_in, n_classes, spec):
    cls = NODE_LEVEL.get(architecture.lower())
    if cls is None:
        raise ValueError(f"not a node-level architecture: {architecture!r}")
    return cls(c_in, n_classes, spec)
