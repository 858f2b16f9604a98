"""Multifeature fusion, the shared MLP with per-task softmax heads, summed
cross-entropy over tasks, and deterministic mini-batch gradient descent with
finite-difference verification hooks.

Heads are zero-initialized, so before the first step every head predicts the
uniform distribution and the loss equals sum(ln C_i) regardless of the
upstream parameters; the training tests lean on that closed form.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics as metrics_mod
from .cmrl import GRAPH_KEYS, GraphConvParams, GraphThresholds, cmrl_backward, cmrl_forward
from .dataio import ABSENT, atomic_write_bytes
from .errors import DataError, NumericError
from .hima import AttentionParams, hima_backward, hima_forward
from .numerics import GradCheckReport, gelu, gelu_grad, relative_error, softmax_rows
from .taskfeat import task_feature_matrix, task_feature_width

SNAPSHOT_MAGIC = b"MMOS"
SNAPSHOT_VERSION = 1

LOG_FLOOR = 1e-12


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    beta: int = 200
    channels: int = 32
    mlp_sizes: tuple = (64, 32)
    thresholds: GraphThresholds = field(default_factory=GraphThresholds)
    grad_check: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.beta < 1 or self.channels < 1:
            raise ValueError("beta and channels must be >= 1")
        if not self.mlp_sizes:
            raise ValueError("mlp_sizes must name at least one hidden layer")


@dataclass(frozen=True)
class ModelDims:
    token_width: int
    region_width: int
    joint_txt_width: int
    joint_img_width: int
    toxicity_width: int
    task_specs: tuple
    beta: int
    channels: int
    mlp_sizes: tuple

    @classmethod
    def from_bundle(cls, bundle, config):
        return cls(
            token_width=bundle.token_feats.shape[2],
            region_width=bundle.region_feats.shape[2],
            joint_txt_width=bundle.joint_txt.shape[1],
            joint_img_width=bundle.joint_img.shape[1],
            toxicity_width=bundle.toxicity.shape[1],
            task_specs=tuple(bundle.task_specs),
            beta=config.beta,
            channels=config.channels,
            mlp_sizes=tuple(config.mlp_sizes),
        )

    @property
    def z_dim(self):
        return 2 * self.token_width + 2 * self.region_width

    @property
    def h_dim(self):
        return 4 * self.channels

    @property
    def t_dim(self):
        return task_feature_width(self.toxicity_width)

    @property
    def m_dim(self):
        return self.z_dim + self.h_dim + self.t_dim


@dataclass(frozen=True)
class FuseLayout:
    z_dim: int
    h_dim: int
    t_dim: int

    @property
    def m_dim(self):
        return self.z_dim + self.h_dim + self.t_dim

    @property
    def z_slice(self):
        return slice(0, self.z_dim)

    @property
    def h_slice(self):
        return slice(self.z_dim, self.z_dim + self.h_dim)

    @property
    def t_slice(self):
        return slice(self.z_dim + self.h_dim, self.m_dim)


def fuse(z, h, t):
    """Concatenate the attention, relation, and task-feature blocks per sample."""
    z = np.asarray(z, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if not (z.ndim == h.ndim == t.ndim == 2):
        raise ValueError("fuse expects three 2-D blocks")
    if not (z.shape[0] == h.shape[0] == t.shape[0]):
        raise ValueError(
            f"fuse blocks disagree on rows: {z.shape[0]}, {h.shape[0]}, {t.shape[0]}")
    return np.concatenate([z, h, t], axis=1)


@dataclass
class ModelParams:
    hima_txt: AttentionParams
    hima_img: AttentionParams
    conv: dict       # graph key -> GraphConvParams
    mlp: list        # [(w, b), ...]
    heads: dict      # task name -> (w, b), insertion order = task order

    def named_tensors(self):
        """(name, array) pairs in a fixed canonical order."""
        for mod, par in (("txt", self.hima_txt), ("img", self.hima_img)):
            for f in AttentionParams.FIELDS:
                yield f"hima.{mod}.{f}", getattr(par, f)
        for key in GRAPH_KEYS:
            yield f"conv.{key}.w", self.conv[key].w
            yield f"conv.{key}.b", self.conv[key].b
        for i, (w, b) in enumerate(self.mlp):
            yield f"mlp.{i}.w", w
            yield f"mlp.{i}.b", b
        for task, (w, b) in self.heads.items():
            yield f"head.{task}.w", w
            yield f"head.{task}.b", b

    def tensor(self, name):
        for n, arr in self.named_tensors():
            if n == name:
                return arr
        raise KeyError(name)


def init_params(dims, rng):
    """Glorot-uniform matrices, zero biases, small uniform context vectors,
    zero heads (so the initial loss is the closed-form sum of ln C_i)."""
    def glorot(rows, cols):
        bound = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-bound, bound, size=(rows, cols))

    hima_txt = AttentionParams.init(dims.token_width, dims.beta, rng)
    hima_img = AttentionParams.init(dims.region_width, dims.beta, rng)
    conv = {}
    for key in GRAPH_KEYS:
        node_mod = key.split("-")[0]
        width = dims.joint_txt_width if node_mod == "txt" else dims.joint_img_width
        conv[key] = GraphConvParams.init(width, dims.channels, rng)
    mlp = []
    fan_in = dims.m_dim
    for size in dims.mlp_sizes:
        mlp.append((glorot(fan_in, size), np.zeros(size)))
        fan_in = size
    heads = {}
    for spec in dims.task_specs:
        heads[spec.name] = (np.zeros((fan_in, spec.class_count)), np.zeros(spec.class_count))
    return ModelParams(hima_txt=hima_txt, hima_img=hima_img, conv=conv, mlp=mlp, heads=heads)


# ---------------------------------------------------------------------------
# forward / backward over one batch

@dataclass
class BatchData:
    token: np.ndarray      # B x L_txt x token_width
    region: np.ndarray     # B x L_img x region_width
    joint_txt: np.ndarray  # B x D
    joint_img: np.ndarray  # B x D
    taskfeat: np.ndarray   # B x t_dim
    labels: np.ndarray     # B x T, ABSENT where missing

    @property
    def size(self):
        return self.token.shape[0]


def batch_from_bundle(bundle, indices, taskfeat):
    idx = np.asarray(indices)
    return BatchData(
        token=bundle.token_feats[idx],
        region=bundle.region_feats[idx],
        joint_txt=bundle.joint_txt[idx],
        joint_img=bundle.joint_img[idx],
        taskfeat=taskfeat[idx],
        labels=bundle.labels[idx],
    )


@dataclass
class PipelineState:
    layout: FuseLayout
    hima_cache: object
    cmrl_caches: object
    m: np.ndarray
    pre: list       # per layer pre-activation
    acts: list      # layer inputs, acts[0] == m
    hidden: np.ndarray
    probs: dict     # task -> B x C


def model_forward(m, params):
    """Shared MLP (GELU between layers) and per-task softmax heads."""
    pre = []
    acts = [m]
    hidden = m
    for w, b in params.mlp:
        a = hidden @ w + b
        pre.append(a)
        hidden = gelu(a)
        acts.append(hidden)
    probs = {}
    for task, (w, b) in params.heads.items():
        probs[task] = softmax_rows(hidden @ w + b)
    return hidden, probs, pre, acts


def pipeline_forward(params, batch, thresholds):
    hima_out, hima_cache = hima_forward(batch.token, batch.region,
                                        params.hima_txt, params.hima_img)
    cm_out, cm_caches = cmrl_forward(batch.joint_txt, batch.joint_img,
                                     thresholds, params.conv)
    layout = FuseLayout(z_dim=hima_out.joint.shape[1], h_dim=cm_out.joint.shape[1],
                        t_dim=batch.taskfeat.shape[1])
    m = fuse(hima_out.joint, cm_out.joint, batch.taskfeat)
    hidden, probs, pre, acts = model_forward(m, params)
    return PipelineState(layout=layout, hima_cache=hima_cache, cmrl_caches=cm_caches,
                         m=m, pre=pre, acts=acts, hidden=hidden, probs=probs)


def multitask_loss(probs, labels, task_specs):
    """Cross-entropy summed over annotated tasks, averaged over batch samples."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    total = 0.0
    for t, spec in enumerate(task_specs):
        col = labels[:, t]
        present = col != ABSENT
        if not np.any(present):
            continue
        picked = probs[spec.name][present, col[present]]
        total += float(-np.sum(np.log(np.maximum(picked, LOG_FLOOR))))
    return total / n


def pipeline_loss(params, batch, thresholds, task_specs):
    state = pipeline_forward(params, batch, thresholds)
    return multitask_loss(state.probs, batch.labels, task_specs)


def pipeline_backward(state, params, batch, task_specs):
    """Gradients of the batch-mean loss for every trainable tensor."""
    n = batch.size
    grads = {}
    dhidden = np.zeros_like(state.hidden)
    for t, spec in enumerate(task_specs):
        w, _ = params.heads[spec.name]
        col = batch.labels[:, t]
        present = col != ABSENT
        dlogits = state.probs[spec.name].copy()
        rows = np.flatnonzero(present)
        dlogits[rows, col[rows]] -= 1.0
        dlogits[~present] = 0.0
        dlogits /= n
        grads[f"head.{spec.name}.w"] = state.hidden.T @ dlogits
        grads[f"head.{spec.name}.b"] = dlogits.sum(axis=0)
        dhidden += dlogits @ w.T

    for i in range(len(params.mlp) - 1, -1, -1):
        w, _ = params.mlp[i]
        da = dhidden * gelu_grad(state.pre[i])
        grads[f"mlp.{i}.w"] = state.acts[i].T @ da
        grads[f"mlp.{i}.b"] = da.sum(axis=0)
        dhidden = da @ w.T

    dm = dhidden
    dz = dm[:, state.layout.z_slice]
    dh = dm[:, state.layout.h_slice]
    # the task-feature block has no trainable upstream

    d_txt, d_img = hima_backward(dz, state.hima_cache, params.hima_txt, params.hima_img)
    for mod, g in (("txt", d_txt), ("img", d_img)):
        for f in AttentionParams.FIELDS:
            grads[f"hima.{mod}.{f}"] = getattr(g, f)
    conv_grads = cmrl_backward(dh, state.cmrl_caches, params.conv)
    for key in GRAPH_KEYS:
        grads[f"conv.{key}.w"] = conv_grads[key].w
        grads[f"conv.{key}.b"] = conv_grads[key].b
    return grads


def backward_and_step(params, batch, task_specs, thresholds, lr, momentum=0.0, velocity=None):
    """One gradient-descent step in place; returns (loss, velocity)."""
    state = pipeline_forward(params, batch, thresholds)
    loss = multitask_loss(state.probs, batch.labels, task_specs)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite training loss {loss!r}")
    grads = pipeline_backward(state, params, batch, task_specs)
    if velocity is None:
        velocity = {name: np.zeros_like(arr) for name, arr in params.named_tensors()}
    for name, arr in params.named_tensors():
        if momentum != 0.0:
            velocity[name] = momentum * velocity[name] + grads[name]
            arr -= lr * velocity[name]
        else:
            arr -= lr * grads[name]
    return loss, velocity


# ---------------------------------------------------------------------------
# training and evaluation

def predict_arrays(params, bundle, taskfeat, thresholds, batch_size):
    """Argmax predictions per task over the bundle in sequential batches.

    The batch bias and the relation graphs are batch-defined, so predictions
    depend on the batching; evaluation always uses this sequential layout.
    """
    n = bundle.n
    preds = {spec.name: np.empty(n, dtype=np.int64) for spec in bundle.task_specs}
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        batch = batch_from_bundle(bundle, idx, taskfeat)
        state = pipeline_forward(params, batch, thresholds)
        for spec in bundle.task_specs:
            preds[spec.name][idx] = np.argmax(state.probs[spec.name], axis=1)
    return preds


def evaluate(params, bundle, taskfeat, thresholds, batch_size):
    """Per-task metrics over annotated rows; tasks with no labels report zeros."""
    preds = predict_arrays(params, bundle, taskfeat, thresholds, batch_size)
    out = {}
    for t, spec in enumerate(bundle.task_specs):
        col = bundle.labels[:, t]
        present = col != ABSENT
        if not np.any(present):
            out[spec.name] = metrics_mod.TaskMetrics(
                accuracy=0.0, precision=0.0, recall=0.0, micro_f1=0.0, macro_f1=0.0,
                n_evaluated=0,
                confusion=metrics_mod.ConfusionCounts(
                    tp=np.zeros(spec.class_count, dtype=np.int64),
                    fp=np.zeros(spec.class_count, dtype=np.int64),
                    fn=np.zeros(spec.class_count, dtype=np.int64),
                    total=0))
            continue
        out[spec.name] = metrics_mod.task_metrics(
            preds[spec.name][present], col[present], spec.class_count)
    return out


def train(bundle, config, lexicon=None):
    """Seeded mini-batch gradient descent; returns (params, history).

    History holds one record per epoch: the sample-weighted mean training
    loss and each task's micro-F1 from a post-epoch sequential evaluation
    pass (the same computation the eval command performs).
    """
    rng = np.random.default_rng(config.seed)
    dims = ModelDims.from_bundle(bundle, config)
    params = init_params(dims, rng)
    taskfeat = task_feature_matrix(bundle, lexicon)
    n = bundle.n
    velocity = None
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = batch_from_bundle(bundle, idx, taskfeat)
            try:
                loss, velocity = backward_and_step(
                    params, batch, bundle.task_specs, config.thresholds,
                    config.learning_rate, config.momentum, velocity)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch at {start}: {exc}") from exc
            loss_sum += loss * len(idx)
        report = evaluate(params, bundle, taskfeat, config.thresholds, config.batch_size)
        history.append({
            "epoch": epoch,
            "loss": loss_sum / n,
            "micro_f1": {name: m.micro_f1 for name, m in report.items()},
        })
    return params, history


def history_lines(history):
    return "".join(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n"
                   for rec in history)


# ---------------------------------------------------------------------------
# snapshots

def save_snapshot(params, path, config=None):
    """Single-file parameter snapshot: name/shape directory, float64 payloads.

    The training thresholds and batch size ride along as config tensors so
    evaluation can reproduce training-time behavior without extra flags.
    """
    entries = list(params.named_tensors())
    if config is not None:
        entries.append(("config.thresholds", np.asarray(config.thresholds.as_tuple())))
        entries.append(("config.batch_size", np.asarray([float(config.batch_size)])))
    blob = bytearray()
    blob += SNAPSHOT_MAGIC
    blob += struct.pack("<II", SNAPSHOT_VERSION, len(entries))
    for name, arr in entries:
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += struct.pack("<I", arr.ndim)
        blob += b"".join(struct.pack("<Q", d) for d in arr.shape)
    for _, arr in entries:
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C")
    atomic_write_bytes(path, bytes(blob))


def _parse_snapshot(data, fname):
    off = 0
    if data[:4] != SNAPSHOT_MAGIC:
        raise DataError(f"{fname}: bad magic {data[:4]!r}, expected {SNAPSHOT_MAGIC!r}")
    off = 4
    try:
        version, count = struct.unpack_from("<II", data, off)
        off += 8
        if version != SNAPSHOT_VERSION:
            raise DataError(f"{fname}: snapshot version {version}, expected {SNAPSHOT_VERSION}")
        shapes = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + name_len].decode("utf-8")
            if len(name.encode("utf-8")) != name_len:
                raise DataError(f"{fname}: truncated tensor name")
            off += name_len
            (rank,) = struct.unpack_from("<I", data, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", data, off)
            off += 8 * rank
            shapes.append((name, dims))
    except struct.error as exc:
        raise DataError(f"{fname}: truncated snapshot directory") from exc
    tensors = {}
    for name, dims in shapes:
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        end = off + 8 * size
        if end > len(data):
            raise DataError(f"{fname}: truncated payload for tensor {name!r}")
        tensors[name] = np.frombuffer(data[off:end], dtype="<f8").reshape(dims).copy()
        off = end
    if off != len(data):
        raise DataError(f"{fname}: {len(data) - off} trailing bytes after payloads")
    return tensors


def load_snapshot(path):
    """Reconstruct (params, meta) from a snapshot file; never returns partial params."""
    with open(path, "rb") as fh:
        data = fh.read()
    tensors = _parse_snapshot(data, str(path))

    def take(name):
        if name not in tensors:
            raise DataError(f"{path}: snapshot is missing tensor {name!r}")
        return tensors.pop(name)

    meta = {}
    if "config.thresholds" in tensors:
        meta["thresholds"] = GraphThresholds.from_tuple(take("config.thresholds"))
    if "config.batch_size" in tensors:
        meta["batch_size"] = int(take("config.batch_size")[0])

    hima = {}
    for mod in ("txt", "img"):
        hima[mod] = AttentionParams(**{f: take(f"hima.{mod}.{f}") for f in AttentionParams.FIELDS})
    conv = {key: GraphConvParams(w=take(f"conv.{key}.w"), b=take(f"conv.{key}.b"))
            for key in GRAPH_KEYS}
    mlp = []
    i = 0
    while f"mlp.{i}.w" in tensors:
        mlp.append((take(f"mlp.{i}.w"), take(f"mlp.{i}.b")))
        i += 1
    if not mlp:
        raise DataError(f"{path}: snapshot has no MLP layers")
    heads = {}
    for name in [n for n in tensors if n.startswith("head.") and n.endswith(".w")]:
        task = name[len("head."):-len(".w")]
        heads[task] = (take(f"head.{task}.w"), take(f"head.{task}.b"))
    if not heads:
        raise DataError(f"{path}: snapshot has no task heads")
    if tensors:
        raise DataError(f"{path}: unrecognized tensors in snapshot: {sorted(tensors)}")
    params = ModelParams(hima_txt=hima["txt"], hima_img=hima["img"], conv=conv,
                         mlp=mlp, heads=heads)
    return params, meta


def validate_params_for_bundle(params, bundle):
    """Shape-check a snapshot against a bundle's dims; errors name the tensor."""
    checks = [
        ("hima.txt.w1", params.hima_txt.w1.shape[0], bundle.token_feats.shape[2]),
        ("hima.img.w1", params.hima_img.w1.shape[0], bundle.region_feats.shape[2]),
    ]
    for key in GRAPH_KEYS:
        node_mod = key.split("-")[0]
        width = bundle.joint_txt.shape[1] if node_mod == "txt" else bundle.joint_img.shape[1]
        checks.append((f"conv.{key}.w", params.conv[key].w.shape[0], 2 * width))
    z_dim = 2 * bundle.token_feats.shape[2] + 2 * bundle.region_feats.shape[2]
    h_dim = sum(params.conv[key].w.shape[1] for key in GRAPH_KEYS)
    t_dim = task_feature_width(bundle.toxicity.shape[1])
    checks.append(("mlp.0.w", params.mlp[0][0].shape[0], z_dim + h_dim + t_dim))
    for name, got, want in checks:
        if got != want:
            raise DataError(f"snapshot tensor {name}: dimension {got} does not match dataset ({want})")
    spec_names = [s.name for s in bundle.task_specs]
    if sorted(params.heads) != sorted(spec_names):
        raise DataError(
            f"snapshot heads {sorted(params.heads)} do not match dataset tasks {sorted(spec_names)}")
    for spec in bundle.task_specs:
        w, _ = params.heads[spec.name]
        if w.shape[1] != spec.class_count:
            raise DataError(
                f"snapshot tensor head.{spec.name}.w: {w.shape[1]} classes, dataset has {spec.class_count}")


# ---------------------------------------------------------------------------
# gradient verification

def run_grad_check(bundle, config, eps=1e-5, coords_per_tensor=25, seed=0, params=None):
    """Compare every trainable tensor's analytic gradient against central
    finite differences on one fixed batch; subsamples coordinates per tensor.

    Zero heads would block all gradient flow upstream (the check would pass
    vacuously on 0 == 0 for every non-head tensor), so freshly initialized
    head weights are jittered before checking.
    """
    rng = np.random.default_rng(config.seed)
    dims = ModelDims.from_bundle(bundle, config)
    if params is None:
        params = init_params(dims, rng)
        for w, _ in params.heads.values():
            w += 0.1 * rng.standard_normal(w.shape)
    taskfeat = task_feature_matrix(bundle)
    idx = np.arange(min(config.batch_size, bundle.n))
    batch = batch_from_bundle(bundle, idx, taskfeat)
    specs = bundle.task_specs

    state = pipeline_forward(params, batch, config.thresholds)
    grads = pipeline_backward(state, params, batch, specs)

    coord_rng = np.random.default_rng(seed)
    reports = []
    for name, tensor in params.named_tensors():
        size = tensor.size
        k = min(coords_per_tensor, size)
        coords = np.sort(coord_rng.choice(size, size=k, replace=False))
        analytic = grads[name].ravel()[coords]
        numeric = np.empty(k)
        for j, c in enumerate(coords):
            orig = tensor.flat[c]
            tensor.flat[c] = orig + eps
            up = pipeline_loss(params, batch, config.thresholds, specs)
            tensor.flat[c] = orig - eps
            down = pipeline_loss(params, batch, config.thresholds, specs)
            tensor.flat[c] = orig
            numeric[j] = (up - down) / (2.0 * eps)
        rel = relative_error(analytic, numeric)
        reports.append(GradCheckReport(
            name=name,
            max_rel_error=float(rel.max()) if k else 0.0,
            coords=[int(c) for c in coords],
            analytic=analytic,
            numeric=numeric,
        ))
    return reports
