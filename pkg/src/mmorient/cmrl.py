"""Cross-modal relation graphs and the mean-aggregating graph convolution.

Four graphs per batch: two in-modal (nodes and edges from the same modality)
and two cross-modal, where the node features come from one modality but the
edges are thresholded cosine similarities of the *other* modality. Node
features of the edge-defining modality never enter the convolution, which is
what keeps that modality's feature noise out of the reconstructed vectors.

Graph construction is the O(lambda^2 * D) hot spot; it dispatches to the
compiled kernel when available (``MMORIENT_PURE=1`` forces the numpy path).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .numerics import cosine_similarity_matrix, l2_normalize_rows

try:
    from . import _simkernel
except ImportError:
    _simkernel = None

GRAPH_KEYS = ("img-img", "txt-txt", "img-txt", "txt-img")


def kernel_available():
    return _simkernel is not None


def _use_kernel():
    if os.environ.get("MMORIENT_PURE", "") in ("1", "true", "yes"):
        return False
    return _simkernel is not None


@dataclass
class GraphThresholds:
    """Similarity cutoffs, keyed by (node modality, edge modality)."""

    txt_txt: float = 0.7
    img_img: float = 0.8
    txt_img: float = 0.85  # nodes txt, edges from img similarities
    img_txt: float = 0.75  # nodes img, edges from txt similarities

    def for_key(self, key):
        return getattr(self, key.replace("-", "_"))

    def as_tuple(self):
        return (self.txt_txt, self.img_img, self.txt_img, self.img_txt)

    @classmethod
    def from_tuple(cls, values):
        txt_txt, img_img, txt_img, img_txt = (float(v) for v in values)
        return cls(txt_txt=txt_txt, img_img=img_img, txt_img=txt_img, img_txt=img_txt)


@dataclass
class RelationGraph:
    node_modality: str
    edge_modality: str
    threshold: float
    neighbors: list  # per node, sorted int64 index array; symmetric, no self-loops

    @property
    def n(self):
        return len(self.neighbors)

    def edge_count(self):
        return sum(len(nb) for nb in self.neighbors) // 2

    def degree_histogram(self):
        hist = {}
        for nb in self.neighbors:
            hist[len(nb)] = hist.get(len(nb), 0) + 1
        return dict(sorted(hist.items()))

    def isolated_count(self):
        return sum(1 for nb in self.neighbors if len(nb) == 0)


def _threshold_adjacency_numpy(normed, threshold):
    # The strict upper triangle's similarities decide both edge directions,
    # mirroring cosine_similarity_matrix's symmetry convention while keeping
    # the O(n^2) epilogue on booleans instead of float64.
    prod = normed @ normed.T
    adj = np.triu(prod >= threshold, k=1)
    adj |= adj.T
    nonzero = np.any(normed != 0.0, axis=1)
    adj &= nonzero[:, None] & nonzero[None, :]
    return adj.astype(np.uint8)


def adjacency_matrix(x, threshold):
    """Dense uint8 adjacency of cosine(x_i, x_j) >= threshold, i != j."""
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("expected a non-empty 2-D embedding matrix")
    normed = np.ascontiguousarray(l2_normalize_rows(x))
    if _use_kernel():
        return _simkernel.threshold_adjacency(normed, float(threshold))
    return _threshold_adjacency_numpy(normed, float(threshold))


def build_adjacency(x, threshold):
    """Neighbor lists (sorted, symmetric, irreflexive) for one edge criterion."""
    adj = adjacency_matrix(x, threshold)
    return [np.flatnonzero(row).astype(np.int64) for row in adj]


def build_graphs(x_txt, x_img, thresholds):
    """The four relation graphs for one batch of joint embeddings."""
    x_txt = np.asarray(x_txt, dtype=np.float64)
    x_img = np.asarray(x_img, dtype=np.float64)
    if x_txt.shape[0] != x_img.shape[0]:
        raise ValueError("text and image embedding matrices disagree on row count")
    graphs = {}
    for key in GRAPH_KEYS:
        node_mod, edge_mod = key.split("-")
        edge_x = x_txt if edge_mod == "txt" else x_img
        thr = thresholds.for_key(key)
        graphs[key] = RelationGraph(
            node_modality=node_mod,
            edge_modality=edge_mod,
            threshold=thr,
            neighbors=build_adjacency(edge_x, thr),
        )
    return graphs


@dataclass
class GraphConvParams:
    """One graph's affine map; reused as the gradient carrier."""

    w: np.ndarray  # 2D x C
    b: np.ndarray  # C

    @classmethod
    def init(cls, width, channels, rng):
        bound = np.sqrt(6.0 / (2 * width + channels))
        return cls(w=rng.uniform(-bound, bound, size=(2 * width, channels)),
                   b=np.zeros(channels))

    @classmethod
    def zeros_like(cls, other):
        return cls(w=np.zeros_like(other.w), b=np.zeros_like(other.b))


@dataclass
class _ConvCache:
    pre: np.ndarray        # lambda x 2D, concat(neighbor mean, own features)
    norms: np.ndarray      # lambda, pre-normalization row norms
    out: np.ndarray        # lambda x C, normalized output
    mean_weights: np.ndarray  # lambda x lambda row-stochastic-or-zero matrix


@dataclass
class CmrlOutput:
    blocks: dict  # key -> lambda x C unit-or-zero rows
    joint: np.ndarray  # lambda x 4C, concat in GRAPH_KEYS order


def _mean_weights(neighbors, n):
    weights = np.zeros((n, n))
    for i, nb in enumerate(neighbors):
        if len(nb):
            weights[i, nb] = 1.0 / len(nb)
    return weights


def _conv_all(x, graph, params):
    """Convolution of every node of one graph. Aggregates the original
    (unnormalized) features; an empty neighborhood contributes a zero mean."""
    n = x.shape[0]
    weights = _mean_weights(graph.neighbors, n)
    pre = np.concatenate([weights @ x, x], axis=1)
    h = pre @ params.w + params.b
    norms = np.sqrt(np.sum(h * h, axis=1))
    safe = np.where(norms > 0.0, norms, 1.0)
    out = h / safe[:, None]
    return out, _ConvCache(pre=pre, norms=norms, out=out, mean_weights=weights)


def graph_sage_conv(k, x, graph, params):
    """Reconstructed feature vector of node ``k``: L2-normalized affine map of
    concat(mean of neighbor rows, own row)."""
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= k < x.shape[0]:
        raise IndexError(f"node index {k} out of range for {x.shape[0]} nodes")
    out, _ = _conv_all(x, graph, params)
    return out[k]


def cmrl_forward(x_txt, x_img, thresholds, params, graphs=None):
    """All four graph convolutions; returns per-sample blocks and their concat.

    ``graphs`` may be supplied to reuse (or pin) prebuilt adjacency, e.g. when
    probing how outputs react to feature changes under a fixed graph.
    """
    x_txt = np.asarray(x_txt, dtype=np.float64)
    x_img = np.asarray(x_img, dtype=np.float64)
    if x_txt.shape[0] != x_img.shape[0]:
        raise ValueError("text and image embedding matrices disagree on row count")
    if graphs is None:
        graphs = build_graphs(x_txt, x_img, thresholds)
    blocks = {}
    caches = {}
    for key in GRAPH_KEYS:
        node_mod = key.split("-")[0]
        x = x_txt if node_mod == "txt" else x_img
        blocks[key], caches[key] = _conv_all(x, graphs[key], params[key])
    joint = np.concatenate([blocks[key] for key in GRAPH_KEYS], axis=1)
    return CmrlOutput(blocks=blocks, joint=joint), caches


def cmrl_backward(djoint, caches, params):
    """Parameter gradients for the four convolutions given d(loss)/d(joint).

    Adjacency is a constant of the forward pass (thresholding is not
    differentiable), so only the affine maps receive gradients.
    """
    if caches is None:
        raise ValueError("cmrl_backward needs the forward caches")
    djoint = np.asarray(djoint, dtype=np.float64)
    grads = {}
    offset = 0
    for key in GRAPH_KEYS:
        cache = caches[key]
        channels = cache.out.shape[1]
        dout = djoint[:, offset:offset + channels]
        offset += channels
        # out = h / ||h||: dh = (dout - out * <out, dout>) / ||h||, zero rows stay zero
        inner = np.sum(cache.out * dout, axis=1, keepdims=True)
        safe = np.where(cache.norms > 0.0, cache.norms, 1.0)[:, None]
        dh = (dout - cache.out * inner) / safe
        dh = np.where(cache.norms[:, None] > 0.0, dh, 0.0)
        grads[key] = GraphConvParams(w=cache.pre.T @ dh, b=dh.sum(axis=0))
    return grads
