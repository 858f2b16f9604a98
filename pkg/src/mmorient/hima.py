"""Two-stage monomodal attention.

Stage 1 scores the tokens (or image regions) of each sample and pools them
into one vector per sample. Stage 2 scores those pooled vectors across the
whole batch and pools them into a single batch bias shared by every sample.
A sample's combined vector is concat(own stage-1 vector, batch bias); the
joint vector late-fuses both modalities.

The batch bias couples every sample in the batch, so the backward pass
routes each sample's upstream gradient through all samples' stage-1 paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import gelu, gelu_grad, softmax, softmax_rows


@dataclass
class AttentionParams:
    """Trainable tensors for one modality; also reused as the gradient carrier."""

    w1: np.ndarray  # d x beta
    b1: np.ndarray  # beta
    u1: np.ndarray  # beta
    w2: np.ndarray  # d x beta
    b2: np.ndarray  # beta
    u2: np.ndarray  # beta

    FIELDS = ("w1", "b1", "u1", "w2", "b2", "u2")

    @classmethod
    def init(cls, width, beta, rng):
        def glorot(rows, cols):
            bound = np.sqrt(6.0 / (rows + cols))
            return rng.uniform(-bound, bound, size=(rows, cols))

        return cls(
            w1=glorot(width, beta),
            b1=np.zeros(beta),
            u1=rng.uniform(-0.05, 0.05, size=beta),
            w2=glorot(width, beta),
            b2=np.zeros(beta),
            u2=rng.uniform(-0.05, 0.05, size=beta),
        )

    @classmethod
    def zeros_like(cls, other):
        return cls(**{f: np.zeros_like(getattr(other, f)) for f in cls.FIELDS})


@dataclass
class ModalityAttention:
    stage1: np.ndarray         # B x d pooled vectors t_y
    weights: np.ndarray        # B x L stage-1 attention rows
    batch_bias: np.ndarray     # d shared stage-2 vector s
    batch_weights: np.ndarray  # B stage-2 attention p
    combined: np.ndarray       # B x 2d, concat(t_k, s)


@dataclass
class HimaOutput:
    txt: ModalityAttention
    img: ModalityAttention
    joint: np.ndarray  # B x (2 d_txt + 2 d_img)


@dataclass
class _ModalityCache:
    feats: np.ndarray
    a1: np.ndarray
    theta: np.ndarray
    att: np.ndarray
    t: np.ndarray
    a2: np.ndarray
    lvec: np.ndarray
    p: np.ndarray


@dataclass
class HimaCache:
    txt: _ModalityCache
    img: _ModalityCache


def _attend(feats, params):
    """Both stages for one modality. feats: B x L x d."""
    b, length, _ = feats.shape
    if b < 1 or length < 1:
        raise ValueError("attention needs at least one sample with at least one row")
    a1 = feats @ params.w1 + params.b1          # B x L x beta
    theta = gelu(a1)
    scores1 = theta @ params.u1                 # B x L
    att = softmax_rows(scores1)
    t = np.einsum("bl,bld->bd", att, feats)     # stage-1 pools the original rows

    a2 = t @ params.w2 + params.b2              # B x beta
    lvec = gelu(a2)
    p = softmax(lvec @ params.u2)               # B
    s = p @ t                                   # d

    combined = np.concatenate([t, np.broadcast_to(s, t.shape)], axis=1)
    out = ModalityAttention(stage1=t, weights=att, batch_bias=s, batch_weights=p,
                            combined=combined)
    cache = _ModalityCache(feats=feats, a1=a1, theta=theta, att=att, t=t,
                           a2=a2, lvec=lvec, p=p)
    return out, cache


def stage1_attention(q, params):
    """Token/region attention for a single sample. q: L x d -> (t, att)."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] < 1:
        raise ValueError("stage 1 expects a non-empty L x d matrix")
    out, _ = _attend(q[None, :, :], params)
    return out.stage1[0], out.weights[0]


def stage2_attention(t, params):
    """Batch attention over stage-1 vectors. t: B x d -> (s, p)."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] < 1:
        raise ValueError("stage 2 expects a non-empty B x d matrix")
    a2 = t @ params.w2 + params.b2
    p = softmax(gelu(a2) @ params.u2)
    return p @ t, p


def hima_forward(token_feats, region_feats, txt_params, img_params):
    """Run both modalities and late-fuse. token_feats: B x L_txt x d_txt,
    region_feats: B x L_img x d_img."""
    token_feats = np.asarray(token_feats, dtype=np.float64)
    region_feats = np.asarray(region_feats, dtype=np.float64)
    if token_feats.shape[0] != region_feats.shape[0]:
        raise ValueError("modalities disagree on batch size")
    txt_out, txt_cache = _attend(token_feats, txt_params)
    img_out, img_cache = _attend(region_feats, img_params)
    joint = np.concatenate([txt_out.combined, img_out.combined], axis=1)
    return HimaOutput(txt=txt_out, img=img_out, joint=joint), HimaCache(txt=txt_cache, img=img_cache)


def _attend_backward(dz, cache, params):
    """Gradients of both stages for one modality. dz: B x 2d upstream."""
    feats = cache.feats
    d = feats.shape[2]
    dt = dz[:, :d].copy()
    ds = dz[:, d:].sum(axis=0)  # s is shared by every sample's combined vector

    # stage 2: s = p @ t, p = softmax(gelu(t w2 + b2) @ u2)
    dp = cache.t @ ds
    dt += np.outer(cache.p, ds)
    dscore2 = cache.p * (dp - float(dp @ cache.p))
    du2 = cache.lvec.T @ dscore2
    dl = np.outer(dscore2, params.u2)
    da2 = dl * gelu_grad(cache.a2)
    dw2 = cache.t.T @ da2
    db2 = da2.sum(axis=0)
    dt += da2 @ params.w2.T

    # stage 1: t = att @ feats, att = softmax(gelu(feats w1 + b1) @ u1)
    datt = np.einsum("bld,bd->bl", feats, dt)
    inner = np.einsum("bl,bl->b", datt, cache.att)
    dscore1 = cache.att * (datt - inner[:, None])
    du1 = np.einsum("blh,bl->h", cache.theta, dscore1)
    dtheta = dscore1[:, :, None] * params.u1
    da1 = dtheta * gelu_grad(cache.a1)
    dw1 = np.einsum("bld,blh->dh", feats, da1)
    db1 = da1.sum(axis=(0, 1))

    return AttentionParams(w1=dw1, b1=db1, u1=du1, w2=dw2, b2=db2, u2=du2)


def hima_backward(djoint, cache, txt_params, img_params):
    """Parameter gradients for both modalities given d(loss)/d(joint)."""
    if cache is None:
        raise ValueError("hima_backward needs the forward cache")
    djoint = np.asarray(djoint, dtype=np.float64)
    split = 2 * cache.txt.feats.shape[2]
    d_txt = _attend_backward(djoint[:, :split], cache.txt, txt_params)
    d_img = _attend_backward(djoint[:, split:], cache.img, img_params)
    return d_txt, d_img
