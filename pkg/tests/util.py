"""Independent oracles used across the test suite.

Everything here re-derives expected values from first principles (explicit
loops, series, dumb counting) without calling into the code paths under test.
"""

import math

import numpy as np


def taylor_erf(x):
    """erf via its Maclaurin series, summed until the term underflows.

    Converges quickly for |x| <= 3, which is all the grid checks need.
    """
    total = 0.0
    term = x
    n = 0
    while True:
        contrib = term / (2 * n + 1)
        if total + contrib == total:
            break
        total += contrib
        n += 1
        term *= -x * x / n
        if n > 200:
            break
    return 2.0 / math.sqrt(math.pi) * total


def gelu_oracle(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def softmax_oracle(scores):
    scores = list(scores)
    m = max(scores)
    exps = [math.exp(s - m) for s in scores]
    z = sum(exps)
    return [e / z for e in exps]


def stage1_oracle(q, params):
    """Token-level attention recomputed row by row."""
    length, width = q.shape
    theta = []
    for x in range(length):
        row = q[x] @ params.w1 + params.b1
        theta.append(np.array([gelu_oracle(v) for v in row]))
    scores = [float(theta[x] @ params.u1) for x in range(length)]
    att = softmax_oracle(scores)
    t = np.zeros(width)
    for x in range(length):
        t = t + att[x] * q[x]
    return t, np.array(att)


def stage2_oracle(t_mat, params):
    """Batch-level attention recomputed sample by sample."""
    b, width = t_mat.shape
    lvec = []
    for y in range(b):
        row = t_mat[y] @ params.w2 + params.b2
        lvec.append(np.array([gelu_oracle(v) for v in row]))
    scores = [float(lvec[y] @ params.u2) for y in range(b)]
    p = softmax_oracle(scores)
    s = np.zeros(width)
    for y in range(b):
        s = s + p[y] * t_mat[y]
    return s, np.array(p)


def cosine_oracle(a, b):
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


def adjacency_oracle(x, threshold):
    """Edge sets by direct pairwise cosine comparison."""
    n = x.shape[0]
    neighbors = [[] for _ in range(n)]
    for i in range(n):
        if not np.any(x[i]):
            continue
        for j in range(n):
            if j == i or not np.any(x[j]):
                continue
            if cosine_oracle(x[i], x[j]) >= threshold:
                neighbors[i].append(j)
    return [np.array(sorted(nb), dtype=np.int64) for nb in neighbors]


def sage_conv_oracle(k, x, neighbors, w, b):
    """Mean-aggregate + affine + L2 normalization, one node at a time."""
    width = x.shape[1]
    nb = neighbors[k]
    if len(nb):
        mean = np.zeros(width)
        for j in nb:
            mean = mean + x[j]
        mean = mean / len(nb)
    else:
        mean = np.zeros(width)
    h = np.concatenate([mean, x[k]]) @ w + b
    norm = math.sqrt(float(h @ h))
    if norm == 0.0:
        return h
    return h / norm


def confusion_oracle(pred, true, n_classes):
    """Dumb-loop confusion counting; the basis of all metric oracles."""
    tp = [0] * n_classes
    fp = [0] * n_classes
    fn = [0] * n_classes
    correct = 0
    for p, t in zip(pred, true):
        if p == t:
            tp[t] += 1
            correct += 1
        else:
            fp[p] += 1
            fn[t] += 1
    return tp, fp, fn, correct


def metrics_oracle(pred, true, n_classes):
    tp, fp, fn, correct = confusion_oracle(pred, true, n_classes)

    def div(a, b):
        return a / b if b else 0.0

    per_p = [div(tp[k], tp[k] + fp[k]) for k in range(n_classes)]
    per_r = [div(tp[k], tp[k] + fn[k]) for k in range(n_classes)]
    per_f = [div(2 * per_p[k] * per_r[k], per_p[k] + per_r[k]) for k in range(n_classes)]
    micro_p = div(sum(tp), sum(tp) + sum(fp))
    micro_r = div(sum(tp), sum(tp) + sum(fn))
    return {
        "accuracy": correct / len(pred),
        "precision": sum(per_p) / n_classes,
        "recall": sum(per_r) / n_classes,
        "micro_f1": div(2 * micro_p * micro_r, micro_p + micro_r),
        "macro_f1": sum(per_f) / n_classes,
    }


def centroid_probe(features, labels, n_classes):
    """Nearest-class-centroid accuracy; the separability oracle for synthetic data."""
    centroids = np.stack([features[labels == c].mean(axis=0) for c in range(n_classes)])
    dists = ((features[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    pred = np.argmin(dists, axis=1)
    return float(np.mean(pred == labels))


def bundles_equal(a, b):
    """Bitwise, field-for-field bundle equality."""
    if a.task_specs != b.task_specs:
        return False
    if len(a.records) != len(b.records):
        return False
    for ra, rb in zip(a.records, b.records):
        if (ra.id, ra.raw_text, ra.cleaned_text, ra.labels) != (rb.id, rb.raw_text, rb.cleaned_text, rb.labels):
            return False
    for f in ("joint_txt", "joint_img", "token_feats", "region_feats", "toxicity",
              "sentiment_codes", "labels"):
        if not np.array_equal(getattr(a, f), getattr(b, f)):
            return False
    return True


def random_attention_params(width, beta, rng, scale=0.6):
    from mmorient.hima import AttentionParams

    return AttentionParams(
        w1=scale * rng.standard_normal((width, beta)),
        b1=scale * rng.standard_normal(beta),
        u1=scale * rng.standard_normal(beta),
        w2=scale * rng.standard_normal((width, beta)),
        b2=scale * rng.standard_normal(beta),
        u2=scale * rng.standard_normal(beta),
    )
