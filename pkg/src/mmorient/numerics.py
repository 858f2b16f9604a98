"""Scalar and matrix primitives shared by every stage of the pipeline.

Everything here is a pure function on float64 inputs. Training and gradient
verification both run in 64-bit; central finite differences at 1e-4 relative
tolerance are not meaningful in float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special as _special

SQRT2 = float(np.sqrt(2.0))
INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def erf(x):
    """Gauss error function, elementwise; absolute error <= 1e-7 vs the true erf."""
    return _special.erf(x)


def gelu(x):
    """Exact-erf GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = np.asarray(x, dtype=np.float64)
    out = 0.5 * x * (1.0 + erf(x / SQRT2))
    if out.ndim == 0:
        return float(out)
    return out


def gelu_grad(x):
    """Derivative of gelu: Phi(x) + x * phi(x) with the standard normal cdf/pdf."""
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(x / SQRT2))
    pdf = INV_SQRT_2PI * np.exp(-0.5 * x * x)
    out = cdf + x * pdf
    if out.ndim == 0:
        return float(out)
    return out


def softmax(v):
    """Stable softmax of a 1-D vector: entries positive, summing to 1 within 1e-12."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    shifted = v - np.max(v)
    e = np.exp(shifted)
    return e / np.sum(e)


def softmax_rows(m):
    """Row-wise stable softmax of a 2-D array."""
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        raise ValueError("softmax of an empty array")
    shifted = m - np.max(m, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def l2_normalize_rows(m):
    """Scale each row to unit L2 norm; all-zero rows pass through unchanged."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.sqrt(np.sum(m * m, axis=1, keepdims=True))
    safe = np.where(norms > 0.0, norms, 1.0)
    return m / safe


def cosine_similarity_matrix(normed):
    """Pairwise similarities of pre-normalized rows.

    The strict upper triangle is computed once and mirrored, so the result is
    bitwise symmetric. Diagonal entries are set to 1 for nonzero rows and 0
    for zero rows (a degenerate embedding is similar to nothing, itself
    included).
    """
    normed = np.asarray(normed, dtype=np.float64)
    prod = normed @ normed.T
    upper = np.triu(prod, k=1)
    sim = upper + upper.T
    nonzero = np.any(normed != 0.0, axis=1)
    np.fill_diagonal(sim, np.where(nonzero, 1.0, 0.0))
    return sim


def finite_diff_gradient(loss_fn, params, eps):
    """Central-difference gradient of a scalar function, one coordinate at a time.

    ``loss_fn`` must be deterministic; each coordinate costs two evaluations.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    theta = np.asarray(params, dtype=np.float64).copy()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta.flat[i]
        theta.flat[i] = orig + eps
        up = float(loss_fn(theta))
        theta.flat[i] = orig - eps
        down = float(loss_fn(theta))
        theta.flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValueError(f"non-finite loss while probing coordinate {i}")
        grad.flat[i] = (up - down) / (2.0 * eps)
    return grad


# Relative error between an analytic and a numeric derivative. The floor keeps
# coordinates whose true gradient is ~0 from amplifying finite-difference noise.
REL_ERR_FLOOR = 1e-6


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_ERR_FLOOR)
    return np.abs(a - n) / denom


@dataclass
class GradCheckReport:
    """Finite-difference verification result for one named parameter tensor."""

    name: str
    max_rel_error: float
    coords: list[int] = field(default_factory=list)
    analytic: np.ndarray | None = None
    numeric: np.ndarray | None = None

    @property
    def ok(self):
        return self.max_rel_error <= 1e-4


def assert_all_finite(arr, what):
    """Raise ValueError naming ``what`` if any entry is NaN or infinite."""
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr).ravel())[0])
        raise ValueError(f"{what}: non-finite value at flat index {bad}")
    return arr
