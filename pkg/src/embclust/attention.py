"""Attention kernels: vanilla, differential, sparse differential, MoE mixture.

All kernels are pure numpy forward passes over a single (n, d) token matrix,
with hand-written reverse-mode companions (``*_vjp``) whose correctness is
pinned by :func:`grad_check` against central finite differences.

The differential family splits queries and keys column-wise into two halves
and subtracts two softmax maps scaled by a learnable lambda, so common-mode
attention noise cancels.  Sparse variants apply a keep-first-k mask (built
from relevance-ordered rows) inside both softmaxes; the MoE variant mixes
three sparse arms with masks just below, at, and just above the keep count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError

DEFAULT_LAMBDA_INIT = 0.8
DEFAULT_MASK_MARGIN = 5  # mask offset u for the MoE arms


@dataclass
class AttentionParams:
    """Projection weights plus the lambda and mixture reparameterizations.

    ``wq``/``wk``/``wv`` are (d, d); the four lambda vectors have length d/2
    (d must be even for the differential variants).  ``moe`` holds the three
    mixture weights.  ``scale_width`` picks the softmax scaling denominator:
    "half" uses the per-map key width d/2, "full" uses d.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    lam_q1: np.ndarray
    lam_k1: np.ndarray
    lam_q2: np.ndarray
    lam_k2: np.ndarray
    lam_init: float = DEFAULT_LAMBDA_INIT
    moe: np.ndarray = field(default_factory=lambda: np.full(3, 1.0 / 3.0))
    u: int = DEFAULT_MASK_MARGIN
    scale_width: str = "half"

    def __post_init__(self):
        d = self.wq.shape[0]
        if self.wq.shape != (d, d) or self.wk.shape != (d, d) or self.wv.shape != (d, d):
            raise ValueError("projection weights must all be (d, d)")
        if d % 2 != 0:
            raise ValueError(f"model width must be even, got {d}")
        half = d // 2
        for name in ("lam_q1", "lam_k1", "lam_q2", "lam_k2"):
            if getattr(self, name).shape != (half,):
                raise ValueError(f"{name} must have length {half}")
        self.moe = np.asarray(self.moe, dtype=np.float64)
        if self.moe.shape != (3,):
            raise ValueError("moe must hold exactly three mixture weights")
        if self.u < 1:
            raise ValueError("mask margin u must be >= 1")
        if self.scale_width not in ("half", "full"):
            raise ValueError(f"unknown scale_width {self.scale_width!r}")

    @property
    def dim(self):
        return self.wq.shape[0]


def init_attention_params(dim, rng, lam_init=DEFAULT_LAMBDA_INIT, u=DEFAULT_MASK_MARGIN,
                          scale_width="half", lam_scale=0.1):
    """Random initialization; lambda vectors start small but nonzero so the
    reparameterized lambda stays trainable (its gradient vanishes at zero)."""
    half = dim // 2
    return AttentionParams(
        wq=rng.standard_normal((dim, dim)) / math.sqrt(dim),
        wk=rng.standard_normal((dim, dim)) / math.sqrt(dim),
        wv=rng.standard_normal((dim, dim)) / math.sqrt(dim),
        lam_q1=lam_scale * rng.standard_normal(half),
        lam_k1=lam_scale * rng.standard_normal(half),
        lam_q2=lam_scale * rng.standard_normal(half),
        lam_k2=lam_scale * rng.standard_normal(half),
        lam_init=lam_init,
        u=u,
        scale_width=scale_width,
    )


def softmax_rows(m) -> np.ndarray:
    """Row softmax with max-subtraction; -inf entries map to exactly 0."""
    m = np.asarray(m, dtype=np.float64)
    if np.any(np.isnan(m)) or np.any(np.isposinf(m)):
        raise ValueError("logits must be finite or -inf")
    if np.any(np.all(np.isneginf(m), axis=-1)):
        raise DegenerateInputError("softmax row is fully masked")
    mx = np.max(m, axis=-1, keepdims=True)
    z = np.exp(m - mx)
    return z / z.sum(axis=-1, keepdims=True)


def _softmax_vjp(s, ds):
    # rows: dz = s * (ds - sum(ds * s)); masked positions have s == 0 -> dz == 0
    return s * (ds - np.sum(ds * s, axis=-1, keepdims=True))


def project_qkv(x, p: AttentionParams):
    """Linear projections with the query/key column split: returns
    (q1, q2, k1, k2, v) with q1..k2 of width d/2 and v of width d."""
    x = np.asarray(x, dtype=np.float64)
    d = p.dim
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"x must be (n, {d}), got {x.shape}")
    half = d // 2
    q = x @ p.wq
    k = x @ p.wk
    v = x @ p.wv
    return q[:, :half], q[:, half:], k[:, :half], k[:, half:], v


def lambda_value(p: AttentionParams) -> float:
    """exp(lam_q1 . lam_k1) - exp(lam_q2 . lam_k2) + lam_init."""
    e1 = math.exp(float(np.dot(p.lam_q1, p.lam_k1)))
    e2 = math.exp(float(np.dot(p.lam_q2, p.lam_k2)))
    lam = e1 - e2 + p.lam_init
    if not math.isfinite(lam):
        raise OverflowError("lambda reparameterization overflowed")
    return lam


def topk_mask(counts, n: int) -> np.ndarray:
    """Boolean (n, n) mask keeping the first counts[i] positions of row i.

    Columns are assumed relevance-ordered (the kNN rank order).  The diagonal
    is always kept, so every row keeps at least one position.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (n,):
        raise ValueError(f"counts must have length {n}")
    if np.any(counts < 1) or np.any(counts > n):
        raise ValueError(f"keep counts must lie in [1, {n}]")
    m = np.arange(n)[None, :] < counts[:, None]
    m[np.arange(n), np.arange(n)] = True
    return m


def _check_mask(mask, n):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n, n):
        raise ValueError(f"mask must be ({n}, {n}), got {mask.shape}")
    if not np.all(mask.any(axis=1)):
        raise DegenerateInputError("mask leaves a row with no kept positions")
    return mask


def _masked(z, mask):
    return z if mask is None else np.where(mask, z, -np.inf)


# ---------------------------------------------------------------------------
# vanilla attention (full-width q/k, single softmax)

def _vanilla_forward(x, p, mask=None, v=None):
    x = np.asarray(x, dtype=np.float64)
    d = p.dim
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"x must be (n, {d}), got {x.shape}")
    if mask is not None:
        mask = _check_mask(mask, x.shape[0])
    q = x @ p.wq
    k = x @ p.wk
    vv = x @ p.wv if v is None else np.asarray(v, dtype=np.float64)
    scale = math.sqrt(d)
    s = softmax_rows(_masked(q @ k.T / scale, mask))
    out = s @ vv
    cache = (x, p, mask, q, k, vv, scale, s, v is not None)
    return out, cache


def _vanilla_backward(dout, cache):
    x, p, mask, q, k, vv, scale, s, v_override = cache
    ds = dout @ vv.T
    dv = s.T @ dout
    dz = _softmax_vjp(s, ds) / scale
    dq = dz @ k
    dk = dz.T @ q
    grads = {
        "wq": x.T @ dq,
        "wk": x.T @ dk,
        "x": dq @ p.wq.T + dk @ p.wk.T,
    }
    if v_override:
        grads["wv"] = np.zeros_like(p.wv)
        grads["v"] = dv
    else:
        grads["wv"] = x.T @ dv
        grads["x"] = grads["x"] + dv @ p.wv.T
    return grads


def vanilla_attention(x, p: AttentionParams, mask=None, v=None) -> np.ndarray:
    """Scaled dot-product attention softmax(QK^T / sqrt(d)) V."""
    return _vanilla_forward(x, p, mask, v)[0]


def vanilla_attention_vjp(x, p, dout, mask=None, v=None):
    _, cache = _vanilla_forward(x, p, mask, v)
    return _vanilla_backward(np.asarray(dout, dtype=np.float64), cache)


# ---------------------------------------------------------------------------
# differential attention (split q/k, difference of two softmax maps)

def _diff_scale(p):
    return math.sqrt(p.dim // 2 if p.scale_width == "half" else p.dim)


def _diff_forward(x, p, mask=None, v=None):
    x = np.asarray(x, dtype=np.float64)
    if mask is not None:
        mask = _check_mask(mask, x.shape[0])
    q1, q2, k1, k2, vv = project_qkv(x, p)
    if v is not None:
        vv = np.asarray(v, dtype=np.float64)
    scale = _diff_scale(p)
    s1 = softmax_rows(_masked(q1 @ k1.T / scale, mask))
    s2 = softmax_rows(_masked(q2 @ k2.T / scale, mask))
    lam = lambda_value(p)
    coeff = s1 - lam * s2
    out = coeff @ vv
    cache = (x, p, mask, q1, q2, k1, k2, vv, scale, s1, s2, lam, v is not None)
    return out, cache


def _diff_backward(dout, cache):
    x, p, mask, q1, q2, k1, k2, vv, scale, s1, s2, lam, v_override = cache
    coeff = s1 - lam * s2
    dcoeff = dout @ vv.T
    dv = coeff.T @ dout
    dlam = -float(np.sum(dcoeff * s2))
    dz1 = _softmax_vjp(s1, dcoeff) / scale
    dz2 = _softmax_vjp(s2, -lam * dcoeff) / scale
    dq1 = dz1 @ k1
    dk1 = dz1.T @ q1
    dq2 = dz2 @ k2
    dk2 = dz2.T @ q2
    dq = np.concatenate([dq1, dq2], axis=1)
    dk = np.concatenate([dk1, dk2], axis=1)
    e1 = math.exp(float(np.dot(p.lam_q1, p.lam_k1)))
    e2 = math.exp(float(np.dot(p.lam_q2, p.lam_k2)))
    grads = {
        "wq": x.T @ dq,
        "wk": x.T @ dk,
        "x": dq @ p.wq.T + dk @ p.wk.T,
        "lam_q1": dlam * e1 * p.lam_k1,
        "lam_k1": dlam * e1 * p.lam_q1,
        "lam_q2": -dlam * e2 * p.lam_k2,
        "lam_k2": -dlam * e2 * p.lam_q2,
    }
    if v_override:
        grads["wv"] = np.zeros_like(p.wv)
        grads["v"] = dv
    else:
        grads["wv"] = x.T @ dv
        grads["x"] = grads["x"] + dv @ p.wv.T
    return grads


def diff_attention(x, p: AttentionParams, v=None) -> np.ndarray:
    """(S(Q1 K1^T / s) - lambda S(Q2 K2^T / s)) V; coefficient rows sum to 1 - lambda."""
    return _diff_forward(x, p, None, v)[0]


def diff_attention_vjp(x, p, dout, v=None):
    _, cache = _diff_forward(x, p, None, v)
    return _diff_backward(np.asarray(dout, dtype=np.float64), cache)


def sparse_diff_attention(x, p: AttentionParams, mask, v=None) -> np.ndarray:
    """Differential attention with the mask applied inside both softmaxes.

    Masked positions get exactly zero weight in both maps; with an all-keep
    mask the output equals :func:`diff_attention` bitwise.
    """
    return _diff_forward(x, p, mask, v)[0]


def sparse_diff_attention_vjp(x, p, dout, mask, v=None):
    _, cache = _diff_forward(x, p, mask, v)
    return _diff_backward(np.asarray(dout, dtype=np.float64), cache)


# ---------------------------------------------------------------------------
# mixture of three sparse arms at keep counts k - u, k, k + u

def _moe_masks(counts, n, u):
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (n,):
        raise ValueError(f"counts must have length {n}")
    if np.any(counts < 1):
        raise ValueError("keep counts must be >= 1")
    below = np.clip(counts - u, 1, n)
    mid = np.clip(counts, 1, n)
    above = np.clip(counts + u, 1, n)
    return topk_mask(below, n), topk_mask(mid, n), topk_mask(above, n)


def _moe_forward(x, p, counts, v=None):
    x = np.asarray(x, dtype=np.float64)
    masks = _moe_masks(counts, x.shape[0], p.u)
    arms = [_diff_forward(x, p, m, v) for m in masks]
    out = sum(float(p.moe[a]) * arms[a][0] for a in range(3))
    return out, (p, arms)


def _moe_backward(dout, cache):
    p, arms = cache
    grads = None
    dmoe = np.zeros(3)
    for a in range(3):
        arm_out, arm_cache = arms[a]
        dmoe[a] = float(np.sum(dout * arm_out))
        arm_grads = _diff_backward(float(p.moe[a]) * dout, arm_cache)
        if grads is None:
            grads = arm_grads
        else:
            for key, val in arm_grads.items():
                grads[key] = grads[key] + val
    grads["moe"] = dmoe
    return grads


def moe_sdt_attention(x, p: AttentionParams, topk_row_counts, v=None) -> np.ndarray:
    """alpha/beta/gamma mixture of sparse arms with masks at k-u, k, k+u
    (clamped to [1, n]) built from per-row keep counts."""
    return _moe_forward(x, p, topk_row_counts, v)[0]


def moe_sdt_attention_vjp(x, p, dout, topk_row_counts, v=None):
    _, cache = _moe_forward(x, p, topk_row_counts, v)
    return _moe_backward(np.asarray(dout, dtype=np.float64), cache)


def attention_coefficients(x, p: AttentionParams, variant: str, mask=None, counts=None):
    """The effective coefficient matrix applied to V, for invariant checks."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if variant == "vanilla":
        q = x @ p.wq
        k = x @ p.wk
        if mask is not None:
            mask = _check_mask(mask, n)
        return softmax_rows(_masked(q @ k.T / math.sqrt(p.dim), mask))
    if variant in ("diff", "sdt"):
        if variant == "sdt" and mask is None:
            raise ValueError("sdt needs a mask")
        q1, q2, k1, k2, _ = project_qkv(x, p)
        scale = _diff_scale(p)
        if mask is not None:
            mask = _check_mask(mask, n)
        s1 = softmax_rows(_masked(q1 @ k1.T / scale, mask))
        s2 = softmax_rows(_masked(q2 @ k2.T / scale, mask))
        return s1 - lambda_value(p) * s2
    if variant == "moe-sdt":
        if counts is None:
            raise ValueError("moe-sdt needs per-row keep counts")
        masks = _moe_masks(counts, n, p.u)
        return sum(
            float(p.moe[a]) * attention_coefficients(x, p, "sdt", mask=masks[a])
            for a in range(3)
        )
    raise ValueError(f"unknown attention variant {variant!r}")


# ---------------------------------------------------------------------------
# finite-difference gradient checking

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def grad_check(fn, params, tolerance=1e-4, step=1e-5) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``fn`` maps a dict of float64 arrays to ``(scalar_loss, grads_dict)``.
    The per-tensor relative error is
    ``max|analytic - numeric| / max(1e-6, |analytic|_inf, |numeric|_inf)``.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = fn(params)
    per_param = {}
    for name, value in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {name}")
        numeric = np.zeros_like(value, dtype=np.float64)
        flat = value.reshape(-1)
        num_flat = numeric.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up, _ = fn(params)
            flat[idx] = orig - step
            down, _ = fn(params)
            flat[idx] = orig
            num_flat[idx] = (up - down) / (2.0 * step)
        denom = max(1e-6, float(np.max(np.abs(g))), float(np.max(np.abs(numeric))))
        per_param[name] = float(np.max(np.abs(g - numeric))) / denom
    worst = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(max_rel_error=worst, per_param=per_param, tolerance=tolerance)
