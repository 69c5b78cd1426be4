"""Encoder stack: pre-norm layers of multi-head attention + feed-forward.

Multi-head here means each head owns an independent parameter set over a
(dim / heads)-wide input slice; head outputs are concatenated and passed
through an output projection.  Each head runs one of the attention variants
from :mod:`embclust.attention`, so the per-head lambda vectors and mixture
weights train independently.

Everything is functional: parameters live in a flat ordered dict, forward
passes return caches, and ``encoder_backward`` replays them in reverse.
Checkpoints serialize the parameter dict (float32) behind a magic header.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import attention as att
from .errors import FormatError

CHECKPOINT_MAGIC = b"DCAT"
CHECKPOINT_VERSION = 1

VARIANTS = ("vanilla", "diff", "sdt", "moe-sdt")

_NORM_EPS = 1e-6


@dataclass(frozen=True)
class EncoderConfig:
    layers: int
    heads: int
    dim: int
    variant: str = "diff"
    u: int = 5
    lam_init: float = 0.8
    scale_width: str = "half"
    ffn_ratio: int = 2

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.heads < 1 or self.dim % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide dim ({self.dim})")
        head_dim = self.dim // self.heads
        if self.variant != "vanilla" and head_dim % 2 != 0:
            raise ValueError(
                f"differential variants need an even head width, got {head_dim}"
            )
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def head_dim(self):
        return self.dim // self.heads


def init_encoder_params(cfg: EncoderConfig, rng) -> dict:
    """Fresh parameter dict; iteration order is the checkpoint declaration order."""
    params: dict[str, np.ndarray] = {}
    d = cfg.dim
    hd = cfg.head_dim
    for li in range(cfg.layers):
        pre = f"layer{li}."
        params[pre + "norm1.g"] = np.ones(d)
        for h in range(cfg.heads):
            hp = pre + f"head{h}."
            params[hp + "wq"] = rng.standard_normal((hd, hd)) / np.sqrt(hd)
            params[hp + "wk"] = rng.standard_normal((hd, hd)) / np.sqrt(hd)
            params[hp + "wv"] = rng.standard_normal((hd, hd)) / np.sqrt(hd)
            if cfg.variant != "vanilla":
                half = hd // 2
                params[hp + "lam_q1"] = 0.1 * rng.standard_normal(half)
                params[hp + "lam_k1"] = 0.1 * rng.standard_normal(half)
                params[hp + "lam_q2"] = 0.1 * rng.standard_normal(half)
                params[hp + "lam_k2"] = 0.1 * rng.standard_normal(half)
            if cfg.variant == "moe-sdt":
                params[hp + "moe"] = np.full(3, 1.0 / 3.0)
        params[pre + "attn.wo"] = rng.standard_normal((d, d)) / np.sqrt(d)
        params[pre + "attn.bo"] = np.zeros(d)
        params[pre + "norm2.g"] = np.ones(d)
        f = cfg.ffn_ratio * d
        params[pre + "ffn.w1"] = rng.standard_normal((d, f)) / np.sqrt(d)
        params[pre + "ffn.b1"] = np.zeros(f)
        params[pre + "ffn.w2"] = rng.standard_normal((f, d)) / np.sqrt(f)
        params[pre + "ffn.b2"] = np.zeros(d)
    return params


class _PlainQKV:
    """Projection-only parameter view for vanilla heads (no lambda machinery)."""

    __slots__ = ("wq", "wk", "wv", "dim")

    def __init__(self, wq, wk, wv):
        self.wq = wq
        self.wk = wk
        self.wv = wv
        self.dim = wq.shape[0]


def _head_params(cfg, params, li, h):
    hp = f"layer{li}.head{h}."
    if cfg.variant == "vanilla":
        return _PlainQKV(params[hp + "wq"], params[hp + "wk"], params[hp + "wv"])
    return att.AttentionParams(
        wq=params[hp + "wq"], wk=params[hp + "wk"], wv=params[hp + "wv"],
        lam_q1=params[hp + "lam_q1"], lam_k1=params[hp + "lam_k1"],
        lam_q2=params[hp + "lam_q2"], lam_k2=params[hp + "lam_k2"],
        lam_init=cfg.lam_init,
        moe=params.get(hp + "moe", np.full(3, 1.0 / 3.0)),
        u=cfg.u, scale_width=cfg.scale_width,
    )


def _rmsnorm_forward(x, g):
    r = np.sqrt(np.mean(x * x, axis=1, keepdims=True) + _NORM_EPS)
    y = x / r * g
    return y, (x, g, r)


def _rmsnorm_backward(dy, cache):
    x, g, r = cache
    d = x.shape[1]
    dg = np.sum(dy * x / r, axis=0)
    inner = np.sum(dy * g * x, axis=1, keepdims=True)
    dx = dy * g / r - x * inner / (d * r**3)
    return dx, dg


def _head_attention_forward(cfg, x_slice, hp, counts):
    if cfg.variant == "vanilla":
        out, cache = att._vanilla_forward(x_slice, hp)
        return out, ("vanilla", cache)
    if cfg.variant == "diff":
        out, cache = att._diff_forward(x_slice, hp)
        return out, ("diff", cache)
    if cfg.variant == "sdt":
        if counts is None:
            raise ValueError("sdt variant needs per-row keep counts")
        mask = att.topk_mask(np.asarray(counts), x_slice.shape[0])
        out, cache = att._diff_forward(x_slice, hp, mask)
        return out, ("diff", cache)
    if counts is None:
        raise ValueError("moe-sdt variant needs per-row keep counts")
    out, cache = att._moe_forward(x_slice, hp, counts)
    return out, ("moe", cache)


def _head_attention_backward(kind, dout, cache):
    if kind == "vanilla":
        return att._vanilla_backward(dout, cache)
    if kind == "diff":
        return att._diff_backward(dout, cache)
    return att._moe_backward(dout, cache)


def encoder_forward(cfg: EncoderConfig, params, x, counts=None):
    """Run the stack; a zero-layer stack is the identity.

    ``counts`` (per-row keep counts) is required for the sparse variants.
    Returns (output, cache) where the cache replays in ``encoder_backward``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.dim:
        raise ValueError(f"x must be (n, {cfg.dim}), got {x.shape}")
    caches = []
    h = x
    hd = cfg.head_dim
    for li in range(cfg.layers):
        pre = f"layer{li}."
        y1, norm1_cache = _rmsnorm_forward(h, params[pre + "norm1.g"])
        head_outs = []
        head_caches = []
        for hi in range(cfg.heads):
            sl = slice(hi * hd, (hi + 1) * hd)
            hp = _head_params(cfg, params, li, hi)
            out, cache = _head_attention_forward(cfg, y1[:, sl], hp, counts)
            head_outs.append(out)
            head_caches.append(cache)
        cat = np.concatenate(head_outs, axis=1)
        attn_out = cat @ params[pre + "attn.wo"] + params[pre + "attn.bo"]
        a = h + attn_out
        y2, norm2_cache = _rmsnorm_forward(a, params[pre + "norm2.g"])
        pre_act = y2 @ params[pre + "ffn.w1"] + params[pre + "ffn.b1"]
        hidden = np.maximum(pre_act, 0.0)
        ffn_out = hidden @ params[pre + "ffn.w2"] + params[pre + "ffn.b2"]
        new_h = a + ffn_out
        caches.append((h, norm1_cache, head_caches, cat, a, norm2_cache, pre_act, hidden, y1, y2))
        h = new_h
    return h, caches


def encoder_backward(cfg: EncoderConfig, params, dout, caches):
    """Reverse the stack; returns (dx, grads) with grads keyed like params."""
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dh = np.asarray(dout, dtype=np.float64)
    hd = cfg.head_dim
    for li in reversed(range(cfg.layers)):
        pre = f"layer{li}."
        (h_in, norm1_cache, head_caches, cat, a, norm2_cache,
         pre_act, hidden, y1, y2) = caches[li]
        # out = a + ffn(y2), y2 = norm2(a)
        d_ffn = dh
        grads[pre + "ffn.b2"] += d_ffn.sum(axis=0)
        grads[pre + "ffn.w2"] += hidden.T @ d_ffn
        d_hidden = d_ffn @ params[pre + "ffn.w2"].T
        d_pre = d_hidden * (pre_act > 0.0)
        grads[pre + "ffn.b1"] += d_pre.sum(axis=0)
        grads[pre + "ffn.w1"] += y2.T @ d_pre
        dy2 = d_pre @ params[pre + "ffn.w1"].T
        da_norm, dg2 = _rmsnorm_backward(dy2, norm2_cache)
        grads[pre + "norm2.g"] += dg2
        da = dh + da_norm
        # a = h_in + cat @ wo + bo
        grads[pre + "attn.bo"] += da.sum(axis=0)
        grads[pre + "attn.wo"] += cat.T @ da
        dcat = da @ params[pre + "attn.wo"].T
        dy1 = np.zeros_like(y1)
        for hi in range(cfg.heads):
            sl = slice(hi * hd, (hi + 1) * hd)
            kind, cache = head_caches[hi]
            head_grads = _head_attention_backward(kind, dcat[:, sl], cache)
            hp_name = pre + f"head{hi}."
            for key, val in head_grads.items():
                if key == "x":
                    dy1[:, sl] += val
                else:
                    full = hp_name + key
                    if full in grads:
                        grads[full] += val
            # vanilla heads have no lambda/moe entries; skips are intentional
        dh_norm, dg1 = _rmsnorm_backward(dy1, norm1_cache)
        grads[pre + "norm1.g"] += dg1
        dh = da + dh_norm
    return dh, grads


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, config block, shape table, f32 tensors

def save_checkpoint(path, config: dict, params: dict) -> None:
    """Serialize a parameter dict plus a small JSON config block."""
    cfg_blob = json.dumps(config, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)
        fh.write(struct.pack("<H", len(params)))
        for name, value in params.items():
            blob = name.encode()
            arr = np.asarray(value, dtype=np.float64)
            fh.write(struct.pack("<H", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
        for value in params.values():
            fh.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (config, params) with float64 tensors."""
    with open(path, "rb") as fh:
        data = fh.read()
    off = 0
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}", offset=0)
    off = 4
    (version,) = struct.unpack_from("<H", data, off)
    off += 2
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    (cfg_len,) = struct.unpack_from("<I", data, off)
    off += 4
    config = json.loads(data[off:off + cfg_len].decode())
    off += cfg_len
    (count,) = struct.unpack_from("<H", data, off)
    off += 2
    shapes = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + name_len].decode()
        off += name_len
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off) if ndim else ()
        off += 4 * ndim
        shapes.append((name, tuple(shape)))
    params = {}
    for name, shape in shapes:
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        need = 4 * size
        if off + need > len(data):
            raise FormatError(f"tensor {name} truncated", offset=off)
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=off)
        params[name] = arr.reshape(shape).astype(np.float64)
        off += need
    if off != len(data):
        raise FormatError("trailing bytes after tensors", offset=off)
    return config, params


def config_to_dict(cfg: EncoderConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: dict) -> EncoderConfig:
    return EncoderConfig(**d)
