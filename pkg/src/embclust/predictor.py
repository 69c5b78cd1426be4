"""Adaptive neighbor discovery: boundary prediction and pair scoring.

Each node's K ranked neighbors become a token sequence; a small encoder
scores every position and the predicted neighbor count is one plus the
argmax.  Ground truth comes from maximizing prefix F1 against the same-label
set inside the K list.  A second model scores node pairs through the union
of their truncated neighborhoods and a sigmoid head; scores at or above the
threshold keep the edge.

Training is plain SGD with momentum and weight decay over the hand-written
backward passes; runs are bit-reproducible given the config seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import encoder as enc
from .edges import EdgeProbTable
from .embeddings import UNLABELED
from .errors import FormatError, TrainingDivergedError
from .knn import KnnGraph

SEQUENCE_MAGIC = b"DCSQ"
_SEQ_HEADER = struct.Struct("<4sHQII")

BOUNDARY_FEATURES = 4  # similarity, edge probability, neighborhood jaccard, rank
PAIR_FEATURES = 6


@dataclass(frozen=True)
class NeighborSequence:
    """Token matrix for one center node; token 0 is the self-neighbor."""

    center: int
    tokens: np.ndarray
    true_k: int | None = None

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.float64)
        if tokens.ndim != 2:
            raise ValueError("tokens must be 2d")
        object.__setattr__(self, "tokens", tokens)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


@dataclass(frozen=True)
class PairScoreThreshold:
    eta: float = 0.90

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")


def label_topk(g: KnnGraph, labels) -> np.ndarray:
    """Best prefix length per node by F1 against same-label nodes in the K list.

    For node i, candidates are prefix lengths k in [1, K]; precision counts
    same-label nodes in the prefix, recall is against all same-label nodes
    within the K list (self included).  Ties resolve to the smallest k.
    """
    labels = np.asarray(labels)
    if labels.shape != (g.n,):
        raise ValueError(f"labels must have length {g.n}")
    if np.any(labels == UNLABELED):
        raise ValueError("label_topk requires every node to be labeled")
    same = labels[g.neighbors] == labels[:, None]
    tp = np.cumsum(same, axis=1, dtype=np.float64)
    total = same.sum(axis=1, dtype=np.float64)
    ks = np.arange(1, g.k + 1, dtype=np.float64)
    f1 = 2.0 * tp / (ks[None, :] + total[:, None])
    return (np.argmax(f1, axis=1) + 1).astype(np.int64)


def _jaccard_row(g: KnnGraph, member_row, i):
    # |N_i & N_j| for every neighbor j of i, via membership lookups
    sub = g.neighbors[g.neighbors[i]]
    inter = member_row[sub].sum(axis=1, dtype=np.float64)
    return inter / (2.0 * g.k - inter)


def encode_all(g: KnnGraph, table: EdgeProbTable) -> list[NeighborSequence]:
    """Token sequences for every node: (a_ij, p_ij, jaccard, rank / K)."""
    if table.graph is not g:
        raise ValueError("table was built over a different graph")
    n, k = g.n, g.k
    rank = np.arange(k, dtype=np.float64) / k
    member = np.zeros((n, n), dtype=bool)
    member[np.arange(n)[:, None], g.neighbors] = True
    out = []
    for i in range(n):
        jac = _jaccard_row(g, member[i], i)
        tokens = np.column_stack([g.sims[i], table.norm[i], jac, rank])
        out.append(NeighborSequence(center=i, tokens=tokens))
    return out


def encode_sequence(g: KnnGraph, table: EdgeProbTable, i: int) -> NeighborSequence:
    """Token sequence for one node; deterministic function of the graph."""
    if table.graph is not g:
        raise ValueError("table was built over a different graph")
    i = int(i)
    if not 0 <= i < g.n:
        raise ValueError(f"node {i} out of range")
    member = np.zeros(g.n, dtype=bool)
    member[g.neighbors[i]] = True
    jac = _jaccard_row(g, member, i)
    rank = np.arange(g.k, dtype=np.float64) / g.k
    tokens = np.column_stack([g.sims[i], table.norm[i], jac, rank])
    return NeighborSequence(center=i, tokens=tokens)


def mask_counts(tokens) -> np.ndarray:
    """Keep-count heuristic for the sparse variants: the number of tokens
    whose similarity feature clears the midpoint of the row's range."""
    sims = np.asarray(tokens)[:, 0]
    mid = 0.5 * (float(sims.max()) + float(sims.min()))
    count = max(int(np.sum(sims > mid)), 1)
    return np.full(len(sims), count, dtype=np.int64)


class _SequenceModel:
    """Input projection -> encoder -> task head, trained with manual backprop."""

    kind = "base"

    def __init__(self, cfg: enc.EncoderConfig, feat_dim, seed=0):
        self.cfg = cfg
        self.feat_dim = feat_dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params = {
            "input.w": rng.standard_normal((feat_dim, cfg.dim)) / np.sqrt(feat_dim),
            "input.b": np.zeros(cfg.dim),
        }
        self.params.update(enc.init_encoder_params(cfg, rng))
        self.params["head.w"] = rng.standard_normal(cfg.dim) / np.sqrt(cfg.dim)
        self.params["head.b"] = np.zeros(())

    def _encode(self, tokens):
        tokens = np.asarray(tokens, dtype=np.float64)
        counts = None
        if self.cfg.variant in ("sdt", "moe-sdt"):
            counts = mask_counts(tokens)
        h0 = tokens @ self.params["input.w"] + self.params["input.b"]
        y, caches = enc.encoder_forward(self.cfg, self.params, h0, counts)
        return tokens, h0, y, caches

    def _backward_body(self, tokens, dy, caches, grads):
        dh0, enc_grads = enc.encoder_backward(self.cfg, self.params, dy, caches)
        for key, val in enc_grads.items():
            grads[key] = grads.get(key, 0.0) + val
        grads["input.w"] = grads.get("input.w", 0.0) + tokens.T @ dh0
        grads["input.b"] = grads.get("input.b", 0.0) + dh0.sum(axis=0)
        return grads

    def save(self, path):
        config = {
            "kind": self.kind,
            "feat_dim": self.feat_dim,
            "seed": self.seed,
            "encoder": enc.config_to_dict(self.cfg),
        }
        enc.save_checkpoint(path, config, self.params)

    @classmethod
    def load(cls, path):
        config, params = enc.load_checkpoint(path)
        if config.get("kind") != cls.kind:
            raise FormatError(f"checkpoint holds a {config.get('kind')!r} model")
        model = cls(enc.config_from_dict(config["encoder"]),
                    seed=config.get("seed", 0))
        if set(params) != set(model.params):
            raise FormatError("checkpoint parameter names do not match the model")
        model.params = params
        return model


class BoundaryModel(_SequenceModel):
    """Per-position boundary scorer over a node's ranked neighbor tokens."""

    kind = "boundary"

    def __init__(self, cfg=None, seed=0):
        cfg = cfg or enc.EncoderConfig(layers=2, heads=2, dim=32)
        super().__init__(cfg, BOUNDARY_FEATURES, seed)

    def logits(self, tokens):
        _, _, y, _ = self._encode(tokens)
        return y @ self.params["head.w"] + float(self.params["head.b"])

    def predict(self, tokens) -> int:
        return int(np.argmax(self.logits(tokens))) + 1

    def loss_and_grads(self, tokens, target):
        tokens, h0, y, caches = self._encode(tokens)
        target = int(target) - 1  # boundary positions are 1-based
        logits = y @ self.params["head.w"] + float(self.params["head.b"])
        shifted = logits - logits.max()
        probs = np.exp(shifted)
        probs /= probs.sum()
        loss = -float(np.log(max(probs[target], 1e-300)))
        dlogits = probs.copy()
        dlogits[target] -= 1.0
        grads = {
            "head.w": y.T @ dlogits,
            "head.b": np.asarray(dlogits.sum()),
        }
        dy = np.outer(dlogits, self.params["head.w"])
        return loss, self._backward_body(tokens, dy, caches, grads)


class PairModel(_SequenceModel):
    """Mean-pooled encoder with a sigmoid head scoring a pair's joint tokens."""

    kind = "pair"

    def __init__(self, cfg=None, seed=0):
        cfg = cfg or enc.EncoderConfig(layers=2, heads=2, dim=32)
        super().__init__(cfg, PAIR_FEATURES, seed)

    def score(self, tokens) -> float:
        _, _, y, _ = self._encode(tokens)
        pooled = y.mean(axis=0)
        z = float(pooled @ self.params["head.w"]) + float(self.params["head.b"])
        return float(1.0 / (1.0 + np.exp(-np.clip(z, -700, 700))))

    def loss_and_grads(self, tokens, label):
        tokens, h0, y, caches = self._encode(tokens)
        pooled = y.mean(axis=0)
        z = float(pooled @ self.params["head.w"]) + float(self.params["head.b"])
        s = 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700)))
        label = float(label)
        eps = 1e-12
        loss = -(label * np.log(max(s, eps)) + (1 - label) * np.log(max(1 - s, eps)))
        dz = s - label
        grads = {
            "head.w": dz * pooled,
            "head.b": np.asarray(dz),
        }
        dpooled = dz * self.params["head.w"]
        dy = np.tile(dpooled / y.shape[0], (y.shape[0], 1))
        return float(loss), self._backward_body(tokens, dy, caches, grads)


def train(model, dataset, cfg: TrainConfig):
    """Minibatch SGD with momentum; weight decay folds into the gradient.

    ``dataset`` is a list of (tokens, target) tuples.  Updates parameters in
    place and returns the per-epoch mean loss curve.  Deterministic given
    ``cfg.seed``; raises :class:`TrainingDivergedError` on a non-finite loss.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc = {k: np.zeros_like(v) for k, v in model.params.items()}
            for idx in batch:
                tokens, target = dataset[int(idx)]
                try:
                    loss, grads = model.loss_and_grads(tokens, target)
                except (OverflowError, FloatingPointError) as exc:
                    raise TrainingDivergedError(epoch, f"epoch {epoch}: {exc}") from exc
                epoch_loss += loss
                for key, val in grads.items():
                    acc[key] += val
            scale = 1.0 / len(batch)
            for key, param in model.params.items():
                g = acc[key] * scale + cfg.weight_decay * param
                velocity[key] = cfg.momentum * velocity[key] + g
                param -= cfg.lr * velocity[key]
                if not np.all(np.isfinite(param)):
                    raise TrainingDivergedError(
                        epoch, f"epoch {epoch}: parameter {key} became non-finite")
        mean = epoch_loss / len(dataset)
        if not np.isfinite(mean):
            raise TrainingDivergedError(epoch)
        curve.append(float(mean))
    return curve


def predict_topk(model: BoundaryModel, seq: NeighborSequence) -> int:
    """Predicted neighbor count: one plus the argmax boundary position."""
    return model.predict(seq.tokens)


def boundary_dataset(sequences, true_ks):
    return [(seq.tokens, int(tk)) for seq, tk in zip(sequences, true_ks)]


def pair_tokens(table: EdgeProbTable, i: int, j: int, khat) -> np.ndarray:
    """Joint token set over the union of the two truncated neighborhoods.

    Member h contributes (a_ih, a_jh, p_ih, p_jh, h in N_i, h in N_j), with
    similarity/probability read as 0 when h is outside the respective row.
    Members order as i's neighborhood first, then j's remainder.
    """
    g = table.graph
    if g is None:
        raise ValueError("pair tokens need a graph-backed table")
    khat = np.asarray(khat, dtype=np.int64)
    i, j = int(i), int(j)
    ki, kj = int(khat[i]), int(khat[j])
    ni = [int(x) for x in g.neighbors[i][:ki]]
    nj = [int(x) for x in g.neighbors[j][:kj]]
    seen = set(ni)
    members = ni + [h for h in nj if h not in seen]
    pos = table.position_maps()
    pos_i, pos_j = pos[i], pos[j]
    rows = []
    for h in members:
        si = pos_i.get(h)
        sj = pos_j.get(h)
        rows.append([
            g.sims[i, si] if si is not None else 0.0,
            g.sims[j, sj] if sj is not None else 0.0,
            table.norm[i, si] if si is not None else 0.0,
            table.norm[j, sj] if sj is not None else 0.0,
            1.0 if si is not None and si < ki else 0.0,
            1.0 if sj is not None and sj < kj else 0.0,
        ])
    return np.asarray(rows, dtype=np.float64)


def predict_pair_score(model: PairModel, table: EdgeProbTable, i, j, khat) -> float:
    """Sigmoid relationship score for a node pair, in [0, 1]."""
    return model.score(pair_tokens(table, i, j, khat))


def build_pair_dataset(table: EdgeProbTable, khat, labels, seed=0, max_pairs=2000):
    """Candidate pairs from truncated neighborhoods, labeled same/different.

    Sampling is seeded and roughly class-balanced up to availability.  When
    the neighborhoods are too pure to supply negatives (or too noisy to
    supply positives), random node pairs of the missing polarity fill the
    quota so the scorer always sees both classes.
    """
    g = table.graph
    labels = np.asarray(labels)
    khat = np.asarray(khat, dtype=np.int64)
    pos_pairs = []
    neg_pairs = []
    for i in range(g.n):
        for slot in range(1, int(khat[i])):
            j = int(g.neighbors[i, slot])
            if i < j:
                (pos_pairs if labels[i] == labels[j] else neg_pairs).append((i, j))
    rng = np.random.default_rng(seed)
    rng.shuffle(pos_pairs)
    rng.shuffle(neg_pairs)
    half = max_pairs // 2

    def supplement(pairs, want_same, quota):
        have = {tuple(p) for p in pairs}
        attempts = 0
        while len(pairs) < quota and attempts < 50 * quota:
            attempts += 1
            i, j = (int(x) for x in rng.integers(0, g.n, size=2))
            if i == j:
                continue
            key = (min(i, j), max(i, j))
            if key in have or (labels[i] == labels[j]) != want_same:
                continue
            have.add(key)
            pairs.append(key)
        return pairs

    take_pos = supplement(pos_pairs[:half], True, half)
    take_neg = supplement(neg_pairs[:half], False, half)
    dataset = []
    for i, j in take_pos:
        dataset.append((pair_tokens(table, i, j, khat), 1.0))
    for i, j in take_neg:
        dataset.append((pair_tokens(table, i, j, khat), 0.0))
    order = rng.permutation(len(dataset))
    return [dataset[int(k)] for k in order]


# ---------------------------------------------------------------------------
# sequence cache file: magic, version, count, K, features, then records

def save_sequences(path, sequences) -> None:
    if not sequences:
        raise ValueError("nothing to save")
    k, feat = sequences[0].tokens.shape
    with open(path, "wb") as fh:
        fh.write(_SEQ_HEADER.pack(SEQUENCE_MAGIC, 1, len(sequences), k, feat))
        for seq in sequences:
            if seq.tokens.shape != (k, feat):
                raise ValueError("sequences must share one token shape")
            true_k = -1 if seq.true_k is None else int(seq.true_k)
            fh.write(struct.pack("<Ii", seq.center, true_k))
            fh.write(np.ascontiguousarray(seq.tokens, dtype="<f4").tobytes())


def load_sequences(path) -> list[NeighborSequence]:
    data = Path(path).read_bytes()
    if len(data) < _SEQ_HEADER.size:
        raise FormatError("file too short for header", offset=len(data))
    magic, version, count, k, feat = _SEQ_HEADER.unpack_from(data, 0)
    if magic != SEQUENCE_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != 1:
        raise FormatError(f"unsupported version {version}", offset=4)
    record = 8 + 4 * k * feat
    expected = _SEQ_HEADER.size + count * record
    if len(data) != expected:
        raise FormatError(f"expected {expected} bytes, got {len(data)}",
                          offset=min(len(data), expected))
    out = []
    off = _SEQ_HEADER.size
    for _ in range(count):
        center, true_k = struct.unpack_from("<Ii", data, off)
        off += 8
        tokens = np.frombuffer(data, dtype="<f4", count=k * feat, offset=off)
        off += 4 * k * feat
        out.append(NeighborSequence(
            center=center,
            tokens=tokens.reshape(k, feat).astype(np.float64),
            true_k=None if true_k < 0 else true_k,
        ))
    return out
