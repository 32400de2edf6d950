"""Dual text encoders trained contrastively on mined context pairs.

Each tower is a mean-pooled token embedding followed by one linear
projection: small enough to gradient-check exactly, big enough to
separate dialogue contexts at desk scale. The query and key towers
share a vocabulary but never parameters. The loss is a softmax over the
anchor's positive against its explicit hard negative plus, by default,
every other sample in the batch (2B-1 negatives per anchor).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bm25 import tokenize
from .corpus import SEPARATORS, SerializedContext, assemble_context
from .errors import (
    ArtifactIOError,
    DimMismatchError,
    NonfiniteError,
    VersionMismatchError,
)
from .mining import TrainingPair

UNK = "⟨unk⟩"

_MAGIC = b"LDXENC\x00\x00"
_VERSION = 1


@dataclass
class EncoderParams:
    """One encoder tower. Arrays are float64; vocab maps token -> row."""

    vocab: dict[str, int]
    embedding: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray
    partner_fingerprint: bytes | None = None

    @property
    def dim(self) -> int:
        return self.proj_b.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, EncoderParams)
            and self.vocab == other.vocab
            and np.array_equal(self.embedding, other.embedding)
            and np.array_equal(self.proj_w, other.proj_w)
            and np.array_equal(self.proj_b, other.proj_b)
            and self.partner_fingerprint == other.partner_fingerprint
        )


@dataclass
class EncoderGrads:
    embedding: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray

    @classmethod
    def zeros_like(cls, p: EncoderParams) -> "EncoderGrads":
        return cls(
            np.zeros_like(p.embedding), np.zeros_like(p.proj_w), np.zeros_like(p.proj_b)
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for in-batch negatives")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def build_vocab(texts: list[str]) -> dict[str, int]:
    """UNK and separator tokens first, then tokens in first-seen order."""
    vocab = {UNK: 0}
    for sep in SEPARATORS:
        vocab.setdefault(sep, len(vocab))
    for text in texts:
        for token in tokenize(text):
            vocab.setdefault(token, len(vocab))
    return vocab


def init_params(vocab: dict[str, int], dim: int, rng: np.random.Generator) -> EncoderParams:
    """Uniform(-0.1, 0.1) embeddings; projection = 0.5 I plus small noise."""
    emb = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    proj_w = 0.5 * np.eye(dim) + 0.01 * rng.standard_normal((dim, dim))
    return EncoderParams(dict(vocab), emb, proj_w, np.zeros(dim))


def init_encoder_pair(vocab: dict[str, int], dim: int, seed: int) -> tuple[EncoderParams, EncoderParams]:
    """Fresh query/key towers (independent parameters, shared vocab),
    cross-stamped with each other's fingerprints."""
    rng = np.random.default_rng(seed)
    eq = init_params(vocab, dim, rng)
    ek = init_params(vocab, dim, rng)
    eq.partner_fingerprint = fingerprint(ek)
    ek.partner_fingerprint = fingerprint(eq)
    return eq, ek


def _forward(params: EncoderParams, text: str):
    ids = [params.vocab.get(t, 0) for t in tokenize(text)]
    if ids:
        pooled = params.embedding[ids].mean(axis=0)
    else:
        pooled = np.zeros(params.dim)
    return params.proj_w @ pooled + params.proj_b, pooled, ids


def encode(params: EncoderParams, ctx: SerializedContext | str) -> np.ndarray:
    """Mean-pool token embeddings, then project. Unknown tokens hit UNK;
    an empty token list pools to the zero vector."""
    text = ctx.text if isinstance(ctx, SerializedContext) else ctx
    return _forward(params, text)[0]


def similarity(q: np.ndarray, k: np.ndarray) -> float:
    """Raw dot product (no normalization)."""
    if q.shape != k.shape:
        raise DimMismatchError(f"vector dims differ: {q.shape} vs {k.shape}")
    return float(np.dot(q, k))


def pair_texts(
    pair: TrainingPair, delex: bool = True, include_prev_state: bool = True
) -> tuple[str, str, str]:
    """Assembled (anchor, positive, negative) texts for one pair."""
    return tuple(
        assemble_context(ctx, delex=delex, include_prev_state=include_prev_state).text
        for ctx in (pair.anchor, pair.positive, pair.negative)
    )


def _as_texts(batch, delex: bool, include_prev_state: bool) -> list[tuple[str, str, str]]:
    out = []
    for item in batch:
        if isinstance(item, TrainingPair):
            out.append(pair_texts(item, delex, include_prev_state))
        else:
            out.append(tuple(item))
    return out


def batch_similarities(
    eq: EncoderParams, ek: EncoderParams, batch, delex: bool = True, include_prev_state: bool = True
) -> np.ndarray:
    """The B x 2B similarity matrix the loss is computed over: anchor i
    against [positives..., negatives...]; column i is anchor i's target."""
    texts = _as_texts(batch, delex, include_prev_state)
    q = np.stack([_forward(eq, a)[0] for a, _, _ in texts])
    keys = [_forward(ek, p)[0] for _, p, _ in texts] + [_forward(ek, n)[0] for _, _, n in texts]
    return q @ np.stack(keys).T


def _nll_from_logits(logits: np.ndarray) -> float:
    n = logits.shape[0]
    row_max = logits.max(axis=1, keepdims=True)
    shifted = logits - row_max
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(n), np.arange(n)].mean())


def _eval_loss(eq, ek, texts, batch_size, include_other_negatives) -> float:
    """Mean loss over canonical (unshuffled) batches; no gradients.

    Used for the loss curve so the curve depends only on the parameters,
    not on an epoch's shuffle-dependent batch composition."""
    losses = []
    for start in range(0, len(texts), batch_size):
        chunk = texts[start : start + batch_size]
        logits = batch_similarities(eq, ek, chunk)
        if not include_other_negatives:
            n = len(chunk)
            keep = np.zeros_like(logits, dtype=bool)
            for i in range(n):
                keep[i, i] = keep[i, n + i] = True
            logits = np.where(keep, logits, -np.inf)
        losses.append(_nll_from_logits(logits))
    return float(np.mean(losses))


def batch_loss(
    eq: EncoderParams,
    ek: EncoderParams,
    batch,
    delex: bool = True,
    include_prev_state: bool = True,
    include_other_negatives: bool = True,
) -> tuple[float, EncoderGrads, EncoderGrads]:
    """Mean contrastive loss over the batch plus exact gradients.

    For anchor i the candidate set is its positive against its explicit
    negative plus (by default) every other sample in the batch; the loss
    is -log softmax of the positive, computed with log-sum-exp
    stabilization. Accepts TrainingPair items or raw
    (anchor, positive, negative) text triples.
    """
    texts = _as_texts(batch, delex, include_prev_state)
    n = len(texts)
    if n < 1:
        raise ValueError("batch must hold at least one pair")

    q_f = [_forward(eq, a) for a, _, _ in texts]
    k_f = [_forward(ek, p) for _, p, _ in texts] + [_forward(ek, ng) for _, _, ng in texts]
    q_mat = np.stack([f[0] for f in q_f])
    k_mat = np.stack([f[0] for f in k_f])
    logits = q_mat @ k_mat.T  # B x 2B; target for row i is column i

    mask = np.zeros_like(logits, dtype=bool)
    if not include_other_negatives:
        # keep only the anchor's own positive and explicit negative
        mask[:] = True
        for i in range(n):
            mask[i, i] = False
            mask[i, n + i] = False
        logits = np.where(mask, -np.inf, logits)

    row_max = logits.max(axis=1, keepdims=True)
    shifted = logits - row_max
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    losses = -log_probs[np.arange(n), np.arange(n)]
    loss = float(losses.mean())
    if not np.isfinite(loss):
        raise NonfiniteError(f"contrastive loss is not finite: {loss}")

    dlogits = exp / denom
    dlogits[np.arange(n), np.arange(n)] -= 1.0
    dlogits /= n
    if not include_other_negatives:
        dlogits[mask] = 0.0

    dq = dlogits @ k_mat
    dk = dlogits.T @ q_mat

    g_eq = EncoderGrads.zeros_like(eq)
    g_ek = EncoderGrads.zeros_like(ek)
    for i, (_, pooled, ids) in enumerate(q_f):
        _backprop(eq, g_eq, dq[i], pooled, ids)
    for j, (_, pooled, ids) in enumerate(k_f):
        _backprop(ek, g_ek, dk[j], pooled, ids)
    return loss, g_eq, g_ek


def _backprop(params: EncoderParams, grads: EncoderGrads, dv, pooled, ids) -> None:
    grads.proj_w += np.outer(dv, pooled)
    grads.proj_b += dv
    if ids:
        dpool = params.proj_w.T @ dv
        np.add.at(grads.embedding, ids, dpool / len(ids))


class _Optimizer:
    def __init__(self, cfg: TrainConfig, params: EncoderParams):
        self.cfg = cfg
        self.t = 0
        if cfg.optimizer == "adam":
            self.m = EncoderGrads.zeros_like(params)
            self.v = EncoderGrads.zeros_like(params)

    def step(self, params: EncoderParams, grads: EncoderGrads) -> None:
        lr = self.cfg.learning_rate
        if self.cfg.optimizer == "sgd":
            params.embedding -= lr * grads.embedding
            params.proj_w -= lr * grads.proj_w
            params.proj_b -= lr * grads.proj_b
            return
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        for name in ("embedding", "proj_w", "proj_b"):
            g = getattr(grads, name)
            m = getattr(self.m, name)
            v = getattr(self.v, name)
            m += (1 - b1) * (g - m)
            v += (1 - b2) * (g * g - v)
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            getattr(params, name)[...] -= lr * mhat / (np.sqrt(vhat) + eps)


def train(
    pairs: list[TrainingPair] | list[tuple[str, str, str]],
    cfg: TrainConfig,
    dim: int = 64,
    delex: bool = True,
    include_prev_state: bool = True,
    include_other_negatives: bool = True,
) -> tuple[EncoderParams, EncoderParams, list[float]]:
    """Contrastive training loop. Deterministic given cfg.seed.

    Returns the query tower, the key tower, and the per-epoch mean loss.
    """
    if not pairs:
        raise ValueError("need at least one training pair")
    texts = _as_texts(pairs, delex, include_prev_state)
    vocab = build_vocab([t for triple in texts for t in triple])
    eq, ek = init_encoder_pair(vocab, dim, cfg.seed)

    rng = np.random.default_rng(cfg.seed + 1)
    opt_q, opt_k = _Optimizer(cfg, eq), _Optimizer(cfg, ek)
    # curve[0] is the pre-training loss; one more entry per epoch
    curve = [_eval_loss(eq, ek, texts, cfg.batch_size, include_other_negatives)]
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(texts))
        for start in range(0, len(order), cfg.batch_size):
            batch = [texts[i] for i in order[start : start + cfg.batch_size]]
            try:
                _, g_eq, g_ek = batch_loss(
                    eq, ek, batch, delex, include_prev_state, include_other_negatives
                )
            except NonfiniteError as exc:
                raise NonfiniteError(
                    f"epoch {epoch} step {start // cfg.batch_size}: {exc}"
                ) from exc
            opt_q.step(eq, g_eq)
            opt_k.step(ek, g_ek)
        curve.append(_eval_loss(eq, ek, texts, cfg.batch_size, include_other_negatives))
    eq.partner_fingerprint = fingerprint(ek)
    ek.partner_fingerprint = fingerprint(eq)
    return eq, ek, curve


# --- persistence -------------------------------------------------------------


def _core_bytes(params: EncoderParams) -> bytes:
    chunks = [struct.pack("<II", params.dim, len(params.vocab))]
    for token, idx in sorted(params.vocab.items(), key=lambda kv: kv[1]):
        raw = token.encode("utf-8")
        chunks.append(struct.pack("<II", idx, len(raw)) + raw)
    for arr in (params.embedding, params.proj_w, params.proj_b):
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def fingerprint(params: EncoderParams) -> bytes:
    """SHA-256 over the core parameters (vocab + matrices); the partner
    stamp is excluded so pairing two towers is not circular."""
    return hashlib.sha256(_core_bytes(params)).digest()


def save_encoder(params: EncoderParams, path: str | Path) -> None:
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(_core_bytes(params))
        partner = params.partner_fingerprint or b""
        fh.write(struct.pack("<B", len(partner)))
        fh.write(partner)


def load_encoder(path: str | Path) -> EncoderParams:
    path = Path(path)
    if not path.is_file():
        raise ArtifactIOError(f"encoder file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < len(_MAGIC) + 4 or raw[: len(_MAGIC)] != _MAGIC:
        raise VersionMismatchError(f"{path} is not an encoder file")
    (version,) = struct.unpack_from("<I", raw, len(_MAGIC))
    if version != _VERSION:
        raise VersionMismatchError(f"unsupported encoder version {version}")
    off = len(_MAGIC) + 4
    try:
        dim, vsize = struct.unpack_from("<II", raw, off)
        off += 8
        vocab: dict[str, int] = {}
        for _ in range(vsize):
            idx, tlen = struct.unpack_from("<II", raw, off)
            off += 8
            vocab[raw[off : off + tlen].decode("utf-8")] = idx
            off += tlen
        def take(shape):
            nonlocal off
            count = int(np.prod(shape))
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
            off += count * 8
            return arr.astype(np.float64)
        emb = take((vsize, dim))
        proj_w = take((dim, dim))
        proj_b = take((dim,))
        (plen,) = struct.unpack_from("<B", raw, off)
        off += 1
        partner = raw[off : off + plen] if plen else None
        if plen and len(partner) != plen:
            raise ArtifactIOError(f"{path}: truncated encoder file")
    except (struct.error, ValueError) as exc:
        raise ArtifactIOError(f"{path}: truncated encoder file") from exc
    return EncoderParams(vocab, emb, proj_w, proj_b, partner)
