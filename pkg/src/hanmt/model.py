"""The multi-task Transformer: one shared encoder feeding a restoration
encoder (masked-token prediction over Hanja) and a translation decoder
(Hanja -> Korean), with factorized embedding/output layers.

Parameter storage is a flat name->Tensor table. Cross-layer sharing is
realized by binding several layers to the same stored tensors, so a shared
group exists exactly once no matter how deep a stack is. Under the
"attention_only" policy each layer keeps its own feed-forward block; under
"all" the whole block is reused.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .corpus import BOS, PAD

NEG_INF = -1e9


class ModelError(Exception):
    pass


@dataclass
class ModelConfig:
    d_emb: int = 256
    d_model: int = 768
    d_ffn: int = 3072
    n_heads: int = 12
    layers_shared: int = 12
    layers_restore: int = 6
    layers_decoder: int = 12
    max_len_hanja: int = 350
    max_len_korean: int = 300
    vocab_hanja: int = 8742
    vocab_korean: int = 24000
    sharing_policy: str = "attention_only"  # or "all"
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ModelError(
                f"d_model {self.d_model} not divisible by {self.n_heads} heads"
            )
        if self.sharing_policy not in ("attention_only", "all"):
            raise ModelError(f"unknown sharing_policy {self.sharing_policy!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def paper_scale_config():
    """The full-size configuration reported for the original experiments."""
    return ModelConfig()


@dataclass
class AttentionBlock:
    wq: T.Tensor
    bq: T.Tensor
    wk: T.Tensor
    bk: T.Tensor
    wv: T.Tensor
    bv: T.Tensor
    wo: T.Tensor
    bo: T.Tensor


@dataclass
class FfnBlock:
    w1: T.Tensor
    b1: T.Tensor
    w2: T.Tensor
    b2: T.Tensor


@dataclass
class NormBlock:
    g: T.Tensor
    b: T.Tensor


@dataclass
class EncoderLayer:
    ln1: NormBlock
    attn: AttentionBlock
    ln2: NormBlock
    ffn: FfnBlock


@dataclass
class DecoderLayer:
    ln1: NormBlock
    self_attn: AttentionBlock
    ln2: NormBlock
    cross_attn: AttentionBlock
    ln3: NormBlock
    ffn: FfnBlock


@dataclass
class OutputHead:
    q: T.Tensor  # d_model -> d_emb
    q_bias: T.Tensor
    ln: NormBlock
    w: T.Tensor  # |V| x d_emb, the softmax matrix
    bias: T.Tensor


@dataclass
class EmbeddingPath:
    table: T.Tensor  # |V| x d_emb
    pos: T.Tensor  # max_len x d_emb
    proj: T.Tensor  # d_emb x d_model
    proj_bias: T.Tensor


@dataclass
class Stack:
    layers: list
    final_ln: NormBlock


class ModelParams:
    """All weights, with sharing groups bound to single storage."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.tensors = {}
        self._rng = np.random.default_rng(seed)
        c = config

        self.emb_hanja = self._embedding("emb.h", c.vocab_hanja, c.max_len_hanja)
        self.emb_korean = self._embedding("emb.k", c.vocab_korean, c.max_len_korean)

        self.shared = self._encoder_stack("enc_shared", c.layers_shared)
        self.restore = self._encoder_stack("enc_restore", c.layers_restore)
        self.decoder = self._decoder_stack("dec", c.layers_decoder)

        self.head_hanja = self._head("head.h", c.vocab_hanja)
        self.head_korean = self._head("head.k", c.vocab_korean)
        del self._rng

    # -- storage helpers --------------------------------------------------

    def _weight(self, name, shape):
        t = T.Tensor(self._rng.normal(0.0, 0.02, size=shape).astype(np.float32))
        self.tensors[name] = t
        return t

    def _zeros(self, name, shape):
        t = T.Tensor(np.zeros(shape, dtype=np.float32))
        self.tensors[name] = t
        return t

    def _ones(self, name, shape):
        t = T.Tensor(np.ones(shape, dtype=np.float32))
        self.tensors[name] = t
        return t

    def _norm(self, prefix):
        return NormBlock(
            g=self._ones(f"{prefix}.g", (self.config.d_model,)),
            b=self._zeros(f"{prefix}.b", (self.config.d_model,)),
        )

    def _attention(self, prefix):
        d = self.config.d_model
        return AttentionBlock(
            wq=self._weight(f"{prefix}.wq", (d, d)),
            bq=self._zeros(f"{prefix}.bq", (d,)),
            wk=self._weight(f"{prefix}.wk", (d, d)),
            bk=self._zeros(f"{prefix}.bk", (d,)),
            wv=self._weight(f"{prefix}.wv", (d, d)),
            bv=self._zeros(f"{prefix}.bv", (d,)),
            wo=self._weight(f"{prefix}.wo", (d, d)),
            bo=self._zeros(f"{prefix}.bo", (d,)),
        )

    def _ffn(self, prefix):
        d, f = self.config.d_model, self.config.d_ffn
        return FfnBlock(
            w1=self._weight(f"{prefix}.w1", (d, f)),
            b1=self._zeros(f"{prefix}.b1", (f,)),
            w2=self._weight(f"{prefix}.w2", (f, d)),
            b2=self._zeros(f"{prefix}.b2", (d,)),
        )

    def _embedding(self, prefix, vocab, max_len):
        c = self.config
        return EmbeddingPath(
            table=self._weight(f"{prefix}.table", (vocab, c.d_emb)),
            pos=self._weight(f"{prefix}.pos", (max_len, c.d_emb)),
            proj=self._weight(f"{prefix}.proj", (c.d_emb, c.d_model)),
            proj_bias=self._zeros(f"{prefix}.proj_bias", (c.d_model,)),
        )

    def _head(self, prefix, vocab):
        c = self.config
        return OutputHead(
            q=self._weight(f"{prefix}.q", (c.d_model, c.d_emb)),
            q_bias=self._zeros(f"{prefix}.q_bias", (c.d_emb,)),
            ln=NormBlock(
                g=self._ones(f"{prefix}.ln.g", (c.d_emb,)),
                b=self._zeros(f"{prefix}.ln.b", (c.d_emb,)),
            ),
            w=self._weight(f"{prefix}.w", (vocab, c.d_emb)),
            bias=self._zeros(f"{prefix}.bias", (vocab,)),
        )

    def _encoder_stack(self, prefix, n_layers):
        shared_attn = self._attention(f"{prefix}.attn")
        shared_ln1 = self._norm(f"{prefix}.ln1")
        shared_ln2 = self._norm(f"{prefix}.ln2")
        if self.config.sharing_policy == "all":
            ffn = self._ffn(f"{prefix}.ffn")
            layers = [EncoderLayer(shared_ln1, shared_attn, shared_ln2, ffn)] * n_layers
        else:
            layers = [
                EncoderLayer(
                    shared_ln1, shared_attn, shared_ln2, self._ffn(f"{prefix}.ffn{i}")
                )
                for i in range(n_layers)
            ]
        return Stack(layers=layers, final_ln=self._norm(f"{prefix}.final_ln"))

    def _decoder_stack(self, prefix, n_layers):
        self_attn = self._attention(f"{prefix}.self_attn")
        cross_attn = self._attention(f"{prefix}.cross_attn")
        ln1 = self._norm(f"{prefix}.ln1")
        ln2 = self._norm(f"{prefix}.ln2")
        ln3 = self._norm(f"{prefix}.ln3")
        if self.config.sharing_policy == "all":
            ffn = self._ffn(f"{prefix}.ffn")
            layers = [DecoderLayer(ln1, self_attn, ln2, cross_attn, ln3, ffn)] * n_layers
        else:
            layers = [
                DecoderLayer(
                    ln1, self_attn, ln2, cross_attn, ln3, self._ffn(f"{prefix}.ffn{i}")
                )
                for i in range(n_layers)
            ]
        return Stack(layers=layers, final_ln=self._norm(f"{prefix}.final_ln"))

    # -- bookkeeping -------------------------------------------------------

    def parameter_count(self):
        return sum(t.data.size for t in self.tensors.values())

    def zero_grads(self):
        for t in self.tensors.values():
            t.zero_grad()

    def largest_vocab_matrix_dims(self):
        """Max second dim over all |V|-row matrices; the factorization
        invariant requires this to be d_emb, never d_model."""
        vocabs = {self.config.vocab_hanja, self.config.vocab_korean}
        widths = [
            t.data.shape[1]
            for t in self.tensors.values()
            if t.data.ndim == 2 and t.data.shape[0] in vocabs
        ]
        return max(widths)


# -- forward pieces --------------------------------------------------------


def _maybe_dropout(x, params, rng):
    if rng is None or params.config.dropout == 0.0:
        return x
    return T.dropout(x, params.config.dropout, rng)


def _norm(x, block):
    return T.layer_norm(x, block.g, block.b)


def _attention(query, memory, block, n_heads, additive_mask, params, rng):
    """Multi-head attention: query [B,Lq,D] against memory [B,Lk,D]."""
    B, Lq, D = query.data.shape
    Lk = memory.data.shape[1]
    dh = D // n_heads

    def split_heads(t, L):
        return T.transpose(T.reshape(t, (B, L, n_heads, dh)), (0, 2, 1, 3))

    q = split_heads(T.matmul_affine(query, block.wq, block.bq), Lq)
    k = split_heads(T.matmul_affine(memory, block.wk, block.bk), Lk)
    v = split_heads(T.matmul_affine(memory, block.wv, block.bv), Lk)

    scores = T.scale(T.batched_matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    probs = T.softmax(scores, additive_mask=additive_mask)
    probs = _maybe_dropout(probs, params, rng)
    ctx = T.batched_matmul(probs, v)
    merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, Lq, D))
    return T.matmul_affine(merged, block.wo, block.bo)


def _ffn(x, block):
    return T.matmul_affine(T.gelu(T.matmul_affine(x, block.w1, block.b1)), block.w2, block.b2)


def pad_attention_mask(pad_mask):
    """[B, Lk] boolean (True = real token) -> additive [B, 1, 1, Lk]."""
    m = np.where(np.asarray(pad_mask, dtype=bool), 0.0, NEG_INF)
    return m[:, None, None, :]


def causal_attention_mask(pad_mask):
    """Causal plus padding mask for decoder self-attention: [B, 1, T, T]."""
    pm = np.asarray(pad_mask, dtype=bool)
    t = pm.shape[1]
    causal = np.where(np.triu(np.ones((t, t), dtype=bool), k=1), NEG_INF, 0.0)
    return causal[None, None, :, :] + pad_attention_mask(pm)


def embed(ids, side, params: ModelParams, rng=None):
    """(E[id] + position) projected to d_model; ids is [B, L] of token ids."""
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ModelError(f"expected [batch, length] ids, got shape {ids.shape}")
    path = params.emb_hanja if side == "hanja" else params.emb_korean
    max_len = (
        params.config.max_len_hanja if side == "hanja" else params.config.max_len_korean
    )
    L = ids.shape[1]
    if L > max_len:
        raise ModelError(f"sequence length {L} over {side} max of {max_len}")
    tok = T.embedding(path.table, ids)
    pos = T.embedding(path.pos, np.broadcast_to(np.arange(L), ids.shape))
    x = T.matmul_affine(T.add(tok, pos), path.proj, path.proj_bias)
    return _maybe_dropout(x, params, rng)


def _run_encoder(x, stack, pad_mask, params, rng):
    mask = pad_attention_mask(pad_mask)
    h = params.config.n_heads
    for layer in stack.layers:
        pre = _norm(x, layer.ln1)
        a = _attention(pre, pre, layer.attn, h, mask, params, rng)
        x = T.add(x, _maybe_dropout(a, params, rng))
        f = _ffn(_norm(x, layer.ln2), layer.ffn)
        x = T.add(x, _maybe_dropout(f, params, rng))
    return _norm(x, stack.final_ln)


def shared_encode(embeddings, pad_mask, params: ModelParams, rng=None):
    """The shared encoder; the one stack both tasks read through."""
    pm = np.asarray(pad_mask, dtype=bool)
    if not pm.any(axis=1).all():
        raise ModelError("a sequence in the batch is entirely padding")
    return _run_encoder(embeddings, params.shared, pm, params, rng)


def restore_states(shared_states, pad_mask, params: ModelParams, rng=None):
    return _run_encoder(shared_states, params.restore, pad_mask, params, rng)


def _head_logits(states, head):
    z = T.layer_norm(T.gelu(T.matmul_affine(states, head.q, head.q_bias)), head.ln.g, head.ln.b)
    return T.matmul_affine(z, T.transpose(head.w, (1, 0)), head.bias)


def restore_logits(shared_states, pad_mask, params: ModelParams, rng=None):
    """Restoration-encoder states pushed through the Hanja output head."""
    states = restore_states(shared_states, pad_mask, params, rng)
    return _head_logits(states, params.head_hanja)


def decode_logits(shared_states, src_pad_mask, tgt_ids, params: ModelParams, rng=None):
    """Teacher-forced decoder logits [B, T, |V_k|] over a BOS-led prefix."""
    tgt_ids = np.asarray(tgt_ids)
    if tgt_ids.ndim != 2 or tgt_ids.shape[1] == 0:
        raise ModelError("decoder prefix must be [batch, >=1] token ids")
    tgt_pad = tgt_ids != PAD
    x = embed(tgt_ids, "korean", params, rng)
    self_mask = causal_attention_mask(tgt_pad)
    cross_mask = pad_attention_mask(src_pad_mask)
    h = params.config.n_heads
    for layer in params.decoder.layers:
        pre = _norm(x, layer.ln1)
        a = _attention(pre, pre, layer.self_attn, h, self_mask, params, rng)
        x = T.add(x, _maybe_dropout(a, params, rng))
        c = _attention(_norm(x, layer.ln2), shared_states, layer.cross_attn, h, cross_mask, params, rng)
        x = T.add(x, _maybe_dropout(c, params, rng))
        f = _ffn(_norm(x, layer.ln3), layer.ffn)
        x = T.add(x, _maybe_dropout(f, params, rng))
    states = _norm(x, params.decoder.final_ln)
    return _head_logits(states, params.head_korean)


def decode_step_logits(shared_states, src_pad_mask, prefix_ids, params: ModelParams):
    """Next-token logits [|V_k|] for a single BOS-led prefix."""
    prefix_ids = np.asarray(prefix_ids)
    if prefix_ids.ndim != 1 or prefix_ids.size == 0:
        raise ModelError("prefix must be a non-empty 1-D id sequence")
    if prefix_ids[0] != BOS:
        raise ModelError("prefix must begin with BOS")
    logits = decode_logits(shared_states, src_pad_mask, prefix_ids[None, :], params)
    return logits.data[0, -1]


def encode_source(ids, params: ModelParams, rng=None):
    """Embed + shared-encode a [B, L] Hanja id batch; returns (states, pad)."""
    ids = np.asarray(ids)
    pad_mask = ids != PAD
    emb = embed(ids, "hanja", params, rng)
    return shared_encode(emb, pad_mask, params, rng), pad_mask
