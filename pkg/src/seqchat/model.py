"""The seq2seq network: embeddings, RNN/LSTM cells, bidirectional encoder,
additive-attention decoder, output projection, and the teacher-forced
forward pass.

States are batch-major: a hidden state is a (batch x rnn_size) Tensor2 and
weights are stored (input_dim x output_dim) so a step computes `x @ W`.
Parameters are immutable during forward passes; concurrent forward passes
over shared read-only parameters are safe.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .corpus import Batch, Bucket, DEFAULT_BUCKETS, PAD_ID, format_buckets, parse_buckets
from .errors import ShapeMismatch
from .tensor import (
    Tensor2,
    add,
    add_bias,
    concat_cols,
    concat_rows,
    cross_entropy,
    dropout,
    gather_rows,
    hadamard,
    matmul,
    scale_rows,
    sigmoid,
    slice_cols,
    softmax_rows,
    tanh,
    xavier_init,
    zeros,
)

MASK_ENERGY = -1e9


@dataclass
class ModelConfig:
    vocab_size: int
    embedding_size: int
    rnn_size: int
    num_layers: int = 1
    keep_probability: float = 1.0
    batch_size: int = 32
    learning_rate: float = 0.001
    min_learning_rate: float = 0.0001
    learning_rate_decay: float = 0.9
    epochs: int = 1
    beam_width: int = 1
    buckets: tuple[Bucket, ...] = DEFAULT_BUCKETS
    reverse_source: bool = True

    def __post_init__(self):
        for name in ("vocab_size", "embedding_size", "rnn_size", "num_layers",
                     "batch_size", "beam_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.keep_probability <= 1.0:
            raise ValueError("keep_probability must be in (0, 1]")
        if self.min_learning_rate > self.learning_rate:
            raise ValueError("min_learning_rate must not exceed learning_rate")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        self.buckets = tuple(self.buckets)


_CONFIG_TO_STR = {
    "keep_probability": repr,
    "learning_rate": repr,
    "min_learning_rate": repr,
    "learning_rate_decay": repr,
    "buckets": format_buckets,
    "reverse_source": lambda v: "true" if v else "false",
}

_CONFIG_FROM_STR = {
    "keep_probability": float,
    "learning_rate": float,
    "min_learning_rate": float,
    "learning_rate_decay": float,
    "buckets": parse_buckets,
    "reverse_source": lambda s: {"true": True, "false": False}[s.lower()],
}

CONFIG_FIELDS = tuple(f.name for f in fields(ModelConfig))


def config_to_items(config: ModelConfig) -> list[tuple[str, str]]:
    return [(name, _CONFIG_TO_STR.get(name, str)(getattr(config, name)))
            for name in CONFIG_FIELDS]


def parse_config_value(key: str, value: str):
    if key not in CONFIG_FIELDS:
        raise KeyError(f"unknown config key: {key}")
    return _CONFIG_FROM_STR.get(key, int)(value)


def config_from_items(items: dict[str, str]) -> ModelConfig:
    return ModelConfig(**{key: parse_config_value(key, value)
                          for key, value in items.items()})


# Initialization gains over plain xavier bounds. Mildly hot weights cut the
# optimizer steps needed on small models roughly in half while keeping an
# untrained model's output distribution near uniform.
INIT_GAIN = 1.5
OUT_INIT_GAIN = 2.0


def _scaled_xavier(rows: int, cols: int, rng: np.random.Generator, dtype,
                   gain: float = INIT_GAIN) -> Tensor2:
    t = xavier_init(rows, cols, rng, dtype)
    if gain != 1.0:
        t.data *= gain
    return t


class LstmParams:
    """Fused-gate LSTM weights; the gate order along columns is
    [forget, input, output, candidate] and the forget bias starts at 1.0."""

    def __init__(self, w_g: Tensor2, u_g: Tensor2, b_g: Tensor2):
        h4 = u_g.cols
        if h4 % 4 or u_g.rows != h4 // 4 or w_g.cols != h4 or b_g.shape != (1, h4):
            raise ShapeMismatch(
                f"lstm params inconsistent: w {w_g.shape}, u {u_g.shape}, b {b_g.shape}")
        self.w_g = w_g
        self.u_g = u_g
        self.b_g = b_g

    @property
    def rnn_size(self) -> int:
        return self.u_g.rows

    @property
    def input_dim(self) -> int:
        return self.w_g.rows

    @classmethod
    def init(cls, input_dim: int, rnn_size: int, rng: np.random.Generator,
             dtype=np.float32) -> "LstmParams":
        b = np.zeros((1, 4 * rnn_size), dtype=dtype)
        b[0, :rnn_size] = 1.0  # forget-gate bias: remember by default
        return cls(
            _scaled_xavier(input_dim, 4 * rnn_size, rng, dtype),
            _scaled_xavier(rnn_size, 4 * rnn_size, rng, dtype),
            Tensor2(b),
        )


class Seq2SeqParams:
    """Every trainable tensor of the network, uniquely named."""

    def __init__(self, embedding: Tensor2, enc_fwd: LstmParams, enc_bwd: LstmParams,
                 dec: LstmParams, att_w: Tensor2, att_u: Tensor2, att_v: Tensor2,
                 bridge: Tensor2, out_w: Tensor2, out_b: Tensor2):
        self.embedding = embedding
        self.enc_fwd = enc_fwd
        self.enc_bwd = enc_bwd
        self.dec = dec
        self.att_w = att_w
        self.att_u = att_u
        self.att_v = att_v
        self.bridge = bridge
        self.out_w = out_w
        self.out_b = out_b

    @property
    def vocab_size(self) -> int:
        return self.embedding.rows

    @property
    def rnn_size(self) -> int:
        return self.enc_fwd.rnn_size

    @property
    def dtype(self):
        return self.embedding.dtype

    @classmethod
    def init(cls, config: ModelConfig, seed: int, dtype=np.float32) -> "Seq2SeqParams":
        if config.num_layers != 1:
            raise NotImplementedError("only num_layers=1 is supported")
        rng = np.random.default_rng(seed)
        e, h, v = config.embedding_size, config.rnn_size, config.vocab_size
        return cls(
            embedding=_scaled_xavier(v, e, rng, dtype),
            enc_fwd=LstmParams.init(e, h, rng, dtype),
            enc_bwd=LstmParams.init(e, h, rng, dtype),
            dec=LstmParams.init(e + 2 * h, h, rng, dtype),
            att_w=_scaled_xavier(h, h, rng, dtype),
            att_u=_scaled_xavier(2 * h, h, rng, dtype),
            att_v=_scaled_xavier(h, 1, rng, dtype),
            bridge=_scaled_xavier(2 * h, h, rng, dtype),
            out_w=_scaled_xavier(h, v, rng, dtype, OUT_INIT_GAIN),
            out_b=Tensor2(np.zeros((1, v), dtype=dtype)),
        )

    def named(self) -> dict[str, Tensor2]:
        out: dict[str, Tensor2] = {"embedding": self.embedding}
        for prefix, cell in (("enc_fwd", self.enc_fwd), ("enc_bwd", self.enc_bwd),
                             ("dec", self.dec)):
            out[f"{prefix}.w_g"] = cell.w_g
            out[f"{prefix}.u_g"] = cell.u_g
            out[f"{prefix}.b_g"] = cell.b_g
        out["att.w"] = self.att_w
        out["att.u"] = self.att_u
        out["att.v"] = self.att_v
        out["bridge"] = self.bridge
        out["out.w"] = self.out_w
        out["out.b"] = self.out_b
        return out

    @classmethod
    def from_named(cls, named: dict[str, Tensor2]) -> "Seq2SeqParams":
        def cell(prefix: str) -> LstmParams:
            return LstmParams(named[f"{prefix}.w_g"], named[f"{prefix}.u_g"],
                              named[f"{prefix}.b_g"])

        return cls(named["embedding"], cell("enc_fwd"), cell("enc_bwd"), cell("dec"),
                   named["att.w"], named["att.u"], named["att.v"], named["bridge"],
                   named["out.w"], named["out.b"])

    def parameter_count(self) -> int:
        return sum(t.rows * t.cols for t in self.named().values())


@dataclass
class EncoderOutput:
    """Per-position concatenated fwd/bwd states, the bridged initial decoder
    state, and the PAD mask the attention uses (True = real token)."""

    states: list[Tensor2]
    s0: Tensor2
    src_mask: np.ndarray

    @property
    def src_len(self) -> int:
        return len(self.states)


# ---------------------------------------------------------------------------
# Cells
# ---------------------------------------------------------------------------

def embed_lookup(ids, embedding: Tensor2) -> Tensor2:
    """Row i of the result is the embedding of ids[i]; gradients scatter back
    into the looked-up rows only."""
    return gather_rows(embedding, ids)


def rnn_step(x_t: Tensor2, h_prev: Tensor2, w: Tensor2, u: Tensor2) -> Tensor2:
    """Vanilla recurrence h_t = tanh(h_prev.w + x_t.u); the LSTM below replaces
    it everywhere that long dependencies matter."""
    return tanh(add(matmul(h_prev, w), matmul(x_t, u)))


def lstm_step(x_t: Tensor2, h_prev: Tensor2, c_prev: Tensor2,
              params: LstmParams) -> tuple[Tensor2, Tensor2]:
    """One LSTM step.

    [f; i; o; g] = x.W + h_prev.U + b, with f, i, o squashed by sigmoid and
    the candidate g by tanh; then c = f*c_prev + i*g and h = o*tanh(c).
    """
    h = params.rnn_size
    z = add_bias(add(matmul(x_t, params.w_g), matmul(h_prev, params.u_g)), params.b_g)
    f = sigmoid(slice_cols(z, 0, h))
    i = sigmoid(slice_cols(z, h, 2 * h))
    o = sigmoid(slice_cols(z, 2 * h, 3 * h))
    g = tanh(slice_cols(z, 3 * h, 4 * h))
    c_t = add(hadamard(f, c_prev), hadamard(i, g))
    h_t = hadamard(o, tanh(c_t))
    return h_t, c_t


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

def encode_bidirectional(src_ids, params: Seq2SeqParams, keep_prob: float = 1.0,
                         rng: np.random.Generator | None = None) -> EncoderOutput:
    """Run the forward and backward encoder LSTMs over a (batch x src_len) id
    matrix. PAD positions are stepped over like any token but contribute zero
    input, and the attention mask hides their states, so padding carries no
    information downstream. s0 = tanh(final_states . bridge)."""
    ids = np.asarray(src_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[np.newaxis, :]
    batch, src_len = ids.shape
    h_size = params.rnn_size
    dtype = params.dtype

    mask = ids != PAD_ID
    embedded = [
        scale_rows(embed_lookup(ids[:, j], params.embedding),
                   Tensor2(mask[:, j:j + 1].astype(dtype)))
        for j in range(src_len)
    ]

    h = zeros(batch, h_size, dtype)
    c = zeros(batch, h_size, dtype)
    fwd: list[Tensor2] = []
    for j in range(src_len):
        h, c = lstm_step(embedded[j], h, c, params.enc_fwd)
        fwd.append(h)

    h = zeros(batch, h_size, dtype)
    c = zeros(batch, h_size, dtype)
    bwd: list[Tensor2] = [None] * src_len  # type: ignore[list-item]
    for j in reversed(range(src_len)):
        h, c = lstm_step(embedded[j], h, c, params.enc_bwd)
        bwd[j] = h

    states = [concat_cols([fwd[j], bwd[j]]) for j in range(src_len)]
    if keep_prob < 1.0 and rng is not None:
        states = [dropout(s, keep_prob, rng) for s in states]
    final = concat_cols([fwd[-1], bwd[0]])
    s0 = tanh(matmul(final, params.bridge))
    return EncoderOutput(states=states, s0=s0, src_mask=mask)


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------

def prep_attention(enc: EncoderOutput, params: Seq2SeqParams) -> list[Tensor2]:
    """Encoder-side attention projections, shared by every decoder step."""
    return [matmul(h_j, params.att_u) for h_j in enc.states]


def attention_energies(s_prev: Tensor2, enc: EncoderOutput, att_w: Tensor2,
                       att_u: Tensor2, att_v: Tensor2,
                       att_proj: list[Tensor2] | None = None) -> Tensor2:
    """Alignment energies e_j = v . tanh(s_prev.W + h_j.U), one column per
    source position, with PAD positions forced to a large negative value so
    the softmax ignores them. Rows with no unmasked position stay unmasked."""
    if att_proj is None:
        att_proj = [matmul(h_j, att_u) for h_j in enc.states]
    sw = matmul(s_prev, att_w)
    columns = [matmul(tanh(add(sw, proj_j)), att_v) for proj_j in att_proj]
    e = concat_cols(columns)
    bias = np.where(enc.src_mask, 0.0, MASK_ENERGY).astype(e.dtype)
    bias[~enc.src_mask.any(axis=1)] = 0.0
    return add(e, Tensor2(bias))


def attention_context(s_prev: Tensor2, enc: EncoderOutput, params: Seq2SeqParams,
                      att_proj: list[Tensor2] | None = None) -> tuple[Tensor2, Tensor2]:
    """Softmax the energies into weights and take the weighted sum of encoder
    states: a convex combination, so the context lies in their hull."""
    e = attention_energies(s_prev, enc, params.att_w, params.att_u, params.att_v, att_proj)
    alpha = softmax_rows(e)
    context: Tensor2 | None = None
    for j, h_j in enumerate(enc.states):
        term = scale_rows(h_j, slice_cols(alpha, j, j + 1))
        context = term if context is None else add(context, term)
    assert context is not None
    return context, alpha


# ---------------------------------------------------------------------------
# Decoder
# ---------------------------------------------------------------------------

def decoder_step(y_prev_ids, s_prev: Tensor2, c_state_prev: Tensor2,
                 enc: EncoderOutput, params: Seq2SeqParams,
                 keep_prob: float = 1.0, rng: np.random.Generator | None = None,
                 att_proj: list[Tensor2] | None = None,
                 ) -> tuple[Tensor2, Tensor2, Tensor2, Tensor2]:
    """One decoder step: embed the previous token, concatenate the attention
    context, advance the decoder LSTM, and project to vocabulary logits.
    Dropout (keep_prob < 1, rng given) applies to the hidden output only, at
    train time; inference passes keep_prob=1 and is deterministic."""
    emb = embed_lookup(y_prev_ids, params.embedding)
    context, alpha = attention_context(s_prev, enc, params, att_proj)
    x = concat_cols([emb, context])
    s_i, c_state_i = lstm_step(x, s_prev, c_state_prev, params.dec)
    out = s_i
    if keep_prob < 1.0 and rng is not None:
        out = dropout(out, keep_prob, rng)
    logits = add_bias(matmul(out, params.out_w), params.out_b)
    return s_i, c_state_i, logits, alpha


def forward_teacher_forced(batch: Batch, params: Seq2SeqParams, config: ModelConfig,
                           rng: np.random.Generator | None = None,
                           training: bool = False) -> tuple[Tensor2, list[Tensor2]]:
    """Teacher-forced pass over one single-bucket batch.

    The decoder input at step t is the ground-truth target token t (starting
    at GO); the loss is the PAD-masked mean cross-entropy over the predictions
    of tokens 1..tgt_cap-1.
    """
    keep_prob = config.keep_probability if training else 1.0
    step_rng = rng if training else None
    enc = encode_bidirectional(batch.src, params, keep_prob, step_rng)
    att_proj = prep_attention(enc, params)
    batch_size = batch.src.shape[0]
    s = enc.s0
    c = zeros(batch_size, params.rnn_size, params.dtype)
    step_logits: list[Tensor2] = []
    steps = batch.tgt.shape[1] - 1
    for t in range(steps):
        s, c, logits, _ = decoder_step(batch.tgt[:, t], s, c, enc, params,
                                       keep_prob, step_rng, att_proj)
        step_logits.append(logits)
    all_logits = concat_rows(step_logits)
    targets = batch.tgt[:, 1:].T.reshape(-1)  # step-major, matching the stack
    loss = cross_entropy(all_logits, targets, targets != PAD_ID)
    return loss, step_logits
