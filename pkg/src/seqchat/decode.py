"""Inference: greedy and left-to-right beam-search decoding with EOS
termination, plus detokenization of replies.

Decoding is pure given the parameters; concurrent decodes over shared
read-only parameters are safe."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .corpus import EOS_ID, GO_ID, PAD_ID, Vocab
from .model import EncoderOutput, Seq2SeqParams, decoder_step, encode_bidirectional, prep_attention
from .tensor import Tensor2, zeros


@dataclass
class DecodeConfig:
    """beam_width 1 degenerates to greedy; max_steps defaults (at the call
    site) to the target cap of the chosen bucket; length_norm > 0 divides
    scores by length^exponent to offset the short-reply bias of raw sums."""

    beam_width: int = 1
    max_steps: int | None = None
    length_norm: float = 0.0

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class BeamHypothesis:
    """One partial sequence: generated ids (no GO/EOS), cumulative token
    log-probability, and the decoder state to extend from."""

    ids: tuple[int, ...]
    log_prob: float
    last_token: int
    state: tuple[Tensor2, Tensor2] | None
    steps: int  # log-prob terms accumulated (counts the EOS of finished hyps)
    finished: bool = False

    def score(self, length_norm: float) -> float:
        if length_norm == 0.0:
            return self.log_prob
        return self.log_prob / (max(1, self.steps) ** length_norm)


def _log_softmax(row: np.ndarray) -> np.ndarray:
    shifted = row.astype(np.float64) - row.max()
    return shifted - np.log(np.exp(shifted).sum())


def _start(src_ids, params: Seq2SeqParams) -> tuple[EncoderOutput, list[Tensor2], Tensor2]:
    enc = encode_bidirectional(np.asarray(src_ids, dtype=np.int64).reshape(1, -1), params)
    return enc, prep_attention(enc, params), zeros(1, params.rnn_size, params.dtype)


def greedy_decode(src_ids, params: Seq2SeqParams, max_steps: int) -> list[int]:
    """Argmax decoding from GO until EOS or max_steps; deterministic, ties
    resolved toward the lower token id. PAD and GO are never emitted."""
    enc, att_proj, c = _start(src_ids, params)
    s = enc.s0
    token = GO_ID
    out: list[int] = []
    for _ in range(max_steps):
        s, c, logits, _ = decoder_step([token], s, c, enc, params, att_proj=att_proj)
        row = logits.data[0].copy()
        row[PAD_ID] = row[GO_ID] = -np.inf
        token = int(row.argmax())
        if token == EOS_ID:
            break
        out.append(token)
    return out


def beam_search(src_ids, params: Seq2SeqParams, config: DecodeConfig,
                max_steps: int | None = None, return_all: bool = False):
    """Left-to-right beam search keeping the beam_width highest joint
    log-probability partial sequences.

    Hypotheses that emit EOS retire to a finished pool; when the pool and the
    live beam are both exhausted (or max_steps is hit) every surviving
    hypothesis competes purely by (optionally length-normalized) score.
    Ties break toward the lexicographically smaller id sequence. PAD and GO
    are never candidate tokens, so outputs contain neither.
    """
    if max_steps is None:
        max_steps = config.max_steps
    if max_steps is None:
        raise ValueError("max_steps must be given here or in the DecodeConfig")
    enc, att_proj, c0 = _start(src_ids, params)
    live = [BeamHypothesis(ids=(), log_prob=0.0, last_token=GO_ID,
                           state=(enc.s0, c0), steps=0)]
    pool: list[BeamHypothesis] = []
    vocab_size = params.vocab_size

    for _ in range(max_steps):
        candidates: list[tuple[float, tuple[int, ...], int, Tensor2, Tensor2, BeamHypothesis]] = []
        for hyp in live:
            assert hyp.state is not None
            s, c, logits, _ = decoder_step([hyp.last_token], *hyp.state, enc, params,
                                           att_proj=att_proj)
            log_probs = _log_softmax(logits.data[0])
            for token in range(vocab_size):
                if token in (PAD_ID, GO_ID):
                    continue
                candidates.append((hyp.log_prob + float(log_probs[token]),
                                   hyp.ids + (token,), token, s, c, hyp))
        candidates.sort(key=lambda cand: (-cand[0], cand[1]))
        live = []
        for log_prob, ids, token, s, c, hyp in candidates[:config.beam_width]:
            if token == EOS_ID:
                pool.append(BeamHypothesis(ids=hyp.ids, log_prob=log_prob,
                                           last_token=EOS_ID, state=None,
                                           steps=hyp.steps + 1, finished=True))
            else:
                live.append(BeamHypothesis(ids=ids, log_prob=log_prob, last_token=token,
                                           state=(s, c), steps=hyp.steps + 1))
        if not live:
            break

    finalists = pool + live  # live is non-empty only at the max_steps cutoff
    finalists.sort(key=lambda hyp: (-hyp.score(config.length_norm), hyp.ids))
    if return_all:
        return list(finalists[0].ids), finalists
    return list(finalists[0].ids)


_ATTACH_PUNCT = re.compile(r" +([.,?!])")


def postprocess_reply(token_ids, vocab: Vocab) -> str:
    """Render ids as text: cut at the first EOS, drop GO/PAD, join with
    spaces, and reattach . , ? ! to the preceding word. UNK stays literal."""
    words = []
    for token in token_ids:
        if token == EOS_ID:
            break
        if token in (PAD_ID, GO_ID):
            continue
        words.append(vocab.word(token))
    return _ATTACH_PUNCT.sub(r"\1", " ".join(words))
