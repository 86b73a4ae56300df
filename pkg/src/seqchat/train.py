"""Teacher-forced training: backprop through the unrolled graph, Adam with
bias correction, learning-rate decay to a floor, checkpointing, and a
finite-difference gradient checker.

A training run owns its parameters exclusively and is fully deterministic
for a fixed seed (single-threaded numpy)."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import (
    Batch,
    Bucket,
    Dataset,
    EOS_ID,
    GO_ID,
    PAD_ID,
    TokenizedPair,
    Vocab,
    batch_dataset,
)
from .errors import CorruptCheckpoint, Diverged, EmptyDataset
from .model import (
    ModelConfig,
    Seq2SeqParams,
    config_from_items,
    config_to_items,
    forward_teacher_forced,
)
from .tensor import Tape, Tensor2, read_tensor, write_tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CLIP_NORM = 5.0

CHECKPOINT_MAGIC = "SQC1"
CHECKPOINT_VERSION = 1

LAST_CHECKPOINT = "last.ckpt"
BEST_CHECKPOINT = "best.ckpt"


def backward(tape: Tape, loss: Tensor2, params: Seq2SeqParams) -> dict[str, np.ndarray]:
    """Gradients of the loss for every trainable tensor, keyed by name.

    Parameters the loss never touched get an explicit zero gradient."""
    by_id = tape.gradients(loss)
    return {name: by_id.get(id(t), np.zeros_like(t.data))
            for name, t in params.named().items()}


@dataclass
class AdamState:
    """First/second moment accumulators mirroring the parameter shapes."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: Seq2SeqParams) -> "AdamState":
        named = params.named()
        return cls(m={n: np.zeros_like(p.data) for n, p in named.items()},
                   v={n: np.zeros_like(p.data) for n, p in named.items()})


def adam_update(params: Seq2SeqParams, grads: dict[str, np.ndarray],
                state: AdamState, lr: float) -> None:
    """In-place Adam step: moment updates, bias correction, then
    theta -= lr * m_hat / (sqrt(v_hat) + eps)."""
    if lr <= 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for name, tensor in params.named().items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * np.square(g)
        tensor.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float = CLIP_NORM) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.square(g).sum()) for g in grads.values()))
    if total > max_norm > 0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def lr_schedule(epoch: int, config: ModelConfig) -> float:
    """lr = max(floor, initial * decay^epoch)."""
    return max(config.min_learning_rate,
               config.learning_rate * config.learning_rate_decay ** epoch)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    seconds: float


def write_report(path, report: Sequence[EpochStats]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch\ttrain_loss\tval_loss\tlr\tseconds\n")
        for row in report:
            fh.write(f"{row.epoch}\t{row.train_loss:.6f}\t{row.val_loss:.6f}"
                     f"\t{row.lr:.6g}\t{row.seconds:.2f}\n")


def evaluate(pairs: Sequence[TokenizedPair], params: Seq2SeqParams,
             config: ModelConfig) -> tuple[float, float]:
    """Token-weighted mean cross-entropy and teacher-forced token accuracy
    over the non-PAD target positions (no dropout, no gradients)."""
    total_loss = 0.0
    total_correct = 0
    total_tokens = 0
    for batch in batch_dataset(pairs, config.batch_size, shuffle_seed=0):
        loss, step_logits = forward_teacher_forced(batch, params, config)
        mask = batch.tgt[:, 1:] != PAD_ID
        n = int(mask.sum())
        total_loss += loss.item() * n
        for t, logits in enumerate(step_logits):
            pred = logits.data.argmax(axis=1)
            hit = (pred == batch.tgt[:, t + 1]) & mask[:, t]
            total_correct += int(hit.sum())
        total_tokens += n
    if total_tokens == 0:
        return 0.0, 0.0
    return total_loss / total_tokens, total_correct / total_tokens


def train(dataset: Dataset, vocab: Vocab, config: ModelConfig, seed: int = 0,
          out_dir=None, val_size: int | None = None,
          log: Callable[[str], None] | None = None,
          ) -> tuple[Seq2SeqParams, list[EpochStats]]:
    """Run the full training loop; deterministic per seed.

    One batch_size worth of pairs is held out for validation by default;
    val_size=0 trains on everything and reports validation metrics on the
    training set instead. Checkpoints: the initial parameters, then last.ckpt
    every epoch and best.ckpt at the best validation loss."""
    pairs = dataset.pairs
    if not pairs:
        raise EmptyDataset("dataset has no pairs")
    if len(vocab) != dataset.vocab_size:
        raise ValueError(f"vocab size {len(vocab)} != dataset vocab size {dataset.vocab_size}")
    if config.buckets != dataset.buckets:
        raise ValueError("config buckets differ from dataset buckets")

    if val_size is None:
        val_size = config.batch_size
    if val_size >= len(pairs):
        raise EmptyDataset(
            f"holding out {val_size} of {len(pairs)} pairs leaves nothing to train on; "
            "pass a smaller val_size (0 disables the holdout)")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    val_pairs = [pairs[i] for i in order[:val_size]]
    train_pairs = [pairs[i] for i in order[val_size:]]

    params = Seq2SeqParams.init(config, seed=int(rng.integers(2**31)))
    state = AdamState.init(params)
    report: list[EpochStats] = []
    best_val = math.inf

    def save(path_name: str, epoch: int) -> None:
        if out_dir is not None:
            save_checkpoint(Path(out_dir) / path_name,
                            Checkpoint(config, vocab, params, state, epoch))

    save(LAST_CHECKPOINT, epoch=0)  # last-good fallback, and --epochs 0 output
    for epoch in range(config.epochs):
        started = time.perf_counter()
        lr = lr_schedule(epoch, config)
        batches = batch_dataset(train_pairs, config.batch_size,
                                shuffle_seed=int(rng.integers(2**31)))
        losses = []
        for batch in batches:
            with Tape() as tape:
                loss, _ = forward_teacher_forced(batch, params, config, rng, training=True)
            value = loss.item()
            if not math.isfinite(value):
                raise Diverged(f"loss became {value} in epoch {epoch}; "
                               f"last good checkpoint is from epoch {epoch}")
            grads = backward(tape, loss, params)
            clip_gradients(grads)
            adam_update(params, grads, state, lr)
            losses.append(value)
        train_loss = float(np.mean(losses))
        val_loss, _ = evaluate(val_pairs or train_pairs, params, config)
        row = EpochStats(epoch, train_loss, val_loss, lr, time.perf_counter() - started)
        report.append(row)
        if log is not None:
            log(f"epoch {row.epoch}: train_loss={row.train_loss:.4f} "
                f"val_loss={row.val_loss:.4f} lr={row.lr:.6g} ({row.seconds:.1f}s)")
        save(LAST_CHECKPOINT, epoch=epoch + 1)
        if val_loss < best_val:
            best_val = val_loss
            save(BEST_CHECKPOINT, epoch=epoch + 1)
    return params, report


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------

def grad_check(config: ModelConfig | None = None, rng_seed: int = 0,
               epsilon: float = 1e-5,
               _corrupt: Callable[[dict[str, np.ndarray]], None] | None = None) -> float:
    """Max relative error between tape gradients and central finite
    differences over every parameter entry of a tiny 64-bit model.

    The denominator is floored at 1e-6 so near-zero entries do not amplify
    float64 finite-difference noise; a degenerate zero-loss input therefore
    reports 0. `_corrupt` mutates the analytic gradients first (used by the
    sensitivity self-test)."""
    if config is None:
        config = ModelConfig(vocab_size=12, embedding_size=4, rnn_size=4,
                             batch_size=2, keep_probability=1.0,
                             buckets=(Bucket(3, 4),), epochs=1)
    rng = np.random.default_rng(rng_seed)
    params = Seq2SeqParams.init(config, seed=rng_seed, dtype=np.float64)
    src_cap, tgt_cap = config.buckets[0].src_cap, config.buckets[0].tgt_cap

    src = rng.integers(0, config.vocab_size, size=(config.batch_size, src_cap))
    src[:, 0] = PAD_ID  # exercise the attention mask
    words = rng.integers(4, config.vocab_size, size=(config.batch_size, tgt_cap - 2))
    tgt = np.concatenate([
        np.full((config.batch_size, 1), GO_ID),
        words,
        np.full((config.batch_size, 1), EOS_ID),
    ], axis=1)
    if config.batch_size > 1:
        tgt[0, -2:] = (EOS_ID, PAD_ID)  # one short row exercises loss masking
    batch = Batch(0, src, tgt)

    def loss_value() -> float:
        loss, _ = forward_teacher_forced(batch, params, config)
        return loss.item()

    with Tape() as tape:
        loss, _ = forward_teacher_forced(batch, params, config)
    analytic = backward(tape, loss, params)
    if _corrupt is not None:
        _corrupt(analytic)

    worst = 0.0
    for name, tensor in params.named().items():
        data = tensor.data
        grad = analytic[name]
        for idx in np.ndindex(data.shape):
            original = data[idx]
            data[idx] = original + epsilon
            plus = loss_value()
            data[idx] = original - epsilon
            minus = loss_value()
            data[idx] = original
            fd = (plus - minus) / (2.0 * epsilon)
            a = float(grad[idx])
            rel = abs(a - fd) / max(abs(a) + abs(fd), 1e-6)
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Versioned bundle of everything needed to resume or serve a model."""

    config: ModelConfig
    vocab: Vocab
    params: Seq2SeqParams
    adam: AdamState | None = None
    epoch: int = 0


def save_checkpoint(path, cp: Checkpoint) -> None:
    named = cp.params.named()
    with open(path, "wb") as fh:
        def line(text: str) -> None:
            fh.write((text + "\n").encode("utf-8"))

        line(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")
        line(f"epoch {cp.epoch}")
        items = config_to_items(cp.config)
        line(f"config {len(items)}")
        for key, value in items:
            line(f"{key}={value}")
        line(f"vocab {len(cp.vocab)}")
        for word in cp.vocab.words:
            line(word)
        line(f"tensors {len(named)}")
        for name, tensor in named.items():
            write_tensor(fh, name, tensor)
        if cp.adam is None:
            line("adam none")
        else:
            line(f"adam {cp.adam.t}")
            for name in named:
                write_tensor(fh, f"m.{name}", Tensor2(cp.adam.m[name]))
                write_tensor(fh, f"v.{name}", Tensor2(cp.adam.v[name]))


def _read_line(fh) -> str:
    raw = fh.readline()
    if not raw.endswith(b"\n"):
        raise CorruptCheckpoint("unexpected end of file")
    return raw.decode("utf-8").rstrip("\n")


def _read_tagged(fh, tag: str) -> str:
    line = _read_line(fh)
    head, _, rest = line.partition(" ")
    if head != tag:
        raise CorruptCheckpoint(f"expected '{tag} ...', got {line!r}")
    return rest


def _read_tagged_int(fh, tag: str) -> int:
    rest = _read_tagged(fh, tag)
    try:
        return int(rest)
    except ValueError as exc:
        raise CorruptCheckpoint(f"bad {tag} value {rest!r}") from exc


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = _read_line(fh)
        parts = magic.split()
        if len(parts) != 2 or parts[0] != CHECKPOINT_MAGIC:
            raise CorruptCheckpoint(f"bad magic {magic!r}")
        if parts[1] != str(CHECKPOINT_VERSION):
            raise CorruptCheckpoint(f"unsupported checkpoint version {parts[1]}")
        epoch = _read_tagged_int(fh, "epoch")

        n_items = _read_tagged_int(fh, "config")
        items: dict[str, str] = {}
        for _ in range(n_items):
            key, _, value = _read_line(fh).partition("=")
            items[key] = value
        try:
            config = config_from_items(items)
        except (KeyError, ValueError) as exc:
            raise CorruptCheckpoint(f"bad config section: {exc}") from exc

        n_words = _read_tagged_int(fh, "vocab")
        words = [_read_line(fh) for _ in range(n_words)]
        try:
            vocab = Vocab(words)
        except ValueError as exc:
            raise CorruptCheckpoint(f"bad vocab section: {exc}") from exc

        n_tensors = _read_tagged_int(fh, "tensors")
        named: dict[str, Tensor2] = {}
        for _ in range(n_tensors):
            name, tensor = read_tensor(fh)
            named[name] = tensor
        try:
            params = Seq2SeqParams.from_named(named)
        except KeyError as exc:
            raise CorruptCheckpoint(f"missing tensor {exc}") from exc

        adam_tag = _read_tagged(fh, "adam")
        adam = None
        if adam_tag != "none":
            try:
                adam_t = int(adam_tag)
            except ValueError as exc:
                raise CorruptCheckpoint(f"bad adam value {adam_tag!r}") from exc
            m: dict[str, np.ndarray] = {}
            v: dict[str, np.ndarray] = {}
            for expected in named:
                for prefix, store in (("m", m), ("v", v)):
                    name, tensor = read_tensor(fh)
                    if name != f"{prefix}.{expected}":
                        raise CorruptCheckpoint(f"unexpected moment tensor {name}")
                    store[expected] = tensor.data
            adam = AdamState(m=m, v=v, t=adam_t)
    if len(vocab) != config.vocab_size:
        raise CorruptCheckpoint(f"vocab has {len(vocab)} words, config says {config.vocab_size}")
    return Checkpoint(config, vocab, params, adam, epoch)
