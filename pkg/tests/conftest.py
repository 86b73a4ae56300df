from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pytest

from seqchat import corpus
from seqchat.corpus import Bucket, Dataset, DialogPair, TokenizedPair, Vocab
from seqchat.model import ModelConfig
from seqchat.train import BEST_CHECKPOINT, LAST_CHECKPOINT, train

DATA_DIR = Path(__file__).parent / "data"
FIXTURE_LINES = DATA_DIR / "fixture_lines.txt"
FIXTURE_CONVERSATIONS = DATA_DIR / "fixture_conversations.txt"
GOLDEN_DIR = DATA_DIR / "golden"


@dataclass
class Pipeline:
    """Everything the corpus pipeline produces for the bundled fixture."""

    utterances: list
    conversations: list
    stats: corpus.ParseStats
    pairs: list[DialogPair]
    filtered: list[DialogPair]
    vocab: Vocab
    buckets: tuple[Bucket, ...]
    tokenized: list[TokenizedPair]


@pytest.fixture(scope="session")
def pipeline() -> Pipeline:
    with open(FIXTURE_LINES, encoding="utf-8", errors="replace") as lines_fh, \
            open(FIXTURE_CONVERSATIONS, encoding="utf-8", errors="replace") as conv_fh:
        utterances, conversations, stats = corpus.parse_corpus(lines_fh, conv_fh)
    pairs = corpus.extract_pairs(conversations, utterances)
    filtered = corpus.filter_pairs(pairs)
    vocab = corpus.build_vocab(filtered)
    buckets = corpus.DEFAULT_BUCKETS
    tokenized = [t for t in (corpus.encode_pair(p, vocab, buckets) for p in filtered)
                 if t is not None]
    return Pipeline(utterances, conversations, stats, pairs, filtered, vocab,
                    buckets, tokenized)


@pytest.fixture(scope="session")
def tiny_run(pipeline, tmp_path_factory):
    """A small model memorizing 16 fixture pairs, checkpointed to disk; shared
    by the service/CLI/decode integration tests."""
    seen: set[str] = set()
    selected = []
    for pair in pipeline.filtered:
        if pair.question not in seen:
            seen.add(pair.question)
            selected.append(pair)
        if len(selected) == 16:
            break
    vocab = corpus.build_vocab(selected)
    buckets = (Bucket(5, 10),)
    tokenized = [corpus.encode_pair(p, vocab, buckets) for p in selected]
    config = ModelConfig(vocab_size=len(vocab), embedding_size=24, rnn_size=24,
                         batch_size=8, learning_rate=0.005, min_learning_rate=0.005,
                         learning_rate_decay=1.0, keep_probability=1.0, epochs=60,
                         buckets=buckets)
    out_dir = tmp_path_factory.mktemp("tiny_run")
    params, report = train(Dataset(len(vocab), buckets, tokenized), vocab, config,
                           seed=0, out_dir=out_dir, val_size=0)
    return {
        "pairs": selected,
        "vocab": vocab,
        "buckets": buckets,
        "config": config,
        "params": params,
        "report": report,
        "checkpoint": out_dir / LAST_CHECKPOINT,
        "best_checkpoint": out_dir / BEST_CHECKPOINT,
        "out_dir": out_dir,
    }
