"""Movie-dialog corpus ingestion: parsing, cleaning, pairing, vocabulary,
and padded/bucketed integer datasets.

Everything here is a pure function over immutable inputs; the only I/O lives
in the save_*/load_* helpers at the bottom.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import EmptyDataset, InvalidRange, MalformedConversationList

PAD_ID = 0
GO_ID = 1
EOS_ID = 2
UNK_ID = 3
SPECIAL_TOKENS = ("<PAD>", "<GO>", "<EOS>", "<UNK>")

# The distributed corpus delimiter; some descriptions print it as "+++++".
DEFAULT_SEPARATOR = "+++$+++"
DEFAULT_KEEP_N = 6282
DEFAULT_MIN_LEN = 2
DEFAULT_MAX_LEN = 5

DATASET_MAGIC = "seqchat-dataset"
DATASET_VERSION = "v1"


@dataclass(frozen=True)
class RawUtterance:
    line_id: str
    character_id: str
    movie_id: str
    text: str


@dataclass(frozen=True)
class DialogPair:
    question: str
    answer: str


@dataclass(frozen=True)
class Bucket:
    """Size class (src_cap, tgt_cap); tgt_cap must leave room for GO + EOS."""

    src_cap: int
    tgt_cap: int

    def __post_init__(self):
        if self.src_cap < 1 or self.tgt_cap < 3:
            raise InvalidRange(f"bucket caps too small: ({self.src_cap}, {self.tgt_cap})")


DEFAULT_BUCKETS: tuple[Bucket, ...] = (Bucket(5, 10), Bucket(10, 15), Bucket(20, 25), Bucket(40, 50))


@dataclass(frozen=True)
class TokenizedPair:
    """Padded id sequences: src is left-padded (content reversed when the
    pipeline reverses sources); tgt is GO + ids + EOS, right-padded."""

    src_ids: tuple[int, ...]
    tgt_ids: tuple[int, ...]
    bucket_index: int


@dataclass
class ParseStats:
    utterances: int = 0
    skipped_lines: int = 0
    conversations: int = 0
    skipped_conversations: int = 0


@dataclass(frozen=True)
class Batch:
    """A slice of same-bucket pairs stacked into (n, cap) id matrices."""

    bucket_index: int
    src: np.ndarray
    tgt: np.ndarray

    @property
    def size(self) -> int:
        return self.src.shape[0]


class Vocab:
    """Bidirectional word<->id map; ids 0-3 are PAD, GO, EOS, UNK."""

    def __init__(self, words: Sequence[str]):
        words = list(words)
        if tuple(words[:4]) != SPECIAL_TOKENS:
            raise ValueError(f"vocab must start with {SPECIAL_TOKENS}")
        self.words: list[str] = words
        self._ids: dict[str, int] = {w: i for i, w in enumerate(words)}
        if len(self._ids) != len(words):
            raise ValueError("vocab contains duplicate words")

    @classmethod
    def from_tokens(cls, ranked_tokens: Iterable[str]) -> "Vocab":
        return cls(list(SPECIAL_TOKENS) + list(ranked_tokens))

    def id(self, word: str) -> int:
        return self._ids.get(word, UNK_ID)

    def word(self, idx: int) -> str:
        return self.words[idx]

    def __len__(self) -> int:
        return len(self.words)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.words == other.words


@dataclass
class Dataset:
    """Contents of a dataset file: encoded pairs plus the geometry they used."""

    vocab_size: int
    buckets: tuple[Bucket, ...]
    pairs: list[TokenizedPair] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _split_fields(line: str, separator: str) -> list[str]:
    return [f.strip() for f in line.split(separator)]


def _parse_conversation(raw: str, known_ids: set[str]) -> list[str]:
    try:
        ids = ast.literal_eval(raw)
    except (ValueError, SyntaxError) as exc:
        raise MalformedConversationList(f"unparseable id list {raw!r}") from exc
    if not isinstance(ids, (list, tuple)):
        raise MalformedConversationList(f"id list is not a sequence: {raw!r}")
    ids = [str(i) for i in ids]
    for line_id in ids:
        if line_id not in known_ids:
            raise MalformedConversationList(f"conversation references missing line {line_id}")
    return ids


def parse_corpus(
    lines_stream: IO[str],
    conversations_stream: IO[str],
    separator: str = DEFAULT_SEPARATOR,
) -> tuple[list[RawUtterance], list[list[str]], ParseStats]:
    """Parse the two raw corpus files into utterances and conversations.

    Utterance lines need at least 4 separator-delimited fields
    (line id, character id, movie id, ..., text); the text is the last field.
    Conversation lines end in a bracketed list of line ids. Unparseable lines
    and conversations referencing unknown line ids are skipped and counted,
    never fatal.
    """
    stats = ParseStats()
    utterances: list[RawUtterance] = []
    for line in lines_stream:
        line = line.rstrip("\n")
        if not line.strip():
            continue
        fields = _split_fields(line, separator)
        if len(fields) < 4 or not fields[0]:
            stats.skipped_lines += 1
            continue
        utterances.append(RawUtterance(fields[0], fields[1], fields[2], fields[-1]))
    stats.utterances = len(utterances)

    known_ids = {u.line_id for u in utterances}
    conversations: list[list[str]] = []
    for line in conversations_stream:
        line = line.rstrip("\n")
        if not line.strip():
            continue
        fields = _split_fields(line, separator)
        try:
            conversations.append(_parse_conversation(fields[-1], known_ids))
        except MalformedConversationList:
            stats.skipped_conversations += 1
    stats.conversations = len(conversations)
    return utterances, conversations, stats


def extract_pairs(
    conversations: Sequence[Sequence[str]],
    utterances: Sequence[RawUtterance],
) -> list[DialogPair]:
    """Adjacent (question, answer) pairs from each conversation, cleaned.

    Consecutive utterances by the same character collapse to the run's last
    utterance first, so a pair is always an actual speaker exchange.
    """
    by_id = {u.line_id: u for u in utterances}
    pairs: list[DialogPair] = []
    for conv in conversations:
        turns: list[RawUtterance] = []
        for line_id in conv:
            u = by_id[line_id]
            if turns and turns[-1].character_id == u.character_id:
                turns[-1] = u
            else:
                turns.append(u)
        for a, b in zip(turns, turns[1:]):
            pairs.append(DialogPair(clean_text(a.text), clean_text(b.text)))
    return pairs


# ---------------------------------------------------------------------------
# Cleaning
# ---------------------------------------------------------------------------

_DISALLOWED = re.compile(r"[^a-z.,?!' ]+")
_REPEATED_PUNCT = re.compile(r"([.,?!'])\1+")
_SPACED_PUNCT = re.compile(r"\s*([.,?!])\s*")
_MULTI_SPACE = re.compile(r"\s+")


def clean_text(raw: str) -> str:
    """Lowercase and keep only a-z, space, and . , ? ! ' .

    Runs of the same punctuation collapse to one; . , ? ! become standalone
    tokens (the apostrophe stays attached, so contractions survive);
    disallowed characters turn into a word gap rather than silently merging
    their neighbours. Idempotent on its own output.
    """
    s = raw.lower().replace("’", "'").replace("‘", "'")
    s = _DISALLOWED.sub(" ", s)
    s = _REPEATED_PUNCT.sub(r"\1", s)
    s = _SPACED_PUNCT.sub(r" \1 ", s)
    return _MULTI_SPACE.sub(" ", s).strip()


def filter_pairs(
    pairs: Iterable[DialogPair],
    min_len: int = DEFAULT_MIN_LEN,
    max_len: int = DEFAULT_MAX_LEN,
) -> list[DialogPair]:
    """Keep pairs whose question and answer both have min_len..max_len tokens."""
    if min_len > max_len:
        raise InvalidRange(f"min_len {min_len} > max_len {max_len}")
    kept = []
    for p in pairs:
        nq, na = len(p.question.split()), len(p.answer.split())
        if min_len <= nq <= max_len and min_len <= na <= max_len:
            kept.append(p)
    return kept


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

def build_vocab(pairs: Iterable[DialogPair], keep_n: int = DEFAULT_KEEP_N) -> Vocab:
    """The keep_n most frequent words plus the four specials.

    Frequency ties break by earlier first occurrence, so builds are
    deterministic for a fixed pair order.
    """
    freq: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    pos = 0
    for pair in pairs:
        for token in pair.question.split() + pair.answer.split():
            freq[token] = freq.get(token, 0) + 1
            if token not in first_seen:
                first_seen[token] = pos
            pos += 1
    ranked = sorted(freq, key=lambda w: (-freq[w], first_seen[w]))
    return Vocab.from_tokens(ranked[:keep_n])


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def encode_source(
    tokens: Sequence[str],
    vocab: Vocab,
    buckets: Sequence[Bucket],
    reverse_source: bool = True,
) -> tuple[list[int], int] | None:
    """Left-padded (optionally reversed) source ids in the smallest bucket
    whose src_cap fits; None when no bucket does."""
    for index, bucket in enumerate(buckets):
        if len(tokens) <= bucket.src_cap:
            ids = [vocab.id(t) for t in tokens]
            if reverse_source:
                ids = ids[::-1]
            return [PAD_ID] * (bucket.src_cap - len(ids)) + ids, index
    return None


def encode_pair(
    pair: DialogPair,
    vocab: Vocab,
    buckets: Sequence[Bucket] = DEFAULT_BUCKETS,
    reverse_source: bool = True,
) -> TokenizedPair | None:
    """Encode one cleaned pair into the smallest bucket that fits both sides.

    Source: left PAD then content (reversed when reverse_source). Target:
    GO + ids + EOS, right-padded. Returns None (discard) if no bucket fits.
    """
    src_tokens = pair.question.split()
    tgt_tokens = pair.answer.split()
    for index, bucket in enumerate(buckets):
        if len(src_tokens) <= bucket.src_cap and len(tgt_tokens) + 2 <= bucket.tgt_cap:
            src_ids = [vocab.id(t) for t in src_tokens]
            if reverse_source:
                src_ids = src_ids[::-1]
            src = [PAD_ID] * (bucket.src_cap - len(src_ids)) + src_ids
            tgt = [GO_ID] + [vocab.id(t) for t in tgt_tokens] + [EOS_ID]
            tgt += [PAD_ID] * (bucket.tgt_cap - len(tgt))
            return TokenizedPair(tuple(src), tuple(tgt), index)
    return None


def batch_dataset(
    tokenized: Sequence[TokenizedPair],
    batch_size: int,
    shuffle_seed: int,
) -> list[Batch]:
    """Shuffle within buckets and chunk; batches never mix buckets, the final
    partial batch is kept, and the whole ordering is deterministic per seed."""
    if not tokenized:
        raise EmptyDataset("no pairs to batch")
    if batch_size < 1:
        raise InvalidRange(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(shuffle_seed)
    by_bucket: dict[int, list[TokenizedPair]] = {}
    for p in tokenized:
        by_bucket.setdefault(p.bucket_index, []).append(p)
    batches: list[Batch] = []
    for bucket_index in sorted(by_bucket):
        group = by_bucket[bucket_index]
        order = rng.permutation(len(group))
        for start in range(0, len(group), batch_size):
            chunk = [group[i] for i in order[start:start + batch_size]]
            src = np.array([p.src_ids for p in chunk], dtype=np.int64)
            tgt = np.array([p.tgt_ids for p in chunk], dtype=np.int64)
            batches.append(Batch(bucket_index, src, tgt))
    rng.shuffle(batches)  # type: ignore[arg-type]
    return batches


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def format_buckets(buckets: Sequence[Bucket]) -> str:
    return ";".join(f"{b.src_cap},{b.tgt_cap}" for b in buckets)


def parse_buckets(text: str) -> tuple[Bucket, ...]:
    buckets = []
    for part in text.split(";"):
        src_cap, tgt_cap = part.split(",")
        buckets.append(Bucket(int(src_cap), int(tgt_cap)))
    if not buckets:
        raise InvalidRange("empty bucket list")
    if [b.src_cap for b in buckets] != sorted(b.src_cap for b in buckets):
        raise InvalidRange("buckets must be sorted ascending by src_cap")
    return tuple(buckets)


def save_vocab(path, vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for word in vocab.words:
            fh.write(word + "\n")


def load_vocab(path) -> Vocab:
    with open(path, "r", encoding="utf-8") as fh:
        words = [line.rstrip("\n") for line in fh if line.strip()]
    return Vocab(words)


def save_dataset(path, pairs: Sequence[TokenizedPair], vocab_size: int,
                 buckets: Sequence[Bucket]) -> None:
    """Line-oriented dataset: a header, then `src ids | tgt ids` per pair."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{DATASET_MAGIC} {DATASET_VERSION} {vocab_size} {format_buckets(buckets)}\n")
        for p in pairs:
            src = " ".join(str(i) for i in p.src_ids)
            tgt = " ".join(str(i) for i in p.tgt_ids)
            fh.write(f"{src} | {tgt}\n")


def load_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != DATASET_MAGIC or header[1] != DATASET_VERSION:
            raise ValueError(f"not a {DATASET_MAGIC} {DATASET_VERSION} file: {path}")
        vocab_size = int(header[2])
        buckets = parse_buckets(header[3])
        caps = {(b.src_cap, b.tgt_cap): i for i, b in enumerate(buckets)}
        pairs = []
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            src_part, _, tgt_part = line.partition("|")
            src = tuple(int(t) for t in src_part.split())
            tgt = tuple(int(t) for t in tgt_part.split())
            key = (len(src), len(tgt))
            if key not in caps:
                raise ValueError(f"{path}:{line_no}: lengths {key} match no bucket")
            pairs.append(TokenizedPair(src, tgt, caps[key]))
    return Dataset(vocab_size, buckets, pairs)
