"""Single entry point with subcommands for the whole lifecycle:
preprocess, train, eval, chat, serve.

Exit codes: 0 success, 1 runtime failure (divergence), 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import signal
import sys
from pathlib import Path

from . import corpus
from .errors import (
    BadRequest,
    BindError,
    CorruptCheckpoint,
    Diverged,
    EmptyDataset,
    InvalidRange,
    VocabMismatch,
)
from .model import ModelConfig, parse_config_value
from .service import ChatEngine, serve
from .train import evaluate, load_checkpoint, train, write_report

# Reference count of filtered pairs for the full Cornell corpus; preprocess
# reports the deviation so pipeline drift is measured, not hidden.
CALIBRATION_FILTERED_PAIRS = 22992

PRESETS: dict[str, dict] = {
    "config1": dict(batch_size=128, embedding_size=128, rnn_size=128,
                    learning_rate=0.001, epochs=500, keep_probability=0.75,
                    min_learning_rate=0.0001, learning_rate_decay=0.9),
    "config2": dict(batch_size=512, embedding_size=512, rnn_size=512,
                    learning_rate=0.001, epochs=100, keep_probability=0.75,
                    min_learning_rate=0.0001, learning_rate_decay=0.9),
    "config3": dict(batch_size=32, embedding_size=1024, rnn_size=1024,
                    learning_rate=0.001, epochs=50, keep_probability=0.7,
                    min_learning_rate=0.0001, learning_rate_decay=0.9),
}
DEFAULT_PRESET = "config3"

_FLAG_TO_FIELD = {
    "epochs": "epochs",
    "batch_size": "batch_size",
    "embedding_size": "embedding_size",
    "rnn_size": "rnn_size",
    "keep_prob": "keep_probability",
    "beam": "beam_width",
    "reverse_source": "reverse_source",
}


def _read_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, eq, value = line.partition("=")
            if not eq:
                raise ValueError(f"{path}:{line_no}: expected key=value, got {line!r}")
            values[key.strip()] = parse_config_value(key.strip(), value.strip())
    return values


def _build_train_config(dataset: corpus.Dataset, args) -> ModelConfig:
    merged: dict = dict(PRESETS[args.preset])
    if args.config is not None:
        merged.update(_read_config_file(args.config))
    for flag, field in _FLAG_TO_FIELD.items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[field] = value
    for field, value in (("vocab_size", dataset.vocab_size), ("buckets", dataset.buckets)):
        if field in merged and merged[field] != value:
            raise ValueError(f"{field} in config conflicts with the dataset file")
        merged[field] = value
    return ModelConfig(**merged)


def _parse_bind(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bind address must be host:port, got {text!r}")
    return host, int(port)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    buckets = corpus.parse_buckets(args.buckets)
    with open(args.lines, "r", encoding=args.encoding, errors="replace") as lines_fh, \
            open(args.conversations, "r", encoding=args.encoding, errors="replace") as conv_fh:
        utterances, conversations, stats = corpus.parse_corpus(
            lines_fh, conv_fh, separator=args.separator)
    pairs = corpus.extract_pairs(conversations, utterances)
    filtered = corpus.filter_pairs(pairs, args.min_len, args.max_len)
    vocab = corpus.build_vocab(filtered, keep_n=args.keep_n)
    encoded = []
    discarded = 0
    for pair in filtered:
        tokenized = corpus.encode_pair(pair, vocab, buckets, args.reverse_source)
        if tokenized is None:
            discarded += 1
        else:
            encoded.append(tokenized)

    dataset_path = out_dir / "dataset.txt"
    vocab_path = out_dir / "vocab.txt"
    corpus.save_dataset(dataset_path, encoded, len(vocab), buckets)
    corpus.save_vocab(vocab_path, vocab)

    print(f"raw utterances: {stats.utterances} (skipped lines: {stats.skipped_lines})")
    print(f"conversations: {stats.conversations} "
          f"(skipped: {stats.skipped_conversations})")
    print(f"extracted pairs: {len(pairs)}")
    print(f"filtered pairs: {len(filtered)} "
          f"(kept {args.min_len}..{args.max_len} tokens per side)")
    print(f"calibration: full-corpus reference is {CALIBRATION_FILTERED_PAIRS} "
          f"filtered pairs (delta {len(filtered) - CALIBRATION_FILTERED_PAIRS:+d})")
    print(f"encoded pairs: {len(encoded)} (discarded by bucket: {discarded})")
    print(f"vocab size: {len(vocab)}")
    print(f"wrote {dataset_path} and {vocab_path}")
    return 0


def cmd_train(args) -> int:
    dataset = corpus.load_dataset(args.dataset)
    vocab = corpus.load_vocab(args.vocab)
    config = _build_train_config(dataset, args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, report = train(dataset, vocab, config, seed=args.seed, out_dir=out_dir,
                      log=print)
    write_report(out_dir / "report.txt", report)
    if report:
        print(f"final train loss: {report[-1].train_loss:.4f}")
    print(f"checkpoints and report.txt written to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    dataset = corpus.load_dataset(args.dataset)
    cp = load_checkpoint(args.checkpoint)
    if len(cp.vocab) != dataset.vocab_size:
        raise VocabMismatch(f"checkpoint vocab has {len(cp.vocab)} words, "
                            f"dataset was encoded with {dataset.vocab_size}")
    mean_ce, accuracy = evaluate(dataset.pairs, cp.params, cp.config)
    import math
    print(f"pairs: {len(dataset.pairs)}")
    print(f"perplexity: {math.exp(mean_ce):.3f}")
    print(f"token accuracy: {accuracy:.4f}")
    return 0


def cmd_chat(args) -> int:
    engine = ChatEngine.from_file(args.checkpoint, beam_width=args.beam)
    print("seqchat ready; type /quit to exit")
    while True:
        try:
            line = input("> ")
        except EOFError:
            print()
            break
        line = line.strip()
        if line == "/quit":
            break
        if not line:
            continue
        try:
            result = engine.reply(line)
        except BadRequest as exc:
            print(f"(rejected: {exc})")
            continue
        print(f"Bot: {result.reply}")
    return 0


def cmd_serve(args) -> int:
    static_dir = args.static
    if static_dir is None:
        default_bundle = Path("frontend") / "dist"
        if default_bundle.is_dir():
            static_dir = default_bundle
    server = serve(args.checkpoint, bind=_parse_bind(args.bind),
                   beam_width=args.beam, max_inflight=args.max_inflight,
                   static_dir=static_dir, transcript_path=args.transcript,
                   verbose=True)
    host, port = server.address
    print(f"serving on http://{host}:{port}/ (checkpoint: {args.checkpoint})")

    def stop(signum, frame):
        server.shutdown()

    signal.signal(signal.SIGINT, stop)
    signal.signal(signal.SIGTERM, stop)
    server.serve_forever()
    server.server_close()
    print("shut down")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_model_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--preset", choices=sorted(PRESETS), default=DEFAULT_PRESET)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--batch-size", type=int, dest="batch_size")
    sub.add_argument("--embedding-size", type=int, dest="embedding_size")
    sub.add_argument("--rnn-size", type=int, dest="rnn_size")
    sub.add_argument("--keep-prob", type=float, dest="keep_prob")
    sub.add_argument("--beam", type=int)
    sub.add_argument("--reverse-source", action=argparse.BooleanOptionalAction,
                     dest="reverse_source", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqchat",
        description="LSTM encoder-decoder chatbot with additive attention")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="corpus files -> dataset + vocab")
    p.add_argument("--lines", required=True, help="utterance lines file")
    p.add_argument("--conversations", required=True, help="conversation lists file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--separator", default=corpus.DEFAULT_SEPARATOR)
    p.add_argument("--encoding", default="utf-8",
                   help="input file encoding (invalid bytes are replaced)")
    p.add_argument("--min-len", type=int, default=corpus.DEFAULT_MIN_LEN, dest="min_len")
    p.add_argument("--max-len", type=int, default=corpus.DEFAULT_MAX_LEN, dest="max_len")
    p.add_argument("--keep-n", type=int, default=corpus.DEFAULT_KEEP_N, dest="keep_n")
    p.add_argument("--buckets", default=corpus.format_buckets(corpus.DEFAULT_BUCKETS),
                   help='size classes, e.g. "5,10;10,15;20,25;40,50"')
    p.add_argument("--reverse-source", action=argparse.BooleanOptionalAction,
                   dest="reverse_source", default=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train on a preprocessed dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="checkpoint/report directory")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="perplexity and token accuracy on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("chat", help="interactive terminal chat")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--beam", type=int)
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("serve", help="run the HTTP chat service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bind", default="127.0.0.1:8080")
    p.add_argument("--beam", type=int)
    p.add_argument("--max-inflight", type=int, default=4, dest="max_inflight")
    p.add_argument("--static", help="web client bundle directory (default: frontend/dist)")
    p.add_argument("--transcript", help="append one JSON object per exchange to this file")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Diverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, CorruptCheckpoint, VocabMismatch, EmptyDataset, InvalidRange,
            BindError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
