"""seqchat: an LSTM encoder-decoder chatbot with additive attention, built
from scratch on a minimal 2-D tensor kernel with reverse-mode gradients."""

from .corpus import (
    Bucket,
    Dataset,
    DialogPair,
    TokenizedPair,
    Vocab,
    build_vocab,
    clean_text,
    encode_pair,
    extract_pairs,
    filter_pairs,
    parse_corpus,
)
from .decode import DecodeConfig, beam_search, greedy_decode, postprocess_reply
from .model import ModelConfig, Seq2SeqParams, forward_teacher_forced
from .service import ChatEngine, serve
from .tensor import Tape, Tensor2
from .train import Checkpoint, grad_check, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Bucket", "Checkpoint", "ChatEngine", "Dataset", "DecodeConfig", "DialogPair",
    "ModelConfig", "Seq2SeqParams", "Tape", "Tensor2", "TokenizedPair", "Vocab",
    "beam_search", "build_vocab", "clean_text", "encode_pair", "extract_pairs",
    "filter_pairs", "forward_teacher_forced", "grad_check", "greedy_decode",
    "load_checkpoint", "parse_corpus", "postprocess_reply", "save_checkpoint",
    "serve", "train",
]
