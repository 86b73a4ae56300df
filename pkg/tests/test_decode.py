import numpy as np
import pytest

from seqchat.corpus import Bucket, EOS_ID, GO_ID, PAD_ID, Vocab
from seqchat.decode import DecodeConfig, beam_search, greedy_decode, postprocess_reply
from seqchat.model import ModelConfig, Seq2SeqParams, decoder_step, encode_bidirectional, prep_attention
from seqchat.tensor import zeros


def random_model(seed, vocab_size=7, rnn_size=3):
    config = ModelConfig(vocab_size=vocab_size, embedding_size=3, rnn_size=rnn_size,
                         batch_size=1, buckets=(Bucket(3, 5),), epochs=1)
    return Seq2SeqParams.init(config, seed=seed)


def random_src(seed, vocab_size=7, length=3):
    rng = np.random.default_rng(seed)
    return rng.integers(4, vocab_size, size=length).tolist()


def log_softmax(row):
    shifted = row.astype(np.float64) - row.max()
    return shifted - np.log(np.exp(shifted).sum())


def sequence_score(src, params, ids, ended_with_eos):
    """Independent teacher-forced scoring of a decoded sequence."""
    enc = encode_bidirectional(np.asarray([src]), params)
    att = prep_attention(enc, params)
    s, c = enc.s0, zeros(1, params.rnn_size, params.dtype)
    total = 0.0
    tokens = list(ids) + ([EOS_ID] if ended_with_eos else [])
    prev = GO_ID
    for token in tokens:
        s, c, logits, _ = decoder_step([prev], s, c, enc, params, att_proj=att)
        total += float(log_softmax(logits.data[0])[token])
        prev = token
    return total


def brute_force_two_steps(src, params):
    """Enumerate every decode path of length <= 2 and apply the same
    terminal-competition rule as the beam (score, then lexicographic ids)."""
    enc = encode_bidirectional(np.asarray([src]), params)
    att = prep_attention(enc, params)
    c0 = zeros(1, params.rnn_size, params.dtype)
    s1, c1, logits, _ = decoder_step([GO_ID], enc.s0, c0, enc, params, att_proj=att)
    lp1 = log_softmax(logits.data[0])
    vocab = params.vocab_size
    outcomes = [(float(lp1[EOS_ID]), ())]
    for a in range(vocab):
        if a in (PAD_ID, GO_ID, EOS_ID):
            continue
        s2, c2, logits2, _ = decoder_step([a], s1, c1, enc, params, att_proj=att)
        lp2 = log_softmax(logits2.data[0])
        for b in range(vocab):
            if b in (PAD_ID, GO_ID):
                continue
            score = float(lp1[a]) + float(lp2[b])
            ids = (a,) if b == EOS_ID else (a, b)
            outcomes.append((score, ids))
    outcomes.sort(key=lambda o: (-o[0], o[1]))
    return list(outcomes[0][1])


class TestGreedy:
    def test_deterministic(self):
        params = random_model(0)
        src = random_src(1)
        assert greedy_decode(src, params, 5) == greedy_decode(src, params, 5)

    def test_rigged_eos_gives_empty_output(self):
        params = random_model(2)
        params.out_b.data[0, EOS_ID] = 50.0
        assert greedy_decode(random_src(3), params, 5) == []

    def test_never_emits_pad_or_go(self):
        for seed in range(20):
            params = random_model(seed)
            out = greedy_decode(random_src(seed), params, 6)
            assert PAD_ID not in out and GO_ID not in out

    def test_matches_step_by_step_oracle(self):
        for seed in range(20):
            params = random_model(seed)
            src = random_src(seed + 100)
            expected = []
            enc = encode_bidirectional(np.asarray([src]), params)
            att = prep_attention(enc, params)
            s, c = enc.s0, zeros(1, params.rnn_size, params.dtype)
            prev = GO_ID
            for _ in range(5):
                s, c, logits, _ = decoder_step([prev], s, c, enc, params, att_proj=att)
                row = logits.data[0].copy()
                row[PAD_ID] = row[GO_ID] = -np.inf
                prev = int(row.argmax())
                if prev == EOS_ID:
                    break
                expected.append(prev)
            assert greedy_decode(src, params, 5) == expected


class TestBeam:
    def test_beam_one_equals_greedy_on_100_models(self):
        for seed in range(100):
            params = random_model(seed)
            src = random_src(1000 + seed)
            greedy = greedy_decode(src, params, 5)
            beam = beam_search(src, params, DecodeConfig(beam_width=1), max_steps=5)
            assert beam == greedy, f"seed {seed}"

    def test_full_width_two_steps_equals_brute_force(self):
        for seed in range(30):
            params = random_model(seed, vocab_size=6)
            src = random_src(2000 + seed, vocab_size=6)
            beam = beam_search(src, params,
                               DecodeConfig(beam_width=6), max_steps=2)
            assert beam == brute_force_two_steps(src, params), f"seed {seed}"

    def test_tie_breaks_toward_lower_token_id(self):
        params = random_model(5, vocab_size=6)
        params.out_w.data[:] = 0.0
        params.out_b.data[:] = 0.0
        params.out_b.data[0, 4] = params.out_b.data[0, 5] = 8.0  # exact tie
        greedy = greedy_decode(random_src(6, vocab_size=6), params, 3)
        assert greedy[0] == 4
        beam = beam_search(random_src(6, vocab_size=6), params,
                           DecodeConfig(beam_width=1), max_steps=3)
        assert beam == greedy

    def test_score_at_least_greedy_for_full_width(self):
        for seed in range(25):
            params = random_model(seed, vocab_size=6)
            src = random_src(3000 + seed, vocab_size=6)
            greedy = greedy_decode(src, params, 4)
            greedy_ended_eos = len(greedy) < 4
            g_score = sequence_score(src, params, greedy, greedy_ended_eos)
            _, finalists = beam_search(src, params, DecodeConfig(beam_width=6),
                                       max_steps=4, return_all=True)
            assert finalists[0].log_prob >= g_score - 1e-9

    def test_hypothesis_scores_never_positive_and_monotone(self):
        params = random_model(9)
        _, finalists = beam_search(random_src(10), params,
                                   DecodeConfig(beam_width=3), max_steps=5,
                                   return_all=True)
        for hyp in finalists:
            assert hyp.log_prob <= 1e-12
            assert hyp.steps >= len(hyp.ids)

    def test_output_token_hygiene(self):
        for seed in range(20):
            params = random_model(seed + 40)
            out = beam_search(random_src(seed + 40), params,
                              DecodeConfig(beam_width=3), max_steps=6)
            assert PAD_ID not in out and GO_ID not in out and EOS_ID not in out

    def test_length_normalization_changes_ranking_not_contract(self):
        params = random_model(11)
        out = beam_search(random_src(12), params,
                          DecodeConfig(beam_width=3, length_norm=1.0), max_steps=5)
        assert isinstance(out, list)

    def test_max_steps_required(self):
        with pytest.raises(ValueError):
            beam_search(random_src(0), random_model(0), DecodeConfig(beam_width=2))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DecodeConfig(beam_width=0)
        with pytest.raises(ValueError):
            DecodeConfig(beam_width=1, max_steps=0)


class TestPostprocess:
    VOCAB = Vocab(["<PAD>", "<GO>", "<EOS>", "<UNK>",
                   "i", "am", "fine", ".", "hi", "?"])

    def test_joins_and_reattaches_punctuation(self):
        ids = [GO_ID, 4, 5, 6, 7, EOS_ID]
        assert postprocess_reply(ids, self.VOCAB) == "i am fine."

    def test_empty(self):
        assert postprocess_reply([], self.VOCAB) == ""

    def test_stops_at_eos_and_drops_pad(self):
        assert postprocess_reply([8, EOS_ID, PAD_ID, PAD_ID], self.VOCAB) == "hi"

    def test_unk_rendered_literally(self):
        assert postprocess_reply([3, 9], self.VOCAB) == "<UNK>?"

    def test_question_mark_attaches(self):
        assert postprocess_reply([4, 9], self.VOCAB) == "i?"
