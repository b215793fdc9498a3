import pytest
import torch

from ai.nncore import grad_check, init_uniform_
from ai.textenc import (
    DES_ID,
    PAD_ID,
    RESERVED,
    SENTINEL,
    SENTINEL_ID,
    SEP,
    SEP_ID,
    UNK_ID,
    EncoderConfig,
    TextEncoder,
    Vocab,
    build_entity_text,
    char_trigrams,
    collate,
    encode,
    encode_pair,
    encode_pair_ids,
    encode_text,
)


@pytest.fixture
def encoder(toy_vocab, text_cfg):
    model = TextEncoder(text_cfg, len(toy_vocab), toy_vocab.trigram_buckets).double()
    init_uniform_(model, seed=3)
    return model


@pytest.mark.parametrize("surface, descriptions, expected", [
    ("bad romance", ["song", "2011 film"], "bad romance [des] song [des] 2011 film"),
    ("carson city", [], "carson city"),
    ("x", ["a"], "x [des] a"),
])
def test_build_entity_text(surface, descriptions, expected):
    assert build_entity_text(surface, descriptions) == expected


def test_reserved_ids_come_first(toy_vocab):
    assert toy_vocab.itos[:len(RESERVED)] == list(RESERVED)
    assert toy_vocab.token_id("[des]") == DES_ID
    assert toy_vocab.token_id("never-seen") == UNK_ID


def test_trigram_buckets_skip_padding_row(toy_vocab):
    ids = toy_vocab.trigram_ids("romance")
    assert len(ids) == len(char_trigrams("romance"))
    assert all(1 <= i <= toy_vocab.trigram_buckets for i in ids)
    assert toy_vocab.trigram_ids(SENTINEL) == []


def test_vocab_file_keeps_ids(toy_vocab, tmp_path):
    path = tmp_path / "vocab.txt"
    toy_vocab.save(path)
    loaded = Vocab.load(path, toy_vocab.trigram_buckets)
    assert loaded.itos == toy_vocab.itos


def test_pair_layout():
    vocab = Vocab.build(["play x", "song"])
    enc = encode_pair_ids(vocab, "play x", "x [des] song", max_len=16)
    assert enc.words == [SENTINEL, "play", "x", SEP, "x", "[des]", "song"]
    assert enc.ids[0] == SENTINEL_ID and enc.ids[3] == SEP_ID and enc.ids[5] == DES_ID
    assert enc.n_utt == 2
    assert enc.utterance_position(1) == 2


def test_pair_with_empty_entity_text():
    vocab = Vocab.build(["play x"])
    enc = encode_pair_ids(vocab, "play x", "", max_len=16)
    assert enc.words == [SENTINEL, "play", "x", SEP]


def test_pair_truncates_entity_side_first():
    vocab = Vocab.build(["a b c d e f"])
    enc = encode_pair_ids(vocab, "a b c", "d e f", max_len=6)
    assert enc.words == [SENTINEL, "a", "b", "c", SEP, "d"]
    assert enc.n_utt == 3
    assert enc.truncated


def test_empty_text_is_a_single_sentinel(toy_vocab):
    enc = encode_text(toy_vocab, "", max_len=8)
    assert enc.ids == [SENTINEL_ID]
    assert enc.n_utt == 0


def test_collate_pads(toy_vocab):
    batch = collate(toy_vocab, [encode_text(toy_vocab, "lady gaga", 8), encode_text(toy_vocab, "nevada", 8)])
    assert batch.token_ids.shape == (2, 3)
    assert batch.token_ids[1, 2].item() == PAD_ID
    assert batch.padding.tolist() == [[False, False, False], [False, False, True]]


def test_encoder_is_deterministic(encoder, toy_vocab):
    pooled_a, tokens_a = encode(encoder, toy_vocab, "play bad boy dance by lady gaga")
    pooled_b, tokens_b = encode(encoder, toy_vocab, "play bad boy dance by lady gaga")
    assert torch.equal(pooled_a, pooled_b)
    assert tokens_a.shape == (8, encoder.cfg.hidden)
    assert torch.equal(tokens_a, tokens_b)


def test_empty_text_encodes(encoder, toy_vocab):
    pooled, tokens = encode(encoder, toy_vocab, "")
    assert tokens.shape == (1, encoder.cfg.hidden)
    assert torch.isfinite(pooled).all()


def test_unknown_words_differ_through_trigrams(encoder, toy_vocab):
    a, _ = encode(encoder, toy_vocab, "zzqx")
    b, _ = encode(encoder, toy_vocab, "qqwy")
    assert not torch.allclose(a, b)


def test_encode_pair_returns_layout(encoder, toy_vocab):
    tokens, layout = encode_pair(encoder, toy_vocab, "play bad romance", "bad romance [des] song")
    assert tokens.shape[0] == len(layout)
    assert layout.n_utt == 3


def test_pooled_gradient_matches_finite_differences(encoder, toy_vocab):
    head = torch.linspace(-1.0, 1.0, encoder.cfg.hidden, dtype=torch.float64)

    def f():
        pooled, _ = encode(encoder, toy_vocab, "play bad boy dance")
        return pooled @ head

    assert grad_check(f, encoder, samples_per_param=4) < 1e-4


def test_hidden_must_divide_heads():
    with pytest.raises(ValueError):
        EncoderConfig(hidden=10, heads=4)
