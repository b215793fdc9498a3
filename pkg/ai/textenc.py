"""
Tokenizer and small self-attention text encoder.

Words are lowercased whitespace tokens. Every token embeds as its word row
plus the mean of hashed character-trigram rows, so words missing from the
vocabulary (typically the corrupted ones) still get a non-trivial vector.
"""

import logging
import math
import zlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import torch
import torch.nn as nn

from utils.kgstore import DES_TOKEN
from utils.storage import atomic_write_text, read_lines

logger = logging.getLogger(__name__)

PAD = "[pad]"
SENTINEL = "[cls]"
SEP = "[sep]"
UNK = "[unk]"
RESERVED = (PAD, SENTINEL, SEP, DES_TOKEN, UNK)
PAD_ID, SENTINEL_ID, SEP_ID, DES_ID, UNK_ID = range(len(RESERVED))


def build_entity_text(surface: str, descriptions: Sequence[str]) -> str:
    """`surface [des] d1 [des] d2 ...`; the surface alone when there are no descriptions."""
    parts = [surface] + [d for d in descriptions if d]
    return f" {DES_TOKEN} ".join(parts)


def tokenize(text: str) -> List[str]:
    return text.lower().split()


def char_trigrams(word: str) -> List[str]:
    padded = f"<{word}>"
    if len(padded) <= 3:
        return [padded]
    return [padded[i:i + 3] for i in range(len(padded) - 2)]


class Vocab:
    """Token to id map with reserved ids; unknown words fall back to trigram buckets."""

    def __init__(self, tokens: Sequence[str], trigram_buckets: int = 4096):
        self.itos = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        self.trigram_buckets = trigram_buckets

    def __len__(self) -> int:
        return len(self.itos)

    def token_id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def trigram_ids(self, token: str) -> List[int]:
        """Bucket ids in [1, trigram_buckets]; 0 is padding. Reserved tokens get none."""
        if token in RESERVED:
            return []
        return [1 + zlib.crc32(g.encode("utf-8")) % self.trigram_buckets for g in char_trigrams(token)]

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1, trigram_buckets: int = 4096) -> "Vocab":
        counts = Counter(tok for text in texts for tok in tokenize(text))
        tokens = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls(tokens, trigram_buckets)

    def save(self, filepath: Path):
        """One token per line, id = line number."""
        atomic_write_text(filepath, "\n".join(self.itos) + "\n")

    @classmethod
    def load(cls, filepath: Path, trigram_buckets: int = 4096) -> "Vocab":
        lines = read_lines(filepath)
        if tuple(lines[:len(RESERVED)]) != RESERVED:
            raise ValueError(f"{filepath} does not start with the reserved tokens")
        return cls(lines[len(RESERVED):], trigram_buckets)


@dataclass
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    hidden: int = 64
    max_len: int = 48
    ffn: int = 128

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")


@dataclass
class EncodedText:
    """Token ids for one sequence: SENTINEL first, optional SEP + second segment."""
    ids: List[int]
    words: List[str]
    n_utt: int
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)

    def utterance_position(self, k: int) -> int:
        """Sequence position of utterance word k."""
        return k + 1


def encode_text(vocab: Vocab, text: str, max_len: int) -> EncodedText:
    words = tokenize(text)
    truncated = len(words) > max_len - 1
    words = words[:max_len - 1]
    return EncodedText([SENTINEL_ID] + [vocab.token_id(w) for w in words], [SENTINEL] + words, len(words), truncated)


def encode_pair_ids(vocab: Vocab, utterance: str, entity_text: str, max_len: int) -> EncodedText:
    """`SENTINEL utt SEP entity_text`, truncating the entity side first."""
    utt = tokenize(utterance)
    ent = tokenize(entity_text)
    budget = max_len - 2
    truncated = len(utt) + len(ent) > budget
    utt = utt[:budget]
    ent = ent[:max(0, budget - len(utt))]
    words = [SENTINEL] + utt + [SEP] + ent
    ids = [SENTINEL_ID] + [vocab.token_id(w) for w in utt] + [SEP_ID] + [vocab.token_id(w) for w in ent]
    return EncodedText(ids, words, len(utt), truncated)


@dataclass
class TokenBatch:
    token_ids: torch.Tensor     # [B, L]
    trigram_ids: torch.Tensor   # [B, L, G]
    padding: torch.Tensor       # [B, L] True at padding
    lengths: List[int]
    n_utt: List[int]


def collate(vocab: Vocab, encoded: Sequence[EncodedText]) -> TokenBatch:
    length = max(len(e) for e in encoded)
    grams = [[vocab.trigram_ids(w) for w in e.words] for e in encoded]
    width = max([1] + [len(g) for row in grams for g in row])
    token_ids = torch.full((len(encoded), length), PAD_ID, dtype=torch.long)
    trigram_ids = torch.zeros((len(encoded), length, width), dtype=torch.long)
    padding = torch.ones((len(encoded), length), dtype=torch.bool)
    for b, (enc, row) in enumerate(zip(encoded, grams)):
        token_ids[b, :len(enc)] = torch.tensor(enc.ids, dtype=torch.long)
        padding[b, :len(enc)] = False
        for pos, g in enumerate(row):
            if g:
                trigram_ids[b, pos, :len(g)] = torch.tensor(g, dtype=torch.long)
    return TokenBatch(token_ids, trigram_ids, padding, [len(e) for e in encoded], [e.n_utt for e in encoded])


def sinusoidal_positions(max_len: int, dim: int) -> torch.Tensor:
    position = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(max_len, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div[: dim // 2])
    return table


class TextEncoder(nn.Module):
    """Word + trigram embeddings, sinusoidal positions, a small transformer stack."""

    def __init__(self, cfg: EncoderConfig, vocab_size: int, trigram_buckets: int):
        super().__init__()
        self.cfg = cfg
        self.word_emb = nn.Embedding(vocab_size, cfg.hidden, padding_idx=PAD_ID)
        self.trigram_emb = nn.Embedding(trigram_buckets + 1, cfg.hidden, padding_idx=0)
        self.register_buffer("positions", sinusoidal_positions(cfg.max_len, cfg.hidden), persistent=False)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.hidden,
            nhead=cfg.heads,
            dim_feedforward=cfg.ffn,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
        )
        self.layers = nn.TransformerEncoder(layer, num_layers=cfg.layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(cfg.hidden)

    def embed(self, batch: TokenBatch) -> torch.Tensor:
        words = self.word_emb(batch.token_ids)
        present = (batch.trigram_ids > 0).unsqueeze(-1).to(words.dtype)
        grams = (self.trigram_emb(batch.trigram_ids) * present).sum(2) / present.sum(2).clamp(min=1)
        length = batch.token_ids.shape[1]
        return words + grams + self.positions[:length].to(words.dtype)

    def forward(self, batch: TokenBatch) -> torch.Tensor:
        """Per-token hidden vectors [B, L, H]; position 0 is the sentinel."""
        hidden = self.norm(self.embed(batch))
        return self.layers(hidden, src_key_padding_mask=batch.padding)


def encode(encoder: TextEncoder, vocab: Vocab, text: str) -> Tuple[torch.Tensor, torch.Tensor]:
    """Encode one text. Returns (pooled sentinel vector [H], token vectors [n+1, H])."""
    enc = encode_text(vocab, text, encoder.cfg.max_len)
    if enc.truncated:
        logger.debug("truncated text to %d tokens", encoder.cfg.max_len - 1)
    tokens = encoder(collate(vocab, [enc]))[0]
    return tokens[0], tokens


def encode_pair(encoder: TextEncoder, vocab: Vocab, utterance: str, entity_text: str) -> Tuple[torch.Tensor, EncodedText]:
    """Encode `SENTINEL utt SEP entity_text`. Returns (token vectors [L, H], layout)."""
    enc = encode_pair_ids(vocab, utterance, entity_text, encoder.cfg.max_len)
    return encoder(collate(vocab, [enc]))[0], enc
