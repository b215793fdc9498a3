"""
Second stage: a cross-encoder that re-ranks retrieved surfaces and, on the
same pair encoding, scores the corrupt span of the utterance.

Span scores follow s_ij = W_S . T_i + W_E . T_j over sequence positions.
Position 0 is the sentinel; the (0, 0) span means "nothing to correct".
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from utils.errors import SpanRangeError
from utils.kgstore import KnowledgeGraph
from utils.logging_setup import progress_enabled

from .graphenc import GatConfig, GraphEncoder, SubgraphFeaturizer
from .kgpretrain import EmbeddingTable
from .nncore import DEFAULT_DTYPE, AdamConfig, AdamTrainer, init_uniform_, masked_cross_entropy
from .retrieval import Candidate, TrainReport
from .textenc import EncoderConfig, TextEncoder, Vocab, build_entity_text, collate, encode_pair_ids, tokenize

logger = logging.getLogger(__name__)

DEFAULT_MAX_SPAN_LEN = 6
DROP_SPAN_TRUNCATED = "span_truncated"
DROP_CLEAN_NO_NEGATIVES = "clean_without_negatives"


@dataclass(frozen=True)
class SpanPrediction:
    """Inclusive sequence positions; null is exactly (0, 0)."""
    start: int
    end: int
    score: float
    is_null: bool
    margin: float = float("-inf")   # best non-null score minus s_00

    @property
    def word_range(self) -> Optional[Tuple[int, int]]:
        """Inclusive utterance word indices, None for the null span."""
        if self.is_null:
            return None
        return self.start - 1, self.end - 1


def null_span(score: float = 0.0, margin: float = float("-inf")) -> SpanPrediction:
    return SpanPrediction(0, 0, score, True, margin)


@dataclass(frozen=True)
class TrainSampleL2:
    source: str
    positive: Optional[str]
    hard_negatives: Tuple[str, ...] = ()
    span: Optional[Tuple[int, int]] = None   # inclusive word indices, None for clean samples

    @property
    def is_null(self) -> bool:
        return self.span is None


# ============ Span scoring ============

def span_score(w_start: torch.Tensor, w_end: torch.Tensor, tokens: torch.Tensor, i: int, j: int,
               n_utt: Optional[int] = None) -> torch.Tensor:
    """W_S . T_i + W_E . T_j for a null (0, 0) or an utterance-side span."""
    if n_utt is None:
        n_utt = tokens.shape[0] - 1
    if not ((i == 0 and j == 0) or 1 <= i <= j <= n_utt):
        raise SpanRangeError(f"span ({i}, {j}) outside utterance positions 1..{n_utt}")
    return torch.dot(w_start, tokens[i]) + torch.dot(w_end, tokens[j])


def decide_span(start_logits: Sequence[float], end_logits: Sequence[float], n_utt: int, theta: float,
                max_span_len: int = DEFAULT_MAX_SPAN_LEN) -> SpanPrediction:
    """
    Best non-null span vs the null span. The span wins iff its score exceeds
    s_00 by more than theta; ties among spans go to the earliest (start, end).
    """
    start = np.asarray(start_logits, dtype=np.float64)
    end = np.asarray(end_logits, dtype=np.float64)
    s00 = float(start[0] + end[0])
    if n_utt < 1:
        return null_span(s00)

    grid = start[1:n_utt + 1, None] + end[None, 1:n_utt + 1]
    offsets = np.arange(n_utt)[None, :] - np.arange(n_utt)[:, None]
    grid = np.where((offsets >= 0) & (offsets < max_span_len), grid, -np.inf)
    flat = int(np.argmax(grid))
    i, j = divmod(flat, n_utt)
    best = float(grid[i, j])
    margin = best - s00
    if margin > theta:
        return SpanPrediction(i + 1, j + 1, best, False, margin)
    return null_span(s00, margin)


# ============ Model ============

class CrossEncoder(nn.Module):
    """Pair encoder + its own GAT; rank MLP over (sentinel ⊕ pooled GAT) and span vectors W_S, W_E."""

    def __init__(
        self,
        text_cfg: EncoderConfig,
        gat_cfg: GatConfig,
        vocab: Vocab,
        kg: KnowledgeGraph,
        table: Optional[EmbeddingTable] = None,
        use_gat: bool = True,
        use_descriptions: bool = True,
    ):
        super().__init__()
        self.vocab = vocab
        self.kg = kg
        self.use_descriptions = use_descriptions
        self.gat_dim = gat_cfg.hidden
        self.pair_encoder = TextEncoder(text_cfg, len(vocab), vocab.trigram_buckets)
        self.gat = GraphEncoder(gat_cfg, table.node_vecs, table.rel_vecs) if use_gat and table is not None else None
        self.rank_head = nn.Sequential(
            nn.Linear(text_cfg.hidden + gat_cfg.hidden, text_cfg.hidden),
            nn.Tanh(),
            nn.Linear(text_cfg.hidden, 1),
        )
        self.w_start = nn.Linear(text_cfg.hidden, 1, bias=False)
        self.w_end = nn.Linear(text_cfg.hidden, 1, bias=False)
        self.featurizer = SubgraphFeaturizer(kg, gat_cfg.max_neighbors)

    def entity_text(self, surface: str) -> str:
        if not self.use_descriptions:
            return surface
        return build_entity_text(surface, self.kg.descriptions_for(surface))

    def encode_pairs(self, utterances: Sequence[str], surfaces: Sequence[str]):
        """Token vectors [P, L, H] for each (utterance, surface) pair, plus the layouts."""
        layouts = [encode_pair_ids(self.vocab, u, self.entity_text(s), self.pair_encoder.cfg.max_len)
                   for u, s in zip(utterances, surfaces)]
        return self.pair_encoder(collate(self.vocab, layouts)), layouts

    def rank_scores(self, tokens: torch.Tensor, id_lists: Sequence[Sequence[int]]) -> torch.Tensor:
        if self.gat is None:
            graph = torch.zeros((tokens.shape[0], self.gat_dim), dtype=tokens.dtype)
        else:
            graph = self.gat(self.featurizer.batch(id_lists))
        return self.rank_head(torch.cat([tokens[:, 0], graph], dim=1)).squeeze(-1)

    def span_logits(self, tokens: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Start and end logits per sequence position, each [P, L]."""
        return self.w_start(tokens).squeeze(-1), self.w_end(tokens).squeeze(-1)


def build_cross_encoder(
    text_cfg: EncoderConfig,
    gat_cfg: GatConfig,
    vocab: Vocab,
    kg: KnowledgeGraph,
    table: Optional[EmbeddingTable],
    use_gat: bool = True,
    use_descriptions: bool = True,
    seed: int = 0,
) -> CrossEncoder:
    model = CrossEncoder(text_cfg, gat_cfg, vocab, kg, table, use_gat, use_descriptions)
    model.to(DEFAULT_DTYPE)
    init_uniform_(model, seed)
    return model


def predict_span(model: CrossEncoder, utterance: str, surface: str, theta: float,
                 max_span_len: int = DEFAULT_MAX_SPAN_LEN) -> SpanPrediction:
    """Span decision on the (utterance, entity) pair encoding."""
    with torch.no_grad():
        tokens, layouts = model.encode_pairs([utterance], [surface])
        start, end = model.span_logits(tokens)
    n_utt = layouts[0].n_utt
    return decide_span(start[0].numpy(), end[0].numpy(), n_utt, theta, max_span_len)


@dataclass
class RerankOutput:
    """Re-ranked candidates and the span logits of the winning pair."""
    ranked: List[Candidate]
    start_logits: np.ndarray
    end_logits: np.ndarray
    n_utt: int

    def span(self, theta: float, max_span_len: int = DEFAULT_MAX_SPAN_LEN) -> SpanPrediction:
        return decide_span(self.start_logits, self.end_logits, self.n_utt, theta, max_span_len)


def rerank(model: CrossEncoder, utterance: str, candidates: Sequence[Candidate]) -> RerankOutput:
    """Score every candidate pair; sort by score desc, surface asc (stable for duplicates)."""
    if not candidates:
        raise ValueError("rerank needs at least one candidate")
    with torch.no_grad():
        tokens, layouts = model.encode_pairs([utterance] * len(candidates), [c.surface for c in candidates])
        scores = model.rank_scores(tokens, [c.ids for c in candidates]).tolist()
        start, end = model.span_logits(tokens)
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], candidates[i].surface))
    ranked = [Candidate(candidates[i].surface, candidates[i].ids, scores[i]) for i in order]
    top = order[0]
    return RerankOutput(ranked, start[top].numpy().copy(), end[top].numpy().copy(), layouts[top].n_utt)


# ============ Training ============

def _pairs_for(sample: TrainSampleL2) -> List[str]:
    if sample.is_null:
        return list(sample.hard_negatives[:1])
    return [sample.positive] + list(sample.hard_negatives)


def l2_loss(model: CrossEncoder, samples: Sequence[TrainSampleL2],
            lambda_rank: float = 1.0, lambda_span: float = 1.0) -> torch.Tensor:
    """
    Mean joint loss. Friction samples: NLL of the positive among its hard
    negatives plus start/end cross-entropy on the positive pair. Null samples:
    span cross-entropy toward (0, 0) on their single pair, no rank term.
    """
    utterances, surfaces, owners = [], [], []
    for index, sample in enumerate(samples):
        for surface in _pairs_for(sample):
            utterances.append(sample.source)
            surfaces.append(surface)
            owners.append(index)

    tokens, layouts = model.encode_pairs(utterances, surfaces)
    start_logits, end_logits = model.span_logits(tokens)
    needs_rank = any(not s.is_null for s in samples)
    scores = model.rank_scores(tokens, [model.kg.lookup(s) for s in surfaces]) if needs_rank else None

    length = tokens.shape[1]
    positions = torch.arange(length)
    total = tokens.new_zeros(())
    cursor = 0
    for sample in samples:
        count = len(_pairs_for(sample))
        first = cursor
        cursor += count
        n_utt = layouts[first].n_utt
        if sample.is_null:
            gold = (0, 0)
        else:
            gold = (sample.span[0] + 1, sample.span[1] + 1)
            total = total + lambda_rank * F.cross_entropy(scores[first:cursor].unsqueeze(0),
                                                          torch.zeros(1, dtype=torch.long))
        mask = (positions <= n_utt).unsqueeze(0)
        span_loss = (masked_cross_entropy(start_logits[first:first + 1], torch.tensor([gold[0]]), mask)
                     + masked_cross_entropy(end_logits[first:first + 1], torch.tensor([gold[1]]), mask))
        total = total + lambda_span * span_loss.sum()
    return total / len(samples)


def usable_l2_samples(samples: Sequence[TrainSampleL2], max_len: int) -> Tuple[List[TrainSampleL2], Dict[str, int]]:
    """
    Drop samples whose gold span does not survive truncation, and clean
    samples with no hard negative (nothing to pair with).

    Returns:
        (kept samples, drop counts keyed by reason)
    """
    kept = []
    reasons: Counter = Counter()
    for sample in samples:
        if sample.is_null and not sample.hard_negatives:
            reasons[DROP_CLEAN_NO_NEGATIVES] += 1
            continue
        if not sample.is_null:
            n_utt = min(len(tokenize(sample.source)), max_len - 2)
            if not 0 <= sample.span[0] <= sample.span[1] < n_utt:
                reasons[DROP_SPAN_TRUNCATED] += 1
                continue
        kept.append(sample)
    return kept, dict(sorted(reasons.items()))


def train_l2(
    model: CrossEncoder,
    samples: Sequence[TrainSampleL2],
    batch_size: int = 8,
    epochs: int = 2,
    lr: float = 5e-4,
    seed: int = 0,
    lambda_rank: float = 1.0,
    lambda_span: float = 1.0,
) -> TrainReport:
    report = TrainReport()
    usable, report.drop_reasons = usable_l2_samples(samples, model.pair_encoder.cfg.max_len)
    report.dropped = sum(report.drop_reasons.values())
    if report.dropped:
        logger.info("train-l2: dropped %d of %d samples: %d with spans lost to truncation, "
                    "%d clean samples without hard negatives", report.dropped, len(samples),
                    report.drop_reasons.get(DROP_SPAN_TRUNCATED, 0),
                    report.drop_reasons.get(DROP_CLEAN_NO_NEGATIVES, 0))
    if not usable:
        logger.warning("train-l2: no usable samples")
        return report

    steps_per_epoch = math.ceil(len(usable) / batch_size)
    trainer = AdamTrainer(model, AdamConfig(lr0=lr, total_steps=steps_per_epoch * epochs))
    generator = torch.Generator().manual_seed(seed)

    for epoch in range(epochs):
        order = torch.randperm(len(usable), generator=generator).tolist()
        total = 0.0
        bar = tqdm(range(0, len(order), batch_size), desc=f"train-l2 epoch {epoch + 1}", disable=not progress_enabled())
        for start in bar:
            batch = [usable[i] for i in order[start:start + batch_size]]
            trainer.zero_grad()
            loss = l2_loss(model, batch, lambda_rank, lambda_span)
            loss.backward()
            trainer.step()
            total += loss.item() * len(batch)
        report.epoch_losses.append(total / len(usable))
        logger.info("train-l2 epoch %d/%d loss %.5f", epoch + 1, epochs, report.epoch_losses[-1])

    report.steps = trainer.step_count
    return report
