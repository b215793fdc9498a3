"""
End-to-end rewrite: retrieve, re-rank, detect the corrupt span, and
replace it with the winning surface form when the trigger conditions hold.
"""

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .rerank import DEFAULT_MAX_SPAN_LEN, CrossEncoder, RerankOutput, SpanPrediction, null_span, rerank
from .retrieval import DEFAULT_K, BiEncoder, Candidate, EntityIndex, top_k

logger = logging.getLogger(__name__)

FIELD_SEP = " | "
SLOT_SEP = ": "


@dataclass(frozen=True)
class NluHypothesis:
    """Structured interpretation: domain, intent and ordered (slot, value) pairs."""
    domain: str
    intent: str
    slots: Tuple[Tuple[str, str], ...] = ()

    def serialize(self) -> str:
        return FIELD_SEP.join([self.domain, self.intent] + [f"{name}{SLOT_SEP}{value}" for name, value in self.slots])

    @classmethod
    def parse(cls, text: str) -> "NluHypothesis":
        parts = text.split(FIELD_SEP)
        if len(parts) < 2:
            raise ValueError(f"hypothesis needs at least a domain and an intent: {text!r}")
        slots = []
        for part in parts[2:]:
            name, sep, value = part.partition(SLOT_SEP)
            if not sep:
                raise ValueError(f"slot without '{SLOT_SEP.strip()}' separator: {part!r}")
            slots.append((name, value))
        return cls(parts[0], parts[1], tuple(slots))

    def __str__(self) -> str:
        return self.serialize()


def rewrite_hypothesis(hyp: NluHypothesis, span_text: str, entity: str) -> Tuple[NluHypothesis, bool]:
    """
    Replace whole-word occurrences of span_text in every slot value, ignoring case.

    Returns:
        (hypothesis, replaced) where replaced is False when no slot held the span text
    """
    if not span_text:
        raise ValueError("span_text must be non-empty")
    pattern = re.compile(r"(?<!\S)" + re.escape(span_text) + r"(?!\S)", re.IGNORECASE)
    replaced = False
    slots = []
    for name, value in hyp.slots:
        new_value, count = pattern.subn(lambda _: entity, value)
        replaced = replaced or count > 0
        slots.append((name, new_value))
    if not replaced:
        logger.debug("span %r not found in any slot of %s", span_text, hyp)
        return hyp, False
    return NluHypothesis(hyp.domain, hyp.intent, tuple(slots)), True


@dataclass
class RewriteResult:
    utterance: str
    triggered: bool
    span: SpanPrediction
    entity: Optional[str] = None
    span_text: Optional[str] = None
    rewritten_utterance: Optional[str] = None
    rewritten_hypothesis: Optional[NluHypothesis] = None
    hypothesis_replaced: bool = False
    retrieved: List[Candidate] = field(default_factory=list)
    ranked: List[Candidate] = field(default_factory=list)
    diagnostic: str = ""

    @property
    def output_utterance(self) -> str:
        return self.rewritten_utterance if self.triggered else self.utterance

    def as_record(self) -> Dict:
        return {
            "utterance": self.utterance,
            "triggered": self.triggered,
            "span": None if self.span.is_null else [self.span.start, self.span.end],
            "span_margin": self.span.margin,
            "span_text": self.span_text,
            "entity": self.entity,
            "rewrite": self.rewritten_utterance,
            "hypothesis": None if self.rewritten_hypothesis is None else self.rewritten_hypothesis.serialize(),
            "retrieved": [[c.surface, round(c.score, 6)] for c in self.retrieved],
            "ranked": [[c.surface, round(c.score, 6)] for c in self.ranked],
            "diagnostic": self.diagnostic,
        }


@dataclass
class Analysis:
    """Model outputs for one utterance; thresholds are applied afterwards."""
    utterance: str
    retrieved: List[Candidate]
    reranked: Optional[RerankOutput]


def replace_words(utterance: str, start: int, end: int, surface: str) -> str:
    """Replace inclusive word range [start, end] and rejoin with single spaces."""
    words = utterance.split()
    return " ".join(words[:start] + surface.split() + words[end + 1:])


class Rewriter:
    """Holds immutable model and index snapshots; safe to share between callers."""

    def __init__(
        self,
        bi_encoder: BiEncoder,
        cross_encoder: CrossEncoder,
        index: EntityIndex,
        k: int = DEFAULT_K,
        max_span_len: int = DEFAULT_MAX_SPAN_LEN,
        min_rank_score: Optional[float] = None,
    ):
        self.bi_encoder = bi_encoder
        self.cross_encoder = cross_encoder
        self.index = index
        self.k = k
        self.max_span_len = max_span_len
        self.min_rank_score = min_rank_score

    def analyze(self, utterance: str) -> Analysis:
        if not utterance.strip():
            return Analysis(utterance, [], None)
        retrieved = top_k(self.index, utterance, self.bi_encoder, self.k)
        return Analysis(utterance, retrieved, rerank(self.cross_encoder, utterance, retrieved))

    def decide(self, analysis: Analysis, theta: float, hypothesis: Optional[NluHypothesis] = None,
               always_trigger: bool = False) -> RewriteResult:
        """Apply the null threshold and trigger conditions to a finished analysis."""
        utterance = analysis.utterance
        if analysis.reranked is None:
            return RewriteResult(utterance, False, null_span(), diagnostic="empty utterance")

        out = analysis.reranked
        span = out.span(float("-inf") if always_trigger else theta, self.max_span_len)
        winner = out.ranked[0]
        result = RewriteResult(utterance, False, span, entity=winner.surface,
                               retrieved=analysis.retrieved, ranked=out.ranked)
        if span.is_null:
            result.diagnostic = "null span"
            return result

        start, end = span.word_range
        result.span_text = " ".join(utterance.split()[start:end + 1])
        if result.span_text.lower() == winner.surface:
            result.diagnostic = "winning entity equals span text"
            return result
        if self.min_rank_score is not None and winner.score < self.min_rank_score:
            result.diagnostic = "rank score below gate"
            return result

        result.triggered = True
        result.rewritten_utterance = replace_words(utterance, start, end, winner.surface)
        if hypothesis is not None:
            result.rewritten_hypothesis, result.hypothesis_replaced = rewrite_hypothesis(
                hypothesis, result.span_text, winner.surface)
        return result

    def rewrite(self, utterance: str, theta: float, hypothesis: Optional[NluHypothesis] = None,
                always_trigger: bool = False) -> RewriteResult:
        return self.decide(self.analyze(utterance), theta, hypothesis, always_trigger)

    def rewrite_batch(self, utterances: Sequence[str], theta: float,
                      hypotheses: Optional[Sequence[Optional[NluHypothesis]]] = None,
                      always_trigger: bool = False) -> List[RewriteResult]:
        """Rewrite each utterance; `hypotheses` aligns with `utterances` (None entries allowed)."""
        if hypotheses is None:
            hypotheses = [None] * len(utterances)
        if len(hypotheses) != len(utterances):
            raise ValueError(f"{len(hypotheses)} hypotheses for {len(utterances)} utterances")
        return [self.rewrite(u, theta, h, always_trigger) for u, h in zip(utterances, hypotheses)]


def rewrite(
    bi_encoder: BiEncoder,
    cross_encoder: CrossEncoder,
    index: EntityIndex,
    utterance: str,
    k: int = DEFAULT_K,
    theta: float = 5.0,
    hypothesis: Optional[NluHypothesis] = None,
) -> RewriteResult:
    """One-off rewrite with default trigger settings."""
    return Rewriter(bi_encoder, cross_encoder, index, k).rewrite(utterance, theta, hypothesis)
