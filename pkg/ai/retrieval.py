"""
First-stage retrieval: a bi-encoder scoring utterances against entity
surface forms by dot product, its in-batch + hard-negative training loop,
and an exact inner-product entity index.
"""

import logging
import math
import struct
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from utils.errors import DimensionError, EmptyIndexError
from utils.kgstore import IndexEntry, KnowledgeGraph
from utils.logging_setup import progress_enabled
from utils.storage import atomic_write_bytes

from .graphenc import GatConfig, GraphEncoder, SubgraphFeaturizer
from .kgpretrain import EmbeddingTable
from .nncore import DEFAULT_DTYPE, AdamConfig, AdamTrainer, init_uniform_
from .textenc import EncoderConfig, TextEncoder, Vocab, build_entity_text, collate, encode_text

logger = logging.getLogger(__name__)

INDEX_MAGIC = "KGECO-INDEX 1"
INDEX_END = "END"
DEFAULT_K = 10


@dataclass(frozen=True)
class Candidate:
    surface: str
    ids: Tuple[int, ...]
    score: float


@dataclass(frozen=True)
class TrainSampleL1:
    source: str
    positive: str
    hard_negatives: Tuple[str, ...] = ()


@dataclass
class TrainReport:
    dropped: int = 0
    steps: int = 0
    epoch_losses: List[float] = field(default_factory=list)
    drop_reasons: Dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> Dict:
        return {"dropped": self.dropped, "drop_reasons": self.drop_reasons, "steps": self.steps,
                "epoch_losses": self.epoch_losses}


def sim(p_vec: torch.Tensor, q_vec: torch.Tensor) -> torch.Tensor:
    """Dot-product similarity of two equal-length vectors."""
    if p_vec.shape != q_vec.shape:
        raise DimensionError(f"cannot compare vectors of shape {tuple(p_vec.shape)} and {tuple(q_vec.shape)}")
    return torch.dot(p_vec, q_vec)


# ============ Model ============

class BiEncoder(nn.Module):
    """
    Utterance tower: text encoder + projection.
    Entity tower: text encoder over the [des]-augmented entity text, GAT over
    the one-hop subgraphs of every id behind the surface, projection of the
    concatenation. Both towers land in d_sim.
    """

    def __init__(
        self,
        text_cfg: EncoderConfig,
        gat_cfg: GatConfig,
        vocab: Vocab,
        kg: KnowledgeGraph,
        table: Optional[EmbeddingTable] = None,
        d_sim: int = 64,
        use_gat: bool = True,
        use_descriptions: bool = True,
    ):
        super().__init__()
        self.vocab = vocab
        self.kg = kg
        self.d_sim = d_sim
        self.use_descriptions = use_descriptions
        self.gat_dim = gat_cfg.hidden
        self.utt_encoder = TextEncoder(text_cfg, len(vocab), vocab.trigram_buckets)
        self.utt_proj = nn.Linear(text_cfg.hidden, d_sim)
        self.ent_text_encoder = TextEncoder(text_cfg, len(vocab), vocab.trigram_buckets)
        self.gat = GraphEncoder(gat_cfg, table.node_vecs, table.rel_vecs) if use_gat and table is not None else None
        self.ent_proj = nn.Linear(text_cfg.hidden + gat_cfg.hidden, d_sim)
        self.featurizer = SubgraphFeaturizer(kg, gat_cfg.max_neighbors)

    @property
    def use_gat(self) -> bool:
        return self.gat is not None

    def entity_text(self, surface: str) -> str:
        if not self.use_descriptions:
            return surface
        return build_entity_text(surface, self.kg.descriptions_for(surface))

    def encode_utterances(self, texts: Sequence[str]) -> torch.Tensor:
        """E_utt for each text, [B, d_sim]."""
        batch = collate(self.vocab, [encode_text(self.vocab, t, self.utt_encoder.cfg.max_len) for t in texts])
        return self.utt_proj(self.utt_encoder(batch)[:, 0])

    def graph_vectors(self, id_lists: Sequence[Sequence[int]]) -> torch.Tensor:
        dtype = self.ent_proj.weight.dtype
        if self.gat is None:
            return torch.zeros((len(id_lists), self.gat_dim), dtype=dtype)
        return self.gat(self.featurizer.batch(id_lists))

    def encode_entities(self, surfaces: Sequence[str], id_lists: Optional[Sequence[Sequence[int]]] = None) -> torch.Tensor:
        """E_ent for each surface, [C, d_sim]. Ids default to the graph's lookup."""
        if id_lists is None:
            id_lists = [self.kg.lookup(s) for s in surfaces]
        texts = [self.entity_text(s) for s in surfaces]
        batch = collate(self.vocab, [encode_text(self.vocab, t, self.ent_text_encoder.cfg.max_len) for t in texts])
        pooled = self.ent_text_encoder(batch)[:, 0]
        return self.ent_proj(torch.cat([pooled, self.graph_vectors(id_lists)], dim=1))


def build_bi_encoder(
    text_cfg: EncoderConfig,
    gat_cfg: GatConfig,
    vocab: Vocab,
    kg: KnowledgeGraph,
    table: Optional[EmbeddingTable],
    d_sim: int = 64,
    use_gat: bool = True,
    use_descriptions: bool = True,
    seed: int = 0,
) -> BiEncoder:
    model = BiEncoder(text_cfg, gat_cfg, vocab, kg, table, d_sim, use_gat, use_descriptions)
    model.to(DEFAULT_DTYPE)
    init_uniform_(model, seed)
    return model


def encode_entity(model: BiEncoder, surface: str, ids: Optional[Sequence[int]] = None) -> torch.Tensor:
    """E_ent(q) for a single surface form."""
    return model.encode_entities([surface], None if ids is None else [ids])[0]


# ============ Training ============

def l1_loss(model: BiEncoder, samples: Sequence[TrainSampleL1]) -> torch.Tensor:
    """
    Mean NLL per sample over the shared candidate set: every positive in the
    batch plus every hard negative in the batch, deduplicated.
    """
    candidates: Dict[str, int] = {}
    for sample in samples:
        candidates.setdefault(sample.positive, len(candidates))
    for sample in samples:
        for negative in sample.hard_negatives:
            candidates.setdefault(negative, len(candidates))

    utt = model.encode_utterances([s.source for s in samples])
    ent = model.encode_entities(list(candidates))
    scores = utt @ ent.t()
    target = torch.tensor([candidates[s.positive] for s in samples], dtype=torch.long)
    return F.cross_entropy(scores, target)


def train_l1(
    model: BiEncoder,
    samples: Sequence[TrainSampleL1],
    known_surfaces: Sequence[str],
    batch_size: int = 16,
    epochs: int = 2,
    lr: float = 8e-4,
    seed: int = 0,
) -> TrainReport:
    """Shuffle-and-batch training with Adam and linear lr decay."""
    report = TrainReport()
    known = set(known_surfaces)
    usable = [s for s in samples if s.positive in known]
    report.dropped = len(samples) - len(usable)
    if report.dropped:
        logger.warning("train-l1: dropped %d samples whose positive is not in the entity source", report.dropped)
    if not usable:
        logger.warning("train-l1: no usable samples")
        return report

    steps_per_epoch = math.ceil(len(usable) / batch_size)
    trainer = AdamTrainer(model, AdamConfig(lr0=lr, total_steps=steps_per_epoch * epochs))
    generator = torch.Generator().manual_seed(seed)

    for epoch in range(epochs):
        order = torch.randperm(len(usable), generator=generator).tolist()
        total = 0.0
        bar = tqdm(range(0, len(order), batch_size), desc=f"train-l1 epoch {epoch + 1}", disable=not progress_enabled())
        for start in bar:
            batch = [usable[i] for i in order[start:start + batch_size]]
            trainer.zero_grad()
            loss = l1_loss(model, batch)
            loss.backward()
            trainer.step()
            total += loss.item() * len(batch)
        report.epoch_losses.append(total / len(usable))
        logger.info("train-l1 epoch %d/%d loss %.5f", epoch + 1, epochs, report.epoch_losses[-1])

    report.steps = trainer.step_count
    return report


# ============ Index ============

class EntityIndex:
    """
    Exact maximum-inner-product index over surface forms.
    Rows are kept sorted by surface so a stable sort on score gives the
    (score desc, surface asc) order.
    """

    def __init__(self, surfaces: Sequence[str], ids: Sequence[Sequence[int]], vectors: np.ndarray,
                 metadata: Optional[Dict[str, str]] = None):
        if len(surfaces) == 0:
            raise EmptyIndexError("entity index has no rows")
        order = sorted(range(len(surfaces)), key=lambda i: surfaces[i])
        self.surfaces = [surfaces[i] for i in order]
        self.ids = [tuple(ids[i]) for i in order]
        self.vectors = np.ascontiguousarray(np.asarray(vectors, dtype=np.float32)[order])
        if not np.isfinite(self.vectors).all():
            raise ValueError("entity index vectors must be finite")
        self._scoring = self.vectors.astype(np.float64)
        self.metadata = dict(metadata or {})
        self.metadata["rows"] = str(len(self.surfaces))
        self.metadata["d_sim"] = str(self.d_sim)

    def __len__(self) -> int:
        return len(self.surfaces)

    @property
    def d_sim(self) -> int:
        return int(self.vectors.shape[1])

    def row(self, surface: str) -> Optional[int]:
        lo, hi = 0, len(self.surfaces)
        while lo < hi:
            mid = (lo + hi) // 2
            if self.surfaces[mid] < surface:
                lo = mid + 1
            else:
                hi = mid
        return lo if lo < len(self.surfaces) and self.surfaces[lo] == surface else None

    def __contains__(self, surface: str) -> bool:
        return self.row(surface) is not None

    def scores(self, query_vec: np.ndarray) -> np.ndarray:
        query_vec = np.asarray(query_vec, dtype=np.float64)
        if query_vec.shape != (self.d_sim,):
            raise DimensionError(f"query of shape {query_vec.shape} against index of dim {self.d_sim}")
        return self._scoring @ query_vec

    def search(self, query_vec: np.ndarray, k: int = DEFAULT_K) -> List[Candidate]:
        """Top-k rows by inner product; k beyond the row count returns every row."""
        scores = self.scores(query_vec)
        order = np.argsort(-scores, kind="stable")[:max(k, 0)]
        return [Candidate(self.surfaces[i], self.ids[i], float(scores[i])) for i in order]

    # ---- persistence ----

    def save(self, filepath: Path):
        """Text header, then per row: u32 surface length, UTF-8 surface, u32 id count, i64 ids, f32 vector."""
        header = [INDEX_MAGIC] + [f"# {k}={v}" for k, v in sorted(self.metadata.items())] + [INDEX_END]
        chunks = [("\n".join(header) + "\n").encode("utf-8")]
        for surface, ids, vector in zip(self.surfaces, self.ids, self.vectors):
            encoded = surface.encode("utf-8")
            chunks.append(struct.pack("<I", len(encoded)) + encoded)
            chunks.append(struct.pack(f"<I{len(ids)}q", len(ids), *ids))
            chunks.append(vector.astype("<f4").tobytes())
        atomic_write_bytes(filepath, b"".join(chunks))

    @classmethod
    def load(cls, filepath: Path) -> "EntityIndex":
        with open(filepath, "rb") as f:
            raw = f.read()
        metadata: Dict[str, str] = {}
        offset = 0
        first = True
        while True:
            end = raw.index(b"\n", offset)
            line = raw[offset:end].decode("utf-8")
            offset = end + 1
            if first:
                if line != INDEX_MAGIC:
                    raise ValueError(f"{filepath} is not an entity index")
                first = False
                continue
            if line == INDEX_END:
                break
            key, _, value = line[2:].partition("=")
            metadata[key] = value

        rows, d_sim = int(metadata["rows"]), int(metadata["d_sim"])
        surfaces, ids, vectors = [], [], np.zeros((rows, d_sim), dtype=np.float32)
        for r in range(rows):
            (length,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            surfaces.append(raw[offset:offset + length].decode("utf-8"))
            offset += length
            (count,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            ids.append(struct.unpack_from(f"<{count}q", raw, offset))
            offset += 8 * count
            vectors[r] = np.frombuffer(raw, dtype="<f4", count=d_sim, offset=offset)
            offset += 4 * d_sim
        return cls(surfaces, ids, vectors, metadata)


def build_index(
    model: BiEncoder,
    entries: Sequence[IndexEntry],
    batch_size: int = 256,
    metadata: Optional[Dict[str, str]] = None,
) -> EntityIndex:
    """Encode every filtered surface form with the entity tower."""
    if not entries:
        raise EmptyIndexError("no index entries to encode")
    vectors = []
    with torch.no_grad():
        for start in tqdm(range(0, len(entries), batch_size), desc="build-index", disable=not progress_enabled()):
            chunk = entries[start:start + batch_size]
            vecs = model.encode_entities([e.surface for e in chunk], [e.ids for e in chunk])
            vectors.append(vecs.to(torch.float32).numpy())
    meta = dict(metadata or {})
    meta.setdefault("built_at", datetime.now().isoformat())
    index = EntityIndex([e.surface for e in entries], [e.ids for e in entries], np.concatenate(vectors), meta)
    logger.info("built entity index: %d rows, d_sim %d", len(index), index.d_sim)
    return index


def encode_query(model: BiEncoder, utterance: str) -> np.ndarray:
    with torch.no_grad():
        return model.encode_utterances([utterance])[0].numpy().astype(np.float64)


def top_k(index: EntityIndex, utterance: str, model: BiEncoder, k: int = DEFAULT_K) -> List[Candidate]:
    """Exact top-k surfaces for an utterance, score descending, surface ascending on ties."""
    if index.d_sim != model.d_sim:
        raise DimensionError(f"index d_sim {index.d_sim} does not match model d_sim {model.d_sim}")
    return index.search(encode_query(model, utterance), k)


def recall_at_k(index: EntityIndex, model: BiEncoder, samples: Sequence[TrainSampleL1], k: int = DEFAULT_K) -> float:
    """Fraction of samples whose positive surface is among the top-k retrieved."""
    if not samples:
        return 0.0
    hits = sum(1 for s in samples if any(c.surface == s.positive for c in top_k(index, s.source, model, k)))
    return hits / len(samples)
