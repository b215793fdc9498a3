"""
Link-prediction pretraining of node and relation embeddings.

Translational scoring: score(h, r, t) = -||node(h) + rel(r) - node(t)||.
The resulting table is frozen and becomes the GAT input.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
from tqdm import tqdm

from utils.errors import KnowledgeGraphError, UnknownEntityError
from utils.kgstore import KnowledgeGraph, Triple
from utils.logging_setup import progress_enabled
from utils.storage import load_tensors, save_tensors

from .nncore import DEFAULT_DTYPE

logger = logging.getLogger(__name__)

NODE_KEY = "kg.node"
REL_KEY = "kg.rel"


@dataclass
class EmbeddingTable:
    """Pretrained node and relation vectors, one row per id."""
    node_vecs: torch.Tensor     # [num_nodes, dim]
    rel_vecs: torch.Tensor      # [num_relations, dim]

    @property
    def dim(self) -> int:
        return int(self.node_vecs.shape[1])

    def node(self, entity_id: int) -> torch.Tensor:
        if not 0 <= entity_id < self.node_vecs.shape[0]:
            raise UnknownEntityError(f"unknown entity id {entity_id}")
        return self.node_vecs[entity_id]

    def rel(self, rel_id: int) -> torch.Tensor:
        if not 0 <= rel_id < self.rel_vecs.shape[0]:
            raise UnknownEntityError(f"unknown relation id {rel_id}")
        return self.rel_vecs[rel_id]

    def save(self, filepath: Path, metadata: Optional[Dict[str, str]] = None):
        save_tensors(filepath, {NODE_KEY: self.node_vecs, REL_KEY: self.rel_vecs}, metadata)

    @classmethod
    def load(cls, filepath: Path) -> Tuple["EmbeddingTable", Dict[str, str]]:
        tensors, metadata = load_tensors(filepath, dtype=DEFAULT_DTYPE)
        return cls(tensors[NODE_KEY], tensors[REL_KEY]), metadata


def score_triple(tbl: EmbeddingTable, h: int, r: int, t: int) -> float:
    """Negative L2 norm of the translation residual; 0 is a perfect fit."""
    residual = tbl.node(h) + tbl.rel(r) - tbl.node(t)
    return -float(torch.linalg.vector_norm(residual))


class TransE(nn.Module):
    """Trainable node/relation embeddings scored by translation."""

    def __init__(self, num_nodes: int, num_relations: int, dim: int, generator: torch.Generator):
        super().__init__()
        bound = 6.0 / dim ** 0.5
        self.node = nn.Parameter((torch.rand(num_nodes, dim, generator=generator, dtype=DEFAULT_DTYPE) * 2 - 1) * bound)
        self.rel = nn.Parameter((torch.rand(max(num_relations, 1), dim, generator=generator, dtype=DEFAULT_DTYPE) * 2 - 1) * bound)
        with torch.no_grad():
            self.rel.div_(torch.linalg.vector_norm(self.rel, dim=1, keepdim=True).clamp(min=1e-12))
            self.renormalize_()

    def renormalize_(self):
        with torch.no_grad():
            self.node.div_(torch.linalg.vector_norm(self.node, dim=1, keepdim=True).clamp(min=1e-12))

    def forward(self, triples: torch.Tensor) -> torch.Tensor:
        """Scores for a [B, 3] tensor of (head, rel, tail)."""
        residual = self.node[triples[:, 0]] + self.rel[triples[:, 1]] - self.node[triples[:, 2]]
        return -torch.linalg.vector_norm(residual, dim=1)

    def table(self) -> EmbeddingTable:
        return EmbeddingTable(self.node.detach().clone(), self.rel.detach().clone())


def margin_loss(model: TransE, positives: torch.Tensor, negatives: torch.Tensor, margin: float) -> torch.Tensor:
    """Mean of max(0, margin - score(pos) + score(neg))."""
    return torch.relu(margin - model(positives) + model(negatives)).mean()


def corrupt_triples(triples: torch.Tensor, num_nodes: int, generator: torch.Generator) -> torch.Tensor:
    """Replace head or tail (uniformly chosen) with a uniformly drawn node."""
    corrupted = triples.clone()
    replace_head = torch.rand(len(triples), generator=generator) < 0.5
    random_nodes = torch.randint(num_nodes, (len(triples),), generator=generator)
    corrupted[replace_head, 0] = random_nodes[replace_head]
    corrupted[~replace_head, 2] = random_nodes[~replace_head]
    return corrupted


def _triple_tensor(triples: Sequence[Triple]) -> torch.Tensor:
    return torch.tensor([[t.head, t.rel, t.tail] for t in triples], dtype=torch.long).reshape(-1, 3)


@dataclass
class PretrainReport:
    epoch_losses: List[float] = field(default_factory=list)

    def as_dict(self) -> Dict:
        return {"epoch_losses": self.epoch_losses}


def pretrain(
    kg: KnowledgeGraph,
    dim: int = 32,
    epochs: int = 50,
    margin: float = 1.0,
    lr: float = 0.01,
    batch_size: int = 128,
    seed: int = 0,
) -> Tuple[EmbeddingTable, PretrainReport]:
    """
    Train a TransE table with margin ranking loss and SGD.

    Args:
        kg: ingested knowledge graph (must have entities)
        dim: embedding dimension
        margin: hinge margin
        lr: SGD learning rate

    Returns:
        (frozen EmbeddingTable, per-epoch mean losses)
    """
    if len(kg) == 0:
        raise KnowledgeGraphError("cannot pretrain on an empty graph")

    generator = torch.Generator().manual_seed(seed)
    num_nodes = max(kg.entities) + 1
    model = TransE(num_nodes, len(kg.relations), dim, generator)
    optimizer = torch.optim.SGD(model.parameters(), lr=lr)
    triples = _triple_tensor(kg.triples)
    report = PretrainReport()

    if len(triples) == 0:
        logger.warning("graph has no triples; embeddings stay at their random unit-norm init")
        return model.table(), report

    for epoch in tqdm(range(epochs), desc="pretrain-kg", disable=not progress_enabled()):
        order = torch.randperm(len(triples), generator=generator)
        total = 0.0
        for start in range(0, len(order), batch_size):
            positives = triples[order[start:start + batch_size]]
            negatives = corrupt_triples(positives, num_nodes, generator)
            optimizer.zero_grad()
            loss = margin_loss(model, positives, negatives, margin)
            loss.backward()
            optimizer.step()
            total += loss.item() * len(positives)
        model.renormalize_()
        report.epoch_losses.append(total / len(triples))
        logger.info("pretrain-kg epoch %d/%d loss %.5f", epoch + 1, epochs, report.epoch_losses[-1])

    return model.table(), report


def mean_reciprocal_rank(
    tbl: EmbeddingTable,
    triples: Sequence[Triple],
    num_candidates: int = 50,
    seed: int = 0,
) -> float:
    """
    Rank each true tail against `num_candidates` random corrupted tails.
    Rank = 1 + number of corruptions scoring strictly higher.
    """
    if not triples:
        return 0.0
    generator = torch.Generator().manual_seed(seed)
    num_nodes = tbl.node_vecs.shape[0]
    total = 0.0
    for triple in triples:
        true_score = score_triple(tbl, triple.head, triple.rel, triple.tail)
        tails = torch.randint(num_nodes, (num_candidates,), generator=generator).tolist()
        better = sum(1 for t in tails if t != triple.tail and score_triple(tbl, triple.head, triple.rel, t) > true_score)
        total += 1.0 / (1 + better)
    return total / len(triples)
