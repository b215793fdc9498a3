"""
Graph attention encoder over one-hop subgraphs.

Messages into a node i are composed from the neighbor and the relation of
the connecting edge, phi(h_r, h_j); attention and aggregation both see the
composed message. Relation vectors are updated per layer by a linear map.
Node and relation input tables are frozen buffers; only the adapters, the
layers and the inverse-relation rows are trained.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from utils.errors import DimensionError
from utils.kgstore import DEFAULT_MAX_NEIGHBORS, INCOMING, KnowledgeGraph, Subgraph, one_hop

from .nncore import leaky_relu

logger = logging.getLogger(__name__)

PHI_CHOICES = ("subtract", "product")
SELF_LOOP = -1


@dataclass
class GatConfig:
    layers: int = 2
    heads: int = 4
    hidden: int = 64
    in_dim: int = 32
    slope: float = 0.2
    phi: str = "subtract"
    pooling: str = "mean"
    compose_in_attention: bool = True
    max_neighbors: int = DEFAULT_MAX_NEIGHBORS

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.phi not in PHI_CHOICES:
            raise ValueError(f"phi must be one of {PHI_CHOICES}, got {self.phi!r}")
        if self.pooling != "mean":
            raise ValueError(f"unsupported pooling {self.pooling!r}")


def compose(phi: str, h_r: torch.Tensor, h_j: torch.Tensor, self_loop: Optional[torch.Tensor] = None) -> torch.Tensor:
    """phi(h_r, h_j): neighbor minus relation, or elementwise product. Self-loop rows pass h_j through."""
    out = h_j - h_r if phi == "subtract" else h_j * h_r
    if self_loop is not None:
        out = torch.where(self_loop.unsqueeze(1), h_j, out)
    return out


@dataclass
class GatInput:
    """
    A batch of subgraphs, block-diagonal. Each graph's center is its first
    node row; edges point from a message source to the receiving node.
    `owner` maps graphs to output items (several graphs per polysemic surface).
    """
    node_ids: torch.Tensor      # [N] rows of the node table
    rel_ids: torch.Tensor       # [E] relation id, SELF_LOOP for self-loops
    rel_dirs: torch.Tensor      # [E] OUTGOING / INCOMING
    src: torch.Tensor           # [E]
    dst: torch.Tensor           # [E]
    graph_index: torch.Tensor   # [N]
    owner: torch.Tensor         # [num_graphs]
    num_items: int

    @property
    def num_graphs(self) -> int:
        return int(self.owner.numel())


class GatLayer(nn.Module):
    """One attention layer with relation composition and relation update."""

    def __init__(self, in_dim: int, out_dim: int, heads: int, concat: bool,
                 slope: float = 0.2, phi: str = "subtract", compose_in_attention: bool = True):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.heads = heads
        self.concat = concat
        self.slope = slope
        self.phi = phi
        self.compose_in_attention = compose_in_attention
        self.weight = nn.Parameter(torch.empty(heads, out_dim, in_dim))      # W_node
        self.attn = nn.Parameter(torch.empty(heads, 2 * out_dim))            # a
        rel_out = heads * out_dim if concat else out_dim
        self.rel_weight = nn.Parameter(torch.empty(rel_out, in_dim))         # W_rel
        nn.init.xavier_uniform_(self.weight)
        nn.init.xavier_uniform_(self.attn)
        nn.init.xavier_uniform_(self.rel_weight)

    @property
    def output_dim(self) -> int:
        return self.heads * self.out_dim if self.concat else self.out_dim

    def _project(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"expected vectors of dim {self.in_dim}, got {x.shape[-1]}")
        return torch.einsum("ni,hoi->nho", x, self.weight)

    def attention_coeffs(self, h: torch.Tensor, rel: torch.Tensor, src: torch.Tensor, dst: torch.Tensor,
                         self_loop: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Normalized attention per edge and head, [E, heads]; rows over each node's incoming edges sum to 1."""
        alpha, _ = self._attend(h, rel, src, dst, self_loop)
        return alpha

    def _logits(self, h: torch.Tensor, keys: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
        centers = self._project(h)[dst]                                        # [E, H, O]
        a_center, a_neighbor = self.attn[:, :self.out_dim], self.attn[:, self.out_dim:]
        logits = (centers * a_center).sum(-1) + (keys * a_neighbor).sum(-1)
        return leaky_relu(logits, self.slope)                                  # [E, H]

    def _normalize(self, logits: torch.Tensor, dst: torch.Tensor, num_nodes: int) -> torch.Tensor:
        index = dst.unsqueeze(1).expand(-1, self.heads)
        peak = torch.full((num_nodes, self.heads), float("-inf"), dtype=logits.dtype)
        peak = peak.scatter_reduce(0, index, logits.detach(), reduce="amax", include_self=False)
        weights = torch.exp(logits - peak[dst])
        denom = torch.zeros((num_nodes, self.heads), dtype=logits.dtype).index_add(0, dst, weights)
        return weights / denom[dst]

    def _aggregate(self, alpha: torch.Tensor, messages: torch.Tensor, dst: torch.Tensor, num_nodes: int) -> torch.Tensor:
        agg = torch.zeros((num_nodes, self.heads, self.out_dim), dtype=messages.dtype)
        agg = agg.index_add(0, dst, alpha.unsqueeze(-1) * messages)
        agg = agg.reshape(num_nodes, -1) if self.concat else agg.mean(1)
        return F.elu(agg)

    def _attend(self, h, rel, src, dst, self_loop=None) -> Tuple[torch.Tensor, torch.Tensor]:
        if rel.shape[0] != src.shape[0]:
            raise DimensionError(f"{rel.shape[0]} relation rows for {src.shape[0]} edges")
        messages = self._project(compose(self.phi, rel, h[src], self_loop))    # [E, H, O]
        keys = messages if self.compose_in_attention else self._project(h[src])
        return self._normalize(self._logits(h, keys, dst), dst, h.shape[0]), messages

    def forward(self, h: torch.Tensor, rel: torch.Tensor, src: torch.Tensor, dst: torch.Tensor,
                self_loop: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        """Returns (updated node vectors, updated relation vectors). `self_loop` masks identity edges."""
        alpha, messages = self._attend(h, rel, src, dst, self_loop)
        return self._aggregate(alpha, messages, dst, h.shape[0]), rel @ self.rel_weight.t()

    def vanilla(self, h: torch.Tensor, src: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
        """Relation-free update over raw neighbor vectors."""
        messages = self._project(h[src])
        alpha = self._normalize(self._logits(h, messages, dst), dst, h.shape[0])
        return self._aggregate(alpha, messages, dst, h.shape[0])


class GraphEncoder(nn.Module):
    """Adapters + stacked GatLayers + mean pooling per subgraph."""

    def __init__(self, cfg: GatConfig, node_table: torch.Tensor, rel_table: torch.Tensor):
        super().__init__()
        if node_table.shape[1] != cfg.in_dim or rel_table.shape[1] != cfg.in_dim:
            raise DimensionError(f"embedding tables must have dim {cfg.in_dim}")
        self.cfg = cfg
        self.register_buffer("node_table", node_table.detach().clone())
        self.register_buffer("rel_table", rel_table.detach().clone())
        self.inverse_rel = nn.Parameter(-rel_table.detach().clone())
        self.node_adapter = nn.Linear(cfg.in_dim, cfg.hidden)
        self.rel_adapter = nn.Linear(cfg.in_dim, cfg.hidden, bias=False)
        layers = []
        for depth in range(cfg.layers):
            last = depth == cfg.layers - 1
            out_dim = cfg.hidden if last else cfg.hidden // cfg.heads
            layers.append(GatLayer(cfg.hidden, out_dim, cfg.heads, concat=not last, slope=cfg.slope,
                                   phi=cfg.phi, compose_in_attention=cfg.compose_in_attention))
        self.layers = nn.ModuleList(layers)

    def post_init_(self):
        """Inverse relations start as the negated forward rows."""
        with torch.no_grad():
            self.inverse_rel.copy_(-self.rel_table)

    @property
    def output_dim(self) -> int:
        return self.cfg.hidden

    def relation_inputs(self, inp: GatInput) -> torch.Tensor:
        rel_ids = inp.rel_ids.clamp(min=0)
        forward_rows = self.rel_table[rel_ids]
        inverse_rows = self.inverse_rel[rel_ids]
        rows = torch.where((inp.rel_dirs == INCOMING).unsqueeze(1), inverse_rows, forward_rows)
        return rows * (inp.rel_ids >= 0).unsqueeze(1).to(rows.dtype)

    def node_states(self, inp: GatInput) -> torch.Tensor:
        """Final node vectors [N, hidden]."""
        h = self.node_adapter(self.node_table[inp.node_ids])
        rel = self.rel_adapter(self.relation_inputs(inp))
        self_loop = inp.rel_ids == SELF_LOOP
        for layer in self.layers:
            h, rel = layer(h, rel, inp.src, inp.dst, self_loop)
        return h

    def forward(self, inp: GatInput) -> torch.Tensor:
        """Pooled vector per item [num_items, hidden]; items without graphs pool to zeros."""
        if inp.node_ids.numel() == 0:
            return torch.zeros((inp.num_items, self.cfg.hidden), dtype=self.node_table.dtype)
        h = self.node_states(inp)
        graphs = _segment_mean(h, inp.graph_index, inp.num_graphs)
        return _segment_mean(graphs, inp.owner, inp.num_items)


def _segment_mean(values: torch.Tensor, index: torch.Tensor, size: int) -> torch.Tensor:
    sums = torch.zeros((size, values.shape[1]), dtype=values.dtype).index_add(0, index, values)
    counts = torch.zeros(size, dtype=values.dtype).index_add(0, index, torch.ones_like(index, dtype=values.dtype))
    return sums / counts.clamp(min=1).unsqueeze(1)


def encode_subgraph(encoder: GraphEncoder, inp: GatInput) -> torch.Tensor:
    """Run every layer and mean-pool final node vectors per item."""
    return encoder(inp)


class SubgraphFeaturizer:
    """Turns entity ids into GatInput batches; caches one-hop subgraphs."""

    def __init__(self, kg: KnowledgeGraph, max_neighbors: int = DEFAULT_MAX_NEIGHBORS):
        self.kg = kg
        self.max_neighbors = max_neighbors
        self._cache: Dict[int, Subgraph] = {}

    def subgraph(self, entity_id: int) -> Subgraph:
        if entity_id not in self._cache:
            self._cache[entity_id] = one_hop(self.kg, entity_id, self.max_neighbors)
        return self._cache[entity_id]

    def batch(self, items: Sequence[Sequence[int]]) -> GatInput:
        """One item per entry of `items`; each item lists the entity ids behind it."""
        subgraphs = [[self.subgraph(eid) for eid in ids if eid in self.kg] for ids in items]
        return build_gat_input(subgraphs)


def build_gat_input(items: Sequence[Sequence[Subgraph]]) -> GatInput:
    node_ids: List[int] = []
    rel_ids: List[int] = []
    rel_dirs: List[int] = []
    src: List[int] = []
    dst: List[int] = []
    graph_index: List[int] = []
    owner: List[int] = []

    for item, subgraphs in enumerate(items):
        for sub in subgraphs:
            graph = len(owner)
            owner.append(item)
            rows = {sub.center: len(node_ids)}
            node_ids.append(sub.center)
            graph_index.append(graph)
            for rel, direction, neighbor in sub.edges:
                if neighbor not in rows:
                    rows[neighbor] = len(node_ids)
                    node_ids.append(neighbor)
                    graph_index.append(graph)
                src.append(rows[neighbor])
                dst.append(rows[sub.center])
                rel_ids.append(rel)
                rel_dirs.append(direction)
            for row in rows.values():
                src.append(row)
                dst.append(row)
                rel_ids.append(SELF_LOOP)
                rel_dirs.append(0)

    def as_long(values):
        return torch.tensor(values, dtype=torch.long)

    return GatInput(as_long(node_ids), as_long(rel_ids), as_long(rel_dirs), as_long(src), as_long(dst),
                    as_long(graph_index), as_long(owner), len(items))
