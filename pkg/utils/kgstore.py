"""
Knowledge graph store.
Ingests tab-separated entity/triple records, filters the retrieval index
and serves one-hop subgraphs and surface-form lookups.

The finished graph is backed by a frozen networkx MultiDiGraph and is safe
to share for concurrent reads.
"""

import logging
import string
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import networkx as nx

from .errors import KnowledgeGraphError, UnknownEntityError
from .storage import load_json, save_json

logger = logging.getLogger(__name__)

DES_TOKEN = "[des]"
OUTGOING = 0
INCOMING = 1
DEFAULT_MAX_NEIGHBORS = 32

_PUNCTUATION = frozenset(string.punctuation)
_DIGITS = frozenset(string.digits)


@dataclass(frozen=True)
class Entity:
    id: int
    surface: str
    descriptions: Tuple[str, ...] = ()
    external_id: str = ""


@dataclass(frozen=True)
class Triple:
    head: int
    rel: int
    tail: int


@dataclass(frozen=True)
class Subgraph:
    center: int
    edges: Tuple[Tuple[int, int, int], ...]  # (rel id, direction, neighbor id)


@dataclass(frozen=True)
class IndexEntry:
    surface: str
    ids: Tuple[int, ...]


@dataclass
class IngestReport:
    entity_lines: int = 0
    skipped_entity_lines: int = 0
    triple_lines: int = 0
    skipped_triple_lines: int = 0
    dropped_triples: int = 0
    rejected_descriptions: int = 0

    def as_dict(self) -> Dict[str, int]:
        return dict(self.__dict__)


class KnowledgeGraph:
    """Entities, relations and triples with a two-direction adjacency."""

    def __init__(
        self,
        entities: Dict[int, Entity],
        relations: Dict[int, str],
        triples: List[Triple],
        report: Optional[IngestReport] = None,
    ):
        self.entities = dict(entities)
        self.relations = dict(relations)
        self.triples = list(triples)
        self.report = report or IngestReport()

        self._relation_ids = {name: rid for rid, name in self.relations.items()}
        self._by_external = {e.external_id: e.id for e in self.entities.values() if e.external_id}
        self._by_surface: Dict[str, List[int]] = defaultdict(list)
        for eid in sorted(self.entities):
            self._by_surface[self.entities[eid].surface].append(eid)

        graph = nx.MultiDiGraph()
        graph.add_nodes_from(sorted(self.entities))
        for triple in self.triples:
            graph.add_edge(triple.head, triple.tail, rel=triple.rel)
        self.graph = nx.freeze(graph)

    # ---- lookups ----

    def __len__(self) -> int:
        return len(self.entities)

    def __contains__(self, entity_id: int) -> bool:
        return entity_id in self.entities

    def entity(self, entity_id: int) -> Entity:
        try:
            return self.entities[entity_id]
        except KeyError:
            raise UnknownEntityError(f"unknown entity id {entity_id}") from None

    def lookup(self, surface: str) -> List[int]:
        """All ids sharing a surface form (polysemy)."""
        return list(self._by_surface.get(surface.lower(), []))

    def surfaces(self) -> List[str]:
        return sorted(self._by_surface)

    def relation_id(self, name: str) -> int:
        try:
            return self._relation_ids[name]
        except KeyError:
            raise UnknownEntityError(f"unknown relation '{name}'") from None

    def external(self, external_id: str) -> int:
        return self._by_external[external_id]

    def adjacency(self, entity_id: int) -> List[Tuple[int, int, int]]:
        """(rel, direction, neighbor) records for both edge directions."""
        self.entity(entity_id)
        records = [(rel, OUTGOING, tail) for _, tail, rel in self.graph.out_edges(entity_id, data="rel")]
        records.extend((rel, INCOMING, head) for head, _, rel in self.graph.in_edges(entity_id, data="rel"))
        return records

    def degree(self, entity_id: int) -> int:
        return self.graph.degree(entity_id)

    def connected(self, ids_a: Iterable[int], ids_b: Iterable[int]) -> bool:
        """True if any id in ids_a shares a triple with any id in ids_b."""
        targets = set(ids_b)
        for a in ids_a:
            if a not in self.graph:
                continue
            if targets.intersection(self.graph.successors(a)) or targets.intersection(self.graph.predecessors(a)):
                return True
        return False

    def descriptions_for(self, surface: str) -> List[str]:
        """Descriptions of every entity behind a surface, id order then file order."""
        texts = []
        for eid in self.lookup(surface):
            texts.extend(self.entities[eid].descriptions)
        return texts

    # ---- structural comparison / persistence ----

    def signature(self) -> Tuple:
        return (
            tuple(sorted((e.id, e.surface, e.descriptions, e.external_id) for e in self.entities.values())),
            tuple(sorted(self.relations.items())),
            tuple((t.head, t.rel, t.tail) for t in self.triples),
        )

    def to_json(self) -> Dict:
        return {
            "entities": [
                {"id": e.id, "surface": e.surface, "descriptions": list(e.descriptions), "external_id": e.external_id}
                for e in sorted(self.entities.values(), key=lambda e: e.id)
            ],
            "relations": {str(rid): name for rid, name in sorted(self.relations.items())},
            "triples": [[t.head, t.rel, t.tail] for t in self.triples],
            "report": self.report.as_dict(),
        }

    @classmethod
    def from_json(cls, data: Dict) -> "KnowledgeGraph":
        if not data.get("entities"):
            raise KnowledgeGraphError("knowledge graph store has no entities")
        entities = {
            int(e["id"]): Entity(int(e["id"]), e["surface"], tuple(e["descriptions"]), e.get("external_id", ""))
            for e in data["entities"]
        }
        relations = {int(rid): name for rid, name in data.get("relations", {}).items()}
        triples = [Triple(int(h), int(r), int(t)) for h, r, t in data.get("triples", [])]
        report = IngestReport(**data.get("report", {}))
        return cls(entities, relations, triples, report)


def save_graph(kg: KnowledgeGraph, filepath: Path):
    save_json(filepath, kg.to_json())


def load_graph(filepath: Path) -> KnowledgeGraph:
    data = load_json(filepath)
    if not data:
        raise KnowledgeGraphError(f"no knowledge graph store at {filepath}")
    return KnowledgeGraph.from_json(data)


# ============ Ingestion ============

def ingest(entity_records: Iterable[str], triple_records: Iterable[str]) -> KnowledgeGraph:
    """
    Build a KnowledgeGraph from line-delimited, tab-separated records.

    Args:
        entity_records: lines of `external_id \\t surface \\t description`;
            a repeated external_id merges descriptions in file order.
        triple_records: lines of `head_external_id \\t relation \\t tail_external_id`.

    Returns:
        KnowledgeGraph with adjacency built and an IngestReport attached.
    """
    report = IngestReport()
    ids: Dict[str, int] = {}
    surfaces: Dict[int, str] = {}
    descriptions: Dict[int, List[str]] = defaultdict(list)

    for line_no, line in enumerate(entity_records, start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        report.entity_lines += 1
        parts = line.split("\t")
        if len(parts) == 2:
            parts.append("")
        if len(parts) != 3 or not parts[0].strip() or not parts[1].strip():
            report.skipped_entity_lines += 1
            logger.warning("entities line %d malformed, skipped: %r", line_no, line[:80])
            continue

        external_id, surface, description = parts[0].strip(), " ".join(parts[1].lower().split()), parts[2].strip()
        if external_id not in ids:
            ids[external_id] = len(ids)
            surfaces[ids[external_id]] = surface
        entity_id = ids[external_id]
        if surfaces[entity_id] != surface:
            logger.warning("entities line %d: surface %r conflicts with %r for %s, kept first",
                           line_no, surface, surfaces[entity_id], external_id)

        if not description:
            continue
        if DES_TOKEN in description.lower():
            report.rejected_descriptions += 1
            logger.warning("entities line %d: description contains %s, dropped", line_no, DES_TOKEN)
            continue
        if description not in descriptions[entity_id]:
            descriptions[entity_id].append(description)

    if not ids:
        raise KnowledgeGraphError("ingest produced zero valid entities")

    entities = {
        eid: Entity(eid, surfaces[eid], tuple(descriptions.get(eid, ())), ext)
        for ext, eid in ids.items()
    }

    relations: Dict[str, int] = {}
    triples: List[Triple] = []
    for line_no, line in enumerate(triple_records, start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        report.triple_lines += 1
        parts = [p.strip() for p in line.split("\t")]
        if len(parts) != 3 or not all(parts):
            report.skipped_triple_lines += 1
            logger.warning("triples line %d malformed, skipped: %r", line_no, line[:80])
            continue
        head, rel_name, tail = parts
        if head not in ids or tail not in ids:
            report.dropped_triples += 1
            continue
        if rel_name not in relations:
            relations[rel_name] = len(relations)
        triples.append(Triple(ids[head], relations[rel_name], ids[tail]))

    if report.dropped_triples:
        logger.info("dropped %d triples referencing unknown entities", report.dropped_triples)
    logger.info("ingested %d entities, %d relations, %d triples", len(entities), len(relations), len(triples))

    return KnowledgeGraph(entities, {rid: name for name, rid in relations.items()}, triples, report)


def ingest_files(entities_path: Path, triples_path: Path) -> KnowledgeGraph:
    with open(entities_path, "r", encoding="utf-8") as ents, open(triples_path, "r", encoding="utf-8") as trips:
        return ingest(ents, trips)


# ============ Index filtering ============

def is_index_surface(surface: str) -> bool:
    """False if the surface has an ASCII digit, punctuation or any non-ASCII char."""
    if not surface.strip():
        return False
    for ch in surface:
        if ord(ch) > 127 or ch in _DIGITS or ch in _PUNCTUATION:
            return False
    return True


def filter_index_entities(kg: KnowledgeGraph) -> List[IndexEntry]:
    """One entry per retained surface form, sorted by surface, ids ascending."""
    return [IndexEntry(surface, tuple(kg.lookup(surface))) for surface in kg.surfaces() if is_index_surface(surface)]


# ============ Subgraphs ============

def one_hop(kg: KnowledgeGraph, entity_id: int, max_neighbors: int = DEFAULT_MAX_NEIGHBORS) -> Subgraph:
    """Deterministic capped one-hop subgraph: edges sorted by (rel, neighbor, direction)."""
    records = kg.adjacency(entity_id)
    records.sort(key=lambda rec: (rec[0], rec[2], rec[1]))
    return Subgraph(center=entity_id, edges=tuple(records[:max_neighbors]))
