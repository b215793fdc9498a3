"""
Artifact layout of one run directory and loaders that rebuild models from it.

    store/kg.json                      ingested knowledge graph
    checkpoints/kg.tensors             pretrained node / relation table
    data/vocab.txt, data/*.tsv         vocabulary and sample sets
    data/negatives-l1.tsv, -l2.tsv     mined hard negatives
    checkpoints/miner.tensors          KG-free retriever used for mining
    checkpoints/l1-<variant>.tensors   bi-encoder
    index/entities-<variant>.idx       entity index
    checkpoints/l2-<variant>.tensors   cross-encoder
    reports/                           evaluation output
    manifests/                         one manifest per subcommand run
"""

import logging
from pathlib import Path
from typing import Dict, Optional

from utils.config import RunConfig, config_hash
from utils.errors import ArtifactMismatchError, PrerequisiteError
from utils.kgstore import KnowledgeGraph, load_graph
from utils.storage import checkpoint_metadata, ensure_dir, file_hash

from .graphenc import GatConfig
from .kgpretrain import EmbeddingTable
from .nncore import load_module, save_module
from .pipeline import Rewriter
from .rerank import CrossEncoder, build_cross_encoder
from .retrieval import BiEncoder, EntityIndex, build_bi_encoder
from .textenc import EncoderConfig, Vocab

logger = logging.getLogger(__name__)


class Workspace:
    """Paths and cached loaders for the artifacts of one config."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = Path(cfg.paths.workspace)
        self.config_hash = config_hash(cfg)
        self.shared_hash = config_hash(cfg, shared=True)
        self._kg: Optional[KnowledgeGraph] = None
        self._vocab: Optional[Vocab] = None
        self._table: Optional[EmbeddingTable] = None

    # ---- locations ----

    @property
    def variant(self) -> str:
        return self.cfg.model.variant

    def path(self, *parts: str) -> Path:
        return self.root.joinpath(*parts)

    @property
    def store(self) -> Path:
        return self.path("store", "kg.json")

    @property
    def kg_table(self) -> Path:
        return self.path("checkpoints", "kg.tensors")

    @property
    def vocab_file(self) -> Path:
        return self.path("data", "vocab.txt")

    def samples(self, name: str) -> Path:
        return self.path("data", f"{name}.tsv")

    def negatives(self, stage: str) -> Path:
        return self.path("data", f"negatives-{stage}.tsv")

    @property
    def miner(self) -> Path:
        return self.path("checkpoints", "miner.tensors")

    @property
    def miner_index(self) -> Path:
        return self.path("index", "miner.idx")

    def l1(self, variant: Optional[str] = None) -> Path:
        return self.path("checkpoints", f"l1-{variant or self.variant}.tensors")

    def index(self, variant: Optional[str] = None) -> Path:
        return self.path("index", f"entities-{variant or self.variant}.idx")

    def l2(self, variant: Optional[str] = None) -> Path:
        return self.path("checkpoints", f"l2-{variant or self.variant}.tensors")

    def report(self, name: str) -> Path:
        return self.path("reports", name)

    @property
    def manifests(self) -> Path:
        return ensure_dir(self.path("manifests"))

    def metadata(self, kind: str, **extra: str) -> Dict[str, str]:
        meta = {"kind": kind, "config_hash": self.config_hash, "seed": str(self.cfg.seed)}
        meta.update(extra)
        return meta

    # ---- loaders ----

    @staticmethod
    def require(path: Path, producer: str) -> Path:
        if not Path(path).exists():
            raise PrerequisiteError(str(path), producer)
        return path

    def kg(self) -> KnowledgeGraph:
        if self._kg is None:
            self._kg = load_graph(self.require(self.store, "ingest"))
        return self._kg

    def vocab(self) -> Vocab:
        if self._vocab is None:
            self._vocab = Vocab.load(self.require(self.vocab_file, "gen-data"), self.cfg.text.trigram_buckets)
        return self._vocab

    def table(self) -> EmbeddingTable:
        if self._table is None:
            self._table, _ = EmbeddingTable.load(self.require(self.kg_table, "pretrain-kg"))
        return self._table

    def text_config(self) -> EncoderConfig:
        t = self.cfg.text
        return EncoderConfig(layers=t.layers, heads=t.heads, hidden=t.hidden, max_len=t.max_len, ffn=t.ffn)

    def gat_config(self) -> GatConfig:
        g = self.cfg.gat
        return GatConfig(layers=g.layers, heads=g.heads, hidden=g.hidden, in_dim=self.cfg.kg.dim, slope=g.slope,
                         phi=g.phi, compose_in_attention=g.compose_in_attention,
                         max_neighbors=self.cfg.kg.max_neighbors)

    def new_bi_encoder(self, variant: Optional[str] = None) -> BiEncoder:
        use_gat, use_descriptions = _variant_flags(variant or self.variant)
        return build_bi_encoder(self.text_config(), self.gat_config(), self.vocab(), self.kg(),
                                self.table() if use_gat else None, self.cfg.l1.d_sim,
                                use_gat, use_descriptions, seed=self.cfg.seed)

    def new_cross_encoder(self, variant: Optional[str] = None) -> CrossEncoder:
        use_gat, use_descriptions = _variant_flags(variant or self.variant)
        return build_cross_encoder(self.text_config(), self.gat_config(), self.vocab(), self.kg(),
                                   self.table() if use_gat else None, use_gat, use_descriptions,
                                   seed=self.cfg.seed + 1)

    def save_model(self, model, path: Path, kind: str, shared: bool = False):
        meta = self.metadata(kind, variant="no_kg" if shared else self.variant)
        if shared:
            meta["config_hash"] = self.shared_hash
        save_module(model, path, meta)

    def _load_checked(self, model, path: Path, producer: str, shared: bool = False):
        self.require(path, producer)
        meta = checkpoint_metadata(path)
        if meta.get("config_hash") != (self.shared_hash if shared else self.config_hash):
            raise ArtifactMismatchError(f"{path} was produced by a different config; rerun {producer}")
        load_module(model, path)
        return model

    def bi_encoder(self) -> BiEncoder:
        return self._load_checked(self.new_bi_encoder(), self.l1(), "train-l1")

    def miner_model(self) -> BiEncoder:
        return self._load_checked(self.new_bi_encoder("no_kg"), self.miner, "mine-negatives", shared=True)

    def cross_encoder(self) -> CrossEncoder:
        return self._load_checked(self.new_cross_encoder(), self.l2(), "train-l2")

    def entity_index(self) -> EntityIndex:
        index = EntityIndex.load(self.require(self.index(), "build-index"))
        l1_path = self.require(self.l1(), "train-l1")
        if index.metadata.get("checkpoint_hash") != file_hash(l1_path):
            raise ArtifactMismatchError(f"{self.index()} was built from a different L1 checkpoint; rerun build-index")
        return index

    def rewriter(self) -> Rewriter:
        index = self.entity_index()
        return Rewriter(self.bi_encoder(), self.cross_encoder(), index, k=self.cfg.l1.k,
                        max_span_len=self.cfg.l2.max_span_len, min_rank_score=self.cfg.eval.min_rank_score)


def _variant_flags(variant: str):
    """(use_gat, use_descriptions) for a model variant."""
    return variant == "full", variant != "no_kg"
