"""Shared fixtures: a toy knowledge graph, tiny model configs, seeded torch."""

import sys
from pathlib import Path

import pytest
import torch

# Add repo root to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from ai.graphenc import GatConfig
from ai.kgpretrain import pretrain
from ai.textenc import EncoderConfig, Vocab
from utils.kgstore import ingest, ingest_files
from utils.storage import FIXTURES_DIR

ENTITY_LINES = [
    "Q1\tbad romance\tsong",
    "Q1\tbad romance\trecorded by lady gaga",
    "Q2\tlady gaga\tamerican singer",
    "Q3\tbad romance\t2011 film",
    "Q4\tcarson city\tcapital city of nevada",
    "Q5\tcorbin city\tcity in new jersey",
    "Q6\tnevada\tstate",
    "Q7\tnew jersey\tstate",
    "Q8\tbad boy\tsong by red velvet",
    "Q9\tred velvet\tgirl group",
    "Q10\tlonely island\t",
]

TRIPLE_LINES = [
    "Q1\tperformer\tQ2",
    "Q8\tperformer\tQ9",
    "Q4\tlocated_in\tQ6",
    "Q5\tlocated_in\tQ7",
    "Q4\tcapital_of\tQ6",
]


def pytest_configure(config):
    torch.set_default_dtype(torch.float64)


@pytest.fixture(autouse=True)
def seeded():
    torch.manual_seed(0)


@pytest.fixture
def toy_kg():
    return ingest(ENTITY_LINES, TRIPLE_LINES)


@pytest.fixture(scope="session")
def fixture_kg():
    return ingest_files(FIXTURES_DIR / "entities.tsv", FIXTURES_DIR / "triples.tsv")


@pytest.fixture
def toy_table(toy_kg):
    table, _ = pretrain(toy_kg, dim=8, epochs=3, batch_size=4, seed=0)
    return table


@pytest.fixture
def toy_vocab(toy_kg):
    texts = ["play bad boy dance by lady gaga", "what is the weather in carson city"]
    for entity in toy_kg.entities.values():
        texts.append(entity.surface)
        texts.extend(entity.descriptions)
    return Vocab.build(texts, trigram_buckets=64)


@pytest.fixture
def text_cfg():
    return EncoderConfig(layers=1, heads=2, hidden=8, max_len=24, ffn=16)


@pytest.fixture
def gat_cfg():
    return GatConfig(layers=2, heads=2, hidden=8, in_dim=8, max_neighbors=8)
