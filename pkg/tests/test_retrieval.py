import numpy as np
import pytest
import torch

from ai.nncore import grad_check
from ai.retrieval import (
    EntityIndex,
    TrainSampleL1,
    build_bi_encoder,
    build_index,
    encode_entity,
    l1_loss,
    sim,
    top_k,
    train_l1,
)
from utils.errors import DimensionError, EmptyIndexError
from utils.kgstore import filter_index_entities


@pytest.fixture
def bi_encoder(text_cfg, gat_cfg, toy_vocab, toy_kg, toy_table):
    return build_bi_encoder(text_cfg, gat_cfg, toy_vocab, toy_kg, toy_table, d_sim=8, seed=1)


def _random_index(rows=40, dim=6, seed=0):
    rng = np.random.default_rng(seed)
    surfaces = [f"entity {chr(97 + i % 26)}{i}" for i in range(rows)]
    return EntityIndex(surfaces, [(i,) for i in range(rows)], rng.normal(size=(rows, dim)))


# ============ sim ============

def test_sim_of_orthogonal_vectors_is_zero():
    assert sim(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0])).item() == 0.0


def test_sim_of_unit_vector_with_itself_is_one():
    v = torch.tensor([0.6, 0.8], dtype=torch.float64)
    assert sim(v, v).item() == pytest.approx(1.0)


def test_sim_is_linear_in_the_query():
    p = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64)
    q = torch.tensor([1.5, 0.5, -0.25], dtype=torch.float64)
    assert sim(p, 3.0 * q).item() == pytest.approx(3.0 * sim(p, q).item())


def test_sim_rejects_mismatched_lengths():
    with pytest.raises(DimensionError):
        sim(torch.zeros(3), torch.zeros(4))


# ============ Bi-encoder ============

def test_entity_vectors_are_deterministic(bi_encoder):
    with torch.no_grad():
        a = encode_entity(bi_encoder, "bad romance")
        b = encode_entity(bi_encoder, "bad romance")
    assert a.shape == (8,)
    assert torch.equal(a, b)


def test_entity_with_empty_subgraph_encodes(bi_encoder):
    with torch.no_grad():
        vec = encode_entity(bi_encoder, "lonely island")
    assert torch.isfinite(vec).all()


def test_graph_path_changes_entity_vectors(bi_encoder):
    with torch.no_grad():
        full = encode_entity(bi_encoder, "carson city")
        gat = bi_encoder.gat
        bi_encoder.gat = None
        ablated = encode_entity(bi_encoder, "carson city")
        bi_encoder.gat = gat
    assert not torch.allclose(full, ablated)


def test_no_kg_variant_uses_surface_text_only(text_cfg, gat_cfg, toy_vocab, toy_kg):
    model = build_bi_encoder(text_cfg, gat_cfg, toy_vocab, toy_kg, None, d_sim=8,
                             use_gat=False, use_descriptions=False)
    assert not model.use_gat
    assert model.entity_text("bad romance") == "bad romance"


def test_single_sample_without_negatives_has_zero_loss(bi_encoder):
    loss = l1_loss(bi_encoder, [TrainSampleL1("whats the weather in carsen city", "carson city")])
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_hard_negative_is_scored_in_the_batch(bi_encoder, monkeypatch):
    seen = []
    original = bi_encoder.encode_entities

    def spy(surfaces, id_lists=None):
        seen.extend(surfaces)
        return original(surfaces, id_lists)

    monkeypatch.setattr(bi_encoder, "encode_entities", spy)
    samples = [
        TrainSampleL1("weather in carsen city", "carson city", ("corbin city",)),
        TrainSampleL1("play bad boy dance by lady gaga", "bad romance", ("bad boy",)),
    ]
    loss = l1_loss(bi_encoder, samples)
    assert seen == ["carson city", "bad romance", "corbin city", "bad boy"]
    assert loss.item() > 0.0


def test_training_drops_unknown_positives_and_lowers_loss(bi_encoder, toy_kg):
    samples = [
        TrainSampleL1("weather in carsen city", "carson city", ("corbin city",)),
        TrainSampleL1("play bad boy dance by lady gaga", "bad romance", ("bad boy",)),
        TrainSampleL1("play bad boi by red velvet", "bad boy", ("bad romance",)),
        TrainSampleL1("drive to corbin citty", "corbin city", ("carson city",)),
        TrainSampleL1("play nothing", "not an entity"),
    ]
    known = [e.surface for e in filter_index_entities(toy_kg)]
    with torch.no_grad():
        before = l1_loss(bi_encoder, samples[:4]).item()
    report = train_l1(bi_encoder, samples, known, batch_size=4, epochs=30, lr=1e-2, seed=0)
    with torch.no_grad():
        after = l1_loss(bi_encoder, samples[:4]).item()
    assert report.dropped == 1
    assert report.steps == 30
    assert after < before


L1_BATCH = [
    TrainSampleL1("weather in carsen city", "carson city", ("corbin city",)),
    TrainSampleL1("play bad boy dance by lady gaga", "bad romance", ("bad boy",)),
    TrainSampleL1("play bad boi by red velvet", "bad boy", ("bad romance", "nevada")),
    TrainSampleL1("drive to corbin citty", "corbin city", ("carson city",)),
]


def test_l1_loss_gradient_matches_finite_differences(bi_encoder):
    assert grad_check(lambda: l1_loss(bi_encoder, L1_BATCH), bi_encoder, samples_per_param=3) < 1e-4


def test_l1_loss_ignores_batch_order(bi_encoder):
    with torch.no_grad():
        forward = l1_loss(bi_encoder, L1_BATCH).item()
        shuffled = l1_loss(bi_encoder, [L1_BATCH[i] for i in (2, 0, 3, 1)]).item()
    assert shuffled == pytest.approx(forward, rel=1e-9, abs=1e-12)


def test_training_leaves_pretrained_tables_untouched(bi_encoder, toy_kg, toy_table):
    nodes = toy_table.node_vecs.numpy().tobytes()
    buffer = bi_encoder.gat.node_table.clone()
    known = [e.surface for e in filter_index_entities(toy_kg)]
    train_l1(bi_encoder, L1_BATCH, known, batch_size=2, epochs=3, lr=1e-2, seed=0)
    assert toy_table.node_vecs.numpy().tobytes() == nodes
    assert bi_encoder.gat.node_table.numpy().tobytes() == buffer.numpy().tobytes()


# ============ Index ============

def test_empty_index_is_refused():
    with pytest.raises(EmptyIndexError):
        EntityIndex([], [], np.zeros((0, 4)))


def test_rows_are_sorted_by_surface():
    index = EntityIndex(["b", "a", "c"], [(1,), (0,), (2,)], np.eye(3))
    assert index.surfaces == ["a", "b", "c"]
    assert index.row("b") == 1
    assert "c" in index and "d" not in index


def test_search_matches_brute_force():
    index = _random_index()
    rng = np.random.default_rng(1)
    for _ in range(100):
        query = rng.normal(size=index.d_sim)
        scores = index.vectors.astype(np.float64) @ query
        expected = sorted(range(len(index)), key=lambda i: (-scores[i], index.surfaces[i]))[:7]
        assert [c.surface for c in index.search(query, 7)] == [index.surfaces[i] for i in expected]


def test_ties_go_to_the_smaller_surface():
    index = EntityIndex(["zeta", "alpha", "mid"], [(0,), (1,), (2,)], np.ones((3, 2)))
    assert [c.surface for c in index.search(np.ones(2), 3)] == ["alpha", "mid", "zeta"]


def test_k_beyond_size_returns_every_row():
    index = _random_index(rows=5)
    assert len(index.search(np.ones(index.d_sim), 50)) == 5


def test_query_dimension_is_checked():
    with pytest.raises(DimensionError):
        _random_index(dim=6).search(np.ones(4), 3)


def test_index_file_round_trip(tmp_path):
    index = _random_index()
    path = tmp_path / "entities.idx"
    index.save(path)
    loaded = EntityIndex.load(path)
    assert loaded.surfaces == index.surfaces
    assert loaded.ids == index.ids
    assert np.array_equal(loaded.vectors, index.vectors)


def test_index_build_is_reproducible(bi_encoder, toy_kg):
    entries = filter_index_entities(toy_kg)
    first = build_index(bi_encoder, entries)
    second = build_index(bi_encoder, entries)
    assert np.array_equal(first.vectors, second.vectors)
    assert len(first) == len(entries)
    assert first.ids[first.row("bad romance")] == tuple(toy_kg.lookup("bad romance"))


def test_top_k_checks_model_dimension(bi_encoder):
    with pytest.raises(DimensionError):
        top_k(_random_index(dim=6), "play bad romance", bi_encoder, 3)


def test_top_k_returns_index_rows(bi_encoder, toy_kg):
    index = build_index(bi_encoder, filter_index_entities(toy_kg))
    results = top_k(index, "play bad boy dance by lady gaga", bi_encoder, k=len(index))
    assert sorted(c.surface for c in results) == sorted(index.surfaces)
    assert [c.score for c in results] == sorted((c.score for c in results), reverse=True)
