import random

import pytest

from utils.errors import KnowledgeGraphError, UnknownEntityError
from utils.kgstore import (
    DEFAULT_MAX_NEIGHBORS,
    DES_TOKEN,
    INCOMING,
    OUTGOING,
    filter_index_entities,
    ingest,
    is_index_surface,
    load_graph,
    one_hop,
    save_graph,
)


def test_repeated_entity_merges_descriptions_in_file_order(toy_kg):
    ids = toy_kg.lookup("bad romance")
    song = toy_kg.entity(ids[0])
    assert song.descriptions == ("song", "recorded by lady gaga")


def test_polysemous_surface_keeps_every_id(toy_kg):
    ids = toy_kg.lookup("bad romance")
    assert len(ids) == 2
    assert toy_kg.descriptions_for("bad romance") == ["song", "recorded by lady gaga", "2011 film"]


def test_lookup_is_case_insensitive(toy_kg):
    assert toy_kg.lookup("Lady Gaga") == toy_kg.lookup("lady gaga")


def test_malformed_lines_are_skipped_and_counted():
    kg = ingest(
        ["Q1\tcarson city\tcity", "no tabs here", "Q2\t\tmissing surface", "Q3\tnevada\tstate"],
        ["Q1\tlocated_in\tQ3", "Q1\tlocated_in", "Q1\tlocated_in\tQ99"],
    )
    assert len(kg) == 2
    assert kg.report.skipped_entity_lines == 2
    assert kg.report.skipped_triple_lines == 1
    assert kg.report.dropped_triples == 1
    assert len(kg.triples) == 1


def test_description_with_reserved_token_is_rejected():
    kg = ingest([f"Q1\tx\tbad {DES_TOKEN} text", "Q1\tx\tfine"], [])
    assert kg.entity(kg.lookup("x")[0]).descriptions == ("fine",)
    assert kg.report.rejected_descriptions == 1


def test_zero_valid_entities_is_an_error():
    with pytest.raises(KnowledgeGraphError):
        ingest(["garbage"], [])


@pytest.mark.parametrize("surface, keep", [
    ("carson city", True),
    ("bad romance", True),
    ("50 cent", False),
    ("café", False),
    ("mr. brightside", False),
    ("", False),
])
def test_index_surface_filter(surface, keep):
    assert is_index_surface(surface) is keep


def test_filter_index_entities_is_sorted_with_all_ids(toy_kg):
    entries = filter_index_entities(toy_kg)
    surfaces = [e.surface for e in entries]
    assert surfaces == sorted(surfaces)
    romance = next(e for e in entries if e.surface == "bad romance")
    assert romance.ids == tuple(sorted(toy_kg.lookup("bad romance")))


def test_one_hop_sees_both_directions(toy_kg):
    gaga = toy_kg.lookup("lady gaga")[0]
    song = toy_kg.lookup("bad romance")[0]
    sub = one_hop(toy_kg, gaga)
    assert sub.center == gaga
    assert (toy_kg.relation_id("performer"), INCOMING, song) in sub.edges

    out = one_hop(toy_kg, song)
    assert (toy_kg.relation_id("performer"), OUTGOING, gaga) in out.edges


def test_one_hop_is_capped_and_deterministic(toy_kg):
    carson = toy_kg.lookup("carson city")[0]
    full = one_hop(toy_kg, carson)
    assert len(full.edges) == 2
    assert one_hop(toy_kg, carson, max_neighbors=1).edges == full.edges[:1]
    assert one_hop(toy_kg, carson) == full


def _random_graph_lines(num_entities, num_triples, seed):
    rng = random.Random(seed)
    entities = [f"Q{i}\tentity {i}\tthing number {i}" for i in range(num_entities)]
    relations = ["located_in", "performer", "director", "cast_member"]
    triples = []
    for _ in range(num_triples):
        head, tail = rng.sample(range(num_entities), 2)
        triples.append(f"Q{head}\t{rng.choice(relations)}\tQ{tail}")
    return entities, triples


def test_ingesting_the_same_records_twice_writes_the_same_store(tmp_path):
    entities, triples = _random_graph_lines(40, 80, seed=2)
    save_graph(ingest(entities, triples), tmp_path / "a.json")
    save_graph(ingest(entities, triples), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_degrees_sum_to_twice_the_triples():
    kg = ingest(*_random_graph_lines(100, 300, seed=5))
    assert len(kg.triples) == 300
    assert sum(kg.degree(eid) for eid in kg.entities) == 600
    assert sum(len(kg.adjacency(eid)) for eid in kg.entities) == 600


def test_star_subgraph_keeps_the_first_neighbors_in_sorted_order():
    rng = random.Random(8)
    entities = ["C\tcenter\thub"] + [f"N{i}\tleaf {i}\tleaf" for i in range(50)]
    raw = []
    for i in range(50):
        rel = rng.choice(["r_a", "r_b", "r_c"])
        raw.append(f"C\t{rel}\tN{i}" if rng.random() < 0.5 else f"N{i}\t{rel}\tC")
    kg = ingest(entities, raw)
    center = kg.external("C")
    expected = []
    for line in raw:
        head, rel, tail = line.split("\t")
        if head == "C":
            expected.append((kg.relation_id(rel), OUTGOING, kg.external(tail)))
        else:
            expected.append((kg.relation_id(rel), INCOMING, kg.external(head)))
    expected.sort(key=lambda rec: (rec[0], rec[2], rec[1]))
    sub = one_hop(kg, center)
    assert len(sub.edges) == DEFAULT_MAX_NEIGHBORS == 32
    assert list(sub.edges) == expected[:32]



def test_isolated_entity_has_empty_subgraph(toy_kg):
    lonely = toy_kg.lookup("lonely island")[0]
    assert one_hop(toy_kg, lonely).edges == ()


def test_unknown_entity_id(toy_kg):
    with pytest.raises(UnknownEntityError):
        one_hop(toy_kg, 12345)
    with pytest.raises(KeyError):
        toy_kg.entity(12345)


def test_connected(toy_kg):
    song = toy_kg.lookup("bad romance")
    assert toy_kg.connected(song, toy_kg.lookup("lady gaga"))
    assert not toy_kg.connected(song, toy_kg.lookup("red velvet"))


def test_store_survives_save_and_load(toy_kg, tmp_path):
    path = tmp_path / "store" / "kg.json"
    save_graph(toy_kg, path)
    loaded = load_graph(path)
    assert loaded.signature() == toy_kg.signature()
    assert loaded.report.as_dict() == toy_kg.report.as_dict()


def test_missing_store(tmp_path):
    with pytest.raises(KnowledgeGraphError):
        load_graph(tmp_path / "absent.json")


def test_fixture_graph_filters_digits_and_punctuation(fixture_kg):
    surfaces = {e.surface for e in filter_index_entities(fixture_kg)}
    assert "bad romance" in surfaces
    assert "corbin city" in surfaces
    assert "50 cent" not in surfaces
    assert "beyoncé" not in surfaces
