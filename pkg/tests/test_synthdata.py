import random
from collections import Counter

import numpy as np
import pytest
import torch
from nltk import edit_distance

from ai.pipeline import NluHypothesis
from ai.retrieval import EntityIndex
from ai.synthdata import (
    FEW_SHOT_MAX,
    MAX_SYNTHETIC_ENTITIES,
    TAG_CLEAN,
    TAG_FEW_SHOT,
    TAG_KG_RELATION,
    TAG_ZERO_SHOT,
    RephraseSample,
    SynthCounts,
    Template,
    corrupt_entity,
    generate,
    index_surfaces_of,
    load_templates,
    make_clean,
    mine_hard_negatives,
    read_negatives,
    read_samples,
    render,
    synthesize_kg,
    tag_splits,
    to_l1_samples,
    to_l2_samples,
    write_negatives,
    write_samples,
    write_synthetic_kg,
)
from utils.kgstore import ingest, ingest_files, is_index_surface
from utils.storage import FIXTURES_DIR

WEATHER = NluHypothesis("Weather", "GetWeather", (("CityName", "x"),))


def _friction(target, context=(), source=None):
    source = source or f"navigate to {target}x"
    return RephraseSample(source, f"navigate to {target}", (2, 2), target + "x", target,
                          WEATHER, WEATHER, tuple(context), "navigate_city_state")


@pytest.fixture(scope="module")
def templates():
    return load_templates(FIXTURES_DIR / "templates.json")


@pytest.fixture
def by_name(templates):
    return {t.name: t for t in templates}


# ============ Corruption ============

def test_corruption_changes_the_surface_within_the_edit_budget(fixture_kg):
    surfaces = index_surfaces_of(fixture_kg)
    rng = random.Random(0)
    for surface in ("carson city", "bad romance", "hello", "austin", "a star is born"):
        for _ in range(50):
            corrupted = corrupt_entity(surface, rng, surfaces, max_edit=4)
            assert corrupted != surface
            assert 1 <= edit_distance(surface, corrupted) <= 4


def test_substitution_reaches_a_similar_entity(fixture_kg):
    surfaces = index_surfaces_of(fixture_kg)
    rng = random.Random(3)
    outputs = {corrupt_entity("carson city", rng, surfaces) for _ in range(200)}
    assert "corbin city" in outputs


def test_empty_surface_cannot_be_corrupted():
    with pytest.raises(ValueError):
        corrupt_entity("  ", random.Random(0))


# ============ Rendering ============

def test_render_reports_the_target_span(by_name):
    utterance, span = render(by_name["play_song_by_artist"], {"song": "bad romance", "artist": "lady gaga"})
    assert utterance == "play bad romance by lady gaga"
    assert span == (1, 2)


def test_clean_sample_keeps_the_utterance(by_name):
    sample = make_clean(by_name["weather_city"], {"city": "carson city"})
    assert sample.is_clean
    assert sample.source == sample.target == "what is the weather in carson city"
    assert sample.hypothesis.slots == (("CityName", "carson city"),)
    assert sample.tags == (TAG_CLEAN,)


def test_templates_reject_unmapped_placeholders(tmp_path):
    path = tmp_path / "templates.json"
    path.write_text('{"templates": [{"name": "t", "pattern": "play {song} now", "domain": "Music",'
                    ' "intent": "PlayMusic", "slots": {}, "target": "song"}]}')
    with pytest.raises(ValueError):
        load_templates(path)


# ============ Generation ============

@pytest.fixture(scope="module")
def generated(fixture_kg, templates):
    counts = SynthCounts(l2_train=40, clean_fraction=0.0, l1_train=20, friction_test=12, clean_test=6)
    return generate(fixture_kg, index_surfaces_of(fixture_kg), templates, counts, random.Random(11))


def test_friction_spans_cover_the_corrupt_text(generated):
    assert len(generated.l2_train) == 40
    for sample in generated.l2_train + generated.friction_test:
        start, end = sample.corrupt_span
        assert " ".join(sample.source.split()[start:end + 1]) == sample.corrupt_text
        assert sample.corrupt_text != sample.target_entity


def test_targets_are_index_surfaces(generated, fixture_kg):
    surfaces = set(index_surfaces_of(fixture_kg))
    assert len(generated.l1_train) == 20
    assert all(s.target_entity in surfaces for s in generated.l1_train)
    assert all(s.target_entity in surfaces for s in generated.l2_train + generated.friction_test)


def test_test_sets_are_disjoint_from_training(generated):
    train = {s.source for s in generated.l2_train}
    assert len(generated.friction_test) == 12
    assert len(generated.clean_test) == 6
    assert not train & {s.source for s in generated.friction_test + generated.clean_test}
    assert all(s.is_clean for s in generated.clean_test)


def test_generation_is_seeded(fixture_kg, templates):
    counts = SynthCounts(l2_train=10, l1_train=5, friction_test=3, clean_test=2)
    first = generate(fixture_kg, index_surfaces_of(fixture_kg), templates, counts, random.Random(4))
    second = generate(fixture_kg, index_surfaces_of(fixture_kg), templates, counts, random.Random(4))
    assert first == second


def test_unfillable_templates_generate_nothing(toy_kg):
    films = Template("films_by", "play {film}", "Video", "PlayVideo", {"film": "VideoName", "person": "PersonName"},
                     "film", relation="director", head="film", tail="person")
    sets = generate(toy_kg, index_surfaces_of(toy_kg), [films], SynthCounts(), random.Random(0))
    assert sets.l2_train == [] and sets.friction_test == []


# ============ Desk-scale generation ============

DESK_COUNTS = SynthCounts(l2_train=4000, l1_train=1000, friction_test=400, clean_test=200)


@pytest.fixture(scope="module")
def desk_sets(fixture_kg, templates):
    return generate(fixture_kg, index_surfaces_of(fixture_kg), templates, DESK_COUNTS, random.Random(7))


def test_desk_counts_fill_every_subset(desk_sets, fixture_kg):
    tagged = tag_splits(desk_sets.friction_test, desk_sets.l2_train, fixture_kg)
    for tag in (TAG_ZERO_SHOT, TAG_FEW_SHOT, TAG_KG_RELATION):
        assert any(tag in s.tags for s in tagged), tag


def test_few_shot_targets_stay_within_the_training_cap(desk_sets):
    seen = Counter(s.target_entity for s in desk_sets.l2_train if not s.is_clean)
    assert desk_sets.few_shot_targets and desk_sets.zero_shot_targets
    assert all(1 <= seen[t] <= FEW_SHOT_MAX for t in desk_sets.few_shot_targets)
    assert all(seen[t] == 0 for t in desk_sets.zero_shot_targets)
    assert not set(desk_sets.few_shot_targets) & set(desk_sets.zero_shot_targets)


def test_zero_few_shot_fraction_leaves_no_few_shot_targets(fixture_kg, templates):
    counts = SynthCounts(l2_train=200, l1_train=50, friction_test=20, clean_test=10, few_shot_fraction=0.0)
    sets = generate(fixture_kg, index_surfaces_of(fixture_kg), templates, counts, random.Random(2))
    assert sets.few_shot_targets == []


# ============ Synthetic knowledge graph ============

@pytest.fixture(scope="module")
def synthetic_kg():
    entities, triples = synthesize_kg(400, seed=5)
    return ingest(entities, triples)


def test_synthetic_kg_is_seeded():
    assert synthesize_kg(300, seed=1) == synthesize_kg(300, seed=1)
    assert synthesize_kg(300, seed=1) != synthesize_kg(300, seed=2)


def test_synthetic_kg_ingests_cleanly(synthetic_kg):
    report = synthetic_kg.report
    assert len(synthetic_kg) == 400
    assert report.skipped_entity_lines == report.skipped_triple_lines == report.dropped_triples == 0
    assert all(is_index_surface(s) for s in synthetic_kg.surfaces())
    assert {"capital_of", "located_in", "performer", "director", "cast_member"} <= set(synthetic_kg.relations.values())


def test_synthetic_kg_has_polysemous_surfaces(synthetic_kg):
    assert any(len(synthetic_kg.lookup(s)) > 1 for s in synthetic_kg.surfaces())


def test_synthetic_kg_fills_the_shipped_templates(synthetic_kg, templates):
    counts = SynthCounts(l2_train=300, l1_train=100, friction_test=60, clean_test=20)
    sets = generate(synthetic_kg, index_surfaces_of(synthetic_kg), templates, counts, random.Random(3))
    assert len(sets.l2_train) == 300
    assert len(sets.friction_test) == 60
    assert len({s.template for s in sets.l2_train}) > 3


@pytest.mark.parametrize("size", [49, MAX_SYNTHETIC_ENTITIES + 1])
def test_synthetic_kg_size_is_bounded(size):
    with pytest.raises(ValueError):
        synthesize_kg(size)


def test_synthetic_kg_files(tmp_path):
    write_synthetic_kg(tmp_path / "entities.tsv", tmp_path / "triples.tsv", 120, seed=9)
    kg = ingest_files(tmp_path / "entities.tsv", tmp_path / "triples.tsv")
    assert kg.signature() == ingest(*synthesize_kg(120, seed=9)).signature()


# ============ Subset tags ============

def test_subset_tags_follow_training_counts(toy_kg):
    train = [_friction("carson city")] * 10 + [_friction("corbin city")] * 11
    tests = [_friction("carson city", source="a"), _friction("corbin city", source="b"),
             _friction("nevada", source="c")]
    tagged = tag_splits(tests, train, toy_kg)
    assert [s.tags for s in tagged] == [(TAG_FEW_SHOT,), (), (TAG_ZERO_SHOT,)]


def test_kg_relation_tag_needs_a_connecting_triple(toy_kg):
    tests = [_friction("carson city", ("nevada",)), _friction("corbin city", ("nevada",))]
    tagged = tag_splits(tests, [], toy_kg)
    assert TAG_KG_RELATION in tagged[0].tags
    assert TAG_KG_RELATION not in tagged[1].tags


# ============ Hard negatives ============

class _FixedMiner:
    """Returns the same query vector for every utterance."""

    def __init__(self, vector):
        self.vector = torch.tensor(vector, dtype=torch.float64)

    def encode_utterances(self, texts):
        return self.vector.repeat(len(texts), 1)


def _mining_index():
    surfaces = ["carson city", "corbin city", "atlantic city", "nevada", "reno"]
    vectors = np.array([[5.0, 0.0], [4.0, 0.0], [3.0, 0.0], [0.0, 1.0], [0.0, 2.0]])
    return EntityIndex(surfaces, [(i,) for i in range(5)], vectors)


def test_mined_negatives_exclude_the_positive():
    samples = [_friction("carson city")]
    negatives, report = mine_hard_negatives(_FixedMiner([1.0, 0.0]), _mining_index(), samples, count=2, k=3)
    assert negatives == [["corbin city", "atlantic city"]]
    assert report.padded == 0


def test_short_negative_lists_are_padded():
    samples = [_friction("carson city")]
    negatives, report = mine_hard_negatives(_FixedMiner([1.0, 0.0]), _mining_index(), samples, count=3, k=2)
    assert negatives[0][0] == "corbin city"
    assert len(negatives[0]) == 3
    assert "carson city" not in negatives[0]
    assert len(set(negatives[0])) == 3
    assert report.padded == 1


def test_training_sample_conversion(by_name):
    friction = _friction("carson city")
    clean = make_clean(by_name["weather_city"], {"city": "reno"})
    l1 = to_l1_samples([friction, clean], [["corbin city", "reno"], ["nevada"]], count=1)
    l2 = to_l2_samples([friction, clean], [["corbin city", "reno"], ["nevada"]], count=4)
    assert [(s.positive, s.hard_negatives) for s in l1] == [("carson city", ("corbin city",))]
    assert l2[0].span == (2, 2)
    assert l2[1].is_null and l2[1].hard_negatives == ("nevada",)


# ============ Files ============

def test_sample_files_keep_every_field(tmp_path, by_name):
    samples = [_friction("carson city", ("nevada",)), make_clean(by_name["weather_city"], {"city": "reno"})]
    path = tmp_path / "samples.tsv"
    write_samples(path, samples)
    assert read_samples(path) == samples


def test_negative_files(tmp_path):
    path = tmp_path / "negatives.tsv"
    write_negatives(path, [["corbin city", "reno"], []])
    assert read_negatives(path) == [["corbin city", "reno"], []]


def test_sample_file_header_is_checked(tmp_path):
    path = tmp_path / "samples.tsv"
    path.write_text("source\ttarget\n")
    with pytest.raises(ValueError):
        read_samples(path)
