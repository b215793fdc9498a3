"""
Synthetic rephrase corpus.

Utterances come from slot templates filled with knowledge-graph entities;
friction samples corrupt the target slot the way a misrecognized entity
would look, clean samples leave the utterance alone. Also tags test
subsets and mines hard negatives with a retriever that sees no KG.
"""

import logging
import random
import re
import string
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from nltk import edit_distance
from tqdm import tqdm

from utils.kgstore import KnowledgeGraph, is_index_surface
from utils.logging_setup import progress_enabled
from utils.storage import atomic_write_text, load_json, read_lines

from .pipeline import NluHypothesis
from .rerank import TrainSampleL2
from .retrieval import BiEncoder, EntityIndex, TrainSampleL1

logger = logging.getLogger(__name__)

TAG_ZERO_SHOT = "zero_shot"
TAG_FEW_SHOT = "few_shot"
TAG_KG_RELATION = "kg_relation"
TAG_CLEAN = "clean"
FEW_SHOT_MAX = 10

_PLACEHOLDER = re.compile(r"\{(\w+)\}")
_LETTERS = string.ascii_lowercase
SAMPLE_COLUMNS = ("source", "target", "span_start", "span_end", "corrupt_text", "target_entity",
                  "hypothesis", "target_hypothesis", "context_entities", "template", "tags")


@dataclass(frozen=True)
class RephraseSample:
    source: str
    target: str
    corrupt_span: Optional[Tuple[int, int]]    # inclusive word indices in source
    corrupt_text: Optional[str]
    target_entity: Optional[str]
    hypothesis: NluHypothesis                  # what upstream NLU reads from source
    target_hypothesis: NluHypothesis           # hypothesis of the clean target
    context_entities: Tuple[str, ...] = ()
    template: str = ""
    tags: Tuple[str, ...] = ()

    @property
    def is_clean(self) -> bool:
        return self.corrupt_span is None


@dataclass
class Template:
    name: str
    pattern: str
    domain: str
    intent: str
    slots: Dict[str, str]              # placeholder -> NLU slot name
    target: str                        # placeholder that gets corrupted
    relation: Optional[str] = None     # fill head/tail from triples of this relation
    head: Optional[str] = None
    tail: Optional[str] = None
    description: Optional[str] = None  # or fill target from entities described by this word

    @property
    def placeholders(self) -> List[str]:
        return _PLACEHOLDER.findall(self.pattern)


def load_templates(filepath: Path) -> List[Template]:
    data = load_json(filepath)
    templates = [Template(**entry) for entry in data.get("templates", [])]
    for template in templates:
        missing = set(template.placeholders) - set(template.slots)
        if missing or template.target not in template.slots:
            raise ValueError(f"template {template.name!r} has unmapped placeholders {sorted(missing)}")
    return templates


@dataclass
class SynthCounts:
    l2_train: int = 20000
    clean_fraction: float = 0.25
    l1_train: int = 4000
    friction_test: int = 2000
    clean_test: int = 500
    zero_shot_fraction: float = 0.1
    max_edit: int = 4
    few_shot_fraction: float = 0.2      # share of targets capped at 1..FEW_SHOT_MAX training frictions


@dataclass
class SampleSets:
    l1_train: List[RephraseSample] = field(default_factory=list)
    l2_train: List[RephraseSample] = field(default_factory=list)
    friction_test: List[RephraseSample] = field(default_factory=list)
    clean_test: List[RephraseSample] = field(default_factory=list)
    zero_shot_targets: List[str] = field(default_factory=list)
    few_shot_targets: List[str] = field(default_factory=list)


# ============ Corruption ============

def _char_edit(surface: str, rng: random.Random) -> str:
    words = surface.split()
    w = rng.randrange(len(words))
    word = words[w]
    op = rng.choice(("sub", "ins", "del") if len(word) > 1 else ("sub", "ins"))
    pos = rng.randrange(len(word))
    if op == "sub":
        letter = rng.choice([c for c in _LETTERS if c != word[pos]])
        word = word[:pos] + letter + word[pos + 1:]
    elif op == "ins":
        word = word[:pos] + rng.choice(_LETTERS) + word[pos:]
    else:
        word = word[:pos] + word[pos + 1:]
    words[w] = word
    return " ".join(words)


def _nearest_substitution(surface: str, rng: random.Random, index_surfaces: Sequence[str], max_edit: int) -> Optional[str]:
    """An index surface differing from `surface` in exactly one word, nearest by edit distance."""
    words = surface.split()
    best, best_distance = [], max_edit + 1
    for other in index_surfaces:
        other_words = other.split()
        if other == surface or len(other_words) != len(words):
            continue
        if sum(a != b for a, b in zip(words, other_words)) != 1:
            continue
        distance = edit_distance(surface, other)
        if distance < best_distance:
            best, best_distance = [other], distance
        elif distance == best_distance:
            best.append(other)
    return rng.choice(best) if best else None


def _split_or_merge(surface: str, rng: random.Random) -> Optional[str]:
    words = surface.split()
    if len(words) > 1:
        w = rng.randrange(len(words) - 1)
        return " ".join(words[:w] + [words[w] + words[w + 1]] + words[w + 2:])
    word = words[0]
    if len(word) < 4:
        return None
    cut = rng.randrange(2, len(word) - 1)
    return f"{word[:cut]} {word[cut:]}"


def corrupt_entity(surface: str, rng: random.Random, index_surfaces: Sequence[str] = (), max_edit: int = 4) -> str:
    """
    Apply one sampled corruption operator: a character edit, substitution of
    the nearest one-word-different index surface, or a word split/merge.
    The result always differs from the input and stays within max_edit
    character edits.
    """
    if not surface.split():
        raise ValueError("cannot corrupt an empty surface")
    operators = ["char", "substitute", "split_merge"]
    for _ in range(8):
        op = rng.choice(operators)
        if op == "char":
            corrupted = _char_edit(surface, rng)
        elif op == "substitute":
            corrupted = _nearest_substitution(surface, rng, index_surfaces, max_edit)
        else:
            corrupted = _split_or_merge(surface, rng)
        if corrupted and corrupted != surface and 1 <= edit_distance(surface, corrupted) <= max_edit:
            return corrupted
    return _char_edit(surface, rng)


# ============ Generation ============

def _fillers(template: Template, kg: KnowledgeGraph, index_set: set) -> List[Dict[str, str]]:
    fillers = []
    if template.relation is not None:
        try:
            rel = kg.relation_id(template.relation)
        except KeyError:
            return []
        for triple in kg.triples:
            if triple.rel != rel:
                continue
            filler = {template.head: kg.entity(triple.head).surface, template.tail: kg.entity(triple.tail).surface}
            if filler[template.target] in index_set:
                fillers.append(filler)
    elif template.description is not None:
        word = template.description.lower()
        for entity in sorted(kg.entities.values(), key=lambda e: e.id):
            if entity.surface in index_set and any(word in d.lower().split() for d in entity.descriptions):
                fillers.append({template.target: entity.surface})
    unique = {tuple(sorted(f.items())): f for f in fillers}
    return [unique[key] for key in sorted(unique)]


def render(template: Template, values: Dict[str, str]) -> Tuple[str, Tuple[int, int]]:
    """Fill the pattern; returns (utterance, inclusive word range of the target slot)."""
    words: List[str] = []
    span = (0, 0)
    for piece in re.split(r"(\{\w+\})", template.pattern):
        match = _PLACEHOLDER.fullmatch(piece)
        if match is None:
            words.extend(piece.split())
            continue
        name = match.group(1)
        value_words = values[name].split()
        if name == template.target:
            span = (len(words), len(words) + len(value_words) - 1)
        words.extend(value_words)
    return " ".join(words), span


def _hypothesis(template: Template, values: Dict[str, str]) -> NluHypothesis:
    return NluHypothesis(template.domain, template.intent,
                         tuple((template.slots[name], values[name]) for name in template.placeholders))


def make_friction(template: Template, filler: Dict[str, str], rng: random.Random,
                  index_surfaces: Sequence[str], max_edit: int = 4) -> RephraseSample:
    target_entity = filler[template.target]
    corrupted = corrupt_entity(target_entity, rng, index_surfaces, max_edit)
    noisy = dict(filler, **{template.target: corrupted})
    source, span = render(template, noisy)
    target, _ = render(template, filler)
    context = tuple(filler[name] for name in template.placeholders if name != template.target)
    return RephraseSample(source, target, span, corrupted, target_entity,
                          _hypothesis(template, noisy), _hypothesis(template, filler), context, template.name)


def make_clean(template: Template, filler: Dict[str, str]) -> RephraseSample:
    utterance, _ = render(template, filler)
    hyp = _hypothesis(template, filler)
    return RephraseSample(utterance, utterance, None, None, None, hyp, hyp, (), template.name, (TAG_CLEAN,))


def generate(
    kg: KnowledgeGraph,
    index_surfaces: Sequence[str],
    templates: Sequence[Template],
    counts: SynthCounts,
    rng: random.Random,
) -> SampleSets:
    """
    Build training and test sets. A held-out share of target surfaces never
    appears in training friction samples (zero-shot targets), a second share
    appears 1..FEW_SHOT_MAX times (few-shot targets); test sets are disjoint
    from training by source utterance.
    """
    index_set = set(index_surfaces)
    pools = [(t, _fillers(t, kg, index_set)) for t in templates]
    pools = [(t, f) for t, f in pools if f]
    sets = SampleSets()
    if not pools:
        logger.warning("no template could be filled from the knowledge graph; generated nothing")
        return sets

    targets = sorted({f[t.target] for t, fs in pools for f in fs})
    held_out = set(rng.sample(targets, int(len(targets) * counts.zero_shot_fraction)))
    remaining = [t for t in targets if t not in held_out]
    n_few = min(int(len(targets) * counts.few_shot_fraction), max(len(remaining) - 1, 0))
    quota = {t: rng.randint(1, FEW_SHOT_MAX) for t in sorted(rng.sample(remaining, n_few))}
    n_clean = int(round(counts.l2_train * counts.clean_fraction))
    n_friction = counts.l2_train - n_clean
    # few-shot frictions take at most half the friction budget
    for target in sorted(quota, reverse=True):
        if sum(quota.values()) <= n_friction // 2:
            break
        del quota[target]
    sets.zero_shot_targets = sorted(held_out)
    sets.few_shot_targets = sorted(quota)

    def draw(pool_list):
        template, fillers = pool_list[rng.randrange(len(pool_list))]
        return template, fillers[rng.randrange(len(fillers))]

    by_target: Dict[str, List[Tuple[Template, Dict[str, str]]]] = {}
    for template, fillers in pools:
        for filler in fillers:
            by_target.setdefault(filler[template.target], []).append((template, filler))
    regular_pools = [(t, [f for f in fs if f[t.target] not in held_out and f[t.target] not in quota])
                     for t, fs in pools]
    regular_pools = [(t, fs) for t, fs in regular_pools if fs]

    pairs = [rng.choice(by_target[t]) for t in sets.few_shot_targets for _ in range(quota[t])]
    if regular_pools:
        pairs.extend(draw(regular_pools) for _ in range(n_friction - len(pairs)))
    rng.shuffle(pairs)
    friction_train = [make_friction(t, f, rng, index_surfaces, counts.max_edit) for t, f in pairs]
    clean_train = [make_clean(*draw(pools)) for _ in range(n_clean)]
    sets.l2_train = friction_train + clean_train
    sets.l1_train = [s for s in friction_train if s.target_entity in index_set][:counts.l1_train]

    seen = {s.source for s in sets.l2_train}
    sets.friction_test = _disjoint(lambda: make_friction(*draw(pools), rng, index_surfaces, counts.max_edit),
                                   counts.friction_test, seen, "friction test")
    sets.clean_test = _disjoint(lambda: make_clean(*draw(pools)), counts.clean_test, seen, "clean test")

    for name, wanted, got in (("l2 train", counts.l2_train, len(sets.l2_train)),
                              ("l1 train", counts.l1_train, len(sets.l1_train))):
        if got < wanted:
            logger.warning("%s: generated %d of %d requested samples", name, got, wanted)
    logger.info("generated %d l1 / %d l2 train, %d friction / %d clean test samples",
                len(sets.l1_train), len(sets.l2_train), len(sets.friction_test), len(sets.clean_test))
    logger.info("targets: %d zero-shot, %d few-shot of %d", len(sets.zero_shot_targets), len(sets.few_shot_targets),
                len(targets))
    return sets


def _disjoint(make, count: int, seen: set, label: str) -> List[RephraseSample]:
    samples = []
    attempts = 0
    while len(samples) < count and attempts < count * 20:
        attempts += 1
        sample = make()
        if sample.source in seen:
            continue
        seen.add(sample.source)
        samples.append(sample)
    if len(samples) < count:
        logger.warning("%s: generated %d of %d requested samples", label, len(samples), count)
    return samples


# ============ Desk-scale knowledge graph ============

_ADJECTIVES = (
    "bad", "blue", "broken", "burning", "cold", "crazy", "dark", "electric", "empty", "endless",
    "faded", "golden", "gentle", "heavy", "hidden", "hollow", "little", "lonely", "lost", "lucky",
    "midnight", "neon", "paper", "perfect", "quiet", "restless", "secret", "shallow", "silent", "silver",
    "simple", "sleepless", "slow", "starry", "sweet", "velvet", "wild", "wicked", "young", "hungry",
)
_NOUNS = (
    "angel", "boy", "bridge", "city", "dance", "dream", "echo", "fire", "flower", "garden",
    "ghost", "girl", "heart", "highway", "horizon", "island", "kiss", "lights", "love", "machine",
    "memory", "mirror", "moon", "morning", "mountain", "night", "ocean", "paradise", "rain", "river",
    "road", "romance", "rose", "shadow", "sky", "smile", "song", "star", "storm", "story",
    "summer", "sun", "tears", "thunder", "town", "train", "wave", "wind", "window", "winter",
)
_VERBS = (
    "chasing", "calling", "dancing", "dreaming", "falling", "fighting", "holding", "losing", "missing",
    "running", "saving", "singing", "taking", "waiting", "walking", "burning", "counting", "finding",
    "leaving", "watching",
)
_FIRST_NAMES = (
    "ada", "alma", "ben", "cara", "dan", "eli", "ema", "finn", "gus", "hana", "ivy", "jack", "kai", "lena",
    "leo", "lucy", "max", "mia", "nate", "nina", "omar", "pia", "quinn", "rosa", "sam", "tara", "theo",
    "uma", "vera", "wade", "zoe", "amir", "bea", "cole", "dina", "ezra", "faye", "gina", "hugo", "iris",
)
_LAST_NAMES = (
    "adler", "baker", "carver", "dalton", "ellis", "fisher", "garner", "hale", "irving", "jensen",
    "keller", "lane", "morrow", "nolan", "osborne", "parker", "quill", "rivers", "sawyer", "thorne",
    "underwood", "vance", "walsh", "yates", "archer", "brooks", "cross", "drake", "frost", "gray",
    "hayes", "knight", "marsh", "north", "pike", "reed", "stone", "tate", "wells", "york",
)
_PLACE_ROOTS = (
    "ash", "bel", "birch", "black", "bram", "cedar", "clear", "crest", "elm", "fair",
    "fox", "glen", "green", "hart", "high", "iron", "kings", "lake", "maple", "mill",
    "oak", "pine", "red", "river", "rock", "rose", "salt", "spring", "stone", "wood",
)
_PLACE_ENDINGS = (
    "bury", "dale", "field", "ford", "gate", "ham", "haven", "hill", "hurst", "land",
    "mont", "mouth", "port", "ridge", "stead", "ton", "vale", "view", "ville", "wick",
)
_PLACE_PREFIXES = ("", "new ", "east ", "west ", "port ")
_STATE_ROOTS = (
    "alder", "bren", "cal", "dor", "esk", "fen", "gar", "hol", "ister", "jor",
    "kal", "lor", "mer", "nor", "ost", "per", "quel", "ros", "sel", "tor",
)
_STATE_ENDINGS = ("ania", "avia", "essa", "ington", "ora", "uria")
_ARTIST_KINDS = ("singer and songwriter", "pop singer", "rock band", "rapper", "girl group", "jazz singer")
_FILM_GENRES = ("drama", "science fiction", "romantic comedy", "thriller", "animated", "musical drama")
_FILM_SHARE_SONG_TITLE = 0.3
MAX_SYNTHETIC_ENTITIES = 7000


def _names(rng: random.Random, pool: List[str], count: int, kind: str) -> List[str]:
    if count > len(pool):
        raise ValueError(f"cannot draw {count} distinct {kind} names from a pool of {len(pool)}")
    return rng.sample(pool, count)


def synthesize_kg(num_entities: int, seed: int = 0) -> Tuple[List[str], List[str]]:
    """
    Seeded stand-in for a knowledge-graph subset: states, cities, artists,
    songs, film directors and films with descriptions and relation triples,
    in the entity / triple record format `ingest` reads. A share of films
    reuse a song title, so polysemous surfaces occur throughout.

    Returns:
        (entity lines, triple lines)
    """
    if not 50 <= num_entities <= MAX_SYNTHETIC_ENTITIES:
        raise ValueError(f"num_entities must lie in [50, {MAX_SYNTHETIC_ENTITIES}], got {num_entities}")
    rng = random.Random(seed)
    n_states = max(2, num_entities // 100)
    n_cities = num_entities * 25 // 100
    n_artists = num_entities * 10 // 100
    n_songs = num_entities * 40 // 100
    n_directors = max(1, num_entities * 3 // 100)
    n_films = num_entities - n_states - n_cities - n_artists - n_songs - n_directors

    people = [f"{a} {b}" for a in _FIRST_NAMES for b in _LAST_NAMES]
    titles = [f"{a} {n}" for a in _ADJECTIVES for n in _NOUNS] + [f"{v} {n}" for v in _VERBS for n in _NOUNS]
    places = [f"{p}{r}{e}" for p in _PLACE_PREFIXES for r in _PLACE_ROOTS for e in _PLACE_ENDINGS]
    film_titles = [f"the {a} {n}" for a in _ADJECTIVES for n in _NOUNS]

    states = _names(rng, [r + e for r in _STATE_ROOTS for e in _STATE_ENDINGS], n_states, "state")
    cities = _names(rng, places, n_cities, "city")
    persons = _names(rng, people, n_artists + n_directors, "person")
    artists, directors = persons[:n_artists], persons[n_artists:]
    songs = _names(rng, titles, n_songs, "song")
    n_reused = min(int(n_films * _FILM_SHARE_SONG_TITLE), n_songs)
    films = rng.sample(songs, n_reused) + _names(rng, film_titles, n_films - n_reused, "film")

    entities: List[str] = []
    triples: List[str] = []

    def add(surface: str, description: str) -> str:
        external_id = f"S{len(entities) + 1}"
        entities.append(f"{external_id}\t{surface}\t{description}")
        return external_id

    state_ids = [add(state, "state of the republic") for state in states]
    for i, city in enumerate(cities):
        state = i % n_states
        if i < n_states:
            city_id = add(city, f"capital city of {states[state]}")
            triples.append(f"{city_id}\tcapital_of\t{state_ids[state]}")
        else:
            city_id = add(city, f"city in {states[state]}")
        triples.append(f"{city_id}\tlocated_in\t{state_ids[state]}")

    artist_ids = [add(artist, rng.choice(_ARTIST_KINDS)) for artist in artists]
    for song in songs:
        performer = rng.randrange(n_artists)
        song_id = add(song, f"song recorded by {artists[performer]}")
        triples.append(f"{song_id}\tperformer\t{artist_ids[performer]}")
        if rng.random() < 0.1:
            featured = rng.randrange(n_artists)
            if featured != performer:
                triples.append(f"{song_id}\tperformer\t{artist_ids[featured]}")

    director_ids = [add(director, "director of feature films") for director in directors]
    for film in films:
        film_id = add(film, f"{rng.randint(1960, 2023)} {rng.choice(_FILM_GENRES)} film")
        triples.append(f"{film_id}\tdirector\t{director_ids[rng.randrange(n_directors)]}")
        for cast in rng.sample(range(n_artists), min(2, n_artists)):
            if rng.random() < 0.5:
                triples.append(f"{film_id}\tcast_member\t{artist_ids[cast]}")

    logger.info("synthesized %d entities and %d triples (seed %d)", len(entities), len(triples), seed)
    return entities, triples


def write_synthetic_kg(entities_path: Path, triples_path: Path, num_entities: int, seed: int = 0):
    entities, triples = synthesize_kg(num_entities, seed)
    atomic_write_text(entities_path, "\n".join(entities) + "\n")
    atomic_write_text(triples_path, "\n".join(triples) + "\n")


# ============ Subset tags ============

def tag_splits(test_samples: Sequence[RephraseSample], train_samples: Sequence[RephraseSample],
               kg: KnowledgeGraph) -> List[RephraseSample]:
    """Tag friction test samples zero_shot / few_shot / kg_relation by training target counts and triples."""
    counts = Counter(s.target_entity for s in train_samples if not s.is_clean)
    tagged = []
    for sample in test_samples:
        if sample.is_clean:
            tagged.append(replace(sample, tags=(TAG_CLEAN,)))
            continue
        tags = []
        seen = counts.get(sample.target_entity, 0)
        if seen == 0:
            tags.append(TAG_ZERO_SHOT)
        elif seen <= FEW_SHOT_MAX:
            tags.append(TAG_FEW_SHOT)
        context_ids = [eid for surface in sample.context_entities for eid in kg.lookup(surface)]
        if context_ids and kg.connected(kg.lookup(sample.target_entity), context_ids):
            tags.append(TAG_KG_RELATION)
        tagged.append(replace(sample, tags=tuple(tags)))
    return tagged


# ============ Hard negatives ============

@dataclass
class MiningReport:
    samples: int = 0
    padded: int = 0

    def as_dict(self) -> Dict[str, int]:
        return {"samples": self.samples, "padded": self.padded}


def mine_hard_negatives(
    miner: BiEncoder,
    index: EntityIndex,
    samples: Sequence[RephraseSample],
    count: int,
    k: int = 10,
    seed: int = 0,
    batch_size: int = 64,
) -> Tuple[List[List[str]], MiningReport]:
    """
    Top-k retrieved surfaces of a KG-free retriever, minus the positive,
    truncated to `count`. Short lists are padded with random index surfaces.
    """
    rng = random.Random(seed)
    report = MiningReport(samples=len(samples))
    negatives: List[List[str]] = []
    with torch.no_grad():
        for start in tqdm(range(0, len(samples), batch_size), desc="mine-negatives", disable=not progress_enabled()):
            chunk = samples[start:start + batch_size]
            queries = miner.encode_utterances([s.source for s in chunk]).numpy().astype(np.float64)
            for sample, query in zip(chunk, queries):
                found = [c.surface for c in index.search(query, k) if c.surface != sample.target_entity][:count]
                if len(found) < count:
                    report.padded += 1
                    pool = [s for s in index.surfaces if s != sample.target_entity and s not in found]
                    found.extend(rng.sample(pool, min(count - len(found), len(pool))))
                negatives.append(found)
    if report.padded:
        logger.warning("mine-negatives: padded %d of %d negative lists with random surfaces",
                       report.padded, report.samples)
    return negatives, report


def to_l1_samples(samples: Sequence[RephraseSample], negatives: Sequence[Sequence[str]], count: int = 1) -> List[TrainSampleL1]:
    return [TrainSampleL1(s.source, s.target_entity, tuple(n[:count]))
            for s, n in zip(samples, negatives) if not s.is_clean]


def to_l2_samples(samples: Sequence[RephraseSample], negatives: Sequence[Sequence[str]], count: int = 4) -> List[TrainSampleL2]:
    return [TrainSampleL2(s.source, s.target_entity, tuple(n[:count]), s.corrupt_span)
            for s, n in zip(samples, negatives)]


# ============ Sample files ============

def _field(value: Optional[str]) -> str:
    return "" if value is None else value


def write_samples(filepath: Path, samples: Sequence[RephraseSample]):
    """Tab-separated records with a header line; hypotheses in pipe format."""
    lines = ["\t".join(SAMPLE_COLUMNS)]
    for s in samples:
        start, end = s.corrupt_span if s.corrupt_span is not None else (-1, -1)
        lines.append("\t".join([
            s.source, s.target, str(start), str(end), _field(s.corrupt_text), _field(s.target_entity),
            s.hypothesis.serialize(), s.target_hypothesis.serialize(), "|".join(s.context_entities),
            s.template, ",".join(s.tags),
        ]))
    atomic_write_text(filepath, "\n".join(lines) + "\n")


def read_samples(filepath: Path) -> List[RephraseSample]:
    lines = read_lines(filepath)
    if not lines or tuple(lines[0].split("\t")) != SAMPLE_COLUMNS:
        raise ValueError(f"{filepath} does not start with the sample header")
    samples = []
    for line in lines[1:]:
        if not line:
            continue
        cols = line.split("\t")
        start, end = int(cols[2]), int(cols[3])
        samples.append(RephraseSample(
            source=cols[0],
            target=cols[1],
            corrupt_span=None if start < 0 else (start, end),
            corrupt_text=cols[4] or None,
            target_entity=cols[5] or None,
            hypothesis=NluHypothesis.parse(cols[6]),
            target_hypothesis=NluHypothesis.parse(cols[7]),
            context_entities=tuple(c for c in cols[8].split("|") if c),
            template=cols[9],
            tags=tuple(t for t in cols[10].split(",") if t),
        ))
    return samples


def write_negatives(filepath: Path, negatives: Sequence[Sequence[str]]):
    """One line per sample, negatives tab-separated."""
    atomic_write_text(filepath, "".join("\t".join(n) + "\n" for n in negatives))


def read_negatives(filepath: Path) -> List[List[str]]:
    return [[n for n in line.split("\t") if n] for line in read_lines(filepath)]


def vocab_texts(kg: KnowledgeGraph, samples: Sequence[RephraseSample]) -> List[str]:
    """Training text for the vocabulary: utterances, surfaces and descriptions."""
    texts = [s.source for s in samples] + [s.target for s in samples]
    for entity in kg.entities.values():
        texts.append(entity.surface)
        texts.extend(entity.descriptions)
    return texts


def index_surfaces_of(kg: KnowledgeGraph) -> List[str]:
    return [s for s in kg.surfaces() if is_index_surface(s)]
