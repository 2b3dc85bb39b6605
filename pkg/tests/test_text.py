import json
import re
from collections import Counter
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from mgcr.data import Building, GenConfig, SceneTruth, generate_scene_pair
from mgcr.text import (BOS, EOS, NO_CONTENT, PAD, UNK, KeywordRules, Vocabulary, build_vocabulary,
                       prune_caption, read_caption_corpus, split_sentences, synthesize_caption,
                       tokenize, words, write_caption_corpus)

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_captions():
    return [r.raw_text for r in read_caption_corpus(FIXTURES / "captions_raw.jsonl")]


def golden_pruned():
    return (FIXTURES / "captions_pruned_golden.txt").read_text(encoding="utf-8").splitlines()


def box(cx, cy, s=8):
    return Building(cx - s // 2, cy - s // 2, s, s, 0.8)


# ---------------------------------------------------------------- synthesis


def test_caption_three_buildings_top_left():
    truth = SceneTruth([box(8, 8), box(20, 8), box(8, 20)], 0, 64)
    assert synthesize_caption(truth) == ("There are 3 buildings, sparsely clustered in the top-left "
                                         "region of the image. The background contains roads and trees.")


def test_caption_no_buildings():
    assert synthesize_caption(SceneTruth([], 0, 64)) == "There are no buildings in the image."


def test_caption_twelve_buildings_everywhere():
    centres = [(x, y) for x in (8, 20, 44) for y in (8, 44)] + [(56, y) for y in (8, 20, 44, 56)] + [(20, 56), (8, 56)]
    text = synthesize_caption(SceneTruth([box(x, y) for x, y in centres], 0, 64))
    assert text.startswith("There are 12 buildings, densely evenly distributed in the whole extent")


def test_caption_scattered_over_two_quadrants():
    text = synthesize_caption(SceneTruth([box(8, 8), box(56, 56), box(48, 48)], 0, 64))
    assert "scattered in the bottom-right region" in text


@pytest.mark.parametrize("seed", range(200))
def test_generated_captions_keep_building_sentence(seed):
    pair = generate_scene_pair(seed, GenConfig())
    for rec in (pair.caption_1, pair.caption_2):
        first = split_sentences(rec.raw_text)[0]
        assert prune_caption(rec.raw_text).startswith(first)


# ------------------------------------------------------------------ pruning


def test_prune_examples():
    assert prune_caption("There are 4 buildings. The sky is clear.") == "There are 4 buildings."
    assert prune_caption("Clouds drift by. Nice day.") == NO_CONTENT
    assert prune_caption("A road runs east. Grass. Buildings line it.") == "A road runs east. Buildings line it."


def test_prune_fixture_goldens():
    assert [prune_caption(r) for r in fixture_captions()] == golden_pruned()


def test_prune_is_idempotent_on_fixtures():
    for raw in fixture_captions():
        once = prune_caption(raw)
        assert prune_caption(once) == once


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["There are 2 buildings.", "Sky is blue.", "A road!", "Trees?",
                                 "Rows of houses.", "Nothing"]), max_size=6))
def test_prune_keeps_order_and_is_idempotent(sentences):
    raw = " ".join(sentences)
    out = prune_caption(raw)
    assert prune_caption(out) == out
    if out != NO_CONTENT:
        kept = split_sentences(out)
        it = iter(split_sentences(raw))
        assert all(any(k == s for s in it) for k in kept)


def test_keyword_rules_validation():
    with pytest.raises(ValueError):
        KeywordRules(())
    with pytest.raises(re.error):
        KeywordRules(("(unclosed",))
    assert KeywordRules(("lake",)).matches("A LAKE.")


# --------------------------------------------------------------- vocabulary


def test_vocabulary_examples():
    assert len(build_vocabulary([])) == 4
    v = build_vocabulary(["a a b"])
    assert v.stoi["a"] == 4 and v.stoi["b"] == 5


def test_vocabulary_matches_counting_script():
    corpus = golden_pruned()
    counts = {}
    for text in corpus:
        for w in re.split(r"[^a-z0-9]+", text.lower()):
            if w:
                counts[w] = counts.get(w, 0) + 1
    ordered = sorted(counts, key=lambda w: (-counts[w], w))
    expect = {w: 4 + i for i, w in enumerate(ordered)}
    v = build_vocabulary(corpus)
    assert {w: i for w, i in v.stoi.items() if i >= 4} == expect
    assert v.itos[:4] == ["<pad>", "<unk>", "<bos>", "<eos>"]


def test_vocabulary_min_freq_and_determinism(tmp_path):
    corpus = golden_pruned()
    v2 = build_vocabulary(corpus, min_freq=2)
    freq = Counter(w for t in corpus for w in words(t))
    assert all(freq[w] >= 2 for w in v2.itos[4:])
    assert "warehouse" not in v2.stoi
    assert build_vocabulary(corpus) == build_vocabulary(list(corpus))
    path = tmp_path / "vocab.txt"
    v2.save(path)
    assert Vocabulary.load(path) == v2
    assert path.read_text().splitlines()[5] == v2.itos[5]


# --------------------------------------------------------------- tokenize


def test_tokenize_layout():
    v = build_vocabulary(["red roof"])
    assert tokenize("red roof", v, 6) == [BOS, v.stoi["red"], v.stoi["roof"], EOS, PAD, PAD]
    assert tokenize("red barn", v, 6)[2] == UNK


def test_tokenize_truncates_to_eos():
    v = build_vocabulary(["w"])
    ids = tokenize(" ".join(["w"] * 20), v, 8)
    assert len(ids) == 8 and ids[-1] == EOS and ids[0] == BOS


@settings(max_examples=150, deadline=None)
@given(st.text(alphabet="abc ,.", max_size=80), st.integers(2, 20))
def test_tokenize_shape_properties(text, length):
    v = build_vocabulary(["a b c ab"])
    ids = tokenize(text, v, length)
    assert len(ids) == length
    assert ids.index(EOS) <= length - 1
    first_pad = ids.index(PAD) if PAD in ids else length
    assert all(i == PAD for i in ids[first_pad:])


# -------------------------------------------------------------- corpus I/O


def test_corpus_round_trip_keeps_metadata(tmp_path):
    recs = read_caption_corpus(FIXTURES / "captions_raw.jsonl")
    assert recs[0].metadata == {"temperature": 0.1, "top_p": 0.3}
    path = tmp_path / "c.jsonl"
    write_caption_corpus(path, recs)
    again = read_caption_corpus(path)
    assert [(r.image_id, r.temporal_index, r.raw_text, r.pruned_text, r.metadata) for r in again] == \
           [(r.image_id, r.temporal_index, r.raw_text, r.pruned_text, r.metadata) for r in recs]


def test_corpus_rejects_bad_temporal_index(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"image_id": "x", "temporal_index": 3, "raw_text": "a"}) + "\n")
    with pytest.raises(ValueError, match="temporal_index"):
        read_caption_corpus(path)
