import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from floorplan_net.data import (GenSpec, Palette, Sample, corpus_from_manifest, count_rooms, decode_label_png,
                                default_palette, encode_label_png, generate_synthetic, load_corpus, make_corpus,
                                validate_sample, write_corpus)

PAL = default_palette()


def test_palette_defaults():
    assert PAL.n_classes("boundary") == 4 and PAL.n_classes("room") == 9
    assert PAL.names("boundary")[PAL.background("boundary")] == "background"
    assert PAL.class_id("room", "inside_background") == 8
    assert Palette.from_text(PAL.to_text()).to_text() == PAL.to_text()


def test_all_white_decodes_to_background(tmp_path):
    p = tmp_path / "white.png"
    Image.fromarray(np.full((5, 6, 3), 255, np.uint8)).save(p)
    assert (decode_label_png(p, PAL, "room") == 0).all()
    assert (decode_label_png(p, PAL, "boundary") == 0).all()


@pytest.mark.parametrize("task", ["room", "boundary"])
def test_codec_roundtrip(tmp_path, task):
    rng = np.random.default_rng(1)
    ids = rng.integers(0, PAL.n_classes(task), (7, 9)).astype(np.uint8)
    p = tmp_path / "l.png"
    encode_label_png(ids, PAL, p, task)
    assert np.array_equal(decode_label_png(p, PAL, task), ids)


def test_off_palette_color_named(tmp_path):
    img = np.full((3, 3, 3), 255, np.uint8)
    img[1, 2] = (1, 2, 3)
    p = tmp_path / "bad.png"
    Image.fromarray(img).save(p)
    with pytest.raises(ValueError, match=r"1, ?2, ?3"):
        decode_label_png(p, PAL, "room")


def test_generator_deterministic():
    a = generate_synthetic(GenSpec(seed=5))
    b = generate_synthetic(GenSpec(seed=5))
    assert a.same_as(b)
    assert not a.same_as(generate_synthetic(GenSpec(seed=6)))


@given(st.integers(0, 2**31 - 1), st.booleans())
@settings(max_examples=40, deadline=None)
def test_generated_plans_are_enclosed(seed, irregular):
    spec = GenSpec(seed=seed, irregular=irregular)
    s = generate_synthetic(spec)
    assert validate_sample(s) == []
    assert spec.rooms[0] <= count_rooms(s) <= spec.rooms[1]
    assert s.image.dtype == np.float32 and 0 <= s.image.min() and s.image.max() <= 1


def test_validator_flags_leak():
    s = generate_synthetic(GenSpec(seed=3))
    b = s.boundary_labels.copy()
    b[:] = 0  # remove every wall: rooms now touch the outside
    bad = Sample(s.image, b, s.room_labels)
    assert validate_sample(bad)


@pytest.mark.parametrize("change", [dict(min_room=4), dict(rooms=(5, 2)), dict(door_width=(3, 20)),
                                    dict(window_density=1.5), dict(cue="colour"),
                                    dict(cue="glyph", min_room=10, door_width=(2, 2))])
def test_genspec_rejects(change):
    with pytest.raises(ValueError):
        GenSpec(**change)


def test_corpus_ids_and_manifest_regeneration(tmp_path):
    spec = GenSpec(seed=7)
    c = make_corpus(spec, 4, 2)
    ids = [s.id for s in c.train + c.test]
    assert len(ids) == 6 == len(set(ids))
    assert {s.id for s in c.train}.isdisjoint({s.id for s in c.test})
    again = corpus_from_manifest(c.manifest, spec)
    assert all(a.same_as(b) for a, b in zip(c.train + c.test, again.train + again.test))

    write_corpus(c, tmp_path)
    for sub in ("images", "labels_boundary", "labels_room"):
        assert len(list((tmp_path / sub).glob("*.png"))) == 6
    loaded = load_corpus(tmp_path)
    assert all(a.same_as(b) for a, b in zip(c.train + c.test, loaded.train + loaded.test))
    from_file = corpus_from_manifest(tmp_path / "manifest.csv", spec)
    assert all(a.same_as(b) for a, b in zip(c.train + c.test, from_file.train + from_file.test))


def test_glyphs_distinct():
    from floorplan_net.data import glyph
    shapes = {glyph(k).tobytes() for k in range(7)}
    assert len(shapes) == 7


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_glyph_cue_plans(seed):
    from floorplan_net.data import GLYPH_FILL, GLYPH_INK
    s = generate_synthetic(GenSpec(seed=seed, cue="glyph", noise=0.0))
    assert validate_sample(s) == []
    rooms = (s.boundary_labels == 0) & (s.room_labels != 0)
    # one 5x5 icon per room, everything else in the room at the shared fill
    ink = np.isclose(s.image, round(GLYPH_INK * 255) / 255) & rooms
    fill = np.isclose(s.image, round(GLYPH_FILL * 255) / 255) & rooms
    assert (ink | fill)[rooms].all()
    assert 0 < ink.sum() <= 25 * count_rooms(s)
