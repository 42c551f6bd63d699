import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapdner.data import AnnotatedExample, EntityMention, LabelSet, Sentence
from gapdner.decoder import decode_entities
from gapdner.scheme import EncodingError, encode_grid, grid_from_tsv, grid_to_tsv, spans_of
from gapdner.synthetic import random_example


def _sent(n):
    return Sentence(tuple(f"t{k}" for k in range(n)), "s")


def test_spans_of_two_fragments():
    frags, gaps, anchor = spans_of(EntityMention("ADE", ((0, 1), (7, 7))))
    assert frags == [(0, 1), (7, 7)]
    assert gaps == [(2, 6)]
    assert anchor == (7, 0, "ADE")


def test_spans_of_three_fragments():
    _, gaps, anchor = spans_of(EntityMention("ADE", ((0, 0), (3, 3), (7, 7))))
    assert gaps == [(1, 2), (4, 6)]
    assert anchor == (7, 0, "ADE")


def test_spans_of_continuous():
    frags, gaps, anchor = spans_of(EntityMention("ADE", ((5, 7),)))
    assert frags == [(5, 7)] and gaps == [] and anchor == (7, 5, "ADE")


def test_pain_grid(pain, ade_labels):
    grid, report = encode_grid(pain, ade_labels)
    placed = {(i, j): name for i, j, name in grid.nonzero()}
    expected = {(0, 0): "Frag", (0, 1): "Frag", (3, 3): "Frag", (5, 7): "Frag", (7, 7): "Frag",
                (1, 2): "Gap", (1, 4): "Gap", (2, 6): "Gap", (4, 6): "Gap", (7, 0): "ADE"}
    assert placed == expected
    assert not report
    assert grid.triangle_violations() == []


def test_single_continuous_entity(ade_labels):
    ex = AnnotatedExample(_sent(6), [EntityMention("ADE", ((2, 4),))])
    grid, _ = encode_grid(ex, ade_labels)
    assert {(i, j): name for i, j, name in grid.nonzero()} == {(2, 4): "Frag", (4, 2): "ADE"}


def test_one_word_entity_beats_fragment(ade_labels):
    ex = AnnotatedExample(_sent(6), [EntityMention("ADE", ((3, 3),)), EntityMention("ADE", ((0, 1), (3, 3)))])
    grid, report = encode_grid(ex, ade_labels)
    assert grid.labels.name_of(grid.cells[3, 3]) == "ADE"
    [conflict] = report.cells
    assert (conflict.i, conflict.j, conflict.winner) == (3, 3, "ADE")
    assert set(conflict.competing) == {"ADE", "Frag"}
    assert conflict.lossless and report.lossless
    assert decode_entities(grid) == set(ex.entities)


def test_lone_one_word_entity_is_not_a_conflict(ade_labels):
    ex = AnnotatedExample(_sent(3), [EntityMention("ADE", ((1, 1),))])
    grid, report = encode_grid(ex, ade_labels)
    assert not report
    assert grid.nonzero() == [(1, 1, "ADE")]


def test_frag_beats_gap_and_is_reported(ade_labels):
    # (2,3) is a fragment of the first mention and the gap of the second
    ex = AnnotatedExample(_sent(6), [EntityMention("ADE", ((2, 3),)), EntityMention("ADE", ((0, 1), (4, 5)))])
    grid, report = encode_grid(ex, ade_labels)
    assert grid.labels.name_of(grid.cells[2, 3]) == "Frag"
    [conflict] = report.cells
    assert conflict.winner == "Frag" and not conflict.lossless
    assert not report.lossless


def test_two_entity_types_on_one_cell_fail():
    labels = LabelSet(("ADE", "Disorder"))
    ex = AnnotatedExample(_sent(4), [EntityMention("ADE", ((0, 2),)), EntityMention("Disorder", ((0, 2),))])
    with pytest.raises(EncodingError, match="ADE"):
        encode_grid(ex, labels)


def test_unknown_type_fails(ade_labels):
    ex = AnnotatedExample(_sent(2), [EntityMention("Drug", ((0, 0),))])
    with pytest.raises(EncodingError):
        encode_grid(ex, ade_labels)


def test_spliced_mention_reported(ade_labels):
    # fragments/gaps of two same-anchor mentions recombine into a third, unannotated one
    a = EntityMention("ADE", ((0, 0), (3, 3), (6, 6)))
    b = EntityMention("ADE", ((0, 1), (3, 4), (6, 6)))
    ex = AnnotatedExample(_sent(7), [a, b])
    _, report = encode_grid(ex, ade_labels)
    assert EntityMention("ADE", ((0, 0), (3, 4), (6, 6))) in report.spurious
    assert not report.lossless


def test_shared_anchor_same_type_merges():
    labels = LabelSet(("ADE",))
    ex = AnnotatedExample(_sent(5), [EntityMention("ADE", ((0, 0), (4, 4))), EntityMention("ADE", ((0, 1), (4, 4)))])
    grid, report = encode_grid(ex, labels)
    assert grid.labels.name_of(grid.cells[4, 0]) == "ADE"
    assert not report.cells
    assert decode_entities(grid) == set(ex.entities)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**9))
def test_triangle_discipline_and_determinism(seed):
    r = random.Random(seed)
    labels = LabelSet(("ADE", "Disorder"))
    ex = random_example(r, types=labels.entity_types)
    try:
        grid, report = encode_grid(ex, labels)
    except EncodingError:
        return
    assert grid.triangle_violations() == []
    again, _ = encode_grid(ex, labels)
    assert again.cells.tobytes() == grid.cells.tobytes()


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10**9))
def test_roundtrip_when_lossless(seed):
    r = random.Random(seed)
    labels = LabelSet(("ADE",))
    ex = random_example(r)
    grid, report = encode_grid(ex, labels)
    if report.lossless:
        assert decode_entities(grid) == set(ex.entities)


def test_tsv_roundtrip(pain, ade_labels):
    grid, _ = encode_grid(pain, ade_labels)
    text = grid_to_tsv(grid)
    lines = text.splitlines()
    assert lines[0] == "0\t0\tFrag" and lines[-1] == "7\t7\tFrag"
    assert lines == sorted(lines, key=lambda l: tuple(map(int, l.split("\t")[:2])))
    back = grid_from_tsv(text, 8)
    assert np.array_equal(back.cells, grid.cells)


def test_tsv_rejects_out_of_range():
    with pytest.raises(ValueError, match="outside"):
        grid_from_tsv("0\t9\tFrag\n", 4)
