"""Synthetic corpora and random structures for tests and desk-scale experiments."""

from __future__ import annotations

import random

import numpy as np

from gapdner.data import AnnotatedExample, DataError, EntityMention, LabelSet, Sentence
from gapdner.scheme import EncodingError, GridLabelMatrix, encode_grid

ADJ = ["severe", "mild", "chronic", "sharp", "constant"]
PART = ["joint", "shoulder", "knee", "ankle", "neck", "hip", "wrist", "back", "elbow"]
SYMPTOM = ["pain", "ache", "stiffness", "swelling", "cramps"]
SINGLE = ["nausea", "fatigue", "dizziness", "insomnia", "headache", "rash"]
LEAD = ["i", "had", "got", "felt", "now", "after", "taking", "the", "drug", "pill", "today", "some"]


def _ex(tokens, spans_list, ex_id, etype="ADE") -> AnnotatedExample:
    return AnnotatedExample(Sentence(tuple(tokens), ex_id), [EntityMention(etype, tuple(s)) for s in spans_list])


def _t_coordinated(r, ex_id):
    # "<lead> severe knee and ankle pain": two discontinuous mentions sharing head and tail
    a, p1, p2, s = r.choice(ADJ), *r.sample(PART, 2), r.choice(SYMPTOM)
    lead = r.sample(LEAD, r.randint(1, 3))
    o = len(lead)
    toks = lead + [a, p1, "and", p2, s]
    return _ex(toks, [[(o, o + 1), (o + 4, o + 4)], [(o, o), (o + 3, o + 4)]], ex_id)


def _t_three_way(r, ex_id):
    # "severe joint , shoulder and upper body pain"
    a, p1, p2, p3, s = r.choice(ADJ), *r.sample(PART, 3), r.choice(SYMPTOM)
    toks = [a, p1, ",", p2, "and", "upper", p3, s]
    return _ex(toks, [[(0, 1), (7, 7)], [(0, 0), (3, 3), (7, 7)], [(0, 0), (5, 7)]], ex_id)


def _t_continuous(r, ex_id):
    # "<lead> mild neck pain since monday"
    lead = r.sample(LEAD, r.randint(2, 4))
    o = len(lead)
    toks = lead + [r.choice(ADJ), r.choice(PART), r.choice(SYMPTOM), "since", "monday"]
    return _ex(toks, [[(o, o + 2)]], ex_id)


def _t_parts_then_symptom(r, ex_id):
    # "knee and hip stiffness today": discontinuous + overlapping continuous
    p1, p2, s = *r.sample(PART, 2), r.choice(SYMPTOM)
    toks = [p1, "and", p2, s] + r.sample(LEAD, r.randint(1, 3))
    return _ex(toks, [[(0, 0), (3, 3)], [(2, 3)]], ex_id)


def _t_symptom_in_parts(r, ex_id):
    # "pain in knee and ankle": continuous + discontinuous sharing the head
    s, p1, p2 = r.choice(SYMPTOM), *r.sample(PART, 2)
    toks = r.sample(LEAD, r.randint(1, 2))
    o = len(toks)
    toks = toks + [s, "in", p1, "and", p2]
    return _ex(toks, [[(o, o + 2)], [(o, o + 1), (o + 4, o + 4)]], ex_id)


def _t_singles(r, ex_id):
    # one-word entities, one of them also heading a discontinuous mention
    w1, w2 = r.sample(SINGLE, 2)
    p, s = r.choice(PART), r.choice(SYMPTOM)
    toks = [w1, "and", w2, "with", p, "and", "then", s]
    return _ex(toks, [[(0, 0)], [(2, 2)], [(4, 4), (7, 7)]], ex_id)


TEMPLATES = [_t_coordinated, _t_three_way, _t_continuous, _t_parts_then_symptom, _t_symptom_in_parts, _t_singles]


def template_corpus(size: int = 50, seed: int = 0) -> list[AnnotatedExample]:
    """Templated sentences mixing continuous, overlapped and discontinuous ADE mentions."""
    r = random.Random(seed)
    out = []
    for k in range(size):
        out.append(TEMPLATES[k % len(TEMPLATES)](r, f"toy-{k:03d}"))
    return out


def filler_tokens(example: AnnotatedExample) -> set[int]:
    covered = set().union(*(m.tokens() for m in example.entities)) if example.entities else set()
    return set(range(example.n)) - covered


# ------------------------------------------------------------------ random structures

def random_mention(r: random.Random, n: int, etype: str, share=None) -> EntityMention | None:
    """A mention with 1-4 fragments and 1-6 token gaps; `share` = (head, tail) pins either boundary."""
    k = r.randint(1, 4)
    frag_lens = [r.randint(1, 3) for _ in range(k)]
    gap_lens = [r.randint(1, 6) for _ in range(k - 1)]
    width = sum(frag_lens) + sum(gap_lens)
    if width > n:
        return None
    head = r.randint(0, n - width)
    if share is not None:
        pin_head, pin_tail = share
        if pin_head is not None:
            head = pin_head
        if pin_tail is not None:
            # stretch or shrink the last fragment so the mention ends at pin_tail
            end_without_last = head + width - frag_lens[-1]
            if pin_tail < end_without_last:
                return None
            frag_lens[-1] = pin_tail - end_without_last + 1
    frags, pos = [], head
    for idx, length in enumerate(frag_lens):
        frags.append((pos, pos + length - 1))
        pos += length
        if idx < len(gap_lens):
            pos += gap_lens[idx]
    if frags[-1][1] >= n:
        return None
    try:
        return EntityMention(etype, tuple(frags))
    except DataError:
        return None


def random_example(r: random.Random, n_max: int = 20, max_mentions: int = 4, types=("ADE",), ex_id="rand") -> AnnotatedExample:
    n = r.randint(1, n_max)
    mentions: list[EntityMention] = []
    for _ in range(r.randint(1, max_mentions)):
        for _attempt in range(8):
            share = None
            if mentions and r.random() < 0.6:
                other = r.choice(mentions)
                mode = r.choice(["head", "tail", "both"])
                share = (other.head if mode != "tail" else None, other.tail if mode != "head" else None)
            m = random_mention(r, n, r.choice(types), share)
            if m is not None and m not in mentions:
                mentions.append(m)
                break
    return AnnotatedExample(Sentence(tuple(f"w{k}" for k in range(n)), ex_id), mentions)


def conflict_free_examples(count: int, seed: int = 0, **kw):
    """Draw random examples until `count` encode losslessly; returns (examples, rejected)."""
    r = random.Random(seed)
    labels = LabelSet(tuple(sorted(kw.get("types", ("ADE",)))))
    kept, rejected = [], 0
    while len(kept) < count:
        ex = random_example(r, ex_id=f"rand-{len(kept) + rejected}", **kw)
        try:
            _, report = encode_grid(ex, labels)
        except EncodingError:
            rejected += 1
            continue
        if report.lossless:
            kept.append(ex)
        else:
            rejected += 1
    return kept, rejected


def random_grid(rng: np.random.Generator, n: int, labels: LabelSet, density: float) -> GridLabelMatrix:
    """Random grid obeying the triangle discipline, with about `density` non-None cells."""
    cells = np.zeros((n, n), dtype=np.int64)
    n_types = len(labels.entity_types)
    for i in range(n):
        for j in range(n):
            if rng.random() >= density:
                continue
            if i < j:
                cells[i, j] = rng.integers(1, 3)
            elif i > j:
                cells[i, j] = 3 + rng.integers(0, n_types) if n_types else 0
            else:
                cells[i, j] = rng.integers(1, 3 + n_types)
    return GridLabelMatrix(labels, cells)
