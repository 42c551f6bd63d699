"""Grid label scheme: entity mentions to an n x n single-label matrix.

Upper triangle (i < j) holds Frag/Gap labels at (head, tail); lower triangle
(i > j) holds entity type labels at (tail, head); the diagonal may hold any
label. A one-word entity writes its type on the diagonal even when the same
token is a fragment, since the decoder treats diagonal entity cells as
fragment candidates too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gapdner.data import FRAG, GAP, NONE, AnnotatedExample, EntityMention, LabelSet

NONE_ID, FRAG_ID, GAP_ID = 0, 1, 2


class EncodingError(ValueError):
    pass


@dataclass
class GridLabelMatrix:
    labels: LabelSet
    cells: np.ndarray  # (n, n) int64 label ids

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int64)
        if self.cells.ndim != 2 or self.cells.shape[0] != self.cells.shape[1] or self.cells.shape[0] < 1:
            raise ValueError(f"grid must be square n x n with n >= 1, got {self.cells.shape}")

    @classmethod
    def empty(cls, n: int, labels: LabelSet) -> "GridLabelMatrix":
        return cls(labels, np.zeros((n, n), dtype=np.int64))

    @property
    def n(self) -> int:
        return self.cells.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GridLabelMatrix):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.cells, other.cells)

    def triangle_violations(self) -> list[tuple[int, int, str]]:
        bad = []
        n_labels = len(self.labels)
        for i, j in zip(*np.nonzero(self.cells)):
            lab = int(self.cells[i, j])
            if lab < 0 or lab >= n_labels:
                bad.append((int(i), int(j), f"label id {lab} outside label set"))
            elif i < j and lab > GAP_ID:
                bad.append((int(i), int(j), self.labels.name_of(lab)))
            elif i > j and lab in (FRAG_ID, GAP_ID):
                bad.append((int(i), int(j), self.labels.name_of(lab)))
        return bad

    def check(self) -> None:
        bad = self.triangle_violations()
        if bad:
            i, j, name = bad[0]
            raise ValueError(f"grid violates triangle discipline at ({i},{j}): {name}")

    def nonzero(self) -> list[tuple[int, int, str]]:
        return [(int(i), int(j), self.labels.name_of(int(self.cells[i, j]))) for i, j in zip(*np.nonzero(self.cells))]


@dataclass(frozen=True)
class SpanInventory:
    fragments: frozenset[tuple[int, int]]
    gaps: frozenset[tuple[int, int]]
    anchors: frozenset[tuple[int, int, str]]


@dataclass(frozen=True)
class CellConflict:
    i: int
    j: int
    competing: tuple[str, ...]
    winner: str
    lossless: bool  # the decoder can still recover every competing span


@dataclass
class ConflictReport:
    cells: list[CellConflict] = field(default_factory=list)
    # mentions the grid decodes to that were never annotated (fragment/gap splicing)
    spurious: frozenset[EntityMention] = frozenset()

    @property
    def lossless(self) -> bool:
        return all(c.lossless for c in self.cells) and not self.spurious

    def __bool__(self) -> bool:
        return bool(self.cells) or bool(self.spurious)


def spans_of(entity: EntityMention):
    """Return (fragments, gaps, anchor) for one mention; anchor is (tail, head, type)."""
    frags = list(entity.fragments)
    gaps = [(frags[k][1] + 1, frags[k + 1][0] - 1) for k in range(len(frags) - 1)]
    return frags, gaps, (entity.tail, entity.head, entity.entity_type)


def span_inventory(entities) -> SpanInventory:
    fr, gp, an = set(), set(), set()
    for ent in entities:
        f, g, a = spans_of(ent)
        fr.update(f)
        gp.update(g)
        an.add(a)
    return SpanInventory(frozenset(fr), frozenset(gp), frozenset(an))


def encode_grid(example: AnnotatedExample, labels: LabelSet):
    """Encode gold mentions into a GridLabelMatrix.

    Cell priority is entity type > Frag > Gap. Two different entity types
    competing for one cell cannot be represented and raise EncodingError.
    Returns (grid, ConflictReport).
    """
    n = example.n
    claims: dict[tuple[int, int], set[str]] = {}
    one_word: set[int] = set()
    for ent in sorted(example.entities):
        if ent.entity_type not in labels.entity_types:
            raise EncodingError(f"entity type {ent.entity_type!r} not in label set {labels.entity_types}")
        frags, gaps, (tail, head, etype) = spans_of(ent)
        for h, t in frags:
            claims.setdefault((h, t), set()).add(FRAG)
        for h, t in gaps:
            claims.setdefault((h, t), set()).add(GAP)
        claims.setdefault((tail, head), set()).add(etype)
        if head == tail:
            one_word.add(head)

    grid = GridLabelMatrix.empty(n, labels)
    report = ConflictReport()
    for (i, j), names in sorted(claims.items()):
        types = sorted(names - {FRAG, GAP})
        if len(types) > 1:
            raise EncodingError(
                f"example {example.id!r}: cell ({i},{j}) claimed by entity types {types}; "
                "a single-label grid cannot hold both"
            )
        winner = types[0] if types else (FRAG if FRAG in names else GAP)
        grid.cells[i, j] = labels.id_of(winner)
        if len(names) > 1:
            # a one-word entity's own Frag is part of the placement rule, not a conflict
            own_frag = i == j and i in one_word and names == {winner, FRAG}
            if own_frag and not _frag_shared(example, i):
                continue
            lost_gap = GAP in names and winner != GAP
            report.cells.append(CellConflict(i, j, tuple(sorted(names)), winner, lossless=not lost_gap))

    report.spurious = frozenset(_splice_mentions(grid) - set(example.entities))
    return grid, report


def _frag_shared(example: AnnotatedExample, i: int) -> bool:
    return any(len(e.fragments) > 1 and (i, i) in e.fragments for e in example.entities)


def _splice_mentions(grid: GridLabelMatrix) -> set[EntityMention]:
    """Every mention recoverable from the grid's spans, by recursion over span lists.

    Kept separate from the decoder so encode-time diagnostics do not depend on it.
    """
    labels = grid.labels
    frags, gaps, anchors = {}, {}, []
    n = grid.n
    for i in range(n):
        for j in range(n):
            lab = int(grid.cells[i, j])
            if lab == FRAG_ID and i <= j:
                frags.setdefault(i, []).append(j)
            elif lab == GAP_ID and i <= j:
                gaps.setdefault(i, []).append(j)
            elif labels.is_entity(lab) and i >= j:
                anchors.append((i, j, labels.name_of(lab)))
                if i == j:
                    frags.setdefault(i, []).append(i)

    found = set()

    def extend(start, tail, chain, etype):
        for end in frags.get(start, ()):
            here = chain + [(start, end)]
            if end == tail:
                found.add(EntityMention(etype, tuple(here)))
            elif end < tail:
                for gend in gaps.get(end + 1, ()):
                    if gend < tail:
                        extend(gend + 1, tail, here, etype)

    for tail, head, etype in anchors:
        extend(head, tail, [], etype)
    return found


def grid_to_tsv(grid: GridLabelMatrix) -> str:
    return "".join(f"{i}\t{j}\t{name}\n" for i, j, name in sorted(grid.nonzero()))


def grid_from_tsv(text: str, n: int, labels: LabelSet | None = None) -> GridLabelMatrix:
    """Parse the `i<TAB>j<TAB>label` dump; entity types are inferred when no label set is given."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"line {lineno}: cell indices must be integers") from None
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"line {lineno}: cell ({i},{j}) outside {n}x{n} grid")
        rows.append((i, j, parts[2]))
    if labels is None:
        labels = LabelSet(tuple(sorted({name for _, _, name in rows} - {NONE, FRAG, GAP})))
    grid = GridLabelMatrix.empty(n, labels)
    for i, j, name in rows:
        grid.cells[i, j] = labels.id_of(name)
    grid.check()
    return grid
