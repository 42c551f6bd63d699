"""Domain types, JSONL corpus ingestion and serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

NONE, FRAG, GAP = "None", "Frag", "Gap"
SPECIAL_LABELS = (NONE, FRAG, GAP)


class DataError(ValueError):
    """Malformed corpus record or an annotation that violates an invariant."""

    def __init__(self, reason: str, line: int | None = None):
        self.reason = reason
        self.line = line
        super().__init__(reason if line is None else f"line {line}: {reason}")


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise DataError("sentence has no tokens")
        for k, tok in enumerate(self.tokens):
            if not isinstance(tok, str) or not tok:
                raise DataError(f"token {k} is empty or not a string")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True, order=True)
class EntityMention:
    """An entity type plus ordered, disjoint, non-adjacent inclusive token ranges."""

    entity_type: str
    fragments: tuple[tuple[int, int], ...]

    def __post_init__(self):
        frags = tuple((int(s), int(e)) for s, e in self.fragments)
        object.__setattr__(self, "fragments", frags)
        if not isinstance(self.entity_type, str) or not self.entity_type:
            raise DataError("entity type must be a non-empty string")
        if self.entity_type in SPECIAL_LABELS:
            raise DataError(f"entity type {self.entity_type!r} collides with a reserved grid label")
        if not frags:
            raise DataError(f"{self.entity_type} mention has no fragments")
        prev_end = None
        for start, end in frags:
            if start < 0:
                raise DataError(f"{self.entity_type} fragment [{start},{end}] has a negative index")
            if start > end:
                raise DataError(f"{self.entity_type} fragment [{start},{end}]: start > end")
            if prev_end is not None and start < prev_end + 2:
                raise DataError(
                    f"{self.entity_type} fragments {self.fragments} are unordered, overlapping or adjacent"
                )
            prev_end = end

    @property
    def head(self) -> int:
        return self.fragments[0][0]

    @property
    def tail(self) -> int:
        return self.fragments[-1][1]

    @property
    def is_discontinuous(self) -> bool:
        return len(self.fragments) > 1

    def tokens(self) -> set[int]:
        return {t for s, e in self.fragments for t in range(s, e + 1)}

    def gap_lengths(self) -> list[int]:
        return [self.fragments[k + 1][0] - self.fragments[k][1] - 1 for k in range(len(self.fragments) - 1)]

    def to_json(self) -> dict:
        return {"type": self.entity_type, "spans": [list(f) for f in self.fragments]}


@dataclass(frozen=True)
class AnnotatedExample:
    sentence: Sentence
    entities: frozenset[EntityMention] = field(default_factory=frozenset)  # any iterable accepted

    def __post_init__(self):
        ents = list(self.entities)
        seen = set()
        for m in ents:
            if m in seen:
                raise DataError(f"duplicate entity mention {m.entity_type} {[list(f) for f in m.fragments]}")
            seen.add(m)
        n = len(self.sentence)
        for ent in ents:
            if ent.tail >= n:
                raise DataError(f"{ent.entity_type} mention {list(map(list, ent.fragments))} exceeds sentence length {n}")
        object.__setattr__(self, "entities", frozenset(ents))

    @property
    def id(self) -> str:
        return self.sentence.id

    @property
    def n(self) -> int:
        return len(self.sentence)

    def to_json(self) -> dict:
        return {
            "id": self.sentence.id,
            "tokens": list(self.sentence.tokens),
            "entities": [e.to_json() for e in sorted(self.entities)],
        }


@dataclass(frozen=True)
class LabelSet:
    """Grid label vocabulary: None, Frag, Gap followed by the entity types."""

    entity_types: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "entity_types", tuple(self.entity_types))
        if len(set(self.entity_types)) != len(self.entity_types):
            raise DataError("duplicate entity type in label set")
        for t in self.entity_types:
            if t in SPECIAL_LABELS:
                raise DataError(f"entity type {t!r} collides with a reserved grid label")

    @property
    def labels(self) -> tuple[str, ...]:
        return SPECIAL_LABELS + self.entity_types

    def __len__(self) -> int:
        return len(self.entity_types) + 3

    def id_of(self, name: str) -> int:
        try:
            return self.labels.index(name)
        except ValueError:
            raise KeyError(f"unknown label {name!r}") from None

    def name_of(self, label_id: int) -> str:
        return self.labels[label_id]

    def is_entity(self, label_id: int) -> bool:
        return label_id >= 3


def derive_label_set(corpus: Iterable[AnnotatedExample]) -> LabelSet:
    types = {e.entity_type for ex in corpus for e in ex.entities}
    return LabelSet(tuple(sorted(types)))


def _example_from_record(rec, line: int, default_id: str) -> AnnotatedExample:
    if not isinstance(rec, dict):
        raise DataError("record is not a JSON object", line)
    tokens = rec.get("tokens")
    if not isinstance(tokens, list):
        raise DataError("missing or non-list 'tokens'", line)
    ents_raw = rec.get("entities", [])
    if not isinstance(ents_raw, list):
        raise DataError("'entities' must be a list", line)
    ex_id = rec.get("id", default_id)
    if not isinstance(ex_id, str):
        ex_id = str(ex_id)
    try:
        sentence = Sentence(tuple(tokens), ex_id)
        mentions = []
        for k, ent in enumerate(ents_raw):
            if not isinstance(ent, dict) or "type" not in ent or "spans" not in ent:
                raise DataError(f"entity {k} needs 'type' and 'spans'")
            spans = ent["spans"]
            if not isinstance(spans, list) or not all(
                isinstance(s, list) and len(s) == 2 and all(isinstance(v, int) and not isinstance(v, bool) for v in s)
                for s in spans
            ):
                raise DataError(f"entity {k} ({ent['type']}) spans must be [[int,int],...]")
            mentions.append(EntityMention(ent["type"], tuple(tuple(s) for s in spans)))
        return AnnotatedExample(sentence, mentions)
    except DataError as err:
        raise DataError(err.reason, line) from None


def parse_corpus(path, format: str = "jsonl") -> list[AnnotatedExample]:
    """Read a JSONL corpus; records keep file order and are fully validated."""
    if format != "jsonl":
        raise ValueError(f"unsupported corpus format {format!r}")
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as err:
                raise DataError(f"invalid JSON: {err.msg}", lineno) from None
            examples.append(_example_from_record(rec, lineno, default_id=str(len(examples))))
    return examples


def parse_records(records: Iterable[dict]) -> list[AnnotatedExample]:
    return [_example_from_record(rec, k + 1, str(k)) for k, rec in enumerate(records)]


def write_corpus(examples: Iterable[AnnotatedExample], path) -> None:
    Path(path).write_text(
        "".join(json.dumps(ex.to_json(), ensure_ascii=False) + "\n" for ex in examples),
        encoding="utf-8",
    )
