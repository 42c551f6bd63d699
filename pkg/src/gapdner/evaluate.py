"""Exact-match span metrics, analysis slices and attention dumps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from gapdner.data import AnnotatedExample, EntityMention
from gapdner.decoder import PathLimitError, decode_entities


@dataclass(frozen=True)
class EvalResult:
    precision: float
    recall: float
    f1: float
    tp: int
    predicted: int
    gold: int

    @classmethod
    def from_counts(cls, tp: int, predicted: int, gold: int) -> "EvalResult":
        p = tp / predicted if predicted else 0.0
        r = tp / gold if gold else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f, tp, predicted, gold)

    def as_record(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "tp": self.tp, "predicted": self.predicted, "gold": self.gold}


def span_f1(pred: Mapping[str, Iterable[EntityMention]], gold: Mapping[str, Iterable[EntityMention]]) -> EvalResult:
    """Micro P/R/F1; a prediction is correct only if type and every fragment match a gold mention."""
    if set(pred) != set(gold):
        missing = sorted(set(gold) - set(pred))[:5]
        extra = sorted(set(pred) - set(gold))[:5]
        raise KeyError(f"prediction and gold ids are not aligned (missing {missing}, unexpected {extra})")
    tp = n_pred = n_gold = 0
    for ex_id in sorted(gold):
        p, g = set(pred[ex_id]), set(gold[ex_id])
        tp += len(p & g)
        n_pred += len(p)
        n_gold += len(g)
    return EvalResult.from_counts(tp, n_pred, n_gold)


@dataclass(frozen=True)
class SliceSpec:
    kind: str  # all | discontinuous | overlapped | gap
    k: int | None = None

    KINDS = ("all", "discontinuous", "overlapped", "gap")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown slice kind {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "gap" and (self.k is None or self.k < 1):
            raise ValueError("gap-length bucket needs k >= 1")

    @classmethod
    def parse(cls, text: str) -> "SliceSpec":
        """`all`, `discontinuous`, `overlapped` or `gap:K`."""
        text = text.strip()
        if text.startswith("gap:"):
            return cls("gap", int(text[4:]))
        return cls(text)

    @property
    def name(self) -> str:
        return f"gap:{self.k}" if self.kind == "gap" else self.kind


def max_gap(mention: EntityMention) -> int:
    return max(mention.gap_lengths(), default=0)


def _has_overlap(entities) -> bool:
    ents = list(entities)
    toks = [e.tokens() for e in ents]
    return any(toks[a] & toks[b] for a in range(len(ents)) for b in range(a + 1, len(ents)))


def _mention_filter(spec: SliceSpec):
    if spec.kind == "gap":
        return lambda m: m.is_discontinuous and max_gap(m) == spec.k
    return lambda m: True


def slice_filter(corpus: Iterable[AnnotatedExample], spec: SliceSpec) -> list[AnnotatedExample]:
    """Sentence slices keep whole examples; gap buckets keep only the matching gold mentions."""
    out = []
    for ex in corpus:
        if spec.kind == "all":
            out.append(ex)
        elif spec.kind == "discontinuous":
            if any(m.is_discontinuous for m in ex.entities):
                out.append(ex)
        elif spec.kind == "overlapped":
            if _has_overlap(ex.entities):
                out.append(ex)
        else:
            keep = [m for m in ex.entities if _mention_filter(spec)(m)]
            if keep:
                out.append(AnnotatedExample(ex.sentence, keep))
    return out


def evaluate_slice(gold_corpus, pred: Mapping[str, Iterable[EntityMention]], spec: SliceSpec) -> EvalResult:
    """Score `pred` on one slice; gap buckets restrict predictions to the same bucket."""
    if spec.kind == "gap":
        ids = [ex.id for ex in gold_corpus]
        want = _mention_filter(spec)
        if set(pred) != set(ids):
            raise KeyError("prediction and gold ids are not aligned")
        gold = {ex.id: {m for m in ex.entities if want(m)} for ex in gold_corpus}
        return span_f1({i: {m for m in pred[i] if want(m)} for i in ids}, gold)
    sub = slice_filter(gold_corpus, spec)
    return span_f1({ex.id: pred[ex.id] for ex in sub}, {ex.id: ex.entities for ex in sub})


def standard_slices(gold_corpus) -> list[SliceSpec]:
    """all, discontinuous, overlapped and one bucket per gap length seen in the gold data."""
    lengths = sorted({max_gap(m) for ex in gold_corpus for m in ex.entities if m.is_discontinuous})
    return [SliceSpec("all"), SliceSpec("discontinuous"), SliceSpec("overlapped")] + [SliceSpec("gap", k) for k in lengths]


def evaluate_all(gold_corpus, pred, specs=None) -> dict[str, EvalResult]:
    specs = standard_slices(gold_corpus) if specs is None else specs
    return {s.name: evaluate_slice(gold_corpus, pred, s) for s in specs}


def format_table(results: Mapping[str, EvalResult]) -> str:
    lines = [f"{'slice':<16}{'P':>8}{'R':>8}{'F1':>8}{'tp':>7}{'pred':>7}{'gold':>7}"]
    for name, r in results.items():
        lines.append(f"{name:<16}{r.precision:>8.4f}{r.recall:>8.4f}{r.f1:>8.4f}{r.tp:>7}{r.predicted:>7}{r.gold:>7}")
    return "\n".join(lines)


def predict_corpus(model, corpus, vectors=None, on_path_limit: str = "raise"):
    """Decode every example; returns (id -> mentions, ids whose decoding hit the path cap).

    With on_path_limit="skip" an over-dense prediction yields no mentions for
    that sentence and its id is reported instead of aborting.
    """
    if on_path_limit not in ("raise", "skip"):
        raise ValueError(on_path_limit)
    preds, failed = {}, []
    for ex in corpus:
        grid = model.predict_grid(ex, vectors=vectors)
        try:
            preds[ex.id] = decode_entities(grid)
        except PathLimitError:
            if on_path_limit == "raise":
                raise
            preds[ex.id] = set()
            failed.append(ex.id)
    return preds, failed


def attention_dump(model, example: AnnotatedExample, cells, vectors=None) -> list[tuple]:
    """Rows (kind, i, j, position, label, weight) for the requested grid cells.

    kind "linear": weight of token `position` inside the span of cell (i, j).
    kind "criss_cross": weight of grid cell `position` = "a,b" in row i or column j.
    """
    n = example.n
    cells = list(cells)
    for i, j in cells:
        if not (0 <= i < n and 0 <= j < n):
            raise IndexError(f"cell ({i},{j}) outside the {n}x{n} grid of example {example.id!r}")
    result = model.forward(example, vectors=vectors)
    lin, cc = result.linear_attention, result.criss_cross
    toks = example.sentence.tokens
    rows = []
    for i, j in cells:
        lo, hi = min(i, j), max(i, j)
        for t in range(lo, hi + 1):
            rows.append(("linear", i, j, str(t), toks[t], float(lin[i, j, t])))
        for b in range(n):
            rows.append(("criss_cross", i, j, f"{i},{b}", f"{toks[i]}..{toks[b]}", float(cc[i, j, b])))
        for a in range(n):
            if a != i:
                rows.append(("criss_cross", i, j, f"{a},{j}", f"{toks[a]}..{toks[j]}", float(cc[i, j, n + a])))
    return rows


def dump_to_tsv(rows, example_id: str = "", header: bool = True) -> str:
    head = "id\tkind\ti\tj\tposition\ttext\tweight\n" if header else ""
    return head + "".join(
        f"{example_id}\t{k}\t{i}\t{j}\t{pos}\t{text}\t{w:.10g}\n" for k, i, j, pos, text, w in rows
    )
