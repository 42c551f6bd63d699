"""Command line entry point: encode, decode, train, eval, analyze.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from gapdner.data import AnnotatedExample, DataError, Sentence, derive_label_set, parse_corpus, write_corpus
from gapdner.decoder import PathLimitError, decode_entities
from gapdner.evaluate import (
    SliceSpec,
    attention_dump,
    dump_to_tsv,
    evaluate_all,
    format_table,
    predict_corpus,
    standard_slices,
)
from gapdner.scheme import EncodingError, encode_grid, grid_from_tsv, grid_to_tsv
from gapdner.trainer import NonFiniteLossError, epoch_record_line, split_config, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _safe_name(ex_id: str, k: int) -> str:
    stem = re.sub(r"[^A-Za-z0-9._-]", "_", ex_id) or "example"
    return f"{k:05d}_{stem}.tsv"


def cmd_encode(args) -> int:
    corpus = parse_corpus(args.input)
    labels = derive_label_set(corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    n_conflicts = 0
    for k, ex in enumerate(corpus):
        grid, report = encode_grid(ex, labels)
        name = _safe_name(ex.id, k)
        (out / name).write_text(grid_to_tsv(grid), encoding="utf-8")
        n_conflicts += bool(report)
        index.append({
            "id": ex.id,
            "file": name,
            "n": ex.n,
            "tokens": list(ex.sentence.tokens),
            "lossless": report.lossless,
            "conflicts": [
                {"cell": [c.i, c.j], "competing": list(c.competing), "winner": c.winner, "lossless": c.lossless}
                for c in report.cells
            ],
            "spurious": [m.to_json() for m in sorted(report.spurious)],
        })
    (out / "index.jsonl").write_text("".join(json.dumps(r) + "\n" for r in index), encoding="utf-8")
    (out / "labels.txt").write_text("".join(l + "\n" for l in labels.labels), encoding="utf-8")
    print(f"encoded {len(corpus)} examples into {out} ({n_conflicts} with conflicts)", file=sys.stderr)
    return EXIT_OK


def _decode_record(text: str, n: int, ex_id: str, tokens=None) -> dict:
    mentions = decode_entities(grid_from_tsv(text, n))
    tokens = list(tokens) if tokens is not None else [f"<{k}>" for k in range(n)]
    return AnnotatedExample(Sentence(tuple(tokens), ex_id), mentions).to_json()


def cmd_decode(args) -> int:
    grid_path = Path(args.grid)
    if grid_path.is_dir():
        records = []
        for line in (grid_path / "index.jsonl").read_text(encoding="utf-8").splitlines():
            if line.strip():
                meta = json.loads(line)
                text = (grid_path / meta["file"]).read_text(encoding="utf-8")
                records.append(_decode_record(text, meta["n"], meta["id"], meta.get("tokens")))
    else:
        if args.n is None:
            raise UsageError("decode: --n is required when --grid is a single file")
        records = [_decode_record(grid_path.read_text(encoding="utf-8"), args.n, grid_path.stem)]
    payload = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    return EXIT_OK


def _load_vectors(args):
    if getattr(args, "vectors", None):
        from gapdner.model import load_token_vectors

        return load_token_vectors(args.vectors)
    return None


def cmd_train(args) -> int:
    raw = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    if not isinstance(raw, dict):
        raise DataError("config file must hold a JSON object")
    if args.seed is not None:
        raw["seed"] = args.seed
    vectors = _load_vectors(args)
    if vectors is not None:
        raw.setdefault("input_mode", "vectors")
        raw.setdefault("embed_dim", next(iter(vectors.values())).shape[1])
    model_cfg, train_cfg = split_config(raw)
    corpus = parse_corpus(args.corpus)
    dev = parse_corpus(args.dev) if args.dev else None
    metrics = open(args.metrics, "w", encoding="utf-8") if args.metrics else None

    def emit(record):
        line = epoch_record_line(record)
        print(line, flush=True)
        if metrics:
            metrics.write(line + "\n")
            metrics.flush()

    try:
        report = train(corpus, dev, model_cfg, train_cfg, checkpoint=args.checkpoint, vectors=vectors, on_epoch=emit)
    finally:
        if metrics:
            metrics.close()
    print(json.dumps({"best_epoch": report.best_epoch, "best_f1": report.best_f1, "checkpoint": report.checkpoint}))
    return EXIT_OK


def _specs(args):
    return [SliceSpec.parse(s) for s in args.slice] if args.slice else None


def _emit_results(results, out=None):
    out = out or sys.stdout
    print(format_table(results), file=out)
    for name, r in results.items():
        print(json.dumps({"slice": name, **r.as_record()}), file=out)


def cmd_eval(args) -> int:
    gold = parse_corpus(args.gold)
    pred_corpus = parse_corpus(args.pred)
    pred = {ex.id: ex.entities for ex in pred_corpus}
    specs = _specs(args) or [SliceSpec("all")]
    if set(pred) != {ex.id for ex in gold}:
        raise DataError("prediction ids do not match gold ids")
    _emit_results(evaluate_all(gold, pred, specs))
    return EXIT_OK


def _parse_cells(text: str):
    cells = []
    for part in text.split(";"):
        if part.strip():
            i, j = part.split(",")
            cells.append((int(i), int(j)))
    return cells


def _default_cells(ex: AnnotatedExample):
    """Every gold fragment and gap cell of the discontinuous mentions."""
    from gapdner.scheme import spans_of

    cells = set()
    for m in ex.entities:
        if m.is_discontinuous:
            frags, gaps, _ = spans_of(m)
            cells.update(frags)
            cells.update(gaps)
    return sorted(cells)


def cmd_analyze(args) -> int:
    gold = parse_corpus(args.gold)
    if bool(args.pred) == bool(args.checkpoint):
        raise UsageError("analyze: give exactly one of --pred or --checkpoint")
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    model = None
    if args.pred:
        pred = {ex.id: ex.entities for ex in parse_corpus(args.pred)}
    else:
        from gapdner.model import GapDNER

        model = GapDNER.load(args.checkpoint)
        vectors = _load_vectors(args)
        pred, _ = predict_corpus(model, gold, vectors)
        if out:
            write_corpus([AnnotatedExample(ex.sentence, pred[ex.id]) for ex in gold], out / "predictions.jsonl")
    specs = _specs(args) or standard_slices(gold)
    results = evaluate_all(gold, pred, specs)
    _emit_results(results)
    if out:
        (out / "slices.jsonl").write_text(
            "".join(json.dumps({"slice": k, **r.as_record()}) + "\n" for k, r in results.items()), encoding="utf-8"
        )
    if model is not None and out:
        with open(out / "attention.tsv", "w", encoding="utf-8") as fh:
            fh.write(dump_to_tsv([]))
            for ex in gold:
                cells = _parse_cells(args.cells) if args.cells else _default_cells(ex)
                if cells:
                    fh.write(dump_to_tsv(attention_dump(model, ex, cells, vectors), example_id=ex.id, header=False))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gapdner", description="Discontinuous entity extraction over a token-pair label grid")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("encode", help="write one grid label TSV per corpus example")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode grid TSV dumps into JSONL entities")
    p.add_argument("--grid", required=True, help="a grid TSV file, or a directory written by `encode`")
    p.add_argument("--n", type=int, help="sentence length (single-file mode)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("train", help="train a model and write the best checkpoint")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dev")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--vectors", help="JSONL of precomputed per-token vectors keyed by example id")
    p.add_argument("--metrics", help="also write per-epoch metric records to this file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="exact-match span P/R/F1 of predictions against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--slice", action="append", help="all | discontinuous | overlapped | gap:K (repeatable)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="slice metrics, predictions and attention dumps")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred")
    p.add_argument("--checkpoint")
    p.add_argument("--vectors")
    p.add_argument("--slice", action="append")
    p.add_argument("--cells", help="cells to dump as 'i,j;i,j'; default: gold fragment and gap cells")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        return args.func(args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLossError, FloatingPointError, PathLimitError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, EncodingError, KeyError, IndexError, ValueError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
