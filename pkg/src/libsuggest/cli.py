"""Command-line entry point: preprocess, train, evaluate, and recommend.

Every command is deterministic given the same files and flags, and no
command leaves partial outputs behind on failure (outputs are staged and
renamed into place).
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import typing
from dataclasses import fields, replace

import numpy as np

from .corpus import (
    DatasetError,
    EncodedExample,
    PreparedDataset,
    PreprocTables,
    ProjectRecord,
    TokenSequence,
    Vocabulary,
    build_vocabularies,
    encode_example,
    filter_projects,
    load_dataset,
    load_lemma_table,
    load_word_list,
    process_description,
    sort_libraries,
)
from .decode import NoSignalError, recommend
from .embeddings import EmbeddingFormatError, load_embeddings
from .metrics import evaluate
from .trainer import (
    CheckpointError,
    TrainConfig,
    TrainingError,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = ["main", "load_config"]

_JSON_KW = dict(sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def load_config(path) -> TrainConfig:
    """Parse a flat `key = value` config file into a TrainConfig.

    Unknown keys and uncastable values are errors; '#' starts a comment.
    """
    types = typing.get_type_hints(TrainConfig)
    valid = {f.name for f in fields(TrainConfig)}
    values: dict[str, object] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key or not value:
                raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
            if key not in valid:
                raise ValueError(f"{path}: line {lineno}: unknown config key {key!r}")
            try:
                values[key] = types[key](value)
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: cannot parse {value!r} as {types[key].__name__}"
                ) from None
    return TrainConfig(**values)


def _dump_jsonl(entries) -> str:
    return "".join(json.dumps(entry, **_JSON_KW) + "\n" for entry in entries)


def _encode_records(records, word_vocab, lib_vocab, max_src, max_tgt):
    """Encode records, dropping the untrainable ones; returns examples and
    (empty-source, empty-target) drop counts."""
    examples, no_source, no_target = [], 0, 0
    for rec in records:
        src, tgt = encode_example(rec, word_vocab, lib_vocab, max_src, max_tgt)
        if src.length == 0:
            no_source += 1
            continue
        if tgt.length <= 1:  # EOS only: no library to learn
            no_target += 1
            continue
        examples.append((rec, src, tgt))
    return examples, no_source, no_target


def _example_row(rec: ProjectRecord, src: TokenSequence, tgt: TokenSequence) -> dict:
    return {
        "name": rec.name,
        "tokens": rec.description.split(),
        "libraries": list(rec.libraries),
        "src_ids": list(src.ids),
        "src_len": src.length,
        "tgt_ids": list(tgt.ids),
        "tgt_len": tgt.length,
    }


def cmd_preprocess(args) -> int:
    records = load_dataset(args.dataset)
    stopwords = load_word_list(args.stopwords) if args.stopwords else frozenset()
    domain_vocab = load_word_list(args.domain_vocab) if args.domain_vocab else None
    lemma_table = load_lemma_table(args.lemma_table) if args.lemma_table else {}
    tables = PreprocTables(stopwords, domain_vocab, lemma_table)
    cfg = load_config(args.config) if args.config else TrainConfig()

    filtered = filter_projects(records, args.min_stars, args.min_libs, args.min_desc_words)
    if not filtered:
        raise DatasetError("empty corpus: no project survived filtering")
    processed = [
        replace(
            rec,
            description=" ".join(
                process_description(rec.name, rec.description, stopwords, domain_vocab, lemma_table)
            ),
        )
        for rec in filtered
    ]

    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(processed))
    n_train = int(len(processed) * args.split_ratio)
    if n_train == 0:
        raise DatasetError("training split is empty; corpus too small for the split ratio")
    train_recs = [processed[i] for i in sorted(order[:n_train])]
    test_recs = [processed[i] for i in sorted(order[n_train:])]

    word_vocab, lib_vocab, lib_freq = build_vocabularies(train_recs, args.min_lib_usage)
    if not lib_vocab.regular_tokens():
        raise DatasetError("empty library vocabulary: lower --min-lib-usage or add data")

    train_sorted = [
        replace(rec, libraries=tuple(sort_libraries(rec.libraries, lib_freq)))
        for rec in train_recs
    ]
    test_known = [
        replace(
            rec,
            libraries=tuple(
                sort_libraries([lib for lib in rec.libraries if lib in lib_freq], lib_freq)
            ),
        )
        for rec in test_recs
    ]

    train_examples, train_no_src, train_no_tgt = _encode_records(
        train_sorted, word_vocab, lib_vocab, cfg.max_src, cfg.max_tgt
    )
    if not train_examples:
        raise DatasetError("empty corpus: every training record dropped during encoding")
    test_examples, test_no_src, test_no_truth = [], 0, 0
    for rec in test_known:
        if not rec.description.split():
            test_no_src += 1
            continue
        if not rec.libraries:
            test_no_truth += 1
            continue
        src, tgt = encode_example(rec, word_vocab, lib_vocab, cfg.max_src, cfg.max_tgt)
        test_examples.append((rec, src, tgt))

    meta = {
        "counts": {
            "loaded": len(records),
            "filtered": len(filtered),
            "train_records": len(train_recs),
            "test_records": len(test_recs),
            "train_examples": len(train_examples),
            "test_cases": len(test_examples),
            "train_dropped_empty_source": train_no_src,
            "train_dropped_empty_target": train_no_tgt,
            "test_dropped_empty_source": test_no_src,
            "test_dropped_unknown_truth": test_no_truth,
        },
        "lib_vocab_size": len(lib_vocab.regular_tokens()),
        "max_src": cfg.max_src,
        "max_tgt": cfg.max_tgt,
        "min_desc_words": args.min_desc_words,
        "min_lib_usage": args.min_lib_usage,
        "min_libs": args.min_libs,
        "min_stars": args.min_stars,
        "seed": args.seed,
        "split_ratio": args.split_ratio,
        "word_vocab_size": len(word_vocab.regular_tokens()),
    }
    files = {
        "meta.json": json.dumps(meta, indent=2, **{k: v for k, v in _JSON_KW.items() if k != "separators"}) + "\n",
        "word_vocab.txt": "".join(tok + "\n" for tok in word_vocab.regular_tokens()),
        "lib_vocab.txt": "".join(tok + "\n" for tok in lib_vocab.regular_tokens()),
        "lib_freq.tsv": "".join(f"{lib}\t{n}\n" for lib, n in sorted(lib_freq.items())),
        "tables.json": json.dumps(
            {
                "stopwords": sorted(stopwords),
                "domain_vocab": None if domain_vocab is None else sorted(domain_vocab),
                "lemma": sorted(lemma_table.items()),
            },
            **_JSON_KW,
        )
        + "\n",
        "train.jsonl": _dump_jsonl(_example_row(r, s, t) for r, s, t in train_examples),
        "test.jsonl": _dump_jsonl(_example_row(r, s, t) for r, s, t in test_examples),
    }
    _write_directory(args.out, files)

    print(f"projects loaded: {len(records)}")
    print(f"projects kept after filtering: {len(filtered)}")
    print(f"train/test split: {len(train_recs)}/{len(test_recs)} (ratio {args.split_ratio})")
    print(f"training examples: {len(train_examples)}")
    print(f"test cases: {len(test_examples)}")
    print(f"word vocabulary: {len(word_vocab.regular_tokens())} tokens")
    print(f"library vocabulary: {len(lib_vocab.regular_tokens())} libraries")
    return 0


def _write_directory(out_dir: str, files: dict[str, str]) -> None:
    """Stage all files in a sibling temp dir, then rename into place."""
    if os.path.exists(out_dir) and os.listdir(out_dir):
        raise ValueError(f"output directory {out_dir!r} exists and is not empty")
    tmp = f"{out_dir.rstrip(os.sep)}.tmp{os.getpid()}"
    os.makedirs(tmp)
    try:
        for name, content in files.items():
            with open(os.path.join(tmp, name), "w", encoding="utf-8") as fh:
                fh.write(content)
        if os.path.exists(out_dir):
            os.rmdir(out_dir)
        os.rename(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _load_prepared(directory: str, cfg: TrainConfig) -> PreparedDataset:
    def path(name):
        return os.path.join(directory, name)

    with open(path("meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    for key in ("max_src", "max_tgt"):
        if meta[key] != getattr(cfg, key):
            raise ValueError(
                f"preprocessed data used {key}={meta[key]}, config says {getattr(cfg, key)}"
            )
    with open(path("word_vocab.txt"), encoding="utf-8") as fh:
        word_vocab = Vocabulary([line.rstrip("\n") for line in fh if line.strip()])
    with open(path("lib_vocab.txt"), encoding="utf-8") as fh:
        lib_vocab = Vocabulary([line.rstrip("\n") for line in fh if line.strip()])
    lib_freq: dict[str, int] = {}
    with open(path("lib_freq.tsv"), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                lib, count = line.rstrip("\n").split("\t")
                lib_freq[lib] = int(count)
    with open(path("tables.json"), encoding="utf-8") as fh:
        raw = json.load(fh)
    tables = PreprocTables(
        stopwords=frozenset(raw["stopwords"]),
        domain_vocab=None if raw["domain_vocab"] is None else frozenset(raw["domain_vocab"]),
        lemma_table=dict(raw["lemma"]),
    )
    examples = []
    with open(path("train.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            examples.append(
                EncodedExample(
                    name=row["name"],
                    source=TokenSequence(tuple(row["src_ids"]), row["src_len"]),
                    target=TokenSequence(tuple(row["tgt_ids"]), row["tgt_len"]),
                )
            )
    return PreparedDataset(examples, word_vocab, lib_vocab, lib_freq, tables)


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    data = _load_prepared(args.preprocessed, cfg)
    table = load_embeddings(args.embeddings)
    ckpt = train(data, cfg, table)
    save_checkpoint(ckpt, args.checkpoint)
    print(f"checkpoint written to {args.checkpoint}")
    return 0


def _load_test_set(path, ckpt):
    """Test cases from a preprocessed test.jsonl (tokens ready) or a raw
    dataset file (processed here with the checkpoint's tables)."""
    cases = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON ({exc.msg})", lineno) from None
            if "tokens" in row:
                cases.append((list(row["tokens"]), list(row["libraries"])))
            else:
                tables = ckpt.tables
                tokens = process_description(
                    row.get("name", ""),
                    row["description"],
                    tables.stopwords,
                    tables.domain_vocab,
                    tables.lemma_table,
                )
                cases.append((tokens, list(row["libraries"])))
    return cases


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    test_set = _load_test_set(args.dataset, ckpt)
    ks = tuple(int(part) for part in str(args.k).split(","))
    report = evaluate(ckpt, test_set, ks=ks, beta=args.beta, beam_width=args.beam_width)
    sys.stdout.write(report.format_machine() if args.machine_readable else report.format_text())
    return 0


def cmd_recommend(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    result = recommend(args.description, ckpt, args.k, args.beam_width)
    for lib, prob in result.items:
        print(f"{lib} {prob!r}")
    if result.truncated:
        print(
            f"note: decoding finished after {len(result.items)} of {result.requested_k} requested",
            file=sys.stderr,
        )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="libsuggest",
        description="Recommend third-party libraries from a requirements description.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="filter, process, split, and encode a dataset")
    p.add_argument("--dataset", required=True, help="JSON-lines project records")
    p.add_argument("--stopwords", help="stopword file, one word per line")
    p.add_argument("--domain-vocab", help="domain vocabulary file; omit to keep all words")
    p.add_argument("--lemma-table", help="lemma file, surface<TAB>base per line")
    p.add_argument("--min-stars", type=int, default=0)
    p.add_argument("--min-libs", type=int, default=0)
    p.add_argument("--min-desc-words", type=int, default=0)
    p.add_argument("--min-lib-usage", type=int, default=2)
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="train config file (supplies max_src/max_tgt)")
    p.add_argument("--out", required=True, help="output directory (must not exist)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on a preprocessed directory")
    p.add_argument("--preprocessed", required=True)
    p.add_argument("--embeddings", required=True, help="textual word-embedding file")
    p.add_argument("--config", help="flat key = value training config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metric report for a checkpoint on a test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, help="test.jsonl or raw records file")
    p.add_argument("--k", default="1,5,10,20", help="comma-separated k values")
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--beam-width", type=int, default=3)
    p.add_argument("--machine-readable", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="top-k libraries for one description")
    p.add_argument("description", help="requirements description text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--beam-width", type=int, default=3)
    p.set_defaults(func=cmd_recommend)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        DatasetError,
        EmbeddingFormatError,
        CheckpointError,
        TrainingError,
        NoSignalError,
        ValueError,
        KeyError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
