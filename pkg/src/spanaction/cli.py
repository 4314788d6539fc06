"""Command-line pipeline: synth, encode, decode, train, predict, evaluate, analyze, gradcheck.

Settings come from an optional JSON ``--config`` file; explicit flags win.
Every command writes a ``.run.json`` record of its resolved settings next to
its output. Failures print one JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch

from . import codec, corpus, metrics, scorer
from .decoding import greedy_decode
from .schema import TaskSchema, load_schema
from .structures import TaskKind

logger = logging.getLogger("spanaction")

THREADS_ENV = "SPANACTION_THREADS"
COMMANDS = ("synth", "encode", "decode", "train", "predict", "evaluate", "analyze", "gradcheck")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = ""
    task: Optional[str] = None
    schema: Optional[str] = None
    train: Optional[str] = None
    dev: Optional[str] = None
    test: Optional[str] = None
    input: Optional[str] = None
    pred: Optional[str] = None
    sequences: Optional[str] = None
    checkpoint: Optional[str] = None
    out: Optional[str] = None
    seed: int = 0
    prune_sentences: Optional[bool] = None
    max_steps: Optional[int] = None
    profile: str = "small"
    epochs: Optional[int] = None
    lr: Optional[float] = None
    batch_size: Optional[int] = None
    n_docs: int = 100
    trace: bool = False
    scorer: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spanaction", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with RunConfig fields")
        p.add_argument("--task", choices=[k.value for k in TaskKind])
        p.add_argument("--schema", help="schema JSON (defaults to the built-in schema for --task)")
        p.add_argument("--train")
        p.add_argument("--dev")
        p.add_argument("--test")
        p.add_argument("--input", help="document corpus (JSON lines)")
        p.add_argument("--pred", help="predicted corpus (JSON lines)")
        p.add_argument("--sequences", help="action sequences (JSON lines)")
        p.add_argument("--checkpoint")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("--prune-sentences", dest="prune_sentences", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--max-steps", dest="max_steps", type=int)
        p.add_argument("--profile", choices=["small", "large"])
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--n-docs", dest="n_docs", type=int)
        p.add_argument("--trace", action="store_true", default=None, help="include per-step probabilities")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as f:
                values.update(json.load(f))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    for key, value in vars(args).items():
        if key != "config" and value is not None:
            values[key] = value
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**values)
    for key in ("schema", "train", "dev", "test", "input", "pred", "sequences", "checkpoint"):
        path = getattr(cfg, key)
        if path is not None and not Path(path).exists():
            raise UsageError(f"--{key} {path} does not exist")
    if cfg.task is None and cfg.schema is None and cfg.checkpoint is None:
        raise UsageError("need --task, --schema or --checkpoint")
    return cfg


def _schema(cfg: RunConfig) -> TaskSchema:
    if cfg.schema:
        schema = load_schema(cfg.schema)
        if cfg.task and schema.kind is not TaskKind(cfg.task):
            raise UsageError(f"schema kind {schema.kind.value} conflicts with --task {cfg.task}")
        return schema
    if cfg.task:
        return corpus.default_schema(cfg.task)
    return scorer.load_checkpoint(cfg.checkpoint).schema


def _require(cfg: RunConfig, *keys: str) -> None:
    for key in keys:
        if getattr(cfg, key) is None:
            raise UsageError(f"{cfg.command} needs --{key.replace('_', '-')}")


def _write_run_record(cfg: RunConfig, path: Path) -> None:
    path.write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sidecar(out: str) -> Path:
    return Path(str(out) + ".run.json")


def _write_lines(path, records) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _scorer_config(cfg: RunConfig) -> scorer.ScorerConfig:
    overrides = dict(cfg.scorer)
    overrides["seed"] = cfg.seed
    for key in ("epochs", "lr", "batch_size"):
        if getattr(cfg, key) is not None:
            overrides[key] = getattr(cfg, key)
    return scorer.ScorerConfig.profile(cfg.profile, **overrides)


# -- commands ------------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> dict:
    _require(cfg, "out")
    schema = _schema(cfg)
    docs = corpus.generate_synthetic(corpus.SyntheticSpec(seed=cfg.seed, n_docs=cfg.n_docs), schema)
    corpus.write_jsonl(cfg.out, docs)
    _write_run_record(cfg, _sidecar(cfg.out))
    return {"n_docs": len(docs)}


def cmd_encode(cfg: RunConfig) -> dict:
    _require(cfg, "input", "out")
    schema = _schema(cfg)
    docs = corpus.read_jsonl(cfg.input, schema)
    seqs = [codec.linearize(ad.structure, ad.doc, schema) for ad in docs]
    _write_lines(cfg.out, (s.to_json() for s in seqs))
    _write_run_record(cfg, _sidecar(cfg.out))
    return {"n_docs": len(seqs), "warnings": sum(len(s.warnings) for s in seqs)}


def cmd_decode(cfg: RunConfig) -> dict:
    _require(cfg, "input", "sequences", "out")
    schema = _schema(cfg)
    docs = {ad.doc_id: ad for ad in corpus.read_jsonl(cfg.input, schema)}
    out = []
    with open(cfg.sequences, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            seq = codec.ActionSequence.from_json(json.loads(line))
            if seq.doc_id not in docs:
                raise corpus.CorpusError(f"{cfg.sequences}:{lineno}: unknown document {seq.doc_id!r}")
            ad = docs[seq.doc_id]
            structure = codec.delinearize(seq, ad.doc, schema)
            out.append(corpus.AnnotatedDocument(ad.doc, structure, ad.provenance))
    corpus.write_jsonl(cfg.out, out)
    _write_run_record(cfg, _sidecar(cfg.out))
    return {"n_docs": len(out)}


def cmd_train(cfg: RunConfig) -> dict:
    _require(cfg, "train", "out")
    schema = _schema(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    train_docs = corpus.read_jsonl(cfg.train, schema)
    pairs = [(ad.doc, codec.linearize(ad.structure, ad.doc, schema)) for ad in train_docs]
    config = _scorer_config(cfg)
    model = scorer.ScorerModel(config, scorer.Alphabet.build(d for d, _ in pairs), schema)
    _, trace = scorer.fit(model, pairs, config, prune_sentences=cfg.prune_sentences)
    scorer.save_checkpoint(model, out / "model.pt")
    with open(out / "loss_trace.csv", "w", encoding="utf-8", newline="") as f:
        f.write("epoch,loss\n")
        for epoch, loss in enumerate(trace, 1):
            f.write(f"{epoch},{loss!r}\n")
    result = {"epochs": len(trace), "final_loss": trace[-1] if trace else None, "seed": cfg.seed}
    if cfg.dev:
        dev = corpus.read_jsonl(cfg.dev, schema)
        preds = _predict(model, dev, cfg)
        report = metrics.corpus_report(((ad.structure, p.structure) for ad, (p, _) in zip(dev, preds)), schema)
        (out / "dev_metrics.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        result["dev"] = report
    _write_run_record(cfg, out / "run_config.json")
    return result


def _predict(model, docs, cfg: RunConfig):
    out = []
    for ad in docs:
        res = greedy_decode(model, ad.doc, model.schema, cfg.prune_sentences, cfg.max_steps)
        structure = codec.delinearize(res.sequence, ad.doc, model.schema)
        out.append((corpus.AnnotatedDocument(ad.doc, structure, ad.provenance), res))
    return out


def cmd_predict(cfg: RunConfig) -> dict:
    _require(cfg, "checkpoint", "out")
    source = cfg.input or cfg.test
    if source is None:
        raise UsageError("predict needs --input or --test")
    model = scorer.load_checkpoint(cfg.checkpoint, _schema(cfg) if (cfg.task or cfg.schema) else None)
    docs = corpus.read_jsonl(source, model.schema)
    records = []
    n_terminal = 0
    for ad, res in _predict(model, docs, cfg):
        rec = corpus.document_to_json(ad)
        rec["terminal"] = res.terminal
        n_terminal += res.terminal
        if cfg.trace:
            rec["trace"] = list(res.probabilities)
        records.append(rec)
    _write_lines(cfg.out, records)
    _write_run_record(cfg, _sidecar(cfg.out))
    return {"n_docs": len(records), "n_terminal": n_terminal}


def _paired(cfg: RunConfig, schema: TaskSchema):
    gold_path = cfg.test or cfg.input
    if gold_path is None or cfg.pred is None:
        raise UsageError(f"{cfg.command} needs --test (gold) and --pred")
    gold = corpus.read_jsonl(gold_path, schema)
    pred = {ad.doc_id: ad for ad in corpus.read_jsonl(cfg.pred, schema)}
    missing = [ad.doc_id for ad in gold if ad.doc_id not in pred]
    if missing:
        logger.warning("%d gold documents have no prediction; scored as empty", len(missing))
    return [
        (ad, pred[ad.doc_id].structure if ad.doc_id in pred else ad.structure.empty(schema.kind))
        for ad in gold
    ]


def cmd_evaluate(cfg: RunConfig) -> dict:
    schema = _schema(cfg)
    pairs = _paired(cfg, schema)
    report = metrics.corpus_report(((ad.structure, p) for ad, p in pairs), schema)
    report["seed"] = cfg.seed
    table = metrics.format_report(report)
    print(table)
    if cfg.out:
        Path(cfg.out).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        Path(str(cfg.out) + ".txt").write_text(table + "\n", encoding="utf-8")
        _write_run_record(cfg, _sidecar(cfg.out))
    return report


def cmd_analyze(cfg: RunConfig) -> dict:
    schema = _schema(cfg)
    if schema.kind is not TaskKind.COREF:
        raise UsageError("analyze works on coreference corpora")
    total = None
    per_doc = []
    for ad, pred in _paired(cfg, schema):
        a = metrics.mention_analysis(ad.structure.partition, pred.partition.mentions(), ad.doc)
        per_doc.append({"doc_id": ad.doc_id, **a.to_json()})
        total = a if total is None else total + a
    report = {
        "corpus": total.to_json() if total else None,
        "documents": per_doc,
        "reference_operating_point": {"ratio": 0.096, "recall": 0.896},
        "seed": cfg.seed,
    }
    if total:
        print(f"mention ratio {total.ratio:.4f}  gold-mention recall {total.recall:.4f}")
    if cfg.out:
        Path(cfg.out).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        _write_run_record(cfg, _sidecar(cfg.out))
    return report


def cmd_gradcheck(cfg: RunConfig) -> dict:
    schema = _schema(cfg)
    if cfg.input:
        docs = corpus.read_jsonl(cfg.input, schema)
    else:
        spec = corpus.SyntheticSpec(seed=cfg.seed, n_docs=4, sentences_per_doc=(2, 2), sentence_length=(5, 7))
        docs = corpus.generate_synthetic(spec, schema)
    ad = max(docs[:8], key=lambda a: len(a.structure.spans()))
    tiny = dict(embed_dim=8, enc_width=8, enc_layers=1, dec_width=8, ffn_hidden=8)
    tiny.update(cfg.scorer)
    config = scorer.ScorerConfig(seed=cfg.seed, precision="float64", **tiny)
    model = scorer.ScorerModel(config, scorer.Alphabet.build([ad.doc]), schema)
    gold = codec.linearize(ad.structure, ad.doc, schema)
    rep = scorer.gradient_check(model, ad.doc, gold, seed=cfg.seed, prune_sentences=cfg.prune_sentences)
    report = {**rep.to_json(), "n_parameters": model.n_parameters, "doc_id": ad.doc_id, "seed": cfg.seed}
    print(f"max relative error {rep.max_rel_error:.3e} over {rep.n_checked} parameters")
    if cfg.out:
        Path(cfg.out).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        _write_run_record(cfg, _sidecar(cfg.out))
    if not rep.passed:
        raise scorer.ScorerError(f"gradient check failed: {rep.max_rel_error:.3e} >= {rep.tolerance}")
    return report


HANDLERS = {
    "synth": cmd_synth,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
}


def _error(kind: str, exc: BaseException) -> None:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


def run(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if os.environ.get(THREADS_ENV):
        torch.set_num_threads(int(os.environ[THREADS_ENV]))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        HANDLERS[cfg.command](cfg)
    except UsageError as exc:
        _error("usage", exc)
        return 2
    except Exception as exc:  # noqa: BLE001
        _error("runtime", exc)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
