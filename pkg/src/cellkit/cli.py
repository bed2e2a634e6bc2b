"""Command-line entry point.

Every command writes into ``--output`` (a directory) through a staging
directory that is moved into place only on success, and stamps the run in
``<command>.manifest.json``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CellkitError, ValidationError

log = logging.getLogger("cellkit")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# -- run plumbing --------------------------------------------------------------


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        # run manifests carry timings, so they stay out of content digests
        for p in sorted(q for q in path.rglob("*") if q.is_file() and not q.name.endswith(".manifest.json")):
            h.update(p.relative_to(path).as_posix().encode())
            h.update(b"\0")
            h.update(_digest(p).encode())
        return h.hexdigest()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Staging area plus manifest bookkeeping for one command."""

    def __init__(self, command: str, args: argparse.Namespace, inputs: dict):
        self.command = command
        self.args = args
        self.inputs = {k: Path(v) for k, v in inputs.items() if v is not None}
        for name, p in self.inputs.items():
            if not p.exists():
                raise FileNotFoundError(f"{name}: no such file or directory: {p}")
        self.output = Path(args.output)
        self.output.parent.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=f".{self.output.name}.staging-", dir=self.output.parent))
        self.start = time.perf_counter()

    def path(self, name: str) -> Path:
        return self.stage / name

    def manifest(self) -> dict:
        flags = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("func",)}
        return {
            "command": self.command,
            "flags": flags,
            "seeds": {"seed": flags.get("seed")} if "seed" in flags else {},
            "inputs": {k: {"path": str(p), "sha256": _digest(p)} for k, p in sorted(self.inputs.items())},
            "version": __version__,
            "duration_s": round(time.perf_counter() - self.start, 3),
        }

    def commit(self) -> None:
        _write_json(self.path(f"{self.command}.manifest.json"), self.manifest())
        self.output.mkdir(parents=True, exist_ok=True)
        for item in sorted(self.stage.iterdir()):
            dest = self.output / item.name
            if dest.is_dir() and not dest.is_symlink():
                shutil.rmtree(dest)
            os.replace(item, dest)
        self.stage.rmdir()

    def abort(self) -> None:
        shutil.rmtree(self.stage, ignore_errors=True)


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, Path):
        return str(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# -- commands ------------------------------------------------------------------


def cmd_ingest(args, run: Run) -> None:
    from .expr import (
        CellAnnotations,
        Dataset,
        ExpressionMatrix,
        align_to_vocabulary,
        apply_ortholog_map,
        build_vocabulary,
        drop_rare_labels,
        load_annotations,
        load_matrix,
        qc_filter,
        save_dataset,
        select_hvg,
        split_dataset,
    )

    m = load_matrix(args.input, args.format)
    split = None
    if args.annotations:
        ann, split = load_annotations(args.annotations)
        if len(ann) != m.n_cells:
            raise ValidationError(f"annotations list {len(ann)} cells, matrix has {m.n_cells}")
    else:
        ids = m.cell_ids or tuple(f"cell_{i}" for i in range(m.n_cells))
        ann = CellAnnotations.uniform(["unknown"] * m.n_cells, args.species, args.tissue, ids)
    ids = ann.cell_ids or m.cell_ids or tuple(f"cell_{i}" for i in range(m.n_cells))
    if len(set(ids)) != len(ids):
        raise ValidationError("cell identifiers are not unique")
    m = ExpressionMatrix(m.csr, m.vocabulary, ids)
    ann = CellAnnotations(ann.labels, ann.species, ann.tissue, ids, ann.extra)

    warn_list = []
    if args.ortholog_map:
        mapping = _read_mapping(Path(args.ortholog_map))
        m, w = apply_ortholog_map(m, mapping)
        warn_list.extend(w)

    m, report = qc_filter(
        m,
        min_genes_per_cell=args.min_genes,
        min_cells_per_gene=args.min_cells,
        mito_prefixes=tuple(p for p in args.mito_prefixes.split(",") if p),
        max_mito_fraction=args.max_mito,
        max_total_counts=args.max_total_counts,
    )
    pos = {c: i for i, c in enumerate(ids)}
    keep = [pos[c] for c in m.cell_ids]
    ann = ann.subset(keep)
    split = None if split is None else tuple(split[i] for i in keep)

    n_top = args.hvg
    if n_top and n_top > m.n_genes:
        msg = f"--hvg {n_top} exceeds the {m.n_genes} genes left after QC; keeping all"
        warnings.warn(msg, stacklevel=1)
        warn_list.append(msg)
        n_top = m.n_genes
    if n_top:
        hvg = select_hvg(m, n_top)
        vocab = build_vocabulary([[m.vocabulary[j] for j in hvg]])
        m = align_to_vocabulary(m, vocab)

    d = Dataset(m, ann, split)
    if args.min_label_cells:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            d = drop_rare_labels(d, args.min_label_cells)
        warn_list.extend(str(w.message) for w in caught)
    if args.split:
        d = split_dataset(d, tuple(args.split), args.seed)
    save_dataset(d, run.stage)
    out = report.to_dict()
    out["warnings"] = warn_list
    out["cells_written"] = d.n_cells
    out["genes_written"] = d.matrix.n_genes
    _write_json(run.path("qc_report.json"), out)


def _read_mapping(path: Path) -> dict:
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 2:
                from .errors import ParseError
                raise ParseError("ortholog map needs two tab-separated columns", line=line_no)
            mapping[parts[0]] = parts[1]
    return mapping


def cmd_train_cvae(args, run: Run) -> None:
    from .cvae import CvaeConfig, save_cvae, train_cvae
    from .expr import load_dataset

    d = load_dataset(args.input)
    cfg = CvaeConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, alpha=args.alpha,
                     warmup_frac=args.warmup, seed=args.seed, d_z=args.d_z, d_c=args.d_c,
                     hidden=tuple(args.hidden), embed_dim=args.embed_dim, target_sum=args.target_sum)
    res = train_cvae(d, cfg)
    save_cvae(res.params, run.stage / "model", {"seed": args.seed, "epochs": args.epochs, "lr": args.lr})
    _write_json(run.path("history.json"), {"train_loss": res.history, "valid_loss": res.valid_history,
                                           "best_epoch": res.best_epoch, **res.manifest})


def _conditions_from(args) -> tuple:
    from .expr import load_annotations, load_dataset

    if args.like:
        d = load_dataset(args.like)
        if args.split:
            d = d.select_split(args.split)
        ann = d.annotations
    else:
        ann, _ = load_annotations(args.labels)
    return ann


def cmd_generate(args, run: Run) -> None:
    from .cvae import generate, load_cvae
    from .expr import CellAnnotations, Dataset, ExpressionMatrix, save_dataset

    p = load_cvae(args.model)
    ann = _conditions_from(args)
    m = generate(p, ann.conditions(), args.seed)
    ids = tuple(f"gen_{i:05d}" for i in range(m.n_cells))
    d = Dataset(ExpressionMatrix(m.csr, m.vocabulary, ids), CellAnnotations(ann.labels, ann.species, ann.tissue, ids))
    save_dataset(d, run.stage)


def cmd_train_clf(args, run: Run) -> None:
    from .expr import load_dataset
    from .interpret import ClassifierConfig, train_classifier

    d = load_dataset(args.input)
    cfg = ClassifierConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, hidden=tuple(args.hidden),
                           seed=args.seed, target_sum=args.target_sum)
    res = train_classifier(d, cfg)
    res.params.save(run.stage / "classifier")
    _write_json(run.path("history.json"), {"train_loss": res.history, "valid_loss": res.valid_history,
                                           "best_epoch": res.best_epoch, "config": cfg.to_dict()})


def cmd_predict(args, run: Run) -> None:
    from .expr import load_dataset
    from .interpret import ClassifierParams, dataset_inputs, predict_batch

    p = ClassifierParams.load(args.model)
    d = load_dataset(args.input)
    if args.split:
        d = d.select_split(args.split)
    labels, probs = predict_batch(p, dataset_inputs(p, d))
    ids = d.annotations.cell_ids or [f"cell_{i}" for i in range(d.n_cells)]
    lines = ["cell_id\tpredicted\tprobability"]
    for cid, lab, pr in zip(ids, labels, probs):
        lines.append(f"{cid}\t{lab}\t{float(pr.max()):.12g}")
    _write_text(run.path("predictions.tsv"), "\n".join(lines) + "\n")


def _read_predictions(path: Path) -> dict:
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            val = (row.get("predicted") or "").strip()
            out[row["cell_id"]] = val or None
    return out


def cmd_evaluate(args, run: Run) -> None:
    from .expr import load_dataset
    from .metrics import EvalReport, classification_metrics, evaluate

    real = load_dataset(args.real)
    if args.split:
        real = real.select_split(args.split)
    cls = None
    if args.predictions:
        preds = _read_predictions(Path(args.predictions))
        ids = real.annotations.cell_ids or [f"cell_{i}" for i in range(real.n_cells)]
        cls = classification_metrics([preds.get(c) for c in ids], real.annotations.labels)
    if args.gen:
        gen = load_dataset(args.gen)
        report = evaluate(real, gen, args.k_list, args.n_pcs, args.dims, args.target_sum, args.neighbors, cls)
    elif cls is not None:
        report = EvalReport(cls.to_dict())
    else:
        raise ValidationError("evaluate needs --gen and/or --predictions")
    report.save(run.path("eval_report.json"))
    rows = ["metric,value"] + [f"{k},{v!r}" for k, v in report.to_csv_rows()]
    _write_text(run.path("eval_report.csv"), "\n".join(rows) + "\n")


def cmd_markers(args, run: Run) -> None:
    from .expr import load_dataset, normalize_log1p
    from .interpret import rank_markers

    d = load_dataset(args.input)
    if args.split:
        d = d.select_split(args.split)
    x = normalize_log1p(d.matrix, args.target_sum)
    classes = args.classes.split(",") if args.classes else sorted(set(d.annotations.labels))
    parts = []
    for i, c in enumerate(classes):
        parts.append(rank_markers(d, c, args.top_k, args.target_sum, expr=x).to_tsv(header=(i == 0)))
    _write_text(run.path("markers.tsv"), "".join(parts))


def cmd_saliency(args, run: Run) -> None:
    from .expr import load_dataset
    from .interpret import ClassifierParams, aggregate_top_genes, dataset_inputs, saliency_scores, vanilla_gradient

    p = ClassifierParams.load(args.model)
    d = load_dataset(args.input)
    if args.split:
        d = d.select_split(args.split)
    x = dataset_inputs(p, d)
    genes = d.matrix.vocabulary.genes
    gene_set = None
    if args.gene_set:
        wanted = set(Path(args.gene_set).read_text(encoding="utf-8").split())
        gene_set = [j for j, g in enumerate(genes) if g in wanted]
    labels = d.annotations.labels
    scores = np.vstack([saliency_scores(vanilla_gradient(p, x[i], labels[i]), x[i], gene_set)
                        for i in range(d.n_cells)])
    res = aggregate_top_genes(scores, labels, args.top_n)
    _write_text(run.path("saliency.tsv"), res.to_tsv(genes))


def cmd_templates(args, run: Run) -> None:
    from .templates import CannedTemplateSource, HttpTemplateSource, dedup_pipeline, save_templates, split_templates

    if args.endpoint:
        source = HttpTemplateSource(args.endpoint, args.token_env, args.timeout, run.path("source_log.jsonl"))
    else:
        source = CannedTemplateSource.from_jsonl(args.input, args.rewrites)
    res = dedup_pipeline(source, args.task, args.count, args.threshold, args.max_rewrites, args.seed, args.max_words)
    recs = split_templates(res.accepted, tuple(args.split), args.seed) if len(res.accepted) >= 3 else res.accepted
    save_templates(recs, run.path("templates.jsonl"))
    _write_json(run.path("templates_report.json"), {"counters": res.counters, "warnings": res.warnings})


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cellkit", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"cellkit {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=True):
        p.add_argument("--output", required=True, help="output directory")
        if seed:
            p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("ingest", help="load, QC, select HVGs, split and save a dataset")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="matrix-market", help="matrix-market | dense-csv | native")
    p.add_argument("--annotations")
    p.add_argument("--species", default="human")
    p.add_argument("--tissue", default="unknown")
    p.add_argument("--ortholog-map", help="TSV: source gene<TAB>target gene")
    p.add_argument("--min-genes", type=int, default=200)
    p.add_argument("--min-cells", type=int, default=8)
    p.add_argument("--mito-prefixes", default="MT-,mt-")
    p.add_argument("--max-mito", type=float, default=0.2)
    p.add_argument("--max-total-counts", default="p99.5", help="count, pNN.N percentile, or 'none'")
    p.add_argument("--hvg", type=int, default=3600, help="0 keeps every gene")
    p.add_argument("--min-label-cells", type=int, default=0)
    p.add_argument("--split", type=_float_list, default=[0.8, 0.1, 0.1])
    p.set_defaults(func=cmd_ingest, inputs=lambda a: {"input": a.input, "annotations": a.annotations,
                                                      "ortholog_map": a.ortholog_map})

    p = sub.add_parser("train-cvae", help="fit the conditional VAE")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--epochs", type=int, default=160)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--warmup", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--d-z", type=int, default=256)
    p.add_argument("--d-c", type=int, default=256)
    p.add_argument("--hidden", type=_int_list, default=[128])
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--target-sum", type=float, default=1e4)
    p.set_defaults(func=cmd_train_cvae, inputs=lambda a: {"input": a.input})

    p = sub.add_parser("generate", help="sample pseudo-cells for a list of conditions")
    common(p)
    p.add_argument("--model", required=True, help="model directory written by train-cvae")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--labels", help="CSV with cell_id,label,species,tissue")
    src.add_argument("--like", help="dataset directory whose cell conditions are mirrored")
    p.add_argument("--split", help="with --like: only cells of this split")
    p.set_defaults(func=cmd_generate, inputs=lambda a: {"model": a.model, "labels": a.labels, "like": a.like})

    p = sub.add_parser("train-clf", help="fit the expression classifier")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--hidden", type=_int_list, default=[64])
    p.add_argument("--target-sum", type=float, default=1e4)
    p.set_defaults(func=cmd_train_clf, inputs=lambda a: {"input": a.input})

    p = sub.add_parser("predict", help="classify cells with a trained classifier")
    common(p, seed=False)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--split")
    p.set_defaults(func=cmd_predict, inputs=lambda a: {"model": a.model, "input": a.input})

    p = sub.add_parser("evaluate", help="score generated cells and/or predictions against real data")
    common(p, seed=False)
    p.add_argument("--real", required=True)
    p.add_argument("--gen")
    p.add_argument("--predictions", help="TSV with cell_id and predicted (empty = unanswered)")
    p.add_argument("--split", help="restrict real cells to this split")
    p.add_argument("--k-list", type=_int_list, default=[5, 10, 25, 50])
    p.add_argument("--n-pcs", type=int, default=50)
    p.add_argument("--dims", type=int, default=2)
    p.add_argument("--neighbors", type=int, default=25)
    p.add_argument("--target-sum", type=float, default=1e4)
    p.set_defaults(func=cmd_evaluate, inputs=lambda a: {"real": a.real, "gen": a.gen, "predictions": a.predictions})

    p = sub.add_parser("markers", help="rank one-vs-rest Welch markers per class")
    common(p, seed=False)
    p.add_argument("--input", required=True)
    p.add_argument("--split")
    p.add_argument("--classes", help="comma-separated; default all")
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--target-sum", type=float, default=1e4)
    p.set_defaults(func=cmd_markers, inputs=lambda a: {"input": a.input})

    p = sub.add_parser("saliency", help="top genes per class by masked input gradients")
    common(p, seed=False)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--split")
    p.add_argument("--gene-set", help="whitespace-separated gene identifiers to keep")
    p.add_argument("--top-n", type=int, default=10)
    p.set_defaults(func=cmd_saliency, inputs=lambda a: {"model": a.model, "input": a.input, "gene_set": a.gene_set})

    p = sub.add_parser("templates", help="filter and deduplicate instruction templates")
    common(p)
    p.add_argument("--input", help="canned candidate corpus (JSON lines)")
    p.add_argument("--rewrites", help="canned rewrite queue (JSON lines)")
    p.add_argument("--endpoint", help="HTTP template source instead of a canned corpus")
    p.add_argument("--token-env", default="CELLKIT_TEMPLATE_TOKEN")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--task", required=True, choices=("CTA", "DSP", "CPCG"))
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--threshold", type=float, default=0.75)
    p.add_argument("--max-rewrites", type=int, default=3)
    p.add_argument("--max-words", type=int, default=70)
    p.add_argument("--split", type=_float_list, default=[0.8, 0.1, 0.1])
    p.set_defaults(func=cmd_templates, inputs=lambda a: {"input": a.input, "rewrites": a.rewrites})
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.command == "templates" and not (args.input or args.endpoint):
        parser.error("templates needs --input or --endpoint")
    inputs = args.inputs(args)
    del args.inputs
    func = args.func
    run = None
    try:
        run = Run(args.command, args, inputs)
        func(args, run)
        run.commit()
        return EXIT_OK
    except CellkitError as exc:
        print(f"cellkit {args.command}: {exc}", file=sys.stderr)
        code = exc.exit_code
    except (OSError, EOFError) as exc:
        print(f"cellkit {args.command}: {exc}", file=sys.stderr)
        code = EXIT_IO
    if run is not None:
        run.abort()
    return code


if __name__ == "__main__":
    sys.exit(main())
