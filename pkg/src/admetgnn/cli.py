"""Command-line entry point: ``admetgnn {parse,featurize,split,train,benchmark,interpret}``.

Exit codes: 0 success, 2 input error, 3 config error, 4 runtime/training error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import errors
from .config import load_run_config
from .evalharness import (
    FeatureCache,
    load_dataset,
    run_benchmark,
    split,
    train_method,
    usable_tasks,
    write_training_artifacts,
)
from .featurize import (
    ATOM_FEATURE_SCHEMA,
    ap_descriptors,
    atom_features,
    circular_fingerprint,
    dp_descriptors,
    key_to_str,
    schema_hash,
)
from .interpret import atom_importance, interpretation_json, top_substructure
from .molgraph import parse_smiles, summary
from .potentialnet import load_checkpoint

EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("admetgnn")


def _error_doc(exc: Exception) -> dict:
    return {"error": type(exc).__name__, "message": str(exc)}


def cmd_parse(args) -> int:
    if args.file:
        status = EXIT_OK
        for line in Path(args.file).read_text().splitlines():
            text = line.split()[0] if line.split() else ""
            try:
                print(json.dumps(summary(parse_smiles(text))))
            except errors.SmilesError as exc:
                print(json.dumps({"smiles": text, **_error_doc(exc)}))
                status = EXIT_INPUT
        return status
    if not args.smiles:
        raise errors.InputError("give a SMILES string or --file")
    print(json.dumps(summary(parse_smiles(args.smiles))))
    return EXIT_OK


def cmd_featurize(args) -> int:
    g = parse_smiles(args.smiles)
    doc = {
        "smiles": g.source_smiles,
        "feature_schema_hash": schema_hash(),
        "feature_schema": [f"{grp}:{cat}" for grp, cat in ATOM_FEATURE_SCHEMA],
        "atom_features": atom_features(g).values.tolist(),
        "ap": {key_to_str(k): v for k, v in sorted(ap_descriptors(g).counts.items())},
        "dp": {key_to_str(k): v for k, v in sorted(dp_descriptors(g).counts.items())},
        "fingerprint": sorted(circular_fingerprint(g, args.radius).bits),
        "fingerprint_radius": args.radius,
    }
    print(json.dumps(doc))
    return EXIT_OK


def _split_from_config(cfg):
    ds = load_dataset(cfg.dataset)
    return ds, split(ds, cfg.split)


def cmd_split(args) -> int:
    cfg = load_run_config(args.config)
    out = Path(args.out) if args.out else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _, parts = _split_from_config(cfg)
    for name, part in zip(("train", "valid", "test"), parts):
        with open(out / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["molecule_id", "smiles", "assay", "value", "date"])
            for r in part:
                w.writerow([r.molecule_id, r.smiles, r.assay, repr(r.value), r.date.isoformat()])
    manifest = {"config": cfg.resolved(), "sizes": {n: len(p) for n, p in zip(("train", "valid", "test"), parts)}}
    (out / "split_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(json.dumps(manifest["sizes"]))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    ds, (train, valid, _test) = _split_from_config(cfg)
    # the test partition is never read by training
    tasks, skipped = usable_tasks(train, valid, _test, cfg.tasks)
    if not tasks:
        raise errors.EmptyPartition("train", "no assay has enough records")
    cache = FeatureCache(ds.graphs)
    resolved = cfg.resolved()
    written = {}
    for kind in cfg.models:
        tm = train_method(kind, cfg, train, valid, tasks, cache)
        directory = cfg.output_dir / "checkpoints" / kind
        write_training_artifacts(tm, directory, resolved)
        written[kind] = str(directory)
    print(json.dumps({"tasks": tasks, "skipped": skipped, "outputs": written}))
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = load_run_config(args.config)
    result = run_benchmark(cfg)
    print(json.dumps({"report": str(result.report_json), "csv": str(result.report_csv),
                      "aggregate": result.report.aggregate()}, default=str))
    return EXIT_OK


def cmd_interpret(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    g = parse_smiles(args.smiles)
    imp = atom_importance(ckpt, g)
    res = top_substructure(imp, g, args.size, mode="greedy" if args.greedy else "exact")
    doc = interpretation_json(g, imp, res, ckpt.task)
    doc["checkpoint"] = {"path": str(args.checkpoint), "config": ckpt.config.to_dict(), "seed": ckpt.config.seed}
    text = json.dumps(doc, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="admetgnn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("parse", help="parse SMILES and print a graph summary")
    sp.add_argument("smiles", nargs="?")
    sp.add_argument("--file", help="one SMILES per line")
    sp.set_defaults(func=cmd_parse)

    sp = sub.add_parser("featurize", help="atom features, AP/DP bags and fingerprint for one SMILES")
    sp.add_argument("smiles")
    sp.add_argument("--radius", type=int, default=2)
    sp.set_defaults(func=cmd_featurize)

    for name, func, helptext in (
        ("split", cmd_split, "write train/valid/test partition CSVs"),
        ("train", cmd_train, "train the configured models and write checkpoints"),
        ("benchmark", cmd_benchmark, "train, evaluate once on test, write the report"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", help="JSON run config")
        if name == "split":
            sp.add_argument("--out", help="output directory (default: config output_dir)")
        sp.set_defaults(func=func)

    sp = sub.add_parser("interpret", help="atom importance and top substructure for one molecule")
    sp.add_argument("--checkpoint", required=True, help="checkpoint JSON sidecar")
    sp.add_argument("--smiles", required=True)
    sp.add_argument("--size", type=int, default=4, help="substructure size S")
    sp.add_argument("--greedy", action="store_true", help="greedy search instead of exact enumeration")
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_interpret)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except errors.ConfigError as exc:
        print(json.dumps(_error_doc(exc)), file=sys.stderr)
        return EXIT_CONFIG
    except errors.InputError as exc:
        print(json.dumps(_error_doc(exc)), file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error by contract
        log.debug("runtime failure", exc_info=True)
        print(json.dumps(_error_doc(exc)), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
