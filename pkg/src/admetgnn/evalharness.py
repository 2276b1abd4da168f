"""Dataset ingestion, temporal-family splits, benchmark runs and report generation."""
from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .baselines import DescriptorMatrix, build_descriptor_matrix, fit_mlp, fit_rf, predict_rf
from .config import RunConfig, SplitSpec
from .errors import (
    DegenerateSeries,
    DuplicateRecord,
    EmptyDataset,
    EmptyPartition,
    InsufficientN,
    MissingColumn,
    SmilesError,
    TestSetReuse,
)
from .featurize import apdp_descriptors, circular_fingerprint, max_tanimoto
from .metrics import CI_METHOD, pearson_r2, r2_confidence_interval, rho_confidence_interval, spearman_rho
from .molgraph import molecular_weight, parse_smiles
from .potentialnet import (
    MultitaskData,
    TrainingResult,
    graph_input,
    predict_standardized,
    save_checkpoint,
    train_multitask,
)

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("smiles", "assay", "value", "date")
REPORT_CSV_COLUMNS = ("assay", "method", "r2", "ci_low", "ci_high", "rho", "n_train", "n_test")
PREDICTION_COLUMNS = ("molecule_id", "assay", "split", "actual", "predicted_raw", "predicted_rescaled")


# --- datasets ---------------------------------------------------------------

@dataclass(frozen=True)
class AssayRecord:
    molecule_id: str
    smiles: str
    assay: str
    value: float
    date: dt.date
    line: int = 0


@dataclass
class AssayDataset:
    records: list
    graphs: dict  # molecule_id -> MolecularGraph
    errors: list = field(default_factory=list)
    _mw: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def assays(self) -> list:
        return sorted({r.assay for r in self.records})

    def for_assay(self, assay: str) -> list:
        return [r for r in self.records if r.assay == assay]

    def molecular_weight(self, molecule_id: str) -> float:
        if molecule_id not in self._mw:
            self._mw[molecule_id] = molecular_weight(self.graphs[molecule_id])
        return self._mw[molecule_id]

    def subset(self, records: Sequence[AssayRecord]) -> "AssayDataset":
        return AssayDataset(list(records), self.graphs, [], self._mw)

    def write_error_report(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["line", "smiles", "error", "message"])
            for e in self.errors:
                w.writerow([e["line"], e["smiles"], e["error"], e["message"]])


def load_dataset(path, error_report=None) -> AssayDataset:
    """Read a ``smiles,assay,value,date`` CSV (optional ``molecule_id`` column).

    Rows whose SMILES, value or date fail to parse go to ``dataset.errors``
    (and to ``error_report`` as CSV when given) with their line numbers.
    """
    path = Path(path)
    records, graphs, errors = [], {}, []
    seen: dict = {}
    parsed: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {missing}")
        id_col = "molecule_id" if "molecule_id" in header else None
        for row in reader:
            line = reader.line_num
            smiles = (row["smiles"] or "").strip()
            mol_id = (row[id_col] or "").strip() if id_col else smiles
            mol_id = mol_id or smiles
            try:
                if smiles not in parsed:
                    parsed[smiles] = parse_smiles(smiles)
                graph = parsed[smiles]
                value = float(row["value"])
                if not math.isfinite(value):
                    raise ValueError(f"non-finite value {row['value']!r}")
                date = dt.date.fromisoformat(row["date"].strip())
            except SmilesError as exc:
                parsed.pop(smiles, None)
                errors.append({"line": line, "smiles": smiles, "error": type(exc).__name__, "message": str(exc)})
                continue
            except (ValueError, TypeError, AttributeError) as exc:
                errors.append({"line": line, "smiles": smiles, "error": "BadField", "message": str(exc)})
                continue
            key = (mol_id, row["assay"])
            if key in seen:
                raise DuplicateRecord(f"{path}: ({mol_id!r}, {row['assay']!r}) on lines {seen[key]} and {line}")
            seen[key] = line
            graphs[mol_id] = graph
            records.append(AssayRecord(mol_id, smiles, row["assay"], value, date, line))
    ds = AssayDataset(records, graphs, errors)
    if error_report is not None and errors:
        ds.write_error_report(error_report)
    if not records:
        raise EmptyDataset(f"{path}: no valid records ({len(errors)} rejected)")
    return ds


# --- splits -----------------------------------------------------------------

def _temporal(dataset: AssayDataset, spec: SplitSpec):
    train, valid, test = [], [], []
    for r in dataset.records:
        if r.date < spec.date_i:
            train.append(r)
        elif r.date < spec.date_j:
            valid.append(r)
        else:
            test.append(r)
    return train, valid, test


def _ablate(records: list, keep_fraction: float) -> list:
    """Keep the chronologically earliest ``keep_fraction`` of records per assay."""
    kept = []
    by_assay: dict = {}
    for r in records:
        by_assay.setdefault(r.assay, []).append(r)
    for assay in sorted(by_assay):
        rows = sorted(by_assay[assay], key=lambda r: (r.date, r.line))
        n_keep = int(math.floor(keep_fraction * len(rows) + 0.5))
        kept.extend(rows[:n_keep])
    keep_ids = {id(r) for r in kept}
    return [r for r in records if id(r) in keep_ids]


def split(dataset: AssayDataset, spec: SplitSpec, fingerprints: Optional[dict] = None):
    """Partition records into (train, valid, test) datasets according to ``spec``.

    Boundary dates fall into the later partition: date_i -> valid, date_j -> test.
    """
    if not len(dataset):
        raise EmptyDataset("cannot split an empty dataset")
    train, valid, test = _temporal(dataset, spec)
    if spec.kind == "temporal_mw":
        mw = dataset.molecular_weight
        train = [r for r in train if mw(r.molecule_id) <= spec.train_max_mw]
        valid = [r for r in valid if mw(r.molecule_id) <= spec.train_max_mw]
        test = [r for r in test if mw(r.molecule_id) >= spec.test_min_mw]
    elif spec.kind == "temporal_tanimoto":
        fps = dict(fingerprints or {})
        for r in train + test:
            if r.molecule_id not in fps:
                fps[r.molecule_id] = circular_fingerprint(dataset.graphs[r.molecule_id], spec.fingerprint_radius)
        ref = [fps[m] for m in sorted({r.molecule_id for r in train})]
        sim = {m: max_tanimoto(fps[m], ref) for m in {r.molecule_id for r in test}}
        test = [r for r in test if sim[r.molecule_id] < spec.tanimoto_cutoff]
    elif spec.kind == "ablation":
        kept = {id(r) for r in _ablate(train + valid, spec.ablation_keep_fraction)}
        train = [r for r in train if id(r) in kept]
        valid = [r for r in valid if id(r) in kept]
    for name, part in (("train", train), ("valid", valid), ("test", test)):
        if not part:
            raise EmptyPartition(name, f"{spec.kind} split with date_i={spec.date_i}, date_j={spec.date_j}")
    return dataset.subset(train), dataset.subset(valid), dataset.subset(test)


class SealedPartition:
    """Holds the test partition; it can be opened once per benchmark run."""

    def __init__(self, data: AssayDataset):
        self._data = data
        self.accesses = 0

    def open(self) -> AssayDataset:
        self.accesses += 1
        if self.accesses > 1:
            raise TestSetReuse("test partition opened more than once in a single run")
        return self._data

    def __len__(self):
        return len(self._data)


# --- report -----------------------------------------------------------------

def improvement(baseline_r2: float, challenger_r2: float) -> tuple[float, Optional[float]]:
    """(absolute, percentage) improvement; percentage is None when the baseline R^2 is not positive."""
    absolute = challenger_r2 - baseline_r2
    pct = 100.0 * absolute / baseline_r2 if baseline_r2 > 0 else None
    return absolute, pct


@dataclass
class MethodRow:
    assay: str
    method: str
    r2: float
    ci_low: float
    ci_high: float
    rho: float
    rho_ci_low: float
    rho_ci_high: float
    n_train: int
    n_test: int


def score_predictions(assay, method, pred, actual, n_train) -> MethodRow:
    n = len(actual)
    try:
        r2 = pearson_r2(pred, actual)
        rho = spearman_rho(pred, actual)
    except DegenerateSeries:
        r2, rho = 0.0, 0.0
    try:
        lo, hi = r2_confidence_interval(r2, n)
        rlo, rhi = rho_confidence_interval(rho, n)
    except InsufficientN:
        lo = hi = rlo = rhi = float("nan")
    return MethodRow(assay, method, r2, lo, hi, rho, rlo, rhi, int(n_train), int(n))


def _median(xs):
    return statistics.median(xs) if xs else None


def _mean(xs):
    return statistics.fmean(xs) if xs else None


@dataclass
class EvalReport:
    rows: list
    methods: tuple
    baseline: Optional[str] = None
    challenger: Optional[str] = None
    metadata: dict = field(default_factory=dict)

    def improvements(self) -> list:
        if not (self.baseline and self.challenger):
            return []
        by = {(r.assay, r.method): r for r in self.rows}
        out = []
        for assay in sorted({r.assay for r in self.rows}):
            b, c = by.get((assay, self.baseline)), by.get((assay, self.challenger))
            if b is None or c is None:
                continue
            absolute, pct = improvement(b.r2, c.r2)
            out.append({
                "assay": assay, "baseline_r2": b.r2, "challenger_r2": c.r2,
                "absolute_improvement": absolute,
                "percentage_improvement": "n/a" if pct is None else pct,
                "baseline_rho": b.rho, "challenger_rho": c.rho,
                "n_train": c.n_train, "n_test": c.n_test,
            })
        return out

    def aggregate(self) -> dict:
        agg = {}
        for m in self.methods:
            r2s = [r.r2 for r in self.rows if r.method == m]
            agg[m] = {"mean_r2": _mean(r2s), "median_r2": _median(r2s), "n_assays": len(r2s)}
        imps = self.improvements()
        if imps:
            absolute = [i["absolute_improvement"] for i in imps]
            pct = [i["percentage_improvement"] for i in imps if i["percentage_improvement"] != "n/a"]
            agg["improvement"] = {
                "baseline": self.baseline, "challenger": self.challenger,
                "mean_absolute_r2_improvement": _mean(absolute),
                "median_absolute_r2_improvement": _median(absolute),
                "mean_percentage_r2_improvement": _mean(pct),
                "median_percentage_r2_improvement": _median(pct),
                "n_percentage_unavailable": len(absolute) - len(pct),
            }
        return agg

    def to_dict(self) -> dict:
        doc = {
            "metadata": {**self.metadata, "ci_method": CI_METHOD},
            "methods": list(self.methods),
            "per_assay": [r.__dict__ for r in self.rows],
            "aggregate": self.aggregate(),
        }
        if self.baseline and self.challenger:
            doc["improvement"] = {"baseline": self.baseline, "challenger": self.challenger,
                                  "per_assay": self.improvements()}
        return doc

    def to_json(self) -> str:
        return json.dumps(_nan_to_none(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_CSV_COLUMNS)
            for r in self.rows:
                w.writerow([r.assay, r.method, repr(r.r2), repr(r.ci_low), repr(r.ci_high), repr(r.rho),
                            r.n_train, r.n_test])


def _nan_to_none(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_nan_to_none(v) for v in obj]
    return obj


def pick_comparison(methods: Sequence[str], baseline=None, challenger=None):
    """Default comparison: first RF method vs first graph network; None when < 2 methods."""
    if len(methods) < 2:
        return None, None
    if baseline is None:
        baseline = next((m for m in methods if m.startswith("rf_")), methods[0])
    if challenger is None:
        challenger = next((m for m in methods if m.startswith("potentialnet") and m != baseline),
                          next(m for m in methods if m != baseline))
    return baseline, challenger


# --- method training ----------------------------------------------------------

@dataclass
class FeatureCache:
    graphs: dict
    _inputs: dict = field(default_factory=dict)
    _bags: dict = field(default_factory=dict)

    def graph_input(self, mol_id):
        if mol_id not in self._inputs:
            self._inputs[mol_id] = graph_input(self.graphs[mol_id])
        return self._inputs[mol_id]

    def bag(self, mol_id):
        if mol_id not in self._bags:
            self._bags[mol_id] = apdp_descriptors(self.graphs[mol_id])
        return self._bags[mol_id]


def multitask_table(ds: AssayDataset, tasks: Sequence[str], cache: FeatureCache) -> MultitaskData:
    mol_ids = sorted({r.molecule_id for r in ds.records if r.assay in tasks})
    row = {m: k for k, m in enumerate(mol_ids)}
    col = {t: k for k, t in enumerate(tasks)}
    labels = np.zeros((len(mol_ids), len(tasks)))
    mask = np.zeros_like(labels, dtype=bool)
    for r in ds.records:
        if r.assay in col:
            labels[row[r.molecule_id], col[r.assay]] = r.value
            mask[row[r.molecule_id], col[r.assay]] = True
    return MultitaskData([cache.graph_input(m) for m in mol_ids], labels, mask, tuple(tasks), tuple(mol_ids))


@dataclass
class TrainedMethod:
    """Per-task predictors for one model kind plus the artifacts worth saving."""
    kind: str
    predictors: dict  # task -> callable(records) -> (raw, rescaled)
    results: list = field(default_factory=list)  # TrainingResult objects (graph nets)
    models: dict = field(default_factory=dict)  # task -> fitted baseline model


def _graph_predictor(ckpt, cache: FeatureCache):
    model = ckpt.model()

    def run(records):
        inputs = [cache.graph_input(r.molecule_id) for r in records]
        raw = predict_standardized(model, inputs)[:, ckpt.task_index] if inputs else np.zeros(0)
        return raw, ckpt.mu + ckpt.sigma * raw

    return run


def _descriptor_predictor(model, matrix: DescriptorMatrix, cache: FeatureCache, kind: str):
    def run(records):
        X = matrix.transform([cache.bag(r.molecule_id) for r in records])
        if kind == "mlp":
            return model.predict(X, rescale=False), model.predict(X)
        p = predict_rf(model, X)
        return p, p

    return run


def train_method(kind: str, cfg: RunConfig, train: AssayDataset, valid: AssayDataset,
                 tasks: Sequence[str], cache: FeatureCache) -> TrainedMethod:
    tm = TrainedMethod(kind, {})
    if kind in ("potentialnet", "gcnn"):
        groups = [list(tasks)]
    elif kind == "potentialnet_singletask":
        groups = [[t] for t in tasks]
    else:
        groups = None
    if groups is not None:
        for group in groups:
            mcfg = cfg.model_config(kind, len(group))
            result = train_multitask(multitask_table(train, group, cache), multitask_table(valid, group, cache), mcfg)
            tm.results.append(result)
            for ckpt in result.checkpoints:
                tm.predictors[ckpt.task] = _graph_predictor(ckpt, cache)
        return tm
    for task in tasks:
        recs = train.for_assay(task)
        matrix = build_descriptor_matrix([cache.bag(r.molecule_id) for r in recs])
        y = np.array([r.value for r in recs])
        if kind == "mlp":
            model = fit_mlp(matrix, y, config=cfg.mlp_config())
        else:
            model = fit_rf(matrix, y, cfg.rf_config(kind))
        tm.models[task] = model
        tm.predictors[task] = _descriptor_predictor(model, matrix, cache, kind)
    return tm


def usable_tasks(train: AssayDataset, valid: AssayDataset, test: AssayDataset, wanted=None) -> tuple[list, list]:
    """Tasks with >= 2 train rows, >= 2 distinct validation labels and >= 4 test rows."""
    tasks, skipped = [], []
    for t in (wanted or train.assays()):
        n_train = len(train.for_assay(t))
        n_val = len({r.value for r in valid.for_assay(t)})
        n_test = len(test.for_assay(t))
        if n_train >= 2 and n_val >= 2 and n_test >= 4:
            tasks.append(t)
        else:
            skipped.append({"assay": t, "n_train": n_train, "distinct_valid": n_val, "n_test": n_test})
    return tasks, skipped


def write_training_artifacts(tm: TrainedMethod, directory: Path, resolved: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for result in tm.results:
        for ckpt in result.checkpoints:
            save_checkpoint(ckpt, directory, extra={"run_config": resolved, "model_kind": tm.kind})
        write_curves(result, directory / f"curves_{'_'.join(_safe(t) for t in result.tasks)}.csv")
    for task, model in tm.models.items():
        if tm.kind.startswith("rf_"):
            doc = json.loads(model.to_json())
            doc["run_config"] = resolved
            (directory / f"{_safe(task)}.rf.json").write_text(json.dumps(doc, sort_keys=True) + "\n")


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def write_curves(result: TrainingResult, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "task", "val_r2", "train_loss"])
        for epoch in range(result.val_curves.shape[0]):
            for t, task in enumerate(result.tasks):
                w.writerow([epoch, task, repr(float(result.val_curves[epoch, t])), repr(result.train_loss[epoch])])


# --- benchmark ----------------------------------------------------------------

@dataclass
class BenchmarkOutput:
    report: EvalReport
    report_json: Path
    report_csv: Path
    predictions: dict  # method -> csv path
    test_accesses: int


def run_benchmark(cfg: RunConfig) -> BenchmarkOutput:
    """Train every configured method on one split and score each on the test set, which is opened once."""
    resolved = cfg.resolved()
    dataset = load_dataset(cfg.dataset)
    train, valid, test = split(dataset, cfg.split)
    sealed = SealedPartition(test)
    tasks, skipped = usable_tasks(train, valid, test, cfg.tasks)
    if not tasks:
        raise EmptyPartition("train", "no assay has enough train/valid/test records")
    cache = FeatureCache(dataset.graphs)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    trained = {}
    for kind in cfg.models:
        log.info("training %s on %d task(s)", kind, len(tasks))
        trained[kind] = train_method(kind, cfg, train, valid, tasks, cache)
        write_training_artifacts(trained[kind], out / "checkpoints" / kind, resolved)

    test_ds = sealed.open()
    rows, pred_paths = [], {}
    for kind in cfg.models:
        dump = []
        for task in tasks:
            for split_name, part in (("valid", valid), ("test", test_ds)):
                recs = part.for_assay(task)
                raw, rescaled = trained[kind].predictors[task](recs)
                dump += [(r.molecule_id, task, split_name, r.value, float(a), float(b))
                         for r, a, b in zip(recs, raw, rescaled)]
                if split_name == "test":
                    actual = np.array([r.value for r in recs])
                    rows.append(score_predictions(task, kind, rescaled, actual, len(train.for_assay(task))))
        path = out / f"predictions_{kind}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PREDICTION_COLUMNS)
            for mid, task, sp, actual, a, b in dump:
                w.writerow([mid, task, sp, repr(actual), repr(a), repr(b)])
        pred_paths[kind] = path

    baseline, challenger = pick_comparison(cfg.models, cfg.baseline, cfg.challenger)
    report = EvalReport(rows, tuple(cfg.models), baseline, challenger, metadata={
        "config": resolved,
        "seed": cfg.seed,
        "tasks": tasks,
        "skipped_tasks": skipped,
        "partition_sizes": {"train": len(train), "valid": len(valid), "test": len(test_ds)},
        "fingerprint": f"circular, radius {cfg.split.fingerprint_radius}, 2048 bits, FNV-1a" if cfg.split.kind == "temporal_tanimoto" else None,
        "test_set_accesses": sealed.accesses,
    })
    rj, rc = out / "report.json", out / "report.csv"
    rj.write_text(report.to_json())
    report.write_csv(rc)
    return BenchmarkOutput(report, rj, rc, pred_paths, sealed.accesses)
