"""JSON run configuration shared by the CLI commands and the benchmark harness."""
from __future__ import annotations

import datetime as dt
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .baselines import MLPConfig, RF_PRESETS, RFConfig
from .errors import ConfigError
from .potentialnet import ModelConfig

MODEL_KINDS = ("potentialnet", "potentialnet_singletask", "gcnn", "rf_sklearn", "rf_mix", "mlp")
SPLIT_KINDS = ("temporal", "temporal_mw", "temporal_tanimoto", "ablation")
SEED_ENV = "ADMET_SEED"


def _date(value, name: str) -> dt.date:
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError as exc:
        raise ConfigError(f"{name}: not an ISO-8601 date: {value!r}") from exc


@dataclass
class SplitSpec:
    kind: str
    date_i: dt.date
    date_j: dt.date
    train_max_mw: float = 500.0
    test_min_mw: float = 600.0
    tanimoto_cutoff: float = 0.4
    ablation_keep_fraction: float = 0.6
    fingerprint_radius: int = 2

    def __post_init__(self):
        if self.kind not in SPLIT_KINDS:
            raise ConfigError(f"split.kind: unknown split {self.kind!r}, expected one of {SPLIT_KINDS}")
        self.date_i = _date(self.date_i, "split.date_i")
        self.date_j = _date(self.date_j, "split.date_j")
        if not self.date_i < self.date_j:
            raise ConfigError("split: date_i must precede date_j")
        if not 0.0 < self.tanimoto_cutoff <= 1.0:
            raise ConfigError("split.tanimoto_cutoff must lie in (0, 1]")
        if not 0.0 < self.ablation_keep_fraction <= 1.0:
            raise ConfigError("split.ablation_keep_fraction must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "date_i": self.date_i.isoformat(), "date_j": self.date_j.isoformat(),
            "train_max_mw": self.train_max_mw, "test_min_mw": self.test_min_mw,
            "tanimoto_cutoff": self.tanimoto_cutoff, "ablation_keep_fraction": self.ablation_keep_fraction,
            "fingerprint_radius": self.fingerprint_radius, "fingerprint_bits": 2048,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        d = {k: v for k, v in d.items() if k != "fingerprint_bits"}
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"split: unknown field(s) {sorted(unknown)}")
        if "kind" not in d or "date_i" not in d or "date_j" not in d:
            raise ConfigError("split: kind, date_i and date_j are required")
        return cls(**d)


@dataclass
class RunConfig:
    dataset: Path
    split: SplitSpec
    models: tuple
    output_dir: Path
    seed: int = 0
    tasks: Optional[tuple] = None
    potentialnet: dict = field(default_factory=dict)
    gcnn: dict = field(default_factory=dict)
    rf: dict = field(default_factory=dict)
    mlp: dict = field(default_factory=dict)
    baseline: Optional[str] = None
    challenger: Optional[str] = None
    seed_source: str = "config"
    dataset_ref: str = ""  # path as written in the config; absolute paths would break byte-identity across dirs

    def model_config(self, kind: str, n_tasks: int) -> ModelConfig:
        if kind in ("potentialnet", "potentialnet_singletask"):
            base = {**self.potentialnet, "model": "potentialnet"}
        else:
            base = {**self.gcnn, "model": "gcnn"}
        base["seed"] = self.seed
        cfg = ModelConfig.from_dict(base)
        return cfg.with_tasks(n_tasks)

    def rf_config(self, kind: str) -> RFConfig:
        preset = "sklearn" if kind == "rf_sklearn" else "mix"
        return RFConfig(**{**RF_PRESETS[preset], **self.rf, "seed": self.seed})

    def mlp_config(self) -> MLPConfig:
        return MLPConfig(**{**self.mlp, "seed": self.seed})

    def resolved(self) -> dict:
        """Fully resolved config, embedded in every output artifact."""
        return {
            "dataset": self.dataset_ref or self.dataset.name,
            "split": self.split.to_dict(),
            "models": list(self.models),
            "seed": self.seed,
            "seed_source": self.seed_source,
            "tasks": list(self.tasks) if self.tasks else None,
            "potentialnet": self.model_config("potentialnet", 1).to_dict() if self._uses("potentialnet") else None,
            "gcnn": self.model_config("gcnn", 1).to_dict() if "gcnn" in self.models else None,
            "rf": {k: self.rf_config(k).__dict__ for k in self.models if k.startswith("rf_")} or None,
            "mlp": self.mlp_config().__dict__ if "mlp" in self.models else None,
            "baseline": self.baseline,
            "challenger": self.challenger,
        }

    def _uses(self, prefix: str) -> bool:
        return any(m.startswith(prefix) for m in self.models)


_TOP_FIELDS = {"dataset", "split", "models", "output_dir", "seed", "tasks", "potentialnet", "gcnn",
               "rf", "mlp", "baseline", "challenger"}


def parse_run_config(doc: dict, base_dir: Optional[Path] = None, env=None) -> RunConfig:
    env = os.environ if env is None else env
    base_dir = Path(base_dir or ".")
    unknown = set(doc) - _TOP_FIELDS
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
    for req in ("dataset", "split", "models"):
        if req not in doc:
            raise ConfigError(f"missing required field {req!r}")
    models = doc["models"]
    if isinstance(models, str):
        models = [models]
    if not models:
        raise ConfigError("models: at least one model kind is required")
    for k, m in enumerate(models):
        if m not in MODEL_KINDS:
            raise ConfigError(f"models[{k}]: unknown model kind {m!r}, expected one of {MODEL_KINDS}")
    if len(set(models)) != len(models):
        raise ConfigError("models: duplicate model kind")
    dataset = Path(doc["dataset"])
    if not dataset.is_absolute():
        dataset = base_dir / dataset
    if not dataset.exists():
        raise ConfigError(f"dataset: file not found: {dataset}")
    split = SplitSpec.from_dict(dict(doc["split"]))
    seed, source = int(doc.get("seed", 0)), "config"
    if env.get(SEED_ENV):
        try:
            seed, source = int(env[SEED_ENV]), f"env:{SEED_ENV}"
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    out = Path(doc.get("output_dir", "runs/out"))
    if not out.is_absolute():
        out = base_dir / out
    for name in ("baseline", "challenger"):
        if doc.get(name) is not None and doc[name] not in models:
            raise ConfigError(f"{name}: {doc[name]!r} is not among the configured models")
    cfg = RunConfig(
        dataset=dataset, split=split, models=tuple(models), output_dir=out, seed=seed,
        tasks=tuple(doc["tasks"]) if doc.get("tasks") else None,
        potentialnet=dict(doc.get("potentialnet") or {}), gcnn=dict(doc.get("gcnn") or {}),
        rf=dict(doc.get("rf") or {}), mlp=dict(doc.get("mlp") or {}),
        baseline=doc.get("baseline"), challenger=doc.get("challenger"), seed_source=source,
        dataset_ref=str(doc["dataset"]),
    )
    # surface sub-config errors at validation time, not mid-run
    try:
        for m in models:
            if m.startswith("rf_"):
                cfg.rf_config(m)
            elif m == "mlp":
                cfg.mlp_config()
            else:
                cfg.model_config(m, 1)
    except TypeError as exc:
        raise ConfigError(f"invalid model settings: {exc}") from exc
    return cfg


def load_run_config(path, env=None) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return parse_run_config(doc, base_dir=path.parent, env=env)
