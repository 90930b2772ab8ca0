"""Experiment configuration: one JSON document aggregating the dataset spec,
predictor, trainer, sampler and adaptive-schedule sections plus the output
directory and global seed.

Loading validates every cross-field constraint (grid vs. sequence length,
variant vs. channel count and vocabulary, relative-bit pairing) and reports
the offending fields by name.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .predictor import PredictorConfig
from .refine import ScheduleConfig
from .sampler import DECODING_PRESETS, SampleConfig, ScheduleSpec
from .synthdata import DatasetSpec
from .trainer import TrainConfig

__all__ = ["ExperimentConfig", "load_experiment", "experiment_from_dict", "experiment_to_dict"]


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    predictor: PredictorConfig
    train: TrainConfig
    sample: SampleConfig
    schedule: ScheduleConfig | None = None
    seed: int = 0
    out_dir: str | None = None


def _build(section_cls, data: dict, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    allowed = {f.name for f in fields(section_cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
    try:
        return section_cls(**data)
    except (TypeError, ValueError, ConfigError) as exc:
        raise ConfigError(f"invalid section {section!r}: {exc}") from exc


def _build_sample(data: dict, schedule_cfg: ScheduleConfig | None) -> SampleConfig:
    if not isinstance(data, dict):
        raise ConfigError("section 'sample' must be an object")
    data = dict(data)
    preset_name = data.pop("preset", None)
    if preset_name is not None:
        if preset_name not in DECODING_PRESETS:
            raise ConfigError(
                f"unknown decoding preset {preset_name!r}; known: {sorted(DECODING_PRESETS)}"
            )
        merged = dict(DECODING_PRESETS[preset_name])
        merged.update(data)
        data = merged
    sched = data.pop("schedule", None)
    if not isinstance(sched, dict) or "kind" not in sched:
        raise ConfigError("sample.schedule must be an object with a 'kind' key")
    if sched["kind"] == "adaptive":
        if schedule_cfg is None:
            raise ConfigError(
                "sample.schedule.kind is 'adaptive' but the top-level 'schedule' section is missing"
            )
        spec = ScheduleSpec(kind="adaptive", adaptive=schedule_cfg)
    elif sched["kind"] == "fixed":
        spec = ScheduleSpec(kind="fixed", steps=sched.get("steps"))
    else:
        raise ConfigError(f"sample.schedule.kind must be 'fixed' or 'adaptive', got {sched['kind']!r}")
    data["schedule"] = spec
    return _build(SampleConfig, data, "sample")


def _cross_validate(cfg: ExperimentConfig) -> None:
    ds, pc, tc = cfg.dataset, cfg.predictor, cfg.train

    if pc.n_pos != ds.n_positions:
        raise ConfigError(
            f"predictor.n_pos ({pc.n_pos}) must equal the position count of dataset.grid "
            f"({ds.n_positions} = product of {ds.grid[:3]})"
        )
    expected_channels = ds.channels if tc.variant == "ind" else ds.channels * ds.rounds
    if pc.channels != expected_channels:
        raise ConfigError(
            f"predictor.channels ({pc.channels}) must equal {expected_channels} for "
            f"train.variant ({tc.variant!r}) with dataset.grid channels {ds.channels} "
            f"and dataset.rounds {ds.rounds}"
        )
    expected_vocab = (1 << ds.rounds) if tc.variant == "ind" else 2
    if pc.vocab != expected_vocab:
        raise ConfigError(
            f"predictor.vocab ({pc.vocab}) must equal {expected_vocab} for "
            f"train.variant ({tc.variant!r}) with dataset.rounds ({ds.rounds})"
        )
    if pc.n_classes != ds.n_classes:
        raise ConfigError(
            f"predictor.n_classes ({pc.n_classes}) must equal dataset.n_classes ({ds.n_classes})"
        )
    if cfg.sample.relative_bits != (tc.target_mode == "relative"):
        raise ConfigError(
            f"sample.relative_bits ({cfg.sample.relative_bits}) must match "
            f"train.target_mode ({tc.target_mode!r}): flip decoding needs a flip-trained model"
        )


def experiment_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("experiment config must be a JSON object")
    known = {"dataset", "predictor", "train", "sample", "schedule", "seed", "out_dir"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for section in ("dataset", "predictor", "train", "sample"):
        if section not in doc:
            raise ConfigError(f"missing required section {section!r}")

    schedule = None
    if doc.get("schedule") is not None:
        schedule = _build(ScheduleConfig, doc["schedule"], "schedule")
    cfg = ExperimentConfig(
        dataset=_build(DatasetSpec, doc["dataset"], "dataset"),
        predictor=_build(PredictorConfig, doc["predictor"], "predictor"),
        train=_build(TrainConfig, doc["train"], "train"),
        sample=_build_sample(doc["sample"], schedule),
        schedule=schedule,
        seed=int(doc.get("seed", 0)),
        out_dir=doc.get("out_dir"),
    )
    _cross_validate(cfg)
    return cfg


def experiment_to_dict(cfg: ExperimentConfig) -> dict:
    sample = asdict(cfg.sample)
    spec = cfg.sample.schedule
    sample["schedule"] = (
        {"kind": "fixed", "steps": spec.steps} if spec.kind == "fixed" else {"kind": "adaptive"}
    )
    return {
        "dataset": asdict(cfg.dataset),
        "predictor": asdict(cfg.predictor),
        "train": asdict(cfg.train),
        "sample": sample,
        "schedule": asdict(cfg.schedule) if cfg.schedule else None,
        "seed": cfg.seed,
        "out_dir": cfg.out_dir,
    }


def load_experiment(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return experiment_from_dict(doc)
