"""Command-line harness: dataset building, training, sampling, evaluation,
ablation suites and schedule inspection.

Every command is deterministic under a fixed --seed; result files are
byte-identical across runs except the wall-clock columns of the training log,
which live in their own columns precisely so the rest stays comparable.
Exit codes: 0 success, 2 configuration error, 3 numeric abort, 4 I/O or
data-format error.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import hbq, metrics, sampler, synthdata, trainer
from .config import ExperimentConfig, experiment_to_dict, load_experiment
from .errors import ConfigError, DataFormatError, NumericError
from .numerics import Rng
from .predictor import PredictorParams
from .refine import ScheduleConfig, adaptive_ratio, adaptive_total_steps
from .sampler import SampleConfig, SampleTrace, ScheduleSpec
from .schemas import csv_columns, validate_json


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.10g}"
    return str(x)


def _write_csv(path: Path | None, columns, rows) -> None:
    out = open(path, "w", newline="") if path is not None else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    finally:
        if path is not None:
            out.close()


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, default=_json_default) + "\n")


def _load_params(cfg: ExperimentConfig, checkpoint: str) -> PredictorParams:
    params, _ = trainer.load_checkpoint(checkpoint, expected_config=cfg.predictor)
    return params


def _dataset_for(cfg: ExperimentConfig, data_dir: str | None) -> synthdata.Dataset:
    if data_dir is not None:
        ds = synthdata.load_dataset(data_dir)
        if ds.spec != cfg.dataset:
            raise ConfigError(
                f"dataset at {data_dir} was built from a different spec than config.dataset"
            )
        return ds
    return synthdata.build_dataset(cfg.dataset)


def _trace_rows(trace: SampleTrace):
    return [rec.row() for rec in trace.steps]


def _trace_summary(trace: SampleTrace, index: int, class_id, accuracy=None, exact=None, tokens_file=None):
    doc = {
        "sample_index": index,
        "class_id": class_id,
        "total_steps": trace.total_steps,
        "final_ratio": trace.steps[-1].ratio,
        "frozen_entropy": trace.frozen_entropy,
        "mean_entropy": float(np.mean([s.entropy for s in trace.steps])),
        "cfg_active_steps": sum(1 for s in trace.steps if s.cfg_active),
        "transition_totals": trace.transition_totals(),
        "token_accuracy": accuracy,
        "exact_recovery": exact,
        "tokens_file": tokens_file,
    }
    validate_json("trace_summary", doc)
    return doc


@click.group()
def cli():
    """Quantization codec and refinement-sampling experiment harness."""


@cli.command("quantize-demo")
@click.option("--m", "rounds", type=click.IntRange(1, hbq.MAX_ROUNDS), default=8, show_default=True)
@click.option("--samples", type=click.IntRange(1), default=200_000, show_default=True)
@click.option("--truncate", is_flag=True, help="Reconstruct truncations of one M-round pass instead of re-quantizing per m.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Directory for quantize_demo.csv (stdout when omitted).")
def cmd_quantize_demo(rounds, samples, truncate, seed, out):
    """Sweep reconstruction error against the number of quantization rounds."""
    rng = Rng(seed)
    bound = 1.0 - 2.0**-20
    values = np.clip(rng.uniform((samples,)) * 2.0 - 1.0, -bound, bound)
    rows = []
    if truncate:
        planes = hbq.quantize(values, rounds)
        for m in range(1, rounds + 1):
            err = np.abs(values - hbq.dequantize_truncated(planes, m))
            rows.append([m, err.max(), err.mean()])
    else:
        for m in range(1, rounds + 1):
            err = np.abs(values - hbq.dequantize(hbq.quantize(values, m)))
            rows.append([m, err.max(), err.mean()])
    path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "quantize_demo.csv"
    _write_csv(path, csv_columns("quantize_demo"), rows)


@cli.command("build-data")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the dataset seed.")
@click.option("--out", type=click.Path(path_type=Path), required=True)
def cmd_build_data(config_path, seed, out):
    """Generate, quantize and persist the configured dataset."""
    cfg = load_experiment(config_path)
    spec = cfg.dataset if seed is None else replace(cfg.dataset, seed=seed)
    dataset = synthdata.build_dataset(spec)
    out.mkdir(parents=True, exist_ok=True)
    synthdata.save_dataset(dataset, out)
    manifest = json.loads((out / "manifest.json").read_text())
    validate_json("manifest", manifest)
    click.echo(f"wrote {len(dataset)} records to {out}")


@cli.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", type=click.Path(exists=True), default=None, help="Previously built dataset directory (defaults to building in memory).")
@click.option("--seed", type=int, default=None, help="Override the training seed.")
@click.option("--out", type=click.Path(path_type=Path), required=True)
def cmd_train(config_path, data_dir, seed, out):
    """Train the predictor and write logs plus checkpoints."""
    cfg = load_experiment(config_path)
    train_cfg = cfg.train if seed is None else replace(cfg.train, seed=seed)
    dataset = _dataset_for(cfg, data_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "experiment_config.json", experiment_to_dict(cfg))
    _, history = trainer.train(dataset, cfg.predictor, train_cfg, out_dir=out)
    click.echo(f"final loss {history[-1]:.4f} nats after {len(history)} steps -> {out}")


def _resolved_sample_config(cfg: ExperimentConfig, schedule: str | None, steps: int | None) -> SampleConfig:
    sample_cfg = cfg.sample
    if schedule == "fixed":
        sample_cfg = replace(sample_cfg, schedule=ScheduleSpec(kind="fixed", steps=steps or 50))
    elif schedule == "adaptive":
        if cfg.schedule is None:
            raise ConfigError("--schedule adaptive needs a 'schedule' section in the config")
        sample_cfg = replace(sample_cfg, schedule=ScheduleSpec(kind="adaptive", adaptive=cfg.schedule))
    elif steps is not None:
        if sample_cfg.schedule.kind != "fixed":
            raise ConfigError("--steps only applies to fixed schedules (pass --schedule fixed)")
        sample_cfg = replace(sample_cfg, schedule=ScheduleSpec(kind="fixed", steps=steps))
    return sample_cfg


@cli.command("sample")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--n", "n_samples", type=click.IntRange(1), default=8, show_default=True)
@click.option("--class-id", "class_ids", type=int, multiple=True, help="Condition classes (default: round-robin over all).")
@click.option("--schedule", type=click.Choice(["fixed", "adaptive"]), default=None, help="Override the configured schedule kind.")
@click.option("--steps", type=click.IntRange(1), default=None, help="Fixed-schedule step count override.")
@click.option("--no-reference", is_flag=True, help="Skip accuracy against the dataset references.")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def cmd_sample(config_path, checkpoint, n_samples, class_ids, schedule, steps, no_reference, seed, out):
    """Generate token maps; writes tokens, per-trajectory traces and summaries."""
    cfg = load_experiment(config_path)
    params = _load_params(cfg, checkpoint)
    sample_cfg = _resolved_sample_config(cfg, schedule, steps)
    run_seed = cfg.seed if seed is None else seed

    if class_ids:
        conds = [cid % cfg.dataset.n_classes for cid in class_ids]
        if len(conds) == 1:
            conds = conds * n_samples
    else:
        conds = [i % cfg.dataset.n_classes for i in range(n_samples)]

    references = None
    if not no_reference:
        references = synthdata.build_dataset(cfg.dataset).class_references(cfg.train.variant)

    results = sampler.batch_sample(params, conds, sample_cfg, run_seed)

    for sub in ("tokens", "traces", "summaries"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for i, (tokens, trace) in enumerate(results):
        tokens_file = f"tokens/sample_{i:05d}.hbq"
        planes = metrics.tokens_to_planes(tokens, cfg.dataset, cfg.train.variant)
        hbq.save_bitplanes(planes, out / tokens_file)
        _write_csv(out / "traces" / f"trace_{i:05d}.csv", csv_columns("trace"), _trace_rows(trace))
        accuracy = exact = None
        if references is not None:
            accuracy, _ = metrics.best_match(tokens, references[conds[i]])
            exact = bool(accuracy == 1.0)
        _write_json(
            out / "summaries" / f"summary_{i:05d}.json",
            _trace_summary(trace, i, conds[i], accuracy, exact, tokens_file),
        )
    click.echo(f"wrote {len(results)} samples to {out}")


def _eval_run(cfg, params, sample_cfg, n_per_class, run_seed, with_reference):
    dataset = synthdata.build_dataset(cfg.dataset)
    references = dataset.class_references(cfg.train.variant) if with_reference else None
    conds = [c for c in range(cfg.dataset.n_classes) for _ in range(n_per_class)]
    results = sampler.batch_sample(params, conds, sample_cfg, run_seed)

    per_class = []
    all_steps = []
    all_acc = []
    all_exact = []
    all_mse = []
    for c in range(cfg.dataset.n_classes):
        rows = [(tok, tr) for cond, (tok, tr) in zip(conds, results) if cond == c]
        steps = [tr.total_steps for _, tr in rows]
        entropies = [
            tr.frozen_entropy if tr.frozen_entropy is not None
            else float(np.mean([s.entropy for s in tr.steps]))
            for _, tr in rows
        ]
        entry = {
            "class_id": c,
            "n_samples": len(rows),
            "mean_steps": float(np.mean(steps)),
            "mean_entropy": float(np.mean(entropies)),
            "step_histogram": {str(k): v for k, v in metrics.step_histogram(steps).items()},
        }
        if references is not None:
            accs, exacts, mses = [], [], []
            for tok, _ in rows:
                acc, best = metrics.best_match(tok, references[c])
                accs.append(acc)
                exacts.append(acc == 1.0)
                mses.append(metrics.reconstruction_mse(tok, references[c][best], cfg.dataset, cfg.train.variant))
            entry["accuracy_mean"] = float(np.mean(accs))
            entry["exact_recovery_rate"] = float(np.mean(exacts))
            entry["reconstruction_mse"] = float(np.mean(mses))
            all_acc.extend(accs)
            all_exact.extend(exacts)
            all_mse.extend(mses)
        per_class.append(entry)
        all_steps.extend(steps)

    summary = {
        "n_samples": len(results),
        "mean_steps": float(np.mean(all_steps)),
        "step_histogram": {str(k): v for k, v in metrics.step_histogram(all_steps).items()},
        "per_class": per_class,
    }
    if references is not None:
        summary["accuracy_mean"] = float(np.mean(all_acc))
        summary["exact_recovery_rate"] = float(np.mean(all_exact))
        summary["reconstruction_mse_mean"] = float(np.mean(all_mse))
    validate_json("eval_summary", summary)
    return summary


@cli.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--n-per-class", type=click.IntRange(1), default=8, show_default=True)
@click.option("--schedule", type=click.Choice(["fixed", "adaptive"]), default=None)
@click.option("--steps", type=click.IntRange(1), default=None)
@click.option("--no-reference", is_flag=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def cmd_eval(config_path, checkpoint, n_per_class, schedule, steps, no_reference, seed, out):
    """Sample per class and report accuracy, recovery, steps and entropy."""
    cfg = load_experiment(config_path)
    params = _load_params(cfg, checkpoint)
    sample_cfg = _resolved_sample_config(cfg, schedule, steps)
    run_seed = cfg.seed if seed is None else seed
    summary = _eval_run(cfg, params, sample_cfg, n_per_class, run_seed, not no_reference)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "eval_summary.json", summary)
    rows = [
        [
            e["class_id"],
            e["n_samples"],
            e.get("accuracy_mean", ""),
            e.get("exact_recovery_rate", ""),
            e["mean_steps"],
            e["mean_entropy"],
            e.get("reconstruction_mse", ""),
        ]
        for e in summary["per_class"]
    ]
    _write_csv(out / "eval_per_class.csv", csv_columns("eval_per_class"), rows)
    click.echo(f"evaluated {summary['n_samples']} samples -> {out}")


def _paired_accuracy(cfg, params, sample_cfg, n_per_class, seeds):
    """Per-seed mean accuracy and step count for one decoding arm."""
    dataset = synthdata.build_dataset(cfg.dataset)
    references = dataset.class_references(cfg.train.variant)
    conds = [c for c in range(cfg.dataset.n_classes) for _ in range(n_per_class)]
    acc_per_seed, steps_per_seed = [], []
    totals = {k: 0 for k in ("filled", "kept", "refined", "erased", "blank")}
    for seed in seeds:
        results = sampler.batch_sample(params, conds, sample_cfg, seed)
        accs = [metrics.best_match(tok, references[c])[0] for c, (tok, _) in zip(conds, results)]
        acc_per_seed.append(float(np.mean(accs)))
        steps_per_seed.append(float(np.mean([tr.total_steps for _, tr in results])))
        for _, tr in results:
            for k, v in tr.transition_totals().items():
                totals[k] += v
    return acc_per_seed, steps_per_seed, totals


def _arm_entry(name, accs, steps, totals):
    return {
        "arm": name,
        "accuracy_mean": float(np.mean(accs)),
        "accuracy_std": float(np.std(accs)),
        "mean_steps": float(np.mean(steps)),
        "transition_totals": totals,
    }


@cli.command("ablate")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", type=click.Path(exists=True), default=None, help="Trained model (unused by the relbits suite, which trains its own).")
@click.option("--suite", type=click.Choice(["mask", "confidence", "relbits"]), required=True)
@click.option("--n-seeds", type=click.IntRange(1), default=5, show_default=True)
@click.option("--n-per-class", type=click.IntRange(1), default=4, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def cmd_ablate(config_path, checkpoint, suite, n_seeds, n_per_class, seed, out):
    """Matched-seed paired comparisons for the ablation suites."""
    cfg = load_experiment(config_path)
    base_seed = cfg.seed if seed is None else seed
    seeds = [base_seed + i for i in range(n_seeds)]
    sample_cfg = cfg.sample

    arms = []
    if suite in ("mask", "confidence"):
        if checkpoint is None:
            raise ConfigError(f"suite {suite!r} needs --checkpoint")
        params = _load_params(cfg, checkpoint)
        if suite == "mask":
            variants = [("refine", replace(sample_cfg, mode="refine")),
                        ("mask", replace(sample_cfg, mode="mask"))]
        else:
            variants = [("random", replace(sample_cfg, selection="random")),
                        ("confidence", replace(sample_cfg, selection="confidence"))]
        for name, arm_cfg in variants:
            accs, steps, totals = _paired_accuracy(cfg, params, arm_cfg, n_per_class, seeds)
            arms.append(_arm_entry(name, accs, steps, totals))
    else:  # relbits: train one model per target mode, then compare decoding
        dataset = synthdata.build_dataset(cfg.dataset)
        for name, target_mode in (("absolute", "absolute"), ("relative", "relative")):
            train_cfg = replace(cfg.train, target_mode=target_mode)
            params, _ = trainer.train(dataset, cfg.predictor, train_cfg)
            arm_cfg = replace(sample_cfg, relative_bits=(target_mode == "relative"))
            accs, steps, totals = _paired_accuracy(cfg, params, arm_cfg, n_per_class, seeds)
            arms.append(_arm_entry(name, accs, steps, totals))

    summary = {"suite": suite, "n_seeds": n_seeds, "arms": arms}
    validate_json("ablate_summary", summary)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "ablate_summary.json", summary)
    rows = [
        [suite, a["arm"], a["accuracy_mean"], a["accuracy_std"], a["mean_steps"], n_seeds]
        for a in arms
    ]
    _write_csv(out / f"ablate_{suite}.csv", csv_columns("ablate"), rows)
    click.echo(
        " | ".join(f"{a['arm']}: acc {a['accuracy_mean']:.4f} +/- {a['accuracy_std']:.4f}" for a in arms)
    )


@cli.command("schedule")
@click.option("--k", "entropy_gain", type=float, required=True, help="Entropy gain of the step allocator.")
@click.option("--b", "step_bias", type=float, required=True, help="Step-count bias.")
@click.option("--tmin", type=click.IntRange(1), default=20, show_default=True)
@click.option("--tmax", type=click.IntRange(1), default=50, show_default=True)
@click.option("--t0", "warmup_steps", type=click.IntRange(0), default=5, show_default=True)
@click.option("--alpha", "warmup_denom", type=click.IntRange(1), default=50, show_default=True)
@click.option("--h", "entropy", type=click.FloatRange(0.0, 1.0), default=None, help="Single normalized entropy to expand into a ratio curve.")
@click.option("--sweep", is_flag=True, help="Tabulate total steps over entropies 0, 0.05, ..., 1.")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="CSV file (stdout when omitted).")
def cmd_schedule(entropy_gain, step_bias, tmin, tmax, warmup_steps, warmup_denom, entropy, sweep, out):
    """Inspect the entropy-adaptive step schedule."""
    cfg = ScheduleConfig(
        entropy_gain=entropy_gain,
        step_bias=step_bias,
        min_steps=tmin,
        max_steps=tmax,
        warmup_steps=warmup_steps,
        warmup_denom=warmup_denom,
    )
    if sweep == (entropy is not None):
        raise ConfigError("pass exactly one of --h or --sweep")
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
    if sweep:
        rows = []
        for h in np.round(np.arange(0.0, 1.0001, 0.05), 2):
            total, post = adaptive_total_steps(float(h), cfg)
            rows.append([float(h), post, total])
        _write_csv(out, csv_columns("schedule_sweep"), rows)
    else:
        total, post = adaptive_total_steps(entropy, cfg)
        rows = [
            [entropy, post, total, t, adaptive_ratio(t, entropy, cfg)]
            for t in range(1, total + 1)
        ]
        _write_csv(out, csv_columns("schedule_curve"), rows)


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except NumericError as exc:
        click.echo(f"numeric abort: {exc}", err=True)
        sys.exit(3)
    except (DataFormatError, OSError) as exc:
        click.echo(f"i/o error: {exc}", err=True)
        sys.exit(4)
    sys.exit(0)


if __name__ == "__main__":
    main()
