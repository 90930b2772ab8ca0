"""Training loop for the refinement predictor.

Each step draws a per-element selection ratio uniformly from [0, 1], mixes
ground-truth tokens with uniform random tokens at that ratio, and trains the
model to recover the full ground truth (or, in relative mode, the flip mask
``input != ground truth``) with cross-entropy.  Conditions are independently
replaced by the null class with the configured probability so the sampler can
apply classifier-free guidance later.

The optimizer is adaptive-moment gradient descent with the usual moment
coefficients, a constant learning rate, no weight decay, and optional global
gradient-norm clipping.
"""

from __future__ import annotations

import csv
import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, NumericError
from .numerics import Rng
from .predictor import PredictorConfig, PredictorParams, backward, init_params
from .refine import compose_state, make_selection_map

__all__ = [
    "TrainConfig",
    "AdamState",
    "sample_lt",
    "make_training_input",
    "training_step",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

TRAIN_LOG_COLUMNS = ("step", "loss_nats", "lr", "tokens_per_sec", "wallclock_s")

CKPT_MAGIC = b"GRNCKPT1"
CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    variant: str  # "ind" | "bit"
    steps: int
    batch_size: int
    learning_rate: float
    target_mode: str = "absolute"  # "absolute" | "relative"
    cond_drop_prob: float = 0.1
    seed: int = 0
    eval_every: int = 500
    grad_clip: float | None = 1.0

    def __post_init__(self):
        if self.variant not in ("ind", "bit"):
            raise ConfigError(f"variant must be 'ind' or 'bit', got {self.variant!r}")
        if self.target_mode not in ("absolute", "relative"):
            raise ConfigError(f"target_mode must be 'absolute' or 'relative', got {self.target_mode!r}")
        if self.target_mode == "relative" and self.variant != "bit":
            raise ConfigError("target_mode (relative) requires variant (bit): flips are XOR masks over bits")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.cond_drop_prob <= 1.0:
            raise ConfigError(f"cond_drop_prob must lie in [0, 1], got {self.cond_drop_prob}")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be positive")


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: PredictorParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(t) for k, t in params.tensors.items()},
            v={k: np.zeros_like(t) for k, t in params.tensors.items()},
        )


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g.astype(np.float64))))
    norm = np.sqrt(total)
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor


def adam_update(
    params: PredictorParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    state.step += 1
    t = state.step
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    for key, tensor in params.tensors.items():
        g = grads[key]
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        tensor -= (lr * (m / correction1) / (np.sqrt(v / correction2) + eps)).astype(tensor.dtype)


def sample_lt(rng: Rng) -> float:
    """One selection ratio drawn uniformly from [0, 1]."""
    return float(rng.uniform(()))


def make_training_input(y_gt: np.ndarray, ratio: float, rng: Rng, vocab: int):
    """Mix ground truth with uniform random tokens at the given ratio.

    Returns (input_map, selection, random_map); both draws are independent
    across every spatial/temporal/channel element.
    """
    y_rand = rng.integers(vocab, y_gt.shape)
    selection = make_selection_map(y_gt.shape, ratio, rng)
    return compose_state(selection, y_gt, y_rand), selection, y_rand


def training_step(
    params: PredictorParams,
    y_gt: np.ndarray,
    cond: np.ndarray,
    cfg: TrainConfig,
    rng: Rng,
    opt_state: AdamState,
) -> float:
    """One optimizer update on a batch; mutates params and opt_state.

    Randomness is consumed in a fixed order (ratios, random maps, selections,
    condition drops) so runs replay exactly from the seed.
    """
    vocab = params.config.vocab
    b = y_gt.shape[0]
    ratios = rng.uniform((b,))
    y_rand = rng.integers(vocab, y_gt.shape)
    selection = rng.uniform(y_gt.shape) < ratios[:, None, None]
    f_t = np.where(selection, y_gt, y_rand)
    dropped = rng.uniform((b,)) < cfg.cond_drop_prob
    cond_used = np.where(dropped, params.config.null_class, cond)

    if cfg.target_mode == "relative":
        targets = (f_t != y_gt).astype(np.int64)
    else:
        targets = y_gt

    loss, grads = backward(params, f_t, cond_used, targets)
    if not np.isfinite(loss):
        raise NumericError(f"training aborted: non-finite loss at optimizer step {opt_state.step + 1}")
    if cfg.grad_clip is not None:
        _clip_grads(grads, cfg.grad_clip)
    adam_update(params, grads, opt_state, cfg.learning_rate)
    return loss


def train(
    dataset,
    predictor_cfg: PredictorConfig,
    train_cfg: TrainConfig,
    out_dir: str | Path | None = None,
    log_every: int = 50,
    params: PredictorParams | None = None,
):
    """Run the full loop over a dataset; returns (params, loss history).

    When ``out_dir`` is given, appends a CSV log and writes checkpoints every
    ``eval_every`` steps plus a final one at exit.  Batch classes are sampled
    uniformly; multi-map classes pick a record uniformly as well.
    """
    maps, classes = dataset.token_maps(train_cfg.variant)
    by_class = [np.flatnonzero(classes == c) for c in range(dataset.spec.n_classes)]
    if any(len(idx) == 0 for idx in by_class):
        raise ConfigError("every class needs at least one record to train on")

    rng = Rng(train_cfg.seed)
    init_rng, batch_rng, step_rng = rng.split(3)
    if params is None:
        params = init_params(predictor_cfg, init_rng)
    opt_state = AdamState.for_params(params)

    out_path = Path(out_dir) if out_dir is not None else None
    log_file = None
    writer = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_file = open(out_path / "train_log.csv", "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(TRAIN_LOG_COLUMNS)

    history: list[float] = []
    t_start = time.perf_counter()
    tokens_per_step = train_cfg.batch_size * predictor_cfg.n_pos * predictor_cfg.channels
    try:
        for step in range(1, train_cfg.steps + 1):
            class_ids = batch_rng.integers(dataset.spec.n_classes, (train_cfg.batch_size,))
            record_ids = np.array(
                [by_class[c][batch_rng.integers(len(by_class[c]))] for c in class_ids]
            )
            y_gt = maps[record_ids]
            loss = training_step(params, y_gt, class_ids, train_cfg, step_rng, opt_state)
            history.append(loss)

            if writer is not None and (step % log_every == 0 or step == train_cfg.steps):
                elapsed = time.perf_counter() - t_start
                writer.writerow(
                    [
                        step,
                        f"{loss:.6f}",
                        f"{train_cfg.learning_rate:g}",
                        f"{tokens_per_step * step / elapsed:.1f}",
                        f"{elapsed:.3f}",
                    ]
                )
                log_file.flush()
            if out_path is not None and train_cfg.eval_every > 0 and step % train_cfg.eval_every == 0:
                save_checkpoint(out_path / f"checkpoint_{step:07d}.ckpt", params, train_cfg)
    finally:
        if log_file is not None:
            log_file.close()
    if out_path is not None:
        save_checkpoint(out_path / "checkpoint_final.ckpt", params, train_cfg)
    return params, history


def _config_header(params: PredictorParams, train_cfg: TrainConfig | None) -> dict:
    return {
        "format_version": CKPT_VERSION,
        "predictor_config": asdict(params.config),
        "train_config": asdict(train_cfg) if train_cfg is not None else None,
        "sections": [
            {"name": k, "dtype": t.dtype.str, "shape": list(t.shape)}
            for k, t in params.tensors.items()
        ],
    }


def save_checkpoint(path: str | Path, params: PredictorParams, train_cfg: TrainConfig | None = None) -> None:
    """Write a versioned binary container: header JSON plus named sections.

    Byte-deterministic for identical params (no timestamps; little-endian
    arrays in declaration order).
    """
    header = json.dumps(_config_header(params, train_cfg), sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += CKPT_MAGIC
    blob += struct.pack("<I", len(header))
    blob += header
    for tensor in params.tensors.values():
        arr = np.ascontiguousarray(tensor)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path: str | Path, expected_config: PredictorConfig | None = None):
    """Read a checkpoint back into (params, train config or None).

    A corrupt magic/version raises DataFormatError; a config mismatch against
    ``expected_config`` raises ConfigError naming the differing fields.
    """
    blob = Path(path).read_bytes()
    if blob[:8] != CKPT_MAGIC:
        raise DataFormatError(f"bad checkpoint magic {blob[:8]!r}, expected {CKPT_MAGIC!r}")
    (header_len,) = struct.unpack("<I", blob[8:12])
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format_version") != CKPT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {header.get('format_version')}")

    cfg = PredictorConfig(**header["predictor_config"])
    if expected_config is not None and cfg != expected_config:
        diffs = [
            f"{k}: checkpoint={v} expected={getattr(expected_config, k)}"
            for k, v in asdict(cfg).items()
            if getattr(expected_config, k) != v
        ]
        raise ConfigError("checkpoint config mismatch: " + "; ".join(diffs))

    tensors: dict[str, np.ndarray] = {}
    offset = 12 + header_len
    for section in header["sections"]:
        dtype = np.dtype(section["dtype"])
        shape = tuple(section["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if len(blob) < offset + nbytes:
            raise DataFormatError(
                f"truncated checkpoint: section {section['name']!r} needs {nbytes} bytes at offset {offset}"
            )
        tensors[section["name"]] = (
            np.frombuffer(blob[offset : offset + nbytes], dtype=dtype).reshape(shape).copy()
        )
        offset += nbytes

    train_cfg = TrainConfig(**header["train_config"]) if header["train_config"] else None
    return PredictorParams(cfg, tensors), train_cfg
