"""Generation loops over trained predictors.

Refine mode re-predicts every token each step: a fresh selection map at the
scheduled ratio decides which drawn tokens stay visible, everything else is
random filler, and the model's new sample replaces the whole drawing.  That
one mechanism fills blank positions, keeps good tokens, refines changed ones
and erases deselected ones.

Mask mode is the frozen-token baseline: the selection only ever grows, and a
position committed once never changes, so its traces contain no refine or
erase transitions by construction.

Schedules are either fixed-length (ratio (t+1)/T) or entropy-adaptive: after
the warm-up steps the normalized entropy of the latest prediction fixes how
many refinement steps the sample deserves, clamped to the configured window.
Classifier-free guidance runs two forward passes (condition and null) on the
steps where the ratio has entered the guidance interval and extrapolates in
logit space.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, NumericError
from .numerics import Rng, softmax
from .predictor import PredictorParams, apply_cfg, forward, sample_tokens
from .refine import (
    ScheduleConfig,
    adaptive_ratio,
    adaptive_total_steps,
    classify_transitions,
    compose_state,
    fixed_schedule,
    make_selection_map,
    mean_entropy,
)
from .util import worker_count

__all__ = [
    "ScheduleSpec",
    "SampleConfig",
    "StepRecord",
    "SampleTrace",
    "DECODING_PRESETS",
    "sample",
    "sample_mask_mode",
    "select_by_confidence",
    "relative_bit_decode",
    "batch_sample",
]

TRACE_COLUMNS = (
    "step",
    "ratio",
    "entropy",
    "filled",
    "kept",
    "refined",
    "erased",
    "blank",
    "cfg_active",
)


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str  # "fixed" | "adaptive"
    steps: int | None = None
    adaptive: ScheduleConfig | None = None

    def __post_init__(self):
        if self.kind == "fixed":
            if self.steps is None or self.steps < 1:
                raise ConfigError(f"fixed schedule needs steps >= 1, got {self.steps}")
        elif self.kind == "adaptive":
            if self.adaptive is None:
                raise ConfigError("adaptive schedule needs its ScheduleConfig")
        else:
            raise ConfigError(f"schedule kind must be 'fixed' or 'adaptive', got {self.kind!r}")


@dataclass(frozen=True)
class SampleConfig:
    schedule: ScheduleSpec
    mode: str = "refine"  # "refine" | "mask"
    selection: str = "random"  # "random" | "confidence"
    guidance_scale: float | None = None
    guidance_start: float = 0.0  # guidance active iff ratio >= this (interval [start, 1])
    temperature: float = 1.0
    relative_bits: bool = False

    def __post_init__(self):
        if self.mode not in ("refine", "mask"):
            raise ConfigError(f"mode must be 'refine' or 'mask', got {self.mode!r}")
        if self.selection not in ("random", "confidence"):
            raise ConfigError(f"selection must be 'random' or 'confidence', got {self.selection!r}")
        if not 0.0 <= self.guidance_start <= 1.0:
            raise ConfigError(f"guidance_start must lie in [0, 1], got {self.guidance_start}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.guidance_scale is not None and self.guidance_scale < 0:
            raise ConfigError(f"guidance_scale must be >= 0, got {self.guidance_scale}")


# Decoding presets from the tuned model variants (guidance scale, guidance
# interval start on the ratio, and sampling temperature).  "mask-B" is the
# separately tuned frozen-token baseline.
DECODING_PRESETS: dict[str, dict[str, float]] = {
    "ind-B": {"guidance_scale": 2.4, "guidance_start": 0.40, "temperature": 1.33},
    "bit-B": {"guidance_scale": 2.4, "guidance_start": 0.44, "temperature": 1.23},
    "ind-L": {"guidance_scale": 2.0, "guidance_start": 0.40, "temperature": 1.30},
    "bit-L": {"guidance_scale": 1.9, "guidance_start": 0.45, "temperature": 1.20},
    "mask-B": {"guidance_scale": 8.0, "guidance_start": 0.00, "temperature": 0.50},
}


@dataclass
class StepRecord:
    step: int
    ratio: float
    entropy: float
    filled: int
    kept: int
    refined: int
    erased: int
    blank: int
    cfg_active: bool
    forwards: int

    def row(self) -> list:
        return [
            self.step,
            f"{self.ratio:.10g}",
            f"{self.entropy:.10g}",
            self.filled,
            self.kept,
            self.refined,
            self.erased,
            self.blank,
            int(self.cfg_active),
        ]


@dataclass
class SampleTrace:
    steps: list[StepRecord] = field(default_factory=list)
    tokens: np.ndarray | None = None
    total_steps: int = 0
    frozen_entropy: float | None = None

    @property
    def ratios(self) -> list[float]:
        return [s.ratio for s in self.steps]

    def transition_totals(self) -> dict[str, int]:
        totals = {k: 0 for k in ("filled", "kept", "refined", "erased", "blank")}
        for s in self.steps:
            for k in totals:
                totals[k] += getattr(s, k)
        return totals


def select_by_confidence(probs: np.ndarray, drawing: np.ndarray, ratio: float) -> np.ndarray:
    """Mark the ceil(ratio*N) tokens whose drawn value has highest probability.

    Ties break toward the lowest flat index, so the result is deterministic.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must lie in [0, 1], got {ratio}")
    conf = np.take_along_axis(np.asarray(probs), drawing[..., None], axis=-1)[..., 0]
    n = drawing.size
    k = math.ceil(ratio * n)
    selection = np.zeros(n, dtype=bool)
    if k > 0:
        order = np.argsort(-conf.reshape(-1), kind="stable")
        selection[order[:k]] = True
    return selection.reshape(drawing.shape)


def relative_bit_decode(state: np.ndarray, flips: np.ndarray) -> np.ndarray:
    """Apply a predicted flip mask to a binary token map (XOR)."""
    state = np.asarray(state)
    flips = np.asarray(flips)
    if state.shape != flips.shape:
        raise ValueError(f"shape mismatch: {state.shape} vs {flips.shape}")
    for name, arr in (("state", state), ("flips", flips)):
        if arr.size and (arr.min() < 0 or arr.max() > 1):
            raise ValueError(f"{name} is not in bit layout (values outside {{0,1}})")
    return state ^ flips


def _check_params(params: PredictorParams) -> None:
    for key, tensor in params.tensors.items():
        if not np.all(np.isfinite(tensor)):
            raise NumericError(f"cannot sample: non-finite values in parameter {key!r}")


def _guided_logits(params, state, cond, cfg: SampleConfig, active: bool):
    logits = forward(params, state, cond)
    forwards = 1
    if active:
        null_logits = forward(params, state, None)
        logits = apply_cfg(logits, null_logits, cfg.guidance_scale)
        forwards = 2
    return logits, forwards


def _ratio_stream(cfg: SampleConfig):
    """Yield (step_index, ratio); adaptive length is fixed via send(entropy)."""
    sched = cfg.schedule
    if sched.kind == "fixed":
        total = sched.steps
        for t in range(total):
            yield t + 1, fixed_schedule(t, total)
        return
    acfg = sched.adaptive
    entropy = None
    step = 1
    while True:
        if entropy is None:
            ratio = adaptive_ratio(min(step, acfg.warmup_steps), 0.0, acfg)
            if step >= acfg.warmup_steps:
                entropy = yield step, ratio  # caller sends the frozen entropy
                step += 1
                continue
        else:
            total, _ = adaptive_total_steps(entropy, acfg)
            if step > total:
                return
            ratio = adaptive_ratio(step, entropy, acfg)
        yield step, ratio
        step += 1


def sample(params: PredictorParams, cond, cfg: SampleConfig, rng: Rng):
    """Generate one token map; returns (tokens [n_pos, channels], trace)."""
    if cfg.mode == "mask":
        return sample_mask_mode(params, cond, cfg, rng)
    _check_params(params)
    pc = params.config
    shape = (pc.n_pos, pc.channels)

    y_rand = rng.integers(pc.vocab, shape)
    drawing = y_rand.copy()
    prev_sel = np.zeros(shape, dtype=bool)
    prev_drawing = drawing
    prev_probs: np.ndarray | None = None

    trace = SampleTrace()
    sched = cfg.schedule
    adaptive = sched.kind == "adaptive"
    frozen_entropy: float | None = None

    stream = _ratio_stream(cfg)
    item = next(stream)
    while True:
        step, ratio = item
        if cfg.selection == "confidence" and prev_probs is not None:
            selection = select_by_confidence(prev_probs, drawing, ratio)
        else:
            selection = make_selection_map(shape, ratio, rng)
        state = compose_state(selection, drawing, y_rand)

        active = cfg.guidance_scale is not None and ratio >= cfg.guidance_start
        logits, forwards = _guided_logits(params, state, cond, cfg, active)
        probs = softmax(logits)
        entropy = mean_entropy(probs)

        sampled = sample_tokens(logits, cfg.temperature, rng)
        new_drawing = relative_bit_decode(state, sampled) if cfg.relative_bits else sampled

        counts = classify_transitions(prev_sel, selection, prev_drawing, drawing)
        trace.steps.append(
            StepRecord(step=step, ratio=ratio, entropy=entropy, cfg_active=active,
                       forwards=forwards, **counts)
        )

        prev_sel, prev_drawing = selection, drawing
        drawing = new_drawing
        prev_probs = probs

        if adaptive and frozen_entropy is None and step >= sched.adaptive.warmup_steps:
            frozen_entropy = entropy
            item = stream.send(frozen_entropy)
            continue
        try:
            item = next(stream)
        except StopIteration:
            break

    trace.tokens = drawing
    trace.total_steps = len(trace.steps)
    trace.frozen_entropy = frozen_entropy
    return drawing, trace


def sample_mask_mode(params: PredictorParams, cond, cfg: SampleConfig, rng: Rng):
    """Frozen-token generation: committed positions never change.

    The selection grows by fresh uniform picks among uncommitted positions up
    to the scheduled ratio; newly selected positions adopt the current
    prediction and are then fixed for the rest of the trajectory.
    """
    _check_params(params)
    pc = params.config
    shape = (pc.n_pos, pc.channels)

    y_rand = rng.integers(pc.vocab, shape)
    drawing = y_rand.copy()
    committed = np.zeros(shape, dtype=bool)
    prev_committed = committed
    prev_drawing = drawing

    trace = SampleTrace()
    sched = cfg.schedule
    adaptive = sched.kind == "adaptive"
    frozen_entropy: float | None = None

    stream = _ratio_stream(cfg)
    item = next(stream)
    while True:
        step, ratio = item
        state = compose_state(committed, drawing, y_rand)
        active = cfg.guidance_scale is not None and ratio >= cfg.guidance_start
        logits, forwards = _guided_logits(params, state, cond, cfg, active)
        probs = softmax(logits)
        entropy = mean_entropy(probs)
        sampled = sample_tokens(logits, cfg.temperature, rng)
        if cfg.relative_bits:
            sampled = relative_bit_decode(state, sampled)

        frac = float(committed.mean())
        if ratio <= frac or frac >= 1.0:
            grow = np.zeros(shape, dtype=bool)
        else:
            p_add = (ratio - frac) / (1.0 - frac)
            grow = ~committed & (rng.uniform(shape) < p_add)
        drawing = np.where(committed, drawing, sampled)
        committed = committed | grow

        counts = classify_transitions(prev_committed, committed, prev_drawing, drawing)
        trace.steps.append(
            StepRecord(step=step, ratio=ratio, entropy=entropy, cfg_active=active,
                       forwards=forwards, **counts)
        )
        prev_committed, prev_drawing = committed, drawing

        if adaptive and frozen_entropy is None and step >= sched.adaptive.warmup_steps:
            frozen_entropy = entropy
            item = stream.send(frozen_entropy)
            continue
        try:
            item = next(stream)
        except StopIteration:
            break

    trace.tokens = drawing
    trace.total_steps = len(trace.steps)
    trace.frozen_entropy = frozen_entropy
    return drawing, trace


def batch_sample(params: PredictorParams, conds, cfg: SampleConfig, seed: int):
    """Independent trajectories, one split stream each; order-independent."""
    _check_params(params)
    streams = Rng(seed).split(len(conds))
    results: list = [None] * len(conds)

    def run(i: int):
        return sample(params, conds[i], cfg, streams[i])

    workers = min(worker_count(), max(1, len(conds)))
    if workers <= 1:
        for i in range(len(conds)):
            results[i] = run(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for i, res in enumerate(pool.map(run, range(len(conds)))):
                results[i] = res
    return results
