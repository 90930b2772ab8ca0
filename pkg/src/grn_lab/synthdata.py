"""Synthetic class-conditional feature maps and their quantized datasets.

Each class owns a smooth structural field over the token grid (sum of
Gaussian bumps or linear gradients, keyed by class id).  Records add
per-record Gaussian noise in feature space: a smooth random field plus a
white component, scaled by the noise level.  Everything is squashed with
``bound_features`` and quantized into bit planes, so a dataset is exactly
what a frozen tokenizer would emit.

Families:
    deterministic  one noise-free map per class (noise level must be 0)
    bumps          Gaussian-bump structure, uniform noise level
    gradients      linear-gradient structure, uniform noise level
    mixed          bump structure with the noise level ramping linearly
                   from 0 (class 0) to ``noise_sigma`` (last class), so the
                   dataset spans low- to high-entropy classes
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .hbq import BitPlanes, bound_features, flatten_bits, load_bitplanes, pack_indices, quantize, save_bitplanes
from .numerics import Rng

__all__ = [
    "DatasetSpec",
    "Dataset",
    "record_rng",
    "generate_feature_map",
    "build_dataset",
    "save_dataset",
    "load_dataset",
    "class_marginal_entropy",
]

FAMILIES = ("deterministic", "bumps", "gradients", "mixed")

MANIFEST_VERSION = 1

# Stream labels keeping structure, noise and any future consumers disjoint.
_STRUCT_STREAM = 101
_RECORD_STREAM = 202


@dataclass(frozen=True)
class DatasetSpec:
    n_classes: int
    maps_per_class: int
    grid: tuple[int, int, int, int]  # (1+T, H/16, W/16, C)
    rounds: int
    noise_sigma: float = 0.0
    family: str = "deterministic"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        if len(self.grid) != 4 or min(self.grid) < 1:
            raise ConfigError(f"grid must be four positive extents, got {self.grid}")
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.family == "deterministic" and self.noise_sigma != 0:
            raise ConfigError("family (deterministic) requires noise_sigma (0)")
        if self.n_classes < 1 or self.maps_per_class < 1 or self.rounds < 1:
            raise ConfigError("n_classes, maps_per_class and rounds must be positive")

    @property
    def n_positions(self) -> int:
        t, h, w, _ = self.grid
        return t * h * w

    @property
    def channels(self) -> int:
        return self.grid[3]

    def class_sigma(self, class_id: int) -> float:
        if self.family != "mixed" or self.n_classes == 1:
            return self.noise_sigma
        return self.noise_sigma * class_id / (self.n_classes - 1)


def record_rng(spec: DatasetSpec, class_id: int, sample_idx: int) -> Rng:
    """Noise stream for one record, keyed by (seed, class, sample index)."""
    return Rng([spec.seed, _RECORD_STREAM, class_id, sample_idx])


def _coords(spec: DatasetSpec):
    t, h, w, _ = spec.grid

    def axis(n):
        return np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)

    return np.meshgrid(axis(t), axis(h), axis(w), indexing="ij")


def _bump_field(tt, yy, xx, rng: Rng, n_bumps: int, amp_low: float, amp_high: float):
    field = np.zeros_like(tt)
    for _ in range(n_bumps):
        ct, cy, cx = rng.uniform((3,))
        width = 0.18 + 0.27 * float(rng.uniform(()))
        sign = 1.0 if rng.uniform(()) < 0.5 else -1.0
        amp = sign * (amp_low + (amp_high - amp_low) * float(rng.uniform(())))
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2 + (tt - ct) ** 2
        field += amp * np.exp(-d2 / (2.0 * width**2))
    return field


def _structure(class_id: int, spec: DatasetSpec) -> np.ndarray:
    tt, yy, xx = _coords(spec)
    out = np.empty(spec.grid, dtype=np.float64)
    struct_rng = Rng([spec.seed, _STRUCT_STREAM, class_id])
    per_channel = struct_rng.split(spec.channels)
    for c, crng in enumerate(per_channel):
        if spec.family == "gradients":
            a, b, g = crng.uniform((3,)) * 2.4 - 1.2
            offset = float(crng.uniform(())) - 0.5
            out[..., c] = a * xx + b * yy + g * tt + offset
        else:
            out[..., c] = _bump_field(tt, yy, xx, crng, n_bumps=3, amp_low=0.9, amp_high=1.8)
    return out


def _noise(spec: DatasetSpec, sigma: float, rng: Rng) -> np.ndarray:
    if sigma == 0.0:
        return np.zeros(spec.grid)
    tt, yy, xx = _coords(spec)
    noise = np.empty(spec.grid, dtype=np.float64)
    for c in range(spec.channels):
        smooth = _bump_field(tt, yy, xx, rng, n_bumps=3, amp_low=0.4, amp_high=1.4)
        rms = np.sqrt(np.mean(np.square(smooth)))
        if rms > 0:
            smooth /= rms
        white = rng.normal(tt.shape)
        noise[..., c] = sigma * (0.8 * smooth + 0.45 * white)
    return noise


def generate_feature_map(class_id: int, spec: DatasetSpec, rng: Rng) -> np.ndarray:
    """Continuous feature map in (-1, 1) for one record.

    ``rng`` is the record's own noise stream (see ``record_rng``); the class
    structure is keyed independently, so a record is fully determined by
    (class id, sample index, dataset seed).
    """
    if not 0 <= class_id < spec.n_classes:
        raise ConfigError(f"class_id {class_id} outside [0, {spec.n_classes})")
    raw = _structure(class_id, spec) + _noise(spec, spec.class_sigma(class_id), rng)
    return bound_features(raw)


class Dataset:
    """Quantized ground-truth records plus derived token-map views."""

    def __init__(self, spec: DatasetSpec, records: list[tuple[int, BitPlanes]]):
        if len(records) != spec.n_classes * spec.maps_per_class:
            raise ConfigError(
                f"record count {len(records)} != n_classes*maps_per_class "
                f"({spec.n_classes}*{spec.maps_per_class})"
            )
        for class_id, planes in records:
            if planes.rounds != spec.rounds or planes.grid != spec.grid:
                raise ConfigError("record geometry does not match the dataset spec")
            if not 0 <= class_id < spec.n_classes:
                raise ConfigError(f"record class {class_id} outside [0, {spec.n_classes})")
        self.spec = spec
        self.records = records
        self._views: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self.records)

    def token_maps(self, variant: str) -> tuple[np.ndarray, np.ndarray]:
        """All records as flat token maps: (maps [n, P, C_eff], classes [n])."""
        if variant not in ("ind", "bit"):
            raise ConfigError(f"variant must be 'ind' or 'bit', got {variant!r}")
        if variant not in self._views:
            p = self.spec.n_positions
            rows = []
            classes = []
            for class_id, planes in self.records:
                if variant == "ind":
                    view = pack_indices(planes).values.reshape(p, self.spec.channels)
                else:
                    view = flatten_bits(planes).values.reshape(p, -1)
                rows.append(view.astype(np.int64))
                classes.append(class_id)
            self._views[variant] = (np.stack(rows), np.asarray(classes, dtype=np.int64))
        return self._views[variant]

    def class_references(self, variant: str) -> list[np.ndarray]:
        """Per class: the distinct token maps among its records."""
        maps, classes = self.token_maps(variant)
        refs = []
        for c in range(self.spec.n_classes):
            rows = maps[classes == c]
            refs.append(np.unique(rows, axis=0))
        return refs


def build_dataset(spec: DatasetSpec) -> Dataset:
    """Generate and quantize every record of the spec."""
    records = []
    for class_id in range(spec.n_classes):
        for idx in range(spec.maps_per_class):
            features = generate_feature_map(class_id, spec, record_rng(spec, class_id, idx))
            records.append((class_id, quantize(features, spec.rounds)))
    return Dataset(spec, records)


def class_marginal_entropy(dataset: Dataset, variant: str = "bit") -> np.ndarray:
    """Mean normalized marginal entropy per class.

    For each token slot, the empirical distribution of its value across the
    class's records; the per-slot entropies (normalized by log2 of the
    vocabulary) are averaged over slots.
    """
    maps, classes = dataset.token_maps(variant)
    vocab = 2 if variant == "bit" else 1 << dataset.spec.rounds
    out = np.zeros(dataset.spec.n_classes)
    for c in range(dataset.spec.n_classes):
        rows = maps[classes == c]
        n = rows.shape[0]
        flat = rows.reshape(n, -1)
        probs = np.stack([(flat == k).mean(axis=0) for k in range(vocab)], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(probs > 0, probs * np.log2(probs), 0.0)
        out[c] = float((-plogp.sum(axis=-1)).mean() / np.log2(vocab))
    return out


def _record_name(class_id: int, sample_idx: int) -> str:
    return f"cls{class_id:04d}_{sample_idx:05d}.hbq"


def save_dataset(dataset: Dataset, directory: str | Path) -> None:
    """Write manifest.json plus one bit-plane blob per record."""
    directory = Path(directory)
    (directory / "records").mkdir(parents=True, exist_ok=True)
    manifest_records = []
    counters: dict[int, int] = {}
    for class_id, planes in dataset.records:
        idx = counters.get(class_id, 0)
        counters[class_id] = idx + 1
        name = _record_name(class_id, idx)
        path = directory / "records" / name
        save_bitplanes(planes, path)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        manifest_records.append(
            {"class_id": class_id, "sample_idx": idx, "file": f"records/{name}", "sha256": digest}
        )
    manifest = {
        "format_version": MANIFEST_VERSION,
        "spec": asdict(dataset.spec),
        "records": manifest_records,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))


def load_dataset(directory: str | Path) -> Dataset:
    """Read a dataset directory back, verifying every record checksum."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DataFormatError(f"no manifest.json under {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"unreadable manifest: {exc}") from exc
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise DataFormatError(f"unsupported manifest version {manifest.get('format_version')}")
    spec_dict = dict(manifest["spec"])
    spec_dict["grid"] = tuple(spec_dict["grid"])
    spec = DatasetSpec(**spec_dict)
    records = []
    for entry in manifest["records"]:
        path = directory / entry["file"]
        blob = path.read_bytes()
        digest = hashlib.sha256(blob).hexdigest()
        if digest != entry["sha256"]:
            raise DataFormatError(
                f"checksum mismatch for {entry['file']}: manifest {entry['sha256'][:12]}..., "
                f"file {digest[:12]}..."
            )
        records.append((int(entry["class_id"]), load_bitplanes(path)))
    return Dataset(spec, records)
