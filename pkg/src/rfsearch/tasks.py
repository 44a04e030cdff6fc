"""Synthetic sequence tasks with known receptive-field requirements.

Each task generates framewise-labeled sequences where the minimal causal
receptive field needed to solve it is known in closed form, so search
results can be checked against ground truth:

* lagged_copy: predict the input symbol from exactly ``lag`` frames back
  (i.i.d. symbols, so nothing short of the exact lag helps); minimal
  receptive field lag + 1.
* multiscale_sum: classify the joint signs of running means over several
  window sizes at once; needs coverage of the largest window and rewards
  multi-scale taps.
* noisy_event_span: detect whether an impulse occurred within the last
  ``span`` frames, under additive noise; minimal receptive field ``span``.
* permuted_pixels: optional sequence classification of IDX-format images
  flattened with a fixed pixel permutation (label on the last frame only).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seeding

__all__ = [
    "TASK_KINDS",
    "TaskSpec",
    "TaskData",
    "generate",
    "gen_lagged_copy",
    "gen_multiscale_sum",
    "gen_noisy_event_span",
    "gen_permuted_pixels",
    "framewise_accuracy",
    "load_idx",
    "task_spec_hash",
    "save_task_cache",
    "load_task_cache",
]

TASK_KINDS = ("lagged_copy", "multiscale_sum", "noisy_event_span", "permuted_pixels")


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    sequence_length: int = 256
    train_size: int = 2000
    val_size: int = 500
    seed: int = 0
    # lagged_copy
    num_symbols: int = 8
    lag: int = 12
    # multiscale_sum
    windows: tuple[int, ...] = (4, 32)
    # noisy_event_span
    event_rate: float = 0.05
    span: int = 16
    noise_level: float = 0.5
    # permuted_pixels
    images_path: str | None = None
    labels_path: str | None = None
    permutation_seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.sequence_length < 1 or self.train_size < 1 or self.val_size < 1:
            raise ValueError("sizes must be >= 1")
        object.__setattr__(self, "windows", tuple(int(w) for w in self.windows))
        if self.kind == "lagged_copy":
            if self.lag < 0:
                raise ValueError("lag must be >= 0")
            if self.lag >= self.sequence_length:
                raise ValueError("lag must be smaller than sequence_length")
            if self.num_symbols < 2:
                raise ValueError("need at least 2 symbols")
        elif self.kind == "multiscale_sum":
            if len(self.windows) < 1:
                raise ValueError("need at least one window")
            if any(w < 1 for w in self.windows):
                raise ValueError("windows must be >= 1")
            if list(self.windows) != sorted(set(self.windows)):
                raise ValueError("windows must be strictly increasing")
            if max(self.windows) > self.sequence_length:
                raise ValueError("largest window exceeds sequence_length")
        elif self.kind == "noisy_event_span":
            if not (0.0 < self.event_rate < 1.0):
                raise ValueError("event_rate must lie in (0, 1)")
            if self.span < 1 or self.span > self.sequence_length:
                raise ValueError("span must lie in [1, sequence_length]")
            if self.noise_level < 0.0:
                raise ValueError("noise_level must be >= 0")
        elif self.kind == "permuted_pixels":
            if self.images_path is None or self.labels_path is None:
                raise ValueError("permuted_pixels needs images_path and labels_path")

    @property
    def in_channels(self) -> int:
        return self.num_symbols if self.kind == "lagged_copy" else 1

    @property
    def num_classes(self) -> int:
        if self.kind == "lagged_copy":
            return self.num_symbols
        if self.kind == "multiscale_sum":
            return 2 ** len(self.windows)
        if self.kind == "noisy_event_span":
            return 2
        return 10

    @property
    def min_receptive_field(self) -> int:
        """Smallest causal receptive field that can solve the task exactly."""
        if self.kind == "lagged_copy":
            return self.lag + 1
        if self.kind == "multiscale_sum":
            return max(self.windows)
        if self.kind == "noisy_event_span":
            return self.span
        return self.sequence_length


@dataclass
class TaskData:
    train_x: np.ndarray
    train_y: np.ndarray
    train_mask: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    val_mask: np.ndarray
    num_classes: int
    in_channels: int


def generate(spec: TaskSpec) -> TaskData:
    """Generate the task's train/val splits; bit-identical for equal specs."""
    if spec.kind == "lagged_copy":
        return gen_lagged_copy(spec)
    if spec.kind == "multiscale_sum":
        return gen_multiscale_sum(spec)
    if spec.kind == "noisy_event_span":
        return gen_noisy_event_span(spec)
    return gen_permuted_pixels(spec)


def _split_rngs(spec: TaskSpec):
    return (
        seeding.derive_rng(spec.seed, "task", spec.kind, "train"),
        seeding.derive_rng(spec.seed, "task", spec.kind, "val"),
    )


def gen_lagged_copy(spec: TaskSpec) -> TaskData:
    """Inputs are one-hot i.i.d. symbols; target frame t is the symbol at
    t - lag.  The first ``lag`` frames are masked out of the loss."""
    if spec.kind != "lagged_copy":
        raise ValueError("spec kind mismatch")

    def make(rng, n):
        T, A = spec.sequence_length, spec.num_symbols
        sym = rng.integers(0, A, size=(n, T))
        x = np.zeros((n, A, T))
        rows = np.arange(n)[:, None]
        cols = np.arange(T)[None, :]
        x[rows, sym, cols] = 1.0
        y = np.zeros((n, T), dtype=np.int64)
        if spec.lag == 0:
            y[:] = sym
        else:
            y[:, spec.lag :] = sym[:, : T - spec.lag]
        mask = np.zeros((n, T), dtype=bool)
        mask[:, spec.lag :] = True
        return x, y, mask

    rng_tr, rng_va = _split_rngs(spec)
    xtr, ytr, mtr = make(rng_tr, spec.train_size)
    xva, yva, mva = make(rng_va, spec.val_size)
    return TaskData(xtr, ytr, mtr, xva, yva, mva, spec.num_classes, spec.in_channels)


def gen_multiscale_sum(spec: TaskSpec) -> TaskData:
    """Gaussian inputs; the label at frame t encodes, as a bit per window,
    whether the running mean over that window is positive.  All windows must
    be read simultaneously, so distinct temporal scales all matter."""
    if spec.kind != "multiscale_sum":
        raise ValueError("spec kind mismatch")

    def make(rng, n):
        T = spec.sequence_length
        u = rng.standard_normal((n, 1, T))
        cs = np.concatenate([np.zeros((n, 1)), np.cumsum(u[:, 0, :], axis=1)], axis=1)
        y = np.zeros((n, T), dtype=np.int64)
        for j, w in enumerate(spec.windows):
            sums = cs[:, w:] - cs[:, :-w]  # window sum ending at t, t >= w-1
            bit = (sums > 0.0).astype(np.int64)
            y[:, w - 1 :] += bit << j
        mask = np.zeros((n, T), dtype=bool)
        mask[:, max(spec.windows) - 1 :] = True
        return u, y, mask

    rng_tr, rng_va = _split_rngs(spec)
    xtr, ytr, mtr = make(rng_tr, spec.train_size)
    xva, yva, mva = make(rng_va, spec.val_size)
    return TaskData(xtr, ytr, mtr, xva, yva, mva, spec.num_classes, spec.in_channels)


def gen_noisy_event_span(spec: TaskSpec) -> TaskData:
    """Sparse unit impulses plus Gaussian noise; label 1 while an impulse
    lies within the trailing ``span`` frames."""
    if spec.kind != "noisy_event_span":
        raise ValueError("spec kind mismatch")

    def make(rng, n):
        T = spec.sequence_length
        events = rng.random((n, T)) < spec.event_rate
        x = events.astype(np.float64)[:, None, :]
        x = x + spec.noise_level * rng.standard_normal((n, 1, T))
        ec = np.concatenate(
            [np.zeros((n, 1)), np.cumsum(events.astype(np.int64), axis=1)], axis=1
        )
        w = spec.span
        recent = np.empty((n, T), dtype=np.int64)
        for t in range(T):
            lo = max(0, t - w + 1)
            recent[:, t] = ec[:, t + 1] - ec[:, lo]
        y = (recent > 0).astype(np.int64)
        mask = np.ones((n, T), dtype=bool)
        return x, y, mask

    rng_tr, rng_va = _split_rngs(spec)
    xtr, ytr, mtr = make(rng_tr, spec.train_size)
    xva, yva, mva = make(rng_va, spec.val_size)
    return TaskData(xtr, ytr, mtr, xva, yva, mva, spec.num_classes, spec.in_channels)


def gen_permuted_pixels(spec: TaskSpec) -> TaskData:
    """Images flattened to pixel sequences with a fixed random permutation;
    the class label sits on the final frame only (single-label sequences)."""
    if spec.kind != "permuted_pixels":
        raise ValueError("spec kind mismatch")
    images = load_idx(spec.images_path)
    labels = load_idx(spec.labels_path)
    if images.ndim != 3:
        raise ValueError(f"expected (n, h, w) images, got shape {images.shape}")
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise ValueError("labels do not match images")
    total = spec.train_size + spec.val_size
    if images.shape[0] < total:
        raise ValueError(
            f"need {total} examples, file has {images.shape[0]}"
        )
    n, h, w = images.shape
    T = h * w
    perm = seeding.derive_rng(spec.permutation_seed, "pixel-permutation").permutation(T)
    flat = images.reshape(n, 1, T).astype(np.float64) / 255.0
    flat = flat[:, :, perm]
    y = np.zeros((n, T), dtype=np.int64)
    y[:, -1] = labels.astype(np.int64)
    mask = np.zeros((n, T), dtype=bool)
    mask[:, -1] = True
    tr = slice(0, spec.train_size)
    va = slice(spec.train_size, total)
    classes = int(labels.max()) + 1
    return TaskData(
        flat[tr], y[tr], mask[tr], flat[va], y[va], mask[va], classes, 1
    )


def framewise_accuracy(pred: np.ndarray, target: np.ndarray, mask=None) -> float:
    """Fraction of unmasked frames where argmax over channels hits the target."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.ndim != 3:
        raise ValueError("pred must be (batch, class, time)")
    if target.shape != (pred.shape[0], pred.shape[2]):
        raise ValueError(
            f"target shape {target.shape}, expected {(pred.shape[0], pred.shape[2])}"
        )
    if mask is None:
        mask = np.ones(target.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != target.shape:
            raise ValueError("mask shape does not match target")
    if not mask.any():
        raise ValueError("mask selects no frames")
    labels = pred.argmax(axis=1)
    return float((labels == target)[mask].mean())


# --------------------------------------------------------------------------
# IDX files (big-endian image/label containers)
# --------------------------------------------------------------------------

_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def load_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"{path}: not an IDX file")
    type_code, ndim = raw[2], raw[3]
    if type_code not in _IDX_DTYPES:
        raise ValueError(f"{path}: unknown IDX type code 0x{type_code:02x}")
    header_end = 4 + 4 * ndim
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype = _IDX_DTYPES[type_code]
    count = int(np.prod(dims)) if ndim else 0
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=header_end)
    if data.size != count:
        raise ValueError(f"{path}: truncated IDX payload")
    return data.reshape(dims).astype(dtype.newbyteorder("="))


# --------------------------------------------------------------------------
# on-disk cache: raw little-endian float64 arrays + JSON sidecar
# --------------------------------------------------------------------------

_CACHE_ARRAYS = ("train_x", "train_y", "train_mask", "val_x", "val_y", "val_mask")


def task_spec_hash(spec: TaskSpec) -> str:
    doc = {k: list(v) if isinstance(v, tuple) else v for k, v in vars(spec).items()}
    blob = json.dumps(doc, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def save_task_cache(data: TaskData, spec: TaskSpec, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"spec_hash": task_spec_hash(spec), "arrays": {}}
    for name in _CACHE_ARRAYS:
        arr = getattr(data, name)
        meta["arrays"][name] = {"shape": list(arr.shape), "dtype": str(arr.dtype)}
        arr.astype("<f8").tofile(directory / f"{name}.bin")
    meta["num_classes"] = data.num_classes
    meta["in_channels"] = data.in_channels
    sidecar = directory / "meta.json"
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def load_task_cache(spec: TaskSpec, directory) -> TaskData | None:
    """Load a cached dataset if present and generated from an identical spec."""
    directory = Path(directory)
    sidecar = directory / "meta.json"
    if not sidecar.exists():
        return None
    meta = json.loads(sidecar.read_text())
    if meta.get("spec_hash") != task_spec_hash(spec):
        return None
    arrays = {}
    for name in _CACHE_ARRAYS:
        info = meta["arrays"][name]
        raw = np.fromfile(directory / f"{name}.bin", dtype="<f8")
        arrays[name] = raw.reshape(info["shape"]).astype(np.dtype(info["dtype"]))
    return TaskData(
        num_classes=meta["num_classes"], in_channels=meta["in_channels"], **arrays
    )
