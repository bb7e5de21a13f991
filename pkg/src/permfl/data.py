"""Dataset ingestion, non-IID partitioning, and synthetic generation.

IDX files follow the classic big-endian layout:

    [offset] [type]           [value]        [description]
    0000     32-bit integer   2051 / 2049    magic (images / labels)
    0004     32-bit integer   n              item count
    (images) 32-bit integers  rows, cols     then raw unsigned pixel bytes
    (labels)                                 raw unsigned label bytes

Gzip-compressed files are detected by their two magic bytes and
decompressed transparently. Pixels are scaled to [0, 1] float64 and images
flattened to one row per sample.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, PartitionError
from .seeding import rng_for

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    provenance: str = "synthetic"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise ConfigurationError("feature rows and labels disagree in length")
        if len(self.labels) and int(self.labels.max()) >= self.n_classes:
            raise ConfigurationError("label id exceeds declared class count")

    def __len__(self) -> int:
        return len(self.labels)

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


@dataclass
class Partition:
    """Per-device sample indices into one LabeledDataset. Disjoint by
    construction; ``remainder`` lists indices never assigned (classes no
    device holds)."""

    device_indices: dict
    classes_per_device: int | None = None
    remainder: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        clean = {}
        seen = set()
        for did, idx in self.device_indices.items():
            idx = np.asarray(sorted(int(i) for i in idx), dtype=np.int64)
            if idx.size == 0:
                raise PartitionError(f"device {did} received zero samples")
            overlap = seen.intersection(idx.tolist())
            if overlap:
                raise PartitionError(f"indices {sorted(overlap)[:5]} assigned twice")
            seen.update(idx.tolist())
            clean[int(did)] = idx
        self.device_indices = clean
        self.remainder = np.asarray(self.remainder, dtype=np.int64)

    @property
    def device_ids(self) -> list:
        return sorted(self.device_indices)

    def sizes(self) -> dict:
        return {d: int(v.size) for d, v in self.device_indices.items()}


def _read_exact(fh, n_bytes: int, offset: int, path) -> bytes:
    chunk = fh.read(n_bytes)
    if len(chunk) != n_bytes:
        raise FormatError(
            f"{path}: truncated at byte {offset + len(chunk)} "
            f"(wanted {n_bytes} more bytes)"
        )
    return chunk


def _open_idx(path):
    raw = open(path, "rb")
    head = raw.read(2)
    raw.seek(0)
    if head == b"\x1f\x8b":
        return gzip.open(raw)
    return raw


def load_idx_images(path) -> np.ndarray:
    """Read an IDX image file into an (n, rows*cols) float64 matrix in [0,1]."""
    path = Path(path)
    with _open_idx(path) as fh:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, 0, path))
        if magic != IMAGES_MAGIC:
            raise FormatError(f"{path}: bad image magic {magic} at byte 0 (expected {IMAGES_MAGIC})")
        payload = _read_exact(fh, n * rows * cols, 16, path)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n, rows * cols)
    return pixels.astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    path = Path(path)
    with _open_idx(path) as fh:
        magic, n = struct.unpack(">II", _read_exact(fh, 8, 0, path))
        if magic != LABELS_MAGIC:
            raise FormatError(f"{path}: bad label magic {magic} at byte 0 (expected {LABELS_MAGIC})")
        payload = _read_exact(fh, n, 8, path)
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def write_idx_images(path, pixels: np.ndarray):
    """Write uint8 pixels of shape (n, rows, cols) in IDX layout."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3:
        raise ConfigurationError("expected pixel array of shape (n, rows, cols)")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, *pixels.shape))
        fh.write(pixels.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ConfigurationError("labels must be a 1-D array of bytes")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, labels.size))
        fh.write(labels.astype(np.uint8).tobytes())


def partition_non_iid(labels, n_devices: int, classes_per_device: int = 2, seed: int = 0) -> Partition:
    """Assign each device a few classes, then distribute those classes' samples.

    Classes are shuffled once and dealt round-robin so each device holds
    ``classes_per_device`` of them. Each class is then split among its
    holders: every holder first receives a base quota, and the remaining
    samples of that class are scattered randomly across holders. Devices
    never share samples. Classes that no device holds (possible when there
    are more classes than device slots) end up in ``remainder``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if classes_per_device < 1:
        raise ConfigurationError("classes_per_device must be >= 1")
    if n_devices < 1:
        raise ConfigurationError("need at least one device")
    rng = rng_for(seed, "partition-non-iid", n_devices, classes_per_device)

    classes = np.unique(labels)
    shuffled = list(rng.permutation(classes))
    holders = {int(c): [] for c in shuffled}
    slot = 0
    for did in range(n_devices):
        for _ in range(classes_per_device):
            c = int(shuffled[slot % len(shuffled)])
            # A device may wrap onto the same class twice when classes are
            # scarce; count it as a single holding.
            if did not in holders[c]:
                holders[c].append(did)
            slot += 1

    assignments = {did: [] for did in range(n_devices)}
    leftover_classes = []
    for c in (int(v) for v in classes):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        devs = holders[c]
        if not devs:
            leftover_classes.append(idx)
            continue
        base = max(1, idx.size // (2 * len(devs)))
        pos = 0
        for did in devs:
            take = min(base, idx.size - pos)
            assignments[did].extend(idx[pos : pos + take].tolist())
            pos += take
        if pos < idx.size:
            extra_owner = rng.integers(0, len(devs), size=idx.size - pos)
            for offset, owner in enumerate(extra_owner):
                assignments[devs[int(owner)]].append(int(idx[pos + offset]))

    empty = [d for d, idx in assignments.items() if not idx]
    if empty:
        raise PartitionError(f"devices {empty} received zero samples")
    remainder = np.concatenate(leftover_classes) if leftover_classes else np.empty(0, dtype=np.int64)
    return Partition(assignments, classes_per_device=classes_per_device, remainder=remainder)


@dataclass(frozen=True)
class SyntheticSpec:
    """Heterogeneous tabular generator with per-device decision rules.

    Per device k: a scalar weight-mean u_k ~ N(0, alpha_bar) seeds the label
    rule W_k ~ N(u_k, 1), b_k ~ N(u_k, 1); a scalar B_k ~ N(0, beta_bar)
    seeds the feature centre v_k ~ N(B_k, 1); samples draw x ~ N(v_k, S)
    with diagonal S_jj = j^(-1.2) and take the label argmax softmax(W x + b).
    Device sizes follow a clipped power law; each device is then truncated
    to its two most frequent labels.
    """

    alpha_bar: float = 0.5
    beta_bar: float = 0.5
    n_devices: int = 20
    n_features: int = 60
    n_classes: int = 10
    min_size: int = 50
    max_size: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.n_devices < 1:
            raise ConfigurationError("synthetic spec needs at least one device")
        if not (1 <= self.min_size <= self.max_size):
            raise ConfigurationError("need 1 <= min_size <= max_size")
        if self.alpha_bar < 0 or self.beta_bar < 0:
            raise ConfigurationError("variance hyperpriors must be non-negative")


@dataclass
class SyntheticResult:
    dataset: LabeledDataset
    partition: Partition
    device_weight_means: np.ndarray
    device_feature_biases: np.ndarray
    drawn_sizes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


def gen_synthetic(spec: SyntheticSpec) -> SyntheticResult:
    rng = rng_for(spec.seed, "synthetic", spec.n_devices, spec.n_features, spec.n_classes)

    raw = rng.pareto(1.5, size=spec.n_devices) + 1.0
    sizes = np.clip((spec.min_size * raw).astype(int), spec.min_size, spec.max_size)
    sizes = np.sort(sizes)[::-1]

    u = rng.normal(0.0, np.sqrt(spec.alpha_bar), size=spec.n_devices) if spec.alpha_bar > 0 else np.zeros(spec.n_devices)
    B = rng.normal(0.0, np.sqrt(spec.beta_bar), size=spec.n_devices) if spec.beta_bar > 0 else np.zeros(spec.n_devices)
    cov_diag = np.power(np.arange(1, spec.n_features + 1, dtype=np.float64), -1.2)
    cov_scale = np.sqrt(cov_diag)

    feats, labs, owner = [], [], []
    for k in range(spec.n_devices):
        W = rng.normal(u[k], 1.0, size=(spec.n_features, spec.n_classes))
        b = rng.normal(u[k], 1.0, size=spec.n_classes)
        v = rng.normal(B[k], 1.0, size=spec.n_features)
        x = v + rng.normal(size=(int(sizes[k]), spec.n_features)) * cov_scale
        y = np.argmax(x @ W + b, axis=1)

        # Keep only the device's two dominant labels ("at most two classes").
        values, counts = np.unique(y, return_counts=True)
        order = np.lexsort((values, -counts))
        keep_labels = set(values[order[:2]].tolist())
        keep = np.array([lab in keep_labels for lab in y])
        x, y = x[keep], y[keep]

        feats.append(x)
        labs.append(y)
        owner.append(np.full(len(y), k))

    features = np.concatenate(feats, axis=0)
    labels = np.concatenate(labs, axis=0)
    owner = np.concatenate(owner)
    dataset = LabeledDataset(features, labels, n_classes=spec.n_classes, provenance="synthetic")
    indices = {k: np.flatnonzero(owner == k) for k in range(spec.n_devices)}
    partition = Partition(indices, classes_per_device=2)
    return SyntheticResult(dataset, partition, u, B, drawn_sizes=sizes)


def split_train_val(partition: Partition, labels, seed: int = 0, val_fraction: float = 0.25):
    """Per-device stratified train/validation split, 3:1 by default.

    Validation takes floor(n * val_fraction) samples per device, allocated
    across the device's labels by largest remainder while always leaving at
    least one training sample per label."""
    if not (0.0 < val_fraction < 1.0):
        raise ConfigurationError("val_fraction must lie in (0, 1)")
    min_samples = max(2, int(np.ceil(1.0 / val_fraction)))
    labels = np.asarray(labels, dtype=np.int64)
    train, val = {}, {}
    for did in partition.device_ids:
        idx = partition.device_indices[did]
        if idx.size < min_samples:
            raise PartitionError(
                f"device {did} has only {idx.size} samples (need >= {min_samples})"
            )
        rng = rng_for(seed, "train-val-split", did)
        n_val = int(idx.size * val_fraction)

        by_label = {}
        for c in np.unique(labels[idx]):
            members = idx[labels[idx] == c]
            by_label[int(c)] = members[rng.permutation(members.size)]

        quota = {c: n_val * len(v) / idx.size for c, v in by_label.items()}
        counts = {c: min(int(q), len(by_label[c]) - 1) for c, q in quota.items()}
        remainders = sorted(
            by_label, key=lambda c: (-(quota[c] - counts[c]), c)
        )
        pos = 0
        while sum(counts.values()) < n_val and pos < len(remainders) * 2:
            c = remainders[pos % len(remainders)]
            if counts[c] < len(by_label[c]) - 1:
                counts[c] += 1
            pos += 1

        val_idx, train_idx = [], []
        for c, members in by_label.items():
            val_idx.extend(members[: counts[c]].tolist())
            train_idx.extend(members[counts[c] :].tolist())
        train[did] = train_idx
        val[did] = val_idx
    return (
        Partition(train, classes_per_device=partition.classes_per_device),
        Partition(val, classes_per_device=partition.classes_per_device),
    )


def stratified_subset(labels, size: int, seed: int = 0) -> np.ndarray:
    """Indices of a label-stratified subset of at most ``size`` samples."""
    labels = np.asarray(labels, dtype=np.int64)
    if size >= labels.size:
        return np.arange(labels.size, dtype=np.int64)
    rng = rng_for(seed, "stratified-subset", size)
    picked = []
    classes = np.unique(labels)
    per_class = size // len(classes)
    for c in classes:
        members = np.flatnonzero(labels == c)
        take = min(per_class, members.size)
        picked.extend(rng.choice(members, size=take, replace=False).tolist())
    short = size - len(picked)
    if short > 0:
        pool = np.setdiff1d(np.arange(labels.size), np.asarray(picked, dtype=np.int64))
        picked.extend(rng.choice(pool, size=min(short, pool.size), replace=False).tolist())
    return np.asarray(sorted(picked), dtype=np.int64)


def load_idx_dataset(images_path, labels_path, n_classes: int = 10, provenance: str = "mnist") -> LabeledDataset:
    features = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(features) != len(labels):
        raise FormatError(
            f"image count {len(features)} does not match label count {len(labels)}"
        )
    return LabeledDataset(features, labels, n_classes=n_classes, provenance=provenance)


_IDX_BASENAMES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")


def find_idx_pair(directory) -> tuple | None:
    """Locate the training image/label IDX pair (.gz accepted) in a directory."""
    directory = Path(directory)
    found = []
    for base in _IDX_BASENAMES:
        plain, gz = directory / base, directory / (base + ".gz")
        if plain.exists():
            found.append(plain)
        elif gz.exists():
            found.append(gz)
        else:
            return None
    return tuple(found)


def load_builtin_digits() -> LabeledDataset:
    """Bundled scanned handwritten digits (8x8, 10 classes), pixel-normalized.

    Serves as the offline desk-scale stand-in when no IDX dataset is
    available locally.
    """
    from sklearn.datasets import load_digits

    raw = load_digits()
    features = raw.data.astype(np.float64) / 16.0
    labels = raw.target.astype(np.int64)
    return LabeledDataset(features, labels, n_classes=10, provenance="digits")


def batches_for(dataset: LabeledDataset, partition: Partition) -> dict:
    """Materialize one Batch per device from a partition."""
    from .models import Batch

    return {
        did: Batch(dataset.features[idx], dataset.labels[idx])
        for did, idx in partition.device_indices.items()
    }
