"""Dataset ingestion, normalization, and candidate-noise generation.

Two on-disk formats are supported: the classic IDX image/label pair and a
small line-oriented text format (`RPLL1`) that carries features, candidate
masks, and optional ground-truth labels losslessly.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import core, nn
from .errors import DataError, DomainError, FormatError

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


@dataclass
class PartialDataset:
    """Features, candidate-label masks, and (optionally) hidden true
    labels kept only for evaluation."""

    features: np.ndarray
    candidates: np.ndarray
    true_labels: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.candidates = np.ascontiguousarray(self.candidates).astype(bool)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D array")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features must be finite")
        if self.candidates.shape[0] != self.features.shape[0]:
            raise DataError("features and candidates disagree on instance count")
        sizes = self.candidates.sum(axis=1)
        empty = np.nonzero(sizes == 0)[0]
        if empty.size:
            raise DataError(f"instance {empty[0]} has an empty candidate set")
        if self.true_labels is not None:
            self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
            if self.true_labels.shape != (self.n,):
                raise DataError("true_labels must have one entry per instance")
            if np.any(self.true_labels < 0) or np.any(self.true_labels >= self.k):
                raise DataError("true label out of range")
            inside = self.candidates[np.arange(self.n), self.true_labels]
            bad = np.nonzero(~inside)[0]
            if bad.size:
                raise DataError(
                    f"instance {bad[0]}: true label {self.true_labels[bad[0]]} "
                    "not in its candidate set"
                )

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def k(self):
        return self.candidates.shape[1]


def from_labels(features, labels, k=None):
    """Supervised data as a degenerate partially-labeled dataset with
    singleton candidate sets."""
    labels = np.asarray(labels, dtype=np.int64)
    if k is None:
        k = int(labels.max()) + 1
    cand = np.zeros((len(labels), k), dtype=bool)
    cand[np.arange(len(labels)), labels] = True
    return PartialDataset(features, cand, labels)


def _read_idx_header(blob, path, magic, n_dims):
    if len(blob) < 4 * (1 + n_dims):
        raise FormatError(f"{path}: truncated header at offset {len(blob)}")
    (got,) = struct.unpack_from(">I", blob, 0)
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x} at offset 0")
    dims = struct.unpack_from(f">{n_dims}I", blob, 4)
    return dims, 4 * (1 + n_dims)


def read_idx(images_path, labels_path):
    """IDX image/label pair -> (features scaled to [0, 1], labels).

    Images are flattened row-major; pixels are divided by 255.
    """
    with open(images_path, "rb") as fh:
        blob = fh.read()
    (n, rows, cols), offset = _read_idx_header(blob, images_path, _IDX_IMAGES_MAGIC, 3)
    expected = n * rows * cols
    if len(blob) - offset != expected:
        raise FormatError(
            f"{images_path}: expected {expected} pixel bytes, found "
            f"{len(blob) - offset} at offset {offset}"
        )
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=offset)
    features = pixels.astype(np.float64).reshape(n, rows * cols) / 255.0

    with open(labels_path, "rb") as fh:
        blob = fh.read()
    (n_lab,), offset = _read_idx_header(blob, labels_path, _IDX_LABELS_MAGIC, 1)
    if n_lab != n:
        raise FormatError(f"{labels_path}: {n_lab} labels for {n} images")
    if len(blob) - offset != n_lab:
        raise FormatError(
            f"{labels_path}: expected {n_lab} label bytes, found "
            f"{len(blob) - offset} at offset {offset}"
        )
    labels = np.frombuffer(blob, dtype=np.uint8, offset=offset).astype(np.int64)
    return features, labels


def write_idx(images_path, labels_path, pixels, labels):
    """Inverse of `read_idx` for synthetic fixtures; pixels are uint8 of
    shape (n, rows, cols)."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", _IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", _IDX_LABELS_MAGIC, n))
        fh.write(labels.tobytes())


def write_pll_file(dataset, path):
    """Text format: header `RPLL1 n d k has_labels`, then one line per
    instance with d float features (repr round-trip), a k-character 0/1
    candidate mask, and an optional 1-based label."""
    has_labels = dataset.true_labels is not None
    with open(path, "w") as fh:
        fh.write(f"RPLL1 {dataset.n} {dataset.d} {dataset.k} {int(has_labels)}\n")
        for i in range(dataset.n):
            parts = [repr(float(v)) for v in dataset.features[i]]
            parts.append("".join("1" if c else "0" for c in dataset.candidates[i]))
            if has_labels:
                parts.append(str(int(dataset.true_labels[i]) + 1))
            fh.write(" ".join(parts) + "\n")


def read_pll_file(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 5 or header[0] != "RPLL1":
            raise FormatError(f"{path}: bad header line")
        try:
            n, d, k, has_labels = (int(x) for x in header[1:])
        except ValueError:
            raise FormatError(f"{path}: non-integer header fields") from None
        if n < 1 or d < 1 or k < 2 or has_labels not in (0, 1):
            raise FormatError(f"{path}: implausible header {header[1:]}")
        features = np.empty((n, d))
        candidates = np.zeros((n, k), dtype=bool)
        labels = np.empty(n, dtype=np.int64) if has_labels else None
        expected = d + 1 + has_labels
        for i in range(n):
            parts = fh.readline().split()
            if len(parts) != expected:
                raise FormatError(f"{path}: row {i}: expected {expected} fields, got {len(parts)}")
            try:
                features[i] = [float(x) for x in parts[:d]]
            except ValueError:
                raise FormatError(f"{path}: row {i}: bad float field") from None
            mask = parts[d]
            if len(mask) != k or set(mask) - {"0", "1"}:
                raise FormatError(f"{path}: row {i}: bad candidate mask {mask!r}")
            candidates[i] = [c == "1" for c in mask]
            if not candidates[i].any():
                raise FormatError(f"{path}: row {i}: empty candidate set")
            if has_labels:
                labels[i] = int(parts[d + 1]) - 1
    try:
        return PartialDataset(features, candidates, labels)
    except DataError as exc:
        raise FormatError(f"{path}: {exc}") from None


def minmax_normalize(features):
    """Affine per-feature map onto [0, 1]; constant features map to 0."""
    features = np.asarray(features, dtype=np.float64)
    lo = features.min(axis=0)
    span = features.max(axis=0) - lo
    out = np.zeros_like(features)
    nonconst = span > 0.0
    out[:, nonconst] = (features[:, nonconst] - lo[nonconst]) / span[nonconst]
    return out


def split_dataset(dataset, test_fraction=0.2, seed=0):
    """Shuffled train/test split preserving all per-instance fields."""
    if not 0.0 < test_fraction < 1.0:
        raise DomainError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(dataset.n)
    n_test = max(1, int(round(dataset.n * test_fraction)))
    test_idx, train_idx = perm[:n_test], perm[n_test:]

    def take(idx):
        labels = dataset.true_labels[idx] if dataset.true_labels is not None else None
        return PartialDataset(dataset.features[idx], dataset.candidates[idx], labels)

    return take(train_idx), take(test_idx)


@dataclass
class NoiseConfig:
    seed: int = 0
    probe_hidden: tuple = core.DEFAULT_HIDDEN
    probe_epochs: int = 20
    probe_learning_rate: float = 1e-3
    probe_batch_size: int = 256


def train_probe(features, labels, config):
    """Supervised softmax classifier used to derive flip probabilities."""
    features = np.ascontiguousarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, d = features.shape
    k = int(labels.max()) + 1
    if k < 2:
        raise DataError("probe training needs at least 2 classes")
    rng = np.random.default_rng(config.seed)
    model = nn.init_mlp([d, *config.probe_hidden, k], rng=rng, output_activation="softmax")
    adam = nn.init_adam(model, config.probe_learning_rate)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    for _ in range(config.probe_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.probe_batch_size):
            idx = perm[start : start + config.probe_batch_size]
            out, cache = nn.forward_cached(model, features[idx])
            dz = (out - onehot[idx]) / len(idx)
            grads = nn._backprop_linear(model, cache, dz)
            nn.adam_step(adam, model, grads)
    return model


def flip_probabilities(probs, labels):
    """Per-instance probabilities of adding each incorrect label.

    Each incorrect class is scored by its probe probability relative to
    the strongest incorrect class, then rescaled by the mean score of the
    incorrect classes and clamped to [0, 1] (the rescaling can exceed 1).
    The true-label column is set to 0; callers always include it.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n, k = probs.shape
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(n)
    incorrect = probs.copy()
    incorrect[rows, labels] = -np.inf
    top = incorrect.max(axis=1)

    xi = np.zeros_like(probs)
    ok = top > 0.0
    xi[ok] = np.clip(probs[ok] / top[ok, None], 0.0, None)
    xi[rows, labels] = 0.0
    mean_xi = xi.sum(axis=1) / (k - 1)
    out = np.zeros_like(xi)
    pos = mean_xi > 0.0
    out[pos] = np.clip(xi[pos] / mean_xi[pos, None], 0.0, 1.0)
    out[rows, labels] = 0.0
    return out


def generate_candidates(features, labels, config):
    """Instance-dependent candidate noise.

    Trains the probe, converts its probabilities to per-class flip
    probabilities, and samples each incorrect label independently; the
    true label is always a candidate.  Fully reproducible from the seed.
    """
    features = np.ascontiguousarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    probe = train_probe(features, labels, config)
    probs = core.predict_probabilities(probe, features)
    flip = flip_probabilities(probs, labels)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    candidates = rng.random(flip.shape) < flip
    candidates[np.arange(len(labels)), labels] = True
    return PartialDataset(features, candidates, labels)
