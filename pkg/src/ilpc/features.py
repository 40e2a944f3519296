"""Embedding matrices: file formats, synthetic generation, pre-processing.

Three on-disk formats are supported, all carrying an explicit dimension:

* ``csv`` -- one example per line, ``d`` comma-separated decimals, optional
  trailing integer label; optional first line ``#d=<d>,labeled=<0|1>``.
* ``npy`` -- standard NPY v1.0, float32/float64, shape ``(T, d)``; labels,
  if any, in a sibling file ``<stem>.labels.npy`` (int64, shape ``(T,)``).
* ``raw_f32`` -- 16-byte header (magic ``ILPC``, u32 T, u32 d, u32 flags
  with bit0 = labeled), then ``T*d`` little-endian float32, then ``T``
  little-endian int32 labels if flagged.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, PreprocessError

RAW_MAGIC = b"ILPC"
FORMATS = ("csv", "npy", "raw_f32")

# Shift applied before exponentiation in the power transform so that zero
# features stay in the domain of x**beta for beta < 1.
POWER_TRANSFORM_EPS = 1e-6


@dataclass(frozen=True)
class FeatureSet:
    """T x d embedding matrix with optional ground-truth labels.

    Immutable after construction; safe to share across worker threads or
    processes.
    """

    data: np.ndarray
    labels: np.ndarray | None = None
    class_count: int = 0
    source_tag: str = ""

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64, order="C")
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"feature matrix must be 2-D and nonempty, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("feature matrix contains non-finite entries")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

        labels = self.labels
        if labels is not None:
            labels = np.array(labels, dtype=np.int64)
            if labels.shape != (data.shape[0],):
                raise ValueError(
                    f"labels shape {labels.shape} does not match {data.shape[0]} examples"
                )
            count = self.class_count if self.class_count > 0 else int(labels.max()) + 1
            if labels.min() < 0 or labels.max() >= count:
                raise ValueError(f"labels must lie in [0, {count})")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)
            object.__setattr__(self, "class_count", count)

    @property
    def n_examples(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class L2Normalize:
    """Scale each row to unit Euclidean norm (zero rows left unchanged)."""


@dataclass(frozen=True)
class L1Normalize:
    """Scale each row to unit absolute sum (zero rows left unchanged)."""


@dataclass(frozen=True)
class PowerTransformCenter:
    """Element-wise (x + eps)**beta, row l2, column centering, row l2 again.

    Requires nonnegative inputs. ``beta=1`` degenerates to plain
    normalize-center-normalize.
    """

    beta: float = 0.5


@dataclass(frozen=True)
class PCA:
    """Project rows onto the leading principal components of the statistics
    population."""

    target_dim: int


PreprocessStep = L2Normalize | L1Normalize | PowerTransformCenter | PCA


@dataclass(frozen=True)
class PreprocessSpec:
    """Ordered list of pre-processing steps; empty means identity."""

    steps: tuple[PreprocessStep, ...] = ()

    @classmethod
    def parse(cls, text: str) -> "PreprocessSpec":
        """Parse a comma-separated step list, e.g. ``"pt,pca=5"``.

        Tokens: ``l2``, ``l1``, ``pt`` (optionally ``pt=<beta>``), ``center``
        (power transform with beta=1, i.e. normalize-center-normalize), and
        ``pca=<m>``.
        """
        steps: list[PreprocessStep] = []
        for token in filter(None, (t.strip() for t in text.split(","))):
            if token == "l2":
                steps.append(L2Normalize())
            elif token == "l1":
                steps.append(L1Normalize())
            elif token == "pt":
                steps.append(PowerTransformCenter())
            elif token.startswith("pt="):
                steps.append(PowerTransformCenter(beta=float(token[3:])))
            elif token == "center":
                steps.append(PowerTransformCenter(beta=1.0))
            elif token.startswith("pca="):
                steps.append(PCA(target_dim=int(token[4:])))
            else:
                raise ValueError(f"unknown preprocess token {token!r}")
        return cls(steps=tuple(steps))


@dataclass(frozen=True)
class BlobSpec:
    """Synthetic isotropic-Gaussian class blobs standing in for backbone
    features."""

    class_count: int
    dim: int
    per_class_mean_scale: float
    noise_sigma: float
    examples_per_class: int
    seed: int

    def __post_init__(self) -> None:
        if self.class_count < 1 or self.dim < 1 or self.examples_per_class < 1:
            raise ValueError("class_count, dim and examples_per_class must be >= 1")
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be > 0")


def blob_class_means(spec: BlobSpec) -> np.ndarray:
    """Deterministic class means: scaled standard-basis vectors, with the
    scale stepped up each time the basis wraps around (class_count > dim)."""
    means = np.zeros((spec.class_count, spec.dim))
    for c in range(spec.class_count):
        means[c, c % spec.dim] = spec.per_class_mean_scale * (1 + c // spec.dim)
    return means


def generate_blobs(spec: BlobSpec) -> FeatureSet:
    """Sample `examples_per_class` points per class around fixed class means.

    Deterministic for a fixed seed; rows are grouped by class.
    """
    rng = np.random.default_rng(spec.seed)
    means = blob_class_means(spec)
    labels = np.repeat(np.arange(spec.class_count), spec.examples_per_class)
    data = means[labels] + spec.noise_sigma * rng.standard_normal((labels.size, spec.dim))
    return FeatureSet(
        data=data,
        labels=labels,
        class_count=spec.class_count,
        source_tag=f"blobs(seed={spec.seed})",
    )


def _normalize_rows(x: np.ndarray, ord: int) -> np.ndarray:
    norms = np.linalg.norm(x, ord=ord, axis=1, keepdims=True)
    return np.divide(x, norms, out=x.copy(), where=norms > 0)


def preprocess(
    fs: FeatureSet,
    spec: PreprocessSpec,
    stats_indices: np.ndarray | None = None,
) -> FeatureSet:
    """Apply the steps of `spec` in order and return a new FeatureSet.

    `stats_indices` restricts the population over which column means and
    principal components are estimated (e.g. support + unlabeled rows in the
    semi-supervised setting, where query statistics must not leak in); the
    transform itself is always applied to every row. Default: all rows.
    """
    if not spec.steps:
        return fs
    x = np.array(fs.data, dtype=np.float64)
    stats = slice(None) if stats_indices is None else np.asarray(stats_indices, dtype=np.intp)

    for step in spec.steps:
        if isinstance(step, L2Normalize):
            x = _normalize_rows(x, ord=2)
        elif isinstance(step, L1Normalize):
            x = _normalize_rows(x, ord=1)
        elif isinstance(step, PowerTransformCenter):
            if x.min() < 0:
                raise PreprocessError(
                    "power transform requires nonnegative features "
                    f"(min entry {x.min():.3g})"
                )
            x = np.power(x + POWER_TRANSFORM_EPS, step.beta)
            x = _normalize_rows(x, ord=2)
            x = x - x[stats].mean(axis=0)
            x = _normalize_rows(x, ord=2)
        elif isinstance(step, PCA):
            x = _pca_project(x, stats, step.target_dim)
        else:
            raise TypeError(f"unknown preprocess step {step!r}")

    return FeatureSet(
        data=x, labels=fs.labels, class_count=fs.class_count, source_tag=fs.source_tag
    )


def _pca_project(x: np.ndarray, stats, m: int) -> np.ndarray:
    pop = x[stats]
    if m < 1 or m > x.shape[1]:
        raise PreprocessError(f"PCA target_dim {m} outside [1, {x.shape[1]}]")
    if pop.shape[0] < m:
        raise PreprocessError(
            f"PCA needs at least target_dim={m} statistics rows, got {pop.shape[0]}"
        )
    mean = pop.mean(axis=0)
    centered = pop - mean
    cov = centered.T @ centered / max(pop.shape[0] - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]

    tol = max(eigvals[0], 0.0) * 1e-10
    rank = int(np.sum(eigvals > tol))
    if rank < m:
        raise PreprocessError(f"PCA rank deficiency: achieved rank {rank} < target_dim {m}")

    components = eigvecs[:, :m].T
    # Deterministic sign: largest-magnitude coordinate of each component positive.
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return (x - mean) @ components.T


def save_features(fs: FeatureSet, path: str | Path, format: str = "npy") -> None:
    """Write `fs` to `path` in one of the documented formats."""
    path = Path(path)
    if format == "csv":
        _save_csv(fs, path)
    elif format == "npy":
        np.save(path, fs.data.astype(np.float64))
        if fs.labels is not None:
            np.save(_labels_sibling(path), fs.labels.astype(np.int64))
    elif format == "raw_f32":
        _save_raw(fs, path)
    else:
        raise ValueError(f"unknown format {format!r} (expected one of {FORMATS})")


def load_features(path: str | Path, format: str = "npy") -> FeatureSet:
    """Load a FeatureSet from `path`; labels populated iff the file carries
    them."""
    path = Path(path)
    if format == "csv":
        return _load_csv(path)
    if format == "npy":
        return _load_npy(path)
    if format == "raw_f32":
        return _load_raw(path)
    raise ValueError(f"unknown format {format!r} (expected one of {FORMATS})")


def _labels_sibling(path: Path) -> Path:
    stem = path.name[: -len(".npy")] if path.name.endswith(".npy") else path.name
    return path.with_name(stem + ".labels.npy")


def _check_finite(data: np.ndarray, path: Path) -> None:
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        r, c = bad[0]
        raise FormatError(f"{path}: non-finite value at row {r}, column {c}")


def _save_csv(fs: FeatureSet, path: Path) -> None:
    labeled = fs.labels is not None
    with open(path, "w") as fh:
        fh.write(f"#d={fs.dim},labeled={int(labeled)}\n")
        for i in range(fs.n_examples):
            row = ",".join(repr(float(v)) for v in fs.data[i])
            if labeled:
                row += f",{int(fs.labels[i])}"
            fh.write(row + "\n")


def _is_integer_literal(tok: str) -> bool:
    tok = tok.strip()
    if tok.startswith(("-", "+")):
        tok = tok[1:]
    return tok.isdigit()


def _load_csv(path: Path) -> FeatureSet:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: malformed header (empty file)")

    d = None
    labeled = None
    if lines[0].startswith("#"):
        header, lines = lines[0], lines[1:]
        try:
            fields = dict(kv.split("=") for kv in header.lstrip("#").split(","))
            d = int(fields["d"])
            labeled = bool(int(fields["labeled"]))
        except (ValueError, KeyError) as exc:
            raise FormatError(f"{path}: malformed header {header!r}") from exc
        if not lines:
            raise FormatError(f"{path}: header but no data rows")

    rows = [ln.split(",") for ln in lines]
    if labeled is None:
        # No header: a trailing integer literal on every row marks a label column.
        labeled = all(_is_integer_literal(r[-1]) for r in rows) and len(rows[0]) >= 2
    if d is None:
        d = len(rows[0]) - int(labeled)

    width = d + int(labeled)
    data = np.empty((len(rows), d))
    labels = np.empty(len(rows), dtype=np.int64) if labeled else None
    for i, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(f"{path}: row {i} has {len(row)} fields, expected {width}")
        try:
            data[i] = [float(v) for v in row[:d]]
            if labeled:
                labels[i] = int(row[d])
        except ValueError as exc:
            raise FormatError(f"{path}: unparseable value in row {i}") from exc
    _check_finite(data, path)
    if labels is not None and labels.min() < 0:
        raise FormatError(f"{path}: label out of range at row {int(np.argmin(labels))}")
    return FeatureSet(data=data, labels=labels, source_tag=str(path))


def _load_npy(path: Path) -> FeatureSet:
    try:
        data = np.load(path)
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.ndim != 2 or data.dtype not in (np.float32, np.float64):
        raise FormatError(
            f"{path}: expected a 2-D float32/float64 array, got {data.dtype} {data.shape}"
        )
    _check_finite(data, path)
    labels = None
    sibling = _labels_sibling(path)
    if sibling.exists():
        labels = np.load(sibling)
        if labels.shape != (data.shape[0],):
            raise FormatError(
                f"{sibling}: labels shape {labels.shape} does not match {data.shape[0]} rows"
            )
        if labels.min() < 0:
            raise FormatError(f"{sibling}: label out of range")
    return FeatureSet(data=data.astype(np.float64), labels=labels, source_tag=str(path))


def _save_raw(fs: FeatureSet, path: Path) -> None:
    labeled = fs.labels is not None
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<III", fs.n_examples, fs.dim, int(labeled)))
        fh.write(fs.data.astype("<f4").tobytes())
        if labeled:
            fh.write(fs.labels.astype("<i4").tobytes())


def _load_raw(path: Path) -> FeatureSet:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != RAW_MAGIC:
        raise FormatError(f"{path}: malformed header (bad magic or truncated)")
    t, d, flags = struct.unpack("<III", blob[4:16])
    if t < 1 or d < 1:
        raise FormatError(f"{path}: malformed header (T={t}, d={d})")
    labeled = bool(flags & 1)
    need = 16 + 4 * t * d + (4 * t if labeled else 0)
    if len(blob) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", count=t * d, offset=16).reshape(t, d)
    _check_finite(data, path)
    labels = None
    if labeled:
        labels = np.frombuffer(blob, dtype="<i4", count=t, offset=16 + 4 * t * d)
        if labels.min() < 0:
            raise FormatError(f"{path}: label out of range")
        labels = labels.astype(np.int64)
    return FeatureSet(data=data.astype(np.float64), labels=labels, source_tag=str(path))
