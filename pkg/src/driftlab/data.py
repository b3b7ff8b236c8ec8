"""Dataset acquisition: synthetic Gaussian clusters, IDX binary images,
and a plain CSV reader. All readers are deterministic; nothing here ever
reorders samples.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetFormatError(ValueError):
    """Input file violates its declared format."""


@dataclass
class LabeledDataset:
    """Features [n, d] with integer labels forming a contiguous 0..K-1 range.

    ``original_labels[k]`` records which source label was remapped to k, so
    the ingestion remap stays a recoverable bijection.
    """

    features: np.ndarray
    labels: np.ndarray
    class_names: list[str] | None = None
    original_labels: tuple = ()

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise DatasetFormatError(
                f"{self.features.shape[0]} feature rows vs {self.labels.shape[0]} labels"
            )
        if not self.original_labels:
            self.original_labels = tuple(range(self.n_classes))

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def subset(self, mask) -> "LabeledDataset":
        """Row subset; labels keep their global ids (no remapping)."""
        sub = LabeledDataset.__new__(LabeledDataset)
        sub.features = self.features[mask]
        sub.labels = self.labels[mask]
        sub.class_names = self.class_names
        sub.original_labels = self.original_labels
        return sub


def gen_gaussian_clusters(
    n_classes: int, per_class: int, dim: int, spread: float, seed: int
) -> LabeledDataset:
    """Isotropic Gaussian blobs around seeded random unit-sphere centers."""
    if n_classes < 1 or per_class < 1 or dim < 1:
        raise ValueError("n_classes, per_class and dim must be positive")
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    feats = np.repeat(centers, per_class, axis=0)
    feats = feats + spread * rng.normal(size=feats.shape)
    labels = np.repeat(np.arange(n_classes), per_class)
    return LabeledDataset(feats, labels)


def _read_be_ints(buf: bytes, path: str, offset: int, count: int) -> tuple:
    end = offset + 4 * count
    if len(buf) < end:
        raise DatasetFormatError(
            f"{path}: truncated at byte {len(buf)}, needed {end} for header"
        )
    return struct.unpack(f">{count}i", buf[offset:end])


def read_idx(images_path, labels_path) -> LabeledDataset:
    """Read an IDX image/label file pair (big-endian, magic 0x803/0x801).

    Pixels come back flattened to [n, rows*cols] and scaled to [0, 1].
    """
    with open(images_path, "rb") as fh:
        img_buf = fh.read()
    with open(labels_path, "rb") as fh:
        lab_buf = fh.read()

    (magic,) = _read_be_ints(img_buf, str(images_path), 0, 1)
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetFormatError(
            f"{images_path}: bad magic 0x{magic & 0xFFFFFFFF:08x}, "
            f"expected 0x{IDX_IMAGES_MAGIC:08x}"
        )
    n, rows, cols = _read_be_ints(img_buf, str(images_path), 4, 3)
    need = 16 + n * rows * cols
    if len(img_buf) < need:
        raise DatasetFormatError(
            f"{images_path}: truncated at byte {len(img_buf)}, expected {need}"
        )

    (magic,) = _read_be_ints(lab_buf, str(labels_path), 0, 1)
    if magic != IDX_LABELS_MAGIC:
        raise DatasetFormatError(
            f"{labels_path}: bad magic 0x{magic & 0xFFFFFFFF:08x}, "
            f"expected 0x{IDX_LABELS_MAGIC:08x}"
        )
    (n_lab,) = _read_be_ints(lab_buf, str(labels_path), 4, 1)
    if n_lab != n:
        raise DatasetFormatError(f"{n} images but {n_lab} labels")
    if len(lab_buf) < 8 + n_lab:
        raise DatasetFormatError(
            f"{labels_path}: truncated at byte {len(lab_buf)}, expected {8 + n_lab}"
        )

    pixels = np.frombuffer(img_buf, dtype=np.uint8, count=n * rows * cols, offset=16)
    feats = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab_buf, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    return LabeledDataset(feats, labels)


def read_csv_dataset(path) -> LabeledDataset:
    """Read `label,f0,f1,...` rows; labels remapped to 0..K-1 in
    first-appearance order."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or (len(lines) == 1 and not lines[0].strip()):
        raise DatasetFormatError(f"{path}: empty file (line 1)")
    header = lines[0].split(",")
    if header[0] != "label":
        raise DatasetFormatError(f"{path}: line 1: header must start with 'label'")
    width = len(header)

    feats = []
    raw_labels = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != width:
            raise DatasetFormatError(
                f"{path}: line {lineno}: {len(cells)} cells, expected {width}"
            )
        try:
            values = [float(c) for c in cells]
        except ValueError:
            raise DatasetFormatError(
                f"{path}: line {lineno}: non-numeric cell"
            ) from None
        raw_labels.append(int(values[0]))
        feats.append(values[1:])
    if not feats:
        raise DatasetFormatError(f"{path}: no data rows (line 2)")

    remap: dict[int, int] = {}
    for lab in raw_labels:
        if lab not in remap:
            remap[lab] = len(remap)
    labels = np.array([remap[lab] for lab in raw_labels], dtype=np.int64)
    original = tuple(sorted(remap, key=remap.get))
    return LabeledDataset(np.array(feats), labels, original_labels=original)


def write_csv_dataset(path, dataset: LabeledDataset):
    """Inverse of read_csv_dataset, full float precision."""
    d = dataset.features.shape[1]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("label," + ",".join(f"f{i}" for i in range(d)) + "\n")
        for lab, row in zip(dataset.labels, dataset.features):
            fh.write(f"{int(lab)}," + ",".join(f"{v:.17g}" for v in row) + "\n")
