"""Datasets of paired image/text embeddings with two-level labels.

Interchange format
------------------
A dataset is two files:

* ``manifest.json`` -- UTF-8 JSON with fields exactly::

      {
        "format_version": 1,
        "dim_image": <int>,
        "dim_text": <int>,
        "records": [
          {"id": str, "category": str, "subcategory": str,
           "split": "train"|"test", "offset": <int>},
          ...
        ]
      }

* ``vectors.f32`` -- raw little-endian float32 blob. Record i occupies
  bytes ``[offset_i, offset_i + 4*(dim_image+dim_text))``: the image vector
  first, then the text vector, row-major. Offsets are strictly increasing,
  non-overlapping, and the blob holds exactly the listed records.

The format is bit-exact and seekable so any ecosystem can produce it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BlobSizeError,
    DataError,
    ManifestError,
    NormalizationError,
    ParameterError,
)

FORMAT_VERSION = 1
_BLOB_DTYPE = np.dtype("<f4")

SPLIT_TRAIN = "train"
SPLIT_TEST = "test"


@dataclass
class EmbeddingRecord:
    """One item: paired image/text vectors plus category/subcategory labels."""

    id: str
    category: str
    subcategory: str
    split: str
    image_vec: np.ndarray
    text_vec: np.ndarray


@dataclass
class Dataset:
    """Loaded records plus the declared vector dimensions."""

    dim_image: int
    dim_text: int
    records: list[EmbeddingRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def train_records(self) -> list[EmbeddingRecord]:
        return [r for r in self.records if r.split == SPLIT_TRAIN]

    def test_records(self) -> list[EmbeddingRecord]:
        return [r for r in self.records if r.split == SPLIT_TEST]

    def subcategory_to_category(self) -> dict[str, str]:
        return {r.subcategory: r.category for r in self.records}

    def categories(self) -> list[str]:
        return sorted({r.category for r in self.records})

    def subcategories(self) -> list[str]:
        return sorted({r.subcategory for r in self.records})


@dataclass
class SplitConfig:
    train_fraction: float = 0.8
    seed: int = 0
    stratify_by: str = "subcategory"

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ParameterError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.stratify_by != "subcategory":
            raise ParameterError(f"unsupported stratify_by {self.stratify_by!r}")


@dataclass
class SplitResult:
    records: list[EmbeddingRecord]
    warnings: list[str] = field(default_factory=list)


def record_nbytes(dim_image: int, dim_text: int) -> int:
    return 4 * (dim_image + dim_text)


def load_dataset(manifest_path, blob_path) -> Dataset:
    """Load and validate a manifest + blob pair.

    Raises ManifestError for malformed or inconsistent manifests,
    BlobSizeError when the blob does not hold exactly the listed records,
    and DataError when a vector contains NaN or Inf.
    """
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as e:
            raise ManifestError(
                f"{manifest_path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}"
            ) from e

    for fname in ("format_version", "dim_image", "dim_text", "records"):
        if fname not in manifest:
            raise ManifestError(f"{manifest_path}: missing field {fname!r}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise ManifestError(
            f"{manifest_path}: unsupported format_version {manifest['format_version']!r}"
        )
    dim_image = manifest["dim_image"]
    dim_text = manifest["dim_text"]
    for dname, dim in (("dim_image", dim_image), ("dim_text", dim_text)):
        if not isinstance(dim, int) or dim < 1:
            raise ManifestError(f"{manifest_path}: field {dname!r} must be a positive integer")

    entries = manifest["records"]
    if not isinstance(entries, list):
        raise ManifestError(f"{manifest_path}: field 'records' must be a list")

    nbytes = record_nbytes(dim_image, dim_text)
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    expected = nbytes * len(entries)
    if len(blob) != expected:
        raise BlobSizeError(
            f"{blob_path}: blob holds {len(blob)} bytes but manifest requires {expected}"
        )

    subcat_owner: dict[str, str] = {}
    records: list[EmbeddingRecord] = []
    prev_offset = None
    for i, entry in enumerate(entries):
        for fname in ("id", "category", "subcategory", "split", "offset"):
            if fname not in entry:
                raise ManifestError(f"{manifest_path}: record {i} missing field {fname!r}")
        rid = entry["id"]
        offset = entry["offset"]
        if not isinstance(offset, int) or offset < 0 or offset + nbytes > len(blob):
            raise ManifestError(f"{manifest_path}: record {rid!r} has offset {offset} out of bounds")
        if prev_offset is not None and offset < prev_offset + nbytes:
            raise ManifestError(
                f"{manifest_path}: record {rid!r} offset {offset} overlaps or is not increasing"
            )
        prev_offset = offset
        if entry["split"] not in (SPLIT_TRAIN, SPLIT_TEST):
            raise ManifestError(f"{manifest_path}: record {rid!r} has invalid split {entry['split']!r}")
        if not entry["category"] or not entry["subcategory"]:
            raise ManifestError(f"{manifest_path}: record {rid!r} has an empty label")
        owner = subcat_owner.setdefault(entry["subcategory"], entry["category"])
        if owner != entry["category"]:
            raise ManifestError(
                f"{manifest_path}: subcategory {entry['subcategory']!r} maps to both "
                f"{owner!r} and {entry['category']!r}"
            )

        vec = np.frombuffer(blob, dtype=_BLOB_DTYPE, count=dim_image + dim_text, offset=offset)
        if not np.isfinite(vec).all():
            bad = int(np.flatnonzero(~np.isfinite(vec))[0])
            modality = "image" if bad < dim_image else "text"
            raise DataError(
                f"record {rid!r}: non-finite value at index {bad} ({modality} vector)"
            )
        records.append(
            EmbeddingRecord(
                id=rid,
                category=entry["category"],
                subcategory=entry["subcategory"],
                split=entry["split"],
                image_vec=vec[:dim_image].copy(),
                text_vec=vec[dim_image:].copy(),
            )
        )
    return Dataset(dim_image=dim_image, dim_text=dim_text, records=records)


def save_dataset(dataset: Dataset, manifest_path, blob_path) -> None:
    """Write the canonical form: contiguous offsets in record order."""
    nbytes = record_nbytes(dataset.dim_image, dataset.dim_text)
    entries = []
    chunks = []
    for i, rec in enumerate(dataset.records):
        if rec.image_vec.shape != (dataset.dim_image,) or rec.text_vec.shape != (dataset.dim_text,):
            raise DataError(
                f"record {rec.id!r}: vector shapes {rec.image_vec.shape}/{rec.text_vec.shape} "
                f"do not match declared dims {dataset.dim_image}/{dataset.dim_text}"
            )
        entries.append(
            {
                "id": rec.id,
                "category": rec.category,
                "subcategory": rec.subcategory,
                "split": rec.split,
                "offset": i * nbytes,
            }
        )
        chunks.append(rec.image_vec.astype(_BLOB_DTYPE, copy=False).tobytes())
        chunks.append(rec.text_vec.astype(_BLOB_DTYPE, copy=False).tobytes())
    manifest = {
        "format_version": FORMAT_VERSION,
        "dim_image": dataset.dim_image,
        "dim_text": dataset.dim_text,
        "records": entries,
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(blob_path, "wb") as fh:
        fh.write(b"".join(chunks))


def _train_count(n: int, fraction: float) -> int:
    # ceil with a guard against float noise on exact multiples
    return int(math.ceil(round(fraction * n, 9)))


def stratified_split(records, cfg: SplitConfig | None = None) -> SplitResult:
    """Assign train/test per subcategory: ceil(fraction*n) train, rest test.

    Deterministic under cfg.seed; subcategories are processed in sorted
    order. A subcategory with a single record is forced to train and
    reported in the result's warnings.
    """
    cfg = cfg or SplitConfig()
    if isinstance(records, Dataset):
        records = records.records
    by_subcat: dict[str, list[EmbeddingRecord]] = {}
    for rec in records:
        by_subcat.setdefault(rec.subcategory, []).append(rec)

    rng = np.random.default_rng(cfg.seed)
    warnings: list[str] = []
    for subcat in sorted(by_subcat):
        group = by_subcat[subcat]
        if len(group) == 1:
            group[0].split = SPLIT_TRAIN
            warnings.append(f"subcategory {subcat!r} has a single record; forced to train")
            continue
        n_train = _train_count(len(group), cfg.train_fraction)
        order = rng.permutation(len(group))
        for rank, idx in enumerate(order):
            group[idx].split = SPLIT_TRAIN if rank < n_train else SPLIT_TEST
    return SplitResult(records=list(records), warnings=warnings)


def synth_generate(
    n_per_subcat: int = 50,
    n_categories: int = 3,
    n_subcats_per_cat: int = 4,
    dim: int = 64,
    seed: int = 7,
    noise_sigma: float = 0.05,
) -> Dataset:
    """Generate a clustered synthetic dataset standing in for real card data.

    Subcategories inside a category are laid out on a (visual group, text
    slot) grid: all subcategories in a visual group share one image
    centroid, and the same text slot reuses one text centroid across
    groups. Image vectors alone therefore confuse subcategories within a
    group, text vectors alone confuse the same slot across groups, and only
    the pair identifies the subcategory. Group size is ceil(subcats/2).
    Centroids are unit vectors; per-record noise is additive Gaussian with
    standard deviation `noise_sigma`. All records start in the train split.
    """
    for name, value in (
        ("n_per_subcat", n_per_subcat),
        ("n_categories", n_categories),
        ("n_subcats_per_cat", n_subcats_per_cat),
        ("dim", dim),
    ):
        if value < 1:
            raise ParameterError(f"{name} must be >= 1, got {value}")

    rng = np.random.default_rng(seed)
    group_size = math.ceil(n_subcats_per_cat / 2)
    n_groups = math.ceil(n_subcats_per_cat / group_size)

    def unit(vecs: np.ndarray) -> np.ndarray:
        return vecs / np.linalg.norm(vecs, axis=-1, keepdims=True)

    records: list[EmbeddingRecord] = []
    for ci in range(n_categories):
        category = f"C{ci:02d}"
        image_centroids = unit(rng.standard_normal((n_groups, dim)))
        text_centroids = unit(rng.standard_normal((group_size, dim)))
        for si in range(n_subcats_per_cat):
            group, slot = divmod(si, group_size)
            subcategory = f"{category}S{si:02d}"
            for j in range(n_per_subcat):
                image_vec = image_centroids[group] + noise_sigma * rng.standard_normal(dim)
                text_vec = text_centroids[slot] + noise_sigma * rng.standard_normal(dim)
                records.append(
                    EmbeddingRecord(
                        id=f"{subcategory}-{j:04d}",
                        category=category,
                        subcategory=subcategory,
                        split=SPLIT_TRAIN,
                        image_vec=image_vec.astype(np.float32),
                        text_vec=text_vec.astype(np.float32),
                    )
                )
    return Dataset(dim_image=dim, dim_text=dim, records=records)


def normalize_concat(image_vec: np.ndarray, text_vec: np.ndarray) -> np.ndarray:
    """Scale each modality to unit L2 norm, then concatenate image-first."""
    halves = []
    for name, vec in (("image", image_vec), ("text", text_vec)):
        norm = float(np.linalg.norm(vec.astype(np.float64, copy=False)))
        if norm == 0.0:
            raise NormalizationError(f"cannot normalize zero {name} vector")
        halves.append((vec / vec.dtype.type(norm)).astype(vec.dtype, copy=False))
    return np.concatenate(halves)
