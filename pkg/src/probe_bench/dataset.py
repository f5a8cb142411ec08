"""Specimen manifests, embedding tables, and their alignment.

File formats
------------
Manifest: CSV with header ``id,label,image_path,pair_id``.  ``label`` is one
of ``eye-clean``, ``moderate``, ``heavy`` (class ids 0, 1, 2).  ``image_path``
and ``pair_id`` may be empty.  A non-empty ``pair_id`` names another record
in the same manifest holding the perturbed counterpart of an eye-clean
specimen.

Embeddings: CSV with header ``id,f0,f1,...,f{d-1}``.  Values are written with
``repr`` so that a write/load round trip reproduces every float64 bit for
bit.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .rng import generator

log = logging.getLogger(__name__)

LABEL_NAMES: tuple[str, ...] = ("eye-clean", "moderate", "heavy")
LABEL_IDS: dict[str, int] = {name: i for i, name in enumerate(LABEL_NAMES)}
N_CLASSES = len(LABEL_NAMES)

GAUSSIAN_CONTROL_NAME = "gaussian-control"
CLASSICAL_ENCODER_NAME = "classical-14"


@dataclass(frozen=True)
class SpecimenRecord:
    id: str
    label: int
    image_path: str = ""
    pair_id: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    """Validated list of specimen records in file order."""

    records: tuple[SpecimenRecord, ...]
    path: str = ""

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    @property
    def class_counts(self) -> tuple[int, ...]:
        counts = [0] * N_CLASSES
        for r in self.records:
            counts[r.label] += 1
        return tuple(counts)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, specimen_id: str) -> SpecimenRecord:
        for r in self.records:
            if r.id == specimen_id:
                return r
        raise KeyError(specimen_id)

    def originals(self) -> tuple[SpecimenRecord, ...]:
        """Records that are not the perturbed counterpart of another record."""
        targets = {r.pair_id for r in self.records if r.pair_id}
        return tuple(r for r in self.records if r.id not in targets)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read and validate a manifest CSV.

    Raises DataError on a malformed row, a duplicate id, an unknown label
    token, a dangling pair_id, or any class with fewer than two members
    (leave-one-out training folds must contain every class).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc

    reader = csv.reader(text.splitlines())
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"manifest {path} is empty") from None
    expected = ["id", "label", "image_path", "pair_id"]
    if [h.strip() for h in header] != expected:
        raise DataError(
            f"manifest {path} has header {header!r}; expected {expected!r}"
        )

    records: list[SpecimenRecord] = []
    seen: set[str] = set()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 4:
            raise DataError(f"manifest {path} line {lineno}: expected 4 fields, got {len(row)}")
        sid, label_token, image_path, pair_id = (cell.strip() for cell in row)
        if not sid:
            raise DataError(f"manifest {path} line {lineno}: empty id")
        if sid in seen:
            raise DataError(f"manifest {path} line {lineno}: duplicate id {sid!r}")
        seen.add(sid)
        if label_token not in LABEL_IDS:
            raise DataError(
                f"manifest {path} line {lineno}: unknown label {label_token!r};"
                f" expected one of {', '.join(LABEL_NAMES)}"
            )
        records.append(
            SpecimenRecord(id=sid, label=LABEL_IDS[label_token], image_path=image_path, pair_id=pair_id)
        )

    if not records:
        raise DataError(f"manifest {path} contains no records")

    by_id = {r.id for r in records}
    for r in records:
        if r.pair_id and r.pair_id not in by_id:
            raise DataError(f"manifest {path}: record {r.id!r} names missing pair_id {r.pair_id!r}")
        if r.pair_id == r.id:
            raise DataError(f"manifest {path}: record {r.id!r} is paired with itself")

    counts = [0] * N_CLASSES
    for r in records:
        counts[r.label] += 1
    for cls, count in enumerate(counts):
        if count < 2:
            raise DataError(
                f"manifest {path}: class {LABEL_NAMES[cls]!r} has {count} member(s);"
                " every class needs at least 2 for leave-one-out evaluation"
            )

    return DatasetManifest(records=tuple(records), path=str(path))


@dataclass(frozen=True)
class EmbeddingSet:
    """Fixed per-specimen feature vectors from one encoder."""

    encoder_name: str
    ids: tuple[str, ...]
    values: np.ndarray  # (n, dim) float64
    index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self.index:
            object.__setattr__(self, "index", {sid: i for i, sid in enumerate(self.ids)})

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def vector(self, specimen_id: str) -> np.ndarray:
        try:
            return self.values[self.index[specimen_id]]
        except KeyError:
            raise DataError(
                f"embedding set {self.encoder_name!r} has no row for id {specimen_id!r}"
            ) from None


def make_embedding_set(encoder_name: str, ids: list[str] | tuple[str, ...], values: np.ndarray) -> EmbeddingSet:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != len(ids):
        raise DataError(
            f"embedding matrix shape {values.shape} does not match {len(ids)} ids"
        )
    if len(set(ids)) != len(ids):
        raise DataError(f"embedding set {encoder_name!r} has duplicate ids")
    if not np.all(np.isfinite(values)):
        bad = [ids[i] for i in np.unique(np.nonzero(~np.isfinite(values))[0])][:5]
        raise DataError(f"embedding set {encoder_name!r} has non-finite values (ids {bad})")
    return EmbeddingSet(encoder_name=encoder_name, ids=tuple(ids), values=values)


def load_embeddings(path: str | Path, encoder_name: str | None = None) -> EmbeddingSet:
    """Read an embeddings CSV. encoder_name defaults to the file stem."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read embeddings {path}: {exc}") from exc
    name = encoder_name if encoder_name is not None else path.stem

    reader = csv.reader(text.splitlines())
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"embeddings {path} is empty") from None
    if len(header) < 2 or header[0].strip() != "id":
        raise DataError(f"embeddings {path}: header must be id,f0,...,f{{d-1}}")
    dim = len(header) - 1
    for j, col in enumerate(header[1:]):
        if col.strip() != f"f{j}":
            raise DataError(
                f"embeddings {path}: feature column {j} is named {col!r}; expected f{j}"
            )

    ids: list[str] = []
    rows: list[list[float]] = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != dim + 1:
            raise DataError(
                f"embeddings {path} line {lineno}: expected {dim + 1} fields, got {len(row)}"
            )
        sid = row[0].strip()
        if not sid:
            raise DataError(f"embeddings {path} line {lineno}: empty id")
        try:
            vec = [float(cell) for cell in row[1:]]
        except ValueError as exc:
            raise DataError(f"embeddings {path} line {lineno} (id {sid!r}): {exc}") from exc
        if not all(math.isfinite(v) for v in vec):
            raise DataError(f"embeddings {path} line {lineno} (id {sid!r}): non-finite value")
        ids.append(sid)
        rows.append(vec)

    if not ids:
        raise DataError(f"embeddings {path} contains no rows")
    if len(set(ids)) != len(ids):
        dupes = sorted({s for s in ids if ids.count(s) > 1})
        raise DataError(f"embeddings {path}: duplicate ids {dupes[:5]}")
    return EmbeddingSet(encoder_name=name, ids=tuple(ids), values=np.array(rows, dtype=np.float64))


def write_embeddings(embeddings: EmbeddingSet, path: str | Path) -> None:
    """Write an embeddings CSV that loads back bit for bit."""
    path = Path(path)
    dim = embeddings.dim
    lines = ["id," + ",".join(f"f{j}" for j in range(dim))]
    for i, sid in enumerate(embeddings.ids):
        row = embeddings.values[i]
        lines.append(sid + "," + ",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def generate_gaussian_control(
    n_specimens: int,
    dim: int,
    seed: int,
    ids: list[str] | tuple[str, ...] | None = None,
) -> EmbeddingSet:
    """Label-independent N(0, I) control embeddings.

    The matrix is a deterministic function of (n_specimens, dim, seed): a
    Philox counter-based stream feeding numpy's ziggurat normal sampler.
    Row ids default to g0000, g0001, ... and may be overridden to match a
    manifest.
    """
    if n_specimens < 1 or dim < 1:
        raise DataError("gaussian control needs n_specimens >= 1 and dim >= 1")
    gen = generator(seed)
    values = gen.standard_normal((n_specimens, dim), dtype=np.float64)
    if ids is None:
        ids = tuple(f"g{i:04d}" for i in range(n_specimens))
    if len(ids) != n_specimens:
        raise DataError(f"gaussian control: {len(ids)} ids for {n_specimens} rows")
    return make_embedding_set(GAUSSIAN_CONTROL_NAME, tuple(ids), values)


@dataclass(frozen=True)
class AlignedDataset:
    """Embedding rows reordered to manifest order, ready for evaluation."""

    X: np.ndarray  # (n, dim) float64
    y: np.ndarray  # (n,) int64 class ids
    ids: tuple[str, ...]
    encoder_name: str = ""
    n_extra_ignored: int = 0

    def __len__(self) -> int:
        return len(self.ids)


def align(manifest: DatasetManifest, embeddings: EmbeddingSet) -> AlignedDataset:
    """Join manifest rows to embedding rows by id, in manifest order.

    Missing embeddings are an error listing every absent id.  Embedding rows
    without a manifest entry are ignored; their count is kept on the result
    and logged as a warning.
    """
    missing = [r.id for r in manifest.records if r.id not in embeddings.index]
    if missing:
        raise DataError(
            f"embedding set {embeddings.encoder_name!r} is missing ids: {', '.join(missing)}"
        )
    manifest_ids = set(manifest.ids)
    extra = sum(1 for sid in embeddings.ids if sid not in manifest_ids)
    if extra:
        log.warning(
            "embedding set %r has %d row(s) with no manifest entry; ignored",
            embeddings.encoder_name,
            extra,
        )
    order = [embeddings.index[r.id] for r in manifest.records]
    X = embeddings.values[order].copy()
    return AlignedDataset(
        X=X,
        y=manifest.labels,
        ids=manifest.ids,
        encoder_name=embeddings.encoder_name,
        n_extra_ignored=extra,
    )
