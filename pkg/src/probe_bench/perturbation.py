"""Margin diagnostics over clean/perturbed embedding pairs.

A single logistic probe, trained once on every original specimen, stays
frozen while each eye-clean specimen's embedding and its perturbed
counterpart are scored.  The eye-clean margin of a logit vector z is

    m(z) = z[0] - max(z[1:])

so m > 0 exactly when the probe prefers the eye-clean class (ties at the
top score count as eye-clean via lowest-index argmax, giving m = 0).
The per-pair margin drop is m(clean) - m(perturbed); positive values
mean the perturbation moved the embedding toward the decision boundary.
A pair is reclassified when the perturbed logits argmax to any class
other than eye-clean.

Pairs come from the manifest: a record with a pair_id owns the clean
side and names the record holding its perturbed counterpart.  Clean
sides must carry the eye-clean label.  Eye-clean originals without a
counterpart are skipped and counted, so partial paired sets still yield
a report.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import AlignedDataset, DatasetManifest, EmbeddingSet, LABEL_NAMES, N_CLASSES
from .errors import DataError
from .linear import LogisticModel, TrainConfig, logistic_scores, train_logistic

log = logging.getLogger(__name__)

EYE_CLEAN = 0


def eye_clean_margin(z: np.ndarray) -> float:
    """Eye-clean logit minus the best competing logit."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise DataError(f"margin needs a logit vector with at least 2 classes, got shape {z.shape}")
    return float(z[EYE_CLEAN] - np.max(z[EYE_CLEAN + 1 :]))


@dataclass(frozen=True)
class EmbeddingPair:
    """One eye-clean specimen's embedding and its perturbed counterpart."""

    id: str
    clean: np.ndarray
    perturbed: np.ndarray

    def __post_init__(self) -> None:
        if self.clean.shape != self.perturbed.shape or self.clean.ndim != 1:
            raise DataError(
                f"pair {self.id!r}: clean shape {self.clean.shape} and perturbed "
                f"shape {self.perturbed.shape} must be equal vectors"
            )
        if not (np.all(np.isfinite(self.clean)) and np.all(np.isfinite(self.perturbed))):
            raise DataError(f"pair {self.id!r} contains non-finite values")


@dataclass(frozen=True)
class PairedEmbeddings:
    """All clean/perturbed pairs of one encoder, plus the skip count."""

    encoder_name: str
    pairs: tuple[EmbeddingPair, ...]
    n_unpaired_skipped: int = 0

    def __len__(self) -> int:
        return len(self.pairs)


def paired_embeddings(manifest: DatasetManifest, embeddings: EmbeddingSet) -> PairedEmbeddings:
    """Join manifest pair links to embedding vectors.

    Every record with a pair_id must be eye-clean; its pair_id names the
    perturbed counterpart record.  Eye-clean originals without a pair_id
    are skipped with a warning.
    """
    pairs = []
    skipped = 0
    targets = {r.pair_id for r in manifest.records if r.pair_id}
    for record in manifest.records:
        if record.pair_id:
            if record.label != EYE_CLEAN:
                raise DataError(
                    f"record {record.id!r} has a perturbed counterpart but label "
                    f"{LABEL_NAMES[record.label]!r}; only eye-clean specimens are perturbed"
                )
            pairs.append(
                EmbeddingPair(
                    id=record.id,
                    clean=embeddings.vector(record.id),
                    perturbed=embeddings.vector(record.pair_id),
                )
            )
        elif record.label == EYE_CLEAN and record.id not in targets:
            skipped += 1
    if skipped:
        log.warning(
            "%d eye-clean specimen(s) have no perturbed counterpart and are skipped",
            skipped,
        )
    return PairedEmbeddings(
        encoder_name=embeddings.encoder_name,
        pairs=tuple(pairs),
        n_unpaired_skipped=skipped,
    )


@dataclass(frozen=True)
class PairMargin:
    id: str
    m_clean: float
    m_perturbed: float
    delta_m: float
    reclassified: bool


@dataclass(frozen=True)
class MarginReport:
    """Per-pair margins and their aggregates under one frozen probe."""

    encoder_name: str
    per_specimen: tuple[PairMargin, ...]
    mean_delta: float
    std_delta: float
    reclass_rate: float
    n_unpaired_skipped: int = 0

    @property
    def n_pairs(self) -> int:
        return len(self.per_specimen)

    def to_json_dict(self) -> dict:
        return {
            "encoder": self.encoder_name,
            "n_pairs": self.n_pairs,
            "n_unpaired_skipped": self.n_unpaired_skipped,
            "mean_delta": self.mean_delta,
            "std_delta": self.std_delta,
            "reclass_rate": self.reclass_rate,
            "per_specimen": [
                {
                    "id": row.id,
                    "m_clean": row.m_clean,
                    "m_perturbed": row.m_perturbed,
                    "delta_m": row.delta_m,
                    "reclassified": row.reclassified,
                }
                for row in self.per_specimen
            ],
        }


def train_frozen_probe_for_perturbation(
    data: AlignedDataset, config: TrainConfig | None = None
) -> LogisticModel:
    """One logistic probe over every original specimen; reused for all pairs.

    The full label space is required even if some class happens to be
    absent from the rows, since margins index class 0 of a 3-class rule.
    """
    return train_logistic(data.X, data.y, config, n_classes=N_CLASSES)


def margin_drop_report(probe: LogisticModel, paired: PairedEmbeddings) -> MarginReport:
    """Margins, margin drops, and the reclassification rate for all pairs."""
    if not paired.pairs:
        raise DataError("margin report needs at least one clean/perturbed pair")
    rows = []
    for pair in paired.pairs:
        z_clean = logistic_scores(probe, pair.clean)
        z_perturbed = logistic_scores(probe, pair.perturbed)
        m_clean = eye_clean_margin(z_clean)
        m_perturbed = eye_clean_margin(z_perturbed)
        rows.append(
            PairMargin(
                id=pair.id,
                m_clean=m_clean,
                m_perturbed=m_perturbed,
                delta_m=m_clean - m_perturbed,
                reclassified=int(np.argmax(z_perturbed)) != EYE_CLEAN,
            )
        )
    deltas = np.array([row.delta_m for row in rows])
    n_reclassified = sum(row.reclassified for row in rows)
    return MarginReport(
        encoder_name=paired.encoder_name,
        per_specimen=tuple(rows),
        mean_delta=float(deltas.mean()),
        std_delta=float(deltas.std()),
        reclass_rate=n_reclassified / len(rows),
        n_unpaired_skipped=paired.n_unpaired_skipped,
    )
