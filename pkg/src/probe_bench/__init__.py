"""Deterministic probing benchmark for frozen per-specimen feature vectors.

Pipeline pieces: manifest/embedding IO and alignment, a 14-dimensional
classical image baseline, from-scratch linear and tree probes, pooled
leave-one-out evaluation with label-permutation significance, a margin
diagnostic for paired perturbed specimens, and a reporting CLI.
"""

__version__ = "0.1.0"

from .dataset import (  # noqa: F401
    AlignedDataset,
    DatasetManifest,
    EmbeddingSet,
    SpecimenRecord,
    align,
    generate_gaussian_control,
    load_embeddings,
    load_manifest,
    write_embeddings,
)
from .errors import ConfigError, DataError, ProbeBenchError, ProbeFailure  # noqa: F401
from .metrics import MetricBundle, PooledPredictions, compute_metrics  # noqa: F401
