"""Leave-one-out evaluation with label-permutation significance tests.

Every specimen is held out once; the probe refits on the remaining rows
(rescaling features per fold) and scores the held-out row.  The pooled
held-out scores yield accuracy, macro F1, and macro one-vs-rest AUC.
Significance of the AUC comes from refitting the full leave-one-out loop
under shuffled labels: the p-value is the fraction of null AUCs greater
than or equal to the observed one, so 0.0 is attainable; the conservative
(count + 1) / (n_perm + 1) variant is carried alongside.

Determinism contract
--------------------
Permutation j shuffles labels with a Fisher-Yates pass seeded by
hash(seed, "perm", j), and per-fold tree fits are seeded by
hash(probe_seed, "fold", fold).  Linear probes solve label batches
jointly, and BLAS products differ at floating-point resolution when the
batch width changes, so permutations are partitioned into fixed-size
blocks (PERM_BLOCK) regardless of worker count.  Workers claim whole
blocks; results land in a preallocated array at disjoint indices.  Output
is therefore bit-identical across reruns and across worker counts on one
machine.

Feature providers
-----------------
Probes see features through a provider with ``n_rows`` and
``fold_features(i) -> (train_matrix, held_out_vector)``.  The default
provider slices one fixed matrix.  The handcrafted-feature provider
rebuilds its reference-distance columns per fold from the training rows'
true labels; permutations shuffle only the labels probes train on, so
fold feature matrices are built once and reused across the whole test.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from multiprocessing import get_context
from typing import Callable

import numpy as np

from .classical import references_from_histograms, distance_features
from .dataset import (
    AlignedDataset,
    DatasetManifest,
    EmbeddingSet,
    GAUSSIAN_CONTROL_NAME,
    N_CLASSES,
    align,
)
from .errors import ConfigError, DataError, ProbeFailure
from .linear import LinearFoldBank, TrainConfig
from .metrics import MetricBundle, PooledPredictions, compute_metrics, macro_ovr_auc
from .rng import fisher_yates, subseed
from .trees import (
    ForestConfig,
    GbtConfig,
    TreeDesign,
    forest_scores,
    gbt_scores,
    train_gbt,
    train_random_forest,
)

PERM_BLOCK = 128

FAMILY_LOGISTIC = "logistic"
FAMILY_LINEAR_SVM = "linear_svm"
FAMILY_FOREST = "random_forest"
FAMILY_GBT = "gbt"
FAMILY_CONSTANT = "constant"


@dataclass(frozen=True)
class ConstantConfig:
    """Config for the diagnostic probe that scores every class identically."""

    value: float = 0.0

    def validate(self) -> None:
        if not math.isfinite(self.value):
            raise ConfigError(f"constant probe value must be finite, got {self.value}")


_FAMILY_CONFIGS = {
    FAMILY_LOGISTIC: TrainConfig,
    FAMILY_LINEAR_SVM: TrainConfig,
    FAMILY_FOREST: ForestConfig,
    FAMILY_GBT: GbtConfig,
    FAMILY_CONSTANT: ConstantConfig,
}


@dataclass(frozen=True)
class ProbeSpec:
    """A probe family, its display name, and its training configuration.

    The constant family is a diagnostic: it emits one fixed score for
    every row and class, exercising the degenerate branch of the
    permutation machinery (all AUCs tie at 0.5, p = 1.0).
    """

    family: str
    name: str
    config: TrainConfig | ForestConfig | GbtConfig | ConstantConfig

    def validate(self) -> None:
        expected = _FAMILY_CONFIGS.get(self.family)
        if expected is None:
            raise ConfigError(
                f"unknown probe family {self.family!r}; expected one of "
                f"{sorted(_FAMILY_CONFIGS)}"
            )
        if not isinstance(self.config, expected):
            raise ConfigError(
                f"probe {self.name!r}: family {self.family!r} needs a "
                f"{expected.__name__}, got {type(self.config).__name__}"
            )
        if not self.name:
            raise ConfigError("probe name must be nonempty")
        self.config.validate()


def default_probes(seed: int = 0) -> tuple[ProbeSpec, ...]:
    """The standard four-probe grid: two linear, two tree ensembles."""
    return (
        ProbeSpec(FAMILY_LOGISTIC, "logistic", TrainConfig(seed=seed)),
        ProbeSpec(FAMILY_LINEAR_SVM, "linear_svm", TrainConfig(seed=seed)),
        ProbeSpec(FAMILY_FOREST, "random_forest", ForestConfig(seed=seed)),
        ProbeSpec(FAMILY_GBT, "gbt", GbtConfig(seed=seed)),
    )


@dataclass(frozen=True)
class LoocvResult:
    probe: ProbeSpec
    pooled: PooledPredictions
    metrics: MetricBundle
    per_fold_train_size: int


@dataclass(frozen=True)
class PermutationResult:
    """Observed AUC against its label-shuffle null distribution.

    p_value = |{j : null_aucs[j] >= observed_auc}| / n_perm.
    p_conservative = (count + 1) / (n_perm + 1).
    """

    observed_auc: float
    null_aucs: np.ndarray
    p_value: float
    p_conservative: float
    n_perm: int
    seed: int


class ArrayFoldFeatures:
    """Fold features sliced from one fixed (n_rows, dim) matrix."""

    def __init__(self, X: np.ndarray):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise DataError(f"need a (n_rows >= 2, dim) feature matrix, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("feature matrix contains non-finite values")
        self.X = X

    @property
    def n_rows(self) -> int:
        return int(self.X.shape[0])

    def fold_features(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        keep = np.arange(self.n_rows) != i
        return self.X[keep], self.X[i]


class ClassicalFoldFeatures:
    """Handcrafted features whose distance columns are refit per fold.

    Columns 0..7 are per-image constants.  Columns 8..13 are
    Bhattacharyya distances to per-class reference histograms built from
    the fold's training rows, grouped by their true labels; the held-out
    image never contributes to the references it is scored against.
    Fold matrices depend only on images and true labels, never on
    shuffled probe-training labels, so they are cached and shared across
    an entire permutation test.
    """

    def __init__(
        self,
        base: np.ndarray,
        s_hists: np.ndarray,
        v_hists: np.ndarray,
        labels: np.ndarray,
        n_classes: int = N_CLASSES,
    ):
        base = np.asarray(base, dtype=np.float64)
        s_hists = np.asarray(s_hists, dtype=np.float64)
        v_hists = np.asarray(v_hists, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        n = base.shape[0]
        if base.ndim != 2 or base.shape[1] != 8:
            raise DataError(f"base features must be (n_rows, 8), got {base.shape}")
        if s_hists.shape != v_hists.shape or s_hists.ndim != 2 or s_hists.shape[0] != n:
            raise DataError("histogram tables must be (n_rows, bins) and match the base rows")
        if labels.shape != (n,):
            raise DataError(f"need {n} labels, got shape {labels.shape}")
        self.base = base
        self.s_hists = s_hists
        self.v_hists = v_hists
        self.labels = labels
        self.n_classes = n_classes
        self._cache: dict[int, np.ndarray] = {}

    @property
    def n_rows(self) -> int:
        return int(self.base.shape[0])

    def _fold_matrix(self, i: int) -> np.ndarray:
        cached = self._cache.get(i)
        if cached is not None:
            return cached
        train = np.arange(self.n_rows) != i
        refs = references_from_histograms(
            self.s_hists[train], self.v_hists[train], self.labels[train], self.n_classes
        )
        distances = np.stack(
            [
                distance_features(self.s_hists[r], self.v_hists[r], refs)
                for r in range(self.n_rows)
            ]
        )
        matrix = np.concatenate([self.base, distances], axis=1)
        self._cache[i] = matrix
        return matrix

    def fold_features(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        matrix = self._fold_matrix(i)
        keep = np.arange(self.n_rows) != i
        return matrix[keep], matrix[i]


class _LinearProbeBank:
    def __init__(self, provider, spec: ProbeSpec, n_classes: int):
        n = provider.n_rows
        fold_train, fold_test = [], []
        train_row_index = np.empty((n, n - 1), dtype=np.int64)
        for f in range(n):
            Xf, xt = provider.fold_features(f)
            fold_train.append(Xf)
            fold_test.append(xt)
            train_row_index[f] = np.delete(np.arange(n), f)
        self.bank = LinearFoldBank.build(
            spec.family, spec.config, n_classes, fold_train, fold_test, train_row_index
        )

    def pooled_scores(self, y_batch: np.ndarray) -> np.ndarray:
        return self.bank.pooled_scores(y_batch)


class _TreeProbeBank:
    def __init__(self, provider, spec: ProbeSpec, n_classes: int):
        n = provider.n_rows
        self.spec = spec
        self.n_classes = n_classes
        self.folds = []
        for f in range(n):
            Xf, xt = provider.fold_features(f)
            config = replace(spec.config, seed=subseed(spec.config.seed, "fold", f))
            self.folds.append((TreeDesign.build(Xf), xt, config))
        self.train_row_index = np.stack([np.delete(np.arange(n), f) for f in range(n)])

    def pooled_scores(self, y_batch: np.ndarray) -> np.ndarray:
        y_batch = np.asarray(y_batch, dtype=np.int64)
        p, n = y_batch.shape
        scores = np.empty((p, n, self.n_classes))
        is_forest = self.spec.family == FAMILY_FOREST
        for f, (design, x_test, config) in enumerate(self.folds):
            y_folds = y_batch[:, self.train_row_index[f]]
            for j in range(p):
                if is_forest:
                    model = train_random_forest(
                        design.X, y_folds[j], config, n_classes=self.n_classes, design=design
                    )
                    scores[j, f] = forest_scores(model, x_test)
                else:
                    model = train_gbt(
                        design.X, y_folds[j], config, n_classes=self.n_classes, design=design
                    )
                    scores[j, f] = gbt_scores(model, x_test)
        return scores


class _ConstantProbeBank:
    def __init__(self, provider, spec: ProbeSpec, n_classes: int):
        self.n_rows = provider.n_rows
        self.n_classes = n_classes
        self.value = float(spec.config.value)

    def pooled_scores(self, y_batch: np.ndarray) -> np.ndarray:
        p = np.asarray(y_batch).shape[0]
        return np.full((p, self.n_rows, self.n_classes), self.value)


def _build_bank(provider, spec: ProbeSpec, n_classes: int):
    if spec.family in (FAMILY_LOGISTIC, FAMILY_LINEAR_SVM):
        return _LinearProbeBank(provider, spec, n_classes)
    if spec.family in (FAMILY_FOREST, FAMILY_GBT):
        return _TreeProbeBank(provider, spec, n_classes)
    return _ConstantProbeBank(provider, spec, n_classes)


def _check_fold_preconditions(labels: np.ndarray, n_classes: int) -> None:
    counts = np.bincount(labels, minlength=n_classes)
    thin = [int(c) for c in np.nonzero(counts < 2)[0]]
    if thin:
        raise DataError(
            f"classes {thin} have fewer than 2 members ({counts.tolist()}); every "
            "training fold must contain every class"
        )


def _pooled_from_bank(bank, ids, labels) -> PooledPredictions:
    scores = bank.pooled_scores(labels[None, :])[0]
    return PooledPredictions(ids=ids, labels=labels, scores=scores)


def _loocv_from_bank(bank, spec: ProbeSpec, ids, labels) -> LoocvResult:
    pooled = _pooled_from_bank(bank, ids, labels)
    return LoocvResult(
        probe=spec,
        pooled=pooled,
        metrics=compute_metrics(pooled),
        per_fold_train_size=len(ids) - 1,
    )


def run_loocv(data: AlignedDataset, probe: ProbeSpec, provider=None) -> LoocvResult:
    """Fit the probe once per held-out specimen and pool the scores."""
    probe.validate()
    _check_fold_preconditions(data.y, N_CLASSES)
    provider = provider if provider is not None else ArrayFoldFeatures(data.X)
    bank = _build_bank(provider, probe, N_CLASSES)
    return _loocv_from_bank(bank, probe, data.ids, data.y)


def _null_blocks(n_perm: int) -> list[tuple[int, int]]:
    return [(s, min(s + PERM_BLOCK, n_perm)) for s in range(0, n_perm, PERM_BLOCK)]


def _null_block_aucs(bank, ids, labels, seed: int, start: int, stop: int) -> np.ndarray:
    shuffled = np.stack(
        [fisher_yates(labels, subseed(seed, "perm", j)) for j in range(start, stop)]
    )
    try:
        scores = bank.pooled_scores(shuffled)
    except ProbeFailure as exc:
        raise ProbeFailure(
            f"probe failed while refitting permutations {start}..{stop - 1}: {exc}"
        ) from exc
    aucs = np.empty(stop - start)
    for j in range(stop - start):
        pooled = PooledPredictions(ids=ids, labels=shuffled[j], scores=scores[j])
        aucs[j] = macro_ovr_auc(pooled)
    return aucs


_POOL_STATE: dict = {}


def _null_block_entry(block: tuple[int, int]) -> tuple[int, np.ndarray]:
    start, stop = block
    st = _POOL_STATE
    return start, _null_block_aucs(st["bank"], st["ids"], st["labels"], st["seed"], start, stop)


def p_values_from_nulls(null_aucs: np.ndarray, observed: float) -> tuple[float, float]:
    """Counting rule p-value and its add-one conservative variant."""
    n_perm = null_aucs.shape[0]
    count = int(np.sum(null_aucs >= observed))
    return count / n_perm, (count + 1) / (n_perm + 1)


def _permutation_from_bank(
    bank, ids, labels, observed_auc: float, n_perm: int, seed: int, workers: int
) -> PermutationResult:
    blocks = _null_blocks(n_perm)
    null_aucs = np.empty(n_perm)
    if workers <= 1 or len(blocks) == 1:
        for start, stop in blocks:
            null_aucs[start:stop] = _null_block_aucs(bank, ids, labels, seed, start, stop)
    else:
        _POOL_STATE.update(bank=bank, ids=ids, labels=labels, seed=seed)
        try:
            with ProcessPoolExecutor(
                max_workers=min(workers, len(blocks)), mp_context=get_context("fork")
            ) as pool:
                for start, aucs in pool.map(_null_block_entry, blocks):
                    null_aucs[start : start + aucs.shape[0]] = aucs
        finally:
            _POOL_STATE.clear()
    p_value, p_conservative = p_values_from_nulls(null_aucs, observed_auc)
    return PermutationResult(
        observed_auc=observed_auc,
        null_aucs=null_aucs,
        p_value=p_value,
        p_conservative=p_conservative,
        n_perm=n_perm,
        seed=seed,
    )


def permutation_test(
    data: AlignedDataset,
    probe: ProbeSpec,
    n_perm: int = 1000,
    seed: int = 0,
    workers: int = 1,
    provider=None,
) -> PermutationResult:
    """Null distribution of the macro AUC under label shuffles.

    Shuffles preserve class counts, so every permuted labeling satisfies
    the fold preconditions.  Deterministic given (data, probe, n_perm,
    seed); the worker count never changes the result.
    """
    probe.validate()
    if n_perm < 1:
        raise ConfigError(f"n_perm must be >= 1, got {n_perm}")
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    _check_fold_preconditions(data.y, N_CLASSES)
    provider = provider if provider is not None else ArrayFoldFeatures(data.X)
    bank = _build_bank(provider, probe, N_CLASSES)
    observed = macro_ovr_auc(_pooled_from_bank(bank, data.ids, data.y))
    return _permutation_from_bank(bank, data.ids, data.y, observed, n_perm, seed, workers)


@dataclass(frozen=True)
class StudySource:
    """An embedding set plus an optional fold-feature provider factory.

    The factory receives the aligned dataset and returns the provider;
    the handcrafted-feature pipeline uses it to refit reference
    histograms inside each fold.
    """

    embeddings: EmbeddingSet
    provider_factory: Callable[[AlignedDataset], object] | None = None

    def provider_for(self, data: AlignedDataset):
        if self.provider_factory is None:
            return None
        return self.provider_factory(data)


@dataclass(frozen=True)
class StudyCell:
    """One encoder x probe grid entry."""

    encoder_name: str
    probe: ProbeSpec
    loocv: LoocvResult
    permutation: PermutationResult | None

    @property
    def has_p_value(self) -> bool:
        return self.permutation is not None


def run_study(
    manifest: DatasetManifest,
    embedding_sets,
    probes,
    n_perm: int = 1000,
    seed: int = 0,
    workers: int = 1,
) -> tuple[StudyCell, ...]:
    """Evaluate the full encoder x probe grid over the manifest originals.

    Perturbed counterparts named by pair_id stay out of the evaluation
    pool.  Permutation p-values are skipped for the Gaussian control
    encoder; its cells carry no significance entry.
    """
    probes = tuple(probes)
    if not probes:
        raise ConfigError("probe list is empty")
    sources = [
        src if isinstance(src, StudySource) else StudySource(embeddings=src)
        for src in embedding_sets
    ]
    if not sources:
        raise ConfigError("embedding set list is empty")
    for probe in probes:
        probe.validate()
    originals = DatasetManifest(records=manifest.originals(), path=manifest.path)
    _check_fold_preconditions(originals.labels, N_CLASSES)

    cells = []
    for source in sources:
        data = align(originals, source.embeddings)
        provider = source.provider_for(data)
        if provider is None:
            provider = ArrayFoldFeatures(data.X)
        for probe in probes:
            bank = _build_bank(provider, probe, N_CLASSES)
            loocv = _loocv_from_bank(bank, probe, data.ids, data.y)
            permutation = None
            if data.encoder_name != GAUSSIAN_CONTROL_NAME:
                cell_seed = subseed(seed, "cell", data.encoder_name, probe.name)
                permutation = _permutation_from_bank(
                    bank, data.ids, data.y, loocv.metrics.macro_auc, n_perm, cell_seed, workers
                )
            cells.append(
                StudyCell(
                    encoder_name=data.encoder_name,
                    probe=probe,
                    loocv=loocv,
                    permutation=permutation,
                )
            )
    return tuple(cells)
