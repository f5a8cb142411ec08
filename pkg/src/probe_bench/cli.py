"""Command-line interface.

Subcommands
-----------
run                full study: LOOCV grid, permutation tests, optional
                   margin section, reports written to the output dir
extract-classical  handcrafted 14-dim features from an image directory,
                   plus a histogram sidecar for per-fold reference refits
gaussian           label-independent N(0, I) control embeddings
perturb            margin-drop diagnostics for clean/perturbed pairs

Exit codes: 0 success, 2 configuration error, 3 data error, 4 probe
failure.  The PROBE_BENCH_WORKERS environment variable supplies the
default worker count; the config file and the --workers flag override
it, in that order.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .classical import (
    CLASSICAL_DIM,
    ClassicalConfig,
    base_features,
    distance_features,
    image_histograms,
    load_rgb_image,
    references_from_histograms,
    rgb_to_hsv,
)
from .dataset import (
    CLASSICAL_ENCODER_NAME,
    N_CLASSES,
    DatasetManifest,
    EmbeddingSet,
    align,
    generate_gaussian_control,
    load_embeddings,
    load_manifest,
    make_embedding_set,
    write_embeddings,
)
from .engine import ClassicalFoldFeatures, StudySource, run_study
from .errors import ConfigError, DataError, ProbeBenchError
from .linear import TrainConfig
from .perturbation import (
    MarginReport,
    margin_drop_report,
    paired_embeddings,
    train_frozen_probe_for_perturbation,
)
from .report import (
    Provenance,
    StudyConfig,
    StudyReport,
    config_fingerprint,
    file_sha256,
    load_histogram_sidecar,
    load_study_config,
    parse_flat_config,
    render_cells_csv,
    render_json,
    render_margin_csv,
    render_margin_text,
    render_text,
    sidecar_path,
    write_histogram_sidecar,
)
from .rng import subseed

log = logging.getLogger(__name__)

WORKERS_ENV_VAR = "PROBE_BENCH_WORKERS"
GAUSSIAN_PREFIX = "gaussian:"
CLASSICAL_PREFIX = "classical:"


# --------------------------------------------------------------------------
# classical feature extraction shared by `extract-classical` and the
# `classical:<image-dir>` study source


def _classical_rows(manifest: DatasetManifest, image_dir: str | Path, records=None):
    """Base features and histograms for each record's image.

    Returns (ids, labels, base (n, 8), s_hists, v_hists, image_paths).
    Every record must name an image file under image_dir.
    """
    config = ClassicalConfig()
    config.validate()
    records = manifest.records if records is None else tuple(records)
    missing = [r.id for r in records if not r.image_path]
    if missing:
        raise DataError(f"manifest records without image_path: {', '.join(missing)}")
    ids, labels, paths = [], [], []
    base_rows, s_rows, v_rows = [], [], []
    for record in records:
        path = Path(image_dir) / record.image_path
        img = rgb_to_hsv(load_rgb_image(path))
        s_hist, v_hist = image_histograms(img, config.bins)
        ids.append(record.id)
        labels.append(record.label)
        paths.append(path)
        base_rows.append(base_features(img, config))
        s_rows.append(s_hist)
        v_rows.append(v_hist)
    return (
        tuple(ids),
        np.array(labels, dtype=np.int64),
        np.stack(base_rows),
        np.stack(s_rows),
        np.stack(v_rows),
        tuple(paths),
    )


def _classical_matrix(labels, base, s_hists, v_hists) -> np.ndarray:
    """Full 14-dim rows with distances to all-data class references."""
    refs = references_from_histograms(s_hists, v_hists, labels, N_CLASSES)
    rows = [
        np.concatenate([base[i], distance_features(s_hists[i], v_hists[i], refs)])
        for i in range(len(labels))
    ]
    return np.stack(rows)


def _classical_provider_factory(ids, base, s_hists, v_hists):
    """Fold-feature factory keyed by specimen id, robust to row order."""
    index = {sid: i for i, sid in enumerate(ids)}

    def factory(data):
        missing = [sid for sid in data.ids if sid not in index]
        if missing:
            raise DataError(f"histogram data missing for ids: {', '.join(missing)}")
        order = [index[sid] for sid in data.ids]
        return ClassicalFoldFeatures(
            base=base[order], s_hists=s_hists[order], v_hists=v_hists[order], labels=data.y
        )

    return factory


# --------------------------------------------------------------------------
# study source resolution


def _resolve_source(spec: str, manifest: DatasetManifest, master_seed: int):
    """Turn one source string into (StudySource, [(label, sha256), ...])."""
    originals = manifest.originals()
    if spec.startswith(GAUSSIAN_PREFIX):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"source {spec!r}: expected gaussian:<n>:<d>")
        n = _positive_int(parts[1], f"source {spec!r}: n")
        d = _positive_int(parts[2], f"source {spec!r}: d")
        if n != len(originals):
            raise ConfigError(
                f"source {spec!r}: n={n} but the manifest has {len(originals)} originals"
            )
        seed = subseed(master_seed, "gaussian-control")
        ids = tuple(r.id for r in originals)
        embeddings = generate_gaussian_control(n, d, seed, ids=ids)
        return StudySource(embeddings=embeddings), [(spec, f"seed:{seed}")]

    if spec.startswith(CLASSICAL_PREFIX):
        image_dir = spec[len(CLASSICAL_PREFIX):]
        if not image_dir:
            raise ConfigError(f"source {spec!r}: expected classical:<image-dir>")
        ids, labels, base, s_hists, v_hists, paths = _classical_rows(
            manifest, image_dir, records=originals
        )
        values = _classical_matrix(labels, base, s_hists, v_hists)
        embeddings = make_embedding_set(CLASSICAL_ENCODER_NAME, ids, values)
        source = StudySource(
            embeddings=embeddings,
            provider_factory=_classical_provider_factory(ids, base, s_hists, v_hists),
        )
        return source, [(str(p), file_sha256(p)) for p in paths]

    embeddings = _drop_counterpart_rows(load_embeddings(spec), manifest)
    inputs = [(spec, file_sha256(spec))]
    sidecar = sidecar_path(spec)
    if sidecar.exists():
        if embeddings.dim != CLASSICAL_DIM:
            raise ConfigError(
                f"source {spec!r} has a histogram sidecar but dim {embeddings.dim}; "
                f"expected {CLASSICAL_DIM}"
            )
        bins, images = load_histogram_sidecar(sidecar)
        missing = [sid for sid in embeddings.ids if sid not in images]
        if missing:
            raise DataError(f"sidecar {sidecar} missing ids: {', '.join(missing)}")
        s_hists = np.array([images[sid][0] for sid in embeddings.ids], dtype=np.float64)
        v_hists = np.array([images[sid][1] for sid in embeddings.ids], dtype=np.float64)
        base = embeddings.values[:, :8]
        source = StudySource(
            embeddings=embeddings,
            provider_factory=_classical_provider_factory(
                embeddings.ids, base, s_hists, v_hists
            ),
        )
        inputs.append((str(sidecar), file_sha256(sidecar)))
        return source, inputs
    return StudySource(embeddings=embeddings), inputs


def _drop_counterpart_rows(emb: EmbeddingSet, manifest: DatasetManifest) -> EmbeddingSet:
    """Remove rows for perturbed counterparts; the grid scores originals.

    Rows with ids outside the manifest entirely are kept so alignment
    can flag them.
    """
    counterparts = {r.pair_id for r in manifest.records if r.pair_id}
    keep = [i for i, sid in enumerate(emb.ids) if sid not in counterparts]
    if len(keep) == len(emb.ids):
        return emb
    ids = tuple(emb.ids[i] for i in keep)
    return make_embedding_set(emb.encoder_name, ids, emb.values[keep])


def _positive_int(text: str, label: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ConfigError(f"{label} must be an integer, got {text!r}") from None
    if value < 1:
        raise ConfigError(f"{label} must be >= 1, got {value}")
    return value


# --------------------------------------------------------------------------
# subcommands


def cmd_run(args: argparse.Namespace) -> int:
    overrides: dict[str, str] = {}
    if args.n_perm is not None:
        overrides["n_perm"] = str(args.n_perm)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    if args.out is not None:
        overrides["out"] = args.out
    defaults: dict[str, str] = {}
    env_workers = os.environ.get(WORKERS_ENV_VAR, "").strip()
    if env_workers:
        defaults["workers"] = env_workers
    config = load_study_config(args.config, overrides=overrides, defaults=defaults)

    manifest = load_manifest(config.manifest)
    inputs: list[tuple[str, str]] = [(config.manifest, file_sha256(config.manifest))]
    sources = []
    names_seen = set()
    for spec in config.sources:
        source, source_inputs = _resolve_source(spec, manifest, config.seed)
        name = source.embeddings.encoder_name
        if name in names_seen:
            raise ConfigError(f"duplicate encoder name {name!r} in sources")
        names_seen.add(name)
        sources.append(source)
        inputs.extend(source_inputs)

    margin: MarginReport | None = None
    if config.perturb_embeddings:
        emb = load_embeddings(config.perturb_embeddings)
        inputs.append((config.perturb_embeddings, file_sha256(config.perturb_embeddings)))
        margin = _margin_for(manifest, emb, TrainConfig(seed=config.seed))

    cells = run_study(
        manifest,
        sources,
        config.probes,
        n_perm=config.n_perm,
        seed=config.seed,
        workers=config.workers,
    )
    provenance = Provenance(
        seed=config.seed,
        n_perm=config.n_perm,
        config_hash=config_fingerprint(config),
        inputs=tuple(dict.fromkeys(inputs)),
    )
    report = StudyReport(cells=cells, provenance=provenance, margin=margin)
    _write_report(report, config)
    sys.stdout.write(render_text(report, verbose=config.verbose))
    return 0


def _margin_for(manifest: DatasetManifest, emb: EmbeddingSet, config: TrainConfig) -> MarginReport:
    """Frozen probe on the originals, then margins over the pairs."""
    originals = manifest.originals()
    rows = [r for r in originals if r.id in emb.index]
    missing = [r.id for r in originals if r.id not in emb.index]
    if missing:
        raise DataError(
            f"perturbation embeddings {emb.encoder_name!r} missing originals: "
            f"{', '.join(missing)}"
        )
    subset = make_embedding_set(
        emb.encoder_name,
        tuple(r.id for r in rows),
        np.stack([emb.vector(r.id) for r in rows]),
    )
    data = align(DatasetManifest(records=tuple(rows)), subset)
    probe = train_frozen_probe_for_perturbation(data, config)
    return margin_drop_report(probe, paired_embeddings(manifest, emb))


def _write_report(report: StudyReport, config: StudyConfig) -> None:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if "text" in config.formats:
        (out_dir / "report.txt").write_text(
            render_text(report, verbose=config.verbose), encoding="utf-8"
        )
    if "csv" in config.formats:
        (out_dir / "report.csv").write_text(render_cells_csv(report), encoding="utf-8")
        if report.margin is not None:
            (out_dir / "margin.csv").write_text(
                render_margin_csv(report.margin), encoding="utf-8"
            )
    if "json" in config.formats:
        (out_dir / "report.json").write_text(render_json(report), encoding="utf-8")


def cmd_extract_classical(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    ids, labels, base, s_hists, v_hists, _ = _classical_rows(manifest, args.images)
    original_ids = {r.id for r in manifest.originals()}
    ref_mask = np.array([sid in original_ids for sid in ids])
    refs = references_from_histograms(
        s_hists[ref_mask], v_hists[ref_mask], labels[ref_mask], N_CLASSES
    )
    values = np.stack(
        [
            np.concatenate([base[i], distance_features(s_hists[i], v_hists[i], refs)])
            for i in range(len(ids))
        ]
    )
    embeddings = make_embedding_set(CLASSICAL_ENCODER_NAME, ids, values)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(embeddings, out)
    config = ClassicalConfig()
    write_histogram_sidecar(
        sidecar_path(out),
        ids,
        s_hists,
        v_hists,
        bins=config.bins,
        levels=config.levels,
        distance=config.distance,
    )
    sys.stdout.write(
        f"wrote {len(ids)} rows x {values.shape[1]} features to {out}\n"
        f"wrote histogram sidecar to {sidecar_path(out)}\n"
    )
    return 0


def cmd_gaussian(args: argparse.Namespace) -> int:
    if args.n < 1:
        raise ConfigError(f"--n must be >= 1, got {args.n}")
    if args.d < 1:
        raise ConfigError(f"--d must be >= 1, got {args.d}")
    embeddings = generate_gaussian_control(args.n, args.d, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(embeddings, out)
    sys.stdout.write(f"wrote {args.n} rows x {args.d} features to {out}\n")
    return 0


def cmd_perturb(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    emb = load_embeddings(args.embeddings)
    config = TrainConfig()
    if args.probe_config:
        config = _train_config_from_file(args.probe_config)
    margin = _margin_for(manifest, emb, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "margin.txt").write_text(render_margin_text(margin), encoding="utf-8")
    (out_dir / "margin.csv").write_text(render_margin_csv(margin), encoding="utf-8")
    (out_dir / "margin.json").write_text(
        json.dumps(margin.to_json_dict(), indent=2) + "\n", encoding="utf-8"
    )
    sys.stdout.write(render_margin_text(margin))
    return 0


def _train_config_from_file(path: str) -> TrainConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read probe config {path}: {exc}") from exc
    raw = parse_flat_config(text, origin=path)
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    kwargs = {}
    for key, value in raw.items():
        field = fields.get(key)
        if field is None:
            raise ConfigError(f"{path}: unknown key {key!r}; expected one of {sorted(fields)}")
        if value.strip().lower() == "none" and "None" in field.type:
            kwargs[key] = None
        elif field.type.startswith("int"):
            kwargs[key] = _parse_number(value, key, int)
        else:
            kwargs[key] = _parse_number(value, key, float)
    config = TrainConfig(**kwargs)
    config.validate()
    return config


def _parse_number(value: str, key: str, kind):
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key} must be a {kind.__name__}, got {value!r}") from None


# --------------------------------------------------------------------------
# parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="probe-bench",
        description="Deterministic frozen-feature probing benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full study from a config file")
    run.add_argument("--config", required=True, help="flat key = value config file")
    run.add_argument("--n-perm", type=int, default=None, help="permutation count override")
    run.add_argument("--seed", type=int, default=None, help="master seed override")
    run.add_argument("--workers", type=int, default=None, help="worker count override")
    run.add_argument("--out", default=None, help="output directory override")
    run.set_defaults(func=cmd_run)

    extract = sub.add_parser(
        "extract-classical", help="extract handcrafted 14-dim features from images"
    )
    extract.add_argument("--images", required=True, help="directory with the image files")
    extract.add_argument("--manifest", required=True, help="specimen manifest CSV")
    extract.add_argument("--out", required=True, help="output embeddings CSV")
    extract.set_defaults(func=cmd_extract_classical)

    gaussian = sub.add_parser("gaussian", help="generate N(0, I) control embeddings")
    gaussian.add_argument("--n", type=int, required=True, help="number of rows")
    gaussian.add_argument("--d", type=int, required=True, help="feature dimension")
    gaussian.add_argument("--seed", type=int, required=True, help="generator seed")
    gaussian.add_argument("--out", required=True, help="output embeddings CSV")
    gaussian.set_defaults(func=cmd_gaussian)

    perturb = sub.add_parser(
        "perturb", help="margin-drop diagnostics for clean/perturbed pairs"
    )
    perturb.add_argument("--manifest", required=True, help="specimen manifest CSV")
    perturb.add_argument(
        "--embeddings", required=True, help="embeddings CSV with originals and counterparts"
    )
    perturb.add_argument("--out", required=True, help="output directory")
    perturb.add_argument(
        "--probe-config", default="", help="flat config file for the frozen probe"
    )
    perturb.set_defaults(func=cmd_perturb)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ProbeBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
