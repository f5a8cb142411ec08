"""Study configuration, provenance, and report rendering.

Config file format
------------------
Flat ``key = value`` lines.  ``#`` starts a comment when it opens the
line or follows whitespace; blank lines are skipped.  Unknown keys are
an error so typos cannot silently fall back to defaults.  Every file
setting has a command-line override.

Keys: ``manifest``, ``sources`` (comma list of embedding CSV paths or
the pseudo-sources ``gaussian:<n>:<d>`` and ``classical:<image-dir>``),
``probes`` (comma list of family names), ``probe.<family>.<param>``
hyperparameter overrides, ``n_perm``, ``seed``, ``workers``, ``out``,
``formats`` (comma list drawn from text/csv/json), ``perturb_embeddings``
(embeddings CSV holding clean/perturbed pairs; empty disables the margin
section), ``verbose`` (adds the conservative p column to text output).

Report outputs
--------------
Text tables round to 3 decimals with per-probe column blocks ordered
Acc, AUC, F1, p.  CSV and JSON carry full ``repr`` precision.  Every
report embeds a provenance block: tool version, master seed, n_perm,
a hash of the semantic configuration, and a content hash of every input
file.  Nothing in a report depends on wall-clock time or worker count,
so reruns of the same config are byte-identical.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .engine import (
    FAMILY_CONSTANT,
    FAMILY_FOREST,
    FAMILY_GBT,
    FAMILY_LINEAR_SVM,
    FAMILY_LOGISTIC,
    ConstantConfig,
    ProbeSpec,
    StudyCell,
)
from .errors import ConfigError
from .linear import TrainConfig
from .perturbation import MarginReport
from .trees import ForestConfig, GbtConfig

SCHEMA_FILENAME = "report_schema.json"
REPORT_FORMATS = ("text", "csv", "json")

_FAMILY_CONFIG_TYPES = {
    FAMILY_LOGISTIC: TrainConfig,
    FAMILY_LINEAR_SVM: TrainConfig,
    FAMILY_FOREST: ForestConfig,
    FAMILY_GBT: GbtConfig,
    FAMILY_CONSTANT: ConstantConfig,
}


# --------------------------------------------------------------------------
# flat config parsing


def parse_flat_config(text: str, origin: str = "config") -> dict[str, str]:
    """Parse ``key = value`` lines into a dict, rejecting malformed input."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin} line {lineno}: expected key = value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{origin} line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"{origin} line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _strip_comment(line: str) -> str:
    if line.lstrip().startswith("#"):
        return ""
    # an inline comment needs whitespace before '#' so paths like a#b survive
    for i, ch in enumerate(line):
        if ch == "#" and i > 0 and line[i - 1] in " \t":
            return line[:i]
    return line


def _parse_int(value: str, key: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {value!r}") from None


def _parse_bool(value: str, key: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key} must be a boolean, got {value!r}")


def _parse_list(value: str) -> tuple[str, ...]:
    return tuple(item.strip() for item in value.split(",") if item.strip())


# --------------------------------------------------------------------------
# probe construction


def _coerce_option(field: dataclasses.Field, value: str, key: str):
    kind = field.type
    if value.strip().lower() == "none":
        if "None" in kind:
            return None
        raise ConfigError(f"{key} does not accept none")
    try:
        if kind.startswith("int"):
            return int(value)
        if kind.startswith("float"):
            return float(value)
        if kind.startswith("bool"):
            return _parse_bool(value, key)
    except ValueError:
        raise ConfigError(f"{key} must be a {kind}, got {value!r}") from None
    return value


def probe_from_options(family: str, options: dict[str, str], default_seed: int) -> ProbeSpec:
    """Build one probe spec from ``probe.<family>.<param>`` overrides.

    Probe seeds default to the study master seed unless overridden, so
    one ``seed`` key pins the whole run.
    """
    config_type = _FAMILY_CONFIG_TYPES.get(family)
    if config_type is None:
        raise ConfigError(
            f"unknown probe family {family!r}; expected one of {sorted(_FAMILY_CONFIG_TYPES)}"
        )
    fields = {f.name: f for f in dataclasses.fields(config_type)}
    kwargs = {}
    if "seed" in fields:
        kwargs["seed"] = default_seed
    for param, value in options.items():
        field = fields.get(param)
        if field is None:
            raise ConfigError(
                f"probe.{family}.{param} is not a setting; expected one of {sorted(fields)}"
            )
        kwargs[param] = _coerce_option(field, value, f"probe.{family}.{param}")
    config = config_type(**kwargs)
    config.validate()
    spec = ProbeSpec(family=family, name=family, config=config)
    spec.validate()
    return spec


# --------------------------------------------------------------------------
# study configuration


@dataclass(frozen=True)
class StudyConfig:
    """Everything a study run needs, resolved from file plus CLI flags."""

    manifest: str
    sources: tuple[str, ...]
    probes: tuple[ProbeSpec, ...]
    n_perm: int = 1000
    seed: int = 0
    workers: int = 1
    out_dir: str = "results"
    formats: tuple[str, ...] = REPORT_FORMATS
    perturb_embeddings: str = ""
    verbose: bool = False

    def validate(self) -> None:
        if not self.manifest:
            raise ConfigError("manifest is required")
        if not self.sources:
            raise ConfigError("sources is empty; list at least one embedding source")
        if not self.probes:
            raise ConfigError("probes is empty; list at least one probe family")
        if self.n_perm < 1:
            raise ConfigError(f"n_perm must be >= 1, got {self.n_perm}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        for fmt in self.formats:
            if fmt not in REPORT_FORMATS:
                raise ConfigError(f"unknown format {fmt!r}; expected one of {REPORT_FORMATS}")
        if not self.formats:
            raise ConfigError("formats is empty")
        names = [p.name for p in self.probes]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate probe names: {names}")


_SCALAR_KEYS = (
    "manifest",
    "sources",
    "probes",
    "n_perm",
    "seed",
    "workers",
    "out",
    "formats",
    "perturb_embeddings",
    "verbose",
)


def study_config_from_text(
    text: str,
    origin: str = "config",
    overrides: dict[str, str] | None = None,
    defaults: dict[str, str] | None = None,
) -> StudyConfig:
    """Parse a flat config file into a validated StudyConfig.

    ``overrides`` (command-line flags) win over file values; ``defaults``
    (environment) fill keys the file leaves unset.  Both are applied
    before probes are built so a seed override reseeds every probe.
    """
    raw = parse_flat_config(text, origin)
    for key, value in (defaults or {}).items():
        raw.setdefault(key, value)
    for key, value in (overrides or {}).items():
        raw[key] = value
    probe_options: dict[str, dict[str, str]] = {}
    scalars: dict[str, str] = {}
    for key, value in raw.items():
        if key.startswith("probe."):
            parts = key.split(".")
            if len(parts) != 3 or not parts[1] or not parts[2]:
                raise ConfigError(f"{origin}: bad probe override key {key!r}")
            probe_options.setdefault(parts[1], {})[parts[2]] = value
        elif key in _SCALAR_KEYS:
            scalars[key] = value
        else:
            raise ConfigError(f"{origin}: unknown key {key!r}")

    seed = _parse_int(scalars.get("seed", "0"), "seed")
    families = _parse_list(scalars.get("probes", ""))
    if not families:
        families = (FAMILY_LOGISTIC, FAMILY_LINEAR_SVM, FAMILY_FOREST, FAMILY_GBT)
    for family in probe_options:
        if family not in families:
            raise ConfigError(
                f"{origin}: probe.{family}.* overrides given but {family!r} is not in probes"
            )
    probes = tuple(
        probe_from_options(family, probe_options.get(family, {}), seed) for family in families
    )

    config = StudyConfig(
        manifest=scalars.get("manifest", ""),
        sources=_parse_list(scalars.get("sources", "")),
        probes=probes,
        n_perm=_parse_int(scalars.get("n_perm", "1000"), "n_perm"),
        seed=seed,
        workers=_parse_int(scalars.get("workers", "1"), "workers"),
        out_dir=scalars.get("out", "results"),
        formats=_parse_list(scalars.get("formats", "text, csv, json")),
        perturb_embeddings=scalars.get("perturb_embeddings", ""),
        verbose=_parse_bool(scalars.get("verbose", "false"), "verbose"),
    )
    config.validate()
    return config


def load_study_config(
    path: str | Path,
    overrides: dict[str, str] | None = None,
    defaults: dict[str, str] | None = None,
) -> StudyConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return study_config_from_text(text, origin=str(path), overrides=overrides, defaults=defaults)


# --------------------------------------------------------------------------
# provenance


def file_sha256(path: str | Path) -> str:
    try:
        digest = hashlib.sha256(Path(path).read_bytes())
    except OSError as exc:
        raise ConfigError(f"cannot hash input {path}: {exc}") from exc
    return digest.hexdigest()


def _probe_fingerprint(probe: ProbeSpec) -> str:
    fields = dataclasses.asdict(probe.config)
    inner = ",".join(f"{k}={fields[k]!r}" for k in sorted(fields))
    return f"{probe.family}:{probe.name}:{inner}"


def config_fingerprint(config: StudyConfig) -> str:
    """Hash of the settings that shape results.

    Workers, output directory, formats, and verbosity move bytes around
    without changing any number, so they stay out of the hash.
    """
    lines = [
        f"manifest={config.manifest}",
        f"sources={','.join(config.sources)}",
        f"n_perm={config.n_perm}",
        f"seed={config.seed}",
        f"perturb_embeddings={config.perturb_embeddings}",
    ]
    lines.extend(f"probe={_probe_fingerprint(p)}" for p in config.probes)
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Provenance:
    """What produced a report: version, seeds, and input content hashes.

    Deliberately excludes timestamps and worker counts; two runs of the
    same configuration must serialize identically.
    """

    seed: int
    n_perm: int
    config_hash: str
    inputs: tuple[tuple[str, str], ...]
    tool_version: str = __version__

    def to_json_dict(self) -> dict:
        return {
            "tool_version": self.tool_version,
            "seed": self.seed,
            "n_perm": self.n_perm,
            "config_hash": self.config_hash,
            "inputs": {label: digest for label, digest in self.inputs},
        }


# --------------------------------------------------------------------------
# report assembly


@dataclass(frozen=True)
class StudyReport:
    """Grid results plus the optional margin section and provenance."""

    cells: tuple[StudyCell, ...]
    provenance: Provenance
    margin: MarginReport | None = None

    @property
    def encoder_names(self) -> tuple[str, ...]:
        seen: list[str] = []
        for cell in self.cells:
            if cell.encoder_name not in seen:
                seen.append(cell.encoder_name)
        return tuple(seen)

    @property
    def probe_names(self) -> tuple[str, ...]:
        seen: list[str] = []
        for cell in self.cells:
            if cell.probe.name not in seen:
                seen.append(cell.probe.name)
        return tuple(seen)

    def cell(self, encoder_name: str, probe_name: str) -> StudyCell:
        for c in self.cells:
            if c.encoder_name == encoder_name and c.probe.name == probe_name:
                return c
        raise KeyError((encoder_name, probe_name))


# --------------------------------------------------------------------------
# renderers


def _fmt3(value: float) -> str:
    return f"{value:.3f}"


def render_text(report: StudyReport, verbose: bool = False) -> str:
    """Fixed-width tables; all values rounded to 3 decimals.

    One row per encoder; per-probe column blocks in the order Acc, AUC,
    F1, p (plus p_cons when verbose).  Cells without a permutation test
    show ``--`` for p.
    """
    out = io.StringIO()
    encoders = report.encoder_names
    probes = report.probe_names
    metric_cols = ["Acc", "AUC", "F1", "p"] + (["p_cons"] if verbose else [])

    name_w = max([len("encoder")] + [len(e) for e in encoders])
    col_w = 6
    header_1 = " " * name_w
    header_2 = "encoder".ljust(name_w)
    for probe in probes:
        block_w = (col_w + 2) * len(metric_cols) - 2
        header_1 += "  " + probe[:block_w].ljust(block_w)
        header_2 += "  " + "  ".join(c.rjust(col_w) for c in metric_cols)
    rule = "-" * len(header_2)

    out.write(f"probe grid  n_perm={report.provenance.n_perm}  seed={report.provenance.seed}\n")
    out.write(header_1.rstrip() + "\n")
    out.write(header_2 + "\n")
    out.write(rule + "\n")
    for encoder in encoders:
        row = encoder.ljust(name_w)
        for probe in probes:
            cell = report.cell(encoder, probe)
            m = cell.loocv.metrics
            values = [_fmt3(m.accuracy), _fmt3(m.macro_auc), _fmt3(m.macro_f1)]
            if cell.permutation is not None:
                values.append(_fmt3(cell.permutation.p_value))
                if verbose:
                    values.append(_fmt3(cell.permutation.p_conservative))
            else:
                values.append("--")
                if verbose:
                    values.append("--")
            row += "  " + "  ".join(v.rjust(col_w) for v in values)
        out.write(row + "\n")

    if report.margin is not None:
        out.write("\n")
        out.write(render_margin_text(report.margin))

    prov = report.provenance
    out.write("\nprovenance\n")
    out.write(f"  tool_version = {prov.tool_version}\n")
    out.write(f"  seed = {prov.seed}\n")
    out.write(f"  n_perm = {prov.n_perm}\n")
    out.write(f"  config_hash = {prov.config_hash}\n")
    for label, digest in prov.inputs:
        out.write(f"  input {label} = {digest}\n")
    return out.getvalue()


def render_margin_text(margin: MarginReport) -> str:
    out = io.StringIO()
    out.write(
        f"margin drop under perturbation  encoder={margin.encoder_name}"
        f"  pairs={margin.n_pairs}  skipped={margin.n_unpaired_skipped}\n"
    )
    id_w = max([len("id")] + [len(r.id) for r in margin.per_specimen])
    cols = ("m_clean", "m_perturbed", "delta_m", "reclassified")
    out.write("id".ljust(id_w) + "  " + "  ".join(c.rjust(11) for c in cols) + "\n")
    for row in margin.per_specimen:
        cells = (
            _fmt3(row.m_clean),
            _fmt3(row.m_perturbed),
            _fmt3(row.delta_m),
            "yes" if row.reclassified else "no",
        )
        out.write(row.id.ljust(id_w) + "  " + "  ".join(c.rjust(11) for c in cells) + "\n")
    out.write(
        f"mean_delta={_fmt3(margin.mean_delta)}  std_delta={_fmt3(margin.std_delta)}"
        f"  reclass_rate={_fmt3(margin.reclass_rate)}\n"
    )
    return out.getvalue()


def render_cells_csv(report: StudyReport) -> str:
    """Long-form CSV, one row per grid cell, full float precision."""
    lines = [
        "encoder,probe,family,accuracy,macro_auc,macro_f1,p_value,p_conservative,n_perm"
    ]
    for cell in report.cells:
        m = cell.loocv.metrics
        fields = [
            cell.encoder_name,
            cell.probe.name,
            cell.probe.family,
            repr(m.accuracy),
            repr(m.macro_auc),
            repr(m.macro_f1),
        ]
        if cell.permutation is not None:
            fields += [
                repr(cell.permutation.p_value),
                repr(cell.permutation.p_conservative),
                str(cell.permutation.n_perm),
            ]
        else:
            fields += ["", "", ""]
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def render_margin_csv(margin: MarginReport) -> str:
    lines = ["id,m_clean,m_perturbed,delta_m,reclassified"]
    for row in margin.per_specimen:
        lines.append(
            ",".join(
                (
                    row.id,
                    repr(row.m_clean),
                    repr(row.m_perturbed),
                    repr(row.delta_m),
                    "true" if row.reclassified else "false",
                )
            )
        )
    return "\n".join(lines) + "\n"


def report_json_dict(report: StudyReport) -> dict:
    cells = []
    for cell in report.cells:
        m = cell.loocv.metrics
        entry: dict = {
            "encoder": cell.encoder_name,
            "probe": cell.probe.name,
            "family": cell.probe.family,
            "per_fold_train_size": cell.loocv.per_fold_train_size,
            "metrics": {
                "accuracy": m.accuracy,
                "macro_auc": m.macro_auc,
                "macro_f1": m.macro_f1,
            },
        }
        if cell.permutation is not None:
            entry["permutation"] = {
                "observed_auc": cell.permutation.observed_auc,
                "p_value": cell.permutation.p_value,
                "p_conservative": cell.permutation.p_conservative,
                "n_perm": cell.permutation.n_perm,
            }
        else:
            entry["permutation"] = None
        cells.append(entry)
    payload = {
        "provenance": report.provenance.to_json_dict(),
        "cells": cells,
        "margin": report.margin.to_json_dict() if report.margin is not None else None,
    }
    return payload


def render_json(report: StudyReport) -> str:
    return json.dumps(report_json_dict(report), indent=2) + "\n"


def report_schema() -> dict:
    """The JSON schema shipped inside the package."""
    text = resources.files("probe_bench").joinpath(SCHEMA_FILENAME).read_text("utf-8")
    return json.loads(text)


# --------------------------------------------------------------------------
# histogram sidecar for handcrafted-feature sources

SIDECAR_FORMAT = "probe-bench-histograms"
SIDECAR_SUFFIX = ".hist.json"


def sidecar_path(features_path: str | Path) -> Path:
    return Path(str(features_path) + SIDECAR_SUFFIX)


def write_histogram_sidecar(
    path: str | Path,
    ids: tuple[str, ...],
    s_hists: np.ndarray,
    v_hists: np.ndarray,
    bins: int,
    levels: int,
    distance: int,
) -> None:
    """Persist raw per-image histograms so folds can refit references."""
    s_hists = np.asarray(s_hists, dtype=np.float64)
    v_hists = np.asarray(v_hists, dtype=np.float64)
    if s_hists.shape != (len(ids), bins) or v_hists.shape != (len(ids), bins):
        raise ConfigError(
            f"sidecar histograms must be ({len(ids)}, {bins}), got {s_hists.shape} and {v_hists.shape}"
        )
    payload = {
        "format": SIDECAR_FORMAT,
        "bins": bins,
        "levels": levels,
        "distance": distance,
        "images": {
            sid: {"s": [float(x) for x in s_hists[i]], "v": [float(x) for x in v_hists[i]]}
            for i, sid in enumerate(ids)
        },
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_histogram_sidecar(path: str | Path) -> tuple[int, dict[str, tuple[list[float], list[float]]]]:
    """Read a histogram sidecar; returns (bins, {id: (s_hist, v_hist)})."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read histogram sidecar {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"histogram sidecar {path} is not valid JSON: {exc}") from exc
    if payload.get("format") != SIDECAR_FORMAT:
        raise ConfigError(f"{path} is not a histogram sidecar (format={payload.get('format')!r})")
    bins = payload["bins"]
    images = {}
    for sid, hists in payload["images"].items():
        s, v = hists["s"], hists["v"]
        if len(s) != bins or len(v) != bins:
            raise ConfigError(f"sidecar {path}: histograms for {sid!r} are not length {bins}")
        if not all(math.isfinite(x) for x in s + v):
            raise ConfigError(f"sidecar {path}: non-finite histogram value for {sid!r}")
        images[sid] = (s, v)
    return int(bins), images
