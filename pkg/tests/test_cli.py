"""End-to-end command-line behavior on small synthetic fixtures.

Covers the study runner (reports on disk, byte-identical reruns,
worker-count independence), the control and handcrafted-feature
extractors, the pair-margin command, and exit codes 2 and 3 for
configuration and data problems.
"""

import json

import jsonschema
import numpy as np
import pytest

from probe_bench.cli import main
from probe_bench.dataset import make_embedding_set, write_embeddings
from probe_bench.report import report_schema

LABELS = [0] * 5 + [1] * 4 + [2] * 3
IDS = [f"s{i:02d}" for i in range(12)]
NAMES = {0: "eye-clean", 1: "moderate", 2: "heavy"}


def write_manifest(path, image_paths=False, pairs=("s00", "s01")):
    rows = ["id,label,image_path,pair_id"]
    for sid, lab in zip(IDS, LABELS):
        img = f"{sid}.ppm" if image_paths else ""
        pair = f"p_{sid}" if sid in pairs else ""
        rows.append(f"{sid},{NAMES[lab]},{img},{pair}")
    for sid in pairs:
        img = f"p_{sid}.ppm" if image_paths else ""
        rows.append(f"p_{sid},eye-clean,{img},")
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def write_toy_embeddings(path, seed=7, dim=6):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(len(IDS) + 2, dim))
    for i, lab in enumerate(LABELS):
        X[i, lab] += 3.0
    X[len(IDS)] = X[0] + 0.05
    X[len(IDS) + 1, 1] += 5.0
    ids = IDS + ["p_s00", "p_s01"]
    write_embeddings(make_embedding_set("toy", ids, X), path)


def write_ppm(path, rgb):
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(rgb.astype(np.uint8).tobytes())


def write_images(dirpath):
    rng = np.random.default_rng(11)
    dirpath.mkdir(exist_ok=True)
    for sid, lab in zip(IDS, LABELS):
        base = np.full((16, 16, 3), 60 + 70 * lab, dtype=np.int64)
        noise = rng.integers(-25, 26, size=base.shape)
        write_ppm(dirpath / f"{sid}.ppm", np.clip(base + noise, 0, 255))
    for sid in ("p_s00", "p_s01"):
        write_ppm(dirpath / f"{sid}.ppm", rng.integers(120, 200, size=(16, 16, 3)))


def write_config(path, manifest, sources, out, extra=""):
    path.write_text(
        f"manifest = {manifest}\n"
        f"sources = {sources}\n"
        "probes = logistic\n"
        "probe.logistic.max_iterations = 60\n"
        "probe.logistic.tol = 1e-3\n"
        "n_perm = 20\n"
        "seed = 3\n"
        f"out = {out}\n" + extra,
        encoding="utf-8",
    )


@pytest.fixture()
def study_dir(tmp_path):
    write_manifest(tmp_path / "manifest.csv")
    write_toy_embeddings(tmp_path / "toy.csv")
    return tmp_path


class TestRun:
    def test_writes_reports_and_reruns_byte_identically(self, study_dir):
        config = study_dir / "study.conf"
        write_config(
            config,
            study_dir / "manifest.csv",
            f"{study_dir / 'toy.csv'}, gaussian:12:6",
            study_dir / "out1",
            extra=f"perturb_embeddings = {study_dir / 'toy.csv'}\n",
        )
        assert main(["run", "--config", str(config)]) == 0
        names = ("report.txt", "report.csv", "report.json", "margin.csv")
        first = {n: (study_dir / "out1" / n).read_bytes() for n in names}
        assert main(["run", "--config", str(config), "--out", str(study_dir / "out2")]) == 0
        for n in names:
            assert (study_dir / "out2" / n).read_bytes() == first[n]

    def test_json_report_validates_and_control_has_no_p(self, study_dir):
        config = study_dir / "study.conf"
        write_config(
            config,
            study_dir / "manifest.csv",
            f"{study_dir / 'toy.csv'}, gaussian:12:6",
            study_dir / "out",
        )
        assert main(["run", "--config", str(config)]) == 0
        payload = json.loads((study_dir / "out" / "report.json").read_text())
        jsonschema.validate(payload, report_schema())
        by_encoder = {c["encoder"]: c for c in payload["cells"]}
        assert by_encoder["gaussian-control"]["permutation"] is None
        assert by_encoder["toy"]["permutation"]["n_perm"] == 20
        assert by_encoder["toy"]["per_fold_train_size"] == 11

    def test_worker_flag_changes_nothing_in_the_outputs(self, study_dir):
        config = study_dir / "study.conf"
        write_config(
            config,
            study_dir / "manifest.csv",
            str(study_dir / "toy.csv"),
            study_dir / "w1",
        )
        # 140 permutations spans two scheduling blocks, so workers=2
        # actually exercises the process pool
        config.write_text(config.read_text().replace("n_perm = 20", "n_perm = 140"))
        assert main(["run", "--config", str(config)]) == 0
        assert (
            main(
                [
                    "run",
                    "--config",
                    str(config),
                    "--workers",
                    "2",
                    "--out",
                    str(study_dir / "w2"),
                ]
            )
            == 0
        )
        for name in ("report.csv", "report.json"):
            assert (study_dir / "w1" / name).read_bytes() == (
                study_dir / "w2" / name
            ).read_bytes()

    def test_seed_override_changes_the_null_distribution(self, study_dir):
        config = study_dir / "study.conf"
        write_config(
            config, study_dir / "manifest.csv", str(study_dir / "toy.csv"), study_dir / "a"
        )
        assert main(["run", "--config", str(config)]) == 0
        assert main(
            ["run", "--config", str(config), "--seed", "99", "--out", str(study_dir / "b")]
        ) == 0
        a = json.loads((study_dir / "a" / "report.json").read_text())
        b = json.loads((study_dir / "b" / "report.json").read_text())
        assert a["provenance"]["config_hash"] != b["provenance"]["config_hash"]
        assert a["provenance"]["seed"] == 3 and b["provenance"]["seed"] == 99

    def test_margin_section_appears_when_requested(self, study_dir):
        config = study_dir / "study.conf"
        write_config(
            config,
            study_dir / "manifest.csv",
            str(study_dir / "toy.csv"),
            study_dir / "out",
            extra=f"perturb_embeddings = {study_dir / 'toy.csv'}\n",
        )
        assert main(["run", "--config", str(config)]) == 0
        payload = json.loads((study_dir / "out" / "report.json").read_text())
        assert payload["margin"]["n_pairs"] == 2
        assert payload["margin"]["n_unpaired_skipped"] == 3
        assert (study_dir / "out" / "margin.csv").exists()
        assert "margin drop" in (study_dir / "out" / "report.txt").read_text()


class TestRunExitCodes:
    def test_zero_permutations_is_a_config_error_naming_the_field(
        self, study_dir, capsys
    ):
        config = study_dir / "study.conf"
        write_config(
            config, study_dir / "manifest.csv", str(study_dir / "toy.csv"), study_dir / "out"
        )
        assert main(["run", "--config", str(config), "--n-perm", "0"]) == 2
        assert "n_perm" in capsys.readouterr().err

    def test_unknown_config_key_is_exit_2(self, study_dir, capsys):
        config = study_dir / "study.conf"
        write_config(
            config, study_dir / "manifest.csv", str(study_dir / "toy.csv"), study_dir / "out"
        )
        config.write_text(config.read_text() + "n_prem = 10\n")
        assert main(["run", "--config", str(config)]) == 2
        assert "n_prem" in capsys.readouterr().err

    def test_missing_manifest_is_exit_3(self, study_dir, capsys):
        config = study_dir / "study.conf"
        write_config(
            config, study_dir / "nope.csv", str(study_dir / "toy.csv"), study_dir / "out"
        )
        assert main(["run", "--config", str(config)]) == 3

    def test_embeddings_missing_an_original_is_exit_3(self, study_dir, capsys):
        short = make_embedding_set(
            "short", IDS[1:], np.random.default_rng(0).normal(size=(11, 4))
        )
        write_embeddings(short, study_dir / "short.csv")
        config = study_dir / "study.conf"
        write_config(
            config, study_dir / "manifest.csv", str(study_dir / "short.csv"), study_dir / "out"
        )
        assert main(["run", "--config", str(config)]) == 3
        assert "s00" in capsys.readouterr().err

    def test_gaussian_source_row_count_must_match_originals(self, study_dir, capsys):
        config = study_dir / "study.conf"
        write_config(
            config, study_dir / "manifest.csv", "gaussian:99:6", study_dir / "out"
        )
        assert main(["run", "--config", str(config)]) == 2
        assert "originals" in capsys.readouterr().err

    def test_invalid_workers_env_var_is_exit_2(self, study_dir, capsys, monkeypatch):
        monkeypatch.setenv("PROBE_BENCH_WORKERS", "many")
        config = study_dir / "study.conf"
        write_config(
            config, study_dir / "manifest.csv", str(study_dir / "toy.csv"), study_dir / "out"
        )
        assert main(["run", "--config", str(config)]) == 2
        assert "workers" in capsys.readouterr().err

    def test_workers_env_var_fills_the_default(self, study_dir, monkeypatch):
        monkeypatch.setenv("PROBE_BENCH_WORKERS", "2")
        config = study_dir / "study.conf"
        write_config(
            config, study_dir / "manifest.csv", str(study_dir / "toy.csv"), study_dir / "out"
        )
        assert main(["run", "--config", str(config)]) == 0


class TestGaussian:
    def test_deterministic_output(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["gaussian", "--n", "5", "--d", "3", "--seed", "2", "--out", str(a)]) == 0
        assert main(["gaussian", "--n", "5", "--d", "3", "--seed", "2", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert a.read_text().splitlines()[0] == "id,f0,f1,f2"

    def test_zero_dimension_is_exit_2(self, tmp_path, capsys):
        code = main(["gaussian", "--n", "5", "--d", "0", "--seed", "2", "--out", str(tmp_path / "x.csv")])
        assert code == 2
        assert "--d" in capsys.readouterr().err

    def test_zero_rows_is_exit_2(self, tmp_path):
        code = main(["gaussian", "--n", "0", "--d", "4", "--seed", "2", "--out", str(tmp_path / "x.csv")])
        assert code == 2


class TestExtractClassical:
    def test_extract_then_load_matches_in_study(self, tmp_path):
        write_manifest(tmp_path / "manifest.csv", image_paths=True)
        write_images(tmp_path / "imgs")
        out_csv = tmp_path / "classical-14.csv"
        assert main(
            [
                "extract-classical",
                "--images",
                str(tmp_path / "imgs"),
                "--manifest",
                str(tmp_path / "manifest.csv"),
                "--out",
                str(out_csv),
            ]
        ) == 0
        assert out_csv.exists()
        assert (tmp_path / "classical-14.csv.hist.json").exists()

        config_a = tmp_path / "a.conf"
        write_config(
            config_a,
            tmp_path / "manifest.csv",
            f"classical:{tmp_path / 'imgs'}",
            tmp_path / "out_a",
        )
        config_b = tmp_path / "b.conf"
        write_config(
            config_b, tmp_path / "manifest.csv", str(out_csv), tmp_path / "out_b"
        )
        assert main(["run", "--config", str(config_a)]) == 0
        assert main(["run", "--config", str(config_b)]) == 0
        # metric rows agree bit for bit between the in-memory pipeline
        # and the extracted CSV + histogram sidecar route
        rows_a = (tmp_path / "out_a" / "report.csv").read_text().splitlines()[1:]
        rows_b = (tmp_path / "out_b" / "report.csv").read_text().splitlines()[1:]
        assert rows_a == rows_b

    def test_extraction_is_deterministic(self, tmp_path):
        write_manifest(tmp_path / "manifest.csv", image_paths=True)
        write_images(tmp_path / "imgs")
        args = [
            "extract-classical",
            "--images",
            str(tmp_path / "imgs"),
            "--manifest",
            str(tmp_path / "manifest.csv"),
        ]
        assert main(args + ["--out", str(tmp_path / "one.csv")]) == 0
        assert main(args + ["--out", str(tmp_path / "two.csv")]) == 0
        assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()
        assert (tmp_path / "one.csv.hist.json").read_bytes() == (
            tmp_path / "two.csv.hist.json"
        ).read_bytes()

    def test_missing_image_path_is_exit_3(self, tmp_path, capsys):
        write_manifest(tmp_path / "manifest.csv", image_paths=False)
        (tmp_path / "imgs").mkdir()
        code = main(
            [
                "extract-classical",
                "--images",
                str(tmp_path / "imgs"),
                "--manifest",
                str(tmp_path / "manifest.csv"),
                "--out",
                str(tmp_path / "x.csv"),
            ]
        )
        assert code == 3
        assert "image_path" in capsys.readouterr().err


class TestPerturb:
    def test_writes_margin_files(self, study_dir, capsys):
        out = study_dir / "pout"
        assert main(
            [
                "perturb",
                "--manifest",
                str(study_dir / "manifest.csv"),
                "--embeddings",
                str(study_dir / "toy.csv"),
                "--out",
                str(out),
            ]
        ) == 0
        assert (out / "margin.txt").exists()
        assert (out / "margin.csv").exists()
        payload = json.loads((out / "margin.json").read_text())
        assert payload["n_pairs"] == 2
        assert payload["n_unpaired_skipped"] == 3
        assert "skipped=3" in capsys.readouterr().out

    def test_probe_config_with_unknown_key_is_exit_2(self, study_dir, capsys):
        probe_conf = study_dir / "probe.conf"
        probe_conf.write_text("learning_rate = 0.1\n")
        code = main(
            [
                "perturb",
                "--manifest",
                str(study_dir / "manifest.csv"),
                "--embeddings",
                str(study_dir / "toy.csv"),
                "--out",
                str(study_dir / "pout"),
                "--probe-config",
                str(probe_conf),
            ]
        )
        assert code == 2
        assert "learning_rate" in capsys.readouterr().err
