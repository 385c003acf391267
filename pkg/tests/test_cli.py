"""Command-line surface: subcommands, exit codes, emitted files, headers."""

import json
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from bcnn.cli import main
from bcnn.data import load_idx, read_pgm


@pytest.fixture(scope="module")
def digit_pgm() -> str:
    with resources.as_file(resources.files("bcnn") / "assets" / "digit.pgm") as p:
        return str(p)


class TestDispatch:
    def test_unknown_subcommand_exits_1(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_unknown_flag_exits_1(self):
        assert main(["certify", "--bogus"]) == 1

    def test_help_exits_0(self):
        assert main(["--help"]) == 0

    def test_missing_file_exits_1(self, tmp_path, capsys):
        code = main(["decompose", "--image", str(tmp_path / "nope.pgm"),
                     "--out-dir", str(tmp_path)])
        assert code == 1


class TestTransformCommands:
    def test_decompose_outputs(self, digit_pgm, tmp_path, capsys):
        code = main(["decompose", "--image", digit_pgm, "--filter-size", "29",
                     "--cutoff", "full", "--out-dir", str(tmp_path), "--seed", "5"])
        assert code == 0
        out = capsys.readouterr().out
        assert out.startswith("relative_l2_on_disk")
        assert float(out.split()[1]) < 0.25
        doc = json.loads((tmp_path / "digit.coeffs.json").read_text())
        header = doc["header"]
        assert header["seed"] == 5
        assert header["precision"] == "double"
        assert header["basis_hash"]
        assert "build_id" in header
        recon = read_pgm(tmp_path / "digit.recon.pgm")
        assert recon.shape == (29, 29)

    def test_reconstruct_from_coeffs(self, digit_pgm, tmp_path, capsys):
        main(["decompose", "--image", digit_pgm, "--filter-size", "29",
              "--out-dir", str(tmp_path)])
        code = main(["reconstruct", "--coeffs", str(tmp_path / "digit.coeffs.json"),
                     "--filter-size", "29", "--out-dir", str(tmp_path)])
        assert code == 0
        a = read_pgm(tmp_path / "digit.recon.pgm")
        b = read_pgm(tmp_path / "digit.recon.pgm")
        np.testing.assert_array_equal(a, b)

    def test_rotate_matches_rot90_of_reconstruction(self, digit_pgm, tmp_path, capsys):
        main(["decompose", "--image", digit_pgm, "--filter-size", "29",
              "--out-dir", str(tmp_path)])
        code = main(["rotate", "--image", digit_pgm, "--angle", "90",
                     "--out-dir", str(tmp_path)])
        assert code == 0
        rotated = read_pgm(tmp_path / "digit.rot90.pgm")
        recon = read_pgm(tmp_path / "digit.recon.pgm")
        # same pipeline, rotated: agree up to PGM quantization
        np.testing.assert_allclose(rotated, np.rot90(recon, 1), atol=2 / 255)

    def test_reflect_writes_mirror(self, digit_pgm, tmp_path, capsys):
        main(["decompose", "--image", digit_pgm, "--filter-size", "29",
              "--out-dir", str(tmp_path)])
        code = main(["reflect", "--image", digit_pgm, "--out-dir", str(tmp_path)])
        assert code == 0
        mirrored = read_pgm(tmp_path / "digit.reflected.pgm")
        recon = read_pgm(tmp_path / "digit.recon.pgm")
        np.testing.assert_allclose(mirrored, np.fliplr(recon), atol=2 / 255)


class TestAudit:
    def test_so2_audit_passes_exact_angles(self, tmp_path, capsys):
        code = main(["audit", "--group", "so2", "--filter-sizes", "5",
                     "--angles", "30,90", "--images", "4", "--seed", "3",
                     "--out-dir", str(tmp_path), "--svg"])
        assert code == 0
        doc = json.loads((tmp_path / "audit_so2.json").read_text())
        assert doc["exact_angle_ok"] is True
        assert doc["delta_expected_nonzero"] is True
        assert doc["delta_analytic_max"] > 0
        assert (tmp_path / "audit_so2.svg").exists()

    def test_o2_audit_reports_mirror_deviation(self, tmp_path, capsys):
        code = main(["audit", "--group", "o2", "--filter-sizes", "5",
                     "--angles", "90", "--images", "3", "--out-dir", str(tmp_path)])
        assert code == 0
        doc = json.loads((tmp_path / "audit_o2.json").read_text())
        assert doc["mirror_dev"] <= 1e-8

    def test_plain_conv_is_not_invariant(self, tmp_path, capsys):
        code = main(["audit", "--group", "conv", "--filter-sizes", "9",
                     "--angles", "90", "--images", "4", "--out-dir", str(tmp_path)])
        assert code == 0
        doc = json.loads((tmp_path / "audit_conv.json").read_text())
        dev = max(e["max_dev"] for e in doc["entries"])
        assert dev > 1e-3


class TestCertify:
    def test_passes_and_writes_summary(self, tmp_path, capsys):
        code = main(["certify", "--cases", "5", "--out-dir", str(tmp_path)])
        assert code == 0
        doc = json.loads((tmp_path / "certify.json").read_text())
        assert doc["passed"] is True
        out = capsys.readouterr().out
        assert "pass integral_vs_direct_so2" in out

    def test_detects_injected_sign_bug(self, tmp_path, monkeypatch, capsys):
        # wrong sign in the negative-order synthesis must break the
        # mirror-reconstruction path
        import bcnn.fbimage as fbimage
        from bcnn.fbimage import FBCoefficients

        def broken_reflect(coeffs):
            signs = (-1.0) ** (np.arange(coeffs.spec.nu_max + 1) + 1)  # sign bug
            return FBCoefficients(values=signs[:, None] * np.conj(coeffs.values),
                                  spec=coeffs.spec)

        monkeypatch.setattr(fbimage, "reflect_coeffs", broken_reflect)
        code = main(["certify", "--cases", "5", "--out-dir", str(tmp_path)])
        assert code == 1
        doc = json.loads((tmp_path / "certify.json").read_text())
        assert doc["passed"] is False
        assert not doc["checks"]["reflect_reconstruction"]["pass"]


class TestTrainEvalGenData:
    def test_gen_data_roundtrip(self, tmp_path, capsys):
        code = main(["gen-data", "--dataset", "mnist-rot", "--count", "40",
                     "--out-dir", str(tmp_path), "--seed", "2"])
        assert code == 0
        ds = load_idx(tmp_path / "mnist-rot-train-images-idx3-ubyte",
                      tmp_path / "mnist-rot-train-labels-idx1-ubyte")
        assert len(ds) == 40
        manifest = json.loads((tmp_path / "mnist-rot-train.manifest.json").read_text())
        assert manifest["source"] in ("digits-fallback", "mnist-idx")
        assert manifest["seed"] == 2

    def test_train_and_eval_cycle(self, tmp_path, capsys):
        code = main(["train", "--dataset", "mnist-rot", "--regime", "low",
                     "--method", "bcnn", "--group", "so2", "--cutoff", "half",
                     "--lambda-width", "0.25", "--train-count", "20",
                     "--test-count", "30", "--epochs", "2", "--batch-size", "10",
                     "--precision", "single", "--out-dir", str(tmp_path),
                     "--seed", "1"])
        assert code == 0
        tag = "bcnn_so2_half_mnist-rot_low"
        assert (tmp_path / f"{tag}.bckp").exists()
        history = (tmp_path / f"{tag}.history.csv").read_text().splitlines()
        assert any(line.startswith("# seed=") for line in history)
        rows = [line for line in history if not line.startswith("#")]
        assert rows[0] == "epoch,split,loss,accuracy,lr"
        assert len(history) > 2
        manifest = json.loads((tmp_path / f"{tag}.manifest.json").read_text())
        assert manifest["parameters"] == 2894
        assert "test_accuracy" in manifest

        code = main(["eval", "--checkpoint", str(tmp_path / f"{tag}.bckp"),
                     "--dataset", "mnist-rot", "--test-count", "30",
                     "--out-dir", str(tmp_path), "--seed", "1"])
        assert code == 0
        doc = json.loads((tmp_path / "eval.json").read_text())
        assert doc["accuracy"] == pytest.approx(manifest["test_accuracy"], abs=0.2)

    def test_config_file_supplies_defaults(self, tmp_path, capsys):
        cfg = tmp_path / "run.ini"
        cfg.write_text("images = 3\nfilter-sizes = 5\nangles = 90\n")
        code = main(["audit", "--group", "so2", "--config", str(cfg),
                     "--out-dir", str(tmp_path)])
        assert code == 0
        doc = json.loads((tmp_path / "audit_so2.json").read_text())
        assert doc["filter_sizes"] == [5]
        assert doc["angles_deg"] == [90.0]


class TestBench:
    def test_bench_outputs(self, tmp_path, capsys):
        code = main(["bench", "--filter-sizes", "5,9", "--spatial", "12",
                     "--channels", "2,2", "--repeats", "5",
                     "--out-dir", str(tmp_path), "--svg"])
        assert code == 0
        lines = (tmp_path / "bench.csv").read_text().splitlines()
        rows = [line for line in lines if not line.startswith("#")]
        assert rows[0] == "filter_size,n,median_seconds,min_seconds"
        assert len(rows) == 3
        doc = json.loads((tmp_path / "bench.json").read_text())
        assert "fitted_exponent" in doc
        assert (tmp_path / "bench.svg").exists()

    def test_repeats_floor(self, tmp_path):
        assert main(["bench", "--repeats", "2", "--out-dir", str(tmp_path)]) == 1
