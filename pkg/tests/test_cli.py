"""Command line tests: subcommands, overrides, exit codes, output files."""

from __future__ import annotations

import json
import subprocess
import sys

import pytest

from fbcomm.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main


def _write_json(path, payload):
    path.write_text(json.dumps(payload), encoding="ascii")
    return str(path)


class TestBlerCommands:
    def test_sk_bler_prints_csv(self, capsys):
        assert main(["sk-bler", "--trials", "300"]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("scheme,K,N,eta_db")
        assert lines[1].startswith("sk,6,18,")

    def test_trials_flag_overrides_config(self, tmp_path, capsys):
        cfg = _write_json(tmp_path / "c.json", {
            "scheme": "sk", "K": 4, "N": 8, "eta_db": 0.0, "trials": 999999,
        })
        assert main(["sk-bler", "--config", cfg, "--trials", "123"]) == EXIT_OK
        row = capsys.readouterr().out.splitlines()[1].split(",")
        assert row[5] == "123"

    def test_modsk_bler_runs(self, capsys):
        assert main(["modsk-bler", "--trials", "300"]) == EXIT_OK
        row = capsys.readouterr().out.splitlines()[1]
        assert row.startswith("modulo-sk,")

    def test_out_directory_gets_files(self, tmp_path, capsys):
        out = tmp_path / "results"
        assert main(["sk-bler", "--trials", "200", "--out", str(out)]) == EXIT_OK
        capsys.readouterr()
        assert (out / "results.csv").exists()
        assert (out / "manifest.json").exists()

    def test_scheme_mismatch_is_config_error(self, tmp_path, capsys):
        cfg = _write_json(tmp_path / "c.json", {
            "scheme": "uncoded", "K": 4, "N": 4, "eta_db": 0.0, "trials": 10,
        })
        assert main(["sk-bler", "--config", cfg]) == EXIT_CONFIG
        capsys.readouterr()

    def test_missing_config_file(self, capsys):
        assert main(["sk-bler", "--config", "/no/such/file.json"]) == EXIT_CONFIG
        capsys.readouterr()

    def test_invalid_point_exits_config(self, tmp_path, capsys):
        cfg = _write_json(tmp_path / "c.json", {
            "scheme": "sk", "K": 0, "N": 8, "eta_db": 0.0, "trials": 10,
        })
        assert main(["sk-bler", "--config", cfg]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("cli-train")
    cfg = _write_json(tmp_path / "train.json", {
        "codec": {"n_bits": 3, "snr_db": 2.0, "snr_fb_db": None,
                  "d_m": 8, "q_tx": 1, "q_rx": 1},
        "train": {"snr_schedule": [[2.0, 4]], "batch_size": 8,
                  "retrain": False, "calibration_blocks": 32,
                  "seed": 3},
    })
    out = tmp_path / "out"
    code = main(["train", "--config", cfg, "--out", str(out)])
    return code, out


class TestTrainAndEval:
    def test_train_writes_artifacts(self, trained, capsys):
        code, out = trained
        capsys.readouterr()
        assert code == EXIT_OK
        assert (out / "checkpoint.bin").exists()
        assert (out / "history.csv").exists()
        history = (out / "history.csv").read_text().splitlines()
        assert history[0] == "update_index,stage,train_snr_db,loss"
        assert len(history) == 5

    def test_eval_reads_checkpoint(self, trained, capsys):
        _, out = trained
        code = main(["attention-eval", "--checkpoint",
                     str(out / "checkpoint.bin"), "--trials", "64"])
        assert code == EXIT_OK
        row = capsys.readouterr().out.splitlines()[1].split(",")
        assert row[0] == "attention"
        assert row[1] == "3"
        assert row[5] == "64"

    def test_train_needs_config(self, capsys):
        assert main(["train"]) == EXIT_CONFIG
        capsys.readouterr()

    def test_train_rejects_missing_blocks(self, tmp_path, capsys):
        cfg = _write_json(tmp_path / "bad.json", {"codec": {}})
        assert main(["train", "--config", cfg]) == EXIT_CONFIG
        capsys.readouterr()

    def test_eval_needs_checkpoint(self, capsys):
        assert main(["attention-eval"]) == EXIT_CONFIG
        capsys.readouterr()


class TestOtherCommands:
    def test_precision_sweep_stdout_and_file(self, tmp_path, capsys):
        cfg = _write_json(tmp_path / "p.json", {
            "K": [4], "bits": [8, 12], "eta_db": 0.0, "trials": 50,
        })
        out = tmp_path / "sweep"
        code = main(["precision-sweep", "--config", cfg, "--out", str(out)])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "k_bits,total_bits,frac_bits,trials,block_errors,bler"
        assert len(lines) == 3
        assert (out / "precision.csv").read_text().splitlines() == lines

    def test_csi_map_demo(self, tmp_path, capsys):
        out = tmp_path / "demo"
        cfg = _write_json(tmp_path / "d.json", {
            "pilot_lengths": [2, 4], "trials": 3, "eta_db": 15.0,
        })
        code = main(["csi-map-demo", "--config", cfg, "--out", str(out)])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 3
        payload = json.loads((out / "csi-map-demo.json").read_text())
        assert [row["pilot_len"] for row in payload] == [2, 4]

    def test_unknown_subcommand_rejected(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        capsys.readouterr()
        assert info.value.code == 2


class TestInstalledEntryPoint:
    def test_console_script_runs(self):
        proc = subprocess.run(
            [sys.executable, "-m", "fbcomm.cli", "sk-bler", "--trials", "100"],
            capture_output=True, text=True, timeout=120,
        )
        assert proc.returncode == 0
        assert proc.stdout.startswith("scheme,")
