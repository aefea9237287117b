import json
import subprocess
import sys
from pathlib import Path

import pytest

from oscillax.cli import main

FIX_DIR = None


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("models")
    assert main(["fixtures", "-o", str(d)]) == 0
    return d


class TestCommands:
    def test_classify_subcase(self, model_dir, tmp_path):
        assert main(["classify", str(model_dir / "FIX-PP.json"), "-o", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "classify.json").read_text())
        assert rep["subcase"] == "B2"
        assert rep["rate"] == pytest.approx(0.905031433644464, abs=1e-12)

    def test_evolve_csv_shape(self, model_dir, tmp_path):
        assert main(["evolve", str(model_dir / "FIX-ZZ.json"), "--from", "0",
                     "--to", "0", "-n", "256", "-W", "128", "-o", str(tmp_path)]) == 0
        lines = (tmp_path / "evolve.csv").read_text().strip().splitlines()
        assert lines[0] == "n,value,leak"
        assert len(lines) == 257
        final_leak = float(lines[-1].split(",")[2])
        assert final_leak <= 1e-10

    def test_verify_identities_exit_zero(self, model_dir, tmp_path):
        rc = main(["verify", str(model_dir / "FIX-ZZ.json"), "--suite", "identities",
                   "-o", str(tmp_path)])
        assert rc == 0
        rep = json.loads((tmp_path / "verify.json").read_text())
        assert rep["identities"]["all_exact_zero"] is True

    def test_invalid_input_exit_two(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"left": [[1, "1/2"], [2, "1/2"]],
                                   "origin": [[-1, "1/2"], [1, "1/2"]],
                                   "right": [[-1, "1/2"], [1, "1/2"]]}))
        assert main(["classify", str(bad), "-o", str(tmp_path)]) == 2

    def test_missing_file_exit_two(self, tmp_path):
        assert main(["classify", str(tmp_path / "nope.json"), "-o", str(tmp_path)]) == 2

    def test_spectrum_report(self, model_dir, tmp_path):
        assert main(["spectrum", str(model_dir / "FIX-ZP.json"), "-W", "96",
                     "-o", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "spectrum.json").read_text())
        assert rep["rho_psi"] < 0.999
        assert rep["defect_max"] <= 1.0
        assert len(rep["H"]) == 2 * 96 + 1

    def test_simulate_reproducible_bytes(self, model_dir, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["simulate", str(model_dir / "FIX-ZZ.json"), "--from", "0",
                         "-n", "30", "--paths", "5000", "-s", "42", "-o", str(out)]) == 0
        assert (a / "simulate.json").read_bytes() == (b / "simulate.json").read_bytes()

    def test_evolve_reproducible_bytes(self, model_dir, tmp_path):
        a, b = tmp_path / "a2", tmp_path / "b2"
        for out in (a, b):
            assert main(["evolve", str(model_dir / "FIX-PP.json"), "--from", "0",
                         "--to", "0", "-n", "128", "-W", "96", "-o", str(out)]) == 0
        assert (a / "evolve.csv").read_bytes() == (b / "evolve.csv").read_bytes()

    def test_kernel_csv(self, model_dir, tmp_path):
        assert main(["kernel", str(model_dir / "FIX-ZZ.json"), "-n", "32", "-W", "64",
                     "-o", str(tmp_path)]) == 0
        lines = (tmp_path / "kernel.csv").read_text().strip().splitlines()
        assert lines[0] == "n,x,y,Qn,Tn"
        assert len(lines) > 32

    def test_env_out_fallback(self, model_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("OSCILLAX_OUT", str(tmp_path / "envout"))
        assert main(["classify", str(model_dir / "FIX-ZZ.json")]) == 0
        assert (tmp_path / "envout" / "classify.json").exists()


class TestEntryPoint:
    def test_module_invocation(self, model_dir, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "oscillax.cli", "classify",
             str(model_dir / "FIX-ZZ.json"), "-o", str(tmp_path)],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert "classify.json" in proc.stdout
