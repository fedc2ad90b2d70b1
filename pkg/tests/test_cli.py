import subprocess
import sys

import pytest

from sqgfem import io
from sqgfem.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from sqgfem.experiments import OUTPUT_ENV


@pytest.fixture
def outdir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "out"))
    return tmp_path / "out"


def test_conservation_run_writes_outputs(outdir):
    code = main(["conservation", "--refinement", "1", "--steps", "5", "--seed", "2", "--plots", "false"])
    assert code == EXIT_OK
    header, data = io.read_csv(outdir / "series.csv")
    assert header == list(io.SERIES_HEADER) and len(data) == 6
    manifest = io.read_manifest(outdir)
    assert manifest["seed"] == 2 and manifest["config"]["steps"] == 5
    assert (outdir / "final.vtk").exists()


def test_identical_config_gives_identical_files(tmp_path, monkeypatch):
    texts = []
    for k in range(2):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / f"run{k}"))
        assert main(["conservation", "--refinement", "2", "--steps", "4", "--sigma", "0.3",
                     "--seed", "8", "--plots", "false"]) == EXIT_OK
        texts.append((tmp_path / f"run{k}" / "series.csv").read_text())
    assert texts[0] == texts[1]


def test_config_file_and_flag_override(tmp_path, outdir):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("experiment=gibbs-sample\nseed=4\nrefinement=1\nsamples=50\nzprime_samples=100\nplots=false\n")
    assert main(["gibbs-sample", "--config", str(cfg), "--samples", "60"]) == EXIT_OK
    header, data = io.read_csv(outdir / "samples.csv")
    assert header == list(io.SAMPLES_HEADER) and len(data) == 60


def test_config_errors_exit_2(outdir, capsys):
    assert main(["conservation", "--dt", "-1", "--seed", "1"]) == EXIT_CONFIG
    assert "dt" in capsys.readouterr().err
    assert main(["conservation", "--steps", "2"]) == EXIT_CONFIG
    assert main(["no-such-experiment"]) == EXIT_CONFIG
    assert main(["topography", "--seed", "1", "--steps", "1", "--refinement", "0"]) == EXIT_CONFIG


def test_numerical_failure_exits_3(outdir, capsys):
    code = main(["conservation", "--refinement", "2", "--steps", "2", "--sigma", "0.5",
                 "--newton-max-iter", "1", "--seed", "1", "--plots", "false"])
    assert code == EXIT_NUMERICAL
    assert "Newton" in capsys.readouterr().err


def test_plots_are_written(outdir):
    assert main(["resolution-convergence", "--refinements", "0,1", "--samples", "200",
                 "--steps", "0", "--seed", "3"]) == EXIT_OK
    assert (outdir / "histograms.png").stat().st_size > 0
    assert (outdir / "convergence.png").stat().st_size > 0
    header, _ = io.read_csv(outdir / "convergence.csv")
    assert header == list(io.CONVERGENCE_HEADER)


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sqgfem.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "moments-compare" in proc.stdout
