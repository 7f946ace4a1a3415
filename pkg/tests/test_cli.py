"""End-to-end tests for the pds-sampler command line."""

import csv
import json

import numpy as np
import pytest
from typer.testing import CliRunner

from pds_sampler.cli import EXIT_CONFIG, EXIT_DIVERGED, app
from pds_sampler.grid import Field, GridShape, read_grid, write_grid

runner = CliRunner()

MINIMAL = """\
[experiment]
seed = 1
chains = 4
checkpoint_stride = 10

[target]
kind = gaussian
shape = [1, 2, 2]
mean = 0.5

[samplers.vanilla]
step = 0.1
iterations = 100
"""


def write_config(tmp_path, text, name="exp.conf"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def write_samples(directory, shape, values):
    directory.mkdir(parents=True, exist_ok=True)
    for i, value in enumerate(values):
        write_grid(directory / f"sample_{i:03d}.pdsgrid", Field(np.asarray(value, dtype=np.float64).reshape(shape.as_tuple())))
    return directory


class TestSampleCommand:
    """Test the sample command."""

    def test_minimal_run(self, tmp_path):
        """Test one row per checkpoint, the outputs and exit code 0."""
        config = write_config(tmp_path, MINIMAL)
        out = tmp_path / "run"
        result = runner.invoke(app, ["sample", str(config), "--out-dir", str(out)])
        assert result.exit_code == 0, result.output

        rows = read_rows(out / "metrics.csv")
        assert len(rows) == 10
        assert [row["iteration"] for row in rows] == [str(i) for i in range(10, 101, 10)]
        assert list(rows[0]) == ["sampler", "iteration", "w2", "spectral_error", "mean_err"]
        assert rows[0]["spectral_error"] == ""
        assert float(rows[-1]["w2"]) >= 0

        timing = read_rows(out / "timing.csv")
        assert timing[0]["sampler"] == "vanilla"
        assert timing[0]["iterations"] == "100"
        assert read_grid(out / "final_vanilla.pdsgrid").shape == GridShape(1, 2, 2)
        assert (out / "chain0_vanilla.pdsgrid").is_file()
        assert "pds-sampler sample report" in (out / "report.md").read_text(encoding="utf-8")

    def test_reruns_are_byte_identical(self, tmp_path):
        """Test that metrics and final grids do not change between runs."""
        config = write_config(tmp_path, MINIMAL)
        for name in ("a", "b"):
            result = runner.invoke(app, ["sample", str(config), "--out-dir", str(tmp_path / name), "--no-report"])
            assert result.exit_code == 0, result.output
        for file in ("metrics.csv", "final_vanilla.pdsgrid", "chain0_vanilla.pdsgrid"):
            assert (tmp_path / "a" / file).read_bytes() == (tmp_path / "b" / file).read_bytes()
        assert not (tmp_path / "a" / "report.md").exists()

    def test_seed_override_changes_output(self, tmp_path):
        """Test that --seed selects different chain streams."""
        config = write_config(tmp_path, MINIMAL)
        runner.invoke(app, ["sample", str(config), "-o", str(tmp_path / "a"), "--no-report"])
        runner.invoke(app, ["sample", str(config), "-o", str(tmp_path / "b"), "--seed", "2", "--no-report"])
        assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_json_config(self, tmp_path):
        """Test a JSON config with a preconditioned and a solenoidal sampler."""
        config = {
            "experiment": {"chains": 3, "checkpoint_stride": 5},
            "target": {"kind": "gaussian", "shape": [1, 4, 4], "variances": 2.0},
            "samplers": {
                "pds": {"preconditioner": "parametric", "r": 0.8, "lambda": 1.5, "iterations": 20},
                "rotating": {"skew": "s1", "omega": 1.0, "step": 0.05, "iterations": 20},
            },
        }
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(config), encoding="utf-8")
        result = runner.invoke(app, ["sample", str(path), "-o", str(tmp_path / "run")])
        assert result.exit_code == 0, result.output
        rows = read_rows(tmp_path / "run" / "metrics.csv")
        assert [row["sampler"] for row in rows] == ["pds"] * 4 + ["rotating"] * 4

    def test_missing_filter_file(self, tmp_path):
        """Test exit code 2 for a frequency filter that does not exist."""
        text = MINIMAL + "preconditioner = file\nfrequency_filter = missing.pdsgrid\n"
        result = runner.invoke(app, ["sample", str(write_config(tmp_path, text)), "-o", str(tmp_path / "run")])
        assert result.exit_code == EXIT_CONFIG
        assert "missing.pdsgrid" in result.output

    def test_missing_config(self, tmp_path):
        """Test exit code 2 when the config file is absent."""
        result = runner.invoke(app, ["sample", str(tmp_path / "nope.conf")])
        assert result.exit_code == EXIT_CONFIG

    def test_config_found_in_working_directory(self, tmp_path, monkeypatch):
        """Test that pds-sampler.conf is picked up when no config is given."""
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv("HOME", str(tmp_path / "home"))
        write_config(tmp_path, MINIMAL, name="pds-sampler.conf")
        result = runner.invoke(app, ["sample", "-o", str(tmp_path / "run"), "--no-report"])
        assert result.exit_code == 0, result.output
        assert len(read_rows(tmp_path / "run" / "metrics.csv")) == 10

    def test_no_config_anywhere(self, tmp_path, monkeypatch):
        """Test exit code 2 when no config is given and none is found."""
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv("HOME", str(tmp_path / "home"))
        result = runner.invoke(app, ["sample", "-o", str(tmp_path / "run")])
        assert result.exit_code == EXIT_CONFIG
        assert "samplers" in result.output

    def test_large_gaussian_grid(self, tmp_path):
        """Test a 1x17x17 Gaussian target, which keeps dense metrics."""
        text = MINIMAL.replace("shape = [1, 2, 2]", "shape = [1, 17, 17]").replace("iterations = 100", "iterations = 10")
        out = tmp_path / "run"
        result = runner.invoke(app, ["sample", str(write_config(tmp_path, text)), "-o", str(out), "--no-report"])
        assert result.exit_code == 0, result.output
        row = read_rows(out / "metrics.csv")[-1]
        assert row["spectral_error"] == ""
        assert float(row["w2"]) > 0

    def test_sampler_name_cannot_leave_out_dir(self, tmp_path):
        """Test exit code 2 for a sampler name containing a path separator."""
        config = {"experiment": {"chains": 2}, "samplers": {"../escaped": {"step": 0.1, "iterations": 5}}}
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(config), encoding="utf-8")
        result = runner.invoke(app, ["sample", str(path), "-o", str(tmp_path / "run" / "inner")])
        assert result.exit_code == EXIT_CONFIG
        assert "sampler name" in result.output
        assert not list(tmp_path.rglob("final_*"))

    def test_mixture_needs_explicit_step(self, tmp_path):
        """Test exit code 2 and a clear message for step = auto on a mixture."""
        text = (
            "[target]\nkind = mixture\nshape = [1, 2, 2]\nmeans = [-1.0, 1.0]\n"
            "[samplers.vanilla]\niterations = 5\n"
        )
        result = runner.invoke(app, ["sample", str(write_config(tmp_path, text)), "-o", str(tmp_path / "run")])
        assert result.exit_code == EXIT_CONFIG
        assert "set step to a number" in result.output

    def test_divergence(self, tmp_path):
        """Test exit code 3 and the sampler name for an unstable step size."""
        text = MINIMAL.replace("step = 0.1", "step = 5.0")
        result = runner.invoke(app, ["sample", str(write_config(tmp_path, text)), "-o", str(tmp_path / "run")])
        assert result.exit_code == EXIT_DIVERGED
        assert "vanilla" in result.output


class TestBenchmarkCommand:
    """Test the benchmark command."""

    def test_identity_speedup_is_one(self, tmp_path):
        """Test that an identity preconditioner needs exactly the vanilla iterations."""
        text = (
            "[experiment]\nchains = 256\ncheckpoint_stride = 2\nthreshold = 0.8\nmax_iterations = 60\n"
            "[target]\nshape = [1, 2, 2]\nmean = 3.0\n"
            "[samplers.vanilla]\n"
            "[samplers.identity]\npreconditioner = identity\n"
        )
        out = tmp_path / "bench"
        result = runner.invoke(app, ["benchmark", str(write_config(tmp_path, text)), "-o", str(out)])
        assert result.exit_code == 0, result.output

        rows = {row["sampler"]: row for row in read_rows(out / "benchmark.csv")}
        assert rows["vanilla"]["T_needed"] == rows["identity"]["T_needed"] != "not reached"
        assert float(rows["identity"]["speedup_vs_vanilla"]) == 1.0
        curve = read_rows(out / "benchmark_curve.csv")
        assert {row["sampler"] for row in curve} == {"vanilla", "identity"}
        assert len(curve) == 60

    def test_well_conditioned_speedup_is_about_one(self, tmp_path):
        """Test that a statistical R on an isotropic target neither helps nor hurts."""
        text = (
            "[experiment]\nseed = 3\nchains = 256\ncheckpoint_stride = 1\nthreshold = 0.3\n"
            "max_iterations = 400\nstep_fraction = 0.01\nstop_at_threshold = true\n"
            "[target]\nkind = gaussian\nshape = [1, 4, 4]\nvariances = 0.05\n"
            "[samplers.vanilla]\n"
            "[samplers.pds]\npreconditioner = statistical\nalpha = 5\ncount = 200\n"
        )
        out = tmp_path / "bench"
        result = runner.invoke(app, ["benchmark", str(write_config(tmp_path, text)), "-o", str(out), "--no-report"])
        assert result.exit_code == 0, result.output

        rows = {row["sampler"]: row for row in read_rows(out / "benchmark.csv")}
        assert rows["vanilla"]["T_needed"] != "not reached"
        assert 0.8 <= float(rows["pds"]["speedup_vs_vanilla"]) <= 1.2

    def test_not_reached(self, tmp_path):
        """Test that an unreachable threshold is reported and has no speedup."""
        text = (
            "[experiment]\nchains = 8\ncheckpoint_stride = 5\nthreshold = 1e-9\nmax_iterations = 10\n"
            "[samplers.vanilla]\n"
        )
        out = tmp_path / "bench"
        result = runner.invoke(app, ["benchmark", str(write_config(tmp_path, text)), "-o", str(out), "--no-report"])
        assert result.exit_code == 0, result.output
        row = read_rows(out / "benchmark.csv")[0]
        assert row["T_needed"] == "not reached"
        assert row["speedup_vs_vanilla"] == ""

    def test_ill_conditioned_grf_acceleration(self, tmp_path):
        """Test that PDS reaches the GRF spectral-error threshold at least twice as fast."""
        text = (
            "[experiment]\nseed = 7\nchains = 256\ncheckpoint_stride = 10\nthreshold = 0.2\n"
            "max_iterations = 3000\nstop_at_threshold = true\n"
            "[target]\nkind = grf\nshape = [1, 32, 32]\ncondition_number = 1000\n"
            "[samplers.vanilla]\n"
            "[samplers.pds]\npreconditioner = parametric\nr = 6.4\nlambda = 2.0\n"
        )
        out = tmp_path / "bench"
        result = runner.invoke(app, ["benchmark", str(write_config(tmp_path, text)), "-o", str(out)])
        assert result.exit_code == 0, result.output

        rows = {row["sampler"]: row for row in read_rows(out / "benchmark.csv")}
        vanilla, pds = rows["vanilla"]["T_needed"], rows["pds"]["T_needed"]
        assert vanilla != "not reached" and pds != "not reached"
        assert int(pds) <= 0.5 * int(vanilla)
        assert float(rows["pds"]["speedup_vs_vanilla"]) >= 2.0
        assert "Iterations to reach spectral_error" in (out / "report.md").read_text(encoding="utf-8")

    def test_needs_two_chains(self, tmp_path):
        """Test that a single chain is rejected."""
        result = runner.invoke(app, ["benchmark", str(write_config(tmp_path, MINIMAL)), "--chains", "1"])
        assert result.exit_code == EXIT_CONFIG


class TestBuildFilter:
    """Test the build-filter subcommands."""

    def test_parametric(self, tmp_path):
        """Test the 28x28 circular mask: 1 at the centre, lambda in the corner."""
        result = runner.invoke(
            app,
            ["build-filter", "parametric", "--height", "28", "--width", "28", "--r", "5.6", "--lambda", "1.6", "-o", str(tmp_path)],
        )
        assert result.exit_code == 0, result.output
        r = read_grid(tmp_path / "frequency_filter.pdsgrid")
        assert r.shape == GridShape(1, 28, 28)
        assert r.data[0, 14, 14] == 1.0
        assert r.data[0, 0, 0] == 1.6

    def test_parametric_invalid(self, tmp_path):
        """Test exit code 2 for a non-positive radius."""
        result = runner.invoke(
            app, ["build-filter", "parametric", "--height", "8", "--width", "8", "--r", "0", "--lambda", "2", "-o", str(tmp_path)]
        )
        assert result.exit_code == EXIT_CONFIG

    def test_statistical(self, tmp_path):
        """Test that the statistical filter peaks at exactly 1."""
        shape = GridShape(1, 8, 8)
        rng = np.random.default_rng(0)
        samples = write_samples(tmp_path / "samples", shape, rng.standard_normal((12, 64)))
        result = runner.invoke(
            app,
            ["build-filter", "statistical", "--samples-dir", str(samples), "--count", "10", "-o", str(tmp_path), "--name", "r.pdsgrid"],
        )
        assert result.exit_code == 0, result.output
        r = read_grid(tmp_path / "r.pdsgrid")
        assert r.data.max() == 1.0
        assert r.data.min() >= 0.8

    def test_space(self, tmp_path):
        """Test that identical positive samples give an all-ones space filter."""
        shape = GridShape(1, 4, 4)
        samples = write_samples(tmp_path / "samples", shape, [np.full(16, 0.5)] * 3)
        result = runner.invoke(app, ["build-filter", "space", "--samples-dir", str(samples), "-o", str(tmp_path)])
        assert result.exit_code == 0, result.output
        np.testing.assert_array_equal(read_grid(tmp_path / "space_filter.pdsgrid").data, 1.0)

    def test_space_rejects_negative_samples(self, tmp_path):
        """Test exit code 2 for negative pixel values."""
        samples = write_samples(tmp_path / "samples", GridShape(1, 2, 2), [[1.0, -1.0, 0.0, 2.0]])
        result = runner.invoke(app, ["build-filter", "space", "--samples-dir", str(samples), "-o", str(tmp_path)])
        assert result.exit_code == EXIT_CONFIG

    def test_missing_samples_dir(self, tmp_path):
        """Test exit code 2 for a missing samples directory."""
        result = runner.invoke(app, ["build-filter", "statistical", "--samples-dir", str(tmp_path / "none")])
        assert result.exit_code == EXIT_CONFIG


class TestUtilityCommands:
    """Test info, config and doctor."""

    def test_info(self, tmp_path):
        """Test the header line and --stats."""
        path = write_grid(tmp_path / "g.pdsgrid", Field(np.arange(6, dtype=np.float64).reshape(1, 2, 3)))
        result = runner.invoke(app, ["info", str(path), "--stats"])
        assert result.exit_code == 0, result.output
        assert "PDSGRID1 1x2x3 (6 values)" in result.output
        assert "max 5" in result.output

    def test_info_bad_file(self, tmp_path):
        """Test exit code 2 for a file without the PDSGRID1 magic."""
        path = tmp_path / "bad.pdsgrid"
        path.write_bytes(b"not a grid at all, really")
        result = runner.invoke(app, ["info", str(path)])
        assert result.exit_code == EXIT_CONFIG

    def test_config_show_and_write(self, tmp_path):
        """Test the default dump and the sample config file."""
        result = runner.invoke(app, ["config"])
        assert result.exit_code == 0
        assert '"max_iterations": 2000' in result.output

        path = tmp_path / "sample.json"
        result = runner.invoke(app, ["config", "--write", str(path)])
        assert result.exit_code == 0
        assert json.loads(path.read_text())["target"]["kind"] == "grf"

    @pytest.mark.parametrize("package", ["numpy", "scipy", "typer"])
    def test_doctor(self, package):
        """Test that doctor lists the numerical stack."""
        result = runner.invoke(app, ["doctor"])
        assert result.exit_code == 0
        assert package in result.output
