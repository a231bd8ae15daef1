"""Config parsing, round-trip identity, execution paths, and exit codes."""

import dataclasses

import numpy as np
import pytest

from smolkit.cli import (
    ConfigError,
    Scenario,
    execute,
    main,
    parse_config,
    read_field_csv,
    serialize_config,
    write_field_csv,
)
from smolkit.field import Grid

MINIMAL = """
name = mini
mode = homogeneous
kernel.kind = constant
kernel.c = 1.0
run.n_max = 16
run.t_final = 0.2
run.dt = 0.01
"""

PDE = """
name = pde-mini
mode = pde
kernel.kind = sum
kernel.c0 = 1.0
diffusion.kind = power_law
diffusion.r2 = 1.0
diffusion.b2 = 0.5
grid.dim = 1
grid.length = 1.0
grid.cells = 16
initial.kind = gaussian_blob
initial.amplitude = 0.5
initial.width = 0.1
run.n_max = 12
run.t_final = 0.1
run.dt = 0.005
run.output_stride = 0.05
run.track_majorant = true
run.record_fields = true
monitors = conservation, heat_majorant
"""


def write(tmp_path, text, name="scenario.cfg"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestParseConfig:
    def test_minimal_valid(self, tmp_path):
        s = parse_config(write(tmp_path, MINIMAL))
        assert s.name == "mini"
        assert s.mode == "homogeneous"
        assert s.n_max == 16

    def test_unknown_key_is_named(self, tmp_path):
        p = write(tmp_path, MINIMAL + "kernal.kind = constant\n")
        with pytest.raises(ConfigError, match="kernal.kind"):
            parse_config(p)

    def test_error_carries_line_number(self, tmp_path):
        p = write(tmp_path, MINIMAL + "bogus = 1\n")
        with pytest.raises(ConfigError, match=r":9:"):
            parse_config(p)

    def test_nonpositive_dt_rejected(self, tmp_path):
        p = write(tmp_path, MINIMAL.replace("run.dt = 0.01", "run.dt = 0"))
        with pytest.raises(ConfigError, match="run.dt"):
            parse_config(p)

    def test_bad_value_type_rejected(self, tmp_path):
        p = write(tmp_path, MINIMAL.replace("run.dt = 0.01", "run.dt = soon"))
        with pytest.raises(ConfigError, match="run.dt"):
            parse_config(p)

    def test_duplicate_key_rejected(self, tmp_path):
        p = write(tmp_path, MINIMAL + "name = again\n")
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config(p)

    def test_mode_required(self, tmp_path):
        p = write(tmp_path, MINIMAL.replace("mode = homogeneous", ""))
        with pytest.raises(ConfigError, match="mode"):
            parse_config(p)

    def test_comments_and_blanks_ignored(self, tmp_path):
        p = write(tmp_path, "# banner\n\n" + MINIMAL + "\n# trailing\n")
        assert parse_config(p).name == "mini"

    def test_monitor_names_validated(self, tmp_path):
        p = write(tmp_path, MINIMAL + "monitors = conservation, wishful\n")
        with pytest.raises(ConfigError, match="wishful"):
            parse_config(p)


class TestRoundTrip:
    @pytest.mark.parametrize("text", [MINIMAL, PDE])
    def test_parse_serialize_parse_identity(self, tmp_path, text):
        s1 = parse_config(write(tmp_path, text))
        p2 = write(tmp_path, serialize_config(s1), "round.cfg")
        s2 = parse_config(p2)
        assert s1 == s2

    def test_serialized_form_is_canonical(self, tmp_path):
        s = parse_config(write(tmp_path, MINIMAL))
        assert serialize_config(s) == serialize_config(dataclasses.replace(s))


class TestExecute:
    def test_pure_diffusion_scenario_exits_zero(self, tmp_path):
        text = PDE.replace("kernel.kind = sum", "kernel.kind = constant").replace(
            "kernel.c0 = 1.0", "kernel.c = 0.0"
        )
        s = parse_config(write(tmp_path, text))
        assert execute(s, out_override=str(tmp_path / "out")) == 0
        series = (tmp_path / "out" / "series.csv").read_text().splitlines()
        header = series[1].split(",")
        i_col = header.index("I")
        vals = [float(row.split(",")[i_col]) for row in series[2:]]
        assert max(abs(v - vals[0]) for v in vals) <= 1e-12 * vals[0]
        assert (tmp_path / "out" / "snapshots" / "snapshot_0000.csv").exists()

    def test_monitor_failure_exits_two(self, tmp_path):
        # an absurdly tight conservation tolerance cannot be met
        s = parse_config(write(tmp_path, MINIMAL + "conservation.tolerance = 1e-30\n"))
        code = execute(s, out_override=str(tmp_path / "out"))
        report = (tmp_path / "out" / "report.txt").read_text()
        assert code == 2
        assert "FAIL" in report

    def test_hypothesis_error_exits_one_via_main(self, tmp_path):
        """Underestimating the second-moment bound is a hypothesis error
        (exit 1), not a monitor failure (exit 2)."""
        text = PDE.replace("monitors = conservation, heat_majorant",
                           "monitors = gronwall\ngronwall.c0 = 2.0\ngronwall.a_bound = 1e-9")
        p = write(tmp_path, text)
        assert main(["run", str(p), "--out", str(tmp_path / "out")]) == 1

    def test_missing_config_exits_one(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "nope.cfg")]) == 1
        assert "error" in capsys.readouterr().err

    def test_gelscan_writes_table(self, tmp_path):
        text = """
name = scan
mode = gelscan
kernel.kind = product
kernel.a = 1.0
run.n_max = 32
run.t_final = 0.5
run.dt = 0.01
gelscan.n_list = 16,32
gelscan.t_final = 0.5
"""
        s = parse_config(write(tmp_path, text))
        assert execute(s, out_override=str(tmp_path / "out")) == 0
        table = (tmp_path / "out" / "gelscan.csv").read_text().splitlines()
        assert table[1] == "n_max,mass_ratio,gel"
        assert len(table) == 4

    def test_verify_mode_runs_monitors(self, tmp_path):
        text = PDE.replace("mode = pde", "mode = verify")
        s = parse_config(write(tmp_path, text))
        assert execute(s, out_override=str(tmp_path / "out")) == 0
        report = (tmp_path / "out" / "report.txt").read_text()
        assert "heat_majorant_domination" in report
        assert "PASS" in report


class TestDeterminism:
    TRACER = """
name = det
mode = tracer
seed = 21
kernel.kind = constant
kernel.c = 1.0
diffusion.kind = constant
diffusion.value = 0.05
grid.dim = 1
grid.length = 1.0
grid.cells = 16
initial.kind = monodisperse
initial.amplitude = 1.0
run.n_max = 12
run.t_final = 0.1
run.dt = 0.01
tracer.count = 20000
tracer.slices = 8
"""

    def test_identical_seed_byte_identical_outputs(self, tmp_path):
        s = parse_config(write(tmp_path, self.TRACER))
        outs = []
        for tag in ("a", "b"):
            execute(s, out_override=str(tmp_path / tag))
            outs.append({
                name: (tmp_path / tag / name).read_bytes()
                for name in ("series.csv", "histogram.csv", "summary.csv", "report.txt")
            })
        assert outs[0] == outs[1]

    @pytest.mark.parametrize("workers", [2, 8])
    def test_worker_count_does_not_change_bytes(self, tmp_path, workers):
        s = parse_config(write(tmp_path, self.TRACER))
        execute(s, out_override=str(tmp_path / "w1"), workers_override=1)
        execute(s, out_override=str(tmp_path / "wN"), workers_override=workers)
        for name in ("series.csv", "histogram.csv", "summary.csv"):
            assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "wN" / name).read_bytes()


class TestShippedConfigs:
    @pytest.mark.parametrize(
        "name",
        [
            "constant_homogeneous.cfg",
            "coagulation_diffusion.cfg",
            "tracer_consistency.cfg",
            "gelation_scan.cfg",
        ],
    )
    def test_configs_parse(self, name):
        import pathlib

        path = pathlib.Path(__file__).resolve().parent.parent / "configs" / name
        s = parse_config(path)
        assert s.name

    def test_smallest_config_executes(self, tmp_path):
        import pathlib

        path = pathlib.Path(__file__).resolve().parent.parent / "configs" / "constant_homogeneous.cfg"
        assert execute(parse_config(path), out_override=str(tmp_path / "out")) == 0


class TestOutputDir:
    def test_env_var_sets_default_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SMOLKIT_OUT", str(tmp_path / "envroot"))
        monkeypatch.chdir(tmp_path)
        s = parse_config(write(tmp_path, MINIMAL))
        assert execute(s) == 0
        assert (tmp_path / "envroot" / "mini" / "report.txt").exists()


class TestFieldCsv:
    def test_write_read_roundtrip(self, tmp_path):
        grid = Grid(1, 1.0, 8)
        rng = np.random.default_rng(0)
        flat = rng.random((4, 8))
        path = tmp_path / "field.csv"
        write_field_csv(path, flat, grid, t=0.25, gel=0.125)
        F = read_field_csv(path, grid, 4)
        np.testing.assert_array_equal(F.flat(), flat)
        assert F.gel_reservoir == 0.125

    def test_wrong_cell_count_rejected(self, tmp_path):
        grid = Grid(1, 1.0, 8)
        path = tmp_path / "field.csv"
        path.write_text("1,0.5,0.5\n")
        with pytest.raises(ConfigError, match="cells"):
            read_field_csv(path, grid, 2)
