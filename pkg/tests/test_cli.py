import csv
import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from fbsheet import cli
from fbsheet.core_model import ContractError
from fbsheet.dimension_lab import loglog_fit
from fbsheet.plotting import PlotSeries, emit_plot
from fbsheet.simulator import SimulationError, read_field

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def read_tsv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


@pytest.fixture(autouse=True)
def _out_root(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_OUTPUT_DIR, str(tmp_path / "out"))
    monkeypatch.delenv(cli.ENV_WORKERS, raising=False)


# --- config validation -----------------------------------------------------


def test_unknown_key_rejected_with_manifest(tmp_path):
    cfg = write(tmp_path, "bad.toml", 'H = [0.5, 0.5]\nlo = [0.5, 0.5]\nhi = [1.0, 1.0]\nsizes = [2, 2]\ncolour = 3\n')
    assert cli.run("simulate", cfg) == cli.EXIT_CONFIG
    m = manifest(tmp_path / "out" / "bad")
    assert m["status"] == "failed" and m["exit_code"] == 2
    assert m["failure"]["key"] == "colour"
    assert m["config_text"] == cfg.read_text()


def test_first_offending_key_reported(tmp_path):
    cfg = write(tmp_path, "c.toml", 'H = "half"\nlo = 3\n')
    assert cli.run("simulate", cfg) == 2
    assert manifest(tmp_path / "out" / "c")["failure"]["key"] == "H"


@pytest.mark.parametrize("text,key", [
    ("lo = [0.5]\nhi = [1.0]\nsizes = [2]\n", "H"),
    ('H = [0.5]\nlo = [0.5]\nhi = [1.0]\nsizes = [2]\nseed = -1\n', "seed"),
    ('H = [1.5]\nlo = [0.5]\nhi = [1.0]\nsizes = [2]\n', "H"),
    ('H = [0.5]\nlo = [0.5]\nhi = [1.0]\nsizes = [2]\nmethod = "fft"\n', "method"),
    ('H = [0.5]\nlo = [0.5]\nhi = [1.0]\nsizes = [2]\nd = true\n', "d"),
    ('H = [0.5]\nlo = [0.5]\nhi = [1.0]\nsizes = [2]\n[table]\nx = 1\n', "table"),
])
def test_validation_errors(tmp_path, text, key):
    cfg = write(tmp_path, "v.toml", text)
    assert cli.run("simulate", cfg) == 2
    assert manifest(tmp_path / "out" / "v")["failure"]["key"] == key


def test_invalid_toml(tmp_path):
    cfg = write(tmp_path, "t.toml", "H = [0.5,\n")
    assert cli.run("simulate", cfg) == 2
    assert "TOML" in manifest(tmp_path / "out" / "t")["failure"]["message"]


def test_parse_config_defaults():
    p = cli.parse_config("h-check", "H = [0.3, 0.5]\n")
    assert p["count"] == 1000 and p["quadrature"] is True and p["seed"] == 0
    assert p["H"] == [0.3, 0.5]


def test_bad_worker_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_WORKERS, "many")
    cfg = write(tmp_path, "w.toml", 'H = [0.5]\nlo = [0.5]\nhi = [1.0]\nsizes = [2]\n')
    assert cli.run("simulate", cfg) == 2
    assert manifest(tmp_path / "out" / "w")["failure"]["key"] == cli.ENV_WORKERS


def test_budget_breach_exit_code(tmp_path):
    cfg = write(tmp_path, "b.toml", 'H = [0.5, 0.5]\nlo = [0.1, 0.1]\nhi = [1.0, 1.0]\nsizes = [100, 100]\n'
                                     'node_budget = 1000\n')
    assert cli.run("simulate", cfg) == cli.EXIT_BUDGET
    assert "budget" in manifest(tmp_path / "out" / "b")["failure"]["message"]


def test_point_budget_exit_code(tmp_path):
    cfg = write(tmp_path, "p.toml", 'kind = "full_cube"\ndepth = 8\noffset = [0.1, 0.1]\nH = [0.5, 0.5]\n'
                                     'point_budget = 100\n')
    assert cli.run("dim-rho", cfg) == 3


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise SimulationError("Cholesky failed even with the ridge")

    monkeypatch.setattr(cli, "simulate", broken)
    cfg = write(tmp_path, "n.toml", 'H = [0.5]\nlo = [0.5]\nhi = [1.0]\nsizes = [2]\n')
    assert cli.run("simulate", cfg) == cli.EXIT_NUMERICAL
    assert manifest(tmp_path / "out" / "n")["failure"]["type"] == "SimulationError"


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write(tmp_path, "u.toml", f'H = [0.5]\nlo = [0.5]\nhi = [1.0]\nsizes = [2]\noutput_dir = "{blocker}/sub"\n')
    assert cli.run("simulate", cfg) != 0


def test_missing_config_file(tmp_path):
    assert cli.run("simulate", tmp_path / "nope.toml") == 2


# --- runs ------------------------------------------------------------------


def test_simulate_byte_identical(tmp_path):
    cfg = CONFIGS / "simulate_4x4.toml"
    outs = []
    for j in range(2):
        out = tmp_path / f"r{j}"
        text = cfg.read_text() + f'output_dir = "{out}"\n'
        assert cli.run("simulate", write(tmp_path, f"s{j}.toml", text)) == 0
        outs.append(out)
    a, b = ((o / "field.fbsf").read_bytes() for o in outs)
    assert a == b
    f = read_field(outs[0] / "field.fbsf")
    assert f.values.shape == (1, 4, 4)
    assert manifest(outs[0])["outputs"] == manifest(outs[1])["outputs"]


def test_manifest_contents(tmp_path):
    raw = b'# caf\xc3\xa9\nH = [0.5]\nlo = [0.5]\nhi = [1.0]\nsizes = [3]\nplot = false\n'
    cfg = tmp_path / "m.toml"
    cfg.write_bytes(raw)
    assert cli.run("simulate", cfg) == 0
    m = manifest(tmp_path / "out" / "m")
    assert m["config_text"].encode("utf-8", "surrogateescape") == raw
    assert m["rng"] and m["version"] and m["wall_clock_seconds"] >= 0
    assert set(m["outputs"]) == {"field.fbsf", "records.tsv"}
    rows = read_tsv(tmp_path / "out" / "m" / "records.tsv")
    assert rows[0]["schema_version"] == str(cli.SCHEMA_VERSION)


def test_lnd_scan_fixture_ratio_two(tmp_path):
    cfg = write(tmp_path, "l.toml", 'H = [0.5, 0.5]\nconfig_count = 50\nrefine_steps = 0\n'
                                     'bounds = ["anisotropic"]\nfixtures = ["sector_gap"]\n')
    assert cli.run("lnd-scan", cfg) == 0
    rows = read_tsv(tmp_path / "out" / "l" / "records_anisotropic.tsv")
    fixture = [r for r in rows if r["source"] == "fixture"]
    assert len(fixture) == 1 and float(fixture[0]["ratio"]) == pytest.approx(2.0, abs=1e-9)


def test_lnd_scan_unknown_fixture(tmp_path):
    cfg = write(tmp_path, "f.toml", 'H = [0.5, 0.5]\nfixtures = ["nope"]\n')
    assert cli.run("lnd-scan", cfg) == 2


def test_dim_rho_full_square(tmp_path, capsys):
    assert cli.run("dim-rho", CONFIGS / "dim_rho_full_square.toml") == 0
    out = tmp_path / "out" / "dim_rho_full_square"
    s = read_tsv(out / "summary.tsv")[0]
    assert float(s["slope"]) == pytest.approx(4.0, abs=0.1)
    assert "slope=4.0000" in capsys.readouterr().out
    assert (out / "plot.svg").exists()


def test_occupancy_guard_needs_contrast(tmp_path):
    text = (CONFIGS / "occupancy_sparse_contrast.toml").read_text().replace("contrast = true", "")
    assert cli.run("occupancy", write(tmp_path, "o.toml", text)) == 2


def test_main_entry(tmp_path):
    cfg = write(tmp_path, "e.toml", 'H = [0.5]\nlo = [0.5]\nhi = [1.0]\nsizes = [2]\nplot = false\n')
    assert cli.main(["simulate", str(cfg)]) == 0
    with pytest.raises(SystemExit):
        cli.main(["frobnicate", str(cfg)])


# --- plots -----------------------------------------------------------------


def test_plot_slope_matches_fitter(tmp_path):
    x = [2.0**-k for k in range(8)]
    y = [3.0 * v**-1.25 for v in x]
    slopes = emit_plot([PlotSeries("power", x, y, x_is_scale=True)], "loglog", tmp_path / "p.svg")
    assert slopes["power"] == loglog_fit(x, y)[0]
    plain = emit_plot([PlotSeries("power", x, y)], "loglog", tmp_path / "q.svg")
    assert plain["power"] == -loglog_fit(x, y)[0]


def test_plot_empty_series():
    with pytest.raises(ContractError):
        emit_plot([], "loglog", "unused.svg")
    with pytest.raises(ContractError):
        emit_plot([PlotSeries("e", [], [])], "loglog", "unused.svg")
    with pytest.raises(ContractError):
        emit_plot([PlotSeries("e", [1.0], [1.0])], "histogram", "unused.svg")


def test_plot_two_series_valid_svg(tmp_path):
    x = np.logspace(-3, 0, 10)
    series = [PlotSeries("counts", x, x**-1.5, x_is_scale=True), PlotSeries("other", x, 2 * x**-0.5)]
    p = tmp_path / "two.svg"
    emit_plot(series, "loglog", p, "two")
    root = ET.parse(p).getroot()
    assert root.tag.endswith("svg")
    ids = [el.get("id") for el in root.iter() if (el.get("id") or "").startswith("line2d")]
    assert len(ids) >= 4  # markers and fitted line for each series
    emit_plot(series, "loglog", tmp_path / "again.svg", "two")
    assert p.read_bytes() == (tmp_path / "again.svg").read_bytes()


def test_plot_scatter(tmp_path):
    slopes = emit_plot([PlotSeries("lin", [0, 1, 2], [1, 3, 5])], "scatter", tmp_path / "s.svg")
    assert slopes["lin"] == pytest.approx(2.0)


def test_plot_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        emit_plot([PlotSeries("a", [1.0, 2.0], [1.0, 2.0])], "loglog", tmp_path / "missing" / "p.svg")
