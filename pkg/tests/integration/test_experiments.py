"""
Integration tests for the experiment harness and command line.

These run complete experiments into temporary directories and check the
written files, manifests and exit codes.

Usage:
    uv run pytest tests/integration/test_experiments.py -v
"""
import json

import pytest

from brwlab.api import experiments
from brwlab.api.experiments import load_manifest, rerun_manifest, run_experiment
from brwlab.api.presets import list_presets, load_preset
from brwlab.cli import main
from brwlab.core.config import numerics
from brwlab.core.exceptions import ConfigurationError
from brwlab.schemas.experiment import EXPERIMENT_KINDS, ExperimentConfig

DATA_FILES = ("populations.csv", "edges.csv", "visits.csv")


@pytest.fixture
def config_file(tmp_path):
    """Write config text to a file and return its path."""

    def write(text, name="experiment.cfg"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write


def test_return_series_outputs(tmp_path, return_series_config):
    """A rational return series writes the exact column and a manifest."""
    manifest = run_experiment(ExperimentConfig.from_text(return_series_config), tmp_path)

    assert manifest.status == "ok"
    assert "series.csv" in manifest.outputs
    assert "metrics.prom" in manifest.outputs
    assert manifest.derived["strategy"] == "quotient"
    assert manifest.derived["period"] == 2

    lines = (tmp_path / "series.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "n,p_n,log_p_n,p_n_exact"
    assert len(lines) == 42
    assert lines[3].split(",")[-1] == "1/3"

    stored = load_manifest(tmp_path / "manifest.json")
    assert stored.config == manifest.config
    assert stored.seed == 0


def test_simulation_is_deterministic(tmp_path, simulate_config):
    """Equal configs give byte-identical data files."""
    cfg = ExperimentConfig.from_text(simulate_config)
    first = run_experiment(cfg, tmp_path / "a")
    second = run_experiment(cfg, tmp_path / "b")

    assert first.derived["rho_method"] == "closed-form"
    assert first.derived["regime"] == "critical"
    for name in DATA_FILES:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    rows = (tmp_path / "a" / "populations.csv").read_text(encoding="utf-8").splitlines()
    assert len(rows) == 1 + 4 * 13


def test_seed_changes_output(tmp_path, simulate_config):
    base = ExperimentConfig.from_text(simulate_config)
    run_experiment(base, tmp_path / "a")
    run_experiment(base.model_copy(update={"seed": 12}), tmp_path / "b")
    assert (tmp_path / "a" / "visits.csv").read_bytes() != (tmp_path / "b" / "visits.csv").read_bytes()


def test_rerun_reproduces(tmp_path, simulate_config):
    """Re-running a manifest reproduces its data files."""
    run_experiment(ExperimentConfig.from_text(simulate_config), tmp_path / "a")
    rerun_manifest(tmp_path / "a" / "manifest.json", tmp_path / "b")
    for name in DATA_FILES:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_many_to_one_on_line(tmp_path):
    cfg = ExperimentConfig.model_validate(
        {
            "kind": "many-to-one",
            "graph": "z",
            "mu": "fixed(2)",
            "budgets": "1, 2",
            "target": "z:0",
            "reps": 400,
            "seed": 4,
        }
    )
    manifest = run_experiment(cfg, tmp_path)
    assert manifest.derived["max_abs_z"] < 5
    lines = (tmp_path / "many_to_one.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 3


def test_dirichlet_radii(tmp_path):
    cfg = ExperimentConfig.model_validate({"kind": "dirichlet", "graph": "t(3)", "radii": "2, 4, 8"})
    manifest = run_experiment(cfg, tmp_path)
    assert manifest.derived["nondecreasing"] is True
    assert 0.8 < manifest.derived["rho_largest_radius"] < 0.9429


def test_cli_runs_config(tmp_path, config_file, return_series_config, capsys):
    out = tmp_path / "out"
    code = main(["return-series", "--config", str(config_file(return_series_config)), "--out", str(out)])
    assert code == 0
    assert (out / "series.csv").exists()
    assert "series.csv" in capsys.readouterr().out


def test_cli_flags_override_config(tmp_path, config_file, simulate_config):
    out = tmp_path / "out"
    code = main(["run", "--config", str(config_file(simulate_config)), "--seed", "5", "--reps", "2", "--out", str(out)])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 5
    assert manifest["config"]["replications"] == 2


def test_malformed_kernel_exits_2(tmp_path, config_file):
    """A parse error exits with code 2 before anything is written."""
    out = tmp_path / "out"
    path = config_file("kind = return-series\ngraph = t(3)\nkernel = walk\n")
    assert main(["return-series", "--config", str(path), "--out", str(out)]) == 2
    assert not out.exists()


def test_kind_mismatch_exits_2(tmp_path, config_file, return_series_config):
    path = config_file(return_series_config)
    assert main(["ends", "--config", str(path), "--out", str(tmp_path / "out")]) == 2


def test_unknown_config_key_exits_2(tmp_path, config_file):
    path = config_file("kind = ends\ngraph = z\ncolour = red\n")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "out")]) == 2


def test_support_cap_exits_3(tmp_path, config_file):
    """A resource failure is recorded in the manifest and exits with code 3."""
    out = tmp_path / "out"
    path = config_file(
        "kind = return-series\n"
        "graph = t(3)\n"
        "kernel = heightbiased(7/10)\n"
        "n = 50\n"
        "numerics = support_cap: 10\n"
    )
    assert main(["return-series", "--config", str(path), "--out", str(out)]) == 3
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["status"] == "error"
    assert manifest["error"]["code"] == "ResourceError"
    assert manifest["error"]["exit_code"] == 3


def test_population_cap_below_expected_exits_2(tmp_path, config_file, simulate_config):
    text = simulate_config.replace("mu = critical", "mu = fixed(2)") + "population_cap = 100\n"
    out = tmp_path / "out"
    assert main(["run", "--config", str(config_file(text)), "--out", str(out)]) == 2
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["error"]["code"] == "ConfigurationError"


def test_allowed_truncation_is_recorded(tmp_path, simulate_config):
    text = (
        simulate_config.replace("mu = critical", "mu = fixed(2)")
        + "population_cap = 100\nallow_truncation = true\n"
    )
    manifest = run_experiment(ExperimentConfig.from_text(text), tmp_path)
    assert manifest.status == "ok"
    assert len(manifest.truncation_events) == 4
    assert {event.generation for event in manifest.truncation_events} == {7}


def test_unknown_numerics_field_exits_2(tmp_path, config_file):
    path = config_file("kind = dirichlet\ngraph = z\nnumerics = support_kap: 10\n")
    assert main(["dirichlet", "--config", str(path), "--out", str(tmp_path / "out")]) == 2


def test_numerics_overrides_reach_kernel(tmp_path, mocker):
    """Row cache overrides are in force when the experiment kernel is built."""
    spy = mocker.spy(experiments, "build_kernel")
    cfg = ExperimentConfig.from_text(
        "kind = dirichlet\ngraph = t(3)\nradii = 2\nnumerics = row_cache_size: 17, row_cap: 4096\n"
    )
    run_experiment(cfg, tmp_path)
    kernel = spy.spy_return
    assert kernel._rows.maxsize == 17
    assert numerics.row_cache_size == 65_536


def test_presets_listing(capsys):
    assert main(["presets"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) >= 11
    names = {line.split()[0] for line in lines}
    assert {"hammock-one-end", "cs2-additivity", "t3xz-critical-ends"} <= names


@pytest.mark.parametrize("preset", [p.name for p in list_presets()])
def test_presets_validate(preset):
    cfg = load_preset(preset)
    assert cfg.kind in EXPERIMENT_KINDS
    assert cfg.preset == preset


def test_unknown_preset():
    with pytest.raises(ConfigurationError):
        load_preset("no-such-preset")


def _aggregates(out):
    return json.loads((out / "summary.json").read_text(encoding="utf-8"))["aggregates"]


@pytest.mark.slow
def test_purple_saturates_on_t3xt3(tmp_path):
    run_experiment(load_preset("t3xt3-purple"), tmp_path)
    (entry,) = _aggregates(tmp_path)
    assert entry["median_by_budget"]["30"] == entry["median_by_budget"]["20"]


@pytest.mark.slow
def test_purple_keeps_growing_under_drift(tmp_path):
    run_experiment(load_preset("t3xz-biased-purple"), tmp_path)
    (entry,) = _aggregates(tmp_path)
    assert entry["growth_fraction"] >= 0.8


@pytest.mark.slow
def test_unbiased_ends_beat_biased(tmp_path):
    run_experiment(load_preset("t3xz-critical-ends", {"budgets": "30, 60"}), tmp_path)
    by_key = {(a["kernel"], a["budget"]): a for a in _aggregates(tmp_path)}
    assert by_key[("primary", 60)]["win_rate_vs_paired"] >= 0.8
    assert by_key[("primary", 60)]["median_components"] >= by_key[("primary", 30)]["median_components"]
    assert by_key[("primary", 60)]["median_components"] > by_key[("paired", 60)]["median_components"]


@pytest.mark.slow
def test_biased_trace_is_one_ended(tmp_path):
    run_experiment(load_preset("t3xz-biased-ends"), tmp_path)
    by_kernel = {a["kernel"]: a for a in _aggregates(tmp_path)}
    assert by_kernel["primary"]["fraction_one_component"] >= 0.8
    assert by_kernel["paired"]["fraction_one_component"] < by_kernel["primary"]["fraction_one_component"]
