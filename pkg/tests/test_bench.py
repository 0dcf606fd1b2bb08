import csv
import json

import pytest

from ope_abstract.bench.cli import EXIT_CONFIG, EXIT_OK, EXIT_PROPERTY, main
from ope_abstract.bench.config import (ConfigError, ExperimentConfig, ExperimentKind, config_from_dict, load_config)
from ope_abstract.bench.experiments import mean_ci, read_header, run_experiment, write_report
from ope_abstract.bench.plots import emit_plots
from ope_abstract.estimators import EstimatorKind
from ope_abstract.theorems import PropertyResult

FAST_DICE = {"epochs": 300, "log_every": 100}


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_config_defaults_and_round_trip():
    cfg = ExperimentConfig("TrueRatioMse")
    assert cfg.n_trials == 15 and cfg.horizon == 100 and cfg.batch_sizes == (5, 10, 50, 100, 300)
    assert cfg.estimators == (EstimatorKind.GROUND_TRUE, EstimatorKind.ABSTRACT_TRUE)
    again = config_from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


@pytest.mark.parametrize("doc", [
    {"kind": "TrueRatioMse", "bogus": 1},
    {"kind": "Nope"},
    {"batch_sizes": [5]},
    {"kind": "TrueRatioMse", "n_trials": 0},
    {"kind": "TrueRatioMse", "batch_sizes": []},
    {"kind": "TrueRatioMse", "dice": {"alpha_nu": 1e-3, "momentum": 0.9}},
    {"kind": "TrueRatioMse", "variant": "sideways"},
    {"kind": "TrueRatioMse", "domain": "gridworld"},
])
def test_bad_configs_are_rejected(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_load_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_cli_config_error_exit_code(tmp_path, capsys):
    path = _write(tmp_path, {"kind": "TrueRatioMse", "extra": True})
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "unknown config keys" in capsys.readouterr().err
    assert main(["plot", "--report", str(tmp_path / "nowhere")]) == EXIT_CONFIG


def test_cli_run_writes_outputs_and_is_deterministic(tmp_path):
    doc = {"kind": "TrueRatioMse", "batch_sizes": [5, 10], "n_trials": 4, "seed": 3}
    path = _write(tmp_path, doc)
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "b"), "--jobs", "2"]) == EXIT_OK
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()
    assert (a / "estimates.csv").read_bytes() == (b / "estimates.csv").read_bytes()
    assert (a / "mse_vs_batch.svg").read_bytes() == (b / "mse_vs_batch.svg").read_bytes()
    est = _rows(a / "estimates.csv")
    assert list(est[0]) == ["estimator", "batch_size", "trial", "seed", "estimate", "rho_true", "mse"]
    assert len(est) == 2 * 2 * 4
    header = read_header(a)
    assert header["kind"] == "TrueRatioMse" and header["metric"] == "plain"
    lines = (a / "report.jsonl").read_text().splitlines()
    assert len(lines) == 1 + 16


def test_seed_override_changes_data(tmp_path):
    path = _write(tmp_path, {"kind": "TrueRatioMse", "batch_sizes": [5], "n_trials": 5})
    main(["run", "--config", str(path), "--out", str(tmp_path / "a"), "--no-plots"])
    main(["run", "--config", str(path), "--out", str(tmp_path / "b"), "--seed", "9", "--no-plots"])
    assert (tmp_path / "a" / "summary.csv").read_bytes() != (tmp_path / "b" / "summary.csv").read_bytes()


def test_adding_trials_keeps_existing_ones():
    small = run_experiment(ExperimentConfig("TrueRatioMse", batch_sizes=(5,), n_trials=3))
    big = run_experiment(ExperimentConfig("TrueRatioMse", batch_sizes=(5,), n_trials=6))
    key = lambda r: (r["estimator"], r["trial"])  # noqa: E731
    big_by = {key(r): r for r in big.records}
    for r in small.records:
        assert big_by[key(r)]["estimate"] == r["estimate"] and big_by[key(r)]["seed"] == r["seed"]


def test_every_cell_has_n_trials():
    rep = run_experiment(ExperimentConfig("TrueRatioMse", batch_sizes=(5, 10), n_trials=4))
    assert all(r["n_trials"] == 4 for r in rep.summary)
    assert rep.summary[0]["mse"] >= 0


def test_verify_theorems_cli(tmp_path, capsys):
    assert main(["verify-theorems", "--instances", "20", "--out", str(tmp_path / "t")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
    rows = _rows(tmp_path / "t" / "summary.csv")
    assert {r["property"] for r in rows} >= {"variance_inequality", "value_preservation"}


def test_property_failure_exit_code(monkeypatch):
    import ope_abstract.bench.experiments as ex

    monkeypatch.setattr(ex, "run_properties", lambda seed, n: [PropertyResult("broken", n, 1.0, 0.0)])
    assert main(["verify-theorems", "--instances", "3"]) == EXIT_PROPERTY


def test_theorem_suite_rerun_is_byte_identical(tmp_path):
    cfg = ExperimentConfig("TheoremSuite", n_instances=25)
    write_report(run_experiment(cfg), tmp_path / "a")
    write_report(run_experiment(cfg), tmp_path / "b")
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()


def test_ratio_correlation_report(tmp_path):
    cfg = ExperimentConfig("RatioCorrelation", batch_sizes=(20,), n_trials=2, dice=FAST_DICE)
    rep = run_experiment(cfg)
    assert len(rep.summary) == 6 and {r["state"] for r in rep.summary} == {0, 1, 2}
    write_report(rep, tmp_path)
    assert [p.name for p in emit_plots(tmp_path)] == ["correlation.svg"]
    assert any(p.startswith("trace_") for p in (q.name for q in (tmp_path / "traces").iterdir()))


def test_violation_suite_report(tmp_path):
    cfg = ExperimentConfig("ViolationSuite", batch_sizes=(20,), n_trials=2, dice=FAST_DICE)
    rep = run_experiment(cfg)
    assert [r["variant"] for r in rep.summary] == ["baseline", "transition_violated",
                                                   "action_equality_violated", "both_violated"]
    assert all(r["checks_as_designed"] for r in rep.summary)
    assert rep.summary[0]["assumption1"] and rep.summary[0]["assumption2"] and rep.summary[0]["assumption3"]
    write_report(rep, tmp_path)
    assert (tmp_path / "entries.csv").exists()
    assert [p.name for p in emit_plots(tmp_path)] == ["violation_correlation.svg"]


def test_single_cell_grid_matches_dice_sweep():
    common = dict(batch_sizes=(5,), n_trials=2, dice={**FAST_DICE, "alpha_nu": 3e-4, "alpha_zeta": 3e-4})
    grid = run_experiment(ExperimentConfig("HyperparamGrid", lr_grid=(3e-4,), **common))
    sweep = run_experiment(ExperimentConfig("DiceMseSweep", **common))
    strip = lambda rs: [{k: v for k, v in r.items() if k != "lr"} for r in rs]  # noqa: E731
    assert strip(grid.records) == strip(sweep.records)
    assert strip(grid.summary) == strip(sweep.summary)
    assert grid.tables["robustness"][0]["spread"] == 1.0


def test_hyperparam_plot(tmp_path):
    cfg = ExperimentConfig("HyperparamGrid", batch_sizes=(5,), n_trials=2, lr_grid=(1e-4, 1e-3), dice=FAST_DICE)
    rep = run_experiment(cfg)
    write_report(rep, tmp_path)
    assert [p.name for p in emit_plots(tmp_path)] == ["hyperparams.svg"]
    assert len(_rows(tmp_path / "robustness.csv")) == 2


def test_plots_are_a_function_of_the_csv(tmp_path):
    rep = run_experiment(ExperimentConfig("TrueRatioMse", batch_sizes=(5, 10), n_trials=3))
    write_report(rep, tmp_path)
    first = emit_plots(tmp_path)[0].read_bytes()
    assert emit_plots(tmp_path)[0].read_bytes() == first


def test_empty_report_gives_no_plots(tmp_path, caplog):
    (tmp_path / "report.jsonl").write_text(json.dumps({"header": {"kind": "TrueRatioMse"}}) + "\n")
    (tmp_path / "summary.csv").write_text("")
    assert emit_plots(tmp_path) == []
    assert "no data" in caplog.text


def test_mean_ci():
    mean, se, lo, hi = mean_ci([1.0, 3.0])
    assert mean == 2.0 and se == pytest.approx(1.0) and lo == pytest.approx(2 - 1.96) and hi == pytest.approx(3.96)
    assert mean_ci([5.0])[1] == 0.0


def test_shipped_configs_parse():
    from pathlib import Path

    for path in sorted(Path(__file__).parents[1].joinpath("configs").glob("*.json")):
        assert isinstance(load_config(path).kind, ExperimentKind)
