import logging

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

import app
from channel_model import channel_covariance
from config import dump_config, preset_config
from harness import (
    CSV_COLUMNS,
    KIND_COVARIANCE,
    METHOD_ORACLE,
    METHOD_PERFECT_CSI,
    Unit,
    accumulate_samples,
    cached_dictionary,
    cell_rng,
    draw_geometry,
    emit_csv,
    estimation_units,
    geometry_dictionary,
    normalized_frobenius_error,
    run_channel_experiment,
    run_covariance_experiment,
    run_sumrate_experiment,
)


def true_covariance(geometry, name):
    return channel_covariance(geometry)


@pytest.fixture
def restore_logging():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


def test_cell_rng_depends_only_on_key():
    a = cell_rng(7, 1, 0, 3).standard_normal(4)
    b = cell_rng(7, 1, 0, 3).standard_normal(4)
    c = cell_rng(7, 1, 0, 4).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_units_expand_lambdas(tiny_config):
    units = estimation_units(tiny_config)
    assert units == [Unit("unquantized"), Unit("nondithered"), Unit("dithered", 1.0), Unit("dithered", 2.0)]


def test_accumulators_stream_in_chunks(tiny_config):
    geometry = draw_geometry(tiny_config, 0)
    units = [Unit("unquantized"), Unit("dithered", 1.0)]
    chunked = accumulate_samples(geometry, 0.1, 300, units, tiny_config.model_copy(update={"chunk_size": 128}),
                                 (0, 0, 300, 0))
    assert [chunked[u].count for u in units] == [300, 300]
    again = accumulate_samples(geometry, 0.1, 300, units, tiny_config.model_copy(update={"chunk_size": 128}),
                               (0, 0, 300, 0))
    np.testing.assert_array_equal(chunked[units[1]].total, again[units[1]].total)


def test_normalized_frobenius_error():
    C = np.eye(2)
    assert normalized_frobenius_error(C, C) == 0.0
    assert normalized_frobenius_error(C, np.zeros((2, 2))) == pytest.approx(1.0)


def test_dictionary_is_shared_across_groups_and_sample_sizes(tiny_config):
    cached_dictionary.cache_clear()
    run_covariance_experiment(tiny_config)
    info = cached_dictionary.cache_info()
    assert info.misses == tiny_config.num_geometries
    assert info.hits == tiny_config.num_groups * len(tiny_config.sample_sizes) - 1


def test_dictionary_cache_keys_on_geometry_and_user(tiny_config):
    d = geometry_dictionary(tiny_config, 0)
    assert geometry_dictionary(tiny_config, 0) is d
    assert geometry_dictionary(tiny_config, 0, 1) is not d
    assert geometry_dictionary(tiny_config.model_copy(update={"seed": 12}), 0) is not d
    assert d.grid_size == tiny_config.effective_grid_size
    np.testing.assert_array_equal(d.masks[0], draw_geometry(tiny_config, 0).local_clusters[0].selection(16))


def test_covariance_experiment_records(tiny_config):
    result = run_covariance_experiment(tiny_config)
    frame = result.to_frame()
    # 4 cells x (4 e_nf + 3 e_nf_basic)
    assert len(frame) == 28
    assert not result.failures()
    assert (frame["value"] >= 0).all()
    assert set(frame["metric"]) == {"e_nf", "e_nf_basic"}
    assert frame.loc[frame["method"] == "unquantized", "metric"].eq("e_nf").all()
    summary = result.summary()
    assert list(summary.columns) == CSV_COLUMNS
    assert (summary["count"] == 2).all()


def test_injected_true_covariance_has_zero_error(tiny_config):
    result = run_covariance_experiment(tiny_config, override=true_covariance)
    np.testing.assert_allclose(result.to_frame()["value"], 0.0, atol=1e-15)


def test_channel_experiment_with_true_covariance_matches_oracle(tiny_config):
    frame = run_channel_experiment(tiny_config, override=true_covariance).to_frame()
    oracle = frame[frame["method"] == METHOD_ORACLE].set_index(["geometry", "group", "num_samples"])["value"]
    for method, rows in frame[frame["method"] != METHOD_ORACLE].groupby(["method", "lambda"], dropna=False):
        values = rows.set_index(["geometry", "group", "num_samples"])["value"]
        np.testing.assert_allclose(values.sort_index(), oracle.sort_index(), rtol=1e-12)


def test_channel_experiment_oracle_not_worse_than_zero_estimate(tiny_config):
    frame = run_channel_experiment(tiny_config.model_copy(update={"num_channel_draws": 50})).to_frame()
    assert not (frame["status"] != "ok").any()
    assert (frame.loc[frame["method"] == METHOD_ORACLE, "value"] <= 1.0 + 1e-6).all()


def test_failures_are_recorded_not_dropped(tiny_config):
    cfg = tiny_config.model_copy(update={"diag_floor": 5.0})
    result = run_channel_experiment(cfg)
    frame = result.to_frame()
    # oracle + 4 units per cell, every one failing on the diagonal floor
    assert len(frame) == 4 * 5
    assert (frame["status"] == "failed").all()
    assert frame["message"].str.startswith("DiagonalUnderflow").all()
    summary = result.summary()
    assert summary["failures"].sum() == 20
    assert summary["value"].isna().all()


def test_sumrate_experiment_sources(tiny_config):
    result = run_sumrate_experiment(tiny_config)
    frame = result.to_frame()
    assert not result.failures()
    assert set(frame["method"]) == {METHOD_PERFECT_CSI, METHOD_ORACLE, "unquantized", "nondithered", "dithered"}
    assert set(frame["receiver"]) == {"mrc", "zf", "blmmse"}
    # 4 cells x 6 CSI sources x 3 receivers
    assert len(frame) == 72
    assert (frame["value"] >= 0).all()


def test_single_user_zero_forcing_equals_mrc_rate(tiny_config):
    cfg = tiny_config.model_copy(update={"num_users": 1, "estimators": ["unquantized"], "receivers": ["mrc", "zf"]})
    frame = run_sumrate_experiment(cfg).to_frame()
    mrc = frame[frame["receiver"] == "mrc"]["value"].to_numpy()
    zf = frame[frame["receiver"] == "zf"]["value"].to_numpy()
    np.testing.assert_allclose(zf, mrc, rtol=1e-9)


def test_same_seed_gives_identical_csv(tiny_config, tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_csv(run_covariance_experiment(tiny_config), str(first))
    emit_csv(run_covariance_experiment(tiny_config), str(second))
    assert first.read_bytes() == second.read_bytes()
    header = first.read_text(encoding="utf-8").splitlines()[0]
    assert header == ",".join(CSV_COLUMNS)


def test_seed_changes_results(tiny_config):
    a = run_covariance_experiment(tiny_config).to_frame()["value"]
    b = run_covariance_experiment(tiny_config.model_copy(update={"seed": 12})).to_frame()["value"]
    assert not np.allclose(a, b)


def test_raw_csv_has_one_row_per_record(tiny_config, tmp_path):
    result = run_covariance_experiment(tiny_config)
    path = tmp_path / "raw.csv"
    emit_csv(result, str(path), raw=True)
    table = pd.read_csv(path)
    assert len(table) == len(result.records)
    assert set(table["kind"]) == {KIND_COVARIANCE}


@pytest.mark.slow
def test_worker_count_does_not_change_csv(tiny_config, tmp_path):
    serial, parallel = tmp_path / "serial.csv", tmp_path / "parallel.csv"
    emit_csv(run_sumrate_experiment(tiny_config, n_jobs=1), str(serial))
    emit_csv(run_sumrate_experiment(tiny_config, n_jobs=2), str(parallel))
    assert serial.read_bytes() == parallel.read_bytes()


@pytest.mark.slow
def test_dithered_pipeline_beats_nondithered_on_nonstationary_array():
    cfg = preset_config("desk", lambdas=[1.0, 1.5, 2.0], sample_sizes=[200, 2000], seed=3)
    summary = run_covariance_experiment(cfg).summary()
    e_nf = summary[summary["metric"] == "e_nf"]
    nondithered = e_nf[e_nf["method"] == "nondithered"].set_index("num_samples")["value"]
    dithered = e_nf[e_nf["method"] == "dithered"].groupby("num_samples")["value"].min()
    assert dithered[2000] < nondithered[2000]
    assert (nondithered > 0.1).all()


@pytest.mark.slow
def test_oracle_lower_bounds_plugin_nmse():
    cfg = preset_config("desk", estimators=["dithered"], lambdas=[2.5], sample_sizes=[100, 10_000],
                        num_geometries=10, num_groups=2, seed=5)
    result = run_channel_experiment(cfg)
    oracle = result.metric("e_nmse", METHOD_ORACLE)
    plugin = result.metric("e_nmse", "dithered", lam=2.5)
    assert (oracle["value"] <= plugin["value"] + 2 * plugin["stderr"]).all()
    gap = plugin["value"] - oracle["value"]
    assert gap[10_000] < 0.25 * gap[100]


@pytest.mark.slow
def test_angular_refinement_does_not_worsen_dithered_estimate():
    cfg = preset_config("desk", estimators=["dithered"], lambdas=[1.0], sample_sizes=[1000],
                        num_geometries=4, num_groups=5, seed=21)
    frame = run_covariance_experiment(cfg).to_frame()
    refined = frame[frame["metric"] == "e_nf"].set_index(["geometry", "group"])["value"]
    basic = frame[frame["metric"] == "e_nf_basic"].set_index(["geometry", "group"])["value"]
    assert refined.mean() < basic.mean()
    assert (refined <= basic).mean() >= 0.5


@pytest.mark.slow
def test_dithered_error_is_u_shaped_in_lambda():
    cfg = preset_config("desk", estimators=["dithered"], lambdas=[0.25, 1.5, 4.0], sample_sizes=[1000],
                        num_geometries=2, num_groups=3, seed=22)
    result = run_covariance_experiment(cfg)
    e_nf = {lam: result.metric("e_nf", "dithered", lam=lam)["value"][1000] for lam in cfg.lambdas}
    assert e_nf[1.5] < e_nf[0.25]
    assert e_nf[1.5] < e_nf[4.0]


@pytest.mark.slow
def test_dithered_error_does_not_grow_with_samples():
    cfg = preset_config("desk", estimators=["dithered"], lambdas=[1.5], sample_sizes=[100, 1000, 10_000],
                        num_geometries=2, num_groups=3, seed=23)
    curve = run_covariance_experiment(cfg).metric("e_nf", "dithered", lam=1.5)
    values, errors = curve["value"].to_numpy(), curve["stderr"].to_numpy()
    for i in range(len(values) - 1):
        assert values[i + 1] <= values[i] + 2 * np.hypot(errors[i], errors[i + 1])


@pytest.mark.slow
def test_perfect_csi_bounds_estimated_csi_blmmse_rate():
    cfg = preset_config("desk", estimators=["dithered"], lambdas=[1.5], sample_sizes=[1000], receivers=["blmmse"],
                        num_geometries=2, num_groups=2, seed=24)
    result = run_sumrate_experiment(cfg)
    perfect = result.metric("r_sum", METHOD_PERFECT_CSI, receiver="blmmse")["value"][1000]
    for method, lam in ((METHOD_ORACLE, None), ("dithered", 1.5)):
        assert perfect >= result.metric("r_sum", method, lam=lam, receiver="blmmse")["value"][1000]


def write_config(tmp_path, cfg):
    path = tmp_path / "cfg.yaml"
    dump_config(cfg, str(path))
    return str(path)


def test_cli_writes_csv(tiny_config, tmp_path, restore_logging):
    out = tmp_path / "cov.csv"
    runner = CliRunner()
    res = runner.invoke(app.cli, ["--plain-logs", "cov-exp", "--config", write_config(tmp_path, tiny_config),
                                  "--out", str(out), "--seed", "4", "--no-progress"])
    assert res.exit_code == 0, res.output
    table = pd.read_csv(out)
    assert list(table.columns) == CSV_COLUMNS
    assert (table["seed"] == 4).all()


def test_cli_config_error_exits_2(tmp_path, restore_logging):
    path = tmp_path / "bad.yaml"
    path.write_text("unknown_knob: 1\n", encoding="utf-8")
    res = CliRunner().invoke(app.cli, ["cov-exp", "--preset", "desk", "--config", str(path),
                                       "--out", str(tmp_path / "x.csv"), "--no-progress"])
    assert res.exit_code == 2
    assert "unknown key 'unknown_knob'" in res.output


def test_cli_failed_cells_exit_1_unless_partial(tiny_config, tmp_path, restore_logging):
    config_path = write_config(tmp_path, tiny_config.model_copy(update={"diag_floor": 5.0}))
    args = ["chan-exp", "--config", config_path, "--out", str(tmp_path / "chan.csv"), "--no-progress"]
    assert CliRunner().invoke(app.cli, args).exit_code == 1
    assert CliRunner().invoke(app.cli, args + ["--allow-partial"]).exit_code == 0


def test_json_logging(capsys, restore_logging):
    app.configure_logging("INFO", json_logs=True)
    logging.getLogger("onebit.test").info("hello", extra={"cells": 3})
    line = capsys.readouterr().err.strip().splitlines()[-1]
    assert '"message": "hello"' in line and '"cells": 3' in line
