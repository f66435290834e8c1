import json
from pathlib import Path

import numpy as np
import pytest

from gridpatch import cli
from gridpatch import forecast as fc
from gridpatch.config import RunConfig, load_config, parse_config_text

SMALL = """
seed = 3
num_units = 3
num_days = 400
base_capacity = 90.0
case_buses = 14
case_gens = 9
case_branches = 20
case_loads = 8
train_epochs = 1
max_windows_per_epoch = 40
episodes = 2
episode_len_cap = 8
eval_episodes = 2
hidden = 16
batch_size = 8
replay_capacity = 256
n_dis = 6
sweep_inputs = 56
sweep_horizons = 15
sweep_epochs = 1
sweep_windows_per_epoch = 30
ablate_episodes = 1
"""


def write_small_config(tmp_path, out_name="run"):
    cfg_path = tmp_path / "small.cfg"
    cfg_path.write_text(SMALL + f"\nout = {tmp_path / out_name}\n")
    return cfg_path, tmp_path / out_name


def run_cli(*argv):
    return cli.main(list(argv))


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def test_config_defaults_and_overrides():
    cfg = parse_config_text("seed = 9\nmu = 4.5\nhorizon_mode = short\n")
    assert cfg.seed == 9 and cfg.mu == 4.5
    assert cfg.forecast_days == 1
    assert RunConfig().forecast_days == 10


def test_config_rejects_unknown_keys_and_bad_values():
    from gridpatch.config import ConfigError
    with pytest.raises(ConfigError):
        parse_config_text("nonsense = 1\n")
    with pytest.raises(ConfigError):
        parse_config_text("seed = banana\n")
    with pytest.raises(ConfigError):
        parse_config_text("just a line\n")


def test_sweep_grid_has_28_cells():
    assert len(RunConfig().sweep_grid()) == 7 * 4 == 28


# ---------------------------------------------------------------------------
# gen-data / gen-case
# ---------------------------------------------------------------------------

def test_gen_data_writes_verifiable_manifest(tmp_path):
    cfg_path, out = write_small_config(tmp_path)
    assert run_cli("gen-data", "--config", str(cfg_path)) == 0
    series = out / "series.csv"
    assert series.exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["files"]["series.csv"] == cli.sha256_file(series)
    assert (out / "config_resolved.txt").exists()


def test_gen_data_rerun_is_byte_identical(tmp_path):
    cfg_path, out = write_small_config(tmp_path)
    run_cli("gen-data", "--config", str(cfg_path))
    first = (out / "series.csv").read_bytes()
    run_cli("gen-data", "--config", str(cfg_path))
    assert (out / "series.csv").read_bytes() == first


def test_gen_case_rerun_identical_and_seed_changes_hash(tmp_path):
    cfg_path, out = write_small_config(tmp_path)
    run_cli("gen-case", "--config", str(cfg_path))
    first = (out / "case.json").read_bytes()
    run_cli("gen-case", "--config", str(cfg_path))
    assert (out / "case.json").read_bytes() == first
    run_cli("gen-case", "--config", str(cfg_path), "--seed", "99")
    assert (out / "case.json").read_bytes() != first


def test_bad_out_path_is_io_failure(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("a file, not a directory")
    cfg_path = tmp_path / "bad.cfg"
    cfg_path.write_text(SMALL + f"\nout = {blocker / 'sub'}\n")
    assert run_cli("gen-data", "--config", str(cfg_path)) == 2


def test_missing_artifact_is_validation_failure(tmp_path, capsys):
    cfg_path, out = write_small_config(tmp_path, "empty")
    assert run_cli("train-forecast", "--config", str(cfg_path)) == 1
    err = capsys.readouterr().err
    assert "series.csv" in err


def test_unknown_command_fails_cleanly():
    assert run_cli("frobnicate") == 1


# ---------------------------------------------------------------------------
# persistence baseline
# ---------------------------------------------------------------------------

def test_persistence_rmse_zero_on_constant_series():
    vals = np.full((60, 2), 42.0)
    pred = fc.persistence_forecast(vals, t0=30, horizon=10)
    assert fc.rmse(pred, vals[31:41]) == 0.0


# ---------------------------------------------------------------------------
# the full pipeline at toy scale
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    cfg_path, out = write_small_config(tmp)
    assert run_cli("gen-data", "--config", str(cfg_path)) == 0
    assert run_cli("gen-case", "--config", str(cfg_path)) == 0
    assert run_cli("train-forecast", "--config", str(cfg_path)) == 0
    assert run_cli("train-dispatch", "--config", str(cfg_path)) == 0
    assert run_cli("eval-dispatch", "--config", str(cfg_path)) == 0
    return cfg_path, out


def _read_csv(path):
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def test_pipeline_artifacts_exist(pipeline):
    _, out = pipeline
    for name in ["forecast.ckpt.json", "forecast_training.csv", "agent.ckpt.json",
                 "training_log.csv", "summary.csv", "episode_0_steps.csv",
                 "episode_0_confidence.csv"]:
        assert (out / name).exists(), name


def test_summary_totals_match_per_step_recomputation(pipeline):
    _, out = pipeline
    header, rows = _read_csv(out / "summary.csv")
    ep_rows = [r for r in rows if r[0] not in ("mean",)]
    for k, row in enumerate(ep_rows):
        sh, srows = _read_csv(out / f"episode_{k}_steps.csv")
        r_idx = sh.index("r_t")
        total = sum(float(r[r_idx]) for r in srows)
        assert total == pytest.approx(float(row[header.index("total_reward")]), abs=1e-9)
        assert len(srows) == int(row[header.index("steps")])


def test_steps_csv_has_reward_components_and_dispatch_log(pipeline):
    _, out = pipeline
    header, rows = _read_csv(out / "episode_0_steps.csv")
    for col in ["t", "r_t", "s_b", "zeta_s_r", "zeta_s_v", "zeta_cost", "urre",
                "cum_reward", "dispatched", "done_reason"]:
        assert col in header
    # reward identity on every logged step
    for r in rows:
        want = (float(r[header.index("s_b")]) + float(r[header.index("zeta_s_r")])
                + float(r[header.index("zeta_s_v")]) + float(r[header.index("zeta_cost")])
                + 2.0 * float(r[header.index("urre")]))
        assert float(r[header.index("r_t")]) == pytest.approx(want, abs=1e-9)
    kept = rows[0][header.index("dispatched")].split(";")
    assert 1 <= len(kept) <= 6


def test_eval_rerun_is_byte_identical(pipeline):
    cfg_path, out = pipeline
    first = (out / "summary.csv").read_bytes()
    ep_first = (out / "episode_0_steps.csv").read_bytes()
    assert run_cli("eval-dispatch", "--config", str(cfg_path)) == 0
    assert (out / "summary.csv").read_bytes() == first
    assert (out / "episode_0_steps.csv").read_bytes() == ep_first


def test_horizon_mode_toggles_state_block(pipeline):
    cfg_path, out = pipeline
    from gridpatch import ddpg, grid as gg
    case = gg.load_case(out / "case.json")
    cfg = load_config(cfg_path)
    long_dim = ddpg.state_dim(case, 10)
    short_dim = ddpg.state_dim(case, 1)
    assert long_dim - short_dim == 9 * case.n_new
    cfg.horizon_mode = "short"
    assert cfg.forecast_days == 1


def test_eval_forecast_single_cell(pipeline):
    cfg_path, out = pipeline
    assert run_cli("eval-forecast", "--config", str(cfg_path)) == 0
    header, rows = _read_csv(out / "rmse_table.csv")
    assert len(rows) == 1
    row = rows[0]
    ens = float(row[header.index("rmse_ensemble")])
    bound = float(row[header.index("rmse_bound")])
    assert ens <= bound + 1e-9
    assert float(row[header.index("n_windows")]) > 0


def test_ablate_reports_three_variants(pipeline):
    cfg_path, out = pipeline
    assert run_cli("ablate", "--config", str(cfg_path)) == 0
    header, rows = _read_csv(out / "ablation.csv")
    assert [r[0] for r in rows] == ["full", "no-patch", "no-forecast"]
    for r in rows:
        assert np.isfinite(float(r[header.index("total_reward")]))
