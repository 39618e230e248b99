import csv
import json

import numpy as np
import pytest

from helpers import synthetic_ecg, write_bend_session

from exoload import cli
from exoload import io as eio
from exoload.errors import ValidationError
from exoload.pipeline import emit_boxplot_data, load_config, run_pipeline
from exoload.posture import DistributionSummary


def write_emg_csv(path, fs, duration_s, channels):
    n = int(duration_s * fs)
    t = np.arange(n) / fs
    rng = np.random.default_rng(7)
    header = ["time_s"] + list(channels)
    rows = np.empty((n, 1 + len(channels)))
    rows[:, 0] = t
    for j, (name, amplitude) in enumerate(channels.items(), start=1):
        rows[:, j] = amplitude * rng.standard_normal(n)
    eio.write_csv(path, header, rows)


def write_ecg_csv(path, fs, duration_s, bpm):
    signal, _ = synthetic_ecg(fs, duration_s, bpm, snr_db=25.0, seed=11)
    n = len(signal)
    t = np.arange(n) / fs
    eio.write_csv(path, ["time_s", "lead_I"], np.column_stack([t, signal]))


def write_responses(path):
    rows = [
        {
            "respondent_id": "p1",
            "questionnaire_id": "B",
            "answers": {"1": 4, "13": 2, "15": 5, "16": 1, "17": 2, "18": 4, "20": 4},
            "context": {"exoskeleton": "Laevo"},
        },
        {
            "respondent_id": "p2",
            "questionnaire_id": "B",
            "answers": {"1": 5, "13": 2, "15": 4, "16": 2, "17": 1, "18": 5, "20": 5},
            "context": {"exoskeleton": "Laevo"},
        },
    ] + [
        {
            "respondent_id": "p1",
            "questionnaire_id": "D",
            "answers": {"borg_lower_back": v, "borg_neck": 1},
            "context": {"exoskeleton": "Laevo", "position": "head", "pp_index": i, "icu": True},
        }
        for i, v in enumerate([2, 2, 2, 1, 2])
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows), encoding="utf-8")


@pytest.fixture(scope="module")
def bend_bundle(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("bend")
    config_path = write_bend_session(tmp)
    bundle = run_pipeline(load_config(config_path))
    return bundle


def test_motion_pipeline_outputs(bend_bundle):
    for key in (
        "joints",
        "torque_series",
        "angle_summaries",
        "posture_fractions",
        "torque_summaries",
        "torque_reductions",
        "boxplot_data",
        "manifest",
    ):
        assert key in bend_bundle.files and bend_bundle.files[key].exists()
    # EMG/ECG/survey tables are omitted when unconfigured
    for key in ("emg_changes", "heart_rate", "survey_constructs", "survey_borg"):
        assert key not in bend_bundle.files


def test_bend_reduction_in_band(bend_bundle):
    with open(bend_bundle.files["torque_reductions"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["label"] == "PS"
    assert 5.0 <= float(rows[0]["median_reduction_pct"]) <= 30.0


def test_bend_angle_summary_hits_forty_degrees(bend_bundle):
    with open(bend_bundle.files["angle_summaries"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    median = float(rows[0]["median"])
    assert median == pytest.approx(40.0, abs=0.05)
    with open(bend_bundle.files["posture_fractions"], newline="") as fh:
        frac = list(csv.DictReader(fh))[0]
    assert float(frac["frac_above_20deg"]) == 1.0
    assert float(frac["frac_above_45deg"]) == 0.0


def test_manifest_covers_all_inputs(bend_bundle):
    manifest = json.loads(bend_bundle.files["manifest"].read_text())
    hashed = set(manifest["inputs"])
    assert any(p.endswith("motion.csv") for p in hashed)
    assert any(p.endswith("annotation.json") for p in hashed)
    assert any(p.endswith("config.json") for p in hashed)
    assert manifest["seed"] == 0
    assert manifest["config"]["exoskeleton"] == "laevo"


def test_pipeline_rerun_is_byte_identical(tmp_path):
    config_path = write_bend_session(tmp_path, duration_s=1.0)
    config = load_config(config_path)
    first = run_pipeline(config)
    snapshot = {k: p.read_bytes() for k, p in first.files.items()}
    second = run_pipeline(config)
    for key, path in second.files.items():
        assert path.read_bytes() == snapshot[key], f"{key} differs between reruns"


def test_biosignal_and_survey_branches(tmp_path):
    fs_emg = 4370.0
    write_emg_csv(tmp_path / "baseline.csv", fs_emg, 1.5, {"ESL_L": 50.0, "ESL_R": 50.0, "TA": 30.0})
    write_emg_csv(tmp_path / "head.csv", fs_emg, 1.5, {"ESL_L": 40.0, "ESL_R": 45.0})
    write_ecg_csv(tmp_path / "ecg_head.csv", 500.0, 30.0, 66.0)
    write_responses(tmp_path / "responses.jsonl")
    config = {
        "profile": {"height_m": 1.75, "mass_kg": 70.0},
        "emg": {
            "baseline_file": "baseline.csv",
            "trial_files": {"head": "head.csv"},
        },
        "ecg": {"files": {"head": "ecg_head.csv"}},
        "survey": {"responses_file": "responses.jsonl"},
        "output_dir": "out",
    }
    (tmp_path / "config.json").write_text(json.dumps(config))
    bundle = run_pipeline(load_config(tmp_path / "config.json"))

    with open(bundle.files["emg_changes"], newline="") as fh:
        rows = {r["channel"]: r["change_pct"] for r in csv.DictReader(fh)}
    assert rows["TA"] == "NA"  # channel absent from the trial
    assert float(rows["ESL_L"]) < 0.0  # reduced amplitude shows as reduction

    with open(bundle.files["heart_rate"], newline="") as fh:
        hr = list(csv.DictReader(fh))[0]
    assert float(hr["median"]) == pytest.approx(66.0, abs=1.0)

    with open(bundle.files["survey_constructs"], newline="") as fh:
        constructs = {r["construct"]: r for r in csv.DictReader(fh)}
    assert constructs["Easiness to install"]["display"] == "4.5±0.7"
    with open(bundle.files["survey_borg"], newline="") as fh:
        borg = [r for r in csv.DictReader(fh) if r["zone"] == "lower_back"][0]
    assert borg["display"] == "1.8±0.4"

    # no motion stage ran
    assert "torque_series" not in bundle.files


def test_survey_violations_abort(tmp_path):
    bad = {"respondent_id": "p", "questionnaire_id": "B", "answers": {"1": 9}}
    (tmp_path / "responses.jsonl").write_text(json.dumps(bad))
    config = {
        "profile": {"height_m": 1.75, "mass_kg": 70.0},
        "survey": {"responses_file": "responses.jsonl"},
        "output_dir": "out",
    }
    (tmp_path / "config.json").write_text(json.dumps(config))
    with pytest.raises(ValidationError, match="stage survey"):
        run_pipeline(load_config(tmp_path / "config.json"))


def test_stage_errors_name_the_stage(tmp_path):
    (tmp_path / "motion.csv").write_text("time_s\n")
    config = {
        "profile": {"height_m": 1.75, "mass_kg": 70.0},
        "motion_file": "motion.csv",
        "output_dir": "out",
    }
    (tmp_path / "config.json").write_text(json.dumps(config))
    with pytest.raises(ValidationError, match="stage parse-motion"):
        run_pipeline(load_config(tmp_path / "config.json"))


def test_emit_boxplot_data_order_and_round_trip(tmp_path):
    s1 = DistributionSummary(3, 2.0, 1.0, 1.0, 1.5, 2.0, 2.5, 3.0)
    s2 = DistributionSummary(1, 9.0, 0.0, 9.0, 9.0, 9.0, 9.0, 9.0)
    records = emit_boxplot_data([("f", "b", "c", s2), ("f", "a", "c", s1)])
    assert [r["label"] for r in records] == ["b", "a"]  # input order preserved
    path = tmp_path / "box.json"
    eio.write_json(path, records)
    assert json.loads(path.read_text()) == records


def test_cli_pipeline_and_exit_codes(tmp_path, capsys):
    config_path = write_bend_session(tmp_path, duration_s=0.5, with_annotation=False)
    assert cli.main(["pipeline", "--config", str(config_path)]) == 0
    out = capsys.readouterr().out
    assert "manifest" in out

    assert cli.main(["pipeline", "--config", str(tmp_path / "missing.json")]) == 2

    # flat ECG drives a numerical failure -> exit 3
    n = 4000
    eio.write_csv(
        tmp_path / "flat.csv",
        ["time_s", "lead_I"],
        np.column_stack([np.arange(n) / 500.0, np.zeros(n)]),
    )
    config = {
        "profile": {"height_m": 1.75, "mass_kg": 70.0},
        "ecg": {"files": {"control": "flat.csv"}},
        "output_dir": "out2",
    }
    (tmp_path / "ecg_config.json").write_text(json.dumps(config))
    assert cli.main(["ecg", "--config", str(tmp_path / "ecg_config.json")]) == 3


def test_cli_stage_commands(tmp_path, capsys):
    config_path = write_bend_session(tmp_path, duration_s=0.5)
    assert cli.main(["retarget", "--config", str(config_path)]) == 0
    assert (tmp_path / "out" / "joints.csv").exists()
    assert cli.main(["dynamics", "--config", str(config_path)]) == 0
    assert (tmp_path / "out" / "torque_series.csv").exists()
    assert cli.main(["posture", "--config", str(config_path)]) == 0
    assert (tmp_path / "out" / "angle_summaries.csv").exists()
    assert cli.main(["report", "--config", str(config_path)]) == 0
    assert (tmp_path / "out" / "boxplot_data.json").exists()
    capsys.readouterr()


def test_cli_requires_branch_config(tmp_path):
    config_path = write_bend_session(tmp_path, duration_s=0.5)
    assert cli.main(["emg", "--config", str(config_path)]) == 2


def test_cli_seed_override_recorded(tmp_path):
    config_path = write_bend_session(tmp_path, duration_s=0.5)
    assert cli.main(["pipeline", "--config", str(config_path), "--seed", "7"]) == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["seed"] == 7


def test_config_env_var(tmp_path, monkeypatch, capsys):
    config_path = write_bend_session(tmp_path, duration_s=0.5, with_annotation=False)
    monkeypatch.setenv(cli.CONFIG_ENV_VAR, str(config_path))
    assert cli.main(["posture"]) == 0
    capsys.readouterr()


def test_pipeline_torque_matches_forward_model_oracle(tmp_path):
    """Known joint trajectory pushed through the whole pipeline: the net
    torque series must match inverse dynamics of the true trajectory (the
    forward-model oracle) within 2% relative RMS after the settle-in."""
    from helpers import capture_from_configurations, default_model, sinusoid_trajectory

    from exoload.dynamics import net_lumbar_series

    model = default_model()
    truth = sinusoid_trajectory(model, 3.0)
    captured = capture_from_configurations(model, truth, 240.0)
    eio.write_motion_file(tmp_path / "motion.csv", captured)
    config = {
        "profile": {"height_m": 1.75, "mass_kg": 70.0},
        "motion_file": "motion.csv",
        "exoskeleton": "none",
        "output_dir": "out",
    }
    (tmp_path / "config.json").write_text(json.dumps(config))
    bundle = run_pipeline(load_config(tmp_path / "config.json"))
    with open(bundle.files["torque_series"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    tau_pipeline = np.array([float(r["tau_net_nm"]) for r in rows])
    oracle = net_lumbar_series(model, truth, 1.0 / 240.0, smooth_cutoff_hz=5.0)
    skip = 240  # ignore the first second while feedback converges
    err = tau_pipeline[skip:] - oracle[skip:]
    rel_rms = float(np.sqrt(np.mean(err**2)) / np.sqrt(np.mean(oracle[skip:] ** 2)))
    assert rel_rms <= 0.02
    with open(bundle.files["torque_series"], newline="") as fh:
        exo = {float(r["tau_exo_nm"]) for r in csv.DictReader(fh)}
    assert exo == {0.0}  # no exoskeleton configured
