"""End-to-end analysis pipeline: retarget captured motion, estimate joint
torques, apply the exoskeleton model, decompose the lumbar load, summarize
postures and torques per trial segment, process EMG/ECG recordings, score
questionnaires, and emit a deterministic report bundle.

Reruns on identical inputs and configuration produce byte-identical output
files: no timestamps, no randomness (the accepted ``seed`` is only recorded in
the manifest), stable orderings throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from . import io as eio
from .anthropometry import AnthropometricProfile, get_table, load_table_file
from .biosignals import (
    detect_r_peaks,
    emg_change_pct,
    emg_envelope,
    heart_rate_stats,
    settle_samples,
)
from .dynamics import (
    GRAVITY_DEFAULT,
    LaevoModel,
    TorqueSeries,
    decompose_torque,
    laevo_torque_series,
    load_exoskeleton_params,
    lumbar_effort_report,
    net_lumbar_series,
)
from .errors import ExoloadError, ValidationError
from .posture import (
    POSTURE_THRESHOLDS_DEG,
    AnnotationSegment,
    DistributionSummary,
    TrialAnnotation,
    posture_profile,
    segment_series,
    summarize,
    thorax_flexion_deg,
    tukey_whiskers,
)
from .retarget import (
    RetargetResult,
    SolverSettings,
    load_solver_settings,
    retarget_trajectory,
)
from .skeleton import KinematicState, SkeletonModel, build_model
from .surveys import (
    borg_summary,
    construct_scores,
    format_mean_stdev,
    load_schema,
    validate,
)

PACKAGE_VERSION = "0.1.0"

SUMMARY_HEADER = (
    "trial",
    "label",
    "channel",
    "n",
    "mean",
    "stdev",
    "min",
    "q1",
    "median",
    "q3",
    "max",
    "whisker_low_1p5iqr",
    "whisker_high_1p5iqr",
)


@dataclass
class EmgConfig:
    baseline_file: Path
    trial_files: dict[str, Path]
    sample_rate: float | None = None


@dataclass
class EcgConfig:
    files: dict[str, Path]
    channel: str | None = None


@dataclass
class SurveyConfig:
    responses_file: Path


@dataclass
class SessionConfig:
    profile: AnthropometricProfile
    output_dir: Path
    motion_file: Path | None = None
    annotation_file: Path | None = None
    coefficient_table_file: Path | None = None
    segment_aliases_file: Path | None = None
    exoskeleton: str = "none"  # none | laevo
    exoskeleton_params_file: Path | None = None
    solver_settings_file: Path | None = None
    derivative_smoothing_hz: float | None = 5.0
    gravity: float = GRAVITY_DEFAULT
    emg: EmgConfig | None = None
    ecg: EcgConfig | None = None
    survey: SurveyConfig | None = None
    seed: int = 0
    config_path: Path | None = None

    def __post_init__(self) -> None:
        if self.exoskeleton not in ("none", "laevo"):
            raise ValidationError(f"unknown exoskeleton model {self.exoskeleton!r}")


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def load_config(path: str | Path) -> SessionConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    base = path.parent
    try:
        prof = payload["profile"]
        profile = AnthropometricProfile(
            height_m=float(prof["height_m"]),
            mass_kg=float(prof["mass_kg"]),
            coefficient_table_id=prof.get("coefficient_table", "default-v1"),
        )
        emg = None
        if payload.get("emg") is not None:
            raw = payload["emg"]
            emg = EmgConfig(
                baseline_file=_resolve(base, raw["baseline_file"]),
                trial_files={k: _resolve(base, v) for k, v in raw["trial_files"].items()},
                sample_rate=raw.get("sample_rate"),
            )
        ecg = None
        if payload.get("ecg") is not None:
            raw = payload["ecg"]
            ecg = EcgConfig(
                files={k: _resolve(base, v) for k, v in raw["files"].items()},
                channel=raw.get("channel"),
            )
        survey = None
        if payload.get("survey") is not None:
            survey = SurveyConfig(
                responses_file=_resolve(base, payload["survey"]["responses_file"])
            )
        return SessionConfig(
            profile=profile,
            output_dir=_resolve(base, payload["output_dir"]),
            motion_file=_resolve(base, payload.get("motion_file")),
            annotation_file=_resolve(base, payload.get("annotation_file")),
            coefficient_table_file=_resolve(base, prof.get("coefficient_table_file")),
            segment_aliases_file=_resolve(base, payload.get("segment_aliases_file")),
            exoskeleton=payload.get("exoskeleton", "none"),
            exoskeleton_params_file=_resolve(base, payload.get("exoskeleton_params_file")),
            solver_settings_file=_resolve(base, payload.get("solver_settings_file")),
            derivative_smoothing_hz=payload.get("derivative_smoothing_hz", 5.0),
            gravity=float(payload.get("gravity", GRAVITY_DEFAULT)),
            emg=emg,
            ecg=ecg,
            survey=survey,
            seed=int(payload.get("seed", 0)),
            config_path=path,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed session config: {exc}") from exc


def config_echo(config: SessionConfig) -> dict:
    """Resolved configuration as recorded in the manifest."""

    def s(p: Path | None) -> str | None:
        return None if p is None else str(p)

    return {
        "profile": {
            "height_m": config.profile.height_m,
            "mass_kg": config.profile.mass_kg,
            "coefficient_table": config.profile.coefficient_table_id,
        },
        "motion_file": s(config.motion_file),
        "annotation_file": s(config.annotation_file),
        "coefficient_table_file": s(config.coefficient_table_file),
        "segment_aliases_file": s(config.segment_aliases_file),
        "exoskeleton": config.exoskeleton,
        "exoskeleton_params_file": s(config.exoskeleton_params_file),
        "solver_settings_file": s(config.solver_settings_file),
        "derivative_smoothing_hz": config.derivative_smoothing_hz,
        "gravity": config.gravity,
        "emg": None
        if config.emg is None
        else {
            "baseline_file": s(config.emg.baseline_file),
            "trial_files": {k: s(v) for k, v in config.emg.trial_files.items()},
            "sample_rate": config.emg.sample_rate,
        },
        "ecg": None
        if config.ecg is None
        else {"files": {k: s(v) for k, v in config.ecg.files.items()}, "channel": config.ecg.channel},
        "survey": None if config.survey is None else {"responses_file": s(config.survey.responses_file)},
        "output_dir": s(config.output_dir),
        "seed": config.seed,
    }


class InputLedger:
    """Hashes every input file the run consumes, for the manifest."""

    def __init__(self) -> None:
        self.hashes: dict[str, str] = {}

    def record(self, path: Path | None) -> None:
        if path is None:
            return
        self.hashes[str(path)] = eio.sha256_file(path)


@dataclass
class ReportBundle:
    output_dir: Path
    files: dict[str, Path] = field(default_factory=dict)
    angle_summaries: list = field(default_factory=list)
    torque_summaries: list = field(default_factory=list)
    emg_changes: list = field(default_factory=list)
    heart_rate: list = field(default_factory=list)
    survey_constructs: list = field(default_factory=list)
    survey_borg: list = field(default_factory=list)
    boxplot_data: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)


def emit_boxplot_data(
    summaries: list[tuple[str, str, str, DistributionSummary]],
) -> list[dict]:
    """Plot-ready boxplot records (figure, label, channel, five-number
    summary), ordered exactly as supplied."""
    out = []
    for figure, label, channel, s in summaries:
        out.append(
            {
                "figure": figure,
                "label": label,
                "channel": channel,
                "n": s.n,
                "min": s.minimum,
                "q1": s.q1,
                "median": s.median,
                "q3": s.q3,
                "max": s.maximum,
            }
        )
    return out


def _stage(name: str):
    """Re-raise package errors with the pipeline stage named."""

    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, ExoloadError):
                raise type(exc)(f"stage {name}: {exc}") from exc
            return False

    return _Ctx()


def _summary_row(trial: str, label: str, channel: str, s: DistributionSummary) -> list:
    lo, hi = tukey_whiskers(s)
    return [trial, label, channel, s.n, s.mean, s.stdev, s.minimum, s.q1, s.median, s.q3, s.maximum, lo, hi]


def _whole_span_annotation(times: np.ndarray) -> TrialAnnotation:
    dt = float(np.median(np.diff(times))) if len(times) > 1 else 1.0
    return TrialAnnotation(
        "session", (AnnotationSegment("control", float(times[0]), float(times[-1]) + dt),)
    )


def _diff(x: np.ndarray, dt: float) -> np.ndarray:
    d = np.empty_like(x)
    if len(x) < 3:
        d[:] = 0.0 if len(x) < 2 else (x[1] - x[0]) / dt
        return d
    d[1:-1] = (x[2:] - x[:-2]) / (2.0 * dt)
    d[0] = (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * dt)
    d[-1] = (3.0 * x[-1] - 4.0 * x[-2] + x[-3]) / (2.0 * dt)
    return d


def build_session_model(config: SessionConfig, ledger: InputLedger | None = None) -> SkeletonModel:
    if config.coefficient_table_file is not None:
        if ledger is not None:
            ledger.record(config.coefficient_table_file)
        table = load_table_file(config.coefficient_table_file)
    else:
        table = get_table(config.profile.coefficient_table_id)
    return build_model(config.profile, table)


def session_solver_settings(config: SessionConfig, ledger: InputLedger | None = None) -> SolverSettings:
    if config.solver_settings_file is not None:
        if ledger is not None:
            ledger.record(config.solver_settings_file)
        return load_solver_settings(config.solver_settings_file)
    return SolverSettings()


def session_exoskeleton(config: SessionConfig, ledger: InputLedger | None = None) -> LaevoModel | None:
    if config.exoskeleton == "none":
        return None
    if config.exoskeleton_params_file is not None:
        if ledger is not None:
            ledger.record(config.exoskeleton_params_file)
        return load_exoskeleton_params(config.exoskeleton_params_file)
    return LaevoModel()


def _segment_aliases(config: SessionConfig, ledger: InputLedger | None) -> dict[str, str]:
    if config.segment_aliases_file is None:
        return {}
    if ledger is not None:
        ledger.record(config.segment_aliases_file)
    payload = eio.load_json_file(config.segment_aliases_file)
    if not isinstance(payload, dict):
        raise ValidationError(f"{config.segment_aliases_file}: alias table must be an object")
    return {str(k): str(v) for k, v in payload.items()}


@dataclass
class MotionResults:
    times: np.ndarray
    retarget: RetargetResult
    torque: TorqueSeries
    annotation: TrialAnnotation


def run_motion_analysis(
    config: SessionConfig, ledger: InputLedger | None = None
) -> tuple[SkeletonModel, MotionResults]:
    """Retarget, differentiate, run inverse dynamics, apply the exoskeleton
    model and decompose the lumbar torque."""
    with _stage("model"):
        model = build_session_model(config, ledger)
    with _stage("parse-motion"):
        if ledger is not None:
            ledger.record(config.motion_file)
        aliases = _segment_aliases(config, ledger)
        captured = eio.parse_motion_file(config.motion_file, aliases=aliases)
    with _stage("parse-annotation"):
        if config.annotation_file is not None:
            if ledger is not None:
                ledger.record(config.annotation_file)
            annotation = eio.parse_annotation_file(config.annotation_file)
        else:
            annotation = _whole_span_annotation(captured.times)
    with _stage("retarget"):
        settings = session_solver_settings(config, ledger)
        result = retarget_trajectory(model, captured, settings=settings)
    dt = 1.0 / captured.sample_rate
    with _stage("dynamics"):
        tau_net = net_lumbar_series(
            model,
            result.configurations,
            dt,
            gravity=config.gravity,
            smooth_cutoff_hz=config.derivative_smoothing_hz,
        )
    with _stage("back-flexion"):
        theta = np.array(
            [
                thorax_flexion_deg(KinematicState(model, q).segment_pose("thorax").rotation)
                for q in result.configurations
            ]
        )
        theta_dot = _diff(theta, dt)
    with _stage("exoskeleton"):
        exo = session_exoskeleton(config, ledger)
        if exo is None:
            tau_exo = np.zeros_like(tau_net)
        else:
            tau_exo = laevo_torque_series(exo, theta, theta_dot)
    with _stage("decompose"):
        torque = decompose_torque(result.times, tau_net, tau_exo, theta, theta_dot)
    return model, MotionResults(
        times=result.times, retarget=result, torque=torque, annotation=annotation
    )


def run_pipeline(config: SessionConfig) -> ReportBundle:
    """Execute every configured branch and write the report bundle."""
    out_dir = Path(config.output_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out_dir}: {exc}") from exc
    ledger = InputLedger()
    ledger.record(config.config_path)
    bundle = ReportBundle(output_dir=out_dir)
    boxplots: list[tuple[str, str, str, DistributionSummary]] = []

    if config.motion_file is not None:
        model, motion = run_motion_analysis(config, ledger)
        trial = motion.annotation.trial_id
        with _stage("write-joints"):
            path = out_dir / "joints.csv"
            eio.write_joint_trajectory(path, model, motion.times, motion.retarget.configurations)
            bundle.files["joints"] = path
        with _stage("write-torque-series"):
            path = out_dir / "torque_series.csv"
            ts = motion.torque
            eio.write_csv(
                path,
                ["time_s", "theta_deg", "theta_dot_deg_s", "tau_net_nm", "tau_exo_nm", "tau_human_nm"],
                zip(ts.times, ts.theta_deg, ts.theta_dot_deg_s, ts.tau_net, ts.tau_exo, ts.tau_human),
            )
            bundle.files["torque_series"] = path
        with _stage("angle-summaries"):
            rows = []
            fraction_rows = []
            for label, values in segment_series(
                motion.times, motion.torque.theta_deg, motion.annotation
            ):
                s = summarize(values)
                bundle.angle_summaries.append((trial, label, "back_flexion_deg", s))
                rows.append(_summary_row(trial, label, "back_flexion_deg", s))
                boxplots.append(("back_flexion", label, "back_flexion_deg", s))
                profile = posture_profile(values)
                fraction_rows.append(
                    [trial, label] + [profile[t] for t in POSTURE_THRESHOLDS_DEG]
                )
            path = out_dir / "angle_summaries.csv"
            eio.write_csv(path, SUMMARY_HEADER, rows)
            bundle.files["angle_summaries"] = path
            path = out_dir / "posture_fractions.csv"
            eio.write_csv(
                path,
                ["trial", "label"]
                + [f"frac_above_{int(t)}deg" for t in POSTURE_THRESHOLDS_DEG],
                fraction_rows,
            )
            bundle.files["posture_fractions"] = path
        with _stage("torque-summaries"):
            report = lumbar_effort_report(motion.torque, motion.annotation)
            rows = []
            for row in report.rows:
                bundle.torque_summaries.append((trial, row.label, row.channel, row.summary))
                rows.append(_summary_row(trial, row.label, row.channel, row.summary))
                boxplots.append(("lumbar_torque", row.label, row.channel, row.summary))
            path = out_dir / "torque_summaries.csv"
            eio.write_csv(path, SUMMARY_HEADER, rows)
            bundle.files["torque_summaries"] = path
            path = out_dir / "torque_reductions.csv"
            eio.write_csv(
                path,
                ["trial", "label", "median_reduction_pct"],
                [[trial, label, pct] for label, pct in report.median_reduction_pct.items()],
            )
            bundle.files["torque_reductions"] = path

    if config.emg is not None:
        with _stage("emg"):
            ledger.record(config.emg.baseline_file)
            if eio.sidecar_path(config.emg.baseline_file).exists():
                ledger.record(eio.sidecar_path(config.emg.baseline_file))
            baseline = eio.read_emg_file(config.emg.baseline_file, config.emg.sample_rate)
            base_env = {
                name: emg_envelope(samples, baseline.sample_rate)
                for name, samples in baseline.channels.items()
            }
            settle = settle_samples(baseline.sample_rate)
            rows = []
            for label in config.emg.trial_files:
                ledger.record(config.emg.trial_files[label])
                if eio.sidecar_path(config.emg.trial_files[label]).exists():
                    ledger.record(eio.sidecar_path(config.emg.trial_files[label]))
                record = eio.read_emg_file(config.emg.trial_files[label], config.emg.sample_rate)
                for name in sorted(set(base_env) | set(record.channels)):
                    if name not in record.channels or name not in base_env:
                        rows.append([label, name, "NA"])
                        continue
                    env = emg_envelope(record.channels[name], record.sample_rate)
                    pct = emg_change_pct(env[settle:], base_env[name][settle:])
                    rows.append([label, name, pct])
                    boxplots.append(("emg_envelope", label, name, summarize(env[settle:])))
            bundle.emg_changes = rows
            path = out_dir / "emg_changes.csv"
            eio.write_csv(path, ["label", "channel", "change_pct"], rows)
            bundle.files["emg_changes"] = path

    if config.ecg is not None:
        with _stage("ecg"):
            rows = []
            for label, file in config.ecg.files.items():
                ledger.record(file)
                if eio.sidecar_path(file).exists():
                    ledger.record(eio.sidecar_path(file))
                record = eio.read_ecg_file(file, config.ecg.channel)
                beats = detect_r_peaks(record.samples, record.sample_rate)
                duration = len(record.samples) / record.sample_rate
                annotation = TrialAnnotation(
                    label, (AnnotationSegment("control", 0.0, duration + 1e-9),)
                )
                for _, s in heart_rate_stats(beats, annotation):
                    bundle.heart_rate.append((label, s))
                    rows.append(_summary_row("session", label, "heart_rate_bpm", s))
                    boxplots.append(("heart_rate", label, "heart_rate_bpm", s))
            path = out_dir / "heart_rate.csv"
            eio.write_csv(path, SUMMARY_HEADER, rows)
            bundle.files["heart_rate"] = path

    if config.survey is not None:
        with _stage("survey"):
            ledger.record(config.survey.responses_file)
            responses = eio.read_responses_file(config.survey.responses_file)
            by_questionnaire: dict[str, list] = {}
            for response in responses:
                schema = load_schema(response.questionnaire_id)
                report = validate(schema, response)
                if not report.ok:
                    raise ValidationError(
                        f"response {response.respondent_id!r} questionnaire "
                        f"{response.questionnaire_id!r}: {'; '.join(report.violations)}"
                    )
                by_questionnaire.setdefault(response.questionnaire_id, []).append(response)
            construct_rows = []
            for qid in sorted(by_questionnaire):
                schema = load_schema(qid)
                if not schema.constructs:
                    continue
                groups: dict[str, list] = {}
                for response in by_questionnaire[qid]:
                    groups.setdefault(response.context.exoskeleton, []).append(response)
                for exo_type in sorted(groups):
                    for score in construct_scores(schema, groups[exo_type], skip_empty=True):
                        bundle.survey_constructs.append((qid, exo_type, score))
                        construct_rows.append(
                            [
                                qid,
                                exo_type,
                                score.construct,
                                score.n,
                                score.mean,
                                score.stdev,
                                format_mean_stdev(score.mean, score.stdev),
                            ]
                        )
            path = out_dir / "survey_constructs.csv"
            eio.write_csv(
                path,
                ["questionnaire", "exoskeleton", "construct", "n", "mean", "stdev", "display"],
                construct_rows,
            )
            bundle.files["survey_constructs"] = path

            borg_rows = []
            for qid in sorted(by_questionnaire):
                schema = load_schema(qid)
                if not any(i.kind == "borg_cr10" for i in schema.items):
                    continue
                answered = [
                    r
                    for r in by_questionnaire[qid]
                    if any(i.item_id in r.answers for i in schema.items if i.kind == "borg_cr10")
                ]
                if not answered:
                    continue
                for s in borg_summary(schema, answered):
                    bundle.survey_borg.append((qid, s))
                    borg_rows.append(
                        [
                            qid,
                            s.zone,
                            s.position,
                            s.n,
                            s.mean,
                            s.stdev,
                            format_mean_stdev(s.mean, s.stdev),
                        ]
                    )
            path = out_dir / "survey_borg.csv"
            eio.write_csv(
                path,
                ["questionnaire", "zone", "position", "n", "mean", "stdev", "display"],
                borg_rows,
            )
            bundle.files["survey_borg"] = path

    with _stage("report"):
        bundle.boxplot_data = emit_boxplot_data(boxplots)
        path = out_dir / "boxplot_data.json"
        eio.write_json(path, bundle.boxplot_data)
        bundle.files["boxplot_data"] = path

        bundle.manifest = {
            "package_version": PACKAGE_VERSION,
            "seed": config.seed,
            "config": config_echo(config),
            "inputs": dict(sorted(ledger.hashes.items())),
        }
        path = out_dir / "manifest.json"
        eio.write_json(path, bundle.manifest)
        bundle.files["manifest"] = path

    return bundle
