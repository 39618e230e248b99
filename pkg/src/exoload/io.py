"""File formats: motion capture CSV, annotation JSON, EMG/ECG CSV, response
JSONL, joint-trajectory CSV, plus deterministic CSV/JSON writers and input
hashing for the run manifest.

Numeric CSV output uses the shortest round-trip float representation, UTF-8
and LF line endings, so byte-identical reruns are a meaningful contract.

Motion CSV layout: a ``time_s`` column followed by seven columns per segment
named ``<segment>_px, _py, _pz, _qw, _qx, _qy, _qz`` (world position in m,
unit quaternion scalar-first). An optional ``com`` pseudo-segment carries the
whole-body CoM track.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .posture import AnnotationSegment, TrialAnnotation
from .retarget import CapturedTrajectory, SegmentTrack
from .skeleton import JointConfiguration, SkeletonModel

QUAT_FILE_TOL = 1e-3
POSE_SUFFIXES = ("px", "py", "pz", "qw", "qx", "qy", "qz")


def open_input(path: str | Path, mode: str = "r"):
    """Open a user-supplied input, turning OS errors into validation errors."""
    try:
        if "b" in mode:
            return open(path, mode)
        return open(path, mode, encoding="utf-8", newline="")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc


def load_json_file(path: str | Path) -> object:
    """JSON input with structured errors for unreadable files and bad syntax."""
    with open_input(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from None


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open_input(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def format_value(value: object) -> str:
    # np.float64 subclasses float, so coerce before repr
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def write_json(path: str | Path, payload: object) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_csv_table(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open_input(path) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    return [h.strip() for h in header], rows


def _parse_float(text: str, path: str | Path, row: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"{path}: row {row}: column {column!r}: not a number: {text!r}") from None


def parse_motion_file(
    path: str | Path,
    sample_rate: float | None = None,
    aliases: Mapping[str, str] | None = None,
) -> CapturedTrajectory:
    """Read a captured trajectory. Non-unit quaternions within 1e-3 of unit
    norm are renormalized; larger deviations, malformed headers and
    non-monotone timestamps are rejected with the offending row named.

    ``aliases`` maps capture-file segment names onto canonical model names.
    ``sample_rate`` overrides the rate inferred from the median frame spacing.
    """
    header, rows = _read_csv_table(path)
    if not header or header[0] != "time_s":
        raise ValidationError(f"{path}: first column must be 'time_s', got {header[:1]}")
    groups: dict[str, dict[str, int]] = {}
    for idx, name in enumerate(header[1:], start=1):
        if "_" not in name:
            raise ValidationError(f"{path}: malformed pose column {name!r}")
        seg, suffix = name.rsplit("_", 1)
        if suffix not in POSE_SUFFIXES:
            raise ValidationError(f"{path}: malformed pose column {name!r}")
        groups.setdefault(seg, {})[suffix] = idx
    for seg, cols in groups.items():
        missing = [s for s in POSE_SUFFIXES if s not in cols]
        if missing:
            raise ValidationError(f"{path}: segment {seg!r} lacks columns {missing}")
    if not rows:
        raise ValidationError(f"{path}: no data rows")

    n = len(rows)
    times = np.empty(n)
    for k, row in enumerate(rows):
        if len(row) != len(header):
            raise ValidationError(f"{path}: row {k + 2}: expected {len(header)} cells, got {len(row)}")
        times[k] = _parse_float(row[0], path, k + 2, "time_s")
        if k > 0 and times[k] <= times[k - 1]:
            raise ValidationError(f"{path}: row {k + 2}: timestamps must strictly increase")

    aliases = dict(aliases or {})
    segments: dict[str, SegmentTrack] = {}
    for seg, cols in groups.items():
        pos = np.empty((n, 3))
        quat = np.empty((n, 4))
        for k, row in enumerate(rows):
            pos[k] = [
                _parse_float(row[cols[s]], path, k + 2, f"{seg}_{s}") for s in ("px", "py", "pz")
            ]
            quat[k] = [
                _parse_float(row[cols[s]], path, k + 2, f"{seg}_{s}")
                for s in ("qw", "qx", "qy", "qz")
            ]
            norm = float(np.linalg.norm(quat[k]))
            if abs(norm - 1.0) > QUAT_FILE_TOL:
                raise ValidationError(
                    f"{path}: row {k + 2}: segment {seg!r}: quaternion norm {norm:.6f} "
                    f"deviates from 1 by more than {QUAT_FILE_TOL}"
                )
            quat[k] /= norm
        segments[aliases.get(seg, seg)] = SegmentTrack(pos, quat)

    if sample_rate is None:
        if n < 2:
            raise ValidationError(f"{path}: cannot infer the sample rate from one frame")
        sample_rate = 1.0 / float(np.median(np.diff(times)))
    return CapturedTrajectory(sample_rate=sample_rate, times=times, segments=segments)


def write_motion_file(path: str | Path, trajectory: CapturedTrajectory) -> None:
    names = sorted(trajectory.segments)
    header = ["time_s"]
    for seg in names:
        header += [f"{seg}_{s}" for s in POSE_SUFFIXES]
    rows = []
    for k in range(trajectory.n_frames):
        row: list[object] = [trajectory.times[k]]
        for seg in names:
            track = trajectory.segments[seg]
            row += list(track.positions[k]) + list(track.quaternions[k])
        rows.append(row)
    write_csv(path, header, rows)


def parse_annotation_file(path: str | Path) -> TrialAnnotation:
    payload = load_json_file(path)
    try:
        segments = tuple(
            AnnotationSegment(label=s["label"], start=float(s["start"]), end=float(s["end"]))
            for s in payload["segments"]
        )
        return TrialAnnotation(trial_id=str(payload["trial_id"]), segments=segments)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed annotation: {exc}") from exc


def write_annotation_file(path: str | Path, annotation: TrialAnnotation) -> None:
    write_json(
        path,
        {
            "trial_id": annotation.trial_id,
            "segments": [
                {"label": s.label, "start": s.start, "end": s.end} for s in annotation.segments
            ],
        },
    )


def _uniform_rate(times: np.ndarray, path: str | Path) -> float:
    if len(times) < 2:
        raise ValidationError(f"{path}: need at least two samples")
    dt = np.diff(times)
    if np.any(dt <= 0):
        row = int(np.nonzero(dt <= 0)[0][0]) + 2
        raise ValidationError(f"{path}: row {row}: timestamps must strictly increase")
    nominal = float(np.median(dt))
    if np.max(np.abs(dt - nominal)) > 0.01 * nominal:
        raise ValidationError(f"{path}: sample spacing is not uniform")
    return 1.0 / nominal


def read_signal_csv(path: str | Path) -> tuple[float, dict[str, np.ndarray]]:
    """Generic biosignal CSV: ``time_s`` plus one column per channel."""
    header, rows = _read_csv_table(path)
    if not header or header[0] != "time_s":
        raise ValidationError(f"{path}: first column must be 'time_s'")
    if len(header) < 2:
        raise ValidationError(f"{path}: no signal channels")
    n = len(rows)
    data = np.empty((n, len(header)))
    for k, row in enumerate(rows):
        if len(row) != len(header):
            raise ValidationError(f"{path}: row {k + 2}: expected {len(header)} cells")
        for j, cell in enumerate(row):
            data[k, j] = _parse_float(cell, path, k + 2, header[j])
    rate = _uniform_rate(data[:, 0], path)
    channels = {header[j]: data[:, j].copy() for j in range(1, len(header))}
    return rate, channels


def sidecar_path(path: str | Path) -> Path:
    """Optional metadata sidecar next to a biosignal CSV: ``<name>.meta.json``
    carrying {"units": ..., "sample_rate": ...}."""
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def _read_sidecar(path: str | Path, expected_units: tuple[str, ...]) -> dict:
    sc = sidecar_path(path)
    if not sc.exists():
        return {}
    payload = load_json_file(sc)
    units = payload.get("units")
    if units is not None and units not in expected_units:
        raise ValidationError(f"{sc}: units {units!r} not among {expected_units}")
    return payload


def read_emg_file(path: str | Path, sample_rate: float | None = None):
    from .biosignals import EmgRecord

    sidecar = _read_sidecar(path, ("uV", "µV"))
    rate, channels = read_signal_csv(path)
    rate = sample_rate or sidecar.get("sample_rate") or rate
    return EmgRecord(sample_rate=rate, channels=channels)


def read_ecg_file(path: str | Path, channel: str | None = None, sample_rate: float | None = None):
    from .biosignals import EcgRecord

    sidecar = _read_sidecar(path, ("mV",))
    rate, channels = read_signal_csv(path)
    if channel is None:
        channel = next(iter(channels))
    if channel not in channels:
        raise ValidationError(f"{path}: no channel {channel!r}; available: {sorted(channels)}")
    rate = sample_rate or sidecar.get("sample_rate") or rate
    return EcgRecord(sample_rate=rate, samples=channels[channel])


def read_responses_file(path: str | Path) -> list:
    """Questionnaire responses, one JSON object per line."""
    from .surveys import parse_response

    out = []
    with open_input(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: line {lineno}: invalid JSON: {exc}") from None
            out.append(parse_response(payload))
    if not out:
        raise ValidationError(f"{path}: no responses")
    return out


def write_joint_trajectory(
    path: str | Path,
    model: SkeletonModel,
    times: np.ndarray,
    configurations: Sequence[JointConfiguration],
) -> None:
    header = (
        ["time_s", "base_px", "base_py", "base_pz", "base_qw", "base_qx", "base_qy", "base_qz"]
        + list(model.dof_names)
    )
    rows = []
    for t, q in zip(times, configurations):
        rows.append([t, *q.base_position, *q.base_orientation, *q.joint_angles])
    write_csv(path, header, rows)


def read_joint_trajectory(
    path: str | Path, model: SkeletonModel
) -> tuple[np.ndarray, list[JointConfiguration]]:
    header, rows = _read_csv_table(path)
    expected = (
        ["time_s", "base_px", "base_py", "base_pz", "base_qw", "base_qx", "base_qy", "base_qz"]
        + list(model.dof_names)
    )
    if header != expected:
        raise ValidationError(f"{path}: joint trajectory header does not match the model layout")
    times = np.empty(len(rows))
    configurations = []
    for k, row in enumerate(rows):
        values = [_parse_float(c, path, k + 2, header[j]) for j, c in enumerate(row)]
        times[k] = values[0]
        configurations.append(
            JointConfiguration(
                base_position=np.array(values[1:4]),
                base_orientation=np.array(values[4:8]),
                joint_angles=np.array(values[8:]),
            )
        )
    return times, configurations
