"""EMG envelope processing, EMG change tables, R-peak detection and heart-rate
statistics.

EMG pipeline: rectify, moving RMS over a 100 ms centered window, then a causal
4th-order Butterworth low-pass at 10 Hz (bilinear transform with cutoff
prewarping, as scipy's ``butter`` implements). RMS statistics downstream
exclude the first 0.5 s of settling.

The heart-rate path uses an integration-and-adaptive-threshold R-peak detector
(band-pass, derivative, squaring, moving integration, adaptive threshold with
a 250 ms refractory period). All thresholds derive from signal statistics, so
beat times are invariant to amplitude scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from .errors import NumericalError, ValidationError

MUSCLE_CODES = ("ESL", "ESI", "TA", "BF", "RA", "RF", "GM", "TAL")

EMG_RMS_WINDOW_S = 0.100
EMG_LOWPASS_HZ = 10.0
EMG_LOWPASS_ORDER = 4
EMG_SETTLE_S = 0.5

ECG_BAND_HZ = (5.0, 15.0)
ECG_INTEGRATION_S = 0.150
ECG_REFRACTORY_S = 0.250
HR_VALID_BPM = (20.0, 250.0)


def validate_channel_code(name: str) -> str:
    """Channel names are a muscle code with an optional _L/_R side suffix."""
    code = name.split("_")[0].upper()
    if code not in MUSCLE_CODES:
        raise ValidationError(f"unknown muscle code in channel {name!r}; known: {MUSCLE_CODES}")
    return code


@dataclass
class EmgRecord:
    sample_rate: float  # Hz
    channels: dict[str, np.ndarray]  # microvolts

    def __post_init__(self) -> None:
        if self.sample_rate <= 2.0 * EMG_LOWPASS_HZ:
            raise ValidationError("EMG sample rate must exceed twice the filter cutoff")
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise ValidationError("EMG channels must have equal length")
        for name in self.channels:
            validate_channel_code(name)


@dataclass
class EcgRecord:
    sample_rate: float  # Hz
    samples: np.ndarray  # millivolts

    def __post_init__(self) -> None:
        if self.sample_rate < 250.0:
            raise ValidationError("ECG sample rate must be at least 250 Hz")


@dataclass
class HeartRateSeries:
    """Instantaneous heart rate, one sample per RR interval, timestamped at the
    second beat. Out-of-range rates are rejected as artifacts."""

    times: np.ndarray  # s
    bpm: np.ndarray

    def __post_init__(self) -> None:
        if np.any((self.bpm <= HR_VALID_BPM[0]) | (self.bpm >= HR_VALID_BPM[1])):
            raise ValidationError("heart-rate series contains unrejected artifacts")


def moving_mean_centered(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving mean with partial windows at the edges."""
    n = len(x)
    csum = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(n)
    left = np.clip(idx - (window - 1) // 2, 0, n)
    right = np.clip(idx + window // 2 + 1, 0, n)
    return (csum[right] - csum[left]) / (right - left)


def emg_envelope(raw: np.ndarray, fs: float) -> np.ndarray:
    """Rectified, RMS-windowed, low-pass-filtered activity envelope.

    The output is floored at zero: the Butterworth stage can undershoot by a
    sliver on sharp onsets and an envelope is non-negative by definition.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.size == 0:
        raise ValidationError("empty EMG channel")
    window = int(round(EMG_RMS_WINDOW_S * fs))
    if window < 1 or window > raw.size:
        raise ValidationError(
            f"RMS window of {window} samples does not fit a signal of {raw.size} samples"
        )
    rms = np.sqrt(moving_mean_centered(raw * raw, window))
    num, den = butter(EMG_LOWPASS_ORDER, EMG_LOWPASS_HZ, fs=fs)
    return np.maximum(lfilter(num, den, rms), 0.0)


def signal_rms(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValidationError("empty signal")
    return float(np.sqrt(np.mean(x * x)))


def emg_change_pct(trial_envelope: np.ndarray, baseline_envelope: np.ndarray) -> float:
    """Relative RMS change of a trial envelope against a baseline envelope, in
    percent; negative values mean a reduction."""
    rms_base = signal_rms(baseline_envelope)
    if rms_base == 0.0:
        raise ValidationError("baseline envelope has zero RMS")
    rms_trial = signal_rms(trial_envelope)
    return 100.0 * (rms_trial - rms_base) / rms_base


def settle_samples(fs: float) -> int:
    return int(round(EMG_SETTLE_S * fs))


def detect_r_peaks(ecg: np.ndarray, fs: float) -> np.ndarray:
    """Beat times (s) via band-pass, derivative, squaring, moving integration
    and an adaptive threshold with a 250 ms refractory period."""
    ecg = np.asarray(ecg, dtype=float)
    if ecg.size / fs < 5.0:
        raise ValidationError("R-peak detection needs at least 5 s of signal")

    sos = butter(2, ECG_BAND_HZ, btype="bandpass", fs=fs, output="sos")
    band = sosfilt(sos, ecg - np.mean(ecg))
    deriv = np.gradient(band)
    squared = deriv * deriv
    window = max(1, int(round(ECG_INTEGRATION_S * fs)))
    integrated = moving_mean_centered(squared, window)

    # candidate peaks: strict rise, non-strict fall (deterministic tie-break)
    rising = integrated[1:-1] > integrated[:-2]
    falling = integrated[1:-1] >= integrated[2:]
    candidates = np.nonzero(rising & falling)[0] + 1
    if candidates.size == 0 or float(np.max(integrated)) <= 0.0:
        raise NumericalError("no peaks found in the ECG signal")

    # adaptive threshold seeded from the first two seconds (relative measures
    # only, so scaling the input leaves every decision unchanged)
    head = integrated[: max(window, int(round(2.0 * fs)))]
    spk = float(np.max(head)) * 0.5
    npk = float(np.mean(head)) * 0.5
    refractory = ECG_REFRACTORY_S * fs

    accepted: list[int] = []
    for c in candidates:
        level = float(integrated[c])
        threshold = npk + 0.25 * (spk - npk)
        if accepted and c - accepted[-1] < refractory:
            npk = 0.875 * npk + 0.125 * level
            continue
        if level > threshold:
            accepted.append(int(c))
            spk = 0.875 * spk + 0.125 * level
        else:
            npk = 0.875 * npk + 0.125 * level
    if not accepted:
        raise NumericalError("no peaks found above the adaptive threshold")

    # refine each beat to the dominant raw deflection near the integration
    # peak; searching the raw signal sidesteps the band-pass group delay
    beats = np.empty(len(accepted))
    magnitude = np.abs(ecg - np.mean(ecg))
    half = window
    for i, c in enumerate(accepted):
        lo = max(0, c - half)
        hi = min(len(magnitude), c + half + 1)
        beats[i] = (lo + int(np.argmax(magnitude[lo:hi]))) / fs
    return beats


def instantaneous_heart_rate(beat_times: np.ndarray) -> HeartRateSeries:
    """60/RR per consecutive beat pair, artifact-rejected to (20, 250) bpm."""
    beat_times = np.asarray(beat_times, dtype=float)
    if beat_times.size < 2:
        raise ValidationError("need at least two beats for a heart rate")
    rr = np.diff(beat_times)
    bpm = 60.0 / rr
    keep = (bpm > HR_VALID_BPM[0]) & (bpm < HR_VALID_BPM[1])
    return HeartRateSeries(times=beat_times[1:][keep], bpm=bpm[keep])


def heart_rate_stats(beat_times: np.ndarray, annotation) -> list[tuple[str, "object"]]:
    """Per-label distribution summaries of the instantaneous heart rate.
    An RR interval belongs to a label when both beats fall in [start, end)."""
    from .posture import summarize

    beat_times = np.asarray(beat_times, dtype=float)
    series = instantaneous_heart_rate(beat_times)
    out = []
    for seg in annotation.segments:
        in_window = (beat_times >= seg.start) & (beat_times < seg.end)
        window_beats = beat_times[in_window]
        if window_beats.size < 2:
            raise ValidationError(
                f"label {seg.label!r}: fewer than two beats in [{seg.start}, {seg.end})"
            )
        mask = (series.times >= seg.start) & (series.times < seg.end)
        # drop rates whose first beat precedes the window
        first_in = window_beats[0]
        mask &= series.times > first_in
        values = series.bpm[mask]
        if values.size == 0:
            raise ValidationError(f"label {seg.label!r}: no RR interval inside the window")
        out.append((seg.label, summarize(values)))
    return out
