"""Offline analyses for recorded channels: filtering, spectra, and the four
validation detectors (alpha protocol, blinks, chews, EMG onsets, R peaks).

All functions are pure and single-channel. Thresholds are robust
(median/MAD) so every detector is covariant under amplitude scaling; the
tunable constants live in DetectorConfig.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import signal as sps


class DspError(Exception):
    pass


class NyquistViolation(DspError):
    pass


class UnstableDesign(DspError):
    pass


class TooShort(DspError):
    pass


class BadBand(DspError):
    pass


# -- filters -------------------------------------------------------------------


class FilterKind(Enum):
    BANDPASS = "bandpass"
    NOTCH = "notch"
    HIGHPASS = "highpass"
    LOWPASS = "lowpass"


@dataclass(frozen=True)
class FilterSpec:
    """IIR design request. Bandpass/notch use [low_hz, high_hz]; lowpass uses
    high_hz and highpass uses low_hz as the cutoff. order is the overall
    filter order (even) for Butterworth kinds; a notch is always a biquad."""

    kind: FilterKind
    low_hz: float
    high_hz: float
    order: int
    fs: float

    def __post_init__(self) -> None:
        if self.fs <= 0:
            raise NyquistViolation("fs must be positive")
        nyq = self.fs / 2
        if self.kind in (FilterKind.BANDPASS, FilterKind.NOTCH):
            if not 0 < self.low_hz < self.high_hz:
                raise BadBand(f"need 0 < low ({self.low_hz}) < high ({self.high_hz})")
            if self.high_hz >= nyq:
                raise NyquistViolation(f"high edge {self.high_hz} >= fs/2 ({nyq})")
        elif self.kind is FilterKind.LOWPASS:
            if not 0 < self.high_hz < nyq:
                raise NyquistViolation(f"cutoff {self.high_hz} outside (0, fs/2)")
        else:
            if not 0 < self.low_hz < nyq:
                raise NyquistViolation(f"cutoff {self.low_hz} outside (0, fs/2)")
        if self.kind is not FilterKind.NOTCH and (self.order < 2 or self.order % 2):
            raise DspError(f"order must be even and >= 2, got {self.order}")


@dataclass(frozen=True)
class FilterCoefficients:
    """Cascade of second-order sections plus the spec that produced it."""

    sos: np.ndarray
    spec: FilterSpec

    def max_pole_magnitude(self) -> float:
        _, poles, _ = sps.sos2zpk(self.sos)
        return float(np.max(np.abs(poles))) if poles.size else 0.0


def design_filter(spec: FilterSpec) -> FilterCoefficients:
    """Butterworth (or notch biquad) design as an SOS cascade.

    Every design is checked for stability: all poles strictly inside the unit
    circle with margin 1e-6.
    """
    if spec.kind is FilterKind.BANDPASS:
        sos = sps.butter(
            spec.order // 2, [spec.low_hz, spec.high_hz], btype="band", fs=spec.fs,
            output="sos",
        )
    elif spec.kind is FilterKind.LOWPASS:
        sos = sps.butter(spec.order, spec.high_hz, btype="low", fs=spec.fs, output="sos")
    elif spec.kind is FilterKind.HIGHPASS:
        sos = sps.butter(spec.order, spec.low_hz, btype="high", fs=spec.fs, output="sos")
    else:
        center = (spec.low_hz + spec.high_hz) / 2
        bw = spec.high_hz - spec.low_hz
        b, a = sps.iirnotch(center, center / bw, fs=spec.fs)
        sos = sps.tf2sos(b, a)
    coeffs = FilterCoefficients(np.asarray(sos), spec)
    if coeffs.max_pole_magnitude() >= 1 - 1e-6:
        raise UnstableDesign(
            f"max pole magnitude {coeffs.max_pole_magnitude():.8f} too close to 1"
        )
    return coeffs


def apply_filter(coeffs: FilterCoefficients, x: np.ndarray) -> np.ndarray:
    """Causal single pass."""
    return sps.sosfilt(coeffs.sos, x)


def apply_filter_zero_phase(coeffs: FilterCoefficients, x: np.ndarray) -> np.ndarray:
    """Forward-backward pass for offline analysis (no group delay)."""
    return sps.sosfiltfilt(coeffs.sos, x)


def filter_response_db(coeffs: FilterCoefficients, freqs_hz: np.ndarray) -> np.ndarray:
    """Single-pass magnitude response in dB on an arbitrary frequency grid."""
    _, h = sps.sosfreqz(coeffs.sos, worN=freqs_hz, fs=coeffs.spec.fs)
    return 20 * np.log10(np.maximum(np.abs(h), 1e-300))


def _bandpass(x: np.ndarray, low: float, high: float, fs: float, order: int = 4) -> np.ndarray:
    high_clamped = min(high, 0.99 * fs / 2)
    if high_clamped < high:
        warnings.warn(
            f"band edge {high} Hz clamped to {high_clamped:.2f} Hz at fs={fs}",
            stacklevel=3,
        )
    spec = FilterSpec(FilterKind.BANDPASS, low, high_clamped, order, fs)
    return apply_filter_zero_phase(design_filter(spec), x)


def _lowpass(x: np.ndarray, cutoff: float, fs: float, order: int = 4) -> np.ndarray:
    spec = FilterSpec(FilterKind.LOWPASS, 0.0, cutoff, order, fs)
    return apply_filter_zero_phase(design_filter(spec), x)


# -- spectra -------------------------------------------------------------------


@dataclass(frozen=True)
class Spectrum:
    freqs: np.ndarray  # Hz, 0..fs/2
    psd: np.ndarray  # uV^2/Hz, one-sided density
    fs: float
    window_len: int
    overlap: float


def welch_psd(x: np.ndarray, fs: float, window_len: int = 256, overlap: float = 0.5) -> Spectrum:
    """Hann-windowed averaged periodogram, one-sided density normalization
    (integral over frequency approximates the signal variance)."""
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= overlap < 1:
        raise BadBand(f"overlap {overlap} outside [0, 1)")
    if x.size < window_len:
        raise TooShort(f"{x.size} samples < window_len {window_len}")
    freqs, psd = sps.welch(
        x,
        fs=fs,
        window="hann",
        nperseg=window_len,
        noverlap=int(round(overlap * window_len)),
        detrend=False,
        scaling="density",
    )
    return Spectrum(freqs, psd, fs, window_len, overlap)


def bandpower(spectrum: Spectrum, low_hz: float, high_hz: float) -> float:
    """Trapezoidal integral of the density over [low_hz, high_hz], with the
    band edges interpolated onto the frequency grid."""
    if not 0 <= low_hz < high_hz <= spectrum.fs / 2:
        raise BadBand(f"band [{low_hz}, {high_hz}] invalid for fs {spectrum.fs}")
    f, p = spectrum.freqs, spectrum.psd
    inside = (f > low_hz) & (f < high_hz)
    grid = np.concatenate(([low_hz], f[inside], [high_hz]))
    dens = np.concatenate(([np.interp(low_hz, f, p)], p[inside], [np.interp(high_hz, f, p)]))
    return float(np.trapezoid(dens, grid))


# -- detector configuration ------------------------------------------------------


@dataclass(frozen=True)
class DetectorConfig:
    """Stated defaults for every detector constant; override per experiment."""

    alpha_band: tuple[float, float] = (8.0, 12.0)
    welch_window: int = 256
    welch_overlap: float = 0.5

    blink_lowpass_hz: float = 5.0
    blink_k: float = 6.0
    blink_refractory_s: float = 0.25

    chew_band: tuple[float, float] = (4.0, 40.0)
    chew_k: float = 5.0
    chew_hop_s: float = 0.1
    chew_rms_window_s: float = 0.2
    chew_min_duration_s: float = 0.2
    # reject bursts whose sub-band (below chew_band[0]) energy dominates:
    # big blinks leak enough past the band edge to fool a pure MAD gate
    chew_low_band_veto: bool = True

    emg_band: tuple[float, float] = (20.0, 120.0)
    emg_rms_window_s: float = 0.05
    emg_onset_factor: float = 3.0
    emg_min_duration_s: float = 0.1
    emg_release_factor: float = 2.0

    ecg_band: tuple[float, float] = (5.0, 15.0)
    ecg_integration_s: float = 0.15
    ecg_refractory_s: float = 0.2


DEFAULT_CONFIG = DetectorConfig()


class EventClass(Enum):
    BLINK = "blink"
    CHEW = "chew"
    EMG_ONSET = "emg_onset"
    R_PEAK = "r_peak"


@dataclass(frozen=True)
class EventList:
    kind: EventClass
    times: tuple[float, ...]
    scores: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise DspError("event times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)


def _mad(x: np.ndarray) -> float:
    return float(np.median(np.abs(x - np.median(x))))


def _regions_above(mask: np.ndarray) -> list[tuple[int, int]]:
    """[start, end) index pairs of contiguous True runs."""
    if not mask.any():
        return []
    edges = np.flatnonzero(np.diff(mask.astype(np.int8)))
    starts = list(edges[mask[edges + 1]] + 1)
    ends = list(edges[~mask[edges + 1]] + 1)
    if mask[0]:
        starts.insert(0, 0)
    if mask[-1]:
        ends.append(mask.size)
    return list(zip(starts, ends))


def _require_length(x: np.ndarray, fs: float, min_seconds: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DspError("expected a single-channel 1-D series")
    if x.size < min_seconds * fs:
        raise TooShort(f"need >= {min_seconds} s of data at fs {fs}")
    return x


# -- alpha protocol ---------------------------------------------------------------


@dataclass(frozen=True)
class SegmentScore:
    start: float
    end: float
    mean_alpha_power: float  # uV^2 in the alpha band
    label: str  # predicted: "eyes_closed" | "eyes_open"


@dataclass(frozen=True)
class AlphaReport:
    segments: tuple[SegmentScore, ...]
    ratio: float  # protocol-closed over protocol-open mean alpha power
    sequence_match: float  # fraction of segments predicted correctly

    def to_dict(self) -> dict:
        return {
            "segments": [
                {
                    "start": s.start,
                    "end": s.end,
                    "mean_alpha_power_uv2": s.mean_alpha_power,
                    "label": s.label,
                }
                for s in self.segments
            ],
            "ratio": self.ratio,
            "sequence_match": self.sequence_match,
        }


def score_alpha_protocol(
    x: np.ndarray,
    fs: float,
    protocol: list[tuple[float, float, str]] | tuple[tuple[float, float, str], ...],
    config: DetectorConfig = DEFAULT_CONFIG,
) -> AlphaReport:
    """Score an eyes-closed/eyes-open protocol on one channel.

    Each protocol interval gets an alpha-band power from a Welch spectrum of
    its samples; a segment is called eyes_closed when its power exceeds the
    geometric mean of all segment powers. sequence_match is the fraction of
    intervals whose call matches the protocol label; ratio compares mean
    alpha power over protocol-closed vs protocol-open intervals.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(protocol) == 0:
        raise TooShort("empty protocol")
    duration = x.size / fs
    prev_end = None
    for start, end, label in protocol:
        if label not in ("eyes_closed", "eyes_open"):
            raise DspError(f"unknown protocol label {label!r}")
        if start >= end or start < 0 or end > duration + 1e-9:
            raise DspError(f"interval [{start}, {end}) outside recording")
        if prev_end is not None and start < prev_end - 1e-9:
            raise DspError("protocol intervals overlap")
        prev_end = end

    powers = []
    for start, end, _ in protocol:
        seg = x[int(round(start * fs)) : int(round(end * fs))]
        window = min(config.welch_window, 1 << int(np.log2(max(seg.size, 2))))
        if window < 32:
            raise TooShort(f"segment [{start}, {end}) too short to score")
        spectrum = welch_psd(seg, fs, window_len=window, overlap=config.welch_overlap)
        powers.append(bandpower(spectrum, *config.alpha_band))

    powers_arr = np.asarray(powers)
    threshold = float(np.exp(np.mean(np.log(np.maximum(powers_arr, 1e-30)))))
    segments = tuple(
        SegmentScore(
            start=start,
            end=end,
            mean_alpha_power=float(p),
            label="eyes_closed" if p > threshold else "eyes_open",
        )
        for (start, end, _), p in zip(protocol, powers_arr)
    )
    matches = [
        seg.label == label for seg, (_, _, label) in zip(segments, protocol)
    ]
    closed = [p for p, (_, _, label) in zip(powers, protocol) if label == "eyes_closed"]
    opened = [p for p, (_, _, label) in zip(powers, protocol) if label == "eyes_open"]
    if closed and opened and np.mean(opened) > 0:
        ratio = float(np.mean(closed) / np.mean(opened))
    else:
        ratio = float("inf") if closed else 0.0
    return AlphaReport(segments, ratio, float(np.mean(matches)))


# -- artifact detectors ------------------------------------------------------------


def detect_blinks(
    x: np.ndarray, fs: float, config: DetectorConfig = DEFAULT_CONFIG
) -> EventList:
    """EOG blink pulses: low-pass, then positive excursions above k*MAD with a
    refractory gap. Times are pulse apexes."""
    x = _require_length(x, fs, 1.0)
    y = _lowpass(x, config.blink_lowpass_hz, fs)
    dev = y - np.median(y)
    # relative floor keeps zero-noise renders from tripping on filter ripple
    thr = max(config.blink_k * _mad(dev), 1e-6 * float(np.max(np.abs(dev), initial=0.0)))
    if thr <= 0:
        return EventList(EventClass.BLINK, ())
    refractory = int(round(config.blink_refractory_s * fs))
    times, scores = [], []
    last_idx = None
    for i0, i1 in _regions_above(dev > thr):
        apex = i0 + int(np.argmax(dev[i0:i1]))
        if last_idx is not None and apex - last_idx < refractory:
            continue
        times.append(apex / fs)
        scores.append(float(dev[apex] / thr))
        last_idx = apex
    return EventList(EventClass.BLINK, tuple(times), tuple(scores))


def _short_time_rms(x: np.ndarray, window: int, hop: int) -> tuple[np.ndarray, np.ndarray]:
    """RMS over sliding windows; returns (center_indices, rms)."""
    if x.size < window:
        return np.array([], dtype=int), np.array([])
    starts = np.arange(0, x.size - window + 1, hop)
    sq = np.concatenate(([0.0], np.cumsum(x.astype(np.float64) ** 2)))
    rms = np.sqrt((sq[starts + window] - sq[starts]) / window)
    return starts + window // 2, rms


def detect_chews(
    x: np.ndarray, fs: float, config: DetectorConfig = DEFAULT_CONFIG
) -> EventList:
    """Chewing bursts: band-passed short-time RMS envelope above k*MAD for a
    minimum duration, one event per burst at the envelope peak."""
    x = _require_length(x, fs, 1.0)
    band = _bandpass(x, config.chew_band[0], config.chew_band[1], fs)
    hop = max(1, int(round(config.chew_hop_s * fs)))
    window = max(hop, int(round(config.chew_rms_window_s * fs)))
    centers, env = _short_time_rms(band, window, hop)
    if env.size == 0:
        return EventList(EventClass.CHEW, ())
    baseline = np.median(env)
    thr = baseline + max(
        config.chew_k * _mad(env), 1e-6 * float(np.max(env, initial=0.0))
    )
    if thr <= 0:
        return EventList(EventClass.CHEW, ())
    min_hops = max(1, int(round(config.chew_min_duration_s / config.chew_hop_s)))

    low = None
    if config.chew_low_band_veto:
        low = _lowpass(x, config.chew_band[0], fs)

    times, scores = [], []
    for h0, h1 in _regions_above(env > thr):
        if h1 - h0 < min_hops:
            continue
        i0 = max(0, centers[h0] - window // 2)
        i1 = min(x.size, centers[h1 - 1] + window // 2)
        if low is not None:
            in_band_rms = float(np.sqrt(np.mean(band[i0:i1] ** 2)))
            low_rms = float(np.sqrt(np.mean((low[i0:i1] - np.median(low)) ** 2)))
            if low_rms > in_band_rms:
                continue  # dominated by sub-band energy: a blink, not a chew
        peak = h0 + int(np.argmax(env[h0:h1]))
        times.append(centers[peak] / fs)
        scores.append(float((env[peak] - baseline) / max(thr - baseline, 1e-30)))
    return EventList(EventClass.CHEW, tuple(times), tuple(scores))


def emg_envelope_onsets(
    x: np.ndarray, fs: float, config: DetectorConfig = DEFAULT_CONFIG
) -> EventList:
    """Muscle-activity onsets: band-passed moving-RMS envelope crossing a
    multiple of the resting baseline and holding for a minimum duration.
    Hysteresis keeps a sustained contraction to a single onset."""
    x = _require_length(x, fs, 1.0)
    band = _bandpass(x, config.emg_band[0], config.emg_band[1], fs)
    window = max(1, int(round(config.emg_rms_window_s * fs)))
    sq = np.concatenate(([0.0], np.cumsum(band**2)))
    n = band.size - window + 1
    env = np.sqrt((sq[window:] - sq[:-window]) / window)
    offsets = np.arange(n) + window // 2

    baseline = float(np.percentile(env, 5))
    floor = 1e-6 * float(np.max(env, initial=0.0))
    baseline = max(baseline, floor)
    if baseline <= 0:
        return EventList(EventClass.EMG_ONSET, ())
    onset_thr = config.emg_onset_factor * baseline
    release_thr = config.emg_release_factor * baseline
    min_hold = int(round(config.emg_min_duration_s * fs))

    times, scores = [], []
    active = False
    i = 0
    while i < env.size:
        if not active and env[i] > onset_thr:
            hold_end = min(i + min_hold, env.size)
            if np.all(env[i:hold_end] > onset_thr) and hold_end - i >= min(min_hold, env.size - i):
                times.append(offsets[i] / fs)
                scores.append(float(env[i] / baseline))
                active = True
            else:
                i += 1
                continue
        elif active and env[i] < release_thr:
            active = False
        i += 1
    return EventList(EventClass.EMG_ONSET, tuple(times), tuple(scores))


def detect_r_peaks(
    x: np.ndarray, fs: float, config: DetectorConfig = DEFAULT_CONFIG
) -> tuple[EventList, float | None]:
    """QRS detection: band-pass, derivative, square, moving integration, then
    an adaptive signal/noise threshold with a refractory period. Returns the
    R-peak list plus mean heart rate (60 / median RR), or None when fewer
    than two beats are found."""
    x = _require_length(x, fs, 5.0)
    band = _bandpass(x, config.ecg_band[0], config.ecg_band[1], fs)
    deriv = np.gradient(band)
    squared = deriv**2
    win = max(1, int(round(config.ecg_integration_s * fs)))
    integrated = np.convolve(squared, np.ones(win) / win, mode="same")

    refractory = int(round(config.ecg_refractory_s * fs))
    peaks, _ = sps.find_peaks(integrated, distance=max(refractory, 1))
    if peaks.size == 0:
        return EventList(EventClass.R_PEAK, ()), None

    lead_in = integrated[: min(int(2 * fs), integrated.size)]
    spki = 0.25 * float(np.max(lead_in))
    npki = 0.5 * float(np.mean(lead_in))
    if spki <= 0:
        return EventList(EventClass.R_PEAK, ()), None

    qrs_idx, scores = [], []
    for p in peaks:
        threshold = npki + 0.25 * (spki - npki)
        if integrated[p] > threshold:
            if qrs_idx and p - qrs_idx[-1] < refractory:
                continue
            qrs_idx.append(int(p))
            scores.append(float(integrated[p] / max(threshold, 1e-30)))
            spki = 0.125 * integrated[p] + 0.875 * spki
        else:
            npki = 0.125 * integrated[p] + 0.875 * npki

    # refine each fiducial to the local band-passed maximum (R apex)
    search = int(round(0.1 * fs))
    refined = []
    for p in qrs_idx:
        i0, i1 = max(0, p - search), min(band.size, p + search + 1)
        refined.append(i0 + int(np.argmax(band[i0:i1])))
    refined_arr = np.asarray(sorted(set(refined)))
    times = tuple(refined_arr / fs)

    mean_hr = None
    if len(times) >= 2:
        rr = np.diff(times)
        mean_hr = float(60.0 / np.median(rr))
    return EventList(EventClass.R_PEAK, times, tuple(scores[: len(times)])), mean_hr
