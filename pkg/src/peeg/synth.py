"""Deterministic 8-channel biosignal simulator.

A Scenario is a declarative timeline of events (alpha bursts, blinks, chews,
EMG bursts, ECG runs) plus per-channel noise/mains plans. ``render`` turns it
into microvolt samples and a machine-readable ground truth, so every detector
has an exact oracle. Rendering is bit-deterministic for a fixed (scenario,
seed) within this implementation.

Waveform shapes (defaults chosen for reproducible tests):
  alpha    - sinusoid with 250 ms raised-cosine on/off ramps
  blink    - raised-cosine pulse, 300 ms / 120 uV
  chew     - 25 Hz carrier, 6 Hz amplitude modulation, 500 ms / 80 uV burst
  emg      - 20-120 Hz band-limited noise under a fast-attack envelope
  ecg      - sum-of-Gaussians PQRST template at the requested BPM

Scenario files are JSON with "scenario_version": 1 (see docs/scenarios.md).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .ads1299 import N_CHANNELS, SUPPORTED_RATES

SCENARIO_VERSION = 1

ALPHA_RAMP_S = 0.25  # raised-cosine onset/offset of alpha intervals
CHEW_CARRIER_HZ = 25.0
CHEW_MOD_HZ = 6.0
EMG_BAND_HZ = (20.0, 120.0)
EMG_RAMP_S = 0.05

# 10-20 scalp sites plus the surface labels used for EMG/ECG/EOG leads.
TEN_TWENTY_LABELS = frozenset(
    {
        "Fp1", "Fpz", "Fp2", "F7", "F3", "Fz", "F4", "F8",
        "FC5", "FC1", "FCz", "FC2", "FC6", "A1", "T3", "T7",
        "C3", "Cz", "C4", "T4", "T8", "A2", "M1", "M2",
        "CP5", "CP1", "CPz", "CP2", "CP6", "T5", "P7", "P3",
        "Pz", "P4", "T6", "P8", "POz", "O1", "Oz", "O2",
    }
)
SURFACE_LABELS = frozenset(
    {"EMG1", "EMG2", "EMGL", "EMGR", "ECG", "EKG", "EOG1", "EOG2", "EOGL", "EOGR"}
)
VALID_LABELS = TEN_TWENTY_LABELS | SURFACE_LABELS


class ScenarioError(ValueError):
    """Invalid scenario definition."""


class UnsupportedRate(ScenarioError):
    pass


class EventKind(str, Enum):
    ALPHA = "alpha"
    BLINK = "blink"
    CHEW = "chew"
    EMG_BURST = "emg_burst"
    ECG_RUN = "ecg_run"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    start: float
    length: float
    amplitude: float
    freq_hz: float = 10.0  # alpha carrier
    bpm: float = 60.0  # ecg rate

    def __post_init__(self) -> None:
        if self.length <= 0:
            raise ScenarioError("event length must be > 0")
        if self.amplitude < 0:
            raise ScenarioError("event amplitude must be >= 0")
        if self.kind is EventKind.ECG_RUN and not 30 <= self.bpm <= 240:
            raise ScenarioError(f"ecg bpm {self.bpm} outside [30, 240]")

    @property
    def end(self) -> float:
        return self.start + self.length


@dataclass(frozen=True)
class ChannelPlan:
    label: str
    noise_uv_rms: float = 4.0
    mains_hz: int = 0
    mains_uv: float = 0.0
    event_gain: dict[EventKind, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.label not in VALID_LABELS:
            raise ScenarioError(f"unknown electrode label {self.label!r}")
        if self.noise_uv_rms < 0:
            raise ScenarioError("noise_uv_rms must be >= 0")
        if self.mains_hz not in (0, 50, 60):
            raise ScenarioError("mains_hz must be 0, 50 or 60")


@dataclass(frozen=True)
class Scenario:
    duration: float
    fs: int
    seed: int
    channels: tuple[ChannelPlan, ...]
    events: tuple[Event, ...]

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ScenarioError("duration must be > 0")
        if self.fs not in SUPPORTED_RATES:
            raise UnsupportedRate(f"fs {self.fs} not in {SUPPORTED_RATES}")
        if len(self.channels) != N_CHANNELS:
            raise ScenarioError(f"need exactly {N_CHANNELS} channel plans")
        for ev in self.events:
            if ev.start < 0 or ev.end > self.duration:
                raise ScenarioError(
                    f"event {ev.kind.value} at [{ev.start}, {ev.end}) outside "
                    f"[0, {self.duration})"
                )

    @property
    def n_samples(self) -> int:
        return round(self.duration * self.fs)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(ch.label for ch in self.channels)


@dataclass(frozen=True)
class GroundTruth:
    """Exact event list used by a render, in detector-friendly form."""

    events: tuple[Event, ...]
    alpha_intervals: tuple[tuple[float, float], ...]
    blink_times: tuple[float, ...]
    chew_times: tuple[float, ...]
    emg_onsets: tuple[float, ...]
    r_peaks: tuple[float, ...]


def ecg_r_peak_times(event: Event) -> tuple[float, ...]:
    """R peaks of an ECG run: first at start + RR/2, then every RR seconds."""
    rr = 60.0 / event.bpm
    peaks = []
    t = event.start + 0.5 * rr
    while t < event.end:
        peaks.append(t)
        t += rr
    return tuple(peaks)


# -- waveforms ----------------------------------------------------------------


def _raised_cosine_ramp(t_rel: np.ndarray, length: float, ramp: float) -> np.ndarray:
    """Unit envelope with cosine on/off ramps; ramps shrink for short events."""
    ramp = min(ramp, length / 2)
    env = np.ones_like(t_rel)
    if ramp > 0:
        rising = t_rel < ramp
        falling = t_rel > length - ramp
        env[rising] = 0.5 * (1 - np.cos(np.pi * t_rel[rising] / ramp))
        env[falling] = 0.5 * (1 - np.cos(np.pi * (length - t_rel[falling]) / ramp))
    return env


def _event_slice(event: Event, fs: int, n: int) -> tuple[slice, np.ndarray, np.ndarray]:
    i0 = int(np.ceil(event.start * fs))
    i1 = min(int(np.ceil(event.end * fs)), n)
    idx = np.arange(i0, i1)
    t = idx / fs
    return slice(i0, i1), t, t - event.start


def _render_event(event: Event, fs: int, n: int, rng: np.random.Generator) -> np.ndarray:
    wave = np.zeros(n)
    sl, t_abs, t_rel = _event_slice(event, fs, n)
    if t_abs.size == 0:
        return wave

    if event.kind is EventKind.ALPHA:
        env = _raised_cosine_ramp(t_rel, event.length, ALPHA_RAMP_S)
        wave[sl] = event.amplitude * env * np.sin(2 * np.pi * event.freq_hz * t_abs)

    elif event.kind is EventKind.BLINK:
        wave[sl] = event.amplitude * 0.5 * (1 - np.cos(2 * np.pi * t_rel / event.length))

    elif event.kind is EventKind.CHEW:
        env = _raised_cosine_ramp(t_rel, event.length, event.length / 4)
        mod = 0.5 * (1 - np.cos(2 * np.pi * CHEW_MOD_HZ * t_rel))
        wave[sl] = (
            event.amplitude * env * mod * np.sin(2 * np.pi * CHEW_CARRIER_HZ * t_rel)
        )

    elif event.kind is EventKind.EMG_BURST:
        low = EMG_BAND_HZ[0]
        high = min(EMG_BAND_HZ[1], 0.99 * fs / 2)
        sos = sps.butter(2, [low, high], btype="band", fs=fs, output="sos")
        noise = sps.sosfilt(sos, rng.standard_normal(t_rel.size))
        rms = np.sqrt(np.mean(noise**2))
        if rms > 0:
            noise *= event.amplitude / rms
        wave[sl] = noise * _raised_cosine_ramp(t_rel, event.length, EMG_RAMP_S)

    elif event.kind is EventKind.ECG_RUN:
        # PQRST as Gaussians: (relative amplitude, offset from R in s, width in s)
        template = (
            (0.15, -0.200, 0.035),
            (-0.15, -0.030, 0.012),
            (1.00, 0.000, 0.014),
            (-0.20, 0.030, 0.012),
            (0.30, 0.250, 0.055),
        )
        beat = np.zeros(t_rel.size)
        for r_time in ecg_r_peak_times(event):
            dt = t_abs - r_time
            for amp, center, width in template:
                beat += amp * np.exp(-0.5 * ((dt - center) / width) ** 2)
        wave[sl] = event.amplitude * beat

    return wave


def _pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """1/f noise via Paul Kellet's fixed-coefficient IIR pinking filter."""
    white = rng.standard_normal(n)
    poles = (
        (0.0555179, 0.99886),
        (0.0750759, 0.99332),
        (0.1538520, 0.96900),
        (0.3104856, 0.86650),
        (0.5329522, 0.55000),
        (-0.0168980, -0.76160),
    )
    pink = 0.5362 * white
    for b, a in poles:
        pink += sps.lfilter([b], [1.0, -a], white)
    pink += sps.lfilter([0.0, 0.115926], [1.0], white)
    return pink


def render(scenario: Scenario) -> tuple[np.ndarray, GroundTruth]:
    """Render a scenario to an (8, n) float64 microvolt array plus ground truth.

    Channel data = pink noise + mains + sum of per-kind-weighted event
    waveforms; event waveforms are rendered once and shared across channels,
    so composition is exactly linear.
    """
    n = scenario.n_samples
    t = np.arange(n) / scenario.fs

    # Independent child streams: one per channel, one per event. Spawning from
    # a single root keeps renders identical however many events share a kind.
    root = np.random.SeedSequence(scenario.seed)
    streams = root.spawn(N_CHANNELS + len(scenario.events))

    waves = [
        _render_event(ev, scenario.fs, n, np.random.default_rng(streams[N_CHANNELS + i]))
        for i, ev in enumerate(scenario.events)
    ]

    data = np.zeros((N_CHANNELS, n))
    for ci, plan in enumerate(scenario.channels):
        chan = np.zeros(n)
        if plan.noise_uv_rms > 0:
            noise = _pink_noise(n, np.random.default_rng(streams[ci]))
            rms = np.sqrt(np.mean(noise**2))
            if rms > 0:
                chan += noise * (plan.noise_uv_rms / rms)
        if plan.mains_uv > 0 and plan.mains_hz:
            chan += plan.mains_uv * np.sin(2 * np.pi * plan.mains_hz * t)
        for ev, wave in zip(scenario.events, waves):
            gain = plan.event_gain.get(ev.kind, 0.0)
            if gain:
                chan += gain * wave
        data[ci] = chan

    truth = GroundTruth(
        events=scenario.events,
        alpha_intervals=tuple(
            (ev.start, ev.end) for ev in scenario.events if ev.kind is EventKind.ALPHA
        ),
        blink_times=tuple(
            ev.start + ev.length / 2
            for ev in scenario.events
            if ev.kind is EventKind.BLINK
        ),
        chew_times=tuple(
            ev.start + ev.length / 2
            for ev in scenario.events
            if ev.kind is EventKind.CHEW
        ),
        emg_onsets=tuple(
            ev.start for ev in scenario.events if ev.kind is EventKind.EMG_BURST
        ),
        r_peaks=tuple(
            tp
            for ev in scenario.events
            if ev.kind is EventKind.ECG_RUN
            for tp in ecg_r_peak_times(ev)
        ),
    )
    return data, truth


# -- canned scenarios ----------------------------------------------------------

EEG_LABELS = ("Fz", "Cz", "Pz", "Oz", "Fp1", "Fp2", "C3", "C4")


def _eeg_channels(
    gains_fz: dict[EventKind, float],
    noise_uv: float,
    mains_hz: int,
    mains_uv: float,
    gain_others: float = 0.2,
) -> tuple[ChannelPlan, ...]:
    plans = []
    for label in EEG_LABELS:
        scale = 1.0 if label == "Fz" else gain_others
        plans.append(
            ChannelPlan(
                label=label,
                noise_uv_rms=noise_uv,
                mains_hz=mains_hz,
                mains_uv=mains_uv,
                event_gain={k: g * scale for k, g in gains_fz.items()},
            )
        )
    return tuple(plans)


def fig6_scenario(
    seed: int = 0,
    alpha_uv: float = 20.0,
    alpha_hz: float = 10.0,
    noise_uv: float = 4.0,
    mains_hz: int = 0,
    mains_uv: float = 0.0,
) -> Scenario:
    """Alpha-test protocol: 30 s alternating 5 s eyes-closed / 5 s eyes-open.

    Alpha bursts occupy [0,5), [10,15) and [20,25) on Fz.
    """
    events = tuple(
        Event(EventKind.ALPHA, start, 5.0, alpha_uv, freq_hz=alpha_hz)
        for start in (0.0, 10.0, 20.0)
    )
    return Scenario(
        duration=30.0,
        fs=250,
        seed=seed,
        channels=_eeg_channels({EventKind.ALPHA: 1.0}, noise_uv, mains_hz, mains_uv),
        events=events,
    )


def fig6_protocol() -> tuple[tuple[float, float, str], ...]:
    """(start, end, label) intervals matching fig6_scenario."""
    return tuple(
        (float(s), float(s + 5), "eyes_closed" if i % 2 == 0 else "eyes_open")
        for i, s in enumerate(range(0, 30, 5))
    )


def fig7_scenario(
    seed: int = 0,
    blink_uv: float = 120.0,
    blink_len: float = 0.3,
    chew_uv: float = 80.0,
    chew_len: float = 0.5,
    noise_uv: float = 4.0,
    mains_hz: int = 0,
    mains_uv: float = 0.0,
) -> Scenario:
    """Artifact protocol: chew groups of 4,3,2,1 then blink groups of 4,3,2.

    Events sit on the frontal channel; groups are separated by >= 2 s.
    """
    spacing = 1.2
    gap = 2.5
    events: list[Event] = []
    cursor = 1.0
    for kind, length, amp, groups in (
        (EventKind.CHEW, chew_len, chew_uv, (4, 3, 2, 1)),
        (EventKind.BLINK, blink_len, blink_uv, (4, 3, 2)),
    ):
        for count in groups:
            for k in range(count):
                events.append(Event(kind, cursor + k * spacing, length, amp))
            cursor += (count - 1) * spacing + length + gap
    return Scenario(
        duration=40.0,
        fs=250,
        seed=seed,
        channels=_eeg_channels(
            {EventKind.BLINK: 1.0, EventKind.CHEW: 1.0}, noise_uv, mains_hz, mains_uv
        ),
        events=tuple(events),
    )


def emg_demo_scenario(
    seed: int = 0,
    n_bursts: int = 5,
    burst_len: float = 1.5,
    rest_len: float = 2.5,
    amplitude_uv: float = 150.0,
    noise_uv: float = 5.0,
) -> Scenario:
    """Repeated fist-clench bursts on a surface EMG channel."""
    events = tuple(
        Event(EventKind.EMG_BURST, 2.0 + i * (burst_len + rest_len), burst_len, amplitude_uv)
        for i in range(n_bursts)
    )
    duration = float(np.ceil(events[-1].end + 2.0)) if events else 10.0
    channels = (
        ChannelPlan("EMG1", noise_uv, event_gain={EventKind.EMG_BURST: 1.0}),
    ) + tuple(ChannelPlan(label, noise_uv) for label in EEG_LABELS[1:])
    return Scenario(duration=duration, fs=250, seed=seed, channels=channels, events=events)


def ecg_demo_scenario(
    seed: int = 0,
    bpm: float = 60.0,
    duration: float = 30.0,
    amplitude_uv: float = 1000.0,
    noise_uv: float = 5.0,
) -> Scenario:
    """A single continuous ECG run on a chest-lead channel."""
    events = (Event(EventKind.ECG_RUN, 0.0, duration, amplitude_uv, bpm=bpm),)
    channels = (
        ChannelPlan("ECG", noise_uv, event_gain={EventKind.ECG_RUN: 1.0}),
    ) + tuple(ChannelPlan(label, noise_uv) for label in EEG_LABELS[1:])
    return Scenario(duration=duration, fs=250, seed=seed, channels=channels, events=events)


NAMED_SCENARIOS = {
    "fig6": fig6_scenario,
    "fig7": fig7_scenario,
    "emg": emg_demo_scenario,
    "ecg": ecg_demo_scenario,
}


# -- scenario files ------------------------------------------------------------


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "scenario_version": SCENARIO_VERSION,
        "duration": scenario.duration,
        "fs": scenario.fs,
        "seed": scenario.seed,
        "channels": [
            {
                "label": ch.label,
                "noise_uv_rms": ch.noise_uv_rms,
                "mains_hz": ch.mains_hz,
                "mains_uv": ch.mains_uv,
                "event_gain": {k.value: g for k, g in ch.event_gain.items()},
            }
            for ch in scenario.channels
        ],
        "events": [
            {
                "kind": ev.kind.value,
                "start": ev.start,
                "length": ev.length,
                "amplitude": ev.amplitude,
                **({"freq_hz": ev.freq_hz} if ev.kind is EventKind.ALPHA else {}),
                **({"bpm": ev.bpm} if ev.kind is EventKind.ECG_RUN else {}),
            }
            for ev in scenario.events
        ],
    }


def scenario_from_dict(doc: dict) -> Scenario:
    version = doc.get("scenario_version")
    if version != SCENARIO_VERSION:
        raise ScenarioError(f"unsupported scenario_version {version!r}")
    channels = tuple(
        ChannelPlan(
            label=ch["label"],
            noise_uv_rms=float(ch.get("noise_uv_rms", 0.0)),
            mains_hz=int(ch.get("mains_hz", 0)),
            mains_uv=float(ch.get("mains_uv", 0.0)),
            event_gain={
                EventKind(k): float(g) for k, g in ch.get("event_gain", {}).items()
            },
        )
        for ch in doc["channels"]
    )
    events = tuple(
        Event(
            kind=EventKind(ev["kind"]),
            start=float(ev["start"]),
            length=float(ev["length"]),
            amplitude=float(ev["amplitude"]),
            freq_hz=float(ev.get("freq_hz", 10.0)),
            bpm=float(ev.get("bpm", 60.0)),
        )
        for ev in doc["events"]
    )
    return Scenario(
        duration=float(doc["duration"]),
        fs=int(doc["fs"]),
        seed=int(doc["seed"]),
        channels=channels,
        events=events,
    )


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))


def with_seed(scenario: Scenario, seed: int) -> Scenario:
    return replace(scenario, seed=seed)
