import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peeg import dsp, synth
from peeg.dsp import FilterKind, FilterSpec
from peeg.synth import ChannelPlan, Event, EventKind, Scenario


def noise_scenario(seed, duration=40.0, noise_uv=4.0):
    plans = tuple(ChannelPlan(label, noise_uv) for label in synth.EEG_LABELS)
    return Scenario(duration, 250, seed, plans, ())


def render_fz(scenario):
    data, truth = synth.render(scenario)
    return data[0], truth


class TestFilterDesign:
    def test_bandpass_oracle(self):
        coeffs = dsp.design_filter(FilterSpec(FilterKind.BANDPASS, 1, 40, 4, 250))
        db = dsp.filter_response_db(coeffs, np.array([0.1, 20.0, 100.0]))
        assert abs(db[1]) <= 1.0  # ~unity at 20 Hz
        assert db[0] <= -20.0 and db[2] <= -20.0

    def test_notch_oracle(self):
        coeffs = dsp.design_filter(FilterSpec(FilterKind.NOTCH, 49, 51, 2, 250))
        db = dsp.filter_response_db(coeffs, np.array([45.0, 50.0]))
        assert db[1] <= -30.0
        assert db[0] >= -3.0

    def test_nyquist_violation(self):
        with pytest.raises(dsp.NyquistViolation):
            FilterSpec(FilterKind.BANDPASS, 1, 125, 4, 250)
        with pytest.raises(dsp.NyquistViolation):
            FilterSpec(FilterKind.LOWPASS, 0, 200, 4, 250)

    def test_order_must_be_even(self):
        with pytest.raises(dsp.DspError):
            FilterSpec(FilterKind.BANDPASS, 1, 40, 3, 250)
        with pytest.raises(dsp.DspError):
            FilterSpec(FilterKind.LOWPASS, 0, 10, 0, 250)

    @pytest.mark.parametrize(
        "spec",
        [
            FilterSpec(FilterKind.BANDPASS, 1, 40, 4, 250),
            FilterSpec(FilterKind.BANDPASS, 5, 15, 4, 250),
            FilterSpec(FilterKind.BANDPASS, 4, 40, 4, 250),
            FilterSpec(FilterKind.LOWPASS, 0, 5, 4, 250),
            FilterSpec(FilterKind.BANDPASS, 20, 120, 4, 500),
            FilterSpec(FilterKind.NOTCH, 49, 51, 2, 250),
        ],
    )
    def test_stability_margin(self, spec):
        assert dsp.design_filter(spec).max_pole_magnitude() < 1 - 1e-6

    def test_zero_phase_no_group_delay(self):
        fs = 250
        t = np.arange(5000) / fs
        sine = np.sin(2 * np.pi * 10 * t)
        coeffs = dsp.design_filter(FilterSpec(FilterKind.BANDPASS, 5, 15, 4, fs))
        filtered = dsp.apply_filter_zero_phase(coeffs, sine)
        core = slice(500, -500)
        xc = np.correlate(filtered[core], sine[core], "full")
        lag = int(np.argmax(xc)) - (len(xc) // 2)
        assert lag == 0

    def test_causal_filter_runs(self):
        coeffs = dsp.design_filter(FilterSpec(FilterKind.LOWPASS, 0, 5, 4, 250))
        out = dsp.apply_filter(coeffs, np.ones(100))
        assert out.shape == (100,)


class TestWelch:
    def test_sine_peak_location(self):
        t = np.arange(2048) / 250
        spectrum = dsp.welch_psd(20 * np.sin(2 * np.pi * 10 * t), 250, 256, 0.5)
        peak = spectrum.freqs[np.argmax(spectrum.psd)]
        assert abs(peak - 10.0) <= 0.5

    def test_sine_bandpower_parseval(self):
        t = np.arange(2048) / 250
        spectrum = dsp.welch_psd(20 * np.sin(2 * np.pi * 10 * t), 250, 256, 0.5)
        assert dsp.bandpower(spectrum, 8, 12) == pytest.approx(200.0, rel=0.05)

    def test_white_noise_integral_is_variance(self):
        rng = np.random.default_rng(42)
        x = 3.0 * rng.standard_normal(30000)
        spectrum = dsp.welch_psd(x, 250, 256, 0.5)
        total = dsp.bandpower(spectrum, 0, 125)
        assert total == pytest.approx(float(np.var(x)), rel=0.10)

    def test_constant_signal_power_at_dc(self):
        spectrum = dsp.welch_psd(np.full(1000, 5.0), 250, 256, 0.5)
        assert np.argmax(spectrum.psd) == 0
        df = spectrum.freqs[1]
        beyond = dsp.bandpower(spectrum, 2 * df, 125)
        assert beyond <= 1e-12 * dsp.bandpower(spectrum, 0, 125)

    def test_too_short(self):
        with pytest.raises(dsp.TooShort):
            dsp.welch_psd(np.zeros(100), 250, 256, 0.5)

    def test_bad_overlap(self):
        with pytest.raises(dsp.BadBand):
            dsp.welch_psd(np.zeros(1000), 250, 256, 1.0)

    def test_leakage_bound(self):
        t = np.arange(2048) / 250
        spectrum = dsp.welch_psd(20 * np.sin(2 * np.pi * 10 * t), 250, 256, 0.5)
        assert dsp.bandpower(spectrum, 15, 20) <= 0.01 * dsp.bandpower(spectrum, 8, 12)

    def test_empty_band_rejected(self):
        spectrum = dsp.welch_psd(np.zeros(1000), 250, 256, 0.5)
        with pytest.raises(dsp.BadBand):
            dsp.bandpower(spectrum, 10, 10)


class TestAlphaProtocol:
    def test_fig6_scoring(self):
        fz, _ = render_fz(synth.fig6_scenario(seed=0))
        report = dsp.score_alpha_protocol(fz, 250, synth.fig6_protocol())
        assert report.sequence_match >= 0.9
        assert report.ratio >= 2.0
        labels = [seg.label for seg in report.segments]
        assert labels == ["eyes_closed", "eyes_open"] * 3

    def test_noise_only_ratio_near_one(self):
        ratios = []
        for seed in range(5):
            fz, _ = render_fz(noise_scenario(seed, duration=30.0))
            ratios.append(dsp.score_alpha_protocol(fz, 250, synth.fig6_protocol()).ratio)
        assert all(0.5 <= r <= 2.0 for r in ratios)

    def test_empty_protocol(self):
        with pytest.raises(dsp.TooShort):
            dsp.score_alpha_protocol(np.zeros(7500), 250, [])

    def test_overlapping_protocol_rejected(self):
        with pytest.raises(dsp.DspError):
            dsp.score_alpha_protocol(
                np.zeros(7500), 250,
                [(0.0, 5.0, "eyes_closed"), (4.0, 9.0, "eyes_open")],
            )

    def test_report_serializable(self):
        fz, _ = render_fz(synth.fig6_scenario(seed=1))
        doc = dsp.score_alpha_protocol(fz, 250, synth.fig6_protocol()).to_dict()
        assert set(doc) == {"segments", "ratio", "sequence_match"}


class TestBlinkDetector:
    def test_fig7_blink_recovery(self):
        fz, truth = render_fz(synth.fig7_scenario(seed=0))
        events = dsp.detect_blinks(fz, 250)
        assert len(events) == 9
        for t in events.times:
            assert min(abs(t - apex) for apex in truth.blink_times) <= 0.05

    def test_flat_signal(self):
        assert len(dsp.detect_blinks(np.zeros(2500), 250)) == 0

    def test_too_short(self):
        with pytest.raises(dsp.TooShort):
            dsp.detect_blinks(np.zeros(100), 250)

    def test_noise_false_positive_rate(self):
        clean = sum(
            len(dsp.detect_blinks(render_fz(noise_scenario(seed))[0], 250)) == 0
            for seed in range(100)
        )
        assert clean >= 95

    def test_determinism(self):
        fz, _ = render_fz(synth.fig7_scenario(seed=2))
        assert dsp.detect_blinks(fz, 250) == dsp.detect_blinks(fz, 250)


class TestChewDetector:
    def test_fig7_chew_recovery(self):
        fz, _ = render_fz(synth.fig7_scenario(seed=0))
        assert len(dsp.detect_chews(fz, 250)) == 10

    def test_blink_only_scenario_no_chews(self):
        fz, _ = render_fz(synth.fig7_scenario(seed=1, chew_uv=0.0))
        assert len(dsp.detect_chews(fz, 250)) == 0

    def test_flat_signal(self):
        assert len(dsp.detect_chews(np.zeros(2500), 250)) == 0

    def test_chew_only_scenario(self):
        fz, truth = render_fz(synth.fig7_scenario(seed=4, blink_uv=0.0))
        events = dsp.detect_chews(fz, 250)
        assert len(events) == 10
        for t in events.times:
            assert min(abs(t - c) for c in truth.chew_times) <= 0.3


class TestEmgDetector:
    def test_five_bursts(self):
        sc = synth.emg_demo_scenario(seed=0)
        data, truth = synth.render(sc)
        events = dsp.emg_envelope_onsets(data[0], sc.fs)
        assert len(events) == 5
        for got, want in zip(events.times, truth.emg_onsets):
            assert abs(got - want) <= 0.1

    def test_tonic_burst_single_onset(self):
        plans = (ChannelPlan("EMG1", 2.0, event_gain={EventKind.EMG_BURST: 1.0}),)
        plans += tuple(ChannelPlan(label, 2.0) for label in synth.EEG_LABELS[1:])
        sc = Scenario(
            30.0, 250, 0, plans,
            (Event(EventKind.EMG_BURST, 2.0, 26.0, 150.0),),
        )
        data, _ = synth.render(sc)
        events = dsp.emg_envelope_onsets(data[0], sc.fs)
        assert len(events) == 1
        assert abs(events.times[0] - 2.0) <= 0.1

    def test_flat_signal(self):
        assert len(dsp.emg_envelope_onsets(np.zeros(2500), 250)) == 0


class TestRPeakDetector:
    def test_60_bpm(self):
        sc = synth.ecg_demo_scenario(bpm=60, duration=30.0)
        data, truth = synth.render(sc)
        events, hr = dsp.detect_r_peaks(data[0], sc.fs)
        assert abs(len(events) - len(truth.r_peaks)) <= 1
        assert hr == pytest.approx(60.0, abs=1.0)

    def test_120_bpm(self):
        sc = synth.ecg_demo_scenario(bpm=120, duration=30.0)
        data, _ = synth.render(sc)
        _, hr = dsp.detect_r_peaks(data[0], sc.fs)
        assert hr == pytest.approx(120.0, abs=2.0)

    def test_flat_signal(self):
        events, hr = dsp.detect_r_peaks(np.zeros(2500), 250)
        assert len(events) == 0
        assert hr is None

    def test_too_short(self):
        with pytest.raises(dsp.TooShort):
            dsp.detect_r_peaks(np.zeros(1000), 250)

    def test_peak_times_near_truth(self):
        sc = synth.ecg_demo_scenario(bpm=60, duration=30.0)
        data, truth = synth.render(sc)
        events, _ = dsp.detect_r_peaks(data[0], sc.fs)
        for t in events.times:
            assert min(abs(t - r) for r in truth.r_peaks) <= 0.05


class TestDetectorProperties:
    @given(st.floats(min_value=1e-3, max_value=1e3).filter(lambda c: c != 1.0))
    @settings(max_examples=12, deadline=None)
    def test_amplitude_scale_covariance(self, c):
        fz, _ = render_fz(synth.fig7_scenario(seed=6))
        base_blinks = dsp.detect_blinks(fz, 250).times
        base_chews = dsp.detect_chews(fz, 250).times
        assert dsp.detect_blinks(fz * c, 250).times == base_blinks
        assert dsp.detect_chews(fz * c, 250).times == base_chews

    def test_event_times_strictly_increasing(self):
        fz, _ = render_fz(synth.fig7_scenario(seed=8))
        for events in (dsp.detect_blinks(fz, 250), dsp.detect_chews(fz, 250)):
            assert all(b > a for a, b in zip(events.times, events.times[1:]))

    def test_eventlist_rejects_unordered(self):
        with pytest.raises(dsp.DspError):
            dsp.EventList(dsp.EventClass.BLINK, (2.0, 1.0))
