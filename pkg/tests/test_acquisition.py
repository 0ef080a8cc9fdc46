import time

import numpy as np
import pytest

from peeg import acquisition as acq
from peeg import ads1299, synth
from peeg.acquisition import Pipeline, ReplayBackend, SimulatorBackend
from peeg.session import read_session, write_session


def sim_pipeline(scenario=None, block_len=250, paced=False, **kwargs):
    scenario = scenario or synth.fig6_scenario()
    return Pipeline(SimulatorBackend(scenario), block_len=block_len, paced=paced, **kwargs)


class TestLifecycle:
    def test_fig6_block_count_and_clean_end(self):
        pipeline = sim_pipeline(block_len=250)
        sub = pipeline.subscribe(capacity=100)
        pipeline.start()
        blocks = list(sub)
        assert len(blocks) == 30
        assert [b.seq for b in blocks] == list(range(30))
        assert all(b.dropped_before == 0 for b in blocks)
        assert blocks[0].t0_ns == 0
        assert blocks[1].t0_ns == int(1e9)

    def test_start_twice(self):
        pipeline = sim_pipeline()
        pipeline.start()
        with pytest.raises(acq.AlreadyRunning):
            pipeline.start()
        pipeline.stop()

    def test_block_len_bounds(self):
        with pytest.raises(acq.AcquisitionError):
            sim_pipeline(block_len=0)
        with pytest.raises(acq.AcquisitionError):
            sim_pipeline(block_len=251)

    def test_rate_mismatch(self):
        rf = ads1299.RegisterFile.default_config().with_sample_rate(500)
        with pytest.raises(acq.RateMismatch):
            Pipeline(SimulatorBackend(synth.fig6_scenario()), rf=rf)

    def test_replay_block_count(self, tmp_path):
        scenario = synth.fig6_scenario()
        pipeline = sim_pipeline(scenario)
        sub = pipeline.subscribe(capacity=100)
        pipeline.start()
        blocks = [b for b in sub if b.seq < 10]  # keep 10 s worth
        path = tmp_path / "ten.peeg"
        write_session(path, blocks, channel_labels=scenario.labels)
        replay = Pipeline(ReplayBackend(read_session(path)), block_len=50, paced=False)
        sub2 = replay.subscribe(capacity=100)
        replay.start()
        out = list(sub2)
        assert len(out) == 50
        assert [b.seq for b in out] == list(range(50))

    def test_subscribe_after_close(self):
        pipeline = sim_pipeline()
        pipeline.subscribe()
        pipeline.start()
        pipeline.join()
        with pytest.raises(acq.PipelineClosed):
            pipeline.subscribe()


class TestFanOut:
    def test_fast_consumer_no_drops(self):
        plans = tuple(synth.ChannelPlan(label, 4.0) for label in synth.EEG_LABELS)
        scenario = synth.Scenario(3.0, 250, 0, plans, ())
        pipeline = sim_pipeline(scenario, block_len=25, paced=True)
        sub = pipeline.subscribe(capacity=16)
        pipeline.start()
        received = 0
        for block in sub:
            assert block.dropped_before == 0
            received += block.n_samples
        assert received == 750

    def test_slow_consumer_conservation(self):
        pipeline = sim_pipeline(block_len=25, paced=True)
        sub = pipeline.subscribe(capacity=4)
        pipeline.start()
        received = 0
        dropped = 0
        got_first = False
        for block in sub:
            if not got_first:
                got_first = True
                time.sleep(2.0)  # producer emits ~20 blocks against capacity 4
            received += block.n_samples
            dropped += block.dropped_before
        stats = pipeline.stats()
        assert dropped > 0
        assert received + dropped == stats.produced_samples == 7500

    def test_seq_strictly_increasing_under_drops(self):
        pipeline = sim_pipeline(block_len=25)
        sub = pipeline.subscribe(capacity=2)
        pipeline.start()
        seqs = [b.seq for b in sub]
        assert all(b > a for a, b in zip(seqs, seqs[1:]))

    def test_late_subscriber_gets_suffix_only(self):
        pipeline = sim_pipeline(block_len=25, paced=True)
        first = pipeline.subscribe(capacity=600)
        pipeline.start()
        while first.stats.delivered_samples == 0 and first.backlog == 0:
            time.sleep(0.01)
        late = pipeline.subscribe(capacity=600)
        late_blocks = list(late)
        assert late_blocks, "late subscriber saw nothing"
        assert late_blocks[0].seq > 0
        assert all(b.dropped_before == 0 for b in late_blocks)

    def test_producer_not_blocked_by_stalled_subscriber(self):
        scenario = synth.fig6_scenario()
        pipeline = sim_pipeline(scenario, block_len=25, paced=True)
        pipeline.subscribe(capacity=2)  # never read: stalls immediately
        fast = pipeline.subscribe(capacity=900)
        start = time.monotonic()
        pipeline.start()
        deadline = start + 6.0
        seen = 0
        for block in fast:
            seen += 1
            if time.monotonic() > deadline or seen >= 40:
                break
        elapsed = time.monotonic() - start
        # 40 blocks at 10 blocks/s nominal: within 10% of 4 s cadence
        assert seen == 40
        assert elapsed == pytest.approx(4.0, rel=0.10)
        pipeline.stop()


class TestRegisterControl:
    def test_gain_epoch_mid_stream(self):
        pipeline = sim_pipeline(block_len=25, paced=True)
        sub = pipeline.subscribe(capacity=1200)
        pipeline.start()
        ack = pipeline.apply_register_write(ads1299.Reg.CH1SET, 0x00)  # gain 24 -> 1
        assert ack.epoch == 1
        pipeline.stop()
        blocks = list(sub)
        pre = [b for b in blocks if b.epoch == 0]
        post = [b for b in blocks if b.epoch == 1]
        assert pre and post
        assert all(b.gains[0] == 24 for b in pre)
        assert all(b.gains[0] == 1 for b in post)
        # identical codes convert to exactly 24x larger uV after the epoch
        scale24 = ads1299.ConversionParams(4.5, 24).uv_per_code
        assert np.array_equal(
            pre[0].data[0], pre[0].codes[0].astype(np.float64) * scale24
        )
        assert np.array_equal(
            post[0].data[0], post[0].codes[0].astype(np.float64) * (24.0 * scale24)
        )

    def test_no_block_mixes_epochs(self):
        pipeline = sim_pipeline(block_len=25, paced=True)
        sub = pipeline.subscribe(capacity=1200)
        pipeline.start()
        pipeline.apply_register_write(ads1299.Reg.CH1SET, 0x20)  # gain 4
        pipeline.stop()
        for block in sub:
            params = ads1299.ConversionParams(block.vref, block.gains[0])
            expect = block.codes[0].astype(np.float64) * params.uv_per_code
            assert np.array_equal(block.data[0], expect)

    def test_rate_change_unsupported_without_disruption(self):
        pipeline = sim_pipeline(block_len=250, paced=False)
        sub = pipeline.subscribe(capacity=64)
        pipeline.start()
        value = 0x90 | ads1299.DATA_RATE_TO_CODE[500]
        with pytest.raises(acq.Unsupported):
            pipeline.apply_register_write(ads1299.Reg.CONFIG1, value)
        blocks = list(sub)
        assert sum(b.n_samples for b in blocks) == 7500  # stream undisturbed

    def test_same_rate_config1_write_allowed(self):
        pipeline = sim_pipeline(block_len=250, paced=False)
        pipeline.start()
        ack = pipeline.apply_register_write(ads1299.Reg.CONFIG1, 0x96)
        assert ack.epoch >= 1
        pipeline.stop()

    def test_write_during_replay_unsupported(self, tmp_path):
        pipeline = sim_pipeline(block_len=250)
        sub = pipeline.subscribe(capacity=100)
        pipeline.start()
        path = tmp_path / "s.peeg"
        write_session(path, sub, channel_labels=synth.fig6_scenario().labels)
        replay = Pipeline(ReplayBackend(read_session(path)), block_len=50, paced=False)
        replay.start()
        with pytest.raises(acq.Unsupported):
            replay.apply_register_write(ads1299.Reg.CH1SET, 0x00)
        replay.stop()

    def test_invalid_write_surfaces_mid_stream(self):
        pipeline = sim_pipeline(block_len=25, paced=True)
        pipeline.start()
        with pytest.raises(ads1299.ReadOnlyRegister):
            pipeline.apply_register_write(ads1299.Reg.ID, 0x00)
        pipeline.stop()

    def test_idle_write_applies_to_next_start(self):
        pipeline = sim_pipeline()
        ack = pipeline.apply_register_write(ads1299.Reg.CH2SET, 0x10)  # gain 2
        assert ack.epoch == 1
        assert pipeline.register_file.gain_of(1) == 2


class TestStats:
    def test_idle_all_zero(self):
        stats = sim_pipeline().stats()
        assert stats.produced_samples == 0
        assert stats.dropped_samples == 0
        assert not stats.running

    def test_produced_after_fig6(self):
        pipeline = sim_pipeline(block_len=250)
        sub = pipeline.subscribe(capacity=64)
        pipeline.start()
        blocks = list(sub)
        stats = pipeline.stats()
        assert stats.produced_samples == 7500
        assert stats.produced_blocks == 30
        assert sum(b.n_samples for b in blocks) == 7500

    def test_conservation_per_subscriber(self):
        pipeline = sim_pipeline(block_len=25)
        subs = [pipeline.subscribe(capacity=c) for c in (2, 8, 1000)]
        pipeline.start()
        pipeline.join()
        for sub in subs:
            received = sum(b.n_samples for b in sub)
            dropped = sub.stats.dropped_samples
            assert received + dropped == pipeline.stats().produced_samples

    def test_paced_jitter_bounded(self):
        scenario = synth.fig6_scenario()
        pipeline = sim_pipeline(scenario, block_len=25, paced=True)
        sub = pipeline.subscribe(capacity=100)
        pipeline.start()
        for block in sub:
            if block.seq >= 20:
                break
        stats = pipeline.stats()
        pipeline.stop()
        assert stats.jitter_ns <= 5_000_000  # 5 ms
