import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffabflow.datakit import (DegradationSpec, EventStream, Sample, degrade,
                                read_events, read_flow, read_sample,
                                render_scene, simulate_events, write_events,
                                write_flow, write_sample)
from diffabflow.datakit.scenes import Scene, SceneObject, render_flow
from diffabflow.errors import (DataError, DimensionMismatchError,
                               MagicNumberError, TruncatedFileError)


def static_scene(**kwargs):
    defaults = dict(canvas_size=(64, 64), objects=[], background_seed=3,
                    frame_count=2)
    defaults.update(kwargs)
    return Scene(**defaults)


class TestRenderScene:
    def test_static_scene_zero_flow(self):
        scene = static_scene(objects=[
            SceneObject("square", 1, (30.0, 30.0), (0.0, 0.0), 8.0)])
        _, flows = render_scene(scene)
        assert np.all(flows == 0.0)

    def test_single_moving_square_piecewise_flow(self):
        scene = static_scene(objects=[
            SceneObject("square", 1, (24.0, 30.0), (2.0, 0.0), 8.0)])
        frames, flows = render_scene(scene)
        flow = flows[0]
        inside = flow[30, 24]
        assert inside[0] == 2.0 and inside[1] == 0.0
        assert np.all(flow[2, 2] == 0.0)
        # footprint: |x-24|<=8, |y-30|<=8 at t=0
        assert np.all(flow[30, 17:32, 0] == 2.0)
        assert np.all(flow[50, :, 0] == 0.0)

    def test_textured_patch_mean_flow_matches_velocity(self):
        obj = SceneObject("textured-patch", 7, (28.0, 26.0), (1.0, 1.0), 9.0)
        scene = static_scene(objects=[obj])
        flow = render_flow(scene, 0.0)
        gx, gy = np.meshgrid(np.arange(64.0), np.arange(64.0))
        mask = (np.abs(gx - 28.0) <= 9.0) & (np.abs(gy - 26.0) <= 9.0)
        mean_flow = flow[mask].mean(axis=0)
        assert np.allclose(mean_flow, (1.0, 1.0), atol=1e-6)

    def test_rejects_objects_leaving_canvas(self):
        scene = static_scene(objects=[
            SceneObject("circle", 1, (60.0, 32.0), (8.0, 0.0), 6.0)])
        with pytest.raises(DataError):
            render_scene(scene)

    def test_frames_in_unit_range(self):
        scene = static_scene(objects=[
            SceneObject("textured-patch", 2, (32.0, 32.0), (1.0, -1.0), 10.0)])
        frames, _ = render_scene(scene, supersample=2)
        assert frames.shape == (2, 64, 64)
        assert frames.min() >= 0.0 and frames.max() <= 1.0

    def test_warping_frame2_by_flow_reconstructs_frame1(self):
        # Occlusion-free, noise-free scene: backward warp error stays small.
        scene = static_scene(objects=[
            SceneObject("textured-patch", 5, (26.0, 30.0), (3.0, 1.0), 10.0)])
        frames, flows = render_scene(scene, supersample=2)
        flow = flows[0]
        gx, gy = np.meshgrid(np.arange(64.0), np.arange(64.0))
        xs = np.clip(gx + flow[..., 0], 0, 63)
        ys = np.clip(gy + flow[..., 1], 0, 63)
        x0 = np.floor(xs).astype(int).clip(0, 62)
        y0 = np.floor(ys).astype(int).clip(0, 62)
        fx, fy = xs - x0, ys - y0
        f2 = frames[1]
        warped = ((1 - fy) * (1 - fx) * f2[y0, x0]
                  + (1 - fy) * fx * f2[y0, x0 + 1]
                  + fy * (1 - fx) * f2[y0 + 1, x0]
                  + fy * fx * f2[y0 + 1, x0 + 1])
        assert np.abs(warped - frames[0]).mean() < 0.02

    def test_determinism(self):
        scene = static_scene(objects=[
            SceneObject("circle", 9, (30.0, 30.0), (2.0, 2.0), 7.0)])
        a, fa = render_scene(scene, supersample=2)
        b, fb = render_scene(scene, supersample=2)
        assert np.array_equal(a, b) and np.array_equal(fa, fb)


class TestSimulateEvents:
    def test_constant_sequence_is_empty(self):
        frames = np.full((5, 8, 8), 0.5, dtype=np.float64)
        stream = simulate_events(frames, 0.2)
        assert len(stream) == 0

    def test_rise_of_two_thresholds_gives_two_positive_events(self):
        c = 0.2
        frames = np.full((2, 4, 4), 0.4)
        frames[1, 2, 1] = 0.4 * np.exp(2 * c)
        stream = simulate_events(frames, c)
        assert len(stream) == 2
        assert np.all(stream.p == 1)
        assert np.all(stream.x == 1) and np.all(stream.y == 2)

    def test_fall_of_one_and_a_half_thresholds_keeps_residual(self):
        c = 0.2
        frames = np.full((3, 4, 4), 0.6)
        frames[1, 1, 1] = 0.6 * np.exp(-1.5 * c)
        frames[2, 1, 1] = frames[1, 1, 1]  # no further change
        stream = simulate_events(frames, c)
        assert len(stream) == 1
        assert stream.p[0] == -1
        # residual 0.5 C: another drop of 0.5 C must now fire a second event
        frames2 = np.concatenate([frames, frames[-1:]])
        frames2[3, 1, 1] = 0.6 * np.exp(-2.0 * c)
        stream2 = simulate_events(frames2, c)
        assert len(stream2) == 2

    def test_timestamps_interpolated_and_sorted(self):
        c = 0.2
        frames = np.full((3, 2, 2), 0.3)
        frames[2] = 0.3 * np.exp(3 * c)
        times = np.array([0.0, 0.5, 1.0])
        stream = simulate_events(frames, c, timestamps=times)
        assert np.all(np.diff(stream.t) >= 0)
        assert stream.t.min() >= 0.5  # change happens in the second interval
        assert stream.t_begin == 0.0 and stream.t_end == 1.0

    def test_fewer_than_two_frames_rejected(self):
        with pytest.raises(DataError):
            simulate_events(np.zeros((1, 4, 4)), 0.2)

    def test_polarity_balance_for_returning_intensity(self):
        # Intensity returns to its start: net events per pixel in {-1, 0, 1}.
        rng = np.random.default_rng(0)
        base = rng.uniform(0.2, 0.8, size=(6, 6))
        phases = np.sin(np.linspace(0, 2 * np.pi, 17))
        frames = np.stack([base * np.exp(0.55 * p) for p in phases])
        stream = simulate_events(np.clip(frames, 0, 1), 0.2)
        net = np.zeros((6, 6))
        np.add.at(net, (stream.y, stream.x), stream.p)
        assert np.all(np.abs(net) <= 1)


class TestDegrade:
    def test_none_mode_is_identity(self):
        frames = np.random.default_rng(0).uniform(0, 1, (2, 8, 8)).astype(np.float32)
        out = degrade(frames, DegradationSpec(), rng_seed=1)
        assert np.array_equal(out, frames)

    def test_high_speed_box_blur_of_translating_edge(self):
        # Step edge moving 4 px per output frame, 4 sub-frames: the blurred
        # edge ramps over 4 px with values 0.25/0.5/0.75/1.
        frames = np.zeros((4, 8, 16), dtype=np.float32)
        for j in range(4):
            frames[j, :, 8 + j:] = 1.0
        out = degrade(frames, DegradationSpec(mode="high_speed",
                                              blur_subframes=4))
        assert out.shape == (1, 8, 16)
        row = out[0, 0]
        assert np.allclose(row[7], 0.0)
        assert np.allclose(row[8:12], [0.25, 0.5, 0.75, 1.0])

    def test_low_light_gamma_only(self):
        frames = np.random.default_rng(1).uniform(0, 1, (2, 8, 8)).astype(np.float32)
        spec = DegradationSpec(mode="low_light", gamma=2.5)
        out = degrade(frames, spec, rng_seed=0)
        assert np.allclose(out, frames.astype(np.float64) ** 2.5, atol=1e-6)

    def test_low_light_deterministic_per_seed(self):
        frames = np.random.default_rng(2).uniform(0, 1, (2, 16, 16)).astype(np.float32)
        spec = DegradationSpec.low_light()
        a = degrade(frames, spec, rng_seed=7)
        b = degrade(frames, spec, rng_seed=7)
        c = degrade(frames, spec, rng_seed=8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_invalid_spec_rejected(self):
        with pytest.raises(DataError):
            degrade(np.zeros((2, 4, 4)), DegradationSpec(mode="none", gamma=2.0))
        with pytest.raises(DataError):
            degrade(np.zeros((3, 4, 4)),
                    DegradationSpec(mode="high_speed", blur_subframes=2))
        with pytest.raises(DataError):
            DegradationSpec(mode="low_light", illum_floor=0.0).validate()

    def test_low_light_illumination_field(self):
        frames = np.full((2, 64, 64), 0.8, dtype=np.float32)
        spec = DegradationSpec.low_light(gamma=1.0, photon_scale=0.0,
                                         read_noise_sigma=0.0,
                                         illum_floor=0.05, illum_cell=16)
        out = degrade(frames, spec, rng_seed=3)
        # static lighting: both frames get the same field
        assert np.array_equal(out[0], out[1])
        # hard shadows at the floor plus lit regions
        assert (out[0] <= 0.05 * 0.8 + 1e-6).mean() > 0.2
        assert out[0].max() > 0.4
        # deterministic per seed
        assert np.array_equal(out, degrade(frames, spec, rng_seed=3))


class TestFormats:
    def test_flow_round_trip_bit_exact(self, tmp_path):
        flow = np.random.default_rng(0).normal(0, 4, (17, 23, 2)).astype(np.float32)
        path = tmp_path / "f.flo"
        write_flow(path, flow)
        assert np.array_equal(read_flow(path), flow)

    def test_flow_bad_magic(self, tmp_path):
        path = tmp_path / "bad.flo"
        path.write_bytes(b"\x00" * 20)
        with pytest.raises(MagicNumberError):
            read_flow(path)

    def test_flow_truncated(self, tmp_path):
        flow = np.zeros((4, 4, 2), dtype=np.float32)
        path = tmp_path / "t.flo"
        write_flow(path, flow)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(TruncatedFileError):
            read_flow(path)

    def test_empty_event_stream_round_trips(self, tmp_path):
        path = tmp_path / "e.evt"
        write_events(path, EventStream.empty(0.0, 1.0))
        stream = read_events(path, 0.0, 1.0)
        assert len(stream) == 0
        assert path.stat().st_size == 16  # header only

    def test_event_round_trip_thousand_random(self, tmp_path):
        rng = np.random.default_rng(3)
        n = 1000
        t = np.sort(rng.uniform(0, 0.04, n))
        stream = EventStream(t, rng.integers(0, 64, n).astype(np.int32),
                             rng.integers(0, 64, n).astype(np.int32),
                             rng.choice([-1, 1], n).astype(np.int8),
                             0.0, 0.04)
        path = tmp_path / "e.evt"
        write_events(path, stream)
        back = read_events(path, 0.0, 0.04)
        assert np.array_equal(back.t, stream.t)
        assert np.array_equal(back.x, stream.x)
        assert np.array_equal(back.y, stream.y)
        assert np.array_equal(back.p, stream.p)

    def test_event_truncated_and_bad_magic(self, tmp_path):
        rng = np.random.default_rng(4)
        stream = EventStream(np.array([0.1, 0.2]),
                             np.array([1, 2], np.int32),
                             np.array([3, 4], np.int32),
                             np.array([1, -1], np.int8), 0.0, 1.0)
        path = tmp_path / "e.evt"
        write_events(path, stream)
        data = path.read_bytes()
        path.write_bytes(data[:-4])
        with pytest.raises(TruncatedFileError):
            read_events(path)
        path.write_bytes(b"XXXX" + data[4:])
        with pytest.raises(MagicNumberError):
            read_events(path)

    @settings(max_examples=25, deadline=None)
    @given(records=st.lists(
        st.tuples(st.floats(0, 1, allow_nan=False, width=32),
                  st.integers(0, 31), st.integers(0, 31),
                  st.sampled_from([-1, 1])),
        min_size=0, max_size=64))
    def test_event_round_trip_property(self, tmp_path_factory, records):
        records.sort(key=lambda r: r[0])
        t = np.array([r[0] for r in records], np.float64)
        stream = EventStream(t,
                             np.array([r[1] for r in records], np.int32),
                             np.array([r[2] for r in records], np.int32),
                             np.array([r[3] for r in records], np.int8),
                             0.0, 1.0)
        path = tmp_path_factory.mktemp("evt") / "e.evt"
        write_events(path, stream)
        back = read_events(path, 0.0, 1.0)
        assert np.array_equal(back.t, stream.t)
        assert np.array_equal(back.p, stream.p)


class TestSampleIO:
    def _sample(self):
        scene = static_scene(objects=[
            SceneObject("square", 1, (28.0, 30.0), (2.0, 1.0), 8.0)])
        frames, flows = render_scene(scene)
        stream = EventStream(np.array([0.01, 0.02]),
                             np.array([5, 6], np.int32),
                             np.array([7, 8], np.int32),
                             np.array([1, -1], np.int8), 0.0, 0.04)
        return Sample(frames, stream, flows[0], {"seed": 1})

    def test_round_trip(self, tmp_path):
        sample = self._sample()
        write_sample(tmp_path / "s0", sample)
        back = read_sample(tmp_path / "s0")
        # frames quantize to 8 bits on write; one cycle is lossless after that
        assert np.abs(back.frames - sample.frames).max() <= 0.5 / 255
        assert np.array_equal(back.flow, sample.flow)
        assert np.array_equal(back.events.t, sample.events.t)
        assert back.events.t_begin == sample.events.t_begin
        assert back.events.t_end == sample.events.t_end
        # a second cycle is bit-exact for the frames too
        write_sample(tmp_path / "s1", back)
        again = read_sample(tmp_path / "s1")
        assert np.array_equal(again.frames, back.frames)

    def test_dimension_mismatch_detected(self, tmp_path):
        sample = self._sample()
        sample.flow = sample.flow[:32]
        with pytest.raises(DimensionMismatchError):
            write_sample(tmp_path / "bad", sample)


class TestGeneration:
    def test_make_sample_deterministic(self):
        from diffabflow.datakit import GenerationConfig, make_sample
        spec = DegradationSpec.low_light()
        cfg = GenerationConfig()
        a = make_sample(3, spec, cfg)
        b = make_sample(3, spec, cfg)
        assert np.array_equal(a.frames, b.frames)
        assert np.array_equal(a.flow, b.flow)
        assert np.array_equal(a.events.t, b.events.t)
        assert np.array_equal(a.events.p, b.events.p)

    def test_high_speed_sample_blurs_frames(self):
        from diffabflow.datakit import GenerationConfig, make_sample
        cfg = GenerationConfig(kinds=("textured-patch",))
        clean = make_sample(4, DegradationSpec(), cfg)
        blurred = make_sample(4, DegradationSpec.high_speed(8), cfg)
        assert blurred.frames.shape == clean.frames.shape
        # blur removes high-frequency content
        def sharpness(f):
            return np.abs(np.diff(f, axis=-1)).mean()
        assert sharpness(blurred.frames) < sharpness(clean.frames)
