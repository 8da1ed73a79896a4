import torch

from diffabflow.config import ModelConfig
from diffabflow.correlation import build_cost_volume
from diffabflow.decoder import (DecoderState, FlowEstimate, MemoryGRUDecoder,
                                MemoryReadout, convex_upsample)
from diffabflow.diffusion import make_schedule
from diffabflow.model import DiffABFlow


def small_config(**kwargs):
    defaults = dict(channels=32, stage_dims=(16, 24, 32), hidden_dim=32,
                    heads=4, time_dim=64, corr_levels=2, corr_radius=2)
    defaults.update(kwargs)
    return ModelConfig(**defaults)


def small_model(seed=0, **kwargs):
    torch.manual_seed(seed)
    sched = make_schedule(50, "linear", 4)
    return DiffABFlow(small_config(**kwargs), sched, decode_iters=3)


def model_inputs(seed=1, b=1):
    gen = torch.Generator().manual_seed(seed)
    frames = torch.randn(b, 2, 64, 64, generator=gen) * 0.3
    grids = torch.randn(b, 2, 5, 64, 64, generator=gen) * 0.2
    return frames, grids


class TestMemoryReadout:
    def test_empty_memory_reads_zero(self):
        torch.manual_seed(0)
        read = MemoryReadout(8)
        hidden = torch.randn(1, 8, 4, 4)
        assert torch.all(read(hidden, []) == 0)

    def test_single_slot_returns_it_exactly(self):
        torch.manual_seed(1)
        read = MemoryReadout(8)
        hidden = torch.randn(1, 8, 4, 4)
        slot = torch.randn(1, 8, 4, 4)
        out = read(hidden, [slot])
        assert torch.allclose(out, slot, atol=1e-7)

    def test_readout_is_convex_combination(self):
        torch.manual_seed(2)
        read = MemoryReadout(8)
        hidden = torch.randn(1, 8, 4, 4)
        slots = [torch.randn(1, 8, 4, 4) for _ in range(3)]
        out = read(hidden, slots)
        low = torch.amin(torch.stack(slots), dim=0)
        high = torch.amax(torch.stack(slots), dim=0)
        assert torch.all(out >= low - 1e-6) and torch.all(out <= high + 1e-6)


class TestConvexUpsample:
    def test_constant_flow_upsamples_to_constant(self):
        # borders mix in the zero padding of the 3x3 unfold, so check interior
        flow = torch.full((1, 2, 4, 4), 3.0)
        mask = torch.randn(1, 9 * 64, 4, 4)
        up = convex_upsample(flow, mask)
        assert up.shape == (1, 2, 32, 32)
        interior = up[..., 8:-8, 8:-8]
        assert torch.allclose(interior, torch.full_like(interior, 3.0),
                              atol=1e-5)


class TestRefine:
    def _decoder_inputs(self, seed=3):
        gen = torch.Generator().manual_seed(seed)
        feats = torch.randn(1, 32, 8, 8, generator=gen)
        cv = build_cost_volume(feats, feats.roll(1, -1), num_levels=2)
        x_tvm = torch.randn(1, 32, 8, 8, generator=gen)
        f_cur = torch.randn(1, 2, 8, 8, generator=gen) * 0.3
        return x_tvm, f_cur, cv

    def test_zero_initialized_flow_head_keeps_flow(self):
        torch.manual_seed(4)
        dec = MemoryGRUDecoder(32, 2 * 25, hidden_dim=32, radius=2)
        x_tvm, f_cur, cv = self._decoder_inputs()
        state = dec.init_state(x_tvm)
        with torch.no_grad():
            _, est = dec.refine(state, f_cur, x_tvm, cv)
        assert torch.equal(est.flow_8, f_cur)

    def test_hidden_stays_bounded(self):
        torch.manual_seed(5)
        dec = MemoryGRUDecoder(32, 2 * 25, hidden_dim=32, radius=2)
        x_tvm, f_cur, cv = self._decoder_inputs(seed=6)
        state = dec.init_state(x_tvm)
        for _ in range(5):
            state, est = dec.refine(state, f_cur, x_tvm, cv)
            f_cur = est.flow_8
        assert state.hidden.abs().max() < 1.0

    def test_memory_contents_change_the_update(self):
        torch.manual_seed(6)
        dec = MemoryGRUDecoder(32, 2 * 25, hidden_dim=32, radius=2)
        x_tvm, f_cur, cv = self._decoder_inputs(seed=7)
        state = dec.init_state(x_tvm)
        gen = torch.Generator().manual_seed(8)
        mem_a = [torch.randn(1, 32, 8, 8, generator=gen).tanh()]
        mem_b = [torch.randn(1, 32, 8, 8, generator=gen).tanh()]
        with torch.no_grad():
            _, est_a = dec.refine(DecoderState(state.hidden, mem_a), f_cur,
                                  x_tvm, cv)
            _, est_b = dec.refine(DecoderState(state.hidden, mem_b), f_cur,
                                  x_tvm, cv)
        # flow head is zero-initialized, so compare hidden states instead
        ha = dec.gru(state.hidden,
                     torch.cat([x_tvm, dec.motion_enc(
                         torch.zeros(1, 50, 8, 8), f_cur),
                         dec.memory_read(state.hidden, mem_a)], dim=1))
        hb = dec.gru(state.hidden,
                     torch.cat([x_tvm, dec.motion_enc(
                         torch.zeros(1, 50, 8, 8), f_cur),
                         dec.memory_read(state.hidden, mem_b)], dim=1))
        assert (ha - hb).abs().max() > 0

    def test_memory_ring_keeps_last_m(self):
        torch.manual_seed(7)
        dec = MemoryGRUDecoder(32, 2 * 25, hidden_dim=32, memory_slots=2,
                               radius=2)
        x_tvm, f_cur, cv = self._decoder_inputs(seed=9)
        state = dec.init_state(x_tvm)
        for _ in range(4):
            state, est = dec.refine(state, f_cur, x_tvm, cv)
            f_cur = est.flow_8
        assert len(state.memory) == 2


class OraclePredictor(DiffABFlow):
    """Ignores the decoder and always predicts the stored ground truth."""

    def set_truth(self, flow_norm):
        self._truth = flow_norm

    def predict_clean(self, f_t, t, context, cv, iters, state=None):
        est = FlowEstimate(self._truth.clone(),
                           torch.zeros(self._truth.shape[0], 2, 64, 64))
        return [est] * iters, state


class TestDenoiseStepAndSample:
    def test_denoise_step_returns_all_iterations(self):
        model = small_model()
        frames, grids = model_inputs()
        with torch.no_grad():
            context, cv = model.extract_features(frames, grids)
            f_t = torch.randn(1, 2, 8, 8,
                              generator=torch.Generator().manual_seed(10))
            f_prev, preds, _ = model.denoise_step(f_t, 49, 37, context, cv,
                                                  iters=4)
        assert len(preds) == 4
        assert f_prev.shape == f_t.shape

    def test_memory_resets_between_denoise_steps(self):
        model = small_model()
        frames, grids = model_inputs(seed=11)
        calls = []
        original = model.mgdd.refine

        def spy(state, f_cur, x_tvm, cv):
            calls.append(len(state.memory))
            return original(state, f_cur, x_tvm, cv)

        model.mgdd.refine = spy
        with torch.no_grad():
            model.sample(frames, grids, steps_k=2, iters_n=3)
        # 2 denoise steps x 3 iterations; memory starts empty on each step
        assert calls == [0, 1, 2, 0, 1, 2]

    def test_oracle_predictor_recovers_truth(self):
        torch.manual_seed(12)
        sched = make_schedule(50, "linear", 4)
        model = OraclePredictor(small_config(), sched, decode_iters=2)
        truth = torch.randn(1, 2, 8, 8,
                            generator=torch.Generator().manual_seed(13)) * 0.5
        model.set_truth(truth)
        frames, grids = model_inputs(seed=14)
        est, seq = model.sample(frames, grids, steps_k=4, iters_n=2,
                                generator=torch.Generator().manual_seed(15))
        final = seq[-1]
        err = (final - truth).pow(2).sum(dim=1).sqrt()
        assert err.mean() < 1e-4
        assert len(seq) == 5

    def test_sample_deterministic_per_seed(self):
        model = small_model(seed=16)
        frames, grids = model_inputs(seed=17)
        est1, seq1 = model.sample(frames, grids, steps_k=2, iters_n=2,
                                  generator=torch.Generator().manual_seed(18))
        est2, seq2 = model.sample(frames, grids, steps_k=2, iters_n=2,
                                  generator=torch.Generator().manual_seed(18))
        assert torch.equal(est1.flow_full, est2.flow_full)
        assert all(torch.equal(a, b) for a, b in zip(seq1, seq2))

    def test_sequence_length_matches_k(self):
        model = small_model(seed=19)
        frames, grids = model_inputs(seed=20)
        _, seq = model.sample(frames, grids, steps_k=4, iters_n=1,
                              generator=torch.Generator().manual_seed(21))
        assert len(seq) == 5

    def test_modality_bypass_paths(self):
        for modality in ("frame", "event"):
            torch.manual_seed(22)
            sched = make_schedule(50, "linear", 2)
            model = DiffABFlow(small_config(), sched, modality=modality,
                               decode_iters=2)
            frames, grids = model_inputs(seed=23)
            est, _ = model.sample(frames, grids, steps_k=2, iters_n=2,
                                  generator=torch.Generator().manual_seed(24))
            assert est.flow_full.shape == (1, 2, 64, 64)

    def test_default_size_model(self):
        torch.manual_seed(25)
        sched = make_schedule(50, "linear", 4)
        model = DiffABFlow(ModelConfig(), sched)
        frame_params = sum(p.numel()
                           for p in model.encoder["frame"].parameters())
        assert 0.5e6 < frame_params < 2e6
        frames, grids = model_inputs(seed=26)
        est, seq = model.sample(frames, grids, steps_k=1, iters_n=1,
                                generator=torch.Generator().manual_seed(27))
        assert est.flow_8.shape == (1, 2, 8, 8)
        assert est.flow_full.shape == (1, 2, 64, 64)
