import math

import pytest
import torch

from diffabflow.errors import ConfigError
from diffabflow.fusion import (AppearanceBoundaryFusion, AttentionBlock,
                               AttentionConfig, MultiHeadAttention,
                               cross_attend, scaled_dot_attention)


def maps(*shapes, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return [torch.randn(*s, generator=gen) for s in shapes]


class TestScaledDotAttention:
    def test_two_token_hand_case(self):
        # Single head, two tokens, d=2: verify against explicit softmax math.
        q = torch.tensor([[[1.0, 0.0], [0.0, 1.0]]])
        k = torch.tensor([[[1.0, 1.0], [0.0, 2.0]]])
        v = torch.tensor([[[1.0, 2.0], [3.0, 4.0]]])
        out, weights = scaled_dot_attention(q, k, v)
        d = 2
        for i in range(2):
            logits = [torch.dot(q[0, i], k[0, j]) / math.sqrt(d)
                      for j in range(2)]
            e = torch.tensor([math.exp(l) for l in logits])
            w = e / e.sum()
            expected = w[0] * v[0, 0] + w[1] * v[0, 1]
            assert torch.allclose(out[0, i], expected, atol=1e-6)
            assert torch.allclose(weights[0, i], w, atol=1e-6)

    def test_rows_sum_to_one(self):
        q, k, v = maps((2, 4, 7, 16), (2, 4, 9, 16), (2, 4, 9, 16))
        _, weights = scaled_dot_attention(q, k, v)
        assert torch.allclose(weights.sum(-1), torch.ones(2, 4, 7), atol=1e-6)


class TestMultiHeadAttention:
    def test_identical_kv_tokens_ignore_queries(self):
        torch.manual_seed(0)
        cfg = AttentionConfig(heads=2, head_dim=8)
        mha = MultiHeadAttention(16, cfg).eval()
        v = torch.randn(16)
        kv = v.expand(1, 10, 16).clone()
        q1, q2 = maps((1, 5, 16), (1, 5, 16), seed=1)
        with torch.no_grad():
            out1 = mha(q1, kv)
            out2 = mha(q2, kv)
            expected = mha.out_proj(mha.v_proj(v.expand(1, 5, 16)))
        assert torch.allclose(out1, expected, atol=1e-5)
        assert torch.allclose(out1, out2, atol=1e-5)


class TestCrossAttend:
    def test_residual_identity_at_zero_init(self):
        torch.manual_seed(1)
        cfg = AttentionConfig(heads=2, head_dim=8)
        block = AttentionBlock(16, cfg).eval()
        with torch.no_grad():
            block.attn.out_proj.weight.zero_()
            block.attn.out_proj.bias.zero_()
            block.ffn[-1].weight.zero_()
            block.ffn[-1].bias.zero_()
        x, y = maps((1, 16, 4, 4), (1, 16, 4, 4), seed=2)
        with torch.no_grad():
            out = cross_attend(block, x, y)
        assert torch.equal(out, x)

    def test_shape_preserved(self):
        torch.manual_seed(2)
        block = AttentionBlock(16, AttentionConfig(heads=2, head_dim=8)).eval()
        x, y = maps((2, 16, 6, 5), (2, 16, 6, 5), seed=3)
        with torch.no_grad():
            out = cross_attend(block, x, y)
        assert out.shape == x.shape

    def test_channel_mismatch_rejected(self):
        block = AttentionBlock(16, AttentionConfig(heads=2, head_dim=8))
        with pytest.raises(ConfigError):
            cross_attend(block, torch.zeros(1, 16, 4, 4),
                         torch.zeros(1, 8, 4, 4))


class TestFusionStrategies:
    def _features(self, seed=0):
        return maps(*[(2, 32, 8, 8)] * 6, seed=seed)

    @pytest.mark.parametrize("strategy", ["attention", "concat", "weighted"])
    def test_shape_contract(self, strategy):
        torch.manual_seed(3)
        fusion = AppearanceBoundaryFusion(32, strategy).eval()
        x_f, x_e, x_fa, x_fb, x_ea, x_eb = self._features()
        with torch.no_grad():
            out = fusion(x_f, x_e, x_fa, x_fb, x_ea, x_eb)
        assert out.shape == (2, 32, 8, 8)

    def test_weighted_gate_forced_to_one(self):
        torch.manual_seed(4)
        fusion = AppearanceBoundaryFusion(32, "weighted").eval()
        x_f, x_e = maps((1, 32, 8, 8), (1, 32, 8, 8), seed=5)
        with torch.no_grad():
            out = fusion(x_f, x_e, gate_override=1.0)
            expected = fusion.proj(x_f)
        assert torch.equal(out, expected)

    def test_attention_fusion_sensitive_to_event_branch(self):
        torch.manual_seed(5)
        fusion = AppearanceBoundaryFusion(32, "attention").eval()
        x_f, x_e, x_fa, x_fb, x_ea, x_eb = self._features(seed=6)
        with torch.no_grad():
            base = fusion(x_f, x_e, x_fa, x_fb, x_ea, x_eb)
            bump = fusion(x_f, x_e, x_fa, x_fb, x_ea + 1e-2, x_eb)
        diff = (bump - base).abs().max().item() / 1e-2
        assert diff > 0.0

    def test_permutation_equivariance(self):
        torch.manual_seed(6)
        fusion = AppearanceBoundaryFusion(32, "attention").eval()
        feats = self._features(seed=7)
        perm = torch.randperm(64, generator=torch.Generator().manual_seed(8))

        def permute(m):
            b, c, h, w = m.shape
            return m.reshape(b, c, h * w)[:, :, perm].reshape(b, c, h, w)

        with torch.no_grad():
            base = fusion(*feats)
            permuted = fusion(*[permute(m) for m in feats])
        assert torch.allclose(permute(base), permuted, atol=1e-5)

    def test_unknown_strategy_rejected(self):
        with pytest.raises(ConfigError):
            AppearanceBoundaryFusion(32, "mystery")

    def test_attention_requires_split_features(self):
        fusion = AppearanceBoundaryFusion(32, "attention")
        x_f, x_e = maps((1, 32, 4, 4), (1, 32, 4, 4), seed=9)
        with pytest.raises(ConfigError):
            fusion(x_f, x_e)

    def test_heads_must_divide_channels(self):
        with pytest.raises(ConfigError):
            AttentionConfig(heads=3, head_dim=8).validate(32)
