import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from moveint.model import (
    STD_FLOOR,
    DiagonalGaussian,
    MixtureDensity,
    ModelConfig,
    ModelError,
    MoVEInt,
    StaleStateError,
    combine_mixture,
)


@pytest.fixture
def model():
    torch.manual_seed(0)
    return MoVEInt(ModelConfig(human_dim=90, robot_dim=20)).eval()


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig(90, 20)
        assert cfg.hidden_widths == (40, 20)
        assert cfg.latent_dim == 5 and cfg.n_components == 3

    def test_round_trip(self):
        cfg = ModelConfig(10, 4, hidden_widths=(8, 4), latent_dim=2, n_components=2)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_rejects_zero_components(self):
        with pytest.raises(ModelError):
            ModelConfig(10, 4, n_components=0)


class TestVAE:
    def test_encode_shapes(self, model):
        q = model.encode_robot(torch.randn(7, 20))
        assert q.mean.shape == (7, 5) and q.std.shape == (7, 5)

    def test_std_floor(self, model):
        with torch.no_grad():
            model.vae.enc_log_std.bias.fill_(-1e3)
        q = model.encode_robot(torch.randn(3, 20))
        assert (q.std >= STD_FLOOR).all()

    def test_decode_shape(self, model):
        assert model.decode_robot(torch.randn(4, 5)).shape == (4, 20)

    def test_deterministic(self, model):
        x = torch.randn(3, 20)
        torch.testing.assert_close(model.encode_robot(x).mean, model.encode_robot(x).mean, rtol=0, atol=0)
        z = torch.randn(2, 5)
        torch.testing.assert_close(model.decode_robot(z), model.decode_robot(z), rtol=0, atol=0)

    def test_wrong_length(self, model):
        with pytest.raises(ModelError):
            model.encode_robot(torch.randn(3, 19))
        with pytest.raises(ModelError):
            model.decode_robot(torch.randn(3, 4))


class TestPolicy:
    def test_skeleton_window(self, model):
        mix = model.mdn_sequence(torch.randn(12, 90))
        assert mix.means.shape == (12, 3, 5)
        assert mix.alphas.shape == (12, 3)
        torch.testing.assert_close(mix.alphas.sum(-1), torch.ones(12))

    def test_wrong_length(self, model):
        with pytest.raises(ModelError):
            model.mdn_sequence(torch.randn(4, 89))

    def test_stepwise_matches_unrolled(self, model):
        x = torch.randn(25, 90)
        with torch.no_grad():
            full = model.mdn_sequence(x)
            state = model.initial_state("a")
            for t in range(25):
                mix, state = model.mdn_step(x[t], state, "a")
                torch.testing.assert_close(mix.means, full.means[t], rtol=0, atol=1e-6)
                torch.testing.assert_close(mix.stds, full.stds[t], rtol=0, atol=1e-6)
                torch.testing.assert_close(mix.alphas, full.alphas[t], rtol=0, atol=1e-6)
        assert state.steps == 25

    def test_batched_matches_single(self, model):
        x = torch.randn(3, 10, 90)
        with torch.no_grad():
            batched = model.mdn_sequence(x)
            for b in range(3):
                torch.testing.assert_close(batched.alphas[b], model.mdn_sequence(x[b]).alphas, rtol=0, atol=1e-6)

    def test_same_state_same_output(self, model):
        x = torch.randn(90)
        state = model.initial_state()
        a, _ = model.mdn_step(x, state)
        b, _ = model.mdn_step(x, state)
        torch.testing.assert_close(a.alphas, b.alphas, rtol=0, atol=0)

    def test_stale_state(self, model):
        _, state = model.mdn_step(torch.randn(90), model.initial_state("traj-1"), "traj-1")
        with pytest.raises(StaleStateError):
            model.mdn_step(torch.randn(90), state, "traj-2")

    def test_recurrence_affects_alpha_only(self, model):
        x = torch.randn(90)
        _, state = model.mdn_step(torch.randn(90), model.initial_state())
        fresh, _ = model.mdn_step(x, model.initial_state())
        later, _ = model.mdn_step(x, state)
        torch.testing.assert_close(fresh.means, later.means)
        assert not torch.allclose(fresh.alphas, later.alphas)


class TestNormalizer:
    def test_round_trip(self, model):
        r = torch.randn(50, 20) * 3 + 1
        model.fit_normalizer(torch.randn(50, 90), r)
        torch.testing.assert_close(model.denormalize_robot(model.normalize_robot(r)), r, rtol=1e-5, atol=1e-5)
        z = model.normalize_robot(r)
        torch.testing.assert_close(z.mean(0), torch.zeros(20), rtol=0, atol=1e-5)

    def test_constant_feature_scale_floor(self, model):
        model.fit_normalizer(torch.ones(10, 90), torch.ones(10, 20))
        assert (model.human_scale > 0).all()


def _mix(means, variances, alphas):
    means = torch.as_tensor(means, dtype=torch.float64).reshape(len(alphas), -1)
    stds = torch.as_tensor(variances, dtype=torch.float64).reshape(len(alphas), -1).sqrt()
    return MixtureDensity(means, stds, torch.as_tensor(alphas, dtype=torch.float64))


class TestCombineMixture:
    def test_one_hot(self):
        g = combine_mixture(_mix([1.0, 5.0], [2.0, 7.0], [0.0, 1.0]))
        torch.testing.assert_close(g.mean, torch.tensor([5.0], dtype=torch.float64))
        torch.testing.assert_close(g.var, torch.tensor([7.0], dtype=torch.float64))

    def test_equal_halves(self):
        g = combine_mixture(_mix([0.0, 2.0], [1.0, 1.0], [0.5, 0.5]))
        torch.testing.assert_close(g.mean, torch.tensor([1.0], dtype=torch.float64))
        torch.testing.assert_close(g.var, torch.tensor([1.0], dtype=torch.float64))

    def test_three_components(self):
        g = combine_mixture(_mix([1.0, 2.0, 3.0], [1.0, 4.0, 9.0], [0.2, 0.3, 0.5]))
        torch.testing.assert_close(g.mean, torch.tensor([2.3], dtype=torch.float64))
        # 0.2 * 1 + 0.3 * 4 + 0.5 * 9
        torch.testing.assert_close(g.var, torch.tensor([5.9], dtype=torch.float64))

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 6))
    def test_permutation_invariant(self, seed, n, d):
        rng = np.random.default_rng(seed)
        m = _mix(rng.normal(size=(n, d)), rng.uniform(0.01, 4, size=(n, d)), rng.dirichlet(np.ones(n)))
        perm = torch.as_tensor(rng.permutation(n))
        a, b = combine_mixture(m), combine_mixture(MixtureDensity(m.means[perm], m.stds[perm], m.alphas[perm]))
        torch.testing.assert_close(a.mean, b.mean)
        torch.testing.assert_close(a.var, b.var)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 6))
    def test_convex_hull(self, seed, n, d):
        rng = np.random.default_rng(seed)
        m = _mix(rng.normal(size=(n, d)), rng.uniform(0.01, 4, size=(n, d)), rng.dirichlet(np.ones(n)))
        g = combine_mixture(m)
        eps = 1e-12
        assert (g.mean >= m.means.min(0).values - eps).all() and (g.mean <= m.means.max(0).values + eps).all()
        v = m.stds**2
        assert (g.var >= v.min(0).values - eps).all() and (g.var <= v.max(0).values + eps).all()


class TestDiagonalGaussian:
    def test_clamp(self):
        g = DiagonalGaussian.from_log_std(torch.zeros(2), torch.tensor([50.0, -50.0]))
        assert g.std[0] <= np.exp(3) + STD_FLOOR + 1e-4
        assert g.std[1] >= STD_FLOOR

    def test_rsample_shape_and_reproducible(self):
        g = DiagonalGaussian(torch.zeros(3, 2), torch.ones(3, 2))
        a = g.rsample(4, torch.Generator().manual_seed(1))
        b = g.rsample(4, torch.Generator().manual_seed(1))
        assert a.shape == (4, 3, 2)
        torch.testing.assert_close(a, b, rtol=0, atol=0)
