import numpy as np
import pytest

from rerec.dataset import EmbeddingTable, InteractionEvent
from rerec.diffusion import (DiffusionModel, NoiseSchedule, build_schedule, diffusion_loss, q_sample,
                             reverse_chain, reverse_sample, time_embedding, train_diffusion)
from rerec.errors import ConfigError, ShapeError
from rerec.tensorcore import DenseNet


def random_embeddings(U, I, d, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingTable(rng.normal(0, 0.3, (U, d)), rng.normal(0, 0.3, (I, d)), np.zeros(U),
                          np.zeros(I), 0.5)


def test_schedule_by_hand():
    s = build_schedule(2, 0.1, 0.1)
    np.testing.assert_allclose(s.alpha_bar, [0.9, 0.81], rtol=0, atol=1e-15)


@pytest.mark.parametrize("T,b0,b1", [(2, 0.1, 0.1), (50, 1e-4, 0.02), (10, 0.05, 0.5)])
def test_schedule_invariants(T, b0, b1):
    s = build_schedule(T, b0, b1)
    assert s.beta[0] == b0 and s.beta[-1] == pytest.approx(b1, abs=1e-15)
    assert np.all(np.diff(s.alpha_bar) < 0)
    prev = np.concatenate([[1.0], s.alpha_bar[:-1]])
    rel = np.abs(s.alpha_bar - prev * (1.0 - s.beta)) / s.alpha_bar
    assert rel.max() <= 1e-15
    np.testing.assert_allclose(s.alpha_bar, np.cumprod(1 - np.linspace(b0, b1, T)), rtol=1e-13)


@pytest.mark.parametrize("args", [(50, 1e-4, 1.0), (1, 0.1, 0.1), (5, 0.2, 0.1), (5, 0.0, 0.1)])
def test_schedule_rejects_bad_ranges(args):
    with pytest.raises(ConfigError):
        build_schedule(*args)


def test_q_sample_boundary_and_hand_value():
    s = build_schedule(5, 0.01, 0.1)
    assert q_sample(0.37, 0, 0.9, s) == 0.37
    s1 = NoiseSchedule.from_betas([0.25])
    assert q_sample(0.0, 1, 1.0, s1) == pytest.approx(0.5, abs=1e-15)


def test_q_sample_index_error():
    s = build_schedule(5, 0.01, 0.1)
    with pytest.raises(IndexError):
        q_sample(0.1, 6, 0.0, s)
    with pytest.raises(IndexError):
        q_sample(0.1, -1, 0.0, s)


def test_q_sample_moments_every_step():
    s = build_schedule(10, 1e-4, 0.2)
    rng = np.random.default_rng(99)
    n, x0 = 100_000, 0.7
    abar = np.cumprod(1.0 - s.beta)
    for t in range(1, 11):
        x = q_sample(x0, t, rng.standard_normal(n), s)
        mean_t, var_t = np.sqrt(abar[t - 1]) * x0, 1.0 - abar[t - 1]
        assert abs(x.mean() - mean_t) < 3 * np.sqrt(var_t / n)
        assert abs(x.var() - var_t) < 3 * var_t * np.sqrt(2.0 / (n - 1))


def test_time_embedding_shape_and_range():
    e = time_embedding(np.arange(1, 51), 16, 50)
    assert e.shape == (50, 16)
    assert np.all(np.abs(e) <= 1.0)
    np.testing.assert_allclose(e[:, 0], np.sin(np.arange(1, 51)))   # period 1
    np.testing.assert_allclose(e[:, 7], np.sin(np.arange(1, 51) / 50.0))  # period T


def test_model_input_width():
    m = DiffusionModel.init(4, build_schedule(5, 0.01, 0.1), hidden=8)
    assert m.net.layer_dims == [1 + 8 + 16, 8, 8, 1]
    with pytest.raises(ShapeError):
        m.predict_eps(np.zeros(2), np.zeros((2, 5)), 1)


def test_zero_net_loss_is_noise_variance():
    m = DiffusionModel.init(3, build_schedule(20, 1e-4, 0.02), hidden=8)
    for w, b in zip(m.net.weights, m.net.biases):
        w[:] = 0
        b[:] = 0
    rng = np.random.default_rng(0)
    n = 20_000
    loss, _, _ = diffusion_loss(m, rng.random(n), rng.normal(size=(n, 6)), rng.integers(1, 21, n),
                                rng.standard_normal(n))
    assert loss == pytest.approx(1.0, abs=0.05)


def _events(n, U, I, reward=None, seed=0):
    rng = np.random.default_rng(seed)
    return [InteractionEvent(j % U, int(rng.integers(I)), 0.0,
                             reward if reward is not None else float(rng.random()), j // U)
            for j in range(n)]


def test_training_reduces_loss_and_is_deterministic():
    emb = random_embeddings(10, 8, 4)
    ev = _events(50, 10, 8)
    curves = []
    for _ in range(2):
        m = DiffusionModel.init(4, build_schedule(50, 1e-4, 0.02), seed=1)
        _, curve = train_diffusion(ev, emb, m, epochs=30, batch_size=64, lr=2e-3, seed=5)
        curves.append(curve)
    assert curves[0] == curves[1]
    assert curves[0][-1] < curves[0][0]
    assert np.isfinite(curves[0][-1])


def test_constant_reward_loss_drops_below_half():
    emb = random_embeddings(10, 8, 4)
    ev = _events(50, 10, 8, reward=0.5)
    finals = []
    for seed in range(3):
        m = DiffusionModel.init(4, build_schedule(50, 1e-4, 0.02), seed=seed)
        _, curve = train_diffusion(ev, emb, m, epochs=200, seed=seed)
        finals.append(curve[-1])
    assert np.mean(finals) < 0.5


def test_t1_exclusion_flag():
    emb = random_embeddings(4, 4, 2)
    m = DiffusionModel.init(2, NoiseSchedule.from_betas([0.1]), hidden=4, include_t1=False)
    with pytest.raises(ConfigError):
        train_diffusion(_events(8, 4, 4), emb, m, epochs=1)


def test_reverse_single_step_zero_eps():
    s = NoiseSchedule.from_betas([0.1])
    m = DiffusionModel.init(2, s, hidden=4)
    x0 = reverse_chain(m, np.zeros((1, 4)), np.zeros((1, 1)), eps_fn=lambda x, c, t: np.zeros_like(x),
                       x_start=0.8)
    assert x0[0] == pytest.approx(0.8 / np.sqrt(0.9), abs=1e-15)


def test_teacher_forced_reconstruction():
    s = NoiseSchedule.from_betas([0.3])
    m = DiffusionModel.init(2, s, hidden=4)
    rng = np.random.default_rng(3)
    for x0 in (0.0, 0.25, 0.9):
        eps = rng.standard_normal()
        x1 = q_sample(x0, 1, eps, s)
        out = reverse_chain(m, np.zeros((1, 4)), np.zeros((1, 1)),
                            eps_fn=lambda x, c, t: np.full_like(x, eps), x_start=x1)
        assert abs(out[0] - x0) < 1e-6


def test_reverse_sample_streams():
    m = DiffusionModel.init(3, build_schedule(10, 1e-4, 0.02), hidden=8, seed=2)
    c = np.linspace(-1, 1, 6)
    a = reverse_sample(m, c, np.random.default_rng(1))
    b = reverse_sample(m, c, np.random.default_rng(2))
    assert a != b
    assert reverse_sample(m, c, np.random.default_rng(1)) == a
    assert -0.5 <= a <= 1.5


def test_reverse_chain_noise_layout_matches_single():
    m = DiffusionModel.init(3, build_schedule(6, 1e-3, 0.05), hidden=8, seed=2)
    c = np.random.default_rng(0).normal(size=(4, 6))
    noise = np.random.default_rng(5).standard_normal((4, 6))
    batch = reverse_chain(m, c, noise)
    single = [reverse_chain(m, c[j:j + 1], noise[j:j + 1])[0] for j in range(4)]
    np.testing.assert_allclose(batch, single, rtol=0, atol=1e-12)


def test_checkpoint_round_trip(tmp_path):
    m = DiffusionModel.init(3, build_schedule(7, 1e-4, 0.02), hidden=8, seed=4)
    m.save(tmp_path / "d.ckpt")
    back = DiffusionModel.load(tmp_path / "d.ckpt")
    assert np.array_equal(back.schedule.alpha_bar, m.schedule.alpha_bar)
    assert back.net.layer_dims == m.net.layer_dims
    np.testing.assert_allclose(back.net.weights[0], m.net.weights[0], rtol=1e-6)
