import math

import numpy as np
import pytest

from rerec.env import EnvState
from rerec.errors import ExhaustionError
from rerec.policy import (ActorCritic, Transition, a2c_gradients, a2c_update, act, encode_state,
                          masked_softmax, train_policy, write_curve)
from rerec.tensorcore import forward, max_relative_error, numeric_gradients

UV = np.array([[1.0, 2.0], [3.0, -1.0]])
IV = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])


def test_encode_empty_history():
    enc = encode_state(EnvState(1), UV, IV, 10)
    np.testing.assert_array_equal(enc, [3.0, -1.0, 0.0, 0.0, 0.0])


def test_encode_single_item():
    enc = encode_state(EnvState(0, items=(2,), rewards=(1.0,)), UV, IV, 10)
    np.testing.assert_array_equal(enc, [1.0, 2.0, 2.0, 2.0, 0.1])


def test_encode_equal_weights_average():
    enc = encode_state(EnvState(0, items=(0, 1), rewards=(1.0, 1.0)), UV, IV, 4)
    np.testing.assert_allclose(enc, [1.0, 2.0, 0.5, 0.5, 0.5], atol=1e-15)
    zero = encode_state(EnvState(0, items=(0, 1), rewards=(0.0, 0.0)), UV, IV, 4)
    np.testing.assert_array_equal(zero, enc)       # all-zero rewards weigh uniformly


def test_encode_window_only():
    s = EnvState(0, items=(0, 1, 2), rewards=(1.0, 0.0, 1.0), window=2)
    np.testing.assert_allclose(encode_state(s, UV, IV, 6)[2:4], [2.0, 2.0])


def test_softmax_examples():
    np.testing.assert_allclose(masked_softmax(np.zeros(4)), [0.25] * 4)
    np.testing.assert_allclose(masked_softmax([1.0, 0.0]), [math.e / (math.e + 1), 1 / (math.e + 1)])
    assert masked_softmax([1.0, 0.0])[0] == pytest.approx(0.7311, abs=1e-4)
    p = masked_softmax([3.0, 1.0, 2.0], np.array([True, False, True]))
    assert p.tolist() == [0.0, 1.0, 0.0]
    with pytest.raises(ExhaustionError):
        masked_softmax([1.0, 2.0], np.array([True, True]))


def test_softmax_shift_invariance():
    rng = np.random.default_rng(0)
    for _ in range(100):
        z = rng.normal(size=7)
        c = rng.uniform(-50, 50)
        a, b = masked_softmax(z), masked_softmax(z + c)
        assert np.argmax(a) == np.argmax(b)
        assert np.max(np.abs(a - b)) <= 1e-12


class FixedScores:
    def __init__(self, z):
        self.z = np.asarray(z, dtype=float)

    def scores(self, encoding):
        return self.z


def test_act_forced_choice_and_masking():
    rng = np.random.default_rng(0)
    mask = np.array([True, False, True, True])
    item, lp = act(FixedScores([5.0, 0.0, 9.0, 1.0]), None, mask, rng)
    assert item == 1 and lp == 0.0
    mask = np.array([False, True, False, True, True])
    draws = {act(FixedScores([0, 10, 0, 10, 10]), None, mask, rng)[0] for _ in range(100_000)}
    assert draws == {0, 2}


def make_model(seed=0, entropy_coef=0.01, lr=1e-2, hidden=8):
    rng = np.random.default_rng(seed)
    return ActorCritic.init(rng.normal(size=(3, 2)), rng.normal(size=(5, 2)), hidden=hidden,
                            entropy_coef=entropy_coef, lr=lr, seed=seed)


def random_batch(model, n, seed, done_every=3):
    rng = np.random.default_rng(seed)
    w = model.encoding_dim
    out = []
    for j in range(n):
        mask = np.zeros(5, dtype=bool)
        mask[rng.choice(5, 2, replace=False)] = True
        action = int(rng.choice(np.flatnonzero(~mask)))
        out.append(Transition(rng.normal(size=w), action, float(rng.random()), rng.normal(size=w),
                              j % done_every == 0, mask))
    return out


def test_advantage_hand_values():
    model = make_model()
    # make the critic constant 2 by zeroing the last layer and setting its bias
    model.critic.weights[-1][:] = 0
    model.critic.biases[-1][:] = 2.0
    w = model.encoding_dim
    batch = [Transition(np.zeros(w), 0, 1.0, np.ones(w), False, np.zeros(5, bool)),
             Transition(np.zeros(w), 1, 1.0, np.ones(w), True, np.zeros(5, bool))]
    *_, adv = a2c_gradients(model, batch)
    np.testing.assert_allclose(adv, [0.8, -1.0], atol=1e-12)


def test_zero_advantage_no_entropy_keeps_actor():
    model = make_model(entropy_coef=0.0)
    model.critic.weights[-1][:] = 0
    model.critic.biases[-1][:] = 0.5
    w = model.encoding_dim
    batch = [Transition(np.full(w, 0.1), 2, 0.5, np.zeros(w), True, np.zeros(5, bool))]
    before = [p.copy() for p in model.actor.params()]
    a2c_update(model, batch)
    assert all(np.array_equal(a, b) for a, b in zip(before, model.actor.params()))


def test_critic_gradient_matches_finite_differences():
    model = make_model(seed=3)
    batch = random_batch(model, 6, seed=1)
    _, _, _, gc, _ = a2c_gradients(model, batch)
    enc = np.stack([t.encoding for t in batch])
    r = np.array([t.reward for t in batch])
    done = np.array([t.done for t in batch], dtype=float)
    v_next = forward(model.critic, np.stack([t.next_encoding for t in batch]))[:, 0]
    target = r + model.gamma * v_next * (1 - done)        # held fixed: bootstrap is not differentiated

    def loss():
        return float(np.mean((target - forward(model.critic, enc)[:, 0]) ** 2))
    num = numeric_gradients(loss, model.critic.params())
    assert max_relative_error(gc, num) < 1e-4


def test_actor_gradient_matches_finite_differences():
    model = make_model(seed=4, entropy_coef=0.05)
    batch = random_batch(model, 6, seed=2)
    _, _, ga, _, adv = a2c_gradients(model, batch)
    enc = np.stack([t.encoding for t in batch])
    masks = np.stack([t.mask for t in batch])
    actions = np.array([t.action for t in batch])

    def loss():
        p = masked_softmax(forward(model.actor, enc) @ model.item_vectors.T, masks)
        logp = np.log(np.where(p > 0, p, 1.0))
        h = -np.sum(p * logp, axis=1)
        return float(np.mean(-adv * logp[np.arange(len(batch)), actions]) - model.entropy_coef * h.mean())
    num = numeric_gradients(loss, model.actor.params())
    assert max_relative_error(ga, num) < 1e-4


def test_bandit_gradient_direction():
    uv = np.array([[0.3, -0.2]])
    iv = np.array([[1.0, 0.0], [0.0, 1.0]])
    model = ActorCritic.init(uv, iv, hidden=8, lr=1e-2, seed=0)
    enc = encode_state(EnvState(0), uv, iv, 1)
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, _ = act(model, enc, None, rng)
        a2c_update(model, [Transition(enc, a, 1.0 if a == 0 else 0.0, enc, True, np.zeros(2, bool))])
    assert masked_softmax(model.scores(enc))[0] > 0.9


def test_critic_converges_on_chain():
    model = make_model(seed=5, lr=1e-2, hidden=16)
    encs = [np.array([1.0, 0, 0, 0, 0]), np.array([0, 1.0, 0, 0, 0.5]), np.array([0, 0, 1.0, 0, 1.0])]
    rewards = [1.0, 0.5, 2.0]
    true_v = [1 + 0.9 * (0.5 + 0.9 * 2.0), 0.5 + 0.9 * 2.0, 2.0]
    m = np.zeros(5, bool)
    batch = [Transition(encs[0], 0, rewards[0], encs[1], False, m),
             Transition(encs[1], 1, rewards[1], encs[2], False, m),
             Transition(encs[2], 2, rewards[2], encs[2], True, m)]
    for _ in range(3000):
        a2c_update(model, batch)
    got = [float(model.value(e)) for e in encs]
    np.testing.assert_allclose(got, true_v, atol=0.05)


def test_training_determinism_and_zero_episodes(tiny_world, tiny_cfg, tmp_path):
    from rerec.pipeline import make_env, new_policy
    env = make_env(tiny_world, tiny_cfg)
    model = new_policy(tiny_world, tiny_cfg)
    untouched = [p.copy() for p in model.actor.params()]
    same, curve = train_policy(model, env, 0, seed=1)
    assert curve == [] and all(np.array_equal(a, b) for a, b in zip(untouched, same.actor.params()))
    curves = [train_policy(new_policy(tiny_world, tiny_cfg), env, 15, seed=4)[1] for _ in range(2)]
    assert curves[0] == curves[1]
    write_curve(tmp_path / "c.csv", curves[0])
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "episode,R_tra,Length,actor_loss,critic_loss" and len(lines) == 16


def test_checkpoint_round_trip(tmp_path):
    model = make_model(seed=2)
    model.save(tmp_path / "p.ckpt", {"note": "x"})
    back = ActorCritic.load(tmp_path / "p.ckpt", model.user_vectors, model.item_vectors)
    enc = np.linspace(-1, 1, model.encoding_dim)
    np.testing.assert_allclose(back.scores(enc), model.scores(enc), atol=1e-5)
    assert back.meta["note"] == "x" and back.gamma == model.gamma


def test_gamma_validated():
    with pytest.raises(ValueError):
        make_model().__class__.init(UV, IV, gamma=1.0)
