import numpy as np
import pytest

from cacc_rl.comm import (
    CaActorNets,
    CaCriticNets,
    actor_sweep,
    critic_sweep,
    delayed_mode_step,
    sweep_backward,
    zero_messages,
)
from cacc_rl.errors import UsageError

from gradcases import run_case


def actor_nets(rng, d=3, hidden=(6, 5), bound=2.0):
    nets = CaActorNets.create(4, d, hidden, hidden, bound, rng)
    # enlarge the action column so the head is not near zero
    last = nets.f_bwd.n_layers - 1
    nets.f_bwd.params[f"W{last}"][:, 0] = rng.normal(size=nets.f_bwd.params[f"W{last}"].shape[0])
    nets.f_bwd.params.mark_changed()
    return nets


def chained_actor(nets, obs):
    """Reference sweep written out with one network call per vehicle."""
    n, d = len(obs), nets.d_msg
    F = [None] * n
    incoming = np.zeros(d)
    for i in reversed(range(n)):
        F[i] = nets.f_fwd(np.concatenate([obs[i], incoming]))
        incoming = F[i] if d > 0 else incoming
    acts, incoming = [], np.zeros(d)
    for i in range(n):
        out = nets.f_bwd(np.concatenate([F[i], incoming]))
        acts.append(nets.head_bound * np.tanh(out[0]))
        incoming = out[1:]
    return np.array(acts)


def test_single_follower_is_two_chained_nets(rng):
    nets = actor_nets(rng)
    o = rng.normal(size=4)
    res = actor_sweep(o[None], nets)
    feat = nets.f_fwd(np.concatenate([o, np.zeros(3)]))
    head = nets.f_bwd(np.concatenate([feat, np.zeros(3)]))[0]
    np.testing.assert_allclose(res.outputs, [2.0 * np.tanh(head)], atol=1e-14)


def test_three_followers_match_hand_chained_forwards(rng):
    nets = actor_nets(rng)
    obs = rng.normal(size=(3, 4))
    np.testing.assert_allclose(actor_sweep(obs, nets).outputs, chained_actor(nets, obs), atol=1e-14)


def test_batched_sweep_matches_per_platoon_sweeps(rng):
    nets = actor_nets(rng)
    obs = rng.normal(size=(4, 3, 4))
    batched = actor_sweep(obs, nets).outputs
    for b in range(4):
        np.testing.assert_allclose(batched[b], actor_sweep(obs[b], nets).outputs, atol=1e-14)


def test_identical_observations_without_messages_give_identical_actions(rng):
    nets = actor_nets(rng, d=0)
    obs = np.tile(rng.normal(size=4), (5, 1))
    acts = actor_sweep(obs, nets).outputs
    assert np.all(acts == acts[0])


def test_identical_observations_with_messages_give_distinct_features(rng):
    nets = actor_nets(rng, d=3, hidden=(16, 16))
    obs = np.tile(rng.normal(size=4), (3, 1))
    feats = actor_sweep(obs, nets).forward_messages
    assert not np.allclose(feats[0], feats[2])


def test_no_comm_keeps_private_feature_width(rng):
    nets = CaActorNets.create(4, 0, (8,), (8,), 2.0, rng)
    res = actor_sweep(rng.normal(size=(2, 4)), nets)
    assert res.forward_messages.shape == (2, 8)
    assert res.backward_messages.shape == (2, 0)


def test_critic_two_followers_match_hand_chained_forwards(rng):
    nets = CaCriticNets.create(4, 2, (5,), (4, 3), rng)
    obs, act = rng.normal(size=(2, 4)), rng.normal(size=2)
    f2 = nets.f_fwd(np.concatenate([obs[1], [act[1]], np.zeros(2)]))
    f1 = nets.f_fwd(np.concatenate([obs[0], [act[0]], f2]))
    out1 = nets.f_bwd(np.concatenate([f1, np.zeros(2)]))
    out2 = nets.f_bwd(np.concatenate([f2, out1[1:]]))
    np.testing.assert_allclose(critic_sweep(obs, act, nets).outputs, [out1[0], out2[0]], atol=1e-14)


def test_critic_single_follower_is_two_stage_critic(rng):
    nets = CaCriticNets.create(4, 3, (5,), (5,), rng)
    o, a = rng.normal(size=4), 0.7
    feat = nets.f_fwd(np.concatenate([o, [a], np.zeros(3)]))
    q = nets.f_bwd(np.concatenate([feat, np.zeros(3)]))[0]
    np.testing.assert_allclose(critic_sweep(o[None], [a], nets).outputs, [q], atol=1e-14)


@pytest.mark.parametrize("j", [0, 1, 2])
def test_every_q_responds_to_any_single_action(rng, j):
    nets = CaCriticNets.create(4, 3, (8,), (8,), rng)
    obs, act = rng.normal(size=(3, 4)), rng.normal(size=3)
    q0 = critic_sweep(obs, act, nets).outputs
    act2 = act.copy()
    act2[j] += 0.5
    q1 = critic_sweep(obs, act2, nets).outputs
    assert np.all(q1 != q0)


def test_critic_rejects_misaligned_actions(rng):
    nets = CaCriticNets.create(4, 3, (5,), (5,), rng)
    with pytest.raises(UsageError):
        critic_sweep(np.zeros((3, 4)), np.zeros(2), nets)


def test_sweep_rejects_wrong_width(rng):
    with pytest.raises(UsageError):
        actor_sweep(np.zeros((3, 5)), actor_nets(rng))


@pytest.mark.parametrize("kind", ["actor-sweep", "critic-sweep"])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_sweep_gradients_match_finite_differences(kind, n):
    err, desc = run_case(kind, n, np.random.default_rng(100 + n))
    assert err < 1e-4, desc


def test_sweep_backward_single_follower_equals_chained_backward(rng):
    nets = actor_nets(rng)
    o = rng.normal(size=4)
    res = actor_sweep(o[None], nets)
    sweep_backward(res, [1.0])
    grads = {k: ps.grad.copy() for k, ps in nets.params().items()}
    for ps in nets.params().values():
        ps.zero_grad()
    feat, t1 = nets.f_fwd.forward(np.concatenate([o, np.zeros(3)])[None])
    out, t2 = nets.f_bwd.forward(np.concatenate([feat[0], np.zeros(3)])[None])
    g_head = 2.0 * (1.0 - np.tanh(out[0, 0]) ** 2)
    g_in = nets.f_bwd.backward(t2, np.concatenate([[g_head], np.zeros(3)])[None])
    nets.f_fwd.backward(t1, g_in[:, :nets.d_feat])
    for k, ps in nets.params().items():
        np.testing.assert_allclose(ps.grad, grads[k], atol=1e-14)


def test_zero_output_grads_accumulate_nothing(rng):
    nets = actor_nets(rng)
    res = actor_sweep(rng.normal(size=(3, 4)), nets)
    gx = sweep_backward(res, np.zeros(3))
    assert all(np.all(ps.grad == 0) for ps in nets.params().values())
    assert np.all(gx == 0)


def test_stale_sweep_tapes_rejected(rng):
    nets = actor_nets(rng)
    res = actor_sweep(rng.normal(size=(3, 4)), nets)
    nets.f_fwd.params.mark_changed()
    with pytest.raises(UsageError):
        sweep_backward(res, np.ones(3))


def _sensitivity(nets, obs, i, j, eps=1e-3):
    base = actor_sweep(obs, nets).outputs[i]
    pert = obs.copy()
    pert[j] += eps
    return abs(actor_sweep(pert, nets).outputs[i] - base)


def test_actions_depend_on_every_observation_through_messages(rng):
    nets = actor_nets(rng, d=4, hidden=(12, 12))
    obs = rng.normal(size=(3, 4))
    for i in range(3):
        for j in range(3):
            assert _sensitivity(nets, obs, i, j) > 0


def test_without_messages_actions_are_local(rng):
    nets = actor_nets(rng, d=0, hidden=(12, 12))
    obs = rng.normal(size=(3, 4))
    for i in range(3):
        assert _sensitivity(nets, obs, i, i) > 0
        for j in range(3):
            if j != i:
                assert _sensitivity(nets, obs, i, j) == 0


def test_delayed_first_tick_single_follower_equals_sweep(rng):
    nets = actor_nets(rng)
    o = rng.normal(size=(1, 4))
    acts, _ = delayed_mode_step(o, nets, zero_messages(1, 3))
    np.testing.assert_allclose(acts, actor_sweep(o, nets).outputs, atol=1e-14)


def test_delayed_mode_reaches_sync_result_with_constant_observations(rng):
    n = 3
    nets = actor_nets(rng)
    obs = rng.normal(size=(n, 4))
    prev = zero_messages(n, 3)
    # forward messages settle after N ticks, backward messages N ticks later
    for _ in range(2 * n + 1):
        acts, prev = delayed_mode_step(obs, nets, prev)
    sync = actor_sweep(obs, nets)
    np.testing.assert_allclose(acts, sync.outputs, atol=1e-12)
    np.testing.assert_allclose(prev[0], sync.forward_messages, atol=1e-12)
    np.testing.assert_allclose(prev[1], sync.backward_messages, atol=1e-12)


def test_delayed_mode_rejects_wrong_message_shapes(rng):
    nets = actor_nets(rng)
    with pytest.raises(UsageError):
        delayed_mode_step(np.zeros((3, 4)), nets, zero_messages(2, 3))


def test_parameter_count_does_not_depend_on_platoon_size(rng):
    nets = actor_nets(rng)
    sizes = {k: ps.size for k, ps in nets.params().items()}
    for n in (1, 3, 10):
        actor_sweep(rng.normal(size=(n, 4)), nets)
        assert {k: ps.size for k, ps in nets.params().items()} == sizes
