import math

import numpy as np
import pytest

from terasec.agent import (CentralCritic, GrantAgent, OffloadActor,
                           OutcomeActor, PhaseState, TrainConfig,
                           TrainingError, bound_logits, encode_state,
                           explore_group, logit_bias, prune_involved,
                           safe_init, td_target)
from terasec.autodiff import Adam, Tensor, mse, normalized_adjacency
from terasec.env import GS_NODE


# -- logit bounding -----------------------------------------------------------

def test_bound_logits_limits_and_bias_roundtrip():
    z = Tensor(np.array([[1000.0, -1000.0, 0.0]]))
    out = bound_logits(z).data
    assert abs(out[0, 0] - 8.0) < 1e-9
    assert abs(out[0, 1] + 8.0) < 1e-9
    assert out[0, 2] == 0.0
    for target in (2.0, -4.0, 4.0, 0.5):
        got = bound_logits(Tensor(np.array([[logit_bias(target)]]))).data
        assert abs(got[0, 0] - target) < 1e-12


# -- state encoding -----------------------------------------------------------

def test_encode_state_shapes_and_flags(small_env):
    snap = small_env.snapshot()
    c = small_env.c.cfg
    mean = small_env.traffic_cfg.mean_bytes_per_slot
    n = len(snap.nodes)
    s_to = encode_state(snap, "offloading", c.planes, c.sats_per_plane, mean)
    s_ot = encode_state(snap, "outcome", c.planes, c.sats_per_plane, mean)
    assert s_to.features.shape == (n, 9)
    assert s_ot.features.shape == (n, 8)
    # normalized plane/slot indices stay in [0, 1]
    assert np.all(s_to.features[:, :2] >= 0.0)
    assert np.all(s_to.features[:, :2] <= 1.0)
    # membership flags are binary and mark exactly the sources / GS satellite
    phi_off = s_to.features[:, 7]
    assert set(np.unique(phi_off)) <= {0.0, 1.0}
    assert int(phi_off.sum()) == len(small_env.sources)
    phi_gs = s_to.features[:, 8]
    assert int(phi_gs.sum()) == 1
    assert snap.nodes[int(np.argmax(phi_gs))] == small_env.gs_flat
    # expected offload demand normalizes to 1 at the sources
    demand = s_to.features[:, 2]
    assert np.allclose(np.sort(np.unique(demand)), [0.0, 1.0])
    with pytest.raises(TrainingError):
        encode_state(snap, "sideways", c.planes, c.sats_per_plane, mean)


# -- safe initialization ------------------------------------------------------

def test_safe_init_zero_input_oracles():
    rng = np.random.default_rng(0)
    actor_to = OffloadActor(rng, 5, width=8)
    actor_ot = OutcomeActor(rng, 5, width=8)
    safe_init(actor_to, actor_ot)
    # with zero embeddings the heads output exactly their biases
    e2, e4 = math.exp(2.0), math.exp(-4.0)
    self_share = e2 / (e2 + 4.0)
    slack5 = e4 / (4.0 + e4)
    zero = Tensor(np.zeros((1, 8)))
    off = bound_logits(actor_to.head_offload(zero)).softmax_rows().data
    assert abs(off[0, 0] - self_share) < 1e-12
    sub = bound_logits(actor_to.head_subarray(zero)).softmax_rows().data
    assert abs(sub[0, -1] - slack5) < 1e-12
    pw = bound_logits(actor_to.head_power(zero)).softmax_rows().data
    assert abs(pw[0, -1] - e4 / (20.0 + e4)) < 1e-12
    ot_sub = bound_logits(actor_ot.head_subarray(zero)).sigmoid().data
    assert abs(ot_sub[0, 0] - 1.0 / (1.0 + e4)) < 1e-12


def test_safe_init_full_forward_spends_budgets(small_env):
    agent = GrantAgent(small_env, TrainConfig())
    bundle, ratios, _ = agent.act(small_env.snapshot())
    assert np.all(bundle.to_subarrays.sum(axis=1) >= 0.9)
    assert np.all(bundle.to_power.sum(axis=(1, 2)) >= 0.9)
    assert np.all(bundle.ot_subarray >= 0.9)
    assert np.all(bundle.ot_power.sum(axis=1) >= 0.9)
    # tasks start mostly local
    assert np.all(bundle.offload[:, 0] >= 0.5)


# -- exploration --------------------------------------------------------------

def test_explore_group_zero_sum():
    rng = np.random.default_rng(1)
    for _ in range(100):
        r = rng.dirichlet(np.ones(6))
        out = explore_group(r, 0.3, rng)
        assert abs(out.sum() - r.sum()) < 1e-12
        assert np.all(out >= 0.0)


def test_explore_group_withdraws_on_negative():
    rng = np.random.default_rng(2)
    corner = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
    withdrawn = 0
    for _ in range(200):
        out = explore_group(corner, 0.3, rng)
        # noise that would push any component negative is withdrawn entirely;
        # otherwise the zero-sum perturbation keeps the total at 1
        if np.array_equal(out, corner):
            withdrawn += 1
        else:
            assert np.all(out >= 0.0)
            assert abs(out.sum() - 1.0) < 1e-12
    assert withdrawn > 100  # most draws violate the corner and are withdrawn


def test_explore_group_zero_std_identity():
    rng = np.random.default_rng(3)
    r = np.array([0.2, 0.3, 0.5])
    assert np.array_equal(explore_group(r, 0.0, rng), r)


def test_agent_explore_shapes_and_budgets(small_env):
    agent = GrantAgent(small_env, TrainConfig(noise_std=0.3))
    _, ratios, _ = agent.act(small_env.snapshot())
    noisy = agent.explore(ratios)
    for i, (clean, pert) in enumerate(zip(ratios, noisy)):
        assert pert.shape == clean.shape
        assert np.all(pert >= 0.0)
        if i == 3:
            # the scalar explores as the pair (s, 1-s): stays in [0, 1]
            assert np.all(pert <= 1.0)
        else:
            assert np.allclose(pert.sum(axis=-1), clean.sum(axis=-1), atol=1e-9)


# -- TD target ----------------------------------------------------------------

def test_td_target_oracle():
    assert td_target(-10.0, 6.0, 0.5) == -7.0
    assert td_target(-3.0, 100.0, 0.0) == -3.0


def test_train_config_validation():
    with pytest.raises(TrainingError):
        TrainConfig(kappa=1.5)
    with pytest.raises(TrainingError):
        TrainConfig(actor_lr=0.0)
    with pytest.raises(TrainingError):
        TrainConfig(critic_lr=-1.0)


# -- permutation structure ----------------------------------------------------

def _ring_state(rng, n, n_feats):
    a = np.zeros((n, n))
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1.0
    feats = rng.standard_normal((n, n_feats))
    return PhaseState(features=feats, a_norm=normalized_adjacency(a),
                      nodes=list(range(n)), node_index={i: i for i in range(n)})


def _permute_state(state, perm):
    inv = np.argsort(perm)
    return PhaseState(features=state.features[perm],
                      a_norm=state.a_norm[np.ix_(perm, perm)],
                      nodes=[state.nodes[i] for i in perm],
                      node_index={n: int(inv[i])
                                  for i, n in enumerate(state.nodes)})


def test_offload_actor_permutation_equivariance():
    rng = np.random.default_rng(4)
    actor = OffloadActor(np.random.default_rng(0), 2, width=8)
    state = _ring_state(rng, 7, 9)
    perm = rng.permutation(7)
    permuted = _permute_state(state, perm)
    sources = [1, 4, 6]
    out_a = actor.forward(state, sources)
    inv = np.argsort(perm)
    out_b = actor.forward(permuted, [int(inv[s]) for s in sources])
    for a, b in zip(out_a, out_b):
        assert np.max(np.abs(a.data - b.data)) < 1e-10


def test_critic_permutation_invariance():
    rng = np.random.default_rng(5)
    k = 2
    critic = CentralCritic(np.random.default_rng(1), k, width=8)
    n = 6
    s_to = _ring_state(rng, n, 9)
    s_ot = PhaseState(features=rng.standard_normal((n, 8)),
                      a_norm=s_to.a_norm, nodes=s_to.nodes,
                      node_index=s_to.node_index)
    act_to = rng.random((n, 5 + 4 + 4 * k))
    act_ot = rng.random((n, 1 + k))
    q = critic.forward(s_to, s_ot, Tensor(act_to), Tensor(act_ot)).data.item()
    perm = rng.permutation(n)
    p_to = _permute_state(s_to, perm)
    p_ot = PhaseState(features=s_ot.features[perm], a_norm=p_to.a_norm,
                      nodes=p_to.nodes, node_index=p_to.node_index)
    q_p = (critic.forward(p_to, p_ot, Tensor(act_to[perm]),
                               Tensor(act_ot[perm])).data)
    assert abs(q - q_p) < 1e-10


def test_critic_usage_slope_prior():
    rng = np.random.default_rng(6)
    k = 2
    critic = CentralCritic(np.random.default_rng(2), k, width=8)
    n = 4
    s_to = _ring_state(rng, n, 9)
    s_ot = PhaseState(features=rng.standard_normal((n, 8)),
                      a_norm=s_to.a_norm, nodes=s_to.nodes,
                      node_index=s_to.node_index)
    zero_to = Tensor(np.zeros((n, 5 + 4 * k + 4)))
    zero_ot = Tensor(np.zeros((n, 1 + k)))

    def q(a_to, a_ot):
        return critic.forward(s_to, s_ot, a_to, a_ot).data.item()

    # deep output and state skip weights start at zero, so Q is exactly the
    # negative usage prior over the action columns
    base = q(zero_to, zero_ot)
    assert abs(base) < 1e-12
    full_to = np.zeros((n, 5 + 4 + 4 * k))
    full_to[:, 5:] = 1.0
    full_ot = np.ones((n, 1 + k))
    q_full = q(Tensor(full_to), Tensor(full_ot))
    expected = -(4 * critic.SUBARRAY_SLOPE + 4 * k * critic.POWER_SLOPE
                 + critic.SUBARRAY_SLOPE + k * critic.POWER_SLOPE)
    assert abs(q_full - expected) < 1e-12
    # offload shares carry no usage and do not move Q
    off_only = np.zeros((n, 5 + 4 + 4 * k))
    off_only[:, :5] = 1.0
    assert abs(q(Tensor(off_only), zero_ot)) < 1e-12
    # linear in the allocation level
    half_to = full_to * 0.5
    assert abs(q(Tensor(half_to), Tensor(full_ot * 0.5)) - expected / 2) < 1e-12


# -- critic learning on a synthetic fixed point -------------------------------

def test_critic_converges_to_geometric_fixed_point():
    rng = np.random.default_rng(7)
    k = 2
    critic = CentralCritic(np.random.default_rng(3), k, width=8)
    n = 5
    s_to = _ring_state(rng, n, 9)
    s_ot = PhaseState(features=rng.standard_normal((n, 8)),
                      a_norm=s_to.a_norm, nodes=s_to.nodes,
                      node_index=s_to.node_index)
    a_to = Tensor(rng.random((n, 5 + 4 + 4 * k)))
    a_ot = Tensor(rng.random((n, 1 + k)))
    params = critic.parameters()
    opt = Adam(params, lr=0.02)
    c, kappa = -2.0, 0.5
    target = c / (1.0 - kappa)  # geometric series: -4
    q = 0.0
    for _ in range(2000):
        for p in params:
            p.grad = None
        q_t = critic.forward(s_to, s_ot, a_to, a_ot)
        y = td_target(c, q_t.data.item(), kappa)
        loss = mse(q_t, Tensor(np.array([[y]])))
        loss.backward()
        opt.step()
        q = q_t.data.item()
        if abs(q / target - 1.0) < 0.01:
            break
    assert abs(q / target - 1.0) < 0.01


# -- actor ascent probe -------------------------------------------------------

def test_actor_step_increases_q(small_env):
    agent = GrantAgent(small_env, TrainConfig(actor_lr=1e-7, noise_std=0.0))
    snap = small_env.snapshot()
    s_to, s_ot = agent.encode(snap)
    n = len(s_to.nodes)

    def q_pi():
        tensors = agent.actor_tensors(s_to, s_ot)
        a_to, a_ot = agent._action_node_tensors(tensors, n)
        return agent.q_value(s_to, s_ot, a_to, a_ot)

    before = q_pi()
    for p in agent.actor_params + agent.critic_params:
        p.grad = None
    before.backward()
    agent.actor_opt.step(maximize=True)
    after = q_pi().data.item()
    assert after >= before.data.item() - 1e-9


def test_train_step_rejects_incomplete_transition(small_env):
    agent = GrantAgent(small_env, TrainConfig())
    with pytest.raises(TrainingError):
        agent.train_step(None, None, -1.0, None)


# -- sizing -------------------------------------------------------------------

def test_parameter_count(small_env):
    agent = GrantAgent(small_env, TrainConfig())
    count = agent.parameter_count()
    assert count == 96_092
    assert 5e4 <= count <= 5e5


def test_determinism_same_seed(small_env):
    a = GrantAgent(small_env, TrainConfig(seed=9))
    b = GrantAgent(small_env, TrainConfig(seed=9))
    snap = small_env.snapshot()
    ba, ra, _ = a.act(snap, explore=True)
    bb, rb, _ = b.act(snap, explore=True)
    for x, y in zip(ra, rb):
        assert np.array_equal(x, y)
    assert np.array_equal(ba.offload, bb.offload)


# -- involved-set pruning -----------------------------------------------------

def test_prune_involved_toy():
    sources = [10]
    neighbor_order = {10: [2, 11, 30, 40]}
    route_hops = {10: ((10, 5),), 2: ((2, 10), (10, 5)), 5: ((5, GS_NODE),)}
    involved, node_index, adj = prune_involved(sources, neighbor_order,
                                               route_hops, 5)
    assert involved == [2, 5, 10, 11, 30, 40]
    assert node_index[10] == involved.index(10)
    assert adj.shape == (6, 6)
    assert np.array_equal(adj, adj.T)
    # source-neighbor and route-hop edges exist; GS pseudo node adds none
    for nbr in (2, 11, 30, 40):
        assert adj[node_index[10], node_index[nbr]] == 1.0
    assert adj[node_index[10], node_index[5]] == 1.0
    assert adj[node_index[2], node_index[10]] == 1.0
    assert adj[node_index[11], node_index[30]] == 0.0


def test_prune_involved_minimal():
    involved, node_index, adj = prune_involved([], {}, {}, 7)
    assert involved == [7]
    assert node_index == {7: 0}
    assert np.array_equal(adj, np.zeros((1, 1)))
