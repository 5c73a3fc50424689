import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from utils import agents, nn
from utils.agents import CORRELATED, NON_CORRELATED
from utils.errors import InvalidArgument, NumericalAbort, StorageError
from utils.game import rollout

HIDDEN = (6, 5)


def set_output_bias(model, bias):
    start, stop, _ = model.index_map()['b3']
    params = model.params.copy()
    params[start:stop] = bias
    model.params = params


def zero_model(in_size, out_size, bias=None):
    model = nn.Mlp(in_size, out_size, hidden=HIDDEN)
    if bias is not None:
        set_output_bias(model, bias)
    return model


def rngs(count, seed=0):
    return [np.random.default_rng([seed, k]) for k in range(count)]


def test_sampling_frequencies_follow_the_policy():
    agent = agents.Agent(0, NON_CORRELATED, 2, [3, 2], hidden=HIDDEN)
    agent.policy.model.params = np.zeros(agent.policy.model.params.size)
    set_output_bias(agent.policy.model, np.log([0.2, 0.3, 0.5]))
    decision = agent.decide(np.zeros((20000, 2)), rngs(20000), None)
    frequencies = np.bincount(decision.actions, minlength=3) / 20000
    assert_allclose(frequencies, [0.2, 0.3, 0.5], atol=0.02)
    assert decision.conditioning is None


def test_dominant_logit_is_almost_always_chosen():
    policy = agents.CorrelatedPolicy(zero_model(2 + 4, 3, [20.0, 0.0, 0.0]), (4,))
    opponent_actions = np.random.default_rng(1).integers(4, size=(5000, 1))
    actions, logp = agents.sample_conditional(policy, np.zeros((5000, 2)), opponent_actions, rngs(5000))
    assert np.mean(actions == 0) >= 0.999
    assert np.all(logp <= 0.0)


def test_correlated_input_layout():
    policy = agents.CorrelatedPolicy(zero_model(2 + 5, 2), (2, 3))
    inputs = policy.inputs(np.array([[0.5, -0.5]]), [[1, 2]])
    assert_array_equal(inputs, [[0.5, -0.5, 0, 1, 0, 0, 1]])
    with pytest.raises(InvalidArgument):
        agents.encode_opponents([[1]], (2, 3))


def test_previous_opponent_encoding_starts_with_zeros():
    actions = np.array([[0, 1], [1, 0], [1, 1]])
    encoded = agents.previous_opponent_encoding(actions, [1], (2,), 3)
    assert_array_equal(encoded, [[0, 0], [0, 1], [1, 0]])


def test_marginal_at_a_deterministic_opponent_is_the_conditional():
    agent = agents.Agent(0, CORRELATED, 3, [3, 2], hidden=HIDDEN, seed=4, samples=8)
    opponent = agent.opponent_model.model
    opponent.params = np.zeros(opponent.params.size)
    set_output_bias(opponent, [60.0, -60.0])
    observations = np.random.default_rng(2).normal(size=(4, 3))
    conditional = agent.policy.distribution(agent.policy.inputs(observations, np.zeros((4, 1), dtype=np.int64)))
    assert_allclose(agent.marginal(observations, samples=8), conditional, atol=1e-12)


def test_marginal_action_reports_its_conditioning():
    agent = agents.Agent(1, CORRELATED, 3, [2, 2, 3], hidden=HIDDEN, seed=5, samples=4)
    decision = agent.decide(np.zeros((10, 3)), rngs(10), None)
    assert decision.conditioning.shape == (10, 2)
    assert np.all(decision.conditioning[:, 0] < 2) and np.all(decision.conditioning[:, 1] < 3)


def test_marginalization_needs_samples():
    agent = agents.Agent(0, CORRELATED, 3, [2, 2], hidden=HIDDEN)
    with pytest.raises(InvalidArgument):
        agents.marginal_distribution(agent.policy, np.zeros((1, 3)), agent.opponent_model, 0, rngs(1))


def test_uniform_opponent_model_cross_entropy():
    model = agents.OpponentModel(zero_model(3, 5), (5,))
    loss, gradient = agents.opponent_model_loss(model, np.ones((6, 3)), np.arange(6)[:, None] % 5)
    assert loss == pytest.approx(np.log(5))
    assert gradient.shape == (model.model.params.size,)


def test_opponent_joint_distribution_is_row_major():
    model = agents.OpponentModel(zero_model(1, 5), (2, 3))
    set_output_bias(model.model, np.log([0.25, 0.75, 0.2, 0.3, 0.5]))
    joint = model.joint_distribution(np.zeros((1, 1)))[0]
    assert_allclose(joint, np.outer([0.25, 0.75], [0.2, 0.3, 0.5]).ravel())


def test_opponent_model_loss_gradient_matches_finite_differences():
    model = agents.OpponentModel(nn.Mlp(3, 5, hidden=HIDDEN, rng=np.random.default_rng(6)), (2, 3))
    rng = np.random.default_rng(7)
    observations = rng.normal(size=(9, 3))
    actions = np.stack([rng.integers(2, size=9), rng.integers(3, size=9)], axis=1)
    _, gradient = agents.opponent_model_loss(model, observations, actions)

    def loss(params):
        candidate = agents.OpponentModel(model.model.copy(), (2, 3))
        candidate.model.params = params
        return agents.opponent_model_loss(candidate, observations, actions)[0]

    assert nn.finite_difference_check(loss, model.model.params, gradient) <= 1e-6


def test_positive_advantage_raises_log_probability():
    policy = agents.NonCorrelatedPolicy(nn.Mlp(3, 4, hidden=HIDDEN, rng=np.random.default_rng(8)))
    inputs = np.random.default_rng(9).normal(size=(5, 3))
    actions = np.full(5, 1)
    before = policy.log_prob(inputs, actions)
    optimizer = nn.Adam(policy.model.params.size, lr=1e-3)
    agents.policy_gradient_step(policy, optimizer, inputs, actions, np.ones(5), lam=0.0)
    assert np.mean(policy.log_prob(inputs, actions)) > np.mean(before)


def test_entropy_bonus_raises_entropy():
    model = zero_model(3, 3, [2.0, 0.0, -1.0])
    policy = agents.NonCorrelatedPolicy(model)
    inputs = np.ones((4, 3))
    before = float(np.mean(policy.entropy(inputs)))
    optimizer = nn.Adam(model.params.size, lr=1e-3)
    for _ in range(10):
        stats = agents.policy_gradient_step(policy, optimizer, inputs, np.zeros(4, dtype=np.int64), np.zeros(4), lam=10.0)
    assert float(np.mean(policy.entropy(inputs))) > before
    assert stats['entropy'] > before


def test_policy_loss_rejects_bad_inputs():
    policy = agents.NonCorrelatedPolicy(zero_model(2, 2))
    with pytest.raises(NumericalAbort):
        agents.policy_loss(policy, np.zeros((2, 2)), [0, 1], [np.nan, 0.0], 0.1)
    with pytest.raises(InvalidArgument):
        agents.policy_loss(policy, np.zeros((2, 2)), [0, 1], [0.0, 0.0], -1.0)


def test_advantages_of_a_single_early_reward():
    advantages, targets = agents.advantages_from_values(np.zeros(4), [1.0, 0.0, 0.0], 0.9)
    assert_allclose(advantages, [1.0, 0.0, 0.0])
    assert_allclose(targets, [1.0, 0.0, 0.0])


def test_perfect_baseline_gives_zero_advantages():
    values = np.array([1.75, 1.5, 1.0, 0.0])
    advantages, _ = agents.advantages_from_values(values, [1.0, 1.0, 1.0], 0.5, absorbed=True)
    assert_allclose(advantages, 0.0, atol=1e-12)


def test_advantages_match_brute_force_sums():
    rng = np.random.default_rng(10)
    values = rng.normal(size=7)
    rewards = rng.normal(size=6)
    gamma = 0.8
    advantages, _ = agents.advantages_from_values(values, rewards, gamma)
    for t in range(6):
        expected = sum(gamma ** (k - t) * rewards[k] for k in range(t, 6)) + gamma ** (6 - t) * values[6] - values[t]
        assert advantages[t] == pytest.approx(expected)
    with pytest.raises(InvalidArgument):
        agents.advantages_from_values(values[:3], rewards, gamma)


def test_opponent_model_recovers_a_stochastic_table():
    tables = np.array([[0.6, 0.3, 0.1], [0.2, 0.2, 0.6]])
    rng = np.random.default_rng(5)
    states = np.repeat([0, 1], 2000)
    targets = np.array([rng.choice(3, p=tables[s]) for s in states])[:, None]
    observations = np.eye(2)[states]
    model = agents.OpponentModel(nn.Mlp(2, 3, hidden=HIDDEN, rng=np.random.default_rng(6)), (3,))
    optimizer = nn.Adam(model.model.params.size, lr=1e-2)
    for _ in range(2000):
        _, gradient = agents.opponent_model_loss(model, observations, targets)
        optimizer.step(model.model, gradient)
    learned = model.joint_distribution(np.eye(2))
    for s in range(2):
        assert 0.5 * np.abs(learned[s] - tables[s]).sum() <= 0.05


def test_value_step_reduces_squared_error():
    value_fn = agents.ValueFunction(nn.Mlp(2, 1, hidden=HIDDEN, rng=np.random.default_rng(11)))
    inputs = np.random.default_rng(12).normal(size=(8, 2))
    targets = np.full(8, 3.0)
    before, _ = agents.value_loss(value_fn, inputs, targets)
    optimizer = nn.Adam(value_fn.model.params.size, lr=1e-3)
    agents.value_step(value_fn, optimizer, inputs, targets)
    assert agents.value_loss(value_fn, inputs, targets)[0] < before


def test_acting_agents_never_read_each_other(matching_pennies):
    team = agents.make_agents(matching_pennies, CORRELATED, hidden=HIDDEN, seed=1, samples=2)
    with agents.ParameterAudit() as audit:
        rollout(matching_pennies, team, 4, seed=0, horizon=6)
    assert sum(audit.reads.values()) > 0
    assert audit.cross_agent_reads == 0

    with agents.ParameterAudit() as audit:
        with agents.acting_as(0):
            team[1].policy.model.forward(np.zeros((1, team[1].policy.model.in_size)))
    assert audit.cross_agent_reads == 1


def test_agent_rejects_unknown_kind():
    with pytest.raises(InvalidArgument):
        agents.Agent(0, 'centralized', 2, [2, 2])


def test_non_correlated_agents_may_skip_the_opponent_model(matching_pennies):
    team = agents.make_agents(matching_pennies, NON_CORRELATED, hidden=HIDDEN, opponent_model=False)
    assert all(agent.opponent_model is None for agent in team)
    assert set(team[0].models()) == {'policy', 'value'}


def test_restore_agents_from_checkpoint(matching_pennies, tmp_path):
    team = agents.make_agents(matching_pennies, CORRELATED, hidden=HIDDEN, seed=3)
    models = {f'agent{agent.index}/{role}': model for agent in team for role, model in agent.models().items()}
    path = nn.save_checkpoint(str(tmp_path / 'team.ckpt'), models, {'kind': CORRELATED, 'samples': 2})
    metadata, loaded = nn.load_checkpoint(path)
    restored = agents.restore_agents(matching_pennies, metadata, loaded)
    for original, copy in zip(team, restored):
        assert copy.kind == CORRELATED and copy.samples == 2
        for role, model in original.models().items():
            assert_array_equal(copy.models()[role].params, model.params)

    del loaded['agent1/value']
    with pytest.raises(StorageError):
        agents.restore_agents(matching_pennies, metadata, loaded)
