import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import one_state_game
from utils import demonstrator, evaluation
from utils.agents import CORRELATED, NON_CORRELATED, ParameterAudit, make_agents
from utils.ail import TrainerConfig
from utils.game import read_batch, write_batch
from utils.particles import make_scenario

HIDDEN = (6, 5)


def fixed_agents(game, biases):
    team = make_agents(game, NON_CORRELATED, hidden=HIDDEN, opponent_model=False)
    for agent, bias in zip(team, biases):
        model = agent.policy.model
        start, stop, _ = model.index_map()['b3']
        params = np.zeros(model.params.size)
        params[start:stop] = bias
        model.params = params
    return team


def demo_config(**overrides):
    settings = dict(algorithm='demonstrator', epochs=2, rollout_episodes=3, horizon=5, hidden=HIDDEN, seed=3)
    settings.update(overrides)
    return TrainerConfig(**settings)


def test_quality_gate_accepts_an_equilibrium(coordination):
    report = demonstrator.quality_gate(coordination, fixed_agents(coordination, [[-20.0, 20.0], [-20.0, 20.0]]))
    assert report['kind'] == 'epsilon_ne'
    assert report['passed']
    assert max(report['gaps']) <= 1e-6


def test_quality_gate_rejects_an_exploitable_profile(matching_pennies):
    report = demonstrator.quality_gate(matching_pennies, fixed_agents(matching_pennies, [[20.0, -20.0], [0.0, 0.0]]))
    assert not report['passed']
    assert report['gaps'][1] > report['threshold']


def test_quality_gate_rejects_random_play_on_particles():
    game = make_scenario('keep_away').with_horizon(10)
    report = demonstrator.quality_gate(game, evaluation.random_agents(game), episodes=20)
    assert report['kind'] == 'random_baseline'
    assert not report['passed']


def test_demonstrator_training_uses_scenario_rewards(matching_pennies):
    result = demonstrator.train_demonstrators(matching_pennies, demo_config())
    assert all(agent.kind == CORRELATED for agent in result.agents)
    assert result.discriminators == []
    assert len(result.log) == 4
    assert all(r['phases'] == ['opponent', 'value', 'policy'] for r in result.log)
    # zero-sum stage game
    assert result.log[0]['mean_reward'] == pytest.approx(-result.log[1]['mean_reward'])


def test_demonstrator_training_never_reads_another_agents_parameters(matching_pennies):
    with ParameterAudit() as audit:
        demonstrator.train_demonstrators(matching_pennies, demo_config(samples=2))
    assert audit.reads[(0, 0)] > 0 and audit.reads[(1, 1)] > 0
    assert audit.cross_agent_reads == 0


def test_generation_is_reproducible(matching_pennies, tmp_path):
    team = demonstrator.train_demonstrators(matching_pennies, demo_config()).agents
    first = demonstrator.generate_demonstrations(matching_pennies, team, episodes=5, horizon=7, seed=11)
    second = demonstrator.generate_demonstrations(matching_pennies, team, episodes=5, horizon=7, seed=11, workers=3)
    a = write_batch(matching_pennies, first, str(tmp_path / 'a.jsonl'))
    b = write_batch(matching_pennies, second, str(tmp_path / 'b.jsonl'))
    assert open(a, 'rb').read() == open(b, 'rb').read()
    assert read_batch(matching_pennies, a).metadata['generator'] == 'demonstrator'
    assert all(len(episode) == 7 for episode in first.episodes)


@pytest.mark.slow
def test_zero_rewards_leave_the_entropy_bonus_in_charge():
    game = one_state_game(np.zeros((2, 2, 2)), horizon=10)
    result = demonstrator.train_demonstrators(game, demo_config(epochs=200, rollout_episodes=10, horizon=None,
                                                                lam=0.5, lr=1e-2))
    for table in evaluation.policy_tables(game, result.agents):
        assert_allclose(table, 0.5, atol=0.05)


@pytest.mark.slow
def test_common_payoff_demonstrators_pass_the_gate(coordination):
    config = demo_config(epochs=300, rollout_episodes=20, horizon=None, hidden=(16, 16), lr=1e-2)
    result = demonstrator.train_demonstrators(coordination, config)
    assert demonstrator.quality_gate(coordination, result.agents)['passed']


@pytest.mark.slow
def test_navigation_demonstrators_improve_their_shared_reward():
    game = make_scenario('coop_navi').with_horizon(25)
    config = demo_config(epochs=300, rollout_episodes=10, horizon=None, hidden=(32, 32), lr=1e-3)
    result = demonstrator.train_demonstrators(game, config)
    # every agent logs the same shared reward, so agent 0 stands for the team
    curve = [r['mean_reward'] for r in result.log if r['agent'] == 0]
    assert np.mean(curve[-30:]) > np.mean(curve[:30])
