import os

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from conftest import one_state_game
from utils import ail, demonstrator, evaluation, oracle
from utils.agents import CORRELATED, NON_CORRELATED, make_agents
from utils.ail import TrainerConfig
from utils.errors import InvalidArgument
from utils.game import JointTablePolicy, UniformPolicy, rollout
from utils.particles import make_scenario

HIDDEN = (6, 5)


def gaussian(n, mean=(0.0, 0.0), scale=1.0, seed=0):
    return np.random.default_rng(seed).normal(loc=mean, scale=scale, size=(n, 2))


def test_standard_gaussian_density_at_the_origin():
    kde = evaluation.kde_fit(gaussian(20000))
    assert isinstance(kde, stats.gaussian_kde)
    # Scott smoothing inflates the variance by 1 + h^2, about 4% here
    assert kde(np.zeros((1, 2)))[0] == pytest.approx(1.0 / (2.0 * np.pi), rel=0.08)
    assert_allclose(kde.bandwidth, 20000 ** (-1.0 / 6.0), rtol=0.05)


def test_density_integrates_to_one_on_a_wide_grid():
    grid = evaluation.density_grid(gaussian(5000), half_width=6.0, resolution=201)
    assert grid.integral == pytest.approx(1.0, abs=0.01)
    assert grid.density.shape == (201, 201)
    assert_allclose(grid.cells().sum(), 1.0)


def test_kde_grid_matches_pointwise_evaluation():
    kde = evaluation.kde_fit(gaussian(300, scale=0.4))
    xs, ys = evaluation.grid_axes(1.0, 11)
    grid = kde.grid(xs, ys)
    assert_allclose(grid[3, 7], kde(np.array([[xs[3], ys[7]]]))[0])


def test_bandwidth_floor_and_degenerate_samples():
    points = np.zeros((10, 2))
    assert_array_equal(evaluation.kde_fit(points).bandwidth, [0.01, 0.01])
    with pytest.raises(InvalidArgument):
        evaluation.kde_fit(points, floor=None)
    with pytest.raises(InvalidArgument):
        evaluation.kde_fit(np.zeros((1, 2)))
    with pytest.raises(InvalidArgument):
        evaluation.grid_axes(1.0, 1)


def test_kl_of_a_sample_to_itself_vanishes():
    points = gaussian(2000, scale=0.3)
    assert evaluation.kl_divergence(points, points) == pytest.approx(0.0, abs=1e-12)
    assert evaluation.kl_divergence(points, gaussian(2000, scale=0.3, seed=1)) <= 0.05
    with pytest.raises(InvalidArgument):
        evaluation.kl_divergence(points, np.zeros((0, 2)))


def test_kl_between_shifted_gaussians():
    # KL = mu^2 / (2 sigma^2) = 0.5, smoothing pulls it slightly lower
    sigma = 0.2
    p = gaussian(5000, scale=sigma, seed=2)
    q = gaussian(5000, mean=(sigma, 0.0), scale=sigma, seed=3)
    assert evaluation.kl_divergence(p, q) == pytest.approx(0.5, rel=0.15)


def test_kl_grows_with_separation():
    p = gaussian(3000, scale=0.2, seed=4)
    values = [evaluation.kl_divergence(p, gaussian(3000, mean=(shift, 0.0), scale=0.2, seed=5))
              for shift in (0.05, 0.15, 0.3)]
    assert values[0] < values[1] < values[2]


def test_uniform_samples_give_a_flat_interior():
    points = np.random.default_rng(6).uniform(-1.0, 1.0, size=(20000, 2))
    grid = evaluation.density_grid(points, resolution=51)
    inner = grid.density[np.ix_(np.abs(grid.xs) <= 0.7, np.abs(grid.ys) <= 0.7)]
    assert inner.max() / inner.min() < 2.0


def test_density_table_round_trip(tmp_path):
    grid = evaluation.density_grid(gaussian(200, scale=0.3), resolution=15)
    path = evaluation.write_density_csv(grid, str(tmp_path / 'density.csv'))
    xs, ys, density = evaluation.read_density_csv(path)
    assert_array_equal(xs, grid.xs)
    assert_array_equal(ys, grid.ys)
    assert_array_equal(density, grid.density)


def test_density_export_writes_tables_and_plots(tmp_path):
    game = make_scenario('keep_away')
    batch = rollout(game, evaluation.random_agents(game), 5, seed=1, horizon=10)
    samples = evaluation.collect_positions(game, batch)
    assert len(samples) == 2 * 50
    grids = evaluation.export_density(samples, str(tmp_path / 'plots'), resolution=21)
    assert set(grids) == {'agent0', 'agent1', 'all'}
    names = sorted(os.listdir(tmp_path / 'plots'))
    assert names == sorted(f'density_{n}.{ext}' for n in grids for ext in ('csv', 'svg'))
    svg = (tmp_path / 'plots' / 'density_all.svg').read_text()
    assert '<svg' in svg

    again = evaluation.render_density_svg(grids['all'], str(tmp_path / 'again.svg'), title='all')
    assert open(again, 'rb').read() == (tmp_path / 'plots' / 'density_all.svg').read_bytes()


def test_position_kl_of_identical_batches(tmp_path):
    game = make_scenario('coop_navi')
    batch = rollout(game, evaluation.random_agents(game), 4, seed=2, horizon=10)
    report = evaluation.position_kl(game, batch, batch, resolution=31)
    assert set(report['per_agent']) == {0, 1, 2}
    assert report['total'] == pytest.approx(0.0, abs=1e-12)
    assert report['per'] == pytest.approx(0.0, abs=1e-12)


def test_reward_gap_against_the_same_rollouts_is_zero():
    game = make_scenario('keep_away')
    makers = evaluation.random_agents(game)
    demo = evaluation.return_statistics(game, rollout(game, makers, 6, 0, horizon=10))
    gaps = evaluation.reward_gap(game, makers, demo, episodes=6, seeds=(0,), horizon=10)
    assert set(gaps) == {'agent+', 'agent-', 'total'}
    assert all(mean == 0.0 and std == 0.0 for mean, std in gaps.values())


def test_reward_gap_is_averaged_over_seeds():
    game = make_scenario('predator_prey')
    makers = evaluation.random_agents(game)
    demo = {group: (0.0, 0.0) for group in evaluation.reward_groups(game)}
    gaps = evaluation.reward_gap(game, makers, demo, episodes=3, seeds=(0, 1), horizon=5)
    per_seed = [abs(evaluation.return_statistics(game, rollout(game, makers, 3, s, horizon=5))['total'][0])
                for s in (0, 1)]
    assert gaps['total'][0] == pytest.approx(np.mean(per_seed))


def test_policy_tables_of_non_correlated_learners(matching_pennies):
    team = make_agents(matching_pennies, NON_CORRELATED, hidden=HIDDEN, seed=1, opponent_model=False)
    tables = evaluation.policy_tables(matching_pennies, team)
    joint = evaluation.joint_action_table(matching_pennies, team)
    assert_allclose(joint, oracle.TabularJointPolicy.non_correlated(matching_pennies, tables).joint)
    assert evaluation.occupancy_divergence(
        matching_pennies, team, evaluation.learner_joint_policy(matching_pennies, team)) == pytest.approx(0.0, abs=1e-12)


def test_correlated_tables_match_their_sampled_estimate(chain):
    team = make_agents(chain, CORRELATED, hidden=HIDDEN, seed=2)
    exact = evaluation.policy_tables(chain, team)
    sampled = evaluation.policy_tables(chain, team, samples=4000)
    for e, s in zip(exact, sampled):
        assert_allclose(e, s, atol=0.03)
    joint = evaluation.joint_action_table(chain, team, agent=1)
    assert_allclose(joint.sum(axis=1), 1.0)


def test_empirical_joint_table_of_a_correlated_batch():
    game = one_state_game(np.zeros((2, 2, 2)), horizon=10)
    joint = np.array([[0.45, 0.05, 0.05, 0.45]])
    batch = rollout(game, [JointTablePolicy(game.joint_index, i, joint) for i in range(2)], 500, seed=3)
    table, weights = evaluation.empirical_joint_table(game, batch)
    assert_allclose(table, joint, atol=0.03)
    assert_array_equal(weights, [1.0])


def test_unvisited_states_carry_no_weight(chain):
    batch = rollout(chain, [UniformPolicy(n) for n in chain.action_sizes], 3, seed=0, horizon=1)
    table, weights = evaluation.empirical_joint_table(chain, batch)
    assert_array_equal(weights, [1.0, 0.0])
    assert_allclose(table[1], 1.0 / chain.joint_index.size)


def test_joint_distance_of_a_team_to_its_own_joint_vanishes(chain):
    team = make_agents(chain, CORRELATED, hidden=HIDDEN, seed=4)
    reference = evaluation.joint_action_table(chain, team)
    weights = np.full(chain.n_states, 1.0 / chain.n_states)
    assert evaluation.joint_tv(chain, team, reference, weights) == pytest.approx(0.0, abs=1e-12)
    uniform = np.full_like(reference, 1.0 / chain.joint_index.size)
    assert evaluation.joint_tv(chain, team, uniform, weights) > 0.0


@pytest.mark.slow
def test_correlated_imitation_is_closest_to_keep_away_demonstrations():
    game = make_scenario('keep_away').with_horizon(25)
    demo_config = TrainerConfig(algorithm='demonstrator', epochs=500, rollout_episodes=10, hidden=(32, 32), lr=1e-3)
    team = demonstrator.train_demonstrators(game, demo_config).agents
    demos = demonstrator.generate_demonstrations(game, team, episodes=100, horizon=25)

    wins = 0
    for seed in range(5):
        kl = {}
        for algorithm in ('codail', 'ncdail', 'magail'):
            config = TrainerConfig(algorithm=algorithm, epochs=300, batch_size=256, rollout_episodes=10,
                                   hidden=(32, 32), lr=1e-3, bc_steps=200, samples=4, seed=seed)
            learners = ail.load(game, config).train(demos).agents
            kl[algorithm] = evaluation.position_kl(game, rollout(game, learners, 50, seed), demos)['total']
        random_kl = evaluation.position_kl(game, rollout(game, evaluation.random_agents(game), 50, seed), demos)['total']
        assert all(5.0 * value <= random_kl for value in kl.values())
        wins += kl['codail'] < np.median([kl['ncdail'], kl['magail']])
    assert wins >= 4
