import glob
import itertools
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import agents, nn, oracle
from .ail import discriminator
from .errors import LabError
from .game import load_tabular

log = logging.getLogger('suites')

FIXTURE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.realpath(__file__))), 'fixtures')
RANDOM_GAMES = 100
GRADIENT_DRAWS = 50
GRADIENT_TOLERANCE = 1e-4


@dataclass
class PropertyResult:
    suite: str
    name: str
    passed: bool
    detail: str = ''


def load_fixtures(fixture_dir=FIXTURE_DIR):
    return [load_tabular(path) for path in sorted(glob.glob(os.path.join(fixture_dir, '*.json')))]


def _random_instances(seed, count, max_states=5):
    rng = np.random.default_rng([seed, 7])
    for _ in range(count):
        n_states = int(rng.integers(1, max_states + 1))
        action_sizes = [int(n) for n in rng.integers(2, 4, size=2)]
        game = oracle.random_game(rng, n_states, action_sizes, discount=float(rng.uniform(0.0, 0.95)))
        yield rng, game


############################################################
# SUITES
############################################################

def occupancy_suite(fixtures, seed):
    results = []
    worst = 0.0
    for rng, game in _random_instances(seed, RANDOM_GAMES):
        for correlated in (False, True):
            table = oracle.exact_occupancy(game, oracle.random_joint_policy(rng, game, correlated))
            worst = max(worst, abs((1.0 - game.discount) * table.mass - 1.0))
            if np.any(table.table < 0):
                worst = np.inf
    results.append(PropertyResult('occupancy', 'normalization on random games', worst <= 1e-8, f"max error {worst:.2e}"))
    for game in fixtures:
        uniform = oracle.TabularJointPolicy.non_correlated(
            game, [np.full((game.n_states, n), 1.0 / n) for n in game.action_sizes])
        table = oracle.exact_occupancy(game, uniform)
        error = abs((1.0 - game.discount) * table.mass - 1.0)
        results.append(PropertyResult('occupancy', f'normalization on {game.name}', error <= 1e-8, f"error {error:.2e}"))
    return results


def forward_expectation(game, joint_policy, values, tolerance=1e-14):
    """sum_t gamma^t E[f(s_t, a_t)] by propagating the state distribution."""
    transitions = np.einsum('sj,sjt->st', joint_policy.joint, game.transitions)
    per_state = np.sum(joint_policy.joint * values, axis=1)
    distribution, weight, total = game.initial.copy(), 1.0, 0.0
    while weight > tolerance:
        total += weight * float(distribution @ per_state)
        distribution = distribution @ transitions
        weight *= game.discount
        if game.discount == 0.0:
            break
    return total


def expectation_suite(fixtures, seed):
    worst = 0.0
    for rng, game in _random_instances(seed, RANDOM_GAMES // 4):
        policy = oracle.random_joint_policy(rng, game, correlated=True)
        values = rng.uniform(-1.0, 1.0, size=(game.n_states, game.joint_index.size))
        exact = oracle.exact_occupancy(game, policy).expectation(values)
        worst = max(worst, abs(exact - forward_expectation(game, policy, values)))
    return [PropertyResult('expectation', 'occupancy expectation equals discounted rollout expectation',
                           worst <= 1e-8, f"max error {worst:.2e}")]


def importance_suite(fixtures, seed):
    worst, identity = 0.0, 0.0
    for rng, game in _random_instances(seed, RANDOM_GAMES):
        opponent_size = game.joint_index.opponent_count(0)
        policy = rng.dirichlet(np.ones(game.action_sizes[0]), size=game.n_states)
        opponents = rng.dirichlet(np.ones(opponent_size), size=game.n_states)
        mu = rng.dirichlet(np.ones(opponent_size), size=game.n_states)
        values = rng.uniform(-1.0, 1.0, size=(game.n_states, game.joint_index.size))
        lhs, rhs, _ = oracle.importance_identity_check(game, policy, opponents, mu, values)
        worst = max(worst, abs(lhs - rhs))
        lhs, rhs, alpha = oracle.importance_identity_check(game, policy, opponents, opponents, values)
        supported = alpha > 0
        identity = max(identity, abs(lhs - rhs), float(np.max(np.abs(alpha[supported] - 1.0), initial=0.0)))
    return [PropertyResult('importance', 'reweighted expectation matches on random games', worst <= 1e-8,
                           f"max |lhs - rhs| {worst:.2e}"),
            PropertyResult('importance', 'identity reweighting gives unit weights', identity <= 1e-8,
                           f"max deviation {identity:.2e}")]


def factorization_suite(fixtures, seed):
    worst = 0.0
    for rng, game in _random_instances(seed, RANDOM_GAMES // 4):
        tables = [rng.dirichlet(np.ones(n), size=game.n_states) for n in game.action_sizes]
        product = oracle.TabularJointPolicy.non_correlated(game, tables)
        opponents = product.opponents(0)
        conditional = np.repeat(tables[0][:, None, :], game.joint_index.opponent_count(0), axis=1)
        correlated = oracle.TabularJointPolicy.correlated(game, 0, conditional, opponents)
        a = oracle.exact_occupancy(game, product).table
        b = oracle.exact_occupancy(game, correlated).table
        worst = max(worst, float(np.max(np.abs(a - b))))
    return [PropertyResult('factorization', 'opponent-independent conditional equals product policy',
                           worst <= 1e-10, f"max difference {worst:.2e}")]


def deterministic_policies(n_states, n_actions):
    for choice in itertools.product(range(n_actions), repeat=n_states):
        yield np.eye(n_actions)[list(choice)]


def certification_suite(fixtures, seed):
    results = []
    rng = np.random.default_rng([seed, 11])
    for game in fixtures:
        profile = oracle.TabularJointPolicy.non_correlated(
            game, [np.full((game.n_states, n), 1.0 / n) for n in game.action_sizes])
        gaps = oracle.epsilon_ne_gap(game, profile)
        sound = True
        for agent in range(game.agent_count):
            current = oracle.exact_value(game, None, profile.marginal(agent), profile.opponents(agent), agent)
            for deviation in deterministic_policies(game.n_states, game.action_sizes[agent]):
                value = oracle.exact_value(game, None, deviation, profile.opponents(agent), agent)
                sound &= value <= current + max(gaps[agent], 0.0) + 1e-8
        results.append(PropertyResult('certification', f'deviations bounded by the gap on {game.name}', bool(sound),
                                      f"gaps {np.round(gaps, 10).tolist()}"))

        lam = 0.5
        opponents = profile.opponents(0)
        _, soft = oracle.soft_best_response(game, 0, opponents, lam)
        demonstrator = oracle.TabularJointPolicy(game, oracle.assemble(game, 0, soft, opponents))
        candidates = [oracle.TabularJointPolicy(game, oracle.assemble(
            game, 0, rng.dirichlet(np.ones(game.action_sizes[0]), size=game.n_states), opponents)) for _ in range(8)]
        certificate = oracle.entropy_certificate(game, 0, candidates, demonstrator, lam)
        results.append(PropertyResult('certification', f'entropy bound holds on {game.name}', certificate['holds'],
                                      f"epsilon {certificate['epsilon']:.4f} slack {certificate['slack']:.2e}"))
    return results


def gradient_suite(fixtures, seed):
    rng = np.random.default_rng([seed, 13])
    worst = {'mlp': 0.0, 'opponent_ce': 0.0, 'policy': 0.0, 'value': 0.0, 'discriminator': 0.0}
    hidden = (6, 5)
    for _ in range(GRADIENT_DRAWS):
        d, batch = int(rng.integers(2, 5)), int(rng.integers(1, 6))
        x = rng.normal(size=(batch, d))

        model = nn.Mlp(d, 3, hidden, rng=rng)
        upstream = rng.normal(size=(batch, 3))
        worst['mlp'] = max(worst['mlp'], nn.finite_difference_check(
            lambda p: float(np.sum(upstream * model.evaluate_with(p, x))), model.params, model.backward(x, upstream)))

        sizes = (2, 3)
        opponent = agents.OpponentModel(nn.Mlp(d, sum(sizes), hidden, rng=rng), sizes)
        targets = np.stack([rng.integers(n, size=batch) for n in sizes], axis=1)
        _, gradient = agents.opponent_model_loss(opponent, x, targets)
        worst['opponent_ce'] = max(worst['opponent_ce'], _check_loss(
            opponent.model, gradient, lambda: agents.opponent_model_loss(opponent, x, targets)[0]))

        policy = agents.NonCorrelatedPolicy(nn.Mlp(d, 4, hidden, rng=rng))
        actions, advantages = rng.integers(4, size=batch), rng.normal(size=batch)
        lam = float(rng.uniform(0.0, 0.5))
        _, gradient, _ = agents.policy_loss(policy, x, actions, advantages, lam)
        worst['policy'] = max(worst['policy'], _check_loss(
            policy.model, gradient, lambda: agents.policy_loss(policy, x, actions, advantages, lam)[0]))

        value = agents.ValueFunction(nn.Mlp(d, 1, hidden, rng=rng))
        goals = rng.normal(size=batch)
        _, gradient = agents.value_loss(value, x, goals)
        worst['value'] = max(worst['value'], _check_loss(value.model, gradient, lambda: agents.value_loss(value, x, goals)[0]))

        critic = discriminator.Discriminator(0, 'joint', d, (2, 3), hidden, seed=int(rng.integers(1 << 30)))
        expert = critic.inputs(x, rng.integers(2, size=batch), rng.integers(3, size=(batch, 1)))
        learner = critic.inputs(rng.normal(size=(batch, d)), rng.integers(2, size=batch), rng.integers(3, size=(batch, 1)))
        _, gradient = discriminator.discriminator_loss(critic, expert, learner)
        worst['discriminator'] = max(worst['discriminator'], _check_loss(
            critic.model, gradient, lambda: discriminator.discriminator_loss(critic, expert, learner)[0]))

    return [PropertyResult('gradients', f'{name} gradient matches central differences', error < GRADIENT_TOLERANCE,
                           f"worst norm-relative error {error:.2e}") for name, error in worst.items()]


def _check_loss(model, gradient, loss):
    original = model.params.copy()

    def at(params):
        model.params = params
        try:
            return loss()
        finally:
            model.params = original

    return nn.finite_difference_check(at, original, gradient)


SUITES = {
    'occupancy': occupancy_suite,
    'expectation': expectation_suite,
    'importance': importance_suite,
    'factorization': factorization_suite,
    'certification': certification_suite,
    'gradients': gradient_suite,
}


def run_suites(names=('all',), fixture_dir=FIXTURE_DIR, seed=0):
    if 'all' in names:
        names = list(SUITES)
    unknown = [name for name in names if name not in SUITES]
    if unknown:
        raise LabError(f"unknown suite(s) {unknown}, expected some of {sorted(SUITES)} or 'all'")
    fixtures = load_fixtures(fixture_dir)
    results = []
    for name in names:
        log.info(f"Running {name} suite")
        results.extend(SUITES[name](fixtures, seed))
    return results
