import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import logsumexp, rel_entr

from .errors import ConvergenceError, InvalidArgument, NumericalAbort, SupportViolation
from .game import TabularGame

log = logging.getLogger('oracle')

TOLERANCE = 1e-9
RESIDUAL = 1e-10
MAX_ITERATIONS = 200000
KL_FLOOR = 1e-12


def _check_tabular(spec):
    if not getattr(spec, 'tabular', False):
        raise InvalidArgument(f"{getattr(spec, 'name', spec)} is not a tabular game")


def _check_rows(table, what):
    table = np.asarray(table, dtype=np.float64)
    if np.any(table < -TOLERANCE) or np.max(np.abs(table.sum(axis=-1) - 1.0)) > TOLERANCE:
        raise InvalidArgument(f"{what} rows must be distributions summing to 1 within {TOLERANCE}")
    return table


############################################################
# POLICIES
############################################################

class TabularJointPolicy:
    """A joint policy of a tabular game held as its joint table pi(a|s), shape (S, J).

    Non-correlated profiles are assembled as products of per-agent tables, correlated
    profiles as opponent distribution times agent i's conditional. Either way the table
    is the only state, so both assemblies of the same distribution are identical.
    """

    def __init__(self, spec, joint):
        _check_tabular(spec)
        joint = _check_rows(joint, 'joint policy')
        if joint.shape != (spec.n_states, spec.joint_index.size):
            raise InvalidArgument(f"joint policy shape {joint.shape} != {(spec.n_states, spec.joint_index.size)}")
        self.spec = spec
        self.joint = joint

    @classmethod
    def non_correlated(cls, spec, tables):
        if len(tables) != spec.agent_count:
            raise InvalidArgument(f"{len(tables)} policy tables for {spec.agent_count} agents")
        joint = np.ones((spec.n_states, spec.joint_index.size))
        for agent, table in enumerate(tables):
            table = _check_rows(table, f"policy of agent {agent}")
            if table.shape != (spec.n_states, spec.action_sizes[agent]):
                raise InvalidArgument(f"policy of agent {agent} has shape {table.shape}")
            joint *= table[:, spec.joint_index.own(agent)]
        return cls(spec, joint)

    @classmethod
    def correlated(cls, spec, agent, conditional, opponents):
        """conditional: pi_i(a_i | s, a_-i), shape (S, O, A_i); opponents: (S, O)."""
        return cls(spec, assemble(spec, agent, conditional, opponents))

    def marginal(self, agent):
        index = self.spec.joint_index
        table = np.zeros((self.spec.n_states, self.spec.action_sizes[agent]))
        np.add.at(table.T, index.own(agent), self.joint.T)
        return table

    def opponents(self, agent):
        index = self.spec.joint_index
        table = np.zeros((self.spec.n_states, index.opponent_count(agent)))
        np.add.at(table.T, index.opponent_indices(agent), self.joint.T)
        return table

    def conditional(self, agent):
        """pi_i(a_i | s, a_-i), uniform where the opponent joint action has no mass."""
        index = self.spec.joint_index
        table = np.zeros((self.spec.n_states, index.opponent_count(agent), self.spec.action_sizes[agent]))
        table[:, index.opponent_indices(agent), index.own(agent)] = self.joint
        mass = table.sum(axis=2, keepdims=True)
        uniform = np.full_like(table, 1.0 / self.spec.action_sizes[agent])
        return np.where(mass > 0, table / np.where(mass > 0, mass, 1.0), uniform)

    def is_product(self, tolerance=1e-10):
        product = TabularJointPolicy.non_correlated(self.spec, [self.marginal(i) for i in range(self.spec.agent_count)])
        return bool(np.max(np.abs(product.joint - self.joint)) <= tolerance)


def assemble(spec, agent, policy, opponents):
    """Joint table from agent i's policy and an opponent distribution.

    `policy` is either non-correlated (S, A_i) or correlated (S, O, A_i).
    """
    index = spec.joint_index
    opponents = _check_rows(opponents, f"opponent distribution of agent {agent}")
    if opponents.shape != (spec.n_states, index.opponent_count(agent)):
        raise InvalidArgument(f"opponent distribution of agent {agent} has shape {opponents.shape}")
    policy = _check_rows(policy, f"policy of agent {agent}")
    if policy.ndim == 2:
        policy = np.repeat(policy[:, None, :], index.opponent_count(agent), axis=1)
    if policy.shape != (spec.n_states, index.opponent_count(agent), spec.action_sizes[agent]):
        raise InvalidArgument(f"policy of agent {agent} has shape {policy.shape}")
    opp = index.opponent_indices(agent)
    return opponents[:, opp] * policy[:, opp, index.own(agent)]


def _as_opponents(spec, agent, fixed_opponents):
    if isinstance(fixed_opponents, TabularJointPolicy):
        return fixed_opponents.opponents(agent)
    return _check_rows(fixed_opponents, f"opponent distribution of agent {agent}")


############################################################
# OCCUPANCY AND VALUES
############################################################

@dataclass(frozen=True)
class OccupancyTable:
    table: np.ndarray  # (S, J), unnormalized
    discount: float

    @property
    def mass(self):
        return float(self.table.sum())

    def normalized(self):
        return (1.0 - self.discount) * self.table

    def state_visitation(self):
        return self.table.sum(axis=1)

    def expectation(self, values):
        """sum_{s,a} rho(s,a) f(s,a): the discounted expectation of f under rollouts."""
        return float(np.sum(self.table * values))


def _policy_transitions(spec, joint):
    return np.einsum('sj,sjt->st', joint, spec.transitions)


def _solve(matrix, rhs, what):
    try:
        factors = linalg.lu_factor(matrix, check_finite=True)
        solution = linalg.lu_solve(factors, rhs)
    except (ValueError, linalg.LinAlgError) as e:
        raise NumericalAbort(f"{what}: linear system could not be solved ({e})") from e
    if not np.all(np.isfinite(solution)):
        raise NumericalAbort(f"{what}: linear system is singular")
    return solution


def state_visitation(spec, joint_policy):
    """Discounted state visitation d(s) = sum_t gamma^t Pr(s_t = s), solved exactly."""
    _check_tabular(spec)
    transitions = _policy_transitions(spec, joint_policy.joint)
    matrix = np.eye(spec.n_states) - spec.discount * transitions.T
    return _solve(matrix, spec.initial, 'state visitation')


def exact_occupancy(spec, joint_policy):
    visitation = state_visitation(spec, joint_policy)
    table = np.maximum(visitation, 0.0)[:, None] * joint_policy.joint
    return OccupancyTable(table=table, discount=spec.discount)


def state_values(spec, joint_policy, agent):
    _check_tabular(spec)
    if not 0 <= agent < spec.agent_count:
        raise InvalidArgument(f"agent {agent} out of range")
    transitions = _policy_transitions(spec, joint_policy.joint)
    rewards = np.sum(joint_policy.joint * spec.rewards[agent], axis=1)
    return _solve(np.eye(spec.n_states) - spec.discount * transitions, rewards, f"values of agent {agent}")


def _start_value(spec, values, state):
    if state is None:
        return float(spec.initial @ values)
    return float(values[int(state)])


def exact_value(spec, state, policy_i, policy_minus_i, agent=0):
    """v_i(s, pi_i, pi_-i). `state=None` averages the start state under the initial distribution."""
    joint = TabularJointPolicy(spec, assemble(spec, agent, policy_i, policy_minus_i))
    return _start_value(spec, state_values(spec, joint, agent), state)


############################################################
# IMPORTANCE REWEIGHTING
############################################################

def _test_function_table(spec, f):
    if callable(f):
        return np.array([[float(f(s, spec.joint_index.actions(j))) for j in range(spec.joint_index.size)]
                         for s in range(spec.n_states)])
    table = np.asarray(f, dtype=np.float64)
    if table.shape != (spec.n_states, spec.joint_index.size):
        raise InvalidArgument(f"test function table has shape {table.shape}")
    return table


def importance_identity_check(spec, policy_i, policy_minus_i, mu, f, agent=0):
    """Compare E_{pi_i, pi_-i}[f] with E_{pi_i, mu}[alpha f], alpha the occupancy ratio.

    Returns (lhs, rhs, alpha) with alpha zero where mu's occupancy is zero.
    """
    opponents = _check_rows(policy_minus_i, 'opponent policy')
    reference = _check_rows(mu, 'reweighting policy')
    uncovered = np.argwhere((reference <= 0.0) & (opponents > 0.0))
    if uncovered.size:
        s, o = uncovered[0]
        raise SupportViolation(int(s), spec.joint_index.opponent_actions(agent, o))

    values = _test_function_table(spec, f)
    target = exact_occupancy(spec, TabularJointPolicy(spec, assemble(spec, agent, policy_i, opponents)))
    proposal = exact_occupancy(spec, TabularJointPolicy(spec, assemble(spec, agent, policy_i, reference)))
    missing = np.argwhere((proposal.table <= 0.0) & (target.table > 0.0))
    if missing.size:
        s, j = missing[0]
        raise SupportViolation(int(s), spec.joint_index.actions(j))

    supported = proposal.table > 0.0
    alpha = np.zeros_like(proposal.table)
    alpha[supported] = target.table[supported] / proposal.table[supported]
    lhs = target.expectation(values)
    rhs = float(np.sum(proposal.table * alpha * values))
    return lhs, rhs, alpha


############################################################
# BEST RESPONSES AND EPSILON-NE
############################################################

def induced_mdp(spec, agent, opponents):
    """Agent i's single-agent MDP against a fixed opponent distribution.

    Returns rewards (S, A_i) and transitions (S, A_i, S).
    """
    index = spec.joint_index
    n_actions = spec.action_sizes[agent]
    weights = np.zeros((spec.n_states, n_actions, index.size))
    weights[:, index.own(agent), np.arange(index.size)] = opponents[:, index.opponent_indices(agent)]
    rewards = np.einsum('saj,sj->sa', weights, spec.rewards[agent])
    transitions = np.einsum('saj,sjt->sat', weights, spec.transitions)
    return rewards, transitions


def _iterate(backup, n_states, what, max_iterations):
    values = np.zeros(n_states)
    residual = np.inf
    for _ in range(max_iterations):
        updated = backup(values)
        residual = float(np.max(np.abs(updated - values)))
        values = updated
        if residual < RESIDUAL:
            return values
    raise ConvergenceError(f"{what} did not converge in {max_iterations} iterations", residual)


def best_response(spec, agent, fixed_opponents, max_iterations=MAX_ITERATIONS):
    """Deterministic best response of `agent`; returns (values (S,), policy (S, A_i))."""
    _check_tabular(spec)
    opponents = _as_opponents(spec, agent, fixed_opponents)
    rewards, transitions = induced_mdp(spec, agent, opponents)
    gamma = spec.discount

    values = _iterate(lambda v: np.max(rewards + gamma * transitions @ v, axis=1),
                      spec.n_states, f"best response of agent {agent}", max_iterations)
    greedy = np.argmax(rewards + gamma * transitions @ values, axis=1)
    # greedy policy is re-evaluated exactly
    policy = np.eye(spec.action_sizes[agent])[greedy]
    return exact_value_vector(spec, agent, policy, opponents), policy


def exact_value_vector(spec, agent, policy_i, opponents):
    joint = TabularJointPolicy(spec, assemble(spec, agent, policy_i, opponents))
    return state_values(spec, joint, agent)


def best_response_value(spec, agent, fixed_opponents, state=None):
    values, _ = best_response(spec, agent, fixed_opponents)
    return _start_value(spec, values, state)


def epsilon_ne_gap(spec, joint_policy, all_states=False):
    """Per-agent value lost by not deviating unilaterally.

    The default compares start values averaged under the initial distribution; with
    `all_states` every state is checked and the largest shortfall is reported.
    Deviations play against the opponents' joint marginal, so a correlated profile can
    report a negative gap.
    """
    gaps = np.zeros(spec.agent_count)
    for agent in range(spec.agent_count):
        best, _ = best_response(spec, agent, joint_policy.opponents(agent))
        current = state_values(spec, joint_policy, agent)
        gaps[agent] = float(np.max(best - current)) if all_states else float(spec.initial @ (best - current))
    return gaps


def value_scale(spec):
    """Largest absolute discounted value any policy can reach."""
    return float(np.max(np.abs(spec.rewards))) / (1.0 - spec.discount)


############################################################
# ENTROPY
############################################################

def _row_entropy(table):
    table = np.asarray(table, dtype=np.float64)
    return -np.sum(np.where(table > 0, table * np.log(np.where(table > 0, table, 1.0)), 0.0), axis=-1)


def discounted_entropy(spec, joint_policy, agent=None):
    """sum_s d(s) H(pi(.|s)) for agent i's marginal, or for the joint when agent is None."""
    visitation = state_visitation(spec, joint_policy)
    table = joint_policy.joint if agent is None else joint_policy.marginal(agent)
    return float(visitation @ _row_entropy(table))


def entropy_bound_epsilon(spec, agent, candidates, demonstrator, lam):
    if lam < 0:
        raise InvalidArgument(f"entropy weight must be non-negative, got {lam}")
    candidates = list(candidates)
    if not candidates:
        raise InvalidArgument("entropy bound needs at least one candidate policy")
    reference = discounted_entropy(spec, demonstrator, agent)
    return float(lam * max(abs(discounted_entropy(spec, c, agent) - reference) for c in candidates))


def soft_best_response(spec, agent, fixed_opponents, lam, max_iterations=MAX_ITERATIONS):
    """Entropy-regularized best response: maximizes v_i + lam * discounted entropy.

    Returns (soft values (S,), policy (S, A_i)).
    """
    if lam <= 0:
        return best_response(spec, agent, fixed_opponents, max_iterations)
    opponents = _as_opponents(spec, agent, fixed_opponents)
    rewards, transitions = induced_mdp(spec, agent, opponents)
    gamma = spec.discount
    values = _iterate(lambda v: lam * logsumexp((rewards + gamma * transitions @ v) / lam, axis=1),
                      spec.n_states, f"soft best response of agent {agent}", max_iterations)
    q = rewards + gamma * transitions @ values
    policy = np.exp((q - values[:, None]) / lam)
    return values, policy / policy.sum(axis=1, keepdims=True)


@dataclass
class CertificateRow:
    candidate: int
    value_gain: float
    bound: float
    holds: bool


def entropy_certificate(spec, agent, candidates, demonstrator, lam):
    """Check v(c) - v(pi_E) <= lam * max|H(c) - H(pi_E)| + slack for every candidate c.

    Candidates are joint profiles in which only `agent` departs from the demonstrator.
    `slack` is how far the demonstrator falls short of the entropy-regularized optimum
    against its own opponents; it is zero for a soft-optimal demonstrator.
    """
    candidates = list(candidates)
    epsilon = entropy_bound_epsilon(spec, agent, candidates, demonstrator, lam)
    soft_values, _ = soft_best_response(spec, agent, demonstrator.opponents(agent), lam)
    reference = float(spec.initial @ state_values(spec, demonstrator, agent))
    regularized = reference + lam * discounted_entropy(spec, demonstrator, agent)
    slack = max(float(spec.initial @ soft_values) - regularized, 0.0)

    rows = []
    for k, candidate in enumerate(candidates):
        gain = float(spec.initial @ state_values(spec, candidate, agent)) - reference
        bound = epsilon + slack
        rows.append(CertificateRow(candidate=k, value_gain=gain, bound=bound, holds=gain <= bound + 1e-8))
    return {'epsilon': epsilon, 'slack': slack, 'rows': rows, 'holds': all(row.holds for row in rows)}


############################################################
# DIVERGENCES
############################################################

def occupancy_kl(p, q):
    """KL between normalized occupancy tables, floored on q."""
    p_norm = p.normalized().ravel()
    q_norm = np.maximum(q.normalized().ravel(), KL_FLOOR)
    return float(np.sum(rel_entr(p_norm, q_norm)))


def total_variation(p, q):
    return 0.5 * float(np.sum(np.abs(np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64))))


def best_product_tv(joint, resolution=1000):
    """Brute-force minimum TV between a 2-agent joint (A1, A2) and any product distribution."""
    joint = np.asarray(joint, dtype=np.float64)
    if joint.ndim != 2:
        raise InvalidArgument(f"best product fit takes a 2-agent joint table, got shape {joint.shape}")
    first = _simplex_grid(joint.shape[0], resolution)
    second = _simplex_grid(joint.shape[1], resolution)
    best = np.inf
    for p in first:
        products = p[None, :, None] * second[:, None, :]
        best = min(best, float(0.5 * np.min(np.abs(products - joint[None]).sum(axis=(1, 2)))))
    return best


def _simplex_grid(n_actions, resolution):
    if n_actions == 1:
        return np.ones((1, 1))
    if n_actions == 2:
        p = np.linspace(0.0, 1.0, resolution + 1)
        return np.stack([p, 1.0 - p], axis=1)
    coarse = max(2, int(round(resolution ** (1.0 / (n_actions - 1)))))
    points = [np.diff([0, *cut, coarse]) / coarse
              for cut in itertools.combinations_with_replacement(range(coarse + 1), n_actions - 1)]
    return np.array(points)


############################################################
# RANDOM INSTANCES
############################################################

def random_game(rng, n_states, action_sizes, discount=0.9, reward_scale=1.0, horizon=50):
    joint_size = int(np.prod(action_sizes))
    transitions = rng.dirichlet(np.ones(n_states), size=(n_states, joint_size))
    rewards = rng.uniform(-reward_scale, reward_scale, size=(len(action_sizes), n_states, joint_size))
    initial = rng.dirichlet(np.ones(n_states))
    return TabularGame(action_sizes, transitions, rewards, initial, discount=discount, horizon=horizon,
                       name=f'random-{n_states}x{joint_size}')


def random_joint_policy(rng, spec, correlated=False):
    if correlated:
        return TabularJointPolicy(spec, rng.dirichlet(np.ones(spec.joint_index.size), size=spec.n_states))
    return TabularJointPolicy.non_correlated(
        spec, [rng.dirichlet(np.ones(n), size=spec.n_states) for n in spec.action_sizes])
