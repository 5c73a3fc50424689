import collections
import contextlib
import logging
import threading

import numpy as np

from . import nn
from .errors import InvalidArgument, NumericalAbort, StorageError
from .game import Decision, categorical_draw

log = logging.getLogger('agents')

CORRELATED = 'correlated'
NON_CORRELATED = 'non_correlated'
KINDS = (CORRELATED, NON_CORRELATED)
DEFAULT_ENTROPY_WEIGHT = 0.05


############################################################
# DECENTRALIZATION AUDIT
############################################################

_scope = threading.local()


@contextlib.contextmanager
def acting_as(agent):
    previous = getattr(_scope, 'agent', None)
    _scope.agent = agent
    try:
        yield
    finally:
        _scope.agent = previous


def current_actor():
    return getattr(_scope, 'agent', None)


class ParameterAudit:
    """Counts parameter reads per (acting agent, owning agent) while installed."""

    def __init__(self):
        self.reads = collections.Counter()
        self._lock = threading.Lock()

    def __call__(self, model):
        actor = current_actor()
        if actor is None or model.owner is None:
            return
        with self._lock:
            self.reads[(actor, model.owner)] += 1

    @property
    def cross_agent_reads(self):
        return sum(count for (actor, owner), count in self.reads.items() if actor != owner)

    def __enter__(self):
        nn.observers.append(self)
        return self

    def __exit__(self, *exc):
        nn.observers.remove(self)
        return False


############################################################
# ENCODINGS
############################################################

def encode_opponents(opponent_actions, opponent_sizes):
    """Concatenated one-hot blocks for the opponents in ascending index, shape (B, sum sizes).

    `None` rows (no previous action) encode as zeros.
    """
    width = int(sum(opponent_sizes))
    if opponent_actions is None:
        return None
    opponent_actions = np.asarray(opponent_actions, dtype=np.int64)
    opponent_actions = np.atleast_2d(opponent_actions)
    if opponent_actions.shape[1] != len(opponent_sizes):
        raise InvalidArgument(f"expected {len(opponent_sizes)} opponent actions, got {opponent_actions.shape[1]}")
    blocks = [nn.one_hot(opponent_actions[:, k], size) for k, size in enumerate(opponent_sizes)]
    out = np.concatenate(blocks, axis=1) if blocks else np.zeros((opponent_actions.shape[0], width))
    return out


def previous_opponent_encoding(actions, opponents, opponent_sizes, steps):
    """enc(a_{t-1}^{-i}) for t = 0..steps-1 with a zero block at t = 0."""
    width = int(sum(opponent_sizes))
    encoded = np.zeros((steps, width))
    if steps > 1:
        encoded[1:] = encode_opponents(actions[:steps - 1, opponents], opponent_sizes)
    return encoded


############################################################
# POLICIES
############################################################

class _CategoricalPolicy:
    def __init__(self, model):
        self.model = model

    @property
    def n_actions(self):
        return self.model.out_size

    def logits(self, inputs):
        return self.model.forward(np.atleast_2d(inputs))

    def distribution(self, inputs):
        return nn.probabilities(self.logits(inputs))

    def log_prob(self, inputs, actions):
        logp = nn.log_probabilities(self.logits(inputs))
        return np.take_along_axis(logp, np.asarray(actions, dtype=np.int64)[:, None], axis=1)[:, 0]

    def entropy(self, inputs):
        return nn.entropy(self.logits(inputs))


class NonCorrelatedPolicy(_CategoricalPolicy):
    """pi_i(a_i | s): observation in, action logits out."""

    kind = NON_CORRELATED

    def inputs(self, observations, opponent_actions=None):
        return np.atleast_2d(observations)


class CorrelatedPolicy(_CategoricalPolicy):
    """pi_i(a_i | s, a_-i): input is observation followed by the one-hot opponent blocks."""

    kind = CORRELATED

    def __init__(self, model, opponent_sizes):
        super().__init__(model)
        self.opponent_sizes = tuple(opponent_sizes)

    def inputs(self, observations, opponent_actions):
        observations = np.atleast_2d(observations)
        return np.concatenate([observations, encode_opponents(opponent_actions, self.opponent_sizes)], axis=1)

    def conditional_table(self, observations):
        """pi_i(. | s, o) for every opponent joint action o, shape (B, O, A_i)."""
        observations = np.atleast_2d(observations)
        grid = np.array(list(np.ndindex(*self.opponent_sizes)), dtype=np.int64).reshape(-1, len(self.opponent_sizes))
        rows = [self.distribution(self.inputs(np.repeat(obs[None], len(grid), axis=0), grid)) for obs in observations]
        return np.stack(rows)


def sample_conditional(policy, observations, opponent_actions, rngs):
    """a_i ~ pi_i(. | s, a_-i) per row; returns (actions, log-probabilities)."""
    inputs = policy.inputs(observations, opponent_actions)
    probs = policy.distribution(inputs)
    actions = categorical_draw(probs, np.array([rng.random() for rng in rngs]))
    logp = np.log(np.take_along_axis(probs, actions[:, None], axis=1)[:, 0])
    return actions, logp


def marginal_distribution(policy, observations, opponent_model, samples, rngs):
    """Average of the conditionals over `samples` opponent draws from the opponent model.

    Returns (mixture (B, A_i), drawn opponent actions (B, K, N-1), per-draw conditionals (B, K, A_i)).
    """
    if samples < 1:
        raise InvalidArgument(f"marginalization needs at least one opponent sample, got {samples}")
    observations = np.atleast_2d(observations)
    draws = np.stack([opponent_model.sample(observations, rngs) for _ in range(samples)], axis=1)
    conditionals = np.stack([policy.distribution(policy.inputs(observations, draws[:, k]))
                             for k in range(samples)], axis=1)
    return conditionals.mean(axis=1), draws, conditionals


def marginal_action(policy, observations, opponent_model, samples, rngs):
    """Sample from the opponent-averaged mixture; K=1 is sample-then-condition.

    Also returns, per row, one opponent draw picked by its posterior responsibility for the
    chosen action, which is the opponent action the decision was conditioned on.
    """
    mixture, draws, conditionals = marginal_distribution(policy, observations, opponent_model, samples, rngs)
    actions = categorical_draw(mixture, np.array([rng.random() for rng in rngs]))
    if samples == 1:
        return actions, draws[:, 0]
    responsibility = np.take_along_axis(conditionals, actions[:, None, None], axis=2)[:, :, 0]
    responsibility = responsibility / responsibility.sum(axis=1, keepdims=True)
    picked = categorical_draw(responsibility, np.array([rng.random() for rng in rngs]))
    return actions, draws[np.arange(len(actions)), picked]


############################################################
# OPPONENT MODELS AND VALUES
############################################################

class OpponentModel:
    """sigma_i(a_-i | s) as one network whose output splits into one softmax head per opponent."""

    def __init__(self, model, opponent_sizes):
        if model.out_size != sum(opponent_sizes):
            raise InvalidArgument(f"opponent model output {model.out_size} != head widths {opponent_sizes}")
        self.model = model
        self.opponent_sizes = tuple(opponent_sizes)
        self._bounds = np.cumsum((0,) + self.opponent_sizes)

    def head_logits(self, observations):
        out = self.model.forward(np.atleast_2d(observations))
        return [out[:, lo:hi] for lo, hi in zip(self._bounds[:-1], self._bounds[1:])]

    def head_probabilities(self, observations):
        return [nn.probabilities(logits) for logits in self.head_logits(observations)]

    def joint_distribution(self, observations):
        """Product over heads in row-major opponent joint order, shape (B, O)."""
        heads = self.head_probabilities(observations)
        joint = heads[0]
        for head in heads[1:]:
            joint = (joint[:, :, None] * head[:, None, :]).reshape(joint.shape[0], -1)
        return joint

    def sample(self, observations, rngs):
        heads = self.head_probabilities(observations)
        return np.stack([categorical_draw(head, np.array([rng.random() for rng in rngs])) for head in heads], axis=1)


class ValueFunction:
    """V_i(s, a_{t-1}^{-i}): observation followed by the previous opponent one-hot blocks."""

    def __init__(self, model):
        self.model = model

    def predict(self, inputs):
        return self.model.forward(np.atleast_2d(inputs))[:, 0]


############################################################
# LOSSES AND STEPS
############################################################

def opponent_model_loss(model, observations, opponent_actions):
    """Mean cross-entropy over batch and heads; returns (loss, gradient)."""
    observations = np.atleast_2d(observations)
    opponent_actions = np.atleast_2d(np.asarray(opponent_actions, dtype=np.int64))
    if observations.shape[0] == 0:
        raise InvalidArgument("opponent model loss needs a nonempty batch")
    batch, heads = observations.shape[0], len(model.opponent_sizes)
    upstream, loss = [], 0.0
    for k, logits in enumerate(model.head_logits(observations)):
        logp = nn.log_probabilities(logits)
        target = nn.one_hot(opponent_actions[:, k], model.opponent_sizes[k])
        loss -= float(np.sum(target * logp))
        upstream.append((np.exp(logp) - target) / (batch * heads))
    return loss / (batch * heads), model.model.backward(observations, np.concatenate(upstream, axis=1))


def policy_loss(policy, inputs, actions, advantages, lam):
    """-mean(A log pi(a|x)) - lam * mean H(pi(.|x)); returns (loss, gradient, mean entropy)."""
    advantages = np.asarray(advantages, dtype=np.float64)
    if not np.all(np.isfinite(advantages)):
        raise NumericalAbort("non-finite advantage in policy gradient step")
    if lam < 0:
        raise InvalidArgument(f"entropy weight must be non-negative, got {lam}")
    logits = policy.logits(inputs)
    logp = nn.log_probabilities(logits)
    batch = logits.shape[0]
    target = nn.one_hot(actions, policy.n_actions)
    chosen = np.sum(target * logp, axis=1)
    entropies = -np.sum(np.exp(logp) * logp, axis=1)
    loss = -float(np.mean(advantages * chosen)) - lam * float(np.mean(entropies))
    upstream = -(advantages[:, None] * (target - np.exp(logp))) / batch - lam * nn.entropy_logit_gradient(logits) / batch
    return loss, policy.model.backward(inputs, upstream), float(np.mean(entropies))


def policy_gradient_step(policy, optimizer, inputs, actions, advantages, lam=DEFAULT_ENTROPY_WEIGHT):
    loss, gradient, mean_entropy = policy_loss(policy, inputs, actions, advantages, lam)
    optimizer.step(policy.model, gradient)
    return {'pg_loss': loss, 'entropy': mean_entropy}


def behavior_cloning_step(policy, optimizer, inputs, actions):
    loss, gradient, mean_entropy = policy_loss(policy, inputs, actions, np.ones(len(actions)), 0.0)
    optimizer.step(policy.model, gradient)
    return {'bc_loss': loss, 'entropy': mean_entropy}


def value_loss(value_fn, inputs, targets):
    predictions = value_fn.predict(inputs)
    residual = predictions - np.asarray(targets, dtype=np.float64)
    loss = float(np.mean(residual ** 2))
    return loss, value_fn.model.backward(inputs, (2.0 * residual / len(residual))[:, None])


def value_step(value_fn, optimizer, inputs, targets):
    loss, gradient = value_loss(value_fn, inputs, targets)
    optimizer.step(value_fn.model, gradient)
    return {'v_loss': loss}


def advantages_from_values(values, rewards, gamma, absorbed=False):
    """T-step return to the episode tail plus gamma^(T-t) V(s_T), minus V(s_t).

    `values` holds V at s_0..s_T; an absorbed tail bootstraps with zero. Returns
    (advantages, value targets).
    """
    values = np.asarray(values, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    steps = rewards.shape[0]
    if values.shape[0] != steps + 1:
        raise InvalidArgument(f"need {steps + 1} values for {steps} rewards, got {values.shape[0]}")
    targets = np.zeros(steps)
    running = 0.0 if absorbed else values[steps]
    for t in range(steps - 1, -1, -1):
        running = rewards[t] + gamma * running
        targets[t] = running
    return targets - values[:steps], targets


def advantage_estimates(value_fn, value_inputs, rewards, gamma, absorbed=False):
    return advantages_from_values(value_fn.predict(value_inputs), rewards, gamma, absorbed)


############################################################
# AGENT BUNDLE
############################################################

class Agent:
    """Everything one learner owns: policy, opponent model, value function and their optimizers."""

    def __init__(self, index, kind, observation_size, action_sizes, hidden=nn.HIDDEN, lr=3e-4, seed=0,
                 samples=1, opponent_model=True):
        if kind not in KINDS:
            raise InvalidArgument(f"unknown policy kind {kind!r}, expected one of {KINDS}")
        self.index = index
        self.kind = kind
        self.samples = int(samples)
        self.opponents = [j for j in range(len(action_sizes)) if j != index]
        self.opponent_sizes = tuple(action_sizes[j] for j in self.opponents)
        width = int(sum(self.opponent_sizes))
        n_actions = action_sizes[index]

        def network(role, in_size, out_size):
            return nn.Mlp(in_size, out_size, hidden, rng=np.random.default_rng([seed, index, role]), owner=index)

        if kind == CORRELATED:
            self.policy = CorrelatedPolicy(network(0, observation_size + width, n_actions), self.opponent_sizes)
        else:
            self.policy = NonCorrelatedPolicy(network(0, observation_size, n_actions))
        self.opponent_model = OpponentModel(network(1, observation_size, width), self.opponent_sizes) \
            if (kind == CORRELATED or opponent_model) else None
        self.value_fn = ValueFunction(network(2, observation_size + width, 1))
        self.optimizers = {role: nn.Adam(model.params.size, lr=lr) for role, model in self.models().items()}

    def models(self):
        models = {'policy': self.policy.model, 'value': self.value_fn.model}
        if self.opponent_model is not None:
            models['opponent'] = self.opponent_model.model
        return models

    def decide(self, observations, rngs, signals):
        with acting_as(self.index):
            if self.kind == NON_CORRELATED:
                probs = self.policy.distribution(observations)
                return Decision(categorical_draw(probs, np.array([rng.random() for rng in rngs])))
            actions, conditioning = marginal_action(self.policy, observations, self.opponent_model, self.samples, rngs)
            return Decision(actions, conditioning)

    def marginal(self, observations, samples=8, rng=None):
        """pi_i(. | s) for evaluation: the opponent-averaged conditional at K samples."""
        with acting_as(self.index):
            observations = np.atleast_2d(observations)
            if self.kind == NON_CORRELATED:
                return self.policy.distribution(observations)
            rng = rng or np.random.default_rng([self.index, samples])
            mixture, _, _ = marginal_distribution(self.policy, observations, self.opponent_model, samples,
                                                  [rng] * observations.shape[0])
            return mixture

    def policy_inputs(self, observations, opponent_actions):
        return self.policy.inputs(observations, opponent_actions)

    def value_inputs(self, observations, actions):
        """Observations at s_0..s_T with the previous opponent actions appended."""
        steps = observations.shape[0]
        encoded = previous_opponent_encoding(actions, self.opponents, self.opponent_sizes, steps)
        return np.concatenate([observations, encoded], axis=1)


def make_agents(spec, kind, hidden=nn.HIDDEN, lr=3e-4, seed=0, samples=1, opponent_model=True):
    return [Agent(i, kind, spec.observation_size(i), spec.action_sizes, hidden=hidden, lr=lr, seed=seed,
                  samples=samples, opponent_model=opponent_model) for i in range(spec.agent_count)]


def restore_agents(spec, metadata, models):
    """Rebuild agents from `nn.load_checkpoint` output; roles are keyed 'agent<i>/<role>'."""
    kind = metadata.get('kind')
    agents = []
    for i in range(spec.agent_count):
        policy = models.get(f'agent{i}/policy')
        if policy is None:
            raise StorageError(f"checkpoint has no policy for agent {i}")
        agent = Agent(i, kind, spec.observation_size(i), spec.action_sizes, hidden=policy.hidden,
                      samples=metadata.get('samples', 1), opponent_model=f'agent{i}/opponent' in models)
        for role, model in agent.models().items():
            stored = models.get(f'agent{i}/{role}')
            if stored is None or stored.params.size != model.params.size:
                raise StorageError(f"checkpoint {role} network of agent {i} does not fit {spec.name}")
            model.params = stored.params
        agents.append(agent)
    return agents
