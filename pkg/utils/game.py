import concurrent.futures
import dataclasses
import itertools
import json
import logging
import os
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import misc
from .errors import InvalidArgument, StorageError

log = logging.getLogger('game')

BATCH_FORMAT = 'codail-batch/1'
DEFAULT_HORIZON = 50

# sub-stream counters under one (seed, episode) pair
ENV_STREAM = 0
PUBLIC_STREAM = 1
AGENT_STREAM_BASE = 2


############################################################
# JOINT ACTIONS
############################################################

class JointActionIndex:
    """Row-major enumeration of joint actions and of each agent's opponent joint actions.

    Opponent joint actions list the other agents in ascending index, matching the
    one-hot block order used by the learners.
    """

    def __init__(self, action_sizes):
        self.action_sizes = tuple(int(n) for n in action_sizes)
        if any(n < 1 for n in self.action_sizes):
            raise InvalidArgument(f"every agent needs at least one action, got {self.action_sizes}")
        self.size = int(np.prod(self.action_sizes))
        self.table = np.array(list(itertools.product(*[range(n) for n in self.action_sizes])),
                              dtype=np.int64).reshape(self.size, len(self.action_sizes))

    @property
    def agent_count(self):
        return len(self.action_sizes)

    def index(self, joint):
        return int(np.ravel_multi_index(tuple(int(a) for a in joint), self.action_sizes))

    def actions(self, index):
        return tuple(int(a) for a in self.table[index])

    def opponents(self, agent):
        return [j for j in range(self.agent_count) if j != agent]

    def opponent_sizes(self, agent):
        return tuple(self.action_sizes[j] for j in self.opponents(agent))

    def opponent_count(self, agent):
        return int(np.prod(self.opponent_sizes(agent)))

    def opponent_index(self, agent, opponent_actions):
        return int(np.ravel_multi_index(tuple(int(a) for a in opponent_actions), self.opponent_sizes(agent)))

    def opponent_actions(self, agent, index):
        return tuple(int(a) for a in np.unravel_index(int(index), self.opponent_sizes(agent)))

    def own(self, agent):
        """Own action of `agent` for every joint index, shape (J,)."""
        return self.table[:, agent]

    def opponent_indices(self, agent):
        """Opponent joint index of `agent` for every joint index, shape (J,)."""
        others = self.table[:, self.opponents(agent)]
        if others.shape[1] == 0:
            return np.zeros(self.size, dtype=np.int64)
        return np.ravel_multi_index(tuple(others.T), self.opponent_sizes(agent))

    def compose(self, agent, own_action, opponent_index):
        opp = self.opponent_actions(agent, opponent_index)
        joint = list(opp[:agent]) + [int(own_action)] + list(opp[agent:])
        return self.index(joint)


def validate_joint_action(spec, joint_action):
    joint = tuple(joint_action)
    if len(joint) != spec.agent_count:
        raise InvalidArgument(f"joint action has {len(joint)} entries, game has {spec.agent_count} agents")
    checked = []
    for agent, (action, size) in enumerate(zip(joint, spec.action_sizes)):
        if isinstance(action, (bool, np.bool_)) or not isinstance(action, (int, np.integer)):
            raise InvalidArgument(f"action of agent {agent} must be an integer index, got {action!r}")
        if not 0 <= int(action) < size:
            raise InvalidArgument(f"action {int(action)} of agent {agent} is outside its {size} actions")
        checked.append(int(action))
    return tuple(checked)


############################################################
# GAME SPECS
############################################################

class GameSpec:
    """An N-agent Markov game. Instances are immutable after construction."""

    name = 'game'
    tabular = False

    def __init__(self, action_sizes, discount, horizon=DEFAULT_HORIZON):
        if len(action_sizes) < 2:
            raise InvalidArgument(f"a Markov game needs at least 2 agents, got {len(action_sizes)}")
        if not 0.0 <= float(discount) < 1.0:
            raise InvalidArgument(f"discount must lie in [0, 1), got {discount}")
        if int(horizon) < 1:
            raise InvalidArgument(f"horizon must be positive, got {horizon}")
        self.joint_index = JointActionIndex(action_sizes)
        self.action_sizes = self.joint_index.action_sizes
        self.discount = float(discount)
        self.horizon = int(horizon)

    @property
    def agent_count(self):
        return len(self.action_sizes)

    def with_horizon(self, horizon):
        clone = self.__class__.__new__(self.__class__)
        clone.__dict__.update(self.__dict__)
        if int(horizon) < 1:
            raise InvalidArgument(f"horizon must be positive, got {horizon}")
        clone.horizon = int(horizon)
        return clone

    def observation_size(self, agent):
        raise NotImplementedError

    def initial_state(self, rng):
        raise NotImplementedError

    def transition(self, state, joint_action, rng):
        raise NotImplementedError

    def reward(self, state, joint_action):
        raise NotImplementedError

    def observe(self, state, agent):
        raise NotImplementedError

    def is_absorbing(self, state):
        return False

    def encode_state(self, state):
        raise NotImplementedError

    def decode_state(self, data):
        raise NotImplementedError


class TabularGame(GameSpec):
    """Finite Markov game given by explicit tables.

    transitions: (S, J, S) with rows over successor states, rewards: (N, S, J),
    initial: (S,). Joint actions are indexed by `JointActionIndex`.
    """

    tabular = True

    def __init__(self, action_sizes, transitions, rewards, initial, discount, horizon=DEFAULT_HORIZON,
                 states=None, absorbing=(), name='tabular'):
        super().__init__(action_sizes, discount, horizon)
        transitions = np.array(transitions, dtype=np.float64)
        rewards = np.array(rewards, dtype=np.float64)
        initial = np.array(initial, dtype=np.float64)
        n_states = initial.shape[0]
        violations = []
        if transitions.shape != (n_states, self.joint_index.size, n_states):
            violations.append(f"transition table shape {transitions.shape} != {(n_states, self.joint_index.size, n_states)}")
        elif np.any(transitions < 0) or np.max(np.abs(transitions.sum(axis=2) - 1.0)) > 1e-9:
            violations.append("transition rows must be distributions summing to 1 within 1e-9")
        if rewards.shape != (self.agent_count, n_states, self.joint_index.size):
            violations.append(f"reward table shape {rewards.shape} != {(self.agent_count, n_states, self.joint_index.size)}")
        elif not np.all(np.isfinite(rewards)):
            violations.append("every reward value must be finite")
        if np.any(initial < 0) or abs(initial.sum() - 1.0) > 1e-9:
            violations.append("initial distribution must sum to 1 within 1e-9")
        if violations:
            raise InvalidArgument('; '.join(violations))
        self.name = name
        self.n_states = n_states
        self.states = tuple(states) if states else tuple(f's{k}' for k in range(n_states))
        self.absorbing = frozenset(int(s) for s in absorbing)
        self.transitions = transitions
        self.rewards = rewards
        self.initial = initial
        for table in (self.transitions, self.rewards, self.initial):
            table.setflags(write=False)
        self._cumulative = np.cumsum(transitions, axis=2)
        self._initial_cumulative = np.cumsum(initial)

    def observation_size(self, agent):
        return self.n_states

    def initial_state(self, rng):
        return int(min(np.searchsorted(self._initial_cumulative, rng.random(), side='right'), self.n_states - 1))

    def transition(self, state, joint_action, rng):
        row = self._cumulative[state, self.joint_index.index(joint_action)]
        return int(min(np.searchsorted(row, rng.random(), side='right'), self.n_states - 1))

    def reward(self, state, joint_action):
        return self.rewards[:, state, self.joint_index.index(joint_action)].copy()

    def observe(self, state, agent):
        obs = np.zeros(self.n_states)
        obs[state] = 1.0
        return obs

    def is_absorbing(self, state):
        return int(state) in self.absorbing

    def encode_state(self, state):
        return int(state)

    def decode_state(self, data):
        state = int(data)
        if not 0 <= state < self.n_states:
            raise InvalidArgument(f"state {state} outside the {self.n_states} states of {self.name}")
        return state


def load_tabular(path):
    """Load a tabular game from its declarative JSON description.

    Keys: name, actions (per-agent action counts), states (names), discount, horizon,
    initial ({state: prob}), absorbing ([state]), transitions and rewards as row lists.
    A transition row is {"state", "actions": [a1..aN] or "*", "next": {state: prob}};
    a reward row is {"state", "actions", "values": [r1..rN]}. Later rows override earlier
    ones; a missing transition row means the state repeats itself.
    """
    try:
        with open(path, 'r') as fp:
            description = json.load(fp)
    except (OSError, ValueError) as e:
        raise StorageError(f"cannot read tabular game {path}: {e}") from e

    try:
        states = list(description['states'])
        action_sizes = [int(n) for n in description['actions']]
        position = {name: k for k, name in enumerate(states)}
        index = JointActionIndex(action_sizes)
        n_states = len(states)

        transitions = np.zeros((n_states, index.size, n_states))
        transitions[np.arange(n_states), :, np.arange(n_states)] = 1.0
        for row in description.get('transitions', []):
            target = np.zeros(n_states)
            for name, prob in row['next'].items():
                target[position[name]] = float(prob)
            for j in _row_joint_indices(index, row.get('actions', '*')):
                transitions[position[row['state']], j] = target

        rewards = np.zeros((len(action_sizes), n_states, index.size))
        for row in description.get('rewards', []):
            for j in _row_joint_indices(index, row.get('actions', '*')):
                rewards[:, position[row['state']], j] = [float(v) for v in row['values']]

        initial = np.zeros(n_states)
        for name, prob in description.get('initial', {states[0]: 1.0}).items():
            initial[position[name]] = float(prob)
        absorbing = [position[name] for name in description.get('absorbing', [])]
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidArgument(f"malformed tabular game description {path}: {e!r}") from e

    return TabularGame(action_sizes, transitions, rewards, initial,
                       discount=description.get('discount', 0.9),
                       horizon=description.get('horizon', DEFAULT_HORIZON),
                       states=states, absorbing=absorbing,
                       name=description.get('name', os.path.splitext(os.path.basename(path))[0]))


def _row_joint_indices(index, actions):
    if actions == '*':
        return range(index.size)
    pattern = [None if a == '*' else int(a) for a in actions]
    return [j for j in range(index.size)
            if all(p is None or p == a for p, a in zip(pattern, index.table[j]))]


############################################################
# TRANSITIONS AND BATCHES
############################################################

@dataclass(frozen=True)
class Transition:
    state: object
    joint_action: tuple
    rewards: tuple
    next_state: object
    terminal: bool = False
    # opponent actions each agent conditioned on when acting (None for non-correlated agents)
    conditioning: Optional[tuple] = None


@dataclass
class InteractionBatch:
    episodes: list
    metadata: dict = field(default_factory=dict)

    @property
    def agent_count(self):
        for episode in self.episodes:
            for transition in episode:
                return len(transition.joint_action)
        return 0

    @property
    def transition_count(self):
        return sum(len(episode) for episode in self.episodes)

    def validate(self, spec):
        for e, episode in enumerate(self.episodes):
            if len(episode) > spec.horizon:
                raise InvalidArgument(f"episode {e} has {len(episode)} steps, horizon is {spec.horizon}")
            for transition in episode:
                if len(transition.joint_action) != spec.agent_count or len(transition.rewards) != spec.agent_count:
                    raise InvalidArgument(f"episode {e} does not match the {spec.agent_count}-agent schema of {spec.name}")
        return True


def step(spec, state, joint_action, rng):
    joint = validate_joint_action(spec, joint_action)
    rewards = np.asarray(spec.reward(state, joint), dtype=np.float64)
    if rewards.shape != (spec.agent_count,):
        raise InvalidArgument(f"scenario {spec.name} produced {rewards.shape} rewards for {spec.agent_count} agents")
    if not np.all(np.isfinite(rewards)):
        raise InvalidArgument(f"scenario {spec.name} produced a non-finite reward {rewards.tolist()} for {joint}")
    next_state = spec.transition(state, joint, rng)
    return Transition(state=state, joint_action=joint, rewards=tuple(float(r) for r in rewards),
                      next_state=next_state, terminal=spec.is_absorbing(next_state))


############################################################
# DECISION MAKERS
############################################################

class Decision(NamedTuple):
    actions: np.ndarray
    conditioning: Optional[np.ndarray] = None


def categorical_draw(probabilities, uniforms):
    """Inverse-CDF sampling, one uniform per row."""
    probabilities = np.atleast_2d(probabilities)
    cumulative = np.cumsum(probabilities, axis=1)
    drawn = (np.asarray(uniforms)[:, None] >= cumulative).sum(axis=1)
    return np.minimum(drawn, probabilities.shape[1] - 1)


class UniformPolicy:
    def __init__(self, n_actions):
        self.n_actions = int(n_actions)

    def decide(self, observations, rngs, signals):
        return Decision(np.array([rng.integers(self.n_actions) for rng in rngs], dtype=np.int64))


class TablePolicy:
    """Fixed per-state action table for tabular games (observation is the one-hot state)."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)

    def decide(self, observations, rngs, signals):
        states = np.argmax(np.atleast_2d(observations), axis=1)
        uniforms = np.array([rng.random() for rng in rngs])
        return Decision(categorical_draw(self.table[states], uniforms))


class JointTablePolicy:
    """One agent's share of a correlated joint table (S, J).

    All agents read the same public signal, so every agent draws the same joint action and
    plays its own component: a decentralized realization of any joint distribution.
    """

    def __init__(self, joint_index, agent, joint_table):
        self.joint_index = joint_index
        self.agent = agent
        self.joint_table = np.asarray(joint_table, dtype=np.float64)

    def decide(self, observations, rngs, signals):
        states = np.argmax(np.atleast_2d(observations), axis=1)
        joint = categorical_draw(self.joint_table[states], signals)
        return Decision(self.joint_index.own(self.agent)[joint])


############################################################
# ROLLOUTS
############################################################

class EpisodeStreams(NamedTuple):
    env: np.random.Generator
    public: np.random.Generator
    agents: list


def episode_streams(seed, episode, agent_count):
    """Counter scheme: stream k of episode e under master seed s is SeedSequence([s, e, k])."""
    return EpisodeStreams(env=np.random.default_rng([seed, episode, ENV_STREAM]),
                          public=np.random.default_rng([seed, episode, PUBLIC_STREAM]),
                          agents=[np.random.default_rng([seed, episode, AGENT_STREAM_BASE + i])
                                  for i in range(agent_count)])


def rollout(spec, decision_makers, episodes, seed, horizon=None, workers=1, generator='rollout', first_episode=0):
    if int(episodes) < 1:
        raise InvalidArgument(f"rollout needs at least one episode, got {episodes}")
    if len(decision_makers) != spec.agent_count:
        raise InvalidArgument(f"{len(decision_makers)} decision makers for {spec.agent_count} agents")
    horizon = int(horizon or spec.horizon)
    ids = list(range(first_episode, first_episode + int(episodes)))

    if workers > 1 and len(ids) > 1:
        chunks = [chunk.tolist() for chunk in np.array_split(ids, min(workers, len(ids)))]
        with concurrent.futures.ThreadPoolExecutor(max_workers=len(chunks)) as executor:
            futures = [executor.submit(_rollout_chunk, spec, decision_makers, chunk, seed, horizon) for chunk in chunks]
            recorded = [episode for future in futures for episode in future.result()]
    else:
        recorded = _rollout_chunk(spec, decision_makers, ids, seed, horizon)

    return InteractionBatch(episodes=recorded,
                            metadata={'scenario': spec.name, 'seed': int(seed), 'generator': generator})


def _rollout_chunk(spec, decision_makers, ids, seed, horizon):
    streams = [episode_streams(seed, e, spec.agent_count) for e in ids]
    states = [spec.initial_state(s.env) for s in streams]
    recorded = [[] for _ in ids]
    active = list(range(len(ids)))

    for t in range(horizon):
        if not active:
            break
        signals = np.array([streams[k].public.random() for k in active])
        decisions = []
        for agent, decision_maker in enumerate(decision_makers):
            observations = np.stack([spec.observe(states[k], agent) for k in active])
            decision = decision_maker.decide(observations, [streams[k].agents[agent] for k in active], signals)
            actions = np.asarray(decision.actions)
            if actions.shape != (len(active),):
                raise InvalidArgument(f"agent {agent} returned {actions.shape} actions for {len(active)} episodes at step {t}")
            bad = np.flatnonzero((actions < 0) | (actions >= spec.action_sizes[agent]))
            if bad.size:
                raise InvalidArgument(f"agent {agent} emitted out-of-range action {int(actions[bad[0]])} "
                                      f"at step {t} of episode {ids[active[bad[0]]]}")
            decisions.append(decision)

        still_active = []
        for pos, k in enumerate(active):
            joint = tuple(int(d.actions[pos]) for d in decisions)
            transition = step(spec, states[k], joint, streams[k].env)
            conditioning = None
            if any(d.conditioning is not None for d in decisions):
                conditioning = tuple(None if d.conditioning is None else tuple(int(a) for a in d.conditioning[pos])
                                     for d in decisions)
            terminal = transition.terminal or t == horizon - 1
            recorded[k].append(dataclasses.replace(transition, terminal=terminal, conditioning=conditioning))
            states[k] = transition.next_state
            if not terminal:
                still_active.append(k)
        active = still_active

    return recorded


def discounted_return(episode, agent, gamma):
    if not 0.0 <= gamma < 1.0:
        raise InvalidArgument(f"discount must lie in [0, 1), got {gamma}")
    if episode and not 0 <= agent < len(episode[0].rewards):
        raise InvalidArgument(f"agent {agent} out of range")
    total, weight = 0.0, 1.0
    for transition in episode:
        total += weight * transition.rewards[agent]
        weight *= gamma
    return total


def episode_return(episode, agents):
    agents = [agents] if isinstance(agents, int) else list(agents)
    return float(sum(transition.rewards[i] for transition in episode for i in agents))


def verify_rewards(spec, batch):
    """Replay every recorded step through the reward map; raise on the first mismatch."""
    for e, episode in enumerate(batch.episodes):
        for t, transition in enumerate(episode):
            replayed = tuple(float(r) for r in spec.reward(transition.state, transition.joint_action))
            if replayed != tuple(transition.rewards):
                raise InvalidArgument(f"episode {e} step {t}: stored rewards {transition.rewards} != replayed {replayed}")
    return True


############################################################
# ARRAY VIEWS
############################################################

@dataclass
class EpisodeArrays:
    observations: list   # per agent (T+1, d_i), last row observes the final state
    actions: np.ndarray  # (T, N)
    rewards: np.ndarray  # (T, N)
    conditioning: list   # per agent (T, N-1) or None
    absorbed: bool

    @property
    def length(self):
        return self.actions.shape[0]


def episode_arrays(spec, episode):
    states = [transition.state for transition in episode] + [episode[-1].next_state]
    observations = [np.stack([spec.observe(s, i) for s in states]) for i in range(spec.agent_count)]
    conditioning = []
    for i in range(spec.agent_count):
        if episode[0].conditioning is None or episode[0].conditioning[i] is None:
            conditioning.append(None)
        else:
            conditioning.append(np.array([transition.conditioning[i] for transition in episode], dtype=np.int64))
    return EpisodeArrays(observations=observations,
                         actions=np.array([transition.joint_action for transition in episode], dtype=np.int64),
                         rewards=np.array([transition.rewards for transition in episode], dtype=np.float64),
                         conditioning=conditioning,
                         absorbed=bool(spec.is_absorbing(episode[-1].next_state)))


############################################################
# PERSISTENCE
############################################################

def write_batch(spec, batch, path):
    header = {'format': BATCH_FORMAT, 'scenario': batch.metadata.get('scenario', spec.name),
              'seed': batch.metadata.get('seed'), 'generator': batch.metadata.get('generator'),
              'agents': spec.agent_count, 'episodes': len(batch.episodes)}
    lines = [misc.encode_record(header)]
    for e, episode in enumerate(batch.episodes):
        lines.append(misc.encode_record({
            'scenario': header['scenario'],
            'seed': header['seed'],
            'episode': e,
            'steps': [{'s': spec.encode_state(t.state), 'a': list(t.joint_action), 'r': list(t.rewards)} for t in episode],
            'final': spec.encode_state(episode[-1].next_state),
        }))
    try:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as fp:
            fp.write('\n'.join(lines) + '\n')
    except OSError as e:
        raise StorageError(f"cannot write batch {path}: {e}") from e
    log.debug(f"Wrote {len(batch.episodes)} episode(s) to {path}")
    return path


def read_batch(spec, path):
    try:
        with open(path, 'r', encoding='utf-8') as fp:
            lines = [line for line in fp.read().split('\n') if line]
    except OSError as e:
        raise StorageError(f"cannot read batch {path}: {e}") from e
    if not lines:
        raise StorageError(f"batch {path} is empty")
    header = misc.decode_record(lines[0])
    if not isinstance(header, dict) or header.get('format') != BATCH_FORMAT:
        raise StorageError(f"{path} is not a {BATCH_FORMAT} file")
    if header.get('agents') not in (None, spec.agent_count):
        raise InvalidArgument(f"{path} records {header.get('agents')} agents, {spec.name} has {spec.agent_count}")

    episodes = []
    for line in lines[1:]:
        record = misc.decode_record(line)
        states = [spec.decode_state(step_record['s']) for step_record in record['steps']]
        states.append(spec.decode_state(record['final']))
        episode = []
        for t, step_record in enumerate(record['steps']):
            episode.append(Transition(state=states[t],
                                      joint_action=validate_joint_action(spec, step_record['a']),
                                      rewards=tuple(float(r) for r in step_record['r']),
                                      next_state=states[t + 1],
                                      terminal=t == len(record['steps']) - 1))
        episodes.append(episode)

    batch = InteractionBatch(episodes=episodes, metadata={'scenario': header.get('scenario'),
                                                          'seed': header.get('seed'),
                                                          'generator': header.get('generator')})
    batch.validate(spec)
    return batch


__all__ = ['BATCH_FORMAT', 'GameSpec', 'TabularGame', 'JointActionIndex', 'Transition', 'InteractionBatch',
           'Decision', 'UniformPolicy', 'TablePolicy', 'JointTablePolicy', 'step', 'rollout',
           'discounted_return', 'episode_return', 'verify_rewards', 'episode_arrays', 'EpisodeArrays',
           'write_batch', 'read_batch', 'load_tabular', 'validate_joint_action', 'categorical_draw',
           'episode_streams']
