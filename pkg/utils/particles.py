import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import InvalidArgument
from .game import DEFAULT_HORIZON, GameSpec

log = logging.getLogger('particles')

MOVES = ('noop', '+x', '-x', '+y', '-y')
DIRECTIONS = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
MESSAGES = 3


@dataclass(frozen=True)
class Role:
    name: str
    movable: bool = True
    fast: bool = False
    n_actions: int = len(MOVES)


ROSTERS = {
    'coop_comm': {'roles': (Role('speaker', movable=False, n_actions=MESSAGES), Role('listener')), 'landmarks': 3},
    'coop_navi': {'roles': (Role('agent'), Role('agent'), Role('agent')), 'landmarks': 3},
    'keep_away': {'roles': (Role('agent'), Role('adversary')), 'landmarks': 1},
    'predator_prey': {'roles': (Role('prey', fast=True), Role('predator'), Role('predator'), Role('predator')),
                      'landmarks': 0},
}

# competitive teams used by the reward-gap report
TEAMS = {
    'keep_away': {'agent+': [0], 'agent-': [1]},
    'predator_prey': {'agent+': [0], 'agent-': [1, 2, 3]},
}


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = 'keep_away'
    half_width: float = 1.0
    dt: float = 0.1
    damping: float = 0.75
    accel: float = 3.0
    fast_accel: float = 4.0
    landmarks: Optional[int] = None
    distance_weight: float = 1.0
    collision_penalty: float = 1.0
    collision_radius: float = 0.15
    placement_seed: int = 0
    discount: float = 0.95
    horizon: int = DEFAULT_HORIZON

    def validate(self):
        violations = []
        if self.name not in ROSTERS:
            raise InvalidArgument(f"unknown scenario {self.name!r}, expected one of {sorted(ROSTERS)}")
        if self.dt <= 0:
            violations.append(f"dt must be positive, got {self.dt}")
        if not 0.0 <= self.damping < 1.0:
            violations.append(f"damping must lie in [0, 1), got {self.damping}")
        if self.half_width <= 0:
            violations.append(f"half_width must be positive, got {self.half_width}")
        if self.accel <= 0 or self.fast_accel <= 0:
            violations.append("accelerations must be positive")
        if self.collision_radius < 0:
            violations.append(f"collision_radius must be non-negative, got {self.collision_radius}")
        expected = ROSTERS[self.name]['landmarks']
        if self.landmarks is not None and self.landmarks != expected:
            violations.append(f"{self.name} has {expected} landmark(s), got {self.landmarks}")
        if violations:
            raise InvalidArgument('; '.join(violations))
        return self


@dataclass(frozen=True)
class WorldState:
    positions: np.ndarray   # (N, 2)
    velocities: np.ndarray  # (N, 2)
    landmarks: np.ndarray   # (L, 2)
    goal: int = -1          # target landmark (coop_comm)
    message: int = -1       # speaker's last message, -1 before the first one

    def __eq__(self, other):
        return (isinstance(other, WorldState) and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.velocities, other.velocities)
                and np.array_equal(self.landmarks, other.landmarks)
                and self.goal == other.goal and self.message == other.message)


class ParticleGame(GameSpec):
    """Continuous 2-D arena with point agents under discrete accelerations.

    Observation layout for agent i: own position (2), own velocity (2), landmark
    positions relative to i (2 per landmark), other agents' positions relative to i
    in ascending index (2 each), then for coop_comm the goal one-hot (speaker) or the
    last message one-hot (listener).
    """

    def __init__(self, config):
        config.validate()
        self.config = config
        self.roles = ROSTERS[config.name]['roles']
        self.n_landmarks = ROSTERS[config.name]['landmarks']
        super().__init__([role.n_actions for role in self.roles], config.discount, config.horizon)
        self.name = config.name
        self.movable = np.array([role.movable for role in self.roles])
        self.accelerations = np.array([config.fast_accel if role.fast else config.accel for role in self.roles])

    @property
    def teams(self):
        return TEAMS.get(self.name)

    def movable_agents(self):
        return [i for i, role in enumerate(self.roles) if role.movable]

    def observation_size(self, agent):
        size = 4 + 2 * self.n_landmarks + 2 * (self.agent_count - 1)
        return size + (MESSAGES if self.name == 'coop_comm' else 0)

    def initial_state(self, rng):
        hw = self.config.half_width
        positions = rng.uniform(-hw, hw, size=(self.agent_count, 2))
        placement = np.random.default_rng([self.config.placement_seed, int(rng.integers(2 ** 32))])
        landmarks = placement.uniform(-hw, hw, size=(self.n_landmarks, 2))
        goal = int(rng.integers(self.n_landmarks)) if self.name == 'coop_comm' else -1
        return WorldState(positions=positions, velocities=np.zeros((self.agent_count, 2)),
                          landmarks=landmarks, goal=goal)

    def physics_step(self, state, joint_action):
        """Semi-implicit Euler: v <- damping v + a dt, then p <- clamp(p + v dt)."""
        moves = np.array([a if role.movable else 0 for a, role in zip(joint_action, self.roles)])
        accel = DIRECTIONS[moves] * self.accelerations[:, None]
        velocities = self.config.damping * state.velocities + accel * self.config.dt
        velocities[~self.movable] = 0.0
        positions = state.positions + velocities * self.config.dt
        positions[~self.movable] = state.positions[~self.movable]
        positions = np.clip(positions, -self.config.half_width, self.config.half_width)
        message = int(joint_action[0]) if self.name == 'coop_comm' else state.message
        return replace(state, positions=positions, velocities=velocities, message=message)

    def transition(self, state, joint_action, rng):
        return self.physics_step(state, joint_action)

    def reward(self, state, joint_action):
        return self.reward_of(self.physics_step(state, joint_action))

    def reward_of(self, state):
        """Per-agent rewards evaluated on the state an action led to."""
        w = self.config.distance_weight
        p = state.positions
        rewards = np.zeros(self.agent_count)
        if self.name == 'coop_navi':
            to_landmarks = np.linalg.norm(p[:, None, :] - state.landmarks[None, :, :], axis=2)
            shared = -w * float(np.sum(np.min(to_landmarks, axis=0)))
            shared -= self.config.collision_penalty * self._collisions(range(self.agent_count), state)
            rewards[:] = shared
        elif self.name == 'coop_comm':
            rewards[:] = -w * float(np.linalg.norm(p[1] - state.landmarks[state.goal]))
        elif self.name == 'keep_away':
            agent = float(np.linalg.norm(p[0] - state.landmarks[0]))
            adversary = float(np.linalg.norm(p[1] - state.landmarks[0]))
            # the adversary scores when it bumps the agent away
            bumped = self.config.collision_penalty * self._collisions((0, 1), state)
            rewards[0] = -w * agent - bumped
            rewards[1] = w * agent - w * adversary + bumped
        elif self.name == 'predator_prey':
            distances = np.linalg.norm(p[1:] - p[0], axis=1)
            caught = int(np.sum(distances < self.config.collision_radius))
            rewards[0] = w * float(np.mean(distances)) - self.config.collision_penalty * caught
            rewards[1:] = -w * float(np.min(distances)) + self.config.collision_penalty * caught
        return rewards

    def _collisions(self, agents, state):
        agents = list(agents)
        count = 0
        for a in range(len(agents)):
            for b in range(a + 1, len(agents)):
                gap = np.linalg.norm(state.positions[agents[a]] - state.positions[agents[b]])
                count += int(gap < self.config.collision_radius)
        return count

    def observe(self, state, agent):
        if not 0 <= agent < self.agent_count:
            raise InvalidArgument(f"agent {agent} out of range for {self.name}")
        own = state.positions[agent]
        others = [state.positions[j] - own for j in range(self.agent_count) if j != agent]
        parts = [own, state.velocities[agent], *(state.landmarks - own), *others]
        if self.name == 'coop_comm':
            slot = np.zeros(MESSAGES)
            index = state.goal if agent == 0 else state.message
            if index >= 0:
                slot[index] = 1.0
            parts.append(slot)
        return np.concatenate([np.ravel(part) for part in parts]) if parts else np.zeros(0)

    def encode_state(self, state):
        return {'p': state.positions.tolist(), 'v': state.velocities.tolist(), 'l': state.landmarks.tolist(),
                'g': state.goal, 'm': state.message}

    def decode_state(self, data):
        try:
            return WorldState(positions=np.array(data['p'], dtype=np.float64).reshape(self.agent_count, 2),
                              velocities=np.array(data['v'], dtype=np.float64).reshape(self.agent_count, 2),
                              landmarks=np.array(data['l'], dtype=np.float64).reshape(self.n_landmarks, 2),
                              goal=int(data['g']), message=int(data['m']))
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidArgument(f"malformed {self.name} state record: {e!r}") from e


def make_scenario(config):
    if isinstance(config, str):
        config = ScenarioConfig(name=config)
    game = ParticleGame(config)
    log.debug(f"Built scenario {game.name} with {game.agent_count} agent(s) and {game.n_landmarks} landmark(s)")
    return game


def physics_step(spec, state, joint_action):
    return spec.physics_step(state, tuple(joint_action))
