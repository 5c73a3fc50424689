import concurrent.futures
import logging
import math
import os
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .. import misc, nn
from ..agents import (CORRELATED, KINDS, acting_as, advantages_from_values, make_agents, opponent_model_loss,
                      policy_gradient_step, value_step)
from ..errors import ConfigError, InvalidArgument, NumericalAbort
from ..game import episode_arrays, rollout
from .bc import bc_pretrain
from .discriminator import Discriminator, discriminator_step, surrogate_reward
from .views import agent_view

log = logging.getLogger('trainer')

ALPHA_POLICIES = ('fixed_one',)
FULL_SCALE_EPOCHS = 55000


@dataclass
class TrainerConfig:
    algorithm: str = 'codail'
    epochs: int = 200
    batch_size: int = 1000
    ratio: str = '1:1'
    lam: float = 0.05
    gamma: Optional[float] = None
    lr: float = 3e-4
    hidden: tuple = nn.HIDDEN
    seed: int = 0
    rollout_episodes: int = 20
    horizon: Optional[int] = None
    samples: int = 1
    opponent_steps: int = 1
    value_steps: int = 1
    bc_steps: int = 0
    checkpoint_every: int = 0
    workers: int = 1
    policy: Optional[str] = None
    alpha: str = 'fixed_one'

    def validate(self, algorithms=None):
        violations = []
        if algorithms is not None and self.algorithm not in algorithms:
            violations.append(f"algorithm must be one of {sorted(algorithms)}, got {self.algorithm!r}")
        try:
            misc.parse_ratio(self.ratio)
        except ValueError as e:
            violations.append(str(e))
        for name in ('batch_size', 'rollout_episodes', 'samples'):
            if int(getattr(self, name)) < 1:
                violations.append(f"{name} must be at least 1, got {getattr(self, name)}")
        for name in ('epochs', 'opponent_steps', 'value_steps', 'bc_steps', 'checkpoint_every'):
            if int(getattr(self, name)) < 0:
                violations.append(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.lam < 0:
            violations.append(f"lam must be non-negative, got {self.lam}")
        if self.lr <= 0:
            violations.append(f"lr must be positive, got {self.lr}")
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            violations.append(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.policy is not None and self.policy not in KINDS:
            violations.append(f"policy must be one of {KINDS}, got {self.policy!r}")
        if self.alpha not in ALPHA_POLICIES:
            violations.append(f"alpha must be one of {ALPHA_POLICIES}, got {self.alpha!r}")
        if violations:
            raise ConfigError(violations)
        return self

    @property
    def steps(self):
        return misc.parse_ratio(self.ratio)

    def as_dict(self):
        return {**asdict(self), 'hidden': list(self.hidden)}


@dataclass
class TrainingResult:
    agents: list
    discriminators: list
    log: list


class Trainer:
    """Decentralized per-agent actor-critic loop shared by the imitation learners and the demonstrators.

    Each epoch rolls out all agents together, then every agent updates only its own
    networks from the shared batch, in the order opponent model, reward model, value
    function, policy. Subclasses decide where rewards come from.
    """

    NAME = None
    POLICY_KIND = CORRELATED

    def __init__(self, spec, config, agents=None, checkpoint_dir=None, log_sink=None):
        self.spec = spec
        self.config = config
        if config.algorithm != self.NAME:
            raise InvalidArgument(f"{self.NAME} trainer cannot run a config for algorithm {config.algorithm!r}")
        config.validate()
        self.gamma = spec.discount if config.gamma is None else float(config.gamma)
        self.kind = config.policy or self.POLICY_KIND
        self.agents = agents or make_agents(spec, self.kind, hidden=tuple(config.hidden), lr=config.lr,
                                            seed=config.seed, samples=config.samples,
                                            opponent_model=self.kind == CORRELATED)
        self.checkpoint_dir = checkpoint_dir
        self.log_sink = log_sink
        self.records = []

    @property
    def discriminators(self):
        return []

    def _emit(self, record):
        self.records.append(record)
        if self.log_sink is not None:
            self.log_sink(record)

    def train(self, expert_batch=None):
        self.prepare(expert_batch)
        for epoch in range(self.config.epochs):
            for record in self.run_epoch(epoch):
                self._emit(record)
            if self.checkpoint_dir and self.config.checkpoint_every and (epoch + 1) % self.config.checkpoint_every == 0:
                self.save_checkpoint(epoch + 1)
        return TrainingResult(agents=self.agents, discriminators=self.discriminators, log=self.records)

    def prepare(self, expert_batch):
        pass

    def run_epoch(self, epoch):
        episodes = self.config.rollout_episodes
        batch = rollout(self.spec, self.agents, episodes, self.config.seed, horizon=self.config.horizon,
                        workers=self.config.workers, generator=self.NAME, first_episode=epoch * episodes)
        arrays = [episode_arrays(self.spec, episode) for episode in batch.episodes]

        if self.config.workers > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=self.config.workers) as executor:
                return list(executor.map(lambda i: self.update_agent(epoch, i, arrays), range(self.spec.agent_count)))
        return [self.update_agent(epoch, i, arrays) for i in range(self.spec.agent_count)]

    def update_agent(self, epoch, index, arrays):
        agent = self.agents[index]
        rng = np.random.default_rng([self.config.seed, epoch, index, 1])
        view = agent_view(self.spec, arrays, index, value_agent=agent)
        record = {'epoch': epoch, 'agent': index, 'phases': []}

        with acting_as(index):
            if agent.opponent_model is not None:
                for _ in range(self.config.opponent_steps):
                    loss, gradient = opponent_model_loss(agent.opponent_model, view.observations, view.opponents)
                    agent.optimizers['opponent'].step(agent.opponent_model.model, gradient)
                    record['opp_ce'] = loss
                record['phases'].append('opponent')

            rewards = self.rewards(index, view, rng, record)

            advantages, targets = [], []
            for (start, stop, absorbed), inputs in zip(view.segments, view.value_inputs):
                adv, tgt = advantages_from_values(agent.value_fn.predict(inputs), rewards[start:stop], self.gamma, absorbed)
                advantages.append(adv)
                targets.append(tgt)
            advantages, targets = np.concatenate(advantages), np.concatenate(targets)
            self.check_advantages(epoch, index, advantages)

            value_inputs = np.concatenate([inputs[:-1] for inputs in view.value_inputs])
            for _ in range(self.config.value_steps):
                record.update(value_step(agent.value_fn, agent.optimizers['value'], value_inputs, targets))
            record['phases'].append('value')

            conditioning = view.conditioning if view.conditioning is not None else view.opponents
            policy_inputs = agent.policy_inputs(view.observations, conditioning)
            for _ in range(self.config.steps[1]):
                record.update(policy_gradient_step(agent.policy, agent.optimizers['policy'], policy_inputs,
                                                   view.actions, advantages, self.config.lam))
            record['phases'].append('policy')

        for key, value in record.items():
            if isinstance(value, float) and not math.isfinite(value):
                raise NumericalAbort(f"epoch {epoch} agent {index}: {key} became {value}")
        return record

    def rewards(self, index, view, rng, record):
        raise NotImplementedError

    def check_advantages(self, epoch, index, advantages):
        if not np.all(np.isfinite(advantages)):
            raise NumericalAbort(f"epoch {epoch} agent {index}: non-finite advantage")

    def checkpoint_models(self):
        models = {}
        for agent in self.agents:
            for role, model in agent.models().items():
                models[f'agent{agent.index}/{role}'] = model
        for discriminator in self.discriminators:
            models[f'agent{discriminator.agent}/discriminator'] = discriminator.model
        return models

    def checkpoint_metadata(self, epoch):
        return {'algorithm': self.NAME, 'epoch': epoch, 'kind': self.kind, 'samples': self.config.samples,
                'seed': self.config.seed}

    def save_checkpoint(self, epoch, name=None):
        path = os.path.join(self.checkpoint_dir, name or f'epoch-{epoch:06d}.ckpt')
        nn.save_checkpoint(path, self.checkpoint_models(), self.checkpoint_metadata(epoch))
        log.debug(f"Saved checkpoint {path}")
        return path


class AdversarialTrainer(Trainer):
    """Trainer whose rewards are the logits of per-agent discriminators against the demonstrations.

    LEARNER_OPPONENTS selects the opponent actions in the learner tuples fed to the
    discriminator: 'sampled' (what the policy conditioned on), 'recorded' or None.
    """

    VARIANT = 'joint'
    LEARNER_OPPONENTS = 'recorded'

    def __init__(self, spec, config, agents=None, discriminators=None, **kwargs):
        super().__init__(spec, config, agents=agents, **kwargs)
        self._discriminators = discriminators or [
            Discriminator(i, self.VARIANT, spec.observation_size(i), spec.action_sizes,
                          hidden=tuple(config.hidden), seed=config.seed)
            for i in range(spec.agent_count)]
        self.d_optimizers = [nn.Adam(d.model.params.size, lr=config.lr) for d in self._discriminators]
        self.expert = None

    @property
    def discriminators(self):
        return self._discriminators

    def prepare(self, expert_batch):
        if expert_batch is None or not expert_batch.episodes:
            raise InvalidArgument(f"{self.NAME} needs a nonempty demonstration batch")
        expert_batch.validate(self.spec)
        arrays = [episode_arrays(self.spec, episode) for episode in expert_batch.episodes]
        self.expert = [agent_view(self.spec, arrays, i) for i in range(self.spec.agent_count)]
        if self.config.bc_steps:
            bc_pretrain(self.spec, self.agents, expert_batch, self.config.bc_steps,
                        batch_size=self.config.batch_size, seed=self.config.seed, log_sink=self._emit)

    def learner_opponents(self, view):
        if self.LEARNER_OPPONENTS == 'sampled' and view.conditioning is not None:
            return view.conditioning
        if self.LEARNER_OPPONENTS is None:
            return None
        return view.opponents

    def rewards(self, index, view, rng, record):
        discriminator = self._discriminators[index]
        expert = self.expert[index]
        learner_opponents = self.learner_opponents(view)
        size = self.config.batch_size

        for _ in range(self.config.steps[0]):
            e = rng.integers(expert.size, size=size)
            g = rng.integers(view.size, size=size)
            expert_inputs = discriminator.inputs(expert.observations[e], expert.actions[e], expert.opponents[e])
            learner_inputs = discriminator.inputs(view.observations[g], view.actions[g],
                                                  None if learner_opponents is None else learner_opponents[g])
            record.update(discriminator_step(discriminator, self.d_optimizers[index], expert_inputs, learner_inputs))
        record['phases'].append('discriminator')

        rewards = surrogate_reward(discriminator, view.observations, view.actions, learner_opponents)
        record['mean_surrogate_reward'] = float(np.mean(rewards))
        return rewards
