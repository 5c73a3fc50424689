import logging

import numpy as np
from scipy.special import expit

from .. import nn
from ..agents import encode_opponents
from ..errors import InvalidArgument

log = logging.getLogger('discriminator')

LOGIT_CLAMP = 30.0
JOINT = 'joint'
PRIVATE = 'private'
VARIANTS = (JOINT, PRIVATE)


class Discriminator:
    """D_i(s, a_i[, a_-i]) as a single logit.

    Input layout: observation, own-action one-hot, then (joint variant only) the opponent
    one-hot blocks in ascending index. The private variant drops opponent actions.
    """

    def __init__(self, agent, variant, observation_size, action_sizes, hidden=nn.HIDDEN, seed=0):
        if variant not in VARIANTS:
            raise InvalidArgument(f"unknown discriminator variant {variant!r}, expected one of {VARIANTS}")
        self.agent = agent
        self.variant = variant
        self.n_actions = action_sizes[agent]
        self.opponent_sizes = tuple(n for j, n in enumerate(action_sizes) if j != agent)
        width = observation_size + self.n_actions + (sum(self.opponent_sizes) if variant == JOINT else 0)
        self.model = nn.Mlp(width, 1, hidden, rng=np.random.default_rng([seed, agent, 3]), owner=agent)

    def inputs(self, observations, actions, opponent_actions=None):
        observations = np.atleast_2d(observations)
        parts = [observations, nn.one_hot(actions, self.n_actions)]
        if self.variant == JOINT:
            if opponent_actions is None:
                raise InvalidArgument(f"joint discriminator of agent {self.agent} needs opponent actions")
            parts.append(encode_opponents(opponent_actions, self.opponent_sizes))
        return np.concatenate(parts, axis=1)

    def logits(self, inputs):
        return self.model.forward(np.atleast_2d(inputs))[:, 0]

    def clamped_logits(self, inputs):
        return np.clip(self.logits(inputs), -LOGIT_CLAMP, LOGIT_CLAMP)

    def probability(self, inputs):
        return expit(self.clamped_logits(inputs))


def surrogate_reward(discriminator, observations, actions, opponent_actions=None):
    """log D - log(1 - D), which is the clamped logit itself."""
    return discriminator.clamped_logits(discriminator.inputs(observations, actions, opponent_actions))


def discriminator_loss(discriminator, expert_inputs, learner_inputs):
    """-(E_expert[log D] + E_learner[log(1 - D)]) on raw logits; returns (loss, gradient)."""
    if len(expert_inputs) == 0 or len(learner_inputs) == 0:
        raise InvalidArgument("discriminator step needs nonempty expert and learner batches")
    expert_logits = discriminator.logits(expert_inputs)
    learner_logits = discriminator.logits(learner_inputs)
    # log sigmoid(z) = -log(1 + e^-z), log(1 - sigmoid(z)) = -log(1 + e^z)
    loss = float(np.mean(np.logaddexp(0.0, -expert_logits)) + np.mean(np.logaddexp(0.0, learner_logits)))
    gradient = discriminator.model.backward(expert_inputs, (-expit(-expert_logits) / len(expert_logits))[:, None])
    gradient += discriminator.model.backward(learner_inputs, (expit(learner_logits) / len(learner_logits))[:, None])
    return loss, gradient


def discriminator_step(discriminator, optimizer, expert_inputs, learner_inputs):
    loss, gradient = discriminator_loss(discriminator, expert_inputs, learner_inputs)
    optimizer.step(discriminator.model, gradient)
    return {'d_loss': loss}
