import logging

import numpy as np

from ..agents import acting_as, behavior_cloning_step, opponent_model_loss
from ..errors import InvalidArgument
from ..game import episode_arrays
from .views import agent_view

log = logging.getLogger('bc')


def bc_pretrain(spec, agents, expert_batch, steps, batch_size=1000, seed=0, log_sink=None):
    """Maximum-likelihood fit of every policy and opponent model to the demonstrations.

    Correlated policies condition on the recorded opponent actions. Minibatches are drawn
    uniformly with replacement; returns the per-step records.
    """
    if expert_batch is None or not expert_batch.episodes:
        raise InvalidArgument("behavior cloning needs a nonempty demonstration batch")
    expert_batch.validate(spec)
    arrays = [episode_arrays(spec, episode) for episode in expert_batch.episodes]
    views = [agent_view(spec, arrays, agent.index) for agent in agents]

    records = []
    for step in range(int(steps)):
        for agent, view in zip(agents, views):
            rng = np.random.default_rng([seed, step, agent.index, 2])
            picked = rng.integers(view.size, size=batch_size)
            with acting_as(agent.index):
                inputs = agent.policy_inputs(view.observations[picked], view.opponents[picked])
                record = {'step': step, 'agent': agent.index, 'phase': 'bc'}
                record.update(behavior_cloning_step(agent.policy, agent.optimizers['policy'], inputs,
                                                    view.actions[picked]))
                if agent.opponent_model is not None:
                    loss, gradient = opponent_model_loss(agent.opponent_model, view.observations[picked],
                                                         view.opponents[picked])
                    agent.optimizers['opponent'].step(agent.opponent_model.model, gradient)
                    record['opp_ce'] = loss
            records.append(record)
            if log_sink is not None:
                log_sink(record)
    if steps:
        log.info(f"Behavior cloning finished after {steps} step(s) for {len(agents)} agent(s)")
    return records
