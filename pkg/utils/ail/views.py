from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class AgentView:
    """One agent's slice of a batch, flattened over episodes."""
    observations: np.ndarray
    actions: np.ndarray
    opponents: np.ndarray
    conditioning: Optional[np.ndarray]
    rewards: np.ndarray
    value_inputs: list = field(default_factory=list)
    segments: list = field(default_factory=list)

    @property
    def size(self):
        return self.observations.shape[0]


def agent_view(spec, arrays, agent, value_agent=None):
    """Flatten episode arrays for `agent`; value inputs need the owning Agent bundle."""
    opponents = [j for j in range(spec.agent_count) if j != agent]
    observations, actions, recorded, conditioning, rewards = [], [], [], [], []
    value_inputs, segments, start = [], [], 0
    for episode in arrays:
        steps = episode.length
        observations.append(episode.observations[agent][:steps])
        actions.append(episode.actions[:, agent])
        recorded.append(episode.actions[:, opponents])
        rewards.append(episode.rewards[:, agent])
        if episode.conditioning[agent] is not None:
            conditioning.append(episode.conditioning[agent])
        if value_agent is not None:
            value_inputs.append(value_agent.value_inputs(episode.observations[agent], episode.actions))
        segments.append((start, start + steps, episode.absorbed))
        start += steps
    return AgentView(observations=np.concatenate(observations),
                     actions=np.concatenate(actions),
                     opponents=np.concatenate(recorded),
                     conditioning=np.concatenate(conditioning) if len(conditioning) == len(arrays) else None,
                     rewards=np.concatenate(rewards),
                     value_inputs=value_inputs,
                     segments=segments)

