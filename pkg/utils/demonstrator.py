import logging

import numpy as np

from . import evaluation, misc, oracle
from .ail.trainer import Trainer, TrainingResult
from .errors import NumericalAbort
from .game import rollout

log = logging.getLogger('demonstrator')

DIVERGENCE_LIMIT = 1e6
DEMO_EPISODES = 200
DEMO_HORIZON = 50
GATE_FRACTION = 0.05
GATE_MARGIN = 3.0


class DemonstratorTrainer(Trainer):
    """The decentralized correlated actor-critic loop driven by the true scenario rewards."""

    NAME = 'demonstrator'

    def rewards(self, index, view, rng, record):
        record['mean_reward'] = float(np.mean(view.rewards))
        return view.rewards

    def check_advantages(self, epoch, index, advantages):
        super().check_advantages(epoch, index, advantages)
        scale = float(np.mean(np.abs(advantages)))
        if scale > DIVERGENCE_LIMIT:
            raise NumericalAbort(f"epoch {epoch} agent {index}: mean |advantage| {scale:.3e} exceeds {DIVERGENCE_LIMIT:.0e}")


def train_demonstrators(spec, config, **kwargs):
    result = DemonstratorTrainer(spec, config, **kwargs).train()
    log.info(f"Trained {len(result.agents)} demonstrator(s) on {spec.name} for {config.epochs} epoch(s)")
    return result


def generate_demonstrations(spec, demonstrators, episodes=DEMO_EPISODES, horizon=DEMO_HORIZON, seed=0, workers=1):
    return rollout(spec, demonstrators, episodes, seed, horizon=horizon, workers=workers, generator='demonstrator')


def quality_gate(spec, agents, episodes=evaluation.EVAL_EPISODES, seed=0, fraction=GATE_FRACTION, margin=GATE_MARGIN):
    """Accept a demonstrator set.

    Tabular games: the executed profile's epsilon-NE gap is at most `fraction` of the value
    scale. Particle scenarios: the total return beats uniform random play by `margin`
    random-play standard deviations.
    """
    if getattr(spec, 'tabular', False):
        gaps = oracle.epsilon_ne_gap(spec, evaluation.learner_joint_policy(spec, agents))
        threshold = fraction * oracle.value_scale(spec)
        report = {'kind': 'epsilon_ne', 'gaps': gaps.tolist(), 'threshold': threshold,
                  'passed': bool(np.max(gaps) <= threshold)}
    else:
        demo = evaluation.return_statistics(spec, rollout(spec, agents, episodes, seed, generator='demonstrator'))
        baseline = evaluation.return_statistics(
            spec, rollout(spec, evaluation.random_agents(spec), episodes, seed, generator='random'))
        demo_mean, _ = demo['total']
        random_mean, random_std = baseline['total']
        report = {'kind': 'random_baseline', 'demonstrator': demo_mean, 'random': random_mean,
                  'random_std': random_std, 'margin': margin,
                  'passed': bool(demo_mean - random_mean >= margin * random_std)}
    (log.info if report['passed'] else log.warning)(f"Demonstrator quality gate on {spec.name}: {misc.encode_record(report)}")
    return report


__all__ = ['DemonstratorTrainer', 'TrainingResult', 'generate_demonstrations', 'quality_gate', 'train_demonstrators']
