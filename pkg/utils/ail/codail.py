from ..agents import CORRELATED
from .trainer import AdversarialTrainer


class Codail(AdversarialTrainer):
    """Correlated policies acting through their opponent models, joint-action discriminators.

    Learner tuples carry the opponent actions each policy sampled from its opponent model
    and conditioned on; demonstrations carry the recorded opponent actions.
    """

    NAME = 'codail'
    POLICY_KIND = CORRELATED
    VARIANT = 'joint'
    LEARNER_OPPONENTS = 'sampled'
