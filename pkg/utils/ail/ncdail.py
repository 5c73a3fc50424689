from ..agents import NON_CORRELATED
from .trainer import AdversarialTrainer


class Ncdail(AdversarialTrainer):
    """Product-form policies with joint-action discriminators fed the recorded opponent actions."""

    NAME = 'ncdail'
    POLICY_KIND = NON_CORRELATED
    VARIANT = 'joint'
    LEARNER_OPPONENTS = 'recorded'
