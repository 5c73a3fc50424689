from ..agents import NON_CORRELATED
from .trainer import AdversarialTrainer


class Magail(AdversarialTrainer):
    """Product-form policies with private discriminators D_i(s, a_i)."""

    NAME = 'magail'
    POLICY_KIND = NON_CORRELATED
    VARIANT = 'private'
    LEARNER_OPPONENTS = None
