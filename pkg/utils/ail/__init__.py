import logging

from ..agents import NON_CORRELATED
from .bc import bc_pretrain
from .codail import Codail
from .magail import Magail
from .ncdail import Ncdail
from .trainer import Trainer, TrainerConfig, TrainingResult

log = logging.getLogger('ail')


class BehaviorCloning(Trainer):
    """Supervised fit to the demonstrations only; `epochs` counts cloning steps."""

    NAME = 'bc'
    POLICY_KIND = NON_CORRELATED

    def train(self, expert_batch=None):
        bc_pretrain(self.spec, self.agents, expert_batch, self.config.epochs, batch_size=self.config.batch_size,
                    seed=self.config.seed, log_sink=self._emit)
        if self.checkpoint_dir and self.config.epochs:
            self.save_checkpoint(self.config.epochs)
        return TrainingResult(agents=self.agents, discriminators=[], log=self.records)


ALGORITHMS = {
    Codail.NAME: Codail,
    Ncdail.NAME: Ncdail,
    Magail.NAME: Magail,
    BehaviorCloning.NAME: BehaviorCloning,
}


def load(spec, config, **kwargs):
    if config.algorithm not in ALGORITHMS:
        log.error(f"You specified an invalid algorithm to load: {config.algorithm}")
    config.validate(ALGORITHMS)
    return ALGORITHMS[config.algorithm](spec, config, **kwargs)


def codail_train(spec, expert_batch, config, **kwargs):
    return Codail(spec, config, **kwargs).train(expert_batch)


def ncdail_train(spec, expert_batch, config, **kwargs):
    return Ncdail(spec, config, **kwargs).train(expert_batch)


def magail_style_train(spec, expert_batch, config, **kwargs):
    return Magail(spec, config, **kwargs).train(expert_batch)


__all__ = ['ALGORITHMS', 'BehaviorCloning', 'Codail', 'Magail', 'Ncdail', 'Trainer', 'TrainerConfig',
           'TrainingResult', 'bc_pretrain', 'codail_train', 'load', 'magail_style_train', 'ncdail_train']
