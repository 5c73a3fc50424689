import argparse
import json
import logging
import os
import sys
from copy import deepcopy

from . import misc
from .errors import ConfigError

log = logging.getLogger('config')

COMMANDS = ('demo-train', 'demo-generate', 'imitate', 'evaluate', 'oracle-verify', 'sweep', 'plot-export')
SUITE_CHOICES = ('all', 'occupancy', 'expectation', 'importance', 'factorization', 'certification', 'gradients')
SCENARIO_CHOICES = ('coop_comm', 'coop_navi', 'keep_away', 'predator_prey')
ALGORITHM_CHOICES = ('codail', 'ncdail', 'magail', 'bc')

# keys whose default is None accept these types
NULLABLE = {
    'scenario.tabular': (str,),
    'scenario.landmarks': (int,),
    'scenario.horizon': (int,),
}


def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


class Config(object):
    base_config = {
        # core settings
        'core': {
            'seed': 0,
            'workers': 1
        },
        # scenario settings, `tabular` points at a declarative tabular game instead
        'scenario': {
            'name': 'keep_away',
            'tabular': None,
            'half_width': 1.0,
            'dt': 0.1,
            'damping': 0.75,
            'accel': 3.0,
            'fast_accel': 4.0,
            'landmarks': None,
            'distance_weight': 1.0,
            'collision_penalty': 1.0,
            'collision_radius': 0.15,
            'placement_seed': 0,
            'discount': 0.95,
            'horizon': None
        },
        # network settings
        'model': {
            'hidden': [128, 128],
            'lr': 3e-4
        },
        # demonstrator settings
        'demonstrator': {
            'epochs': 200,
            'rollout_episodes': 20,
            'lam': 0.05,
            'samples': 1,
            'episodes': 200,
            'gate_fraction': 0.05,
            'gate_margin': 3.0
        },
        # imitation settings
        'imitation': {
            'algorithm': 'codail',
            'epochs': 200,
            'batch_size': 1000,
            'ratio': '1:1',
            'lam': 0.05,
            'rollout_episodes': 20,
            'samples': 1,
            'opponent_steps': 1,
            'value_steps': 1,
            'bc_steps': 0,
            'checkpoint_every': 0
        },
        # evaluation settings
        'evaluation': {
            'episodes': 100,
            'seeds': [0],
            'samples': 8,
            'resolution': 101,
            'bandwidth_floor': 0.01
        },
        # sweep settings
        'sweep': {
            'ratios': ['1:4', '1:2', '1:1', '2:1', '4:1'],
            'lambdas': [],
            'concurrent': 1
        },
        # notification settings
        'notifications': {
        }
    }

    base_settings = {
        'config': {
            'argv': '--config',
            'env': 'CODAIL_CONFIG',
            'default': os.path.join(os.path.dirname(os.path.realpath(sys.argv[0])), 'config.json')
        },
        'logfile': {
            'argv': '--logfile',
            'env': 'CODAIL_LOGFILE',
            'default': os.path.join(os.path.dirname(os.path.realpath(sys.argv[0])), 'codail.log')
        },
        'cachefile': {
            'argv': '--cachefile',
            'env': 'CODAIL_CACHEFILE',
            'default': os.path.join(os.path.dirname(os.path.realpath(sys.argv[0])), 'cache.db')
        },
        'loglevel': {
            'argv': '--loglevel',
            'env': 'CODAIL_LOGLEVEL',
            'default': 'INFO'
        },
        'runs_root': {
            'argv': '--runs-root',
            'env': 'CODAIL_RUNS_ROOT',
            'default': os.path.join(os.getcwd(), 'runs')
        }
    }

    # flag -> config key, shared by every command that accepts the flag
    flag_keys = {
        'seed': 'core.seed',
        'workers': 'core.workers',
        'scenario': 'scenario.name',
        'tabular': 'scenario.tabular',
        'horizon': 'scenario.horizon',
        'algo': 'imitation.algorithm',
        'ratio': 'imitation.ratio',
        'batch_size': 'imitation.batch_size',
        'bc_steps': 'imitation.bc_steps',
        'samples': 'imitation.samples',
        'checkpoint_every': 'imitation.checkpoint_every',
        'seeds': 'evaluation.seeds',
        'resolution': 'evaluation.resolution',
        'ratios': 'sweep.ratios',
        'lambdas': 'sweep.lambdas',
        'concurrent': 'sweep.concurrent',
    }

    # flags whose target depends on the command
    command_keys = {
        'demo-train': {'epochs': 'demonstrator.epochs', 'lam': 'demonstrator.lam'},
        'demo-generate': {'episodes': 'demonstrator.episodes'},
        'imitate': {'epochs': 'imitation.epochs', 'lam': 'imitation.lam'},
        'sweep': {'epochs': 'imitation.epochs', 'lam': 'imitation.lam'},
        'evaluate': {'episodes': 'evaluation.episodes'},
    }

    def __init__(self, argv=None):
        """Initializes config"""
        # Args and settings
        self.args = self.parse_args(argv)
        self.settings = self.get_settings()
        # Configs
        self.configs = None

    @property
    def default_config(self):
        return deepcopy(self.base_config)

    def check_tree(self, tree, defaults=None, prefix=''):
        """Every unknown key and type mismatch in a user-supplied tree."""
        defaults = self.base_config if defaults is None else defaults
        violations = []
        if not isinstance(tree, dict):
            return [f"{prefix or 'config'} must be an object, got {type(tree).__name__}"]
        for key, value in tree.items():
            path = f"{prefix}.{key}" if prefix else key
            if prefix == 'notifications':
                if not isinstance(value, dict) or 'service' not in value:
                    violations.append(f"{path} must be an object with a 'service' entry")
                continue
            if key not in defaults:
                violations.append(f"unknown key {path}")
                continue
            default = defaults[key]
            if isinstance(default, dict):
                violations.extend(self.check_tree(value, default, path))
            elif not self._type_fits(path, default, value):
                expected = ' or '.join(t.__name__ for t in NULLABLE.get(path, ())) or type(default).__name__
                violations.append(f"{path} must be {expected}, got {type(value).__name__} {value!r}")
        return violations

    @staticmethod
    def _type_fits(path, default, value):
        if default is None:
            return value is None or (isinstance(value, NULLABLE.get(path, ())) and not isinstance(value, bool))
        if isinstance(default, bool):
            return isinstance(value, bool)
        if isinstance(default, float):
            return isinstance(value, (int, float)) and not isinstance(value, bool)
        if isinstance(default, int):
            return isinstance(value, int) and not isinstance(value, bool)
        return isinstance(value, type(default))

    def check_ranges(self, cfg):
        violations = []
        scenario = cfg['scenario']
        if scenario['tabular'] is None and scenario['name'] not in SCENARIO_CHOICES:
            violations.append(f"scenario.name must be one of {SCENARIO_CHOICES}, got {scenario['name']!r}")
        if not 0.0 <= scenario['discount'] < 1.0:
            violations.append(f"scenario.discount must lie in [0, 1), got {scenario['discount']}")
        if scenario['horizon'] is not None and scenario['horizon'] < 1:
            violations.append(f"scenario.horizon must be at least 1, got {scenario['horizon']}")
        hidden = cfg['model']['hidden']
        if len(hidden) != 2 or not all(_is_int(h) and h >= 1 for h in hidden):
            violations.append(f"model.hidden must be two positive widths, got {cfg['model']['hidden']}")
        if cfg['model']['lr'] <= 0:
            violations.append(f"model.lr must be positive, got {cfg['model']['lr']}")
        if cfg['imitation']['algorithm'] not in ALGORITHM_CHOICES:
            violations.append(f"imitation.algorithm must be one of {ALGORITHM_CHOICES}, "
                              f"got {cfg['imitation']['algorithm']!r}")
        for ratio in [cfg['imitation']['ratio'], *cfg['sweep']['ratios']]:
            try:
                misc.parse_ratio(ratio)
            except ValueError as e:
                violations.append(str(e))
        for section, key in (('demonstrator', 'lam'), ('imitation', 'lam')):
            if cfg[section][key] < 0:
                violations.append(f"{section}.{key} must be non-negative, got {cfg[section][key]}")
        if not all(_is_number(lam) and lam >= 0 for lam in cfg['sweep']['lambdas']):
            violations.append(f"sweep.lambdas must be non-negative, got {cfg['sweep']['lambdas']}")
        for path in ('core.workers', 'demonstrator.episodes', 'evaluation.episodes', 'evaluation.samples',
                     'evaluation.resolution', 'sweep.concurrent', 'imitation.batch_size', 'imitation.samples'):
            section, key = path.split('.')
            if cfg[section][key] < 1:
                violations.append(f"{path} must be at least 1, got {cfg[section][key]}")
        if not cfg['evaluation']['seeds'] or not all(_is_int(s) for s in cfg['evaluation']['seeds']):
            violations.append(f"evaluation.seeds must be a nonempty list of integers, got {cfg['evaluation']['seeds']}")
        return violations

    def accepted(self, tree, defaults=None, prefix=''):
        """The part of a user-supplied tree that `check_tree` has no complaint about."""
        defaults = self.base_config if defaults is None else defaults
        kept = {}
        for key, value in tree.items():
            path = f"{prefix}.{key}" if prefix else key
            if prefix == 'notifications':
                if isinstance(value, dict) and 'service' in value:
                    kept[key] = value
            elif key in defaults and isinstance(defaults[key], dict):
                if isinstance(value, dict):
                    kept[key] = self.accepted(value, defaults[key], path)
            elif key in defaults and self._type_fits(path, defaults[key], value):
                kept[key] = value
        return kept

    def overrides(self):
        """Config keys set on the command line, as {dotted key: value}."""
        mapping = {**self.flag_keys, **self.command_keys.get(self.args.get('cmd'), {})}
        return {key: self.args[flag] for flag, key in mapping.items() if self.args.get(flag) is not None}

    def load(self):
        """Resolve the run config: command-line flag > config file > default.

        Every violation (unknown keys, type mismatches, out-of-range values) is reported in one ConfigError.
        """
        cfg = self.default_config
        violations = []
        path = self.settings['config']
        if os.path.exists(path):
            log.debug(f"Loading config from {path}")
            try:
                with open(path, 'r') as fp:
                    current = json.load(fp)
            except (OSError, ValueError) as e:
                raise ConfigError([f"cannot read config file {path}: {e}"]) from e
            violations.extend(self.check_tree(current))
            if isinstance(current, dict):
                cfg = misc.merge_dicts(cfg, self.accepted(current))
        else:
            log.info(f"No config file at {path}, using defaults")

        for key, value in self.overrides().items():
            log.info(f"Using ARG config {key}={value}")
            misc.set_path(cfg, key, value)

        tree_violations = self.check_tree(cfg)
        violations.extend(tree_violations or self.check_ranges(cfg))
        if violations:
            raise ConfigError(violations)
        self.configs = cfg
        return cfg

    def save(self, cfg, path):
        with open(path, 'w') as fp:
            json.dump(cfg, fp, indent=4, sort_keys=True)
        log.debug(f"Wrote resolved config to {path}")

    def get_settings(self):
        setts = {}
        for name, data in self.base_settings.items():
            # Argument priority: cmd < environment < default
            try:
                # Command line argument
                if self.args.get(name):
                    value = self.args[name]
                    log.info(f"Using ARG setting {name}={value}")

                elif data['env'] in os.environ:
                    value = os.environ[data['env']]
                    log.debug(f"Using ENV setting {data['env']}={value}")

                else:
                    value = data['default']
                    log.debug(f"Using default setting {data['argv']}={value}")

                setts[name] = value

            except Exception:
                log.exception(f"Exception retrieving setting value: {name}")

        return setts

    # Parse command line arguments
    def parse_args(self, argv=None):
        parser = argparse.ArgumentParser(
            description=(
                'Desk-scale lab for correlated multi-agent imitation learning. \n'
                'Trains demonstrators, imitates them with CoDAIL and its baselines, '
                'and evaluates the learners against the demonstrations.'
            ),
            formatter_class=argparse.RawTextHelpFormatter
        )

        # Settings
        for name, data in self.base_settings.items():
            if name == 'loglevel':
                parser.add_argument(data['argv'], dest=name, choices=('WARN', 'INFO', 'DEBUG'),
                                    help=f"Log level (default: {data['default']})")
            else:
                parser.add_argument(data['argv'], dest=name, nargs='?', const=None,
                                    help=f"{name.replace('_', ' ').capitalize()} location (default: {data['default']})")

        commands = parser.add_subparsers(dest='cmd', metavar='cmd')
        commands.required = True

        def command(name, help_text):
            sub = commands.add_parser(name, help=help_text, formatter_class=argparse.RawTextHelpFormatter)
            sub.add_argument('--seed', type=int, help='Master seed')
            sub.add_argument('--run-dir', dest='run_dir', help='Explicit run directory')
            sub.add_argument('--workers', type=int, help='Rollout worker threads')
            return sub

        def scenario_args(sub):
            sub.add_argument('--scenario', help=f"Particle scenario, one of {', '.join(SCENARIO_CHOICES)}")
            sub.add_argument('--tabular', help='Tabular game JSON used instead of a particle scenario')
            sub.add_argument('--horizon', type=int, help='Episode horizon')

        def training_args(sub):
            sub.add_argument('--epochs', type=int, help='Training epochs')
            sub.add_argument('--lam', type=float, help='Entropy weight')

        def imitation_args(sub):
            sub.add_argument('--demos', required=True, help='Demonstration batch (codail-batch/1)')
            sub.add_argument('--algo', choices=ALGORITHM_CHOICES, help='Imitation algorithm')
            sub.add_argument('--ratio', help='Discriminator:policy update ratio, e.g. 1:1')
            sub.add_argument('--batch-size', dest='batch_size', type=int, help='Discriminator minibatch size')
            sub.add_argument('--bc-steps', dest='bc_steps', type=int, help='Behavior cloning pretraining steps')
            sub.add_argument('--samples', type=int, help='Opponent samples K per decision')
            sub.add_argument('--checkpoint-every', dest='checkpoint_every', type=int, help='Checkpoint interval')

        sub = command('demo-train', 'train correlated demonstrators on the true rewards')
        scenario_args(sub)
        training_args(sub)

        sub = command('demo-generate', 'roll out trained demonstrators into a demonstration batch')
        scenario_args(sub)
        sub.add_argument('--demonstrators', required=True, help='Demonstrator checkpoint')
        sub.add_argument('--episodes', type=int, help='Number of episodes')

        sub = command('imitate', 'train imitation learners on a demonstration batch')
        scenario_args(sub)
        training_args(sub)
        imitation_args(sub)

        sub = command('evaluate', 'compare learned policies with the demonstrations')
        scenario_args(sub)
        sub.add_argument('--demos', required=True, help='Demonstration batch (codail-batch/1)')
        sub.add_argument('--checkpoint', action='append', default=None,
                         help='Learner checkpoint, repeat to aggregate training seeds')
        sub.add_argument('--demonstrators', help='Demonstrator checkpoint for exact tabular comparisons')
        sub.add_argument('--seeds', type=lambda text: misc.parse_list(text, int), help='Evaluation seeds, e.g. 0,1,2')
        sub.add_argument('--episodes', type=int, help='Episodes per evaluation seed')
        sub.add_argument('--resolution', type=int, help='KDE grid points per axis')

        sub = command('oracle-verify', 'run the exact-oracle property suites')
        sub.add_argument('--suite', choices=SUITE_CHOICES, default='all', help='Property suite to run')
        sub.add_argument('--fixtures', help='Directory of tabular game fixtures')

        sub = command('sweep', 'imitate and evaluate across update ratios and entropy weights')
        scenario_args(sub)
        training_args(sub)
        imitation_args(sub)
        sub.add_argument('--ratios', type=lambda text: misc.parse_list(text, str), help='Ratios, e.g. 1:4,1:1,4:1')
        sub.add_argument('--lambdas', type=lambda text: misc.parse_list(text, float), help='Entropy weights')
        sub.add_argument('--seeds', type=lambda text: misc.parse_list(text, int), help='Evaluation seeds')
        sub.add_argument('--concurrent', type=int, help='Sweep entries run at once')

        sub = command('plot-export', 'export position densities of an interaction batch')
        scenario_args(sub)
        sub.add_argument('--batch', required=True, help='Interaction batch (codail-batch/1)')
        sub.add_argument('--resolution', type=int, help='KDE grid points per axis')

        return vars(parser.parse_args(sys.argv[1:] if argv is None else argv))
