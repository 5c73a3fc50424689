#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import csv
import itertools
import logging
import os
import sys
import time
from logging.handlers import RotatingFileHandler

from utils import ail, config, decorators, demonstrator, evaluation, lock, misc, nn, oracle, suites, version
from utils.agents import restore_agents
from utils.ail.trainer import TrainerConfig
from utils.cache import Cache
from utils.errors import InvalidArgument, LabError, StorageError
from utils.game import load_tabular, read_batch, rollout, write_batch
from utils.notifications import Notifications
from utils.particles import ScenarioConfig, make_scenario
from utils.threads import Thread

############################################################
# INIT
############################################################

# Logging
log_formatter = logging.Formatter(u'%(asctime)s - %(levelname)-10s - %(name)-20s - %(funcName)-30s - %(message)s')
root_logger = logging.getLogger()
log = root_logger.getChild('codail')

# Set chatty third-party loggers to WARNING
logging.getLogger("matplotlib").setLevel(logging.WARNING)
logging.getLogger("git").setLevel(logging.WARNING)
logging.getLogger("sqlitedict").setLevel(logging.WARNING)

_handlers = []


def init_logging(settings):
    for handler in _handlers:
        root_logger.removeHandler(handler)
        handler.close()
    _handlers.clear()

    # Set console logger
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(log_formatter)
    _handlers.append(console_handler)

    # Set file logger
    try:
        file_handler = RotatingFileHandler(
            settings['logfile'],
            maxBytes=1024 * 1024 * 5,
            backupCount=5,
            encoding='utf-8'
        )
        file_handler.setFormatter(log_formatter)
        _handlers.append(file_handler)
    except OSError:
        log.exception(f"Exception opening logfile {settings['logfile']}: ")

    for handler in _handlers:
        root_logger.addHandler(handler)

    # Set chosen logging level
    root_logger.setLevel('WARNING' if settings['loglevel'] == 'WARN' else settings['loglevel'])


############################################################
# MISC FUNCS
############################################################

def init_notifications(cfg):
    notify = Notifications()
    try:
        notify.load_all(cfg['notifications'])
    except Exception:
        log.exception("Exception initializing notification agents: ")
    return notify


def build_spec(cfg):
    scenario = cfg['scenario']
    if scenario['tabular']:
        game = load_tabular(scenario['tabular'])
        return game.with_horizon(scenario['horizon']) if scenario['horizon'] else game
    fields = {key: value for key, value in scenario.items() if key not in ('tabular', 'horizon')}
    if scenario['horizon']:
        fields['horizon'] = scenario['horizon']
    return make_scenario(ScenarioConfig(**fields))


def trainer_config(cfg, algorithm, **overrides):
    section = cfg['demonstrator'] if algorithm == 'demonstrator' else cfg['imitation']
    fields = {
        'algorithm': algorithm,
        'epochs': section['epochs'],
        'lam': section['lam'],
        'rollout_episodes': section['rollout_episodes'],
        'samples': section['samples'],
        'lr': cfg['model']['lr'],
        'hidden': tuple(cfg['model']['hidden']),
        'seed': cfg['core']['seed'],
        'workers': cfg['core']['workers'],
    }
    if algorithm != 'demonstrator':
        fields.update({key: section[key] for key in ('batch_size', 'ratio', 'opponent_steps', 'value_steps',
                                                       'bc_steps', 'checkpoint_every')})
    fields.update(overrides)
    return TrainerConfig(**fields).validate()


def run_dir_for(conf, command, seed):
    if conf.args.get('run_dir'):
        return os.path.abspath(conf.args['run_dir'])
    stamp = time.strftime('%Y%m%dT%H%M%SZ', time.gmtime())
    return os.path.join(os.path.abspath(conf.settings['runs_root']), f"{stamp}-{command}-seed{seed}")


def command_inputs(args):
    return {key: args.get(key) for key in ('demos', 'demonstrators', 'checkpoint', 'batch', 'suite', 'fixtures')
            if args.get(key) is not None}


def write_manifest(run_dir, command, cfg, inputs):
    manifest = {
        'command': command,
        'seed': cfg['core']['seed'],
        'version': version.version_tag(),
        'inputs': inputs,
        'fingerprint': misc.fingerprint({'command': command, 'config': cfg, 'inputs': inputs}),
    }
    write_records(os.path.join(run_dir, 'manifest.json'), [manifest])
    return manifest


def write_records(path, records):
    try:
        with open(path, 'w', encoding='utf-8', newline='\n') as fp:
            for record in records:
                fp.write(misc.encode_record(record) + '\n')
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e
    return path


class RecordSink:
    """Line-delimited JSON records appended as they arrive."""

    def __init__(self, path):
        self.path = path
        try:
            self.fp = open(path, 'w', encoding='utf-8', newline='\n')
        except OSError as e:
            raise StorageError(f"cannot open {path}: {e}") from e

    def __call__(self, record):
        self.fp.write(misc.encode_record(record) + '\n')

    def close(self):
        self.fp.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_table(path, rows, fields):
    try:
        with open(path, 'w', newline='') as fp:
            writer = csv.DictWriter(fp, fieldnames=fields, lineterminator='\n', extrasaction='ignore')
            writer.writeheader()
            for row in rows:
                writer.writerow({key: repr(value) if isinstance(value, float) else value for key, value in row.items()})
    except OSError as e:
        raise StorageError(f"cannot write table {path}: {e}") from e
    return path


def load_agents(spec, path, samples=None):
    metadata, models = nn.load_checkpoint(path)
    agents = restore_agents(spec, metadata, models)
    if samples is not None:
        for agent in agents:
            agent.samples = int(samples)
    return agents


def evaluation_rows(spec, cfg, makers, expert, policy, demonstrators=None):
    """Reward gap and, for particle scenarios, KDE-KL rows of one policy set against the demonstrations."""
    ev = cfg['evaluation']
    horizon = cfg['scenario']['horizon']
    workers = cfg['core']['workers']
    demo_stats = evaluation.return_statistics(spec, expert)
    rows = []
    gaps = evaluation.reward_gap(spec, makers, demo_stats, ev['episodes'], ev['seeds'], horizon, workers)
    for group, (mean, std) in gaps.items():
        rows.append({'policy': policy, 'metric': 'reward_gap', 'group': group, 'mean': mean, 'std': std})

    if not spec.tabular:
        per_seed = [evaluation.position_kl(spec, rollout(spec, makers, ev['episodes'], seed, horizon=horizon,
                                                         workers=workers, generator='evaluation'),
                                           expert, ev['resolution'], ev['bandwidth_floor'])
                    for seed in ev['seeds']]
        groups = [f'agent{agent}' for agent in spec.movable_agents()] + ['per', 'total']
        for group in groups:
            values = [kl['per_agent'][int(group[5:])] if group.startswith('agent') else kl[group] for kl in per_seed]
            mean, std = misc.mean_std(values)
            rows.append({'policy': policy, 'metric': 'kde_kl', 'group': group, 'mean': mean, 'std': std})
    elif policy != 'random':
        if demonstrators is not None:
            executed = evaluation.learner_joint_policy(spec, demonstrators)
            occupancy = evaluation.occupancy_divergence(spec, makers, executed)
            rows.append({'policy': policy, 'metric': 'occupancy_kl', 'group': 'total', 'mean': occupancy, 'std': 0.0})
            reference = evaluation.joint_action_table(spec, demonstrators)
            weights = (1.0 - spec.discount) * oracle.state_visitation(spec, executed)
        else:
            reference, weights = evaluation.empirical_joint_table(spec, expert)
        tv = evaluation.joint_tv(spec, makers, reference, weights)
        rows.append({'policy': policy, 'metric': 'joint_tv', 'group': 'total', 'mean': tv, 'std': 0.0})
    return rows


def aggregate_rows(rows):
    """Mean and std over learners of each (metric, group) mean."""
    grouped = {}
    for row in rows:
        if row['policy'] != 'random':
            grouped.setdefault((row['metric'], row['group']), []).append(row['mean'])
    aggregated = []
    for (metric, group), values in grouped.items():
        mean, std = misc.mean_std(values)
        aggregated.append({'policy': 'aggregate', 'metric': metric, 'group': group, 'mean': mean, 'std': std})
    return aggregated


def headline(spec, rows):
    """The metric a sweep ranks entries by: total KDE-KL on particle scenarios, total reward gap otherwise."""
    metric = 'reward_gap' if spec.tabular else 'kde_kl'
    for row in rows:
        if row['policy'] == 'learner' and row['metric'] == metric and row['group'] == 'total':
            return metric, row['mean'], row['std']
    raise InvalidArgument(f"no {metric} row to rank by")


############################################################
# DOER FUNCS
############################################################

TABLE_FIELDS = ['policy', 'metric', 'group', 'mean', 'std']


@decorators.timed
def do_demo_train(cfg, run_dir):
    spec = build_spec(cfg)
    settings = trainer_config(cfg, 'demonstrator')
    with RecordSink(os.path.join(run_dir, 'train_log.jsonl')) as sink:
        trainer = demonstrator.DemonstratorTrainer(spec, settings, checkpoint_dir=os.path.join(run_dir, 'checkpoints'),
                                                   log_sink=sink)
        result = trainer.train()
    trainer.save_checkpoint(settings.epochs, name='demonstrators.ckpt')

    section = cfg['demonstrator']
    gate = demonstrator.quality_gate(spec, result.agents, cfg['evaluation']['episodes'], cfg['core']['seed'],
                                     section['gate_fraction'], section['gate_margin'])
    write_records(os.path.join(run_dir, 'metrics.jsonl'), [{'metric': 'quality_gate', **gate}])
    return 0


@decorators.timed
def do_demo_generate(cfg, args, run_dir):
    spec = build_spec(cfg)
    demonstrators = load_agents(spec, args['demonstrators'])
    batch = demonstrator.generate_demonstrations(spec, demonstrators, cfg['demonstrator']['episodes'],
                                                 horizon=spec.horizon, seed=cfg['core']['seed'],
                                                 workers=cfg['core']['workers'])
    write_batch(spec, batch, os.path.join(run_dir, 'demos.jsonl'))
    stats = evaluation.return_statistics(spec, batch)
    write_records(os.path.join(run_dir, 'metrics.jsonl'),
                  [{'metric': 'return', 'group': group, 'mean': mean, 'std': std} for group, (mean, std) in stats.items()])
    log.info(f"Generated {len(batch.episodes)} demonstration episode(s) on {spec.name}")
    return 0


def imitate(spec, cfg, expert, run_dir, **overrides):
    settings = trainer_config(cfg, cfg['imitation']['algorithm'], **overrides)
    with RecordSink(os.path.join(run_dir, 'train_log.jsonl')) as sink:
        trainer = ail.load(spec, settings, checkpoint_dir=os.path.join(run_dir, 'checkpoints'), log_sink=sink)
        result = trainer.train(expert)
    path = trainer.save_checkpoint(settings.epochs, name='final.ckpt')
    log.info(f"Trained {settings.algorithm} for {settings.epochs} epoch(s), checkpoint at {path}")
    return result, path


@decorators.timed
def do_imitate(cfg, args, run_dir):
    spec = build_spec(cfg)
    imitate(spec, cfg, read_batch(spec, args['demos']), run_dir)
    return 0


@decorators.timed
def do_evaluate(cfg, args, run_dir):
    spec = build_spec(cfg)
    if not args.get('checkpoint'):
        raise InvalidArgument("evaluate needs at least one --checkpoint")
    expert = read_batch(spec, args['demos'])
    samples = cfg['evaluation']['samples']
    demonstrators = load_agents(spec, args['demonstrators'], samples) if args.get('demonstrators') else None

    rows = []
    for k, path in enumerate(args['checkpoint']):
        learned = evaluation_rows(spec, cfg, load_agents(spec, path, samples), expert, 'learner', demonstrators)
        rows.extend({**row, 'checkpoint': k} for row in learned)
    rows.extend(evaluation_rows(spec, cfg, evaluation.random_agents(spec), expert, 'random'))
    if len(args['checkpoint']) > 1:
        rows.extend(aggregate_rows(rows))

    write_records(os.path.join(run_dir, 'metrics.jsonl'), rows)
    write_table(os.path.join(run_dir, 'evaluation.csv'), rows, ['checkpoint'] + TABLE_FIELDS)
    for row in rows:
        log.info(f"{row['policy']:<10} {row['metric']:<13} {row['group']:<8} {row['mean']:.4f} +- {row['std']:.4f}")
    return 0


@decorators.timed
def do_oracle_verify(args, run_dir, seed):
    fixture_dir = args.get('fixtures') or suites.FIXTURE_DIR
    results = suites.run_suites([args.get('suite') or 'all'], fixture_dir, seed)
    rows = [{'suite': r.suite, 'property': r.name, 'passed': r.passed, 'detail': r.detail} for r in results]
    write_records(os.path.join(run_dir, 'metrics.jsonl'), rows)
    write_table(os.path.join(run_dir, 'oracle_verify.csv'), rows, ['suite', 'property', 'passed', 'detail'])
    for r in results:
        (log.info if r.passed else log.error)(f"[{'pass' if r.passed else 'FAIL'}] {r.suite}: {r.name} ({r.detail})")
    failed = [r for r in results if not r.passed]
    log.info(f"{len(results) - len(failed)} of {len(results)} properties passed")
    return 1 if failed else 0


def run_sweep_entry(spec, cfg, expert, run_dir, ratio, lam, outcomes):
    name = f"ratio-{ratio.replace(':', 'x')}-lam{lam:g}"
    entry_dir = os.path.join(run_dir, name)
    try:
        os.makedirs(entry_dir, exist_ok=True)
        result, _ = imitate(spec, cfg, expert, entry_dir, ratio=ratio, lam=lam)
        for agent in result.agents:
            agent.samples = cfg['evaluation']['samples']
        rows = evaluation_rows(spec, cfg, result.agents, expert, 'learner')
        write_records(os.path.join(entry_dir, 'metrics.jsonl'), rows)
        metric, mean, std = headline(spec, rows)
        outcomes[name] = {'entry': name, 'ratio': ratio, 'lam': lam, 'metric': metric, 'mean': mean, 'std': std}
    except Exception as e:
        log.exception(f"Exception running sweep entry {name}: ")
        outcomes[name] = e


@decorators.timed
def do_sweep(cfg, args, run_dir, cache):
    spec = build_spec(cfg)
    expert = read_batch(spec, args['demos'])
    lambdas = cfg['sweep']['lambdas'] or [cfg['imitation']['lam']]
    entries = list(itertools.product(cfg['sweep']['ratios'], lambdas))

    outcomes = {}
    thread = Thread(limit=cfg['sweep']['concurrent'])
    for ratio, lam in entries:
        thread.start(run_sweep_entry, name=f"{ratio}@{lam}", args=[spec, cfg, expert, run_dir, ratio, float(lam), outcomes],
                     track=True)
    thread.join()
    for outcome in outcomes.values():
        if isinstance(outcome, Exception):
            raise outcome

    ranked = sorted(outcomes.values(), key=lambda row: (row['mean'], row['entry']))
    for rank, row in enumerate(ranked, start=1):
        row['rank'] = rank
    top_two = ranked[:2]
    g_first = any(misc.parse_ratio(row['ratio'])[1] >= misc.parse_ratio(row['ratio'])[0] for row in top_two)
    if not g_first:
        log.warning("No ratio training the policy at least as often as the discriminator is among the two best")

    write_table(os.path.join(run_dir, 'sweep.csv'), ranked, ['rank', 'entry', 'ratio', 'lam', 'metric', 'mean', 'std'])
    write_records(os.path.join(run_dir, 'metrics.jsonl'), ranked + [{'metric': 'g_at_least_d_in_top_two',
                                                                      'value': g_first}])
    cache.register('sweeps', misc.fingerprint({'config': cfg, 'demos': args['demos']}), run_dir)
    for row in ranked:
        log.info(f"#{row['rank']} {row['entry']}: {row['metric']} {row['mean']:.4f} +- {row['std']:.4f}")
    return 0


@decorators.timed
def do_plot_export(cfg, args, run_dir):
    spec = build_spec(cfg)
    if spec.tabular:
        raise InvalidArgument("plot-export needs a particle scenario")
    samples = evaluation.collect_positions(spec, read_batch(spec, args['batch']))
    evaluation.export_density(samples, run_dir, spec.config.half_width, cfg['evaluation']['resolution'],
                              cfg['evaluation']['bandwidth_floor'])
    return 0


def dispatch(conf, cfg, run_dir, cache):
    cmd = conf.args['cmd']
    if cmd == 'demo-train':
        return do_demo_train(cfg, run_dir)
    elif cmd == 'demo-generate':
        return do_demo_generate(cfg, conf.args, run_dir)
    elif cmd == 'imitate':
        return do_imitate(cfg, conf.args, run_dir)
    elif cmd == 'evaluate':
        return do_evaluate(cfg, conf.args, run_dir)
    elif cmd == 'oracle-verify':
        return do_oracle_verify(conf.args, run_dir, cfg['core']['seed'])
    elif cmd == 'sweep':
        return do_sweep(cfg, conf.args, run_dir, cache)
    elif cmd == 'plot-export':
        return do_plot_export(cfg, conf.args, run_dir)
    log.error(f"Unknown command: {cmd!r}")
    return 2


############################################################
# MAIN
############################################################

def main(argv=None):
    try:
        conf = config.Config(argv)
    except SystemExit as e:
        return int(e.code or 0)
    init_logging(conf.settings)

    cmd = conf.args['cmd']
    notify = None
    try:
        cfg = conf.load()
        notify = init_notifications(cfg)

        run_dir = run_dir_for(conf, cmd, cfg['core']['seed'])
        run_lock = lock.acquire(run_dir)
        cache = Cache(conf.settings['cachefile'])
        try:
            log.info(f"Started {cmd} in {run_dir}")
            conf.save(cfg, os.path.join(run_dir, 'config.json'))
            manifest = write_manifest(run_dir, cmd, cfg, command_inputs(conf.args))
            cache.register('runs', manifest['fingerprint'], run_dir)
            code = dispatch(conf, cfg, run_dir, cache)
        finally:
            cache.close()
            run_lock.release()

        notify.send(message=f"{cmd} finished with exit code {code}: {run_dir}")
        return code

    except LabError as e:
        violations = getattr(e, 'violations', None)
        if violations:
            for violation in violations:
                log.error(f"Config violation: {violation}")
        else:
            log.exception(f"{cmd} aborted: ")
        if notify is not None:
            notify.send(message=f"{cmd} aborted: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        log.info("codail was interrupted by Ctrl + C")
        return 130
    except Exception:
        log.exception("Unexpected fatal exception occurred: ")
        return 1


if __name__ == "__main__":
    sys.exit(main())
