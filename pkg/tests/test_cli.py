import copy
import csv
import json
import os

import pytest

import codail
from utils.agents import CORRELATED, make_agents
from utils.evaluation import random_agents
from utils.game import load_tabular, read_batch, rollout, write_batch
from utils.particles import make_scenario

FIXTURE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.realpath(__file__))), 'fixtures')

TABULAR_TREE = {
    'core': {'seed': 1},
    'scenario': {'tabular': os.path.join(FIXTURE_DIR, 'matching_pennies.json'), 'horizon': 5},
    'model': {'hidden': [8, 8]},
    'demonstrator': {'epochs': 2, 'rollout_episodes': 3, 'episodes': 6},
    'imitation': {'rollout_episodes': 3},
    'evaluation': {'episodes': 4},
}


def run(home, *argv, tree=None):
    config_path = os.path.join(home, 'config.json')
    if tree is not None:
        with open(config_path, 'w') as fp:
            json.dump(tree, fp)
    return codail.main(['--config', config_path, '--logfile', os.path.join(home, 'codail.log'),
                        '--cachefile', os.path.join(home, 'cache.db'), '--loglevel', 'WARN', *argv])


def read_table(path):
    with open(path, newline='') as fp:
        return list(csv.DictReader(fp))


@pytest.fixture(scope='module')
def lab(tmp_path_factory):
    """Demonstrators trained and rolled out on matching pennies."""
    home = str(tmp_path_factory.mktemp('lab'))
    assert run(home, 'demo-train', '--run-dir', os.path.join(home, 'demo'), tree=TABULAR_TREE) == 0
    checkpoint = os.path.join(home, 'demo', 'checkpoints', 'demonstrators.ckpt')
    assert run(home, 'demo-generate', '--demonstrators', checkpoint, '--run-dir', os.path.join(home, 'gen')) == 0
    return {'home': home, 'demonstrators': checkpoint, 'demos': os.path.join(home, 'gen', 'demos.jsonl')}


def test_oracle_verify_writes_its_run_directory(tmp_path):
    run_dir = tmp_path / 'verify'
    assert run(str(tmp_path), 'oracle-verify', '--suite', 'occupancy', '--run-dir', str(run_dir)) == 0
    assert {'config.json', 'manifest.json', 'oracle_verify.csv', 'metrics.jsonl'} <= set(os.listdir(run_dir))
    rows = read_table(run_dir / 'oracle_verify.csv')
    assert rows and all(row['suite'] == 'occupancy' and row['passed'] == 'True' for row in rows)
    manifest = json.loads((run_dir / 'manifest.json').read_text())
    assert manifest['command'] == 'oracle-verify' and manifest['inputs'] == {'suite': 'occupancy'}


def test_usage_errors_exit_with_two(tmp_path):
    assert run(str(tmp_path), 'train-everything') == 2
    assert run(str(tmp_path), 'imitate') == 2


def test_invalid_config_exits_with_two(tmp_path):
    run_dir = tmp_path / 'never'
    assert run(str(tmp_path), 'oracle-verify', '--run-dir', str(run_dir), tree={'core': {'sed': 1}}) == 2
    assert not run_dir.exists()


def test_missing_inputs_are_storage_errors(tmp_path):
    code = run(str(tmp_path), 'imitate', '--demos', str(tmp_path / 'absent.jsonl'), '--run-dir', str(tmp_path / 'r'),
               tree=TABULAR_TREE)
    assert code == 4


def test_demonstrator_pipeline(lab):
    assert os.path.exists(lab['demonstrators'])
    metrics = [json.loads(line) for line in open(os.path.join(lab['home'], 'demo', 'metrics.jsonl'))]
    assert metrics[0]['metric'] == 'quality_gate' and metrics[0]['kind'] == 'epsilon_ne'

    batch = read_batch(codail.build_spec(codail.config.Config(
        ['--config', os.path.join(lab['home'], 'config.json'), 'oracle-verify']).load()), lab['demos'])
    assert len(batch.episodes) == 6
    assert all(len(episode) == 5 for episode in batch.episodes)
    assert batch.metadata['generator'] == 'demonstrator'


def test_imitation_is_reproducible_and_evaluates(lab):
    home = lab['home']
    logs, checkpoints = [], []
    for name in ('first', 'second'):
        run_dir = os.path.join(home, name)
        assert run(home, 'imitate', '--demos', lab['demos'], '--epochs', '2', '--batch-size', '16',
                   '--run-dir', run_dir) == 0
        logs.append(open(os.path.join(run_dir, 'train_log.jsonl'), 'rb').read())
        checkpoints.append(os.path.join(run_dir, 'checkpoints', 'final.ckpt'))
        assert os.path.exists(checkpoints[-1])
    assert logs[0] == logs[1]
    assert len(logs[0].splitlines()) == 4

    run_dir = os.path.join(home, 'evaluate')
    argv = ['evaluate', '--demos', lab['demos'], '--demonstrators', lab['demonstrators'], '--seeds', '0,1',
            '--run-dir', run_dir]
    for path in checkpoints:
        argv += ['--checkpoint', path]
    assert run(home, *argv) == 0
    rows = read_table(os.path.join(run_dir, 'evaluation.csv'))
    learner = {row['metric'] for row in rows if row['policy'] == 'learner'}
    assert learner == {'reward_gap', 'occupancy_kl', 'joint_tv'}
    assert any(row['policy'] == 'random' for row in rows)
    aggregate = [row for row in rows if row['policy'] == 'aggregate']
    # both checkpoints hold the same networks
    assert aggregate and all(float(row['std']) == 0.0 for row in aggregate)


def test_evaluate_needs_a_checkpoint(lab):
    assert run(lab['home'], 'evaluate', '--demos', lab['demos'], '--run-dir',
               os.path.join(lab['home'], 'no-checkpoint')) == 2


def test_demonstrators_scored_against_themselves_match_exactly():
    game = load_tabular(os.path.join(FIXTURE_DIR, 'two_state_chain.json'))
    cfg = copy.deepcopy(codail.config.Config.base_config)
    cfg['scenario']['horizon'] = 5
    cfg['evaluation']['episodes'] = 4
    team = make_agents(game, CORRELATED, hidden=(8, 8), seed=3)
    expert = rollout(game, team, 4, 0, horizon=5)

    rows = {row['metric']: row for row in codail.evaluation_rows(game, cfg, team, expert, 'learner', team)
            if row['group'] == 'total'}
    assert rows['joint_tv']['mean'] == pytest.approx(0.0, abs=1e-12)
    assert rows['occupancy_kl']['mean'] == pytest.approx(0.0, abs=1e-12)

    without = {row['metric'] for row in codail.evaluation_rows(game, cfg, team, expert, 'learner')}
    assert without == {'reward_gap', 'joint_tv'}


def test_sweep_ranks_every_entry(lab):
    home = lab['home']
    run_dir = os.path.join(home, 'sweep')
    assert run(home, 'sweep', '--demos', lab['demos'], '--epochs', '1', '--batch-size', '16', '--ratios', '1:1,2:1',
               '--run-dir', run_dir) == 0
    rows = read_table(os.path.join(run_dir, 'sweep.csv'))
    assert [row['rank'] for row in rows] == ['1', '2']
    assert {row['ratio'] for row in rows} == {'1:1', '2:1'}
    assert all(row['metric'] == 'reward_gap' for row in rows)
    assert os.path.exists(os.path.join(run_dir, 'ratio-2x1-lam0.05', 'train_log.jsonl'))


def test_plot_export(tmp_path, lab):
    home = str(tmp_path)
    assert run(home, 'plot-export', '--batch', lab['demos'], '--run-dir', str(tmp_path / 'tabular'),
               tree=TABULAR_TREE) == 2

    game = make_scenario('keep_away').with_horizon(10)
    batch_path = write_batch(game, rollout(game, random_agents(game), 3, seed=0), str(tmp_path / 'batch.jsonl'))
    run_dir = tmp_path / 'plots'
    assert run(home, 'plot-export', '--batch', batch_path, '--resolution', '21', '--run-dir', str(run_dir),
               tree={}) == 0
    names = set(os.listdir(run_dir))
    for group in ('agent0', 'agent1', 'all'):
        assert {f'density_{group}.csv', f'density_{group}.svg'} <= names
