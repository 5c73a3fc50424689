import json

import pytest

from utils.config import Config
from utils.errors import ConfigError


def config_for(tmp_path, *argv, tree=None):
    path = tmp_path / 'config.json'
    if tree is not None:
        path.write_text(json.dumps(tree))
    return Config(['--config', str(path), *argv])


def test_command_line_beats_file_beats_default(tmp_path):
    tree = {'core': {'seed': 3}, 'imitation': {'epochs': 7, 'lam': 0.2}, 'model': {'lr': 0.01}}
    conf = config_for(tmp_path, 'imitate', '--demos', 'demos.jsonl', '--epochs', '9', '--seed', '5', tree=tree)
    cfg = conf.load()
    assert cfg['imitation']['epochs'] == 9
    assert cfg['core']['seed'] == 5
    assert cfg['imitation']['lam'] == 0.2
    assert cfg['model']['lr'] == 0.01
    assert cfg['imitation']['batch_size'] == 1000
    assert cfg['model']['hidden'] == [128, 128]


def test_shared_flags_follow_the_command(tmp_path):
    cfg = config_for(tmp_path, 'demo-train', '--epochs', '4', '--lam', '0.3').load()
    assert cfg['demonstrator']['epochs'] == 4 and cfg['demonstrator']['lam'] == 0.3
    assert cfg['imitation']['epochs'] == 200

    cfg = config_for(tmp_path, 'evaluate', '--demos', 'd.jsonl', '--seeds', '0,1,2', '--episodes', '12').load()
    assert cfg['evaluation']['seeds'] == [0, 1, 2]
    assert cfg['evaluation']['episodes'] == 12
    assert cfg['demonstrator']['episodes'] == 200


def test_sweep_lists(tmp_path):
    conf = config_for(tmp_path, 'sweep', '--demos', 'd.jsonl', '--ratios', '1:2, 2:1', '--lambdas', '0,0.1')
    cfg = conf.load()
    assert cfg['sweep']['ratios'] == ['1:2', '2:1']
    assert cfg['sweep']['lambdas'] == [0.0, 0.1]


def test_every_unknown_key_is_reported(tmp_path):
    tree = {'core': {'sed': 1}, 'bogus': {}, 'model': {'lr': 'fast'}, 'scenario': {'horizon': 'long'}}
    with pytest.raises(ConfigError) as info:
        config_for(tmp_path, 'oracle-verify', tree=tree).load()
    joined = ' | '.join(info.value.violations)
    assert len(info.value.violations) == 4
    for fragment in ('core.sed', 'bogus', 'model.lr', 'scenario.horizon'):
        assert fragment in joined


def test_nullable_keys_accept_values(tmp_path):
    tree = {'scenario': {'horizon': 20, 'tabular': 'fixtures/coordination.json'}}
    cfg = config_for(tmp_path, 'demo-train', tree=tree).load()
    assert cfg['scenario']['horizon'] == 20
    assert cfg['scenario']['landmarks'] is None


def test_range_violations(tmp_path):
    with pytest.raises(ConfigError) as info:
        config_for(tmp_path, 'imitate', '--demos', 'd.jsonl', '--ratio', 'fast', '--batch-size', '0').load()
    assert len(info.value.violations) == 2
    with pytest.raises(ConfigError):
        config_for(tmp_path, 'demo-train', '--scenario', 'tag').load()
    with pytest.raises(ConfigError):
        config_for(tmp_path, 'demo-train', tree={'model': {'hidden': [16]}}).load()


def test_key_and_range_violations_are_reported_together(tmp_path):
    with pytest.raises(ConfigError) as info:
        config_for(tmp_path, 'oracle-verify', tree={'bogus': 1, 'scenario': {'discount': 1.5}}).load()
    joined = ' | '.join(info.value.violations)
    assert len(info.value.violations) == 2
    assert 'unknown key bogus' in joined and 'scenario.discount' in joined


def test_malformed_list_entries_are_violations(tmp_path):
    tree = {'sweep': {'lambdas': ['x']}, 'evaluation': {'seeds': []}, 'model': {'hidden': [16, 'wide']}}
    with pytest.raises(ConfigError) as info:
        config_for(tmp_path, 'oracle-verify', tree=tree).load()
    joined = ' | '.join(info.value.violations)
    for fragment in ('sweep.lambdas', 'evaluation.seeds', 'model.hidden'):
        assert fragment in joined


def test_notification_entries_need_a_service(tmp_path):
    with pytest.raises(ConfigError):
        config_for(tmp_path, 'oracle-verify', tree={'notifications': {'desk': {'url': 'json://localhost'}}}).load()
    cfg = config_for(tmp_path, 'oracle-verify',
                     tree={'notifications': {'desk': {'service': 'apprise', 'url': 'json://localhost'}}}).load()
    assert cfg['notifications']['desk']['service'] == 'apprise'


def test_unreadable_config_file(tmp_path):
    (tmp_path / 'config.json').write_text('{not json')
    with pytest.raises(ConfigError):
        Config(['--config', str(tmp_path / 'config.json'), 'oracle-verify']).load()


def test_settings_come_from_argv_then_environment(tmp_path, monkeypatch):
    monkeypatch.setenv('CODAIL_LOGLEVEL', 'DEBUG')
    monkeypatch.setenv('CODAIL_RUNS_ROOT', str(tmp_path / 'env-runs'))
    conf = Config(['--runs-root', str(tmp_path / 'arg-runs'), 'oracle-verify'])
    assert conf.settings['loglevel'] == 'DEBUG'
    assert conf.settings['runs_root'] == str(tmp_path / 'arg-runs')


def test_a_command_is_required():
    with pytest.raises(SystemExit):
        Config([])
    with pytest.raises(SystemExit):
        Config(['imitate'])


def test_saved_config_reloads(tmp_path):
    conf = config_for(tmp_path, 'demo-train', '--seed', '8')
    cfg = conf.load()
    conf.save(cfg, str(tmp_path / 'resolved.json'))
    reloaded = Config(['--config', str(tmp_path / 'resolved.json'), 'demo-train']).load()
    assert reloaded == cfg
