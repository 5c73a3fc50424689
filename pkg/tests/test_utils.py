import logging
import threading

import numpy as np
import pytest

from utils import decorators, lock, misc, version
from utils.cache import Cache
from utils.errors import StorageError
from utils.notifications import Notifications
from utils.threads import Thread


def test_ratios():
    assert misc.parse_ratio('2:1') == (2, 1)
    assert misc.parse_ratio(' 1 : 4 ') == (1, 4)
    for bad in ('0:1', '2', 'a:b', '1:2:3'):
        with pytest.raises(ValueError):
            misc.parse_ratio(bad)


def test_merge_keeps_untouched_leaves():
    base = {'core': {'seed': 0, 'workers': 1}, 'model': {'lr': 0.1}}
    merged = misc.merge_dicts(base, {'core': {'seed': 4}})
    assert merged == {'core': {'seed': 4, 'workers': 1}, 'model': {'lr': 0.1}}
    assert base['core']['seed'] == 0


def test_records_are_plain_json():
    record = {'loss': np.float64(0.5), 'tuple': (1, 2), 'array': np.arange(3), 'bad': float('nan')}
    text = misc.encode_record(record)
    assert ' ' not in text
    assert misc.decode_record(text) == {'loss': 0.5, 'tuple': [1, 2], 'array': [0, 1, 2], 'bad': 'nan'}
    assert misc.fingerprint(record) == misc.fingerprint(dict(record))


def test_mean_std():
    assert misc.mean_std([1, 3]) == (2.0, 1.0)
    mean, std = misc.mean_std([])
    assert np.isnan(mean) and np.isnan(std)
    assert misc.seconds_to_string(3725) == '1 hours, 2 minutes and 5 seconds'


def test_registry_remembers_earlier_runs(tmp_path):
    cache = Cache(str(tmp_path / 'cache.db'))
    try:
        assert cache.register('runs', 'abc', 'runs/first') == []
        assert cache.register('runs', 'abc', 'runs/second') == ['runs/first']
        assert cache.register('sweeps', 'abc', 'runs/third') == []
        assert cache.get_cache('bogus') is None
    finally:
        cache.close()


def test_run_directory_is_owned_by_one_run(tmp_path):
    run_dir = str(tmp_path / 'run')
    held = lock.acquire(run_dir)
    errors = []

    def contender():
        try:
            lock.acquire(run_dir)
        except StorageError as e:
            errors.append(e)

    try:
        worker = threading.Thread(target=contender)
        worker.start()
        worker.join()
    finally:
        held.release()
    assert len(errors) == 1
    lock.acquire(run_dir).release()


def test_version_tag_names_the_project():
    assert version.version_tag().startswith(f'{version.PROJECT}/{version.VERSION}+')


def test_notification_services_are_validated():
    notify = Notifications()
    assert not notify.load(url='json://localhost')
    assert not notify.load(service='pushover', url='json://localhost')
    assert notify.load(service='apprise', url='json://localhost')
    assert len(notify.services) == 1


def test_timed_reports_the_exit_code(caplog):
    @decorators.timed
    def do_add(a, b):
        return a + b

    with caplog.at_level(logging.INFO, logger='decorators'):
        assert do_add(2, b=3) == 5
    assert do_add.__name__ == 'do_add'
    assert 'do_add finished with exit code 5 in' in caplog.text


def test_thread_limit_bounds_concurrency():
    running, peak, guard = [0], [0], threading.Lock()
    release = threading.Event()

    def work():
        with guard:
            running[0] += 1
            peak[0] = max(peak[0], running[0])
        release.wait(0.05)
        with guard:
            running[0] -= 1

    pool = Thread(limit=2)
    for k in range(6):
        pool.start(work, name=f'work-{k}', track=True)
    pool.join()
    assert peak[0] <= 2
    assert pool.threads == []
