import logging
import os

import lockfile

from .errors import StorageError

log = logging.getLogger("lock")

LOCK_NAME = '.run'


def ensure_run_folder(run_dir):
    # ensure run folder exists, otherwise create it
    try:
        if not os.path.exists(run_dir):
            os.makedirs(run_dir)
            log.info(f"Created run folder: {run_dir}")
    except OSError as e:
        log.exception(f"Exception verifying/creating run folder {run_dir}: ")
        raise StorageError(f"cannot create run directory {run_dir}: {e}") from e


def run(run_dir):
    return lockfile.LockFile(os.path.join(run_dir, LOCK_NAME))


def acquire(run_dir, timeout=0):
    """Take exclusive ownership of a run directory; fails if another run holds it."""
    ensure_run_folder(run_dir)
    lock = run(run_dir)
    try:
        lock.acquire(timeout=timeout)
    except (lockfile.AlreadyLocked, lockfile.LockTimeout) as e:
        raise StorageError(f"run directory {run_dir} is owned by another run") from e
    except lockfile.LockFailed as e:
        raise StorageError(f"cannot lock run directory {run_dir}: {e}") from e
    log.debug(f"Acquired lock on {run_dir}")
    return lock
