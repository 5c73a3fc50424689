import logging
import os

try:
    from git import InvalidGitRepositoryError, NoSuchPathError, Repo
except ImportError:
    Repo = None

log = logging.getLogger("git")

VERSION = '0.1.0'
PROJECT = 'codail-lab'
_repo = None


def repository():
    global _repo

    if _repo is None and Repo is not None:
        try:
            _repo = Repo(os.path.dirname(os.path.dirname(os.path.realpath(__file__))), search_parent_directories=True)
        except (InvalidGitRepositoryError, NoSuchPathError):
            log.debug("Not running from a git checkout")
        except Exception:
            log.exception("Exception opening the git repository: ")
    return _repo


def current_version():
    repo = repository()
    if repo is None:
        return 'unknown'

    try:
        return str(repo.head.commit)

    except Exception:
        log.exception("Exception retrieving the current commit id: ")
    return 'unknown'


def is_dirty():
    repo = repository()
    try:
        return bool(repo is not None and repo.is_dirty())

    except Exception:
        log.exception("Exception checking the working tree state: ")
    return False


def version_tag():
    """codail-lab/<version>+<commit>, with 'unknown' for the commit outside a checkout."""
    commit = current_version()
    tag = f"{PROJECT}/{VERSION}+{commit[:12] if commit != 'unknown' else commit}"
    return tag + '.dirty' if is_dirty() else tag
