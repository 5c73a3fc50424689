import json
import logging

from sqlitedict import SqliteDict

log = logging.getLogger('cache')


class Cache:
    """Run registry: config fingerprints mapped to the run directories that used them."""

    def __init__(self, cache_file_path):
        self.cache_file_path = cache_file_path
        self.caches = {
            'runs': SqliteDict(self.cache_file_path, tablename='runs', encode=json.dumps,
                               decode=json.loads, autocommit=True),
            'sweeps': SqliteDict(self.cache_file_path, tablename='sweeps', encode=json.dumps,
                                 decode=json.loads, autocommit=True)
        }

    def get_cache(self, cache_name):
        return None if cache_name not in self.caches else self.caches[cache_name]

    def register(self, cache_name, key, run_dir):
        """Append run_dir under key; returns the directories registered before it."""
        try:
            table = self.caches[cache_name]
            previous = list(table.get(key, []))
            if previous:
                log.info(f"Fingerprint {key[:12]} was already run in {previous[-1]}")
            table[key] = previous + [run_dir]
            return previous
        except Exception:
            log.exception(f"Exception registering {run_dir} in the {cache_name} registry: ")
        return []

    def close(self):
        for table in self.caches.values():
            try:
                table.close()
            except Exception:
                log.exception(f"Exception closing registry table {table.tablename}: ")
