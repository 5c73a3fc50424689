import copy
import logging
import threading

log = logging.getLogger("threads")


class Thread:
    def __init__(self, limit=None):
        self.threads = []
        self.slots = threading.BoundedSemaphore(limit) if limit else None

    def start(self, target, name=None, args=None, track=False):
        if self.slots is not None:
            target = self._slotted(target)
        thread = threading.Thread(target=target, name=name, args=args or [])
        thread.daemon = True
        thread.start()
        if track:
            self.threads.append(thread)
        return thread

    def _slotted(self, target):
        def run(*args):
            with self.slots:
                return target(*args)

        return run

    def join(self):
        for thread in copy.copy(self.threads):
            thread.join()
            self.threads.remove(thread)
        return
