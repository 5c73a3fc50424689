import functools
import logging
import timeit

from . import misc

log = logging.getLogger("decorators")


def timed(method):
    """Log how long a doer took; integer results are reported as the command's exit code."""

    @functools.wraps(method)
    def timer(*args, **kw):
        start_time = timeit.default_timer()
        result = method(*args, **kw)
        time_taken = timeit.default_timer() - start_time
        try:
            outcome = f" with exit code {result}" if isinstance(result, int) and not isinstance(result, bool) else ""
            log.info(f"{method.__name__} finished{outcome} in {misc.seconds_to_string(time_taken)}")
        except Exception:
            log.exception("Exception while logging time taken to run function: ")
        return result

    return timer
