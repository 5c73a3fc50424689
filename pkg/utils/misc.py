import hashlib
import logging
import math
import re

import jsonpickle
import numpy as np

log = logging.getLogger("misc")


def seconds_to_string(seconds):
    """ reference: https://codereview.stackexchange.com/a/120595 """
    resp = ''
    try:
        seconds = int(round(seconds))
        minutes, seconds = divmod(seconds, 60)
        hours, minutes = divmod(minutes, 60)
        days, hours = divmod(hours, 24)
        if days:
            resp += f'{days} days'
        if hours:
            if len(resp):
                resp += ', '
            resp += f'{hours} hours'
        if minutes:
            if len(resp):
                resp += ', '
            resp += f'{minutes} minutes'
        if seconds or not len(resp):
            if len(resp):
                resp += ' and '
            resp += f'{seconds} seconds'
    except Exception:
        log.exception(f"Exception occurred converting {seconds} seconds to readable string: ")
        resp = f'{seconds} seconds'
    return resp


def merge_dicts(base, override):
    """Recursively merge override into a copy of base, override wins on leaves."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_dicts(merged[key], value)
        else:
            merged[key] = value
    return merged


def set_path(tree, dotted, value):
    node = tree
    keys = dotted.split('.')
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value
    return tree


def parse_ratio(text):
    """Parse a D:G training frequency such as '1:2' into (d_steps, g_steps)."""
    match = re.fullmatch(r'\s*(\d+)\s*:\s*(\d+)\s*', str(text))
    if not match:
        raise ValueError(f"ratio must look like 'd:g', got {text!r}")
    d_steps, g_steps = int(match.group(1)), int(match.group(2))
    if d_steps < 1 or g_steps < 1:
        raise ValueError(f"ratio terms must be positive, got {text!r}")
    return d_steps, g_steps


def parse_list(text, cast=str):
    if isinstance(text, (list, tuple)):
        return [cast(item) for item in text]
    return [cast(item.strip()) for item in str(text).split(',') if item.strip()]


def plain(value):
    """Convert numpy scalars/arrays and tuples into JSON-native values."""
    if hasattr(value, 'tolist'):
        return plain(value.tolist())
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def encode_record(record):
    return jsonpickle.encode(plain(record), unpicklable=False, make_refs=False, separators=(',', ':'))


def decode_record(text):
    return jsonpickle.decode(text)


def fingerprint(record):
    return hashlib.sha1(encode_record(record).encode('utf-8')).hexdigest()


def mean_std(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return float('nan'), float('nan')
    return float(np.mean(values)), float(np.std(values))
