import hashlib
import json
import os
import tempfile
from datetime import datetime

import numpy as np


def json_serialize(obj):
    """Custom JSON serializer for NumPy types."""
    if isinstance(obj, np.integer):
        return int(obj)
    elif isinstance(obj, np.floating):
        return float(obj)
    elif isinstance(obj, np.ndarray):
        return obj.tolist()
    elif isinstance(obj, np.bool_):
        return bool(obj)
    elif isinstance(obj, (datetime, np.datetime64)):
        return obj.isoformat()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def dumps_json(payload):
    """Serialize a payload to a stable JSON string (sorted keys, numpy aware)."""
    return json.dumps(payload, indent=2, sort_keys=True, default=json_serialize)


def atomic_write_bytes(path, data):
    """
    Write bytes to `path` atomically (temporary file + rename).

    Args:
        path (str): Destination path
        data (bytes): Content
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp_')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode('utf-8'))


def write_json(path, payload):
    atomic_write_text(path, dumps_json(payload) + '\n')


def read_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def sha256_file(path):
    """Content hash of a file, hex encoded."""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def derive_seed(master_seed, *labels):
    """
    Derive a 64-bit sub-seed from a master seed and a label path.

    The derivation hashes the decimal seed and the labels, so sub-seeds are
    stable across platforms and independent of call order.

    Args:
        master_seed (int): Master seed of the run
        *labels: Stage or component names

    Returns:
        int: Unsigned 64-bit seed
    """
    text = ':'.join([str(int(master_seed))] + [str(label) for label in labels])
    return int.from_bytes(hashlib.sha256(text.encode('utf-8')).digest()[:8], 'little')
