import io
import json
import logging

import numpy as np
import pandas as pd

from exceptions import SchemaMismatch
from features.models import FeatureDataset, FeatureMatrix
from helpers import atomic_write_bytes, atomic_write_text

logger = logging.getLogger(__name__)

MATRIX_MAGIC = b'DNPUFM01'
DATASET_MAGIC = b'DNPUFD01'
FLOAT_FORMAT = '%.17g'

_CSV_INT_KEYS = ('device_seed', 'control_seed', 'downsample', 'channels', 'frames')


def _header_bytes(header):
    body = json.dumps(header, sort_keys=True).encode('utf-8')
    return len(body).to_bytes(4, 'little') + body


def _read_header(buffer, offset, path):
    if len(buffer) < offset + 4:
        raise SchemaMismatch(f"{path}: truncated header")
    size = int.from_bytes(buffer[offset:offset + 4], 'little')
    start = offset + 4
    try:
        header = json.loads(buffer[start:start + size].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SchemaMismatch(f"{path}: unreadable header ({e})") from e
    return header, start + size


def export_features_csv(fm: FeatureMatrix, path):
    """
    Write a feature matrix as CSV: `# key=value` header lines, then one row per channel.
    """
    lines = [
        f"# device_seed={fm.provenance.get('device_seed', '')}",
        f"# control_seed={fm.provenance.get('control_seed', '')}",
        f"# frame_rate={fm.frame_rate!r}",
        f"# downsample={fm.provenance.get('downsample', '')}",
        f"# channels={fm.channels}",
        f"# frames={fm.frames}",
        f"# provenance={json.dumps(fm.provenance, sort_keys=True)}",
    ]
    buffer = io.StringIO()
    pd.DataFrame(fm.values).to_csv(buffer, index=False, header=False, float_format=FLOAT_FORMAT,
                                   lineterminator='\n')
    atomic_write_text(path, '\n'.join(lines) + '\n' + buffer.getvalue())


def import_features_csv(path):
    """
    Read a CSV written by `export_features_csv`.

    Raises:
        SchemaMismatch: When the rows disagree with the header
    """
    header = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if not line.startswith('#'):
                break
            key, _, value = line[1:].strip().partition('=')
            header[key.strip()] = value.strip()

    for key in ('frame_rate', 'channels', 'frames', 'provenance'):
        if key not in header:
            raise SchemaMismatch(f"{path}: header lacks '{key}'")

    table = pd.read_csv(path, comment='#', header=None, float_precision='round_trip')
    values = table.to_numpy(dtype=np.float64)
    if values.shape != (int(header['channels']), int(header['frames'])):
        raise SchemaMismatch(
            f"{path}: header declares {header['channels']}x{header['frames']}, rows hold {values.shape}"
        )
    provenance = json.loads(header['provenance'])
    for key in _CSV_INT_KEYS[:3]:
        if header.get(key) and str(provenance.get(key)) != header[key]:
            raise SchemaMismatch(f"{path}: '{key}' header line disagrees with the provenance record")
    return FeatureMatrix(values, float(header['frame_rate']), provenance)


def export_features_bin(fm: FeatureMatrix, path):
    """
    Write a feature matrix in the binary container: magic, length-prefixed JSON
    header, then each channel as a uint32 length followed by little-endian float64.
    """
    header = {'channels': fm.channels, 'frames': fm.frames, 'frame_rate': fm.frame_rate,
              'provenance': fm.provenance}
    parts = [MATRIX_MAGIC, _header_bytes(header)]
    for row in fm.values:
        parts.append(len(row).to_bytes(4, 'little'))
        parts.append(row.astype('<f8').tobytes())
    atomic_write_bytes(path, b''.join(parts))


def import_features_bin(path):
    """Read a binary feature matrix, validating every row against the header."""
    with open(path, 'rb') as f:
        buffer = f.read()
    if not buffer.startswith(MATRIX_MAGIC):
        raise SchemaMismatch(f"{path}: not a feature matrix file")
    header, offset = _read_header(buffer, len(MATRIX_MAGIC), path)

    rows = []
    while offset < len(buffer):
        if offset + 4 > len(buffer):
            raise SchemaMismatch(f"{path}: truncated row prefix")
        n = int.from_bytes(buffer[offset:offset + 4], 'little')
        offset += 4
        end = offset + 8 * n
        if end > len(buffer):
            raise SchemaMismatch(f"{path}: truncated row")
        rows.append(np.frombuffer(buffer[offset:end], dtype='<f8').astype(np.float64))
        offset = end

    if len(rows) != header['channels']:
        raise SchemaMismatch(f"{path}: header declares {header['channels']} channels, file holds {len(rows)}")
    if any(row.size != header['frames'] for row in rows):
        raise SchemaMismatch(f"{path}: row length differs from the declared {header['frames']} frames")
    return FeatureMatrix(np.stack(rows), header['frame_rate'], header['provenance'])


def export_features(fm: FeatureMatrix, path):
    """Write CSV or binary depending on the file suffix (.csv or anything else)."""
    if str(path).lower().endswith('.csv'):
        export_features_csv(fm, path)
    else:
        export_features_bin(fm, path)


def import_features(path):
    if str(path).lower().endswith('.csv'):
        return import_features_csv(path)
    return import_features_bin(path)


def write_feature_dataset(dataset: FeatureDataset, path):
    """
    Store a feature dataset: magic, length-prefixed JSON header, raw float64 body.

    The layout is deterministic, so equal datasets give equal file hashes.
    """
    header = {
        'shape': list(dataset.values.shape),
        'labels': dataset.labels.tolist(),
        'frame_rate': dataset.frame_rate,
        'class_names': list(dataset.class_names),
        'train_index': dataset.train_index.tolist(),
        'test_index': dataset.test_index.tolist(),
        'provenance': dataset.provenance,
        'normalizer': dataset.normalizer,
    }
    body = np.ascontiguousarray(dataset.values, dtype='<f8').tobytes()
    atomic_write_bytes(path, DATASET_MAGIC + _header_bytes(header) + body)
    logger.debug(f"Wrote feature dataset {dataset.values.shape} to {path}")


def read_feature_dataset(path):
    with open(path, 'rb') as f:
        buffer = f.read()
    if not buffer.startswith(DATASET_MAGIC):
        raise SchemaMismatch(f"{path}: not a feature dataset file")
    header, offset = _read_header(buffer, len(DATASET_MAGIC), path)
    shape = tuple(header['shape'])
    expected = 8 * int(np.prod(shape))
    if len(buffer) - offset != expected:
        raise SchemaMismatch(f"{path}: body holds {len(buffer) - offset} bytes, header implies {expected}")
    values = np.frombuffer(buffer[offset:], dtype='<f8').astype(np.float64).reshape(shape)
    return FeatureDataset(
        values=values,
        labels=header['labels'],
        frame_rate=header['frame_rate'],
        class_names=header['class_names'],
        train_index=header['train_index'],
        test_index=header['test_index'],
        provenance=header['provenance'],
        normalizer=header['normalizer'],
    )
