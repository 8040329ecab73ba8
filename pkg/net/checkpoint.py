import logging
import os
import struct

import numpy as np

from exceptions import HashMismatch, SchemaMismatch
from helpers import atomic_write_bytes, read_json, sha256_bytes, write_json
from net.arch import ArchSpec
from net.model import CnnModel, build

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
BLOB_MAGIC = b'DNPUCK01'


def pack_tensors(tensors):
    """
    Serialize named tensors: magic, then per tensor a header
    (uint32 name length, name, uint32 ndim, uint32 dims) and little-endian float64 data.
    """
    parts = [BLOB_MAGIC]
    for name in sorted(tensors):
        value = np.ascontiguousarray(tensors[name], dtype='<f8')
        encoded = name.encode('utf-8')
        parts.append(struct.pack('<I', len(encoded)) + encoded)
        parts.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        parts.append(value.tobytes())
    return b''.join(parts)


def unpack_tensors(data, source='blob'):
    if not data.startswith(BLOB_MAGIC):
        raise SchemaMismatch(f"{source}: not a tensor blob")
    offset = len(BLOB_MAGIC)
    tensors = {}
    try:
        while offset < len(data):
            (name_len,) = struct.unpack_from('<I', data, offset)
            offset += 4
            name = data[offset:offset + name_len].decode('utf-8')
            offset += name_len
            (ndim,) = struct.unpack_from('<I', data, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            end = offset + 8 * count
            if end > len(data):
                raise SchemaMismatch(f"{source}: tensor '{name}' is truncated")
            tensors[name] = np.frombuffer(data[offset:end], dtype='<f8').astype(np.float64).reshape(shape)
            offset = end
    except struct.error as e:
        raise SchemaMismatch(f"{source}: truncated tensor header ({e})") from e
    return tensors


def save_checkpoint(model: CnnModel, directory, name='model', train_config=None, metrics=None, extra=None):
    """
    Write `<name>.json` (manifest) and `<name>.bin` (weights) into `directory`.

    Returns:
        tuple: (manifest path, blob path)
    """
    blob = pack_tensors(model.named_tensors())
    blob_path = os.path.join(directory, f"{name}.bin")
    manifest_path = os.path.join(directory, f"{name}.json")
    atomic_write_bytes(blob_path, blob)
    manifest = {
        'version': CHECKPOINT_VERSION,
        'arch': model.arch.to_dict(),
        'init_seed': model.init_seed,
        'train_config': train_config or {},
        'metrics': metrics or {},
        'n_params': model.n_params(),
        'blob': os.path.basename(blob_path),
        'blob_sha256': sha256_bytes(blob),
        'tensors': {key: list(value.shape) for key, value in sorted(model.named_tensors().items())},
    }
    if extra:
        manifest.update(extra)
    write_json(manifest_path, manifest)
    logger.debug(f"Saved checkpoint {manifest_path}")
    return manifest_path, blob_path


def load_checkpoint(manifest_path):
    """
    Rebuild a model from a checkpoint manifest and its blob.

    Returns:
        tuple: (CnnModel, manifest dict)

    Raises:
        SchemaMismatch: Unknown version or tensors that disagree with the manifest
        HashMismatch: The blob changed after the manifest was written
    """
    manifest = read_json(manifest_path)
    if manifest.get('version') != CHECKPOINT_VERSION:
        raise SchemaMismatch(f"{manifest_path}: unsupported checkpoint version {manifest.get('version')}")
    blob_path = os.path.join(os.path.dirname(manifest_path), manifest['blob'])
    with open(blob_path, 'rb') as f:
        blob = f.read()
    if sha256_bytes(blob) != manifest['blob_sha256']:
        raise HashMismatch(f"{blob_path} does not match the hash recorded in {manifest_path}")

    tensors = unpack_tensors(blob, blob_path)
    declared = {key: tuple(shape) for key, shape in manifest['tensors'].items()}
    if {key: value.shape for key, value in tensors.items()} != declared:
        raise SchemaMismatch(f"{blob_path}: tensors disagree with the manifest")

    model = build(ArchSpec.from_dict(manifest['arch']), manifest['init_seed'])
    model.load_tensors(tensors)
    return model, manifest
