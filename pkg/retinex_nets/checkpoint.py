'''
DEANet Low-Light Enhancement Toolkit
DEAN checkpoint container: named float32 tensors in a small binary file.

Layout (little-endian):
    b"DEAN" | version u32 = 1 | tensor count u32 |
    per tensor: name length u16, UTF-8 name, rank u8, dims u32 * rank,
                float32 values in C order

'''

import logging
import struct
from pathlib import Path

import numpy as np

from utilities.exceptions import CheckpointError


logger = logging.getLogger(__name__)

MAGIC = b'DEAN'
VERSION = 1


def write_checkpoint(path, tensors):
    '''Write named arrays to a DEAN file.

    Arguments:
        path (str or Path): destination file
        tensors (dict): name -> array-like; stored as float32 in dict order

    Returns:
        Path
    '''

    path = Path(path)
    chunks = [MAGIC, struct.pack('<II', VERSION, len(tensors))]
    for name, value in tensors.items():
        encoded = name.encode('utf-8')
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f'{path}: tensor name too long ({len(encoded)} bytes)')
        array = np.asarray(value, dtype='<f4')
        if array.ndim > 0xFF:
            raise CheckpointError(f'{path}: tensor {name!r} has rank {array.ndim} > 255')
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack('<B', array.ndim))
        chunks.append(struct.pack(f'<{array.ndim}I', *array.shape))
        chunks.append(np.ascontiguousarray(array).tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b''.join(chunks))
    logger.debug('Wrote %d tensors to %s', len(tensors), path)
    return path


def read_checkpoint(path):
    '''Read a DEAN file.

    Arguments:
        path (str or Path)

    Returns:
        dict: name -> float32 np.ndarray, in file order
    '''

    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as err:
        raise CheckpointError(f'Cannot read checkpoint {path}: {err}') from err

    if blob[:4] != MAGIC:
        raise CheckpointError(f'{path} is not a DEAN checkpoint (bad magic bytes)')
    try:
        version, count = struct.unpack_from('<II', blob, 4)
        if version != VERSION:
            raise CheckpointError(f'{path}: unsupported checkpoint version {version}')
        offset = 12
        tensors = {}
        for _ in range(count):
            (name_length,) = struct.unpack_from('<H', blob, offset)
            offset += 2
            name = blob[offset:offset + name_length].decode('utf-8')
            offset += name_length
            (rank,) = struct.unpack_from('<B', blob, offset)
            offset += 1
            shape = struct.unpack_from(f'<{rank}I', blob, offset)
            offset += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if offset + 4 * size > len(blob):
                raise CheckpointError(f'{path}: truncated data for tensor {name!r}')
            tensors[name] = np.frombuffer(blob, dtype='<f4', count=size,
                                          offset=offset).reshape(shape).astype(np.float32)
            offset += 4 * size
    except struct.error as err:
        raise CheckpointError(f'{path}: truncated or corrupt checkpoint ({err})') from err
    if offset != len(blob):
        raise CheckpointError(f'{path}: {len(blob) - offset} trailing bytes after '
                              f'{count} tensors')
    return tensors


def save_network(net, path, extra=None):
    '''Write a network's parameters (plus optional extra tensors) to path.'''

    tensors = net.state_dict()
    tensors.update(extra or {})
    return write_checkpoint(path, tensors)


def load_network(net, path):
    '''Load parameters saved by save_network into net; returns all tensors read.'''

    tensors = read_checkpoint(path)
    net.load_state_dict(tensors, source=str(path))
    return tensors
