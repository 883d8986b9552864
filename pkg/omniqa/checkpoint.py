"""
Binary checkpoint format.

    magic      4 bytes  b"VGCN"
    version    uint16
    config     uint32 length + UTF-8 JSON (sorted keys)
    tensors    uint32 count, then per tensor:
                 uint16 name length + UTF-8 name
                 uint8 ndim + ndim x uint32 dims
                 prod(dims) x float32
All integers and floats are little-endian. Batch-norm running statistics
are stored like any other tensor; the step counters are not.
"""
from typing import Dict

import numpy as np
import logging
import struct
import torch
import json
import io

from omniqa.model import ModelConfig, VGCN
from omniqa.utils.errors import (CheckpointMagicError, CheckpointTruncatedError,
                                 CheckpointVersionError, DataError)
from omniqa.viewpoint import DetectorConfig

logger = logging.getLogger(__name__)

MAGIC = b'VGCN'
FORMAT_VERSION = 1


def _state_tensors(model: VGCN) -> Dict[str, torch.Tensor]:
    return {name: t for name, t in model.state_dict().items() if not name.endswith('num_batches_tracked')}


def dumps(model: VGCN) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack('<H', FORMAT_VERSION))

    config = json.dumps(model.config_dict(), sort_keys=True).encode('utf-8')
    buf.write(struct.pack('<I', len(config)))
    buf.write(config)

    tensors = _state_tensors(model)
    buf.write(struct.pack('<I', len(tensors)))
    for name, tensor in tensors.items():
        encoded = name.encode('utf-8')
        buf.write(struct.pack('<H', len(encoded)))
        buf.write(encoded)
        shape = tuple(tensor.shape)
        buf.write(struct.pack('<B', len(shape)))
        buf.write(struct.pack(f'<{len(shape)}I', *shape))
        buf.write(tensor.detach().cpu().numpy().astype('<f4').tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointTruncatedError(f"checkpoint truncated while reading {what} at byte {self.offset}")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(data: bytes) -> VGCN:
    reader = _Reader(data)
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise CheckpointMagicError("not a VGCN checkpoint (bad magic bytes)")
    reader.take(len(MAGIC), 'magic')
    (version,) = reader.unpack('<H', 'version')
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")

    (length,) = reader.unpack('<I', 'config length')
    try:
        config = json.loads(reader.take(length, 'config').decode('utf-8'))
        model_cfg = ModelConfig(**config['model'])
        detector_cfg = DetectorConfig(**config['detector'])
    except (ValueError, KeyError, TypeError) as err:
        raise DataError(f"invalid checkpoint config: {err}") from err

    model = VGCN(model_cfg, detector_cfg)
    expected = _state_tensors(model)

    (count,) = reader.unpack('<I', 'tensor count')
    state = {}
    for _ in range(count):
        (name_len,) = reader.unpack('<H', 'tensor name length')
        name = reader.take(name_len, 'tensor name').decode('utf-8')
        (ndim,) = reader.unpack('<B', f'rank of {name}')
        shape = reader.unpack(f'<{ndim}I', f'shape of {name}')
        n = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(reader.take(4 * n, f'values of {name}'), dtype='<f4')
        state[name] = torch.from_numpy(values.astype(np.float32).reshape(shape))

    if reader.offset != len(data):
        raise DataError(f"{len(data) - reader.offset} trailing bytes after the last tensor")
    if set(state) != set(expected):
        missing, extra = sorted(set(expected) - set(state)), sorted(set(state) - set(expected))
        raise DataError(f"checkpoint does not match the model: missing {missing}, unexpected {extra}")
    for name, tensor in state.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise DataError(f"tensor {name} has shape {tuple(tensor.shape)}, "
                            f"expected {tuple(expected[name].shape)}")

    model.load_state_dict(state, strict=False)
    return model.eval()


def save_checkpoint(model: VGCN, path: str):
    with open(path, 'wb') as f:
        f.write(dumps(model))
    logger.info("checkpoint written to %s", path)


def load_checkpoint(path: str) -> VGCN:
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as err:
        raise DataError(f"cannot read checkpoint {path}: {err}") from err
    return loads(data)
