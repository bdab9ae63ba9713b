#!/usr/bin/env python3

"""
Binary codecs for the two formats that hold numbers: checkpoints and speech
embedding files.

Both formats are little-endian and store values as 32-bit floats.  The
functions here only deal with bytes and numpy arrays; the modules that own the
formats (`model` and `corpus`) wrap them with their own types.
"""

import math
import struct
import numpy as np

from pathlib import Path
from .errors import *

CHECKPOINT_HEADER = b'#slp-ckpt v1\n'
CHECKPOINT_CONFIG_PREFIX = b'#config '

EMBEDDING_MAGIC = b'SLPE'
EMBEDDING_VERSION = 1

def checkpoint_from_file(path):
    try:
        return checkpoint_from_bytes(Path(path).read_bytes())

    except ParseError as e:
        e.path = path
        raise e from None

def file_from_checkpoint(path, config_json, records):
    Path(path).write_bytes(bytes_from_checkpoint(config_json, records))

def checkpoint_from_bytes(bytes):
    """
    Split a checkpoint into its configuration (a JSON string) and its
    parameter records.
    """
    if not bytes.startswith(CHECKPOINT_HEADER):
        raise ParseError("not a checkpoint (missing '#slp-ckpt v1' header)", 0)

    i = len(CHECKPOINT_HEADER)
    if not bytes.startswith(CHECKPOINT_CONFIG_PREFIX, i):
        raise ParseError("missing '#config' line", i)

    j = bytes.find(b'\n', i)
    if j < 0:
        raise ParseError("unterminated '#config' line", i)

    config_json = bytes[i + len(CHECKPOINT_CONFIG_PREFIX):j].decode('utf8')
    records = records_from_bytes(bytes, j + 1)
    return config_json, records

def bytes_from_checkpoint(config_json, records):
    if '\n' in config_json:
        raise ValueError("checkpoint config must fit on one line")

    return b''.join([
            CHECKPOINT_HEADER,
            CHECKPOINT_CONFIG_PREFIX,
            config_json.encode('utf8'),
            b'\n',
            bytes_from_records(records),
    ])

def records_from_bytes(bytes, i=0):
    """
    Parse a sequence of named parameter records.

    Each record is: name length, name (UTF-8), rank, each dimension (all
    integers as unsigned 64-bit little-endian), then the values as 32-bit
    little-endian floats in row-major order.
    """
    records = []

    def unpack(format, i):
        size = struct.calcsize(format)
        if len(bytes) < i + size:
            raise ParseError("unexpected EOF", i)
        return struct.unpack(format, bytes[i:i+size]), i + size

    while i < len(bytes):
        (n,), i = unpack('<Q', i)
        if len(bytes) < i + n:
            raise ParseError("unexpected EOF in parameter name", i)
        try:
            name = bytes[i:i+n].decode('utf8')
        except UnicodeDecodeError:
            raise ParseError("parameter name is not valid UTF-8", i) from None
        i += n

        (rank,), i = unpack('<Q', i)
        if len(bytes) < i + 8 * rank:
            raise ParseError(f"unexpected EOF in shape of parameter '{name}' (rank {rank})", i)
        shape, i = unpack(f'<{rank}Q', i)
        if any(x == 0 for x in shape):
            raise ParseError(f"parameter '{name}' has an empty dimension: {shape}", i)

        count = math.prod(shape)
        if len(bytes) < i + 4 * count:
            raise ParseError(f"unexpected EOF in values of parameter '{name}'", i)

        values = np.frombuffer(bytes, dtype='<f4', count=count, offset=i)
        records.append((name, values.reshape(shape).astype(np.float32)))
        i += 4 * count

    return records

def bytes_from_records(records):
    chunks = []

    for name, values in records:
        name_bytes = name.encode('utf8')
        values = np.asarray(values)
        shape = values.shape

        chunks += [
                struct.pack('<Q', len(name_bytes)),
                name_bytes,
                struct.pack(f'<Q{len(shape)}Q', len(shape), *shape),
                values.astype('<f4').tobytes(order='C'),
        ]

    return b''.join(chunks)

def embeddings_from_file(path):
    try:
        return embeddings_from_bytes(Path(path).read_bytes())

    except ParseError as e:
        e.path = path
        raise e from None

def file_from_embeddings(path, frames):
    Path(path).write_bytes(bytes_from_embeddings(frames))

def embeddings_from_bytes(bytes):
    """
    Decode an embedding file: magic ``SLPE``, a version byte, the frame count
    and the frame dimension (32-bit unsigned little-endian), then the frames
    as 32-bit little-endian floats in row-major order.
    """
    if len(bytes) < 4 or bytes[:4] != EMBEDDING_MAGIC:
        raise ParseError("bad magic bytes, expected 'SLPE'", 0)
    if len(bytes) < 5:
        raise ParseError("unexpected EOF", 4)
    if bytes[4] != EMBEDDING_VERSION:
        raise ParseError(f"unsupported embedding file version: {bytes[4]}", 4)
    if len(bytes) < 13:
        raise ParseError("unexpected EOF in dimensions", 5)

    num_frames, dim = struct.unpack('<II', bytes[5:13])
    if num_frames == 0 or dim == 0:
        raise ParseError(f"empty embedding matrix: {num_frames}x{dim}", 5)

    expected = 13 + 4 * num_frames * dim
    if len(bytes) < expected:
        raise ParseError(f"unexpected EOF, expected {num_frames}x{dim} values", len(bytes))
    if len(bytes) > expected:
        raise ParseError("trailing bytes after embedding values", expected)

    values = np.frombuffer(bytes, dtype='<f4', count=num_frames * dim, offset=13)
    return values.reshape(num_frames, dim).astype(np.float32)

def bytes_from_embeddings(frames):
    frames = np.asarray(frames)

    if frames.ndim != 2 or 0 in frames.shape:
        raise ParseError(f"embedding matrix must be non-empty and 2D, not {frames.shape}")

    num_frames, dim = frames.shape
    return b''.join([
            EMBEDDING_MAGIC,
            struct.pack('<BII', EMBEDDING_VERSION, num_frames, dim),
            frames.astype('<f4').tobytes(order='C'),
    ])


class Repr:

    def __repr__(self):
        return f"<{self.__class__.__name__} {self.__repr_attrs__()}".strip() + ">"

    def __repr_attrs__(self):
        if not self.repr_attrs:
            raise NotImplementedError

        return ' '.join(
                f'{k}={self.__repr_attr__(k)}'
                for k in self.repr_attrs
                if hasattr(self, k)
        )

    def __repr_attr__(self, attr):
        return getattr(self, attr)
