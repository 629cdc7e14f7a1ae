# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# params.py
"""
FedLesion - Parameter Vector Module

Flat, immutable vectors of model weights with a tensor layout. These are the
objects exchanged between centers and the server; every aggregation rule is a
convex combination of them. Checkpoints are written in a small self-describing
binary format with a YAML sidecar.
"""

import logging, struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import yaml

from .common import (
    LayoutMismatchError, InvalidWeightsError, InvalidParameterSetError,
    CheckpointFormatError, array_digest,
)
from .formatting import Layout, Shape

logger = logging.getLogger(__package__)

WEIGHT_SUM_TOLERANCE = 1e-9

CHECKPOINT_MAGIC = b'FLCK'
CHECKPOINT_VERSION = 1


def _layout_size(layout: Layout) -> int:
    return int(sum(int(np.prod(shape)) for shape in layout))


@dataclass(frozen=True, eq=False)
class ParameterSet:
    """
    Flat vector of float64 model weights plus the shapes of the tensors it holds.

    Parameters:
        values (np.ndarray): 1-D float64 values; stored read-only.
        layout (Tuple[Tuple[int, ...], ...]): tensor shapes in order; their sizes add up to len(values).
    """
    values: np.ndarray
    layout: Layout = field(default=())

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        layout = tuple(tuple(int(d) for d in shape) for shape in self.layout)
        if not layout:
            layout = ((values.size,),) if values.size else ()
        for shape in layout:
            if len(shape) == 0 or any(d <= 0 for d in shape):
                raise InvalidParameterSetError(f"Invalid tensor shape in layout: {shape}")
        if _layout_size(layout) != values.size:
            raise InvalidParameterSetError(
                f"Layout describes {_layout_size(layout)} values but {values.size} were given."
            )
        if not np.all(np.isfinite(values)):
            raise InvalidParameterSetError("Parameter values must be finite (no NaN or Inf).")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'layout', layout)

    def __len__(self) -> int:
        return int(self.values.size)

    def __repr__(self) -> str:
        return f"ParameterSet(n={len(self)}, layout={self.layout}, digest={self.digest()[:12]})"

    @classmethod
    def from_tensors(cls, tensors: Sequence[np.ndarray]) -> 'ParameterSet':
        arrays = [np.asarray(t, dtype=np.float64) for t in tensors]
        if not arrays:
            return cls(np.zeros(0), ())
        return cls(np.concatenate([a.reshape(-1) for a in arrays]), tuple(a.shape for a in arrays))

    def tensors(self) -> List[np.ndarray]:
        # Read-only views shaped per layout
        out: List[np.ndarray] = []
        offset = 0
        for shape in self.layout:
            size = int(np.prod(shape))
            out.append(self.values[offset:offset + size].reshape(shape))
            offset += size
        return out

    def compatible(self, other: 'ParameterSet') -> bool:
        return self.layout == other.layout

    def equals(self, other: 'ParameterSet') -> bool:
        # Bit-exact comparison (distinguishes -0.0 from 0.0)
        return self.compatible(other) and self.values.tobytes() == other.values.tobytes()

    def zeros_like(self) -> 'ParameterSet':
        return ParameterSet(np.zeros_like(self.values), self.layout)

    def digest(self) -> str:
        return array_digest(self.values)


def _check_compatible(a: ParameterSet, b: ParameterSet):
    if not a.compatible(b):
        raise LayoutMismatchError(f"Incompatible parameter layouts: {a.layout} vs {b.layout}")


def weighted_sum(sets: Sequence[ParameterSet], weights: Sequence[float]) -> ParameterSet:
    """
    Element-wise convex combination sum_i weights[i] * sets[i].

    Args:
        sets (Sequence[ParameterSet]): compatible parameter sets.
        weights (Sequence[float]): one weight per set, each in [0, 1], summing to 1 within 1e-9.

    Returns:
        ParameterSet: the combination, with the shared layout.

    Raises:
        LayoutMismatchError: if the layouts differ.
        InvalidWeightsError: if the weights are not a convex combination.
    """
    if len(sets) == 0 or len(sets) != len(weights):
        raise InvalidWeightsError(f"Expected one weight per set, got {len(weights)} weights for {len(sets)} sets.")
    for other in sets[1:]:
        _check_compatible(sets[0], other)
    w = np.asarray(weights, dtype=np.float64)
    if not np.all(np.isfinite(w)) or np.any(w < 0.0) or np.any(w > 1.0):
        raise InvalidWeightsError(f"Every weight must lie in [0, 1]: {list(w)}")
    if abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise InvalidWeightsError(f"Weights must sum to 1 within {WEIGHT_SUM_TOLERANCE}, got {float(w.sum())!r}")

    # one-hot returns the selected set untouched
    hot = np.flatnonzero(w == 1.0)
    if hot.size == 1 and np.count_nonzero(w) == 1:
        return sets[int(hot[0])]

    acc = w[0] * sets[0].values
    for weight, other in zip(w[1:], sets[1:]):
        acc = acc + weight * other.values
    return ParameterSet(acc, sets[0].layout)


def l2_sq_distance(a: ParameterSet, b: ParameterSet) -> float:
    _check_compatible(a, b)
    diff = a.values - b.values
    return float(np.dot(diff, diff))


def scale_add(a: ParameterSet, alpha: float, b: ParameterSet) -> ParameterSet:
    # a + alpha * b
    _check_compatible(a, b)
    if alpha == 0.0:
        return a
    return ParameterSet(a.values + alpha * b.values, a.layout)


@dataclass(frozen=True)
class CheckpointMetadata:
    round_index: int
    rule: str
    seed: int
    extra: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: Union[str, Path], params: ParameterSet, metadata: CheckpointMetadata) -> Path:
    """
    Write a checkpoint and its sidecar.

    Binary layout (little-endian): magic 'FLCK', uint32 version, uint32 tensor count,
    per tensor uint32 ndim then uint32 dims, uint64 value count, float64 values.
    The sidecar '<path>.meta.yaml' carries round_index, rule, seed, layout and the sha256 of the values.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = bytearray(CHECKPOINT_MAGIC)
    header += struct.pack('<II', CHECKPOINT_VERSION, len(params.layout))
    for shape in params.layout:
        header += struct.pack('<I', len(shape))
        header += struct.pack(f'<{len(shape)}I', *shape)
    header += struct.pack('<Q', len(params))
    with open(path, 'wb') as f:
        f.write(bytes(header))
        f.write(params.values.astype('<f8').tobytes())

    sidecar = {
        'round_index': int(metadata.round_index),
        'rule': metadata.rule,
        'seed': int(metadata.seed),
        'layout': [list(shape) for shape in params.layout],
        'sha256': params.digest(),
    }
    sidecar.update(metadata.extra)
    with open(_sidecar_path(path), 'w') as f:
        yaml.safe_dump(sidecar, f, sort_keys=True)
    logger.debug(f"Checkpoint written to {path} ({len(params)} values).")
    return path


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + '.meta.yaml')


def load_checkpoint(path: Union[str, Path]) -> ParameterSet:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"Not a checkpoint file: {path}")
    try:
        offset = 4
        version, n_tensors = struct.unpack_from('<II', data, offset)
        offset += 8
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"Unsupported checkpoint version {version} in {path}")
        layout: List[Shape] = []
        for _ in range(n_tensors):
            (ndim,) = struct.unpack_from('<I', data, offset)
            offset += 4
            layout.append(tuple(struct.unpack_from(f'<{ndim}I', data, offset)))
            offset += 4 * ndim
        (count,) = struct.unpack_from('<Q', data, offset)
        offset += 8
    except struct.error as e:
        raise CheckpointFormatError(f"Truncated checkpoint header in {path}: {e}")
    if len(data) - offset != 8 * count:
        raise CheckpointFormatError(f"Checkpoint {path} holds {len(data) - offset} value bytes, expected {8 * count}.")
    values = np.frombuffer(data, dtype='<f8', count=count, offset=offset).astype(np.float64)
    params = ParameterSet(values, tuple(layout))

    meta = read_checkpoint_metadata(path)
    if meta is not None and meta.get('sha256') not in (None, params.digest()):
        raise CheckpointFormatError(f"Checkpoint {path} does not match the digest in its sidecar.")
    return params


def read_checkpoint_metadata(path: Union[str, Path]) -> Optional[Dict[str, Any]]:
    sidecar = _sidecar_path(Path(path))
    if not sidecar.exists():
        return None
    with open(sidecar, 'r') as f:
        return yaml.safe_load(f)
