# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# rasters.py
"""
FedLesion - Raster I/O Module

Binary raster files for phantom studies and predictions, and the YAML
manifest describing a generated federation on disk.

Raster layout (little-endian):
    4 bytes   magic 'FLRS'
    uint32    rows
    uint32    cols
    3 float64 spacing (x mm, y mm, slice mm)
    rows*cols float64 values, row-major
"""

import logging, struct
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import yaml

from .common import ConfigurationError, RasterFormatError
from .evaluation import volume_ml
from .formatting import Grid, Spacing
from .synthdata import CenterDataset, CenterProfile, PhantomStudy, DEFAULT_ADC_BRAIN, DEFAULT_DWI_BRAIN

logger = logging.getLogger(__package__)

RASTER_MAGIC = b'FLRS'
_HEADER = struct.Struct('<4sII3d')
MANIFEST_NAME = 'manifest.yaml'


def write_raster(path: Union[str, Path], grid: Grid, spacing: Spacing) -> Path:
    path = Path(path)
    data = np.asarray(grid)
    if data.ndim != 2:
        raise RasterFormatError(f"Only 2-D grids can be written, got shape {data.shape}")
    rows, cols = data.shape
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(_HEADER.pack(RASTER_MAGIC, rows, cols, *(float(s) for s in spacing)))
        f.write(np.ascontiguousarray(data, dtype='<f8').tobytes())
    return path


def read_raster(path: Union[str, Path]) -> Tuple[np.ndarray, Spacing]:
    """
    Read a raster written by write_raster.

    Returns:
        Tuple[np.ndarray, Tuple[float, float, float]]: float64 grid and its spacing.

    Raises:
        RasterFormatError: bad magic, truncated header or a value count that disagrees with the dims.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise RasterFormatError(f"Truncated raster header in {path}")
    magic, rows, cols, x, y, z = _HEADER.unpack_from(data, 0)
    if magic != RASTER_MAGIC:
        raise RasterFormatError(f"Not a raster file: {path}")
    expected = 8 * rows * cols
    if len(data) - _HEADER.size != expected:
        raise RasterFormatError(f"Raster {path} holds {len(data) - _HEADER.size} value bytes, expected {expected}.")
    grid = np.frombuffer(data, dtype='<f8', offset=_HEADER.size).astype(np.float64).reshape(rows, cols)
    return grid, (x, y, z)


def read_mask(path: Union[str, Path]) -> Tuple[np.ndarray, Spacing]:
    grid, spacing = read_raster(path)
    return grid > 0.5, spacing


def study_files(patient_id: str) -> Dict[str, str]:
    return {
        'dwi': f"{patient_id}_dwi.raw",
        'adc': f"{patient_id}_adc.raw",
        'mask': f"{patient_id}_mask.raw",
    }


def prediction_file(patient_id: str) -> str:
    return f"{patient_id}_pred.raw"


def profile_echo(profile: CenterProfile) -> Dict[str, Any]:
    return {
        'center_id': profile.center_id,
        'is_large': profile.is_large,
        'n_train': profile.n_train,
        'n_test': profile.n_test,
        'category_mix': [float(p) for p in profile.category_mix],
        'dwi_lesion_intensity': [float(v) for v in profile.dwi_lesion_intensity],
        'adc_lesion_intensity': [float(v) for v in profile.adc_lesion_intensity],
        'voxel_spacing': [float(s) for s in profile.voxel_spacing],
        'image_size': list(profile.image_size),
        'seed': int(profile.seed),
        'dwi_brain_intensity': [float(v) for v in profile.dwi_brain_intensity],
        'adc_brain_intensity': [float(v) for v in profile.adc_brain_intensity],
        'noise_std': float(profile.noise_std),
    }


def write_federation(datasets: Sequence[CenterDataset], directory: Union[str, Path],
                     extra: Dict[str, Any] = {}) -> Path:
    """
    Write every study of every center as rasters plus a manifest.yaml.

    Args:
        datasets (Sequence[CenterDataset]): generated centers.
        directory (str | Path): output directory; created if missing.
        extra (Dict[str, Any]): additional top-level manifest entries (seed, dataset digest...).

    Returns:
        Path: the manifest path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    studies: List[Dict[str, Any]] = []
    for ds in datasets:
        for split, items in (('train', ds.train), ('test', ds.test)):
            for study in items:
                files = study_files(study.patient_id)
                write_raster(directory / files['dwi'], study.dwi, study.spacing)
                write_raster(directory / files['adc'], study.adc, study.spacing)
                write_raster(directory / files['mask'], study.gt_mask, study.spacing)
                studies.append({
                    'patient_id': study.patient_id,
                    'center_id': study.center_id,
                    'split': split,
                    'category': study.category,
                    'gt_volume_ml': float(volume_ml(study.gt_mask, study.spacing)),
                    'files': files,
                })
    manifest = dict(extra)
    manifest['centers'] = [profile_echo(ds.profile) for ds in datasets]
    manifest['studies'] = studies
    path = directory / MANIFEST_NAME
    with open(path, 'w') as f:
        yaml.safe_dump(manifest, f, sort_keys=False)
    logger.info(f"Wrote {len(studies)} studies from {len(datasets)} centers to {directory}")
    return path


def read_manifest(directory: Union[str, Path]) -> Dict[str, Any]:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise RasterFormatError(f"No {MANIFEST_NAME} found in {directory}")
    with open(path, 'r') as f:
        manifest = yaml.safe_load(f) or {}
    if 'studies' not in manifest or 'centers' not in manifest:
        raise RasterFormatError(f"Manifest {path} must list 'centers' and 'studies'.")
    return manifest


def read_federation(directory: Union[str, Path]) -> List[CenterDataset]:
    """
    Rebuild the CenterDatasets written by write_federation, in manifest order.
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    profiles = [CenterProfile(
        center_id=int(c['center_id']),
        is_large=bool(c['is_large']),
        n_train=int(c['n_train']),
        n_test=int(c['n_test']),
        category_mix=tuple(c['category_mix']),
        dwi_lesion_intensity=tuple(c['dwi_lesion_intensity']),
        adc_lesion_intensity=tuple(c['adc_lesion_intensity']),
        voxel_spacing=tuple(c['voxel_spacing']),
        image_size=tuple(c['image_size']),
        seed=int(c['seed']),
        dwi_brain_intensity=tuple(c.get('dwi_brain_intensity', DEFAULT_DWI_BRAIN)),
        adc_brain_intensity=tuple(c.get('adc_brain_intensity', DEFAULT_ADC_BRAIN)),
        noise_std=float(c.get('noise_std', 0.04)),
    ) for c in manifest['centers']]
    splits: Dict[int, Dict[str, List[PhantomStudy]]] = {p.center_id: {'train': [], 'test': []} for p in profiles}
    for entry in manifest['studies']:
        files = entry['files']
        dwi, spacing = read_raster(directory / files['dwi'])
        adc, _ = read_raster(directory / files['adc'])
        mask, _ = read_mask(directory / files['mask'])
        study = PhantomStudy(
            dwi=dwi, adc=adc, gt_mask=mask, spacing=spacing,
            patient_id=str(entry['patient_id']), center_id=int(entry['center_id']),
            category=str(entry['category']),
        )
        split = splits.get(study.center_id, {}).get(entry['split'])
        if split is None:
            raise RasterFormatError(f"Study {study.patient_id} names center {study.center_id} split "
                                    f"'{entry['split']}', which the manifest does not list.")
        split.append(study)
    try:
        return [CenterDataset(profile=p, train=splits[p.center_id]['train'], test=splits[p.center_id]['test'])
                for p in profiles]
    except ConfigurationError as e:
        raise RasterFormatError(f"Manifest {directory / MANIFEST_NAME} disagrees with its studies: {e}")
