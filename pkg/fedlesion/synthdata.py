# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# synthdata.py
"""
FedLesion - Synthetic Federation Module

Builds the emulated multi-institution federation: 14 centers (10 large centers
that train, 4 limited centers that only test) whose sizes, voxel spacings,
lesion category mixes and lesion intensities differ. Each patient is a
single-slice, two-channel phantom (DWI, ADC) with a ground-truth lesion mask.

Seeding scheme:
    center seed  = SeedSequence([master_seed, center_id]).generate_state(1)[0]
    study stream = default_rng(SeedSequence([center seed, study_index]))
so any center or study can be regenerated alone, in any order or in parallel.

Intensity scale: DWI is expressed relative to normal brain (brain ~ 1.0); ADC
is in 10^-6 mm^2/s with normal brain around 800 and lesions around 620. The
DWI normalization is this generator's own scale, not a clinical one.
"""

import logging, math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .common import InfeasibleLesionError, EmptySplitError, ConfigurationError, DimensionMismatchError, array_digest
from .evaluation import categorize, category_bounds_ml, volume_from_count
from .formatting import CATEGORIES, Grid, Spacing

logger = logging.getLogger(__package__)

DEFAULT_IMAGE_SIZE: Tuple[int, int] = (32, 32)
DESK_INPLANE_FACTOR = 8.0
DEFAULT_ADC_LESION: Tuple[float, float] = (620.0, 40.0)
DEFAULT_DWI_BRAIN: Tuple[float, float] = (1.0, 0.05)
DEFAULT_ADC_BRAIN: Tuple[float, float] = (800.0, 30.0)
MAX_LESION_BRAIN_FRACTION = 0.45
MIN_LESION_VOXELS = 3
MAX_LESION_ATTEMPTS = 8
BISECTION_STEPS = 60

# Brain ellipse semi-axes as fractions of (rows, cols)
_BRAIN_ROW_FRACTION = (0.38, 0.44)
_BRAIN_COL_FRACTION = (0.32, 0.40)


@dataclass(frozen=True)
class CenterProfile:
    """
    One emulated institution.

    Parameters:
        center_id (int): small integer identifier (1..14 in the default federation).
        is_large (bool): True when the center trains; limited centers are test-only.
        n_train (int): training patients (0 for limited centers).
        n_test (int): test patients.
        category_mix (Tuple[float, float, float, float]): probabilities over (N, S, M, L).
        dwi_lesion_intensity (Tuple[float, float]): lesion (mean, stddev) relative to brain.
        adc_lesion_intensity (Tuple[float, float]): lesion (mean, stddev) in 10^-6 mm^2/s.
        voxel_spacing (Tuple[float, float, float]): (x mm, y mm, slice mm).
        image_size (Tuple[int, int]): (rows, cols).
        seed (int): unsigned seed of the center's random stream.
        dwi_brain_intensity (Tuple[float, float]): normal brain (mean, texture stddev).
        adc_brain_intensity (Tuple[float, float]): normal brain (mean, texture stddev).
        noise_std (float): per-voxel acquisition noise added to DWI (ADC noise scales with it).
    """
    center_id: int
    is_large: bool
    n_train: int
    n_test: int
    category_mix: Tuple[float, float, float, float]
    dwi_lesion_intensity: Tuple[float, float]
    voxel_spacing: Spacing
    seed: int
    adc_lesion_intensity: Tuple[float, float] = DEFAULT_ADC_LESION
    image_size: Tuple[int, int] = DEFAULT_IMAGE_SIZE
    dwi_brain_intensity: Tuple[float, float] = DEFAULT_DWI_BRAIN
    adc_brain_intensity: Tuple[float, float] = DEFAULT_ADC_BRAIN
    noise_std: float = 0.04

    def __post_init__(self):
        object.__setattr__(self, 'category_mix', tuple(float(p) for p in self.category_mix))
        object.__setattr__(self, 'voxel_spacing', tuple(float(s) for s in self.voxel_spacing))
        object.__setattr__(self, 'image_size', tuple(int(s) for s in self.image_size))
        if not self.is_large and self.n_train != 0:
            raise ConfigurationError(f"Limited center {self.center_id} cannot hold training patients.")
        if self.n_train < 0 or self.n_test < 0:
            raise ConfigurationError(f"Center {self.center_id} has a negative patient count.")
        if len(self.category_mix) != len(CATEGORIES) or any(p < 0 for p in self.category_mix):
            raise ConfigurationError(f"Center {self.center_id} category_mix must hold 4 non-negative values.")
        if abs(sum(self.category_mix) - 1.0) > 1e-9:
            raise ConfigurationError(f"Center {self.center_id} category_mix must sum to 1, got {sum(self.category_mix)!r}")
        if len(self.voxel_spacing) != 3 or any(s <= 0 for s in self.voxel_spacing):
            raise ConfigurationError(f"Center {self.center_id} spacings must be strictly positive.")
        if len(self.image_size) != 2 or any(s < 8 for s in self.image_size):
            raise ConfigurationError(f"Center {self.center_id} image_size must be at least 8x8.")
        if not 0 <= int(self.seed) < 2**32:
            raise ConfigurationError(f"Center {self.center_id} seed must be an unsigned 32-bit integer.")

    @property
    def voxel_volume_ml(self) -> float:
        return volume_from_count(1, self.voxel_spacing)


@dataclass(frozen=True, eq=False)
class PhantomStudy:
    dwi: np.ndarray
    adc: np.ndarray
    gt_mask: np.ndarray
    spacing: Spacing
    patient_id: str
    center_id: int
    category: str

    def __post_init__(self):
        if not (self.dwi.shape == self.adc.shape == self.gt_mask.shape) or self.dwi.ndim != 2:
            raise DimensionMismatchError(f"Study {self.patient_id}: DWI, ADC and mask must be 2-D grids of one shape.")
        for grid in (self.dwi, self.adc, self.gt_mask):
            grid.setflags(write=False)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.dwi.shape

    def digest(self) -> str:
        return array_digest(self.dwi, self.adc, self.gt_mask, np.asarray(self.spacing))


@dataclass(frozen=True, eq=False)
class CenterDataset:
    profile: CenterProfile
    train: List[PhantomStudy] = field(default_factory=list)
    test: List[PhantomStudy] = field(default_factory=list)

    def __post_init__(self):
        if len(self.train) != self.profile.n_train or len(self.test) != self.profile.n_test:
            raise ConfigurationError(
                f"Center {self.profile.center_id}: expected {self.profile.n_train}/{self.profile.n_test} "
                f"train/test studies, got {len(self.train)}/{len(self.test)}"
            )

    @property
    def center_id(self) -> int:
        return self.profile.center_id

    def all_studies(self) -> List[PhantomStudy]:
        return list(self.train) + list(self.test)


def derive_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence([int(e) for e in entropy]).generate_state(1, dtype=np.uint32)[0])


def study_rng(center_seed: int, study_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(center_seed), int(study_index)]))


def _brain_mask(image_size: Tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    rows, cols = image_size
    a = rows * rng.uniform(*_BRAIN_ROW_FRACTION)
    b = cols * rng.uniform(*_BRAIN_COL_FRACTION)
    cy = (rows - 1) / 2.0 + rng.uniform(-1.0, 1.0)
    cx = (cols - 1) / 2.0 + rng.uniform(-1.0, 1.0)
    yy, xx = np.mgrid[0:rows, 0:cols]
    return ((yy - cy) / a) ** 2 + ((xx - cx) / b) ** 2 <= 1.0


def minimum_brain_voxels(image_size: Tuple[int, int]) -> int:
    # Conservative lower bound on the brain ellipse area over the random draws
    rows, cols = image_size
    return int(math.floor(0.95 * math.pi * rows * _BRAIN_ROW_FRACTION[0] * cols * _BRAIN_COL_FRACTION[0]))


def voxel_count_range(category: str, spacing: Spacing, max_voxels: int) -> Tuple[int, int]:
    """
    Inclusive range of lesion voxel counts whose volume falls in `category`, capped at max_voxels.
    Returns (lo, hi) with lo > hi when the category cannot be realized.
    """
    if category == 'N':
        return 0, 0
    lower, upper = category_bounds_ml(category)
    vv = volume_from_count(1, spacing)
    lo = max(1, int(math.floor(lower / vv)) - 1)
    while categorize(volume_from_count(lo, spacing)) != category and volume_from_count(lo, spacing) <= lower:
        lo += 1
    hi = max_voxels if math.isinf(upper) else min(max_voxels, int(math.floor(upper / vv)) + 1)
    while hi >= lo and categorize(volume_from_count(hi, spacing)) != category:
        hi -= 1
    if category == 'S':
        lo = max(lo, min(MIN_LESION_VOXELS, hi))
    return lo, hi


def feasible_categories(spacing: Spacing, image_size: Tuple[int, int]) -> Tuple[str, ...]:
    cap = int(MAX_LESION_BRAIN_FRACTION * minimum_brain_voxels(image_size))
    out = ['N']
    for category in CATEGORIES[1:]:
        lo, hi = voxel_count_range(category, spacing, cap)
        if lo <= hi:
            out.append(category)
    return tuple(out)


def _texture(shape: Tuple[int, int], rng: np.random.Generator, sigma: float = 2.0) -> np.ndarray:
    field_ = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=sigma, mode='reflect')
    std = field_.std()
    return field_ / std if std > 0 else field_


def _lesion_field(brain: np.ndarray, target: int, rng: np.random.Generator) -> np.ndarray:
    # Sum of Gaussian bumps centred inside the brain; -inf outside so lesions stay in the brain
    rows, cols = brain.shape
    interior = ndimage.binary_erosion(brain, iterations=2)
    candidates = np.argwhere(interior if interior.any() else brain)
    n_blobs = int(rng.integers(1, 4))
    yy, xx = np.mgrid[0:rows, 0:cols]
    field_ = np.zeros(brain.shape)
    for _ in range(n_blobs):
        cy, cx = candidates[int(rng.integers(len(candidates)))]
        sigma = max(0.8, math.sqrt(target / (n_blobs * math.pi)) * rng.uniform(0.7, 1.1))
        amplitude = rng.uniform(0.6, 1.0)
        field_ += amplitude * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))
    field_[~brain] = -np.inf
    return field_


def _threshold_to_count(field_: np.ndarray, target: int) -> np.ndarray:
    # Bisection on the threshold level; the count above it is monotone non-increasing
    lo, hi = 0.0, float(np.max(field_))
    best = field_ > lo
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        mask = field_ > mid
        count = int(mask.sum())
        if abs(count - target) < abs(int(best.sum()) - target):
            best = mask
        if count == target:
            break
        if count > target:
            lo = mid
        else:
            hi = mid
    return best


def generate_phantom(profile: CenterProfile, rng_stream: np.random.Generator,
                     category: Optional[str] = None, patient_id: Optional[str] = None) -> PhantomStudy:
    """
    Draw one two-channel phantom study for a center.

    Args:
        profile (CenterProfile): the center the study belongs to.
        rng_stream (np.random.Generator): seeded stream; the study is a pure function of it.
        category (str, optional): N, S, M or L; drawn from profile.category_mix when None.
        patient_id (str, optional): identifier; defaults to '<center>-x'.

    Returns:
        PhantomStudy

    Raises:
        InfeasibleLesionError: if the category's volume range cannot be realized for this
            image size and spacing.
    """
    rng = rng_stream
    if category is None:
        category = CATEGORIES[int(rng.choice(len(CATEGORIES), p=np.asarray(profile.category_mix)))]
    if category not in CATEGORIES:
        raise ConfigurationError(f"Unknown lesion category '{category}'")
    shape = profile.image_size
    spacing = profile.voxel_spacing

    brain = _brain_mask(shape, rng)
    cap = int(MAX_LESION_BRAIN_FRACTION * int(brain.sum()))
    lesion = np.zeros(shape, dtype=bool)
    if category != 'N':
        lo, hi = voxel_count_range(category, spacing, cap)
        if lo > hi:
            raise InfeasibleLesionError(
                f"Category {category} needs more than {cap} lesion voxels at spacing {spacing} "
                f"on a {shape[0]}x{shape[1]} image (center {profile.center_id})."
            )
        for attempt in range(MAX_LESION_ATTEMPTS):
            target = int(rng.integers(lo, hi + 1))
            lesion = _threshold_to_count(_lesion_field(brain, target, rng), target)
            count = int(lesion.sum())
            if lo <= count <= hi:
                break
            logger.debug(f"Center {profile.center_id}: lesion attempt {attempt} hit {count} voxels, wanted [{lo}, {hi}]")
        else:
            raise InfeasibleLesionError(
                f"Could not realize a category {category} lesion in {MAX_LESION_ATTEMPTS} attempts "
                f"(center {profile.center_id}, spacing {spacing})."
            )

    dwi_mean, dwi_tex = profile.dwi_brain_intensity
    adc_mean, adc_tex = profile.adc_brain_intensity
    dwi = dwi_mean + dwi_tex * _texture(shape, rng) + profile.noise_std * rng.standard_normal(shape)
    adc = adc_mean + adc_tex * _texture(shape, rng) + 10.0 * profile.noise_std * adc_tex * rng.standard_normal(shape)

    n_lesion = int(lesion.sum())
    if n_lesion:
        les_mean, les_std = profile.dwi_lesion_intensity
        dwi[lesion] = np.maximum(rng.normal(les_mean, les_std, n_lesion), dwi_mean + 0.1)
        les_mean, les_std = profile.adc_lesion_intensity
        adc[lesion] = np.clip(rng.normal(les_mean, les_std, n_lesion), 100.0, adc_mean - 50.0)
    dwi[~brain] = 0.0
    adc[~brain] = 0.0

    return PhantomStudy(
        dwi=dwi, adc=adc, gt_mask=lesion, spacing=spacing,
        patient_id=patient_id or f"c{profile.center_id:02d}-x",
        center_id=profile.center_id, category=category,
    )


def _allocate(counts: Dict[str, int], train_fraction: float) -> Dict[str, int]:
    # Largest-remainder allocation: each category gets floor or ceil of its share
    total = sum(counts.values())
    target = int(round(train_fraction * total))
    quotas = {c: train_fraction * n for c, n in counts.items()}
    alloc = {c: int(math.floor(q)) for c, q in quotas.items()}
    order = sorted(counts, key=lambda c: (-(quotas[c] - alloc[c]), CATEGORIES.index(c)))
    remaining = target - sum(alloc.values())
    for c in order:
        if remaining <= 0:
            break
        if alloc[c] < counts[c]:
            alloc[c] += 1
            remaining -= 1
    return alloc


def stratified_split(studies: Sequence[PhantomStudy], train_fraction: float,
                     seed: int) -> Tuple[List[PhantomStudy], List[PhantomStudy]]:
    """
    Random train/test split preserving per-category proportions within one study per category.
    Deterministic given the seed; both outputs keep the input order.

    Raises:
        EmptySplitError: if there are no studies.
        ConfigurationError: if train_fraction is outside (0, 1).
    """
    if len(studies) == 0:
        raise EmptySplitError("Cannot split an empty list of studies.")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), len(studies)]))
    groups: Dict[str, List[int]] = {c: [] for c in CATEGORIES}
    for index, study in enumerate(studies):
        groups[study.category].append(index)
    counts = {c: len(ix) for c, ix in groups.items() if ix}
    alloc = _allocate(counts, train_fraction)
    train_index = set()
    for category, n_train in alloc.items():
        shuffled = rng.permutation(groups[category])
        train_index.update(int(i) for i in shuffled[:n_train])
    train = [s for i, s in enumerate(studies) if i in train_index]
    test = [s for i, s in enumerate(studies) if i not in train_index]
    return train, test


def generate_center(profile: CenterProfile) -> CenterDataset:
    """
    Draw all n_train + n_test studies of a center, then split them 80/20-style with the
    stratified split so the train list holds exactly n_train studies.
    """
    n_total = profile.n_train + profile.n_test
    studies = []
    for index in range(n_total):
        rng = study_rng(profile.seed, index)
        studies.append(generate_phantom(
            profile, rng, patient_id=f"c{profile.center_id:02d}-p{index:04d}",
        ))
    if profile.n_train == 0:
        train, test = [], studies
    elif profile.n_test == 0:
        train, test = studies, []
    else:
        train, test = stratified_split(studies, profile.n_train / n_total, seed=profile.seed)
    logger.debug(f"Center {profile.center_id}: generated {len(train)} train / {len(test)} test studies.")
    return CenterDataset(profile=profile, train=train, test=test)


def generate_federation(profiles: Sequence[CenterProfile], workers: int = 1) -> List[CenterDataset]:
    # Each center draws from its own stream, so the pool size never changes the output
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(generate_center, profiles))
    return [generate_center(p) for p in profiles]


# Table-1-shaped federation, scaled down by 10 for large centers:
# (center_id, is_large, table spacing [x, y, z] mm, n_train, n_test, mix family, DWI lesion (mean, std))
_DESK_FEDERATION = [
    (1, True, (0.93, 0.93, 6.00), 14, 4, 'small', (1.85, 0.15)),
    (2, False, (0.92, 0.92, 6.13), 0, 8, 'mixed', (1.45, 0.20)),
    (3, False, (0.98, 0.98, 5.94), 0, 16, 'mixed', (2.30, 0.25)),
    (4, True, (0.89, 0.89, 6.00), 20, 5, 'mixed', (1.90, 0.18)),
    (5, True, (1.04, 1.04, 6.00), 10, 2, 'mixed', (2.05, 0.20)),
    (6, True, (1.04, 1.04, 6.00), 64, 16, 'small', (1.80, 0.15)),
    (7, True, (0.59, 0.59, 6.00), 14, 4, 'mixed', (2.10, 0.22)),
    (8, True, (0.96, 0.96, 6.00), 7, 2, 'mixed', (1.70, 0.15)),
    (9, False, (0.90, 0.90, 6.00), 0, 8, 'mixed', (1.60, 0.20)),
    (10, True, (1.99, 1.99, 2.03), 16, 4, 'small', (1.75, 0.20)),
    (11, True, (1.51, 1.51, 4.80), 4, 1, 'medium', (1.95, 0.25)),
    (12, True, (0.43, 0.43, 2.00), 8, 2, 'mixed', (2.20, 0.20)),
    (13, True, (0.35, 0.35, 3.98), 3, 1, 'mixed', (1.65, 0.18)),
    (14, False, (0.49, 0.49, 0.80), 0, 1, 'medium', (2.10, 0.25)),
]

_MIX_FAMILIES: Dict[str, Tuple[float, float, float, float]] = {
    'mixed': (0.10, 0.45, 0.30, 0.15),
    'small': (0.10, 0.60, 0.20, 0.10),
    'medium': (0.05, 0.25, 0.55, 0.15),
}


def feasible_mix(mix: Sequence[float], spacing: Spacing, image_size: Tuple[int, int]) -> Tuple[float, ...]:
    # Zero the mass of unrealizable categories and renormalize the rest
    allowed = feasible_categories(spacing, image_size)
    kept = [p if c in allowed else 0.0 for c, p in zip(CATEGORIES, mix)]
    total = sum(kept)
    if total <= 0:
        return (1.0, 0.0, 0.0, 0.0)
    return tuple(p / total for p in kept)


def default_federation(master_seed: int = 2024, image_size: Tuple[int, int] = DEFAULT_IMAGE_SIZE) -> List[CenterProfile]:
    """
    The 14-center desk federation: 10 large centers holding 160 training patients in the
    proportions of the original cohort (the largest center holds 40%), and 4 limited,
    test-only centers with at most 16 patients. In-plane spacing is the cohort spacing
    times 8 (a 256-matrix slice viewed at 32x32); slice thickness is kept.
    """
    profiles = []
    for center_id, is_large, spacing, n_train, n_test, family, dwi in _DESK_FEDERATION:
        desk_spacing = (spacing[0] * DESK_INPLANE_FACTOR, spacing[1] * DESK_INPLANE_FACTOR, spacing[2])
        seed = derive_seed(master_seed, center_id)
        adc_mean = DEFAULT_ADC_LESION[0] + float(np.random.default_rng(seed).uniform(-15.0, 15.0))
        profiles.append(CenterProfile(
            center_id=center_id,
            is_large=is_large,
            n_train=n_train,
            n_test=n_test,
            category_mix=feasible_mix(_MIX_FAMILIES[family], desk_spacing, image_size),
            dwi_lesion_intensity=dwi,
            adc_lesion_intensity=(adc_mean, DEFAULT_ADC_LESION[1]),
            voxel_spacing=desk_spacing,
            image_size=image_size,
            seed=seed,
            noise_std=0.03 + 0.005 * (center_id % 5),
        ))
    return profiles


def with_master_seed(profiles: Sequence[CenterProfile], master_seed: int) -> List[CenterProfile]:
    return [replace(p, seed=derive_seed(master_seed, p.center_id)) for p in profiles]


def summarize_center(dataset: CenterDataset) -> Dict[str, object]:
    """
    Heterogeneity summary of one center: category proportions and lesion intensity statistics.
    """
    studies = dataset.all_studies()
    counts = Counter(s.category for s in studies)
    n = max(1, len(studies))
    dwi_values = [s.dwi[s.gt_mask] for s in studies if s.gt_mask.any()]
    adc_values = [s.adc[s.gt_mask] for s in studies if s.gt_mask.any()]
    dwi_all = np.concatenate(dwi_values) if dwi_values else np.zeros(0)
    adc_all = np.concatenate(adc_values) if adc_values else np.zeros(0)
    summary: Dict[str, object] = {
        'center_id': dataset.center_id,
        'is_large': dataset.profile.is_large,
        'n_train': len(dataset.train),
        'n_test': len(dataset.test),
    }
    for c in CATEGORIES:
        summary[f'share_{c}'] = counts.get(c, 0) / n
    summary['dwi_lesion_mean'] = float(dwi_all.mean()) if dwi_all.size else float('nan')
    summary['dwi_lesion_std'] = float(dwi_all.std()) if dwi_all.size else float('nan')
    summary['adc_lesion_mean'] = float(adc_all.mean()) if adc_all.size else float('nan')
    summary['adc_lesion_std'] = float(adc_all.std()) if adc_all.size else float('nan')
    return summary


def dataset_digest(datasets: Sequence[CenterDataset]) -> str:
    arrays: List[Grid] = []
    for ds in datasets:
        arrays.append(np.asarray([ds.center_id, len(ds.train), len(ds.test)], dtype=np.int64))
        arrays.append(np.asarray(ds.profile.voxel_spacing))
        for study in ds.all_studies():
            arrays.extend([study.dwi, study.adc, study.gt_mask])
    return array_digest(*arrays)
