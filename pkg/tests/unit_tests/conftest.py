# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

import sys
sys.path.append("./")

import pytest

from fedlesion.synthdata import CenterProfile, derive_seed

# 16x16 phantoms at 8 x 8 x 6 mm: 0.384 mL voxels, so N, S and M are realizable but L is not
TINY_IMAGE = (16, 16)
TINY_SPACING = (8.0, 8.0, 6.0)
TINY_MIX = (0.2, 0.5, 0.3, 0.0)


def tiny_profile(center_id: int, is_large: bool = True, n_train: int = 4, n_test: int = 2,
                 master_seed: int = 7, **overrides) -> CenterProfile:
    values = dict(
        center_id=center_id,
        is_large=is_large,
        n_train=n_train if is_large else 0,
        n_test=n_test,
        category_mix=TINY_MIX,
        dwi_lesion_intensity=(1.8 + 0.1 * center_id, 0.15),
        voxel_spacing=TINY_SPACING,
        seed=derive_seed(master_seed, center_id),
        image_size=TINY_IMAGE,
    )
    values.update(overrides)
    return CenterProfile(**values)


@pytest.fixture
def tiny_centers():
    return [
        tiny_profile(1, n_train=4, n_test=2),
        tiny_profile(2, n_train=6, n_test=2),
        tiny_profile(3, is_large=False, n_test=3),
    ]
