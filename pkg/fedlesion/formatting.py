import logging
from typing import Dict, List, Tuple, Union, Sequence

import numpy as np

# Custom Typing
Scalar = Union[str, bool, int, float]
AttrDict = Dict[str, Union[str, bool, int, float, Sequence[Scalar]]]
EventPayload = Union[str, Dict[Union[str, int, float, bool], Union[str, int, float, bool]]]
Shape = Tuple[int, ...]
Layout = Tuple[Shape, ...]
Spacing = Tuple[float, float, float]
Grid = np.ndarray  # 2-D float64 (images) or bool (masks)

# Custom Naming
log_event_name_key = 'log.event.name'

CATEGORIES: Tuple[str, ...] = ('N', 'S', 'M', 'L')
RULE_NAMES: Tuple[str, ...] = ('fedavg', 'vanillaavg', 'beta', 'softmax', 'fedprox')
CENTRALIZED_NAME = 'centralized'
POOLS: Tuple[str, ...] = ('large', 'limited')
# pool label of scored training studies; they belong to no evaluation cohort
TRAIN_POOL = 'train'

PER_PATIENT_COLUMNS: List[str] = [
    'model', 'pool', 'patient_id', 'center_id', 'category',
    'dsc', 'avd_ml', 'ald', 'lf1', 'gt_volume_ml', 'gt_lesion_count',
    'delta_dsc', 'delta_avd', 'delta_ald', 'delta_lf1', 'pre',
]
EVALUATE_COLUMNS: List[str] = [
    'patient_id', 'center_id', 'category', 'dsc', 'avd_ml', 'ald', 'lf1',
    'gt_volume_ml', 'gt_lesion_count', 'pool',
]
SUMMARY_METRICS: List[str] = ['pre', 'dsc', 'avd_ml', 'ald', 'lf1']
ROUNDS_COLUMNS: List[str] = ['round', 'rule', 'pool', 'pre', 'dsc', 'avd_ml', 'ald', 'lf1']

LOG_LEVELS: Dict[str, int] = {
    'debug': logging.DEBUG,
    'info': logging.INFO,
    'warning': logging.WARNING,
    'warn': logging.WARNING,
    'error': logging.ERROR,
    'critical': logging.CRITICAL,
    'fatal': logging.CRITICAL,
}


def log_level(name: str) -> int:
    # Unknown names fall back to WARNING
    return LOG_LEVELS.get(str(name).lower(), logging.WARNING)
