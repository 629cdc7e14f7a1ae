# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# __init__.py

from .__version__ import __SDK_VERSION__ as __version__

from .signals import initialize_telemetry as initialize_telemetry
from .signals import record_histogram as record_histogram
from .signals import increment_counter as increment_counter
from .signals import send_event as send_event
from .signals import get_trace as get_trace
from .signals import get_telemetry_logger_handler as get_telemetry_logger_handler
from .signals import shutdown_telemetry as shutdown_telemetry
from .signals import flush_telemetry as flush_telemetry
from .tracing import RunSpan
from .config import Configuration
from .attributes import RunAttributes
from .formatting import AttrDict as AttrDict

from .common import FedLesionError as FedLesionError
from .params import ParameterSet, weighted_sum, l2_sq_distance, scale_add, save_checkpoint, load_checkpoint
from .synthdata import CenterProfile, CenterDataset, PhantomStudy, generate_phantom, stratified_split, default_federation
from .segmodel import ModelConfig, init_params, forward, loss_and_grad, predict_mask
from .trainer import TrainConfig, train_local
from .aggregation import AggregationRule, compute_kappa, aggregate
from .evaluation import SegmentationMetrics, connected_components, dsc, avd, ald, lf1, categorize, evaluate_patient
from .ranking import RelativeErrors, relative_errors, pre, rank_models
from .orchestrator import FederationConfig, ExperimentReport, run_federated, run_centralized, run_suite
