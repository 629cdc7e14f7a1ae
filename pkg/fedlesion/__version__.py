# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# __version__.py

__SDK_VERSION__ = "0.1.0"
__REPORT_SCHEMA_VERSION__ = "1.0.0"
