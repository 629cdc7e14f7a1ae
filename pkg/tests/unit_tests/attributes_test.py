# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

import sys
sys.path.append("./")

import unittest, pytest, json
from unittest.mock import patch, MagicMock
from fedlesion.attributes import RunAttributes
from fedlesion.common import _FedLesionCommon
from fedlesion.config import Configuration
from fedlesion.__version__ import __SDK_VERSION__, __REPORT_SCHEMA_VERSION__


class TestRunAttributes(unittest.TestCase):

    def test_defaults(self):
        attrs = RunAttributes()
        self.assertEqual(attrs.service_name, 'fedlesion')
        self.assertEqual(attrs.service_version, __SDK_VERSION__)
        self.assertEqual(attrs.report_schema_version, __REPORT_SCHEMA_VERSION__)
        self.assertEqual(attrs.parameters, {})
        self.assertEqual(attrs._get_attributes()['report_schema_version'], __REPORT_SCHEMA_VERSION__)

    def test_for_run(self):
        attrs = RunAttributes.for_run('desk', 'softmax', '17')
        self.assertEqual((attrs.experiment_name, attrs.rule, attrs.master_seed), ('desk', 'softmax', 17))

    @patch('platform.system')
    @patch('platform.release')
    @patch('platform.python_version')
    @patch('socket.gethostname')
    def test_default_values_populated(self, mock_hostname, mock_python_version, mock_release, mock_system):
        mock_system.return_value = "Linux"
        mock_release.return_value = "6.1.0"
        mock_python_version.return_value = "3.11.4"
        mock_hostname.return_value = "node-7"

        attrs = RunAttributes()
        self.assertEqual(attrs.os_type, "Linux")
        self.assertEqual(attrs.os_version, "6.1.0")
        self.assertEqual(attrs.python_version, "3.11.4")
        self.assertEqual(attrs.hostname, "node-7")

    def test_explicit_values_kept(self):
        attrs = RunAttributes(os_type="Darwin", os_version="23.0", python_version="3.12.0", hostname="lab")
        self.assertEqual((attrs.os_type, attrs.os_version, attrs.python_version, attrs.hostname),
                         ("Darwin", "23.0", "3.12.0", "lab"))

    @patch('logging.getLogger')
    def test_readonly_field_modification_warning(self, mock_logger):
        mock_log = MagicMock()
        mock_logger.return_value = mock_log
        attrs = RunAttributes()
        attrs.report_schema_version = "9.9.9"
        self.assertEqual(attrs.report_schema_version, __REPORT_SCHEMA_VERSION__)
        mock_log.warning.assert_called_once()

    @patch('logging.getLogger')
    def test_none_value_rejected(self, mock_logger):
        mock_log = MagicMock()
        mock_logger.return_value = mock_log
        attrs = RunAttributes()
        attrs.rule = None
        self.assertEqual(attrs.rule, 'fedavg')
        mock_log.warning.assert_called_once()

    def test_service_name_regex(self):
        with pytest.raises(ValueError):
            RunAttributes(service_name="bad name!")
        with pytest.raises(ValueError):
            RunAttributes(service_version="")
        self.assertEqual(RunAttributes(service_name="fed-lesion_2.x").service_name, "fed-lesion_2.x")

    def test_set_attributes(self):
        attrs = RunAttributes().set_attributes(rule='beta', center_count=14, note='desk')
        self.assertEqual(attrs.rule, 'beta')
        self.assertEqual(attrs.parameters, {'center_count': '14', 'note': 'desk'})

    def test_get_attributes(self):
        out = RunAttributes(hostname="lab").set_attributes(run='a')._get_attributes()
        self.assertNotIn('_readonly_fields', out)
        self.assertEqual(out['hostname'], "lab")
        self.assertEqual(out['parameters'], {'run': 'a'})

    def test_from_configuration(self):
        config = Configuration({'experiment_name': 'desk', 'master_seed': 5, 'rounds': 12}).set_rule('softmax')
        attrs = RunAttributes.from_configuration(config)
        self.assertEqual((attrs.experiment_name, attrs.rule, attrs.master_seed, attrs.rounds),
                         ('desk', 'softmax', 5, 12))

    def test_otel_attributes(self):
        out = RunAttributes.for_run('desk', 'beta', 9, rounds=30).set_attributes(note='x').otel_attributes()
        self.assertEqual(out['federation.rule'], 'beta')
        self.assertEqual(out['federation.rounds'], 30)
        self.assertEqual(out['report.schema.version'], __REPORT_SCHEMA_VERSION__)
        self.assertEqual(json.loads(out['parameters']), {'note': 'x'})
        self.assertNotIn('service_name', out)
        self.assertNotIn('rule', out)


class TestResource(unittest.TestCase):

    def _common(self, attrs):
        return _FedLesionCommon(Configuration().set_console_exporter(), attrs)

    def test_otel_names(self):
        common = self._common(RunAttributes.for_run('desk', 'fedprox', 3).set_attributes(note='x'))
        resource = dict(common.resource.attributes)
        self.assertEqual(resource['service.name'], 'fedlesion')
        self.assertEqual(resource['experiment.name'], 'desk')
        self.assertEqual(resource['federation.rule'], 'fedprox')
        self.assertEqual(resource['federation.master_seed'], 3)
        self.assertEqual(json.loads(resource['parameters']), {'note': 'x'})
        self.assertNotIn('rule', resource)
        self.assertEqual(resource['run.id'], common._run_id)

    def test_run_id_is_stable(self):
        a = self._common(RunAttributes.for_run('desk', 'fedavg', 3))._run_id
        b = self._common(RunAttributes.for_run('desk', 'fedavg', 3))._run_id
        c = self._common(RunAttributes.for_run('desk', 'fedavg', 4))._run_id
        self.assertEqual(a, b)
        self.assertNotEqual(a, c)

    def test_process_attributes(self):
        common = self._common(RunAttributes())
        self.assertEqual(common._process_attributes(None), {})
        self.assertEqual(common._process_attributes({'': 1}), {})
        self.assertEqual(common._process_attributes({'n': 1, 'ids': [1, 2]}), {'n': 1, 'ids': '[1, 2]'})

    def test_auth_headers(self):
        config = Configuration().set_telemetry_endpoint('https://collector.example.com', auth_token='tok')
        common = _FedLesionCommon(config, RunAttributes())
        self.assertEqual(common._auth_headers(), {'authorization': 'Bearer tok'})
