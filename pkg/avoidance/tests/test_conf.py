import os
from unittest import mock

from django.conf import settings
from django.test import SimpleTestCase, override_settings

from avoidance.conf import DEFAULTS, get_setting


class SettingsLookupTests(SimpleTestCase):
    def test_project_settings_hold_only_overrides(self):
        for name, value in settings.NEGFEED.items():
            self.assertIn(name, DEFAULTS)
            self.assertNotEqual(value, DEFAULTS[name], name)

    @override_settings(NEGFEED={'K_AVOID': 7, 'SEED': 3})
    def test_environment_then_settings_then_defaults(self):
        with mock.patch.dict(os.environ):
            os.environ.pop('NEGFEED_SEED', None)
            self.assertEqual(get_setting('K_AVOID'), 7)
            self.assertEqual(get_setting('SEED'), 3)
            self.assertEqual(get_setting('EM_MAX_ITER'), DEFAULTS['EM_MAX_ITER'])
            os.environ['NEGFEED_SEED'] = '11'
            self.assertEqual(get_setting('SEED'), 11)

    def test_unknown_setting(self):
        with self.assertRaises(KeyError):
            get_setting('COLOUR')
