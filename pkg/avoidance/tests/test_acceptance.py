"""
Whole-suite trend checks over the default suite file.

These take minutes each; run them with ``manage.py test --tag acceptance``
and leave them out of quick runs with ``--exclude-tag acceptance``.
"""
import tempfile

from django.test import SimpleTestCase, tag

from avoidance.bench import load_suites, memory_report, run_suite, run_timing_study, timing_report, timing_structure
from avoidance.results_storage_service import ResultsStorageService


def final_rates(summary, cycle):
    rows = summary[summary['cycle'] == cycle]
    return dict(zip(rows['variant'], rows['success_rate']))


@tag('acceptance')
class TrendTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls._tmp = tempfile.TemporaryDirectory()
        cls.storage = ResultsStorageService(cls._tmp.name)
        cls.suites = load_suites()

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()
        super().tearDownClass()

    def run_named(self, name):
        result = run_suite(self.suites[name], self.storage)
        self.assertTrue(result.ok, result.failures)
        return result.summary

    def test_simple_task_improves_with_feedback(self):
        summary = self.run_named('simple_methods')
        start, end = final_rates(summary, 0), final_rates(summary, 5)
        self.assertGreaterEqual(end['poe'], start['poe'] + 0.4)
        self.assertGreaterEqual(end['poe'], end['neg_weight'])

    def test_slalom_reaches_half_success_in_three_cycles(self):
        summary = self.run_named('slalom_methods')
        self.assertGreaterEqual(final_rates(summary, 3)['poe'], 0.4)

    def test_3d_task_improves_with_feedback(self):
        summary = self.run_named('pickplace3d_methods')
        self.assertGreaterEqual(final_rates(summary, 5)['poe'], final_rates(summary, 0)['poe'] + 0.4)

    def test_unselected_feedback_does_worse(self):
        rates = final_rates(self.run_named('simple_selectors'), 5)
        self.assertLess(rates['none'], rates['mask50'])

    def test_cycle_cost_structure(self):
        suite = self.suites['efficiency']
        report = timing_report(run_timing_study(suite))
        self.assertEqual(timing_structure(report), {'poe_flat': True, 'neg_weight_increasing': True})

    def test_memory_structure(self):
        suite = self.suites['memory']
        report = memory_report(suite.variants[0], suite.build_task())
        self.assertTrue(report.poe_size_independent_of_demos)
        self.assertGreater(report.doubled_dataset_bytes, report.dataset_bytes)
