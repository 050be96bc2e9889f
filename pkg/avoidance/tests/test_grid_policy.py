import itertools
import os
import tempfile

import numpy as np
from django.test import SimpleTestCase

from avoidance.demonstrations import DemoSet, Demonstration, Label, load_demos, save_demos
from avoidance.exceptions import DeadEnd, InvalidConfig, InvalidDemonstration, SpecMismatch
from avoidance.gmm import fit_weighted, rasterize
from avoidance.grid import GridDistribution, GridSpec
from avoidance.mask import Mask
from avoidance.policy import (EPSILON_FACTOR, AvoidanceSet, combine_positive, moe_apply_negative, neg_weight_refit,
                              poe_apply_negative, poe_apply_sequence, sample_trajectory, uniform)

from .helpers import line_demo, random_grid, small_spec


def make_mask(spec: GridSpec, bits) -> Mask:
    bits = np.asarray(bits, dtype=np.uint8).reshape(spec.shape)
    return Mask(spec=spec, bits=bits, threshold=0.5, counts=np.zeros(spec.shape, dtype=np.int64), n_demos=1)


def expected_factor(avoid, mu):
    u = 1.0 / avoid.size
    return np.maximum(u - mu * (u / avoid.max()) * avoid, EPSILON_FACTOR * u)


class GridSpecTests(SimpleTestCase):
    def test_rejects_bad_lattices(self):
        with self.assertRaises(InvalidConfig):
            GridSpec(bounds=((0, 1), (0, 1)), cells=(1, 4))
        with self.assertRaises(InvalidConfig):
            GridSpec(bounds=((1, 0),), cells=(4,))
        with self.assertRaises(InvalidConfig):
            GridSpec(bounds=((0, 1),), cells=(4, 4))

    def test_index_of_clips_to_lattice(self):
        spec = GridSpec(bounds=((0, 1), (0, 2)), cells=(4, 4))
        idx = spec.index_of(np.array([[0.0, 0.0], [1.0, 2.0], [0.3, 1.1], [-0.5, 5.0]]))
        np.testing.assert_array_equal(idx, [[0, 0], [3, 3], [1, 2], [0, 3]])

    def test_distribution_survives_serialization(self):
        spec = small_spec(4, (3, 5))
        grid = random_grid(spec, np.random.default_rng(0))
        restored = GridDistribution.from_bytes(grid.to_bytes())
        self.assertEqual(restored.spec, spec)
        np.testing.assert_array_equal(restored.values, grid.values)
        self.assertEqual(restored.digest(), grid.digest())

    def test_cannot_normalize_empty_grid(self):
        spec = small_spec()
        with self.assertRaises(InvalidConfig):
            GridDistribution.from_values(spec, np.zeros(spec.shape))
        with self.assertRaises(InvalidConfig):
            GridDistribution(spec, -np.ones(spec.shape))


class DemonstrationTests(SimpleTestCase):
    def test_rejects_malformed_demonstrations(self):
        phases = np.linspace(0, 1, 5)
        with self.assertRaises(InvalidDemonstration):
            Demonstration(samples=np.column_stack([phases[::-1], phases, phases]))
        with self.assertRaises(InvalidDemonstration):
            Demonstration(samples=np.column_stack([phases * 0.5, phases, phases]))
        with self.assertRaises(InvalidDemonstration):
            Demonstration(samples=np.column_stack([phases, phases, phases]), weight=-1.0)
        with self.assertRaises(InvalidDemonstration):
            Demonstration(samples=np.column_stack([phases, phases]))

    def test_negative_may_cover_part_of_the_phase(self):
        phases = np.linspace(0.3, 0.6, 5)
        demo = Demonstration(samples=np.column_stack([phases, phases, phases]), label=Label.NEGATIVE, weight=-1.0)
        self.assertEqual(demo.dim, 2)
        self.assertEqual(demo.label, Label.NEGATIVE)

    def test_mixed_dimensions_rejected(self):
        phases = np.linspace(0, 1, 5)
        flat = Demonstration(samples=np.column_stack([phases, phases, phases]))
        deep = Demonstration(samples=np.column_stack([phases, phases, phases, phases]))
        with self.assertRaises(InvalidDemonstration):
            DemoSet((flat, deep))

    def test_jsonl_and_binary_files(self):
        demos = DemoSet((line_demo(0.2, 0.8), line_demo(0.5, 0.5, label=Label.NEGATIVE, weight=-0.5)))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'demos.jsonl')
            self.assertEqual(save_demos(demos, path), 2)
            loaded = load_demos(path)
        self.assertEqual(len(loaded), 2)
        self.assertEqual(loaded[1].label, Label.NEGATIVE)
        self.assertEqual(loaded[1].weight, -0.5)
        np.testing.assert_array_equal(loaded[0].samples, demos[0].samples)

        restored = DemoSet.from_bytes(demos.to_bytes())
        self.assertEqual(len(restored.negatives()), 1)
        np.testing.assert_array_equal(restored[1].samples, demos[1].samples)


class PositivePolicyTests(SimpleTestCase):
    def test_uniform(self):
        policy = uniform(small_spec(2, (5,)))
        np.testing.assert_allclose(policy.values, 0.1)
        self.assertAlmostEqual(policy.entropy(), np.log(10), places=12)

    def test_combine_single_policy_is_identity(self):
        spec = small_spec(5, (6, 5))
        policy = random_grid(spec, np.random.default_rng(1))
        np.testing.assert_allclose(combine_positive([policy]).values, policy.values, atol=1e-12)
        np.testing.assert_allclose(combine_positive([policy] * 4).values, policy.values, atol=1e-12)

    def test_combine_disjoint_policies_share_mass(self):
        spec = small_spec(2, (3,))
        first = np.zeros(spec.shape)
        first[0, 0] = 1.0
        second = np.zeros(spec.shape)
        second[1, 2] = 1.0
        combined = combine_positive([GridDistribution.from_values(spec, first),
                                     GridDistribution.from_values(spec, second)])
        self.assertAlmostEqual(combined.values[0, 0], 0.5, delta=1e-9)
        self.assertAlmostEqual(combined.values[1, 2], 0.5, delta=1e-9)

    def test_combine_rejects_mismatched_specs(self):
        with self.assertRaises(SpecMismatch):
            combine_positive([uniform(small_spec(3, (4,))), uniform(small_spec(3, (5,)))])
        with self.assertRaises(InvalidConfig):
            combine_positive([])


class PoeTests(SimpleTestCase):
    spec = small_spec(3, (4,))

    def test_uniform_avoidance_changes_nothing(self):
        policy = random_grid(self.spec, np.random.default_rng(2))
        result = poe_apply_negative(policy, uniform(self.spec))
        np.testing.assert_allclose(result.values, policy.values, atol=1e-9)

    def test_fully_protected_mask_changes_nothing(self):
        rng = np.random.default_rng(3)
        policy, avoid = random_grid(self.spec, rng), random_grid(self.spec, rng)
        result = poe_apply_negative(policy, avoid, make_mask(self.spec.spatial(), np.zeros(4)))
        np.testing.assert_allclose(result.values, policy.values, atol=1e-12)

    def test_suppresses_only_unprotected_cells(self):
        policy = random_grid(self.spec, np.random.default_rng(4))
        values = np.zeros(self.spec.shape)
        values[1, 1] = 1.0
        avoid = GridDistribution.from_values(self.spec, values)
        result = poe_apply_negative(policy, avoid, make_mask(self.spec.spatial(), [1, 1, 0, 0]))
        self.assertLess(result.values[1, 1], policy.values[1, 1])
        ratios = result.values[:, 2:] / policy.values[:, 2:]
        np.testing.assert_allclose(ratios, ratios.flat[0], rtol=1e-9)

    def test_sequence_is_order_free_and_matches_product(self):
        rng = np.random.default_rng(5)
        spec = small_spec(4, (3, 3))
        policy = random_grid(spec, rng)
        avoids = [random_grid(spec, rng) for _ in range(4)]
        mask = make_mask(spec.spatial(), rng.integers(0, 2, size=9))

        forward = poe_apply_sequence(policy, AvoidanceSet(tuple(avoids)), mask)
        backward = poe_apply_sequence(policy, AvoidanceSet(tuple(reversed(avoids))), mask)
        np.testing.assert_allclose(forward.values, backward.values, atol=1e-12)

        mu = mask.broadcast(spec)
        brute = policy.values * np.prod([expected_factor(a.values, mu) for a in avoids], axis=0)
        np.testing.assert_allclose(forward.values, brute / brute.sum(), atol=1e-12)

    def test_empty_sequence_is_identity(self):
        policy = random_grid(self.spec, np.random.default_rng(6))
        self.assertIs(poe_apply_sequence(policy, AvoidanceSet()), policy)

    def test_suppression_grows_with_avoidance(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            policy, avoid = random_grid(self.spec, rng), random_grid(self.spec, rng)
            ratio = (poe_apply_negative(policy, avoid).values / policy.values).ravel()
            order = np.argsort(avoid.values.ravel(), kind='stable')
            self.assertTrue(np.all(np.diff(ratio[order]) <= 1e-12 * ratio.max()))

    def test_spec_mismatch(self):
        with self.assertRaises(SpecMismatch):
            poe_apply_negative(uniform(self.spec), uniform(small_spec(3, (5,))))
        with self.assertRaises(SpecMismatch):
            poe_apply_negative(uniform(self.spec), uniform(self.spec), make_mask(small_spec(2, (5,)).spatial(),
                                                                                 np.ones(5)))


class MoeTests(SimpleTestCase):
    spec = small_spec(2, (4,))

    def test_hand_computed_mixture(self):
        policy = GridDistribution.from_values(self.spec, np.arange(1, 9, dtype=float))
        avoid = GridDistribution.from_values(self.spec, [[0, 0, 0.5, 0], [0, 0, 0.25, 0.25]])
        result = moe_apply_negative(policy, avoid, None, mix=0.5)
        complement = np.array([[1 / 6, 1 / 6, 0.0, 1 / 6], [1 / 6, 1 / 6, 1 / 12, 1 / 12]])
        np.testing.assert_allclose(result.values, 0.5 * policy.values + 0.5 * complement, atol=1e-9)

    def test_tiny_mix_keeps_policy(self):
        rng = np.random.default_rng(8)
        policy, avoid = random_grid(self.spec, rng), random_grid(self.spec, rng)
        result = moe_apply_negative(policy, avoid, None, mix=1e-9)
        np.testing.assert_allclose(result.values, policy.values, atol=1e-6)

    def test_uniform_complement_keeps_uniform_policy(self):
        policy = uniform(self.spec)
        avoid = random_grid(self.spec, np.random.default_rng(9))
        protect_all = make_mask(self.spec.spatial(), np.zeros(4))
        for mix in (0.1, 0.5, 0.9):
            np.testing.assert_allclose(moe_apply_negative(policy, avoid, protect_all, mix).values,
                                       policy.values, atol=1e-12)
            np.testing.assert_allclose(moe_apply_negative(policy, uniform(self.spec), None, mix).values,
                                       policy.values, atol=1e-9)

    def test_mix_must_be_open_unit_interval(self):
        for mix in (0.0, 1.0, -0.2):
            with self.assertRaises(InvalidConfig):
                moe_apply_negative(uniform(self.spec), uniform(self.spec), None, mix)


class UpdateNormalizationTests(SimpleTestCase):
    def test_updates_stay_distributions(self):
        rng = np.random.default_rng(10)
        for case in range(1000):
            cells = tuple(int(c) for c in rng.integers(2, 5, size=int(rng.integers(1, 3))))
            spec = small_spec(int(rng.integers(2, 5)), cells)
            policy = random_grid(spec, rng, zeros=0.3)
            avoid = random_grid(spec, rng, zeros=0.3)
            mask = make_mask(spec.spatial(), rng.integers(0, 2, size=int(np.prod(cells))))
            for result in (poe_apply_negative(policy, avoid, mask),
                           moe_apply_negative(policy, avoid, mask, float(rng.uniform(0.01, 0.99)))):
                self.assertAlmostEqual(result.values.sum(), 1.0, delta=1e-9, msg=f"case {case}")
                self.assertTrue(np.all(result.values >= 0))

    def test_builders_stay_distributions(self):
        rng = np.random.default_rng(11)
        for case in range(1000):
            cells = tuple(int(c) for c in rng.integers(2, 5, size=int(rng.integers(1, 3))))
            spec = small_spec(int(rng.integers(2, 5)), cells)
            n = int(rng.integers(6, 12))
            phases = np.linspace(0.0, 1.0, n)
            positive = Demonstration(samples=np.column_stack([phases, rng.random((n, len(cells)))]))
            failure = Demonstration(samples=np.column_stack([phases, rng.random((n, len(cells)))]),
                                    label=Label.NEGATIVE, weight=-1.0)
            k = int(rng.integers(1, 3))
            mixture = fit_weighted(positive.samples, np.ones(n), k, seed=case, tol=None, max_iter=5)
            refit = neg_weight_refit(DemoSet((positive, failure)), k, float(rng.uniform(-1.0, 0.0)), case, spec,
                                     tol=None, max_iter=5)
            results = (uniform(spec), rasterize(mixture, spec), refit,
                       combine_positive([random_grid(spec, rng, zeros=0.3) for _ in range(int(rng.integers(1, 4)))]))
            for result in results:
                self.assertAlmostEqual(result.values.sum(), 1.0, delta=1e-9, msg=f"case {case}")
                self.assertTrue(np.all(result.values >= 0))


class SamplingTests(SimpleTestCase):
    def cells_of(self, traj, spec):
        return [tuple(row) for row in spec.spatial().index_of(traj.positions)]

    def test_argmax_matches_exhaustive_search(self):
        spec = small_spec(5, (4,))
        rng = np.random.default_rng(12)
        for _ in range(100):
            policy = random_grid(spec, rng)
            logs = np.log(policy.values)
            best = max((sum(logs[t, c] for t, c in enumerate(path)), path)
                       for path in itertools.product(range(4), repeat=5)
                       if all(abs(a - b) <= 1 for a, b in zip(path, path[1:])))
            traj = sample_trajectory(policy, 'argmax', continuity=1)
            found = [cell[0] for cell in self.cells_of(traj, spec)]
            self.assertAlmostEqual(sum(logs[t, c] for t, c in enumerate(found)), best[0], delta=1e-9)

    def test_argmax_ties_resolve_to_lowest_index(self):
        spec = small_spec(4, (3, 3))
        traj = sample_trajectory(uniform(spec), 'argmax', continuity=1)
        self.assertEqual(self.cells_of(traj, spec), [(0, 0)] * 4)

    def test_stochastic_paths_respect_continuity(self):
        spec = small_spec(10, (6, 6))
        rng = np.random.default_rng(13)
        policy = random_grid(spec, rng)
        for seed in range(50):
            traj = sample_trajectory(policy, 'stochastic', continuity=1, seed=seed)
            cells = np.array(self.cells_of(traj, spec))
            self.assertEqual(len(cells), 10)
            self.assertLessEqual(np.abs(np.diff(cells, axis=0)).max(), 1)
            np.testing.assert_allclose(traj.phases, spec.centers(0))

    def test_same_seed_same_rollout(self):
        spec = small_spec(6, (5, 5))
        policy = random_grid(spec, np.random.default_rng(14))
        first = sample_trajectory(policy, seed=3)
        second = sample_trajectory(policy, seed=3)
        np.testing.assert_array_equal(first.points, second.points)

    def test_unreachable_mass_is_a_dead_end(self):
        spec = small_spec(2, (6,))
        values = np.zeros(spec.shape)
        values[0, 0] = 1.0
        values[1, 5] = 1.0
        policy = GridDistribution.from_values(spec, values)
        with self.assertLogs('avoidance.policy', level='WARNING'):
            with self.assertRaises(DeadEnd):
                sample_trajectory(policy, 'stochastic', continuity=1, restarts=3)
        with self.assertRaises(DeadEnd):
            sample_trajectory(policy, 'argmax', continuity=1)

    def test_rejects_bad_sampling_options(self):
        policy = uniform(small_spec())
        with self.assertRaises(InvalidConfig):
            sample_trajectory(policy, 'greedy')
        with self.assertRaises(InvalidConfig):
            sample_trajectory(policy, continuity=0)
