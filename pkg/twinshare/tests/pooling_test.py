# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.

from absl.testing import absltest
from absl.testing import parameterized
import numpy as np

from twinshare import genmodel
from twinshare import glm
from twinshare import pooling
from twinshare import tabular
from twinshare.tests import compare


def tiny_schema():
  return tabular.Schema.from_proto(compare.tiny_schema_proto())


def fit(coefficients, std_errors, converged=True):
  return glm.RegressionFit(np.asarray(coefficients, dtype=float),
                           np.asarray(std_errors, dtype=float), converged, 5)


def generator():
  return genmodel.GenerativeParams(
      tiny_schema(), np.array([1.0]),
      (np.array([[0.5, 0.5]]), np.array([[0.4, 0.3, 0.3]])),
      np.array([-0.7, 0.4, -0.3, 0.3]))


def release(party, num_sets, n, seed=0):
  sets = tuple(
      genmodel.sample(generator(), n, seed=[seed, k], party_label=party)
      for k in range(num_sets))
  return pooling.SyntheticRelease(party, sets, set_seeds=tuple(
      range(num_sets)))


class RubinTest(parameterized.TestCase):

  def test_two_fits(self):
    pooled = pooling.rubin_combine([fit([1.0], [1.0]), fit([3.0], [1.0])])
    np.testing.assert_allclose(pooled.point_estimates, [2.0])
    np.testing.assert_allclose(pooled.within_variance, [1.0])
    np.testing.assert_allclose(pooled.between_variance, [2.0])
    np.testing.assert_allclose(pooled.total_variance, [4.0])
    np.testing.assert_allclose(pooled.std_errors, [2.0])

  def test_identical_fits_reproduce_the_fit(self):
    one = fit([0.1, -0.3, 7.0], [0.2, 0.05, 1.5])
    pooled = pooling.rubin_combine([one] * 5)
    np.testing.assert_array_equal(pooled.point_estimates, one.coefficients)
    np.testing.assert_array_equal(pooled.between_variance, 0.0)
    np.testing.assert_allclose(pooled.std_errors, one.std_errors, rtol=1e-15)

  def test_order_invariant(self):
    rng = np.random.default_rng(0)
    fits = [fit(rng.normal(size=3), rng.uniform(0.1, 1, 3)) for _ in range(7)]
    a = pooling.rubin_combine(fits)
    b = pooling.rubin_combine(fits[::-1])
    np.testing.assert_array_equal(a.point_estimates, b.point_estimates)
    np.testing.assert_array_equal(a.total_variance, b.total_variance)

  def test_total_variance_dominates_within(self):
    rng = np.random.default_rng(1)
    for _ in range(1000):
      k = rng.integers(2, 8)
      fits = [
          fit(rng.normal(size=2), rng.uniform(0.01, 2, 2)) for _ in range(k)
      ]
      pooled = pooling.rubin_combine(fits)
      self.assertTrue((pooled.total_variance >= pooled.within_variance).all())

  @parameterized.named_parameters(
      ('single', [([1.0], [1.0])]),
      ('mixed_dims', [([1.0], [1.0]), ([1.0, 2.0], [1.0, 1.0])]),
  )
  def test_rejects(self, specs):
    with self.assertRaises(pooling.PoolingError):
      pooling.rubin_combine([fit(c, s) for c, s in specs])

  def test_rejects_non_converged(self):
    with self.assertRaises(pooling.PoolingError):
      pooling.rubin_combine(
          [fit([1.0], [1.0]), fit([1.0], [np.inf], converged=False)])


class ReleaseTest(absltest.TestCase):

  def test_rejects_real_rows(self):
    real = tabular.Dataset(tiny_schema(), [[0, 0]], [1], party_label='a')
    with self.assertRaisesRegex(pooling.PoolingError, 'non-synthetic'):
      pooling.SyntheticRelease('a', (real,))

  def test_rejects_ragged_sets(self):
    sets = (genmodel.sample(generator(), 5, seed=0),
            genmodel.sample(generator(), 6, seed=1))
    with self.assertRaises(pooling.PoolingError):
      pooling.SyntheticRelease('a', sets)

  def test_to_proto(self):
    record = release('b', 3, 10).to_proto(genmodel.TARGET_RULE)
    self.assertEqual(record.party, 'b')
    self.assertEqual(record.num_sets, 3)
    self.assertEqual(record.num_examples, 10)
    self.assertEqual(list(record.set_seeds), [0, 1, 2])


class AssembleTest(compare.TwinAssertions, parameterized.TestCase):

  def setUp(self):
    super().setUp()
    drawn = genmodel.sample(generator(), 30, seed=9)
    self.local = tabular.Dataset(drawn.schema, drawn.features, drawn.targets,
                                 party_label='a')

  def test_local_plus_kth_sets(self):
    releases = [release('b', 3, 10, seed=1), release('c', 3, 20, seed=2)]
    combined = pooling.assemble_combined_sets(self.local, releases, 2)
    self.assertLen(combined, 2)
    for k, ds in enumerate(combined):
      self.assertLen(ds, 60)
      self.assertEqual(ds.party_label, 'a')
      np.testing.assert_array_equal(ds.features[:30], self.local.features)
      np.testing.assert_array_equal(ds.features[30:40],
                                    releases[0].datasets[k].features)

  def test_skips_own_release(self):
    combined = pooling.assemble_combined_sets(
        self.local, [release('a', 2, 30), release('b', 2, 10)], 2)
    self.assertLen(combined[0], 40)

  def test_without_local(self):
    combined = pooling.assemble_combined_sets(
        self.local, [release('b', 2, 10)], 2, include_local=False)
    self.assertLen(combined[1], 10)
    self.assertTrue(combined[1].synthetic)

  def test_only_releases_accepted(self):
    with self.assertRaises(pooling.PoolingError):
      pooling.assemble_combined_sets(self.local, [self.local], 1)

  def test_too_few_sets(self):
    with self.assertRaisesRegex(pooling.PoolingError, '2 sets, 3 requested'):
      pooling.assemble_combined_sets(self.local, [release('b', 2, 10)], 3)

  def test_nothing_to_pool(self):
    with self.assertRaises(pooling.PoolingError):
      pooling.assemble_combined_sets(self.local, [], 2, include_local=False)


class FitCombinedTest(absltest.TestCase):

  def test_pools_converged_fits(self):
    local = genmodel.sample(generator(), 400, seed=3, party_label='a')
    local = tabular.Dataset(local.schema, local.features, local.targets, 'a')
    combined = pooling.assemble_combined_sets(local,
                                              [release('b', 4, 400, seed=5)],
                                              4)
    pooled, dropped = pooling.fit_combined_sets(combined)
    self.assertEqual(dropped, 0)
    self.assertEqual(pooled.num_sets, 4)
    self.assertEqual(pooled.point_estimates.shape, (4,))
    self.assertTrue((pooled.total_variance >= pooled.within_variance).all())

  def test_drops_failed_fits(self):
    schema = tiny_schema()
    good = [genmodel.sample(generator(), 300, seed=s) for s in range(2)]
    bad = tabular.Dataset(schema, [[0, 0]], [1], synthetic=True)
    pooled, dropped = pooling.fit_combined_sets(good + [bad])
    self.assertEqual(dropped, 1)
    self.assertEqual(pooled.num_sets, 2)

  def test_too_few_survivors(self):
    bad = tabular.Dataset(tiny_schema(), [[0, 0]], [1])
    with self.assertRaises(pooling.PoolingError):
      pooling.fit_combined_sets([bad, bad])


if __name__ == '__main__':
  absltest.main()
