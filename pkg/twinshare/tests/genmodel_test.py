# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.

import math

from absl.testing import absltest
from absl.testing import parameterized
import numpy as np

from twinshare import genmodel
from twinshare import tabular
from twinshare.tests import compare


def tiny_schema():
  return tabular.Schema.from_proto(compare.tiny_schema_proto())


def uniform_params(intercept=0.0):
  schema = tiny_schema()
  w = np.zeros(schema.one_hot_dim)
  w[0] = intercept
  return genmodel.GenerativeParams(
      schema, np.array([1.0]),
      (np.full((1, 2), 0.5), np.full((1, 3), 1.0 / 3)), w)


def random_params(seed, num_components=2):
  rng = np.random.default_rng(seed)
  schema = tiny_schema()
  return genmodel.GenerativeParams(
      schema, rng.dirichlet(np.ones(num_components)),
      tuple(rng.dirichlet(np.ones(c), size=num_components)
            for c in schema.cardinalities),
      rng.normal(size=schema.one_hot_dim))


class LayoutTest(absltest.TestCase):

  def test_size(self):
    # 1 mixture logit, 2 * (1 + 2) table logits, 4 regression weights.
    self.assertEqual(genmodel.ParamLayout(tiny_schema(), 2).size, 11)

  def test_split_shapes(self):
    layout = genmodel.ParamLayout(tiny_schema(), 3)
    mixture, tables, w = layout.split(np.arange(layout.size, dtype=float))
    self.assertEqual(mixture.shape, (2,))
    self.assertEqual([t.shape for t in tables], [(3, 1), (3, 2)])
    self.assertEqual(w.shape, (4,))


class ParamsTest(compare.TwinAssertions, parameterized.TestCase):

  def test_rejects_off_simplex_weights(self):
    schema = tiny_schema()
    with self.assertRaises(genmodel.ParamsError):
      genmodel.GenerativeParams(schema, np.array([0.6, 0.6]),
                                (np.full((2, 2), 0.5), np.full((2, 3), 1 / 3)),
                                np.zeros(4))

  def test_rejects_wrong_table_shape(self):
    with self.assertRaisesRegex(genmodel.ParamsError, "'size'"):
      genmodel.GenerativeParams(tiny_schema(), np.array([1.0]),
                                (np.full((1, 2), 0.5), np.full((1, 2), 0.5)),
                                np.zeros(4))

  def test_unconstrain_then_constrain(self):
    params = random_params(0, num_components=3)
    back = genmodel.constrain(genmodel.unconstrain(params))
    np.testing.assert_allclose(back.mixture_weights, params.mixture_weights)
    for a, b in zip(back.component_tables, params.component_tables):
      np.testing.assert_allclose(a, b)
    np.testing.assert_array_equal(back.regression_weights,
                                  params.regression_weights)

  def test_pinned_logit_is_zero_at_uniform(self):
    flat = genmodel.unconstrain(uniform_params()).flatten()
    np.testing.assert_allclose(flat[:-4], 0.0, atol=1e-12)

  def test_non_finite_unconstrained(self):
    params = uniform_params()
    params = genmodel.GenerativeParams(
        params.schema, params.mixture_weights,
        (np.array([[1.0, 0.0]]), params.component_tables[1]),
        params.regression_weights)
    with self.assertRaises(genmodel.ParamsError):
      genmodel.unconstrain(params)

  def test_proto(self):
    params = random_params(4)
    back = genmodel.GenerativeParams.from_proto(params.to_proto(),
                                                params.schema)
    self.assertProtoEqual(params.to_proto(), back.to_proto())

  def test_feature_marginals(self):
    schema = tiny_schema()
    params = genmodel.GenerativeParams(
        schema, np.array([0.25, 0.75]),
        (np.array([[1.0, 0.0], [0.0, 1.0]]), np.full((2, 3), 1 / 3)),
        np.zeros(4))
    np.testing.assert_allclose(params.feature_marginals()[0], [0.25, 0.75])


class DensityTest(parameterized.TestCase):

  @parameterized.parameters((0,), (1,))
  def test_uniform_density(self, y):
    # log(1/2) + log(1/3) + log Poisson(y; rate 1).
    expected = -math.log(6.0) - 1.0
    self.assertAlmostEqual(
        genmodel.log_density(uniform_params(), [1, 2], y), expected)

  def test_intercept_enters_poisson_term(self):
    value = genmodel.log_density(uniform_params(intercept=math.log(2.0)),
                                 [0, 0], 1)
    self.assertAlmostEqual(value, -math.log(6.0) + math.log(2.0) - 2.0)

  def test_flat_density_matches_constrained(self):
    params = random_params(1, num_components=3)
    x_idx = np.array([[0, 0], [1, 2], [0, 1], [1, 0]])
    y = np.array([1.0, 0.0, 0.0, 1.0])
    expected = genmodel.log_density_rows(params, x_idx, y)
    flat = genmodel.unconstrain(params).flatten()
    actual = genmodel.log_joint_flat(flat, params.layout, x_idx,
                                     tabular.encode_rows(params.schema, x_idx),
                                     y)
    np.testing.assert_allclose(np.asarray(actual), expected, rtol=1e-10)

  def test_normalized_over_all_cells(self):
    params = random_params(3, num_components=2)
    # The Poisson head is summed over y = 0..199, far past any rate used.
    grid = np.array([(a, b, y) for a in range(2) for b in range(3)
                     for y in range(200)])
    log_p = genmodel.log_density_rows(params, grid[:, :2], grid[:, 2])
    self.assertAlmostEqual(np.exp(log_p).sum(), 1.0, delta=1e-6)

  def test_matches_direct_mixture(self):
    params = random_params(7, num_components=2)
    x, y = [1, 2], 1
    rate = math.exp(tabular.encode_rows(params.schema, [x])[0] @
                    params.regression_weights)
    mixture = sum(
        params.mixture_weights[r] * params.component_tables[0][r, x[0]] *
        params.component_tables[1][r, x[1]] for r in range(2))
    self.assertAlmostEqual(
        genmodel.log_density(params, x, y),
        math.log(mixture * rate * math.exp(-rate)), places=12)

  def test_component_labels_are_exchangeable(self):
    params = random_params(8, num_components=3)
    perm = [2, 0, 1]
    permuted = genmodel.GenerativeParams(
        params.schema, params.mixture_weights[perm],
        tuple(t[perm] for t in params.component_tables),
        params.regression_weights)
    x_idx = np.array([[0, 0], [1, 1], [1, 2]])
    y = np.array([0, 1, 1])
    np.testing.assert_allclose(
        genmodel.log_density_rows(permuted, x_idx, y),
        genmodel.log_density_rows(params, x_idx, y), rtol=0, atol=1e-12)

  def test_saturated_logit(self):
    layout = genmodel.ParamLayout(tiny_schema(), 2)
    z = np.zeros(layout.size)
    z[0] = 30.0
    self.assertGreater(
        genmodel.constrain_flat(layout, z).mixture_weights[0], 1 - 1e-9)

  def test_out_of_range_row(self):
    with self.assertRaises(genmodel.ParamsError):
      genmodel.log_density(uniform_params(), [2, 0], 0)


class SampleTest(compare.TwinAssertions, parameterized.TestCase):

  def test_deterministic(self):
    params = random_params(2)
    self.assertDatasetEqual(
        genmodel.sample(params, 200, seed=9, party_label='p'),
        genmodel.sample(params, 200, seed=9, party_label='p'))

  def test_rows_are_synthetic(self):
    ds = genmodel.sample(random_params(2), 50, seed=1, party_label='p')
    self.assertLen(ds, 50)
    self.assertTrue(ds.synthetic)
    self.assertEqual(ds.party_label, 'p')

  @parameterized.parameters((10.0, 1), (-30.0, 0))
  def test_extreme_rates(self, intercept, expected):
    ds = genmodel.sample(uniform_params(intercept), 100, seed=3)
    np.testing.assert_array_equal(ds.targets, expected)

  def test_empirical_marginal(self):
    params = random_params(5)
    ds = genmodel.sample(params, 20000, seed=6)
    np.testing.assert_allclose(
        tabular.one_way_marginal(ds, 'size'), params.feature_marginals()[1],
        atol=0.02)

  def test_degenerate_params(self):
    schema = tiny_schema()
    params = genmodel.GenerativeParams(
        schema, np.array([1.0, 0.0]),
        (np.array([[0.0, 1.0], [0.5, 0.5]]),
         np.array([[0.0, 0.0, 1.0], [0.2, 0.3, 0.5]])),
        np.array([-40.0, 0.0, 0.0, 0.0]))
    ds = genmodel.sample(params, 30, seed=2)
    np.testing.assert_array_equal(ds.features, [[1, 2]] * 30)
    np.testing.assert_array_equal(ds.targets, 0)

  def test_zero_rows(self):
    self.assertLen(genmodel.sample(uniform_params(), 0, seed=0), 0)


if __name__ == '__main__':
  absltest.main()
