# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""Smoke tests of the scenario runners on a three-party toy population."""

import os

from absl.testing import absltest
from absl.testing import parameterized
import numpy as np

from twinshare import audit
from twinshare import config as config_lib
from twinshare import scenarios
from twinshare import tabular

SMALL_SCENARIO = """
population {
  schema {
    features { name: "color" categories: "red" categories: "blue" }
    features { name: "size" categories: "S" categories: "M" categories: "L" }
    target_name: "outcome"
  }
  parties { name: "a" size: 160 }
  parties { name: "b" size: 150 }
  parties { name: "c" size: 140 }
  num_components: 2
  heterogeneity: 0.2
  regression_weights: [-0.5, 0.3, -0.2, 0.2]
}
subsample_fractions: 0.5
epsilon: 1.0
num_synthetic_sets: 2
repeats: 1
permutations: 2
mc_draws: 20
master_seed: 11
skew { feature: "color" category: "blue" keep_probs: [0.5, 1.0] }
dpvi { iterations: 10 batch_size: 20 num_components: 2 }
"""


def small_config(kind, **overrides):
  raw = config_lib.parse_scenario_config(SMALL_SCENARIO)
  raw.kind = kind
  return config_lib.resolve_scenario_config(
      config_lib.apply_overrides(raw, **overrides))


class GroupIdTest(parameterized.TestCase):

  @parameterized.parameters(
      (scenarios.GroupId('local', 'a', 0.1), 'a/local/f=0.1'),
      (scenarios.GroupId('step', 'a', 0.1, 2), 'a/step/f=0.1/step=2'),
      (scenarios.GroupId('combined', 'skewed', keep_prob=0.25),
       'skewed/combined/keep=0.25'),
      (scenarios.GroupId('pooled_real'), '*/pooled_real'),
  )
  def test_key(self, gid, key):
    self.assertEqual(gid.key, key)


class ExperimentTest(absltest.TestCase):

  def test_global_test_set_is_read_through_vault(self):
    experiment = scenarios.Experiment(small_config('baseline_sharing'))
    self.assertEqual(experiment.vault.reads_by(audit.EVALUATOR), 3)
    self.assertEqual(experiment.vault.cross_party_accesses, 0)
    parts = [
        experiment.vault.open(p, 'test', accessor=audit.EVALUATOR)
        for p in experiment.parties
    ]
    self.assertLen(experiment.global_test, sum(len(t) for t in parts))
    np.testing.assert_array_equal(
        experiment.global_test.features,
        np.concatenate([t.features for t in parts]))


class BaselineSharingTest(absltest.TestCase):

  @classmethod
  def setUpClass(cls):
    super().setUpClass()
    cls.record = scenarios.run(small_config('baseline_sharing'))

  def test_groups(self):
    keys = {g.key for g in self.record.groups}
    for party in ('a', 'b', 'c'):
      self.assertIn('%s/local/f=0.5' % party, keys)
      self.assertIn('%s/combined/f=0.5' % party, keys)
    self.assertIn('*/pooled_real/f=0.5', keys)
    self.assertLen(keys, 7)

  def test_samples_per_group(self):
    for key, samples in self.record.samples.items():
      self.assertLen(samples, 20, msg=key)
      self.assertTrue(samples.normalized)
      self.assertEqual(self.record.group(key).num_values, 20)

  def test_privacy_ledger(self):
    self.assertLen(self.record.accountants, 3)
    for summary in self.record.accountants:
      self.assertLessEqual(summary.epsilon, 1.0)
      self.assertAlmostEqual(summary.delta, 1.0 / summary.num_examples)
      self.assertEqual(summary.steps, 10)
    self.assertEqual(self.record.cross_party_accesses, 0)

  def test_tests(self):
    labels = {t.label for t in self.record.tests}
    self.assertEqual(labels, {'combined>local'})
    for test in self.record.tests:
      self.assertEqual(test.sided, 'one_greater')
      self.assertBetween(test.p, 0.0, 1.0)

  def test_record_proto(self):
    proto = self.record.to_proto()
    self.assertEqual(proto.config.kind, 'baseline_sharing')
    self.assertLen(proto.conventions, len(scenarios.CONVENTIONS))
    self.assertTrue(proto.software_version)

  def test_deterministic(self):
    again = scenarios.run(small_config('baseline_sharing'))
    self.assertEqual(self.record.payload(), again.payload())

  def test_worker_threads_do_not_change_results(self):
    threaded = scenarios.run(small_config('baseline_sharing', workers=3))
    self.assertEqual(
        {k: v.values.tobytes() for k, v in self.record.samples.items()},
        {k: v.values.tobytes() for k, v in threaded.samples.items()})

  def test_master_seed_matters(self):
    other = scenarios.run(small_config('baseline_sharing', master_seed=12))
    key = 'a/local/f=0.5'
    self.assertFalse(
        np.array_equal(self.record.samples[key].values,
                       other.samples[key].values))


class ProxyEvaluationTest(absltest.TestCase):

  def test_proxy_groups(self):
    config = small_config('baseline_sharing')
    config.proxy_evaluation = True
    record = scenarios.run(config)
    keys = {g.key for g in record.groups}
    self.assertIn('a/local@proxy/f=0.5', keys)
    self.assertIn('c/combined@proxy/f=0.5', keys)


class SequentialSharingTest(absltest.TestCase):

  def test_steps(self):
    record = scenarios.run(small_config('sequential_sharing'))
    for party in ('a', 'b', 'c'):
      for step in range(3):
        key = '%s/step/f=0.5/step=%d' % (party, step)
        # Two permutations of 20 draws each.
        self.assertLen(record.samples[key], 40, msg=key)
    labels = sorted({t.label for t in record.tests})
    self.assertEqual(labels, ['step 1', 'step 2'])
    self.assertLen(record.accountants, 3)

  def test_permutations_draw_independently(self):
    record = scenarios.run(small_config('sequential_sharing'))
    step0 = record.samples['a/step/f=0.5/step=0'].values
    # Both permutations start from the same local fit with different draws.
    self.assertFalse(np.array_equal(step0[:20], step0[20:]))


class SizeSweepTest(absltest.TestCase):

  def test_fractions(self):
    record = scenarios.run(
        small_config('size_sweep', subsample_fractions=[0.5, 1.0]))
    keys = {g.key for g in record.groups}
    for fraction in ('0.5', '1'):
      self.assertIn('b/local/f=%s' % fraction, keys)
      self.assertIn('b/combined/f=%s' % fraction, keys)
    # One training run per party and fraction.
    self.assertLen(record.accountants, 6)
    self.assertLen(record.tests, 6)


class SkewSweepTest(absltest.TestCase):

  def test_arms(self):
    record = scenarios.run(small_config('skew_sweep'))
    keys = {g.key for g in record.groups}
    for keep in ('0.5', '1'):
      self.assertIn('skewed/local/keep=%s' % keep, keys)
      self.assertIn('skewed/combined/keep=%s' % keep, keys)
    # Party a has the most training rows.
    for group in ('local', 'local_dropped', 'combined'):
      self.assertIn('a/%s/f=1' % group, keys)
    self.assertIn('*/pooled_real/f=1', keys)
    for test in record.tests:
      self.assertEqual(test.sided, 'two')
    self.assertEqual(record.cross_party_accesses, 0)


class CsvPopulationTest(absltest.TestCase):

  def test_loads_party_files(self):
    csv_dir = self.create_tempdir().full_path
    config = small_config('baseline_sharing')
    parties = scenarios.load_population(config)
    for name, ds in parties:
      tabular.write_csv(ds, os.path.join(csv_dir, name + '.csv'))
    with open(os.path.join(csv_dir, config_lib.SCHEMA_FILE), 'w') as f:
      f.write(str(config.population.schema))
    raw = config_lib.parse_scenario_config('csv_dir: "%s"' % csv_dir)
    loaded = scenarios.load_population(
        config_lib.resolve_scenario_config(raw))
    self.assertEqual([n for n, _ in loaded], ['a', 'b', 'c'])
    for (_, expected), (_, actual) in zip(parties, loaded):
      self.assertTrue(expected.equals(actual))

  def test_needs_two_parties(self):
    csv_dir = self.create_tempdir().full_path
    config = small_config('baseline_sharing')
    name, ds = scenarios.load_population(config)[0]
    tabular.write_csv(ds, os.path.join(csv_dir, name + '.csv'))
    with open(os.path.join(csv_dir, config_lib.SCHEMA_FILE), 'w') as f:
      f.write(str(config.population.schema))
    raw = config_lib.parse_scenario_config('csv_dir: "%s"' % csv_dir)
    with self.assertRaises(scenarios.ScenarioError):
      scenarios.load_population(config_lib.resolve_scenario_config(raw))


class DispatchTest(absltest.TestCase):

  def test_unknown_kind(self):
    config = small_config('baseline_sharing')
    config.kind = 'nope'
    with self.assertRaises(scenarios.ScenarioError):
      scenarios.run(config)


if __name__ == '__main__':
  absltest.main()
