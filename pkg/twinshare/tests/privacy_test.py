# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.

import math

from absl.testing import absltest
from absl.testing import parameterized
import numpy as np

from twinshare import privacy


class RdpTest(parameterized.TestCase):

  def test_full_batch_gaussian(self):
    # alpha / (2 sigma^2) minimized with log(1/delta)/(alpha-1) at alpha=6.
    state = privacy.AccountantState(1.0, 1.0, steps=1)
    self.assertAlmostEqual(state.epsilon(1e-5), 3.0 + math.log(1e5) / 5,
                           places=10)
    self.assertAlmostEqual(state.epsilon(1e-5), 5.3026, places=4)

  @parameterized.parameters((2,), (5,), (32,))
  def test_q_one_matches_closed_form(self, alpha):
    self.assertAlmostEqual(
        privacy.rdp_subsampled_gaussian(1.0, 2.0, alpha), alpha / 8.0)

  def test_subsampling_amplifies(self):
    full = privacy.rdp_subsampled_gaussian(1.0, 1.5, 8)
    sub = privacy.rdp_subsampled_gaussian(0.01, 1.5, 8)
    self.assertGreater(sub, 0.0)
    self.assertLess(sub, full)

  def test_q_near_one_approaches_closed_form(self):
    self.assertAlmostEqual(
        privacy.rdp_subsampled_gaussian(1.0 - 1e-12, 1.0, 4), 2.0, places=6)

  def test_subsampled_reference_value(self):
    # Binomial sum evaluated in 50-digit arithmetic.
    np.testing.assert_allclose(
        privacy.rdp_subsampled_gaussian(0.01, 1.0, 8), 0.000893643907606041,
        rtol=1e-9)

  def test_q_one_curve_matches_closed_form(self):
    state = privacy.AccountantState(1.0, 2.0, steps=3)
    alphas = np.asarray(state.alpha_grid, dtype=np.float64)
    np.testing.assert_allclose(state.rdp_curve(), 3 * alphas / 8.0,
                               rtol=1e-9)
    expected = np.min(3 * alphas / 8.0 + math.log(1e5) / (alphas - 1))
    np.testing.assert_allclose(state.epsilon(1e-5), expected, rtol=1e-9)

  def test_q_zero(self):
    self.assertEqual(privacy.rdp_subsampled_gaussian(0.0, 1.0, 4), 0.0)

  @parameterized.parameters((1,), (2.5,))
  def test_bad_order(self, alpha):
    with self.assertRaises(privacy.Error):
      privacy.rdp_subsampled_gaussian(0.1, 1.0, alpha)

  def test_monotone_in_steps_and_sigma(self):
    eps = [
        privacy.AccountantState(0.05, 1.0, steps=t).epsilon(1e-5)
        for t in (10, 100, 1000)
    ]
    self.assertEqual(eps, sorted(eps))
    eps = [
        privacy.AccountantState(0.05, s, steps=100).epsilon(1e-5)
        for s in (0.8, 1.2, 3.0)
    ]
    self.assertEqual(eps, sorted(eps, reverse=True))

  def test_monotone_in_rate_and_delta(self):
    eps = [
        privacy.AccountantState(q, 1.0, steps=100).epsilon(1e-5)
        for q in (0.001, 0.01, 0.1, 1.0)
    ]
    self.assertEqual(eps, sorted(eps))
    self.assertLess(eps[0], eps[-1])
    state = privacy.AccountantState(0.05, 1.0, steps=100)
    eps = [state.epsilon(d) for d in (1e-3, 1e-5, 1e-7)]
    self.assertEqual(eps, sorted(eps))
    self.assertLess(eps[0], eps[-1])

  def test_largest_order_sets_epsilon_floor(self):
    # With negligible RDP the conversion term at the largest order wins, so
    # no amount of noise brings epsilon below log(1/delta) / 63.
    state = privacy.AccountantState(0.01, 1e6, steps=1000)
    self.assertEqual(max(state.alpha_grid), 64)
    self.assertAlmostEqual(state.epsilon(1e-5), math.log(1e5) / 63, places=8)


class AccountantTest(parameterized.TestCase):

  def test_zero_steps_spend_nothing(self):
    self.assertEqual(privacy.AccountantState(0.1, 1.0).epsilon(1e-5), 0.0)

  def test_non_private_is_infinite(self):
    state = privacy.AccountantState(0.1, 0.0, steps=3)
    self.assertEqual(state.epsilon(1e-5), math.inf)

  @parameterized.parameters((0.0,), (1.0,))
  def test_delta_bounds(self, delta):
    with self.assertRaises(privacy.Error):
      privacy.AccountantState(0.1, 1.0, steps=1).epsilon(delta)

  def test_empty_grid(self):
    with self.assertRaises(privacy.Error):
      privacy.total_epsilon(
          privacy.AccountantState(0.1, 1.0, steps=1, alpha_grid=()), 1e-5)

  def test_budget_validation(self):
    with self.assertRaises(privacy.Error):
      privacy.PrivacyBudget(-1.0, 1e-5)


class CalibrationTest(parameterized.TestCase):

  @parameterized.parameters((0.5, 0.01, 500), (1.0, 0.05, 2000),
                            (4.0, 0.1, 100))
  def test_meets_target_tightly(self, epsilon, q, steps):
    target = privacy.PrivacyBudget(epsilon, 1e-5)
    sigma = privacy.calibrate_sigma(target, q, steps)
    spent = privacy.AccountantState(q, sigma, steps).epsilon(1e-5)
    self.assertLessEqual(spent, epsilon)
    self.assertGreater(spent, 0.99 * epsilon)

  def test_smaller_sigma_overspends(self):
    target = privacy.PrivacyBudget(1.0, 1e-5)
    sigma = privacy.calibrate_sigma(target, 0.02, 1000)
    spent = privacy.AccountantState(0.02, sigma * 0.99, 1000).epsilon(1e-5)
    self.assertGreater(spent, 1.0)

  def test_full_batch_single_step(self):
    # epsilon(sigma=1) = 5.30259 at q=1, T=1, delta=1e-5.
    target = privacy.PrivacyBudget(5.3026, 1e-5)
    sigma = privacy.calibrate_sigma(target, 1.0, 1)
    self.assertAlmostEqual(sigma, 1.0, delta=1e-3)
    self.assertLessEqual(
        privacy.AccountantState(1.0, sigma, 1).epsilon(1e-5), 5.3026)

  def test_generous_target_returns_bracket_floor(self):
    target = privacy.PrivacyBudget(1e6, 1e-5)
    self.assertEqual(privacy.calibrate_sigma(target, 0.01, 10),
                     privacy.SIGMA_BRACKET[0])

  def test_unreachable(self):
    target = privacy.PrivacyBudget(1e-9, 1e-5)
    with self.assertRaises(privacy.CalibrationError):
      privacy.calibrate_sigma(target, 1.0, 10**6)


class ClipAndNoiseTest(absltest.TestCase):

  def test_clips_each_row(self):
    grads = np.array([[3.0, 4.0], [0.3, 0.4]])
    np.testing.assert_allclose(
        privacy.clip_and_noise(grads, 1.0, 0.0, seed=0),
        [(0.6 + 0.3) / 2, (0.8 + 0.4) / 2])

  def test_infinite_clip_and_zero_noise_is_mean(self):
    grads = np.array([[30.0, -4.0], [1.0, 2.0], [0.0, 0.0]])
    np.testing.assert_allclose(
        privacy.clip_and_noise(grads, math.inf, 0.0, seed=0),
        grads.mean(axis=0))

  def test_denominator(self):
    grads = np.ones((2, 3))
    np.testing.assert_allclose(
        privacy.clip_and_noise(grads, math.inf, 0.0, seed=0, denominator=4.0),
        np.full(3, 0.5))

  def test_noise_scale(self):
    grads = np.zeros((1, 20000))
    noisy = privacy.clip_and_noise(grads, 2.0, 1.5, seed=3)
    self.assertAlmostEqual(np.std(noisy), 3.0, delta=0.05)

  def test_seeded(self):
    grads = np.ones((4, 5))
    np.testing.assert_array_equal(
        privacy.clip_and_noise(grads, 1.0, 1.0, seed=7),
        privacy.clip_and_noise(grads, 1.0, 1.0, seed=7))

  def test_ragged_input(self):
    with self.assertRaises(privacy.Error):
      privacy.clip_and_noise(np.ones(3), 1.0, 1.0, seed=0)


if __name__ == '__main__':
  absltest.main()
