# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism.

RDP is evaluated at integer orders with the binomial-sum upper bound and
converted to (epsilon, delta) by eps = T * rdp(alpha) + log(1/delta)/(alpha-1),
minimized over the order grid. The noise convention throughout: Gaussian
noise with standard deviation sigma * C is added to the sum of clipped
per-example gradients.
"""

import dataclasses
import math
from typing import Tuple, Union

from absl import logging
import numpy as np
from scipy import special

DEFAULT_ALPHAS = tuple(range(2, 65))

SIGMA_BRACKET = (0.3, 1e4)


class Error(Exception):
  """Base error for privacy accounting."""


class CalibrationError(Error, ValueError):
  """No noise multiplier in the search bracket meets the target budget."""


@dataclasses.dataclass(frozen=True)
class PrivacyBudget:
  epsilon: float
  delta: float

  def __post_init__(self):
    if self.epsilon < 0:
      raise Error('epsilon must be >= 0, got %r' % self.epsilon)
    if not 0.0 <= self.delta <= 1.0:
      raise Error('delta must lie in [0, 1], got %r' % self.delta)


@dataclasses.dataclass(frozen=True)
class AccountantState:
  """Composition of `steps` Poisson-subsampled Gaussian mechanisms.

  A noise multiplier of zero marks a non-private run; its epsilon is infinite
  once any step has been taken.
  """

  subsample_rate: float
  noise_multiplier: float
  steps: int = 0
  alpha_grid: Tuple[int, ...] = DEFAULT_ALPHAS

  def __post_init__(self):
    if not 0.0 <= self.subsample_rate <= 1.0:
      raise Error('subsample_rate must lie in [0, 1]')
    if self.noise_multiplier < 0:
      raise Error('noise_multiplier must be >= 0')
    if self.steps < 0:
      raise Error('steps must be >= 0')

  def rdp_curve(self) -> np.ndarray:
    """Composed RDP at every order of the grid."""
    if self.steps == 0:
      return np.zeros(len(self.alpha_grid))
    if self.noise_multiplier == 0:
      return np.full(len(self.alpha_grid), np.inf)
    return self.steps * np.array([
        rdp_subsampled_gaussian(self.subsample_rate, self.noise_multiplier, a)
        for a in self.alpha_grid
    ])

  def epsilon(self, delta: float) -> float:
    return total_epsilon(self, delta)


def _log_add(logx: float, logy: float) -> float:
  a, b = min(logx, logy), max(logx, logy)
  if a == -np.inf:
    return b
  return math.log1p(math.exp(a - b)) + b


def rdp_subsampled_gaussian(q: float, sigma: float, alpha: int) -> float:
  """RDP of order alpha for one Poisson-subsampled Gaussian mechanism.

  Uses log A_alpha = log sum_i C(alpha, i) (1-q)^(alpha-i) q^i
  exp((i^2 - i) / (2 sigma^2)), and returns log(A_alpha) / (alpha - 1).

  Args:
    q: sampling rate in [0, 1].
    sigma: noise multiplier, > 0.
    alpha: integer order, >= 2.

  Returns:
    A finite nonnegative RDP value.
  """
  if int(alpha) != alpha or alpha < 2:
    raise Error('alpha must be an integer >= 2, got %r' % alpha)
  if not 0.0 <= q <= 1.0:
    raise Error('q must lie in [0, 1], got %r' % q)
  if sigma <= 0:
    raise Error('sigma must be > 0, got %r' % sigma)
  alpha = int(alpha)
  if q == 0:
    return 0.0
  if q == 1.0:
    return alpha / (2.0 * sigma**2)
  log_a = -np.inf
  log_q, log_1mq = math.log(q), math.log1p(-q)
  for i in range(alpha + 1):
    log_coef = (special.gammaln(alpha + 1) - special.gammaln(i + 1) -
                special.gammaln(alpha - i + 1))
    log_a = _log_add(
        log_a, log_coef + i * log_q + (alpha - i) * log_1mq +
        (i * i - i) / (2.0 * sigma**2))
  return max(float(log_a) / (alpha - 1), 0.0)


def total_epsilon(state: AccountantState, delta: float) -> float:
  """Smallest epsilon over the order grid for the given delta."""
  if not state.alpha_grid:
    raise Error('The order grid is empty')
  if not 0.0 < delta < 1.0:
    raise Error('delta must lie in (0, 1), got %r' % delta)
  if state.steps == 0:
    return 0.0
  alphas = np.asarray(state.alpha_grid, dtype=np.float64)
  eps = state.rdp_curve() + math.log(1.0 / delta) / (alphas - 1.0)
  return float(np.min(eps))


def calibrate_sigma(target: PrivacyBudget,
                    q: float,
                    steps: int,
                    tol: float = 1e-3) -> float:
  """Smallest noise multiplier (to relative `tol`) meeting `target`.

  Binary search in log space over SIGMA_BRACKET. The returned sigma satisfies
  total_epsilon(sigma) <= target.epsilon while sigma * (1 - tol) does not,
  unless the lower end of the bracket already meets the target.

  Raises:
    CalibrationError: even the largest sigma in the bracket is too small.
  """
  if target.epsilon <= 0:
    raise Error('Target epsilon must be > 0')
  if steps < 1:
    raise Error('Calibration needs at least one step')

  def eps_at(sigma):
    return total_epsilon(AccountantState(q, sigma, steps), target.delta)

  lo, hi = SIGMA_BRACKET
  if eps_at(hi) > target.epsilon:
    raise CalibrationError(
        'epsilon=%g is unreachable with sigma <= %g (q=%g, T=%d, delta=%g)' %
        (target.epsilon, hi, q, steps, target.delta))
  if eps_at(lo) <= target.epsilon:
    return lo
  while hi * (1.0 - tol) > lo:
    mid = math.sqrt(lo * hi)
    if eps_at(mid) <= target.epsilon:
      hi = mid
    else:
      lo = mid
  logging.vlog(1, 'Calibrated sigma=%.6g for eps=%g delta=%g q=%g T=%d', hi,
               target.epsilon, target.delta, q, steps)
  return hi


def clip_and_noise(per_example_grads,
                   clip_norm: float,
                   sigma: float,
                   seed: Union[int, np.random.Generator, None],
                   denominator: float = None) -> np.ndarray:
  """Clips each gradient to norm C, sums, adds N(0, sigma^2 C^2 I), averages.

  Args:
    per_example_grads: array-like of shape (batch, dim).
    clip_norm: C > 0; may be infinite to disable clipping.
    sigma: noise multiplier >= 0; zero disables noise.
    seed: seed or generator for the noise draw.
    denominator: divisor of the noisy sum, the batch size by default.

  Returns:
    The privatized mean gradient of shape (dim,).
  """
  grads = np.asarray(per_example_grads, dtype=np.float64)
  if grads.ndim != 2:
    raise Error('Per-example gradients must share one dimension; got shape '
                '%s' % (grads.shape,))
  if clip_norm <= 0:
    raise Error('clip_norm must be > 0')
  if sigma < 0:
    raise Error('sigma must be >= 0')
  if denominator is None:
    denominator = grads.shape[0]
  if denominator <= 0:
    raise Error('Cannot average over an empty batch')
  norms = np.linalg.norm(grads, axis=1)
  with np.errstate(divide='ignore'):
    scale = np.minimum(1.0, clip_norm / norms)
  total = (grads * scale[:, None]).sum(axis=0)
  if sigma > 0:
    total = total + np.random.default_rng(seed).normal(
        0.0, sigma * clip_norm, size=total.shape)
  return total / denominator
