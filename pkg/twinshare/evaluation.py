# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""Predictive log-likelihood distributions, ranked Welch tests, box stats."""

import dataclasses
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from twinshare import glm
from twinshare import pooling
from twinshare import protos
from twinshare import tabular

SIDED = ('one_greater', 'two')
WHISKER_IQR = 1.5


class Error(Exception):
  """Base error for evaluation."""


class StatisticError(Error, ValueError):
  """A test statistic is undefined for the given samples."""


@dataclasses.dataclass(frozen=True, eq=False)
class LogLikSamples:
  """Test log-likelihood values of parameter draws.

  Attributes:
    values: finite float64 values, one per draw.
    provenance: free-form key of the group the values belong to.
    normalized: whether each value is divided by the test-set size.
  """

  values: np.ndarray
  provenance: str = ''
  normalized: bool = True

  def __post_init__(self):
    values = np.asarray(self.values, dtype=np.float64).reshape(-1)
    if not values.size:
      raise Error('LogLikSamples must not be empty')
    if not np.isfinite(values).all():
      raise Error('LogLikSamples of %r contain non-finite values' %
                  self.provenance)
    values.flags.writeable = False
    object.__setattr__(self, 'values', values)

  def __len__(self) -> int:
    return self.values.size

  @classmethod
  def concatenate(cls, samples: Sequence['LogLikSamples'],
                  provenance: str = '') -> 'LogLikSamples':
    if not samples:
      raise Error('Nothing to concatenate')
    return cls(np.concatenate([s.values for s in samples]), provenance,
               samples[0].normalized)


Estimates = Tuple[np.ndarray, np.ndarray]


def estimates_of(fit: Union[glm.RegressionFit, pooling.PooledFit]) -> Estimates:
  """(mean, variance) of the diagonal Gaussian summarizing a fit."""
  if isinstance(fit, pooling.PooledFit):
    return fit.point_estimates, fit.total_variance
  return fit.coefficients, fit.std_errors**2


def sample_ll_distribution(estimates: Estimates,
                           test: tabular.Dataset,
                           n_draws: int = 100,
                           seed=0,
                           normalize: bool = True,
                           provenance: str = '') -> LogLikSamples:
  """Test log-likelihoods of w ~ N(mean, diag(variance)).

  Args:
    estimates: (mean, variance) vectors over the one-hot encoding.
    test: the evaluation rows.
    n_draws: number of parameter draws.
    seed: seed of the draws.
    normalize: divide each value by the number of test rows.
    provenance: label stored with the samples.

  Returns:
    n_draws values, deterministic in `seed`.
  """
  mean, variance = (np.asarray(e, dtype=np.float64) for e in estimates)
  if mean.shape != variance.shape or mean.ndim != 1:
    raise Error('mean and variance must be vectors of equal length')
  if (variance < 0).any():
    raise Error('Variances must be nonnegative')
  if n_draws < 1:
    raise Error('n_draws must be >= 1')
  if not len(test):
    raise Error('The test set is empty')
  noise = np.random.default_rng(seed).standard_normal((n_draws, mean.size))
  draws = mean + np.sqrt(variance) * noise
  return LogLikSamples(
      glm.log_likelihoods(draws, test, normalize), provenance, normalize)


@dataclasses.dataclass(frozen=True)
class WelchResult:
  t: float
  df: float
  p: float

  def to_proto(self, label: str, first: str, second: str, sided: str):
    return protos.ComparisonSummary(
        label=label,
        first=first,
        second=second,
        sided=sided,
        t=self.t,
        df=self.df,
        p=self.p,
        marker=significance_marker(self.p))


def _values(samples) -> np.ndarray:
  if isinstance(samples, LogLikSamples):
    return samples.values
  return np.asarray(samples, dtype=np.float64).reshape(-1)


def ranked_welch_test(a, b, sided: str = 'one_greater') -> WelchResult:
  """Welch's t-test on the mid-ranks of the pooled samples.

  Args:
    a: first sample (LogLikSamples or array-like), at least 2 values.
    b: second sample, at least 2 values.
    sided: 'one_greater' tests a > b; 'two' is two-sided.

  Returns:
    t, Welch-Satterthwaite degrees of freedom and the p-value.

  Raises:
    StatisticError: all pooled values are equal, or a sample is too small.
  """
  if sided not in SIDED:
    raise Error('sided must be one of %s, got %r' % (SIDED, sided))
  a, b = _values(a), _values(b)
  if a.size < 2 or b.size < 2:
    raise StatisticError('Each sample needs at least 2 values')
  ranks = stats.rankdata(np.concatenate([a, b]), method='average')
  if np.ptp(ranks) == 0:
    raise StatisticError('All pooled values are identical')
  ra, rb = ranks[:a.size], ranks[a.size:]
  va, vb = ra.var(ddof=1) / ra.size, rb.var(ddof=1) / rb.size
  if va + vb == 0:
    # Both groups are constant but different: the separation is perfect.
    t = np.inf if ra[0] > rb[0] else -np.inf
    p = (0.0 if t > 0 else 1.0) if sided == 'one_greater' else 0.0
    return WelchResult(float(t), float(ra.size + rb.size - 2), p)
  result = stats.ttest_ind(
      ra,
      rb,
      equal_var=False,
      alternative='greater' if sided == 'one_greater' else 'two-sided')
  df = (va + vb)**2 / (va**2 / (ra.size - 1) + vb**2 / (rb.size - 1))
  return WelchResult(float(result.statistic), float(df), float(result.pvalue))


def significance_marker(p: float) -> str:
  if p < 0.001:
    return '***'
  if p < 0.01:
    return '**'
  if p < 0.05:
    return '*'
  return ''


@dataclasses.dataclass(frozen=True)
class BoxStats:
  q25: float
  median: float
  q75: float
  whisker_low: float
  whisker_high: float
  outliers: int
  mean: float
  count: int

  def to_proto(self, key: str):
    return protos.BoxSummary(key=key, **dataclasses.asdict(self))


def summarize_box(samples) -> BoxStats:
  """Box-plot statistics with linearly interpolated quantiles.

  Whiskers reach the furthest sample within 1.5 IQR of the box; samples
  beyond them are counted as outliers.
  """
  values = _values(samples)
  if not values.size:
    raise Error('Cannot summarize an empty sample')
  q25, median, q75 = np.quantile(values, [0.25, 0.5, 0.75], method='linear')
  iqr = q75 - q25
  inside = values[(values >= q25 - WHISKER_IQR * iqr) &
                  (values <= q75 + WHISKER_IQR * iqr)]
  return BoxStats(
      q25=float(q25),
      median=float(median),
      q75=float(q75),
      whisker_low=float(inside.min()),
      whisker_high=float(inside.max()),
      outliers=int(values.size - inside.size),
      mean=float(values.mean()),
      count=int(values.size))


def proxy_test_set(releases: Sequence[pooling.SyntheticRelease],
                   k: int,
                   exclude_party: Optional[str] = None) -> tabular.Dataset:
  """Union of the k-th synthetic sets of every release but `exclude_party`.

  A party holds no population sample; this union stands in for one.
  """
  parts = [
      r.datasets[k] for r in releases
      if r.party != exclude_party and k < r.num_sets
  ]
  if not parts:
    raise Error('No release provides a set %d for a proxy test set' % k)
  return tabular.Dataset.concatenate(parts, party_label=exclude_party)
