# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""Combined training sets from synthetic releases, and Rubin's rules.

A party only ever sees its own local rows and the `SyntheticRelease`s that
other parties published; `assemble_combined_sets` accepts nothing else.
"""

import dataclasses
from typing import Callable, Iterable, List, Sequence, Tuple

from absl import logging
import numpy as np

from twinshare import glm
from twinshare import protos
from twinshare import tabular


class Error(Exception):
  """Base error for pooling."""


class PoolingError(Error, ValueError):
  """Releases or fits cannot be combined."""


@dataclasses.dataclass(frozen=True, eq=False)
class SyntheticRelease:
  """K synthetic datasets published by one party.

  Attributes:
    party: name of the releasing party.
    datasets: the K synthetic sets, each as large as the party's training set.
    accountant: `protos.AccountantSummary` of the training run.
    set_seeds: sampling seed of each set.
  """

  party: str
  datasets: Tuple[tabular.Dataset, ...]
  accountant: object = None
  set_seeds: Tuple[int, ...] = ()

  def __post_init__(self):
    datasets = tuple(self.datasets)
    if not datasets:
      raise PoolingError('A release needs at least one synthetic set')
    schema, size = datasets[0].schema, len(datasets[0])
    for ds in datasets:
      if not ds.synthetic:
        raise PoolingError('Release of %r contains non-synthetic rows' %
                           self.party)
      if ds.schema != schema or len(ds) != size:
        raise PoolingError('Sets of the release of %r differ in schema or '
                           'size' % self.party)
    object.__setattr__(self, 'datasets', datasets)
    object.__setattr__(self, 'set_seeds', tuple(self.set_seeds))

  @property
  def num_sets(self) -> int:
    return len(self.datasets)

  @property
  def schema(self) -> tabular.Schema:
    return self.datasets[0].schema

  @property
  def num_examples(self) -> int:
    return len(self.datasets[0])

  def to_proto(self, target_rule: str = ''):
    record = protos.ReleaseRecord(
        party=self.party,
        num_examples=self.num_examples,
        num_sets=self.num_sets,
        set_seeds=list(self.set_seeds),
        target_rule=target_rule)
    if self.accountant is not None:
      record.accountant.CopyFrom(self.accountant)
    return record


@dataclasses.dataclass(frozen=True, eq=False)
class PooledFit:
  """Rubin's-rules combination of K fits, per coefficient."""

  point_estimates: np.ndarray
  total_variance: np.ndarray
  within_variance: np.ndarray
  between_variance: np.ndarray
  num_sets: int

  @property
  def std_errors(self) -> np.ndarray:
    return np.sqrt(self.total_variance)


def assemble_combined_sets(local: tabular.Dataset,
                           releases: Sequence[SyntheticRelease],
                           num_sets: int,
                           include_local: bool = True
                          ) -> List[tabular.Dataset]:
  """Builds the K combined training sets of one party.

  Combined set k is the local data together with the k-th set of every other
  party's release. A release published by the local party itself is skipped.

  Args:
    local: the party's own training rows.
    releases: releases visible to the party.
    num_sets: K.
    include_local: when False, pool the synthetic sets only.

  Returns:
    K datasets labelled with the local party.

  Raises:
    PoolingError: schemas differ, a release has fewer than K sets, or there is
      nothing to pool.
  """
  if num_sets < 1:
    raise PoolingError('num_sets must be >= 1')
  others = []
  for release in releases:
    if not isinstance(release, SyntheticRelease):
      raise PoolingError('Only synthetic releases can be pooled, got %s' %
                         type(release).__name__)
    if release.party == local.party_label:
      continue
    if release.schema != local.schema:
      raise PoolingError('Release of %r has a different schema' %
                         release.party)
    if release.num_sets < num_sets:
      raise PoolingError('Release of %r has %d sets, %d requested' %
                         (release.party, release.num_sets, num_sets))
    others.append(release)
  if not include_local and not others:
    raise PoolingError('Nothing to pool without local data or releases')
  combined = []
  for k in range(num_sets):
    parts = [local] if include_local else []
    parts.extend(release.datasets[k] for release in others)
    combined.append(
        tabular.Dataset.concatenate(parts, party_label=local.party_label))
  return combined


def rubin_combine(fits: Sequence[glm.RegressionFit]) -> PooledFit:
  """Combines K fits with Rubin's rules.

  q_bar = mean of coefficients, W = mean of squared standard errors,
  B = unbiased variance of coefficients, T = W + (1 + 1/K) B. Each
  coordinate is reduced in sorted order, relative to its smallest value, so
  the result does not depend on the order of `fits` and K copies of one fit
  reproduce it exactly.
  """
  k = len(fits)
  if k < 2:
    raise PoolingError('Rubin combination needs K >= 2 fits, got %d' % k)
  dims = {fit.coefficients.size for fit in fits}
  if len(dims) != 1:
    raise PoolingError('Fits have mixed dimensions: %s' % sorted(dims))
  if not all(fit.converged for fit in fits):
    raise PoolingError('Only converged fits can be combined')
  coefficients = np.sort(np.stack([f.coefficients for f in fits]), axis=0)
  variances = np.sort(np.stack([f.std_errors**2 for f in fits]), axis=0)
  deviations = coefficients - coefficients[0]
  point = coefficients[0] + deviations.mean(axis=0)
  within = variances[0] + (variances - variances[0]).mean(axis=0)
  between = deviations.var(axis=0, ddof=1)
  total = within + (1.0 + 1.0 / k) * between
  return PooledFit(point, total, within, between, k)


def fit_combined_sets(
    combined_sets: Iterable[tabular.Dataset],
    map_fn: Callable = map) -> Tuple[PooledFit, int]:
  """Fits every combined set and pools the converged fits.

  Non-converged or failed fits are dropped with a warning.

  Args:
    combined_sets: the K combined training sets.
    map_fn: a map-like callable, e.g. `ThreadPoolExecutor.map`.

  Returns:
    The pooled fit and the number of dropped fits.

  Raises:
    PoolingError: fewer than two fits survive.
  """

  def fit_or_none(ds):
    try:
      return glm.fit_dataset(ds)
    except glm.FitError as e:
      logging.warning('Dropping a combined-set fit: %s', e)
      return None

  fits = list(map_fn(fit_or_none, combined_sets))
  kept = [f for f in fits if f is not None and f.converged]
  dropped = len(fits) - len(kept)
  if dropped:
    logging.warning('Dropped %d of %d non-converged combined-set fits',
                    dropped, len(fits))
  if len(kept) < 2:
    raise PoolingError('Only %d of %d combined-set fits converged' %
                       (len(kept), len(fits)))
  return rubin_combine(kept), dropped
