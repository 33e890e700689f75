# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""Experiment runners for the four data-sharing scenarios.

Each runner takes a resolved `protos.ScenarioConfig` and returns a
`RunRecord` holding labelled log-likelihood samples, pairwise ranked Welch
tests and the privacy ledger of every training run.

Raw party data lives in an `audit.RawDataVault`; every read names the party
on whose behalf it happens. Parties exchange nothing but
`pooling.SyntheticRelease` objects.
"""

import collections
import concurrent.futures
import dataclasses
import glob
import os
import threading
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from absl import logging
import numpy as np

import twinshare
from twinshare import audit
from twinshare import dpvi
from twinshare import evaluation
from twinshare import genmodel
from twinshare import glm
from twinshare import pooling
from twinshare import protos
from twinshare import seeding
from twinshare import tabular

CONVENTIONS = (
    'synthesis: one posterior draw per synthetic set',
    'target binarization: %s' % genmodel.TARGET_RULE,
    'pooling: non-converged combined-set fits are dropped',
    'dp-sgd: noisy gradient sum divided by the expected batch size',
    'sequential: permutations nested within repeats, one release per repeat',
    'proxy test set: first synthetic set of every other party',
    'ranks: computed per pairwise comparison',
    'subsample: floor(fraction * N) rows; skew keep counts round half up',
)

POOLED = '*'
SKEWED_PARTY = 'skewed'


class Error(Exception):
  """Base error for scenario runs."""


class ScenarioError(Error, ValueError):
  """The population cannot support the requested scenario."""


class LedgerError(Error):
  """A training run is outside its privacy budget."""


@dataclasses.dataclass(frozen=True)
class GroupId:
  """Identifies one distribution of log-likelihood samples."""

  group: str
  party: str = POOLED
  fraction: float = 0.0
  step: int = -1
  keep_prob: Optional[float] = None

  @property
  def key(self) -> str:
    parts = [self.party, self.group]
    if self.fraction:
      parts.append('f=%g' % self.fraction)
    if self.step >= 0:
      parts.append('step=%d' % self.step)
    if self.keep_prob is not None:
      parts.append('keep=%g' % self.keep_prob)
    return '/'.join(parts)


@dataclasses.dataclass(frozen=True)
class Observation:
  """Samples (or a failure) for one group from one unit of work."""

  gid: GroupId
  order: Tuple[int, ...]
  samples: Optional[evaluation.LogLikSamples]
  flagged: bool = False
  note: str = ''
  dropped_fits: int = 0


@dataclasses.dataclass
class RunRecord:
  """Everything a scenario run produced."""

  config: object
  accountants: List[object]
  groups: List[object]
  samples: Dict[str, evaluation.LogLikSamples]
  tests: List[object]
  cross_party_accesses: int = 0
  dropped_fits: int = 0
  wall_clock_seconds: float = 0.0
  software_version: str = twinshare.__version__
  conventions: Tuple[str, ...] = CONVENTIONS

  def group(self, key: str):
    for meta in self.groups:
      if meta.key == key:
        return meta
    raise KeyError(key)

  def to_proto(self):
    record = protos.RunRecordProto(
        software_version=self.software_version,
        wall_clock_seconds=self.wall_clock_seconds,
        cross_party_accesses=self.cross_party_accesses,
        dropped_fits=self.dropped_fits,
        conventions=list(self.conventions))
    record.config.CopyFrom(self.config)
    record.accountants.extend(self.accountants)
    record.groups.extend(self.groups)
    record.tests.extend(self.tests)
    return record

  def payload(self) -> bytes:
    """Deterministic serialization of the record without timing data."""
    record = self.to_proto()
    record.ClearField('wall_clock_seconds')
    chunks = [record.SerializeToString(deterministic=True)]
    for key in sorted(self.samples):
      chunks.append(key.encode('utf-8'))
      chunks.append(self.samples[key].values.tobytes())
    return b'\0'.join(chunks)


def _fraction_key(fraction: float) -> int:
  return int(round(fraction * 1e6))


def load_population(config) -> List[Tuple[str, tabular.Dataset]]:
  """(party, rows) pairs from the CSV directory or the synthetic population."""
  population = config.population
  if not config.csv_dir:
    seed = seeding.SeedTree(config.master_seed).seed('population')
    return tabular.synthesize_population(population, seed)
  schema = tabular.Schema.from_proto(population.schema)
  names = [p.name for p in population.parties]
  if not names:
    names = sorted(
        os.path.splitext(os.path.basename(path))[0]
        for path in glob.glob(os.path.join(config.csv_dir, '*.csv')))
  parties = []
  for name in names:
    path = os.path.join(config.csv_dir, name + '.csv')
    parties.append((name, tabular.load_csv(path, schema, party_label=name)))
    logging.info('Loaded party %s: %d rows', name, len(parties[-1][1]))
  if len(parties) < 2:
    raise ScenarioError('Sharing needs at least 2 parties, found %d in %s' %
                        (len(parties), config.csv_dir))
  return parties


class Experiment:
  """State shared by the units of work of one scenario run."""

  def __init__(self, config):
    self.config = config
    self.seeds = seeding.SeedTree(config.master_seed)
    self.vault = audit.RawDataVault()
    self._lock = threading.Lock()
    self._releases = {}
    self._pooled_real_fit = None
    self.parties: List[str] = []
    self._train_sizes: Dict[str, int] = {}
    for name, ds in load_population(config):
      train, test = tabular.train_test_split(ds, config.train_fraction,
                                             self.seeds.seed('split', name))
      self.vault.deposit(name, 'train', train)
      self.vault.deposit(name, 'test', test)
      self.parties.append(name)
      self._train_sizes[name] = len(train)
    self.global_test = tabular.Dataset.concatenate([
        self.vault.open(p, 'test', accessor=audit.EVALUATOR)
        for p in self.parties
    ])
    logging.info('Prepared %d parties; global test set has %d rows',
                 len(self.parties), len(self.global_test))

  @property
  def num_sets(self) -> int:
    return self.config.num_synthetic_sets

  def map(self, fn: Callable, items: Sequence) -> list:
    """Maps over independent units, on worker threads when configured."""
    items = list(items)
    if self.config.workers > 1 and len(items) > 1:
      with concurrent.futures.ThreadPoolExecutor(
          max_workers=self.config.workers) as executor:
        return list(executor.map(fn, items))
    return [fn(item) for item in items]

  def local_data(self, party: str, repeat: int,
                 fraction: float) -> tabular.Dataset:
    """The party's subsampled training rows, read on its own behalf."""
    train = self.vault.open(party, 'train', accessor=party)
    return tabular.subsample(
        train, fraction,
        self.seeds.seed('subsample', party, repeat, _fraction_key(fraction)))

  def _dpvi_config(self, party, repeat, fraction) -> dpvi.DpviConfig:
    return dpvi.DpviConfig.from_settings(
        self.config.dpvi, self.config.epsilon,
        self.seeds.seed('train', party, repeat, _fraction_key(fraction)))

  def release(self, party: str, repeat: int,
              fraction: float) -> pooling.SyntheticRelease:
    """Trains the party's generator and samples its K synthetic sets."""
    key = (party, repeat, _fraction_key(fraction))
    with self._lock:
      if key in self._releases:
        return self._releases[key]
    local = self.local_data(party, repeat, fraction)
    run_config = self._dpvi_config(party, repeat, fraction)
    posterior, accountant = dpvi.train(local, run_config)
    summary = dpvi.accountant_summary(accountant, run_config, len(local),
                                      party, repeat)
    self._check_ledger(summary)
    sets, set_seeds = [], []
    for k in range(self.num_sets):
      params = dpvi.draw_generator(
          posterior, self.seeds.seed('draw', party, repeat, key[2], k))
      set_seed = self.seeds.seed('synthesize', party, repeat, key[2], k)
      sets.append(genmodel.sample(params, len(local), set_seed, party))
      set_seeds.append(set_seed)
    release = pooling.SyntheticRelease(party, tuple(sets), summary,
                                       tuple(set_seeds))
    logging.info('Party %s released %d sets of %d rows (repeat %d, f=%g, '
                 'eps=%.4g)', party, self.num_sets, len(local), repeat,
                 fraction, summary.epsilon)
    with self._lock:
      return self._releases.setdefault(key, release)

  def releases(self, repeat: int,
               fraction: float) -> List[pooling.SyntheticRelease]:
    return self.map(lambda p: self.release(p, repeat, fraction), self.parties)

  def _check_ledger(self, summary) -> None:
    if summary.non_private:
      return
    if summary.epsilon > self.config.epsilon:
      raise LedgerError('Party %s spent epsilon=%g > %g' %
                        (summary.party, summary.epsilon, self.config.epsilon))
    if summary.steps and not np.isclose(summary.delta,
                                        1.0 / summary.num_examples):
      raise LedgerError('Party %s used delta=%g instead of 1/N' %
                        (summary.party, summary.delta))

  def accountants(self) -> list:
    with self._lock:
      return [self._releases[k].accountant for k in sorted(self._releases)]

  def pooled_real_fit(self) -> glm.RegressionFit:
    """Fit on every party's full training data; the evaluator's reference."""
    with self._lock:
      if self._pooled_real_fit is not None:
        return self._pooled_real_fit
    union = tabular.Dataset.concatenate([
        self.vault.open(p, 'train', accessor=audit.EVALUATOR)
        for p in self.parties
    ])
    fit = glm.fit_dataset(union)
    with self._lock:
      self._pooled_real_fit = fit
    return fit

  def largest_party(self) -> str:
    return max(self.parties, key=lambda p: (self._train_sizes[p], p))

  def observe(self,
              gid: GroupId,
              order: Tuple[int, ...],
              fit_fn: Callable[[], object],
              test: tabular.Dataset,
              *seed_path) -> Observation:
    """Fits, then samples predictive log-likelihoods on `test`.

    A failing fit yields a flagged observation without samples; a
    non-converged single fit is sampled but flagged.
    """
    try:
      result = fit_fn()
    except (glm.FitError, pooling.PoolingError) as e:
      logging.warning('%s (order %s): %s', gid.key, order, e)
      return Observation(gid, order, None, True, str(e))
    dropped = 0
    if isinstance(result, tuple):
      result, dropped = result
    flagged = isinstance(result, glm.RegressionFit) and not result.converged
    if flagged:
      logging.warning('%s (order %s): fit did not converge', gid.key, order)
    samples = evaluation.sample_ll_distribution(
        evaluation.estimates_of(result),
        test,
        n_draws=self.config.mc_draws,
        seed=self.seeds.seed('evaluate', *seed_path),
        provenance=gid.key)
    return Observation(gid, order, samples, flagged,
                       'not converged' if flagged else '', dropped)

  def combined_fit(self, local: tabular.Dataset,
                   releases: Sequence[pooling.SyntheticRelease]):
    """Pooled fit over the K combined sets of `local` and `releases`."""
    sets = pooling.assemble_combined_sets(local, releases, self.num_sets,
                                          self.config.include_local)
    return pooling.fit_combined_sets(sets)


@dataclasses.dataclass(frozen=True)
class Comparison:
  label: str
  first: GroupId
  second: GroupId
  sided: str = 'one_greater'


def _aggregate(experiment: Experiment, kind: str,
               observations: Sequence[Observation],
               comparisons: Sequence[Comparison],
               started: float) -> RunRecord:
  """Merges observations into groups in a fixed order and runs the tests."""
  by_group = collections.defaultdict(list)
  for obs in observations:
    by_group[obs.gid].append(obs)
  groups, samples = [], {}
  for gid in sorted(by_group, key=lambda g: g.key):
    parts = sorted(by_group[gid], key=lambda o: o.order)
    present = [o.samples for o in parts if o.samples is not None]
    notes = sorted({o.note for o in parts if o.note})
    meta = protos.SampleGroup(
        key=gid.key,
        scenario=kind,
        group=gid.group,
        party=gid.party,
        step=gid.step,
        fraction=gid.fraction,
        flagged=any(o.flagged for o in parts),
        note='; '.join(notes))
    if gid.keep_prob is not None:
      meta.keep_prob = gid.keep_prob
    if present:
      samples[gid.key] = evaluation.LogLikSamples.concatenate(present, gid.key)
      meta.num_values = len(samples[gid.key])
    groups.append(meta)

  tests = []
  for comparison in comparisons:
    a, b = samples.get(comparison.first.key), samples.get(comparison.second.key)
    if a is None or b is None:
      logging.warning('Skipping test %s: a group has no samples',
                      comparison.label)
      continue
    try:
      result = evaluation.ranked_welch_test(a, b, comparison.sided)
    except evaluation.StatisticError as e:
      logging.warning('Skipping test %s: %s', comparison.label, e)
      continue
    tests.append(
        result.to_proto(comparison.label, comparison.first.key,
                        comparison.second.key, comparison.sided))

  record = RunRecord(
      config=experiment.config,
      accountants=experiment.accountants(),
      groups=groups,
      samples=samples,
      tests=tests,
      cross_party_accesses=experiment.vault.cross_party_accesses,
      dropped_fits=sum(o.dropped_fits for o in observations),
      wall_clock_seconds=time.monotonic() - started)
  if record.cross_party_accesses:
    raise audit.PrivacyFlowError('%d cross-party raw-data accesses' %
                                 record.cross_party_accesses)
  logging.info('%s finished: %d groups, %d tests, %d dropped fits, %.1fs',
               kind, len(groups), len(tests), record.dropped_fits,
               record.wall_clock_seconds)
  return record


def _sharing_observations(experiment: Experiment, kind: str, repeat: int,
                          fraction: float) -> List[Observation]:
  """Local, combined, pooled-real (and proxy) groups for one repeat."""
  releases = experiment.releases(repeat, fraction)
  test = experiment.global_test
  fkey = _fraction_key(fraction)

  def per_party(party):
    local = experiment.local_data(party, repeat, fraction)
    local_fit = lambda: glm.fit_dataset(local)
    combined_fit = lambda: experiment.combined_fit(local, releases)
    result = [
        experiment.observe(
            GroupId('local', party, fraction), (repeat,), local_fit, test,
            kind, 'local', party, repeat, fkey),
        experiment.observe(
            GroupId('combined', party, fraction), (repeat,), combined_fit,
            test, kind, 'combined', party, repeat, fkey),
    ]
    if experiment.config.proxy_evaluation:
      proxy = evaluation.proxy_test_set(releases, 0, exclude_party=party)
      result.append(
          experiment.observe(
              GroupId('local@proxy', party, fraction), (repeat,), local_fit,
              proxy, kind, 'local@proxy', party, repeat, fkey))
      result.append(
          experiment.observe(
              GroupId('combined@proxy', party, fraction), (repeat,),
              combined_fit, proxy, kind, 'combined@proxy', party, repeat,
              fkey))
    return result

  observations = [o for obs in experiment.map(per_party, experiment.parties)
                  for o in obs]
  observations.append(
      experiment.observe(
          GroupId('pooled_real', POOLED, fraction), (repeat,),
          experiment.pooled_real_fit, test, kind, 'pooled_real', repeat,
          fkey))
  return observations


def _sharing_comparisons(experiment: Experiment,
                         fraction: float) -> List[Comparison]:
  comparisons = []
  for party in experiment.parties:
    comparisons.append(
        Comparison('combined>local', GroupId('combined', party, fraction),
                   GroupId('local', party, fraction)))
  return comparisons


def run_baseline_sharing(config) -> RunRecord:
  """Every party pools its local data with all other parties' releases."""
  started = time.monotonic()
  experiment = Experiment(config)
  fraction = config.subsample_fractions[0]
  observations = []
  for repeat in range(config.repeats):
    observations.extend(
        _sharing_observations(experiment, 'baseline_sharing', repeat,
                              fraction))
  return _aggregate(experiment, 'baseline_sharing', observations,
                    _sharing_comparisons(experiment, fraction), started)


def run_size_sweep(config) -> RunRecord:
  """The baseline pipeline at every configured subsample fraction."""
  started = time.monotonic()
  experiment = Experiment(config)
  observations, comparisons = [], []
  for fraction in config.subsample_fractions:
    for repeat in range(config.repeats):
      observations.extend(
          _sharing_observations(experiment, 'size_sweep', repeat, fraction))
    comparisons.extend(_sharing_comparisons(experiment, fraction))
  return _aggregate(experiment, 'size_sweep', observations, comparisons,
                    started)


def run_sequential_sharing(config) -> RunRecord:
  """Adds other parties' releases one at a time in random orders.

  Step k of a focal party pools its local data with the releases of the
  first k parties of a random order of the others; step 0 is the local fit.
  Each repeat trains every generator once and reuses the releases across all
  permutations of that repeat.
  """
  started = time.monotonic()
  experiment = Experiment(config)
  fraction = config.subsample_fractions[0]
  fkey = _fraction_key(fraction)
  test = experiment.global_test
  kind = 'sequential_sharing'
  observations = []
  for repeat in range(config.repeats):
    releases = {r.party: r for r in experiment.releases(repeat, fraction)}

    def per_party(party, repeat=repeat, releases=releases):
      local = experiment.local_data(party, repeat, fraction)
      others = [p for p in experiment.parties if p != party]
      # Fits depend on the set of sharers only; dropped-fit counts are
      # reported the first time a set is fitted.
      fits = {}

      def fit_for(sharers):
        cached = fits.get(sharers)
        if isinstance(cached, Exception):
          raise cached
        if cached is not None:
          return cached
        try:
          if sharers:
            result = experiment.combined_fit(
                local, [releases[p] for p in sorted(sharers)])
          else:
            result = glm.fit_dataset(local)
        except (glm.FitError, pooling.PoolingError) as e:
          fits[sharers] = e
          raise
        fits[sharers] = result[0] if isinstance(result, tuple) else result
        return result

      result = []
      for perm in range(config.permutations):
        order = experiment.seeds.rng('order', party, repeat, fkey,
                                     perm).permutation(len(others))
        for step in range(len(others) + 1):
          sharers = frozenset(others[i] for i in order[:step])
          result.append(
              experiment.observe(
                  GroupId('step', party, fraction, step), (repeat, perm),
                  lambda s=sharers: fit_for(s), test, kind, party, repeat,
                  fkey, perm, step))
      return result

    observations.extend(
        o for obs in experiment.map(per_party, experiment.parties)
        for o in obs)

  comparisons = []
  for party in experiment.parties:
    for step in range(1, len(experiment.parties)):
      comparisons.append(
          Comparison('step %d' % step, GroupId('step', party, fraction, step),
                     GroupId('step', party, fraction, step - 1)))
  return _aggregate(experiment, kind, observations, comparisons, started)


def run_skew_sweep(config) -> RunRecord:
  """Thins a subgroup's positives in an artificial party and shares data.

  The artificial party holds one half of the pooled held-out rows; the other
  half, restricted to the subgroup, is the evaluation set. For each repeat the
  thinning seed is shared by all keep probabilities, so smaller keep
  probabilities keep subsets of the rows kept at larger ones. A second arm
  isolates the largest party at full training size and compares its local
  fit with and without the skew feature against the combined fit.
  """
  started = time.monotonic()
  experiment = Experiment(config)
  skew = config.skew
  kind = 'skew_sweep'
  fraction = config.subsample_fractions[0]
  fkey = _fraction_key(fraction)

  pool = experiment.global_test
  order = experiment.seeds.rng('skew', 'halves').permutation(len(pool))
  half = len(pool) // 2
  artificial = pool.take(np.sort(order[:half])).relabel(SKEWED_PARTY)
  reserved = pool.take(np.sort(order[half:]))
  column = reserved.schema.index(skew.feature)
  code = reserved.schema.category_index(skew.feature, skew.category)
  subgroup = reserved.where(reserved.features[:, column] == code)
  if not len(subgroup):
    raise ScenarioError('No %s=%s rows in the reserved evaluation half' %
                        (skew.feature, skew.category))
  experiment.vault.deposit(SKEWED_PARTY, 'train', artificial)
  logging.info('Artificial party has %d rows; subgroup test slice has %d',
               len(artificial), len(subgroup))

  largest = experiment.largest_party()
  test = experiment.global_test
  dropped_test = tabular.drop_feature(test, skew.feature)
  observations = []
  for repeat in range(config.repeats):
    releases = experiment.releases(repeat, fraction)
    own = experiment.vault.open(SKEWED_PARTY, 'train', accessor=SKEWED_PARTY)
    thin_seed = experiment.seeds.seed('skew', 'thin', repeat)

    def per_keep(keep_prob, repeat=repeat, releases=releases, own=own,
                 thin_seed=thin_seed):
      local = tabular.inject_marginal_skew(own, skew.feature, skew.category,
                                           skew.target_value, keep_prob,
                                           thin_seed)
      keep_key = _fraction_key(keep_prob)
      return [
          experiment.observe(
              GroupId('local', SKEWED_PARTY, keep_prob=keep_prob), (repeat,),
              lambda: glm.fit_dataset(local), subgroup, kind, 'local',
              repeat, keep_key),
          experiment.observe(
              GroupId('combined', SKEWED_PARTY, keep_prob=keep_prob),
              (repeat,), lambda: experiment.combined_fit(local, releases),
              subgroup, kind, 'combined', repeat, keep_key),
      ]

    observations.extend(
        o for obs in experiment.map(per_keep, list(skew.keep_probs))
        for o in obs)

    full = experiment.local_data(largest, repeat, 1.0)
    observations.extend([
        experiment.observe(
            GroupId('local', largest, 1.0), (repeat,),
            lambda: glm.fit_dataset(full), test, kind, 'large', 'local',
            repeat),
        experiment.observe(
            GroupId('local_dropped', largest, 1.0), (repeat,),
            lambda: glm.fit_dataset(tabular.drop_feature(full, skew.feature)),
            dropped_test, kind, 'large', 'local_dropped', repeat),
        experiment.observe(
            GroupId('combined', largest, 1.0), (repeat,),
            lambda: experiment.combined_fit(full, releases), test, kind,
            'large', 'combined', repeat),
        experiment.observe(
            GroupId('pooled_real', POOLED, 1.0), (repeat,),
            experiment.pooled_real_fit, test, kind, 'large', 'pooled_real',
            repeat, fkey),
    ])

  comparisons = [
      Comparison('combined vs local',
                 GroupId('combined', SKEWED_PARTY, keep_prob=p),
                 GroupId('local', SKEWED_PARTY, keep_prob=p), 'two')
      for p in skew.keep_probs
  ]
  local_large = GroupId('local', largest, 1.0)
  dropped_large = GroupId('local_dropped', largest, 1.0)
  combined_large = GroupId('combined', largest, 1.0)
  comparisons.extend([
      Comparison('combined vs local', combined_large, local_large, 'two'),
      Comparison('local_dropped vs local', dropped_large, local_large, 'two'),
      Comparison('combined vs local_dropped', combined_large, dropped_large,
                 'two'),
  ])
  return _aggregate(experiment, kind, observations, comparisons, started)


RUNNERS = {
    'baseline_sharing': run_baseline_sharing,
    'sequential_sharing': run_sequential_sharing,
    'size_sweep': run_size_sweep,
    'skew_sweep': run_skew_sweep,
}


def run(config) -> RunRecord:
  """Dispatches on `config.kind`; `config` must already be resolved."""
  try:
    runner = RUNNERS[config.kind]
  except KeyError:
    raise ScenarioError('Unknown scenario kind %r' % config.kind) from None
  return runner(config)
