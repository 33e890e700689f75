# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""Schema-aware categorical datasets.

A `Dataset` is an immutable table of category indices plus a binary target.
Every operation here is pure: the same inputs and seed give bit-identical
outputs, so datasets can be shared freely across threads.
"""

import dataclasses
import math
from typing import Dict, List, Optional, Sequence, Tuple

from absl import logging
import numpy as np
import pandas as pd

from twinshare import protos

TARGET_LABELS = ('0', '1')

# Guards floor() against products such as 0.29 * 100 = 28.999999999999996.
_ROUNDING_SLACK = 1e-9


class Error(Exception):
  """Base error for tabular operations."""


class SchemaError(Error, ValueError):
  """A schema, feature name or category does not match the data."""


class CsvFormatError(Error, ValueError):
  """A CSV file does not conform to its schema."""


class PopulationError(Error, ValueError):
  """A population config cannot be turned into ground-truth models."""


@dataclasses.dataclass(frozen=True)
class Feature:
  name: str
  categories: Tuple[str, ...]

  @property
  def cardinality(self) -> int:
    return len(self.categories)


@dataclasses.dataclass(frozen=True)
class Schema:
  """Ordered categorical features plus the name of a binary target."""

  features: Tuple[Feature, ...]
  target_name: str = 'target'

  def __post_init__(self):
    names = [f.name for f in self.features]
    if len(set(names)) != len(names):
      raise SchemaError('Duplicate feature names: %s' % names)
    if self.target_name in names:
      raise SchemaError('Target %r collides with a feature name' %
                        self.target_name)
    for feature in self.features:
      if feature.cardinality < 2:
        raise SchemaError('Feature %r needs at least 2 categories' %
                          feature.name)
      if len(set(feature.categories)) != feature.cardinality:
        raise SchemaError('Feature %r repeats a category' % feature.name)

  @property
  def feature_names(self) -> Tuple[str, ...]:
    return tuple(f.name for f in self.features)

  @property
  def cardinalities(self) -> Tuple[int, ...]:
    return tuple(f.cardinality for f in self.features)

  @property
  def num_features(self) -> int:
    return len(self.features)

  @property
  def one_hot_dim(self) -> int:
    return 1 + sum(c - 1 for c in self.cardinalities)

  def index(self, name: str) -> int:
    try:
      return self.feature_names.index(name)
    except ValueError:
      raise SchemaError('Unknown feature %r' % name) from None

  def category_index(self, feature: str, category: str) -> int:
    categories = self.features[self.index(feature)].categories
    try:
      return categories.index(category)
    except ValueError:
      raise SchemaError('Feature %r has no category %r' %
                        (feature, category)) from None

  def coefficient_names(self) -> List[str]:
    """Names of the one-hot columns, intercept first."""
    names = ['intercept']
    for feature in self.features:
      names.extend('%s=%s' % (feature.name, c) for c in feature.categories[1:])
    return names

  def without(self, name: str) -> 'Schema':
    index = self.index(name)
    return Schema(self.features[:index] + self.features[index + 1:],
                  self.target_name)

  def to_proto(self):
    spec = protos.SchemaSpec(target_name=self.target_name)
    for feature in self.features:
      spec.features.add(name=feature.name, categories=feature.categories)
    return spec

  @classmethod
  def from_proto(cls, spec) -> 'Schema':
    return cls(
        tuple(Feature(f.name, tuple(f.categories)) for f in spec.features),
        spec.target_name)


@dataclasses.dataclass(frozen=True, eq=False)
class Dataset:
  """Immutable rows of category indices with a binary target.

  Attributes:
    schema: the schema the indices refer to.
    features: int64 array of shape (n, d).
    targets: int64 array of shape (n,) with values in {0, 1}.
    party_label: the party that owns the rows, if any.
    synthetic: whether the rows were sampled from a generative model.
  """

  schema: Schema
  features: np.ndarray
  targets: np.ndarray
  party_label: Optional[str] = None
  synthetic: bool = False

  def __post_init__(self):
    features = np.array(self.features, dtype=np.int64, copy=True)
    targets = np.array(self.targets, dtype=np.int64, copy=True)
    if features.size == 0:
      features = features.reshape(0, self.schema.num_features)
    if features.ndim != 2 or features.shape[1] != self.schema.num_features:
      raise SchemaError('Expected %d feature columns, got shape %s' %
                        (self.schema.num_features, features.shape))
    if targets.shape != (features.shape[0],):
      raise SchemaError('Targets of shape %s do not match %d rows' %
                        (targets.shape, features.shape[0]))
    if features.size:
      bounds = np.asarray(self.schema.cardinalities)
      bad = (features < 0) | (features >= bounds)
      if bad.any():
        row, col = np.argwhere(bad)[0]
        raise SchemaError('Row %d has category index %d out of range for %r' %
                          (row, features[row, col],
                           self.schema.feature_names[col]))
    if targets.size and not np.isin(targets, (0, 1)).all():
      raise SchemaError('Targets must be 0 or 1')
    features.flags.writeable = False
    targets.flags.writeable = False
    object.__setattr__(self, 'features', features)
    object.__setattr__(self, 'targets', targets)

  def __len__(self) -> int:
    return self.features.shape[0]

  def take(self, indices: Sequence[int]) -> 'Dataset':
    indices = np.asarray(indices, dtype=np.int64)
    return dataclasses.replace(
        self, features=self.features[indices], targets=self.targets[indices])

  def where(self, mask: np.ndarray) -> 'Dataset':
    return self.take(np.flatnonzero(mask))

  def relabel(self, party_label: Optional[str]) -> 'Dataset':
    return dataclasses.replace(self, party_label=party_label)

  def equals(self, other: 'Dataset') -> bool:
    return (self.schema == other.schema and
            np.array_equal(self.features, other.features) and
            np.array_equal(self.targets, other.targets) and
            self.party_label == other.party_label)

  @classmethod
  def concatenate(cls,
                  datasets: Sequence['Dataset'],
                  party_label: Optional[str] = None) -> 'Dataset':
    if not datasets:
      raise Error('Cannot concatenate zero datasets')
    schema = datasets[0].schema
    for ds in datasets[1:]:
      if ds.schema != schema:
        raise SchemaError('Cannot concatenate datasets with different schemas')
    return cls(
        schema,
        np.concatenate([ds.features for ds in datasets], axis=0),
        np.concatenate([ds.targets for ds in datasets], axis=0),
        party_label=party_label,
        synthetic=all(ds.synthetic for ds in datasets))


@dataclasses.dataclass(frozen=True)
class MarginalTable:
  """Cell proportions of a two-way contingency table."""

  features: Tuple[str, str]
  proportions: Dict[Tuple[str, str], float]

  def __post_init__(self):
    total = sum(self.proportions.values())
    if abs(total - 1.0) > 1e-9:
      raise Error('Marginal proportions sum to %r' % total)

  def __getitem__(self, cell: Tuple[str, str]) -> float:
    return self.proportions[cell]


def _floor_count(fraction: float, n: int) -> int:
  return int(math.floor(fraction * n + _ROUNDING_SLACK))


def _round_half_up(value: float) -> int:
  return int(math.floor(value + 0.5 + _ROUNDING_SLACK))


def load_csv(path: str,
             schema: Schema,
             party_label: Optional[str] = None) -> Dataset:
  """Reads a UTF-8 CSV with a header of feature names and the target name.

  Args:
    path: file to read.
    schema: schema the category labels are encoded against.
    party_label: owner recorded on the returned dataset.

  Returns:
    A Dataset with rows in file order.

  Raises:
    CsvFormatError: the file cannot be read or parsed, a column is missing
      or unexpected, or a cell holds an unknown label.
  """
  try:
    frame = pd.read_csv(
        path, dtype=str, keep_default_na=False, encoding='utf-8')
  except OSError as e:
    raise CsvFormatError('%s: cannot read: %s' % (path, e)) from e
  except pd.errors.EmptyDataError as e:
    raise CsvFormatError('%s: empty file' % path) from e
  except (pd.errors.ParserError, UnicodeDecodeError) as e:
    raise CsvFormatError('%s: not a UTF-8 CSV: %s' % (path, e)) from e
  expected = list(schema.feature_names) + [schema.target_name]
  missing = [c for c in expected if c not in frame.columns]
  if missing:
    raise CsvFormatError('%s: missing columns %s' % (path, missing))
  extra = [c for c in frame.columns if c not in expected]
  if extra:
    raise CsvFormatError('%s: unexpected columns %s' % (path, extra))
  features = np.empty((len(frame), schema.num_features), dtype=np.int64)
  for j, feature in enumerate(schema.features):
    lookup = {c: i for i, c in enumerate(feature.categories)}
    codes = frame[feature.name].map(lookup)
    unknown = codes.isna().to_numpy()
    if unknown.any():
      row = int(np.flatnonzero(unknown)[0])
      raise CsvFormatError(
          '%s: row %d, column %r: unknown category %r' %
          (path, row + 1, feature.name, frame[feature.name].iloc[row]))
    features[:, j] = codes.to_numpy(dtype=np.int64)
  target_codes = frame[schema.target_name].map(
      {label: i for i, label in enumerate(TARGET_LABELS)})
  unknown = target_codes.isna().to_numpy()
  if unknown.any():
    row = int(np.flatnonzero(unknown)[0])
    raise CsvFormatError(
        '%s: row %d, column %r: target must be 0 or 1, got %r' %
        (path, row + 1, schema.target_name,
         frame[schema.target_name].iloc[row]))
  return Dataset(schema, features, target_codes.to_numpy(dtype=np.int64),
                 party_label=party_label)


def to_frame(ds: Dataset) -> pd.DataFrame:
  columns = {}
  for j, feature in enumerate(ds.schema.features):
    columns[feature.name] = np.asarray(feature.categories,
                                       dtype=object)[ds.features[:, j]]
  columns[ds.schema.target_name] = np.asarray(
      TARGET_LABELS, dtype=object)[ds.targets]
  return pd.DataFrame(columns, columns=list(columns))


def write_csv(ds: Dataset, path: str) -> None:
  to_frame(ds).to_csv(path, index=False, encoding='utf-8')


def train_test_split(ds: Dataset, train_fraction: float,
                     seed: int) -> Tuple[Dataset, Dataset]:
  """Splits rows into disjoint train and test sets.

  The train set holds floor(train_fraction * n) rows; both parts keep the
  input row order.
  """
  if not 0.0 < train_fraction < 1.0:
    raise Error('train_fraction must lie in (0, 1), got %r' % train_fraction)
  if not len(ds):
    raise Error('Cannot split an empty dataset')
  order = np.random.default_rng(seed).permutation(len(ds))
  n_train = _floor_count(train_fraction, len(ds))
  return ds.take(np.sort(order[:n_train])), ds.take(np.sort(order[n_train:]))


def subsample(ds: Dataset, fraction: float, seed: int) -> Dataset:
  """Uniform subsample without replacement of floor(fraction * n) rows."""
  if not 0.0 < fraction <= 1.0:
    raise Error('fraction must lie in (0, 1], got %r' % fraction)
  if fraction == 1.0:
    return ds
  order = np.random.default_rng(seed).permutation(len(ds))
  return ds.take(np.sort(order[:_floor_count(fraction, len(ds))]))


def inject_marginal_skew(ds: Dataset, feature: str, category: str,
                         target_value: int, keep_prob: float,
                         seed: int) -> Dataset:
  """Thins the rows with (feature=category, target=target_value).

  Exactly round(keep_prob * count) matching rows survive, chosen uniformly.
  For a fixed seed the survivors at a smaller keep_prob are a subset of those
  at a larger one.
  """
  return ds.where(
      skew_mask(ds, feature, category, target_value, keep_prob, seed))


def skew_mask(ds: Dataset, feature: str, category: str, target_value: int,
              keep_prob: float, seed: int) -> np.ndarray:
  """The row mask behind `inject_marginal_skew`."""
  if not 0.0 <= keep_prob <= 1.0:
    raise Error('keep_prob must lie in [0, 1], got %r' % keep_prob)
  if target_value not in (0, 1):
    raise Error('target_value must be 0 or 1, got %r' % target_value)
  column = ds.schema.index(feature)
  code = ds.schema.category_index(feature, category)
  matching = np.flatnonzero((ds.features[:, column] == code) &
                            (ds.targets == target_value))
  keep = _round_half_up(keep_prob * matching.size)
  survivors = np.random.default_rng(seed).permutation(matching)[:keep]
  mask = np.ones(len(ds), dtype=bool)
  mask[matching] = False
  mask[survivors] = True
  logging.vlog(1, 'Skew on (%s=%s, y=%d): kept %d of %d rows', feature,
               category, target_value, keep, matching.size)
  return mask


def drop_feature(ds: Dataset, feature: str) -> Dataset:
  """Projects out one feature column; the result has a smaller schema."""
  if ds.schema.num_features < 2:
    raise SchemaError('Cannot drop the only feature')
  column = ds.schema.index(feature)
  return Dataset(
      ds.schema.without(feature),
      np.delete(ds.features, column, axis=1),
      ds.targets,
      party_label=ds.party_label,
      synthetic=ds.synthetic)


def _column(ds: Dataset, name: str) -> Tuple[Tuple[str, ...], np.ndarray]:
  if name == ds.schema.target_name:
    return TARGET_LABELS, ds.targets
  j = ds.schema.index(name)
  return ds.schema.features[j].categories, ds.features[:, j]


def two_way_marginal(ds: Dataset, feat_a: str, feat_b: str) -> MarginalTable:
  """Cell proportions for a feature pair; `feat_b` may name the target."""
  if not len(ds):
    raise Error('Marginals of an empty dataset are undefined')
  labels_a, codes_a = _column(ds, feat_a)
  labels_b, codes_b = _column(ds, feat_b)
  counts = np.zeros((len(labels_a), len(labels_b)), dtype=np.int64)
  np.add.at(counts, (codes_a, codes_b), 1)
  return MarginalTable(
      (feat_a, feat_b), {
          (a, b): counts[i, k] / len(ds)
          for i, a in enumerate(labels_a)
          for k, b in enumerate(labels_b)
      })


def one_way_marginal(ds: Dataset, feature: str) -> np.ndarray:
  _, codes = _column(ds, feature)
  cardinality = (len(TARGET_LABELS) if feature == ds.schema.target_name else
                 ds.schema.features[ds.schema.index(feature)].cardinality)
  return np.bincount(codes, minlength=cardinality) / max(len(ds), 1)


def encode_rows(schema: Schema, features: np.ndarray) -> np.ndarray:
  """Reference-coded one-hot rows with a leading intercept column."""
  features = np.asarray(features, dtype=np.int64).reshape(-1,
                                                          schema.num_features)
  design = np.zeros((features.shape[0], schema.one_hot_dim))
  design[:, 0] = 1.0
  offset = 1
  rows = np.arange(features.shape[0])
  for j, cardinality in enumerate(schema.cardinalities):
    codes = features[:, j]
    hit = codes > 0
    design[rows[hit], offset + codes[hit] - 1] = 1.0
    offset += cardinality - 1
  return design


def decode_rows(schema: Schema, design: np.ndarray) -> np.ndarray:
  """Inverse of `encode_rows`."""
  features = np.zeros((design.shape[0], schema.num_features), dtype=np.int64)
  offset = 1
  for j, cardinality in enumerate(schema.cardinalities):
    block = design[:, offset:offset + cardinality - 1]
    hit = block.any(axis=1)
    features[hit, j] = np.argmax(block[hit], axis=1) + 1
    offset += cardinality - 1
  return features


def one_hot_encode(ds: Dataset) -> Tuple[np.ndarray, np.ndarray]:
  """Returns the (n, p) design matrix and the float target vector."""
  if not len(ds):
    raise Error('Cannot encode an empty dataset')
  return encode_rows(ds.schema, ds.features), ds.targets.astype(np.float64)


def _simplex(values: Sequence[float], length: int, what: str) -> np.ndarray:
  probs = np.asarray(values, dtype=np.float64)
  if probs.shape != (length,):
    raise PopulationError('%s needs %d entries, got %d' %
                          (what, length, probs.size))
  if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-6:
    raise PopulationError('%s is not a probability simplex: %s' %
                          (what, probs.tolist()))
  return probs / probs.sum()


def population_ground_truth(pop_config, seed: int):
  """Builds the shared base model and each party's shifted model.

  Returns:
    (base params, list of (party name, party params)).
  """
  from twinshare import genmodel  # pylint: disable=g-import-not-at-top

  schema = Schema.from_proto(pop_config.schema)
  rng = np.random.default_rng(seed)
  num_components = pop_config.num_components
  if num_components < 1:
    raise PopulationError('num_components must be >= 1')
  if pop_config.mixture_weights:
    weights = _simplex(pop_config.mixture_weights, num_components,
                       'mixture_weights')
  else:
    weights = rng.dirichlet(np.ones(num_components))
  tables = []
  for spec, feature in zip(pop_config.schema.features, schema.features):
    marginal = (
        _simplex(spec.marginal, feature.cardinality, 'marginal of %s' %
                 feature.name) if spec.marginal else
        np.full(feature.cardinality, 1.0 / feature.cardinality))
    table = rng.dirichlet(pop_config.concentration * marginal + 1e-3,
                          size=num_components)
    tables.append(table)
  if pop_config.regression_weights:
    w = np.asarray(pop_config.regression_weights, dtype=np.float64)
    if w.shape != (schema.one_hot_dim,):
      raise PopulationError('regression_weights needs %d entries, got %d' %
                            (schema.one_hot_dim, w.size))
  else:
    w = rng.normal(0.0, pop_config.weight_scale, size=schema.one_hot_dim)
    w[0] = pop_config.intercept
  base = genmodel.GenerativeParams(schema, weights, tuple(tables), w)

  parties = []
  for i, party in enumerate(pop_config.parties):
    if party.size < 0:
      raise PopulationError('Party %r has negative size' % party.name)
    heterogeneity = (party.heterogeneity if party.HasField('heterogeneity')
                     else pop_config.heterogeneity)
    party_rng = np.random.default_rng([seed, i, 0])
    log_tilts = [
        heterogeneity * party_rng.standard_normal(c)
        for c in schema.cardinalities
    ]
    for tilt in party.tilts:
      j = schema.index(tilt.feature)
      log_tilts[j][schema.category_index(tilt.feature,
                                         tilt.category)] += tilt.log_factor
    shifted = []
    for table, log_tilt in zip(tables, log_tilts):
      tilted = table * np.exp(log_tilt - log_tilt.max())
      shifted.append(tilted / tilted.sum(axis=1, keepdims=True))
    parties.append(
        (party.name,
         genmodel.GenerativeParams(schema, weights, tuple(shifted), w)))
  return base, parties


def synthesize_population(pop_config, seed: int) -> List[Tuple[str, Dataset]]:
  """Draws every party's rows from its ground-truth model.

  Args:
    pop_config: a `protos.PopulationConfig` with schema and parties resolved.
    seed: master seed for the base model and all party draws.

  Returns:
    (party name, Dataset) pairs in config order, sizes exactly as configured.
  """
  from twinshare import genmodel  # pylint: disable=g-import-not-at-top

  _, parties = population_ground_truth(pop_config, seed)
  result = []
  for i, ((name, params), spec) in enumerate(zip(parties,
                                                pop_config.parties)):
    ds = genmodel.sample(params, spec.size, seed=[seed, i, 1])
    result.append((name, Dataset(ds.schema, ds.features, ds.targets,
                                 party_label=name)))
    logging.info('Synthesized party %s with %d rows', name, spec.size)
  return result
