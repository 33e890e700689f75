# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""Mixture of product-of-categoricals with a Poisson-regression target head.

The regressors follow a mixture over R components, each a product of
independent categoricals; the target follows Poisson(exp(w . x~)) where x~ is
the reference-coded one-hot row. Simplices are parameterized by softmax with
the last logit pinned to zero.
"""

import dataclasses
from typing import Optional, Sequence, Tuple

import jax
import jax.numpy as jnp
from jax.scipy import special as jsp_special
import numpy as np

from twinshare import protos
from twinshare import tabular

_SIMPLEX_TOLERANCE = 1e-9

TARGET_RULE = 'min(poisson_draw, 1)'


class Error(Exception):
  """Base error for the generative model."""


class ParamsError(Error, ValueError):
  """Parameters are inconsistent with their schema or not on the simplex."""


@dataclasses.dataclass(frozen=True)
class ParamLayout:
  """Coordinates of the flat unconstrained parameter vector.

  Order: R-1 mixture logits, then per feature an R x (c_j - 1) block of
  logits, then the p regression weights.
  """

  schema: tabular.Schema
  num_components: int

  @property
  def cardinalities(self) -> Tuple[int, ...]:
    return self.schema.cardinalities

  @property
  def size(self) -> int:
    r = self.num_components
    return (r - 1) + sum(r * (c - 1) for c in self.cardinalities
                        ) + self.schema.one_hot_dim

  def split(self, z):
    """Slices a flat vector (numpy or jax) into its three parts."""
    r = self.num_components
    offset = r - 1
    mixture_logits = z[:offset]
    table_logits = []
    for c in self.cardinalities:
      width = r * (c - 1)
      table_logits.append(z[offset:offset + width].reshape(r, c - 1))
      offset += width
    return mixture_logits, table_logits, z[offset:]


def _check_simplex(probs: np.ndarray, what: str) -> None:
  if (probs < 0).any() or np.any(
      np.abs(probs.sum(axis=-1) - 1.0) > _SIMPLEX_TOLERANCE):
    raise ParamsError('%s is not on the probability simplex' % what)


@dataclasses.dataclass(frozen=True, eq=False)
class GenerativeParams:
  """Constrained parameters of the generative model.

  Attributes:
    schema: schema the tables are shaped after.
    mixture_weights: (R,) simplex.
    component_tables: per feature an (R, c_j) array of row simplices.
    regression_weights: (p,) weights over the one-hot encoding.
  """

  schema: tabular.Schema
  mixture_weights: np.ndarray
  component_tables: Tuple[np.ndarray, ...]
  regression_weights: np.ndarray

  def __post_init__(self):
    weights = np.asarray(self.mixture_weights, dtype=np.float64)
    tables = tuple(np.asarray(t, dtype=np.float64)
                   for t in self.component_tables)
    w = np.asarray(self.regression_weights, dtype=np.float64)
    if weights.ndim != 1 or weights.size < 1:
      raise ParamsError('mixture_weights must be a non-empty vector')
    _check_simplex(weights, 'mixture_weights')
    if len(tables) != self.schema.num_features:
      raise ParamsError('Expected %d tables, got %d' %
                        (self.schema.num_features, len(tables)))
    for table, feature in zip(tables, self.schema.features):
      if table.shape != (weights.size, feature.cardinality):
        raise ParamsError('Table for %r has shape %s, expected %s' %
                          (feature.name, table.shape,
                           (weights.size, feature.cardinality)))
      _check_simplex(table, 'table of %r' % feature.name)
    if w.shape != (self.schema.one_hot_dim,):
      raise ParamsError('regression_weights needs %d entries, got %s' %
                        (self.schema.one_hot_dim, w.shape))
    object.__setattr__(self, 'mixture_weights', weights)
    object.__setattr__(self, 'component_tables', tables)
    object.__setattr__(self, 'regression_weights', w)

  @property
  def num_components(self) -> int:
    return self.mixture_weights.size

  @property
  def layout(self) -> ParamLayout:
    return ParamLayout(self.schema, self.num_components)

  def feature_marginals(self) -> Tuple[np.ndarray, ...]:
    """Per-feature marginals sum_r pi_r theta_j^(r)."""
    return tuple(self.mixture_weights @ t for t in self.component_tables)

  def to_proto(self):
    record = protos.GenerativeParamsRecord(
        num_components=self.num_components,
        mixture_weights=self.mixture_weights.tolist(),
        regression_weights=self.regression_weights.tolist())
    for feature, table in zip(self.schema.features, self.component_tables):
      for r, row in enumerate(table):
        record.tables.add(feature=feature.name, component=r,
                          probs=row.tolist())
    return record

  @classmethod
  def from_proto(cls, record, schema: tabular.Schema) -> 'GenerativeParams':
    r = record.num_components
    tables = [np.zeros((r, c)) for c in schema.cardinalities]
    for entry in record.tables:
      tables[schema.index(entry.feature)][entry.component] = entry.probs
    return cls(schema, np.asarray(record.mixture_weights), tuple(tables),
               np.asarray(record.regression_weights))


@dataclasses.dataclass(frozen=True, eq=False)
class UnconstrainedParams:
  """Softmax logits (last one pinned to zero) and raw regression weights."""

  schema: tabular.Schema
  mixture_logits: np.ndarray
  table_logits: Tuple[np.ndarray, ...]
  regression_weights: np.ndarray

  def __post_init__(self):
    arrays = [self.mixture_logits, self.regression_weights]
    arrays.extend(self.table_logits)
    if not all(np.isfinite(a).all() for a in arrays):
      raise ParamsError('Unconstrained parameters must be finite')

  @property
  def layout(self) -> ParamLayout:
    return ParamLayout(self.schema, self.mixture_logits.size + 1)

  def flatten(self) -> np.ndarray:
    parts = [np.ravel(self.mixture_logits)]
    parts.extend(np.ravel(t) for t in self.table_logits)
    parts.append(np.ravel(self.regression_weights))
    return np.concatenate(parts).astype(np.float64)

  @classmethod
  def from_flat(cls, layout: ParamLayout, z) -> 'UnconstrainedParams':
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (layout.size,):
      raise ParamsError('Flat vector has shape %s, expected (%d,)' %
                        (z.shape, layout.size))
    mixture_logits, table_logits, w = layout.split(z)
    return cls(layout.schema, mixture_logits, tuple(table_logits), w)


def _pinned_softmax(logits: np.ndarray) -> np.ndarray:
  padded = np.concatenate(
      [logits, np.zeros(logits.shape[:-1] + (1,))], axis=-1)
  padded -= padded.max(axis=-1, keepdims=True)
  expd = np.exp(padded)
  return expd / expd.sum(axis=-1, keepdims=True)


def constrain(u: UnconstrainedParams) -> GenerativeParams:
  return GenerativeParams(
      u.schema, _pinned_softmax(np.asarray(u.mixture_logits)),
      tuple(_pinned_softmax(np.asarray(t)) for t in u.table_logits),
      np.asarray(u.regression_weights))


def unconstrain(params: GenerativeParams) -> UnconstrainedParams:
  with np.errstate(divide='ignore'):
    log_weights = np.log(params.mixture_weights)
    log_tables = [np.log(t) for t in params.component_tables]
  return UnconstrainedParams(
      params.schema, log_weights[:-1] - log_weights[-1],
      tuple(t[:, :-1] - t[:, -1:] for t in log_tables),
      params.regression_weights.copy())


def constrain_flat(layout: ParamLayout, z) -> GenerativeParams:
  return constrain(UnconstrainedParams.from_flat(layout, z))


def _log_joint_rows(log_weights, log_tables, w, x_idx, x_tilde, y):
  """Per-row log p(x, y) from log-parameters; traceable by jax."""
  comp = jnp.broadcast_to(log_weights, (x_idx.shape[0], log_weights.shape[0]))
  for j, log_table in enumerate(log_tables):
    comp = comp + log_table[:, x_idx[:, j]].T
  eta = x_tilde @ w
  return (jsp_special.logsumexp(comp, axis=1) + y * eta - jnp.exp(eta) -
          jsp_special.gammaln(y + 1.0))


def log_joint_flat(z, layout: ParamLayout, x_idx, x_tilde, y):
  """log p(x_i, y_i | constrain(z)) for each row; differentiable in z."""
  mixture_logits, table_logits, w = layout.split(z)
  log_weights = jax.nn.log_softmax(jnp.append(mixture_logits, 0.0))
  log_tables = [
      jax.nn.log_softmax(
          jnp.concatenate([t, jnp.zeros((t.shape[0], 1))], axis=1), axis=1)
      for t in table_logits
  ]
  return _log_joint_rows(log_weights, log_tables, w, x_idx, x_tilde, y)


def log_density_rows(params: GenerativeParams, x_idx: np.ndarray,
                     y: np.ndarray) -> np.ndarray:
  """Vectorized `log_density` over rows of category indices."""
  x_idx = np.asarray(x_idx, dtype=np.int64).reshape(
      -1, params.schema.num_features)
  bounds = np.asarray(params.schema.cardinalities)
  if ((x_idx < 0) | (x_idx >= bounds)).any():
    raise ParamsError('Category index out of range for the schema')
  x_tilde = tabular.encode_rows(params.schema, x_idx)
  with np.errstate(divide='ignore'):
    log_weights = np.log(params.mixture_weights)
    log_tables = [np.log(t) for t in params.component_tables]
  return np.asarray(
      _log_joint_rows(
          jnp.asarray(log_weights), [jnp.asarray(t) for t in log_tables],
          jnp.asarray(params.regression_weights), jnp.asarray(x_idx),
          jnp.asarray(x_tilde), jnp.asarray(y, dtype=jnp.float64).reshape(-1)))


def log_density(params: GenerativeParams, x: Sequence[int], y: int) -> float:
  """log p(x, y) = log sum_r pi_r prod_j theta_j^(r)(x_j) + log Poisson(y)."""
  return float(log_density_rows(params, np.asarray(x)[None, :], [y])[0])


def sample(params: GenerativeParams,
           n: int,
           seed,
           party_label: Optional[str] = None) -> tabular.Dataset:
  """Draws n independent rows; the target is min(Poisson draw, 1)."""
  if n < 0:
    raise Error('Cannot sample %d rows' % n)
  rng = np.random.default_rng(seed)
  schema = params.schema
  components = rng.choice(params.num_components, size=n,
                          p=params.mixture_weights)
  features = np.empty((n, schema.num_features), dtype=np.int64)
  for j, table in enumerate(params.component_tables):
    cdf = np.cumsum(table[components], axis=1)
    u = rng.random(n)
    features[:, j] = np.minimum((u[:, None] >= cdf).sum(axis=1),
                                table.shape[1] - 1)
  eta = tabular.encode_rows(schema, features) @ params.regression_weights
  # exp(-1e6) underflows, so larger rates never yield a zero draw.
  rate = np.minimum(np.exp(np.minimum(eta, 20.0)), 1e6)
  targets = np.minimum(rng.poisson(rate), 1)
  return tabular.Dataset(schema, features, targets, party_label=party_label,
                         synthetic=True)
