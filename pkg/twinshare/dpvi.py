# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""Differentially private variational inference for the generative model.

The posterior over the flat unconstrained parameter vector z is a mean-field
Gaussian q(z) = N(mean, diag(exp(2 log_std))). Each example contributes

  log p(x_i, y_i | z) + (1/N) [log prior(z) - log q(z)]

evaluated at the reparameterized draw z = mean + exp(log_std) * eta. DP-SGD
clips the per-example gradients of that term with respect to (mean, log_std),
adds Gaussian noise and ascends the result with Adam.
"""

import dataclasses
import functools
import math
from typing import Callable, Optional, Tuple

from absl import logging
import jax
import jax.numpy as jnp
from jax.scipy import stats as jsp_stats
import numpy as np
import optax

from twinshare import genmodel
from twinshare import privacy
from twinshare import protos
from twinshare import tabular

_MIN_BUCKET = 8


class Error(Exception):
  """Base error for DPVI training."""


class LedgerError(Error):
  """A finished run spent more privacy than it was given."""


@dataclasses.dataclass(frozen=True)
class GaussianPrior:
  """Independent N(0, scale^2) on every unconstrained coordinate."""

  scale: float = 1.0
  weight: float = 1.0


@dataclasses.dataclass(frozen=True)
class DpviConfig:
  """Hyperparameters of one DPVI training run.

  Attributes:
    epsilon: target epsilon.
    delta: target delta; 1/N of the training set when None.
    clip_norm: per-example gradient norm bound C.
    batch_size: expected Poisson batch size b, capped at N.
    iterations: number of DP-SGD steps T.
    step_size: base Adam learning rate.
    decay: learning rate at step t is step_size / sqrt(1 + decay * t).
    mc_samples: reparameterized draws per gradient.
    prior: prior on the unconstrained coordinates.
    num_components: mixture components R.
    seed: seed of every stochastic choice in the run.
    non_private: disables clipping and noise; the run then carries no
      privacy guarantee.
    init_log_std: initial log standard deviation of every coordinate.
  """

  epsilon: float = 1.0
  delta: Optional[float] = None
  clip_norm: float = 2.0
  batch_size: int = 100
  iterations: int = 2000
  step_size: float = 1e-2
  decay: float = 1e-3
  mc_samples: int = 1
  prior: GaussianPrior = GaussianPrior()
  num_components: int = 16
  seed: int = 0
  non_private: bool = False
  init_log_std: float = -2.0

  def __post_init__(self):
    if not self.non_private and self.epsilon <= 0:
      raise Error('epsilon must be > 0')
    if self.delta is not None and not 0.0 < self.delta < 1.0:
      raise Error('delta must lie in (0, 1)')
    for name in ('clip_norm', 'batch_size', 'step_size', 'mc_samples',
                 'num_components'):
      if getattr(self, name) <= 0:
        raise Error('%s must be positive, got %r' %
                    (name, getattr(self, name)))
    if self.iterations < 0 or self.decay < 0 or self.prior.scale <= 0:
      raise Error('iterations, decay and the prior scale must be '
                  'nonnegative / positive')

  @classmethod
  def from_settings(cls, settings, epsilon: float, seed: int,
                    delta: Optional[float] = None) -> 'DpviConfig':
    """Builds a config from a `protos.DpviSettings` message."""
    return cls(
        epsilon=epsilon,
        delta=delta,
        clip_norm=settings.clip_norm,
        batch_size=settings.batch_size,
        iterations=settings.iterations,
        step_size=settings.step_size,
        decay=settings.decay,
        mc_samples=settings.mc_samples,
        prior=GaussianPrior(scale=settings.prior_scale),
        num_components=settings.num_components,
        seed=seed,
        non_private=settings.non_private,
        init_log_std=settings.init_log_std)


@dataclasses.dataclass(frozen=True, eq=False)
class VariationalPosterior:
  """Mean-field Gaussian over the unconstrained coordinates of `layout`."""

  layout: genmodel.ParamLayout
  mean: np.ndarray
  log_std: np.ndarray

  def __post_init__(self):
    mean = np.asarray(self.mean, dtype=np.float64)
    log_std = np.asarray(self.log_std, dtype=np.float64)
    if mean.shape != (self.layout.size,) or log_std.shape != mean.shape:
      raise Error('Posterior vectors must have length %d, got %s and %s' %
                  (self.layout.size, mean.shape, log_std.shape))
    if not (np.isfinite(mean).all() and np.isfinite(log_std).all()):
      raise Error('Posterior entries must be finite')
    object.__setattr__(self, 'mean', mean)
    object.__setattr__(self, 'log_std', log_std)

  @classmethod
  def initial(cls, layout: genmodel.ParamLayout,
              log_std: float = -2.0) -> 'VariationalPosterior':
    return cls(layout, np.zeros(layout.size),
               np.full(layout.size, float(log_std)))

  @property
  def flat(self) -> np.ndarray:
    return np.concatenate([self.mean, self.log_std])

  def point_estimate(self) -> genmodel.GenerativeParams:
    return genmodel.constrain_flat(self.layout, self.mean)

  def to_proto(self, accountant_summary=None):
    record = protos.PosteriorRecord(
        schema=self.layout.schema.to_proto(),
        num_components=self.layout.num_components,
        mean=self.mean.tolist(),
        log_std=self.log_std.tolist())
    record.point_estimate.CopyFrom(self.point_estimate().to_proto())
    if accountant_summary is not None:
      record.accountant.CopyFrom(accountant_summary)
    return record

  @classmethod
  def from_proto(cls, record) -> 'VariationalPosterior':
    layout = genmodel.ParamLayout(
        tabular.Schema.from_proto(record.schema), record.num_components)
    return cls(layout, np.asarray(record.mean), np.asarray(record.log_std))


def _regularizer(z, mean, log_std, prior_scale, prior_weight):
  """weight * log prior(z) - log q(z | mean, log_std)."""
  log_prior = jnp.sum(jsp_stats.norm.logpdf(z, 0.0, prior_scale))
  log_q = jnp.sum(jsp_stats.norm.logpdf(z, mean, jnp.exp(log_std)))
  return prior_weight * log_prior - log_q


def _as_flat(params_draw, layout: genmodel.ParamLayout) -> np.ndarray:
  if isinstance(params_draw, genmodel.GenerativeParams):
    params_draw = genmodel.unconstrain(params_draw)
  if isinstance(params_draw, genmodel.UnconstrainedParams):
    return params_draw.flatten()
  z = np.asarray(params_draw, dtype=np.float64)
  if z.shape != (layout.size,):
    raise Error('Parameter draw has shape %s, expected (%d,)' %
                (z.shape, layout.size))
  return z


def _check_batch(batch: tabular.Dataset, n_total: int) -> None:
  if not len(batch):
    raise Error('The batch is empty')
  if n_total < len(batch):
    raise Error('N=%d is smaller than the batch (%d rows)' %
                (n_total, len(batch)))


def elbo_terms(posterior: VariationalPosterior, params_draw,
               batch: tabular.Dataset, n_total: int,
               prior: GaussianPrior = GaussianPrior()) -> np.ndarray:
  """Per-example ELBO contributions at one parameter draw.

  Args:
    posterior: the variational posterior the draw came from.
    params_draw: a flat unconstrained vector, `UnconstrainedParams` or
      `GenerativeParams`.
    batch: rows to evaluate.
    n_total: size N of the full training set.
    prior: prior on the unconstrained coordinates.

  Returns:
    Vector whose i-th entry is log p(x_i, y_i | z) + (log prior(z) -
    log q(z)) / N. Its sum times N / len(batch) estimates the ELBO.
  """
  _check_batch(batch, n_total)
  z = jnp.asarray(_as_flat(params_draw, posterior.layout))
  x_tilde, y = tabular.one_hot_encode(batch)
  log_lik = genmodel.log_joint_flat(z, posterior.layout,
                                    jnp.asarray(batch.features),
                                    jnp.asarray(x_tilde), jnp.asarray(y))
  reg = _regularizer(z, jnp.asarray(posterior.mean),
                     jnp.asarray(posterior.log_std), prior.scale, prior.weight)
  return np.asarray(log_lik + reg / n_total)


def standard_normal_draws(dim: int, seed, num: int = 1) -> np.ndarray:
  """The (num, dim) block of eta shared by all rows of a batch."""
  return np.random.default_rng(seed).standard_normal((num, dim))


LogLik = Callable[..., jnp.ndarray]


@functools.lru_cache(maxsize=None)
def _value_and_grad_fn(layout: genmodel.ParamLayout, log_lik: LogLik):
  """Jitted per-example (term, gradient) over a padded batch."""
  dim = layout.size

  def term(params, etas, x_idx, x_tilde, y, n_total, prior_scale,
           prior_weight):
    mean, log_std = params[:dim], params[dim:]

    def one_draw(eta):
      z = mean + jnp.exp(log_std) * eta
      ll = log_lik(z, layout, x_idx[None, :], x_tilde[None, :], y[None])[0]
      return ll + _regularizer(z, mean, log_std, prior_scale,
                               prior_weight) / n_total

    return jnp.mean(jax.vmap(one_draw)(etas))

  return jax.jit(
      jax.vmap(
          jax.value_and_grad(term),
          in_axes=(None, None, 0, 0, 0, None, None, None)))


def _bucket(n: int) -> int:
  return max(_MIN_BUCKET, 1 << max(n - 1, 0).bit_length())


def _evaluate(layout, params, etas, x_idx, x_tilde, y, n_total, prior,
              log_lik) -> Tuple[np.ndarray, np.ndarray]:
  """Returns per-example terms and gradients for the rows given."""
  rows = x_idx.shape[0]
  pad = _bucket(rows) - rows
  if pad:
    x_idx = np.concatenate([x_idx, np.zeros((pad, x_idx.shape[1]), np.int64)])
    x_tilde = np.concatenate([x_tilde, np.zeros((pad, x_tilde.shape[1]))])
    y = np.concatenate([y, np.zeros(pad)])
  values, grads = _value_and_grad_fn(layout, log_lik)(
      jnp.asarray(params), jnp.asarray(etas), jnp.asarray(x_idx),
      jnp.asarray(x_tilde), jnp.asarray(y), float(n_total),
      float(prior.scale), float(prior.weight))
  return np.asarray(values)[:rows], np.asarray(grads)[:rows]


def per_example_grads(posterior: VariationalPosterior,
                      batch: tabular.Dataset,
                      n_total: int,
                      prior: GaussianPrior,
                      seed,
                      mc_samples: int = 1,
                      log_lik: Optional[LogLik] = None) -> np.ndarray:
  """Gradients of each example's ELBO term with respect to the posterior.

  The draws are eta = standard_normal_draws(dim, seed, mc_samples), shared by
  every row; with several draws the terms are averaged before
  differentiation.

  Args:
    posterior: current variational posterior.
    batch: rows to differentiate.
    n_total: size N of the full training set.
    prior: prior on the unconstrained coordinates.
    seed: seed of the reparameterization draws.
    mc_samples: number of draws.
    log_lik: per-row log-likelihood with the signature of
      `genmodel.log_joint_flat`; the generative model by default.

  Returns:
    Array of shape (len(batch), 2 * dim): d/d mean, then d/d log_std.
  """
  _check_batch(batch, n_total)
  etas = standard_normal_draws(posterior.layout.size, seed, mc_samples)
  x_tilde, y = tabular.one_hot_encode(batch)
  _, grads = _evaluate(posterior.layout, posterior.flat, etas,
                       np.asarray(batch.features), x_tilde, y, n_total, prior,
                       log_lik or genmodel.log_joint_flat)
  return grads


@functools.lru_cache(maxsize=None)
def _optimizer(step_size: float, decay: float):
  opt = optax.adam(lambda count: step_size / jnp.sqrt(1.0 + decay * count))

  @jax.jit
  def ascend(params, state, direction):
    updates, state = opt.update(-direction, state, params)
    return optax.apply_updates(params, updates), state

  return opt, ascend


def _target_delta(config: DpviConfig, n: int) -> float:
  return config.delta if config.delta is not None else 1.0 / n


def train(dataset: tabular.Dataset,
          config: DpviConfig,
          on_step: Optional[Callable[[int, float], None]] = None
         ) -> Tuple[VariationalPosterior, privacy.AccountantState]:
  """Runs DP-SGD on the reparameterized ELBO.

  Args:
    dataset: the party's training rows.
    config: run hyperparameters.
    on_step: called with (step, minibatch ELBO estimate) after each update.

  Returns:
    The trained posterior and the accountant of the run.

  Raises:
    privacy.CalibrationError: the budget cannot be met; raised before any
      row is read.
    LedgerError: the finished run exceeds its budget.
  """
  n = len(dataset)
  if not n:
    raise Error('Cannot train on an empty dataset')
  layout = genmodel.ParamLayout(dataset.schema, config.num_components)
  q = min(1.0, config.batch_size / n)
  delta = _target_delta(config, n)
  steps = config.iterations
  if config.non_private:
    sigma, clip_norm = 0.0, math.inf
  elif steps == 0:
    sigma, clip_norm = 0.0, config.clip_norm
  else:
    sigma = privacy.calibrate_sigma(
        privacy.PrivacyBudget(config.epsilon, delta), q, steps)
    clip_norm = config.clip_norm
  accountant = privacy.AccountantState(q, sigma, steps)
  logging.info('DPVI: N=%d q=%.4g sigma=%.4g T=%d C=%g%s', n, q, sigma, steps,
               clip_norm, ' (non-private)' if config.non_private else '')

  initial = VariationalPosterior.initial(layout, config.init_log_std)
  x_idx = np.asarray(dataset.features)
  x_tilde, y = tabular.one_hot_encode(dataset)
  opt, ascend = _optimizer(float(config.step_size), float(config.decay))
  params = jnp.asarray(initial.flat)
  state = opt.init(params)
  rng = np.random.default_rng(config.seed)
  dim = layout.size
  for t in range(steps):
    batch = np.flatnonzero(rng.random(n) < q)
    etas = rng.standard_normal((config.mc_samples, dim))
    if batch.size:
      values, grads = _evaluate(layout, params, etas, x_idx[batch],
                                x_tilde[batch], y[batch], n, config.prior,
                                genmodel.log_joint_flat)
    else:
      values, grads = np.zeros(0), np.zeros((0, 2 * dim))
    direction = privacy.clip_and_noise(grads, clip_norm, sigma, rng,
                                       denominator=q * n)
    params, state = ascend(params, state, jnp.asarray(direction))
    elbo = float(values.sum()) * n / max(batch.size, 1)
    if on_step is not None:
      on_step(t, elbo)
    if t % 100 == 0:
      logging.vlog(2, 'DPVI step %d: batch=%d elbo~%.4f', t, batch.size, elbo)

  params = np.asarray(params)
  posterior = VariationalPosterior(layout, params[:dim], params[dim:])
  if not config.non_private and steps:
    spent = accountant.epsilon(delta)
    if spent > config.epsilon:
      raise LedgerError('Run spent epsilon=%g over its budget %g' %
                        (spent, config.epsilon))
  return posterior, accountant


def accountant_summary(accountant: privacy.AccountantState,
                       config: DpviConfig,
                       num_examples: int,
                       party: str = '',
                       repeat: int = 0):
  """The `protos.AccountantSummary` recorded for a finished run."""
  delta = _target_delta(config, num_examples)
  return protos.AccountantSummary(
      party=party,
      repeat=repeat,
      subsample_rate=accountant.subsample_rate,
      noise_multiplier=accountant.noise_multiplier,
      steps=accountant.steps,
      epsilon=accountant.epsilon(delta),
      delta=delta,
      target_epsilon=config.epsilon,
      num_examples=num_examples,
      clip_norm=config.clip_norm,
      batch_size=config.batch_size,
      non_private=config.non_private,
      seed=config.seed)


def draw_generator(posterior: VariationalPosterior,
                   seed) -> genmodel.GenerativeParams:
  """One posterior draw z ~ N(mean, diag(exp(2 log_std))), constrained."""
  eta = np.random.default_rng(seed).standard_normal(posterior.layout.size)
  z = posterior.mean + np.exp(posterior.log_std) * eta
  return genmodel.constrain_flat(posterior.layout, z)
