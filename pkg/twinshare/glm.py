# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""Poisson regression with log link, fitted by Fisher scoring."""

import dataclasses
from typing import Optional, Sequence

from absl import logging
import numpy as np
from scipy import linalg
from scipy import special

from twinshare import protos
from twinshare import tabular

RIDGE = 1e-8
MAX_CONDITION = 1e12
STEP_TOLERANCE = 1e-6
# Linear predictors above this are capped before exp() in the utility.
ETA_CAP = 500.0
_MAX_HALVINGS = 40


class Error(Exception):
  """Base error for regression fits."""


class FitError(Error, ValueError):
  """The design or response cannot be fitted."""


@dataclasses.dataclass(frozen=True, eq=False)
class RegressionFit:
  """Maximum-likelihood coefficients and their standard errors."""

  coefficients: np.ndarray
  std_errors: np.ndarray
  converged: bool
  iterations: int
  ridge_rescued: bool = False

  def __post_init__(self):
    w = np.asarray(self.coefficients, dtype=np.float64)
    se = np.asarray(self.std_errors, dtype=np.float64)
    if w.ndim != 1 or se.shape != w.shape:
      raise Error('coefficients and std_errors must be equal-length vectors')
    if self.converged and not (np.isfinite(se).all() and (se > 0).all()):
      raise Error('A converged fit needs finite positive standard errors')
    object.__setattr__(self, 'coefficients', w)
    object.__setattr__(self, 'std_errors', se)

  def to_proto(self, coefficient_names: Sequence[str] = ()):
    return protos.FitRecord(
        coefficient_names=list(coefficient_names),
        coefficients=self.coefficients.tolist(),
        std_errors=self.std_errors.tolist(),
        converged=self.converged,
        iterations=self.iterations,
        ridge_rescued=self.ridge_rescued)


def log_likelihood(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
  """sum_i y_i * eta_i - exp(eta_i), the Poisson log-likelihood up to log y!."""
  eta = X @ w
  return float(y @ eta - np.exp(eta).sum())


def score(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
  return X.T @ (y - np.exp(X @ w))


def _information(w, X):
  mu = np.exp(X @ w)
  return (X * mu[:, None]).T @ X


def _needs_ridge(info: np.ndarray) -> bool:
  return not np.isfinite(info).all() or np.linalg.cond(info) > MAX_CONDITION


def _solve(info: np.ndarray, rhs: np.ndarray, ridge: bool) -> np.ndarray:
  if ridge:
    info = info + RIDGE * np.eye(info.shape[0])
  try:
    solution = linalg.solve(info, rhs, assume_a='pos')
  except (linalg.LinAlgError, ValueError) as e:
    raise FitError('Fisher information is singular beyond ridge rescue: %s' %
                   e) from None
  if not np.isfinite(solution).all():
    raise FitError('Fisher scoring produced a non-finite step')
  return solution


def fit_poisson(X,
                y,
                max_iterations: int = 100,
                tolerance: float = 1e-8,
                start: Optional[np.ndarray] = None) -> RegressionFit:
  """Maximizes sum_i y_i w.x_i - exp(w.x_i) by Fisher scoring.

  Each Newton step is halved until the log-likelihood does not decrease. The
  fit converges when max |score| < tolerance and the last step moved no
  coordinate by more than STEP_TOLERANCE; a maximum at infinity (separated
  data) therefore never converges. When the information matrix has condition
  number above MAX_CONDITION, RIDGE * I is added and the fit is flagged.

  Args:
    X: (n, p) design matrix.
    y: length-n response with values in {0, 1}.
    max_iterations: iteration cap.
    tolerance: score tolerance.
    start: initial coefficients; zero by default.

  Returns:
    A RegressionFit with SE = sqrt(diag(inverse information)) at the final w.

  Raises:
    FitError: n < p, y is not binary, or the information stays singular.
  """
  X = np.asarray(X, dtype=np.float64)
  y = np.asarray(y, dtype=np.float64)
  if X.ndim != 2 or y.shape != (X.shape[0],):
    raise FitError('Design %s and response %s do not match' %
                   (X.shape, y.shape))
  n, p = X.shape
  if n < p:
    raise FitError('Need at least p=%d rows, got %d' % (p, n))
  if not np.isin(y, (0.0, 1.0)).all():
    raise FitError('Response must be binary')
  w = np.zeros(p) if start is None else np.array(start, dtype=np.float64)
  if w.shape != (p,):
    raise FitError('start has shape %s, expected (%d,)' % (w.shape, p))

  ridge = False
  converged = False
  last_step = np.inf
  current = log_likelihood(w, X, y)
  iteration = 0
  for iteration in range(1, max_iterations + 1):
    grad = score(w, X, y)
    if np.max(np.abs(grad)) < tolerance and last_step < STEP_TOLERANCE:
      converged = True
      iteration -= 1
      break
    info = _information(w, X)
    if not ridge and _needs_ridge(info):
      ridge = True
      logging.warning('Ill-conditioned Fisher information; adding %g * I',
                      RIDGE)
    step = _solve(info, grad, ridge)
    scale = 1.0
    for _ in range(_MAX_HALVINGS):
      candidate = w + scale * step
      value = log_likelihood(candidate, X, y)
      if np.isfinite(value) and value >= current:
        break
      scale /= 2.0
    else:
      candidate, value = w, current
    last_step = float(np.max(np.abs(candidate - w)))
    w, current = candidate, value
  else:
    grad = score(w, X, y)
    converged = (np.max(np.abs(grad)) < tolerance and
                 last_step < STEP_TOLERANCE)

  info = _information(w, X)
  if not ridge and _needs_ridge(info):
    ridge = True
  covariance = _solve(info, np.eye(p), ridge)
  std_errors = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
  if converged and not (std_errors > 0).all():
    converged = False
  if not converged:
    logging.vlog(1, 'Poisson fit did not converge in %d iterations',
                 max_iterations)
  return RegressionFit(w, std_errors, converged, iteration, ridge)


def fit_dataset(ds: tabular.Dataset, **kwargs) -> RegressionFit:
  """Fits on the reference-coded one-hot encoding of `ds`."""
  X, y = tabular.one_hot_encode(ds)
  return fit_poisson(X, y, **kwargs)


def predict(w, x, schema: tabular.Schema) -> np.ndarray:
  """argmax over y in {0, 1} of the Poisson mass; ties go to 0.

  Args:
    w: coefficients over the one-hot encoding.
    x: one category-index row or an (n, d) array of rows.
    schema: schema of the rows.

  Returns:
    int64 predictions, one per row.
  """
  w = np.asarray(w, dtype=np.float64)
  if w.shape != (schema.one_hot_dim,):
    raise Error('w has %d entries, the encoding needs %d' %
                (w.size, schema.one_hot_dim))
  eta = tabular.encode_rows(schema, x) @ w
  return (eta > 0).astype(np.int64)


def log_likelihoods(weights, test: tabular.Dataset,
                    normalize: bool = True) -> np.ndarray:
  """Test log-likelihood of each row of a (k, p) weight matrix."""
  if not len(test):
    raise Error('The test set is empty')
  weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
  X, y = tabular.one_hot_encode(test)
  if weights.shape[1] != X.shape[1]:
    raise Error('Weights have %d columns, the encoding needs %d' %
                (weights.shape[1], X.shape[1]))
  eta = np.minimum(X @ weights.T, ETA_CAP)
  per_row = y[:, None] * eta - np.exp(eta) - special.gammaln(y + 1.0)[:, None]
  total = per_row.sum(axis=0)
  return total / len(test) if normalize else total


def test_log_likelihood(w, test: tabular.Dataset,
                        normalize: bool = True) -> float:
  """sum_i y_i log(lambda_i) - lambda_i - log(y_i!), optionally per row."""
  return float(log_likelihoods(w, test, normalize)[0])
