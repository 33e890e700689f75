# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""Access audit for raw (non-synthetic) party data.

The experiment runner keeps every party's real rows in a `RawDataVault`.
Reading them requires naming the accessor; only the owning party, or the
evaluator building reference arms, may do so. Any other access is counted
and refused.
"""

import collections
import threading
from typing import Dict, Tuple

from absl import logging

from twinshare import tabular

EVALUATOR = '__evaluator__'


class Error(Exception):
  """Base error for the access audit."""


class PrivacyFlowError(Error):
  """A party tried to read another party's raw data."""


class RawDataVault:
  """Thread-safe store of raw datasets keyed by (owner, name)."""

  def __init__(self):
    self._lock = threading.Lock()
    self._data: Dict[Tuple[str, str], tabular.Dataset] = {}
    self._reads = collections.Counter()
    self._violations = 0

  def deposit(self, owner: str, name: str, ds: tabular.Dataset) -> None:
    if ds.synthetic:
      raise Error('Synthetic data does not belong in the raw-data vault')
    with self._lock:
      self._data[(owner, name)] = ds

  def open(self, owner: str, name: str, accessor: str) -> tabular.Dataset:
    """Returns the dataset if `accessor` may read it.

    Raises:
      PrivacyFlowError: `accessor` is neither the owner nor the evaluator.
      KeyError: nothing was deposited under (owner, name).
    """
    with self._lock:
      if accessor not in (owner, EVALUATOR):
        self._violations += 1
        logging.error('Party %r attempted to read raw %r of party %r',
                      accessor, name, owner)
        raise PrivacyFlowError('Party %r may not read raw data of %r' %
                               (accessor, owner))
      self._reads[accessor] += 1
      return self._data[(owner, name)]

  @property
  def cross_party_accesses(self) -> int:
    with self._lock:
      return self._violations

  def reads_by(self, accessor: str) -> int:
    with self._lock:
      return self._reads[accessor]
