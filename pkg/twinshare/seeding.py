# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""Seed tree: every stochastic call is keyed by its place in the experiment.

A seed depends only on the master seed and the path naming the call, e.g.
('baseline_sharing', 'party-3', 'repeat', 2, 'train'), so any sub-scenario
reproduces its slice of a full run when re-run on its own.
"""

import zlib
from typing import Union

import numpy as np

PathPart = Union[int, str]


def _key(part: PathPart) -> int:
  if isinstance(part, (bool, np.bool_)):
    raise TypeError('Seed path parts must be int or str, got bool')
  if isinstance(part, (int, np.integer)):
    if part < 0:
      raise ValueError('Seed path integers must be >= 0, got %d' % part)
    return int(part)
  if isinstance(part, str):
    return zlib.crc32(part.encode('utf-8'))
  raise TypeError('Seed path parts must be int or str, got %r' % (part,))


class SeedTree:
  """Derives independent 63-bit seeds from a master seed and a path."""

  def __init__(self, master_seed: int):
    if master_seed < 0:
      raise ValueError('master_seed must be >= 0')
    self._master = int(master_seed)

  @property
  def master_seed(self) -> int:
    return self._master

  def seed(self, *path: PathPart) -> int:
    sequence = np.random.SeedSequence(
        entropy=self._master, spawn_key=tuple(_key(p) for p in path))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))

  def rng(self, *path: PathPart) -> np.random.Generator:
    return np.random.default_rng(self.seed(*path))
