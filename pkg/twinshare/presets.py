# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""Named synthetic populations and reference tables of the cohort geometry.

Two populations are available:

  desk:   8 parties of 300-800 rows with per-party heterogeneity; one party
          over-represents the majority ethnicity. Scenarios finish in minutes.
  ukb16:  16 parties sized like the assessment centers of the cohort, with
          the largest center skewed towards the majority ethnicity.

The regression head of both populations is derived from the published
(ethnicity, test result) two-way marginal of the full cohort.
"""

import math
from typing import Dict, Tuple

import numpy as np

from twinshare import protos
from twinshare import tabular

TARGET_NAME = 'covid_test_positive'

FEATURES = (
    ('sex', ('Female', 'Male'), (0.54, 0.46)),
    ('age_group', ('<50', '50-64', '65+'), (0.30, 0.50, 0.20)),
    ('deprivation', ('Q1', 'Q2', 'Q3', 'Q4'), (0.25, 0.25, 0.25, 0.25)),
    ('ethnicity', ('White British', 'White Other', 'White Irish',
                   'South Asian', 'Black', 'Other', 'Mixed', 'Chinese'),
     None),
    ('education', ('Degree', 'A levels', 'O levels', 'Professional', 'None'),
     (0.33, 0.12, 0.27, 0.10, 0.18)),
)

# Total and training-set sizes of the assessment centers.
CENTER_SIZES = {
    'Newcastle': (5922, 4737),
    'Bristol': (5860, 4688),
    'Reading': (4479, 3583),
    'Leeds': (4424, 3539),
    'Bury': (4345, 3476),
    'Nottingham': (4236, 3388),
    'Hounslow': (3984, 3187),
    'Liverpool': (3946, 3156),
    'Croydon': (3513, 2810),
    'Birmingham': (3271, 2616),
    'Sheffield': (3042, 2433),
    'Middlesborough': (2857, 2285),
    'Stoke': (2715, 2172),
    'Barts': (1918, 1534),
    'Manchester': (1874, 1499),
    'Oxford': (1867, 1493),
}

# Percent of (ethnicity, negative) and (ethnicity, positive) rows.
ETHNICITY_TARGET_PERCENT = {
    'full_cohort': {
        'White British': (19.94, 68.33),
        'White Other': (2.38, 0.73),
        'White Irish': (2.04, 0.61),
        'South Asian': (1.33, 0.94),
        'Black': (1.20, 0.94),
        'Other': (0.62, 0.34),
        'Mixed': (0.41, 0.19),
        'Chinese': (0.14, 0.05),
    },
    'newcastle': {
        'White British': (18.89, 77.64),
        'White Other': (0.92, 0.14),
        'White Irish': (0.88, 0.19),
        'South Asian': (0.36, 0.17),
        'Black': (0.08, 0.06),
        'Other': (0.19, 0.08),
        'Mixed': (0.27, 0.04),
        'Chinese': (0.04, 0.0),
    },
}

# Share of 'White British' rows in the full cohort and at Newcastle.
WHITE_BRITISH_SHARE = {'full_cohort': 88.28, 'newcastle': 96.54}

# Small effects of the non-ethnicity coefficients, in encoding order.
_OTHER_EFFECTS = {
    'sex': (0.05,),
    'age_group': (-0.10, -0.20),
    'deprivation': (0.05, 0.10, 0.15),
    'education': (0.05, 0.08, 0.03, 0.10),
}

DESK_SIZES = (800, 720, 650, 580, 510, 440, 370, 300)


class Error(Exception):
  """Base error for presets."""


class UnknownPresetError(Error, KeyError):
  pass


def schema() -> tabular.Schema:
  return tabular.Schema(
      tuple(tabular.Feature(name, cats) for name, cats, _ in FEATURES),
      TARGET_NAME)


def ethnicity_marginal(cohort: str = 'full_cohort') -> np.ndarray:
  table = ETHNICITY_TARGET_PERCENT[cohort]
  categories = dict((n, c) for n, c, _ in FEATURES)['ethnicity']
  mass = np.array([sum(table[c]) for c in categories])
  return mass / mass.sum()


def reference_two_way_marginal(cohort: str) -> tabular.MarginalTable:
  """The (ethnicity, target) marginal of `cohort`, renormalized to sum to 1."""
  table = ETHNICITY_TARGET_PERCENT[cohort]
  total = sum(sum(cells) for cells in table.values())
  proportions = {}
  for category, (negative, positive) in table.items():
    proportions[(category, '0')] = negative / total
    proportions[(category, '1')] = positive / total
  return tabular.MarginalTable(('ethnicity', TARGET_NAME), proportions)


def _rate(negative: float, positive: float) -> float:
  """Poisson rate whose min(draw, 1) is positive with the observed share."""
  share = positive / (negative + positive)
  return -math.log1p(-share)


def regression_weights() -> np.ndarray:
  """Weights over the one-hot encoding; the intercept is the reference rate."""
  table = ETHNICITY_TARGET_PERCENT['full_cohort']
  categories = dict((n, c) for n, c, _ in FEATURES)['ethnicity']
  log_rates = [math.log(_rate(*table[c])) for c in categories]
  weights = [log_rates[0]]
  for name, _, _ in FEATURES:
    if name == 'ethnicity':
      weights.extend(r - log_rates[0] for r in log_rates[1:])
    else:
      weights.extend(_OTHER_EFFECTS[name])
  return np.asarray(weights)


def majority_tilt() -> float:
  """Log odds ratio of 'White British' membership, Newcastle vs. full cohort."""
  local = WHITE_BRITISH_SHARE['newcastle'] / 100.0
  cohort = WHITE_BRITISH_SHARE['full_cohort'] / 100.0
  return math.log(local / (1 - local)) - math.log(cohort / (1 - cohort))


def _base_population() -> protos.PopulationConfig:
  config = protos.PopulationConfig(
      num_components=4,
      concentration=20.0,
      regression_weights=regression_weights().tolist())
  config.schema.target_name = TARGET_NAME
  for name, categories, marginal in FEATURES:
    if marginal is None:
      marginal = ethnicity_marginal().tolist()
    config.schema.features.add(
        name=name, categories=categories, marginal=marginal)
  return config


def desk() -> protos.PopulationConfig:
  config = _base_population()
  config.preset = 'desk'
  config.heterogeneity = 0.5
  for i, size in enumerate(DESK_SIZES):
    party = config.parties.add(name='party-%d' % i, size=size)
    if i == 0:
      party.tilts.add(
          feature='ethnicity', category='White British',
          log_factor=majority_tilt())
  return config


def ukb16() -> protos.PopulationConfig:
  config = _base_population()
  config.preset = 'ukb16'
  config.heterogeneity = 0.3
  for name, (total, _) in CENTER_SIZES.items():
    party = config.parties.add(name=name, size=total)
    if name == 'Newcastle':
      party.tilts.add(
          feature='ethnicity', category='White British',
          log_factor=majority_tilt())
  return config


_PRESETS = {'desk': desk, 'ukb16': ukb16}


def names() -> Tuple[str, ...]:
  return tuple(sorted(_PRESETS))


def population(name: str) -> protos.PopulationConfig:
  try:
    return _PRESETS[name]()
  except KeyError:
    raise UnknownPresetError('Unknown population preset %r; known: %s' %
                             (name, ', '.join(names()))) from None


def center_train_sizes() -> Dict[str, int]:
  return {name: train for name, (_, train) in CENTER_SIZES.items()}
