# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""Scenario configuration: text-format parsing, overrides and validation.

A scenario file is a `protos.ScenarioConfig` in protobuf text format:

  kind: "size_sweep"
  population { preset: "desk" }
  epsilon: 1.0
  num_synthetic_sets: 20
  dpvi { iterations: 500 }

`resolve_scenario_config` turns it into a fully explicit message: preset
populations are expanded, kind-specific defaults are filled in and every
scalar default is written out, so the run record holds the exact
configuration that ran. A population that spells out its own schema and
names no preset is taken as written.
"""

import os
from typing import Optional, Sequence

from google.protobuf import descriptor
from google.protobuf import text_format

from twinshare import presets
from twinshare import protos
from twinshare import tabular

KINDS = ('baseline_sharing', 'sequential_sharing', 'size_sweep',
         'skew_sweep')

DEFAULT_FRACTIONS = (0.1,)
SIZE_SWEEP_FRACTIONS = (0.1, 0.2, 0.5, 1.0)
DEFAULT_KEEP_PROBS = (0.1, 0.25, 0.5, 0.75, 1.0)
DEFAULT_PRESET = 'desk'
SCHEMA_FILE = 'schema.textproto'


class Error(Exception):
  """Base error for configuration handling."""


class ConfigError(Error, ValueError):
  """A config file is malformed or violates a constraint."""


def parse_scenario_config(text: str):
  try:
    return text_format.Parse(text, protos.ScenarioConfig())
  except text_format.ParseError as e:
    raise ConfigError('Malformed scenario config: %s' % e) from None


def load_scenario_config(path: str):
  try:
    with open(path, encoding='utf-8') as f:
      text = f.read()
  except OSError as e:
    raise ConfigError('Cannot read %s: %s' % (path, e)) from None
  return parse_scenario_config(text)


def load_schema(path: str) -> tabular.Schema:
  try:
    with open(path, encoding='utf-8') as f:
      spec = text_format.Parse(f.read(), protos.SchemaSpec())
  except (OSError, text_format.ParseError) as e:
    raise ConfigError('Cannot load schema %s: %s' % (path, e)) from None
  return tabular.Schema.from_proto(spec)


def apply_overrides(config,
                    epsilon: Optional[float] = None,
                    num_synthetic_sets: Optional[int] = None,
                    repeats: Optional[int] = None,
                    permutations: Optional[int] = None,
                    master_seed: Optional[int] = None,
                    mc_draws: Optional[int] = None,
                    subsample_fractions: Optional[Sequence[float]] = None,
                    workers: Optional[int] = None,
                    dpvi_iterations: Optional[int] = None):
  """Returns a copy of `config` with the given fields replaced."""
  result = protos.ScenarioConfig()
  result.CopyFrom(config)
  scalars = dict(
      epsilon=epsilon,
      num_synthetic_sets=num_synthetic_sets,
      repeats=repeats,
      permutations=permutations,
      master_seed=master_seed,
      mc_draws=mc_draws,
      workers=workers)
  for name, value in scalars.items():
    if value is not None:
      setattr(result, name, value)
  if subsample_fractions is not None:
    del result.subsample_fractions[:]
    result.subsample_fractions.extend(float(f) for f in subsample_fractions)
  if dpvi_iterations is not None:
    result.dpvi.iterations = dpvi_iterations
  return result


def materialize_defaults(message) -> None:
  """Sets every unset optional scalar to its default, recursively."""
  for field in message.DESCRIPTOR.fields:
    is_message = field.type == descriptor.FieldDescriptor.TYPE_MESSAGE
    if protos.is_repeated(field):
      if is_message:
        for item in getattr(message, field.name):
          materialize_defaults(item)
    elif is_message:
      materialize_defaults(getattr(message, field.name))
    elif not message.HasField(field.name):
      setattr(message, field.name, getattr(message, field.name))


def _overlay(base, override) -> None:
  """Copies the fields set in `override` onto `base`, replacing lists."""
  for field, value in override.ListFields():
    if protos.is_repeated(field):
      target = getattr(base, field.name)
      del target[:]
      if field.type == descriptor.FieldDescriptor.TYPE_MESSAGE:
        for item in value:
          target.add().CopyFrom(item)
      else:
        target.extend(value)
    elif field.type == descriptor.FieldDescriptor.TYPE_MESSAGE:
      getattr(base, field.name).CopyFrom(value)
    else:
      setattr(base, field.name, value)


def _resolve_population(config) -> None:
  population = config.population
  if config.csv_dir:
    if not population.schema.features:
      path = os.path.join(config.csv_dir, SCHEMA_FILE)
      if not os.path.exists(path):
        raise ConfigError('csv_dir %s has no %s and the config names no '
                          'schema' % (config.csv_dir, SCHEMA_FILE))
      population.schema.CopyFrom(load_schema(path).to_proto())
    return
  if population.schema.features and not population.preset:
    _fill_party_heterogeneity(population)
    return
  name = population.preset or DEFAULT_PRESET
  try:
    base = presets.population(name)
  except presets.UnknownPresetError as e:
    raise ConfigError(str(e)) from None
  _overlay(base, population)
  base.preset = name
  population.CopyFrom(base)
  _fill_party_heterogeneity(population)


def _fill_party_heterogeneity(population) -> None:
  for party in population.parties:
    if not party.HasField('heterogeneity'):
      party.heterogeneity = population.heterogeneity


def _check(condition: bool, message: str, *args) -> None:
  if not condition:
    raise ConfigError(message % args)


def validate(config) -> None:
  """Raises ConfigError unless `config` is resolved and consistent."""
  _check(config.kind in KINDS, 'Unknown scenario kind %r; expected one of %s',
         config.kind, ', '.join(KINDS))
  _check(len(config.subsample_fractions) > 0, 'No subsample fractions')
  for fraction in config.subsample_fractions:
    _check(0.0 < fraction <= 1.0, 'Subsample fraction %r outside (0, 1]',
           fraction)
  _check(config.epsilon > 0, 'epsilon must be > 0, got %r', config.epsilon)
  _check(config.num_synthetic_sets >= 2, 'num_synthetic_sets must be >= 2')
  _check(config.repeats >= 1, 'repeats must be >= 1')
  _check(config.permutations >= 1, 'permutations must be >= 1')
  _check(config.mc_draws >= 1, 'mc_draws must be >= 1')
  _check(config.workers >= 1, 'workers must be >= 1')
  _check(0.0 < config.train_fraction < 1.0, 'train_fraction must lie in (0, 1)')
  _check(config.master_seed >= 0, 'master_seed must be >= 0')
  dpvi = config.dpvi
  _check(dpvi.clip_norm > 0 and dpvi.batch_size > 0 and dpvi.step_size > 0,
         'DPVI clip_norm, batch_size and step_size must be positive')
  _check(dpvi.iterations >= 0 and dpvi.decay >= 0,
         'DPVI iterations and decay must be nonnegative')
  _check(dpvi.mc_samples >= 1 and dpvi.num_components >= 1,
         'DPVI mc_samples and num_components must be >= 1')
  _check(dpvi.prior_scale > 0, 'DPVI prior_scale must be positive')
  for keep_prob in config.skew.keep_probs:
    _check(0.0 <= keep_prob <= 1.0, 'keep_prob %r outside [0, 1]', keep_prob)
  _check(config.skew.target_value in (0, 1), 'skew target_value must be 0/1')

  try:
    schema = tabular.Schema.from_proto(config.population.schema)
  except tabular.SchemaError as e:
    raise ConfigError('Invalid population schema: %s' % e) from None
  _check(schema.num_features >= 1, 'The population schema has no features')
  if config.kind == 'skew_sweep' or config.skew.feature in schema.feature_names:
    try:
      schema.category_index(config.skew.feature, config.skew.category)
    except tabular.SchemaError as e:
      raise ConfigError('Invalid skew settings: %s' % e) from None
  if not config.csv_dir:
    parties = config.population.parties
    _check(len(parties) >= 2, 'Sharing needs at least 2 parties, got %d',
           len(parties))
    names = [p.name for p in parties]
    _check(len(set(names)) == len(names) and all(names),
           'Party names must be unique and non-empty: %s', names)
    for party in parties:
      _check(party.size > 0, 'Party %r must have a positive size', party.name)


def resolve_scenario_config(config):
  """Returns a fully explicit, validated copy of `config`.

  Raises:
    ConfigError: the config is inconsistent.
  """
  resolved = protos.ScenarioConfig()
  resolved.CopyFrom(config)
  _resolve_population(resolved)
  if not resolved.subsample_fractions:
    resolved.subsample_fractions.extend(
        SIZE_SWEEP_FRACTIONS if resolved.kind == 'size_sweep' else
        DEFAULT_FRACTIONS)
  if not resolved.skew.keep_probs:
    resolved.skew.keep_probs.extend(DEFAULT_KEEP_PROBS)
  materialize_defaults(resolved)
  validate(resolved)
  return resolved
