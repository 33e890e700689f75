# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
r"""Command line entry point.

Usage:

  twinshare synth-pop  --config=pop.textproto --output_dir=out
  twinshare prepare    --csv_dir=out/synth-pop-... --output_dir=out
  twinshare train-gen  --train_csv=train.csv --schema=schema.textproto \
                       --party=Leeds --output_dir=out
  twinshare sample-syn --posterior=out/.../posterior.textproto --output_dir=out
  twinshare run baseline_sharing --config=scenario.textproto --epsilon=2
  twinshare report     --run_dir=out/run-baseline_sharing-...

Every command writes into a fresh run-stamped directory below --output_dir
(or $TWINSHARE_OUTPUT_DIR). On failure a JSON `ErrorRecord` is written to
stderr and the exit status is 1.
"""

import datetime
import os
import sys
from typing import List, Optional

from absl import app
from absl import flags
from absl import logging
from google.protobuf import json_format
from google.protobuf import text_format

from twinshare import audit
from twinshare import config as config_lib
from twinshare import dpvi
from twinshare import evaluation
from twinshare import genmodel
from twinshare import glm
from twinshare import pooling
from twinshare import presets
from twinshare import privacy
from twinshare import protos
from twinshare import report
from twinshare import scenarios
from twinshare import seeding
from twinshare import tabular

OUTPUT_DIR_ENV = 'TWINSHARE_OUTPUT_DIR'

_CONFIG = flags.DEFINE_string('config', None,
                              'ScenarioConfig in protobuf text format.')
_OUTPUT_DIR = flags.DEFINE_string(
    'output_dir', 'twinshare_runs',
    'Parent of the run-stamped output directory; $%s takes precedence.' %
    OUTPUT_DIR_ENV)
_CSV_DIR = flags.DEFINE_string('csv_dir', None,
                               'Directory of <party>.csv and schema.textproto.')
_TRAIN_CSV = flags.DEFINE_string('train_csv', None, 'Training CSV of a party.')
_SCHEMA = flags.DEFINE_string('schema', None, 'SchemaSpec text file.')
_PARTY = flags.DEFINE_string('party', None, 'Name of the party.')
_POSTERIOR = flags.DEFINE_string('posterior', None,
                                 'PosteriorRecord written by train-gen.')
_RUN_DIR = flags.DEFINE_string('run_dir', None,
                               'Directory of a finished run.')
_REPEAT = flags.DEFINE_integer('repeat', 0,
                               'Repeat index used for artifact seeds.')

_EPSILON = flags.DEFINE_float('epsilon', None, 'Target epsilon.')
_NUM_SETS = flags.DEFINE_integer('num_synthetic_sets', None,
                                 'Synthetic sets K per release.')
_REPEATS = flags.DEFINE_integer('repeats', None, 'Experiment repeats.')
_PERMUTATIONS = flags.DEFINE_integer('permutations', None,
                                     'Orders per focal party (sequential).')
_MASTER_SEED = flags.DEFINE_integer('master_seed', None, 'Root of all seeds.')
_MC_DRAWS = flags.DEFINE_integer('mc_draws', None,
                                 'Parameter draws per fit in evaluation.')
_FRACTIONS = flags.DEFINE_list('subsample_fractions', None,
                               'Comma-separated training subsample fractions.')
_WORKERS = flags.DEFINE_integer('workers', None, 'Worker threads.')
_DPVI_ITERATIONS = flags.DEFINE_integer('dpvi_iterations', None,
                                        'DP-SGD steps per training run.')

COMMANDS = ('synth-pop', 'prepare', 'train-gen', 'sample-syn', 'run',
            'report')

HANDLED_ERRORS = (
    tabular.Error,
    privacy.Error,
    genmodel.Error,
    dpvi.Error,
    glm.Error,
    pooling.Error,
    evaluation.Error,
    config_lib.Error,
    audit.Error,
    scenarios.Error,
    report.Error,
    presets.Error,
    OSError,
)


class UsageError(Exception):
  """The command line is incomplete or inconsistent."""


def _require(flag) -> str:
  if flag.value is None:
    raise UsageError('--%s is required' % flag.name)
  return flag.value


def _output_root() -> str:
  return os.environ.get(OUTPUT_DIR_ENV) or _OUTPUT_DIR.value


def _run_dir(label: str, seed: int) -> str:
  stamp = datetime.datetime.now(datetime.timezone.utc).strftime(
      '%Y%m%dT%H%M%S%fZ')
  path = os.path.join(_output_root(), '%s-%s-seed%d' % (label, stamp, seed))
  os.makedirs(path, exist_ok=False)
  return path


def _write_text(path: str, message) -> None:
  with open(path, 'w', encoding='utf-8') as f:
    f.write(text_format.MessageToString(message))


def _read_text(path: str, message):
  try:
    with open(path, encoding='utf-8') as f:
      return text_format.Parse(f.read(), message)
  except (OSError, text_format.ParseError) as e:
    raise UsageError('Cannot read %s: %s' % (path, e)) from None


def _scenario_config(kind: Optional[str] = None):
  """Loads --config, applies flag overrides and resolves defaults."""
  if _CONFIG.value:
    raw = config_lib.load_scenario_config(_CONFIG.value)
  else:
    raw = protos.ScenarioConfig()
  if kind is not None:
    raw.kind = kind
  if _CSV_DIR.value:
    raw.csv_dir = _CSV_DIR.value
  fractions = None
  if _FRACTIONS.value is not None:
    try:
      fractions = [float(f) for f in _FRACTIONS.value]
    except ValueError as e:
      raise UsageError('--subsample_fractions: %s' % e) from None
  raw = config_lib.apply_overrides(
      raw,
      epsilon=_EPSILON.value,
      num_synthetic_sets=_NUM_SETS.value,
      repeats=_REPEATS.value,
      permutations=_PERMUTATIONS.value,
      master_seed=_MASTER_SEED.value,
      mc_draws=_MC_DRAWS.value,
      subsample_fractions=fractions,
      workers=_WORKERS.value,
      dpvi_iterations=_DPVI_ITERATIONS.value)
  return config_lib.resolve_scenario_config(raw)


def synth_pop() -> str:
  """Writes every party of the synthetic population as <party>.csv."""
  resolved = _scenario_config()
  out = _run_dir('synth-pop', resolved.master_seed)
  for name, ds in scenarios.load_population(resolved):
    tabular.write_csv(ds, os.path.join(out, name + '.csv'))
  _write_text(
      os.path.join(out, config_lib.SCHEMA_FILE), resolved.population.schema)
  _write_text(os.path.join(out, 'population.textproto'), resolved.population)
  return out


def prepare() -> str:
  """Splits every party CSV of --csv_dir into train.csv and test.csv."""
  _require(_CSV_DIR)
  resolved = _scenario_config()
  seeds = seeding.SeedTree(resolved.master_seed)
  out = _run_dir('prepare', resolved.master_seed)
  for name, ds in scenarios.load_population(resolved):
    train, test = tabular.train_test_split(ds, resolved.train_fraction,
                                           seeds.seed('split', name))
    party_dir = os.path.join(out, name)
    os.makedirs(party_dir)
    tabular.write_csv(train, os.path.join(party_dir, 'train.csv'))
    tabular.write_csv(test, os.path.join(party_dir, 'test.csv'))
  _write_text(
      os.path.join(out, config_lib.SCHEMA_FILE), resolved.population.schema)
  return out


def train_gen() -> str:
  """Trains one party's DPVI posterior and records its accountant."""
  schema = config_lib.load_schema(_require(_SCHEMA))
  party = _require(_PARTY)
  local = tabular.load_csv(_require(_TRAIN_CSV), schema, party_label=party)
  resolved = _scenario_config()
  seeds = seeding.SeedTree(resolved.master_seed)
  run_config = dpvi.DpviConfig.from_settings(
      resolved.dpvi, resolved.epsilon,
      seeds.seed('train', party, _REPEAT.value))
  posterior, accountant = dpvi.train(local, run_config)
  summary = dpvi.accountant_summary(accountant, run_config, len(local), party,
                                    _REPEAT.value)
  out = _run_dir('train-gen-%s' % party, resolved.master_seed)
  _write_text(
      os.path.join(out, 'posterior.textproto'), posterior.to_proto(summary))
  return out


def sample_syn() -> str:
  """Samples K synthetic sets, one posterior draw each, from a posterior."""
  record = _read_text(_require(_POSTERIOR), protos.PosteriorRecord())
  posterior = dpvi.VariationalPosterior.from_proto(record)
  resolved = _scenario_config()
  seeds = seeding.SeedTree(resolved.master_seed)
  party = record.accountant.party
  n = record.accountant.num_examples
  if n <= 0:
    raise UsageError('The posterior record carries no training-set size')
  sets, set_seeds = [], []
  for k in range(resolved.num_synthetic_sets):
    params = dpvi.draw_generator(posterior,
                                 seeds.seed('draw', party, _REPEAT.value, k))
    set_seed = seeds.seed('synthesize', party, _REPEAT.value, k)
    sets.append(genmodel.sample(params, n, set_seed, party))
    set_seeds.append(set_seed)
  release = pooling.SyntheticRelease(party, tuple(sets), record.accountant,
                                     tuple(set_seeds))
  out = _run_dir('sample-syn-%s' % party, resolved.master_seed)
  for k, ds in enumerate(release.datasets):
    tabular.write_csv(ds, os.path.join(out, 'set_%03d.csv' % k))
  _write_text(
      os.path.join(out, 'release.textproto'),
      release.to_proto(genmodel.TARGET_RULE))
  _write_text(
      os.path.join(out, config_lib.SCHEMA_FILE), posterior.layout.schema
      .to_proto())
  return out


def run_scenario(kind: str) -> str:
  resolved = _scenario_config(kind)
  logging.info('Running %s with master seed %d', kind, resolved.master_seed)
  record = scenarios.run(resolved)
  out = _run_dir('run-%s' % kind, resolved.master_seed)
  report.write_report(record, out)
  return out


def report_run() -> str:
  record = report.load_run(_require(_RUN_DIR))
  out = _run_dir('report', record.config.master_seed)
  report.write_report(record, out)
  return out


def _dispatch(argv: List[str]) -> str:
  if len(argv) < 2 or argv[1] not in COMMANDS:
    raise UsageError('Expected one of %s' % ', '.join(COMMANDS))
  command = argv[1]
  if command == 'run':
    if len(argv) != 3 or argv[2] not in config_lib.KINDS:
      raise UsageError('run needs a scenario: %s' %
                       ', '.join(config_lib.KINDS))
    return run_scenario(argv[2])
  if len(argv) != 2:
    raise UsageError('Unexpected arguments: %s' % ' '.join(argv[2:]))
  return {
      'synth-pop': synth_pop,
      'prepare': prepare,
      'train-gen': train_gen,
      'sample-syn': sample_syn,
      'report': report_run,
  }[command]()


def error_record(error: Exception, command: str):
  return protos.ErrorRecord(
      kind=type(error).__name__, message=str(error), command=command)


def main(argv: List[str]) -> None:
  command = ' '.join(argv[1:])
  try:
    out = _dispatch(argv)
  except HANDLED_ERRORS + (UsageError,) as e:
    logging.error('%s failed: %s', command or '(no command)', e)
    sys.stderr.write(
        json_format.MessageToJson(error_record(e, command), indent=None) +
        '\n')
    sys.exit(1)
  logging.info('Wrote %s', out)
  print(out)


def run_main() -> None:
  app.run(main)


if __name__ == '__main__':
  run_main()
