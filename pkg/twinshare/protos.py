# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""Protocol buffer messages for configs, trained models and run records.

The descriptors are assembled in Python and registered in a private pool, so
no protoc step is needed. All messages use proto2 semantics: scalar defaults
carry the experiment constants and `HasField` distinguishes explicit settings.

Usage:

  from twinshare import protos

  config = text_format.Parse(text, protos.ScenarioConfig())
"""

from google.protobuf import descriptor_pb2
from google.protobuf import descriptor_pool
from google.protobuf import message_factory

_PACKAGE = 'twinshare'

_F = descriptor_pb2.FieldDescriptorProto
_SCALAR_TYPES = {
    'double': _F.TYPE_DOUBLE,
    'int32': _F.TYPE_INT32,
    'int64': _F.TYPE_INT64,
    'bool': _F.TYPE_BOOL,
    'string': _F.TYPE_STRING,
}


def _field(name, number, kind, repeated=False, default=None):
  """Returns a FieldDescriptorProto; `kind` is a scalar name or a message."""
  field = _F(
      name=name,
      number=number,
      label=_F.LABEL_REPEATED if repeated else _F.LABEL_OPTIONAL)
  if kind in _SCALAR_TYPES:
    field.type = _SCALAR_TYPES[kind]
  else:
    field.type = _F.TYPE_MESSAGE
    field.type_name = '.%s.%s' % (_PACKAGE, kind)
  if default is not None:
    field.default_value = default
  return field


def _message(name, *fields):
  return descriptor_pb2.DescriptorProto(name=name, field=list(fields))


_MESSAGES = [
    # Population and schema.
    _message('FeatureSpec',
             _field('name', 1, 'string'),
             _field('categories', 2, 'string', repeated=True),
             _field('marginal', 3, 'double', repeated=True)),
    _message('SchemaSpec',
             _field('features', 1, 'FeatureSpec', repeated=True),
             _field('target_name', 2, 'string', default='target')),
    _message('CategoryTilt',
             _field('feature', 1, 'string'),
             _field('category', 2, 'string'),
             _field('log_factor', 3, 'double')),
    _message('PartySpec',
             _field('name', 1, 'string'),
             _field('size', 2, 'int64'),
             _field('heterogeneity', 3, 'double'),
             _field('tilts', 4, 'CategoryTilt', repeated=True)),
    _message('PopulationConfig',
             _field('preset', 1, 'string'),
             _field('schema', 2, 'SchemaSpec'),
             _field('parties', 3, 'PartySpec', repeated=True),
             _field('num_components', 4, 'int32', default='4'),
             _field('concentration', 5, 'double', default='20'),
             _field('mixture_weights', 6, 'double', repeated=True),
             _field('regression_weights', 7, 'double', repeated=True),
             _field('intercept', 8, 'double', default='0.2'),
             _field('weight_scale', 9, 'double', default='0.5'),
             _field('heterogeneity', 10, 'double', default='0.5')),
    # Experiment configuration.
    _message('DpviSettings',
             _field('clip_norm', 1, 'double', default='2.0'),
             _field('batch_size', 2, 'int32', default='100'),
             _field('iterations', 3, 'int32', default='2000'),
             _field('step_size', 4, 'double', default='0.01'),
             _field('decay', 5, 'double', default='0.001'),
             _field('mc_samples', 6, 'int32', default='1'),
             _field('prior_scale', 7, 'double', default='1.0'),
             _field('num_components', 8, 'int32', default='16'),
             _field('non_private', 9, 'bool', default='false'),
             _field('init_log_std', 10, 'double', default='-2.0')),
    _message('SkewSettings',
             _field('feature', 1, 'string', default='ethnicity'),
             _field('category', 2, 'string', default='South Asian'),
             _field('target_value', 3, 'int32', default='1'),
             _field('keep_probs', 4, 'double', repeated=True)),
    _message('ScenarioConfig',
             _field('kind', 1, 'string', default='baseline_sharing'),
             _field('population', 2, 'PopulationConfig'),
             _field('csv_dir', 3, 'string'),
             _field('subsample_fractions', 4, 'double', repeated=True),
             _field('epsilon', 5, 'double', default='1.0'),
             _field('num_synthetic_sets', 6, 'int32', default='100'),
             _field('repeats', 7, 'int32', default='10'),
             _field('permutations', 8, 'int32', default='100'),
             _field('skew', 9, 'SkewSettings'),
             _field('master_seed', 10, 'int64', default='0'),
             _field('mc_draws', 11, 'int32', default='100'),
             _field('dpvi', 12, 'DpviSettings'),
             _field('include_local', 13, 'bool', default='true'),
             _field('train_fraction', 14, 'double', default='0.8'),
             _field('workers', 15, 'int32', default='1'),
             _field('proxy_evaluation', 16, 'bool', default='false')),
    # Trained artifacts.
    _message('SimplexTable',
             _field('feature', 1, 'string'),
             _field('component', 2, 'int32'),
             _field('probs', 3, 'double', repeated=True)),
    _message('GenerativeParamsRecord',
             _field('num_components', 1, 'int32'),
             _field('mixture_weights', 2, 'double', repeated=True),
             _field('tables', 3, 'SimplexTable', repeated=True),
             _field('regression_weights', 4, 'double', repeated=True)),
    _message('AccountantSummary',
             _field('party', 1, 'string'),
             _field('repeat', 2, 'int32'),
             _field('subsample_rate', 3, 'double'),
             _field('noise_multiplier', 4, 'double'),
             _field('steps', 5, 'int64'),
             _field('epsilon', 6, 'double'),
             _field('delta', 7, 'double'),
             _field('target_epsilon', 8, 'double'),
             _field('num_examples', 9, 'int64'),
             _field('clip_norm', 10, 'double'),
             _field('batch_size', 11, 'int32'),
             _field('non_private', 12, 'bool'),
             _field('seed', 13, 'int64')),
    _message('PosteriorRecord',
             _field('schema', 1, 'SchemaSpec'),
             _field('num_components', 2, 'int32'),
             _field('mean', 3, 'double', repeated=True),
             _field('log_std', 4, 'double', repeated=True),
             _field('accountant', 5, 'AccountantSummary'),
             _field('point_estimate', 6, 'GenerativeParamsRecord')),
    _message('ReleaseRecord',
             _field('party', 1, 'string'),
             _field('num_examples', 2, 'int64'),
             _field('num_sets', 3, 'int32'),
             _field('set_seeds', 4, 'int64', repeated=True),
             _field('accountant', 5, 'AccountantSummary'),
             _field('target_rule', 6, 'string')),
    _message('FitRecord',
             _field('coefficient_names', 1, 'string', repeated=True),
             _field('coefficients', 2, 'double', repeated=True),
             _field('std_errors', 3, 'double', repeated=True),
             _field('converged', 4, 'bool'),
             _field('iterations', 5, 'int32'),
             _field('ridge_rescued', 6, 'bool')),
    # Run outputs.
    _message('SampleGroup',
             _field('key', 1, 'string'),
             _field('scenario', 2, 'string'),
             _field('group', 3, 'string'),
             _field('party', 4, 'string'),
             _field('step', 5, 'int32', default='-1'),
             _field('fraction', 6, 'double'),
             _field('keep_prob', 7, 'double'),
             _field('num_values', 8, 'int64'),
             _field('flagged', 9, 'bool'),
             _field('note', 10, 'string')),
    _message('RunRecordProto',
             _field('config', 1, 'ScenarioConfig'),
             _field('accountants', 2, 'AccountantSummary', repeated=True),
             _field('groups', 3, 'SampleGroup', repeated=True),
             _field('software_version', 4, 'string'),
             _field('wall_clock_seconds', 5, 'double'),
             _field('cross_party_accesses', 6, 'int64'),
             _field('dropped_fits', 7, 'int64'),
             _field('conventions', 8, 'string', repeated=True),
             _field('tests', 9, 'ComparisonSummary', repeated=True)),
    _message('BoxSummary',
             _field('key', 1, 'string'),
             _field('q25', 2, 'double'),
             _field('median', 3, 'double'),
             _field('q75', 4, 'double'),
             _field('whisker_low', 5, 'double'),
             _field('whisker_high', 6, 'double'),
             _field('outliers', 7, 'int64'),
             _field('mean', 8, 'double'),
             _field('count', 9, 'int64')),
    _message('ComparisonSummary',
             _field('label', 1, 'string'),
             _field('first', 2, 'string'),
             _field('second', 3, 'string'),
             _field('sided', 4, 'string'),
             _field('t', 5, 'double'),
             _field('df', 6, 'double'),
             _field('p', 7, 'double'),
             _field('marker', 8, 'string')),
    _message('ReportSummary',
             _field('boxes', 1, 'BoxSummary', repeated=True),
             _field('tests', 2, 'ComparisonSummary', repeated=True)),
    _message('ErrorRecord',
             _field('kind', 1, 'string'),
             _field('message', 2, 'string'),
             _field('command', 3, 'string')),
]

POOL = descriptor_pool.DescriptorPool()
POOL.AddSerializedFile(
    descriptor_pb2.FileDescriptorProto(
        name='twinshare/twinshare.proto',
        package=_PACKAGE,
        syntax='proto2',
        message_type=_MESSAGES).SerializeToString())


def _message_class(name):
  return message_factory.GetMessageClass(
      POOL.FindMessageTypeByName('%s.%s' % (_PACKAGE, name)))


FeatureSpec = _message_class('FeatureSpec')
SchemaSpec = _message_class('SchemaSpec')
CategoryTilt = _message_class('CategoryTilt')
PartySpec = _message_class('PartySpec')
PopulationConfig = _message_class('PopulationConfig')
DpviSettings = _message_class('DpviSettings')
SkewSettings = _message_class('SkewSettings')
ScenarioConfig = _message_class('ScenarioConfig')
SimplexTable = _message_class('SimplexTable')
GenerativeParamsRecord = _message_class('GenerativeParamsRecord')
AccountantSummary = _message_class('AccountantSummary')
PosteriorRecord = _message_class('PosteriorRecord')
ReleaseRecord = _message_class('ReleaseRecord')
FitRecord = _message_class('FitRecord')
SampleGroup = _message_class('SampleGroup')
RunRecordProto = _message_class('RunRecordProto')
BoxSummary = _message_class('BoxSummary')
ComparisonSummary = _message_class('ComparisonSummary')
ReportSummary = _message_class('ReportSummary')
ErrorRecord = _message_class('ErrorRecord')


def is_repeated(field) -> bool:
  """Whether a FieldDescriptor is repeated, on old and new runtimes alike.

  Newer runtimes expose `is_repeated` and no longer carry `label`.
  """
  repeated = getattr(field, 'is_repeated', None)
  if callable(repeated):
    repeated = repeated()
  if repeated is not None:
    return bool(repeated)
  return field.label == _F.LABEL_REPEATED
