# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""CSV and JSON emission of run records.

A run directory holds:

  run_record.textproto  the resolved config, privacy ledger, group and test
                        metadata.
  samples.csv           one row per log-likelihood draw (plot-ready).
  boxes.csv             box-plot statistics per group.
  tests.csv             every ranked Welch test.
  pvalues.csv           p-values pivoted to parties x comparisons, with
                        significance stars.
  summary.json          box statistics and tests as a `ReportSummary`.

All files are byte-identical for identical records.
"""

import os
from typing import Dict

from google.protobuf import json_format
from google.protobuf import text_format
import numpy as np
import pandas as pd

from twinshare import evaluation
from twinshare import protos
from twinshare import scenarios

RUN_RECORD = 'run_record.textproto'
SAMPLES = 'samples.csv'
BOXES = 'boxes.csv'
TESTS = 'tests.csv'
PVALUES = 'pvalues.csv'
SUMMARY = 'summary.json'

_FLOAT_FORMAT = '%.17g'
_SAMPLE_COLUMNS = ('key', 'scenario', 'group', 'party', 'fraction', 'step',
                   'keep_prob', 'draw', 'value')


class Error(Exception):
  """Base error for reports."""


def format_p(p: float) -> str:
  """p-value cell: '***' below 0.001, else three decimals and stars."""
  marker = evaluation.significance_marker(p)
  if marker == '***':
    return marker
  return '%.3f%s' % (p, marker)


def samples_frame(record: scenarios.RunRecord) -> pd.DataFrame:
  frames = []
  for meta in record.groups:
    samples = record.samples.get(meta.key)
    if samples is None:
      continue
    n = len(samples)
    frames.append(
        pd.DataFrame({
            'key': [meta.key] * n,
            'scenario': [meta.scenario] * n,
            'group': [meta.group] * n,
            'party': [meta.party] * n,
            'fraction': np.full(n, meta.fraction),
            'step': np.full(n, meta.step, dtype=np.int64),
            'keep_prob': np.full(
                n, meta.keep_prob if meta.HasField('keep_prob') else np.nan),
            'draw': np.arange(n, dtype=np.int64),
            'value': samples.values,
        }))
  if not frames:
    return pd.DataFrame(columns=list(_SAMPLE_COLUMNS))
  return pd.concat(frames, ignore_index=True)


def summarize(record: scenarios.RunRecord):
  """The `protos.ReportSummary` of a record."""
  summary = protos.ReportSummary()
  for meta in record.groups:
    samples = record.samples.get(meta.key)
    if samples is not None:
      summary.boxes.add().CopyFrom(
          evaluation.summarize_box(samples).to_proto(meta.key))
  summary.tests.extend(record.tests)
  return summary


def pvalue_table(record: scenarios.RunRecord) -> pd.DataFrame:
  """Parties as rows, comparison labels as columns, formatted p-values."""
  party_of = {meta.key: meta.party for meta in record.groups}
  rows = []
  for test in record.tests:
    rows.append({
        'party': party_of.get(test.first, ''),
        'comparison': test.label,
        'p': format_p(test.p),
    })
  if not rows:
    return pd.DataFrame(columns=['party'])
  frame = pd.DataFrame(rows)
  parties = list(dict.fromkeys(frame['party']))
  labels = list(dict.fromkeys(frame['comparison']))
  table = frame.pivot_table(
      index='party', columns='comparison', values='p', aggfunc='first')
  table = table.reindex(index=parties, columns=labels).fillna('')
  table.columns.name = None
  return table.reset_index()


def write_report(record: scenarios.RunRecord, out_dir: str) -> Dict[str, str]:
  """Writes every report file into `out_dir`; returns their paths."""
  os.makedirs(out_dir, exist_ok=True)
  paths = {
      name: os.path.join(out_dir, name)
      for name in (RUN_RECORD, SAMPLES, BOXES, TESTS, PVALUES, SUMMARY)
  }
  with open(paths[RUN_RECORD], 'w', encoding='utf-8') as f:
    f.write(text_format.MessageToString(record.to_proto()))
  samples_frame(record).to_csv(
      paths[SAMPLES], index=False, float_format=_FLOAT_FORMAT)
  summary = summarize(record)
  boxes = pd.DataFrame([
      json_format.MessageToDict(box, preserving_proto_field_name=True)
      for box in summary.boxes
  ])
  boxes.to_csv(paths[BOXES], index=False, float_format=_FLOAT_FORMAT)
  tests = pd.DataFrame(
      [(t.label, t.first, t.second, t.sided, t.t, t.df, t.p, t.marker)
       for t in record.tests],
      columns=['label', 'first', 'second', 'sided', 't', 'df', 'p', 'marker'])
  tests.to_csv(paths[TESTS], index=False, float_format=_FLOAT_FORMAT)
  pvalue_table(record).to_csv(paths[PVALUES], index=False)
  with open(paths[SUMMARY], 'w', encoding='utf-8') as f:
    f.write(
        json_format.MessageToJson(
            summary, preserving_proto_field_name=True, sort_keys=True))
    f.write('\n')
  return paths


def load_run(run_dir: str) -> scenarios.RunRecord:
  """Rebuilds a RunRecord from the files `write_report` produced."""
  path = os.path.join(run_dir, RUN_RECORD)
  try:
    with open(path, encoding='utf-8') as f:
      proto = text_format.Parse(f.read(), protos.RunRecordProto())
  except (OSError, text_format.ParseError) as e:
    raise Error('Cannot read %s: %s' % (path, e)) from None
  samples_path = os.path.join(run_dir, SAMPLES)
  try:
    frame = pd.read_csv(
        samples_path,
        keep_default_na=False,
        dtype={'key': str},
        usecols=['key', 'draw', 'value'])
  except (OSError, ValueError) as e:
    raise Error('Cannot read %s: %s' % (samples_path, e)) from None
  samples = {}
  for key, rows in frame.groupby('key', sort=True):
    values = rows.sort_values('draw')['value'].to_numpy(dtype=np.float64)
    samples[key] = evaluation.LogLikSamples(values, key)
  return scenarios.RunRecord(
      config=proto.config,
      accountants=list(proto.accountants),
      groups=list(proto.groups),
      samples=samples,
      tests=list(proto.tests),
      cross_party_accesses=proto.cross_party_accesses,
      dropped_fits=proto.dropped_fits,
      wall_clock_seconds=proto.wall_clock_seconds,
      software_version=proto.software_version,
      conventions=tuple(proto.conventions))
