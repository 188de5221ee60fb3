# Copyright 2021 The Speed Advisory Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Unit tests for the experiment command line."""

import csv
import json
import os
import tempfile
import unittest
from typing import Any, Dict, List
from unittest.mock import MagicMock, patch

import advisory_resources
from advisory import run_experiments
from advisory.errors import ConfigError
from advisory.run_record import RunRecord

REVISIONS_EXAMPLE = os.path.join(advisory_resources.SCENARIO_DIR,
                                 'revisions_example.json')


def write_json(directory: str, name: str, content: Any) -> str:
  path = os.path.join(directory, name)
  with open(path, 'w') as f:
    json.dump(content, f)
  return path


def read_csv(path: str) -> List[List[str]]:
  with open(path, newline='') as f:
    return list(csv.reader(f))


def run_main(*args: str) -> int:
  return run_experiments.main(run_experiments.get_parser().parse_args(args))


def record_reaching(iterations: List[float]) -> RunRecord:
  record = RunRecord('fake', 0)
  for i, value in enumerate(iterations):
    record.append(i, value, 3 * (i + 1))
  return record


class ArgumentParsingTest(unittest.TestCase):
  """Tests for seed and ratio grids and the parser."""

  def test_parse_seeds(self) -> None:
    self.assertEqual(run_experiments.parse_seeds('42'), (42,))
    self.assertEqual(run_experiments.parse_seeds('1, 2,3'), (1, 2, 3))
    self.assertEqual(run_experiments.parse_seeds('0-4'), (0, 1, 2, 3, 4))
    self.assertEqual(run_experiments.parse_seeds('7,0-1'), (7, 0, 1))
    with self.assertRaises(ConfigError):
      run_experiments.parse_seeds('a-b')

  def test_parse_ratios(self) -> None:
    self.assertEqual(run_experiments.parse_ratios('1,1.5,2'), (1.0, 1.5, 2.0))
    self.assertEqual(
        run_experiments.parse_ratios('1:1.2:0.05'),
        (1.0, 1.05, 1.1, 1.15, 1.2))
    with self.assertRaises(ConfigError):
      run_experiments.parse_ratios('1:2')
    with self.assertRaises(ConfigError):
      run_experiments.parse_ratios('2:1:0.1')

  def test_default_sweeps(self) -> None:
    two = run_experiments.ratio_range(*run_experiments.TWO_LANE_RATIOS)
    three = run_experiments.ratio_range(*run_experiments.THREE_LANE_RATIOS)

    self.assertEqual((len(two), two[0], two[-1]), (21, 1.0, 2.0))
    self.assertEqual((len(three), three[-1]), (42, 1.41))

  def test_verbose_and_quiet_conflict(self) -> None:
    with self.assertRaises(SystemExit):
      run_experiments.get_parser().parse_args(
          ['run', '--out=x', '--verbose', '--quiet'])

  def test_lanes_pick_shipped_scenario(self) -> None:
    parsed = run_experiments.get_parser().parse_args(
        ['oracle', '--out=x', '--lanes=three'])

    config = run_experiments.experiment_config_from_args(parsed)

    self.assertEqual(config.scenario_path,
                     advisory_resources.DEFAULT_THREE_LANE_SCENARIO)
    self.assertEqual(config.seeds, (0,))

  def test_registry_from_environment(self) -> None:
    with patch.dict(os.environ,
                    {advisory_resources.MODEL_REGISTRY_ENV_VAR: '/x/m.json'}):
      parsed = run_experiments.get_parser().parse_args(['run', '--out=x'])
      config = run_experiments.experiment_config_from_args(parsed)

    self.assertEqual(config.registry_path, '/x/m.json')

  def test_config_validation(self) -> None:
    with self.assertRaises(ConfigError):
      run_experiments.ExperimentConfig(
          experiment='supervise',
          scenario_path='s',
          registry_path='r',
          seeds=(0,),
          out_dir='o')
    with self.assertRaises(ConfigError):
      run_experiments.ExperimentConfig(
          experiment='compare',
          scenario_path='s',
          registry_path='r',
          seeds=(0,),
          out_dir='o',
          optimizers=('pso', 'de'))


class CommandTest(unittest.TestCase):
  """End to end runs of each command into a temporary directory."""

  def setUp(self) -> None:
    self.tmp = tempfile.TemporaryDirectory()
    self.addCleanup(self.tmp.cleanup)

  def out(self, name: str) -> str:
    return os.path.join(self.tmp.name, name)

  def test_run_is_deterministic(self) -> None:
    for name in ['a', 'b']:
      code = run_main('run', '--seeds=5', '--k-max=5',
                      f'--out={self.out(name)}')
      self.assertEqual(code, advisory_resources.EXIT_OK)

    for filename in ['result.json', 'trace.csv', 'messages.jsonl']:
      with open(os.path.join(self.out('a'), filename)) as f:
        first = f.read()
      with open(os.path.join(self.out('b'), filename)) as f:
        second = f.read()
      self.assertEqual(first, second, filename)

    with open(os.path.join(self.out('a'), 'result.json')) as f:
      result = json.load(f)
    self.assertEqual(result['seed'], 5)
    self.assertEqual(result['rounds'], 5)
    self.assertEqual(len(result['speeds']), 60)
    self.assertAlmostEqual(
        result['saving_gpkm'],
        result['baseline_gpkm'] - result['aggregate_emission_gpkm'])
    trace = read_csv(os.path.join(self.out('a'), 'trace.csv'))
    self.assertEqual(trace[0][:2], ['#schema', 'run_record/1'])
    self.assertEqual(len(trace), 2 + 6)

  def test_run_several_seeds(self) -> None:
    code = run_main('run', '--seeds=1,2', '--k-max=2', f'--out={self.out("r")}')

    self.assertEqual(code, advisory_resources.EXIT_OK)
    self.assertEqual(sorted(os.listdir(self.out('r'))), ['seed_1', 'seed_2'])
    self.assertTrue(
        os.path.exists(os.path.join(self.out('r'), 'seed_2', 'trace.csv')))

  def test_missing_scenario(self) -> None:
    code = run_main('run', f'--scenario={self.out("nope.json")}',
                    f'--out={self.out("r")}')

    self.assertEqual(code, advisory_resources.EXIT_CONFIG_ERROR)
    self.assertFalse(os.path.exists(self.out('r')))

  def test_out_dir_blocked_by_a_file(self) -> None:
    with open(self.out('plain'), 'w') as f:
      f.write('not a directory')

    cmd_oracle = MagicMock()
    with patch.dict(run_experiments.COMMANDS, {'oracle': cmd_oracle}):
      code = run_main('oracle', f'--out={self.out("plain")}/sub')

    self.assertEqual(code, advisory_resources.EXIT_CONFIG_ERROR)
    cmd_oracle.assert_not_called()

  def test_failed_write_removes_partial_outputs(self) -> None:
    os.makedirs(os.path.join(self.out('w'), 'b.json'))

    with self.assertRaisesRegex(ConfigError, 'cannot write outputs'):
      run_experiments.write_outputs(self.out('w'), {
          'a.json': '{}\n',
          'b.json': '{}\n'
      })

    self.assertEqual(os.listdir(self.out('w')), ['b.json'])

  def test_infeasible_scenario(self) -> None:
    path = write_json(
        self.tmp.name, 'steep.json', {
            'lanes': [{
                'lane': 1,
                'alpha': 2.5,
                'vehicles': {
                    'Type-1': 2
                }
            }, {
                'lane': 2,
                'alpha': 1.0,
                'vehicles': {
                    'Type-4': 2
                }
            }]
        })

    code = run_main('run', f'--scenario={path}', f'--out={self.out("r")}')

    self.assertEqual(code, advisory_resources.EXIT_INFEASIBLE)
    self.assertFalse(os.path.exists(self.out('r')))

  def test_evaluation_error(self) -> None:
    path = write_json(
        self.tmp.name, 'narrow.json', {
            'models': [{
                'type': 'Narrow',
                'coefficients': [8232, 40, 0, 0.0125],
                'valid_range': [61, 120]
            }],
            'lanes': [{
                'lane': 1,
                'alpha': 2.0,
                'vehicles': {
                    'Narrow': 2
                }
            }, {
                'lane': 2,
                'alpha': 1.0,
                'vehicles': {
                    'Type-4': 2
                }
            }]
        })

    code = run_main('run', f'--scenario={path}', f'--out={self.out("r")}')

    self.assertEqual(code, advisory_resources.EXIT_EVALUATION_ERROR)
    self.assertFalse(os.path.exists(self.out('r')))

  def test_bad_registry(self) -> None:
    registry = write_json(self.tmp.name, 'models.json', {'models': []})
    with patch.dict(os.environ,
                    {advisory_resources.MODEL_REGISTRY_ENV_VAR: registry}):
      code = run_main('oracle', f'--out={self.out("o")}')

    self.assertEqual(code, advisory_resources.EXIT_CONFIG_ERROR)

  def test_oracle(self) -> None:
    code = run_main('oracle', f'--out={self.out("o")}')

    self.assertEqual(code, advisory_resources.EXIT_OK)
    with open(os.path.join(self.out('o'), 'oracle.json')) as f:
      record = json.load(f)
    self.assertGreaterEqual(record['c_star'], 72.0)
    self.assertLessEqual(record['c_star'], 120.0)
    self.assertEqual(record['grid_resolution'], 0.01)

  def test_sweep_ratio(self) -> None:
    code = run_main('sweep-ratio', '--ratios=1,2', f'--out={self.out("s")}')

    self.assertEqual(code, advisory_resources.EXIT_OK)
    rows = read_csv(os.path.join(self.out('s'), 'saving_curve.csv'))
    self.assertEqual(rows[0][:2], ['#schema', 'saving_curve/1'])
    self.assertEqual(rows[1], [
        'ratio', 'status', 'with_isa_gpkm', 'baseline_gpkm', 'saving_gpkm',
        'c_star', 'speed_lane_1', 'speed_lane_2'
    ])
    self.assertEqual(rows[3][:2], ['2.0', 'ok'])
    self.assertEqual(rows[3][4:], ['0.0', '120.0', '60.0', '120.0'])
    self.assertGreater(float(rows[2][4]), 0.0)

  def test_sweep_ratio_three_lane_with_dsas(self) -> None:
    code = run_main('sweep-ratio', '--lanes=three', '--ratios=1.2,1.5',
                    '--with-dsas', '--k-max=3', f'--out={self.out("s")}')

    self.assertEqual(code, advisory_resources.EXIT_OK)
    rows = read_csv(os.path.join(self.out('s'), 'saving_curve.csv'))
    self.assertEqual(rows[1][-1], 'dsas_gpkm')
    self.assertEqual(len(rows[1]), 10)
    self.assertNotEqual(rows[2][-1], '')
    self.assertEqual(rows[3][1], 'infeasible')
    self.assertEqual(rows[3][-1], '')

  def test_sweep_digest_changes_with_ratios(self) -> None:
    run_main('sweep-ratio', '--ratios=1,2', f'--out={self.out("a")}')
    run_main('sweep-ratio', '--ratios=1,1.5', f'--out={self.out("b")}')

    first = read_csv(os.path.join(self.out('a'), 'saving_curve.csv'))[0]
    second = read_csv(os.path.join(self.out('b'), 'saving_curve.csv'))[0]
    self.assertNotEqual(first[3], second[3])

  def test_compare(self) -> None:
    records: Dict[str, RunRecord] = {
        'improved-woa': record_reaching([9e9, 0.0, 0.0]),
        'pso': record_reaching([9e9, 9e9, 9e9]),
        'gwo': record_reaching([9e9, 9e9, 0.0]),
    }

    with patch.object(run_experiments, 'run_optimizer') as run_optimizer:
      run_optimizer.side_effect = (
          lambda algorithm, scenario, registry, config, seed: records[
              algorithm])
      code = run_main('compare', '--seeds=0-1', '--k-max=2',
                      f'--out={self.out("c")}')

    self.assertEqual(code, advisory_resources.EXIT_OK)
    self.assertEqual(run_optimizer.call_count, 6)
    self.assertTrue(
        os.path.exists(os.path.join(self.out('c'), 'trace_pso_1.csv')))
    summary = read_csv(os.path.join(self.out('c'), 'summary.csv'))
    self.assertEqual(summary[0][:2], ['#schema', 'compare_summary/1'])
    self.assertEqual([row[:3] for row in summary[2:]],
                     [['improved-woa', '1.0', '1.0'],
                      ['pso', 'not reached', '0.0'], ['gwo', '2.0', '1.0']])

  def test_compare_real_optimizers(self) -> None:
    code = run_main('compare', '--seeds=3', '--k-max=3',
                    f'--out={self.out("c")}')

    self.assertEqual(code, advisory_resources.EXIT_OK)
    for algorithm in run_experiments.ALL_OPTIMIZERS:
      trace = read_csv(
          os.path.join(self.out('c'), f'trace_{algorithm}_3.csv'))
      self.assertEqual(trace[0][3], algorithm)
      self.assertEqual(len(trace), 2 + 4)

  def test_supervise(self) -> None:
    code = run_main('supervise', f'--revisions={REVISIONS_EXAMPLE}',
                    '--k-max=3', f'--out={self.out("v")}')

    self.assertEqual(code, advisory_resources.EXIT_OK)
    self.assertEqual(
        sorted(os.listdir(self.out('v'))),
        ['events.jsonl', 'result_0.json', 'result_1.json', 'result_3.json'])
    with open(os.path.join(self.out('v'), 'events.jsonl')) as f:
      events = [json.loads(line) for line in f]
    self.assertEqual([event['kind'] for event in events],
                     ['result', 'result', 'infeasible', 'result'])
    self.assertEqual(events[2]['retained_revision'], 1)
    with open(os.path.join(self.out('v'), 'result_3.json')) as f:
      self.assertEqual(len(json.load(f)['speeds']), 55)


class SummarizeTest(unittest.TestCase):
  """Tests for the compare summary rows."""

  def test_median_counts_misses_as_slowest(self) -> None:
    records = {
        ('pso', 0): record_reaching([5.0, 2.0, 1.0]),
        ('pso', 1): record_reaching([5.0, 5.0, 5.0]),
        ('pso', 2): record_reaching([1.0, 1.0, 1.0]),
    }

    rows = run_experiments.summarize(records, ['pso'], target=2.0)

    self.assertEqual(rows, [['pso', '1.0', repr(2 / 3), '1.0']])

  def test_not_reached(self) -> None:
    records = {
        ('gwo', 0): record_reaching([5.0, 2.0]),
        ('gwo', 1): record_reaching([5.0, 5.0]),
    }

    rows = run_experiments.summarize(records, ['gwo'], target=1.0)

    self.assertEqual(rows[0][1], run_experiments.NOT_REACHED)
    self.assertEqual(rows[0][2], '0.0')


class ParallelJobsTest(unittest.TestCase):
  """Tests for run_parallel_jobs."""

  def test_results_by_key(self) -> None:
    results = run_experiments.run_parallel_jobs({
        ('a', 1): lambda: 1,
        ('b', 2): lambda: 2
    })

    self.assertEqual(results, {('a', 1): 1, ('b', 2): 2})

  def test_raises_job_exception(self) -> None:

    def failing() -> None:
      raise ConfigError('broken job')

    with self.assertRaisesRegex(ConfigError, 'broken job'):
      run_experiments.run_parallel_jobs({'ok': lambda: 1, 'bad': failing})


if __name__ == '__main__':
  unittest.main()
