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
"""Command line front end for advisory runs and experiments.

Examples:

python -m advisory.run_experiments run --seeds=42 --out=out/run
python -m advisory.run_experiments sweep-ratio --lanes=three --out=out/sweep
python -m advisory.run_experiments compare --seeds=0-19 --out=out/compare
python -m advisory.run_experiments oracle --out=out/oracle
python -m advisory.run_experiments supervise \
  --revisions=scenarios/revisions_example.json --out=out/supervise

Every command computes all of its results before it opens any output file, so
a failing command leaves nothing behind.
"""

import argparse
import concurrent.futures
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from typing import (Any, Callable, Dict, List, Mapping, Optional, Sequence,
                    Tuple)

import numpy as np

import advisory_resources
from advisory import baselines
from advisory import dsas
from advisory import messages
from advisory import oracle
from advisory import revisions
from advisory.emission.emission_model import Registry, load_model_registry
from advisory.errors import (ConfigError, EvaluationError, InfeasibleScenario,
                             SpeedOutOfModelRange)
from advisory.run_record import RunRecord
from advisory.scenario import (Scenario, ScenarioConfig, config_digest,
                               read_json_file, scenario_from_config,
                               with_lane_ratio)

IMPROVED_WOA = 'improved-woa'
PSO = 'pso'
GWO = 'gwo'
ALL_OPTIMIZERS = (IMPROVED_WOA, PSO, GWO)

ALL_EXPERIMENTS = ('run', 'sweep-ratio', 'compare', 'oracle', 'supervise')

# Relative gap to the oracle optimum that counts as converged
CONVERGENCE_TOLERANCE = 0.005

COMPARE_SUMMARY_SCHEMA = 'compare_summary/1'
NOT_REACHED = 'not reached'

# Default sweeps, as (start, stop, step)
TWO_LANE_RATIOS = (1.0, 2.0, 0.05)
THREE_LANE_RATIOS = (1.0, 1.41, 0.01)

# name -> file contents
Outputs = Dict[str, str]


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
  """Everything one command invocation needs.

  Attributes:
    experiment: one of ALL_EXPERIMENTS
    scenario_path: scenario json file
    registry_path: model registry json file
    seeds: seeds to run, non-empty
    out_dir: directory the output files go to
    k_max: iterations or protocol rounds
    n_whales: whales per vehicle, also the baseline swarm size
    ratios: sweep ratios, None for the lane-count default
    optimizers: subset of ALL_OPTIMIZERS for compare
    with_dsas: add protocol results to a sweep
    revisions_path: revisions file for supervise
    resolution: oracle grid resolution
  """
  experiment: str
  scenario_path: str
  registry_path: str
  seeds: Tuple[int, ...]
  out_dir: str
  k_max: int = 50
  n_whales: int = 3
  ratios: Optional[Tuple[float, ...]] = None
  optimizers: Tuple[str, ...] = ALL_OPTIMIZERS
  with_dsas: bool = False
  revisions_path: Optional[str] = None
  resolution: float = oracle.DEFAULT_RESOLUTION

  def __post_init__(self) -> None:
    if self.experiment not in ALL_EXPERIMENTS:
      raise ConfigError(f'unknown experiment {self.experiment!r}')
    if not self.seeds:
      raise ConfigError('at least one seed is needed')
    unknown = sorted(set(self.optimizers) - set(ALL_OPTIMIZERS))
    if unknown:
      raise ConfigError(f'unknown optimizers {unknown}')
    if self.experiment == 'supervise' and not self.revisions_path:
      raise ConfigError('supervise needs --revisions')

  def dsas_config(self, seed: int) -> dsas.DsasConfig:
    return dsas.DsasConfig(
        n_whales=self.n_whales, max_rounds=self.k_max, seed=seed)


def parse_seeds(raw: str) -> Tuple[int, ...]:
  """Parse '42', '1,2,3' or '0-19' (inclusive) into seeds."""
  seeds: List[int] = []
  try:
    for part in raw.split(','):
      part = part.strip()
      if '-' in part[1:]:
        first, last = part.split('-', 1)
        seeds.extend(range(int(first), int(last) + 1))
      elif part:
        seeds.append(int(part))
  except ValueError as ex:
    raise ConfigError(f'malformed seed list {raw!r}') from ex
  return tuple(seeds)


def parse_ratios(raw: str) -> Tuple[float, ...]:
  """Parse '1.0,1.5,2.0' or 'start:stop:step' (stop included)."""
  try:
    if ':' in raw:
      start, stop, step = (float(x) for x in raw.split(':'))
      return ratio_range(start, stop, step)
    return tuple(float(x) for x in raw.split(',') if x.strip())
  except ValueError as ex:
    raise ConfigError(f'malformed ratio grid {raw!r}') from ex


def ratio_range(start: float, stop: float, step: float) -> Tuple[float, ...]:
  if not step > 0 or stop < start:
    raise ConfigError(f'bad ratio range {start}:{stop}:{step}')
  count = int(round((stop - start) / step)) + 1
  return tuple(round(start + i * step, 10) for i in range(count))


def load_registry(registry_path: str,
                  scenario_config: ScenarioConfig) -> Registry:
  """The registry file plus any models the scenario file adds."""
  extra_models = scenario_config.get('models')
  if extra_models is not None and not isinstance(extra_models, list):
    raise ConfigError('scenario "models" must be a list')
  logging.info('Reading emission models from %s', registry_path)
  return load_model_registry(read_json_file(registry_path), extra_models)


def load_inputs(
    config: ExperimentConfig) -> Tuple[ScenarioConfig, Registry, Scenario]:
  scenario_config = read_json_file(config.scenario_path)
  if not isinstance(scenario_config, dict):
    raise ConfigError(f'{config.scenario_path} must hold a json object')
  registry = load_registry(config.registry_path, scenario_config)
  scenario = scenario_from_config(
      scenario_config,
      known_types=registry,
      default_bounds=advisory_resources.DEFAULT_SPEED_BOUNDS)
  return scenario_config, registry, scenario


def run_parallel_jobs(
    jobs: Mapping[Any, Callable[[], Any]]) -> Dict[Any, Any]:
  """Run independent jobs on a thread pool.

  Args:
    jobs: key -> zero-argument callable

  Returns:
    key -> the callable's return value

  Raises:
    Exception: the first exception any job raised
  """
  with concurrent.futures.ThreadPoolExecutor() as pool:
    futures = {key: pool.submit(job) for key, job in jobs.items()}

    finished, pending = concurrent.futures.wait(
        futures.values(), return_when=concurrent.futures.FIRST_EXCEPTION)

    # Raise any exceptions
    for future in finished:
      future.result()

    if pending:
      raise RuntimeError(f'{len(pending)} jobs failed to finish')
    return {key: future.result() for key, future in futures.items()}


def _json_text(record: Any) -> str:
  return json.dumps(record, sort_keys=True, indent=2) + '\n'


def _record_csv(record: RunRecord) -> str:
  buffer = io.StringIO()
  record.write_csv(buffer)
  return buffer.getvalue()


def _log_text(log: Sequence[messages.Message]) -> str:
  buffer = io.StringIO()
  messages.write_log(log, buffer)
  return buffer.getvalue()


def check_out_dir(out_dir: str) -> None:
  """Make sure out_dir is, or can be created as, a writable directory.

  Nothing is created here, so a command that fails later leaves no trace.

  Raises:
    ConfigError: if out_dir or its nearest existing parent is not a writable
      directory
  """
  existing = os.path.abspath(out_dir)
  while not os.path.exists(existing):
    existing = os.path.dirname(existing)
  if not os.path.isdir(existing):
    raise ConfigError(f'output path {out_dir} is blocked by the file '
                      f'{existing}')
  if not os.access(existing, os.W_OK | os.X_OK):
    raise ConfigError(f'output directory {existing} is not writable')


def write_outputs(out_dir: str, outputs: Outputs) -> List[str]:
  """Write every output file, creating the directory when needed.

  Raises:
    ConfigError: if any file can't be written; files written before the
      failure are removed again
  """
  paths: List[str] = []
  try:
    for name in sorted(outputs):
      path = os.path.join(out_dir, name)
      os.makedirs(os.path.dirname(path), exist_ok=True)
      with open(path, 'w', newline='') as f:
        paths.append(path)
        f.write(outputs[name])
  except OSError as ex:
    for path in paths:
      if os.path.exists(path):
        os.remove(path)
    raise ConfigError(f'cannot write outputs to {out_dir}: {ex}') from ex
  logging.info('Wrote %s files to %s', len(paths), out_dir)
  return paths


def _result_record(scenario: Scenario, registry: Registry,
                   config: ExperimentConfig,
                   result: dsas.DsasResult) -> Dict[str, Any]:
  record = result.to_json_dict()
  baseline = oracle.greedy_baseline(scenario, registry)
  record['baseline_gpkm'] = baseline['emission_gpkm']
  record['saving_gpkm'] = baseline['emission_gpkm'] - result.aggregate_emission
  record['k_max'] = config.k_max
  record['n_whales'] = config.n_whales
  return record


def cmd_run(config: ExperimentConfig) -> Outputs:
  """Run the protocol once per seed.

  Returns:
    result.json, trace.csv and messages.jsonl; prefixed with seed_<seed>/
    when more than one seed is given
  """
  _, registry, scenario = load_inputs(config)
  results = run_parallel_jobs({
      seed: (lambda seed=seed: dsas.run(scenario, registry,
                                        config.dsas_config(seed)))
      for seed in config.seeds
  })

  outputs: Outputs = {}
  for seed in config.seeds:
    result = results[seed]
    prefix = f'seed_{seed}/' if len(config.seeds) > 1 else ''
    outputs[prefix + 'result.json'] = _json_text(
        _result_record(scenario, registry, config, result))
    outputs[prefix + 'trace.csv'] = _record_csv(result.record)
    outputs[prefix + 'messages.jsonl'] = _log_text(result.log)
  return outputs


def cmd_oracle(config: ExperimentConfig) -> Outputs:
  _, registry, scenario = load_inputs(config)
  result = oracle.grid_search(scenario, registry, config.resolution)
  return {
      'oracle.json':
          _json_text(oracle.oracle_json_dict(scenario, registry, result))
  }


def _default_ratios(scenario: Scenario) -> Tuple[float, ...]:
  if len(scenario.lanes()) <= 2:
    return ratio_range(*TWO_LANE_RATIOS)
  return ratio_range(*THREE_LANE_RATIOS)


def cmd_sweep_ratio(config: ExperimentConfig) -> Outputs:
  """Oracle saving curve over lane speed ratios, optionally with DSAS.

  Returns:
    saving_curve.csv
  """
  _, registry, template = load_inputs(config)
  ratios = config.ratios or _default_ratios(template)
  rows = oracle.saving_curve(template, registry, ratios, config.resolution)

  if config.with_dsas:
    seed = config.seeds[0]
    feasible = [
        i for i, row in enumerate(rows) if row.status == oracle.OK_STATUS
    ]
    dsas_results = run_parallel_jobs({
        i: (lambda i=i: dsas.run(
            with_lane_ratio(template, rows[i].ratio), registry,
            config.dsas_config(seed))) for i in feasible
    })
    rows = [
        dataclasses.replace(row, dsas=dsas_results[i].aggregate_emission)
        if i in dsas_results else row for i, row in enumerate(rows)
    ]

  digest = config_digest({
      'scenario': template.digest(),
      'ratios': list(ratios),
      'resolution': config.resolution,
      'registry': config_digest(read_json_file(config.registry_path)),
      'dsas': [config.seeds[0], config.k_max, config.n_whales]
              if config.with_dsas else None,
  })
  buffer = io.StringIO()
  oracle.write_saving_curve(rows, template.lanes(), digest, buffer,
                            config.with_dsas)
  return {'saving_curve.csv': buffer.getvalue()}


def run_optimizer(algorithm: str, scenario: Scenario, registry: Registry,
                  config: ExperimentConfig, seed: int) -> RunRecord:
  """One (algorithm, seed) job of a comparison, all on the same budget."""
  if algorithm == IMPROVED_WOA:
    return dsas.run(scenario, registry, config.dsas_config(seed)).record

  fitness = baselines.fleet_fitness(scenario, registry)
  bounds = baselines.fleet_bounds(scenario)
  if algorithm == PSO:
    _, _, record = baselines.pso_minimize(
        fitness,
        baselines.PsoConfig(
            bounds=bounds,
            n_particles=config.n_whales,
            max_iter=config.k_max,
            seed=seed))
  else:
    _, _, record = baselines.gwo_minimize(
        fitness,
        baselines.GwoConfig(
            bounds=bounds,
            n_wolves=config.n_whales,
            max_iter=config.k_max,
            seed=seed))
  record.scenario_digest = scenario.digest()
  return record


def summarize(records: Dict[Tuple[str, int], RunRecord],
              optimizers: Sequence[str], target: float) -> List[List[Any]]:
  """One summary row per optimizer.

  Seeds that never reach the target count as infinitely slow, so the median
  is 'not reached' once half of them miss.

  Returns:
    rows of [algorithm, median iteration to target, reached fraction,
    median final best fitness]
  """
  rows = []
  for algorithm in optimizers:
    runs = [record for (alg, _), record in records.items() if alg == algorithm]
    iterations = [record.first_iteration_within(target) for record in runs]
    reached = [it for it in iterations if it is not None]
    median_iteration = float(
        np.median([np.inf if it is None else it for it in iterations]))
    finals = [record.rows[-1].best_fitness for record in runs]
    rows.append([
        algorithm,
        NOT_REACHED if np.isinf(median_iteration) else repr(median_iteration),
        repr(len(reached) / len(runs)),
        repr(float(np.median(finals))),
    ])
  return rows


def cmd_compare(config: ExperimentConfig) -> Outputs:
  """Race the optimizers against the oracle optimum.

  Returns:
    trace_<algorithm>_<seed>.csv per job and summary.csv
  """
  _, registry, scenario = load_inputs(config)
  optimum = oracle.grid_search(scenario, registry,
                               config.resolution).total_emission
  target = optimum * (1.0 + CONVERGENCE_TOLERANCE)

  keys = [(alg, seed) for alg in config.optimizers for seed in config.seeds]
  records = run_parallel_jobs({
      key: (lambda key=key: run_optimizer(key[0], scenario, registry, config,
                                          key[1])) for key in keys
  })

  outputs: Outputs = {}
  for algorithm, seed in keys:
    outputs[f'trace_{algorithm}_{seed}.csv'] = _record_csv(
        records[(algorithm, seed)])

  digest = config_digest({
      'scenario': scenario.digest(),
      'seeds': list(config.seeds),
      'optimizers': list(config.optimizers),
      'k_max': config.k_max,
      'n_whales': config.n_whales,
      'oracle_gpkm': optimum,
  })
  buffer = io.StringIO()
  writer = csv.writer(buffer, lineterminator='\n')
  writer.writerow(['#schema', COMPARE_SUMMARY_SCHEMA, '#digest', digest])
  writer.writerow([
      'algorithm', 'median_iteration_to_tolerance', 'reached_fraction',
      'median_final_gpkm'
  ])
  writer.writerows(summarize(records, config.optimizers, target))
  outputs['summary.csv'] = buffer.getvalue()
  return outputs


def cmd_supervise(config: ExperimentConfig) -> Outputs:
  """Replay a revisions file through the supervisor.

  Returns:
    events.jsonl and result_<revision>.json per successful revision
  """
  scenario_config = read_json_file(config.scenario_path)
  if not isinstance(scenario_config, dict):
    raise ConfigError(f'{config.scenario_path} must hold a json object')
  registry = load_registry(config.registry_path, scenario_config)
  assert config.revisions_path is not None
  stream = revisions.revision_stream(
      scenario_config,
      revisions.parse_revisions(read_json_file(config.revisions_path)))

  outputs: Outputs = {}
  lines = []
  for event in dsas.supervise(stream, registry,
                              config.dsas_config(config.seeds[0])):
    lines.append(json.dumps(event.to_json_dict(), sort_keys=True))
    if event.result is not None:
      outputs[f'result_{event.revision}.json'] = _json_text(
          _result_record(event.result.scenario, registry, config,
                         event.result))
  outputs['events.jsonl'] = ''.join(line + '\n' for line in lines)
  return outputs


COMMANDS: Dict[str, Callable[[ExperimentConfig], Outputs]] = {
    'run': cmd_run,
    'sweep-ratio': cmd_sweep_ratio,
    'compare': cmd_compare,
    'oracle': cmd_oracle,
    'supervise': cmd_supervise,
}


def experiment_config_from_args(
    parsed_args: argparse.Namespace) -> ExperimentConfig:
  if parsed_args.scenario:
    scenario_path = parsed_args.scenario
  elif parsed_args.lanes == 'three':
    scenario_path = advisory_resources.DEFAULT_THREE_LANE_SCENARIO
  else:
    scenario_path = advisory_resources.DEFAULT_TWO_LANE_SCENARIO

  optimizers = ALL_OPTIMIZERS
  if parsed_args.optimizers:
    optimizers = tuple(
        name.strip() for name in parsed_args.optimizers.split(','))

  return ExperimentConfig(
      experiment=parsed_args.experiment,
      scenario_path=scenario_path,
      registry_path=advisory_resources.get_model_registry_path(),
      seeds=parse_seeds(parsed_args.seeds),
      out_dir=parsed_args.out,
      k_max=parsed_args.k_max,
      n_whales=parsed_args.m,
      ratios=parse_ratios(parsed_args.ratios) if parsed_args.ratios else None,
      optimizers=optimizers,
      with_dsas=parsed_args.with_dsas,
      revisions_path=parsed_args.revisions,
      resolution=parsed_args.resolution)


def _set_log_level(parsed_args: argparse.Namespace) -> None:
  level = logging.INFO
  if parsed_args.verbose:
    level = logging.DEBUG
  elif parsed_args.quiet:
    level = logging.WARNING
  logging.basicConfig(format='%(levelname)s %(message)s')
  logging.getLogger().setLevel(level)


def main(parsed_args: argparse.Namespace) -> int:
  """Parse namespace arguments and run the chosen experiment.

  Args:
    parsed_args: an argparse namespace from get_parser()

  Returns:
    process exit code, see advisory_resources
  """
  _set_log_level(parsed_args)
  try:
    config = experiment_config_from_args(parsed_args)
    check_out_dir(config.out_dir)
    outputs = COMMANDS[config.experiment](config)
    write_outputs(config.out_dir, outputs)
  except ConfigError as ex:
    logging.error('config error: %s', ex)
    return advisory_resources.EXIT_CONFIG_ERROR
  except InfeasibleScenario as ex:
    logging.error('infeasible: %s', ex)
    return advisory_resources.EXIT_INFEASIBLE
  except (EvaluationError, SpeedOutOfModelRange) as ex:
    logging.error('evaluation error: %s', ex)
    return advisory_resources.EXIT_EVALUATION_ERROR
  return advisory_resources.EXIT_OK


def get_parser() -> argparse.ArgumentParser:
  parser = argparse.ArgumentParser(
      description='Run distributed speed advisory experiments')
  subparsers = parser.add_subparsers(dest='experiment', required=True)

  common = argparse.ArgumentParser(add_help=False)
  common.add_argument(
      '--scenario',
      type=str,
      default=None,
      help='Scenario json file, defaults to the shipped fleet for --lanes')
  common.add_argument(
      '--lanes',
      type=str,
      default='two',
      choices=['two', 'three'],
      help='Which shipped scenario to use when --scenario is not given')
  common.add_argument(
      '--seeds', type=str, default='0', help='Seeds like 42, 1,2,3 or 0-19')
  common.add_argument(
      '--out', type=str, required=True, help='Directory for output files')
  common.add_argument(
      '--k-max',
      dest='k_max',
      type=int,
      default=50,
      help='Iterations or protocol rounds')
  common.add_argument(
      '--m', type=int, default=3, help='Whales per vehicle (and swarm size)')
  common.add_argument(
      '--resolution',
      type=float,
      default=oracle.DEFAULT_RESOLUTION,
      help='Oracle grid resolution in consensus units')
  common.add_argument(
      '--ratios',
      type=str,
      default=None,
      help='Ratio grid like 1,1.5,2 or 1:2:0.05 (sweep-ratio)')
  common.add_argument(
      '--optimizers',
      type=str,
      default=None,
      help='Comma separated subset of ' + ','.join(ALL_OPTIMIZERS))
  common.add_argument(
      '--with-dsas',
      dest='with_dsas',
      action='store_true',
      default=False,
      help='Add protocol results to the saving curve')
  common.add_argument(
      '--revisions',
      type=str,
      default=None,
      help='Revisions json file (supervise)')
  verbosity = common.add_mutually_exclusive_group()
  verbosity.add_argument('--verbose', action='store_true', default=False)
  verbosity.add_argument('--quiet', action='store_true', default=False)

  for experiment in ALL_EXPERIMENTS:
    subparsers.add_parser(experiment, parents=[common])
  return parser


if __name__ == '__main__':
  sys.exit(main(get_parser().parse_args()))
