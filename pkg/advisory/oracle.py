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
"""Brute-force solver over the one-dimensional consensus variable.

Because every consensus point is fixed by the single scalar c, the fleet
optimum can be found exactly by scanning [c_lo, c_hi]. This module only uses
the scenario reduction and model evaluation, never the optimizers, so it can
serve as their ground truth.
"""

import csv
import dataclasses
import logging
import math
from typing import Any, Dict, List, Optional, Sequence, TextIO

import numpy as np
from scipy import optimize

from advisory.emission.emission_model import Registry, fleet_emission
from advisory.errors import ConfigError, InfeasibleRatio, InfeasibleScenario
from advisory.scenario import (ConsensusVariable, Scenario, feasible_interval,
                               lane_speeds, speeds_from_consensus,
                               with_lane_ratio)

DEFAULT_RESOLUTION = 0.01

SAVING_CURVE_SCHEMA = 'saving_curve/1'
OK_STATUS = 'ok'
INFEASIBLE_STATUS = 'infeasible'


@dataclasses.dataclass(frozen=True)
class OracleResult:
  """Optimal consensus point of a scenario.

  Attributes:
    c_star: optimal consensus value
    speeds: per-vehicle speeds c_star / alpha_i in km/h
    total_emission: sum_i f_i(speeds_i) in g/km
    grid_resolution: spacing of the scan in c
  """
  c_star: ConsensusVariable
  speeds: np.ndarray
  total_emission: float
  grid_resolution: float


def total_emission(scenario: Scenario, registry: Registry,
                   c: ConsensusVariable) -> float:
  """Fleet emission at the consensus point c."""
  return float(
      fleet_emission(registry, scenario.vehicle_types(),
                     speeds_from_consensus(scenario, c)))


def greedy_baseline(scenario: Scenario,
                    registry: Registry) -> Dict[str, Any]:
  """Emission without advice: the fast lane at its limit, others by ratio.

  That is the consensus point c_hi.

  Returns:
    dict with the baseline consensus value, emission and lane speeds
  """
  _, c_hi = feasible_interval(scenario)
  return {
      'c': c_hi,
      'emission_gpkm': total_emission(scenario, registry, c_hi),
      'lane_speeds': lane_speeds(scenario, c_hi),
  }


def _grid(c_lo: float, c_hi: float, resolution: float) -> np.ndarray:
  if c_lo == c_hi:
    return np.array([c_hi])
  points = int(math.ceil((c_hi - c_lo) / resolution)) + 1
  return np.linspace(c_lo, c_hi, points)


def grid_search(scenario: Scenario,
                registry: Registry,
                resolution: float = DEFAULT_RESOLUTION) -> OracleResult:
  """Scan the feasible interval, then polish the best cell.

  Args:
    scenario: a feasible Scenario
    registry: type label -> model
    resolution: largest spacing between grid points in c, > 0

  Returns:
    OracleResult; ties on the grid go to the lowest c

  Raises:
    InfeasibleScenario: if the scenario has no consensus interval
    ConfigError: if resolution <= 0
  """
  if not resolution > 0:
    raise ConfigError(f'resolution must be > 0, got {resolution}')
  c_lo, c_hi = feasible_interval(scenario)
  grid = _grid(c_lo, c_hi, resolution)
  speeds = np.clip(grid[:, np.newaxis] / scenario.alphas(),
                   scenario.lower_bounds(), scenario.upper_bounds())
  values = fleet_emission(registry, scenario.vehicle_types(), speeds)
  best = int(np.argmin(values))
  c_star = float(grid[best])
  best_value = total_emission(scenario, registry, c_star)

  if len(grid) > 1:
    lo = float(grid[max(best - 1, 0)])
    hi = float(grid[min(best + 1, len(grid) - 1)])
    refined = optimize.minimize_scalar(
        lambda c: total_emission(scenario, registry, c),
        bounds=(lo, hi),
        method='bounded',
        options={'xatol': resolution * 1e-6})
    if refined.success and refined.fun < best_value:
      c_star = float(refined.x)
      best_value = total_emission(scenario, registry, c_star)

  logging.debug('Oracle for %r on [%s, %s]: c* = %s, %s g/km', scenario.name,
                c_lo, c_hi, c_star, best_value)
  return OracleResult(
      c_star=c_star,
      speeds=speeds_from_consensus(scenario, c_star),
      total_emission=best_value,
      grid_resolution=resolution)


def oracle_json_dict(scenario: Scenario, registry: Registry,
                     result: OracleResult) -> Dict[str, Any]:
  """The oracle.json record: optimum, greedy baseline and saving."""
  baseline = greedy_baseline(scenario, registry)
  return {
      'scenario': scenario.name,
      'scenario_digest': scenario.digest(),
      'c_star': result.c_star,
      'grid_resolution': result.grid_resolution,
      'total_emission_gpkm': result.total_emission,
      'speeds': [float(s) for s in result.speeds],
      'lane_speeds': {
          str(lane): speed
          for lane, speed in lane_speeds(scenario, result.c_star).items()
      },
      'baseline_gpkm': baseline['emission_gpkm'],
      'saving_gpkm': baseline['emission_gpkm'] - result.total_emission,
      'unadvised_vehicles': scenario.unadvised_count,
  }


@dataclasses.dataclass(frozen=True)
class SavingRow:
  """One ratio of a saving curve; emission fields are None when infeasible."""
  ratio: float
  status: str
  with_isa: Optional[float] = None
  baseline: Optional[float] = None
  saving: Optional[float] = None
  c_star: Optional[float] = None
  lane_speeds: Dict[int, float] = dataclasses.field(default_factory=dict)
  dsas: Optional[float] = None


def saving_curve(template: Scenario,
                 registry: Registry,
                 ratios: Sequence[float],
                 resolution: float = DEFAULT_RESOLUTION) -> List[SavingRow]:
  """Optimal and greedy emission for each adjacent-lane speed ratio.

  Args:
    template: fleet whose alphas are rewritten per ratio by with_lane_ratio
    registry: type label -> model
    ratios: speed ratios between adjacent lanes, each >= 1
    resolution: oracle grid resolution

  Returns:
    one SavingRow per ratio in the given order; ratios without a consensus
    interval are kept as infeasible rows
  """
  rows = []
  for ratio in ratios:
    scenario = with_lane_ratio(template, ratio)
    try:
      result = grid_search(scenario, registry, resolution)
    except InfeasibleScenario as ex:
      error = InfeasibleRatio(ratio, ex.c_lo, ex.c_hi)
      logging.warning('%s', error)
      rows.append(SavingRow(ratio, INFEASIBLE_STATUS))
      continue
    baseline = greedy_baseline(scenario, registry)['emission_gpkm']
    rows.append(
        SavingRow(
            ratio=ratio,
            status=OK_STATUS,
            with_isa=result.total_emission,
            baseline=baseline,
            saving=baseline - result.total_emission,
            c_star=result.c_star,
            lane_speeds=lane_speeds(scenario, result.c_star)))
  return rows


def _cell(value: Optional[float]) -> str:
  return '' if value is None else repr(float(value))


def write_saving_curve(rows: Sequence[SavingRow],
                       lanes: Sequence[int],
                       digest: str,
                       f: TextIO,
                       include_dsas: bool = False) -> None:
  """Write a saving curve as csv with a schema guard row first.

  Args:
    rows: SavingRows in output order
    lanes: lane labels, one speed column each
    digest: config digest for the guard row
    f: text file to write to
    include_dsas: add the dsas_gpkm column
  """
  writer = csv.writer(f, lineterminator='\n')
  writer.writerow(['#schema', SAVING_CURVE_SCHEMA, '#digest', digest])
  header = [
      'ratio', 'status', 'with_isa_gpkm', 'baseline_gpkm', 'saving_gpkm',
      'c_star'
  ]
  header += [f'speed_lane_{lane}' for lane in lanes]
  if include_dsas:
    header.append('dsas_gpkm')
  writer.writerow(header)

  for row in rows:
    line = [
        repr(float(row.ratio)), row.status,
        _cell(row.with_isa),
        _cell(row.baseline),
        _cell(row.saving),
        _cell(row.c_star)
    ]
    line += [_cell(row.lane_speeds.get(lane)) for lane in lanes]
    if include_dsas:
      line.append(_cell(row.dsas))
    writer.writerow(line)
