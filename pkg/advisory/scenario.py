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
"""Fleet data model and the consensus reduction of the speed problem.

The problem is to pick speeds s_i in [s_min_i, s_max_i] minimising the summed
emission of the fleet subject to alpha_i * s_i being equal for every vehicle.
That common value is the consensus variable c, so the feasible set is the
segment of c between max(alpha_i * s_min_i) and min(alpha_i * s_max_i).
"""

import copy
import dataclasses
import hashlib
import json
import logging
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from advisory.errors import ConfigError, InfeasibleScenario, OutOfFeasibleRange

# Custom Types
#
# The shared scalar alpha_i * s_i at a consensus point, in alpha-weighted km/h
ConsensusVariable = float
#
# A raw scenario file as parsed from json
# ex: {'name': 'two-lane', 'lanes': [{'lane': 1, 'alpha': 1.2, ...}]}
ScenarioConfig = Dict[str, Any]

# Relative slack when comparing consensus values against interval ends.
FEASIBILITY_RTOL = 1e-9


def config_digest(payload: Any) -> str:
  """SHA-256 hex digest of the canonical (sorted-key) json of a payload."""
  return hashlib.sha256(
      json.dumps(payload, sort_keys=True).encode('utf-8')).hexdigest()


@dataclasses.dataclass(frozen=True)
class VehicleSpec:
  """One advised vehicle.

  Attributes:
    id: 1-based index of the vehicle in its scenario
    vehicle_type: label keying into the emission model registry
    alpha: recommended-speed parameter, dimensionless
    s_min: lowest allowed speed in km/h
    s_max: highest allowed speed in km/h
    lane: lane label, vehicles on a lane form one speed group
  """
  id: int
  vehicle_type: str
  alpha: float
  s_min: float
  s_max: float
  lane: int

  def __post_init__(self) -> None:
    if not self.alpha > 0:
      raise ConfigError(f'vehicle {self.id}: alpha must be > 0, '
                        f'got {self.alpha}')
    if not 0 < self.s_min < self.s_max:
      raise ConfigError(f'vehicle {self.id}: need 0 < s_min < s_max, got '
                        f'[{self.s_min}, {self.s_max}]')


@dataclasses.dataclass(frozen=True)
class Scenario:
  """An ordered fleet of advised vehicles.

  Attributes:
    name: text label
    vehicles: vehicles ordered by id, ids contiguous from 1
    unadvised_count: vehicles declared on lanes outside the advisory system,
      kept only for reporting
  """
  name: str
  vehicles: Tuple[VehicleSpec, ...]
  unadvised_count: int = 0

  def __post_init__(self) -> None:
    if not self.vehicles:
      raise ConfigError(f'scenario {self.name!r} has no advised vehicles')
    ids = [vehicle.id for vehicle in self.vehicles]
    if ids != list(range(1, len(ids) + 1)):
      raise ConfigError(
          f'scenario {self.name!r}: vehicle ids must be 1..N in order')
    lane_alphas: Dict[int, float] = {}
    for vehicle in self.vehicles:
      alpha = lane_alphas.setdefault(vehicle.lane, vehicle.alpha)
      if alpha != vehicle.alpha:
        raise ConfigError(
            f'scenario {self.name!r}: lane {vehicle.lane} mixes alpha '
            f'{alpha} and {vehicle.alpha}')

  @property
  def size(self) -> int:
    return len(self.vehicles)

  def alphas(self) -> np.ndarray:
    return np.array([vehicle.alpha for vehicle in self.vehicles])

  def lower_bounds(self) -> np.ndarray:
    return np.array([vehicle.s_min for vehicle in self.vehicles])

  def upper_bounds(self) -> np.ndarray:
    return np.array([vehicle.s_max for vehicle in self.vehicles])

  def vehicle_types(self) -> List[str]:
    return [vehicle.vehicle_type for vehicle in self.vehicles]

  def lanes(self) -> List[int]:
    """Lane labels in ascending order (slowest lane first)."""
    return sorted({vehicle.lane for vehicle in self.vehicles})

  def lane_alpha(self, lane: int) -> float:
    for vehicle in self.vehicles:
      if vehicle.lane == lane:
        return vehicle.alpha
    raise KeyError(f'no lane {lane} in scenario {self.name!r}')

  def digest(self) -> str:
    """SHA-256 over the canonical json of the fleet."""
    payload = {
        'name': self.name,
        'vehicles': [dataclasses.asdict(v) for v in self.vehicles],
        'unadvised_count': self.unadvised_count,
    }
    return config_digest(payload)


def feasible_interval(
    scenario: Scenario) -> Tuple[ConsensusVariable, ConsensusVariable]:
  """Return the interval of consensus values every vehicle can drive.

  Args:
    scenario: a valid Scenario

  Returns:
    (c_lo, c_hi) with c_lo = max(alpha_i * s_min_i), c_hi = min(alpha_i *
    s_max_i). Ends that cross by less than FEASIBILITY_RTOL collapse onto the
    single point c_hi.

  Raises:
    InfeasibleScenario: when the interval is empty
  """
  c_lo = max(vehicle.alpha * vehicle.s_min for vehicle in scenario.vehicles)
  c_hi = min(vehicle.alpha * vehicle.s_max for vehicle in scenario.vehicles)
  if c_lo > c_hi:
    if c_lo - c_hi <= FEASIBILITY_RTOL * c_hi:
      return (c_hi, c_hi)
    raise InfeasibleScenario(
        f'scenario {scenario.name!r} is infeasible: consensus interval '
        f'[{c_lo}, {c_hi}] is empty', c_lo, c_hi)
  return (c_lo, c_hi)


def speeds_from_consensus(scenario: Scenario,
                          c: ConsensusVariable) -> np.ndarray:
  """Recover per-vehicle speeds s_i = c / alpha_i.

  Args:
    scenario: a feasible Scenario
    c: consensus value within feasible_interval(scenario)

  Returns:
    array of speeds in km/h, ordered by vehicle id

  Raises:
    OutOfFeasibleRange: when c lies outside the feasible interval
    InfeasibleScenario: when the scenario has no feasible interval at all
  """
  c_lo, c_hi = feasible_interval(scenario)
  slack = FEASIBILITY_RTOL * max(abs(c_hi), 1.0)
  if not c_lo - slack <= c <= c_hi + slack:
    raise OutOfFeasibleRange(
        f'consensus value {c} outside feasible interval [{c_lo}, {c_hi}]')
  speeds = c / scenario.alphas()
  # Division can land one ulp outside a bound at the interval ends.
  return np.clip(speeds, scenario.lower_bounds(), scenario.upper_bounds())


def consensus_spread(alphas: np.ndarray, speeds: np.ndarray) -> float:
  """Largest pairwise gap max_ij |alpha_i s_i - alpha_j s_j|."""
  weighted = np.asarray(alphas) * np.asarray(speeds)
  return float(np.max(weighted) - np.min(weighted))


def lane_speeds(scenario: Scenario,
                c: ConsensusVariable) -> Dict[int, float]:
  """Consensus speed per lane label for a consensus value."""
  return {lane: c / scenario.lane_alpha(lane) for lane in scenario.lanes()}


def with_lane_ratio(scenario: Scenario, ratio: float) -> Scenario:
  """Reassign lane alphas so adjacent lanes keep a fixed speed ratio.

  The highest lane label is the fast lane with alpha 1, the next slower lane
  gets alpha = ratio, the one after ratio**2 and so on.

  Args:
    scenario: template scenario, its own alphas are ignored
    ratio: speed ratio between adjacent lanes, >= 1

  Returns:
    a new Scenario with the same vehicles and rewritten alphas
  """
  if not ratio >= 1.0:
    raise ConfigError(f'lane speed ratio must be >= 1, got {ratio}')
  lanes = scenario.lanes()
  lane_to_alpha = {
      lane: float(ratio**(len(lanes) - 1 - position))
      for position, lane in enumerate(lanes)
  }
  vehicles = tuple(
      dataclasses.replace(vehicle, alpha=lane_to_alpha[vehicle.lane])
      for vehicle in scenario.vehicles)
  return dataclasses.replace(scenario, vehicles=vehicles)


def _parse_bounds(raw: Any, where: str) -> Tuple[float, float]:
  try:
    lo, hi = (float(x) for x in raw)
  except (TypeError, ValueError) as ex:
    raise ConfigError(f'{where}: speed_bounds must be [lo, hi], '
                      f'got {raw!r}') from ex
  return (lo, hi)


def _expand_lanes(
    config: ScenarioConfig,
    default_bounds: Tuple[float, float]) -> Tuple[List[VehicleSpec], int]:
  """Expand type-count shorthand into individual vehicles.

  Vehicles are numbered lane by lane in file order, and within a lane by type
  in file order then by index.

  Returns:
    (vehicles, number of vehicles on unadvised lanes)
  """
  vehicles: List[VehicleSpec] = []
  unadvised = 0
  seen_lanes = set()
  for lane_config in config['lanes']:
    try:
      lane = int(lane_config['lane'])
      alpha = float(lane_config['alpha'])
      counts = lane_config['vehicles']
    except (KeyError, TypeError, ValueError) as ex:
      raise ConfigError(f'malformed lane entry {lane_config!r}') from ex
    if lane in seen_lanes:
      raise ConfigError(f'lane {lane} declared twice')
    seen_lanes.add(lane)
    if not isinstance(counts, dict):
      raise ConfigError(f'lane {lane}: vehicles must map type to count')

    if not lane_config.get('advised', True):
      skipped = sum(int(n) for n in counts.values())
      logging.info('Lane %s is unadvised, leaving out %s vehicles', lane,
                   skipped)
      unadvised += skipped
      continue

    s_min, s_max = default_bounds
    if 'speed_bounds' in lane_config:
      s_min, s_max = _parse_bounds(lane_config['speed_bounds'], f'lane {lane}')

    for vehicle_type, count in counts.items():
      if int(count) < 0:
        raise ConfigError(f'lane {lane}: negative count for {vehicle_type}')
      for _ in range(int(count)):
        vehicles.append(
            VehicleSpec(
                id=len(vehicles) + 1,
                vehicle_type=vehicle_type,
                alpha=alpha,
                s_min=s_min,
                s_max=s_max,
                lane=lane))
  return vehicles, unadvised


def _explicit_vehicles(
    config: ScenarioConfig,
    default_bounds: Tuple[float, float]) -> List[VehicleSpec]:
  vehicles = []
  for i, entry in enumerate(config['vehicles']):
    try:
      vehicles.append(
          VehicleSpec(
              id=i + 1,
              vehicle_type=str(entry['type']),
              alpha=float(entry['alpha']),
              s_min=float(entry.get('s_min', default_bounds[0])),
              s_max=float(entry.get('s_max', default_bounds[1])),
              lane=int(entry.get('lane', 1))))
    except (KeyError, TypeError, ValueError) as ex:
      raise ConfigError(f'malformed vehicle entry {entry!r}') from ex
  return vehicles


def scenario_from_config(config: ScenarioConfig,
                         known_types: Optional[Iterable[str]] = None,
                         default_bounds: Tuple[float, float] = (60.0, 120.0)
                        ) -> Scenario:
  """Build a Scenario from a parsed scenario file.

  Args:
    config: dict with either a 'lanes' list (type-count shorthand) or a
      'vehicles' list, see docs/README.md
    known_types: if given, every vehicle type must be one of these
    default_bounds: speed bounds used where the file gives none

  Returns:
    a validated Scenario

  Raises:
    ConfigError: if the config is malformed or names unknown vehicle types
  """
  if not isinstance(config, dict):
    raise ConfigError('scenario config must be a json object')
  if 'speed_bounds' in config:
    default_bounds = _parse_bounds(config['speed_bounds'], 'scenario')

  if 'lanes' in config:
    vehicles, unadvised = _expand_lanes(config, default_bounds)
  elif 'vehicles' in config:
    vehicles, unadvised = _explicit_vehicles(config, default_bounds), 0
  else:
    raise ConfigError('scenario needs a "lanes" or "vehicles" list')

  if known_types is not None:
    known = set(known_types)
    unknown = sorted({v.vehicle_type for v in vehicles} - known)
    if unknown:
      raise ConfigError(f'unknown vehicle types {unknown}, '
                        f'registry has {sorted(known)}')

  scenario = Scenario(
      name=str(config.get('name', 'scenario')),
      vehicles=tuple(vehicles),
      unadvised_count=unadvised)
  logging.info('Loaded scenario %r: %s vehicles on lanes %s', scenario.name,
               scenario.size, scenario.lanes())
  return scenario


def read_json_file(filepath: str) -> Any:
  """Read a json file, turning every failure into a ConfigError."""
  try:
    with open(filepath) as f:
      return json.load(f)
  except OSError as ex:
    raise ConfigError(f'cannot read {filepath}: {ex}') from ex
  except json.decoder.JSONDecodeError as ex:
    raise ConfigError(f'cannot parse {filepath}: {ex}') from ex


def _find_lane(config: ScenarioConfig, lane: int) -> Dict[str, Any]:
  for lane_config in config.get('lanes', []):
    if int(lane_config['lane']) == lane:
      return lane_config
  raise ConfigError(f'revision edits unknown lane {lane}')


def apply_edits(config: ScenarioConfig,
                edits: Sequence[Dict[str, Any]]) -> ScenarioConfig:
  """Apply one revision's edits to a lane-based scenario config.

  Args:
    config: scenario config using the 'lanes' form, left unmodified
    edits: list of edit dicts, each with an 'op' key. Supported ops
      set_alpha {lane, alpha}
      set_count {lane, type, count}
      set_bounds {lane, speed_bounds}
      remove_lane {lane}
      add_lane {lane, alpha, vehicles, speed_bounds?}

  Returns:
    the revised config

  Raises:
    ConfigError: on unknown ops, unknown lanes or missing fields
  """
  if 'lanes' not in config:
    raise ConfigError('revisions need a scenario written with "lanes"')
  revised = copy.deepcopy(config)
  for edit in edits:
    try:
      op = edit['op']
      if op == 'set_alpha':
        _find_lane(revised, int(edit['lane']))['alpha'] = float(edit['alpha'])
      elif op == 'set_count':
        lane_config = _find_lane(revised, int(edit['lane']))
        lane_config['vehicles'][str(edit['type'])] = int(edit['count'])
      elif op == 'set_bounds':
        lane_config = _find_lane(revised, int(edit['lane']))
        lane_config['speed_bounds'] = list(
            _parse_bounds(edit['speed_bounds'], f'lane {edit["lane"]}'))
      elif op == 'remove_lane':
        lane_config = _find_lane(revised, int(edit['lane']))
        revised['lanes'].remove(lane_config)
      elif op == 'add_lane':
        new_lane = {
            'lane': int(edit['lane']),
            'alpha': float(edit['alpha']),
            'vehicles': dict(edit['vehicles']),
        }
        if 'speed_bounds' in edit:
          new_lane['speed_bounds'] = list(edit['speed_bounds'])
        revised['lanes'].append(new_lane)
      else:
        raise ConfigError(f'unknown revision op {op!r}')
    except (KeyError, TypeError, ValueError) as ex:
      raise ConfigError(f'malformed revision edit {edit!r}') from ex
  return revised
