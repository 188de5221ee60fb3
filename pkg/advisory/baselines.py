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
"""Particle swarm and grey wolf minimizers with a death-penalty fleet fitness.

Both search the full N-dimensional speed box and only learn about the
consensus constraint through a fixed additive penalty. They are the reference
the distributed whale optimiser is compared against.
"""

import dataclasses
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from advisory import woa
from advisory.emission.emission_model import Registry, fleet_emission
from advisory.errors import ConfigError
from advisory.run_record import RunRecord
from advisory.scenario import Scenario, consensus_spread, feasible_interval

# Relative consensus tolerance used when no explicit one is configured.
DEFAULT_TOLERANCE_FRACTION = 1e-3


@dataclasses.dataclass(frozen=True)
class PenaltyConfig:
  """Death penalty added to fleet emission when consensus is violated.

  Attributes:
    penalty_value: added to the summed emission, in g/km
    consensus_tolerance: largest allowed |alpha_i s_i - alpha_j s_j|
  """
  consensus_tolerance: float
  penalty_value: float = 100.0

  def __post_init__(self) -> None:
    if not self.penalty_value > 0:
      raise ConfigError(f'penalty_value must be > 0, got {self.penalty_value}')
    if not self.consensus_tolerance > 0:
      raise ConfigError('consensus_tolerance must be > 0, got '
                        f'{self.consensus_tolerance}')

  @classmethod
  def for_scenario(cls,
                   scenario: Scenario,
                   penalty_value: float = 100.0) -> 'PenaltyConfig':
    """Tolerance 1e-3 * c_hi of the scenario's feasible interval."""
    _, c_hi = feasible_interval(scenario)
    return cls(DEFAULT_TOLERANCE_FRACTION * c_hi, penalty_value)


@dataclasses.dataclass(frozen=True)
class PsoConfig:
  """Global-best PSO with constriction weights."""
  bounds: Sequence[Tuple[float, float]]
  n_particles: int = 3
  max_iter: int = 50
  seed: int = 0
  inertia: float = 0.729
  cognitive: float = 1.494
  social: float = 1.494

  def __post_init__(self) -> None:
    _validate_swarm(self.bounds, self.n_particles, self.max_iter)
    if self.inertia < 0 or self.cognitive < 0 or self.social < 0:
      raise ConfigError('PSO weights must be >= 0')


@dataclasses.dataclass(frozen=True)
class GwoConfig:
  bounds: Sequence[Tuple[float, float]]
  n_wolves: int = 3
  max_iter: int = 50
  seed: int = 0

  def __post_init__(self) -> None:
    _validate_swarm(self.bounds, self.n_wolves, self.max_iter)


def _validate_swarm(bounds: Sequence[Tuple[float, float]], size: int,
                    max_iter: int) -> None:
  if size < 1:
    raise ConfigError(f'swarm size must be >= 1, got {size}')
  if max_iter < 0:
    raise ConfigError(f'max_iter must be >= 0, got {max_iter}')
  if not bounds:
    raise ConfigError('bounds must cover at least one dimension')
  for lo, hi in bounds:
    if not lo < hi:
      raise ConfigError(f'bounds need lo < hi, got ({lo}, {hi})')


def _box(
    bounds: Sequence[Tuple[float, float]]) -> Tuple[np.ndarray, np.ndarray]:
  return (np.array([lo for lo, _ in bounds], dtype=float),
          np.array([hi for _, hi in bounds], dtype=float))


def penalized_fitness(scenario: Scenario, registry: Registry,
                      speeds: np.ndarray, penalty: PenaltyConfig) -> float:
  """Summed fleet emission plus the penalty when consensus is violated.

  Args:
    scenario: the fleet
    registry: type label -> model
    speeds: one speed per vehicle, inside the box bounds
    penalty: PenaltyConfig

  Returns:
    sum_i f_i(s_i), plus penalty_value if the consensus spread exceeds the
    tolerance
  """
  total = fleet_emission(registry, scenario.vehicle_types(), speeds)
  if consensus_spread(scenario.alphas(), speeds) > penalty.consensus_tolerance:
    total += penalty.penalty_value
  return float(total)


def fleet_bounds(scenario: Scenario) -> List[Tuple[float, float]]:
  return [(vehicle.s_min, vehicle.s_max) for vehicle in scenario.vehicles]


def fleet_fitness(scenario: Scenario,
                  registry: Registry,
                  penalty: Optional[PenaltyConfig] = None) -> woa.Fitness:
  """Bind penalized_fitness to a scenario for the box optimizers."""
  penalty = penalty or PenaltyConfig.for_scenario(scenario)

  def fitness(speeds: np.ndarray) -> float:
    return penalized_fitness(scenario, registry, speeds, penalty)

  return fitness


def pso_minimize(fitness: woa.Fitness,
                 config: PsoConfig) -> Tuple[np.ndarray, float, RunRecord]:
  """Minimise a black-box fitness with global-best particle swarm.

  Velocities start at zero and are capped at the box width per dimension;
  positions are clamped into the box after every move.

  Args:
    fitness: opaque function of a position vector
    config: PsoConfig

  Returns:
    (best position, best fitness, RunRecord with the best per iteration)

  Raises:
    EvaluationError: if the fitness fails, with the position attached
  """
  rng = woa.make_rng(config.seed)
  lower, upper = _box(config.bounds)
  width = upper - lower
  n, dim = config.n_particles, len(lower)

  positions = rng.uniform(lower, upper, size=(n, dim))
  velocities = np.zeros((n, dim))
  values = np.array([woa.evaluate_fitness(fitness, x) for x in positions])
  personal_best = positions.copy()
  personal_value = values.copy()
  best = int(np.argmin(values))
  global_best, global_value = positions[best].copy(), float(values[best])

  record = RunRecord('pso', config.seed)
  evaluations = n
  record.append(0, global_value, evaluations)

  for k in range(config.max_iter):
    r1 = rng.random((n, dim))
    r2 = rng.random((n, dim))
    velocities = (
        config.inertia * velocities + config.cognitive * r1 *
        (personal_best - positions) + config.social * r2 *
        (global_best - positions))
    velocities = np.clip(velocities, -width, width)
    positions = np.clip(positions + velocities, lower, upper)

    for i, x in enumerate(positions):
      value = woa.evaluate_fitness(fitness, x)
      if value < personal_value[i]:
        personal_value[i] = value
        personal_best[i] = x
        if value < global_value:
          global_value = value
          global_best = x.copy()
    evaluations += n
    record.append(k + 1, global_value, evaluations)

  logging.debug('PSO seed %s finished at %s', config.seed, global_value)
  return global_best, global_value, record


def gwo_minimize(fitness: woa.Fitness,
                 config: GwoConfig) -> Tuple[np.ndarray, float, RunRecord]:
  """Minimise a black-box fitness with grey wolf optimisation.

  The three best positions found so far (alpha, beta, delta) lead the pack;
  every wolf moves to the mean of its three leader-guided steps. The decay
  falls linearly from 2 to 0.

  Args:
    fitness: opaque function of a position vector
    config: GwoConfig

  Returns:
    (best position, best fitness, RunRecord with the best per iteration)

  Raises:
    EvaluationError: if the fitness fails, with the position attached
  """
  rng = woa.make_rng(config.seed)
  lower, upper = _box(config.bounds)
  n, dim = config.n_wolves, len(lower)

  positions = rng.uniform(lower, upper, size=(n, dim))
  values = [woa.evaluate_fitness(fitness, x) for x in positions]
  # (value, position) of alpha, beta, delta; fewer while the pack is small
  leaders = sorted(zip(values, positions), key=lambda pair: pair[0])[:3]

  record = RunRecord('gwo', config.seed)
  evaluations = n
  record.append(0, leaders[0][0], evaluations)

  for k in range(config.max_iter):
    decay = woa.decay_schedule(k, config.max_iter)
    moved = np.empty_like(positions)
    for i, x in enumerate(positions):
      steps = []
      for _, leader in leaders:
        a_vector, c_vector = woa.coefficient_vectors(decay, rng, dim)
        steps.append(woa.encircle_step(x, leader, a_vector, c_vector))
      moved[i] = np.clip(np.mean(steps, axis=0), lower, upper)
    positions = moved

    for x in positions:
      value = woa.evaluate_fitness(fitness, x)
      _insert_leader(leaders, value, x)
    evaluations += n
    record.append(k + 1, leaders[0][0], evaluations)

  logging.debug('GWO seed %s finished at %s', config.seed, leaders[0][0])
  return leaders[0][1].copy(), leaders[0][0], record


def _insert_leader(leaders: List[Tuple[float, np.ndarray]], value: float,
                   position: np.ndarray) -> None:
  """Keep the three best (value, position) pairs, ties favour the incumbent."""
  for rank, (leader_value, _) in enumerate(leaders):
    if value < leader_value:
      leaders.insert(rank, (value, position.copy()))
      del leaders[3:]
      return
  if len(leaders) < 3:
    leaders.append((value, position.copy()))
