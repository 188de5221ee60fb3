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
"""Whale optimisation over box-bounded real vectors.

Each whale either encircles the best known position, spirals towards it, or
moves relative to a random peer. The decay scalar shrinks linearly from 2 to
0 over the run, which moves the swarm from exploration to exploitation.

All randomness comes from one PCG64 stream. Per whale update the draw order is
  r (D values), r' (D values), u, p, l, peer index
whatever branch ends up being taken, so traces are reproducible from the seed.
"""

import dataclasses
import logging
from typing import Callable, List, Sequence, Tuple

import numpy as np

from advisory.errors import ConfigError, EvaluationError
from advisory.run_record import RunRecord

ENCIRCLE = 'encircle'
EXPLORE = 'explore'
SPIRAL = 'spiral'

# Vector -> scalar objective
Fitness = Callable[[np.ndarray], float]


@dataclasses.dataclass(frozen=True)
class SpiralParams:
  """Shape of the logarithmic spiral: factor e^(b l) cos(2 pi l)."""
  l: float
  b_spiral: float = 1.0

  def __post_init__(self) -> None:
    if not self.b_spiral > 0:
      raise ConfigError(f'b_spiral must be > 0, got {self.b_spiral}')
    if not -1.0 <= self.l <= 1.0:
      raise ConfigError(f'spiral l must be in [-1, 1], got {self.l}')


@dataclasses.dataclass(frozen=True)
class WoaConfig:
  """Settings for a centralized WOA run.

  Attributes:
    bounds: per-dimension (lo, hi)
    n_whales: population size M
    max_iter: iterations k_max, 0 returns the best initial whale
    seed: seed of the PCG64 stream
    b_spiral: spiral constant b
  """
  bounds: Sequence[Tuple[float, float]]
  n_whales: int = 3
  max_iter: int = 50
  seed: int = 0
  b_spiral: float = 1.0

  def __post_init__(self) -> None:
    if self.n_whales < 1:
      raise ConfigError(f'n_whales must be >= 1, got {self.n_whales}')
    if self.max_iter < 0:
      raise ConfigError(f'max_iter must be >= 0, got {self.max_iter}')
    if not self.bounds:
      raise ConfigError('bounds must cover at least one dimension')
    for lo, hi in self.bounds:
      if not lo < hi:
        raise ConfigError(f'bounds need lo < hi, got ({lo}, {hi})')

  def lower(self) -> np.ndarray:
    return np.array([lo for lo, _ in self.bounds], dtype=float)

  def upper(self) -> np.ndarray:
    return np.array([hi for _, hi in self.bounds], dtype=float)


@dataclasses.dataclass
class SwarmState:
  positions: np.ndarray  # M x D
  best_position: np.ndarray
  best_fitness: float
  iteration: int = 0
  decay: float = 2.0


@dataclasses.dataclass(frozen=True)
class UpdateDraw:
  """Every random number one whale update consumes."""
  a_vector: np.ndarray
  c_vector: np.ndarray
  # scalar A used for the |A| < 1 branch test
  a_scalar: float
  p: float
  l: float
  peer: int


def make_rng(seed: int) -> np.random.Generator:
  return np.random.Generator(np.random.PCG64(seed))


def decay_schedule(k: int, k_max: int) -> float:
  """Decay 2 (1 - k / k_max) clamped to [0, 2]."""
  if k_max <= 0:
    return 0.0
  return float(min(2.0, max(0.0, 2.0 * (1.0 - k / k_max))))


def coefficient_vectors(decay: float, rng: np.random.Generator,
                        dim: int = 1) -> Tuple[np.ndarray, np.ndarray]:
  """Draw A = 2 decay r - decay and C = 2 r' with fresh r, r' in [0, 1]^dim."""
  r = rng.random(dim)
  a_vector = 2.0 * decay * r - decay
  c_vector = 2.0 * rng.random(dim)
  return a_vector, c_vector


def encircle_step(x: np.ndarray, x_star: np.ndarray, a_vector: np.ndarray,
                  c_vector: np.ndarray) -> np.ndarray:
  distance = np.abs(c_vector * x_star - x)
  return x_star - a_vector * distance


def spiral_step(x: np.ndarray, x_star: np.ndarray,
                params: SpiralParams) -> np.ndarray:
  factor = np.exp(params.b_spiral * params.l) * np.cos(2.0 * np.pi * params.l)
  return np.abs(x_star - x) * factor + x_star


def explore_step(x: np.ndarray, x_rand: np.ndarray, a_vector: np.ndarray,
                 c_vector: np.ndarray) -> np.ndarray:
  distance = np.abs(c_vector * x_rand - x)
  return x_rand - a_vector * distance


def draw_update(decay: float, dim: int, population_size: int,
                rng: np.random.Generator) -> UpdateDraw:
  a_vector, c_vector = coefficient_vectors(decay, rng, dim)
  a_scalar = 2.0 * decay * rng.random() - decay
  p = rng.random()
  l = rng.uniform(-1.0, 1.0)
  peer = int(rng.integers(population_size))
  return UpdateDraw(a_vector, c_vector, float(a_scalar), float(p), float(l),
                    peer)


def branch_of(draw: UpdateDraw) -> str:
  if draw.p >= 0.5:
    return SPIRAL
  if abs(draw.a_scalar) < 1.0:
    return ENCIRCLE
  return EXPLORE


def apply_update(x: np.ndarray,
                 x_star: np.ndarray,
                 population: np.ndarray,
                 draw: UpdateDraw,
                 lower: np.ndarray,
                 upper: np.ndarray,
                 b_spiral: float = 1.0) -> np.ndarray:
  """Move one whale according to a draw and clamp it into the box.

  Args:
    x: current position of the whale
    x_star: best known position
    population: M x D positions the random peer is picked from
    draw: random numbers for this update
    lower: per-dimension lower bounds
    upper: per-dimension upper bounds
    b_spiral: spiral constant

  Returns:
    the new clamped position
  """
  branch = branch_of(draw)
  if branch == SPIRAL:
    moved = spiral_step(x, x_star, SpiralParams(draw.l, b_spiral))
  elif branch == ENCIRCLE:
    moved = encircle_step(x, x_star, draw.a_vector, draw.c_vector)
  else:
    moved = explore_step(x, population[draw.peer], draw.a_vector,
                         draw.c_vector)
  return np.clip(moved, lower, upper)


def update_agent(x: np.ndarray,
                 state: SwarmState,
                 lower: np.ndarray,
                 upper: np.ndarray,
                 rng: np.random.Generator,
                 b_spiral: float = 1.0) -> np.ndarray:
  """One WOA position update of a whale against the swarm state."""
  draw = draw_update(state.decay, len(x), len(state.positions), rng)
  return apply_update(x, state.best_position, state.positions, draw, lower,
                      upper, b_spiral)


def evaluate_fitness(fitness: Fitness, position: np.ndarray) -> float:
  try:
    return float(fitness(position))
  except Exception as ex:
    raise EvaluationError(
        f'fitness evaluation failed at {position.tolist()}: {ex}',
        speed=position.tolist()) from ex


def woa_minimize(fitness: Fitness,
                 config: WoaConfig) -> Tuple[np.ndarray, float, RunRecord]:
  """Minimise a black-box fitness over the config's box.

  Args:
    fitness: opaque function of a position vector
    config: WoaConfig

  Returns:
    (best position, best fitness, RunRecord with the best per iteration)

  Raises:
    EvaluationError: if the fitness fails, with the position attached
  """
  rng = make_rng(config.seed)
  lower, upper = config.lower(), config.upper()
  positions = rng.uniform(lower, upper, size=(config.n_whales, len(lower)))
  values: List[float] = [evaluate_fitness(fitness, x) for x in positions]
  best = int(np.argmin(values))
  state = SwarmState(
      positions=positions,
      best_position=positions[best].copy(),
      best_fitness=values[best],
      decay=decay_schedule(0, config.max_iter))

  record = RunRecord('woa', config.seed)
  evaluations = config.n_whales
  record.append(0, state.best_fitness, evaluations)

  for k in range(config.max_iter):
    state.decay = decay_schedule(k, config.max_iter)
    moved = np.array([
        update_agent(x, state, lower, upper, rng, config.b_spiral)
        for x in state.positions
    ])
    state.positions = moved
    for x in moved:
      value = evaluate_fitness(fitness, x)
      if value < state.best_fitness:
        state.best_fitness = value
        state.best_position = x.copy()
    evaluations += config.n_whales
    state.iteration = k + 1
    record.append(state.iteration, state.best_fitness, evaluations)

  logging.debug('WOA seed %s finished at %s', config.seed, state.best_fitness)
  return state.best_position, state.best_fitness, record
