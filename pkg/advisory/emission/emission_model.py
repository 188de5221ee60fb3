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
"""Average-speed emission models, the model registry and fitness masking.

The shipped curves use the average-speed form

  f(v) = (b0 + b1 v + b2 v^2 + b3 v^3) / v    [g CO2 / km]

with four representative coefficient sets (Type-1 .. Type-4). They are smooth,
positive on [60, 120] km/h and have distinct interior minima; they are not
calibrated against any measured fleet.
"""

import dataclasses
import logging
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from advisory.emission.emission_model_interface import (EmissionModelInterface,
                                                       Speed)
from advisory.errors import ConfigError, SpeedOutOfModelRange

# type label -> model
Registry = Dict[str, EmissionModelInterface]

# Mask draw ranges for a run's (a, b) pair
MASK_SCALE_RANGE = (0.5, 2.0)
MASK_OFFSET_RANGE = (1.0, 100.0)

# Fitness reports are rounded to this many g/km before masking, so every
# mask in MASK_SCALE_RANGE orders the rounded sums the same way.
FITNESS_RESOLUTION = 1e-8

# Step of the positivity scan run on every registry entry, in km/h
VALIDATION_GRID_STEP = 1.0


class PolynomialEmissionModel(EmissionModelInterface):
  """Average-speed emission curve f(v) = (b0 + b1 v + b2 v^2 + b3 v^3) / v."""

  def __init__(self, type_label: str, coefficients: Sequence[float],
               valid_range: Tuple[float, float]) -> None:
    """Create a model.

    Args:
      type_label: registry key like 'Type-1'
      coefficients: [b0, b1, b2, b3]
      valid_range: (lo, hi) in km/h, lo > 0
    """
    self.type_label = type_label
    self.valid_range = (float(valid_range[0]), float(valid_range[1]))
    # Lowest order first, as numpy.polynomial expects.
    self._coefficients = np.array(coefficients, dtype=float)

  def evaluate(self, speed: Speed) -> Speed:
    speeds = np.asarray(speed, dtype=float)
    lo, hi = self.valid_range
    if np.any(speeds < lo) or np.any(speeds > hi) or np.any(np.isnan(speeds)):
      raise SpeedOutOfModelRange(
          f'{self.type_label}: speed {speed} outside valid range [{lo}, {hi}]')
    values = np.polynomial.polynomial.polyval(speeds,
                                              self._coefficients) / speeds
    if values.ndim == 0:
      return float(values)
    return values

  def __repr__(self) -> str:
    # Keep coefficients out of logs and messages.
    return f'PolynomialEmissionModel({self.type_label!r})'


@dataclasses.dataclass(frozen=True)
class AffineMask:
  """The shared (a, b) pair applied to fitness values before they are sent.

  a > 0 keeps the argmin of any sum of masked values equal to the argmin of
  the unmasked sum. The mask hides raw values from the aggregator; it is not a
  cryptographic protection.
  """
  scale: float
  offset: float

  def __post_init__(self) -> None:
    if not self.scale > 0:
      raise ConfigError(f'mask scale must be > 0, got {self.scale}')

  def unmask_sum(self, masked_sum: float, count: int) -> float:
    """Recover sum f_i from sum (a f_i + b) over count terms."""
    return (masked_sum - count * self.offset) / self.scale


IDENTITY_MASK = AffineMask(scale=1.0, offset=0.0)


def evaluate(model: EmissionModelInterface, speed: Speed) -> Speed:
  """Emission of a model at a speed, the only view optimizers get of it."""
  return model.evaluate(speed)


def masked_evaluate(model: EmissionModelInterface,
                    speed: Speed,
                    mask: AffineMask,
                    resolution: Optional[float] = None) -> Speed:
  """Return a * f(speed) + b, f first rounded to resolution when given."""
  value = model.evaluate(speed)
  if resolution is not None:
    value = resolution * np.round(np.divide(value, resolution))
  return mask.scale * value + mask.offset


def fleet_emission(registry: Registry, vehicle_types: Sequence[str],
                   speeds: np.ndarray) -> Speed:
  """Summed emission of a fleet, evaluated one vehicle type at a time.

  Args:
    registry: type label -> model
    vehicle_types: type label of each vehicle, in vehicle order
    speeds: array whose last axis runs over the vehicles, e.g. N or G x N

  Returns:
    sum over the last axis of f_i(speeds[..., i]); a float for 1-D input
  """
  speeds = np.asarray(speeds, dtype=float)
  if speeds.shape[-1] != len(vehicle_types):
    raise ValueError(f'{speeds.shape[-1]} speeds for {len(vehicle_types)} '
                     'vehicles')
  values = np.empty_like(speeds)
  labels = np.array(vehicle_types)
  for label in sorted(set(vehicle_types)):
    columns = labels == label
    values[..., columns] = evaluate(registry[label], speeds[..., columns])
  total = values.sum(axis=-1)
  if total.ndim == 0:
    return float(total)
  return total


def draw_mask(rng: np.random.Generator) -> AffineMask:
  """Draw a run's mask, a in [0.5, 2] and b in [1, 100]."""
  scale = rng.uniform(*MASK_SCALE_RANGE)
  offset = rng.uniform(*MASK_OFFSET_RANGE)
  return AffineMask(scale=float(scale), offset=float(offset))


def _validate_model(model: EmissionModelInterface) -> None:
  """Scan the valid range on a 1 km/h grid for values <= 0 or non-finite."""
  lo, hi = model.valid_range
  grid = np.append(np.arange(lo, hi, VALIDATION_GRID_STEP), hi)
  values = np.asarray(model.evaluate(grid))
  bad = ~np.isfinite(values) | (values <= 0)
  if np.any(bad):
    first_bad = float(grid[np.argmax(bad)])
    raise ConfigError(f'model {model.type_label!r} is not positive and finite '
                      f'at {first_bad} km/h')


def _parse_model(entry: Mapping[str, Any]) -> PolynomialEmissionModel:
  """Parse one registry entry.

  Args:
    entry: dict like
      {'type': 'Type-1', 'coefficients': [8232, 40, 0, 0.0125],
       'valid_range': [60, 120]}

  Returns:
    the validated model
  """
  label: Any = None
  try:
    label = str(entry['type'])
    coefficients = [float(x) for x in entry['coefficients']]
    lo, hi = (float(x) for x in entry['valid_range'])
  except (KeyError, TypeError, ValueError) as ex:
    raise ConfigError(f'malformed model entry {label!r}: {ex}') from ex
  if len(coefficients) != 4:
    raise ConfigError(f'model {label!r} needs 4 coefficients, '
                      f'got {len(coefficients)}')
  if not 0 < lo < hi:
    raise ConfigError(f'model {label!r} needs 0 < lo < hi, got [{lo}, {hi}]')
  model = PolynomialEmissionModel(label, coefficients, (lo, hi))
  _validate_model(model)
  return model


def load_model_registry(config: Mapping[str, Any],
                        extra_models: Optional[List[Mapping[str, Any]]] = None
                       ) -> Registry:
  """Build a registry of emission models from a parsed registry file.

  Args:
    config: dict with a 'models' list, see _parse_model for the entry format
    extra_models: more entries, usually from a scenario file. They replace
      registry entries with the same type label.

  Returns:
    Dict {type_label -> model}

  Raises:
    ConfigError: naming the offending model when parsing or validation fails
  """
  if not isinstance(config, Mapping) or not isinstance(
      config.get('models'), list):
    raise ConfigError('model registry must be an object with a "models" list')
  if not config['models']:
    raise ConfigError('model registry is empty')

  registry: Registry = {}
  for entry in config['models']:
    model = _parse_model(entry)
    if model.type_label in registry:
      raise ConfigError(f'model {model.type_label!r} is defined twice')
    registry[model.type_label] = model

  for entry in extra_models or []:
    model = _parse_model(entry)
    if model.type_label in registry:
      logging.info('Scenario overrides emission model %s', model.type_label)
    registry[model.type_label] = model

  logging.info('Loaded %s emission models: %s', len(registry),
               sorted(registry))
  return registry
