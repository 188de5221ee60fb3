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
"""Fake emission models with known minima for use in testing."""

from typing import Tuple

import numpy as np

from advisory.emission.emission_model import Registry
from advisory.emission.emission_model_interface import (EmissionModelInterface,
                                                       Speed)
from advisory.errors import SpeedOutOfModelRange


class QuadraticEmissionModel(EmissionModelInterface):
  """f(s) = scale * (s - center)^2 + offset, minimum offset at center."""

  def __init__(self,
               type_label: str,
               center: float,
               offset: float = 1.0,
               scale: float = 1.0,
               valid_range: Tuple[float, float] = (60.0, 120.0)) -> None:
    self.type_label = type_label
    self.valid_range = valid_range
    self.center = center
    self.offset = offset
    self.scale = scale

  def evaluate(self, speed: Speed) -> Speed:
    speeds = np.asarray(speed, dtype=float)
    lo, hi = self.valid_range
    if np.any(speeds < lo) or np.any(speeds > hi):
      raise SpeedOutOfModelRange(f'{self.type_label}: {speed} outside '
                                 f'[{lo}, {hi}]')
    values = self.scale * (speeds - self.center)**2 + self.offset
    if values.ndim == 0:
      return float(values)
    return values


def quadratic_registry() -> Registry:
  """A small registry of quadratic models with minima at 75, 85 and 95 km/h."""
  return {
      'Slow': QuadraticEmissionModel('Slow', center=75.0, offset=100.0),
      'Mid': QuadraticEmissionModel('Mid', center=85.0, offset=120.0),
      'Fast': QuadraticEmissionModel('Fast', center=95.0, offset=150.0),
  }
