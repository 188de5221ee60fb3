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
"""Interface for black-box emission models and their fakes."""

from typing import Tuple, Union

import numpy as np

# A single speed or an array of speeds in km/h
Speed = Union[float, np.ndarray]


class EmissionModelInterface:
  """A per-vehicle CO2 cost function that can only be evaluated pointwise.

  Attributes:
    type_label: registry key like 'Type-1'
    valid_range: (lo, hi) speeds in km/h where evaluation is defined
  """

  type_label: str
  valid_range: Tuple[float, float]

  def evaluate(self, speed: Speed) -> Speed:
    """Emission in g CO2 per km at the given speed(s).

    Raises:
      SpeedOutOfModelRange: if any speed lies outside valid_range
    """
    raise NotImplementedError
