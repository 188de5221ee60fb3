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
"""Exceptions shared across the advisory modules."""

from typing import Any, Optional


class AdvisoryError(Exception):
  """Base class for all errors raised by the advisory package."""


class ConfigError(AdvisoryError):
  """A config, scenario, registry or revision file is malformed or invalid."""


class InfeasibleScenario(AdvisoryError):
  """The alpha ratios cannot be satisfied within the vehicles' speed bounds."""

  def __init__(self, message: str, c_lo: float, c_hi: float) -> None:
    super().__init__(message)
    self.c_lo = c_lo
    self.c_hi = c_hi


class InfeasibleRatio(InfeasibleScenario):
  """A lane ratio in a sweep yields an infeasible scenario."""

  def __init__(self, ratio: float, c_lo: float, c_hi: float) -> None:
    super().__init__(
        f'ratio {ratio} is infeasible: consensus interval '
        f'[{c_lo}, {c_hi}] is empty', c_lo, c_hi)
    self.ratio = ratio


class OutOfFeasibleRange(AdvisoryError):
  """A consensus value lies outside the scenario's feasible interval."""


class SpeedOutOfModelRange(AdvisoryError):
  """An emission model was asked for a speed outside its valid range."""


class EvaluationError(AdvisoryError):
  """Wraps a fitness evaluation failure with where it happened.

  Attributes:
    vehicle_id: id of the vehicle whose model failed, if known
    whale: index of the whale being evaluated, if known
    speed: the speed (or position vector) that was being evaluated
  """

  def __init__(self,
               message: str,
               vehicle_id: Optional[int] = None,
               whale: Optional[int] = None,
               speed: Any = None) -> None:
    super().__init__(message)
    self.vehicle_id = vehicle_id
    self.whale = whale
    self.speed = speed
