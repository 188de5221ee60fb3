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
"""Various cross-file constants and project-specific defaults."""

import os

_HERE = os.path.dirname(os.path.abspath(__file__))

# Emission model registry shipped with the package
DEFAULT_MODEL_REGISTRY = os.path.join(_HERE, 'advisory', 'emission',
                                      'default_models.json')
# Set this to point the CLI at a different registry file
MODEL_REGISTRY_ENV_VAR = 'ADVISORY_MODEL_REGISTRY'

# Shipped scenarios
SCENARIO_DIR = os.path.join(_HERE, 'scenarios')
DEFAULT_TWO_LANE_SCENARIO = os.path.join(SCENARIO_DIR, 'two_lane.json')
DEFAULT_THREE_LANE_SCENARIO = os.path.join(SCENARIO_DIR, 'three_lane.json')

# Highway speed range in km/h
DEFAULT_SPEED_BOUNDS = (60.0, 120.0)

# CLI exit codes
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_INFEASIBLE = 3
EXIT_EVALUATION_ERROR = 4


def get_model_registry_path() -> str:
  """Registry path, honouring the environment override."""
  return os.environ.get(MODEL_REGISTRY_ENV_VAR, DEFAULT_MODEL_REGISTRY)
