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
"""Per-iteration convergence traces shared by every optimizer."""

import csv
import dataclasses
from typing import List, Optional, TextIO

RUN_RECORD_SCHEMA = 'run_record/1'
RUN_RECORD_COLUMNS = [
    'iteration', 'best_fitness', 'evaluations', 'bounds_binding'
]


@dataclasses.dataclass(frozen=True)
class TraceRow:
  iteration: int
  # g/km for fleet problems, raw objective value otherwise
  best_fitness: float
  # candidate solutions evaluated so far
  evaluations: int
  bounds_binding: bool = False


@dataclasses.dataclass
class RunRecord:
  """Convergence trace of one optimizer run.

  Row 0 holds the best of the initial population; row k the best after k
  iterations (or protocol rounds).
  """
  algorithm: str
  seed: int
  scenario_digest: str = ''
  rows: List[TraceRow] = dataclasses.field(default_factory=list)

  def append(self,
             iteration: int,
             best_fitness: float,
             evaluations: int,
             bounds_binding: bool = False) -> None:
    if self.rows and iteration <= self.rows[-1].iteration:
      raise ValueError(f'iteration {iteration} does not follow '
                       f'{self.rows[-1].iteration}')
    self.rows.append(
        TraceRow(iteration, float(best_fitness), evaluations, bounds_binding))

  def best_fitness(self) -> List[float]:
    return [row.best_fitness for row in self.rows]

  def is_monotone(self) -> bool:
    """True when best_fitness never increases."""
    values = self.best_fitness()
    return all(later <= earlier for earlier, later in zip(values, values[1:]))

  def first_iteration_within(self, target: float) -> Optional[int]:
    """First iteration whose best fitness is <= target, None if never."""
    for row in self.rows:
      if row.best_fitness <= target:
        return row.iteration
    return None

  def write_csv(self, f: TextIO) -> None:
    """Write the trace as csv with a schema guard row first."""
    writer = csv.writer(f, lineterminator='\n')
    writer.writerow([
        '#schema', RUN_RECORD_SCHEMA, '#algorithm', self.algorithm, '#seed',
        self.seed, '#scenario', self.scenario_digest
    ])
    writer.writerow(RUN_RECORD_COLUMNS)
    for row in self.rows:
      writer.writerow([
          row.iteration,
          repr(row.best_fitness), row.evaluations,
          int(row.bounds_binding)
      ])
