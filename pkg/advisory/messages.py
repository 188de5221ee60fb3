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
"""Protocol records exchanged between vehicles and the central node.

Only four kinds of message exist:
  mask_sync             central -> all    {scale, offset}
  fitness_report        vehicle -> central {vehicle_id, values, off_consensus}
  speed_broadcast       leader -> all     {vehicle_id, weighted_speeds}
  best_index_broadcast  central -> all    {best_index, improved}

fitness_report values are always masked and speed_broadcast values are always
alpha-weighted speeds, so no raw emission value ever leaves a vehicle.
"""

import dataclasses
import json
from typing import Any, Dict, List, Sequence, TextIO

MASK_SYNC = 'mask_sync'
FITNESS_REPORT = 'fitness_report'
SPEED_BROADCAST = 'speed_broadcast'
BEST_INDEX_BROADCAST = 'best_index_broadcast'

ALL_VARIANTS = (MASK_SYNC, FITNESS_REPORT, SPEED_BROADCAST,
                BEST_INDEX_BROADCAST)


@dataclasses.dataclass(frozen=True)
class Message:
  variant: str
  round: int
  sequence: int
  payload: Dict[str, Any]

  def to_record(self) -> Dict[str, Any]:
    return {
        'round': self.round,
        'sequence': self.sequence,
        'variant': self.variant,
        'payload': self.payload,
    }


def mask_sync_payload(scale: float, offset: float) -> Dict[str, Any]:
  return {'scale': scale, 'offset': offset}


def fitness_report_payload(vehicle_id: int, values: Sequence[float],
                           off_consensus: Sequence[bool]) -> Dict[str, Any]:
  return {
      'vehicle_id': vehicle_id,
      'values': [float(v) for v in values],
      'off_consensus': [bool(f) for f in off_consensus],
  }


def speed_broadcast_payload(vehicle_id: int,
                            weighted_speeds: Sequence[float]) -> Dict[str, Any]:
  return {
      'vehicle_id': vehicle_id,
      'weighted_speeds': [float(v) for v in weighted_speeds],
  }


def best_index_payload(best_index: int, improved: bool) -> Dict[str, Any]:
  return {'best_index': best_index, 'improved': improved}


class TransportInterface:
  """An ordered, lossless channel between the vehicles and the central node."""

  def send(self, variant: str, round_number: int,
           payload: Dict[str, Any]) -> Message:
    """Deliver a message and return it as recorded."""
    raise NotImplementedError

  @property
  def log(self) -> List[Message]:
    raise NotImplementedError


class InProcessTransport(TransportInterface):
  """Delivers messages in-process; the log is the ground truth of a run."""

  def __init__(self) -> None:
    self._log: List[Message] = []

  def send(self, variant: str, round_number: int,
           payload: Dict[str, Any]) -> Message:
    if variant not in ALL_VARIANTS:
      raise ValueError(f'unknown message variant {variant!r}')
    message = Message(variant, round_number, len(self._log), payload)
    self._log.append(message)
    return message

  @property
  def log(self) -> List[Message]:
    return self._log


def count_by_round(log: Sequence[Message]) -> Dict[int, Dict[str, int]]:
  """Count messages of each variant per round.

  Returns:
    Dict {round -> {variant -> count}}
  """
  counts: Dict[int, Dict[str, int]] = {}
  for message in log:
    per_round = counts.setdefault(message.round, {})
    per_round[message.variant] = per_round.get(message.variant, 0) + 1
  return counts


def write_log(log: Sequence[Message], f: TextIO) -> None:
  """Write the log as newline-delimited json records."""
  for message in log:
    f.write(json.dumps(message.to_record(), sort_keys=True) + '\n')
