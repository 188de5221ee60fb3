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
"""Timestamped scenario revisions and the scenario stream they produce.

A revisions file looks like
  {"revisions": [{"time": "2021-05-01T08:00:00+00:00",
                  "edits": [{"op": "set_alpha", "lane": 1, "alpha": 1.3}]}]}
Edits accumulate: revision k applies to the scenario left by revision k - 1.
"""

import dataclasses
import datetime
from typing import Any, Dict, List, Optional, Tuple

from advisory.errors import ConfigError
from advisory.scenario import ScenarioConfig, apply_edits

# Time label of the unrevised base scenario in a stream
INITIAL_TIME = 'initial'


@dataclasses.dataclass(frozen=True)
class Revision:
  time: datetime.datetime
  edits: Tuple[Dict[str, Any], ...]


def _parse_time(raw: Any) -> datetime.datetime:
  try:
    time = datetime.datetime.fromisoformat(str(raw))
  except ValueError as ex:
    raise ConfigError(f'revision time {raw!r} is not ISO-8601') from ex
  if time.tzinfo is None:
    time = time.replace(tzinfo=datetime.timezone.utc)
  return time


def parse_revisions(config: Any) -> List[Revision]:
  """Validate a parsed revisions file.

  Args:
    config: dict with a 'revisions' list of {time, edits}

  Returns:
    Revisions in file order

  Raises:
    ConfigError: if the file is malformed or times go backwards
  """
  if not isinstance(config, dict) or not isinstance(
      config.get('revisions'), list):
    raise ConfigError('revisions file must be an object with a '
                      '"revisions" list')
  revisions = []
  for entry in config['revisions']:
    if not isinstance(entry, dict) or 'time' not in entry:
      raise ConfigError(f'malformed revision {entry!r}')
    edits = entry.get('edits', [])
    if not isinstance(edits, list):
      raise ConfigError(f'revision edits must be a list, got {edits!r}')
    revision = Revision(_parse_time(entry['time']), tuple(edits))
    if revisions and revision.time < revisions[-1].time:
      raise ConfigError(f'revision at {revision.time.isoformat()} is earlier '
                        'than the one before it')
    revisions.append(revision)
  return revisions


def revision_stream(
    base: ScenarioConfig,
    revisions: List[Revision]) -> List[Tuple[str, ScenarioConfig]]:
  """The base scenario followed by every cumulatively revised scenario.

  All edits are applied up front, so a bad edit fails before anything runs.

  Returns:
    [(time label, full scenario config), ...], starting with the base

  Raises:
    ConfigError: naming the first revision whose edits can't be applied
  """
  stream, error = revision_prefix(base, revisions)
  if error is not None:
    raise error
  return stream


def revision_prefix(
    base: ScenarioConfig, revisions: List[Revision]
) -> Tuple[List[Tuple[str, ScenarioConfig]], Optional[ConfigError]]:
  """Like revision_stream, but stops before the first bad revision.

  Returns:
    (the stream up to the bad revision, its ConfigError or None)
  """
  stream = [(INITIAL_TIME, base)]
  current = base
  for number, revision in enumerate(revisions, 1):
    try:
      current = apply_edits(current, list(revision.edits))
    except ConfigError as ex:
      error = ConfigError(
          f'revision {number} at {revision.time.isoformat()}: {ex}')
      error.__cause__ = ex
      return stream, error
    stream.append((revision.time.isoformat(), current))
  return stream, None
