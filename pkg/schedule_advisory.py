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
"""Keep the speed advice current while the scenario changes.

Polls a revisions file at a fixed interval. Every revision whose time has
passed is applied once, the advisory is re-run for it, and one event per
revision is appended to an NDJSON log.

python schedule_advisory.py --scenario=scenarios/two_lane.json \
  --revisions=scenarios/revisions_example.json --events=out/events.jsonl
"""

import argparse
import datetime
import json
import logging
import time
from typing import List, Optional

import schedule

import advisory_resources
from advisory import dsas
from advisory import revisions
from advisory.errors import AdvisoryError, ConfigError
from advisory.run_experiments import load_registry
from advisory.scenario import read_json_file

# Seconds between two looks at the revisions file
DEFAULT_POLL_SECONDS = 60


def due_revisions(
    all_revisions: List[revisions.Revision],
    now: Optional[datetime.datetime] = None) -> List[revisions.Revision]:
  """The leading revisions whose time is not in the future."""
  if now is None:
    now = datetime.datetime.now(datetime.timezone.utc)
  due = []
  for revision in all_revisions:
    if revision.time > now:
      break
    due.append(revision)
  return due


class AdvisoryWatcher:
  """Applies due revisions and logs the resulting events."""

  def __init__(self, scenario_path: str, revisions_path: str,
               registry_path: str, events_path: str,
               config: dsas.DsasConfig) -> None:
    self.scenario_path = scenario_path
    self.revisions_path = revisions_path
    self.registry_path = registry_path
    self.events_path = events_path
    self.config = config
    # Stream entries handled so far, the base scenario counts as one.
    self.handled = 0
    self.retained: Optional[int] = None
    # Message of the bad revision the stream currently stops at.
    self.blocked: Optional[str] = None

  def poll(self) -> List[dsas.SupervisorEvent]:
    """Run every revision that became due since the last poll.

    Returns:
      the new events, also appended to the events file
    """
    try:
      base = read_json_file(self.scenario_path)
      if not isinstance(base, dict):
        raise ConfigError(f'{self.scenario_path} must hold a json object')
      registry = load_registry(self.registry_path, base)
      due = due_revisions(
          revisions.parse_revisions(read_json_file(self.revisions_path)))
      stream, blocked = revisions.revision_prefix(base, due)
    except ConfigError as ex:
      logging.warning('Skipping poll, inputs are invalid: %s', ex)
      return []
    if blocked is not None and str(blocked) != self.blocked:
      logging.error('Holding at revision %s until this is fixed: %s',
                    len(stream) - 1, blocked)
    self.blocked = None if blocked is None else str(blocked)

    pending = stream[self.handled:]
    if not pending:
      return []
    events = list(
        dsas.supervise(pending, registry, self.config, self.handled,
                       self.retained))
    with open(self.events_path, 'a') as f:
      for event in events:
        f.write(json.dumps(event.to_json_dict(), sort_keys=True) + '\n')
        if event.kind == dsas.RESULT_EVENT:
          self.retained = event.revision
    self.handled = len(stream)
    logging.info('Applied %s revisions, advice from revision %s in force',
                 len(events), self.retained)
    return events


def run(watcher: AdvisoryWatcher, poll_seconds: int) -> None:
  watcher.poll()  # run once when starting to surface input errors early

  schedule.every(poll_seconds).seconds.do(watcher.poll)

  while True:
    schedule.run_pending()
    wait = schedule.idle_seconds()
    logging.info('Waiting %s seconds until the next poll', wait)
    time.sleep(max(wait or 0, 0))


def main(parsed_args: argparse.Namespace) -> None:
  logging.basicConfig(level=logging.INFO)
  watcher = AdvisoryWatcher(
      parsed_args.scenario, parsed_args.revisions,
      advisory_resources.get_model_registry_path(), parsed_args.events,
      dsas.DsasConfig(
          n_whales=parsed_args.m,
          max_rounds=parsed_args.k_max,
          seed=parsed_args.seed))
  try:
    run(watcher, parsed_args.poll_seconds)
  except AdvisoryError:
    logging.exception('Advisory watcher stopped')
    raise


if __name__ == '__main__':
  parser = argparse.ArgumentParser(
      description='Re-run the speed advisory as scenario revisions come due')
  parser.add_argument(
      '--scenario',
      type=str,
      default=advisory_resources.DEFAULT_TWO_LANE_SCENARIO,
      help='Base scenario json file')
  parser.add_argument(
      '--revisions', type=str, required=True, help='Revisions json file')
  parser.add_argument(
      '--events', type=str, required=True, help='NDJSON file to append to')
  parser.add_argument(
      '--poll_seconds',
      type=int,
      default=DEFAULT_POLL_SECONDS,
      help='Seconds between polls')
  parser.add_argument('--seed', type=int, default=0, help='Protocol seed')
  parser.add_argument('--k_max', type=int, default=50, help='Protocol rounds')
  parser.add_argument('--m', type=int, default=3, help='Whales per vehicle')
  args = parser.parse_args()

  main(args)
