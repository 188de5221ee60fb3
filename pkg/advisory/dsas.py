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
"""Distributed speed advisory: the whale optimiser run as message passing.

Every vehicle holds M whales (candidate speeds) and a private emission model.
Each round one leader vehicle moves its whales with a WOA update and
broadcasts alpha * speed; everybody else projects onto the consensus
alpha_i s_i = alpha_j s_j and reports masked emissions a f_i + b per whale.
The central node only sees those masked sums; it picks the best whale index
h* and broadcasts it back.
"""

import concurrent.futures
import dataclasses
import logging
import math
from typing import (Any, Dict, Iterable, Iterator, List, Optional, Sequence,
                    Tuple)

import numpy as np

from advisory import messages
from advisory import woa
from advisory.emission.emission_model import (FITNESS_RESOLUTION,
                                              MASK_SCALE_RANGE, AffineMask,
                                              Registry, draw_mask,
                                              masked_evaluate)
from advisory.emission.emission_model_interface import EmissionModelInterface
from advisory.errors import (AdvisoryError, ConfigError, EvaluationError,
                             InfeasibleScenario, SpeedOutOfModelRange)
from advisory.run_record import RunRecord
from advisory.scenario import (Scenario, ScenarioConfig, VehicleSpec,
                               feasible_interval, scenario_from_config)

UNIFORM_LEADER = 'uniform'
ROUND_ROBIN_LEADER = 'round_robin'

# Projection clamps that move a speed by less than this (relative) are
# rounding noise, not binding bounds.
BINDING_RTOL = 1e-9

# Masked sums closer than this are ties. Distinct rounded fitness sums sit at
# least MASK_SCALE_RANGE[0] * FITNESS_RESOLUTION apart under any valid mask.
TIE_MARGIN = 0.5 * MASK_SCALE_RANGE[0] * FITNESS_RESOLUTION

# (vehicle_id, masked values, off_consensus flags)
Report = Tuple[int, np.ndarray, np.ndarray]


@dataclasses.dataclass(frozen=True)
class DsasConfig:
  """Settings of a distributed run.

  Attributes:
    n_whales: whales per vehicle M
    max_rounds: protocol rounds k_max
    seed: seed for all protocol randomness
    consensus_init: start all whales on the consensus line; if False every
      vehicle draws its own whales inside its bounds
    leader_policy: 'uniform' (with replacement) or 'round_robin'
    mask: fixed (a, b) pair; drawn from its own stream when None
    concurrent_reports: collect fitness reports on a thread pool
    b_spiral: spiral constant of the leader's WOA update
  """
  n_whales: int = 3
  max_rounds: int = 50
  seed: int = 0
  consensus_init: bool = True
  leader_policy: str = UNIFORM_LEADER
  mask: Optional[AffineMask] = None
  concurrent_reports: bool = False
  b_spiral: float = 1.0

  def __post_init__(self) -> None:
    if self.n_whales < 1:
      raise ConfigError(f'n_whales must be >= 1, got {self.n_whales}')
    if self.max_rounds < 0:
      raise ConfigError(f'max_rounds must be >= 0, got {self.max_rounds}')
    if self.leader_policy not in (UNIFORM_LEADER, ROUND_ROBIN_LEADER):
      raise ConfigError(f'unknown leader policy {self.leader_policy!r}')
    if self.mask is not None and not (MASK_SCALE_RANGE[0] <= self.mask.scale <=
                                      MASK_SCALE_RANGE[1]):
      raise ConfigError(f'mask scale must be in {MASK_SCALE_RANGE}, got '
                        f'{self.mask.scale}')


def _clamp(speeds: np.ndarray, s_min: float,
           s_max: float) -> Tuple[np.ndarray, np.ndarray]:
  """Clamp speeds to bounds and flag the ones the clamp really moved."""
  clamped = np.clip(speeds, s_min, s_max)
  moved = np.abs(clamped - speeds) > BINDING_RTOL * np.maximum(
      np.abs(speeds), 1.0)
  return clamped, moved


class VehicleAgent:
  """One vehicle: its whales, its private model and the shared mask."""

  def __init__(self, spec: VehicleSpec, model: EmissionModelInterface,
               n_whales: int) -> None:
    self.spec = spec
    self._model = model
    self.whales = np.full(n_whales, spec.s_min)
    # Whales not known to satisfy the consensus constraint.
    self.off_consensus = np.zeros(n_whales, dtype=bool)
    self.elite = spec.s_min
    self.mask: Optional[AffineMask] = None

  def receive_mask(self, payload: Dict[str, Any]) -> None:
    self.mask = AffineMask(payload['scale'], payload['offset'])

  def set_whales(self, speeds: np.ndarray, off_consensus: np.ndarray) -> None:
    self.whales, clamped = _clamp(speeds, self.spec.s_min, self.spec.s_max)
    self.off_consensus = off_consensus | clamped

  def propose(self, decay: float, rng: np.random.Generator,
              b_spiral: float) -> np.ndarray:
    """Move every whale with one WOA update, the elite acting as X*.

    Returns:
      alpha-weighted speeds of the moved, bounded whales
    """
    population = self.whales.reshape(-1, 1)
    state = woa.SwarmState(
        positions=population,
        best_position=np.array([self.elite]),
        best_fitness=float('nan'),
        decay=decay)
    lower = np.array([self.spec.s_min])
    upper = np.array([self.spec.s_max])
    moved = np.array([
        woa.update_agent(x, state, lower, upper, rng, b_spiral)[0]
        for x in population
    ])
    self.whales = moved
    self.off_consensus = np.zeros(len(moved), dtype=bool)
    return self.spec.alpha * self.whales

  def project(self, weighted_speeds: Sequence[float]) -> bool:
    """Follow a leader broadcast: s_i = alpha_j s_j / alpha_i, then clamp.

    Returns:
      True when the clamp was binding for any whale
    """
    raw = np.asarray(weighted_speeds, dtype=float) / self.spec.alpha
    self.whales, clamped = _clamp(raw, self.spec.s_min, self.spec.s_max)
    self.off_consensus = clamped
    return bool(np.any(clamped))

  def report(self) -> Report:
    """Masked emission a f_i(s) + b for every whale."""
    if self.mask is None:
      raise AdvisoryError(f'vehicle {self.spec.id} has no mask yet')
    values = np.empty(len(self.whales))
    for h, speed in enumerate(self.whales):
      try:
        values[h] = masked_evaluate(self._model, float(speed), self.mask,
                                    FITNESS_RESOLUTION)
      except Exception as ex:
        raise EvaluationError(
            f'vehicle {self.spec.id} whale {h} failed at {speed} km/h: {ex}',
            vehicle_id=self.spec.id,
            whale=h,
            speed=float(speed)) from ex
    return (self.spec.id, values, self.off_consensus.copy())

  def on_best_index(self, best_index: int, improved: bool) -> None:
    if improved:
      self.elite = float(self.whales[best_index])


class CentralNode:
  """Aggregates masked reports and keeps the best whale index.

  A whale whose round was bounds-binding (or that was never projected) is
  off consensus; it can only become the best while no on-consensus whale has
  been seen.

  Sums within TIE_MARGIN of each other count as equal, both when picking the
  round's best whale and when deciding whether it beats the stored best.
  """

  def __init__(self, n_vehicles: int, n_whales: int) -> None:
    self.n_vehicles = n_vehicles
    self.n_whales = n_whales
    self.best_index = 0
    self.best_aggregate = float('inf')
    self.best_on_consensus = False
    self.round = 0
    self.fitness_table: List[np.ndarray] = []

  def aggregate(self, reports: Sequence[Report]) -> Tuple[int, bool]:
    """Sum masked values per whale and update h*.

    Args:
      reports: one report per vehicle, any order

    Returns:
      (h*, whether the best improved this round)
    """
    if len(reports) != self.n_vehicles:
      raise AdvisoryError(f'round {self.round}: expected {self.n_vehicles} '
                          f'reports, got {len(reports)}')
    ordered = sorted(reports, key=lambda report: report[0])
    table = np.array([values for _, values, _ in ordered])
    off_consensus = np.array([flags for _, _, flags in ordered]).any(axis=0)
    self.fitness_table.append(table)
    sums = [math.fsum(table[:, h]) for h in range(self.n_whales)]

    # Feasibility first, then the aggregate; ties keep the lowest index.
    pool = [h for h in range(self.n_whales) if not off_consensus[h]]
    if not pool:
      pool = list(range(self.n_whales))
    lowest = min(sums[h] for h in pool)
    candidate = min(h for h in pool if sums[h] <= lowest + TIE_MARGIN)
    on_consensus = not off_consensus[candidate]
    if on_consensus and not self.best_on_consensus:
      improved = True
    elif on_consensus == self.best_on_consensus:
      improved = sums[candidate] < self.best_aggregate - TIE_MARGIN
    else:
      improved = False
    if improved:
      self.best_index = candidate
      self.best_aggregate = sums[candidate]
      self.best_on_consensus = on_consensus
      return candidate, True
    return self.best_index, False


@dataclasses.dataclass
class DsasSession:
  """Everything a running protocol instance holds."""
  scenario: Scenario
  config: DsasConfig
  agents: List[VehicleAgent]
  central: CentralNode
  transport: messages.TransportInterface
  rng: np.random.Generator
  mask: AffineMask
  record: RunRecord
  pool: Optional[concurrent.futures.ThreadPoolExecutor] = None

  @property
  def log(self) -> List[messages.Message]:
    return self.transport.log

  def best_emission(self) -> float:
    """Best aggregate in g/km, inf while no on-consensus whale was found."""
    if not self.central.best_on_consensus:
      return float('inf')
    return self.mask.unmask_sum(self.central.best_aggregate,
                                self.central.n_vehicles)


@dataclasses.dataclass(frozen=True)
class RoundOutcome:
  round: int
  leader: int
  best_index: int
  improved: bool
  bounds_binding: bool


@dataclasses.dataclass
class DsasResult:
  """Final recommendation of a run."""
  scenario: Scenario
  speeds: np.ndarray
  aggregate_emission: float
  on_consensus: bool
  rounds: int
  seed: int
  mask: AffineMask
  record: RunRecord
  log: List[messages.Message]

  def lane_speeds(self) -> Dict[int, float]:
    """Speed of the first vehicle of each lane."""
    speeds: Dict[int, float] = {}
    for vehicle, speed in zip(self.scenario.vehicles, self.speeds):
      speeds.setdefault(vehicle.lane, float(speed))
    return speeds

  def consensus_value(self) -> float:
    return float(self.scenario.vehicles[0].alpha * self.speeds[0])

  def to_json_dict(self) -> Dict[str, Any]:
    return {
        'scenario': self.scenario.name,
        'scenario_digest': self.scenario.digest(),
        'seed': self.seed,
        'rounds': self.rounds,
        'on_consensus': self.on_consensus,
        'aggregate_emission_gpkm': self.aggregate_emission,
        'consensus_value': self.consensus_value(),
        'lane_speeds': {
            str(lane): speed for lane, speed in self.lane_speeds().items()
        },
        'speeds': [float(s) for s in self.speeds],
        'mask': {
            'scale': self.mask.scale,
            'offset': self.mask.offset
        },
        'unadvised_vehicles': self.scenario.unadvised_count,
    }


def _make_agents(scenario: Scenario, registry: Registry,
                 n_whales: int) -> List[VehicleAgent]:
  agents = []
  for spec in scenario.vehicles:
    try:
      model = registry[spec.vehicle_type]
    except KeyError as ex:
      raise ConfigError(f'vehicle {spec.id}: no emission model for type '
                        f'{spec.vehicle_type!r}') from ex
    agents.append(VehicleAgent(spec, model, n_whales))
  return agents


def _collect_reports(session: DsasSession) -> List[Report]:
  """Gather one report per agent, waiting for all of them (round barrier)."""
  if session.pool is None:
    return [agent.report() for agent in session.agents]

  futures = [session.pool.submit(agent.report) for agent in session.agents]
  finished, pending = concurrent.futures.wait(
      futures, return_when=concurrent.futures.FIRST_EXCEPTION)
  # Raise any exceptions
  for future in finished:
    future.result()
  if pending:
    raise AdvisoryError(f'{len(pending)} fitness reports never arrived')
  return sorted((future.result() for future in futures),
                key=lambda report: report[0])


def _exchange_reports(session: DsasSession,
                      round_number: int) -> Tuple[int, bool]:
  """Reports in, h* out, both through the transport."""
  reports = _collect_reports(session)
  for vehicle_id, values, flags in sorted(reports, key=lambda r: r[0]):
    session.transport.send(
        messages.FITNESS_REPORT, round_number,
        messages.fitness_report_payload(vehicle_id, values, flags))
  best_index, improved = session.central.aggregate(reports)
  broadcast = session.transport.send(
      messages.BEST_INDEX_BROADCAST, round_number,
      messages.best_index_payload(best_index, improved))
  for agent in session.agents:
    agent.on_best_index(broadcast.payload['best_index'],
                        broadcast.payload['improved'])
  return best_index, improved


def initialize(scenario: Scenario,
               registry: Registry,
               config: DsasConfig,
               transport: Optional[messages.TransportInterface] = None,
               pool: Optional[concurrent.futures.ThreadPoolExecutor] = None
              ) -> DsasSession:
  """Set up agents, synchronise the mask and pick the first h*.

  Args:
    scenario: a feasible Scenario
    registry: emission models by type label
    config: DsasConfig
    transport: channel to use, an InProcessTransport by default
    pool: executor the fitness reports are collected on, serial if None

  Returns:
    a DsasSession at round 0

  Raises:
    InfeasibleScenario: if the scenario has no consensus interval
    ConfigError: if a vehicle type has no model
  """
  c_lo, c_hi = feasible_interval(scenario)
  protocol_seed, mask_seed = np.random.SeedSequence(config.seed).spawn(2)
  rng = np.random.Generator(np.random.PCG64(protocol_seed))
  mask = config.mask
  if mask is None:
    mask = draw_mask(np.random.Generator(np.random.PCG64(mask_seed)))

  session = DsasSession(
      scenario=scenario,
      config=config,
      agents=_make_agents(scenario, registry, config.n_whales),
      central=CentralNode(scenario.size, config.n_whales),
      transport=transport or messages.InProcessTransport(),
      rng=rng,
      mask=mask,
      record=RunRecord('improved-woa', config.seed, scenario.digest()),
      pool=pool)

  sync = session.transport.send(
      messages.MASK_SYNC, 0, messages.mask_sync_payload(mask.scale,
                                                        mask.offset))
  for agent in session.agents:
    agent.receive_mask(sync.payload)

  if config.consensus_init:
    consensus_values = rng.uniform(c_lo, c_hi, size=config.n_whales)
    for agent in session.agents:
      agent.set_whales(consensus_values / agent.spec.alpha,
                       np.zeros(config.n_whales, dtype=bool))
  else:
    for agent in session.agents:
      agent.set_whales(
          rng.uniform(agent.spec.s_min, agent.spec.s_max,
                      size=config.n_whales),
          np.ones(config.n_whales, dtype=bool))

  _exchange_reports(session, 0)
  session.record.append(0, session.best_emission(), config.n_whales)
  logging.debug('Initialised %s agents on [%s, %s]', scenario.size, c_lo, c_hi)
  return session


def round_step(session: DsasSession) -> RoundOutcome:
  """Run one protocol round: leader update, projection, reports, h*."""
  config = session.config
  k = session.central.round
  round_number = k + 1
  decay = woa.decay_schedule(k, config.max_rounds)

  if config.leader_policy == ROUND_ROBIN_LEADER:
    leader_index = k % len(session.agents)
  else:
    leader_index = int(session.rng.integers(len(session.agents)))
  leader = session.agents[leader_index]

  weighted = leader.propose(decay, session.rng, config.b_spiral)
  broadcast = session.transport.send(
      messages.SPEED_BROADCAST, round_number,
      messages.speed_broadcast_payload(leader.spec.id, weighted))

  bounds_binding = False
  for agent in session.agents:
    if agent is not leader:
      bounds_binding |= agent.project(broadcast.payload['weighted_speeds'])
  if bounds_binding:
    logging.debug('Round %s: projection clamped by bounds', round_number)

  best_index, improved = _exchange_reports(session, round_number)
  session.central.round = round_number
  session.record.append(round_number, session.best_emission(),
                        round_number * config.n_whales + config.n_whales,
                        bounds_binding)
  return RoundOutcome(round_number, leader.spec.id, best_index, improved,
                      bounds_binding)


def _result(session: DsasSession) -> DsasResult:
  return DsasResult(
      scenario=session.scenario,
      speeds=np.array([agent.elite for agent in session.agents]),
      aggregate_emission=session.best_emission(),
      on_consensus=session.central.best_on_consensus,
      rounds=session.central.round,
      seed=session.config.seed,
      mask=session.mask,
      record=session.record,
      log=session.log)


def run(scenario: Scenario, registry: Registry,
        config: DsasConfig) -> DsasResult:
  """Initialise and run k_max rounds.

  Returns:
    DsasResult holding each vehicle's speed of the best whale

  Raises:
    InfeasibleScenario: if the scenario has no consensus interval
    EvaluationError: if a model fails, with vehicle, whale and speed attached
  """
  if config.concurrent_reports:
    with concurrent.futures.ThreadPoolExecutor() as pool:
      return _run_rounds(initialize(scenario, registry, config, pool=pool))
  return _run_rounds(initialize(scenario, registry, config))


def _run_rounds(session: DsasSession) -> DsasResult:
  for _ in range(session.config.max_rounds):
    round_step(session)
  result = _result(session)
  logging.info('Advisory run seed %s: %s rounds, %.3f g/km',
               session.config.seed, result.rounds, result.aggregate_emission)
  return result


RESULT_EVENT = 'result'
INFEASIBLE_EVENT = 'infeasible'
INVALID_EVENT = 'invalid'


@dataclasses.dataclass
class SupervisorEvent:
  """Outcome of one scenario revision.

  Attributes:
    revision: 0-based position in the stream
    time: the revision's timestamp as given
    kind: 'result', 'infeasible' or 'invalid'
    result: the new DsasResult for 'result' events
    retained_revision: revision whose result stays in force otherwise
    message: diagnostic for 'infeasible' and 'invalid' events
  """
  revision: int
  time: str
  kind: str
  result: Optional[DsasResult] = None
  retained_revision: Optional[int] = None
  message: str = ''

  def to_json_dict(self) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        'revision': self.revision,
        'time': self.time,
        'kind': self.kind,
        'retained_revision': self.retained_revision,
        'message': self.message,
    }
    if self.result is not None:
      record['result'] = self.result.to_json_dict()
    return record


def check_model_ranges(scenario: Scenario, registry: Registry) -> None:
  """Fail fast when a vehicle's speed bounds leave its model's valid range.

  Raises:
    ConfigError: naming the first such vehicle
  """
  for spec in scenario.vehicles:
    model = registry[spec.vehicle_type]
    lo, hi = model.valid_range
    if spec.s_min < lo or spec.s_max > hi:
      raise ConfigError(
          f'vehicle {spec.id}: bounds [{spec.s_min}, {spec.s_max}] leave the '
          f'valid range [{lo}, {hi}] of {spec.vehicle_type!r}')


def supervise(stream: Iterable[Tuple[str, ScenarioConfig]],
              registry: Registry,
              config: DsasConfig,
              first_revision: int = 0,
              retained: Optional[int] = None) -> Iterator[SupervisorEvent]:
  """Re-run the advisory whenever the scenario changes.

  Every revision starts from a fresh initialisation with the same seed, so a
  revision's result equals an independent run() on that scenario.

  Args:
    stream: (timestamp, full scenario config) pairs in order
    registry: emission models by type label
    config: DsasConfig shared by every re-run
    first_revision: number of the stream's first revision, for resuming
    retained: revision whose result is in force before the stream starts

  Yields:
    one SupervisorEvent per revision; infeasible or invalid revisions do not
    stop the stream and leave the previous result in force
  """
  for revision, (time, scenario_config) in enumerate(stream, first_revision):
    try:
      scenario = scenario_from_config(scenario_config, known_types=registry)
      check_model_ranges(scenario, registry)
      result = run(scenario, registry, config)
    except InfeasibleScenario as ex:
      logging.warning('Revision %s at %s is infeasible: %s', revision, time,
                      ex)
      yield SupervisorEvent(revision, time, INFEASIBLE_EVENT, None, retained,
                            str(ex))
      continue
    except ConfigError as ex:
      logging.warning('Revision %s at %s is invalid: %s', revision, time, ex)
      yield SupervisorEvent(revision, time, INVALID_EVENT, None, retained,
                            str(ex))
      continue
    except (EvaluationError, SpeedOutOfModelRange) as ex:
      logging.warning('Revision %s at %s failed to evaluate: %s', revision,
                      time, ex)
      yield SupervisorEvent(revision, time, INVALID_EVENT, None, retained,
                            str(ex))
      continue
    retained = revision
    yield SupervisorEvent(revision, time, RESULT_EVENT, result, None)
