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
"""Unit tests for the whale optimisation core."""

import math
import unittest

import numpy as np

from advisory import woa
from advisory.errors import ConfigError, EvaluationError


def sphere(x: np.ndarray) -> float:
  return float(np.sum(x**2))


class StepTest(unittest.TestCase):
  """Hand-computed values for the three moves."""

  def test_encircle_step(self) -> None:
    moved = woa.encircle_step(
        np.array([2.0]), np.array([5.0]), np.array([0.5]), np.array([1.2]))

    # D = |1.2 * 5 - 2| = 4, 5 - 0.5 * 4 = 3
    self.assertAlmostEqual(moved[0], 3.0, places=12)

  def test_encircle_step_vector(self) -> None:
    moved = woa.encircle_step(
        np.array([1.0, 4.0]), np.array([2.0, 2.0]), np.array([-0.5, 1.0]),
        np.array([1.0, 0.5]))

    np.testing.assert_allclose(moved, [2.5, -1.0], atol=1e-12)

  def test_spiral_step(self) -> None:
    x, x_star = np.array([2.0]), np.array([5.0])

    half = woa.spiral_step(x, x_star, woa.SpiralParams(l=0.5))
    zero = woa.spiral_step(x, x_star, woa.SpiralParams(l=0.0))
    quarter = woa.spiral_step(x, x_star, woa.SpiralParams(l=0.25))

    self.assertAlmostEqual(half[0], 5.0 - 3.0 * math.exp(0.5), places=12)
    self.assertAlmostEqual(zero[0], 8.0, places=12)
    self.assertAlmostEqual(quarter[0], 5.0, places=12)

  def test_highway_speed_moves(self) -> None:
    x, x_star = np.array([100.0]), np.array([80.0])

    encircled = woa.encircle_step(x, x_star, np.array([0.5]), np.array([1.2]))
    spiralled = woa.spiral_step(x, x_star, woa.SpiralParams(l=0.5))
    explored = woa.explore_step(
        np.array([60.0]), np.array([110.0]), np.array([1.5]), np.array([0.8]))

    self.assertAlmostEqual(encircled[0], 78.0, places=12)
    self.assertAlmostEqual(
        spiralled[0], 80.0 - 20.0 * math.exp(0.5), places=12)
    self.assertAlmostEqual(explored[0], 68.0, places=12)

  def test_spiral_constant(self) -> None:
    moved = woa.spiral_step(
        np.array([4.0]), np.array([5.0]), woa.SpiralParams(l=-1.0,
                                                           b_spiral=2.0))

    self.assertAlmostEqual(moved[0], 5.0 + math.exp(-2.0), places=12)

  def test_explore_step(self) -> None:
    x, x_rand = np.array([2.0]), np.array([4.0])

    still = woa.explore_step(x, x_rand, np.array([-1.5]), np.array([0.5]))
    moved = woa.explore_step(x, x_rand, np.array([-1.5]), np.array([2.0]))

    self.assertAlmostEqual(still[0], 4.0, places=12)
    # D = |2 * 4 - 2| = 6, 4 + 1.5 * 6 = 13
    self.assertAlmostEqual(moved[0], 13.0, places=12)

  def test_spiral_params_validation(self) -> None:
    with self.assertRaises(ConfigError):
      woa.SpiralParams(l=1.5)
    with self.assertRaises(ConfigError):
      woa.SpiralParams(l=0.0, b_spiral=0.0)


class ScheduleAndBranchTest(unittest.TestCase):
  """Decay schedule, coefficient draws and branch selection."""

  def test_decay_schedule(self) -> None:
    self.assertEqual(woa.decay_schedule(0, 50), 2.0)
    self.assertEqual(woa.decay_schedule(25, 50), 1.0)
    self.assertEqual(woa.decay_schedule(50, 50), 0.0)
    self.assertEqual(woa.decay_schedule(60, 50), 0.0)
    self.assertEqual(woa.decay_schedule(0, 0), 0.0)

  def test_decay_is_non_increasing(self) -> None:
    values = [woa.decay_schedule(k, 37) for k in range(38)]

    self.assertTrue(all(b <= a for a, b in zip(values, values[1:])))

  def test_coefficient_ranges(self) -> None:
    rng = woa.make_rng(5)
    for _ in range(10000):
      a_vector, c_vector = woa.coefficient_vectors(1.5, rng, dim=3)
      self.assertTrue(np.all(np.abs(a_vector) <= 1.5))
      self.assertTrue(np.all((c_vector >= 0.0) & (c_vector <= 2.0)))

  def test_branch_of(self) -> None:

    def draw(a_scalar: float, p: float) -> woa.UpdateDraw:
      return woa.UpdateDraw(np.zeros(1), np.zeros(1), a_scalar, p, 0.0, 0)

    self.assertEqual(woa.branch_of(draw(0.2, 0.7)), woa.SPIRAL)
    self.assertEqual(woa.branch_of(draw(1.7, 0.5)), woa.SPIRAL)
    self.assertEqual(woa.branch_of(draw(0.5, 0.2)), woa.ENCIRCLE)
    self.assertEqual(woa.branch_of(draw(-1.5, 0.2)), woa.EXPLORE)
    self.assertEqual(woa.branch_of(draw(1.0, 0.2)), woa.EXPLORE)

  def test_branch_frequencies(self) -> None:
    rng = woa.make_rng(17)
    trials = 20000
    counts = {woa.SPIRAL: 0, woa.ENCIRCLE: 0, woa.EXPLORE: 0}
    for _ in range(trials):
      counts[woa.branch_of(woa.draw_update(2.0, 1, 5, rng))] += 1

    # decay 2 makes A uniform on [-2, 2], so |A| < 1 half of the time
    self.assertAlmostEqual(counts[woa.SPIRAL] / trials, 0.5, delta=0.02)
    self.assertAlmostEqual(counts[woa.ENCIRCLE] / trials, 0.25, delta=0.02)
    self.assertAlmostEqual(counts[woa.EXPLORE] / trials, 0.25, delta=0.02)

  def test_late_iterations_never_explore(self) -> None:
    rng = woa.make_rng(2)
    for _ in range(10000):
      self.assertNotEqual(
          woa.branch_of(woa.draw_update(0.9, 1, 3, rng)), woa.EXPLORE)

  def test_apply_update_clamps(self) -> None:
    rng = woa.make_rng(8)
    lower, upper = np.array([60.0, 60.0]), np.array([120.0, 120.0])
    population = rng.uniform(lower, upper, size=(4, 2))
    for _ in range(10000):
      draw = woa.draw_update(2.0, 2, 4, rng)
      moved = woa.apply_update(population[0], population[1], population, draw,
                               lower, upper)
      self.assertTrue(np.all((moved >= lower) & (moved <= upper)))

  def test_spiral_frequency(self) -> None:
    rng = woa.make_rng(23)
    trials = 100000

    spirals = sum(
        woa.branch_of(woa.draw_update(1.3, 1, 3, rng)) == woa.SPIRAL
        for _ in range(trials))

    self.assertAlmostEqual(spirals / trials, 0.5, delta=0.01)

  def test_forced_branches(self) -> None:
    x, x_star = np.array([70.0]), np.array([90.0])
    population = np.array([[70.0], [100.0]])
    lower, upper = np.array([60.0]), np.array([120.0])
    spiral = woa.UpdateDraw(
        np.array([0.3]), np.array([1.1]), 0.3, 0.6, 0.4, 1)
    still = woa.UpdateDraw(np.array([0.0]), np.array([1.7]), 0.0, 0.2, 0.4, 1)

    np.testing.assert_array_equal(
        woa.apply_update(x, x_star, population, spiral, lower, upper),
        np.clip(woa.spiral_step(x, x_star, woa.SpiralParams(0.4)), lower,
                upper))
    np.testing.assert_array_equal(
        woa.apply_update(x, x_star, population, still, lower, upper), x_star)

  def test_draw_order_is_fixed(self) -> None:
    draw = woa.draw_update(2.0, 2, 7, woa.make_rng(4))
    rng = woa.make_rng(4)

    r = rng.random(2)
    r_prime = rng.random(2)
    u = rng.random()
    p = rng.random()
    l = rng.uniform(-1.0, 1.0)
    peer = int(rng.integers(7))

    np.testing.assert_array_equal(draw.a_vector, 4.0 * r - 2.0)
    np.testing.assert_array_equal(draw.c_vector, 2.0 * r_prime)
    self.assertEqual(draw.a_scalar, 4.0 * u - 2.0)
    self.assertEqual((draw.p, draw.l, draw.peer), (p, l, peer))


class WoaMinimizeTest(unittest.TestCase):
  """End to end runs of the centralized optimiser."""

  def test_sphere_1d(self) -> None:
    for seed in range(20):
      config = woa.WoaConfig(
          bounds=[(-100.0, 100.0)], n_whales=10, max_iter=200, seed=seed)

      _, best, _ = woa.woa_minimize(sphere, config)

      self.assertLess(best, 1e-2, f'seed {seed}')

  def test_flat_landscape(self) -> None:
    config = woa.WoaConfig(bounds=[(0.0, 5.0)] * 2, max_iter=15, seed=5)

    _, best, record = woa.woa_minimize(lambda x: 7.0, config)

    self.assertEqual(best, 7.0)
    self.assertEqual(set(record.best_fitness()), {7.0})

  def test_sphere_3d(self) -> None:
    config = woa.WoaConfig(
        bounds=[(-5.0, 5.0)] * 3, n_whales=30, max_iter=200, seed=2)

    position, best, _ = woa.woa_minimize(sphere, config)

    self.assertLess(best, 1e-2)
    self.assertEqual(position.shape, (3,))

  def test_record_is_monotone_and_complete(self) -> None:
    config = woa.WoaConfig(bounds=[(-10.0, 10.0)], n_whales=3, max_iter=40)

    _, best, record = woa.woa_minimize(sphere, config)

    self.assertEqual([row.iteration for row in record.rows], list(range(41)))
    self.assertTrue(record.is_monotone())
    self.assertEqual(record.rows[-1].best_fitness, best)
    self.assertEqual(record.rows[-1].evaluations, 3 * 41)

  def test_deterministic_per_seed(self) -> None:
    config = woa.WoaConfig(bounds=[(-10.0, 10.0)] * 2, max_iter=20, seed=9)

    first = woa.woa_minimize(sphere, config)
    second = woa.woa_minimize(sphere, config)

    np.testing.assert_array_equal(first[0], second[0])
    self.assertEqual(first[2].best_fitness(), second[2].best_fitness())

  def test_zero_iterations_is_best_of_init(self) -> None:
    config = woa.WoaConfig(
        bounds=[(-10.0, 10.0)], n_whales=5, max_iter=0, seed=3)
    positions = woa.make_rng(3).uniform(
        config.lower(), config.upper(), size=(5, 1))

    position, best, record = woa.woa_minimize(sphere, config)

    self.assertEqual(best, min(sphere(x) for x in positions))
    self.assertEqual(len(record.rows), 1)
    self.assertIn(position.tolist(), positions.tolist())

  def test_iterates_stay_in_bounds(self) -> None:
    seen = []

    def recording_sphere(x: np.ndarray) -> float:
      seen.append(x.copy())
      return sphere(x - 7.0)

    config = woa.WoaConfig(bounds=[(-2.0, 3.0)] * 2, max_iter=30, seed=4)
    woa.woa_minimize(recording_sphere, config)

    seen_array = np.array(seen)
    self.assertTrue(np.all((seen_array >= -2.0) & (seen_array <= 3.0)))

  def test_evaluation_error_has_position(self) -> None:

    def failing(x: np.ndarray) -> float:
      raise ValueError('no model here')

    config = woa.WoaConfig(bounds=[(0.0, 1.0)], seed=0)
    with self.assertRaises(EvaluationError) as context:
      woa.woa_minimize(failing, config)
    self.assertEqual(len(context.exception.speed), 1)
    self.assertIsInstance(context.exception.__cause__, ValueError)

  def test_config_validation(self) -> None:
    with self.assertRaises(ConfigError):
      woa.WoaConfig(bounds=[(0.0, 1.0)], n_whales=0)
    with self.assertRaises(ConfigError):
      woa.WoaConfig(bounds=[(1.0, 1.0)])
    with self.assertRaises(ConfigError):
      woa.WoaConfig(bounds=[])
    with self.assertRaises(ConfigError):
      woa.WoaConfig(bounds=[(0.0, 1.0)], max_iter=-1)


if __name__ == '__main__':
  unittest.main()
