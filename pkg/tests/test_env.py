import itertools
import math

import numpy as np
import pytest

from plumenav import kernels
from plumenav.agents import Action, TabularAgent, train
from plumenav.env import (DEFAULT_SUCCESS_RADIUS, MiniPlumeEnv, PlumeEnv,
                          STEP_COST, TERMINAL_BONUS)
from plumenav.plume import PlumeConfig, build_course


def make_env(**kw):
    kw.setdefault("physics", "snap")
    kw.setdefault("warmup", 300.0)
    plume = kw.pop("plume", PlumeConfig(turbulence_intensity=0.0))
    return PlumeEnv(plume=plume, **kw)


class TestResetStep:
    def test_same_seed_same_initial_observation(self):
        env1, env2 = make_env(), make_env()
        o1, o2 = env1.reset(9), env2.reset(9)
        assert o1 == o2

    def test_zero_warmup_near_zero_start(self):
        env = make_env(warmup=0.0)
        obs = env.reset(1)
        assert obs.left_concentration == 0.0
        assert obs.right_concentration == 0.0

    def test_default_start_below_on_plume_threshold(self):
        env = make_env()
        obs = env.reset(3)
        # far-end start pose: both channels well below any on-plume band
        assert max(obs.left_concentration, obs.right_concentration) < 0.05

    def test_pause_is_stationary_time_advances(self):
        env = make_env()
        env.reset(1)
        x, y = env.pose.x, env.pose.y
        t0 = env.t
        obs, r, done, info = env.step(Action.PAUSE)
        assert (env.pose.x, env.pose.y) == (x, y)
        assert env.t == t0 + 1.0
        assert not done

    def test_wall_blocks_move(self):
        env = make_env()
        env.reset(1)
        # teleport next to the divider wall, facing it
        env.pose.x, env.pose.y, env.pose.heading = 10.35, 8.0, 180.0
        obs, r, done, info = env.step(Action.SURGE)
        assert info["collision"]
        assert env.pose.x == pytest.approx(10.35)

    def test_step_after_done_raises(self):
        env = make_env(budget=1)
        env.reset(1)
        env.step(Action.PAUSE)
        with pytest.raises(RuntimeError):
            env.step(Action.PAUSE)

    def test_invalid_action_rejected(self):
        env = make_env()
        env.reset(1)
        with pytest.raises(ValueError):
            env.step(17)

    def test_budget_exhaustion(self):
        env = make_env(budget=3)
        env.reset(1)
        done = False
        n = 0
        while not done:
            _, _, done, _ = env.step(Action.PAUSE)
            n += 1
        assert n == 3

    def test_land_at_source_pays_bonus(self):
        course = build_course()
        plume = PlumeConfig(turbulence_intensity=0.0)
        env = PlumeEnv(course=course, plume=plume, physics="snap", warmup=300.0)
        env.reset(1)
        env.pose.x, env.pose.y = plume.source_position
        obs, r, done, info = env.step(Action.LAND)
        assert done
        assert r >= TERMINAL_BONUS - 1.0


class TestRewardShape:
    def test_no_progress_costs_step(self):
        env = make_env()
        env.reset(1)
        _, r, _, _ = env.step(Action.PAUSE)
        assert r == pytest.approx(-STEP_COST)

    def test_running_max_delta_rewards_progress(self):
        env = make_env()
        env.reset(1)
        # place the vehicle mid-plume facing the source: surging raises the max
        env.pose.x, env.pose.y, env.pose.heading = 8.0, 5.0, 180.0
        env.run_max = max(env.observe().left_concentration,
                          env.observe().right_concentration)
        _, r, _, _ = env.step(Action.SURGE)
        assert r > 0.0


class TestMiniatureGreedyVsExhaustive:
    """Brute-force oracle on a 10x10-cell course with a 6-action horizon."""

    K = 6

    def build(self):
        # 3 m x 3 m open room = 10 x 10 cells of 0.30 m; source upwind of a
        # start on the centerline facing it. Antennae sit tight on the body
        # so single-step pose games cannot out-score real progress.
        from plumenav.sensors import StereoGeometry
        geom = StereoGeometry(x_left=0.02, x_right=-0.02, fore=0.02)
        return MiniPlumeEnv(sparsity=0.0, bounds=(3.0, 3.0, 3.0),
                            source=(0.45, 1.5), start=(2.85, 1.5),
                            start_heading_idx=4, budget=self.K,
                            success_radius=0.29, geometry=geom)

    @staticmethod
    def oracle_rollout(env, actions):
        """Test-local snap simulator: same physics, written independently."""
        dirs = [(1, 0), (math.sqrt(.5), math.sqrt(.5)), (0, 1),
                (-math.sqrt(.5), math.sqrt(.5)), (-1, 0),
                (-math.sqrt(.5), -math.sqrt(.5)), (0, -1),
                (math.sqrt(.5), -math.sqrt(.5))]
        x, y = env.start
        h = env.start_heading_idx
        geom = env.geometry

        def sense(x, y, h):
            cx, sx_ = dirs[h]
            lx = x + geom.fore * cx - geom.x_left * sx_
            ly = y + geom.fore * sx_ + geom.x_left * cx
            rx = x + geom.fore * cx - geom.x_right * sx_
            ry = y + geom.fore * sx_ + geom.x_right * cx
            return env.concentration(lx, ly), env.concentration(rx, ry)

        run_max = max(sense(x, y, h))
        total = 0.0
        for a in actions:
            if a == 0:
                h = (h + 1) % 8
            elif a == 1:
                h = (h - 1) % 8
            elif a == 2:
                h = (h + 2) % 8
            elif a == 3:
                h = (h - 2) % 8
            else:
                d = h if a == 4 else ((h + 2) % 8 if a == 5 else (h - 2) % 8)
                nx = x + 0.30 * dirs[d][0]
                ny = y + 0.30 * dirs[d][1]
                if 0 <= nx <= env.bounds[0] and 0 <= ny <= env.bounds[1]:
                    x, y = nx, ny
            c = max(sense(x, y, h))
            new_max = max(run_max, c)
            r = new_max - run_max - STEP_COST
            dist = math.hypot(x - env.source[0], y - env.source[1])
            if dist <= env.success_radius:
                r += TERMINAL_BONUS
            total += r
            run_max = new_max
            if dist <= env.success_radius:
                break
        cell = (int(x / 0.30), int(y / 0.30))
        return total, cell

    def env_rollout(self, env, actions):
        s = env.reset_episode(0, seed=0, total_episodes=1)
        total = 0.0
        for a in actions:
            _, r, done = env.step_state(a)
            total += r
            if done:
                break
        cell = (int(env._x / 0.30), int(env._y / 0.30))
        return total, cell

    def test_greedy_rollout_matches_exhaustive_search(self):
        env = self.build()
        # exhaustive enumeration over all 7^6 action strings via the oracle
        best_total, best_cell, best_seq = -1e18, None, None
        for seq in itertools.product(range(7), repeat=self.K):
            total, cell = self.oracle_rollout(env, seq)
            if total > best_total + 1e-12:
                best_total, best_cell, best_seq = total, cell, seq

        # greedy one-step-lookahead rollout through the real env path
        chosen = []
        for _ in range(self.K):
            best_a, best_r = 0, -1e18
            for a in range(7):
                total, _ = self.env_rollout(env, chosen + [a])
                if total > best_r + 1e-12:
                    best_r, best_a = total, a
            chosen.append(best_a)
        greedy_total, greedy_cell = self.env_rollout(env, chosen)

        assert greedy_total == pytest.approx(best_total, abs=1e-9)
        assert greedy_cell == best_cell

    def test_env_and_oracle_agree_on_random_strings(self):
        env = self.build()
        rng = np.random.default_rng(0)
        for _ in range(50):
            seq = [int(a) for a in rng.integers(0, 7, self.K)]
            t1, c1 = self.oracle_rollout(env, seq)
            t2, c2 = self.env_rollout(env, seq)
            assert t1 == pytest.approx(t2, rel=1e-12)
            assert c1 == c2


class TestMiniEnvBlanks:
    def test_sparsity_masks_expected_fraction(self):
        env = MiniPlumeEnv(sparsity=0.35)
        world, events, offsets = env.kernel_pack(episodes=40, seed=5)
        rng = np.random.default_rng(2)
        hits = 0
        n = 40_000
        for _ in range(n):
            ep = int(rng.integers(40))
            lo, hi = offsets[ep], offsets[ep + 1]
            ev = tuple(arr[lo:hi] for arr in events)
            x = rng.uniform(0, 6)
            y = rng.uniform(0, 4)
            z = rng.uniform(0, 3)
            t = rng.uniform(0, 60)
            if kernels.blank_hit_vec(*ev, env.plume_config.wind_speed,
                                     x, y, z, t):
                hits += 1
        assert hits / n == pytest.approx(0.35, abs=0.02)


class TestRouteParity:
    def test_generic_python_loop_matches_kernel(self):
        env = MiniPlumeEnv(sparsity=0.3)

        class Generic:
            budget = env.budget

            def reset_episode(self, ep, seed, total=None):
                return env.reset_episode(ep, seed, total)

            def step_state(self, a):
                return env.step_state(a)

        a_fast = TabularAgent(alpha=0.05)
        a_slow = TabularAgent(alpha=0.05)
        c_fast = train(a_fast, env, episodes=120, seed=21, algo="expected_sarsa")
        c_slow = train(a_slow, Generic(), episodes=120, seed=21,
                       algo="expected_sarsa")
        assert np.array_equal(c_fast.returns, c_slow.returns)
        assert np.array_equal(a_fast.q, a_slow.q)

    @pytest.mark.skipif(not kernels.NUMBA_ENABLED, reason="numba unavailable")
    def test_numba_and_numpy_routes_identical(self):
        env = MiniPlumeEnv(sparsity=0.3)
        for algo in ("q_lambda", "expected_sarsa"):
            a1 = TabularAgent(alpha=0.05)
            a2 = TabularAgent(alpha=0.05)
            c1 = train(a1, env, episodes=100, seed=8, algo=algo, route="numba")
            c2 = train(a2, env, episodes=100, seed=8, algo=algo, route="numpy")
            assert np.array_equal(c1.returns, c2.returns)
            assert np.array_equal(a1.q, a2.q)
