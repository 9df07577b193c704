"""Hot numeric kernels, with numba acceleration and a numpy fallback.

Each kernel exists on two routes: a scalar-loop implementation compiled
with numba's @njit, and a numpy implementation. The active route is chosen
at import time: numba when importable, unless the environment variable
PLUMENAV_DISABLE_NUMBA is set to 1/true/yes. ``benchmarks/bench_kernels.py``
times the two routes against each other.

Only training/rollout workloads dispatch through these kernels. Trial
replay in the mission layer stays on plain Python + numpy so logged runs
do not depend on which route is installed.
"""

from __future__ import annotations

import math
import os

import numpy as np


def _numba_disabled() -> bool:
    return os.environ.get("PLUMENAV_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")


NUMBA_ENABLED = False
if not _numba_disabled():
    try:
        from numba import njit as _njit
        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass

if NUMBA_ENABLED:
    def accel(func):
        return _njit(cache=True)(func)
else:
    def accel(func):
        return func


# ---------------------------------------------------------------------------
# Gaussian plume point evaluation
#
# sigma_y = sqrt((ay * x * (1 + by*x)^ey * diffusion)^2 + sy0^2) and the
# analogous sigma_z: Briggs curves plus a virtual-source term (sy0, sz0)
# for the finite initial mixing at the emitter. Source at (sx, sy_, sz_),
# mean wind +x. Ground reflection via the image source at -sz_.
# ---------------------------------------------------------------------------

@accel
def plume_point(x, y, z, sx, sy_, sz_, q_rate, u_wind, ay, by, ey, az, bz, ez,
                diffusion, sy0, sz0):
    dx = x - sx
    if dx <= 0.0:
        return 0.0
    sig_y = ay * dx * (1.0 + by * dx) ** ey * diffusion
    sig_z = az * dx * (1.0 + bz * dx) ** ez * diffusion
    sig_y = math.sqrt(sig_y * sig_y + sy0 * sy0)
    sig_z = math.sqrt(sig_z * sig_z + sz0 * sz0)
    if sig_y <= 0.0 or sig_z <= 0.0:
        return 0.0
    yc = y - sy_
    lateral = math.exp(-yc * yc / (2.0 * sig_y * sig_y))
    dz1 = z - sz_
    dz2 = z + sz_
    vertical = math.exp(-dz1 * dz1 / (2.0 * sig_z * sig_z)) + \
        math.exp(-dz2 * dz2 / (2.0 * sig_z * sig_z))
    return q_rate / (2.0 * math.pi * u_wind * sig_y * sig_z) * lateral * vertical


def plume_grid(xs, ys, z, sx, sy_, sz_, q_rate, u_wind, ay, by, ey, az, bz, ez,
               diffusion, sy0, sz0):
    """Vectorized plume evaluation over a meshgrid; the numpy route."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    dx = x - sx
    downwind = dx > 0.0
    dxp = np.where(downwind, dx, 1.0)
    sig_y = ay * dxp * (1.0 + by * dxp) ** ey * diffusion
    sig_z = az * dxp * (1.0 + bz * dxp) ** ez * diffusion
    sig_y = np.sqrt(sig_y * sig_y + sy0 * sy0)
    sig_z = np.sqrt(sig_z * sig_z + sz0 * sz0)
    yc = y - sy_
    lateral = np.exp(-yc * yc / (2.0 * sig_y * sig_y))
    vertical = np.exp(-((z - sz_) ** 2) / (2.0 * sig_z * sig_z)) + \
        np.exp(-((z + sz_) ** 2) / (2.0 * sig_z * sig_z))
    out = q_rate / (2.0 * math.pi * u_wind * sig_y * sig_z) * lateral * vertical
    return np.where(downwind, out, 0.0)


# ---------------------------------------------------------------------------
# Blank (odor void) events. Events are ellipsoids born at (bx, by, bz) at
# time tb, dying at td, with the center advected downwind at u_adv.
# Arrays must be sorted by birth time.
# ---------------------------------------------------------------------------

@accel
def blank_hit(tb, td, bx, by_, bz_, rx, ry, rz, u_adv, x, y, z, t):
    for i in range(tb.shape[0]):
        if tb[i] > t:
            break
        if t >= td[i]:
            continue
        cx = bx[i] + u_adv * (t - tb[i])
        ddx = (x - cx) / rx[i]
        ddy = (y - by_[i]) / ry[i]
        ddz = (z - bz_[i]) / rz[i]
        if ddx * ddx + ddy * ddy + ddz * ddz <= 1.0:
            return True
    return False


def blank_hit_vec(tb, td, bx, by_, bz_, rx, ry, rz, u_adv, x, y, z, t):
    """Numpy route of :func:`blank_hit` (same semantics, vectorized over events)."""
    alive = (tb <= t) & (t < td)
    if not alive.any():
        return False
    cx = bx[alive] + u_adv * (t - tb[alive])
    ddx = (x - cx) / rx[alive]
    ddy = (y - by_[alive]) / ry[alive]
    ddz = (z - bz_[alive]) / rz[alive]
    return bool(np.any(ddx * ddx + ddy * ddy + ddz * ddz <= 1.0))


# ---------------------------------------------------------------------------
# Tabular TD(lambda) training over the miniature plume world.
#
# The world is packed into a flat float64 vector so one compiled loop can
# run thousands of episodes. Headings are multiples of 45 degrees stored as
# an index into the direction tables below. Actions follow the canonical
# 7-action order: TL45, TR45, TL90, TR90, Surge, CastLeft, CastRight.
# ---------------------------------------------------------------------------

DIR_COS = np.array([1.0, math.sqrt(0.5), 0.0, -math.sqrt(0.5),
                    -1.0, -math.sqrt(0.5), 0.0, math.sqrt(0.5)])
DIR_SIN = np.array([0.0, math.sqrt(0.5), 1.0, math.sqrt(0.5),
                    0.0, -math.sqrt(0.5), -1.0, -math.sqrt(0.5)])

# world vector layout
W_SRC_X, W_SRC_Y, W_SRC_Z, W_Q, W_U = 0, 1, 2, 3, 4
W_AY, W_BY, W_EY, W_AZ, W_BZ, W_EZ, W_DIFF = 5, 6, 7, 8, 9, 10, 11
W_SY0, W_SZ0 = 12, 13
W_XMIN, W_XMAX, W_YMIN, W_YMAX, W_ZFLY = 14, 15, 16, 17, 18
W_START_X, W_START_Y, W_START_H = 19, 20, 21   # heading as a 0..7 index
W_STEP, W_SUCCESS_R, W_STEP_COST, W_BONUS = 22, 23, 24, 25
W_ANT_FORE, W_ANT_LAT = 26, 27
W_OFF_TH, W_HIGH_TH, W_DEADBAND, W_EMA_ALPHA = 28, 29, 30, 31
W_U_ADV = 32
WORLD_LEN = 33

ALGO_Q_LAMBDA = 0
ALGO_EXPECTED_SARSA = 1


def _train_loop_py(world, q, e, gamma, alpha, lam, eps_schedule,
                   episodes, max_steps, algo, uniform_expect,
                   ev_tb, ev_td, ev_x, ev_y, ev_z, ev_rx, ev_ry, ev_rz, ev_off,
                   u_explore, u_action, dir_cos, dir_sin, returns, steps_out):
    n_states = q.shape[0]
    n_actions = q.shape[1]
    sx = world[W_SRC_X]
    sy_ = world[W_SRC_Y]
    sz_ = world[W_SRC_Z]
    u_adv = world[W_U_ADV]
    step_len = world[W_STEP]
    z_fly = world[W_ZFLY]

    for ep in range(episodes):
        eps = eps_schedule[ep]
        for i in range(n_states):
            for j in range(n_actions):
                e[i, j] = 0.0
        x = world[W_START_X]
        y = world[W_START_Y]
        h = int(world[W_START_H])
        lo = ev_off[ep]
        hi = ev_off[ep + 1]
        tb = ev_tb[lo:hi]
        td = ev_td[lo:hi]
        bx = ev_x[lo:hi]
        by_ = ev_y[lo:hi]
        bz_ = ev_z[lo:hi]
        rx = ev_rx[lo:hi]
        ry = ev_ry[lo:hi]
        rz = ev_rz[lo:hi]

        # initial sensing at t = 0
        cl, cr = _sense(world, tb, td, bx, by_, bz_, rx, ry, rz, u_adv,
                        x, y, h, 0.0, dir_cos, dir_sin)
        cmax = cl if cl > cr else cr
        ema = cmax
        run_max = cmax
        s = _encode(world, ema, cl, cr)

        total = 0.0
        steps = 0
        for k in range(max_steps):
            # action selection: epsilon-greedy, lowest-index tie break
            if u_explore[ep, k] < eps:
                a = int(u_action[ep, k])
            else:
                a = 0
                best = q[s, 0]
                for j in range(1, n_actions):
                    if q[s, j] > best:
                        best = q[s, j]
                        a = j
            greedy_taken = True
            best = q[s, 0]
            for j in range(1, n_actions):
                if q[s, j] > best:
                    best = q[s, j]
            if q[s, a] < best:
                greedy_taken = False

            # transition
            nx, ny, nh = _move(world, x, y, h, a, dir_cos, dir_sin)
            t_now = float(k + 1)
            cl, cr = _sense(world, tb, td, bx, by_, bz_, rx, ry, rz, u_adv,
                            nx, ny, nh, t_now, dir_cos, dir_sin)
            cmax = cl if cl > cr else cr
            ema = ema + world[W_EMA_ALPHA] * (cmax - ema)
            new_max = run_max if run_max > cmax else cmax
            ddx = nx - sx
            ddy = ny - sy_
            dist = math.sqrt(ddx * ddx + ddy * ddy)
            at_source = dist <= world[W_SUCCESS_R]
            r = (new_max - run_max) - world[W_STEP_COST]
            if at_source:
                r += world[W_BONUS]
            done = at_source or (k == max_steps - 1)
            sp = _encode(world, ema, cl, cr)

            # TD update
            if done:
                target = r
            else:
                if algo == ALGO_Q_LAMBDA:
                    nxt = q[sp, 0]
                    for j in range(1, n_actions):
                        if q[sp, j] > nxt:
                            nxt = q[sp, j]
                else:
                    gidx = 0
                    gval = q[sp, 0]
                    for j in range(1, n_actions):
                        if q[sp, j] > gval:
                            gval = q[sp, j]
                            gidx = j
                    if uniform_expect == 1:
                        acc = 0.0
                        for j in range(n_actions):
                            acc += q[sp, j]
                        nxt = acc / n_actions
                    else:
                        acc = 0.0
                        for j in range(n_actions):
                            acc += (eps / n_actions) * q[sp, j]
                        acc += (1.0 - eps) * q[sp, gidx]
                        nxt = acc
                target = r + gamma * nxt
            delta = target - q[s, a]
            e[s, a] += 1.0
            ad = alpha * delta
            for i in range(n_states):
                for j in range(n_actions):
                    q[i, j] += ad * e[i, j]
            if algo == ALGO_Q_LAMBDA and not greedy_taken:
                for i in range(n_states):
                    for j in range(n_actions):
                        e[i, j] = 0.0
            else:
                gl = gamma * lam
                for i in range(n_states):
                    for j in range(n_actions):
                        e[i, j] *= gl

            total += r
            steps = k + 1
            x, y, h = nx, ny, nh
            run_max = new_max
            s = sp
            if done:
                break
        returns[ep] = total
        steps_out[ep] = steps


def _sense_py(world, tb, td, bx, by_, bz_, rx, ry, rz, u_adv,
              x, y, h, t, dir_cos, dir_sin):
    ch = dir_cos[h]
    sh = dir_sin[h]
    fore = world[W_ANT_FORE]
    lat = world[W_ANT_LAT]
    z = world[W_ZFLY]
    lx = x + fore * ch - lat * sh
    ly = y + fore * sh + lat * ch
    rxp = x + fore * ch + lat * sh
    ryp = y + fore * sh - lat * ch
    cl = plume_point(lx, ly, z, world[W_SRC_X], world[W_SRC_Y], world[W_SRC_Z],
                     world[W_Q], world[W_U], world[W_AY], world[W_BY], world[W_EY],
                     world[W_AZ], world[W_BZ], world[W_EZ], world[W_DIFF],
                     world[W_SY0], world[W_SZ0])
    cr = plume_point(rxp, ryp, z, world[W_SRC_X], world[W_SRC_Y], world[W_SRC_Z],
                     world[W_Q], world[W_U], world[W_AY], world[W_BY], world[W_EY],
                     world[W_AZ], world[W_BZ], world[W_EZ], world[W_DIFF],
                     world[W_SY0], world[W_SZ0])
    if cl > 0.0 and blank_hit(tb, td, bx, by_, bz_, rx, ry, rz, u_adv, lx, ly, z, t):
        cl = 0.0
    if cr > 0.0 and blank_hit(tb, td, bx, by_, bz_, rx, ry, rz, u_adv, rxp, ryp, z, t):
        cr = 0.0
    return cl, cr


def _encode_py(world, ema, cl, cr):
    if ema < world[W_OFF_TH]:
        band = 0
    elif ema < world[W_HIGH_TH]:
        band = 1
    else:
        band = 2
    diff = cl - cr
    if diff < -world[W_DEADBAND]:
        rel = 0
    elif diff > world[W_DEADBAND]:
        rel = 2
    else:
        rel = 1
    return band * 3 + rel


def _move_py(world, x, y, h, a, dir_cos, dir_sin):
    nh = h
    nx = x
    ny = y
    if a == 0:      # TurnLeft45
        nh = (h + 1) % 8
    elif a == 1:    # TurnRight45
        nh = (h - 1) % 8
    elif a == 2:    # TurnLeft90
        nh = (h + 2) % 8
    elif a == 3:    # TurnRight90
        nh = (h - 2) % 8
    else:
        if a == 4:      # Surge
            di = h
        elif a == 5:    # CastLeft
            di = (h + 2) % 8
        else:           # CastRight
            di = (h - 2) % 8
        nx = x + world[W_STEP] * dir_cos[di]
        ny = y + world[W_STEP] * dir_sin[di]
        if nx < world[W_XMIN] or nx > world[W_XMAX] or \
           ny < world[W_YMIN] or ny > world[W_YMAX]:
            nx = x   # blocked by the course boundary
            ny = y
    return nx, ny, nh


# Compile the scalar route. The fallback keeps the identical Python objects,
# so both routes execute the same arithmetic in the same order.
_sense = accel(_sense_py)
_encode = accel(_encode_py)
_move = accel(_move_py)
_train_loop_numba = accel(_train_loop_py) if NUMBA_ENABLED else None


def _train_loop_numpy(world, q, e, gamma, alpha, lam, eps_schedule,
                      episodes, max_steps, algo, uniform_expect,
                      ev_tb, ev_td, ev_x, ev_y, ev_z, ev_rx, ev_ry, ev_rz, ev_off,
                      u_explore, u_action, dir_cos, dir_sin, returns, steps_out):
    """Numpy route: same episode logic, trace updates vectorized per step."""
    n_actions = q.shape[1]
    sx = world[W_SRC_X]
    sy_ = world[W_SRC_Y]
    u_adv = world[W_U_ADV]

    for ep in range(episodes):
        eps = eps_schedule[ep]
        e[:] = 0.0
        x = world[W_START_X]
        y = world[W_START_Y]
        h = int(world[W_START_H])
        lo, hi = ev_off[ep], ev_off[ep + 1]
        ev = (ev_tb[lo:hi], ev_td[lo:hi], ev_x[lo:hi], ev_y[lo:hi], ev_z[lo:hi],
              ev_rx[lo:hi], ev_ry[lo:hi], ev_rz[lo:hi])

        cl, cr = _sense_np(world, ev, u_adv, x, y, h, 0.0, dir_cos, dir_sin)
        cmax = cl if cl > cr else cr
        ema = cmax
        run_max = cmax
        s = _encode_py(world, ema, cl, cr)

        total = 0.0
        steps = 0
        for k in range(max_steps):
            if u_explore[ep, k] < eps:
                a = int(u_action[ep, k])
            else:
                a = 0
                best = q[s, 0]
                for j in range(1, n_actions):
                    if q[s, j] > best:
                        best = q[s, j]
                        a = j
            best = q[s, 0]
            for j in range(1, n_actions):
                if q[s, j] > best:
                    best = q[s, j]
            greedy_taken = q[s, a] >= best

            nx, ny, nh = _move_py(world, x, y, h, a, dir_cos, dir_sin)
            t_now = float(k + 1)
            cl, cr = _sense_np(world, ev, u_adv, nx, ny, nh, t_now, dir_cos, dir_sin)
            cmax = cl if cl > cr else cr
            ema = ema + world[W_EMA_ALPHA] * (cmax - ema)
            new_max = run_max if run_max > cmax else cmax
            ddx = nx - sx
            ddy = ny - sy_
            dist = math.sqrt(ddx * ddx + ddy * ddy)
            at_source = dist <= world[W_SUCCESS_R]
            r = (new_max - run_max) - world[W_STEP_COST]
            if at_source:
                r += world[W_BONUS]
            done = at_source or (k == max_steps - 1)
            sp = _encode_py(world, ema, cl, cr)

            if done:
                target = r
            else:
                if algo == ALGO_Q_LAMBDA:
                    nxt = q[sp, 0]
                    for j in range(1, n_actions):
                        if q[sp, j] > nxt:
                            nxt = q[sp, j]
                else:
                    gidx = 0
                    gval = q[sp, 0]
                    for j in range(1, n_actions):
                        if q[sp, j] > gval:
                            gval = q[sp, j]
                            gidx = j
                    if uniform_expect == 1:
                        acc = 0.0
                        for j in range(n_actions):
                            acc += q[sp, j]
                        nxt = acc / n_actions
                    else:
                        acc = 0.0
                        for j in range(n_actions):
                            acc += (eps / n_actions) * q[sp, j]
                        acc += (1.0 - eps) * q[sp, gidx]
                        nxt = acc
                target = r + gamma * nxt
            delta = target - q[s, a]
            e[s, a] += 1.0
            q += (alpha * delta) * e
            if algo == ALGO_Q_LAMBDA and not greedy_taken:
                e[:] = 0.0
            else:
                e *= gamma * lam

            total += r
            steps = k + 1
            x, y, h = nx, ny, nh
            run_max = new_max
            s = sp
            if done:
                break
        returns[ep] = total
        steps_out[ep] = steps


def _sense_np(world, ev, u_adv, x, y, h, t, dir_cos, dir_sin):
    ch = dir_cos[h]
    sh = dir_sin[h]
    fore = world[W_ANT_FORE]
    lat = world[W_ANT_LAT]
    z = world[W_ZFLY]
    lx = x + fore * ch - lat * sh
    ly = y + fore * sh + lat * ch
    rxp = x + fore * ch + lat * sh
    ryp = y + fore * sh - lat * ch
    cl = plume_point(lx, ly, z, world[W_SRC_X], world[W_SRC_Y], world[W_SRC_Z],
                     world[W_Q], world[W_U], world[W_AY], world[W_BY], world[W_EY],
                     world[W_AZ], world[W_BZ], world[W_EZ], world[W_DIFF],
                     world[W_SY0], world[W_SZ0])
    cr = plume_point(rxp, ryp, z, world[W_SRC_X], world[W_SRC_Y], world[W_SRC_Z],
                     world[W_Q], world[W_U], world[W_AY], world[W_BY], world[W_EY],
                     world[W_AZ], world[W_BZ], world[W_EZ], world[W_DIFF],
                     world[W_SY0], world[W_SZ0])
    tb, td, bx, by_, bz_, rx, ry, rz = ev
    if cl > 0.0 and blank_hit_vec(tb, td, bx, by_, bz_, rx, ry, rz, u_adv, lx, ly, z, t):
        cl = 0.0
    if cr > 0.0 and blank_hit_vec(tb, td, bx, by_, bz_, rx, ry, rz, u_adv, rxp, ryp, z, t):
        cr = 0.0
    return cl, cr


def train_tabular(world, q, e, *, gamma, alpha, lam, eps_schedule,
                  episodes, max_steps, algo, uniform_expect,
                  events, event_offsets, u_explore, u_action, route=None):
    """Run the packed training loop on the selected route.

    ``events`` is a tuple of eight float64 arrays (tb, td, x, y, z, rx, ry,
    rz) concatenated over episodes, indexed through ``event_offsets``.
    ``eps_schedule`` carries the per-episode exploration rates, precomputed
    so every route consumes bit-identical values. Returns (per-episode
    returns, per-episode step counts). Q and E are updated in place.
    """
    if route is None:
        route = "numba" if NUMBA_ENABLED else "numpy"
    if route == "numba" and not NUMBA_ENABLED:
        raise RuntimeError("numba route requested but numba is unavailable/disabled")
    returns = np.zeros(episodes)
    steps_out = np.zeros(episodes, dtype=np.int64)
    args = (world, q, e, gamma, alpha, lam, eps_schedule,
            episodes, max_steps, algo, uniform_expect,
            *events, event_offsets, u_explore, u_action,
            DIR_COS, DIR_SIN, returns, steps_out)
    if route == "numba":
        _train_loop_numba(*args)
    elif route == "numpy":
        _train_loop_numpy(*args)
    else:
        raise ValueError(f"unknown route {route!r}")
    return returns, steps_out
