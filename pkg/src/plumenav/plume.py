"""Ground-truth world model: Gaussian plume, gusty wind, blanks, and course.

Concentration comes from the steady-state Gaussian plume closed form with a
ground-reflection term, using Briggs open-country dispersion curves selected
by Pasquill stability class (class G approximated as 2/3 of class F). Wind
is the configured mean along +x plus Dryden-filtered gusts. Blanks, pockets
of air with no trace of the compound, are wind-advected ellipsoidal voids
seeded by a Poisson process whose intensity is calibrated so the expected
masked fraction equals the configured sparsity.

Everything is deterministic per (config, seed): the field pregenerates its
gust sequence and blank schedule at construction from a seeded generator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .kernels import blank_hit_vec, plume_point

# Briggs open-country coefficients: sigma = a * x * (1 + b*x)^e, x in meters.
# Class G is not tabulated by Briggs; 2/3 of class F is the usual stand-in.
_BRIGGS = {
    "A": ((0.22, 1e-4, -0.5), (0.20, 0.0, 1.0)),
    "B": ((0.16, 1e-4, -0.5), (0.12, 0.0, 1.0)),
    "C": ((0.11, 1e-4, -0.5), (0.08, 2e-4, -0.5)),
    "D": ((0.08, 1e-4, -0.5), (0.06, 1.5e-3, -0.5)),
    "E": ((0.06, 1e-4, -0.5), (0.03, 3e-4, -1.0)),
    "F": ((0.04, 1e-4, -0.5), (0.016, 3e-4, -1.0)),
    "G": ((0.04 * 2 / 3, 1e-4, -0.5), (0.016 * 2 / 3, 3e-4, -1.0)),
}

MAX_FLIGHT_CEILING = 3.0  # m, UAV flight envelope

# blank event geometry (ellipsoid semi-axes, m) and lifetime (s)
BLANK_RADII = (1.5, 1.0, 0.75)
BLANK_LIFETIME = 20.0


@dataclass(frozen=True)
class PlumeConfig:
    """Environment parameters for one plume; defaults mirror the reference setup."""

    diffusion: float = 1.0            # dimensionless scale on sigma_y, sigma_z
    sparsity: float = 0.0             # expected blank fraction in [0, 1]
    temperature: float = 20.0         # deg C (held constant)
    relative_humidity: float = 50.0   # percent (held constant)
    air_density: float = 1.225        # kg/m^3
    wind_speed: float = 1.0           # m/s, mean along +x
    emission_rate: float = 1.0        # kg/s
    stability_class: str = "D"        # Pasquill class A..G
    source_height: float = 1.0        # m
    source_position: tuple[float, float] = (3.0, 5.0)
    obstacle_count: int = 5
    bounds: tuple[float, float, float] = (20.0, 10.0, 3.0)  # width, depth, height
    turbulence_intensity: float = 1.0  # scales Dryden gust sigmas; 0 disables gusts
    development_time: float = 300.0    # s for the plume to reach steady state
    # virtual-source initial dispersion: the diffuser + fan emit a finite,
    # already-mixed volume, so sigma never collapses to zero at the source
    initial_sigma_y: float = 0.15      # m
    initial_sigma_z: float = 0.12      # m

    def __post_init__(self):
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError(f"sparsity must be in [0, 1], got {self.sparsity}")
        if self.wind_speed < 0:
            raise ValueError("wind_speed must be >= 0")
        if self.emission_rate <= 0:
            raise ValueError("emission_rate must be > 0")
        if self.stability_class not in _BRIGGS:
            raise ValueError(f"unknown stability class {self.stability_class!r}")
        w, d, h = self.bounds
        sx, sy = self.source_position
        if not (0 <= sx <= w and 0 <= sy <= d):
            raise ValueError("source must lie inside the course bounds")
        if h > MAX_FLIGHT_CEILING + 1e-9:
            raise ValueError(f"course height {h} exceeds the {MAX_FLIGHT_CEILING} m envelope")
        if not 0 < self.source_height <= h:
            raise ValueError("source height must lie within the course volume")

    def sigma_coefficients(self):
        (ay, by, ey), (az, bz, ez) = _BRIGGS[self.stability_class]
        return ay, by, ey, az, bz, ez

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PlumeConfig":
        d = dict(d)
        if "source_position" in d:
            d["source_position"] = tuple(d["source_position"])
        if "bounds" in d:
            d["bounds"] = tuple(d["bounds"])
        return cls(**d)


# ---------------------------------------------------------------------------
# Course geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    """Axis-aligned solid block (walls and obstacles both use this)."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        return (self.xmin - margin <= x <= self.xmax + margin and
                self.ymin - margin <= y <= self.ymax + margin)


@dataclass(frozen=True)
class Course:
    """Two-room floor plan with a doorway, random block obstacles, and poses."""

    width: float
    depth: float
    height: float
    walls: tuple[Block, ...]
    obstacles: tuple[Block, ...]
    start_pose: tuple[float, float, float, float]   # x, y, z, heading_deg
    source_room: str

    @property
    def blocks(self) -> tuple[Block, ...]:
        return self.walls + self.obstacles

    def in_bounds(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width and 0.0 <= y <= self.depth

    def is_free(self, x: float, y: float, margin: float = 0.0) -> bool:
        if not (margin <= x <= self.width - margin and margin <= y <= self.depth - margin):
            return False
        return not any(b.contains(x, y, margin) for b in self.blocks)

    def segment_blocked(self, x0, y0, x1, y1, margin: float = 0.0) -> bool:
        """Conservative swept check of a straight move against all blocks."""
        steps = max(2, int(math.hypot(x1 - x0, y1 - y0) / 0.05) + 1)
        for i in range(steps + 1):
            f = i / steps
            if not self.is_free(x0 + f * (x1 - x0), y0 + f * (y1 - y0), margin):
                return True
        return False

    def raycast(self, x, y, heading_deg, max_range: float = 10.0) -> float:
        """Distance to the nearest solid surface along the heading."""
        h = math.radians(heading_deg)
        dx, dy = math.cos(h), math.sin(h)
        step = 0.05
        r = step
        while r <= max_range:
            px, py = x + r * dx, y + r * dy
            if not self.in_bounds(px, py) or any(b.contains(px, py) for b in self.blocks):
                return r
            r += step
        return max_range


def _path_exists(course: Course, start: tuple[float, float],
                 goal: tuple[float, float], cell: float = 0.25) -> bool:
    """Breadth-first search over an occupancy grid; robot radius ~ cell/2."""
    nx = int(course.width / cell) + 1
    ny = int(course.depth / cell) + 1
    free = np.zeros((nx, ny), dtype=bool)
    for i in range(nx):
        for j in range(ny):
            free[i, j] = course.is_free(i * cell, j * cell, margin=0.05)
    si, sj = int(round(start[0] / cell)), int(round(start[1] / cell))
    gi, gj = int(round(goal[0] / cell)), int(round(goal[1] / cell))
    if not (free[si, sj] and free[gi, gj]):
        return False
    seen = np.zeros_like(free)
    stack = [(si, sj)]
    seen[si, sj] = True
    while stack:
        i, j = stack.pop()
        if (i, j) == (gi, gj):
            return True
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < nx and 0 <= b < ny and free[a, b] and not seen[a, b]:
                seen[a, b] = True
                stack.append((a, b))
    return False


def build_course(width: float = 20.0, depth: float = 10.0, height: float = 3.0,
                 divider_x: float = 10.0, door_y: tuple[float, float] = (4.0, 6.0),
                 wall_thickness: float = 0.2, obstacle_count: int = 5,
                 layout_seed: int = 11,
                 start_pose: tuple[float, float, float, float] = (19.0, 8.5, 1.0, 180.0),
                 source_room: str = "Room2",
                 source_position: tuple[float, float] = (3.0, 5.0)) -> Course:
    """Assemble the default two-room course.

    Room 2 (upwind, x < divider_x) hosts the source; Room 1 holds the start
    pose at the far end. Obstacles are placed by the layout seed in free
    space, away from the start, source, and the corridor through the door,
    and the layout is re-rolled until a free path start -> source exists.
    """
    t = wall_thickness / 2.0
    walls = (
        Block(divider_x - t, divider_x + t, 0.0, door_y[0]),
        Block(divider_x - t, divider_x + t, door_y[1], depth),
    )
    rng = np.random.default_rng(layout_seed)
    sx, sy = source_position
    for _attempt in range(64):
        obstacles = []
        tries = 0
        while len(obstacles) < obstacle_count and tries < 500:
            tries += 1
            w = rng.uniform(0.4, 0.9)
            d = rng.uniform(0.4, 0.9)
            cx = rng.uniform(1.0, width - 1.0)
            cy = rng.uniform(1.0, depth - 1.0)
            blk = Block(cx - w / 2, cx + w / 2, cy - d / 2, cy + d / 2)
            # keep clear of the start, the source, the doorway, and the
            # plume corridor band so the course remains flyable
            if math.hypot(cx - start_pose[0], cy - start_pose[1]) < 2.0:
                continue
            if math.hypot(cx - sx, cy - sy) < 2.0:
                continue
            if abs(cx - divider_x) < 1.2:
                continue
            if abs(cy - sy) < 1.4:
                continue
            if any(not (blk.xmax < o.xmin or blk.xmin > o.xmax or
                        blk.ymax < o.ymin or blk.ymin > o.ymax) for o in obstacles):
                continue
            obstacles.append(blk)
        course = Course(width, depth, height, walls, tuple(obstacles),
                        start_pose, source_room)
        if course.is_free(*start_pose[:2], margin=0.1) and \
           course.is_free(sx, sy, margin=0.1) and \
           _path_exists(course, start_pose[:2], (sx, sy)):
            return course
    raise ValueError("could not build a course with a free start->source path")


def course_from_dict(d: dict) -> Course:
    kwargs = {}
    for key in ("width", "depth", "height", "divider_x", "wall_thickness",
                "obstacle_count", "layout_seed", "source_room"):
        if key in d:
            kwargs[key] = d[key]
    if "door_y" in d:
        kwargs["door_y"] = tuple(d["door_y"])
    if "start_pose" in d:
        kwargs["start_pose"] = tuple(d["start_pose"])
    if "source_position" in d:
        kwargs["source_position"] = tuple(d["source_position"])
    return build_course(**kwargs)


# ---------------------------------------------------------------------------
# Blank schedule
# ---------------------------------------------------------------------------

class BlankSchedule:
    """Poisson-seeded, wind-advected ellipsoidal voids over space-time.

    The birth intensity is calibrated so that the probability of a uniformly
    random (position, time) query being covered equals ``sparsity``:
    coverage of a Boolean model is 1 - exp(-rate * lifetime * volume).
    """

    def __init__(self, rng: np.random.Generator, sparsity: float,
                 bounds: tuple[float, float, float], duration: float,
                 u_adv: float, radii: tuple[float, float, float] = BLANK_RADII,
                 lifetime: float = BLANK_LIFETIME):
        if not 0.0 <= sparsity <= 1.0:
            raise ValueError("sparsity must be in [0, 1]")
        self.sparsity = sparsity
        self.u_adv = u_adv
        self.radii = radii
        self.lifetime = lifetime
        w, d, h = bounds
        rx, ry, rz = radii
        self.full = sparsity >= 1.0
        if sparsity <= 0.0 or self.full:
            self.events = tuple(np.zeros(0) for _ in range(8))
            return
        volume = 4.0 / 3.0 * math.pi * rx * ry * rz
        rate = -math.log(1.0 - sparsity) / (lifetime * volume)  # births / m^3 / s
        # spawn box expanded so advected ellipsoids cover the core uniformly
        x_lo, x_hi = -rx - u_adv * lifetime, w + rx
        y_lo, y_hi = -ry, d + ry
        z_lo, z_hi = -rz, h + rz
        t_lo, t_hi = -lifetime, duration
        mean_count = rate * (x_hi - x_lo) * (y_hi - y_lo) * (z_hi - z_lo) * (t_hi - t_lo)
        n = int(rng.poisson(mean_count))
        tb = rng.uniform(t_lo, t_hi, n)
        order = np.argsort(tb, kind="stable")
        tb = tb[order]
        self.events = (
            tb,
            tb + lifetime,
            rng.uniform(x_lo, x_hi, n)[order],
            rng.uniform(y_lo, y_hi, n)[order],
            rng.uniform(z_lo, z_hi, n)[order],
            np.full(n, rx),
            np.full(n, ry),
            np.full(n, rz),
        )

    def hit(self, x: float, y: float, z: float, t: float) -> bool:
        if self.full:
            return True
        if self.sparsity <= 0.0:
            return False
        return blank_hit_vec(*self.events, self.u_adv, x, y, z, t)


def insert_blanks(rng: np.random.Generator, sparsity: float,
                  bounds: tuple[float, float, float], duration: float,
                  u_adv: float = 1.0) -> BlankSchedule:
    """Build a blank mask; expected masked fraction equals sparsity."""
    return BlankSchedule(rng, sparsity, bounds, duration, u_adv)


# ---------------------------------------------------------------------------
# Dryden gusts
# ---------------------------------------------------------------------------

class DrydenGusts:
    """Discrete-time Dryden shaping filters for the three gust components.

    Low-altitude MIL-spec length scales parameterized by altitude; the
    longitudinal filter is first order, lateral/vertical are second order.
    Filters are discretized by the bilinear transform at the simulation tick
    and driven by unit white noise scaled for continuous-time PSD matching.
    """

    def __init__(self, rng: np.random.Generator, wind_speed: float,
                 altitude: float, intensity: float, dt: float = 0.1,
                 horizon_ticks: int = 40_000):
        self.dt = dt
        self.intensity = intensity
        if intensity <= 0.0 or wind_speed <= 0.0:
            self.series = np.zeros((3, max(1, horizon_ticks)))
            return
        h_ft = max(3.281 * altitude, 1.0)
        lw = altitude if altitude > 0 else 0.3                    # m
        lu = (h_ft / (0.177 + 0.000823 * h_ft) ** 1.2) / 3.281    # m
        sig_w = 0.1 * wind_speed * intensity
        sig_u = sig_w / (0.177 + 0.000823 * h_ft) ** 0.4
        v_adv = max(wind_speed, 0.5)   # eddies swept past the hovering UAV

        white = rng.standard_normal((3, horizon_ticks)) / math.sqrt(dt)
        self.series = np.empty((3, horizon_ticks))
        self.series[0] = self._first_order(white[0], sig_u, lu, v_adv, dt)
        self.series[1] = self._second_order(white[1], sig_u, lu, v_adv, dt)
        self.series[2] = self._second_order(white[2], sig_w, lw, v_adv, dt)

    @staticmethod
    def _first_order(w, sigma, scale, v, dt):
        # H(s) = sigma*sqrt(2L/(pi V)) / (L/V s + 1), Tustin discretization
        tau = scale / v
        k = sigma * math.sqrt(2.0 * scale / (math.pi * v))
        a = 2.0 * tau / dt
        b0 = k / (1.0 + a)
        a1 = (1.0 - a) / (1.0 + a)
        y = np.empty_like(w)
        prev_y = 0.0
        prev_w = 0.0
        for i in range(w.size):
            y[i] = b0 * (w[i] + prev_w) - a1 * prev_y
            prev_w = w[i]
            prev_y = y[i]
        return y

    @staticmethod
    def _second_order(w, sigma, scale, v, dt):
        # H(s) = sigma*sqrt(L/(pi V)) (1 + sqrt(3) L/V s) / (L/V s + 1)^2
        tau = scale / v
        k = sigma * math.sqrt(scale / (math.pi * v))
        c = 2.0 / dt
        # numerator k*(n1 s + 1), denominator (tau s + 1)^2 under s -> c(z-1)/(z+1)
        n1 = math.sqrt(3.0) * tau
        b0 = k * (1.0 + n1 * c)
        b1 = 2.0 * k
        b2 = k * (1.0 - n1 * c)
        a0 = (1.0 + tau * c) ** 2
        a1 = 2.0 * (1.0 - (tau * c) ** 2)
        a2 = (1.0 - tau * c) ** 2
        y = np.empty_like(w)
        w1 = w2 = y1 = y2 = 0.0
        for i in range(w.size):
            y[i] = (b0 * w[i] + b1 * w1 + b2 * w2 - a1 * y1 - a2 * y2) / a0
            w2, w1 = w1, w[i]
            y2, y1 = y1, y[i]
        return y

    def at_tick(self, tick: int) -> tuple[float, float, float]:
        n = self.series.shape[1]
        i = tick % n
        return float(self.series[0, i]), float(self.series[1, i]), float(self.series[2, i])


# ---------------------------------------------------------------------------
# The field itself
# ---------------------------------------------------------------------------

class PlumeField:
    """Deterministic concentration/wind oracle for one seeded episode.

    The same (config, seed) always produces bit-identical concentration and
    wind sequences. The plume amplitude ramps linearly over the configured
    development time, modeling dispersal before steady state.
    """

    def __init__(self, config: PlumeConfig, seed: int, duration: float = 3600.0,
                 dt: float = 0.1):
        self.config = config
        self.seed = seed
        self.dt = dt
        ss = np.random.SeedSequence([int(seed), 0x9E3779B9])
        blank_rng, gust_rng = [np.random.default_rng(s) for s in ss.spawn(2)]
        self.blanks = insert_blanks(blank_rng, config.sparsity, config.bounds,
                                    duration, u_adv=config.wind_speed)
        self.gusts = DrydenGusts(gust_rng, config.wind_speed, config.source_height,
                                 config.turbulence_intensity, dt=dt,
                                 horizon_ticks=int(duration / dt) + 1)
        ay, by, ey, az, bz, ez = config.sigma_coefficients()
        self._params = (config.source_position[0], config.source_position[1],
                        config.source_height, config.emission_rate,
                        max(config.wind_speed, 1e-6), ay, by, ey, az, bz, ez,
                        config.diffusion, config.initial_sigma_y,
                        config.initial_sigma_z)

    def development_factor(self, t: float) -> float:
        td = self.config.development_time
        if td <= 0:
            return 1.0
        return min(1.0, max(0.0, t / td))

    def concentration_at(self, pos: tuple[float, float, float], t: float) -> float:
        """Blank-masked plume concentration (a.u.) at a position and time."""
        x, y, z = pos
        w, d, h = self.config.bounds
        if not (0.0 <= x <= w and 0.0 <= y <= d and 0.0 <= z <= h):
            raise ValueError(f"position {pos} outside course bounds {self.config.bounds}")
        if t < 0:
            raise ValueError("time must be >= 0")
        c = plume_point(x, y, z, *self._params) * self.development_factor(t)
        if c > 0.0 and self.blanks.hit(x, y, z, t):
            return 0.0
        return c

    def concentration_grid(self, xs: np.ndarray, ys: np.ndarray, z: float,
                           t: float, apply_blanks: bool = False) -> np.ndarray:
        """Vectorized field snapshot on a meshgrid (for export/plots)."""
        from .kernels import plume_grid
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        grid = plume_grid(gx, gy, z, *self._params) * self.development_factor(t)
        if apply_blanks and self.config.sparsity > 0:
            for i in range(gx.shape[0]):
                for j in range(gx.shape[1]):
                    if grid[i, j] > 0 and self.blanks.hit(gx[i, j], gy[i, j], z, t):
                        grid[i, j] = 0.0
        return grid

    def wind_at(self, pos: tuple[float, float, float], t: float) -> tuple[float, float, float]:
        """Mean wind plus Dryden gusts, sampled on the tick grid."""
        gx, gy, gz = self.gusts.at_tick(int(round(t / self.dt)))
        return (self.config.wind_speed + gx, gy, gz)

    def export_grid_csv(self, path, xs, ys, z: float, t: float) -> None:
        grid = self.concentration_grid(xs, ys, z, t, apply_blanks=True)
        with open(path, "w") as f:
            f.write("x,y,concentration\n")
            for i, x in enumerate(xs):
                for j, y in enumerate(ys):
                    f.write(f"{float(x)!r},{float(y)!r},{grid[i, j]!r}\n")
