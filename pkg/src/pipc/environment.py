"""2D benchmark world: bounded arena, stochastic moving square obstacles, limited
sensing, grid signed-distance fields and the hinge collision cost."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SdfQueryError

ARENA_WIDTH = 30.0
ARENA_HEIGHT = 20.0
OBSTACLE_HALF_EXTENT = 0.5
OBSTACLE_MAX_SPEED = 1.3
OBSTACLE_MAX_ACCEL = 2.5
ROBOT_RADIUS = 0.5
SENSOR_HALF_WIDTH = 2.5
SDF_CELL_SIZE = 0.05

# Distance reported when no obstacle is in view; effectively "free space".
FREE_SPACE_DISTANCE = 1e6


@dataclass(frozen=True)
class Obstacle:
    center: np.ndarray
    velocity: np.ndarray
    half_extent: float = OBSTACLE_HALF_EXTENT


@dataclass(frozen=True)
class Environment2D:
    """Arena plus the (ground-truth) obstacle set, stored as stacked arrays.

    Obstacle centers/velocities are (N, 2) arrays so that stepping and collision
    checks vectorize; ``obstacles`` gives the per-obstacle view.
    """

    obstacle_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    obstacle_velocities: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    width: float = ARENA_WIDTH
    height: float = ARENA_HEIGHT
    half_extent: float = OBSTACLE_HALF_EXTENT
    robot_radius: float = ROBOT_RADIUS
    sensor_half_width: float = SENSOR_HALF_WIDTH

    def __post_init__(self):
        c = np.asarray(self.obstacle_centers, dtype=float).reshape(-1, 2)
        v = np.asarray(self.obstacle_velocities, dtype=float).reshape(-1, 2)
        if c.shape != v.shape:
            raise ValueError("obstacle centers and velocities must have matching shapes")
        object.__setattr__(self, "obstacle_centers", c)
        object.__setattr__(self, "obstacle_velocities", v)

    @property
    def num_obstacles(self) -> int:
        return self.obstacle_centers.shape[0]

    @property
    def obstacles(self) -> list[Obstacle]:
        return [
            Obstacle(c.copy(), v.copy(), self.half_extent)
            for c, v in zip(self.obstacle_centers, self.obstacle_velocities)
        ]

    @classmethod
    def from_obstacles(cls, obstacles: list[Obstacle], **kwargs) -> "Environment2D":
        centers = np.array([o.center for o in obstacles], dtype=float).reshape(-1, 2)
        velocities = np.array([o.velocity for o in obstacles], dtype=float).reshape(-1, 2)
        return cls(obstacle_centers=centers, obstacle_velocities=velocities, **kwargs)


def sample_environment(
    n_obs: int,
    rng: np.random.Generator,
    exclude_center: np.ndarray | None = None,
    exclude_radius: float = 2.0,
) -> Environment2D:
    """Draw obstacle starting positions uniformly over the arena, at rest.

    Positions within ``exclude_radius`` of ``exclude_center`` (the robot start)
    are resampled so that no trial begins in collision.
    """
    he = OBSTACLE_HALF_EXTENT
    lo = np.array([he, he])
    hi = np.array([ARENA_WIDTH - he, ARENA_HEIGHT - he])
    centers = np.empty((n_obs, 2))
    for i in range(n_obs):
        while True:
            c = rng.uniform(lo, hi)
            if exclude_center is None or np.linalg.norm(c - exclude_center) >= exclude_radius:
                centers[i] = c
                break
    return Environment2D(obstacle_centers=centers, obstacle_velocities=np.zeros((n_obs, 2)))


def step_obstacles(env: Environment2D, dt: float, rng) -> Environment2D:
    """Advance all obstacles by one simulation step of the stochastic jump process.

    Per obstacle: acceleration resampled uniformly in [-2.5, 2.5]^2, velocity
    clamped per axis to +-1.3 m/s, position integrated and reflected off the
    arena boundary (boxes stay fully inside).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = env.num_obstacles
    if n == 0:
        return env
    a = rng.uniform(-OBSTACLE_MAX_ACCEL, OBSTACLE_MAX_ACCEL, size=(n, 2))
    v = np.clip(env.obstacle_velocities + a * dt, -OBSTACLE_MAX_SPEED, OBSTACLE_MAX_SPEED)
    c = env.obstacle_centers + v * dt
    he = env.half_extent
    lo = np.array([he, he])
    hi = np.array([env.width - he, env.height - he])
    below = c < lo
    above = c > hi
    if below.any():
        c = np.where(below, 2 * lo - c, c)
        v = np.where(below, -v, v)
    if above.any():
        c = np.where(above, 2 * hi - c, c)
        v = np.where(above, -v, v)
    c = np.clip(c, lo, hi)
    return replace(env, obstacle_centers=c, obstacle_velocities=v)


def box_signed_distance(points: np.ndarray, centers: np.ndarray, half_extent: float) -> np.ndarray:
    """Exact signed distance from each point to the nearest axis-aligned box.

    points: (..., 2); centers: (N, 2).  Positive outside, negative inside;
    returns FREE_SPACE_DISTANCE where there are no boxes.
    """
    points = np.asarray(points, dtype=float)
    if centers.shape[0] == 0:
        return np.full(points.shape[:-1], FREE_SPACE_DISTANCE)
    q = np.abs(points[..., None, :] - centers) - half_extent  # (..., N, 2)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return np.min(outside + inside, axis=-1)


@dataclass(frozen=True, eq=False)
class SignedDistanceField:
    """Grid of signed distances to the nearest known obstacle surface.

    values[i, j] is the distance at (origin + (i, j) * cell_size); gradient grids
    are central differences of the values, and queries interpolate bilinearly.
    """

    origin: np.ndarray
    cell_size: float
    values: np.ndarray
    grad_x: np.ndarray
    grad_y: np.ndarray
    num_obstacles: int

    @classmethod
    def from_values(cls, origin, cell_size: float, values: np.ndarray, num_obstacles: int):
        gx, gy = np.gradient(values, cell_size)
        return cls(
            origin=np.asarray(origin, dtype=float),
            cell_size=float(cell_size),
            values=values,
            grad_x=gx,
            grad_y=gy,
            num_obstacles=num_obstacles,
        )

    @property
    def upper(self) -> np.ndarray:
        nx, ny = self.values.shape
        return self.origin + self.cell_size * np.array([nx - 1, ny - 1])

    def contains(self, position) -> bool:
        x, y = position[0], position[1]
        ox, oy = self.origin
        ux, uy = self.upper
        return ox <= x <= ux and oy <= y <= uy

    def _locate(self, position):
        x = (position[0] - self.origin[0]) / self.cell_size
        y = (position[1] - self.origin[1]) / self.cell_size
        nx, ny = self.values.shape
        if x < 0.0 or y < 0.0 or x > nx - 1 or y > ny - 1:
            raise SdfQueryError(
                f"query {tuple(position)} outside field extent "
                f"[{self.origin[0]}, {self.upper[0]}] x [{self.origin[1]}, {self.upper[1]}]"
            )
        i = min(int(x), nx - 2) if nx > 1 else 0
        j = min(int(y), ny - 2) if ny > 1 else 0
        return i, j, x - i, y - j

    def value(self, position) -> float:
        i, j, a, b = self._locate(position)
        v = self.values
        return float(
            v[i, j] * (1 - a) * (1 - b)
            + v[i + 1, j] * a * (1 - b)
            + v[i, j + 1] * (1 - a) * b
            + v[i + 1, j + 1] * a * b
        )

    def value_and_gradient(self, position) -> tuple[float, np.ndarray]:
        i, j, a, b = self._locate(position)
        w00 = (1 - a) * (1 - b)
        w10 = a * (1 - b)
        w01 = (1 - a) * b
        w11 = a * b
        out = np.empty(3)
        for k, g in enumerate((self.values, self.grad_x, self.grad_y)):
            out[k] = w00 * g[i, j] + w10 * g[i + 1, j] + w01 * g[i, j + 1] + w11 * g[i + 1, j + 1]
        return float(out[0]), out[1:]

    def sample(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized (values, gradients) at an (n, 2) array of in-extent points."""
        points = np.asarray(points, dtype=float)
        rel = (points - self.origin) / self.cell_size
        nx, ny = self.values.shape
        if (rel < 0).any() or (rel[:, 0] > nx - 1).any() or (rel[:, 1] > ny - 1).any():
            raise SdfQueryError("batch query outside field extent")
        i = np.minimum(rel[:, 0].astype(int), nx - 2)
        j = np.minimum(rel[:, 1].astype(int), ny - 2)
        a = rel[:, 0] - i
        b = rel[:, 1] - j
        w00 = (1 - a) * (1 - b)
        w10 = a * (1 - b)
        w01 = (1 - a) * b
        w11 = a * b
        vals = np.empty(len(points))
        grads = np.empty((len(points), 2))
        for out, g in ((vals, self.values), (grads[:, 0], self.grad_x), (grads[:, 1], self.grad_y)):
            out[...] = w00 * g[i, j] + w10 * g[i + 1, j] + w01 * g[i, j + 1] + w11 * g[i + 1, j + 1]
        return vals, grads


def visible_obstacle_mask(env: Environment2D, robot_position: np.ndarray) -> np.ndarray:
    """Obstacles whose box intersects the square sensor footprint around the robot."""
    if env.num_obstacles == 0:
        return np.zeros(0, dtype=bool)
    reach = env.sensor_half_width + env.half_extent
    delta = np.abs(env.obstacle_centers - np.asarray(robot_position, dtype=float))
    return (delta <= reach).all(axis=1)


def build_sdf(
    env: Environment2D,
    visible_only: bool = False,
    robot_position: np.ndarray | None = None,
    cell_size: float = SDF_CELL_SIZE,
    pad: float = 3.0,
) -> SignedDistanceField:
    """Rasterize the signed distance to the included obstacle set.

    With ``visible_only`` the field covers a window around the robot and includes
    only obstacles intersecting the sensor square; the window extends far enough
    (sensor reach + ``pad``) that any point beyond the extent is guaranteed at
    least ``pad`` away from every included obstacle.  With the full set the grid
    covers the arena plus ``pad`` on each side.
    """
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    if visible_only:
        if robot_position is None:
            raise ValueError("robot_position is required for a visible-only field")
        mask = visible_obstacle_mask(env, robot_position)
        centers = env.obstacle_centers[mask]
        half = env.sensor_half_width + env.half_extent + pad
        lo = np.asarray(robot_position, dtype=float) - half
        hi = np.asarray(robot_position, dtype=float) + half
    else:
        centers = env.obstacle_centers
        lo = np.array([-pad, -pad])
        hi = np.array([env.width + pad, env.height + pad])
    nx = int(np.ceil((hi[0] - lo[0]) / cell_size)) + 1
    ny = int(np.ceil((hi[1] - lo[1]) / cell_size)) + 1
    if centers.shape[0] == 0:
        values = np.full((nx, ny), FREE_SPACE_DISTANCE)
    else:
        # One pass per obstacle keeps peak memory at a single (nx, ny) grid.
        xs = (lo[0] + cell_size * np.arange(nx))[:, None]
        ys = (lo[1] + cell_size * np.arange(ny))[None, :]
        he = env.half_extent
        values = np.full((nx, ny), np.inf)
        for cx, cy in centers:
            qx = np.abs(xs - cx) - he
            qy = np.abs(ys - cy) - he
            outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
            inside = np.minimum(np.maximum(qx, qy), 0.0)
            np.minimum(values, outside + inside, out=values)
    return SignedDistanceField.from_values(lo, cell_size, values, centers.shape[0])


def hinge_cost(
    sdf: SignedDistanceField, position, robot_radius: float, eps: float
) -> tuple[float, np.ndarray]:
    """Hinge collision cost eps - z for clearance z = sdf(p) - robot_radius <= eps.

    Returns (cost, gradient w.r.t. position); both are zero on the inactive side,
    including exactly at the kink.
    """
    dist, grad = sdf.value_and_gradient(position)
    z = dist - robot_radius
    if z < eps:
        return eps - z, -grad
    return 0.0, np.zeros(2)


def check_collision(env: Environment2D, robot_position) -> bool:
    """True iff the robot disc overlaps any obstacle box of the true obstacle set."""
    if env.num_obstacles == 0:
        return False
    d = box_signed_distance(np.asarray(robot_position, dtype=float), env.obstacle_centers, env.half_extent)
    return bool(d < env.robot_radius)
