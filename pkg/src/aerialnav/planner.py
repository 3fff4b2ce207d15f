"""Obstacles, collision tests and the grid shortest-path oracle."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .core import Pose, Trajectory

# extra clearance the planner keeps beyond drone_radius
PLANNER_MARGIN = 1.5
_LOS_SPACING = 0.5


class UnreachableError(RuntimeError):
    """No collision-free path between the requested endpoints."""


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    kind = "box"

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if not all(a < b for a, b in zip(self.lo, self.hi)):
            raise ValueError("box needs lo < hi on every axis")

    def distance(self, pts: np.ndarray) -> np.ndarray:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        d = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
        return np.sqrt((d * d).sum(axis=-1))

    def strictly_inside(self, pts: np.ndarray) -> np.ndarray:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return np.all((pts > lo) & (pts < hi), axis=-1)

    def nearest_point(self, p: np.ndarray) -> np.ndarray:
        return np.clip(p, self.lo, self.hi)

    def to_dict(self) -> dict:
        return {"kind": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    kind = "sphere"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise ValueError("sphere radius must be > 0")

    def distance(self, pts: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        return np.maximum(np.linalg.norm(pts - c, axis=-1) - self.radius, 0.0)

    def center_distance(self, pts: np.ndarray) -> np.ndarray:
        return np.linalg.norm(pts - np.asarray(self.center), axis=-1)

    def nearest_point(self, p: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        off = p - c
        n = np.linalg.norm(off)
        if n <= self.radius:
            return p.copy()
        return c + off * (self.radius / n)

    def to_dict(self) -> dict:
        return {"kind": "sphere", "center": list(self.center), "radius": self.radius}


Obstacle = Union[Box, Sphere]


def obstacle_from_dict(d: dict) -> Obstacle:
    if d["kind"] == "box":
        return Box(tuple(d["lo"]), tuple(d["hi"]))
    if d["kind"] == "sphere":
        return Sphere(tuple(d["center"]), d["radius"])
    raise ValueError(f"unknown obstacle kind {d['kind']!r}")


def collision_mask(pts: np.ndarray, obstacles: Sequence[Obstacle], inflate: float) -> np.ndarray:
    """Open containment of points in obstacles grown by ``inflate``."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    hit = np.zeros(len(pts), dtype=bool)
    for ob in obstacles:
        if isinstance(ob, Sphere):
            hit |= ob.center_distance(pts) < ob.radius + inflate
        elif inflate > 0:
            hit |= ob.distance(pts) < inflate
        else:
            hit |= ob.strictly_inside(pts)
    return hit


def collides(p: Pose | Sequence[float], obstacles: Sequence[Obstacle], drone_radius: float = 1.0) -> bool:
    pos = p.position if isinstance(p, Pose) else np.asarray(p, dtype=float)
    return bool(collision_mask(pos, obstacles, drone_radius)[0])


def clearance_vector(pos: np.ndarray, obstacles: Sequence[Obstacle], max_range: float) -> np.ndarray | None:
    """Offset to the nearest obstacle surface point, or None beyond ``max_range``."""
    best, best_d = None, max_range
    for ob in obstacles:
        q = ob.nearest_point(pos)
        d = float(np.linalg.norm(q - pos))
        if d < best_d:
            best, best_d = q - pos, d
    return best


def segment_clear(a: np.ndarray, b: np.ndarray, obstacles: Sequence[Obstacle], inflate: float) -> bool:
    if not obstacles:
        return True
    n = max(2, int(math.ceil(np.linalg.norm(b - a) / _LOS_SPACING)) + 1)
    ts = np.linspace(0.0, 1.0, n)[:, None]
    return not collision_mask(a + ts * (b - a), obstacles, inflate).any()


@dataclass(frozen=True)
class Grid:
    origin: np.ndarray
    shape: tuple[int, int, int]
    resolution: float

    def points(self) -> np.ndarray:
        idx = np.indices(self.shape).reshape(3, -1).T
        return self.origin + idx * self.resolution

    def flat(self, ijk: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(ijk.T), self.shape)


def build_grid(start: np.ndarray, goal: np.ndarray, resolution: float, margin: float, z_min: float, z_max: float) -> Grid:
    lo = np.minimum(start, goal) - margin
    hi = np.maximum(start, goal) + margin
    lo[2] = min(z_min, start[2], goal[2])
    hi[2] = max(z_max, start[2], goal[2])
    lo = np.floor(lo / resolution) * resolution
    shape = tuple(int(v) for v in np.floor((hi - lo) / resolution).astype(int) + 1)
    return Grid(lo, shape, resolution)


def _neighbour_offsets(connectivity: int) -> list[tuple[int, int, int]]:
    offs = [o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)]
    if connectivity == 6:
        offs = [o for o in offs if sum(map(abs, o)) == 1]
    elif connectivity != 26:
        raise ValueError("connectivity must be 6 or 26")
    # keep one of each +/- pair; the graph is undirected
    return [o for o in offs if o > (0, 0, 0)]


def grid_search(
    grid: Grid,
    free: np.ndarray,
    start: np.ndarray,
    goal: np.ndarray,
    obstacles: Sequence[Obstacle],
    inflate: float,
    connectivity: int = 26,
) -> list[np.ndarray]:
    """Dijkstra over free grid cells, with start and goal attached to nearby free cells by clear segments."""
    n_cells = int(np.prod(grid.shape))
    shape = np.array(grid.shape)
    idx = np.indices(grid.shape).reshape(3, -1).T
    pts = grid.points()
    rows, cols, wts = [], [], []
    for off in _neighbour_offsets(connectivity):
        nb = idx + off
        ok = np.all((nb >= 0) & (nb < shape), axis=1)
        a = np.flatnonzero(ok)
        b = grid.flat(nb[ok])
        keep = free[a] & free[b]
        a, b = a[keep], b[keep]
        if obstacles and len(a):
            mid = (pts[a] + pts[b]) / 2
            clear = ~collision_mask(mid, obstacles, inflate)
            a, b = a[clear], b[clear]
        rows.append(a)
        cols.append(b)
        wts.append(np.full(len(a), grid.resolution * math.sqrt(sum(map(abs, off)))))

    s_node, g_node = n_cells, n_cells + 1
    reach = grid.resolution * math.sqrt(3) * 1.01
    for node, p in ((s_node, start), (g_node, goal)):
        d = np.linalg.norm(pts - p, axis=1)
        on_cell = np.flatnonzero(free & (d <= 1e-9))
        # an endpoint sitting on a free cell joins the lattice there only
        cand = on_cell if len(on_cell) else np.flatnonzero(free & (d <= reach))
        cand = [c for c in cand if segment_clear(p, pts[c], obstacles, inflate)]
        rows.append(np.full(len(cand), node))
        cols.append(np.array(cand, dtype=int))
        # zero-length links must still count as edges in csgraph
        wts.append(np.maximum(d[cand], 1e-9))

    r = np.concatenate(rows)
    c = np.concatenate(cols)
    w = np.concatenate(wts)
    graph = coo_matrix((w, (r, c)), shape=(n_cells + 2, n_cells + 2)).tocsr()
    dist, pred = dijkstra(graph, directed=False, indices=s_node, return_predecessors=True)
    if not np.isfinite(dist[g_node]):
        raise UnreachableError("goal is not reachable on the planning grid")
    chain = []
    node = pred[g_node]
    while node != s_node:
        chain.append(pts[node])
        node = pred[node]
    return [start] + chain[::-1] + [goal]


def smooth_path(points: list[np.ndarray], obstacles: Sequence[Obstacle], inflate: float) -> list[np.ndarray]:
    """Greedy line-of-sight shortcutting; never lengthens the path."""
    out = [points[0]]
    i = 0
    while i < len(points) - 1:
        j = len(points) - 1
        while j > i + 1 and not segment_clear(points[i], points[j], obstacles, inflate):
            j -= 1
        out.append(points[j])
        i = j
    return out


def polyline_length(points: Sequence[np.ndarray]) -> float:
    return float(sum(np.linalg.norm(b - a) for a, b in zip(points[:-1], points[1:])))


def oracle_shortest_path(
    start: Pose,
    goal: Sequence[float],
    obstacles: Sequence[Obstacle],
    *,
    resolution: float = 5.0,
    drone_radius: float = 1.0,
    z_min: float = 10.0,
    z_max: float = 120.0,
    margin: float = 60.0,
    connectivity: int = 26,
    smooth: bool = True,
) -> Trajectory:
    """Collision-free polyline from ``start`` to ``goal``.

    A direct segment is returned when it is clear; otherwise a grid search at
    ``resolution`` followed by shortcutting.
    """
    inflate = drone_radius + PLANNER_MARGIN
    s = start.position
    g = np.asarray(goal, dtype=float)
    if collision_mask(s, obstacles, inflate)[0] or collision_mask(g, obstacles, inflate)[0]:
        raise UnreachableError("start or goal lies inside an obstacle")
    if smooth and segment_clear(s, g, obstacles, inflate):
        pts = [s, g]
    else:
        grid = build_grid(s, g, resolution, margin, z_min, z_max)
        free = ~collision_mask(grid.points(), obstacles, inflate) if obstacles else np.ones(int(np.prod(grid.shape)), bool)
        pts = grid_search(grid, free, s, g, obstacles, inflate, connectivity)
        if smooth:
            pts = smooth_path(pts, obstacles, inflate)
    return Trajectory(tuple([start] + [Pose.at(p) for p in pts[1:]]))
