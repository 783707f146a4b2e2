"""
Uniform Cartesian lattices on the unit box (0,1)^N and the unit ball.

Nodes live on an integer lattice ``x = origin + k*h`` so that every pair of
nodes differs by an integer multiple of ``h``; the operator assembly relies
on this to tabulate the kernel by lattice offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np

MIN_RESOLUTION = 3
SHAPES = ("box", "ball")


@dataclass(frozen=True)
class GridSpec:
    N: int = 2
    shape: str = "box"
    m: int = 31

    def __post_init__(self):
        if self.N not in (2, 3):
            raise ValueError(f"dimension N must be 2 or 3, got {self.N}")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        if int(self.m) != self.m or self.m < MIN_RESOLUTION:
            raise ValueError(f"resolution m must be an integer >= {MIN_RESOLUTION}, got {self.m}")

    @property
    def h(self) -> float:
        if self.shape == "box":
            return 1.0 / (self.m + 1)
        return 2.0 / (self.m + 1)


@dataclass(frozen=True, eq=False)
class Grid:
    """Interior lattice nodes with their exact distance to the boundary.

    ``index`` holds integer lattice coordinates (one row per node, entries in
    ``1..m``), ``x`` the physical coordinates and ``delta`` the distance to
    the boundary.  Nodes are stored in lexicographic order of ``index``.
    """

    spec: GridSpec
    index: np.ndarray
    x: np.ndarray
    delta: np.ndarray
    lookup: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return self.spec.N

    @property
    def m(self) -> int:
        return self.spec.m

    @property
    def h(self) -> float:
        return self.spec.h

    @property
    def shape(self) -> str:
        return self.spec.shape

    @property
    def size(self) -> int:
        return self.x.shape[0]

    @property
    def cell_volume(self) -> float:
        return self.h ** self.N

    @property
    def diameter(self) -> float:
        return math.sqrt(self.N) if self.shape == "box" else 2.0

    @property
    def volume(self) -> float:
        if self.shape == "box":
            return 1.0
        return math.pi if self.N == 2 else 4.0 * math.pi / 3.0

    def node_at(self, k) -> int:
        """Node number of lattice point ``k`` (1-based per axis), or -1 if exterior."""
        k = np.asarray(k, dtype=int)
        if np.any(k < 1) or np.any(k > self.m):
            return -1
        return int(self.lookup[tuple(k - 1)])

    def neighbors(self, axis: int, step: int = 1) -> np.ndarray:
        """Node number of the neighbour ``index + step*e_axis``; -1 marks the exterior."""
        k = self.index.copy()
        k[:, axis] += step
        out = np.full(self.size, -1, dtype=np.int64)
        inside = (k[:, axis] >= 1) & (k[:, axis] <= self.m)
        out[inside] = self.lookup[tuple((k[inside] - 1).T)]
        return out

    @cached_property
    def center_node(self) -> int:
        c = (self.m + 1) // 2
        return self.node_at([c] * self.N)

    def midline_ray(self) -> np.ndarray:
        """Nodes on the inward normal from the midpoint of the face ``x_1 = low``.

        Ordered from the boundary inward, up to the domain centre.  For the
        ball this is the ray along the negative ``x_1`` semi-axis.
        """
        c = (self.m + 1) // 2
        nodes = []
        for k1 in range(1, c + 1):
            j = self.node_at([k1] + [c] * (self.N - 1))
            if j >= 0:
                nodes.append(j)
        return np.asarray(nodes, dtype=np.int64)


def build_grid(spec: GridSpec) -> Grid:
    m, N, h = spec.m, spec.N, spec.h
    axes = [np.arange(1, m + 1)] * N
    index = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, N)
    if spec.shape == "box":
        x = index * h
        delta = np.minimum(x, 1.0 - x).min(axis=1)
    else:
        # |x| < 1 decided in integers so lattice points on the sphere are dropped
        c = 2 * index - (m + 1)
        keep = np.sum(c * c, axis=1) < (m + 1) ** 2
        x = index * h - 1.0
        radius = np.sqrt(np.sum(x * x, axis=1))
        index, x = index[keep], x[keep]
        delta = 1.0 - radius[keep]
    lookup = np.full((m,) * N, -1, dtype=np.int64)
    lookup[tuple((index - 1).T)] = np.arange(index.shape[0])
    for arr in (index, x, delta, lookup):
        arr.setflags(write=False)
    return Grid(spec=spec, index=index, x=x, delta=delta, lookup=lookup)


def boundary_band(grid: Grid, eta: float) -> np.ndarray:
    """Indices of nodes with ``delta < eta`` (the discrete boundary strip)."""
    if not 0.0 < eta < grid.diameter / 2:
        raise ValueError(f"eta must lie in (0, {grid.diameter / 2}), got {eta}")
    return np.flatnonzero(grid.delta < eta)
