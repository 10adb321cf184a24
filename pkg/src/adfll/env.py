"""Synthetic 3D landmark-localization environments.

An environment is a deterministic intensity volume built from a task spec:
a sequence (one of four intensity ramps of normalized landmark distance),
a pathology (deterministic hash noise, amplitude 0 or +/-8), and an
orientation (an axis permutation applied to the coordinates before
rendering). A navigating agent is a small bounding box with six axis moves;
the reward is the change in distance to the landmark.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum, IntEnum
from functools import lru_cache

import numpy as np

from .hashing import FNV_PRIME, MASK64, fnv1a64
from .rng import Pcg32

Voxel = tuple[int, int, int]

DEFAULT_DIMS: Voxel = (32, 32, 32)
DEFAULT_TERMINAL_RADIUS = 1.0
QUANT_LEVELS = 8  # intensities 0..255 quantized by floor(i / 32)


class ConfigError(ValueError):
    """Invalid environment specification."""


class Pathology(Enum):
    P0 = 0  # noise-free
    P1 = 1  # +/-8 deterministic hash noise

    @property
    def noise_amplitude(self) -> int:
        return 0 if self is Pathology.P0 else 8


class Sequence(Enum):
    S0 = 0  # linear ramp 255 -> 0
    S1 = 1  # exact inversion of S0: 0 -> 255
    S2 = 2  # ramp squared
    S3 = 3  # rectified sine, four lobes


class Orientation(Enum):
    # Value is the axis permutation p: rendering coordinate u_i = v[p[i]].
    AXIAL = (0, 1, 2)
    SAGITTAL = (2, 1, 0)
    CORONAL = (0, 2, 1)

    @property
    def perm(self) -> tuple[int, int, int]:
        return self.value


class Action(IntEnum):
    POS_X = 0
    NEG_X = 1
    POS_Y = 2
    NEG_Y = 3
    POS_Z = 4
    NEG_Z = 5

    @property
    def axis(self) -> int:
        return self.value // 2

    @property
    def delta(self) -> int:
        return 1 if self.value % 2 == 0 else -1


@dataclass(frozen=True)
class EnvSpec:
    landmark: Voxel
    dims: Voxel = DEFAULT_DIMS
    pathology: Pathology = Pathology.P0
    sequence: Sequence = Sequence.S0
    orientation: Orientation = Orientation.AXIAL
    seed: int = 0

    def __post_init__(self):
        if any(d < 1 for d in self.dims):
            raise ConfigError(f"non-positive dims {self.dims}")
        ext = _base_extents(self.dims, self.orientation)
        if not all(0 <= self.landmark[i] < ext[i] for i in range(3)):
            raise ConfigError(
                f"landmark {self.landmark} outside rendered extents {ext}"
            )

    @property
    def task_id(self) -> str:
        return make_task_id(self.pathology, self.sequence, self.orientation)


def make_task_id(p: Pathology, s: Sequence, o: Orientation) -> str:
    return f"P{p.value}-S{s.value}-{o.name}"


def parse_task_id(task_id: str) -> tuple[Pathology, Sequence, Orientation]:
    try:
        p, s, o = task_id.split("-")
        return Pathology[p], Sequence[s], Orientation[o]
    except (ValueError, KeyError):
        raise ConfigError(f"malformed task_id {task_id!r}") from None


def all_task_ids() -> list[str]:
    """The full 2 x 4 x 3 = 24 task grid, in canonical order."""
    return [
        make_task_id(p, s, o)
        for p in Pathology
        for s in Sequence
        for o in Orientation
    ]


def _base_extents(dims: Voxel, orientation: Orientation) -> Voxel:
    p = orientation.perm
    return (dims[p[0]], dims[p[1]], dims[p[2]])


def _noise_grid(seed: int, coords: list[np.ndarray], amplitude: int) -> np.ndarray:
    """Per-voxel FNV-1a of (seed, u) reduced to [-amplitude, amplitude]."""
    if amplitude == 0:
        return np.zeros(coords[0].shape, dtype=np.int64)
    h = np.full(coords[0].shape, fnv1a64(struct.pack("<Q", seed & MASK64)), dtype=np.uint64)
    prime = np.uint64(FNV_PRIME)
    for axis in coords:
        u32 = axis.astype(np.uint64)
        for shift in (0, 8, 16, 24):
            h ^= (u32 >> np.uint64(shift)) & np.uint64(0xFF)
            h *= prime
    span = 2 * amplitude + 1
    return (h % np.uint64(span)).astype(np.int64) - amplitude


def noise_at(seed: int, u: Voxel, amplitude: int) -> int:
    """Scalar reference for `_noise_grid`; also used by tests."""
    if amplitude == 0:
        return 0
    data = struct.pack("<QIII", seed & MASK64, u[0], u[1], u[2])
    return fnv1a64(data) % (2 * amplitude + 1) - amplitude


def _sequence_map(seq: Sequence, t: np.ndarray) -> np.ndarray:
    s0 = np.floor(255.0 * (1.0 - t)).astype(np.int64)
    if seq is Sequence.S0:
        return s0
    if seq is Sequence.S1:
        return 255 - s0
    if seq is Sequence.S2:
        return np.floor(255.0 * (1.0 - t) ** 2).astype(np.int64)
    return np.floor(255.0 * np.abs(np.sin(4.0 * math.pi * t))).astype(np.int64)


class TaskEnvironment:
    """A fully materialized, immutable task volume."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.task_id = spec.task_id
        self._perm = spec.orientation.perm
        self._extents = _base_extents(spec.dims, spec.orientation)
        self._dmax = _farthest_corner_distance(spec.landmark, self._extents)
        self.grid = self._render()
        self.grid.setflags(write=False)
        self._qgrid = (self.grid >> 5).astype(np.uint8)  # floor(i/32)
        self._qgrid.setflags(write=False)

    def _render(self) -> np.ndarray:
        idx = np.indices(self.spec.dims, dtype=np.int64)
        u = [idx[self._perm[0]], idx[self._perm[1]], idx[self._perm[2]]]
        lx, ly, lz = self.spec.landmark
        d = np.sqrt(
            (u[0] - lx) ** 2.0 + (u[1] - ly) ** 2.0 + (u[2] - lz) ** 2.0
        )
        t = d / self._dmax
        base = _sequence_map(self.spec.sequence, t)
        base += _noise_grid(self.spec.seed, u, self.spec.pathology.noise_amplitude)
        return np.clip(base, 0, 255).astype(np.uint8)

    def intensity(self, v: Voxel) -> int:
        return int(self.grid[v])

    def goal_distance(self, v: Voxel) -> float:
        """Euclidean distance of the orientation-permuted voxel to the landmark."""
        p = self._perm
        u = (v[p[0]], v[p[1]], v[p[2]])
        return distance_error(u, self.spec.landmark)

    def in_bounds(self, v: Voxel) -> bool:
        return all(0 <= v[i] < self.spec.dims[i] for i in range(3))

    def clamp(self, v: Voxel) -> Voxel:
        return tuple(
            min(max(v[i], 0), self.spec.dims[i] - 1) for i in range(3)
        )  # type: ignore[return-value]


def _farthest_corner_distance(landmark: Voxel, extents: Voxel) -> float:
    best = 0.0
    for cx in (0, extents[0] - 1):
        for cy in (0, extents[1] - 1):
            for cz in (0, extents[2] - 1):
                best = max(best, distance_error((cx, cy, cz), landmark))
    if best == 0.0:
        raise ConfigError("degenerate 1-voxel volume")
    return best


@lru_cache(maxsize=64)
def _cached_environment(spec: EnvSpec) -> TaskEnvironment:
    return TaskEnvironment(spec)


def make_environment(spec: EnvSpec) -> TaskEnvironment:
    """Build (or fetch the cached) environment for a spec."""
    return _cached_environment(spec)


@dataclass(frozen=True)
class AgentBox:
    center: Voxel
    half_extent: int = 1


@lru_cache(maxsize=8)
def _patch_offsets(half_extent: int) -> np.ndarray:
    # Raster order: x outermost, then y, then z.
    rng = range(-half_extent, half_extent + 1)
    return np.array(
        [(dx, dy, dz) for dx in rng for dy in rng for dz in rng], dtype=np.int64
    )


def observe(env: TaskEnvironment, box: AgentBox) -> bytes:
    """Quantized intensity patch around the box center; out-of-bounds reads 0."""
    offs = _patch_offsets(box.half_extent)
    pts = offs + np.asarray(box.center, dtype=np.int64)
    dims = np.asarray(env.spec.dims, dtype=np.int64)
    valid = np.all((pts >= 0) & (pts < dims), axis=1)
    patch = np.zeros(len(offs), dtype=np.uint8)
    pv = pts[valid]
    patch[valid] = env._qgrid[pv[:, 0], pv[:, 1], pv[:, 2]]
    return patch.tobytes()


def obs_key(obs: bytes) -> int:
    """Observation key used by tabular learners and feature hashing."""
    return fnv1a64(obs)


def step(
    env: TaskEnvironment,
    box: AgentBox,
    action: Action,
    step_size: int = 1,
    terminal_radius: float = DEFAULT_TERMINAL_RADIUS,
) -> tuple[AgentBox, float, bool]:
    """Move one step along the action axis (clamped); reward is the distance delta.

    Terminal strictly inside the radius: with the default radius of 1.0 on the
    integer lattice, only an exact landmark hit ends the episode."""
    c = list(box.center)
    c[action.axis] += action.delta * step_size
    new_center = env.clamp(tuple(c))
    d_old = env.goal_distance(box.center)
    d_new = env.goal_distance(new_center)
    return (
        AgentBox(new_center, box.half_extent),
        d_old - d_new,
        d_new < terminal_radius,
    )


def distance_error(pred: Voxel, landmark: Voxel) -> float:
    """Euclidean distance between two voxel coordinates."""
    return math.sqrt(
        (pred[0] - landmark[0]) ** 2
        + (pred[1] - landmark[1]) ** 2
        + (pred[2] - landmark[2]) ** 2
    )


def sample_start(
    env: TaskEnvironment,
    rng: Pcg32,
    terminal_radius: float = DEFAULT_TERMINAL_RADIUS,
    half_extent: int = 1,
) -> AgentBox:
    """Uniform random in-bounds start strictly outside the terminal radius."""
    dx, dy, dz = env.spec.dims
    while True:
        v = (rng.below(dx), rng.below(dy), rng.below(dz))
        if env.goal_distance(v) > terminal_radius:
            return AgentBox(v, half_extent)
