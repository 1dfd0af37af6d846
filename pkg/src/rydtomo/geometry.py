"""Spatial layouts: boxed network atoms, the input site, and output-probe sweeps.

All lengths are in micrometres.  Network atoms live in the z = 0 plane inside
a square box of side L centred on the origin; the excitation is injected from
a fixed input atom on the negative x axis and read out at two movable probe
atoms that are stepped through a fixed 200-point trajectory outside the box.

Atom ordering within a realization is fixed: index 0 is the input atom,
indices 1..M are the box atoms, and the last two indices are the probes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_MIN_SEPARATION = 3.1  # blockade radius for the chosen Rydberg state, um
PROBE_STEP = 0.2              # radial / vertical probe increment, um
N_PROBE_BASES = 20
N_PROBE_OFFSETS = 10
N_PROBE_CONFIGS = N_PROBE_BASES * N_PROBE_OFFSETS

_MAX_REJECTIONS = 10_000

# Quadrants of the box in the order (-x,-y), (+x,-y), (-x,+y), (+x,+y).
_QUADRANT_SIGNS = np.array([[-1, -1], [1, -1], [-1, 1], [1, 1]], dtype=float)

PROBE2_PATHS = ("x_sweep", "y_sweep")


@dataclass(frozen=True)
class BoxLayout:
    """M network atoms at ``positions`` (M, 2) inside a box of side ``box_size``."""

    box_size: float
    positions: np.ndarray
    min_separation: float = DEFAULT_MIN_SEPARATION

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    def validate(self) -> None:
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ValueError(f"box positions must have shape (M, 2), got {pos.shape}")
        if not (1 <= pos.shape[0] <= 4):
            raise ValueError(f"number of box atoms must be 1..4, got {pos.shape[0]}")
        half = self.box_size / 2.0
        if np.any(np.abs(pos) > half + 1e-9):
            raise ValueError("box atom outside the box")
        if pos.shape[0] >= 2:
            d = pairwise_distances(pos)
            if d.min() < self.min_separation - 1e-9:
                raise ValueError(
                    f"box atoms closer than the minimum separation "
                    f"({d.min():.3f} < {self.min_separation})"
                )

    def to_dict(self) -> dict:
        return {
            "box_size": self.box_size,
            "positions": [[float(x), float(y)] for x, y in self.positions],
            "min_separation": self.min_separation,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BoxLayout":
        return cls(
            box_size=float(doc["box_size"]),
            positions=np.array(doc["positions"], dtype=float).reshape(-1, 2),
            min_separation=float(doc["min_separation"]),
        )


@dataclass(frozen=True)
class ProbeConfiguration:
    """One step of the simultaneous two-probe sweep."""

    index: int          # 0..199
    r1: np.ndarray      # probe 1 position, shape (3,)
    r2: np.ndarray      # probe 2 position, shape (3,)


@dataclass(frozen=True)
class NetworkRealization:
    """A complete atom arrangement: input + box + the two probes."""

    box: BoxLayout
    input_position: np.ndarray     # shape (3,)
    probe: ProbeConfiguration

    @property
    def n_atoms(self) -> int:
        return self.box.n_atoms + 3

    @property
    def input_index(self) -> int:
        return 0

    @property
    def box_indices(self) -> np.ndarray:
        return np.arange(1, 1 + self.box.n_atoms)

    @property
    def output_indices(self) -> tuple[int, int]:
        m = self.box.n_atoms
        return (m + 1, m + 2)

    def positions(self) -> np.ndarray:
        """All atom coordinates, shape (M + 3, 3), in the fixed index order."""
        box3 = np.zeros((self.box.n_atoms, 3))
        box3[:, :2] = self.box.positions
        return np.vstack([self.input_position[None, :], box3,
                          self.probe.r1[None, :], self.probe.r2[None, :]])

    def validate(self) -> None:
        self.box.validate()
        pos = self.positions()
        d = pairwise_distances(pos)
        if d.min() <= 0.0:
            raise ValueError("two atoms coincide")

    def to_dict(self) -> dict:
        return {
            "box": self.box.to_dict(),
            "input_position": [float(v) for v in self.input_position],
            "probe_index": int(self.probe.index),
            "r1": [float(v) for v in self.probe.r1],
            "r2": [float(v) for v in self.probe.r2],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkRealization":
        probe = ProbeConfiguration(
            index=int(doc["probe_index"]),
            r1=np.array(doc["r1"], dtype=float),
            r2=np.array(doc["r2"], dtype=float),
        )
        return cls(
            box=BoxLayout.from_dict(doc["box"]),
            input_position=np.array(doc["input_position"], dtype=float),
            probe=probe,
        )


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    """Distances between distinct rows of ``positions``, as a condensed 1-D array."""
    pos = np.asarray(positions, dtype=float)
    n = pos.shape[0]
    if n < 2:
        return np.empty(0)
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    iu = np.triu_indices(n, k=1)
    return dist[iu]


def sample_box_layout(
    n_atoms: int,
    box_size: float,
    seed: int,
    min_separation: float = DEFAULT_MIN_SEPARATION,
) -> BoxLayout:
    """Draw a random layout of ``n_atoms`` box atoms with a hard-sphere constraint.

    Atoms are spread over the box by partitioning it:

    * 1 atom: uniform over the whole box,
    * 2 atoms: one in each half (x < 0 and x > 0),
    * 3 atoms: one in each of three distinct, randomly chosen quadrants,
    * 4 atoms: one per quadrant.

    Candidate layouts violating the minimum pairwise separation are rejected
    and redrawn; the constraint is loose enough at the supported box sizes
    that this terminates quickly.
    """
    if not (1 <= n_atoms <= 4):
        raise ValueError(f"number of box atoms must be 1..4, got {n_atoms}")
    if box_size <= 0:
        raise ValueError(f"box size must be positive, got {box_size}")
    rng = np.random.default_rng(seed)
    half = box_size / 2.0

    for _ in range(_MAX_REJECTIONS):
        if n_atoms == 1:
            pos = rng.uniform(-half, half, size=(1, 2))
        elif n_atoms == 2:
            x = np.array([rng.uniform(-half, 0.0), rng.uniform(0.0, half)])
            y = rng.uniform(-half, half, size=2)
            pos = np.column_stack([x, y])
        else:
            if n_atoms == 3:
                quads = rng.choice(4, size=3, replace=False)
            else:
                quads = np.arange(4)
            signs = _QUADRANT_SIGNS[quads]
            pos = signs * rng.uniform(0.0, half, size=(n_atoms, 2))
        if n_atoms < 2 or pairwise_distances(pos).min() >= min_separation:
            layout = BoxLayout(box_size=box_size, positions=pos,
                               min_separation=min_separation)
            layout.validate()
            return layout

    raise RuntimeError(
        f"could not place {n_atoms} atoms with separation {min_separation} um "
        f"in a {box_size} um box after {_MAX_REJECTIONS} draws"
    )


def input_position(box_size: float) -> np.ndarray:
    """The fixed injection site, on the negative x axis one box length out."""
    return np.array([-box_size, 0.0, 0.0])


def probe_trajectory(box_size: float, probe2_path: str = "x_sweep") -> list[ProbeConfiguration]:
    """The 200 simultaneous positions of the two output probes.

    Probe 1 sits in the network plane and visits 20 angles, equally spaced
    over [-90, +90] degrees from the x axis, at 10 radii ``box_size + j * 0.2``.
    Probe 2 moves with it on a line sweep of 20 base points with the same 10
    fine offsets:

    * ``x_sweep`` (default): x from -box_size to +box_size at y = 0, elevated
      to z = box_size + j * 0.2;
    * ``y_sweep``: y from -box_size to +box_size at x = 0, z = box_size / 2 + j * 0.2.

    Configuration ``a = 10 * base + j`` pairs the a-th position of each probe,
    so configuration 0 has probe 1 at angle -90 deg and radius ``box_size``.
    """
    if probe2_path not in PROBE2_PATHS:
        raise ValueError(f"unknown probe2 path {probe2_path!r}, expected one of {PROBE2_PATHS}")
    angles = np.deg2rad(np.linspace(-90.0, 90.0, N_PROBE_BASES))
    line = np.linspace(-box_size, box_size, N_PROBE_BASES)
    configs: list[ProbeConfiguration] = []
    for base in range(N_PROBE_BASES):
        for j in range(N_PROBE_OFFSETS):
            radius = box_size + j * PROBE_STEP
            r1 = np.array([radius * np.cos(angles[base]),
                           radius * np.sin(angles[base]), 0.0])
            if probe2_path == "x_sweep":
                r2 = np.array([line[base], 0.0, box_size + j * PROBE_STEP])
            else:
                r2 = np.array([0.0, line[base], box_size / 2.0 + j * PROBE_STEP])
            configs.append(ProbeConfiguration(index=10 * base + j, r1=r1, r2=r2))
    return configs


def trajectory_arrays(configs: Sequence[ProbeConfiguration]) -> tuple[np.ndarray, np.ndarray]:
    """Stack a probe trajectory into two (n_configs, 3) coordinate arrays."""
    r1 = np.stack([c.r1 for c in configs])
    r2 = np.stack([c.r2 for c in configs])
    return r1, r2


def assemble_realization(box: BoxLayout, probe: ProbeConfiguration) -> NetworkRealization:
    """Combine a box layout with one probe configuration and validate it."""
    real = NetworkRealization(
        box=box,
        input_position=input_position(box.box_size),
        probe=probe,
    )
    real.validate()
    return real


def realization_positions(box: BoxLayout, configs: Sequence[ProbeConfiguration]) -> np.ndarray:
    """Atom coordinates for every probe configuration, shape (n_configs, M + 3, 3)."""
    n = box.n_atoms + 3
    r1, r2 = trajectory_arrays(configs)
    pos = np.zeros((len(configs), n, 3))
    pos[:, 0, :] = input_position(box.box_size)
    pos[:, 1:1 + box.n_atoms, :2] = box.positions
    pos[:, n - 2, :] = r1
    pos[:, n - 1, :] = r2
    return pos
