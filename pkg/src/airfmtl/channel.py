"""Device geometry, large-scale path loss and block-fading MIMO uplink channels."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import SystemConfig

REFERENCE_DISTANCE = 1.0  # m, distance at which kappa is measured


@dataclass(frozen=True)
class DevicePlacement:
    task: int
    index: int
    radial: float
    azimuth: float
    distance_to_ps: float


@dataclass(frozen=True)
class ChannelSet:
    """Channels of one round.

    ``H[m]`` is the ``N_R x N_T`` matrix of device ``m`` (devices are numbered
    task by task), ``gains[m]`` its large-scale power gain.
    """

    round: int
    H: np.ndarray
    gains: np.ndarray

    @property
    def n_devices(self) -> int:
        return self.H.shape[0]


def place_devices(config: SystemConfig, rng: np.random.Generator) -> list[DevicePlacement]:
    """Drop every device inside the cell of radius ``Delta`` around the PS foot.

    With ``placement_law = "disk_uniform"`` the squared radius is uniform on
    ``[0, Delta**2]`` (uniform density over the disk). ``"paper_literal"``
    draws the squared radius uniform on ``[0, Delta]`` instead, which keeps
    every device within ``sqrt(Delta)`` meters.
    """
    pl = config.pathloss
    M = config.total_devices
    upper = pl.Delta ** 2 if pl.placement_law == "disk_uniform" else pl.Delta
    radial = np.sqrt(rng.uniform(0.0, upper, size=M))
    azimuth = rng.uniform(0.0, 2 * np.pi, size=M)
    out = []
    m = 0
    for k, count in enumerate(config.M):
        for i in range(count):
            dist = float(np.hypot(radial[m], pl.ps_height))
            out.append(DevicePlacement(k, i, float(radial[m]), float(azimuth[m]), dist))
            m += 1
    return out


def path_gain(placement: DevicePlacement | float, config: SystemConfig) -> float:
    """Large-scale power gain ``G_S * G_D * kappa * distance**(-alpha)``."""
    dist = placement if isinstance(placement, (int, float)) else placement.distance_to_ps
    if dist < REFERENCE_DISTANCE:
        raise ValueError(
            f"distance {dist} m is below the {REFERENCE_DISTANCE} m reference distance"
        )
    pl = config.pathloss
    return pl.G_S * pl.G_D * pl.kappa * dist ** (-pl.alpha)


def cscg(rng: np.random.Generator, shape, variance: float | np.ndarray = 1.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples with the given variance."""
    scale = np.sqrt(np.asarray(variance) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_channels(
    placements: Sequence[DevicePlacement],
    t: int,
    config: SystemConfig,
    rng: np.random.Generator,
    gains: np.ndarray | None = None,
) -> ChannelSet:
    if gains is None:
        gains = np.array([path_gain(p, config) for p in placements])
    gains = np.asarray(gains, dtype=float)
    H = cscg(rng, (len(gains), config.N_R, config.N_T), gains[:, None, None])
    return ChannelSet(round=t, H=H, gains=gains)


def dump_placements(path: str | Path, placements: Sequence[DevicePlacement],
                    config: SystemConfig) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "i", "radial", "azimuth", "distance", "gain"])
        for p in placements:
            w.writerow([p.task, p.index, repr(p.radial), repr(p.azimuth),
                        repr(p.distance_to_ps), repr(path_gain(p, config))])
