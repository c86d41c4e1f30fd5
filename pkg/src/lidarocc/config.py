"""Pipeline configuration: one JSON file, validated at load.

Angles in the file are degrees, matching how LiDAR specs are usually
quoted; they are converted to radians exactly once, when the grids are
built. Defaults target KITTI-scale scenes.
"""

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from lidarocc.assembly import HeuristicParams
from lidarocc.geom import CartesianGrid, SphericalGrid
from lidarocc.occupancy import ShapeLossParams


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # spherical analysis grid
    r_range: tuple[float, float] = (2.24, 70.72)
    phi_range_deg: tuple[float, float] = (-40.69, 40.69)
    theta_range_deg: tuple[float, float] = (-16.60, 4.00)
    spherical_voxel_size: tuple[float, float, float] = (0.32, 0.52, 0.42)

    # Cartesian grid for probability transfer
    x_range: tuple[float, float] = (0.0, 70.4)
    y_range: tuple[float, float] = (-40.0, 40.0)
    z_range: tuple[float, float] = (-3.0, 1.0)
    cartesian_voxel_size: tuple[float, float, float] = (0.2, 0.2, 0.2)

    # shape loss
    gamma: float = 2.0
    delta: float = 0.2

    # RoI local grids
    mu: float = 1.05
    lam: float = 0.25

    # source matching heuristic
    alpha: float = 2.0
    beta: float = 1.0
    match_voxel_size: float = 0.2

    # occupancy evaluation
    thresholds: tuple[float, ...] = (0.3, 0.5, 0.7)

    # signal-miss region detection
    max_sm_region_pixels: int = 200
    sm_extent: str = "full"

    # scenario recovery
    synthetic_intensity: float = 0.5

    strict_paper: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        try:
            self.spherical_grid()
        except ValueError as exc:
            raise ConfigError(f"spherical grid: {exc}") from exc
        try:
            self.cartesian_grid()
        except ValueError as exc:
            raise ConfigError(f"cartesian grid: {exc}") from exc
        try:
            self.loss_params()
        except ValueError as exc:
            raise ConfigError(f"gamma/delta: {exc}") from exc
        try:
            self.heuristic_params()
        except ValueError as exc:
            raise ConfigError(f"alpha/beta/match_voxel_size: {exc}") from exc
        if self.mu <= 0:
            raise ConfigError(f"mu: must be > 0, got {self.mu}")
        if self.lam < 0:
            raise ConfigError(f"lam: must be >= 0, got {self.lam}")
        if not all(0 < t < 1 for t in self.thresholds):
            raise ConfigError(f"thresholds: must lie in (0, 1), got {self.thresholds}")
        if self.max_sm_region_pixels < 1:
            raise ConfigError(f"max_sm_region_pixels: must be >= 1, got {self.max_sm_region_pixels}")
        if self.sm_extent not in ("full", "bracketed"):
            raise ConfigError(f"sm_extent: must be 'full' or 'bracketed', got {self.sm_extent!r}")

    def spherical_grid(self) -> SphericalGrid:
        return SphericalGrid.from_degrees(
            self.r_range, self.phi_range_deg, self.theta_range_deg, self.spherical_voxel_size
        )

    def cartesian_grid(self) -> CartesianGrid:
        return CartesianGrid(
            tuple(self.x_range), tuple(self.y_range), tuple(self.z_range),
            tuple(self.cartesian_voxel_size),
        )

    def loss_params(self) -> ShapeLossParams:
        return ShapeLossParams(self.gamma, self.delta)

    def heuristic_params(self) -> HeuristicParams:
        return HeuristicParams(self.alpha, self.beta, self.match_voxel_size)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            value = raw[f.name]
            if isinstance(value, list):
                value = tuple(value)
            kwargs[f.name] = value
        return cls(**kwargs)

    def to_json(self) -> str:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return json.dumps(out, indent=2, sort_keys=True)
