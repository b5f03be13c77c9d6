"""Light transport conditions and scene geometry.

A condition is the tuple (distance, camera angle, illumination, relay
surface) plus an optional occluder.  Conditions are written in the capture
code notation ``D;angle;illumination;surface``, e.g. ``70;1;A;Wall`` is
70 cm, camera angle 1, ambient dark, ordinary wall.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from ..errors import ConfigurationError

#: Camera tilt (degrees, about the vertical axis) for each camera angle id.
ANGLE_TILT_DEG = {1: 15.0, 2: 35.0}


@dataclass(frozen=True)
class IlluminationModel:
    """Ambient floor ``ambient`` (b) and Gaussian sensor noise ``noise_sigma`` (σ)."""

    kind: str
    ambient: float
    noise_sigma: float

    def __post_init__(self):
        if self.ambient < 0 or self.noise_sigma < 0:
            raise ConfigurationError(f"illumination {self.kind!r}: ambient and noise must be >= 0")


@dataclass(frozen=True)
class SurfaceModel:
    """Relay surface reflectance.

    Attributes:
        kind: ``wall`` or ``whiteboard``.
        albedo: Diffuse albedo ρ in (0, 1].
        specular: Specular mix weight s in [0, 1).
        texture: Relative per-patch albedo variation (0.1 = ±10 %).
    """

    kind: str
    albedo: float
    specular: float
    texture: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.albedo <= 1.0:
            raise ConfigurationError(f"surface {self.kind!r}: albedo must be in (0, 1]")
        if not 0.0 <= self.specular < 1.0:
            raise ConfigurationError(f"surface {self.kind!r}: specular weight must be in [0, 1)")
        if not 0.0 <= self.texture < 1.0:
            raise ConfigurationError(f"surface {self.kind!r}: texture must be in [0, 1)")


ILLUMINATIONS = {
    "ambient_dark": IlluminationModel("ambient_dark", ambient=0.0, noise_sigma=0.005),
    "daylight": IlluminationModel("daylight", ambient=0.15, noise_sigma=0.02),
}

SURFACES = {
    "wall": SurfaceModel("wall", albedo=0.6, specular=0.0, texture=0.1),
    "whiteboard": SurfaceModel("whiteboard", albedo=0.9, specular=0.3, texture=0.0),
}

_ILLUM_CODES = {"A": "ambient_dark", "L": "daylight"}
_SURFACE_CODES = {"wall": "wall", "wb": "whiteboard"}


@dataclass(frozen=True)
class Occluder:
    """Opaque rectangle parallel to the wall.

    Attributes:
        center_cm: (x, y) of the rectangle center.
        width_cm / height_cm: Extent along x / y.
        standoff_cm: Distance from the wall, strictly between wall and hidden plane.
    """

    center_cm: tuple
    width_cm: float
    height_cm: float
    standoff_cm: float

    def __post_init__(self):
        if self.width_cm <= 0 or self.height_cm <= 0:
            raise ConfigurationError("occluder must have positive area")
        if self.standoff_cm <= 0:
            raise ConfigurationError("occluder standoff must be > 0")


@dataclass(frozen=True)
class ConditionSpec:
    """One light transport condition; ``id`` indexes the codebook."""

    id: int
    distance_cm: float
    angle_id: int
    illumination: IlluminationModel
    surface: SurfaceModel
    occluder: Optional[Occluder] = None

    def __post_init__(self):
        if self.id < 0:
            raise ConfigurationError("condition id must be >= 0")
        if not self.distance_cm > 0:
            raise ConfigurationError(
                f"distance_cm must be > 0 (hidden plane would intersect the wall), got {self.distance_cm}")
        if self.angle_id not in ANGLE_TILT_DEG:
            raise ConfigurationError(f"angle_id must be one of {sorted(ANGLE_TILT_DEG)}")
        if self.occluder is not None and self.occluder.standoff_cm >= self.distance_cm:
            raise ConfigurationError("occluder must lie between the wall and the hidden plane")

    @property
    def tilt_deg(self) -> float:
        return ANGLE_TILT_DEG[self.angle_id]

    @property
    def code(self) -> str:
        illum = {v: k for k, v in _ILLUM_CODES.items()}[self.illumination.kind]
        surface = "Wall" if self.surface.kind == "wall" else "Wb"
        return f"{self.distance_cm:g};{self.angle_id};{illum};{surface}"

    @classmethod
    def from_code(cls, code: str, id: int = 0, occluder: Optional[Occluder] = None) -> "ConditionSpec":
        """Parse ``70;1;A;Wall`` (``;``, ``_`` or ``-`` separated)."""
        parts = [p.strip() for p in re.split(r"[;_\-]", code.strip()) if p.strip()]
        if len(parts) != 4:
            raise ConfigurationError(f"condition code {code!r} must have 4 fields")
        try:
            distance = float(parts[0])
            angle = int(parts[1])
        except ValueError as exc:
            raise ConfigurationError(f"bad condition code {code!r}") from exc
        illum = _ILLUM_CODES.get(parts[2].upper())
        surface = _SURFACE_CODES.get(parts[3].lower())
        if illum is None or surface is None:
            raise ConfigurationError(f"bad illumination/surface in condition code {code!r}")
        return cls(id=id, distance_cm=distance, angle_id=angle,
                   illumination=ILLUMINATIONS[illum], surface=SURFACES[surface],
                   occluder=occluder)

    def with_id(self, new_id: int) -> "ConditionSpec":
        return replace(self, id=new_id)

    def physical_key(self) -> dict:
        """Everything that shapes the transport matrix (``id`` excluded)."""
        d = self.to_dict()
        d.pop("id")
        return d

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.occluder is not None:
            d["occluder"]["center_cm"] = list(self.occluder.center_cm)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionSpec":
        occ = d.get("occluder")
        return cls(
            id=int(d["id"]),
            distance_cm=float(d["distance_cm"]),
            angle_id=int(d["angle_id"]),
            illumination=IlluminationModel(**d["illumination"]),
            surface=SurfaceModel(**d["surface"]),
            occluder=None if occ is None else Occluder(
                center_cm=tuple(float(v) for v in occ["center_cm"]),
                width_cm=float(occ["width_cm"]),
                height_cm=float(occ["height_cm"]),
                standoff_cm=float(occ["standoff_cm"]),
            ),
        )


@dataclass(frozen=True)
class SceneGeometry:
    """Sampling grids and physical extents of the hidden plane and the wall."""

    hidden_res: tuple = (16, 16)
    wall_res: tuple = (16, 16)
    hidden_plane_size_cm: tuple = (40.0, 40.0)
    wall_size_cm: tuple = (100.0, 100.0)
    geometry_seed: int = 7
    camera_distance_cm: float = 150.0

    def __post_init__(self):
        for name in ("hidden_res", "wall_res"):
            res = getattr(self, name)
            if len(res) != 2 or min(res) < 2:
                raise ConfigurationError(f"{name} must be two integers >= 2, got {res}")
        for name in ("hidden_plane_size_cm", "wall_size_cm"):
            size = getattr(self, name)
            if len(size) != 2 or min(size) <= 0:
                raise ConfigurationError(f"{name} must be two positive lengths, got {size}")
        if self.camera_distance_cm <= 0:
            raise ConfigurationError("camera_distance_cm must be > 0")

    def to_dict(self) -> dict:
        return {
            "hidden_res": [int(v) for v in self.hidden_res],
            "wall_res": [int(v) for v in self.wall_res],
            "hidden_plane_size_cm": [float(v) for v in self.hidden_plane_size_cm],
            "wall_size_cm": [float(v) for v in self.wall_size_cm],
            "geometry_seed": int(self.geometry_seed),
            "camera_distance_cm": float(self.camera_distance_cm),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneGeometry":
        return cls(
            hidden_res=tuple(int(v) for v in d["hidden_res"]),
            wall_res=tuple(int(v) for v in d["wall_res"]),
            hidden_plane_size_cm=tuple(float(v) for v in d["hidden_plane_size_cm"]),
            wall_size_cm=tuple(float(v) for v in d["wall_size_cm"]),
            geometry_seed=int(d["geometry_seed"]),
            camera_distance_cm=float(d.get("camera_distance_cm", 150.0)),
        )


def canonical_text(cond: ConditionSpec, geom: SceneGeometry, *, with_id: bool = True) -> str:
    """Stable JSON encoding of ``(cond, geom)``."""
    cond_d = cond.to_dict() if with_id else cond.physical_key()
    return json.dumps({"cond": cond_d, "geom": geom.to_dict()},
                      sort_keys=True, separators=(",", ":"))


# Condition codes of the real capture setup.
CONDITION_CATALOG = (
    "70;1;A;Wall", "100;1;A;Wall", "70;2;A;Wall", "100;2;A;Wall",
    "70;1;L;Wall", "70;2;L;Wall",
    "70;1;A;Wb", "100;1;A;Wb", "70;2;A;Wb", "100;2;A;Wb", "70;1;L;Wb",
)

# Mixed-condition datasets.
MIXTURES = {
    "all-mnist": ("70;1;A;Wall", "100;1;A;Wall", "70;2;A;Wall", "100;2;A;Wall",
                  "70;1;A;Wb", "100;1;A;Wb", "70;2;A;Wb", "100;2;A;Wb"),
    "all-supermodel": ("100;1;A;Wall", "70;2;A;Wall", "100;2;A;Wall", "70;2;L;Wall",
                       "70;1;A;Wb", "70;2;A;Wb", "100;2;A;Wb", "70;1;L;Wb"),
    "all-anime": ("100;1;A;Wall", "70;2;A;Wall", "100;2;A;Wall", "70;1;L;Wall",
                  "70;1;A;Wb", "70;2;A;Wb", "100;2;A;Wb", "70;1;L;Wb"),
    "four-anime": ("100;1;A;Wall", "70;2;A;Wall", "70;1;A;Wb", "70;2;A;Wb"),
}


def default_occluder(distance_cm: float) -> Occluder:
    """12 x 12 cm occluder slightly off-axis, halfway between wall and hidden plane."""
    return Occluder(center_cm=(5.0, -3.0), width_cm=12.0, height_cm=12.0,
                    standoff_cm=distance_cm / 2.0)


def desk_conditions(mixture: str = "four-anime", *, occluder: bool = True) -> list[ConditionSpec]:
    """Conditions of a named mixture (or comma-separated codes), ids from 0."""
    if mixture in MIXTURES:
        codes = MIXTURES[mixture]
    else:
        codes = tuple(c.strip() for c in mixture.split(",") if c.strip())
        if not codes:
            raise ConfigurationError(
                f"unknown mixture {mixture!r}; choose from {sorted(MIXTURES)} or list codes")
    conds = []
    for i, code in enumerate(codes):
        base = ConditionSpec.from_code(code, id=i)
        occ = default_occluder(base.distance_cm) if occluder else None
        conds.append(replace(base, occluder=occ))
    return conds
