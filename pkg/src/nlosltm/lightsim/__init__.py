"""Synthetic passive-NLOS forward model and classical solvers."""

from .conditions import (
    ANGLE_TILT_DEG,
    CONDITION_CATALOG,
    ILLUMINATIONS,
    MIXTURES,
    SURFACES,
    ConditionSpec,
    IlluminationModel,
    Occluder,
    SceneGeometry,
    SurfaceModel,
    canonical_text,
    default_occluder,
    desk_conditions,
)
from .solvers import classical_reconstruct, condition_number
from .transport import (
    TransportCache,
    TransportMatrix,
    build_transport_matrix,
    read_transport,
    render_projection,
    transport_key,
    write_transport,
)

__all__ = [
    "ANGLE_TILT_DEG",
    "CONDITION_CATALOG",
    "ILLUMINATIONS",
    "MIXTURES",
    "SURFACES",
    "ConditionSpec",
    "IlluminationModel",
    "Occluder",
    "SceneGeometry",
    "SurfaceModel",
    "TransportCache",
    "TransportMatrix",
    "build_transport_matrix",
    "canonical_text",
    "classical_reconstruct",
    "condition_number",
    "default_occluder",
    "desk_conditions",
    "read_transport",
    "render_projection",
    "transport_key",
    "write_transport",
]
