"""Light transport matrices: construction, projection rendering, storage.

The wall lies in the plane z = 0 with normal +z; the hidden plane is parallel
to it at z = D and faces the wall.  Vectorization is row-major, so hidden
pixel (r, c) is column ``r * W_x + c`` of A and wall patch (r, c) is row
``r * W_y + c``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ConfigurationError, DimensionError, IntegrityError
from .conditions import ConditionSpec, SceneGeometry, canonical_text

logger = logging.getLogger(__name__)

SPECULAR_EXPONENT = 50
MAGIC = b"NLTM1"
_ROW_BLOCK = 512


@dataclass(frozen=True, eq=False)
class TransportMatrix:
    """Dense nonnegative matrix A with the scene it was built for.

    Attributes:
        entries: (H_y*W_y, H_x*W_x) float64, read-only.
        cond: Condition the matrix was built for.
        geom: Scene geometry.
        row_scale: Per-row factor applied after the radiometric term
            (global exposure normalizer times camera foreshortening).
    """

    entries: np.ndarray
    cond: ConditionSpec
    geom: SceneGeometry
    row_scale: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.entries.shape


def _plane_centers(res: tuple, size_cm: tuple, z: float) -> np.ndarray:
    h, w = res
    sh, sw = size_cm
    ys = sh / 2.0 - (np.arange(h) + 0.5) * (sh / h)
    xs = (np.arange(w) + 0.5) * (sw / w) - sw / 2.0
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), np.full(h * w, float(z))], axis=1)


def _surface_albedo(cond: ConditionSpec, geom: SceneGeometry) -> np.ndarray:
    n_rows = geom.wall_res[0] * geom.wall_res[1]
    rho = np.full(n_rows, cond.surface.albedo)
    if cond.surface.texture > 0:
        rng = np.random.default_rng(geom.geometry_seed)
        rho = rho * (1.0 + cond.surface.texture * rng.uniform(-1.0, 1.0, size=n_rows))
    return np.clip(rho, 1e-6, 1.0)


def _camera_position(cond: ConditionSpec, geom: SceneGeometry) -> np.ndarray:
    tilt = math.radians(cond.tilt_deg)
    d = geom.camera_distance_cm
    return np.array([d * math.sin(tilt), 0.0, d * math.cos(tilt)])


def _visibility(wall: np.ndarray, hidden: np.ndarray, cond: ConditionSpec) -> np.ndarray:
    """1 where the hidden-pixel-to-patch segment misses the occluder, else 0."""
    occ = cond.occluder
    if occ is None:
        return np.ones((wall.shape[0], hidden.shape[0]))
    # segment q + t (p - q) meets the occluder plane z = standoff at t = (D - h) / D
    t = (cond.distance_cm - occ.standoff_cm) / cond.distance_cm
    px = hidden[None, :, 0] + t * (wall[:, None, 0] - hidden[None, :, 0])
    py = hidden[None, :, 1] + t * (wall[:, None, 1] - hidden[None, :, 1])
    cx, cy = occ.center_cm
    blocked = (np.abs(px - cx) <= occ.width_cm / 2.0) & (np.abs(py - cy) <= occ.height_cm / 2.0)
    return (~blocked).astype(np.float64)


def build_transport_matrix(cond: ConditionSpec, geom: SceneGeometry) -> TransportMatrix:
    """Build A for *cond* under *geom*.

    A_ij = ρ_i [(1 - s) cosθ_j cosθ_i / r² + s g] V_ij, scaled per row by the
    camera foreshortening of patch i and one global exposure factor chosen so
    that the brightest row sums to 1.  The specular lobe g = max(0, R·v)^50
    lies in [0, 1] and has no distance falloff; R is the mirror direction of
    the incoming ray and v the direction to the camera.
    """
    if cond.occluder is not None and not (0 < cond.occluder.standoff_cm < cond.distance_cm):
        raise ConfigurationError("occluder must lie strictly between wall and hidden plane")

    wall = _plane_centers(geom.wall_res, geom.wall_size_cm, 0.0)
    hidden = _plane_centers(geom.hidden_res, geom.hidden_plane_size_cm, cond.distance_cm)
    rho = _surface_albedo(cond, geom)
    camera = _camera_position(cond, geom)
    s = cond.surface.specular

    to_cam = camera[None, :] - wall
    to_cam /= np.linalg.norm(to_cam, axis=1, keepdims=True)
    foreshortening = to_cam[:, 2]

    raw = np.empty((wall.shape[0], hidden.shape[0]))
    for start in range(0, wall.shape[0], _ROW_BLOCK):
        stop = min(start + _ROW_BLOCK, wall.shape[0])
        diff = hidden[None, :, :] - wall[start:stop, None, :]  # patch -> hidden pixel
        r2 = np.sum(diff * diff, axis=2)
        r = np.sqrt(r2)
        cos_i = diff[:, :, 2] / r            # incidence at the wall, normal +z
        cos_j = diff[:, :, 2] / r            # emission at the hidden plane, normal -z
        irradiance = cos_j * cos_i / r2
        term = (1.0 - s) * irradiance
        if s > 0:
            omega = diff / r[:, :, None]
            mirror = -omega.copy()
            mirror[:, :, 2] += 2.0 * omega[:, :, 2]
            lobe = np.clip(np.einsum("ijk,ik->ij", mirror, to_cam[start:stop]), 0.0, None)
            term = term + s * lobe ** SPECULAR_EXPONENT
        vis = _visibility(wall[start:stop], hidden, cond)
        raw[start:stop] = rho[start:stop, None] * term * vis

    raw *= foreshortening[:, None]
    brightest = raw.sum(axis=1).max()
    if not brightest > 0:
        raise ConfigurationError("occluder blocks every light path; transport matrix is zero")
    normalizer = 1.0 / brightest
    entries = raw * normalizer
    entries.setflags(write=False)
    row_scale = foreshortening * normalizer
    row_scale.setflags(write=False)
    return TransportMatrix(entries=entries, cond=cond, geom=geom, row_scale=row_scale)


def _as_hwc(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise DimensionError(f"expected an H x W x C image, got shape {x.shape}")
    return x


def render_projection(A: TransportMatrix, x: np.ndarray, noise_seed: int) -> np.ndarray:
    """Render y = clip(A vec(x) + b + n, 0, 1) per channel.

    Parameters
    ----------
    A : TransportMatrix
    x : ndarray
        Hidden image (H_x, W_x) or (H_x, W_x, C) in [0, 1].
    noise_seed : int
        Seed of the Gaussian sensor noise n ~ N(0, σ²).

    Returns
    -------
    ndarray
        (H_y, W_y, C) projection in [0, 1].
    """
    x = _as_hwc(x)
    if tuple(x.shape[:2]) != tuple(A.geom.hidden_res):
        raise DimensionError(f"hidden image is {x.shape[:2]}, transport expects {A.geom.hidden_res}")
    if not np.all(np.isfinite(x)):
        raise DimensionError("hidden image has non-finite values")
    n_channels = x.shape[2]
    flat = x.reshape(-1, n_channels)
    y = A.entries @ flat
    illum = A.cond.illumination
    if illum.ambient:
        y = y + illum.ambient
    if illum.noise_sigma > 0:
        rng = np.random.default_rng(noise_seed)
        y = y + rng.normal(0.0, illum.noise_sigma, size=y.shape)
    hy, wy = A.geom.wall_res
    return np.clip(y, 0.0, 1.0).reshape(hy, wy, n_channels)


# -- NLTM1 container ---------------------------------------------------------

def transport_key(cond: ConditionSpec, geom: SceneGeometry) -> str:
    """Content hash of the physical condition and geometry (``id`` excluded)."""
    return hashlib.sha256(canonical_text(cond, geom, with_id=False).encode("utf-8")).hexdigest()


def write_transport(A: TransportMatrix, path: str) -> str:
    """Write ``NLTM1`` | rows, cols | row-major float64 entries | row scale | text."""
    text = canonical_text(A.cond, A.geom).encode("utf-8")
    rows, cols = A.entries.shape
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", rows, cols))
        fh.write(np.ascontiguousarray(A.entries, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(A.row_scale, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", len(text)))
        fh.write(text)
    os.replace(tmp, path)
    return os.path.abspath(path)


def read_transport(path: str) -> TransportMatrix:
    """Read an ``NLTM1`` container written by :func:`write_transport`."""

    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path}: not an NLTM1 container")
    try:
        offset = len(MAGIC)
        rows, cols = struct.unpack_from("<QQ", blob, offset)
        offset += 16
        n = rows * cols
        entries = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).astype(np.float64)
        offset += 8 * n
        row_scale = np.frombuffer(blob, dtype="<f8", count=rows, offset=offset).astype(np.float64)
        offset += 8 * rows
        (text_len,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        text = blob[offset:offset + text_len].decode("utf-8")
        if offset + text_len != len(blob):
            raise ValueError("trailing or missing bytes")
        meta = json.loads(text)
    except (struct.error, ValueError) as exc:
        raise IntegrityError(f"{path}: truncated or corrupt NLTM1 container ({exc})") from exc
    cond = ConditionSpec.from_dict(meta["cond"])
    geom = SceneGeometry.from_dict(meta["geom"])
    entries = entries.reshape(rows, cols)
    entries.setflags(write=False)
    row_scale.setflags(write=False)
    return TransportMatrix(entries=entries, cond=cond, geom=geom, row_scale=row_scale)


class TransportCache:
    """On-disk cache of transport matrices keyed by :func:`transport_key`."""

    def __init__(self, root: str):
        self.root = root

    def path_for(self, cond: ConditionSpec, geom: SceneGeometry) -> str:
        return os.path.join(self.root, f"{transport_key(cond, geom)}.nltm")

    def contains(self, cond: ConditionSpec, geom: SceneGeometry) -> bool:
        return os.path.isfile(self.path_for(cond, geom))

    def get(self, cond: ConditionSpec, geom: SceneGeometry) -> Optional[TransportMatrix]:
        path = self.path_for(cond, geom)
        if not os.path.isfile(path):
            return None
        A = read_transport(path)
        if canonical_text(A.cond, A.geom, with_id=False) != canonical_text(cond, geom, with_id=False):
            raise IntegrityError(f"{path}: cached matrix does not match its key")
        return TransportMatrix(entries=A.entries, cond=cond, geom=geom, row_scale=A.row_scale)

    def get_or_build(self, cond: ConditionSpec, geom: SceneGeometry) -> TransportMatrix:
        cached = self.get(cond, geom)
        if cached is not None:
            return cached
        logger.info("Building transport matrix for %s (%s)", cond.code, transport_key(cond, geom)[:12])
        A = build_transport_matrix(cond, geom)
        write_transport(A, self.path_for(cond, geom))
        return A
