"""Hierarchical coarse-to-fine renderers over the box-world scene model.

Three views of the same immutable scene: an orthographic per-floor BEV
raster, a zoom that re-rasterizes the world region under a BEV bounding box
(so magnification reveals detail instead of resampling pixels), and a
first-person perspective raycast against walls, floor/ceiling slabs and
object boxes. All renderers are pure functions of (scene, parameters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import AABB, BBox2D, Rect, view_direction
from .scene import COLOR_RGB, Floor, Room, Scene

DEFAULT_BEV_RESOLUTION = 512
DEFAULT_VIEW_RESOLUTION = 256

BACKGROUND_RGB = (12, 12, 12)
FLOOR_BG_RGB = (214, 209, 200)
WALL_RGB = (58, 54, 52)
WALL_FACE_RGB = (162, 156, 148)
CEILING_RGB = (238, 236, 232)
# shading multipliers for hit faces, keyed by normal axis
FACE_BRIGHTNESS = {0: 0.82, 1: 0.65, 2: 1.0}


class InvalidRegion(ValueError):
    """Zoom bounding box degenerates to (near-)zero area after clamping."""


class PoseOutOfBounds(ValueError):
    """Camera position lies outside the building envelope."""


@dataclass
class Image:
    """Row-major 8-bit RGB raster."""

    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self) -> None:
        if self.pixels.shape != (self.height, self.width, 3) or self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be a (height, width, 3) uint8 array")

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def to_ppm(self) -> bytes:
        """Binary portable pixmap (P6)."""
        header = f"P6\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + self.tobytes()

    @classmethod
    def from_ppm(cls, data: bytes) -> "Image":
        parts = data.split(b"\n", 3)
        if parts[0] != b"P6" or parts[2] != b"255":
            raise ValueError("not a P6 pixmap with 8-bit channels")
        w, h = (int(v) for v in parts[1].split())
        pixels = np.frombuffer(parts[3][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)
        return cls(width=w, height=h, pixels=pixels.copy())


@dataclass(frozen=True)
class CameraPose:
    """First-person camera: world position, yaw/pitch/roll degrees, horizontal fov."""

    x: float
    y: float
    z: float
    yaw: float
    pitch: float
    roll: float = 0.0
    fov: float = 90.0

    def __post_init__(self) -> None:
        if not -180.0 <= self.yaw < 180.0:
            raise ValueError("yaw must lie in [-180, 180)")
        if not -89.0 <= self.pitch <= 89.0:
            raise ValueError("pitch must lie in [-89, 89]")
        if self.roll != 0.0:
            raise ValueError("roll is fixed to 0")
        if not 30.0 < self.fov < 120.0:
            raise ValueError("fov must lie in (30, 120)")

    @property
    def pos(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into [-180, 180)."""
    return (yaw + 180.0) % 360.0 - 180.0


# ---------------------------------------------------------------------------
# orthographic rasterization


def _px_span(w0: float, w1: float, win0: float, win_len: float, res: int) -> tuple[int, int]:
    """Pixel rows/columns whose centers fall inside a world interval."""
    p0 = (w0 - win0) / win_len * res
    p1 = (w1 - win0) / win_len * res
    i0 = max(0, math.ceil(p0 - 0.5))
    i1 = min(res, math.ceil(p1 - 0.5))
    return i0, i1


def _fill_rect(img: np.ndarray, window: Rect, res: int, rect: Rect, rgb: tuple[int, int, int]) -> None:
    x0, x1 = _px_span(rect.x0, rect.x1, window.x0, window.width, res)
    y0, y1 = _px_span(rect.y0, rect.y1, window.y0, window.height, res)
    if x1 > x0 and y1 > y0:
        img[y0:y1, x0:x1] = rgb


def _wall_bands(room: Room, thickness: float) -> list[Rect]:
    """Wall bands for a room's four edges, with door openings removed."""
    t = thickness / 2.0
    r = room.rect
    edges = [
        ("x", r.y0, r.x0, r.x1),
        ("x", r.y1, r.x0, r.x1),
        ("y", r.x0, r.y0, r.y1),
        ("y", r.x1, r.y0, r.y1),
    ]
    bands: list[Rect] = []
    for axis, pos, lo, hi in edges:
        spans = [(lo, hi)]
        for door in room.door_edges:
            if door.axis != axis or abs(door.position - pos) > 1e-6:
                continue
            nxt = []
            for s0, s1 in spans:
                a, b = max(s0, door.lo), min(s1, door.hi)
                if a >= b:
                    nxt.append((s0, s1))
                    continue
                if a - s0 > 1e-9:
                    nxt.append((s0, a))
                if s1 - b > 1e-9:
                    nxt.append((b, s1))
            spans = nxt
        for s0, s1 in spans:
            if axis == "x":
                bands.append(Rect(s0, pos - t, s1, pos + t))
            else:
                bands.append(Rect(pos - t, s0, pos + t, s1))
    return bands


def _paint_order(floor: Floor):
    # ascending top-z so taller objects overpaint; ids break ties deterministically
    order = sorted(floor.objects, key=lambda o: o.object_id, reverse=True)
    order.sort(key=lambda o: o.aabb.top_z)
    return order


def render_window(scene: Scene, floor: int, window: Rect, resolution: int) -> Image:
    """Rasterize a world-space window of one floor at the given square resolution."""
    fl = scene.floor(floor)
    img = np.empty((resolution, resolution, 3), dtype=np.uint8)
    img[:] = BACKGROUND_RGB
    _fill_rect(img, window, resolution, fl.footprint, FLOOR_BG_RGB)
    thickness = 0.1
    for obj in _paint_order(fl):
        _fill_rect(img, window, resolution, obj.aabb.footprint, COLOR_RGB[obj.color])
    for room in fl.rooms:
        for band in _wall_bands(room, thickness):
            _fill_rect(img, window, resolution, band, WALL_RGB)
    return Image(width=resolution, height=resolution, pixels=img)


def render_bev(scene: Scene, floor: int, resolution: int = DEFAULT_BEV_RESOLUTION) -> Image:
    """Orthographic top-down raster of one floor's full footprint.

    Results are cached on the scene (scenes are immutable after generation);
    callers must treat the returned pixels as read-only.
    """
    cache = scene.__dict__.setdefault("_bev_cache", {})
    key = (floor, resolution)
    img = cache.get(key)
    if img is None:
        img = render_window(scene, floor, scene.floor(floor).footprint, resolution)
        cache[key] = img
    return img


def clamp_bbox(bbox: BBox2D, bev_resolution: int = DEFAULT_BEV_RESOLUTION) -> tuple[BBox2D, bool]:
    """Clamp a zoom bbox to BEV image bounds; reports whether clamping changed it."""
    clamped = bbox.clamped(bev_resolution, bev_resolution)
    return clamped, clamped != bbox


def render_zoom(
    scene: Scene,
    floor: int,
    bbox: BBox2D,
    out_resolution: int = DEFAULT_BEV_RESOLUTION,
    bev_resolution: int = DEFAULT_BEV_RESOLUTION,
) -> Image:
    """Re-rasterize the world region under a BEV-pixel bounding box.

    The bbox is interpreted in the pixel grid of a `bev_resolution` BEV and is
    clamped to it; a clamped area under 4 px^2 raises InvalidRegion.
    """
    fl = scene.floor(floor)
    clamped, _ = clamp_bbox(bbox, bev_resolution)
    if clamped.area < 4.0:
        raise InvalidRegion(f"zoom region degenerate after clamping: {clamped.as_list()}")
    fp = fl.footprint
    sx = fp.width / bev_resolution
    sy = fp.height / bev_resolution
    window = Rect(
        fp.x0 + clamped.x_min * sx,
        fp.y0 + clamped.y_min * sy,
        fp.x0 + clamped.x_max * sx,
        fp.y0 + clamped.y_max * sy,
    )
    return render_window(scene, floor, window, out_resolution)


# ---------------------------------------------------------------------------
# first-person raycasting


@dataclass(frozen=True)
class SceneBox:
    """One raycastable box: geometry, base color, and its object id if any."""

    aabb: AABB
    rgb: tuple[int, int, int]
    object_id: str | None


def _floor_boxes(scene: Scene, floor_index: int) -> list[SceneBox]:
    fl = scene.floor(floor_index)
    fp = fl.footprint
    z0 = fl.elevation_z
    z1 = z0 + scene.floor_height
    slab = 0.12
    boxes = [
        SceneBox(AABB(fp.x0, fp.y0, z0 - slab, fp.x1, fp.y1, z0), FLOOR_BG_RGB, None),
        SceneBox(AABB(fp.x0, fp.y0, z1, fp.x1, fp.y1, z1 + slab), CEILING_RGB, None),
    ]
    for room in fl.rooms:
        for band in _wall_bands(room, 0.1):
            boxes.append(SceneBox(AABB(band.x0, band.y0, z0, band.x1, band.y1, z1), WALL_FACE_RGB, None))
    for obj in fl.objects:
        boxes.append(SceneBox(obj.aabb, COLOR_RGB[obj.color], obj.object_id))
    return boxes


def floor_boxes(scene: Scene, floor_index: int) -> list[SceneBox]:
    return _boxes_arrays(scene, floor_index)[0]


def _boxes_arrays(scene: Scene, floor_index: int):
    # cached on the scene instance; scenes are immutable after generation
    cache = scene.__dict__.setdefault("_box_cache", {})
    cached = cache.get(floor_index)
    if cached is None:
        boxes = _floor_boxes(scene, floor_index)
        lo = np.array([[b.aabb.x0, b.aabb.y0, b.aabb.z0] for b in boxes])
        hi = np.array([[b.aabb.x1, b.aabb.y1, b.aabb.z1] for b in boxes])
        cached = (boxes, lo, hi)
        cache[floor_index] = cached
    return cached


def camera_floor_index(scene: Scene, z: float) -> int:
    rel = (z - scene.floors[0].elevation_z) / scene.floor_height
    return min(max(int(rel), 0), len(scene.floors) - 1)


def check_envelope(scene: Scene, pos: tuple[float, float, float]) -> None:
    fp = scene.floors[0].footprint
    z0 = scene.floors[0].elevation_z
    z1 = z0 + scene.floor_height * len(scene.floors)
    if not (fp.contains_point(pos[0], pos[1]) and z0 <= pos[2] <= z1):
        raise PoseOutOfBounds(f"camera position {pos} outside the building envelope")


def _primary_rays(pose: CameraPose, resolution: int) -> np.ndarray:
    """Unit-normalized-enough direction per pixel, shape (res, res, 3)."""
    fwd = np.array(view_direction(pose.yaw, pose.pitch))
    yaw = math.radians(pose.yaw)
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    up = np.cross(right, fwd)
    tan_h = math.tan(math.radians(pose.fov) / 2.0)
    tan_v = tan_h  # square images share the half-angle in tangent space
    ndc = (2.0 * (np.arange(resolution) + 0.5) / resolution) - 1.0
    xs = ndc[None, :, None] * tan_h
    ys = ndc[:, None, None] * tan_v
    return fwd[None, None, :] + xs * right[None, None, :] - ys * up[None, None, :]


def raycast(
    scene: Scene, pose: CameraPose, resolution: int,
    boxes: list[SceneBox] | None = None,
    shade: bool = True,
) -> tuple[np.ndarray | None, np.ndarray]:
    """Nearest-hit over the floor's boxes for every primary ray.

    Returns (rgb array (res,res,3) uint8 or None when shade=False, box-index
    array (res,res) int32 with -1 where the ray escapes). Ties resolve to the
    earliest box in list order.
    """
    check_envelope(scene, pose.pos)
    if boxes is None:
        boxes, lo_arr, hi_arr = _boxes_arrays(scene, camera_floor_index(scene, pose.z))
    else:
        lo_arr = np.array([[b.aabb.x0, b.aabb.y0, b.aabb.z0] for b in boxes])
        hi_arr = np.array([[b.aabb.x1, b.aabb.y1, b.aabb.z1] for b in boxes])
    n = resolution * resolution
    dirs = _primary_rays(pose, resolution).reshape(n, 3).astype(np.float32)
    np.copyto(dirs, 1e-12, where=np.abs(dirs) < 1e-12)
    inv = (1.0 / dirs).T  # (3, n)
    origin = pose.pos

    best_t = np.full(n, np.inf, dtype=np.float32)
    best_idx = np.full(n, -1, dtype=np.int32)
    best_axis = np.zeros(n, dtype=np.int8) if shade else None
    # conservative per-box lower bound on any hit parameter, for pruning;
    # directions are unnormalized, so scale by the largest direction norm
    gaps = np.maximum(lo_arr - origin, 0.0) + np.maximum(origin - hi_arr, 0.0)
    max_norm = float(np.sqrt((dirs * dirs).sum(axis=1)).max()) if n else 1.0
    min_t = (np.sqrt((gaps * gaps).sum(axis=1)) / max_norm) if len(boxes) else np.empty(0)
    farthest = np.inf
    for bi in range(len(boxes)):
        if min_t[bi] > farthest:
            continue
        nears = []
        tmax = None
        for a in range(3):
            t0 = (np.float32(lo_arr[bi, a] - origin[a])) * inv[a]
            t1 = (np.float32(hi_arr[bi, a] - origin[a])) * inv[a]
            nears.append(np.minimum(t0, t1))
            far = np.maximum(t0, t1)
            tmax = far if tmax is None else np.minimum(tmax, far, out=tmax)
        tmin = np.maximum(np.maximum(nears[0], nears[1]), nears[2])
        np.maximum(tmin, 0.0, out=tmin)
        hit = (tmax >= tmin) & (tmin < best_t)
        if hit.any():
            best_t[hit] = tmin[hit]
            best_idx[hit] = bi
            if shade:
                # entry-face axis, first-max like argmax over (x, y, z)
                axis = (nears[1] > nears[0]).astype(np.int8)
                axis[nears[2] > np.maximum(nears[0], nears[1])] = 2
                best_axis[hit] = axis[hit]
        if bi % 8 == 7:
            farthest = float(best_t.max())

    if not shade:
        return None, best_idx.reshape(resolution, resolution)
    colors = np.array([b.rgb for b in boxes] + [BACKGROUND_RGB], dtype=np.float32)
    bright = np.array([FACE_BRIGHTNESS[0], FACE_BRIGHTNESS[1], FACE_BRIGHTNESS[2]],
                      dtype=np.float32)
    rgb = colors[best_idx] * bright[best_axis][:, None]
    rgb[best_idx < 0] = BACKGROUND_RGB
    return (
        rgb.clip(0, 255).astype(np.uint8).reshape(resolution, resolution, 3),
        best_idx.reshape(resolution, resolution),
    )


def render_view(scene: Scene, pose: CameraPose, resolution: int = DEFAULT_VIEW_RESOLUTION) -> Image:
    """Perspective first-person render; background is black where rays escape."""
    rgb, _ = raycast(scene, pose, resolution)
    return Image(width=resolution, height=resolution, pixels=rgb)


def render_view_object_ids(
    scene: Scene, pose: CameraPose, resolution: int = DEFAULT_VIEW_RESOLUTION,
    boxes: list[SceneBox] | None = None,
) -> list[str | None]:
    """Flat per-pixel nearest object ids (None for walls/slabs/background)."""
    if boxes is None:
        boxes = floor_boxes(scene, camera_floor_index(scene, pose.z))
    _, idx = raycast(scene, pose, resolution, boxes=boxes, shade=False)
    lookup: list[str | None] = [b.object_id for b in boxes]
    return [lookup[i] if i >= 0 else None for i in idx.ravel()]


def count_visible_pixels(
    scene: Scene, pose: CameraPose, object_id: str,
    resolution: int = DEFAULT_VIEW_RESOLUTION,
    boxes: list[SceneBox] | None = None,
) -> int:
    """Pixels whose nearest hit is the given object."""
    return visible_pixel_counts(scene, pose, [object_id], resolution, boxes)[object_id]


def visible_pixel_counts(
    scene: Scene, pose: CameraPose, object_ids: list[str],
    resolution: int = DEFAULT_VIEW_RESOLUTION,
    boxes: list[SceneBox] | None = None,
) -> dict[str, int]:
    """Visible-pixel counts for several objects from a single raycast."""
    if boxes is None:
        boxes = floor_boxes(scene, camera_floor_index(scene, pose.z))
    _, idx = raycast(scene, pose, resolution, boxes=boxes, shade=False)
    hist = np.bincount(idx.ravel()[idx.ravel() >= 0], minlength=len(boxes))
    out = {}
    for oid in object_ids:
        out[oid] = int(sum(hist[bi] for bi, b in enumerate(boxes) if b.object_id == oid))
    return out
