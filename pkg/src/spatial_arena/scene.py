"""Procedural multi-floor house scenes with exactly queryable ground truth.

A scene is a stack of floors sharing one rectangular footprint. Each floor is
partitioned into rooms by recursive rectangle splitting, rooms are connected
by doors along a spanning tree of the adjacency graph, and attributed objects
are placed inside rooms with non-overlapping footprints. Everything is
deterministic in (seed, profile) and serializes to canonical JSON so that
byte-identity checks are meaningful.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

from .geometry import AABB, Rect

FLOOR_HEIGHT = 2.8

COLORS = (
    "red", "orange", "yellow", "green", "cyan", "blue",
    "purple", "pink", "brown", "black", "white", "gray",
)

COLOR_RGB: Mapping[str, tuple[int, int, int]] = {
    "red": (200, 40, 40),
    "orange": (235, 140, 30),
    "yellow": (225, 210, 40),
    "green": (55, 160, 70),
    "cyan": (60, 195, 195),
    "blue": (50, 90, 200),
    "purple": (130, 60, 180),
    "pink": (235, 130, 180),
    "brown": (130, 90, 50),
    "black": (25, 25, 25),
    "white": (245, 245, 245),
    "gray": (128, 128, 128),
}

MATERIALS = ("wood", "metal", "fabric", "glass", "plastic", "ceramic", "leather", "stone")
SHAPES = ("rectangular", "round", "L-shaped", "cylindrical", "irregular")
STATES = ("open", "closed", "on", "off", "folded", "unfolded", "none")
ROOM_CATEGORIES = (
    "bedroom", "kitchen", "bathroom", "living", "hallway", "stairwell", "office", "storage",
)


@dataclass(frozen=True)
class ObjectClassSpec:
    """Size ranges, placement affinity and attribute vocabularies for one class."""

    width: tuple[float, float]
    depth: tuple[float, float]
    height: tuple[float, float]
    rooms: tuple[str, ...]
    states: tuple[str, ...] = ("none",)
    materials: tuple[str, ...] = MATERIALS
    shapes: tuple[str, ...] = ("rectangular",)
    colors: tuple[str, ...] = COLORS
    mounted_z: float = 0.0  # lift above the floor (paintings, mirrors, clocks)


_ANY = ("bedroom", "kitchen", "bathroom", "living", "hallway", "office", "storage")
_FIXTURE_COLORS = ("white", "gray", "black")

OBJECT_CLASSES: Mapping[str, ObjectClassSpec] = {
    "armchair": ObjectClassSpec((0.7, 0.9), (0.7, 0.9), (0.8, 1.0), ("living", "bedroom", "office"),
                                materials=("fabric", "leather"), shapes=("rectangular", "round")),
    "bathtub": ObjectClassSpec((0.7, 0.8), (1.5, 1.8), (0.5, 0.6), ("bathroom",),
                               materials=("ceramic", "stone", "metal"), colors=_FIXTURE_COLORS,
                               shapes=("rectangular", "round")),
    "bed": ObjectClassSpec((1.4, 1.9), (1.9, 2.1), (0.5, 0.7), ("bedroom",),
                           states=("folded", "unfolded"), materials=("wood", "metal", "fabric")),
    "bench": ObjectClassSpec((0.4, 0.5), (1.1, 1.5), (0.4, 0.5), ("hallway", "living", "storage"),
                             materials=("wood", "metal", "stone")),
    "bookshelf": ObjectClassSpec((0.3, 0.4), (0.8, 1.4), (1.6, 2.1), ("living", "office", "bedroom"),
                                 materials=("wood", "metal")),
    "box": ObjectClassSpec((0.3, 0.6), (0.3, 0.6), (0.3, 0.5), ("storage", "office"),
                           states=("open", "closed"), materials=("plastic", "wood"),
                           shapes=("rectangular",)),
    "cabinet": ObjectClassSpec((0.4, 0.6), (0.8, 1.2), (0.9, 1.9), _ANY,
                               states=("open", "closed"), materials=("wood", "metal")),
    "chair": ObjectClassSpec((0.45, 0.55), (0.45, 0.55), (0.85, 1.0), _ANY,
                             materials=("wood", "metal", "plastic"), shapes=("rectangular", "round")),
    "clock": ObjectClassSpec((0.25, 0.35), (0.08, 0.1), (0.25, 0.35), _ANY,
                             materials=("wood", "metal", "plastic"), shapes=("round", "rectangular"),
                             mounted_z=1.6),
    "couch": ObjectClassSpec((0.85, 1.0), (1.8, 2.4), (0.7, 0.9), ("living",),
                             materials=("fabric", "leather"), shapes=("rectangular", "L-shaped")),
    "counter": ObjectClassSpec((0.6, 0.7), (1.2, 2.2), (0.9, 0.95), ("kitchen", "bathroom"),
                               materials=("wood", "stone", "metal")),
    "crate": ObjectClassSpec((0.4, 0.7), (0.4, 0.7), (0.4, 0.6), ("storage",),
                             states=("open", "closed"), materials=("wood", "plastic")),
    "desk": ObjectClassSpec((0.6, 0.8), (1.2, 1.6), (0.72, 0.78), ("office", "bedroom"),
                            materials=("wood", "metal"), shapes=("rectangular", "L-shaped")),
    "dishwasher": ObjectClassSpec((0.6, 0.6), (0.6, 0.6), (0.82, 0.86), ("kitchen",),
                                  states=("open", "closed"), materials=("metal",),
                                  colors=_FIXTURE_COLORS),
    "dresser": ObjectClassSpec((0.45, 0.55), (1.0, 1.4), (0.8, 1.1), ("bedroom",),
                               states=("open", "closed"), materials=("wood",)),
    "fireplace": ObjectClassSpec((0.4, 0.5), (1.0, 1.4), (1.0, 1.3), ("living",),
                                 states=("on", "off"), materials=("stone", "metal"),
                                 colors=("black", "gray", "brown", "red", "white")),
    "lamp": ObjectClassSpec((0.3, 0.4), (0.3, 0.4), (1.2, 1.7), _ANY,
                            states=("on", "off"), materials=("metal", "plastic", "glass"),
                            shapes=("cylindrical", "round")),
    "microwave": ObjectClassSpec((0.35, 0.45), (0.5, 0.55), (0.3, 0.35), ("kitchen",),
                                 states=("open", "closed"), materials=("metal", "plastic"),
                                 colors=_FIXTURE_COLORS),
    "mirror": ObjectClassSpec((0.4, 0.8), (0.05, 0.08), (0.6, 1.2), ("bathroom", "bedroom", "hallway"),
                              materials=("glass",), shapes=("rectangular", "round"), mounted_z=1.0),
    "nightstand": ObjectClassSpec((0.4, 0.5), (0.4, 0.5), (0.5, 0.6), ("bedroom",),
                                  states=("open", "closed"), materials=("wood",)),
    "oven": ObjectClassSpec((0.6, 0.6), (0.6, 0.65), (0.85, 0.9), ("kitchen",),
                            states=("open", "closed"), materials=("metal",), colors=_FIXTURE_COLORS),
    "painting": ObjectClassSpec((0.5, 1.2), (0.04, 0.06), (0.4, 0.9), _ANY,
                                materials=("wood", "fabric"), shapes=("rectangular",),
                                mounted_z=1.3),
    "plant": ObjectClassSpec((0.3, 0.5), (0.3, 0.5), (0.5, 1.5), _ANY,
                             materials=("ceramic", "plastic"), shapes=("cylindrical", "irregular"),
                             colors=("green",)),
    "refrigerator": ObjectClassSpec((0.65, 0.75), (0.65, 0.75), (1.6, 1.9), ("kitchen",),
                                    states=("open", "closed"), materials=("metal",),
                                    colors=_FIXTURE_COLORS + ("red", "blue")),
    "rug": ObjectClassSpec((1.0, 2.0), (1.4, 2.6), (0.02, 0.03), ("living", "bedroom", "hallway"),
                           states=("folded", "unfolded"), materials=("fabric",),
                           shapes=("rectangular", "round", "irregular")),
    "shelf": ObjectClassSpec((0.25, 0.35), (0.6, 1.2), (0.9, 1.6), _ANY,
                             materials=("wood", "metal")),
    "shower": ObjectClassSpec((0.8, 1.0), (0.8, 1.0), (2.0, 2.2), ("bathroom",),
                              states=("open", "closed"), materials=("glass", "ceramic"),
                              colors=_FIXTURE_COLORS, shapes=("rectangular", "round")),
    "sink": ObjectClassSpec((0.45, 0.55), (0.4, 0.5), (0.8, 0.9), ("bathroom", "kitchen"),
                            materials=("ceramic", "metal", "stone"), colors=_FIXTURE_COLORS,
                            shapes=("round", "rectangular")),
    "sofa": ObjectClassSpec((0.8, 0.95), (1.6, 2.2), (0.7, 0.85), ("living", "office"),
                            materials=("fabric", "leather"), shapes=("rectangular", "L-shaped")),
    "staircase": ObjectClassSpec((1.1, 1.3), (1.7, 2.0), (2.6, 2.7), ("stairwell",),
                                 materials=("wood", "metal", "stone"), shapes=("rectangular", "L-shaped")),
    "stool": ObjectClassSpec((0.35, 0.45), (0.35, 0.45), (0.45, 0.75), ("kitchen", "living", "bathroom"),
                             materials=("wood", "metal", "plastic"), shapes=("round", "cylindrical")),
    "table": ObjectClassSpec((0.8, 1.1), (1.2, 2.0), (0.72, 0.78), ("kitchen", "living", "office"),
                             materials=("wood", "glass", "metal"), shapes=("rectangular", "round")),
    "toilet": ObjectClassSpec((0.4, 0.45), (0.6, 0.7), (0.75, 0.8), ("bathroom",),
                              states=("open", "closed"), materials=("ceramic",),
                              colors=_FIXTURE_COLORS, shapes=("irregular", "round")),
    "tv": ObjectClassSpec((0.9, 1.4), (0.1, 0.15), (0.55, 0.8), ("living", "bedroom"),
                          states=("on", "off"), materials=("plastic", "glass", "metal"),
                          colors=("black", "gray", "white")),
    "wardrobe": ObjectClassSpec((0.55, 0.65), (1.0, 1.8), (1.9, 2.2), ("bedroom", "hallway"),
                                states=("open", "closed"), materials=("wood", "metal")),
    "washer": ObjectClassSpec((0.6, 0.6), (0.6, 0.65), (0.85, 0.9), ("bathroom", "storage"),
                              states=("on", "off"), materials=("metal",), colors=_FIXTURE_COLORS),
}

OBJECT_ATTRIBUTES = ("class_name", "color", "material", "shape", "state", "room_id", "floor_index")
_FILTER_KEYS = OBJECT_ATTRIBUTES + ("room_category",)


class SceneGenerationError(RuntimeError):
    """Raised when a valid scene cannot be produced after bounded retries."""


class OutOfFootprintError(ValueError):
    """Raised when a world point lies outside the queried floor footprint."""


@dataclass(frozen=True)
class DoorEdge:
    """Door opening on a wall segment, shared by the two rooms it connects."""

    axis: str  # "x": wall runs along x at fixed y; "y": wall runs along y at fixed x
    position: float  # the fixed coordinate of the wall line
    lo: float
    hi: float  # span of the opening along the running axis
    connects: tuple[str, str]


@dataclass
class Room:
    room_id: str
    category: str
    rect: Rect
    door_edges: list[DoorEdge] = field(default_factory=list)


@dataclass
class SceneObject:
    object_id: str
    class_name: str
    room_id: str
    aabb: AABB
    color: str
    material: str
    shape: str
    state: str
    floor_index: int


@dataclass
class Floor:
    index: int
    footprint: Rect
    elevation_z: float
    rooms: list[Room]
    objects: list[SceneObject]


@dataclass
class Scene:
    scene_id: str
    seed: int
    floors: list[Floor]
    total_area: float
    floor_height: float = FLOOR_HEIGHT
    stairwell_ids: list[str] = field(default_factory=list)

    def floor(self, index: int) -> Floor:
        if not 0 <= index < len(self.floors):
            raise IndexError(f"floor {index} out of range (scene has {len(self.floors)})")
        return self.floors[index]

    def iter_objects(self) -> Iterator[SceneObject]:
        for fl in self.floors:
            yield from fl.objects

    def room_by_id(self, room_id: str) -> tuple[Floor, Room]:
        for fl in self.floors:
            for room in fl.rooms:
                if room.room_id == room_id:
                    return fl, room
        raise KeyError(room_id)

    def to_json(self) -> str:
        return canonical_json(_scene_to_dict(self)) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path


@dataclass(frozen=True)
class GeneratorProfile:
    """Distributional knobs for the procedural generator.

    The defaults target house-scale statistics: up to three floors, a
    10-20 room total and more than 300 m^2 of combined floor area.
    """

    floor_count_range: tuple[int, int] = (1, 3)
    floor_count_weights: tuple[float, ...] = (0.25, 0.40, 0.35)
    rooms_per_floor_range: tuple[int, int] = (2, 20)
    total_rooms_range: tuple[int, int] = (10, 20)
    objects_per_room_range: tuple[int, int] = (2, 5)
    footprint_size_range: tuple[float, float] = (9.0, 26.0)
    total_area_range: tuple[float, float] = (340.0, 520.0)
    min_room_dim: float = 2.2
    wall_thickness: float = 0.10
    door_width: float = 0.9
    extra_door_prob: float = 0.25
    room_category_weights: tuple[tuple[str, float], ...] = (
        ("bedroom", 3.0), ("bathroom", 1.6), ("kitchen", 1.2), ("living", 1.6),
        ("hallway", 1.2), ("office", 1.0), ("storage", 0.8),
    )

    def validate(self) -> None:
        for name in ("floor_count_range", "rooms_per_floor_range", "total_rooms_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                raise ValueError(f"{name} is empty or invalid: ({lo}, {hi})")
        if self.objects_per_room_range[0] < 0 or self.objects_per_room_range[0] > self.objects_per_room_range[1]:
            raise ValueError("objects_per_room_range is empty")
        if self.footprint_size_range[0] <= 0 or self.footprint_size_range[0] > self.footprint_size_range[1]:
            raise ValueError("footprint_size_range is empty")
        if self.total_area_range[0] <= 0 or self.total_area_range[0] > self.total_area_range[1]:
            raise ValueError("total_area_range is empty")
        if len(self.floor_count_weights) != self.floor_count_range[1] - self.floor_count_range[0] + 1:
            raise ValueError("floor_count_weights must cover floor_count_range")
        if any(w <= 0 for w in self.floor_count_weights):
            raise ValueError("floor_count_weights must be positive")
        if any(w <= 0 for _, w in self.room_category_weights):
            raise ValueError("room_category_weights must be positive")
        if self.min_room_dim <= 2 * self.door_width:
            raise ValueError("min_room_dim too small for door placement")


DEFAULT_PROFILE = GeneratorProfile()


# ---------------------------------------------------------------------------
# generation


def _split_counts(rng: random.Random, total: int, n_floors: int, per_floor: tuple[int, int]) -> list[int]:
    """Distribute `total` rooms over floors, each count within `per_floor`."""
    lo, hi = per_floor
    if not lo * n_floors <= total <= hi * n_floors:
        raise SceneGenerationError(
            f"{total} rooms cannot be distributed over {n_floors} floors within {per_floor}")
    counts = [max(lo, total // n_floors)] * n_floors
    while sum(counts) < total:
        i = rng.randrange(n_floors)
        if counts[i] < hi:
            counts[i] += 1
    while sum(counts) > total:
        i = rng.randrange(n_floors)
        if counts[i] > lo:
            counts[i] -= 1
    return counts


def _partition_rect(rng: random.Random, rect: Rect, k: int, min_dim: float) -> list[Rect]:
    """Recursively split `rect` into exactly k rectangles, all dims >= min_dim."""
    if k == 1:
        if rect.width < min_dim or rect.height < min_dim:
            raise SceneGenerationError(f"room below minimum size: {rect}")
        return [rect]
    along_x = rect.width >= rect.height  # cut the longer side
    length = rect.width if along_x else rect.height
    other = rect.height if along_x else rect.width
    if length < 2 * min_dim:
        along_x = not along_x
        length, other = other, length
        if length < 2 * min_dim:
            raise SceneGenerationError(f"cannot split {rect} into {k} rooms")
    k1 = k // 2
    k2 = k - k1
    # each side needs min_dim of length plus enough area for its room count
    min_room_area = min_dim * min_dim * 1.1
    lo = max(min_dim, k1 * min_room_area / other)
    hi = length - max(min_dim, k2 * min_room_area / other)
    if lo > hi:
        raise SceneGenerationError(f"no feasible cut for {k} rooms in {rect}")
    cut = min(max(length * (k1 / k) * rng.uniform(0.8, 1.2), lo), hi)
    if along_x:
        a = Rect(rect.x0, rect.y0, rect.x0 + cut, rect.y1)
        b = Rect(rect.x0 + cut, rect.y0, rect.x1, rect.y1)
    else:
        a = Rect(rect.x0, rect.y0, rect.x1, rect.y0 + cut)
        b = Rect(rect.x0, rect.y0 + cut, rect.x1, rect.y1)
    return _partition_rect(rng, a, k1, min_dim) + _partition_rect(rng, b, k2, min_dim)


def _shared_span(a: Rect, b: Rect, tol: float = 1e-6) -> tuple[str, float, float, float] | None:
    """Shared wall segment between two tiled rects: (axis, position, lo, hi)."""
    if abs(a.x1 - b.x0) < tol or abs(b.x1 - a.x0) < tol:
        pos = a.x1 if abs(a.x1 - b.x0) < tol else a.x0
        lo = max(a.y0, b.y0)
        hi = min(a.y1, b.y1)
        if hi - lo > tol:
            return ("y", pos, lo, hi)
    if abs(a.y1 - b.y0) < tol or abs(b.y1 - a.y0) < tol:
        pos = a.y1 if abs(a.y1 - b.y0) < tol else a.y0
        lo = max(a.x0, b.x0)
        hi = min(a.x1, b.x1)
        if hi - lo > tol:
            return ("x", pos, lo, hi)
    return None


def _connect_rooms(rng: random.Random, rooms: list[Room], door_width: float, extra_prob: float) -> None:
    """Place doors on a random spanning tree of the room adjacency graph."""
    edges = []
    for i in range(len(rooms)):
        for j in range(i + 1, len(rooms)):
            span = _shared_span(rooms[i].rect, rooms[j].rect)
            if span is not None and span[3] - span[2] >= door_width + 0.2:
                edges.append((i, j, span))
    rng.shuffle(edges)
    parent = list(range(len(rooms)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    placed = 0
    for i, j, span in edges:
        ri, rj = find(i), find(j)
        tree_edge = ri != rj
        if tree_edge:
            parent[ri] = rj
            placed += 1
        elif rng.random() >= extra_prob:
            continue
        axis, pos, lo, hi = span
        slack = (hi - lo) - door_width
        start = lo + 0.1 + rng.uniform(0.0, max(0.0, slack - 0.2))
        door = DoorEdge(axis, pos, start, start + door_width,
                        (rooms[i].room_id, rooms[j].room_id))
        rooms[i].door_edges.append(door)
        rooms[j].door_edges.append(door)
    if placed != len(rooms) - 1:
        raise SceneGenerationError("room adjacency graph is not connected")


def _overlap_area(a: Rect, b: Rect) -> float:
    inter = a.intersect(b)
    return inter.area if inter else 0.0


def _assign_categories(rng: random.Random, floors: list[Floor], profile: GeneratorProfile) -> list[str]:
    """Pick a stairwell per floor (vertically aligned) and weighted categories elsewhere."""
    stairwell_ids: list[str] = []
    if len(floors) > 1:
        below: Room | None = None
        for fl in floors:
            if below is None:
                candidates = sorted(fl.rooms, key=lambda r: (-r.rect.area, r.room_id))
                stair = candidates[len(candidates) // 2]
            else:
                stair = max(fl.rooms, key=lambda r: (_overlap_area(r.rect, below.rect), r.room_id))
                if _overlap_area(stair.rect, below.rect) <= 0:
                    raise SceneGenerationError("stairwells cannot be vertically aligned")
            stair.category = "stairwell"
            stairwell_ids.append(stair.room_id)
            below = stair
    cats = [c for c, _ in profile.room_category_weights]
    weights = [w for _, w in profile.room_category_weights]
    for fl in floors:
        for room in fl.rooms:
            if room.category == "stairwell":
                continue
            room.category = rng.choices(cats, weights)[0]
    return stairwell_ids


def _place_objects(rng: random.Random, floor: Floor, profile: GeneratorProfile,
                   counter: list[int]) -> None:
    inset = 0.12
    gap = 0.02
    for room in floor.rooms:
        placed: list[Rect] = []
        if room.category == "stairwell":
            wanted_classes = ["staircase"]
        else:
            n = rng.randint(*profile.objects_per_room_range)
            pool = sorted(
                name for name, spec in OBJECT_CLASSES.items() if room.category in spec.rooms
            )
            if not pool:
                pool = sorted(OBJECT_CLASSES)
            wanted_classes = [rng.choice(pool) for _ in range(n)]
        for class_name in wanted_classes:
            spec = OBJECT_CLASSES[class_name]
            for _ in range(24):  # bounded placement retries per object
                w = rng.uniform(*spec.width)
                d = rng.uniform(*spec.depth)
                h = rng.uniform(*spec.height)
                if rng.random() < 0.5:
                    w, d = d, w
                usable = Rect(room.rect.x0 + inset, room.rect.y0 + inset,
                              room.rect.x1 - inset, room.rect.y1 - inset)
                if usable.width < w or usable.height < d:
                    continue
                x0 = rng.uniform(usable.x0, usable.x1 - w)
                y0 = rng.uniform(usable.y0, usable.y1 - d)
                candidate = Rect(x0, y0, x0 + w, y0 + d)
                grown = candidate.expanded(gap)
                if any(_overlap_area(grown, prev) > 0 for prev in placed):
                    continue
                placed.append(candidate)
                z0 = floor.elevation_z + spec.mounted_z
                obj = SceneObject(
                    object_id=f"obj{counter[0]:05d}-{class_name}",
                    class_name=class_name,
                    room_id=room.room_id,
                    aabb=AABB(x0, y0, z0, x0 + w, y0 + d, min(z0 + h, floor.elevation_z + FLOOR_HEIGHT)),
                    color=rng.choice(spec.colors),
                    material=rng.choice(spec.materials),
                    shape=rng.choice(spec.shapes),
                    state=rng.choice(spec.states),
                    floor_index=floor.index,
                )
                counter[0] += 1
                floor.objects.append(obj)
                break


def generate_scene(seed: int, profile: GeneratorProfile = DEFAULT_PROFILE) -> Scene:
    """Generate a deterministic scene satisfying all structural invariants.

    Raises SceneGenerationError when no valid scene is found within bounded
    retries; never returns a partial scene.
    """
    profile.validate()
    if not 0 <= seed < 2 ** 64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    last_error: Exception | None = None
    for attempt in range(8):
        rng = random.Random(f"scene:{seed}:{attempt}")
        try:
            return _generate_once(rng, seed, profile)
        except SceneGenerationError as exc:
            last_error = exc
    raise SceneGenerationError(f"scene generation failed for seed {seed}: {last_error}")


def _generate_once(rng: random.Random, seed: int, profile: GeneratorProfile) -> Scene:
    lo_f, hi_f = profile.floor_count_range
    n_floors = rng.choices(range(lo_f, hi_f + 1), profile.floor_count_weights)[0]
    total_area = rng.uniform(*profile.total_area_range)
    floor_area = total_area / n_floors
    aspect = rng.uniform(0.75, 1.35)
    width = (floor_area * aspect) ** 0.5
    depth = floor_area / width
    s_lo, s_hi = profile.footprint_size_range
    width = min(max(width, s_lo), s_hi)
    depth = min(max(floor_area / width, s_lo), s_hi)
    footprint = Rect(0.0, 0.0, round(width, 2), round(depth, 2))

    total_rooms = rng.randint(*profile.total_rooms_range)
    counts = _split_counts(rng, total_rooms, n_floors, profile.rooms_per_floor_range)

    floors: list[Floor] = []
    for fi in range(n_floors):
        rects = _partition_rect(rng, footprint, counts[fi], profile.min_room_dim)
        rects.sort(key=lambda r: (r.y0, r.x0))
        rooms = [
            Room(room_id=f"f{fi}r{ri:02d}", category="living", rect=Rect(
                round(r.x0, 3), round(r.y0, 3), round(r.x1, 3), round(r.y1, 3)))
            for ri, r in enumerate(rects)
        ]
        _connect_rooms(rng, rooms, profile.door_width, profile.extra_door_prob)
        floors.append(Floor(index=fi, footprint=footprint,
                            elevation_z=round(fi * FLOOR_HEIGHT, 4), rooms=rooms, objects=[]))

    stairwell_ids = _assign_categories(rng, floors, profile)
    counter = [0]
    for fl in floors:
        _place_objects(rng, fl, profile, counter)
        if any(r.category != "stairwell" for r in fl.rooms) and not fl.objects:
            raise SceneGenerationError(f"floor {fl.index} received no objects")

    scene = Scene(
        scene_id=f"scene-{seed:016x}",
        seed=seed,
        floors=floors,
        total_area=round(footprint.area * n_floors, 4),
        stairwell_ids=stairwell_ids,
    )
    return scene


# ---------------------------------------------------------------------------
# ground-truth queries


def query_objects(scene: Scene, filter: Mapping[str, object] | None = None) -> list[SceneObject]:
    """All objects matching an attribute predicate, in object_id order.

    The filter maps attribute names to required values; supported keys are the
    SceneObject attributes plus `room_category`. An empty/None filter returns
    every object.
    """
    filter = dict(filter or {})
    unknown = set(filter) - set(_FILTER_KEYS)
    if unknown:
        raise ValueError(f"unknown filter attributes: {sorted(unknown)}")
    room_cat = filter.pop("room_category", None)
    categories = None
    if room_cat is not None:
        categories = {
            room.room_id: room.category for fl in scene.floors for room in fl.rooms
        }
    out = []
    for obj in scene.iter_objects():
        if any(getattr(obj, key) != val for key, val in filter.items()):
            continue
        if categories is not None and categories[obj.room_id] != room_cat:
            continue
        out.append(obj)
    out.sort(key=lambda o: o.object_id)
    return out


def world_to_bev(scene: Scene, floor: int, p_world: tuple[float, float],
                 resolution: int = 512) -> tuple[float, float]:
    """Affine map from a floor footprint to BEV pixel coordinates.

    The footprint (min x, min y) corner maps to pixel (0, 0); (max x, max y)
    maps to (resolution, resolution).
    """
    fp = scene.floor(floor).footprint
    x, y = p_world
    if not fp.contains_point(x, y):
        raise OutOfFootprintError(f"{p_world} outside footprint of floor {floor}")
    return ((x - fp.x0) / fp.width * resolution, (y - fp.y0) / fp.height * resolution)


def bev_to_world(scene: Scene, floor: int, p_pixel: tuple[float, float],
                 resolution: int = 512) -> tuple[float, float]:
    """Inverse of world_to_bev on its range."""
    fp = scene.floor(floor).footprint
    px, py = p_pixel
    return (fp.x0 + px / resolution * fp.width, fp.y0 + py / resolution * fp.height)


# ---------------------------------------------------------------------------
# canonical serialization


def _fmt_float(x: float) -> str:
    s = f"{x:.4f}"
    return "0.0000" if s == "-0.0000" else s


def canonical_json(value: object) -> str:
    """JSON with sorted keys and floats fixed to 4 decimals, for byte-identity."""
    if isinstance(value, dict):
        items = ",".join(
            f"{json.dumps(str(k))}:{canonical_json(v)}" for k, v in sorted(value.items())
        )
        return "{" + items + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(canonical_json(v) for v in value) + "]"
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, float):
        return _fmt_float(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=True)
    raise TypeError(f"cannot canonicalize {type(value)!r}")


def _rect_to_list(r: Rect) -> list[float]:
    return [r.x0, r.y0, r.x1, r.y1]


def _scene_to_dict(scene: Scene) -> dict:
    return {
        "format": "scene.v1",
        "scene_id": scene.scene_id,
        "seed": scene.seed,
        "floor_height": scene.floor_height,
        "total_area": scene.total_area,
        "stairwell_ids": list(scene.stairwell_ids),
        "floors": [
            {
                "index": fl.index,
                "footprint": _rect_to_list(fl.footprint),
                "elevation_z": fl.elevation_z,
                "rooms": [
                    {
                        "room_id": room.room_id,
                        "category": room.category,
                        "rect": _rect_to_list(room.rect),
                        "door_edges": [
                            {
                                "axis": d.axis,
                                "position": d.position,
                                "lo": d.lo,
                                "hi": d.hi,
                                "connects": list(d.connects),
                            }
                            for d in room.door_edges
                        ],
                    }
                    for room in fl.rooms
                ],
                "objects": [
                    {
                        "object_id": o.object_id,
                        "class_name": o.class_name,
                        "room_id": o.room_id,
                        "aabb": list(o.aabb.as_tuple()),
                        "color": o.color,
                        "material": o.material,
                        "shape": o.shape,
                        "state": o.state,
                        "floor_index": o.floor_index,
                    }
                    for o in fl.objects
                ],
            }
            for fl in scene.floors
        ],
    }


def scene_from_dict(doc: Mapping) -> Scene:
    floors = []
    for fd in doc["floors"]:
        rooms = [
            Room(
                room_id=rd["room_id"],
                category=rd["category"],
                rect=Rect(*rd["rect"]),
                door_edges=[
                    DoorEdge(d["axis"], d["position"], d["lo"], d["hi"], tuple(d["connects"]))
                    for d in rd["door_edges"]
                ],
            )
            for rd in fd["rooms"]
        ]
        objects = [
            SceneObject(
                object_id=od["object_id"],
                class_name=od["class_name"],
                room_id=od["room_id"],
                aabb=AABB(*od["aabb"]),
                color=od["color"],
                material=od["material"],
                shape=od["shape"],
                state=od["state"],
                floor_index=od["floor_index"],
            )
            for od in fd["objects"]
        ]
        floors.append(Floor(index=fd["index"], footprint=Rect(*fd["footprint"]),
                            elevation_z=fd["elevation_z"], rooms=rooms, objects=objects))
    return Scene(
        scene_id=doc["scene_id"],
        seed=doc["seed"],
        floors=floors,
        total_area=doc["total_area"],
        floor_height=doc.get("floor_height", FLOOR_HEIGHT),
        stairwell_ids=list(doc.get("stairwell_ids", [])),
    )


def load_scene(path: str | Path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))
