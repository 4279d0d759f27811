"""Question-answer synthesis over generated scenes, with matching and filtering.

Items are produced coarse-to-fine: pick a target, carve a zoom region around
it on the BEV, sample a camera pose inside that region with the target
clearly visible, then instantiate a question template whose answer is read
straight from scene ground truth. Answers are canonical enum strings so
evaluation is an exact-match problem.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .geometry import BBox2D, Rect
from .render import CameraPose, SceneBox, floor_boxes, normalize_yaw, visible_pixel_counts
from .rewards import GoalTarget
from .scene import Scene, SceneObject, query_objects

QTYPES = ("position", "color", "material", "counting", "shape", "state")

# question-type sampling weights for generated sets
DEFAULT_TYPE_DISTRIBUTION: Mapping[str, float] = {
    "position": 0.355,
    "color": 0.316,
    "material": 0.156,
    "counting": 0.133,
    "shape": 0.03,
    "state": 0.03,
}

ROOM_DISPLAY = {
    "bedroom": "bedroom",
    "kitchen": "kitchen",
    "bathroom": "bathroom",
    "living": "living room",
    "hallway": "hallway",
    "stairwell": "stairwell",
    "office": "office",
    "storage": "storage room",
}

_PLURALS = {
    "bench": "benches",
    "bookshelf": "bookshelves",
    "box": "boxes",
    "couch": "couches",
    "shelf": "shelves",
}

_NUMBER_WORDS = (
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight",
    "nine", "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen",
    "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
)

MIN_VISIBLE_PIXELS = 50
VISIBILITY_RESOLUTION = 256


class QAGenerationError(RuntimeError):
    """No valid question could be synthesized within bounded retries."""


def plural(class_name: str) -> str:
    return _PLURALS.get(class_name, class_name + "s")


def floor_phrase(index: int) -> str:
    return f"floor {index}"


@dataclass
class QAItem:
    qa_id: str
    scene_id: str
    question: str
    qtype: str
    answer: str
    gt_floor: int
    gt_bbox: BBox2D  # BEV pixel coordinates at bev_resolution
    gt_pose: CameraPose
    target_object_ids: list[str]
    oracle_filter: dict = field(default_factory=dict)
    bev_resolution: int = 512

    def goal_target(self) -> GoalTarget:
        cx, cy = self.gt_bbox.center
        r = float(self.bev_resolution)
        return GoalTarget(
            floor=self.gt_floor,
            center=(cx / r, cy / r),
            yaw=self.gt_pose.yaw,
            pitch=self.gt_pose.pitch,
        )

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "scene_id": self.scene_id,
            "question": self.question,
            "qtype": self.qtype,
            "answer": self.answer,
            "gt_floor": self.gt_floor,
            "gt_bbox": self.gt_bbox.as_list(),
            "gt_pose": {
                "pos": [self.gt_pose.x, self.gt_pose.y, self.gt_pose.z],
                "theta": [self.gt_pose.yaw, self.gt_pose.pitch, self.gt_pose.roll],
                "fov": self.gt_pose.fov,
            },
            "target_object_ids": list(self.target_object_ids),
            "oracle_filter": dict(self.oracle_filter),
            "bev_resolution": self.bev_resolution,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "QAItem":
        pose = doc["gt_pose"]
        return cls(
            qa_id=doc["qa_id"],
            scene_id=doc["scene_id"],
            question=doc["question"],
            qtype=doc["qtype"],
            answer=doc["answer"],
            gt_floor=doc["gt_floor"],
            gt_bbox=BBox2D(*doc["gt_bbox"]),
            gt_pose=CameraPose(
                x=pose["pos"][0], y=pose["pos"][1], z=pose["pos"][2],
                yaw=pose["theta"][0], pitch=pose["theta"][1], roll=pose["theta"][2],
                fov=pose.get("fov", 90.0),
            ),
            target_object_ids=list(doc["target_object_ids"]),
            oracle_filter=dict(doc.get("oracle_filter", {})),
            bev_resolution=doc.get("bev_resolution", 512),
        )


@dataclass
class QASetStats:
    total: int
    counts_by_type: dict[str, int]
    scene_coverage: int
    rejections: dict[str, int]

    def fractions(self) -> dict[str, float]:
        if self.total == 0:
            return {q: 0.0 for q in QTYPES}
        return {q: self.counts_by_type.get(q, 0) / self.total for q in QTYPES}

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "counts_by_type": dict(self.counts_by_type),
            "fractions_by_type": self.fractions(),
            "scene_coverage": self.scene_coverage,
            "rejections": dict(self.rejections),
        }


# ---------------------------------------------------------------------------
# question templates


_COLOR_TEMPLATES = (
    "What color is {desc}?",
    "What is the color of {desc}?",
    "Which color does {desc} have?",
    "Looking closely, what color is {desc}?",
    "Identify the color of {desc}.",
    "{Desc} is what color?",
)
_MATERIAL_TEMPLATES = (
    "What material is {desc} made of?",
    "What is {desc} made from?",
    "Which material was used for {desc}?",
    "What is the material of {desc}?",
    "Identify the material of {desc}.",
    "{Desc} is made of what material?",
)
_SHAPE_TEMPLATES = (
    "What shape is {desc}?",
    "What is the shape of {desc}?",
    "Which shape best describes {desc}?",
    "Describe the shape of {desc}.",
    "{Desc} has what shape?",
    "How is {desc} shaped?",
)
_STATE_TEMPLATES = (
    "What is the state of {desc}?",
    "Is {desc} {state_a} or {state_b}?",
    "In what state is {desc}?",
    "Check {desc}: what state is it in?",
    "What state is {desc} currently in?",
    "{Desc} is in which state?",
)
_COUNTING_TEMPLATES = (
    "How many {plural} are there {scope}?",
    "Count the {plural} {scope}.",
    "What is the number of {plural} {scope}?",
    "How many {plural} can be found {scope}?",
    "Give the count of {plural} {scope}.",
    "{Scope}, how many {plural} are there?",
)
_POSITION_TEMPLATES = (
    "Where is {desc}?",
    "Where is {desc} located?",
    "In which room is {desc}?",
    "What is the location of {desc}?",
    "Which room contains {desc}?",
    "Where can {desc} be found?",
)

_STATE_PAIRS = {
    "open": ("open", "closed"), "closed": ("open", "closed"),
    "on": ("on", "off"), "off": ("on", "off"),
    "folded": ("folded", "unfolded"), "unfolded": ("folded", "unfolded"),
}


def _room_category(scene: Scene, room_id: str) -> str:
    _, room = scene.room_by_id(room_id)
    return room.category


def _descriptor(scene: Scene, obj: SceneObject, allowed: Sequence[str],
                rng: random.Random) -> tuple[str, dict] | None:
    """Shortest object descriptor that matches exactly one object.

    `allowed` lists which qualifying attributes may appear in the phrase;
    the asked-about attribute is never among them, so a question cannot leak
    its own answer. Returns (phrase, oracle filter) or None.
    """
    quals: list[tuple[str, dict]] = []
    for attr in ("color", "material", "shape"):
        if attr in allowed:
            value = getattr(obj, attr)
            quals.append((value, {attr: value}))
    base = {"class_name": obj.class_name}
    floor_tail = f" on {floor_phrase(obj.floor_index)}"
    floor_extra = {"floor_index": obj.floor_index}
    candidates: list[tuple[str, dict]] = [(f"the {obj.class_name}", dict(base))]
    candidates += [(f"the {adj} {obj.class_name}", dict(base, **extra))
                   for adj, extra in quals]
    candidates.append((f"the {obj.class_name}{floor_tail}", dict(base, **floor_extra)))
    candidates += [(f"the {adj} {obj.class_name}{floor_tail}",
                    dict(base, **extra, **floor_extra)) for adj, extra in quals]
    if "room" in allowed:
        room_cat = _room_category(scene, obj.room_id)
        room_unique_on_floor = (
            len({r.room_id for r in scene.floor(obj.floor_index).rooms
                 if r.category == room_cat}) == 1
        )
        if room_unique_on_floor:
            room_tail = f" in the {ROOM_DISPLAY[room_cat]}{floor_tail}"
            room_extra = dict(floor_extra, room_category=room_cat)
            candidates.append((f"the {obj.class_name}{room_tail}", dict(base, **room_extra)))
            candidates += [(f"the {adj} {obj.class_name}{room_tail}",
                            dict(base, **extra, **room_extra)) for adj, extra in quals]
    rng.shuffle(candidates)
    candidates.sort(key=lambda c: len(c[1]))  # prefer shorter descriptors
    for phrase, flt in candidates:
        matches = query_objects(scene, flt)
        if len(matches) == 1 and matches[0].object_id == obj.object_id:
            return phrase, flt
    return None


def _fill(template: str, **slots: str) -> str:
    mapping = dict(slots)
    for key, val in list(slots.items()):
        mapping[key.capitalize()] = val[0].upper() + val[1:]
    return template.format(**mapping)


# ---------------------------------------------------------------------------
# region and pose sampling


def _region_for_targets(scene: Scene, targets: Sequence[SceneObject],
                        rng: random.Random, bev_resolution: int) -> tuple[BBox2D, Rect]:
    """Zoom region covering all target footprints, in BEV pixels and world."""
    fl = scene.floor(targets[0].floor_index)
    fp = fl.footprint
    x0 = min(t.aabb.x0 for t in targets)
    y0 = min(t.aabb.y0 for t in targets)
    x1 = max(t.aabb.x1 for t in targets)
    y1 = max(t.aabb.y1 for t in targets)
    margin = rng.uniform(1.0, 2.5)
    world = Rect(
        max(fp.x0, x0 - margin), max(fp.y0, y0 - margin),
        min(fp.x1, x1 + margin), min(fp.y1, y1 + margin),
    )
    sx = bev_resolution / fp.width
    sy = bev_resolution / fp.height
    bbox = BBox2D(
        round((world.x0 - fp.x0) * sx, 1),
        round((world.y0 - fp.y0) * sy, 1),
        round((world.x1 - fp.x0) * sx, 1),
        round((world.y1 - fp.y0) * sy, 1),
    )
    return bbox, world


def _room_visibility_boxes(scene: Scene, floor_index: int, room_id: str) -> list[SceneBox]:
    """Objects of one room; room rects are convex, so nothing else can occlude."""
    return [b for b in floor_boxes(scene, floor_index)
            if b.object_id is not None
            and any(o.object_id == b.object_id
                    for o in scene.floor(floor_index).objects if o.room_id == room_id)]


def _sample_pose(scene: Scene, targets: Sequence[SceneObject], region_world: Rect,
                 rng: random.Random) -> CameraPose | None:
    """Standing pose inside the region seeing every target well enough."""
    primary = targets[0]
    fl = scene.floor(primary.floor_index)
    _, room = scene.room_by_id(primary.room_id)
    stand = room.rect.expanded(-0.3)
    area = stand.intersect(region_world) or stand
    eye_z = fl.elevation_z + 1.5
    room_boxes = _room_visibility_boxes(scene, primary.floor_index, primary.room_id)
    for _ in range(24):
        x = rng.uniform(area.x0, area.x1)
        y = rng.uniform(area.y0, area.y1)
        # keep the camera out of furniture
        if any(b.aabb.footprint.expanded(0.1).contains_point(x, y) for b in room_boxes):
            continue
        cx = sum(0.5 * (t.aabb.x0 + t.aabb.x1) for t in targets) / len(targets)
        cy = sum(0.5 * (t.aabb.y0 + t.aabb.y1) for t in targets) / len(targets)
        cz = sum(0.5 * (t.aabb.z0 + t.aabb.z1) for t in targets) / len(targets)
        dx, dy, dz = cx - x, cy - y, cz - eye_z
        horiz = max(1e-6, (dx * dx + dy * dy) ** 0.5)
        if horiz < 0.6:  # too close to aim reliably
            continue
        yaw = normalize_yaw(math.degrees(math.atan2(dy, dx)))
        pitch = max(-89.0, min(89.0, math.degrees(math.atan2(dz, horiz))))
        pose = CameraPose(x=x, y=y, z=eye_z, yaw=yaw, pitch=pitch)
        counts = visible_pixel_counts(
            scene, pose, [t.object_id for t in targets], VISIBILITY_RESOLUTION,
            boxes=room_boxes)
        if all(c >= MIN_VISIBLE_PIXELS for c in counts.values()):
            return pose
    return None


# ---------------------------------------------------------------------------
# generation


def _make_attribute_item(scene: Scene, qtype: str, rng: random.Random) -> tuple | None:
    pool = [o for o in scene.iter_objects() if qtype != "state" or o.state != "none"]
    if not pool:
        return None
    obj = rng.choice(pool)
    if qtype == "position":
        # the room is the answer, so it may not appear in the descriptor
        allowed = ["color", "material", "shape"]
    else:
        allowed = [a for a in ("color", "material", "shape") if a != qtype] + ["room"]
    desc = _descriptor(scene, obj, allowed, rng)
    if desc is None:
        return None
    phrase, flt = desc
    if qtype == "color":
        question = _fill(rng.choice(_COLOR_TEMPLATES), desc=phrase)
        answer = obj.color
    elif qtype == "material":
        question = _fill(rng.choice(_MATERIAL_TEMPLATES), desc=phrase)
        answer = obj.material
    elif qtype == "shape":
        question = _fill(rng.choice(_SHAPE_TEMPLATES), desc=phrase)
        answer = obj.shape
    elif qtype == "state":
        a, b = _STATE_PAIRS[obj.state]
        question = _fill(rng.choice(_STATE_TEMPLATES), desc=phrase, state_a=a, state_b=b)
        answer = obj.state
    elif qtype == "position":
        room_cat = _room_category(scene, obj.room_id)
        question = _fill(rng.choice(_POSITION_TEMPLATES), desc=phrase)
        answer = f"in the {ROOM_DISPLAY[room_cat]} on {floor_phrase(obj.floor_index)}"
    else:
        raise ValueError(qtype)
    return [obj], question, answer, flt


def _make_counting_item(scene: Scene, rng: random.Random) -> tuple | None:
    # targets must share one room so a single pose can see every instance
    obj = rng.choice(list(scene.iter_objects()))
    room_cat = _room_category(scene, obj.room_id)
    if room_cat == "stairwell":
        return None
    room_unique = len({r.room_id for r in scene.floor(obj.floor_index).rooms
                       if r.category == room_cat}) == 1
    if room_unique:
        flt = {
            "class_name": obj.class_name,
            "room_category": room_cat,
            "floor_index": obj.floor_index,
        }
        scope = f"in the {ROOM_DISPLAY[room_cat]} on {floor_phrase(obj.floor_index)}"
    else:
        # the room is not nameable unambiguously; count floor-wide instead
        flt = {"class_name": obj.class_name, "floor_index": obj.floor_index}
        scope = f"on {floor_phrase(obj.floor_index)}"
    targets = query_objects(scene, flt)
    if not 1 <= len(targets) <= 4 or any(t.room_id != obj.room_id for t in targets):
        return None
    question = _fill(rng.choice(_COUNTING_TEMPLATES), plural=plural(obj.class_name), scope=scope)
    return targets, question, str(len(targets)), flt


def generate_qa(
    scene: Scene,
    n: int,
    seed: int,
    type_distribution: Mapping[str, float] | None = None,
    bev_resolution: int = 512,
) -> list[QAItem]:
    """Synthesize n QA items for one scene, deterministic in (scene, seed, n)."""
    if n < 1:
        raise ValueError("need n >= 1")
    if not any(True for _ in scene.iter_objects()):
        raise QAGenerationError(f"scene {scene.scene_id} has no objects")
    dist = dict(type_distribution or DEFAULT_TYPE_DISTRIBUTION)
    if sorted(dist) != sorted(QTYPES) or any(w < 0 for w in dist.values()):
        raise ValueError("type distribution must cover exactly the six question types")
    rng = random.Random(f"qa:{scene.scene_id}:{seed}")
    items: list[QAItem] = []
    for i in range(n):
        qtype = rng.choices(QTYPES, [dist[q] for q in QTYPES])[0]
        made = None
        for attempt in range(60):
            if attempt in (20, 40):  # a stubborn type gets re-rolled late in the retries
                qtype = rng.choices(QTYPES, [dist[q] for q in QTYPES])[0]
            if qtype == "counting":
                made = _make_counting_item(scene, rng)
            else:
                made = _make_attribute_item(scene, qtype, rng)
            if made is None:
                continue
            targets, question, answer, flt = made
            bbox, world = _region_for_targets(scene, targets, rng, bev_resolution)
            pose = _sample_pose(scene, targets, world, rng)
            if pose is None:
                made = None
                continue
            items.append(QAItem(
                qa_id=f"{scene.scene_id}-qa{i:05d}",
                scene_id=scene.scene_id,
                question=question,
                qtype=qtype,
                answer=answer,
                gt_floor=targets[0].floor_index,
                gt_bbox=bbox,
                gt_pose=pose,
                target_object_ids=[t.object_id for t in targets],
                oracle_filter=flt,
                bev_resolution=bev_resolution,
            ))
            break
        if made is None:
            raise QAGenerationError(
                f"could not synthesize a {qtype} question for {scene.scene_id}")
    return items


# ---------------------------------------------------------------------------
# answer matching


def _normalize(text: str) -> str:
    return " ".join(text.strip().lower().split())


def _as_count(text: str) -> int | None:
    text = _normalize(text)
    if text.isdigit():
        return int(text)
    if text in _NUMBER_WORDS:
        return _NUMBER_WORDS.index(text)
    return None


def match_answer(predicted: str, qa: QAItem) -> bool:
    """Exact match on canonical strings; counting also accepts spelled numbers."""
    if qa.qtype == "counting":
        want = _as_count(qa.answer)
        got = _as_count(predicted)
        return want is not None and got == want
    return _normalize(predicted) == _normalize(qa.answer)


# ---------------------------------------------------------------------------
# quality control


def derive_answer(scene: Scene, item: QAItem) -> str | None:
    """Re-derive the answer from ground truth via the item's oracle filter."""
    matches = query_objects(scene, item.oracle_filter)
    if item.qtype == "counting":
        return str(len(matches))
    if len(matches) != 1:
        return None
    obj = matches[0]
    if item.qtype == "color":
        return obj.color
    if item.qtype == "material":
        return obj.material
    if item.qtype == "shape":
        return obj.shape
    if item.qtype == "state":
        return obj.state
    if item.qtype == "position":
        cat = _room_category(scene, obj.room_id)
        return f"in the {ROOM_DISPLAY[cat]} on {floor_phrase(obj.floor_index)}"
    raise ValueError(item.qtype)


def quality_filter(
    scene: Scene,
    items: Sequence[QAItem],
    replayed_answers: Mapping[str, str] | None = None,
) -> tuple[list[QAItem], dict[str, int]]:
    """Drop inconsistent, ambiguous, or poorly visible items.

    `replayed_answers` maps qa_id to the answer produced by replaying the
    item's generation trajectory; when omitted, the answer is re-derived from
    scene ground truth, which is what such a replay reads out.
    """
    kept: list[QAItem] = []
    rejections: Counter[str] = Counter()
    for item in items:
        replayed = (replayed_answers or {}).get(item.qa_id)
        if replayed is None:
            replayed = derive_answer(scene, item)
        if item.qtype != "counting" and len(query_objects(scene, item.oracle_filter)) != 1:
            rejections["ambiguous"] += 1
            continue
        if replayed is None or not match_answer(replayed, item):
            rejections["replay_mismatch"] += 1
            continue
        boxes = _room_visibility_boxes(scene, item.gt_floor,
                                       _primary_room(scene, item))
        counts = visible_pixel_counts(scene, item.gt_pose, item.target_object_ids,
                                      VISIBILITY_RESOLUTION, boxes=boxes)
        if any(c < MIN_VISIBLE_PIXELS for c in counts.values()):
            rejections["visibility"] += 1
            continue
        kept.append(item)
    return kept, dict(rejections)


def _primary_room(scene: Scene, item: QAItem) -> str:
    for obj in scene.iter_objects():
        if obj.object_id == item.target_object_ids[0]:
            return obj.room_id
    raise KeyError(item.target_object_ids[0])


def set_stats(items: Sequence[QAItem], rejections: Mapping[str, int] | None = None) -> QASetStats:
    counts = Counter(item.qtype for item in items)
    return QASetStats(
        total=len(items),
        counts_by_type=dict(counts),
        scene_coverage=len({item.scene_id for item in items}),
        rejections=dict(rejections or {}),
    )


# ---------------------------------------------------------------------------
# JSONL persistence


def save_qa_items(path: str | Path, items: Iterable[QAItem]) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for item in items:
            fh.write(json.dumps(item.to_dict(), sort_keys=True) + "\n")
    return path


def load_qa_items(path: str | Path) -> list[QAItem]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(QAItem.from_dict(json.loads(line)))
    return out
