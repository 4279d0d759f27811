from __future__ import annotations

from collections import Counter
from dataclasses import replace

import pytest

from spatial_arena.geometry import BBox2D
from spatial_arena.qa import (
    DEFAULT_TYPE_DISTRIBUTION,
    QAGenerationError,
    QAItem,
    QTYPES,
    derive_answer,
    generate_qa,
    load_qa_items,
    match_answer,
    plural,
    quality_filter,
    save_qa_items,
    set_stats,
)
from spatial_arena.render import CameraPose, count_visible_pixels, normalize_yaw
from spatial_arena.scene import generate_scene, query_objects


class TestGeneration:
    def test_deterministic(self, scene7):
        a = generate_qa(scene7, 25, seed=5)
        b = generate_qa(scene7, 25, seed=5)
        assert [i.to_dict() for i in a] == [i.to_dict() for i in b]

    def test_answers_match_ground_truth_oracle(self, scene7):
        for item in generate_qa(scene7, 50, seed=9):
            assert derive_answer(scene7, item) == item.answer

    def test_counting_answer_equals_full_scan(self, scene7):
        items = [i for i in generate_qa(scene7, 80, seed=10) if i.qtype == "counting"]
        assert items, "no counting questions generated"
        for item in items:
            count = len(query_objects(scene7, item.oracle_filter))
            assert str(count) == item.answer
            assert count == len(item.target_object_ids)

    def test_gt_bbox_contains_target_footprints(self, scene7):
        for item in generate_qa(scene7, 40, seed=12):
            fp = scene7.floor(item.gt_floor).footprint
            sx = item.bev_resolution / fp.width
            sy = item.bev_resolution / fp.height
            targets = {t.object_id: t for t in scene7.iter_objects()
                       if t.object_id in item.target_object_ids}
            assert len(targets) == len(item.target_object_ids)
            for obj in targets.values():
                r = obj.aabb.footprint
                assert item.gt_bbox.x_min <= (r.x0 - fp.x0) * sx + 1e-6
                assert item.gt_bbox.y_min <= (r.y0 - fp.y0) * sy + 1e-6
                assert (r.x1 - fp.x0) * sx <= item.gt_bbox.x_max + 1e-6
                assert (r.y1 - fp.y0) * sy <= item.gt_bbox.y_max + 1e-6

    def test_gt_pose_sees_targets_in_full_scene(self, scene7):
        # the generator validates visibility against same-room boxes; confirm
        # the full floor box set agrees (room rects are convex)
        for item in generate_qa(scene7, 12, seed=13):
            for oid in item.target_object_ids:
                assert count_visible_pixels(scene7, item.gt_pose, oid, 256) >= 50

    def test_distribution_tracks_targets(self):
        counts: Counter[str] = Counter()
        total = 0
        for seed in range(4):
            scene = generate_scene(100 + seed)
            items = generate_qa(scene, 250, seed=seed)
            counts.update(i.qtype for i in items)
            total += len(items)
        for qtype, want in DEFAULT_TYPE_DISTRIBUTION.items():
            got = counts[qtype] / total
            assert abs(got - want) < 0.05, (qtype, got, want)

    def test_custom_distribution(self, scene7):
        dist = {q: (1.0 if q == "color" else 0.0) for q in QTYPES}
        items = generate_qa(scene7, 30, seed=3, type_distribution=dist)
        assert all(i.qtype == "color" for i in items)

    def test_empty_scene_rejected(self, scene7):
        from spatial_arena.scene import Floor, Scene
        from spatial_arena.geometry import Rect

        empty = Scene("t-empty", 0, [Floor(0, Rect(0, 0, 10, 10), 0.0, [], [])], 100.0)
        with pytest.raises(QAGenerationError):
            generate_qa(empty, 1, seed=0)

    def test_question_text_never_leaks_answer(self, scene7):
        for item in generate_qa(scene7, 60, seed=21):
            if item.qtype in ("color", "material", "shape"):
                assert item.answer not in item.question.lower()


class TestMatching:
    def make_item(self, qtype, answer):
        return QAItem(qa_id="q", scene_id="s", question="?", qtype=qtype,
                      answer=answer, gt_floor=0,
                      gt_bbox=BBox2D(0, 0, 10, 10),
                      gt_pose=CameraPose(x=1, y=1, z=1.5, yaw=0.0, pitch=0.0),
                      target_object_ids=["obj00000-box"])

    def test_case_and_whitespace_insensitive(self):
        assert match_answer(" Red ", self.make_item("color", "red"))

    def test_counting_accepts_spelled_numbers(self):
        item = self.make_item("counting", "3")
        assert match_answer("three", item)
        assert match_answer(" 3 ", item)
        assert not match_answer("four", item)

    def test_no_synonym_expansion(self):
        assert not match_answer("crimson", self.make_item("color", "red"))

    def test_position_requires_canonical_phrase(self):
        item = self.make_item("position", "in the kitchen on floor 0")
        assert match_answer("In the Kitchen on Floor 0", item)
        assert not match_answer("kitchen", item)

    def test_plural_forms(self):
        assert plural("chair") == "chairs"
        assert plural("bookshelf") == "bookshelves"
        assert plural("couch") == "couches"


class TestQualityFilter:
    def test_consistent_items_retained(self, scene7):
        items = generate_qa(scene7, 30, seed=14)
        kept, rejections = quality_filter(scene7, items)
        assert len(kept) == len(items)
        assert rejections == {}

    def test_replay_mismatch_rejected(self, scene7):
        items = generate_qa(scene7, 5, seed=15)
        corrupted = replace(items[0], answer="definitely-wrong")
        kept, rejections = quality_filter(scene7, [corrupted] + items[1:])
        assert rejections.get("replay_mismatch") == 1
        assert len(kept) == len(items) - 1

    def test_external_replay_answers_used(self, scene7):
        items = generate_qa(scene7, 3, seed=16)
        replayed = {items[0].qa_id: "nonsense"}
        _, rejections = quality_filter(scene7, items[:1], replayed_answers=replayed)
        assert rejections.get("replay_mismatch") == 1

    def test_ambiguous_question_rejected(self, scene7):
        items = generate_qa(scene7, 30, seed=17)
        # broaden a singular filter until it matches several objects
        victim = None
        for item in items:
            if item.qtype in ("color", "material", "shape", "position"):
                widened = {"class_name": item.oracle_filter["class_name"]}
                if len(query_objects(scene7, widened)) > 1:
                    victim = replace(item, oracle_filter=widened)
                    break
        assert victim is not None, "fixture scene lacks a repeatable class"
        _, rejections = quality_filter(scene7, [victim])
        assert rejections.get("ambiguous") == 1

    def test_invisible_pose_rejected(self, scene7):
        items = generate_qa(scene7, 5, seed=18)
        item = items[0]
        away = normalize_yaw(item.gt_pose.yaw + 180.0)
        blind = replace(item, gt_pose=CameraPose(
            x=item.gt_pose.x, y=item.gt_pose.y, z=item.gt_pose.z,
            yaw=away, pitch=item.gt_pose.pitch))
        _, rejections = quality_filter(scene7, [blind])
        assert rejections.get("visibility") == 1


class TestStatsAndIO:
    def test_fractions_sum_to_one(self, qa_items):
        stats = set_stats(qa_items)
        assert sum(stats.fractions().values()) == pytest.approx(1.0)
        assert stats.total == len(qa_items)

    def test_jsonl_roundtrip(self, qa_items, tmp_path):
        path = tmp_path / "items.jsonl"
        save_qa_items(path, qa_items)
        loaded = load_qa_items(path)
        assert [i.to_dict() for i in loaded] == [i.to_dict() for i in qa_items]

    def test_goal_target_normalization(self, qa_items):
        goal = qa_items[0].goal_target()
        assert 0.0 <= goal.center[0] <= 1.0
        assert 0.0 <= goal.center[1] <= 1.0
        assert goal.floor == qa_items[0].gt_floor
