from __future__ import annotations

import math
import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatial_arena.geometry import BBox2D
from spatial_arena.rewards import (
    DEFAULT_REWARD_CONFIG as CFG,
    GoalTarget,
    RewardConfig,
    TrajectoryFeatures,
    ViewPoint,
    ZoomRegion,
    angle_goal_reward,
    bbox_goal_reward,
    count_unique_regions,
    explore_reward,
    extract_features,
    goal_reward,
    group_advantages,
    group_rewards,
    grpo_objective,
    repetition_penalty,
    self_check,
    total_reward,
)


def random_config(rng: random.Random) -> RewardConfig:
    tau_low = rng.uniform(0.05, 0.6)
    tau_high = rng.uniform(tau_low + 0.05, 0.95)
    return replace(
        CFG,
        tau_low=tau_low,
        tau_high=tau_high,
        n_max=rng.randint(1, 10),
        alpha_explore=rng.uniform(0.01, 0.5),
        gamma_penalty=-rng.uniform(0.01, 0.5),
        n_penalty=rng.randint(0, 8),
        sigma=rng.uniform(0.05, 0.5),
        theta_threshold=rng.uniform(30, 150),
        alpha_rep=rng.uniform(0.0, 0.5),
    )


class TestExploreReward:
    def test_low_phase_worked_example(self):
        assert explore_reward(0.1, 3, CFG) == pytest.approx(0.3, abs=1e-12)

    def test_high_phase_worked_example(self):
        assert explore_reward(0.9, 6, CFG) == pytest.approx(-0.2, abs=1e-12)

    def test_transition_worked_example(self):
        assert explore_reward(0.5, 5, CFG) == pytest.approx(0.2, abs=1e-12)

    def test_low_phase_caps_at_n_max(self):
        assert explore_reward(0.0, 6, CFG) == explore_reward(0.0, 60, CFG)

    def test_low_phase_non_decreasing(self):
        values = [explore_reward(0.1, n, CFG) for n in range(0, 15)]
        assert values == sorted(values)

    def test_continuity_at_thresholds(self):
        rng = random.Random(42)
        delta = 1e-6
        for _ in range(100):
            cfg = random_config(rng)
            n_u = rng.randint(0, 12)
            for tau in (cfg.tau_low, cfg.tau_high):
                inner = explore_reward(tau, n_u, cfg)
                below = explore_reward(max(0.0, tau - delta), n_u, cfg)
                above = explore_reward(min(1.0, tau + delta), n_u, cfg)
                assert abs(inner - below) < 1e-4
                assert abs(inner - above) < 1e-4

    def test_rejects_invalid_inputs(self):
        with pytest.raises(ValueError):
            explore_reward(1.5, 3, CFG)
        with pytest.raises(ValueError):
            explore_reward(0.5, -1, CFG)


class TestGoalReward:
    def test_gaussian_peak(self):
        assert bbox_goal_reward(0.0, CFG) == pytest.approx(1.0, abs=1e-12)

    def test_gaussian_worked_example(self):
        assert bbox_goal_reward(0.2, CFG) == pytest.approx(math.exp(-0.5), abs=1e-12)

    def test_angle_worked_example(self):
        feats = TrajectoryFeatures(views=[ViewPoint((0, 0, 1.5), 45.0, 0.0)])
        goal = GoalTarget(floor=0, center=(0.5, 0.5), yaw=0.0, pitch=0.0)
        r_goal, r_bbox, r_angle = goal_reward(feats, goal, CFG)
        assert r_bbox == 0.0  # no zoom calls
        assert r_angle == pytest.approx(0.5, abs=1e-12)
        assert r_goal == pytest.approx(0.5, abs=1e-12)

    def test_bbox_strictly_decreasing_in_distance(self):
        ds = [i / 50 for i in range(51)]
        rs = [bbox_goal_reward(d, CFG) for d in ds]
        assert all(a > b for a, b in zip(rs, rs[1:]))

    def test_angle_non_increasing_and_clamped(self):
        rs = [angle_goal_reward(d, CFG) for d in range(0, 181, 5)]
        assert all(a >= b for a, b in zip(rs, rs[1:]))
        assert angle_goal_reward(170.0, CFG) == 0.0

    def test_wrong_floor_zeroes_bbox_term(self):
        zoom = ZoomRegion(floor=1, bbox=BBox2D(0.4, 0.4, 0.6, 0.6))
        feats = TrajectoryFeatures(zooms=[zoom])
        goal = GoalTarget(floor=0, center=(0.5, 0.5), yaw=0.0, pitch=0.0)
        r_goal, r_bbox, _ = goal_reward(feats, goal, CFG)
        assert r_bbox == 0.0 and r_goal == 0.0

    def test_only_final_zoom_scored(self):
        perfect = ZoomRegion(floor=0, bbox=BBox2D(0.4, 0.4, 0.6, 0.6))
        far = ZoomRegion(floor=0, bbox=BBox2D(0.0, 0.0, 0.1, 0.1))
        goal = GoalTarget(floor=0, center=(0.5, 0.5), yaw=0.0, pitch=0.0)
        r_last_far = goal_reward(TrajectoryFeatures(zooms=[perfect, far]), goal, CFG)[1]
        r_last_perfect = goal_reward(TrajectoryFeatures(zooms=[far, perfect]), goal, CFG)[1]
        assert r_last_perfect == pytest.approx(1.0, abs=1e-12)
        assert r_last_far < r_last_perfect


class TestRepetitionPenalty:
    def test_worked_examples(self):
        assert repetition_penalty(0, CFG) == 0.0
        assert repetition_penalty(1, CFG) == pytest.approx(-0.2, abs=1e-12)
        assert repetition_penalty(3, CFG) == pytest.approx(-1.2, abs=1e-12)

    def test_closed_form_equals_loop_sum(self):
        for n in range(0, 101):
            loop = -sum(CFG.alpha_rep * i for i in range(1, n + 1))
            assert repetition_penalty(n, CFG) == pytest.approx(loop, abs=1e-9)


class TestUniqueRegions:
    def box(self, x0, y0, x1, y1):
        return BBox2D(x0, y0, x1, y1)

    def test_all_distinct(self):
        zooms = [ZoomRegion(0, self.box(0, 0, 0.2, 0.2)),
                 ZoomRegion(0, self.box(0.4, 0.4, 0.6, 0.6)),
                 ZoomRegion(0, self.box(0.8, 0.8, 1.0, 1.0))]
        assert count_unique_regions(zooms, [], CFG) == (3, 0, 3, 0)

    def test_exact_duplicate(self):
        b = self.box(0.1, 0.1, 0.3, 0.3)
        zooms = [ZoomRegion(0, b), ZoomRegion(0, b),
                 ZoomRegion(0, self.box(0.6, 0.6, 0.9, 0.9))]
        assert count_unique_regions(zooms, [], CFG) == (2, 0, 2, 1)

    def test_iou_below_threshold_is_distinct(self):
        # IoU([0,0,2,2],[1,1,3,3]) = 1/7 < 0.5
        zooms = [ZoomRegion(0, self.box(0, 0, 2, 2)), ZoomRegion(0, self.box(1, 1, 3, 3))]
        assert count_unique_regions(zooms, [], CFG)[0] == 2

    def test_same_bbox_other_floor_is_distinct(self):
        b = self.box(0.1, 0.1, 0.3, 0.3)
        zooms = [ZoomRegion(0, b), ZoomRegion(1, b)]
        assert count_unique_regions(zooms, [], CFG)[0] == 2

    def test_view_duplicates_need_both_conditions(self):
        base = ViewPoint((1.0, 1.0, 1.5), 0.0, 0.0)
        near_same_angle = ViewPoint((1.2, 1.0, 1.5), 5.0, 0.0)
        near_far_angle = ViewPoint((1.2, 1.0, 1.5), 90.0, 0.0)
        far_same_angle = ViewPoint((5.0, 1.0, 1.5), 0.0, 0.0)
        n_uz, n_ur, n_u, n_rep = count_unique_regions(
            [], [base, near_same_angle, near_far_angle, far_same_angle], CFG)
        assert (n_uz, n_ur, n_u, n_rep) == (0, 3, 3, 1)

    def test_first_occurrence_is_representative(self):
        # b drifts: each compared against the first unique one, not its neighbor
        a = self.box(0.0, 0.0, 0.4, 0.4)
        b = self.box(0.1, 0.0, 0.5, 0.4)   # IoU(a,b)=3/5 > 0.5 -> duplicate of a
        c = self.box(0.25, 0.0, 0.65, 0.4)  # IoU(a,c)=0.15/0.65 < 0.5 -> new region
        counts = count_unique_regions(
            [ZoomRegion(0, a), ZoomRegion(0, b), ZoomRegion(0, c)], [], CFG)
        assert counts == (2, 0, 2, 1)


class TestTotalReward:
    def make_features(self):
        # N_u = 5 (4 distinct zooms + 1 view), one duplicated zoom -> n_rep = 1
        zooms = [
            ZoomRegion(0, BBox2D(0.0, 0.0, 0.1, 0.1)),
            ZoomRegion(0, BBox2D(0.3, 0.3, 0.4, 0.4)),
            ZoomRegion(0, BBox2D(0.6, 0.6, 0.7, 0.7)),
            ZoomRegion(0, BBox2D(0.6, 0.6, 0.7, 0.7)),
            ZoomRegion(0, BBox2D(0.45858, 0.6, 0.74142, 0.8)),  # center (0.6,0.7)
        ]
        # the view is 120 degrees off the goal, so its reward term clamps to 0
        views = [ViewPoint((1.0, 1.0, 1.5), 120.0, 0.0)]
        return extract_features(zooms, views, correct=True, cfg=CFG)

    def test_weighted_sum_worked_example(self):
        feats = self.make_features()
        assert (feats.n_u, feats.n_rep) == (5, 1)
        # final zoom center (0.6, 0.7); goal (0.6, 0.7 - 0.2*sqrt(2)) -> d = 0.2
        goal = GoalTarget(floor=0, center=(0.6, 0.7 - 0.2 * math.sqrt(2)), yaw=0.0, pitch=0.0)
        breakdown = total_reward(feats, 0.5, goal, CFG)
        assert breakdown.r_explore == pytest.approx(0.2, abs=1e-9)
        assert breakdown.r_goal == pytest.approx(math.exp(-0.5), abs=1e-9)
        assert breakdown.p_rep == pytest.approx(-0.2, abs=1e-9)
        assert breakdown.r_total == pytest.approx(0.5 + 0.2 + math.exp(-0.5) - 0.2, abs=1e-9)

    def test_zero_case(self):
        feats = extract_features([], [], correct=False, cfg=CFG)
        breakdown = total_reward(feats, 0.0, None, CFG)
        assert breakdown.r_total == 0.0

    def test_doubling_w2_doubles_only_goal(self):
        feats = self.make_features()
        goal = GoalTarget(floor=0, center=(0.6, 0.7 - 0.2 * math.sqrt(2)), yaw=0.0, pitch=0.0)
        base = total_reward(feats, 0.5, goal, CFG)
        doubled = total_reward(feats, 0.5, goal, replace(CFG, w2=2.0))
        assert doubled.r_goal == pytest.approx(base.r_goal)
        assert doubled.r_total - base.r_total == pytest.approx(base.r_goal, abs=1e-9)

    def test_per_trajectory_mode(self):
        feats = self.make_features()
        cfg = replace(CFG, correctness_mode="per_trajectory")
        breakdown = total_reward(feats, 0.25, None, cfg)
        assert breakdown.correctness_rate == 1.0  # features.correct is True


class TestGroupAdvantages:
    def test_worked_example(self):
        adv = group_advantages([1.0, 2.0, 3.0, 4.0])
        expected = [-1.3416407865, -0.4472135955, 0.4472135955, 1.3416407865]
        for got, want in zip(adv, expected):
            assert got == pytest.approx(want, abs=1e-9)

    def test_zero_variance_guard(self):
        assert group_advantages([0.7] * 8) == [0.0] * 8

    def test_standardization_identity(self):
        rng = random.Random(5)
        for _ in range(200):
            g = rng.randint(2, 16)
            rewards = [rng.uniform(-5, 5) for _ in range(g)]
            if max(rewards) - min(rewards) < 1e-6:
                continue
            adv = group_advantages(rewards)
            mean = sum(adv) / g
            std = math.sqrt(sum((a - mean) ** 2 for a in adv) / g)
            assert abs(mean) < 1e-9
            assert abs(std - 1.0) < 1e-9

    def test_shift_invariance_and_argmax(self):
        rewards = [0.3, -1.2, 2.5, 0.9]
        adv = group_advantages(rewards)
        shifted = group_advantages([r + 17.5 for r in rewards])
        for a, b in zip(adv, shifted):
            assert a == pytest.approx(b, abs=1e-9)
        assert max(range(4), key=adv.__getitem__) == max(range(4), key=rewards.__getitem__)

    def test_small_group_rejected(self):
        with pytest.raises(ValueError):
            group_advantages([1.0])


class TestGrpoObjective:
    def test_identity_ratio_on_standardized_advantages(self):
        adv = group_advantages([1.0, 2.0, 3.0, 4.0])
        assert grpo_objective([1.0] * 4, adv, [0.0] * 4, replace(CFG, beta_kl=0.0)) == (
            pytest.approx(0.0, abs=1e-9))

    def test_positive_advantage_clip(self):
        cfg = replace(CFG, epsilon_clip=0.2, beta_kl=0.0)
        assert grpo_objective([2.0], [1.0], [0.0], cfg) == pytest.approx(1.2, abs=1e-12)

    def test_negative_advantage_unclipped(self):
        cfg = replace(CFG, epsilon_clip=0.2, beta_kl=0.0)
        assert grpo_objective([2.0], [-1.0], [0.0], cfg) == pytest.approx(-2.0, abs=1e-12)

    def test_kl_term(self):
        cfg = replace(CFG, beta_kl=0.5)
        base = grpo_objective([1.0], [0.0], [0.0], cfg)
        with_kl = grpo_objective([1.0], [0.0], [0.8], cfg)
        assert base - with_kl == pytest.approx(0.4, abs=1e-12)

    def test_clip_saturation_by_finite_differences(self):
        cfg = replace(CFG, epsilon_clip=0.2, beta_kl=0.0)
        eps = 1e-5
        # saturating branches: ratio above 1+eps with A>0, below 1-eps with A<0
        for ratio, adv in ((1.5, 1.0), (0.5, -1.0)):
            lo = grpo_objective([ratio - eps], [adv], [0.0], cfg)
            hi = grpo_objective([ratio + eps], [adv], [0.0], cfg)
            assert abs(hi - lo) / (2 * eps) < 1e-9
        # non-saturating side stays linear with slope A
        lo = grpo_objective([0.5 - eps], [1.0], [0.0], cfg)
        hi = grpo_objective([0.5 + eps], [1.0], [0.0], cfg)
        assert (hi - lo) / (2 * eps) == pytest.approx(1.0, abs=1e-6)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            grpo_objective([1.0, 1.0], [0.0], [0.0, 0.0], CFG)
        with pytest.raises(ValueError):
            grpo_objective([-1.0], [0.0], [0.0], CFG)


class TestGroupRewards:
    def test_rate_and_zero_mean(self):
        feats = []
        for i in range(8):
            zooms = [ZoomRegion(0, BBox2D(0.1 * i, 0.0, 0.1 * i + 0.05, 0.05))]
            feats.append(extract_features(zooms, [], correct=(i % 2 == 0), cfg=CFG))
        goal = GoalTarget(floor=0, center=(0.5, 0.5), yaw=0.0, pitch=0.0)
        group = group_rewards(feats, goal, CFG)
        assert group.correctness_rate == pytest.approx(0.5)
        assert sum(group.advantages) == pytest.approx(0.0, abs=1e-9)
        assert all(b.correctness_rate == pytest.approx(0.5) for b in group.breakdowns)

    def test_requires_two(self):
        with pytest.raises(ValueError):
            group_rewards([TrajectoryFeatures()], None, CFG)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            replace(CFG, tau_low=0.8, tau_high=0.2).validate()
        with pytest.raises(ValueError):
            replace(CFG, sigma=0.0).validate()
        with pytest.raises(ValueError):
            replace(CFG, gamma_penalty=0.3).validate()
        with pytest.raises(ValueError):
            replace(CFG, correctness_mode="sometimes").validate()

    def test_json_file_roundtrip(self, tmp_path):
        path = tmp_path / "rewards.json"
        path.write_text('{"sigma": 0.3, "alpha_rep": 0.1}')
        cfg = RewardConfig.from_file(path)
        assert cfg.sigma == 0.3 and cfg.alpha_rep == 0.1
        assert cfg.tau_low == CFG.tau_low

    def test_toml_file(self, tmp_path):
        path = tmp_path / "rewards.toml"
        path.write_text("sigma = 0.25\nn_max = 4\n")
        cfg = RewardConfig.from_file(path)
        assert cfg.sigma == 0.25 and cfg.n_max == 4

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "rewards.json"
        path.write_text('{"sigmaa": 0.3}')
        with pytest.raises(ValueError):
            RewardConfig.from_file(path)


def test_self_check_all_pass():
    assert all(case.passed for case in self_check())


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=12))
@settings(max_examples=200, deadline=None)
def test_advantages_property(rewards):
    adv = group_advantages(rewards)
    mean = sum(rewards) / len(rewards)
    std = math.sqrt(sum((r - mean) ** 2 for r in rewards) / len(rewards))
    if std < 1e-8:
        assert adv == [0.0] * len(rewards)
    else:
        assert sum(adv) / len(adv) == pytest.approx(0.0, abs=1e-9)
