/**
 * Independent reimplementation of the server's reward stack.
 *
 * The client tracks its own tool calls and recomputes every reward component
 * from them, so any drift between the two sides of the wire shows up as a
 * numeric mismatch rather than a silent disagreement.
 */

import type { RewardBreakdownWire, RewardConfigWire } from "./protocol.js";

export interface ZoomCall {
  floor: number;
  bbox: [number, number, number, number]; // BEV pixels, already clamped
}

export interface ViewCall {
  pos: [number, number, number];
  yaw: number;
  pitch: number;
}

export interface TrackedTrajectory {
  zooms: ZoomCall[];
  views: ViewCall[];
  correct: boolean;
}

export interface GoalSpec {
  floor: number;
  centerNorm: [number, number]; // bbox center / bev resolution
  yaw: number;
  pitch: number;
}

export function bboxIoU(
  a: [number, number, number, number],
  b: [number, number, number, number],
): number {
  const iw = Math.max(0, Math.min(a[2], b[2]) - Math.max(a[0], b[0]));
  const ih = Math.max(0, Math.min(a[3], b[3]) - Math.max(a[1], b[1]));
  const inter = iw * ih;
  if (inter <= 0) return 0;
  const areaA = Math.max(0, a[2] - a[0]) * Math.max(0, a[3] - a[1]);
  const areaB = Math.max(0, b[2] - b[0]) * Math.max(0, b[3] - b[1]);
  const union = areaA + areaB - inter;
  return union > 0 ? inter / union : 0;
}

export function viewDirection(yawDeg: number, pitchDeg: number): [number, number, number] {
  const yaw = (yawDeg * Math.PI) / 180;
  const pitch = (pitchDeg * Math.PI) / 180;
  const cp = Math.cos(pitch);
  return [cp * Math.cos(yaw), cp * Math.sin(yaw), Math.sin(pitch)];
}

export function angularDifferenceDeg(
  yawA: number,
  pitchA: number,
  yawB: number,
  pitchB: number,
): number {
  const a = viewDirection(yawA, pitchA);
  const b = viewDirection(yawB, pitchB);
  const dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  return (Math.acos(Math.min(1, Math.max(-1, dot))) * 180) / Math.PI;
}

export interface RegionCounts {
  nUz: number;
  nUr: number;
  nU: number;
  nRep: number;
}

export function countUniqueRegions(
  traj: TrackedTrajectory,
  cfg: RewardConfigWire,
): RegionCounts {
  const zoomReps: ZoomCall[] = [];
  let nRep = 0;
  for (const z of traj.zooms) {
    const dup = zoomReps.some(
      (rep) => rep.floor === z.floor && bboxIoU(z.bbox, rep.bbox) > cfg.iou_dup_threshold,
    );
    if (dup) nRep += 1;
    else zoomReps.push(z);
  }
  const viewReps: ViewCall[] = [];
  for (const v of traj.views) {
    const dup = viewReps.some((rep) => {
      const dist = Math.hypot(
        v.pos[0] - rep.pos[0],
        v.pos[1] - rep.pos[1],
        v.pos[2] - rep.pos[2],
      );
      return (
        dist < cfg.view_dup_pos_m &&
        angularDifferenceDeg(v.yaw, v.pitch, rep.yaw, rep.pitch) < cfg.view_dup_angle_deg
      );
    });
    if (dup) nRep += 1;
    else viewReps.push(v);
  }
  return {
    nUz: zoomReps.length,
    nUr: viewReps.length,
    nU: zoomReps.length + viewReps.length,
    nRep,
  };
}

export function exploreReward(c: number, nU: number, cfg: RewardConfigWire): number {
  const low = Math.min(nU, cfg.n_max) * cfg.alpha_explore;
  const high = cfg.gamma_penalty * Math.max(0, nU - cfg.n_penalty);
  if (c < cfg.tau_low) return low;
  if (c > cfg.tau_high) return high;
  const lambda = (cfg.tau_high - c) / (cfg.tau_high - cfg.tau_low);
  return lambda * low + (1 - lambda) * high;
}

export function goalReward(
  traj: TrackedTrajectory,
  goal: GoalSpec,
  bevResolution: number,
  cfg: RewardConfigWire,
): { rGoal: number; rBbox: number; rAngle: number } {
  let rBbox = 0;
  const lastZoom = traj.zooms[traj.zooms.length - 1];
  if (lastZoom && lastZoom.floor === goal.floor) {
    const cx = (lastZoom.bbox[0] + lastZoom.bbox[2]) / 2 / bevResolution;
    const cy = (lastZoom.bbox[1] + lastZoom.bbox[3]) / 2 / bevResolution;
    const d = Math.hypot(cx - goal.centerNorm[0], cy - goal.centerNorm[1]) / Math.SQRT2;
    rBbox = cfg.r_max * Math.exp(-(d * d) / (2 * cfg.sigma * cfg.sigma));
  }
  let rAngle = 0;
  const lastView = traj.views[traj.views.length - 1];
  if (lastView) {
    const dAngle = angularDifferenceDeg(lastView.yaw, lastView.pitch, goal.yaw, goal.pitch);
    rAngle = cfg.r_max * Math.max(0, 1 - dAngle / cfg.theta_threshold);
  }
  return { rGoal: Math.max(rBbox, rAngle), rBbox, rAngle };
}

export function repetitionPenalty(nRep: number, cfg: RewardConfigWire): number {
  if (nRep === 0) return 0;
  return (-cfg.alpha_rep * nRep * (nRep + 1)) / 2;
}

export function totalReward(
  traj: TrackedTrajectory,
  groupRate: number,
  goal: GoalSpec,
  bevResolution: number,
  cfg: RewardConfigWire,
): RewardBreakdownWire {
  const c = cfg.correctness_mode === "group" ? groupRate : traj.correct ? 1 : 0;
  const counts = countUniqueRegions(traj, cfg);
  const rExplore = exploreReward(c, counts.nU, cfg);
  const { rGoal, rBbox, rAngle } = goalReward(traj, goal, bevResolution, cfg);
  const pRep = repetitionPenalty(counts.nRep, cfg);
  const rTotal = cfg.w_c * c + cfg.w1 * rExplore + cfg.w2 * rGoal + cfg.w3 * pRep;
  return {
    correct: traj.correct,
    correctness_rate: c,
    n_uz: counts.nUz,
    n_ur: counts.nUr,
    n_u: counts.nU,
    n_rep: counts.nRep,
    r_explore: rExplore,
    r_bbox: rBbox,
    r_angle: rAngle,
    r_goal: rGoal,
    p_rep: pRep,
    r_total: rTotal,
  };
}

/** Within-group standardized rewards: population std, zero-variance guard. */
export function groupAdvantages(rewards: number[]): number[] {
  if (rewards.length < 2) {
    throw new Error("advantage standardization needs a group of size >= 2");
  }
  const mean = rewards.reduce((s, r) => s + r, 0) / rewards.length;
  const variance =
    rewards.reduce((s, r) => s + (r - mean) * (r - mean), 0) / rewards.length;
  const std = Math.sqrt(variance);
  if (std < 1e-8) return rewards.map(() => 0);
  return rewards.map((r) => (r - mean) / std);
}

/** Largest absolute difference across every numeric field of two breakdowns. */
export function breakdownMaxDelta(
  a: RewardBreakdownWire,
  b: RewardBreakdownWire,
): number {
  const keys: (keyof RewardBreakdownWire)[] = [
    "correctness_rate", "n_uz", "n_ur", "n_u", "n_rep",
    "r_explore", "r_bbox", "r_angle", "r_goal", "p_rep", "r_total",
  ];
  let worst = 0;
  for (const key of keys) {
    worst = Math.max(worst, Math.abs(Number(a[key]) - Number(b[key])));
  }
  if (a.correct !== b.correct) worst = Math.max(worst, 1);
  return worst;
}
