/**
 * Scripted stochastic policy for grouped rollouts.
 *
 * Zooms near the revealed ground-truth region with noise, renders a noisy
 * view, and answers correctly with fixed probability, so a group of rollouts
 * produces varied rewards. Fully deterministic per seed (mulberry32 PRNG).
 */

import type { GroundTruthMeta } from "./protocol.js";

export type PlannedCall =
  | { kind: "zoom"; floor: number; bbox: [number, number, number, number] }
  | { kind: "view"; pos: [number, number, number]; yaw: number; pitch: number };

export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export class ScriptedPolicy {
  private rand: () => number;

  constructor(
    seed: number,
    private meta: GroundTruthMeta,
    private bevResolution: number,
  ) {
    this.rand = mulberry32(seed);
  }

  private uniform(lo: number, hi: number): number {
    return lo + (hi - lo) * this.rand();
  }

  private noisyBbox(spread: number): [number, number, number, number] {
    const [x0, y0, x1, y1] = this.meta.gt_bbox;
    const dx = this.uniform(-spread, spread);
    const dy = this.uniform(-spread, spread);
    const res = this.bevResolution;
    const clamp = (v: number) => Math.min(Math.max(v, 0), res);
    // keep a sane box even when the shift pushes it against the border
    const nx0 = clamp(x0 + dx);
    const ny0 = clamp(y0 + dy);
    const nx1 = Math.max(clamp(x1 + dx), nx0 + 4);
    const ny1 = Math.max(clamp(y1 + dy), ny0 + 4);
    return [nx0, ny0, Math.min(nx1, res), Math.min(ny1, res)];
  }

  plan(): PlannedCall[] {
    const calls: PlannedCall[] = [];
    const zooms = 1 + Math.floor(this.rand() * 3); // 1..3
    for (let i = 0; i < zooms; i += 1) {
      calls.push({
        kind: "zoom",
        floor: this.meta.gt_floor,
        bbox: this.noisyBbox(this.bevResolution * 0.08),
      });
    }
    const [px, py, pz] = this.meta.gt_pos;
    const wrapYaw = (yaw: number) => ((yaw + 180) % 360 + 360) % 360 - 180;
    calls.push({
      kind: "view",
      pos: [px, py, pz],
      yaw: wrapYaw(this.meta.gt_theta[0] + this.uniform(-30, 30)),
      pitch: Math.min(Math.max(this.meta.gt_theta[1] + this.uniform(-10, 10), -89), 89),
    });
    return calls;
  }

  answerText(): string {
    return this.rand() < 0.65 ? this.meta.answer : "unquestionably wrong";
  }
}
