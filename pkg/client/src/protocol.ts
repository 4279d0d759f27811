/**
 * Message types and validation for the v1 newline-delimited JSON protocol.
 *
 * One request line yields exactly one response line. Sessions are
 * multiplexed by a `session` field; the server assigns ids when the client
 * does not.
 */

export const PROTOCOL_VERSION = 1;

export interface RewardConfigWire {
  tau_low: number;
  tau_high: number;
  n_max: number;
  alpha_explore: number;
  gamma_penalty: number;
  n_penalty: number;
  r_max: number;
  sigma: number;
  theta_threshold: number;
  alpha_rep: number;
  w_c: number;
  w1: number;
  w2: number;
  w3: number;
  iou_dup_threshold: number;
  view_dup_pos_m: number;
  view_dup_angle_deg: number;
  epsilon_clip: number;
  beta_kl: number;
  correctness_mode: string;
}

export interface HelloResponse {
  type: "hello";
  v: number;
  engine: {
    bev_resolution: number;
    zoom_resolution: number;
    view_resolution: number;
    step_budget: number;
  };
  reward_config: RewardConfigWire;
}

export interface GroundTruthMeta {
  gt_floor: number;
  gt_bbox: [number, number, number, number];
  gt_pos: [number, number, number];
  gt_theta: [number, number, number];
  answer: string;
  bev_resolution: number;
}

export interface ObsResponse {
  type: "obs";
  session: string;
  t: number;
  images: { b64_ppm: string }[];
  note: string;
  clamped: boolean;
  error: string | null;
  meta?: GroundTruthMeta;
}

export interface RewardBreakdownWire {
  correct: boolean;
  correctness_rate: number;
  n_uz: number;
  n_ur: number;
  n_u: number;
  n_rep: number;
  r_explore: number;
  r_bbox: number;
  r_angle: number;
  r_goal: number;
  p_rep: number;
  r_total: number;
}

export interface DoneResponse {
  type: "done";
  session: string;
  correct: boolean;
  forced: boolean;
  answer: string;
  tool_calls: number;
  reward: RewardBreakdownWire;
}

export interface GroupResultResponse {
  type: "group_result";
  sessions: string[];
  correctness_rate: number;
  rewards: RewardBreakdownWire[];
  advantages: number[];
}

export interface ErrorResponse {
  type: "error";
  error: string;
  session?: string | null;
}

export type ServerResponse =
  | HelloResponse
  | ObsResponse
  | DoneResponse
  | GroupResultResponse
  | ErrorResponse;

export class ProtocolFault extends Error {}

export function parseResponse(line: string): ServerResponse {
  let doc: unknown;
  try {
    doc = JSON.parse(line);
  } catch {
    throw new ProtocolFault(`server sent a non-JSON line: ${line.slice(0, 120)}`);
  }
  if (typeof doc !== "object" || doc === null || typeof (doc as any).type !== "string") {
    throw new ProtocolFault(`malformed response: ${line.slice(0, 120)}`);
  }
  const type = (doc as any).type;
  if (!["hello", "obs", "done", "group_result", "error"].includes(type)) {
    throw new ProtocolFault(`unknown response type ${type}`);
  }
  return doc as ServerResponse;
}

export function expect<T extends ServerResponse["type"]>(
  response: ServerResponse,
  type: T,
): Extract<ServerResponse, { type: T }> {
  if (response.type === "error") {
    throw new ProtocolFault(`server error: ${(response as ErrorResponse).error}`);
  }
  if (response.type !== type) {
    throw new ProtocolFault(`expected ${type}, got ${response.type}`);
  }
  return response as Extract<ServerResponse, { type: T }>;
}

export function checkVersion(hello: HelloResponse): void {
  if (hello.v !== PROTOCOL_VERSION) {
    throw new ProtocolFault(
      `protocol version mismatch: server speaks v${hello.v}, client speaks v${PROTOCOL_VERSION}`,
    );
  }
}
