/**
 * Rollout-collection client for the episode protocol.
 *
 * Speaks newline-delimited JSON over a child process (stdio mode) or a TCP
 * socket, runs grouped rollouts with a scripted stochastic policy, and
 * recomputes every reward component locally to cross-check the server.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { createConnection, type Socket } from "node:net";
import { createInterface, type Interface } from "node:readline";

import {
  checkVersion,
  expect as expectType,
  parseResponse,
  type DoneResponse,
  type GroundTruthMeta,
  type HelloResponse,
  type ObsResponse,
  type RewardBreakdownWire,
  type ServerResponse,
} from "./protocol.js";
import {
  breakdownMaxDelta,
  groupAdvantages,
  totalReward,
  type GoalSpec,
  type TrackedTrajectory,
} from "./rewards.js";
import { ScriptedPolicy } from "./policy.js";

export interface Transport {
  send(line: string): void;
  nextLine(): Promise<string>;
  close(): Promise<void>;
}

/** Line-oriented request/response over any byte stream pair. */
class LineChannel {
  private buffered: string[] = [];
  private waiters: ((line: string) => void)[] = [];

  constructor(reader: Interface) {
    reader.on("line", (line) => {
      if (!line.trim()) return;
      const waiter = this.waiters.shift();
      if (waiter) waiter(line);
      else this.buffered.push(line);
    });
  }

  next(): Promise<string> {
    const line = this.buffered.shift();
    if (line !== undefined) return Promise.resolve(line);
    return new Promise((resolve) => this.waiters.push(resolve));
  }
}

export class StdioTransport implements Transport {
  private child: ChildProcess;
  private channel: LineChannel;

  constructor(command: string, args: string[], cwd?: string) {
    this.child = spawn(command, args, { cwd, stdio: ["pipe", "pipe", "inherit"] });
    this.channel = new LineChannel(
      createInterface({ input: this.child.stdout!, crlfDelay: Infinity }),
    );
  }

  send(line: string): void {
    this.child.stdin!.write(line + "\n");
  }

  nextLine(): Promise<string> {
    return this.channel.next();
  }

  close(): Promise<void> {
    return new Promise((resolve) => {
      this.child.once("exit", () => resolve());
      this.child.stdin!.end();
      setTimeout(() => {
        this.child.kill();
        resolve();
      }, 2000).unref();
    });
  }
}

export class TcpTransport implements Transport {
  private socket: Socket;
  private channel: LineChannel;

  private constructor(socket: Socket) {
    this.socket = socket;
    this.channel = new LineChannel(createInterface({ input: socket, crlfDelay: Infinity }));
  }

  static connect(host: string, port: number): Promise<TcpTransport> {
    return new Promise((resolve, reject) => {
      const socket = createConnection({ host, port }, () => resolve(new TcpTransport(socket)));
      socket.once("error", reject);
    });
  }

  send(line: string): void {
    this.socket.write(line + "\n");
  }

  nextLine(): Promise<string> {
    return this.channel.next();
  }

  close(): Promise<void> {
    return new Promise((resolve) => {
      this.socket.end(() => resolve());
    });
  }
}

export interface RolloutRecord {
  session: string;
  tracked: TrackedTrajectory;
  done: DoneResponse;
}

export interface GroupOutcome {
  helloConfig: HelloResponse;
  goal: GoalSpec;
  bevResolution: number;
  rollouts: RolloutRecord[];
  serverRewards: RewardBreakdownWire[];
  serverAdvantages: number[];
  serverCorrectnessRate: number;
  localRewards: RewardBreakdownWire[];
  localAdvantages: number[];
  /** Largest per-field disagreement between server and local breakdowns. */
  rewardDelta: number;
  advantageDelta: number;
  transcript: string[]; // request lines, replayable verbatim
  responses: string[];
}

export class ClientSession {
  /** Messages sent so far; the counter must increase monotonically. */
  counter = 0;
  readonly transcript: string[] = [];
  readonly responses: string[] = [];

  constructor(private transport: Transport) {}

  async rpc(doc: Record<string, unknown>): Promise<ServerResponse> {
    const line = JSON.stringify(doc);
    this.counter += 1;
    this.transcript.push(line);
    this.transport.send(line);
    const reply = await this.transport.nextLine();
    this.responses.push(reply);
    return parseResponse(reply);
  }
}

function goalFromMeta(meta: GroundTruthMeta): GoalSpec {
  return {
    floor: meta.gt_floor,
    centerNorm: [
      (meta.gt_bbox[0] + meta.gt_bbox[2]) / 2 / meta.bev_resolution,
      (meta.gt_bbox[1] + meta.gt_bbox[3]) / 2 / meta.bev_resolution,
    ],
    yaw: meta.gt_theta[0],
    pitch: meta.gt_theta[1],
  };
}

export async function runGroup(
  transport: Transport,
  sceneId: string,
  qaId: string,
  groupSize: number,
  policySeed = 1,
): Promise<GroupOutcome> {
  if (groupSize < 2) throw new Error("grouped rollouts need G >= 2");
  const session = new ClientSession(transport);
  const hello = expectType(await session.rpc({ v: 1, type: "hello" }), "hello");
  checkVersion(hello);
  const cfg = hello.reward_config;

  const rollouts: RolloutRecord[] = [];
  let goal: GoalSpec | null = null;
  let bevResolution = hello.engine.bev_resolution;
  for (let i = 0; i < groupSize; i += 1) {
    const sid = `c${i}`;
    const start = expectType(
      await session.rpc({
        type: "start", scene: sceneId, qa: qaId, session: sid, reveal_gt: true,
      }),
      "obs",
    ) as ObsResponse;
    if (!start.meta) throw new Error("server did not reveal ground truth metadata");
    goal = goalFromMeta(start.meta);
    bevResolution = start.meta.bev_resolution;
    const policy = new ScriptedPolicy(policySeed + i, start.meta, bevResolution);
    const tracked: TrackedTrajectory = { zooms: [], views: [], correct: false };
    for (const call of policy.plan()) {
      if (call.kind === "zoom") {
        const before = session.counter;
        expectType(
          await session.rpc({
            type: "tool", session: sid, name: "zoom_in",
            floor: call.floor, bbox: call.bbox,
          }),
          "obs",
        );
        if (session.counter !== before + 1) throw new Error("counter not monotone");
        tracked.zooms.push({ floor: call.floor, bbox: call.bbox });
      } else {
        expectType(
          await session.rpc({
            type: "tool", session: sid, name: "render_view",
            pos: call.pos, theta: [call.yaw, call.pitch, 0],
          }),
          "obs",
        );
        tracked.views.push({ pos: call.pos, yaw: call.yaw, pitch: call.pitch });
      }
    }
    const done = expectType(
      await session.rpc({ type: "answer", session: sid, text: policy.answerText() }),
      "done",
    ) as DoneResponse;
    tracked.correct = done.correct;
    rollouts.push({ session: sid, tracked, done });
  }

  const group = expectType(
    await session.rpc({ type: "group", sessions: rollouts.map((r) => r.session) }),
    "group_result",
  );

  const c = rollouts.filter((r) => r.tracked.correct).length / rollouts.length;
  const localRewards = rollouts.map((r) =>
    totalReward(r.tracked, c, goal!, bevResolution, cfg),
  );
  const localAdvantages = groupAdvantages(localRewards.map((r) => r.r_total));
  let rewardDelta = 0;
  group.rewards.forEach((serverBreakdown, i) => {
    rewardDelta = Math.max(rewardDelta, breakdownMaxDelta(serverBreakdown, localRewards[i]));
  });
  let advantageDelta = 0;
  group.advantages.forEach((adv, i) => {
    advantageDelta = Math.max(advantageDelta, Math.abs(adv - localAdvantages[i]));
  });

  return {
    helloConfig: hello,
    goal: goal!,
    bevResolution,
    rollouts,
    serverRewards: group.rewards,
    serverAdvantages: group.advantages,
    serverCorrectnessRate: group.correctness_rate,
    localRewards,
    localAdvantages,
    rewardDelta,
    advantageDelta,
    transcript: session.transcript,
    responses: session.responses,
  };
}

/** Re-send a recorded request transcript against a fresh transport. */
export async function replayTranscript(
  transport: Transport,
  transcript: string[],
): Promise<string[]> {
  const responses: string[] = [];
  for (const line of transcript) {
    transport.send(line);
    responses.push(await transport.nextLine());
  }
  return responses;
}

export function spawnStdioServer(
  scenesDir: string,
  qaFile: string,
  pythonBin = "python3",
): StdioTransport {
  return new StdioTransport(pythonBin, [
    "-m", "spatial_arena.cli", "serve",
    "--scenes", scenesDir, "--qa", qaFile, "--stdio",
  ]);
}
