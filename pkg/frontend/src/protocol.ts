/** Wire protocol types, mirroring the server's JSON messages. */

export type Phase =
  | "idle"
  | "target_set"
  | "previewing"
  | "preview_ready"
  | "executing"
  | "done"
  | "error";

export type Hand = "left" | "right";

export interface SegmentPose {
  p: [number, number, number];
  q: [number, number, number, number];
}

export interface StateMessage {
  type: "state";
  phase: Phase;
  sim_time: number;
  rigid_joints: number[];
  soft_segments: SegmentPose[];
  tendon_lengths: number[];
}

export interface ReachMapMessage {
  type: "reach_map";
  which?: string;
  gravity_angle_deg: number | null;
  voxel_size: number;
  origin: [number, number, number];
  dims: [number, number, number];
  occupancy_b64: string;
}

export interface PreviewFrame {
  t: number;
  segments: SegmentPose[];
}

export interface VerdictMessage {
  type: "verdict";
  grasped: boolean;
  reason?: string;
  wrap_deg?: number;
  rigid_path?: number[][];
  preview_frames?: PreviewFrame[];
  e_internal_preview_exec_m?: number;
}

export interface ErrorMessage {
  type: "error";
  code: string;
  message: string;
}

export type ServerMessage =
  | StateMessage
  | ReachMapMessage
  | VerdictMessage
  | ErrorMessage;

export interface SetRayMessage {
  type: "set_ray";
  hand: Hand;
  origin: [number, number, number];
  direction: [number, number, number];
  length: number;
}

export interface SimpleCommand {
  type: "preview" | "confirm" | "abort" | "reset";
}

export interface AddObjectMessage {
  type: "add_object";
  shape: "sphere" | "box";
  center: [number, number, number];
  radius: number;
}

export type ClientMessage = SetRayMessage | SimpleCommand | AddObjectMessage;

export const RAY_LENGTH_MIN = 0.05;
export const RAY_LENGTH_MAX = 3.0;

/** Human-readable strings for every server error code. */
export const ERROR_TEXT: Record<string, string> = {
  bad_message: "The server did not understand the last message.",
  bad_phase: "That action is not allowed in the current phase.",
  out_of_range: "Ray length outside the allowed range.",
  unreachable_rigid: "Mount target is outside the rigid arm's workspace.",
  unreachable_soft: "Tip target is outside the soft arm's reachable volume.",
  sim_error: "Simulation failed; adjust the targets and retry.",
};

export function describeError(code: string, fallback: string): string {
  return ERROR_TEXT[code] ?? fallback;
}

export function parseServerMessage(raw: string): ServerMessage | null {
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const type = (doc as { type?: unknown }).type;
  if (
    type === "state" ||
    type === "reach_map" ||
    type === "verdict" ||
    type === "error"
  ) {
    return doc as ServerMessage;
  }
  return null;
}
